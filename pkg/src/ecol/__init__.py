"""Early fake-news detection from post content, prior fact-checked claims and source credibility."""

from .encoder import BagOfTokensEncoder, BertEncoder, HashingSentenceEncoder, Tokenizer, load_encoder
from .evaluation import (
    DatasetSplit,
    compute_metrics,
    link_breakdown,
    load_constraint,
    load_fact_check_corpus,
    tfidf_baseline,
)
from .model import (
    FusionModel,
    Prediction,
    TrainConfig,
    assemble_features,
    ensemble_predict,
    forward,
    load_model,
    save_model,
    train,
)
from .pipeline import FeaturePipeline
from .preprocess import Post, PreprocessedPost, extract_urls, normalize_text, preprocess_post
from .retrieval import FactCheckDoc, build_index, load_index, prior_knowledge_vector, relatedness, search
from .sources import (
    ReliabilityMap,
    SourceFeaturizer,
    Unshortener,
    build_description_map,
    extract_domain,
    one_hot,
    source_feature,
)

__version__ = "0.1.0"
