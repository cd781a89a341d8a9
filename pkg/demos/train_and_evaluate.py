"""
Training, ensembling and evaluation
===================================

An end-to-end run on generated posts: tf-idf baselines, one fusion model per
seed, the averaged ensemble and the link-presence breakdown. Substitute the
real CONSTRAINT files for meaningful numbers.
"""

from ecol.encoder import BagOfTokensEncoder, Tokenizer
from ecol.evaluation import (
    DatasetSplit, compute_metrics, link_breakdown, majority_baseline, tfidf_baseline,
)
from ecol.model import SEEDS, ensemble_predict, train
from ecol.pipeline import FeaturePipeline
from ecol.evaluation import load_fact_check_corpus
from ecol.preprocess import normalize_text
from ecol.retrieval import build_index
from ecol.sources import ReliabilityMap, SourceFeaturizer, Unshortener, build_description_map
from ecol.synthetic import fixture_path, synthetic_posts

train_split = DatasetSplit("train", synthetic_posts(300, seed=0, split="train"))
dev_split = DatasetSplit("dev", synthetic_posts(200, seed=1, split="dev"))

###############################################################################
# Baselines first.

print("majority", round(majority_baseline(train_split, dev_split).weighted.f1, 2))
for clf in ("svm", "logreg"):
    print(clf, round(tfidf_baseline(train_split, dev_split, clf).weighted.f1, 2))

###############################################################################
# Assets: vocabulary, encoder, retrieval index and source maps.

tokenizer = Tokenizer.train([normalize_text(p.raw_text) for p in train_split.posts],
                            "/tmp/ecol-demo-vocab", vocab_size=2000)
encoder = BagOfTokensEncoder(tokenizer, seed=0)
featurizer = SourceFeaturizer(
    ReliabilityMap.from_csv(fixture_path("reliability")),
    build_description_map(fixture_path("descriptions")),
    encoder,
    Unshortener(fixture_path("unshorten_cache")),
)
pipeline = FeaturePipeline(encoder, build_index(load_fact_check_corpus(fixture_path("corpus"))), featurizer)

train_inputs = pipeline.prepare(train_split.posts, "C_PK_S")
dev_inputs = pipeline.prepare(dev_split.posts, "C_PK_S")

###############################################################################
# One model per seed, then the ensemble. The bag encoder learns quickly, so
# a larger learning rate than a full transformer would use is fine here.

models = []
for seed in SEEDS:
    result = train(train_inputs, encoder, variant="C_PK_S", seed=seed, epochs=2, lr=1e-3)
    models.append(result.model)
    single = compute_metrics(result.model.predict(dev_inputs), dev_split.golds)
    print(f"seed {seed:2d}  losses {[round(l, 4) for l in result.epoch_losses]}  F1 {single.weighted.f1:.2f}")

preds = ensemble_predict(models, dev_inputs)
report = compute_metrics(preds, dev_split.golds)
print("ensemble", report.rounded())

###############################################################################
# Per-class F1 for posts with and without links.

print(link_breakdown(preds, dev_split.golds, dev_split.posts).rounded())
