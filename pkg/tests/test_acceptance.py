"""Acceptance suite: one test group per criterion, at the pinned tolerances.

Criteria 2, 3 and 7 need the CONSTRAINT splits. Point ``ECOL_DATA_DIR`` at a
directory holding them (official file names or ``train.csv``/``dev.csv``/
``test.csv``). Without the files those criteria fail rather than skip.
"""

import copy
import os
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch.nn import functional as F

from ecol.cli import cache_root
from ecol.encoder import BertEncoder, Tokenizer
from ecol.evaluation import (
    DatasetSplit,
    compute_metrics,
    link_group_counts,
    load_constraint,
    majority_baseline,
    stratified_subset,
    tfidf_baseline,
)
from ecol.model import (
    FusionModel,
    Prediction,
    ensemble_predict,
    read_predictions,
    train,
    variant_dim,
    write_predictions,
)
from ecol.pipeline import FeaturePipeline
from ecol.preprocess import normalize_text, preprocess_post
from ecol.retrieval import CANDIDATES, PLACEHOLDER, TOP_K, FactCheckDoc, build_index, relatedness
from ecol.sources import N_SLOTS, SLOT_DIM, SOURCE_DIM

SPLIT_FILES = {
    "train": ("Constraint_Train.csv", "train.csv"),
    "dev": ("Constraint_Val.csv", "dev.csv", "val.csv"),
    "test": ("english_test_with_labels.csv", "Constraint_Test.csv", "test.csv"),
}
SPLIT_SIZES = {"train": 6420, "dev": 2140, "test": 2140}
LINK_GROUPS = {
    "train": {"real_with_links": 2321, "real_without_links": 1039, "fake_with_links": 1002, "fake_without_links": 2058},
    "dev": {"real_with_links": 780, "real_without_links": 340, "fake_with_links": 327, "fake_without_links": 693},
    "test": {"real_with_links": 779, "real_without_links": 341, "fake_with_links": 319, "fake_without_links": 701},
}


def data_dir() -> Path:
    return Path(os.environ.get("ECOL_DATA_DIR", cache_root() / "constraint"))


def constraint_split(name: str) -> DatasetSplit:
    for fname in SPLIT_FILES[name]:
        path = data_dir() / fname
        if path.exists():
            return load_constraint(path, name)
    pytest.fail(f"CONSTRAINT {name} split not found in {data_dir()} "
                f"(expected one of {', '.join(SPLIT_FILES[name])}); set ECOL_DATA_DIR")


# 1. metric harness


@pytest.mark.criterion(1, "metric harness: 49 errors on 2140 posts -> accuracy 97.71")
def test_criterion_1_metric_harness(tmp_path):
    golds = {f"test-{i}": ("fake" if i <= 1020 else "real") for i in range(1, 2141)}
    wrong = set(list(golds)[::43][:49])
    preds = []
    for pid, gold in golds.items():
        label = ("real" if gold == "fake" else "fake") if pid in wrong else gold
        pf = 0.9 if label == "fake" else 0.1
        preds.append(Prediction.from_probs(pid, pf, 1 - pf))
    write_predictions(preds, tmp_path / "pred.csv")
    loaded = read_predictions(tmp_path / "pred.csv")
    assert sum(p.label != golds[p.post_id] for p in loaded) == 49
    report = compute_metrics(loaded, golds)
    assert abs(report.accuracy - 97.71) <= 0.01
    assert report.rounded()["accuracy"] == 97.71


# 2. baselines


@pytest.mark.criterion(2, "tf-idf baselines on CONSTRAINT (SVM dev 93.46, LR dev 92.75, SVM test 93.32; +-1.5)")
def test_criterion_2_baselines():
    train_split, dev, test = constraint_split("train"), constraint_split("dev"), constraint_split("test")
    svm_dev = tfidf_baseline(train_split, dev, "svm").weighted.f1
    lr_dev = tfidf_baseline(train_split, dev, "logreg").weighted.f1
    svm_test = tfidf_baseline(train_split, test, "svm").weighted.f1
    print(f"svm dev {svm_dev:.2f}  lr dev {lr_dev:.2f}  svm test {svm_test:.2f}")
    assert abs(svm_dev - 93.46) <= 1.5
    assert abs(lr_dev - 92.75) <= 1.5
    assert abs(svm_test - 93.32) <= 1.5


# 3. ingestion


@pytest.mark.criterion(3, "CONSTRAINT split sizes and link-group counts")
@pytest.mark.parametrize("name", ["train", "dev", "test"])
def test_criterion_3_ingestion(name):
    split = constraint_split(name)
    assert len(split) == SPLIT_SIZES[name]
    assert link_group_counts(split.posts) == LINK_GROUPS[name]


# 4. retrieval contract

WORDS = ["garlic", "vaccine", "cancer", "cure", "virus", "lemon", "water", "bleach", "autism", "5g",
         "turmeric", "diet", "sugar", "heart", "doctor", "study", "children", "flu", "oil", "detox"]


def exhaustive_oracle(index, query):
    scores = index.lexical_scores(query)
    cand = sorted(scores, key=lambda i: (-scores[i], i))[:CANDIDATES]
    q = index.sentence_encoder.encode_sentence(query)
    ranked = sorted(cand, key=lambda i: (-float(index.embeddings[i] @ q), i))[:TOP_K]
    docs = [(index.docs[i].title, index.docs[i].article) for i in ranked]
    return docs + [PLACEHOLDER] * (TOP_K - len(docs))


@pytest.mark.criterion(4, "retrieval equals exhaustive oracle; always 10 entries with empty padding")
@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=15), min_size=0, max_size=100),
    st.lists(st.sampled_from(WORDS + ["unseen"]), min_size=0, max_size=6),
)
def test_criterion_4_retrieval(bodies, query_words):
    docs = [FactCheckDoc(f"d{i}", " ".join(b[:2]), " ".join(b), "fake") for i, b in enumerate(bodies)]
    index = build_index(docs)
    query = " ".join(query_words)
    res = index.search(query)
    assert len(res.docs) == TOP_K
    assert list(res.docs) == exhaustive_oracle(index, query)
    assert all(d == PLACEHOLDER for d in res.docs[res.n_hits:])


# 5. feature geometry


@pytest.mark.criterion(5, "feature dims, one-hot slots, relatedness range and scale invariance")
def test_criterion_5_dims():
    assert variant_dim("C") == 768
    assert SOURCE_DIM == 3860
    assert variant_dim("C_PK_S") == 4629


@pytest.mark.criterion(5, "feature dims, one-hot slots, relatedness range and scale invariance")
def test_criterion_5_one_hot_slots(featurizer, train_split):
    filled = 0
    for post in train_split.posts:
        pp = preprocess_post(post)
        slots = featurizer(pp).reshape(N_SLOTS, SLOT_DIM)
        for i in range(N_SLOTS):
            if i < min(len(pp.urls), N_SLOTS):
                assert slots[i, :4].sum() == 1.0
                assert set(np.unique(slots[i, :4])) <= {0.0, 1.0}
                filled += 1
            else:
                assert not slots[i].any()
    assert filled > 50


@pytest.mark.criterion(5, "feature dims, one-hot slots, relatedness range and scale invariance")
def test_criterion_5_relatedness_fuzz():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        dim = int(rng.integers(1, 800))
        a = rng.normal(size=dim) * 10 ** rng.uniform(-3, 3)
        b = rng.normal(size=dim) * 10 ** rng.uniform(-3, 3)
        r = relatedness(a, b)
        assert -1.0 <= r <= 1.0
        s, t = 10 ** rng.uniform(-3, 3, size=2)
        assert relatedness(s * a, t * b) == pytest.approx(r, abs=1e-9)


# 6. model numerics


@pytest.mark.criterion(6, "finite-difference gradients, softmax sums, same-seed bitwise identity")
def test_criterion_6_gradients(bag_encoder):
    model = FusionModel(copy.deepcopy(bag_encoder), "C_PK_S", seed=42).double()
    gen = torch.Generator().manual_seed(6)
    x = torch.randn(8, model.dim, generator=gen, dtype=torch.float64)
    y = torch.randint(0, 2, (8,), generator=gen)
    loss = F.cross_entropy(model(x), y)
    loss.backward()
    eps = 1e-6
    checked = 0
    with torch.no_grad():
        for param in (model.fc.weight, model.fc.bias):
            flat, grad = param.view(-1), param.grad.view(-1)
            idx = torch.randperm(flat.numel(), generator=gen)[:100] if flat.numel() > 100 else range(flat.numel())
            for i in idx:
                i = int(i)
                orig = flat[i].item()
                flat[i] = orig + eps
                up = F.cross_entropy(model(x), y).item()
                flat[i] = orig - eps
                down = F.cross_entropy(model(x), y).item()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                rel = abs(grad[i].item() - numeric) / max(abs(numeric), abs(grad[i].item()), 1e-12)
                assert rel <= 1e-4 or abs(numeric) < 1e-9
                checked += 1
    assert checked >= 100


@pytest.fixture(scope="module")
def numerics_inputs(bag_encoder, index, reliability, descriptions, train_split, dev_split):
    from ecol.sources import SourceFeaturizer, Unshortener
    from ecol.synthetic import fixture_path

    featurizer = SourceFeaturizer(reliability, descriptions, bag_encoder, Unshortener(fixture_path("unshorten_cache")))
    pipe = FeaturePipeline(bag_encoder, index, featurizer)
    return pipe.prepare(train_split.posts[:80], "C_PK_S"), pipe.prepare(dev_split.posts, "C_PK_S")


@pytest.mark.criterion(6, "finite-difference gradients, softmax sums, same-seed bitwise identity")
def test_criterion_6_softmax_and_determinism(bag_encoder, numerics_inputs):
    train_inputs, dev_inputs = numerics_inputs
    runs = [train(train_inputs, bag_encoder, variant="C_PK_S", seed=42, epochs=1, lr=1e-3) for _ in range(2)]
    probs = [r.model.predict_proba(dev_inputs) for r in runs]
    assert np.abs(probs[0].sum(axis=1) - 1).max() <= 1e-6
    assert probs[0].tobytes() == probs[1].tobytes()
    assert [p.label for p in runs[0].model.predict(dev_inputs)] == [p.label for p in runs[1].model.predict(dev_inputs)]


# 7. replication substitute


@pytest.mark.criterion(7, "frozen miniature encoder: variant C beats majority on 500-post subset; pipeline invariants")
def test_criterion_7_desk_scale(tmp_path, corpus, reliability, descriptions):
    from ecol.sources import SourceFeaturizer, Unshortener
    from ecol.synthetic import fixture_path

    full_train, dev = constraint_split("train"), constraint_split("dev")
    subset = stratified_subset(full_train, 500, seed=0)
    tokenizer = Tokenizer.train([normalize_text(p.raw_text) for p in subset.posts], tmp_path / "vocab")
    encoder = BertEncoder.miniature(tokenizer, seed=0).eval()

    pipe = FeaturePipeline(encoder)
    result = train(pipe.prepare(subset.posts, "C"), encoder, variant="C", seed=42, epochs=3,
                   freeze_encoder=True, head_lr=1e-3)
    dev_preds = result.model.predict(pipe.prepare(dev.posts, "C"))
    model_f1 = compute_metrics(dev_preds, dev.golds).weighted.f1
    majority_f1 = majority_baseline(subset, dev).weighted.f1
    print(f"variant C dev weighted F1 {model_f1:.2f} vs majority {majority_f1:.2f}")
    assert model_f1 > majority_f1

    # end to end with every feature block
    featurizer = SourceFeaturizer(reliability, descriptions, encoder, Unshortener(fixture_path("unshorten_cache")))
    full_pipe = FeaturePipeline(encoder, build_index(corpus), featurizer)
    dev_sub = stratified_subset(dev, 200, seed=0)
    train_inputs = full_pipe.prepare(subset.posts, "C_PK_S")
    dev_inputs = full_pipe.prepare(dev_sub.posts, "C_PK_S")
    assert all(x.doc_ids.shape == (TOP_K, 128) and x.source.shape == (SOURCE_DIM,) for x in dev_inputs)
    models = [train(train_inputs, encoder, variant="C_PK_S", seed=s, epochs=1, freeze_encoder=True,
                    head_lr=1e-3).model for s in (42, 0, 36)]
    feats = models[0].features(dev_inputs[:4])
    assert feats.shape == (4, 4629)
    assert ((feats[:, 768] >= -1) & (feats[:, 768] <= 1)).all()
    preds = ensemble_predict(models, dev_inputs)
    assert [p.post_id for p in preds] == [p.id for p in dev_sub.posts]
    assert all(abs(p.prob_fake + p.prob_real - 1) <= 1e-6 for p in preds)
    compute_metrics(preds, dev_sub.golds)


@pytest.mark.replication
@pytest.mark.criterion("7-optional", "full fine-tuned C_PK_S mu-model, test weighted F1 98.13 +-1.0")
@pytest.mark.skipif(os.environ.get("ECOL_REPLICATION") != "1", reason="set ECOL_REPLICATION=1 for the GPU-hours run")
def test_criterion_7_full_replication(corpus, reliability, descriptions):
    from ecol.sources import SourceFeaturizer, Unshortener

    checkpoint = os.environ.get("ECOL_BERT", "bert-base-uncased")
    encoder = BertEncoder.from_pretrained(checkpoint, offline=os.environ.get("ECOL_ONLINE") != "1")
    train_split, test = constraint_split("train"), constraint_split("test")
    unshortener = Unshortener(os.environ.get("ECOL_UNSHORTEN_CACHE", cache_root() / "unshorten.jsonl"),
                              offline=os.environ.get("ECOL_ONLINE") != "1")
    pipe = FeaturePipeline(encoder, build_index(corpus), SourceFeaturizer(reliability, descriptions, encoder, unshortener))
    train_inputs = pipe.prepare(train_split.posts, "C_PK_S")
    models = [train(train_inputs, encoder, variant="C_PK_S", seed=s, epochs=3, lr=2e-5, batch_size=1).model
              for s in (42, 0, 36)]
    probs = []
    for m in models:
        pipe.encoder = pipe.featurizer.encoder = m.encoder
        pipe.featurizer._desc_cache.clear()
        probs.append(m.predict_proba(pipe.prepare(test.posts, "C_PK_S")))
    mean = np.mean(probs, axis=0)
    preds = [Prediction.from_probs(p.id, pf, pr) for p, (pf, pr) in zip(test.posts, mean)]
    assert abs(compute_metrics(preds, test.golds).weighted.f1 - 98.13) <= 1.0


# 8. ensemble semantics


class FixedOutputModel:
    variant = "C_PK_S"

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, inputs):
        return self.probs


@pytest.mark.criterion(8, "ensemble equals hand-computed means; ties go to real")
def test_criterion_8_ensemble():
    from ecol.model import PostInputs

    members = [
        FixedOutputModel([[0.80, 0.20], [0.10, 0.90], [0.50, 0.50], [0.70, 0.30], [0.25, 0.75]]),
        FixedOutputModel([[0.60, 0.40], [0.30, 0.70], [0.50, 0.50], [0.20, 0.80], [0.75, 0.25]]),
        FixedOutputModel([[0.40, 0.60], [0.20, 0.80], [0.50, 0.50], [0.60, 0.40], [0.50, 0.50]]),
    ]
    inputs = [PostInputs(f"p{i}", np.zeros(128, np.int32), np.zeros(128, np.int8)) for i in range(5)]
    preds = ensemble_predict(members, inputs)
    hand_fake = [0.6, 0.2, 0.5, 0.5, 0.5]
    for pred, expected in zip(preds, hand_fake):
        assert pred.prob_fake == pytest.approx(expected, abs=1e-12)
        assert pred.prob_real == pytest.approx(1 - expected, abs=1e-12)
    assert [p.label for p in preds] == ["fake", "real", "real", "real", "real"]
