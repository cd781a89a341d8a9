"""Dataset loading, metrics, link-presence breakdown and tf-idf baselines."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .preprocess import Post, extract_urls, normalize_text
from .retrieval import FactCheckDoc

logger = logging.getLogger(__name__)

CLASSES = ("fake", "real")
GROUPS = ("fake_with_links", "fake_without_links", "real_with_links", "real_without_links")
SPLITS = ("train", "dev", "test")

_VERDICTS = {
    "fake": "fake", "false": "fake", "0": "fake",
    "real": "real", "true": "real", "1": "real",
}


class DataError(ValueError):
    """Malformed input data; the CLI maps this to exit code 2."""


@dataclass
class DatasetSplit:
    name: str
    posts: list[Post]

    def __len__(self) -> int:
        return len(self.posts)

    @property
    def golds(self) -> dict[str, str]:
        return {p.id: p.label for p in self.posts}

    def label_counts(self) -> dict[str, int]:
        return dict(Counter(p.label for p in self.posts))


def _sniff_delimiter(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample.splitlines()[0] if sample else "", delimiters=",\t;").delimiter
    except csv.Error:
        return ","


def _split_name(path: Path, name: str | None) -> str:
    if name:
        return name
    tokens = re.split(r"[^a-z]+", path.stem.lower())
    for split in ("train", "dev", "val", "validation", "test"):
        if split in tokens:
            return "dev" if split.startswith("val") else split
    return "test"


def load_constraint(path: str | Path, name: str | None = None) -> DatasetSplit:
    """Read a CONSTRAINT split (header ``id,tweet,label``; comma or tab separated)."""
    path = Path(path)
    split = _split_name(path, name)
    with open(path, newline="", encoding="utf-8") as f:
        sample = f.read(4096)
        f.seek(0)
        reader = csv.DictReader(f, delimiter=_sniff_delimiter(sample))
        columns = set(reader.fieldnames or ())
        missing = [c for c in ("id", "tweet", "label") if c not in columns]
        if reader.fieldnames is not None and missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        posts, seen = [], set()
        for rowno, row in enumerate(reader, 2):
            label = (row["label"] or "").strip().lower()
            if label not in CLASSES:
                raise DataError(f"{path}:{rowno}: unknown label {row['label']!r}")
            pid = (row["id"] or "").strip()
            if pid in seen:
                raise DataError(f"{path}:{rowno}: duplicate id {pid!r}")
            seen.add(pid)
            try:
                posts.append(Post(pid, row["tweet"] or "", label, split))
            except ValueError as exc:
                raise DataError(f"{path}:{rowno}: {exc}") from None
    return DatasetSplit(split, posts)


class FactCheckCorpus(list):
    """List of :class:`FactCheckDoc` plus the number of skipped records."""

    skipped: int = 0


def load_fact_check_corpus(path: str | Path) -> FactCheckCorpus:
    """Parse JSON lines with ``doc_id, title, article, verdict, date``.

    Records with a missing field or an unrecognised verdict are skipped and
    counted in ``.skipped``.
    """
    corpus = FactCheckCorpus()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                verdict = _VERDICTS[str(rec["verdict"]).strip().lower()]
                date = rec["date"]
                corpus.append(FactCheckDoc(
                    doc_id=str(rec["doc_id"]),
                    title=str(rec["title"]),
                    article=str(rec["article"]),
                    verdict=verdict,
                    published_before=dt.date.fromisoformat(date[:10]) if date else None,
                ))
            except (KeyError, ValueError, TypeError) as exc:
                logger.debug("%s:%d skipped (%r)", path, lineno, exc)
                corpus.skipped += 1
    if corpus.skipped:
        logger.warning("%s: skipped %d record(s)", path, corpus.skipped)
    return corpus


# metrics


def round_half_up(value: float, places: int = 2) -> float:
    quant = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quant, rounding=ROUND_HALF_UP))


def _percent(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """All values are percentages at full precision; see :meth:`rounded`."""

    per_class: dict[str, ClassMetrics]
    accuracy: float
    weighted: ClassMetrics
    n: int

    def rounded(self) -> dict:
        def r(m: ClassMetrics) -> dict:
            return {"precision": round_half_up(m.precision), "recall": round_half_up(m.recall),
                    "f1": round_half_up(m.f1), "support": m.support}

        return {
            "per_class": {c: r(m) for c, m in self.per_class.items()},
            "accuracy": round_half_up(self.accuracy),
            "weighted": r(self.weighted),
            "n": self.n,
        }

    def to_json(self) -> dict:
        return self.rounded()


def _labels_of(predictions) -> dict[str, str]:
    if isinstance(predictions, Mapping):
        return dict(predictions)
    return {p.post_id: p.label for p in predictions}


def _align(predictions, golds: Mapping[str, str]) -> list[tuple[str, str]]:
    pred = _labels_of(predictions)
    if set(pred) != set(golds):
        missing = sorted(set(golds) - set(pred))[:5]
        extra = sorted(set(pred) - set(golds))[:5]
        raise DataError(f"prediction/gold id mismatch (missing {missing}, unexpected {extra})")
    return [(golds[k], pred[k]) for k in golds]


def metrics_from_pairs(pairs: Sequence[tuple[str, str]]) -> MetricsReport:
    per_class = {}
    for c in CLASSES:
        tp = sum(1 for g, p in pairs if g == c and p == c)
        fp = sum(1 for g, p in pairs if g != c and p == c)
        fn = sum(1 for g, p in pairs if g == c and p != c)
        prec, rec = _percent(tp, tp + fp), _percent(tp, tp + fn)
        per_class[c] = ClassMetrics(prec, rec, _f1(prec, rec), tp + fn)
    n = len(pairs)
    correct = sum(1 for g, p in pairs if g == p)
    total = sum(m.support for m in per_class.values())

    def weighted(attr):
        return sum(getattr(m, attr) * m.support for m in per_class.values()) / total if total else 0.0

    return MetricsReport(
        per_class=per_class,
        accuracy=_percent(correct, n),
        weighted=ClassMetrics(weighted("precision"), weighted("recall"), weighted("f1"), total),
        n=n,
    )


def compute_metrics(predictions, golds: Mapping[str, str]) -> MetricsReport:
    """Per-class and support-weighted P/R/F1 plus accuracy, in percent.

    ``predictions`` is either ``{post_id: label}`` or a sequence of objects
    with ``post_id`` and ``label``.
    """
    return metrics_from_pairs(_align(predictions, golds))


@dataclass
class LinkBreakdown:
    f1: dict[str, float]
    sizes: dict[str, int]

    def rounded(self) -> dict:
        return {"f1": {k: round_half_up(v) for k, v in self.f1.items()}, "sizes": dict(self.sizes)}


def has_links(post: Post) -> bool:
    return bool(extract_urls(post.raw_text))


def link_breakdown(predictions, golds: Mapping[str, str], posts: Iterable[Post]) -> LinkBreakdown:
    """Per-class F1 on the with-links and without-links subsets."""
    pred = _labels_of(predictions)
    _align(pred, golds)
    subsets: dict[bool, list[tuple[str, str]]] = {True: [], False: []}
    for post in posts:
        subsets[has_links(post)].append((golds[post.id], pred[post.id]))
    f1, sizes = {}, {}
    for links, pairs in subsets.items():
        report = metrics_from_pairs(pairs)
        suffix = "with_links" if links else "without_links"
        for c in CLASSES:
            f1[f"{c}_{suffix}"] = report.per_class[c].f1
            sizes[f"{c}_{suffix}"] = report.per_class[c].support
    return LinkBreakdown({g: f1[g] for g in GROUPS}, {g: sizes[g] for g in GROUPS})


def link_group_counts(posts: Iterable[Post]) -> dict[str, int]:
    counts = Counter(f"{p.label}_{'with' if has_links(p) else 'without'}_links" for p in posts)
    return {g: counts.get(g, 0) for g in GROUPS}


# baselines


def majority_baseline(train_split: DatasetSplit, eval_split: DatasetSplit) -> MetricsReport:
    counts = Counter(p.label for p in train_split.posts)
    # deterministic tie-break toward real, like the model
    majority = max(CLASSES, key=lambda c: (counts.get(c, 0), c == "real"))
    return compute_metrics({p.id: majority for p in eval_split.posts}, eval_split.golds)


def tfidf_baseline(train_split: DatasetSplit, eval_split: DatasetSplit, classifier: str = "svm",
                   seed: int = 0) -> MetricsReport:
    """Word-level tf-idf with a linear SVM or logistic regression."""
    from sklearn.feature_extraction.text import TfidfVectorizer
    from sklearn.linear_model import LogisticRegression
    from sklearn.svm import LinearSVC

    if classifier == "svm":
        clf = LinearSVC(random_state=seed)
    elif classifier == "logreg":
        clf = LogisticRegression(max_iter=1000, random_state=seed)
    else:
        raise ValueError(f"unknown classifier {classifier!r}; use 'svm' or 'logreg'")
    vectorizer = TfidfVectorizer(analyzer="word", lowercase=False, token_pattern=r"<\w+>|\b\w\w+\b")
    x_train = vectorizer.fit_transform([normalize_text(p.raw_text) for p in train_split.posts])
    x_eval = vectorizer.transform([normalize_text(p.raw_text) for p in eval_split.posts])
    clf.fit(x_train, [p.label for p in train_split.posts])
    preds = clf.predict(x_eval)
    return compute_metrics({p.id: str(y) for p, y in zip(eval_split.posts, preds)}, eval_split.golds)


def stratified_subset(split: DatasetSplit, n: int, seed: int = 0) -> DatasetSplit:
    """``n`` posts with the split's class proportions, original order kept."""
    rng = random.Random(seed)
    by_class: dict[str, list[int]] = {}
    for i, p in enumerate(split.posts):
        by_class.setdefault(p.label, []).append(i)
    total = len(split.posts)
    chosen: list[int] = []
    labels = sorted(by_class)
    for j, label in enumerate(labels):
        idx = by_class[label]
        k = n - len(chosen) if j == len(labels) - 1 else round(n * len(idx) / total)
        chosen.extend(rng.sample(idx, min(k, len(idx))))
    return DatasetSplit(split.name, [split.posts[i] for i in sorted(chosen)])


def write_report(path: str | Path, report: MetricsReport, breakdown: LinkBreakdown | None = None,
                 extra: dict | None = None) -> dict:
    payload = {"metrics": report.rounded()}
    if breakdown is not None:
        payload["link_breakdown"] = breakdown.rounded()
    payload.update(extra or {})
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload
