"""Fusion classifier over content, prior-knowledge and source features.

Feature order is always ``[C | R | S]`` restricted to the parts a variant
uses. ``C`` is the post's ``[CLS]`` vector (768), ``R`` the cosine between the
post and the mean of its 10 retrieved fake-news encodings (1), ``S`` the
five-slot source block (3860). A single affine layer maps the features to two
logits ordered ``(fake, real)``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .encoder import CONTENT_DIM, SEQ_LEN, ContentEncoder, load_encoder, read_lock
from .retrieval import TOP_K
from .sources import SOURCE_DIM

logger = logging.getLogger(__name__)

CLASSES = ("fake", "real")
COMPONENT_DIMS = {"C": CONTENT_DIM, "R": 1, "S": SOURCE_DIM}
VARIANTS = {
    "C": ("C",),
    "PK": ("R",),
    "C_PK": ("C", "R"),
    "C_S": ("C", "S"),
    "C_PK_S": ("C", "R", "S"),
}
SEEDS = (42, 0, 36)


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def variant_dim(variant: str) -> int:
    try:
        return sum(COMPONENT_DIMS[c] for c in VARIANTS[variant])
    except KeyError:
        raise ModelError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None


def assemble_features(variant: str, p=None, r=None, s=None) -> np.ndarray:
    """Concatenate the components ``variant`` needs, in ``[C | R | S]`` order."""
    variant_dim(variant)
    given = {"C": p, "R": r, "S": s}
    parts = []
    for comp in VARIANTS[variant]:
        value = given[comp]
        if value is None:
            raise ModelError(f"variant {variant} needs component {comp}")
        arr = np.atleast_1d(np.asarray(value, dtype=np.float32))
        if arr.shape != (COMPONENT_DIMS[comp],):
            raise ModelError(f"component {comp} has shape {arr.shape}, expected ({COMPONENT_DIMS[comp]},)")
        parts.append(arr)
    return np.concatenate(parts)


@dataclass(frozen=True)
class Prediction:
    post_id: str
    prob_fake: float
    prob_real: float
    label: str

    @classmethod
    def from_probs(cls, post_id: str, prob_fake: float, prob_real: float) -> "Prediction":
        # ties go to real
        label = "fake" if prob_fake > prob_real else "real"
        return cls(post_id, float(prob_fake), float(prob_real), label)


@dataclass
class PostInputs:
    """Everything the fusion model reads for one post.

    Token ids are padded to 128; ``doc_ids`` holds the 10 retrieved
    documents. Retrieval is fixed before training, encodings are not.
    """

    post_id: str
    ids: np.ndarray
    mask: np.ndarray
    doc_ids: np.ndarray | None = None
    doc_mask: np.ndarray | None = None
    source: np.ndarray | None = None
    label: str | None = None
    has_links: bool = False


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine, defined as 0 when either row is all zero."""
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    zero = (na == 0) | (nb == 0)
    cos = (a * b).sum(-1) / torch.where(zero, torch.ones_like(na), na * nb)
    return torch.where(zero, torch.zeros_like(cos), cos).clamp(-1.0, 1.0)


@dataclass
class TrainConfig:
    variant: str = "C_PK_S"
    seed: int = 42
    epochs: int = 3
    batch_size: int = 1
    lr: float = 2e-5
    head_lr: float | None = None
    freeze_encoder: bool = False
    recompute_fn: bool = True

    def __post_init__(self):
        variant_dim(self.variant)
        if self.epochs < 1 or self.batch_size < 1:
            raise ModelError("epochs and batch_size must be positive")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


class FusionModel(nn.Module):
    def __init__(self, encoder: ContentEncoder, variant: str, seed: int = 42, recompute_fn: bool = True):
        super().__init__()
        self.variant = variant
        self.dim = variant_dim(variant)
        self.components = VARIANTS[variant]
        self.seed = seed
        self.recompute_fn = recompute_fn
        self.encoder = encoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.fc = nn.Linear(self.dim, len(CLASSES))

    @property
    def uses_encoder(self) -> bool:
        return "C" in self.components or "R" in self.components

    # feature computation

    def _fn_vectors(self, doc_ids: torch.Tensor, doc_mask: torch.Tensor) -> torch.Tensor:
        b = doc_ids.shape[0]
        flat = self.encoder(doc_ids.reshape(b * TOP_K, SEQ_LEN), doc_mask.reshape(b * TOP_K, SEQ_LEN))
        return flat.reshape(b, TOP_K, -1).mean(dim=1)

    def features(self, batch: Sequence[PostInputs]) -> torch.Tensor:
        parts = []
        if self.uses_encoder:
            ids = torch.as_tensor(np.stack([x.ids for x in batch]), dtype=torch.long)
            mask = torch.as_tensor(np.stack([x.mask for x in batch]), dtype=torch.long)
            p = self.encoder(ids, mask)
        if "C" in self.components:
            parts.append(p)
        if "R" in self.components:
            if any(x.doc_ids is None for x in batch):
                raise ModelError(f"variant {self.variant} needs retrieved documents")
            doc_ids = torch.as_tensor(np.stack([x.doc_ids for x in batch]), dtype=torch.long)
            doc_mask = torch.as_tensor(np.stack([x.doc_mask for x in batch]), dtype=torch.long)
            if self.recompute_fn:
                fn = self._fn_vectors(doc_ids, doc_mask)
            else:
                with torch.no_grad():
                    fn = self._fn_vectors(doc_ids, doc_mask)
            parts.append(_cosine(fn, p).unsqueeze(-1))
        if "S" in self.components:
            if any(x.source is None for x in batch):
                raise ModelError(f"variant {self.variant} needs source features")
            parts.append(torch.as_tensor(np.stack([x.source for x in batch]), dtype=torch.float32))
        return torch.cat(parts, dim=-1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.dim:
            raise ModelError(f"feature dim {features.shape[-1]} != {self.dim} for variant {self.variant}")
        return self.fc(features)

    @torch.no_grad()
    def predict_proba(self, inputs: Sequence[PostInputs], batch_size: int = 16) -> np.ndarray:
        self.eval()
        out = []
        for start in range(0, len(inputs), batch_size):
            logits = self(self.features(inputs[start:start + batch_size]))
            out.append(F.softmax(logits.double(), dim=-1).numpy())
        return np.concatenate(out) if out else np.zeros((0, 2))

    def predict(self, inputs: Sequence[PostInputs]) -> list[Prediction]:
        probs = self.predict_proba(inputs)
        return [Prediction.from_probs(x.post_id, pf, pr) for x, (pf, pr) in zip(inputs, probs)]


def forward(model: FusionModel, features, post_id: str = "") -> Prediction:
    """Classify one precomputed feature vector."""
    feats = torch.as_tensor(np.asarray(features, dtype=np.float32)).unsqueeze(0)
    model.eval()
    with torch.no_grad():
        probs = F.softmax(model(feats).double(), dim=-1)[0].numpy()
    return Prediction.from_probs(post_id, probs[0], probs[1])


@dataclass
class TrainResult:
    model: FusionModel
    config: TrainConfig
    epoch_losses: list[float] = field(default_factory=list)


def _label_index(label: str) -> int:
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ModelError(f"training posts need a fake/real label, got {label!r}") from None


def train(inputs: Sequence[PostInputs], encoder: ContentEncoder, config: TrainConfig | None = None,
          **overrides) -> TrainResult:
    """Fit one fusion model with cross-entropy and Adam.

    The encoder is deep-copied, so the caller's weights never change. All
    randomness (head init, shuffling, dropout) derives from ``config.seed``.
    """
    if config is None:
        config = TrainConfig(**overrides)
    elif overrides:
        config = TrainConfig(**{**asdict(config), **overrides})
    if not inputs:
        raise TrainingError("empty training set")
    labels = torch.tensor([_label_index(x.label) for x in inputs])

    torch.manual_seed(config.seed)
    model = FusionModel(copy.deepcopy(encoder), config.variant, config.seed, config.recompute_fn)
    if config.freeze_encoder or not model.uses_encoder:
        for param in model.encoder.parameters():
            param.requires_grad_(False)
    enc_params = [p for p in model.encoder.parameters() if p.requires_grad]
    groups = [{"params": list(model.fc.parameters()), "lr": config.head_lr or config.lr}]
    if enc_params:
        groups.append({"params": enc_params, "lr": config.lr})
    optimizer = torch.optim.Adam(groups, lr=config.lr)

    cached = None
    if config.freeze_encoder:
        model.eval()
        with torch.no_grad():
            cached = torch.cat([model.features(inputs[i:i + 32]) for i in range(0, len(inputs), 32)])

    gen = torch.Generator().manual_seed(config.seed)
    result = TrainResult(model, config)
    for epoch in range(config.epochs):
        model.train()
        if config.freeze_encoder:
            model.encoder.eval()
        order = torch.randperm(len(inputs), generator=gen).tolist()
        total = 0.0
        for step in range(0, len(order), config.batch_size):
            idx = order[step:step + config.batch_size]
            feats = cached[idx] if cached is not None else model.features([inputs[i] for i in idx])
            loss = F.cross_entropy(model(feats), labels[idx])
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at epoch {epoch} step {step} "
                    f"(posts {[inputs[i].post_id for i in idx]}, lr {config.lr})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
        result.epoch_losses.append(total / len(order))
        logger.info("variant %s seed %d epoch %d loss %.5f", config.variant, config.seed, epoch, result.epoch_losses[-1])
    model.eval()
    return result


def average_probabilities(prob_arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in prob_arrays]), axis=0)


def ensemble_predict(models: Sequence, inputs: Sequence[PostInputs]) -> list[Prediction]:
    """Average member softmax outputs; argmax with ties going to real."""
    if not models:
        raise ModelError("ensemble needs at least one model")
    variants = {m.variant for m in models}
    if len(variants) > 1:
        raise ModelError(f"cannot ensemble mixed variants {sorted(variants)}")
    probs = average_probabilities([m.predict_proba(inputs) for m in models])
    return [Prediction.from_probs(x.post_id, pf, pr) for x, (pf, pr) in zip(inputs, probs)]


# persistence


def dataset_digest(inputs: Sequence[PostInputs]) -> str:
    h = hashlib.sha256()
    for x in inputs:
        h.update(x.post_id.encode())
        h.update(b"\0")
        h.update((x.label or "").encode())
        h.update(np.ascontiguousarray(x.ids, dtype=np.int64).tobytes())
    return h.hexdigest()


def save_model(result: TrainResult, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``fusion.safetensors``, ``encoder/`` and ``manifest.json``."""
    from safetensors.torch import save_file

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = result.model
    model.encoder.save_checkpoint(path / "encoder")
    save_file({k: v.detach().contiguous() for k, v in model.fc.state_dict().items()}, str(path / "fusion.safetensors"))
    lock = read_lock(path / "encoder")
    manifest = {
        "variant": model.variant,
        "dim": model.dim,
        "seed": model.seed,
        "recompute_fn": model.recompute_fn,
        "encoder_lock": {"encoder": lock["encoder"], "revision": lock["revision"], "path": "encoder"},
        "training": asdict(result.config),
        "config_hash": result.config.digest(),
        "epoch_losses": result.epoch_losses,
    }
    manifest.update(extra or {})
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path: str | Path) -> FusionModel:
    from safetensors.torch import load_file

    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ModelError(f"{path}: not a model directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    encoder = load_encoder(path / manifest["encoder_lock"]["path"])
    model = FusionModel(encoder, manifest["variant"], manifest["seed"], manifest.get("recompute_fn", True))
    model.fc.load_state_dict(load_file(str(path / "fusion.safetensors")))
    model.manifest = manifest
    model.eval()
    return model


def write_predictions(predictions: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["post_id", "prob_fake", "prob_real", "label"])
        for p in predictions:
            writer.writerow([p.post_id, repr(p.prob_fake), repr(p.prob_real), p.label])


def read_predictions(path: str | Path) -> list[Prediction]:
    with open(path, newline="", encoding="utf-8") as f:
        return [
            Prediction(row["post_id"], float(row["prob_fake"]), float(row["prob_real"]), row["label"])
            for row in csv.DictReader(f)
        ]
