"""Contextual and sentence-level text encoders.

Content vectors come from the final hidden state of the classification token
of a BERT-family encoder over at most 128 word pieces. A checkpoint directory
holds the weights, the tokenizer vocabulary and ``encoder.lock.json`` which
pins the encoder identity and a revision hash over weights and vocabulary.

Sentence embeddings for retrieval come from a separate frozen encoder and are
never trained.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .preprocess import TAGS, normalize_text

logger = logging.getLogger(__name__)

SEQ_LEN = 128
CONTENT_DIM = 768
LOCKFILE = "encoder.lock.json"
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
_TAG_SPLIT = re.compile("|".join(re.escape(t) for t in TAGS))


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != SEQ_LEN or len(self.attention_mask) != SEQ_LEN:
            raise ValueError(f"token sequences have exactly {SEQ_LEN} positions")


def document_text(title: str, article: str) -> str:
    """Join a document's title and article as ``"title. article"``."""
    return ". ".join(part for part in (title.strip(), article.strip()) if part)


def _file_digest(paths: Iterable[Path]) -> str:
    h = hashlib.sha256()
    for path in paths:
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


class Tokenizer:
    """Fixed-length word-piece tokenizer (uncased, 128 positions)."""

    def __init__(self, backend):
        self.backend = backend
        self.pad_id = backend.pad_token_id
        self.cls_id = backend.cls_token_id

    @classmethod
    def from_vocab(cls, vocab_file: str | Path) -> "Tokenizer":
        from transformers import BertTokenizer

        lines = Path(vocab_file).read_text(encoding="utf-8").splitlines()
        vocab = {tok: i for i, tok in enumerate(t for t in lines if t)}
        backend = BertTokenizer(vocab=vocab, do_lower_case=True)
        backend.add_tokens([t for t in TAGS if t not in backend.get_vocab()])
        return cls(backend)

    @classmethod
    def from_dir(cls, path: str | Path) -> "Tokenizer":
        from transformers import AutoTokenizer

        backend = AutoTokenizer.from_pretrained(str(path), local_files_only=True)
        return cls(backend)

    @classmethod
    def train(cls, texts: Iterable[str], out_dir: str | Path, vocab_size: int = 8000,
              min_frequency: int = 2) -> "Tokenizer":
        """Learn a word-piece vocabulary from normalized ``texts``.

        The vocabulary is the special tokens, every printable ASCII character
        (plain and ``##``-continued) and then the most frequent whole words,
        ties broken alphabetically. Normalized text never maps to ``[UNK]``
        and the same texts always give the same file.
        """
        from tokenizers import normalizers, pre_tokenizers

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        norm = normalizers.BertNormalizer(lowercase=True, strip_accents=True, clean_text=True)
        pre = pre_tokenizers.BertPreTokenizer()
        counts: Counter = Counter()
        for text in texts:
            for word, _ in pre.pre_tokenize_str(norm.normalize_str(_TAG_SPLIT.sub(" ", text))):
                counts[word] += 1
        alphabet = [c for c in string.printable if not c.isspace() and not c.isupper()]
        tokens = list(SPECIAL_TOKENS) + alphabet + ["##" + c for c in alphabet]
        seen = set(tokens)
        budget = max(vocab_size - len(tokens), 0)
        ranked = sorted((w for w, n in counts.items() if n >= min_frequency and w not in seen),
                        key=lambda w: (-counts[w], w))
        tokens.extend(ranked[:budget])
        vocab_file = out_dir / "vocab.txt"
        vocab_file.write_text("\n".join(tokens) + "\n", encoding="utf-8")
        return cls.from_vocab(vocab_file)

    def save(self, path: str | Path) -> None:
        self.backend.save_pretrained(str(path))
        vocab = sorted(self.backend.get_vocab().items(), key=lambda kv: kv[1])
        text = "\n".join(tok for tok, _ in vocab) + "\n"
        (Path(path) / "vocab.txt").write_text(text, encoding="utf-8")

    def __len__(self) -> int:
        return len(self.backend)

    def __call__(self, text: str) -> TokenSequence:
        enc = self.backend(text, max_length=SEQ_LEN, padding="max_length", truncation=True)
        return TokenSequence(tuple(enc["input_ids"]), tuple(enc["attention_mask"]))

    def batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        enc = self.backend(
            list(texts), max_length=SEQ_LEN, padding="max_length", truncation=True, return_tensors="pt"
        )
        return enc["input_ids"], enc["attention_mask"]


class ContentEncoder(nn.Module):
    """Maps token id batches of shape ``(B, 128)`` to ``(B, 768)`` vectors."""

    kind = "abstract"
    dim = CONTENT_DIM

    def __init__(self, tokenizer: Tokenizer, name: str):
        super().__init__()
        self.tokenizer = tokenizer
        self.name = name

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def tokenize(self, text: str) -> TokenSequence:
        return self.tokenizer(text)

    def encode_content(self, seq: TokenSequence) -> np.ndarray:
        ids = torch.tensor([seq.ids])
        mask = torch.tensor([seq.attention_mask])
        with torch.no_grad():
            return self(ids, mask)[0].numpy()

    def encode_texts(self, texts: Sequence[str], batch_size: int = 32) -> np.ndarray:
        """Frozen encoding of already-normalized texts, shape ``(n, 768)``."""
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                for start in range(0, len(texts), batch_size):
                    ids, mask = self.tokenizer.batch(texts[start:start + batch_size])
                    out[start:start + len(ids)] = self(ids, mask).numpy()
        finally:
            self.train(was_training)
        return out

    def encode_document(self, title: str, article: str) -> np.ndarray:
        return self.encode_texts([normalize_text(document_text(title, article))])[0]

    # checkpoint i/o

    def _write_weights(self, path: Path) -> list[Path]:
        raise NotImplementedError

    def save_checkpoint(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.tokenizer.save(path)
        files = self._write_weights(path)
        vocab = path / "vocab.txt"
        lock = {
            "encoder": self.name,
            "kind": self.kind,
            "dim": self.dim,
            "seq_len": SEQ_LEN,
            "revision": _file_digest(files + [vocab]),
            "files": sorted(p.name for p in files + [vocab]),
        }
        (path / LOCKFILE).write_text(json.dumps(lock, indent=2, sort_keys=True) + "\n")
        return path


class BertEncoder(ContentEncoder):
    """BERT-family encoder returning the final ``[CLS]`` hidden state."""

    kind = "bert"

    def __init__(self, model, tokenizer: Tokenizer, name: str):
        super().__init__(tokenizer, name)
        if model.config.hidden_size != CONTENT_DIM:
            raise CheckpointError(
                f"encoder hidden size {model.config.hidden_size} != {CONTENT_DIM}"
            )
        self.model = model

    @classmethod
    def miniature(
        cls,
        tokenizer: Tokenizer,
        seed: int = 0,
        num_layers: int = 2,
        num_heads: int = 4,
        intermediate_size: int = 1024,
    ) -> "BertEncoder":
        """Randomly initialised small BERT with 768-wide hidden states."""
        from transformers import BertConfig, BertModel

        config = BertConfig(
            vocab_size=len(tokenizer),
            hidden_size=CONTENT_DIM,
            num_hidden_layers=num_layers,
            num_attention_heads=num_heads,
            intermediate_size=intermediate_size,
            max_position_embeddings=SEQ_LEN,
            pad_token_id=tokenizer.pad_id,
        )
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = BertModel(config, add_pooling_layer=False)
        return cls(model, tokenizer, name=f"mini-bert-l{num_layers}-s{seed}")

    @classmethod
    def from_pretrained(cls, name_or_path: str, offline: bool = True) -> "BertEncoder":
        """Load a BERT-family checkpoint, e.g. ``bert-base-uncased``."""
        from transformers import AutoModel, AutoTokenizer

        backend = AutoTokenizer.from_pretrained(name_or_path, local_files_only=offline)
        model = AutoModel.from_pretrained(name_or_path, local_files_only=offline, add_pooling_layer=False)
        return cls(model, Tokenizer(backend), name=str(name_or_path))

    def forward(self, ids, mask):
        return self.model(input_ids=ids, attention_mask=mask).last_hidden_state[:, 0]

    def _write_weights(self, path):
        self.model.save_pretrained(str(path), safe_serialization=True)
        return [path / "model.safetensors"]


class BagOfTokensEncoder(ContentEncoder):
    """Cheap stand-in encoder: masked mean of token embeddings.

    Same interface and output width as :class:`BertEncoder`; used for tests
    and quick CPU runs.
    """

    kind = "bag"

    def __init__(self, tokenizer: Tokenizer, seed: int = 0, name: str | None = None):
        super().__init__(tokenizer, name or f"bag-of-tokens-s{seed}")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.embedding = nn.Embedding(len(tokenizer), CONTENT_DIM)
        self.seed = seed

    def forward(self, ids, mask):
        m = mask.unsqueeze(-1).to(self.embedding.weight.dtype)
        summed = (self.embedding(ids) * m).sum(dim=1)
        return torch.tanh(summed / m.sum(dim=1).clamp(min=1.0))

    def _write_weights(self, path):
        from safetensors.torch import save_file

        target = path / "bag.safetensors"
        save_file({"embedding": self.embedding.weight.detach().contiguous()}, str(target))
        (path / "bag.json").write_text(json.dumps({"seed": self.seed, "name": self.name}) + "\n")
        return [target]


def read_lock(path: str | Path) -> dict:
    lock_path = Path(path) / LOCKFILE
    if not lock_path.exists():
        raise CheckpointError(f"{path}: missing {LOCKFILE}")
    return json.loads(lock_path.read_text())


def verify_checkpoint(path: str | Path) -> dict:
    """Check that the files in ``path`` still hash to the pinned revision."""
    path = Path(path)
    lock = read_lock(path)
    revision = _file_digest([path / name for name in lock["files"]])
    if revision != lock["revision"]:
        raise CheckpointError(f"{path}: revision mismatch ({revision[:12]} != {lock['revision'][:12]})")
    return lock


def load_encoder(path: str | Path) -> ContentEncoder:
    """Load a checkpoint written by :meth:`ContentEncoder.save_checkpoint`."""
    path = Path(path)
    lock = verify_checkpoint(path)
    tokenizer = Tokenizer.from_dir(path)
    if lock["kind"] == "bert":
        from transformers import AutoModel

        model = AutoModel.from_pretrained(str(path), local_files_only=True, add_pooling_layer=False)
        encoder: ContentEncoder = BertEncoder(model, tokenizer, name=lock["encoder"])
    elif lock["kind"] == "bag":
        from safetensors.torch import load_file

        meta = json.loads((path / "bag.json").read_text())
        encoder = BagOfTokensEncoder(tokenizer, seed=meta["seed"], name=meta["name"])
        encoder.embedding.weight.data.copy_(load_file(str(path / "bag.safetensors"))["embedding"])
    else:
        raise CheckpointError(f"{path}: unknown encoder kind {lock['kind']!r}")
    encoder.eval()
    return encoder


class HashingSentenceEncoder:
    """Frozen sentence embedding from hashed character n-grams.

    Deterministic across processes and needs no downloaded weights. The
    vector is L2-normalised so dot products are cosines.
    """

    def __init__(self, n_features: int = 2048, ngram_range: tuple[int, int] = (3, 5)):
        from sklearn.feature_extraction.text import HashingVectorizer

        self.n_features = n_features
        self.ngram_range = tuple(ngram_range)
        self._vectorizer = HashingVectorizer(
            analyzer="char_wb",
            ngram_range=self.ngram_range,
            n_features=n_features,
            alternate_sign=False,
            norm="l2",
            lowercase=True,
        )

    @property
    def dim(self) -> int:
        return self.n_features

    @property
    def identity(self) -> dict:
        return {"kind": "hashing", "n_features": self.n_features, "ngram_range": list(self.ngram_range)}

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return self._vectorizer.transform(list(texts)).toarray().astype(np.float32)

    def encode_sentence(self, text: str) -> np.ndarray:
        return self.encode([text])[0]


class SentenceTransformerEncoder:
    """Adapter for a local sentence-transformers checkpoint."""

    def __init__(self, path: str):
        from sentence_transformers import SentenceTransformer

        self.path = path
        self._model = SentenceTransformer(path, device="cpu")

    @property
    def dim(self) -> int:
        return self._model.get_sentence_embedding_dimension()

    @property
    def identity(self) -> dict:
        return {"kind": "sentence-transformers", "path": str(self.path)}

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return self._model.encode(list(texts), normalize_embeddings=True, convert_to_numpy=True).astype(np.float32)

    def encode_sentence(self, text: str) -> np.ndarray:
        return self.encode([text])[0]


def sentence_encoder_from_identity(identity: dict):
    if identity["kind"] == "hashing":
        return HashingSentenceEncoder(identity["n_features"], tuple(identity["ngram_range"]))
    if identity["kind"] == "sentence-transformers":
        return SentenceTransformerEncoder(identity["path"])
    raise CheckpointError(f"unknown sentence encoder {identity!r}")
