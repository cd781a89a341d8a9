"""Turn posts into :class:`~ecol.model.PostInputs` for a feature variant."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import ContentEncoder, document_text
from .model import VARIANTS, PostInputs
from .preprocess import Post, normalize_text, preprocess_post
from .retrieval import FactCheckIndex, RetrievalIndexError, RetrievalResult
from .sources import SourceFeaturizer

_TAG_RE = re.compile(r"<[A-Z]+>")


def query_text(normalized: str) -> str:
    """Retrieval query: the normalized post with placeholder tags removed."""
    return " ".join(_TAG_RE.sub(" ", normalized).split())


@dataclass
class FeaturePipeline:
    encoder: ContentEncoder
    index: FactCheckIndex | None = None
    featurizer: SourceFeaturizer | None = None

    def retrieve(self, normalized: str) -> RetrievalResult:
        if self.index is None:
            raise RetrievalIndexError("this variant needs a retrieval index")
        return self.index.search(query_text(normalized))

    def prepare(self, posts: Sequence[Post], variant: str) -> list[PostInputs]:
        comps = VARIANTS[variant]
        pre = [preprocess_post(p) for p in posts]
        ids, mask = self.encoder.tokenizer.batch([x.normalized_text for x in pre]) if pre else (None, None)
        out = []
        for i, (post, pp) in enumerate(zip(posts, pre)):
            item = PostInputs(
                post_id=post.id,
                ids=ids[i].numpy().astype(np.int32),
                mask=mask[i].numpy().astype(np.int8),
                label=post.label if post.label in ("fake", "real") else None,
                has_links=pp.has_links,
            )
            if "R" in comps:
                result = self.retrieve(pp.normalized_text)
                texts = [normalize_text(document_text(t, a)) for t, a in result.docs]
                d_ids, d_mask = self.encoder.tokenizer.batch(texts)
                item.doc_ids = d_ids.numpy().astype(np.int32)
                item.doc_mask = d_mask.numpy().astype(np.int8)
            if "S" in comps:
                if self.featurizer is None:
                    raise ValueError(f"variant {variant} needs source assets")
                item.source = self.featurizer(pp)
            out.append(item)
        return out
