"""
Source credibility slots
========================

Every URL in a post is unshortened, reduced to a domain label and tagged.
The first five fill fixed slots of ``[one-hot | description embedding]``.
"""

import numpy as np

from ecol import Post, preprocess_post
from ecol.encoder import BagOfTokensEncoder, Tokenizer
from ecol.sources import (
    N_SLOTS, RELIABILITY_TAGS, SLOT_DIM, ReliabilityMap, SourceFeaturizer, Unshortener,
    build_description_map, extract_domain,
)
from ecol.synthetic import fixture_path

for url in ["https://www.thespoof.com/news/a", "http://news.bbc.co.uk/x", "http://10.0.0.1/"]:
    print(url, "->", extract_domain(url))

###############################################################################
# Offline unshortening answers from a JSON-lines cache. A miss keeps the
# original URL and marks it unresolved.

unshortener = Unshortener(fixture_path("unshorten_cache"))
for url in ["https://t.co/spoof1", "https://t.co/never-seen"]:
    print(url, unshortener.resolve(url))

###############################################################################
# The feature block needs a content encoder for the descriptions. A small
# bag-of-tokens encoder keeps this demo quick.

reliability = ReliabilityMap.from_csv(fixture_path("reliability"))
descriptions = build_description_map(fixture_path("descriptions"))
tokenizer = Tokenizer.train([d for d in descriptions.values()], "/tmp/ecol-demo-vocab", vocab_size=500)
featurizer = SourceFeaturizer(reliability, descriptions, BagOfTokensEncoder(tokenizer), unshortener)

post = preprocess_post(Post("demo", "Read this https://t.co/spoof1 then https://t.co/cdc1", "fake", "test"))
for rec in featurizer.records(post):
    print(rec.domain, rec.tag, "|", rec.description[:50])

slots = featurizer(post).reshape(N_SLOTS, SLOT_DIM)
for i, slot in enumerate(slots):
    tag = RELIABILITY_TAGS[int(np.argmax(slot[:4]))] if slot[:4].any() else "-"
    print(f"slot {i}: {tag:10s} description norm {np.linalg.norm(slot[4:]):.3f}")
