"""
Normalizing posts and retrieving prior knowledge
=================================================

Posts are cleaned into a fixed vocabulary of placeholder tags, then matched
against a small corpus of debunked health stories.
"""

from ecol import normalize_text
from ecol.evaluation import load_fact_check_corpus
from ecol.pipeline import query_text
from ecol.retrieval import build_index
from ecol.synthetic import fixture_path

###############################################################################
# Normalization lowercases, transliterates to ASCII and swaps URLs, e-mail
# addresses, phone numbers, currency and numbers for tags.

posts = [
    "Drinking HOT lemon water cures COVID-19!! https://t.co/x1y2",
    "Call +1 (555) 123-4567 or mail tips@example.org for the €500 cure",
    "Café owners in São Paulo report 1,250 new cases",
]
for text in posts:
    print(normalize_text(text))

###############################################################################
# The bundled corpus holds 50 fact-checked articles. Only the fake ones go
# into the index.

corpus = load_fact_check_corpus(fixture_path("corpus"))
index = build_index(corpus)
print(len(corpus), "documents,", len(index), "indexed")

###############################################################################
# A search always returns ten (title, article) pairs. Unused slots carry
# empty strings, so downstream code never has to special-case short lists.

query = query_text(normalize_text(posts[0]))
result = index.search(query)
print("query:", query)
for (title, _), score in zip(result.docs, result.scores):
    print(f"  {score:.3f}  {title or '<empty>'}")
print("hits:", result.n_hits)
