"""Synthetic CONSTRAINT-style posts and bundled offline fixtures.

The real CONSTRAINT splits are not redistributable here; these generated
posts exercise the same file format and pipeline. They carry no claim about
real-world accuracy.
"""

from __future__ import annotations

import csv
import random
from importlib import resources
from pathlib import Path

from .preprocess import Post

FIXTURES = {
    "corpus": "fakehealth_fixture.jsonl",
    "reliability": "reliability_fixture.csv",
    "descriptions": "simplewiki_fixture.jsonl",
    "unshorten_cache": "unshorten_fixture.jsonl",
}

_FAKE = [
    "{r} kills the coronavirus in minutes, share before they delete this",
    "doctors confirm drinking {r} every hour prevents covid-19 infection",
    "breaking: {who} admits the virus was made in a lab to sell vaccines",
    "5g towers are spreading the virus, {r} protects your family",
    "they are hiding the cure! {r} cured {n} patients in {place}",
    "bill gates plans to microchip everyone with the covid vaccine",
    "holding your breath for 10 seconds proves you do not have covid",
    "hospitals get paid ${n} for every covid death they report",
    "{place} cures all coronavirus cases with {r} and hot baths",
    "masks cause oxygen deficiency and weaken your immune system",
]
_REAL = [
    "{n} new cases of covid-19 were reported in {place} today, bringing the total to {m}",
    "the {org} recommends washing hands, wearing a mask and keeping distance to slow the spread",
    "testing capacity in {place} has increased to {n} tests per day according to health officials",
    "our daily update is published: {n} people are in hospital with covid-19 in {place}",
    "vaccine trial enters phase 3 with {n} volunteers, results expected later this year",
    "{org} guidance: people with symptoms should self-isolate and book a test",
    "{n} deaths linked to covid-19 have been confirmed in {place} over the past week",
    "states report a total of {m} confirmed cases and {n} recoveries so far",
]
_REMEDIES = ["garlic", "hot lemon water", "colloidal silver", "bleach", "cow urine", "vitamin c", "turmeric", "onions"]
_PLACES = ["india", "the uk", "texas", "kerala", "new york", "italy", "maharashtra", "florida"]
_ORGS = ["cdc", "who", "icmr", "nhs"]
_WHO = ["the who", "a vatican official", "a chinese scientist", "an nhs nurse"]
_FAKE_LINKS = ["https://t.co/spoof1", "https://bit.ly/nn1", "https://t.co/onion1", "https://t.co/iw1",
               "https://t.co/unk{k}"]
_REAL_LINKS = ["https://t.co/cdc1", "https://t.co/who1", "https://t.co/bbc1", "https://t.co/rt1",
               "https://t.co/unk{k}"]


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture (``corpus``, ``reliability``, ...)."""
    return Path(str(resources.files("ecol") / "data" / FIXTURES[name]))


def synthetic_posts(n: int, seed: int = 0, split: str = "train", fake_fraction: float = 0.48,
                    link_rate: dict | None = None, label_noise: float = 0.08) -> list[Post]:
    """Generate ``n`` labelled posts.

    Link rates default to the CONSTRAINT train proportions (about a third of
    fake and two thirds of real posts carry a link). ``label_noise`` flips the
    template's class so that no feature separates the classes perfectly.
    """
    rng = random.Random(seed)
    link_rate = link_rate or {"fake": 0.33, "real": 0.69}
    posts = []
    for i in range(n):
        label = "fake" if rng.random() < fake_fraction else "real"
        style = label if rng.random() >= label_noise else ("real" if label == "fake" else "fake")
        template = rng.choice(_FAKE if style == "fake" else _REAL)
        text = template.format(
            r=rng.choice(_REMEDIES), who=rng.choice(_WHO), place=rng.choice(_PLACES),
            org=rng.choice(_ORGS), n=rng.randint(2, 9999), m=rng.randint(10000, 999999),
        )
        if rng.random() < 0.5:
            text = text.capitalize()
        if rng.random() < link_rate[label]:
            links = _FAKE_LINKS if label == "fake" else _REAL_LINKS
            for _ in range(1 if rng.random() < 0.85 else 2):
                text += " " + rng.choice(links).format(k=rng.randint(0, 99))
        if rng.random() < 0.3:
            text += rng.choice([" #covid19", " #coronavirus", " #staysafe", " #wakeup"])
        posts.append(Post(f"{split}-{i + 1}", text, label, split))
    return posts


def write_constraint_csv(posts, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "tweet", "label"])
        for p in posts:
            writer.writerow([p.id, p.raw_text, p.label])
    return path
