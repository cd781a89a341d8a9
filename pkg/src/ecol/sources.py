"""Source credibility features for URLs embedded in posts.

Each URL is unshortened, reduced to its registrable domain label (``thespoof``
for ``https://www.thespoof.com/x``), tagged with a reliability label and
paired with an encyclopedia description. A post gets five slots of
``[one-hot(4) | description embedding(768)]``; unused slots are zero.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import logging
import threading
import time
from collections import Counter
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence
from urllib.parse import urljoin, urlsplit

import numpy as np

from .encoder import CONTENT_DIM
from .preprocess import PreprocessedPost, normalize_text

logger = logging.getLogger(__name__)

RELIABILITY_TAGS = ("reliable", "unreliable", "satire", "na")
N_SLOTS = 5
SLOT_DIM = len(RELIABILITY_TAGS) + CONTENT_DIM
SOURCE_DIM = N_SLOTS * SLOT_DIM
NA_DOMAIN = "<na-domain>"
REDIRECT_CODES = frozenset({301, 302, 303, 307, 308})
USER_AGENT = "ecol-unshortener/0.1 (+offline-first research tool)"

_extractor = None


class ResolutionError(RuntimeError):
    def __init__(self, url: str, reason: str):
        super().__init__(f"could not resolve {url}: {reason}")
        self.url = url


class RedirectLoopError(ResolutionError):
    pass


@dataclass(frozen=True)
class Resolution:
    final_url: str
    status: str  # ok | unresolved

    @property
    def resolved(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class SourceRecord:
    original_url: str
    final_url: str
    domain: str
    tag: str
    description: str = ""


# ---------------------------------------------------------------- domains


def _tld_extractor():
    global _extractor
    if _extractor is None:
        import tldextract

        # bundled public-suffix snapshot only, never fetched
        _extractor = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)
    return _extractor


def extract_domain(url: str) -> str:
    """Registrable domain label of ``url`` without subdomains or suffix."""
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        return NA_DOMAIN
    if not host:
        return NA_DOMAIN
    host = host.rstrip(".").lower()
    if host == "localhost" or host.endswith(".localhost"):
        return NA_DOMAIN
    try:
        ipaddress.ip_address(host)
        return NA_DOMAIN
    except ValueError:
        pass
    if host.startswith("www."):
        host = host[4:]
    parts = _tld_extractor()(host)
    return parts.domain.lower() if parts.domain else NA_DOMAIN


# ----------------------------------------------------------- reliability


def aggregate_reliability(factual_reporting: str | None = None,
                          categories: Iterable[str] = ()) -> str | None:
    """Collapse assessment-site ratings into one reliability tag.

    Satire wins over everything; conspiracy/pseudoscience sources and low
    factual reporting are unreliable; high factual reporting is reliable.
    Anything else (e.g. mixed reporting) has no tag and returns ``None``.
    """
    cats = {c.strip().lower() for c in categories}
    factual = (factual_reporting or "").strip().lower()
    if "satire" in cats:
        return "satire"
    if cats & {"conspiracy", "pseudoscience", "conspiracy-pseudoscience", "questionable"}:
        return "unreliable"
    if factual in {"low", "very low"}:
        return "unreliable"
    if factual in {"high", "very high"}:
        return "reliable"
    return None


class ReliabilityMap(Mapping):
    """Domain label -> reliability tag; absent domains are ``na``."""

    def __init__(self, entries: Mapping[str, str] | None = None, provenance: dict | None = None):
        self.entries: dict[str, str] = {}
        for key, tag in (entries or {}).items():
            tag = tag.strip().lower()
            if tag not in RELIABILITY_TAGS[:3]:
                raise ValueError(f"{key!r}: invalid reliability tag {tag!r}")
            self.entries[self.normalize_key(key)] = tag
        self.provenance = provenance or {}

    @staticmethod
    def normalize_key(key: str) -> str:
        key = key.strip().lower()
        if "." in key or "/" in key:
            url = key if "://" in key else "http://" + key
            return extract_domain(url)
        return key

    def __getitem__(self, key):
        return self.entries[key]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def tag(self, domain: str) -> str:
        return self.entries.get(domain, "na")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ReliabilityMap":
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = {"domain", "tag"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
            entries = {row["domain"]: row["tag"] for row in reader}
        return cls(entries, provenance={"source": str(path)})

    @classmethod
    def from_assessments(cls, rows: Iterable[Mapping], provenance: dict | None = None) -> "ReliabilityMap":
        """Aggregate raw assessment rows with keys ``domain``, ``factual_reporting``, ``categories``."""
        entries = {}
        counts: Counter = Counter()
        for row in rows:
            cats = row.get("categories") or ()
            if isinstance(cats, str):
                cats = [c for c in cats.replace(";", ",").split(",") if c.strip()]
            tag = aggregate_reliability(row.get("factual_reporting"), cats)
            counts[tag or "untagged"] += 1
            if tag is not None:
                entries[row["domain"]] = tag
        meta = dict(provenance or {})
        meta["counts"] = dict(sorted(counts.items()))
        return cls(entries, provenance=meta)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["domain", "tag"])
            for key in sorted(self.entries):
                writer.writerow([key, self.entries[key]])


def reliability_tag(reliability: ReliabilityMap, domain: str) -> str:
    if domain == NA_DOMAIN:
        return "na"
    return reliability.tag(domain)


def one_hot(tag: str) -> np.ndarray:
    """4-dim indicator in the order reliable, unreliable, satire, na."""
    vec = np.zeros(len(RELIABILITY_TAGS), dtype=np.float32)
    vec[RELIABILITY_TAGS.index(tag)] = 1.0
    return vec


# ----------------------------------------------------------- descriptions


class DescriptionMap(Mapping):
    def __init__(self, entries: dict[str, str], skipped: int = 0, ambiguous: Iterable[str] = ()):
        self.entries = entries
        self.skipped = skipped
        self.ambiguous = frozenset(ambiguous)

    def __getitem__(self, key):
        return self.entries[key]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def _first_paragraph(title: str, text: str) -> str:
    for para in text.split("\n"):
        para = para.strip()
        if para and para.lower() != title.lower():
            return para
    return ""


def build_description_map(path: str | Path) -> DescriptionMap:
    """Build ``lowercase title -> first paragraph`` from extracted pages.

    The input is JSON lines with ``title`` and ``text``. Titles carried by
    more than one page are ambiguous and dropped entirely. Malformed lines
    are skipped and counted in ``.skipped``.
    """
    pages: dict[str, list[str]] = {}
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                title, text = rec["title"], rec["text"]
                if not isinstance(title, str) or not isinstance(text, str) or not title.strip():
                    raise TypeError("title/text must be non-empty strings")
            except (ValueError, KeyError, TypeError) as exc:
                logger.debug("%s:%d skipped (%s)", path, lineno, exc)
                skipped += 1
                continue
            pages.setdefault(title.strip().lower(), []).append(_first_paragraph(title.strip(), text))
    if skipped:
        logger.warning("%s: skipped %d malformed line(s)", path, skipped)
    ambiguous = {k for k, v in pages.items() if len(v) > 1}
    entries = {k: v[0] for k, v in pages.items() if len(v) == 1}
    return DescriptionMap(entries, skipped=skipped, ambiguous=ambiguous)


def wiki_description(descriptions: Mapping[str, str], domain: str) -> str:
    return descriptions.get(domain, "")


# ------------------------------------------------------------ unshortening


class UnshortenCache:
    """JSON-lines cache of ``original_url, final_url, status``; last write wins."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, tuple[str, str]] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["original_url"]] = (rec["final_url"], rec["status"])

    def get(self, url: str) -> tuple[str, str] | None:
        return self._entries.get(url)

    def put(self, url: str, final_url: str, status: str) -> None:
        with self._lock:
            if self._entries.get(url) == (final_url, status):
                return
            self._entries[url] = (final_url, status)
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    rec = {"original_url": url, "final_url": final_url, "status": status}
                    f.write(json.dumps(rec, sort_keys=True) + "\n")

    def __contains__(self, url):
        return url in self._entries

    def __len__(self):
        return len(self._entries)


class Unshortener:
    """Follow HTTP redirects with a persistent cache.

    Offline (the default) answers only from the cache; a miss returns the
    original URL with status ``unresolved``. Online lookups follow
    301/302/303/307/308 responses up to ``max_hops`` and never read bodies.
    """

    def __init__(self, cache: UnshortenCache | str | Path | None = None, offline: bool = True,
                 max_hops: int = 10, timeout: float = 5.0, per_host_delay: float = 0.0,
                 session=None):
        self.cache = cache if isinstance(cache, UnshortenCache) else UnshortenCache(cache)
        self.offline = offline
        self.max_hops = max_hops
        self.timeout = timeout
        self.per_host_delay = per_host_delay
        self._session = session
        self._host_lock = threading.Lock()
        self._last_hit: dict[str, float] = {}

    @property
    def session(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
            self._session.headers["User-Agent"] = USER_AGENT
        return self._session

    def _polite_wait(self, url: str) -> None:
        if self.per_host_delay <= 0:
            return
        host = urlsplit(url).hostname or ""
        with self._host_lock:
            now = time.monotonic()
            wait = self._last_hit.get(host, -1e9) + self.per_host_delay - now
            self._last_hit[host] = now + max(wait, 0.0)
        if wait > 0:
            time.sleep(wait)

    def _follow(self, url: str) -> str:
        import requests

        current = url
        for _ in range(self.max_hops + 1):
            self._polite_wait(current)
            try:
                resp = self.session.get(current, allow_redirects=False, timeout=self.timeout,
                                        stream=True, headers={"User-Agent": USER_AGENT})
                resp.close()
            except requests.RequestException as exc:
                raise ResolutionError(url, type(exc).__name__) from exc
            location = resp.headers.get("Location")
            if resp.status_code not in REDIRECT_CODES or not location:
                return current
            current = urljoin(current, location)
        raise RedirectLoopError(url, f"more than {self.max_hops} redirects")

    def resolve(self, url: str) -> Resolution:
        hit = self.cache.get(url)
        if hit is not None:
            final_url, status = hit
            if status == "loop":
                raise RedirectLoopError(url, "cached redirect loop")
            return Resolution(final_url, "ok")
        if self.offline:
            return Resolution(url, "unresolved")
        try:
            final_url = self._follow(url)
        except RedirectLoopError:
            self.cache.put(url, url, "loop")
            raise
        self.cache.put(url, final_url, "ok")
        return Resolution(final_url, "ok")

    def resolve_many(self, urls: Sequence[str], max_workers: int = 4) -> list[Resolution | ResolutionError]:
        """Resolve concurrently; failures are returned in place, not raised."""
        def one(u):
            try:
                return self.resolve(u)
            except ResolutionError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, urls))


def unshorten(url: str, max_hops: int = 10, timeout: float = 5.0,
              cache: UnshortenCache | str | Path | None = None, offline: bool = True) -> Resolution:
    return Unshortener(cache, offline=offline, max_hops=max_hops, timeout=timeout).resolve(url)


# --------------------------------------------------------------- features


@dataclass
class SourceFeaturizer:
    """Builds the 3860-dim source block for a preprocessed post.

    Descriptions are encoded once per domain with the frozen content encoder.
    ``missing_description`` picks what an absent description contributes:
    a zero vector (default) or the encoding of the empty string.
    """

    reliability: ReliabilityMap
    descriptions: Mapping[str, str]
    encoder: object
    unshortener: Unshortener = field(default_factory=Unshortener)
    missing_description: str = "zero"
    _desc_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.missing_description not in ("zero", "empty"):
            raise ValueError("missing_description must be 'zero' or 'empty'")

    def record(self, url: str) -> SourceRecord:
        try:
            final = self.unshortener.resolve(url).final_url
        except ResolutionError as exc:
            logger.info("source slot degraded to na: %s", exc)
            return SourceRecord(url, url, NA_DOMAIN, "na", "")
        domain = extract_domain(final)
        tag = reliability_tag(self.reliability, domain)
        desc = "" if domain == NA_DOMAIN else wiki_description(self.descriptions, domain)
        return SourceRecord(url, final, domain, tag, desc)

    def records(self, post: PreprocessedPost) -> list[SourceRecord]:
        return [self.record(u) for u in post.urls[:N_SLOTS]]

    def _description_vector(self, description: str) -> np.ndarray:
        if not description and self.missing_description == "zero":
            return np.zeros(CONTENT_DIM, dtype=np.float32)
        if description not in self._desc_cache:
            self._desc_cache[description] = self.encoder.encode_texts([normalize_text(description)])[0]
        return self._desc_cache[description]

    def slots(self, records: Sequence[SourceRecord]) -> Iterator[np.ndarray]:
        for rec in records[:N_SLOTS]:
            yield np.concatenate([one_hot(rec.tag), self._description_vector(rec.description)])

    def __call__(self, post: PreprocessedPost) -> np.ndarray:
        out = np.zeros(SOURCE_DIM, dtype=np.float32)
        for i, slot in enumerate(self.slots(self.records(post))):
            out[i * SLOT_DIM:(i + 1) * SLOT_DIM] = slot
        return out


def source_feature(post: PreprocessedPost, reliability: ReliabilityMap, descriptions: Mapping[str, str],
                   encoder, unshortener: Unshortener | None = None) -> np.ndarray:
    featurizer = SourceFeaturizer(reliability, descriptions, encoder, unshortener or Unshortener())
    return featurizer(post)
