"""Text normalization and URL extraction for social-media posts.

Normalization lowercases the text, repairs broken unicode, transliterates to
ASCII and swaps URLs, e-mails, phone numbers, currency symbols, numbers and
digits for placeholder tags. URLs are extracted from the *raw* text so that
shortened links keep their exact path.
"""

from __future__ import annotations

import re
import sys
import unicodedata
from dataclasses import dataclass, field

import ftfy
from unidecode import unidecode

__all__ = [
    "TAGS",
    "Post",
    "PreprocessedPost",
    "normalize_text",
    "extract_urls",
    "preprocess_post",
    "URL_RE",
    "EMAIL_RE",
    "PHONE_RE",
]

TAGS = ("<URL>", "<EMAIL>", "<PHONE>", "<CUR>", "<NUMBER>", "<DIGIT>")
LABELS = ("fake", "real", "unknown")
SOURCES = ("train", "dev", "test", "adhoc")

# Closing brackets are only trimmed when unbalanced inside the match.
_TRAILING_PUNCT = ".,;:!?'\"*"
_BRACKETS = {")": "(", "]": "[", "}": "{"}

URL_RE = re.compile(r"https?://[^\s<>\"'`…“”‘’]+", re.IGNORECASE)
EMAIL_RE = re.compile(
    r"(?<![\w.+-])[\w.%+-]+@[a-z0-9](?:[a-z0-9-]*[a-z0-9])?(?:\.[a-z0-9](?:[a-z0-9-]*[a-z0-9])?)*\.[a-z]{2,}\b",
    re.IGNORECASE,
)
PHONE_RE = re.compile(
    r"(?<![\w)])"
    r"(?:\+?\d{1,3}[ .-]?)?"
    r"(?:\(\d{3}\)[ .-]?|\d{3}[ .-])?"
    r"\d{3}[ .-]\d{4}"
    r"(?:\s?(?:ext\.?|x|#)\s?\d{2,6})?"
    r"(?!\w)",
    re.IGNORECASE,
)
_CURRENCY_CHARS = "".join(
    chr(cp) for cp in range(sys.maxunicode + 1) if unicodedata.category(chr(cp)) == "Sc"
)
CURRENCY_RE = re.compile("[" + re.escape(_CURRENCY_CHARS) + "]")
# Digit runs right after a currency tag are amounts, hence numbers.
NUMBER_RE = re.compile(r"(?<=<CUR>)\d+(?:[.,]\d+)*|\d+(?:[.,]\d+)+|\d{2,}")
DIGIT_RE = re.compile(r"\d")
_TAG_RE = re.compile(r"<(url|email|phone|cur|number|digit)>", re.IGNORECASE)


@dataclass(frozen=True)
class Post:
    id: str
    raw_text: str
    label: str = "unknown"
    source: str = "adhoc"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"post {self.id!r}: unknown label {self.label!r}")
        if self.source not in SOURCES:
            raise ValueError(f"post {self.id!r}: unknown source {self.source!r}")
        if self.source != "adhoc":
            if self.label not in ("fake", "real"):
                raise ValueError(f"post {self.id!r}: {self.source} records need a fake/real label")
            if not self.raw_text.strip():
                raise ValueError(f"post {self.id!r}: empty text")


@dataclass(frozen=True)
class PreprocessedPost:
    post_id: str
    normalized_text: str
    urls: tuple[str, ...] = field(default_factory=tuple)

    @property
    def has_links(self) -> bool:
        return bool(self.urls)


def _trim_url(url: str) -> str:
    while url:
        last = url[-1]
        if last in _TRAILING_PUNCT:
            url = url[:-1]
        elif last in _BRACKETS and url.count(last) > url.count(_BRACKETS[last]):
            url = url[:-1]
        else:
            break
    return url


def _iter_urls(text: str):
    for m in URL_RE.finditer(text):
        url = _trim_url(m.group(0))
        # a bare scheme is not a URL
        if len(url) > len(url.split("//", 1)[0]) + 2:
            yield m.start(), m.start() + len(url), url


def extract_urls(raw: str) -> list[str]:
    """Return every http(s) URL in ``raw`` in textual order, duplicates kept."""
    return [url for _, _, url in _iter_urls(raw)]


def _replace_urls(text: str) -> str:
    out, pos = [], 0
    for start, end, _ in _iter_urls(text):
        out.append(text[pos:start])
        out.append("<URL>")
        pos = end
    out.append(text[pos:])
    return "".join(out)


def _restore_tags(text: str) -> str:
    return _TAG_RE.sub(lambda m: m.group(0).upper(), text)


def _to_ascii(text: str) -> str:
    # unidecode maps untransliterable codepoints to "" and may emit capitals
    return _restore_tags(unidecode(unicodedata.normalize("NFKC", text)).lower())


def _substitute(text: str) -> str:
    text = _replace_urls(text)
    text = EMAIL_RE.sub("<EMAIL>", text)
    text = PHONE_RE.sub("<PHONE>", text)
    text = CURRENCY_RE.sub("<CUR>", text)
    text = NUMBER_RE.sub("<NUMBER>", text)
    return DIGIT_RE.sub("<DIGIT>", text)


def normalize_text(raw: str) -> str:
    """Normalize a post into lowercase ASCII with placeholder tags.

    >>> normalize_text("Visit http://bit.ly/abc NOW!!")
    'visit <URL> now!!'
    >>> normalize_text("Price rose to $5")
    'price rose to <CUR><NUMBER>'
    """
    if not raw:
        return ""
    text = ftfy.fix_text(raw, unescape_html=False, normalization="NFC")
    text = _restore_tags(text.lower())
    # Tag URLs, e-mails, phones and currency before transliteration so that
    # non-ASCII symbols (e.g. the euro sign) are not spelled out as letters.
    text = _replace_urls(text)
    text = EMAIL_RE.sub("<EMAIL>", text)
    text = PHONE_RE.sub("<PHONE>", text)
    text = CURRENCY_RE.sub("<CUR>", text)
    text = _to_ascii(text)
    # Second pass catches anything transliteration turned into a pattern.
    return _substitute(text)


def preprocess_post(post: Post) -> PreprocessedPost:
    return PreprocessedPost(
        post_id=post.id,
        normalized_text=normalize_text(post.raw_text),
        urls=tuple(extract_urls(post.raw_text)),
    )
