"""Tweet-stream ingestion: JSONL tweets to a hashtag :class:`Dataset`.

Input is one JSON object per line::

    {"text": "...", "hashtags": ["a", "b"], "coordinates": [lat, lon] or null}

Every hashtag of a tweet receives the tweet's words and its geotag.
Tokenisation is a fixed contract: lowercase, split on anything that is not
a letter or digit, drop tokens shorter than two characters and stopwords.
Hashtag tokens stay in the bag of words (without the ``#``).
"""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sphere
from .model import Dataset

log = logging.getLogger(__name__)

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass
class TweetRecord:
    text: str
    hashtags: list
    coordinate: sphere.GeoCoordinate | None = None

    def __post_init__(self):
        seen = []
        for h in self.hashtags:
            h = str(h).lstrip("#").lower()
            if h and h not in seen:
                seen.append(h)
        self.hashtags = seen


@dataclass
class IngestConfig:
    min_geotags: int = 1
    min_words: int = 1
    min_doc_freq: int = 1
    dict_size: int | None = None
    stopwords: frozenset = frozenset()
    max_resultant: float | None = None
    keep_raw: bool = True

    def __post_init__(self):
        if self.min_geotags < 0 or self.min_words < 1 or self.min_doc_freq < 1:
            raise ValueError("ingest thresholds must be positive")
        if self.dict_size is not None and self.dict_size < 2:
            raise ValueError("dict_size must be at least 2")
        if self.max_resultant is not None and not 0 < self.max_resultant <= 1:
            raise ValueError("max_resultant must lie in (0, 1]")
        self.stopwords = frozenset(w.lower() for w in self.stopwords)


@dataclass
class IngestReport:
    lines: int = 0
    malformed: int = 0
    hashtags_seen: int = 0
    dropped: dict = field(default_factory=dict)


class EmptyDatasetError(ValueError):
    pass


def load_stopwords(path):
    with open(path) as f:
        return frozenset(w.strip().lower() for w in f if w.strip() and not w.startswith("#"))


def tokenize(text, stopwords=frozenset()):
    return [t for t in _SPLIT.split(text.lower()) if len(t) >= 2 and t not in stopwords]


def parse_line(line):
    """Parse one JSONL line into a :class:`TweetRecord`; raises ValueError."""
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("not a JSON object")
    text = obj.get("text")
    tags = obj.get("hashtags")
    if not isinstance(text, str) or not isinstance(tags, list):
        raise ValueError("missing text or hashtags")
    coords = obj.get("coordinates")
    geo = None
    if coords is not None:
        if not isinstance(coords, (list, tuple)) or len(coords) != 2:
            raise ValueError("coordinates must be [lat, lon]")
        geo = sphere.GeoCoordinate(float(coords[0]), float(coords[1]))
    return TweetRecord(text, tags, geo)


def read_tweets(lines, report: IngestReport | None = None):
    """Yield parsed tweets, counting (and skipping) malformed lines."""
    for line in lines:
        if not line.strip():
            continue
        if report is not None:
            report.lines += 1
        try:
            yield parse_line(line)
        except (ValueError, TypeError) as e:
            if report is not None:
                report.malformed += 1
            log.debug("skipping malformed line: %s", e)


def ingest(tweets, cfg: IngestConfig | None = None, report: IngestReport | None = None) -> Dataset:
    """Aggregate tweets per hashtag and apply the filters.

    The result does not depend on the order of ``tweets``: hashtags are
    sorted by id, the dictionary by (frequency desc, word asc), and geotag
    sums are accumulated over each hashtag's geotags in sorted order.
    """
    cfg = cfg or IngestConfig()
    report = report if report is not None else IngestReport()
    words = {}
    geos = {}
    for tw in tweets:
        toks = Counter(tokenize(tw.text, cfg.stopwords))
        for h in tw.hashtags:
            words.setdefault(h, Counter()).update(toks)
            g = geos.setdefault(h, [])
            if tw.coordinate is not None:
                g.append((tw.coordinate.latitude, tw.coordinate.longitude))
    report.hashtags_seen = len(words)

    def drop(reason, n):
        if n:
            report.dropped[reason] = report.dropped.get(reason, 0) + n

    tags = sorted(words)
    kept = [h for h in tags if len(geos[h]) >= cfg.min_geotags]
    drop("min_geotags", len(tags) - len(kept))

    # dictionary from document frequency over the surviving hashtags
    df = Counter()
    freq = Counter()
    for h in kept:
        df.update(words[h].keys())
        freq.update(words[h])
    vocab = [w for w in freq if df[w] >= cfg.min_doc_freq]
    vocab.sort(key=lambda w: (-freq[w], w))
    if cfg.dict_size is not None:
        vocab = vocab[:cfg.dict_size]
    index = {w: j for j, w in enumerate(vocab)}

    rows, cols, vals, ids, gsum, ngeo, raw = [], [], [], [], [], [], []
    n_words = 0
    n_spread = 0
    for h in kept:
        bag = sorted((index[w], c) for w, c in words[h].items() if w in index)
        if sum(c for _, c in bag) < cfg.min_words:
            n_words += 1
            continue
        pts = sorted(geos[h])
        w = (sphere.geo_to_cartesian(*np.array(pts).T) if pts else np.zeros((0, 3)))
        s = w.sum(axis=0) if len(pts) else np.zeros(3)
        if (cfg.max_resultant is not None and len(pts) >= 2
                and np.linalg.norm(s) / len(pts) > cfg.max_resultant):
            n_spread += 1
            continue
        r = len(ids)
        for j, c in bag:
            rows.append(r)
            cols.append(j)
            vals.append(c)
        ids.append(h)
        gsum.append(s)
        ngeo.append(len(pts))
        raw.append(w)
    drop("min_words", n_words)
    drop("max_resultant", n_spread)
    if not ids:
        raise EmptyDatasetError(f"no hashtags survive the filters: {report.dropped} "
                                f"(seen {report.hashtags_seen})")
    if len(vocab) < 2:
        raise EmptyDatasetError("dictionary has fewer than two words")
    counts = sp.csr_matrix((vals, (rows, cols)), shape=(len(ids), len(vocab)), dtype=np.int64)
    return Dataset(ids, vocab, counts, np.array(gsum).reshape(-1, 3), ngeo,
                   raw if cfg.keep_raw else None)


def ingest_file(path, cfg: IngestConfig | None = None):
    """Ingest a JSONL file; returns ``(Dataset, IngestReport)``."""
    report = IngestReport()
    with open(path) as f:
        data = ingest(read_tweets(f, report), cfg, report)
    return data, report
