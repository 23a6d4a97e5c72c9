"""Hierarchical multi-round fitting and event reports.

Each round fits the hashtags left over from the previous rounds. A hashtag
whose largest normalised coefficient reaches the pruning threshold is
assigned to that event and removed. Events of the first round can also be
"zoomed": refitted from scratch on their member hashtags alone, with a new
number of events.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import sphere
from .em import FitConfig, FitTrace, fit
from .model import EPS_C, Dataset, ModelState

log = logging.getLogger(__name__)


@dataclass
class RoundConfig:
    """``K`` is one int for every round or a sequence with one entry per round.

    ``zoom`` lists first-round events to refit on their members with
    ``zoom_k`` events each.
    """

    fit: FitConfig
    rounds: int = 1
    K: int | tuple | None = None
    prune_threshold: float = 0.8
    zoom: tuple = ()
    zoom_k: int = 2

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not 0 < self.prune_threshold <= 1:
            raise ValueError(f"prune threshold must lie in (0, 1], got {self.prune_threshold}")
        if self.zoom_k < 1:
            raise ValueError("zoom_k must be at least 1")
        ks = self.K if self.K is not None else self.fit.K
        ks = (ks,) * self.rounds if np.isscalar(ks) else tuple(ks)
        if len(ks) != self.rounds or min(ks) < 1:
            raise ValueError("need one K >= 1 per round")
        self.K = tuple(int(k) for k in ks)
        self.zoom = tuple(int(z) for z in self.zoom)


@dataclass
class Assignment:
    hashtag: str
    round: int
    event: int
    coefficient: float
    parent: int | None = None


@dataclass
class RoundResult:
    """One fit: a regular round (``parent`` None) or a zoom of event ``parent``."""

    round: int
    state: ModelState
    trace: FitTrace
    data: Dataset
    index: np.ndarray
    assignments: list
    parent: int | None = None


@dataclass
class HierarchyResult:
    rounds: list = field(default_factory=list)
    residual: np.ndarray | None = None
    stopped_early: str | None = None

    def assignments(self):
        return [a for r in self.rounds for a in r.assignments]


def normalized_coefficients(C):
    """Columns of ``C`` divided by their sums, shape (K, P)."""
    return C / np.maximum(C.sum(axis=0), EPS_C)


def assign(C, threshold):
    """``(event, ratio, mask)``: dominant event per hashtag and whether its
    share reaches ``threshold``."""
    W = normalized_coefficients(C)
    k = np.argmax(W, axis=0)
    ratio = W[k, np.arange(W.shape[1])]
    return k, ratio, ratio >= threshold


def hierarchical_fit(data: Dataset, rc: RoundConfig) -> HierarchyResult:
    """Run the rounds, then the zoom refits. Returns a :class:`HierarchyResult`.

    The first round fits ``data`` unchanged; later rounds and zooms work on
    subsets whose dictionary is re-derived from the words they contain.
    """
    out = HierarchyResult()
    remaining = np.arange(data.P)
    for r, K in enumerate(rc.K, start=1):
        if len(remaining) < K:
            out.stopped_early = f"round {r}: {len(remaining)} hashtags left, fewer than K={K}"
            log.info(out.stopped_early)
            break
        sub = data if r == 1 else data.subset(remaining)
        state, trace = fit(sub, replace(rc.fit, K=K))
        k, ratio, mask = assign(state.C, rc.prune_threshold)
        assigned = [Assignment(sub.ids[j], r, int(k[j]), float(ratio[j]))
                    for j in np.flatnonzero(mask)]
        out.rounds.append(RoundResult(r, state, trace, sub, remaining.copy(), assigned))
        remaining = remaining[~mask]
        if len(remaining) == 0:
            break
    out.residual = remaining

    if rc.zoom and out.rounds:
        first = out.rounds[0]
        pos = {h: j for j, h in enumerate(first.data.ids)}
        for e in rc.zoom:
            if not 0 <= e < first.state.K:
                raise ValueError(f"zoom event {e} does not exist in round 1")
            members = np.array([first.index[pos[a.hashtag]]
                                for a in first.assignments if a.event == e], dtype=np.int64)
            if len(members) < rc.zoom_k:
                log.info("zoom of event %d skipped: %d members", e, len(members))
                continue
            sub = data.subset(np.sort(members))
            state, trace = fit(sub, replace(rc.fit, K=rc.zoom_k))
            k, ratio, _ = assign(state.C, 0.0)
            assigned = [Assignment(sub.ids[j], 1, int(k[j]), float(ratio[j]), parent=e)
                        for j in range(sub.P)]
            out.rounds.append(RoundResult(1, state, trace, sub, np.sort(members), assigned, e))
    return out


def final_labels(result: HierarchyResult, ids):
    """One label per hashtag of ``ids``: the deepest assignment as a tuple
    ``(round, parent, event)``, or ``None`` for the residual."""
    lab = {}
    for r in result.rounds:
        for a in r.assignments:
            if a.parent is None and a.hashtag in lab:
                continue
            lab[a.hashtag] = (a.round, a.parent, a.event)
    return [lab.get(i) for i in ids]


# -- reports ---------------------------------------------------------------

@dataclass
class EventReport:
    event: int
    top_words: list
    top_hashtags: list
    latitude: float
    longitude: float
    members: int
    round: int = 1
    parent: int | None = None

    def to_json(self):
        return {"round": self.round, "parent_event": self.parent, "event": self.event,
                "top_words": [{"word": w, "score": s} for w, s in self.top_words],
                "top_hashtags": [{"hashtag": h, "weight": s} for h, s in self.top_hashtags],
                "latitude": self.latitude, "longitude": self.longitude,
                "members": self.members}


def build_reports(state: ModelState, data: Dataset, n_top=10, round_=1, parent=None):
    """Top words (by word score, pivot excluded), top hashtags (by normalised
    coefficient) and mean geolocation of every event. Ties keep
    dictionary/dataset order."""
    W = normalized_coefficients(state.C)
    owner = np.argmax(W, axis=0)
    reports = []
    for k in range(state.K):
        scores = state.X[k]
        wi = np.argsort(-scores, kind="stable")[:n_top]
        hi = np.argsort(-W[k], kind="stable")[:n_top]
        geo = sphere.cartesian_to_geo(state.b[k])
        reports.append(EventReport(
            k, [(data.words[j], float(scores[j])) for j in wi],
            [(data.ids[j], float(W[k, j])) for j in hi],
            geo.latitude, geo.longitude, int(np.sum(owner == k)), round_, parent))
    return reports


REPORT_FORMAT = "mmevents-events"


def hierarchy_reports(result: HierarchyResult, n_top=10):
    return [rep for r in result.rounds
            for rep in build_reports(r.state, r.data, n_top, r.round, r.parent)]


def write_reports(path, reports):
    obj = {"format": REPORT_FORMAT, "version": 1, "events": [r.to_json() for r in reports]}
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)


def write_assignments(path, assignments):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["hashtag", "round", "parent_event", "event", "coefficient"])
        for a in assignments:
            w.writerow([a.hashtag, a.round, "" if a.parent is None else a.parent,
                        a.event, repr(a.coefficient)])
