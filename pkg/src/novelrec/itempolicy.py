"""Low-level item policy: sequential scoring and cluster-restricted retrieval.

The reference scorer is a smoothed item-transition (bigram) model over
consecutive high-quality consumptions, backed off to traffic-weighted
popularity when the context is unseen. Restriction is candidate-set
pre-filtering: scoring only the target cluster's members is
score-equivalent to masking a full softmax over all items, and cheaper.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np

from .clustering import ClusterId, ClusterTree
from .corpus import Corpus, InteractionEvent, DEFAULT_QUALITY_THRESHOLD
from .errors import ParseError, ValidationError

SCORER_FORMAT = "novelrec-scorer"
SCORER_VERSION = 1
_POP_EPS = 1e-9


class SequenceScorer(Protocol):
    """Scores candidates given an ordered interaction history."""

    def score(self, history: Sequence[str], candidates: Sequence[str]) -> np.ndarray: ...


@dataclass
class RetrievalResult:
    """Ranked (item_id, score) list; scores non-increasing."""

    ranked: list[tuple[str, float]]
    target_cluster: ClusterId | None
    truncated: bool

    @property
    def item_ids(self) -> list[str]:
        return [item_id for item_id, _ in self.ranked]


class ReferenceScorer:
    """Bigram transition counts with additive smoothing toward popularity.

    score(c | prev) = (count(prev, c) + s * pop(c)) / (total(prev) + s)
    falling back to pop(c) when prev is unseen or the history is empty.
    pop has a tiny floor so every candidate scores strictly positive.
    Deterministic once fitted; safe to share across threads.
    """

    def __init__(
        self,
        popularity: dict[str, float],
        transitions: dict[str, dict[str, int]],
        smoothing: float = 0.1,
        quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
    ):
        if smoothing < 0:
            raise ValidationError(f"smoothing must be >= 0, got {smoothing}")
        self.popularity = dict(popularity)
        self.transitions = {p: dict(n) for p, n in transitions.items()}
        self.smoothing = float(smoothing)
        self.quality_threshold = float(quality_threshold)
        total = sum(self.popularity.values())
        n = max(len(self.popularity), 1)
        self._pop_denom = total + n * _POP_EPS
        self._totals = {p: sum(n.values()) for p, n in self.transitions.items()}
        # Fast path for full-corpus scoring: items in lexicographic order.
        self._items = tuple(sorted(self.popularity))
        self._index = {item: i for i, item in enumerate(self._items)}
        self._pop_vec = np.array(
            [(self.popularity[i] + _POP_EPS) / self._pop_denom for i in self._items]
        )

    @property
    def items(self) -> tuple[str, ...]:
        return self._items

    def _pop(self, item_id: str) -> float:
        return (self.popularity.get(item_id, 0.0) + _POP_EPS) / self._pop_denom

    def score(self, history: Sequence[str], candidates: Sequence[str]) -> np.ndarray:
        prev = history[-1] if history else None
        row = self.transitions.get(prev) if prev is not None else None
        if row is None:
            return np.array([self._pop(c) for c in candidates])
        denom = self._totals[prev] + self.smoothing
        s = self.smoothing
        return np.array(
            [(row.get(c, 0) + s * self._pop(c)) / denom for c in candidates]
        )

    def score_all(self, history: Sequence[str]) -> np.ndarray:
        """Scores over ``self.items`` (lexicographic order); simulator fast path."""
        prev = history[-1] if history else None
        row = self.transitions.get(prev) if prev is not None else None
        if row is None:
            return self._pop_vec.copy()
        denom = self._totals[prev] + self.smoothing
        out = self.smoothing * self._pop_vec
        for item, count in row.items():
            out[self._index[item]] += count
        out /= denom
        return out

    def content_hash(self) -> str:
        payload = json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_payload(self) -> dict:
        return {
            "format": SCORER_FORMAT,
            "version": SCORER_VERSION,
            "smoothing": self.smoothing,
            "quality_threshold": self.quality_threshold,
            "popularity": self.popularity,
            "transitions": self.transitions,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ReferenceScorer":
        if payload.get("format") != SCORER_FORMAT:
            raise ValidationError(f"not a scorer payload: format={payload.get('format')!r}")
        if payload.get("version") != SCORER_VERSION:
            raise ValidationError(f"unsupported scorer version {payload.get('version')!r}")
        return cls(
            popularity=payload["popularity"],
            transitions=payload["transitions"],
            smoothing=payload["smoothing"],
            quality_threshold=payload["quality_threshold"],
        )


def train_reference_scorer(
    events: Iterable[InteractionEvent],
    corpus: Corpus,
    smoothing: float = 0.1,
    quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
) -> ReferenceScorer:
    """Fit transition counts over consecutive high-quality consumptions."""
    events = list(events)
    if not events:
        raise ValidationError("cannot train a scorer on an empty event log")
    by_user: dict[str, list[InteractionEvent]] = {}
    for ev in events:
        by_user.setdefault(ev.user_id, []).append(ev)
    transitions: dict[str, dict[str, int]] = {}
    for uid in sorted(by_user):
        seq = [
            ev.item_id
            for ev in sorted(by_user[uid], key=lambda e: e.timestamp)
            if ev.quality >= quality_threshold
        ]
        for prev, nxt in zip(seq, seq[1:]):
            row = transitions.setdefault(prev, {})
            row[nxt] = row.get(nxt, 0) + 1
    popularity = {item.item_id: float(item.traffic_weight) for item in corpus}
    return ReferenceScorer(popularity, transitions, smoothing, quality_threshold)


def _rank(
    scorer: SequenceScorer, history: Sequence[str], candidates: Sequence[str], k: int
) -> list[tuple[str, float]]:
    scores = scorer.score(history, candidates)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return [(candidates[i], float(scores[i])) for i in order[:k]]


def restricted_retrieval(
    scorer: SequenceScorer,
    tree: ClusterTree,
    history: Sequence[str],
    target_cluster: ClusterId,
    k: int,
) -> RetrievalResult:
    """Top-k items from the target cluster only.

    Equal to the unrestricted ranking filtered to the cluster: the same
    scores and the same (score desc, item_id asc) order apply, so
    pre-filtering candidates changes nothing but the work done.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    try:
        cluster = tree.cluster(target_cluster)
    except KeyError:
        raise KeyError(f"unknown cluster {target_cluster}") from None
    members = cluster.members
    return RetrievalResult(
        ranked=_rank(scorer, history, members, k),
        target_cluster=target_cluster,
        truncated=len(members) < k,
    )


def unrestricted_retrieval(
    scorer: SequenceScorer, history: Sequence[str], corpus: Corpus, k: int
) -> RetrievalResult:
    """Top-k over the whole corpus; the exploitation baseline ranking."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = corpus.item_ids
    return RetrievalResult(
        ranked=_rank(scorer, history, ids, k),
        target_cluster=None,
        truncated=len(ids) < k,
    )


def save_scorer(scorer: ReferenceScorer, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scorer.to_payload(), fh)
        fh.write("\n")


def load_scorer(path) -> ReferenceScorer:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid scorer file: {exc}", str(path)) from exc
    try:
        return ReferenceScorer.from_payload(payload)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"invalid scorer file: {exc}", str(path)) from exc
