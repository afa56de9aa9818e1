"""Item corpus, interaction logs, and synthetic desk-scale data generation.

Corpus files are line-delimited JSON (one object per line) so they stream
and diff cleanly:

    items.jsonl   {"item_id", "embedding": [...], "keywords": [...], "traffic_weight"}
    events.jsonl  {"user_id", "item_id", "timestamp", "quality"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_DIM = 256
DEFAULT_QUALITY_THRESHOLD = 0.5

# Topic vocabulary for synthetic corpora. Single lowercase tokens; topics
# cycle through the list and get a numeric suffix once it is exhausted.
_TOPIC_WORDS = (
    "jazz", "piano", "cycling", "sourdough", "astronomy", "chess", "origami",
    "bouldering", "gardening", "anime", "vinyl", "poetry", "surfing", "drones",
    "calligraphy", "salsa", "trivia", "flyfishing", "woodwork", "skincare",
    "tarot", "camping", "crochet", "espresso", "karaoke", "robotics",
    "mycology", "watercolor", "pilates", "synthwave", "birding", "ceramics",
    "speedrunning", "thrifting", "kombucha", "parkour", "ukulele",
    "meditation", "stargazing", "skateboarding", "genealogy", "aquascaping",
    "journaling", "beekeeping", "archery", "bonsai", "cosplay", "foraging",
    "glassblowing", "homebrewing", "juggling", "kayaking", "leathercraft",
    "macrame", "numismatics", "orienteering", "puppetry", "quilting",
    "rollerskating", "slacklining", "terrariums", "upcycling", "vexillology",
    "whittling", "xeriscaping", "yodeling", "zinemaking",
)


@dataclass(frozen=True)
class Item:
    """One corpus unit: embedding, keyword list, and relative traffic."""

    item_id: str
    embedding: np.ndarray
    keywords: tuple[str, ...]
    traffic_weight: float

    def __post_init__(self):
        if not self.keywords:
            raise ValidationError(f"item {self.item_id!r} has no keywords")
        if any(k != k.lower() for k in self.keywords):
            raise ValidationError(f"item {self.item_id!r} has non-lowercase keywords")
        if self.traffic_weight < 0:
            raise ValidationError(
                f"item {self.item_id!r} has negative traffic_weight {self.traffic_weight}"
            )
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ValidationError(f"item {self.item_id!r} embedding must be a flat vector")
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "keywords", tuple(self.keywords))


@dataclass(frozen=True)
class InteractionEvent:
    """Logged user feedback; quality 0 means impression only."""

    user_id: str
    item_id: str
    timestamp: float
    quality: float

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise ValidationError(
                f"quality must be in [0, 1], got {self.quality} for user {self.user_id!r}"
            )


@dataclass
class UserHistory:
    """One user's events in ascending timestamp order."""

    user_id: str
    events: list[InteractionEvent] = field(default_factory=list)

    def __post_init__(self):
        for ev in self.events:
            if ev.user_id != self.user_id:
                raise ValidationError(
                    f"event for user {ev.user_id!r} in history of {self.user_id!r}"
                )
        self.events = sorted(self.events, key=lambda e: e.timestamp)

    def __len__(self) -> int:
        return len(self.events)


class Corpus:
    """Immutable item collection with a declared embedding dimension."""

    def __init__(self, items: Iterable[Item], dim: int | None = None):
        self._items: dict[str, Item] = {}
        self.dim = dim
        for item in items:
            if item.item_id in self._items:
                raise ValidationError(f"duplicate item_id {item.item_id!r}")
            if self.dim is None:
                self.dim = len(item.embedding)
            elif len(item.embedding) != self.dim:
                raise ValidationError(
                    f"item {item.item_id!r} embedding has dimension "
                    f"{len(item.embedding)}, corpus declares {self.dim}"
                )
            self._items[item.item_id] = item
        if self.dim is None:
            self.dim = DEFAULT_DIM
        self._ids = tuple(sorted(self._items))

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def __iter__(self):
        return (self._items[i] for i in self._ids)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._ids

    def item(self, item_id: str) -> Item:
        try:
            return self._items[item_id]
        except KeyError:
            raise KeyError(f"unknown item_id {item_id!r}") from None

    def embeddings(self, item_ids: Sequence[str] | None = None) -> np.ndarray:
        ids = self._ids if item_ids is None else item_ids
        return np.array([self._items[i].embedding for i in ids])

    def traffic_weights(self, item_ids: Sequence[str] | None = None) -> np.ndarray:
        ids = self._ids if item_ids is None else item_ids
        return np.array([self._items[i].traffic_weight for i in ids])

    @property
    def total_traffic(self) -> float:
        return float(sum(it.traffic_weight for it in self._items.values()))


def load_corpus(path) -> Corpus:
    """Load items.jsonl; the first record declares the embedding dimension."""
    items: list[Item] = []
    dim = None
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                item = Item(
                    item_id=str(rec["item_id"]),
                    embedding=np.asarray(rec["embedding"], dtype=np.float64),
                    keywords=tuple(rec["keywords"]),
                    traffic_weight=float(rec["traffic_weight"]),
                )
            except ValidationError:
                raise
            except Exception as exc:
                raise ParseError(f"malformed item record: {exc}", str(path), lineno) from exc
            if item.item_id in seen:
                raise ValidationError(
                    f"duplicate item_id {item.item_id!r} at line {lineno} of {path}"
                )
            if dim is None:
                dim = len(item.embedding)
            elif len(item.embedding) != dim:
                raise ValidationError(
                    f"item {item.item_id!r} at line {lineno} has embedding dimension "
                    f"{len(item.embedding)}, corpus declares {dim}"
                )
            seen.add(item.item_id)
            items.append(item)
    return Corpus(items, dim=dim)


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in corpus:
            rec = {
                "item_id": item.item_id,
                "embedding": [float(x) for x in item.embedding],
                "keywords": list(item.keywords),
                "traffic_weight": float(item.traffic_weight),
            }
            fh.write(json.dumps(rec) + "\n")


def topic_keyword(topic: int) -> str:
    """Deterministic primary keyword for a synthetic topic index."""
    base = _TOPIC_WORDS[topic % len(_TOPIC_WORDS)]
    round_ = topic // len(_TOPIC_WORDS)
    return base if round_ == 0 else f"{base}{round_ + 1}"


def synth_corpus(num_items: int, num_topics: int, dim: int = 16, seed: int = 0) -> Corpus:
    """Draw items from Gaussian topic centers with heavy-tailed traffic.

    Pure function of its arguments: identical inputs give an identical
    corpus. Keywords derive from the topic index so cluster descriptions
    stay human-readable at desk scale.
    """
    if num_topics < 1 or num_items < num_topics:
        raise ValueError(
            f"need num_items >= num_topics >= 1, got {num_items} items, {num_topics} topics"
        )
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(num_topics, dim))
    # Secondary keyword pool per topic, drawn from the shared vocabulary.
    pools = [
        [topic_keyword(t)]
        + [topic_keyword((7 * t + 3 * j + 1) % (num_topics + 5)) for j in range(1, 5)]
        for t in range(num_topics)
    ]
    topics = rng.integers(0, num_topics, size=num_items)
    # Guarantee every topic owns at least one item.
    topics[:num_topics] = np.arange(num_topics)
    noise = rng.normal(0.0, 0.15, size=(num_items, dim))
    # Lognormal weights: heavy-tailed, but no single item dwarfs a
    # desk-scale cluster traffic cap.
    weights = rng.lognormal(mean=0.0, sigma=1.0, size=num_items)
    items = []
    width = len(str(max(num_items - 1, 1)))
    for i in range(num_items):
        t = int(topics[i])
        pool = pools[t]
        extra = rng.choice(len(pool) - 1, size=2, replace=False) + 1
        keywords = (pool[0], pool[extra[0]], pool[extra[1]])
        items.append(
            Item(
                item_id=f"item{i:0{width}d}",
                embedding=centers[t] + noise[i],
                keywords=keywords,
                traffic_weight=float(weights[i]),
            )
        )
    return Corpus(items, dim=dim)


def filter_high_quality(history: UserHistory, threshold: float) -> UserHistory:
    """Keep events with quality >= threshold, preserving order."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    kept = [ev for ev in history.events if ev.quality >= threshold]
    return UserHistory(history.user_id, kept)


def load_events(path) -> list[InteractionEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                events.append(
                    InteractionEvent(
                        user_id=str(rec["user_id"]),
                        item_id=str(rec["item_id"]),
                        timestamp=float(rec["timestamp"]),
                        quality=float(rec["quality"]),
                    )
                )
            except ValidationError:
                raise
            except Exception as exc:
                raise ParseError(f"malformed event record: {exc}", str(path), lineno) from exc
    return events


def write_events(events: Iterable[InteractionEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            rec = {
                "user_id": ev.user_id,
                "item_id": ev.item_id,
                "timestamp": ev.timestamp,
                "quality": ev.quality,
            }
            fh.write(json.dumps(rec) + "\n")


def group_histories(events: Iterable[InteractionEvent]) -> list[UserHistory]:
    """Group a flat event list into per-user histories, sorted by user id."""
    by_user: dict[str, list[InteractionEvent]] = {}
    for ev in events:
        by_user.setdefault(ev.user_id, []).append(ev)
    return [UserHistory(uid, evs) for uid, evs in sorted(by_user.items())]
