"""High-level language policy: generate a novel interest per cluster pair.

The expensive generation step runs offline: every ordered cluster pair at
the planning level is pushed through a generator, the output text is
mapped back to a cluster id by exact matching on normalized descriptions,
and the results land in a transition table that serving reads with O(1)
lookups. Generators are pluggable; the deterministic ones here stand in
for a fine-tuned LLM honoring the same interface.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from .clustering import ClusterId, ClusterTree
from .curation import CuratedDataset, DEFAULT_PROMPT_TEMPLATE, render_prompt
from .errors import (
    ConsistencyError,
    GenerationError,
    ParseError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .text import normalize_text

Pair = tuple[ClusterId, ClusterId]


@dataclass(frozen=True)
class GenerationOutcome:
    """Result of mapping one generated string back to the cluster space."""

    raw: str
    matched: ClusterId | None
    novelty_ok: bool


class InterestGenerator(Protocol):
    """Anything that turns K context cluster descriptions into text."""

    generator_id: str

    def generate(self, context: Sequence[str]) -> str: ...


def match_generation(
    raw: str,
    tree: ClusterTree,
    level: int,
    context: Sequence[ClusterId] = (),
) -> GenerationOutcome:
    """Exact-match raw text against the level's normalized descriptions.

    No fuzzy matching: the text either normalizes to exactly one cluster
    description or it is a NoMatch.
    """
    index = tree.description_index(level)
    matched = index.get(normalize_text(raw))
    novelty_ok = matched is not None and matched not in tuple(context)
    return GenerationOutcome(raw=raw, matched=matched, novelty_ok=novelty_ok)


def enumerate_context_pairs(tree: ClusterTree, level: int) -> list[Pair]:
    """All M_l^2 ordered pairs, self-pairs included, in row-major order."""
    ids = [c.id for c in tree.clusters_at(level)]
    return [(a, b) for a in ids for b in ids]


def _resolve_context(tree: ClusterTree, level: int, context: Sequence[str]) -> list[ClusterId]:
    index = tree.description_index(level)
    resolved = []
    for desc in context:
        cid = index.get(normalize_text(desc))
        if cid is None:
            raise GenerationError(f"context description {desc!r} matches no cluster at level {level}")
        resolved.append(cid)
    return resolved


def embedding_fallback_generate(tree: ClusterTree, level: int, pair: Pair) -> str:
    """Description of the novel cluster nearest the context centroid midpoint.

    Deterministic: ties break toward the lower cluster index. Needs at
    least three clusters at the level so a novel target exists.
    """
    clusters = tree.clusters_at(level)
    if len(clusters) < 3:
        raise GenerationError(
            f"level {level} has {len(clusters)} clusters; need >= 3 for a novel target"
        )
    c1, c2 = pair
    mid = (tree.cluster(c1).centroid + tree.cluster(c2).centroid) / 2.0
    d2 = ((tree.centroids(level) - mid) ** 2).sum(axis=1)
    d2[c1.index] = np.inf
    d2[c2.index] = np.inf
    return clusters[int(np.argmin(d2))].description_text


class EmbeddingFallbackGenerator:
    """Deterministic geometric stand-in for the fine-tuned language model."""

    def __init__(self, tree: ClusterTree, level: int):
        self.tree = tree
        self.level = level
        self.generator_id = "embedding-fallback"
        if len(tree.clusters_at(level)) < 3:
            raise GenerationError("embedding fallback needs at least 3 clusters")

    def generate(self, context: Sequence[str]) -> str:
        c1, c2 = _resolve_context(self.tree, self.level, context)
        return embedding_fallback_generate(self.tree, self.level, (c1, c2))


class MemorizingGenerator:
    """Count-based stand-in mirroring a generator trained on a curated set.

    Known context pairs reproduce their highest-support label; unknown
    pairs borrow the label of the nearest curated pair by summed centroid
    distance. Ties break lexicographically for determinism.
    """

    def __init__(self, dataset: CuratedDataset, tree: ClusterTree, level: int | None = None):
        if not dataset.examples:
            raise GenerationError("memorizing generator needs a non-empty dataset")
        self.tree = tree
        self.level = dataset.planning_level if level is None else level
        self.generator_id = "memorizing"
        best: dict[tuple[int, int], tuple[int, int]] = {}  # pair -> (-support, label)
        for ex in dataset.examples:
            key = ex.pair_key
            cand = (-ex.support, ex.label.index)
            if key not in best or cand < best[key]:
                best[key] = cand
        self._labels = {key: lab for key, (_, lab) in best.items()}
        pairs = sorted(self._labels)
        cents = self.tree.centroids(self.level)
        self._pair_list = pairs
        self._first = cents[[i for i, _ in pairs]]
        self._second = cents[[j for _, j in pairs]]

    def memorized_label(self, pair: Pair) -> ClusterId:
        key = (pair[0].index, pair[1].index)
        if key in self._labels:
            return ClusterId(self.level, self._labels[key])
        cents = self.tree.centroids(self.level)
        d = np.linalg.norm(self._first - cents[key[0]], axis=1) + np.linalg.norm(
            self._second - cents[key[1]], axis=1
        )
        nearest = self._pair_list[int(np.argmin(d))]  # pair list is lex sorted
        return ClusterId(self.level, self._labels[nearest])

    def generate(self, context: Sequence[str]) -> str:
        c1, c2 = _resolve_context(self.tree, self.level, context)
        label = self.memorized_label((c1, c2))
        return self.tree.cluster(label).description_text


@dataclass
class RemoteEndpointConfig:
    """Wire settings for a remote text-generation service."""

    url: str
    auth_token: str | None = None
    timeout: float = 10.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    max_tokens: int = 32

    @classmethod
    def from_env(cls, prefix: str = "NOVELREC_REMOTE") -> "RemoteEndpointConfig":
        url = os.environ.get(f"{prefix}_URL")
        if not url:
            raise ValidationError(f"{prefix}_URL is not set")
        return cls(
            url=url,
            auth_token=os.environ.get(f"{prefix}_TOKEN"),
            timeout=float(os.environ.get(f"{prefix}_TIMEOUT", "10")),
        )


def remote_generate(config: RemoteEndpointConfig, prompt: str) -> str:
    """POST the prompt, return the first candidate text.

    Retries transport failures and 5xx/429 responses with exponential
    backoff up to the attempt budget, then raises TransportError. A
    response outside the {candidates: [{text}]} contract is a
    ProtocolError and is not retried.
    """
    headers = {"Content-Type": "application/json"}
    if config.auth_token:
        headers["Authorization"] = f"Bearer {config.auth_token}"
    payload = {"prompt": prompt, "max_tokens": config.max_tokens}
    last_error: Exception | None = None
    for attempt in range(config.max_attempts):
        if attempt:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                config.url, json=payload, headers=headers, timeout=config.timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 400:
            last_error = TransportError(f"HTTP {resp.status_code} from {config.url}")
            if resp.status_code in (429,) or resp.status_code >= 500:
                continue
            raise TransportError(
                f"HTTP {resp.status_code} from {config.url}: {resp.text[:200]}"
            )
        try:
            body = resp.json()
            text = body["candidates"][0]["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                f"malformed generation response from {config.url}: {resp.text[:200]}"
            ) from exc
        if not isinstance(text, str):
            raise ProtocolError(f"candidate text is not a string: {text!r}")
        return text
    raise TransportError(
        f"generation request to {config.url} failed after "
        f"{config.max_attempts} attempts: {last_error}"
    )


class RemoteGenerator:
    """Client for an external fine-tuned model behind the generation API."""

    def __init__(
        self,
        config: RemoteEndpointConfig,
        template: str = DEFAULT_PROMPT_TEMPLATE,
        generator_id: str = "remote",
    ):
        self.config = config
        self.template = template
        self.generator_id = generator_id

    def generate(self, context: Sequence[str]) -> str:
        prompt = render_prompt(self.template, context[0], context[1])
        return remote_generate(self.config, prompt)


# -- transition table -------------------------------------------------------


@dataclass(frozen=True)
class TableEntry:
    target: int
    source: str  # "model" or "fallback"


@dataclass
class TableProvenance:
    generator_id: str
    level: int
    num_clusters: int
    match_rate: float
    fallback_count: int
    tree_hash: str | None = None
    built_at: float = field(default_factory=time.time)


class TransitionTable:
    """Total map from every ordered cluster pair to a novel target cluster."""

    def __init__(self, level: int, entries: dict[tuple[int, int], TableEntry], provenance: TableProvenance):
        self.level = level
        self.entries = entries
        self.provenance = provenance
        self.num_clusters = provenance.num_clusters
        self._validate()

    def _validate(self) -> None:
        m = self.num_clusters
        if len(self.entries) != m * m:
            raise ValidationError(
                f"table has {len(self.entries)} entries, expected {m * m} for {m} clusters"
            )
        for (i, j), entry in self.entries.items():
            if not (0 <= i < m and 0 <= j < m and 0 <= entry.target < m):
                raise ValidationError(f"table entry ({i}, {j}) -> {entry.target} out of range")
            if entry.target in (i, j):
                raise ValidationError(
                    f"table entry ({i}, {j}) -> {entry.target} violates novelty"
                )

    def lookup(self, pair: Pair | tuple[int, int]) -> ClusterId:
        i, j = (pair[0].index, pair[1].index) if isinstance(pair[0], ClusterId) else pair
        return ClusterId(self.level, self.entries[(i, j)].target)

    def entry(self, pair: Pair | tuple[int, int]) -> TableEntry:
        i, j = (pair[0].index, pair[1].index) if isinstance(pair[0], ClusterId) else pair
        return self.entries[(i, j)]

    def target_counts(self) -> np.ndarray:
        """How often each cluster appears as a target, zeros included."""
        counts = np.zeros(self.num_clusters, dtype=np.int64)
        for entry in self.entries.values():
            counts[entry.target] += 1
        return counts


def bulk_infer(
    generator: InterestGenerator,
    tree: ClusterTree,
    level: int,
    fallback: InterestGenerator | None = None,
    max_workers: int = 1,
) -> TransitionTable:
    """Run the generator over every ordered pair and build the total table.

    Per pair: generate, exact-match, verify novelty; on failure retry once,
    then consult the fallback (the deterministic embedding fallback by
    default, which cannot miss). The provenance match_rate is the fraction
    of pairs whose first generation matched a cluster description.
    """
    pairs = enumerate_context_pairs(tree, level)
    if fallback is None and len(tree.clusters_at(level)) >= 3:
        fallback = EmbeddingFallbackGenerator(tree, level)

    def describe(cid: ClusterId) -> str:
        return tree.cluster(cid).description_text

    def infer(pair: Pair) -> tuple[bool, int | None, str, str | None]:
        """-> (first attempt matched, target index, source, failure reason)"""
        context = [describe(pair[0]), describe(pair[1])]
        first = match_generation(generator.generate(context), tree, level, pair)
        outcome = first
        if not outcome.novelty_ok:  # one retry, then the deterministic fallback
            outcome = match_generation(generator.generate(context), tree, level, pair)
        first_matched = first.matched is not None
        if outcome.novelty_ok:
            return first_matched, outcome.matched.index, "model", None
        if fallback is None:
            return first_matched, None, "fallback", "no fallback available"
        fb = match_generation(fallback.generate(context), tree, level, pair)
        if fb.novelty_ok:
            return first_matched, fb.matched.index, "fallback", None
        return first_matched, None, "fallback", f"fallback produced {fb.raw!r}"

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(infer, pairs))
    else:
        results = [infer(pair) for pair in pairs]

    failures = [
        (pair, reason) for pair, (_, _, _, reason) in zip(pairs, results) if reason is not None
    ]
    if failures:
        listing = "; ".join(f"({p[0].index},{p[1].index}): {r}" for p, r in failures[:10])
        raise GenerationError(f"{len(failures)} pairs could not be filled: {listing}")

    entries: dict[tuple[int, int], TableEntry] = {}
    matched_first = 0
    fallback_count = 0
    for pair, (first_matched, target, source, _) in zip(pairs, results):
        matched_first += first_matched
        fallback_count += source == "fallback"
        entries[(pair[0].index, pair[1].index)] = TableEntry(target=target, source=source)
    m = len(tree.clusters_at(level))
    provenance = TableProvenance(
        generator_id=generator.generator_id,
        level=level,
        num_clusters=m,
        match_rate=matched_first / len(pairs),
        fallback_count=fallback_count,
        tree_hash=tree.content_hash,
    )
    return TransitionTable(level, entries, provenance)


# -- serialization ---------------------------------------------------------


def table_sidecar_path(path) -> str:
    return str(path) + ".provenance.json"


def save_table(table: TransitionTable, path) -> None:
    """TSV rows (c1, c2, target, source) plus a JSON provenance sidecar."""
    with open(path, "w", encoding="utf-8") as fh:
        for (i, j), entry in sorted(table.entries.items()):
            fh.write(f"{i}\t{j}\t{entry.target}\t{entry.source}\n")
    prov = table.provenance
    sidecar = {
        "generator_id": prov.generator_id,
        "level": prov.level,
        "num_clusters": prov.num_clusters,
        "match_rate": prov.match_rate,
        "fallback_count": prov.fallback_count,
        "tree_hash": prov.tree_hash,
        "built_at": prov.built_at,
    }
    with open(table_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_table(path) -> TransitionTable:
    sidecar_path = table_sidecar_path(path)
    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        provenance = TableProvenance(
            generator_id=str(sidecar["generator_id"]),
            level=int(sidecar["level"]),
            num_clusters=int(sidecar["num_clusters"]),
            match_rate=float(sidecar["match_rate"]),
            fallback_count=int(sidecar["fallback_count"]),
            tree_hash=sidecar.get("tree_hash"),
            built_at=float(sidecar.get("built_at", 0.0)),
        )
    except FileNotFoundError:
        raise ConsistencyError(f"missing table provenance sidecar {sidecar_path}") from None
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid table sidecar: {exc}", sidecar_path) from exc
    entries: dict[tuple[int, int], TableEntry] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(
                    f"expected 4 tab-separated fields, got {len(parts)}", str(path), lineno
                )
            try:
                i, j, target = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ParseError(f"non-integer table indices: {exc}", str(path), lineno) from exc
            source = parts[3]
            if source not in ("model", "fallback"):
                raise ParseError(f"unknown source {source!r}", str(path), lineno)
            if (i, j) in entries:
                raise ParseError(f"duplicate pair ({i}, {j})", str(path), lineno)
            entries[(i, j)] = TableEntry(target=target, source=source)
    try:
        return TransitionTable(provenance.level, entries, provenance)
    except ValidationError as exc:
        raise ConsistencyError(f"table file {path} is not a valid total table: {exc}") from exc


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
