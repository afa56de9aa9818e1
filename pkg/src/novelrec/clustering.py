"""Traffic-balanced hierarchical interest clustering.

Builds a 4-level tree of item clusters where each level partitions the
corpus, levels nest (children refine parents), and every cluster's summed
traffic stays within a tolerance band around the level mean. Each cluster
carries a keyword description that is unique at its level after
normalization, which is what lets generated text be mapped back to a
cluster id by exact matching.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, Item
from .errors import ClusterBuildError, ConsistencyError, ParseError, ValidationError
from .text import normalize_text

NUM_LEVELS = 4
DEFAULT_COUNTS = (4, 16, 64, 256)
DEFAULT_BALANCE_TOLERANCE = 0.2
DEFAULT_MAX_KEYWORDS = 3
_MAX_ROUNDS = 50


@dataclass(frozen=True, order=True)
class ClusterId:
    level: int
    index: int

    def __repr__(self) -> str:
        return f"c{self.level}.{self.index}"


@dataclass
class Cluster:
    """One interest cluster: members, traffic mass, centroid, keywords."""

    id: ClusterId
    description: tuple[str, ...]
    members: tuple[str, ...]
    traffic: float
    centroid: np.ndarray

    def __post_init__(self):
        if not self.members:
            raise ValidationError(f"cluster {self.id} has no members")
        if not self.description:
            raise ValidationError(f"cluster {self.id} has an empty description")
        self.members = tuple(sorted(self.members))
        self.centroid = np.asarray(self.centroid, dtype=np.float64)

    @property
    def description_text(self) -> str:
        return ", ".join(self.description)

    @property
    def normalized_description(self) -> str:
        return normalize_text(self.description_text)


class ClusterTree:
    """Nested multi-level partition of the corpus into interest clusters."""

    def __init__(
        self,
        levels: dict[int, list[Cluster]],
        parent_of: dict[ClusterId, ClusterId],
        dim: int,
        balance_flags: Sequence[str] = (),
        validate: bool = True,
    ):
        self.levels = {lvl: list(cs) for lvl, cs in sorted(levels.items())}
        self.parent_of = dict(parent_of)
        self.dim = dim
        self.balance_flags = tuple(balance_flags)
        self._children: dict[ClusterId, list[ClusterId]] = {}
        for child, parent in self.parent_of.items():
            self._children.setdefault(parent, []).append(child)
        for kids in self._children.values():
            kids.sort()
        # assignment: item_id -> cluster index per level, in level order
        self._assignment: dict[str, dict[int, int]] = {}
        for lvl, clusters in self.levels.items():
            for cluster in clusters:
                for item_id in cluster.members:
                    self._assignment.setdefault(item_id, {})[lvl] = cluster.id.index
        self._desc_index: dict[int, dict[str, ClusterId]] = {}
        self._centroid_cache: dict[int, np.ndarray] = {}
        self._hash: str | None = None
        if validate:
            self.validate()

    # -- structure -----------------------------------------------------

    @property
    def level_numbers(self) -> tuple[int, ...]:
        return tuple(self.levels)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(self.levels[lvl]) for lvl in self.levels)

    def clusters_at(self, level: int) -> list[Cluster]:
        try:
            return self.levels[level]
        except KeyError:
            raise KeyError(f"tree has no level {level}") from None

    def cluster(self, cid: ClusterId) -> Cluster:
        clusters = self.clusters_at(cid.level)
        if not 0 <= cid.index < len(clusters):
            raise KeyError(f"no cluster {cid} at level {cid.level}")
        return clusters[cid.index]

    def children_of(self, cid: ClusterId) -> list[ClusterId]:
        return list(self._children.get(cid, []))

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._assignment

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._assignment))

    def assignments(self, item_id: str) -> dict[int, ClusterId]:
        try:
            per_level = self._assignment[item_id]
        except KeyError:
            raise KeyError(f"item {item_id!r} is not in the tree") from None
        return {lvl: ClusterId(lvl, idx) for lvl, idx in per_level.items()}

    def assignment_at(self, item_id: str, level: int) -> ClusterId:
        return ClusterId(level, self._assignment[item_id][level])

    # -- derived views ---------------------------------------------------

    def centroids(self, level: int) -> np.ndarray:
        if level not in self._centroid_cache:
            self._centroid_cache[level] = np.array(
                [c.centroid for c in self.clusters_at(level)]
            )
        return self._centroid_cache[level]

    def description_index(self, level: int) -> dict[str, ClusterId]:
        """Normalized description -> cluster id; injective by invariant."""
        if level not in self._desc_index:
            index: dict[str, ClusterId] = {}
            for cluster in self.clusters_at(level):
                norm = cluster.normalized_description
                if norm in index:
                    raise ValidationError(
                        f"duplicate normalized description {norm!r} at level {level}"
                    )
                index[norm] = cluster.id
            self._desc_index[level] = index
        return self._desc_index[level]

    @property
    def content_hash(self) -> str:
        if self._hash is None:
            payload = json.dumps(_tree_payload(self), sort_keys=True, separators=(",", ":"))
            self._hash = hashlib.sha256(payload.encode("utf-8")).hexdigest()
        return self._hash

    # -- invariants ------------------------------------------------------

    def validate(self) -> None:
        levels = list(self.levels)
        if not levels or levels != list(range(levels[0], levels[0] + len(levels))):
            raise ValidationError("tree levels must be contiguous")
        prev_count = 0
        item_set: set[str] | None = None
        for lvl in levels:
            clusters = self.levels[lvl]
            if len(clusters) < prev_count:
                raise ValidationError(
                    f"level {lvl} has {len(clusters)} clusters, fewer than its parent level"
                )
            prev_count = len(clusters)
            for i, cluster in enumerate(clusters):
                if cluster.id != ClusterId(lvl, i):
                    raise ValidationError(f"cluster at position {i} has id {cluster.id}")
            seen: set[str] = set()
            total = 0
            for cluster in clusters:
                for item_id in cluster.members:
                    if item_id in seen:
                        raise ValidationError(
                            f"item {item_id!r} in two clusters at level {lvl}"
                        )
                    seen.add(item_id)
                total += len(cluster.members)
            if item_set is None:
                item_set = seen
            elif seen != item_set:
                raise ValidationError(f"level {lvl} does not partition the item set")
            self.description_index(lvl)
        for lvl in levels[1:]:
            for cluster in self.levels[lvl]:
                parent = self.parent_of.get(cluster.id)
                if parent is None:
                    raise ValidationError(f"cluster {cluster.id} has no parent")
                pm = set(self.cluster(parent).members)
                if not set(cluster.members) <= pm:
                    raise ValidationError(
                        f"cluster {cluster.id} members are not nested in {parent}"
                    )


# -- description ---------------------------------------------------------


def keyword_weights(corpus: Corpus, member_ids: Iterable[str]) -> dict[str, float]:
    """Traffic-weighted keyword frequency over a member set."""
    weights: dict[str, float] = {}
    for item_id in member_ids:
        item = corpus.item(item_id)
        for kw in dict.fromkeys(item.keywords):  # count once per item
            weights[kw] = weights.get(kw, 0.0) + item.traffic_weight
    return weights


def ranked_keywords(corpus: Corpus, member_ids: Iterable[str]) -> list[str]:
    weights = keyword_weights(corpus, member_ids)
    return sorted(weights, key=lambda kw: (-weights[kw], kw))


def describe_cluster(corpus: Corpus, cluster: Cluster, max_keywords: int = DEFAULT_MAX_KEYWORDS) -> list[str]:
    """Top keywords by traffic-weighted frequency, ties lexicographic."""
    if max_keywords < 1:
        raise ValueError("max_keywords must be positive")
    return ranked_keywords(corpus, cluster.members)[:max_keywords]


def _unique_descriptions(
    corpus: Corpus, clusters: list[Cluster], max_keywords: int
) -> None:
    """Assign descriptions, extending colliding ones until unique at the level."""
    seen: set[str] = set()
    for cluster in clusters:
        ranked = ranked_keywords(corpus, cluster.members)
        desc = ranked[:max_keywords]
        norm = normalize_text(" ".join(desc))
        pos = len(desc)
        while norm in seen and pos < len(ranked):
            desc.append(ranked[pos])
            pos += 1
            norm = normalize_text(" ".join(desc))
        if norm in seen:
            desc.append(f"group {cluster.id.index}")
            norm = normalize_text(" ".join(desc))
        seen.add(norm)
        cluster.description = tuple(desc)


# -- balanced k-means ------------------------------------------------------


def _kmeanspp_init(X: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    total = w.sum()
    if total > 0:
        first = int(rng.choice(n, p=w / total))
    else:
        first = int(rng.integers(n))
    centers = [X[first]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        probs = d2 * np.maximum(w, 1e-12)
        s = probs.sum()
        if s <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=probs / s))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign_capacitated(
    d2: np.ndarray, w: np.ndarray, cap: float
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-feasible assignment, heaviest items first.

    Items spill to the next-nearest centroid with room; when no centroid
    has room the least-loaded one (in distance preference order) takes the
    overflow.
    """
    n, k = d2.shape
    prefs = np.argsort(d2, axis=1, kind="stable")
    order = np.argsort(-w, kind="stable")
    labels = np.full(n, -1, dtype=int)
    load = np.zeros(k)
    for i in order:
        placed = False
        row = prefs[i]
        for c in row:
            if load[c] + w[i] <= cap:
                labels[i] = c
                load[c] += w[i]
                placed = True
                break
        if not placed:
            c = row[int(np.argmin(load[row]))]
            labels[i] = c
            load[c] += w[i]
    return labels, load


def _fill_empty_clusters(
    d2: np.ndarray, w: np.ndarray, labels: np.ndarray, load: np.ndarray
) -> None:
    k = load.shape[0]
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] > 0:
            continue
        donors = np.flatnonzero(counts[labels] > 1)
        i = donors[int(np.argmin(d2[donors, c]))]
        src = labels[i]
        labels[i] = c
        load[src] -= w[i]
        load[c] += w[i]
        counts[src] -= 1
        counts[c] += 1


def _repair_balance(
    d2: np.ndarray,
    w: np.ndarray,
    labels: np.ndarray,
    load: np.ndarray,
    floor: float,
    cap: float,
) -> None:
    """Move items between sibling clusters until loads sit inside [floor, cap].

    Moves never push a donor below the floor or a recipient above the cap,
    so the total violation shrinks monotonically; loops are bounded.
    """
    n, k = d2.shape
    counts = np.bincount(labels, minlength=k)
    for _ in range(4 * n + 8):
        over = np.flatnonzero(load > cap)
        under = np.flatnonzero(load < floor)
        if over.size == 0 and under.size == 0:
            return
        moved = False
        if over.size:
            donor = int(over[np.argmax(load[over])])
            members = np.flatnonzero(labels == donor)
            best = None
            for i in members:
                if counts[donor] <= 1 or load[donor] - w[i] < floor:
                    continue
                for c in range(k):
                    if c == donor or load[c] + w[i] > cap:
                        continue
                    key = (d2[i, c] - d2[i, donor], i, c)
                    if best is None or key < best:
                        best = key
                        move = (i, c)
            if best is not None:
                i, c = move
                labels[i] = c
                load[donor] -= w[i]
                load[c] += w[i]
                counts[donor] -= 1
                counts[c] += 1
                moved = True
        if not moved and under.size:
            recipient = int(under[np.argmin(load[under])])
            best = None
            for i in range(n):
                donor = labels[i]
                if donor == recipient or counts[donor] <= 1:
                    continue
                if load[donor] - w[i] < floor or load[recipient] + w[i] > cap:
                    continue
                key = (d2[i, recipient] - d2[i, donor], i)
                if best is None or key < best:
                    best = key
                    move = (i, recipient)
            if best is not None:
                i, recipient = move
                donor = labels[i]
                labels[i] = recipient
                load[donor] -= w[i]
                load[recipient] += w[i]
                counts[donor] -= 1
                counts[recipient] += 1
                moved = True
        if not moved:
            return


def _balanced_kmeans(
    X: np.ndarray,
    w: np.ndarray,
    k: int,
    floor: float,
    cap: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Traffic-constrained k-means over one item group; returns labels."""
    n = X.shape[0]
    if k == 1:
        return np.zeros(n, dtype=int)
    centers = _kmeanspp_init(X, w, k, rng)
    labels = np.full(n, -1, dtype=int)
    for _ in range(_MAX_ROUNDS):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels, load = _assign_capacitated(d2, w, cap)
        _fill_empty_clusters(d2, w, new_labels, load)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            wc = w[mask]
            if wc.sum() > 0:
                centers[c] = (X[mask] * wc[:, None]).sum(axis=0) / wc.sum()
            else:
                centers[c] = X[mask].mean(axis=0)
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    load = np.zeros(k)
    np.add.at(load, labels, w)
    _repair_balance(d2, w, labels, load, floor, cap)
    return labels


def _allocate_children(
    traffics: np.ndarray, sizes: np.ndarray, m: int, total: float
) -> np.ndarray:
    """Split m child clusters across parents proportionally to traffic."""
    p = traffics * m / total if total > 0 else np.full(len(traffics), m / len(traffics))
    alloc = np.clip(np.round(p).astype(int), 1, sizes)
    while alloc.sum() < m:
        room = np.flatnonzero(alloc < sizes)
        if room.size == 0:
            raise ClusterBuildError(f"cannot place {m} clusters over {sizes.sum()} items")
        # grow the parent whose clusters are currently the most overloaded
        pick = room[int(np.argmax(traffics[room] / alloc[room]))]
        alloc[pick] += 1
    while alloc.sum() > m:
        shrink = np.flatnonzero(alloc > 1)
        if shrink.size == 0:
            raise ClusterBuildError(f"cannot reduce allocation to {m} clusters")
        pick = shrink[int(np.argmin(traffics[shrink] / alloc[shrink]))]
        alloc[pick] -= 1
    return alloc


def build_cluster_tree(
    corpus: Corpus,
    counts: Sequence[int] = DEFAULT_COUNTS,
    balance_tolerance: float = DEFAULT_BALANCE_TOLERANCE,
    seed: int = 0,
    max_keywords: int = DEFAULT_MAX_KEYWORDS,
) -> ClusterTree:
    """Build the traffic-balanced nested cluster tree.

    Each level runs a traffic-constrained balanced k-means inside every
    parent cluster (the whole corpus at level 1), targeting the band
    (1 +/- balance_tolerance) * (total_traffic / M_l). Residual violations
    that cannot be repaired, e.g. a single item heavier than the cap, are
    recorded in ``tree.balance_flags`` rather than failing the build.
    """
    counts = [int(m) for m in counts]
    if len(counts) != NUM_LEVELS:
        raise ClusterBuildError(f"expected {NUM_LEVELS} level counts, got {len(counts)}")
    if any(m < 1 for m in counts):
        raise ClusterBuildError(f"cluster counts must be positive: {counts}")
    for lvl in range(1, NUM_LEVELS):
        if counts[lvl] < counts[lvl - 1]:
            raise ClusterBuildError(
                f"level counts must be non-decreasing, level {lvl + 1} has "
                f"{counts[lvl]} < {counts[lvl - 1]}"
            )
    if counts[-1] > len(corpus):
        raise ClusterBuildError(
            f"level {NUM_LEVELS} asks for {counts[-1]} clusters over {len(corpus)} items"
        )
    if balance_tolerance <= 0:
        raise ClusterBuildError("balance_tolerance must be positive")

    ids = list(corpus.item_ids)
    X = corpus.embeddings(ids)
    w = corpus.traffic_weights(ids)
    total = float(w.sum())
    eps = 1e-9 * max(total, 1.0)

    flags: list[str] = []
    levels: dict[int, list[Cluster]] = {}
    parent_of: dict[ClusterId, ClusterId] = {}
    # groups: per parent (level order), the item row indices it owns
    groups: list[np.ndarray] = [np.arange(len(ids))]
    for lvl in range(1, NUM_LEVELS + 1):
        m = counts[lvl - 1]
        mean = total / m
        cap = (1 + balance_tolerance) * mean + eps
        floor = max((1 - balance_tolerance) * mean - eps, 0.0)
        heavy = w > cap
        if heavy.any():
            for row in np.flatnonzero(heavy):
                flags.append(
                    f"level {lvl}: item {ids[row]!r} traffic {w[row]:.4g} exceeds "
                    f"cap {cap:.4g}"
                )
        traffics = np.array([w[g].sum() for g in groups])
        sizes = np.array([len(g) for g in groups])
        alloc = _allocate_children(traffics, sizes, m, total)
        clusters: list[Cluster] = []
        child_groups: list[np.ndarray] = []
        for parent_idx, g in enumerate(groups):
            rng = np.random.default_rng([seed, lvl, parent_idx])
            labels = _balanced_kmeans(X[g], w[g], int(alloc[parent_idx]), floor, cap, rng)
            for local in range(int(alloc[parent_idx])):
                rows = g[labels == local]
                cid = ClusterId(lvl, len(clusters))
                wc = w[rows]
                centroid = (
                    (X[rows] * wc[:, None]).sum(axis=0) / wc.sum()
                    if wc.sum() > 0
                    else X[rows].mean(axis=0)
                )
                clusters.append(
                    Cluster(
                        id=cid,
                        description=("pending",),
                        members=tuple(ids[r] for r in rows),
                        traffic=float(wc.sum()),
                        centroid=centroid,
                    )
                )
                if lvl > 1:
                    parent_of[cid] = ClusterId(lvl - 1, parent_idx)
                child_groups.append(rows)
        for cluster in clusters:
            if not (floor - eps <= cluster.traffic <= cap + eps):
                flags.append(
                    f"level {lvl}: cluster {cluster.id.index} traffic "
                    f"{cluster.traffic:.4g} outside [{floor:.4g}, {cap:.4g}]"
                )
        _unique_descriptions(corpus, clusters, max_keywords)
        levels[lvl] = clusters
        groups = child_groups
    return ClusterTree(levels, parent_of, corpus.dim, balance_flags=flags)


# -- assignment of new items ---------------------------------------------


def assign_item(tree: ClusterTree, item: Item) -> dict[int, ClusterId]:
    """Cluster id per level; nearest-centroid descent for unseen items."""
    if not tree.levels:
        raise ValidationError("empty tree")
    if item.item_id in tree:
        return tree.assignments(item.item_id)
    emb = np.asarray(item.embedding, dtype=np.float64)
    if emb.shape != (tree.dim,):
        raise ValidationError(
            f"item embedding has dimension {emb.shape[0] if emb.ndim == 1 else emb.shape}, "
            f"tree expects {tree.dim}"
        )
    result: dict[int, ClusterId] = {}
    first = tree.level_numbers[0]
    candidates = [c.id for c in tree.clusters_at(first)]
    for lvl in tree.level_numbers:
        cents = np.array([tree.cluster(c).centroid for c in candidates])
        d2 = ((cents - emb) ** 2).sum(axis=1)
        chosen = candidates[int(np.argmin(d2))]  # argmin takes the lowest index on ties
        result[lvl] = chosen
        candidates = tree.children_of(chosen) or None
        if candidates is None and lvl != tree.level_numbers[-1]:
            raise ValidationError(f"cluster {chosen} has no children")
    return result


# -- serialization ---------------------------------------------------------


def _tree_payload(tree: ClusterTree) -> dict:
    return {
        "dim": tree.dim,
        "levels": [
            {
                "level": lvl,
                "clusters": [
                    {
                        "index": c.id.index,
                        "description": list(c.description),
                        "members": list(c.members),
                        "traffic": float(c.traffic),
                        "centroid": [float(x) for x in c.centroid],
                    }
                    for c in clusters
                ],
            }
            for lvl, clusters in tree.levels.items()
        ],
        "parent_of": {
            str(lvl): [
                tree.parent_of[c.id].index for c in tree.levels[lvl]
            ]
            for lvl in tree.levels
            if lvl != tree.level_numbers[0]
        },
        "balance_flags": list(tree.balance_flags),
    }


def save_tree(tree: ClusterTree, path) -> None:
    payload = _tree_payload(tree)
    payload["content_hash"] = tree.content_hash
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_tree(path) -> ClusterTree:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid cluster tree file: {exc}", str(path)) from exc
    try:
        levels: dict[int, list[Cluster]] = {}
        for entry in payload["levels"]:
            lvl = int(entry["level"])
            levels[lvl] = [
                Cluster(
                    id=ClusterId(lvl, int(c["index"])),
                    description=tuple(c["description"]),
                    members=tuple(c["members"]),
                    traffic=float(c["traffic"]),
                    centroid=np.asarray(c["centroid"], dtype=np.float64),
                )
                for c in entry["clusters"]
            ]
        parent_of: dict[ClusterId, ClusterId] = {}
        for lvl_str, parents in payload.get("parent_of", {}).items():
            lvl = int(lvl_str)
            for child_idx, parent_idx in enumerate(parents):
                parent_of[ClusterId(lvl, child_idx)] = ClusterId(lvl - 1, int(parent_idx))
        tree = ClusterTree(
            levels,
            parent_of,
            dim=int(payload["dim"]),
            balance_flags=payload.get("balance_flags", ()),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid cluster tree file: {exc}", str(path)) from exc
    stored = payload.get("content_hash")
    if stored is not None and stored != tree.content_hash:
        raise ConsistencyError(
            f"cluster tree content hash mismatch in {path}: stored {stored[:12]}..., "
            f"recomputed {tree.content_hash[:12]}..."
        )
    return tree
