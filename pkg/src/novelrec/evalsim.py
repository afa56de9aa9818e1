"""Evaluation metrics and a closed-loop user simulator.

The simulator is a desk-scale stand-in for live experiments: synthetic
users carry latent cluster affinities, consume recommended items with
affinity-driven probability, and their logged consumption retrains the
exploitation scorer daily, closing the feedback loop. Policy comparisons
are directional, never quantitative reproductions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .clustering import ClusterId, ClusterTree, build_cluster_tree
from .corpus import Corpus, InteractionEvent, UserHistory, synth_corpus
from .curation import TransitionExample
from .errors import ColdStartError, ConfigError, ValidationError
from .genpolicy import (
    EmbeddingFallbackGenerator,
    InterestGenerator,
    TransitionTable,
    bulk_infer,
    match_generation,
)
from .itempolicy import ReferenceScorer, restricted_retrieval
from .serving import DAY_SECONDS, sample_context

POLICIES = ("exploration", "exploitation", "bandit")
DEFAULT_UCI_N = (2, 5, 10)
DEFAULT_BUCKET_EDGES = (1, 2, 4, 8, 16, 32, 64, 128, 256)
_EPOCH = 1_600_000_000.0


# -- metric containers -------------------------------------------------------


@dataclass
class DistributionStats:
    label_histogram: dict[str, float]
    gini: float
    max_share: float


@dataclass
class MetricsReport:
    """Evaluation outputs; fields are None where a metric does not apply."""

    match_rate: float | None = None
    recall_finetune: float | None = None
    recall_test: float | None = None
    uci: dict[int, int] = field(default_factory=dict)
    novel_impression_ratio: float | None = None
    positive_feedback_rate: float | None = None
    label_histogram: dict[str, float] = field(default_factory=dict)
    gini: float | None = None
    max_share: float | None = None

    def to_dict(self) -> dict:
        return {
            "match_rate": self.match_rate,
            "recall_finetune": self.recall_finetune,
            "recall_test": self.recall_test,
            "uci": {str(n): c for n, c in self.uci.items()},
            "novel_impression_ratio": self.novel_impression_ratio,
            "positive_feedback_rate": self.positive_feedback_rate,
            "label_histogram": self.label_histogram,
            "gini": self.gini,
            "max_share": self.max_share,
        }


@dataclass
class DailyMetrics:
    day: int
    impressions: int
    consumptions: int
    positive_feedback_rate: float
    novel_impression_ratio: float
    uci: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "day": self.day,
            "impressions": self.impressions,
            "consumptions": self.consumptions,
            "positive_feedback_rate": self.positive_feedback_rate,
            "novel_impression_ratio": self.novel_impression_ratio,
            "uci": {str(n): c for n, c in self.uci.items()},
        }


# -- offline metrics ---------------------------------------------------------


def compute_match_rate(
    generator: InterestGenerator,
    tree: ClusterTree,
    level: int,
    probe_pairs: Sequence[tuple[ClusterId, ClusterId]],
) -> float:
    """Fraction of generations that exact-match some cluster description."""
    if not probe_pairs:
        raise ValueError("probe_pairs must be non-empty")
    matched = 0
    for c1, c2 in probe_pairs:
        raw = generator.generate(
            [tree.cluster(c1).description_text, tree.cluster(c2).description_text]
        )
        if match_generation(raw, tree, level).matched is not None:
            matched += 1
    return matched / len(probe_pairs)


def compute_recall(
    predictor,
    held_out: Sequence[TransitionExample],
    tree: ClusterTree | None = None,
    level: int | None = None,
) -> float:
    """Support-weighted fraction of transitions the predictor reproduces.

    ``predictor`` is a TransitionTable or an InterestGenerator; generators
    need the tree to map their text back to a cluster id.
    """
    if not held_out:
        raise ValueError("held_out must be non-empty")
    if level is None:
        level = held_out[0].label.level
    hits = 0
    total = 0
    for ex in held_out:
        if isinstance(predictor, TransitionTable):
            predicted = predictor.lookup(ex.pair_key)
        else:
            if tree is None:
                raise ValueError("a generator predictor needs the cluster tree")
            raw = predictor.generate(
                [tree.cluster(ex.context[0]).description_text,
                 tree.cluster(ex.context[1]).description_text]
            )
            predicted = match_generation(raw, tree, level).matched
        total += ex.support
        if predicted == ex.label:
            hits += ex.support
    return hits / total


def compute_uci(
    events: Iterable[InteractionEvent],
    tree: ClusterTree,
    level: int,
    n_values: Sequence[int] = DEFAULT_UCI_N,
    window_days: float = 7.0,
    as_of: float | None = None,
) -> dict[int, int]:
    """Users who consumed items from at least N distinct clusters.

    Consumption means quality > 0 (impressions do not count); the window
    is (as_of - window, as_of]. The reading is cumulative: a user counted
    at N is also counted at every smaller N.
    """
    events = [ev for ev in events if ev.quality > 0]
    if as_of is None:
        as_of = max((ev.timestamp for ev in events), default=0.0)
    lo = as_of - window_days * DAY_SECONDS
    per_user: dict[str, set[int]] = {}
    for ev in events:
        if lo < ev.timestamp <= as_of:
            c = tree.assignment_at(ev.item_id, level).index
            per_user.setdefault(ev.user_id, set()).add(c)
    counts = sorted(len(cs) for cs in per_user.values())
    out: dict[int, int] = {}
    for n in n_values:
        out[int(n)] = sum(1 for c in counts if c >= n)
    return out


def gini_coefficient(frequencies: Sequence[float]) -> float:
    """Gini of a frequency vector; 0 iff all entries are equal."""
    x = np.sort(np.asarray(frequencies, dtype=np.float64))
    n = x.size
    total = x.sum()
    if n == 0 or total <= 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float((2 * (ranks * x).sum() - (n + 1) * total) / (n * total))


def _bucket_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f">={lo}"
    if hi - lo == 1:
        return str(lo)
    return f"{lo}-{hi - 1}"


def compute_distribution_stats(
    source,
    num_labels: int | None = None,
    bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
) -> DistributionStats:
    """Label-frequency histogram, Gini, and max single-label share.

    ``source`` is a TransitionTable (targets counted over all pairs) or a
    sequence of cluster ids / indices, with ``num_labels`` giving the label
    space size so zero-frequency labels are represented.
    """
    if isinstance(source, TransitionTable):
        freqs = source.target_counts()
    else:
        indices = [c.index if isinstance(c, ClusterId) else int(c) for c in source]
        if not indices and num_labels is None:
            raise ValueError("empty source needs an explicit num_labels")
        size = num_labels if num_labels is not None else max(indices) + 1
        freqs = np.bincount(indices, minlength=size)
    total = int(freqs.sum())
    if total == 0:
        raise ValueError("cannot compute distribution stats over zero outputs")
    edges = [0, *bucket_edges, None]
    histogram: dict[str, float] = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi is None:
            mask = freqs >= lo
        else:
            mask = (freqs >= lo) & (freqs < hi)
        histogram[_bucket_label(lo, hi)] = float(mask.sum() / freqs.size)
    return DistributionStats(
        label_histogram=histogram,
        gini=gini_coefficient(freqs),
        max_share=float(freqs.max() / total),
    )


# -- synthetic interaction logs ----------------------------------------------


def synth_interaction_log(
    corpus: Corpus,
    tree: ClusterTree,
    level: int,
    num_users: int,
    days: int,
    events_per_day: int = 6,
    seed: int = 0,
    zipf_exponent: float = 1.0,
    jump_prob: float = 0.15,
    low_quality_frac: float = 0.2,
) -> list[UserHistory]:
    """Organic consumption log: users wander their interests, sometimes jump.

    Cluster popularity is Zipf-distributed so mined transitions carry the
    skew real logs have; jumps to popularity-sampled clusters create the
    novel transitions curation feeds on.
    """
    rng = np.random.default_rng(seed)
    m = len(tree.clusters_at(level))
    perm = rng.permutation(m)
    pop = np.zeros(m)
    pop[perm] = (np.arange(1, m + 1)) ** (-zipf_exponent)
    pop /= pop.sum()
    members = [np.array(c.members) for c in tree.clusters_at(level)]
    histories = []
    width = len(str(max(num_users - 1, 1)))
    steps = days * events_per_day
    for u in range(num_users):
        n_active = int(rng.integers(2, 5))
        actives = rng.choice(m, size=min(n_active, m), replace=False, p=pop)
        taste = rng.dirichlet(np.ones(len(actives)))
        jumps = rng.random(steps) < jump_prob
        jump_clusters = rng.choice(m, size=steps, p=pop)
        stay_clusters = actives[rng.choice(len(actives), size=steps, p=taste)]
        low = rng.random(steps) < low_quality_frac
        q_low = rng.uniform(0.0, 0.45, size=steps)
        q_high = rng.uniform(0.55, 0.95, size=steps)
        member_picks = rng.random(steps)
        uid = f"user{u:0{width}d}"
        events = []
        for s in range(steps):
            c = int(jump_clusters[s] if jumps[s] else stay_clusters[s])
            pool = members[c]
            item = pool[int(member_picks[s] * len(pool))]
            q = float(q_low[s] if low[s] else q_high[s])
            ts = _EPOCH + (s // events_per_day) * DAY_SECONDS + (s % events_per_day) * 600.0 + u * 0.001
            events.append(InteractionEvent(uid, str(item), ts, q))
        histories.append(UserHistory(uid, events))
    return histories


# -- closed-loop simulator ----------------------------------------------------


@dataclass
class SimConfig:
    num_users: int
    num_items: int
    num_clusters: int
    days: int
    seed: int = 0
    affinity_concentration: float = 1.0
    discovery_gain: float = 0.3
    slate_size: int = 8
    policy: str = "exploration"
    explore_fraction: float = 0.25
    dim: int = 16
    uci_n_values: tuple[int, ...] = DEFAULT_UCI_N

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.num_users < 0:
            raise ConfigError("num_users must be >= 0")
        for name in ("num_items", "num_clusters", "slate_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.days < 7:
            raise ConfigError("days must be >= 7 (the UCI window)")
        if not 0 < self.explore_fraction < 1:
            raise ConfigError("explore_fraction must be in (0, 1)")
        if self.discovery_gain < 0:
            raise ConfigError("discovery_gain must be >= 0")


@dataclass
class SimResult:
    policy: str
    seed: int
    daily: list[DailyMetrics]
    final: MetricsReport
    novelty_violations: int

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "daily": [d.to_dict() for d in self.daily],
            "final": self.final.to_dict(),
            "novelty_violations": self.novelty_violations,
        }


def sim_tree_counts(num_items: int, num_clusters: int) -> tuple[int, int, int, int]:
    """Level counts putting the planning clusters at level 2."""
    m2 = num_clusters
    m1 = max(1, m2 // 4)
    m3 = min(num_items, m2 * 4)
    m4 = min(num_items, m3 * 4)
    if not m1 <= m2 <= m3 <= m4 <= num_items:
        raise ConfigError(
            f"cannot derive 4 nested level counts for {num_clusters} clusters "
            f"over {num_items} items"
        )
    return (m1, m2, m3, m4)


class _SimUser:
    __slots__ = (
        "uid", "affinity", "consumed_clusters", "daily_clusters", "events",
        "last_hq", "recent_hq", "arm_n", "arm_s",
    )

    def __init__(self, uid: str, affinity: np.ndarray, m: int):
        self.uid = uid
        self.affinity = affinity
        self.consumed_clusters: set[int] = set()
        self.daily_clusters: dict[int, set[int]] = {}
        self.events: list[InteractionEvent] = []
        self.last_hq: str | None = None
        self.recent_hq: list[str] = []  # last few distinct hq items, newest last
        self.arm_n = np.zeros(m)
        self.arm_s = np.zeros(m)


class _SimWorld:
    """Shared world for one seed: corpus, tree, table, users."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.corpus = synth_corpus(
            config.num_items, num_topics=config.num_clusters, dim=config.dim, seed=config.seed
        )
        self.tree = build_cluster_tree(
            self.corpus, sim_tree_counts(config.num_items, config.num_clusters), seed=config.seed
        )
        self.level = 2
        self.m = len(self.tree.clusters_at(self.level))
        if self.m < 3:
            raise ConfigError("simulation needs at least 3 planning clusters")
        self.table = bulk_infer(
            EmbeddingFallbackGenerator(self.tree, self.level), self.tree, self.level
        )
        ids = list(self.corpus.item_ids)
        self.item_ids = np.array(ids)
        self.item_cluster = np.array(
            [self.tree.assignment_at(i, self.level).index for i in ids]
        )
        # per-cluster members with traffic-proportional pick probabilities
        self.cluster_members: list[np.ndarray] = []
        self.cluster_member_p: list[np.ndarray] = []
        for cluster in self.tree.clusters_at(self.level):
            members = np.array(cluster.members)
            w = self.corpus.traffic_weights(cluster.members)
            self.cluster_members.append(members)
            self.cluster_member_p.append(w / w.sum() if w.sum() > 0 else None)
        cents = self.tree.centroids(self.level)
        norms = np.linalg.norm(cents, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        unit = cents / norms
        self.cluster_sim = np.clip(unit @ unit.T, 0.0, 1.0)
        self.users = self._build_users()

    def _build_users(self) -> list[_SimUser]:
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, 1])
        perm = rng.permutation(self.m)
        pop = np.zeros(self.m)
        pop[perm] = (np.arange(1, self.m + 1)) ** (-0.8)
        pop /= pop.sum()
        users = []
        width = len(str(max(cfg.num_users - 1, 1)))
        for u in range(cfg.num_users):
            n_active = int(rng.integers(2, 4))
            actives = rng.choice(self.m, size=min(n_active, self.m), replace=False, p=pop)
            affinity = rng.uniform(0.005, 0.035, size=self.m)
            # Dormant interests correlate with centroid similarity: a few
            # clusters near the user's active ones are latent interests
            # that land well when surfaced, the rest is genuine disinterest.
            sims = self.cluster_sim[actives].max(axis=0)
            sims[actives] = -np.inf
            near = np.argsort(-sims)[: min(8, self.m - len(actives))]
            if near.size:
                n_latent = min(int(rng.integers(2, 5)), near.size)
                latent = rng.choice(near, size=n_latent, replace=False)
                affinity[latent] = rng.uniform(0.25, 0.45, size=n_latent)
            spread = rng.dirichlet(np.full(len(actives), cfg.affinity_concentration))
            affinity[actives] = 0.55 + 0.3 * spread / max(spread.max(), 1e-9)
            users.append(_SimUser(f"simuser{u:0{width}d}", affinity, self.m))
        return users


def _top_items(scores: np.ndarray, k: int) -> np.ndarray:
    k = min(k, scores.size)
    idx = np.argpartition(-scores, k - 1)[:k]
    return idx[np.lexsort((idx, -scores[idx]))]


class _PolicyRun:
    def __init__(self, world: _SimWorld, policy: str, rng: np.random.Generator):
        self.world = world
        self.policy = policy
        self.rng = rng
        self.transitions: dict[str, dict[str, int]] = {}
        self.novelty_violations = 0
        self.total_explore_impressions = 0

    def _record_consumption(self, user: _SimUser, item_id: str, quality: float, ts: float, day: int):
        cfg = self.world.config
        user.events.append(InteractionEvent(user.uid, item_id, ts, quality))
        c = int(self.world.item_cluster[np.searchsorted(self.world.item_ids, item_id)])
        if c not in user.consumed_clusters:
            user.affinity[c] = min(user.affinity[c] + cfg.discovery_gain, 0.9)
            user.consumed_clusters.add(c)
        user.daily_clusters.setdefault(day, set()).add(c)
        if quality >= 0.5:
            if user.last_hq is not None:
                row = self.transitions.setdefault(user.last_hq, {})
                row[item_id] = row.get(item_id, 0) + 1
            user.last_hq = item_id
            if item_id in user.recent_hq:
                user.recent_hq.remove(item_id)
            user.recent_hq.append(item_id)
            del user.recent_hq[:-3]

    def bootstrap(self, rng: np.random.Generator):
        """Day 0: seed every user with enough history to personalize on."""
        for user in self.world.users:
            actives = np.flatnonzero(user.affinity >= 0.5)
            if actives.size == 0:
                actives = np.array([int(np.argmax(user.affinity))])
            for slot in range(20):
                c = int(actives[int(rng.integers(actives.size))])
                # popular items draw the consumption, as on a real platform
                item = str(
                    rng.choice(self.world.cluster_members[c], p=self.world.cluster_member_p[c])
                )
                q = float(np.clip(user.affinity[c] + rng.normal(0, 0.05), 0.5, 0.95))
                ts = _EPOCH + slot * 600.0
                self._record_consumption(user, item, q, ts, day=0)

    def _scorer(self) -> ReferenceScorer:
        popularity = {
            item.item_id: float(item.traffic_weight) for item in self.world.corpus
        }
        return ReferenceScorer(popularity, self.transitions, smoothing=0.05)

    def _explore_cluster(self, user: _SimUser, scorer: ReferenceScorer, day: int):
        """Pick the novel cluster for the explore slots, or None."""
        world = self.world
        if self.policy == "exploration":
            as_of = _EPOCH + day * DAY_SECONDS
            try:
                pair = sample_context(
                    UserHistory(user.uid, user.events),
                    world.tree,
                    world.level,
                    k=2,
                    window_days=30.0,
                    as_of=as_of,
                    rng=self.rng,
                )
            except ColdStartError:
                return None
            novel = world.table.lookup((pair[0], pair[1]))
            if novel in pair:
                self.novelty_violations += 1
            return novel
        if self.policy == "bandit":
            t = self.total_explore_impressions + 2
            ucb = (user.arm_s + 0.5) / (user.arm_n + 1.0) + np.sqrt(
                2.0 * math.log(t) / (user.arm_n + 1.0)
            )
            return ClusterId(world.level, int(np.argmax(ucb)))
        return None

    def run(self, days: int) -> SimResult:
        world = self.world
        cfg = world.config
        totals = {"impressions": 0, "consumptions": 0, "novel": 0}
        slate_cluster_counts = np.zeros(world.m, dtype=np.int64)
        daily: list[DailyMetrics] = []
        n_explore = max(1, round(cfg.slate_size * cfg.explore_fraction))
        k_exploit = cfg.slate_size - n_explore
        for day in range(1, days + 1):
            scorer = self._scorer()
            day_imp = 0
            day_cons = 0
            day_novel = 0
            for user in world.users:
                history = [user.last_hq] if user.last_hq else []
                scores = scorer.score_all(history)
                if self.policy == "exploitation":
                    slate_idx = _top_items(scores, cfg.slate_size)
                    slate = [str(world.item_ids[i]) for i in slate_idx]
                    explore_set: set[str] = set()
                else:
                    novel = self._explore_cluster(user, scorer, day)
                    exploit_rank = [
                        str(world.item_ids[i])
                        for i in _top_items(scores, cfg.slate_size + n_explore)
                    ]
                    if novel is None:
                        slate = exploit_rank[: cfg.slate_size]
                        explore_set = set()
                    else:
                        explored = restricted_retrieval(
                            scorer, world.tree, history, novel, n_explore
                        ).item_ids
                        slate = exploit_rank[:k_exploit]
                        seen = set(slate)
                        for item in explored:
                            if item not in seen:
                                slate.append(item)
                                seen.add(item)
                        for item in exploit_rank[k_exploit:]:
                            if len(slate) >= cfg.slate_size:
                                break
                            if item not in seen:
                                slate.append(item)
                                seen.add(item)
                        explore_set = set(explored)
                draws = self.rng.random(len(slate))
                noise = self.rng.normal(0.0, 0.1, size=len(slate))
                base_ts = _EPOCH + day * DAY_SECONDS
                for slot, item in enumerate(slate):
                    row = int(np.searchsorted(world.item_ids, item))
                    c = int(world.item_cluster[row])
                    slate_cluster_counts[c] += 1
                    is_novel = c not in user.consumed_clusters
                    day_imp += 1
                    day_novel += is_novel
                    if item in explore_set:
                        self.total_explore_impressions += 1
                    p = user.affinity[c]
                    consumed = draws[slot] < p
                    if self.policy == "bandit" and item in explore_set:
                        user.arm_n[c] += 1
                        user.arm_s[c] += consumed
                    if consumed:
                        day_cons += 1
                        quality = float(np.clip(p + noise[slot], 0.05, 0.98))
                        self._record_consumption(
                            user, item, quality, base_ts + slot * 60.0, day
                        )
            totals["impressions"] += day_imp
            totals["consumptions"] += day_cons
            totals["novel"] += day_novel
            uci = self._uci(day)
            daily.append(
                DailyMetrics(
                    day=day,
                    impressions=day_imp,
                    consumptions=day_cons,
                    positive_feedback_rate=day_cons / day_imp if day_imp else 0.0,
                    novel_impression_ratio=day_novel / day_imp if day_imp else 0.0,
                    uci=uci,
                )
            )
        if totals["impressions"]:
            stats = compute_distribution_stats(
                np.repeat(np.arange(world.m), slate_cluster_counts), num_labels=world.m
            )
            histogram, gini, max_share = stats.label_histogram, stats.gini, stats.max_share
        else:
            histogram, gini, max_share = {}, None, None
        final = MetricsReport(
            uci=daily[-1].uci if daily else {int(n): 0 for n in cfg.uci_n_values},
            novel_impression_ratio=(
                totals["novel"] / totals["impressions"] if totals["impressions"] else 0.0
            ),
            positive_feedback_rate=(
                totals["consumptions"] / totals["impressions"] if totals["impressions"] else 0.0
            ),
            label_histogram=histogram,
            gini=gini,
            max_share=max_share,
        )
        return SimResult(self.policy, cfg.seed, daily, final, self.novelty_violations)

    def _uci(self, day: int) -> dict[int, int]:
        cfg = self.world.config
        lo = max(day - 6, 0)
        counts = []
        for user in self.world.users:
            distinct: set[int] = set()
            for d in range(lo, day + 1):
                distinct |= user.daily_clusters.get(d, set())
            counts.append(len(distinct))
        return {int(n): sum(1 for c in counts if c >= n) for n in cfg.uci_n_values}


def run_simulation(config: SimConfig, world: "_SimWorld | None" = None) -> SimResult:
    """Run one policy for ``config.days`` simulated days.

    Deterministic under ``config.seed``; runs with the same seed and
    different policies share the same world and bootstrap history, so
    policy comparisons are paired.
    """
    if config.num_users == 0:
        return SimResult(
            config.policy,
            config.seed,
            [],
            MetricsReport(uci={int(n): 0 for n in config.uci_n_values},
                          novel_impression_ratio=0.0, positive_feedback_rate=0.0),
            0,
        )
    if world is None:
        world = _SimWorld(config)
    run = _PolicyRun(world, config.policy, np.random.default_rng([config.seed, 2, POLICIES.index(config.policy)]))
    run.bootstrap(np.random.default_rng([config.seed, 3]))
    return run.run(config.days)


def run_policy_suite(
    base: SimConfig, policies: Sequence[str], seeds: Sequence[int]
) -> dict[str, list[SimResult]]:
    """Paired runs: every policy sees the same worlds across the seeds."""
    from dataclasses import replace

    results: dict[str, list[SimResult]] = {p: [] for p in policies}
    for seed in seeds:
        world = _SimWorld(replace(base, seed=seed))
        for policy in policies:
            cfg = replace(base, seed=seed, policy=policy)
            results[policy].append(run_simulation(cfg, world=world))
    return results


def save_report(report: MetricsReport, path, daily: Sequence[DailyMetrics] = ()) -> None:
    payload = report.to_dict()
    if daily:
        payload["daily"] = [d.to_dict() for d in daily]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# -- plots --------------------------------------------------------------------


def render_distribution_plot(stats: DistributionStats, path, title: str = "Label distribution") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = list(stats.label_histogram)
    shares = [stats.label_histogram[k] for k in labels]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(labels)), shares, color="#4477aa")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_xlabel("label frequency")
    ax.set_ylabel("share of labels")
    ax.set_title(f"{title} (gini={stats.gini:.3f}, max share={stats.max_share:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sim_series(results: dict[str, list[SimResult]], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    metrics = [
        ("novel_impression_ratio", lambda d: d.novel_impression_ratio),
        ("positive_feedback_rate", lambda d: d.positive_feedback_rate),
        ("uci@5", lambda d: d.uci.get(5, 0)),
    ]
    for ax, (name, get) in zip(axes, metrics):
        for policy, runs in results.items():
            days = [d.day for d in runs[0].daily]
            series = np.mean([[get(d) for d in run.daily] for run in runs], axis=0)
            ax.plot(days, series, label=policy)
        ax.set_title(name)
        ax.set_xlabel("day")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
