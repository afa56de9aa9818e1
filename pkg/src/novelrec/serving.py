"""Online request path: sample context, look up the novel cluster, retrieve.

The serving bundle (corpus, tree, table, scorer) is immutable once loaded
and shared across request threads; a request mutates nothing, so
concurrent traffic behaves exactly like sequential traffic given the same
seeds. In seeded mode the per-request RNG derives from the request
content, not arrival order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clustering import ClusterId, ClusterTree, load_tree
from .corpus import (
    Corpus,
    InteractionEvent,
    UserHistory,
    group_histories,
    load_corpus,
    load_events,
    DEFAULT_QUALITY_THRESHOLD,
)
from .errors import ColdStartError, ConfigError, ConsistencyError, ValidationError
from .genpolicy import TransitionTable, file_sha256, load_table
from .itempolicy import (
    ReferenceScorer,
    RetrievalResult,
    load_scorer,
    restricted_retrieval,
    unrestricted_retrieval,
)

log = logging.getLogger("novelrec.serving")

DAY_SECONDS = 86400.0
DEFAULT_RESAMPLE_BUDGET = 5


@dataclass
class ServiceConfig:
    corpus_path: str
    clusters_path: str
    table_path: str
    scorer_path: str
    events_path: str | None = None
    context_size: int = 2
    history_window_days: float = 30.0
    quality_threshold: float = DEFAULT_QUALITY_THRESHOLD
    k_default: int = 10
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    seed_mode: str = "seeded"
    seed: int = 0
    resample_budget: int = DEFAULT_RESAMPLE_BUDGET

    def __post_init__(self):
        if self.context_size != 2:
            raise ConfigError(
                "table-backed serving requires context_size == 2 (the table is pair-keyed)"
            )
        if self.history_window_days <= 0:
            raise ConfigError("history_window_days must be positive")
        if self.k_default < 1:
            raise ConfigError("k_default must be >= 1")
        if self.seed_mode not in ("seeded", "entropy"):
            raise ConfigError(f"seed_mode must be 'seeded' or 'entropy', got {self.seed_mode!r}")


def load_service_config(path, env: dict | None = None) -> ServiceConfig:
    """Parse serve.toml; NOVELREC_LISTEN=host:port overrides the address."""
    import os

    env = os.environ if env is None else env
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    base = Path(path).resolve().parent

    def artifact(name, required=True):
        value = data.get("artifacts", {}).get(name)
        if value is None:
            if required:
                raise ConfigError(f"missing artifacts.{name} in {path}")
            return None
        return str(base / value)

    serving = data.get("serving", {})
    listen = env.get("NOVELREC_LISTEN", serving.get("listen", "127.0.0.1:8080"))
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"invalid listen address {listen!r}, expected host:port")
    return ServiceConfig(
        corpus_path=artifact("corpus"),
        clusters_path=artifact("clusters"),
        table_path=artifact("table"),
        scorer_path=artifact("scorer"),
        events_path=artifact("events", required=False),
        context_size=int(serving.get("context_size", 2)),
        history_window_days=float(serving.get("history_window_days", 30.0)),
        quality_threshold=float(serving.get("quality_threshold", DEFAULT_QUALITY_THRESHOLD)),
        k_default=int(serving.get("k_default", 10)),
        listen_host=host,
        listen_port=int(port),
        seed_mode=str(serving.get("seed_mode", "seeded")),
        seed=int(serving.get("seed", 0)),
        resample_budget=int(serving.get("resample_budget", DEFAULT_RESAMPLE_BUDGET)),
    )


@dataclass
class ServingState:
    """Immutable artifact bundle; safe to share across request threads."""

    corpus: Corpus
    tree: ClusterTree
    table: TransitionTable
    scorer: ReferenceScorer
    histories: dict[str, UserHistory] = field(default_factory=dict)
    artifact_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def level(self) -> int:
        return self.table.level


def load_serving_state(config: ServiceConfig) -> ServingState:
    """Load all artifacts and cross-validate their referential integrity."""
    corpus = load_corpus(config.corpus_path)
    tree = load_tree(config.clusters_path)
    table = load_table(config.table_path)
    scorer = load_scorer(config.scorer_path)

    if table.provenance.tree_hash is None:
        raise ConsistencyError("table provenance carries no tree hash; rebuild the table")
    if table.provenance.tree_hash != tree.content_hash:
        raise ConsistencyError(
            f"table was built from tree {table.provenance.tree_hash[:12]}..., "
            f"loaded tree is {tree.content_hash[:12]}..."
        )
    if table.level not in tree.levels:
        raise ConsistencyError(f"table level {table.level} does not exist in the tree")
    m = len(tree.clusters_at(table.level))
    if table.num_clusters != m:
        raise ConsistencyError(
            f"table covers {table.num_clusters} clusters, tree level {table.level} has {m}"
        )
    tree_items = set(tree.item_ids)
    corpus_items = set(corpus.item_ids)
    if tree_items != corpus_items:
        missing = next(iter(tree_items ^ corpus_items))
        raise ConsistencyError(
            f"tree and corpus disagree on the item set (e.g. {missing!r})"
        )
    if set(scorer.popularity) != corpus_items:
        raise ConsistencyError("scorer popularity table does not match the corpus items")

    histories: dict[str, UserHistory] = {}
    if config.events_path:
        events = load_events(config.events_path)
        for ev in events:
            if ev.item_id not in corpus:
                raise ConsistencyError(f"event references unknown item {ev.item_id!r}")
        histories = {h.user_id: h for h in group_histories(events)}

    hashes = {
        "corpus": file_sha256(config.corpus_path),
        "clusters": file_sha256(config.clusters_path),
        "table": file_sha256(config.table_path),
        "scorer": file_sha256(config.scorer_path),
        "tree_content": tree.content_hash,
    }
    return ServingState(corpus, tree, table, scorer, histories, hashes)


# -- request/response -------------------------------------------------------


@dataclass
class RecommendRequest:
    user_id: str | None = None
    history: UserHistory | None = None
    k: int | None = None
    as_of: float | None = None

    def __post_init__(self):
        if self.user_id is None and self.history is None:
            raise ValidationError("request needs a user_id or an inline history")
        if self.k is not None and self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")

    @classmethod
    def from_dict(cls, data: dict) -> "RecommendRequest":
        history = None
        if "history" in data and data["history"] is not None:
            uid = data.get("user_id") or "anonymous"
            events = [
                InteractionEvent(
                    user_id=uid,
                    item_id=str(ev["item_id"]),
                    timestamp=float(ev["timestamp"]),
                    quality=float(ev["quality"]),
                )
                for ev in data["history"]
            ]
            history = UserHistory(uid, events)
        return cls(
            user_id=data.get("user_id"),
            history=history,
            k=int(data["k"]) if data.get("k") is not None else None,
            as_of=float(data["as_of"]) if data.get("as_of") is not None else None,
        )


@dataclass
class RecommendResponse:
    novel_cluster: ClusterId | None
    novel_description: str | None
    items: list[tuple[str, float]]
    context_pair: tuple[ClusterId, ClusterId] | None
    table_source: str | None
    fallback: bool

    def to_dict(self) -> dict:
        return {
            "novel_cluster": (
                None
                if self.novel_cluster is None
                else {
                    "level": self.novel_cluster.level,
                    "index": self.novel_cluster.index,
                    "description": self.novel_description,
                }
            ),
            "items": [{"item_id": i, "score": s} for i, s in self.items],
            "context_pair": (
                None
                if self.context_pair is None
                else [self.context_pair[0].index, self.context_pair[1].index]
            ),
            "table_source": self.table_source,
            "fallback": self.fallback,
        }


def sample_context(
    history: UserHistory,
    tree: ClusterTree,
    level: int,
    k: int = 2,
    window_days: float = 30.0,
    as_of: float | None = None,
    rng: np.random.Generator | None = None,
    resample_budget: int = DEFAULT_RESAMPLE_BUDGET,
) -> tuple[ClusterId, ...]:
    """Sample K history items weighted by quality and map them to clusters.

    Items with stronger positive feedback are proportionally more likely.
    The draw is resampled up to ``resample_budget`` times while it
    collapses to fewer than K distinct clusters; after that a repeated
    cluster (self-pair) is allowed. Ordered oldest first, so the most
    recent cluster is second.
    """
    rng = np.random.default_rng() if rng is None else rng
    if as_of is None:
        if not history.events:
            raise ColdStartError(f"user {history.user_id!r} has no events")
        as_of = history.events[-1].timestamp
    lo = as_of - window_days * DAY_SECONDS
    pool = [ev for ev in history.events if lo < ev.timestamp <= as_of and ev.quality > 0]
    if not pool:
        raise ColdStartError(
            f"user {history.user_id!r} has no quality-weighted events in the window"
        )
    weights = np.array([ev.quality for ev in pool])
    p = weights / weights.sum()
    n = len(pool)
    draw = min(k, n)
    clusters: tuple[ClusterId, ...] = ()
    for _ in range(resample_budget + 1):
        idx = rng.choice(n, size=draw, replace=False, p=p)
        ordered = sorted(idx.tolist())  # pool is already in timestamp order
        picked = [tree.assignment_at(pool[i].item_id, level) for i in ordered]
        while len(picked) < k:
            picked.append(picked[-1])
        clusters = tuple(picked)
        if len(set(clusters)) == k or draw < k:
            break
    return clusters


def _request_rng(config: ServiceConfig, request: RecommendRequest) -> np.random.Generator:
    if config.seed_mode == "entropy":
        return np.random.default_rng()
    digest = hashlib.sha256()
    digest.update(str(config.seed).encode())
    digest.update(json.dumps(
        {
            "user_id": request.user_id,
            "k": request.k,
            "as_of": request.as_of,
            "history": [
                (ev.item_id, ev.timestamp, ev.quality)
                for ev in (request.history.events if request.history else [])
            ],
        },
        sort_keys=True,
    ).encode())
    return np.random.default_rng(int.from_bytes(digest.digest()[:8], "big"))


def recommend(
    request: RecommendRequest,
    config: ServiceConfig,
    state: ServingState,
    rng: np.random.Generator | None = None,
) -> RecommendResponse:
    """Sample a context pair, look up the novel cluster, retrieve items.

    Cold-start users (no quality-weighted history in the window) receive
    unrestricted retrieval flagged via ``fallback=True`` instead of an
    error: serving always answers.
    """
    history = request.history
    if history is None:
        history = state.histories.get(request.user_id)
        if history is None:
            history = UserHistory(request.user_id, [])
    k = request.k if request.k is not None else config.k_default
    as_of = request.as_of
    if as_of is None and history.events:
        as_of = history.events[-1].timestamp
    rng = _request_rng(config, request) if rng is None else rng

    lo = (as_of or 0.0) - config.history_window_days * DAY_SECONDS
    scored_history = [
        ev.item_id
        for ev in history.events
        if (as_of is None or lo < ev.timestamp <= as_of)
        and ev.quality >= config.quality_threshold
    ]
    if not scored_history:
        scored_history = [ev.item_id for ev in history.events]

    try:
        pair = sample_context(
            history,
            state.tree,
            state.level,
            k=config.context_size,
            window_days=config.history_window_days,
            as_of=as_of,
            rng=rng,
            resample_budget=config.resample_budget,
        )
    except ColdStartError:
        result = unrestricted_retrieval(state.scorer, scored_history, state.corpus, k)
        return RecommendResponse(
            novel_cluster=None,
            novel_description=None,
            items=result.ranked,
            context_pair=None,
            table_source=None,
            fallback=True,
        )

    entry = state.table.entry((pair[0], pair[1]))
    novel = ClusterId(state.level, entry.target)
    if novel in pair:
        raise ConsistencyError(f"table produced non-novel target {novel} for {pair}")
    result = restricted_retrieval(state.scorer, state.tree, scored_history, novel, k)
    return RecommendResponse(
        novel_cluster=novel,
        novel_description=state.tree.cluster(novel).description_text,
        items=result.ranked,
        context_pair=(pair[0], pair[1]),
        table_source=entry.source,
        fallback=False,
    )


# -- HTTP surface ------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    server: "RecommendServer"

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/healthz":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        self._send(200, {"status": "ok", "artifacts": self.server.state.artifact_hashes})

    def do_POST(self):
        if self.path != "/recommend":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        start = time.perf_counter()
        try:
            length = int(self.headers.get("Content-Length", 0))
            data = json.loads(self.rfile.read(length) or b"{}")
            request = RecommendRequest.from_dict(data)
        except (ValueError, KeyError, TypeError, ValidationError) as exc:
            self._send(400, {"error": str(exc)})
            return
        try:
            response = recommend(request, self.server.config, self.server.state)
        except Exception as exc:  # pragma: no cover - defensive 500
            log.exception("recommend failed")
            self._send(500, {"error": str(exc)})
            return
        self._send(200, response.to_dict())
        log.info(
            "POST /recommend user=%s k=%s fallback=%s elapsed_ms=%.2f",
            request.user_id,
            request.k,
            response.fallback,
            (time.perf_counter() - start) * 1e3,
        )

    def log_message(self, format, *args):  # default stderr chatter off
        log.debug(format, *args)


class RecommendServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ServiceConfig, state: ServingState):
        self.config = config
        self.state = state
        super().__init__((config.listen_host, config.listen_port), _Handler)


def create_server(config: ServiceConfig, state: ServingState | None = None) -> RecommendServer:
    if state is None:
        state = load_serving_state(config)
    return RecommendServer(config, state)
