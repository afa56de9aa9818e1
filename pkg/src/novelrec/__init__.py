"""Hybrid hierarchical interest-exploration recommender.

High level: a pluggable interest generator proposes a novel cluster for
every ordered pair of recent interest clusters, precomputed offline into a
transition table. Low level: a sequential scorer retrieves items
restricted to the proposed cluster. Plus the offline pipeline (clustering,
transition curation, SFT export, bulk inference) and a closed-loop
simulator for directional evaluation.
"""

from .clustering import (
    Cluster,
    ClusterId,
    ClusterTree,
    assign_item,
    build_cluster_tree,
    describe_cluster,
    load_tree,
    save_tree,
)
from .corpus import (
    Corpus,
    InteractionEvent,
    Item,
    UserHistory,
    filter_high_quality,
    group_histories,
    load_corpus,
    load_events,
    synth_corpus,
    write_corpus,
    write_events,
)
from .curation import (
    CuratedDataset,
    SftRecord,
    TransitionExample,
    curate_balanced,
    curate_random,
    export_sft,
    load_sft,
    load_transitions,
    mine_transitions,
    recover_dataset_from_sft,
    write_sft,
    write_transitions,
)
from .errors import (
    ClusterBuildError,
    ColdStartError,
    ConfigError,
    ConsistencyError,
    ExportError,
    GenerationError,
    NovelrecError,
    ParseError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .evalsim import (
    DistributionStats,
    MetricsReport,
    SimConfig,
    SimResult,
    compute_distribution_stats,
    compute_match_rate,
    compute_recall,
    compute_uci,
    gini_coefficient,
    run_policy_suite,
    run_simulation,
    synth_interaction_log,
)
from .genpolicy import (
    EmbeddingFallbackGenerator,
    GenerationOutcome,
    MemorizingGenerator,
    RemoteEndpointConfig,
    RemoteGenerator,
    TransitionTable,
    bulk_infer,
    embedding_fallback_generate,
    enumerate_context_pairs,
    load_table,
    match_generation,
    remote_generate,
    save_table,
)
from .itempolicy import (
    ReferenceScorer,
    RetrievalResult,
    load_scorer,
    restricted_retrieval,
    save_scorer,
    train_reference_scorer,
    unrestricted_retrieval,
)
from .serving import (
    RecommendRequest,
    RecommendResponse,
    ServiceConfig,
    ServingState,
    create_server,
    load_service_config,
    load_serving_state,
    recommend,
    sample_context,
)
from .text import normalize_text

__version__ = "0.1.0"
