"""Command-line entry points for the offline pipeline and the server."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import clustering, corpus as corpus_mod, curation, evalsim, genpolicy, itempolicy, serving
from .errors import ConfigError, NovelrecError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _cmd_synth_corpus(args) -> int:
    c = corpus_mod.synth_corpus(args.items, args.topics, dim=args.dim, seed=args.seed)
    corpus_mod.write_corpus(c, args.out)
    print(f"wrote {len(c)} items (dim={c.dim}) to {args.out}")
    return 0


def _cmd_cluster(args) -> int:
    c = corpus_mod.load_corpus(args.corpus)
    counts = [int(x) for x in args.counts.split(",")]
    tree = clustering.build_cluster_tree(
        c, counts, balance_tolerance=args.tolerance, seed=args.seed
    )
    clustering.save_tree(tree, args.out)
    flagged = f", {len(tree.balance_flags)} balance flags" if tree.balance_flags else ""
    print(f"built tree with counts {tree.counts}{flagged}; wrote {args.out}")
    return 0


def _cmd_curate(args) -> int:
    tree = clustering.load_tree(args.clusters)
    events = corpus_mod.load_events(args.events)
    histories = corpus_mod.group_histories(events)
    raw = curation.mine_transitions(
        histories, tree, level=args.level, quality_threshold=args.quality_threshold
    )
    if args.mode == "balanced":
        dataset = curation.curate_balanced(raw, per_label_cap=args.cap)
    else:
        n = args.n if args.n is not None else sum(ex.support for ex in raw)
        dataset = curation.curate_random(raw, n=n, seed=args.seed)
    records = curation.export_sft(dataset, tree)
    curation.write_sft(records, args.out)
    if args.transitions_out:
        curation.write_transitions(dataset.examples, args.transitions_out)
    print(
        f"mined {len(raw)} distinct transitions; curated {len(dataset.examples)} "
        f"examples over {len(dataset.labels)} labels; wrote {args.out}"
    )
    return 0


def _cmd_bulk_infer(args) -> int:
    tree = clustering.load_tree(args.clusters)
    if args.generator == "stub":
        generator = genpolicy.EmbeddingFallbackGenerator(tree, args.level)
    elif args.generator == "memorize":
        if args.transitions:
            examples = curation.load_transitions(args.transitions, level=args.level)
            dataset = curation.CuratedDataset(examples, planning_level=args.level, per_label_cap=None)
        elif args.sft:
            records = curation.load_sft(args.sft)
            dataset = curation.recover_dataset_from_sft(records, tree, level=args.level)
        else:
            raise ConfigError("--generator memorize needs --sft or --transitions")
        generator = genpolicy.MemorizingGenerator(dataset, tree, level=args.level)
    else:
        config = genpolicy.RemoteEndpointConfig.from_env()
        generator = genpolicy.RemoteGenerator(config)
    table = genpolicy.bulk_infer(generator, tree, args.level, max_workers=args.workers)
    genpolicy.save_table(table, args.out)
    prov = table.provenance
    print(
        f"built {prov.num_clusters}x{prov.num_clusters} table via {prov.generator_id}: "
        f"match_rate={prov.match_rate:.4f}, fallbacks={prov.fallback_count}; wrote {args.out}"
    )
    return 0


def _cmd_train_scorer(args) -> int:
    c = corpus_mod.load_corpus(args.corpus)
    events = corpus_mod.load_events(args.events)
    scorer = itempolicy.train_reference_scorer(
        events, c, smoothing=args.smoothing, quality_threshold=args.quality_threshold
    )
    itempolicy.save_scorer(scorer, args.out)
    print(
        f"trained scorer on {len(events)} events "
        f"({len(scorer.transitions)} transition contexts); wrote {args.out}"
    )
    return 0


def _cmd_serve(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    config = serving.load_service_config(args.config)
    state = serving.load_serving_state(config)
    server = serving.create_server(config, state)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (POST /recommend, GET /healthz)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_eval(args) -> int:
    table = genpolicy.load_table(args.table)
    held_out = curation.load_transitions(args.test, level=table.level)
    stats = evalsim.compute_distribution_stats(table)
    report = evalsim.MetricsReport(
        recall_test=evalsim.compute_recall(table, held_out),
        label_histogram=stats.label_histogram,
        gini=stats.gini,
        max_share=stats.max_share,
    )
    evalsim.save_report(report, args.out)
    print(
        f"recall_test={report.recall_test:.4f} gini={report.gini:.4f} "
        f"max_share={report.max_share:.4f}; wrote {args.out}"
    )
    if args.plots:
        Path(args.plots).mkdir(parents=True, exist_ok=True)
        plot_path = Path(args.plots) / "label_distribution.png"
        evalsim.render_distribution_plot(stats, plot_path)
        print(f"wrote {plot_path}")
    return 0


def _load_sim_config(path) -> evalsim.SimConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh).get("simulation", {})
    try:
        return evalsim.SimConfig(
            num_users=int(data["num_users"]),
            num_items=int(data["num_items"]),
            num_clusters=int(data["num_clusters"]),
            days=int(data["days"]),
            seed=int(data.get("seed", 0)),
            affinity_concentration=float(data.get("affinity_concentration", 1.0)),
            discovery_gain=float(data.get("discovery_gain", 0.3)),
            slate_size=int(data.get("slate_size", 8)),
            explore_fraction=float(data.get("explore_fraction", 0.25)),
            dim=int(data.get("dim", 16)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing simulation.{exc.args[0]} in {path}") from exc


def _cmd_simulate(args) -> int:
    base = _load_sim_config(args.config)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        if p not in evalsim.POLICIES:
            raise ConfigError(f"unknown policy {p!r}, expected one of {evalsim.POLICIES}")
    seeds = [base.seed + i for i in range(args.seeds)]
    results = evalsim.run_policy_suite(base, policies, seeds)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary: dict[str, dict] = {}
    for policy, runs in results.items():
        for run in runs:
            with open(outdir / f"{policy}_seed{run.seed}.json", "w", encoding="utf-8") as fh:
                json.dump(run.to_dict(), fh, indent=2)
        summary[policy] = {
            "mean_uci": {
                str(n): float(np.mean([r.final.uci.get(n, 0) for r in runs]))
                for n in base.uci_n_values
            },
            "mean_novel_impression_ratio": float(
                np.mean([r.final.novel_impression_ratio for r in runs])
            ),
            "mean_positive_feedback_rate": float(
                np.mean([r.final.positive_feedback_rate for r in runs])
            ),
            "novelty_violations": int(sum(r.novelty_violations for r in runs)),
        }
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    if args.plots:
        evalsim.render_sim_series(results, outdir / "daily_metrics.png")
    for policy, agg in summary.items():
        print(
            f"{policy}: uci={agg['mean_uci']} novel={agg['mean_novel_impression_ratio']:.4f} "
            f"positive={agg['mean_positive_feedback_rate']:.4f}"
        )
    print(f"wrote {outdir}/summary.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="novelrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate a synthetic item corpus")
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_corpus)

    p = sub.add_parser("cluster", help="build the hierarchical interest clustering")
    p.add_argument("--corpus", required=True)
    p.add_argument("--counts", default="4,16,64,256")
    p.add_argument("--tolerance", type=float, default=clustering.DEFAULT_BALANCE_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("curate", help="mine transitions and export an SFT dataset")
    p.add_argument("--events", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--level", type=int, default=curation.DEFAULT_PLANNING_LEVEL)
    p.add_argument("--mode", choices=("balanced", "random"), default="balanced")
    p.add_argument("--cap", type=int, default=curation.DEFAULT_PER_LABEL_CAP)
    p.add_argument("--n", type=int, default=None, help="sample size for --mode random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality-threshold", type=float, default=corpus_mod.DEFAULT_QUALITY_THRESHOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--transitions-out", default=None)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("bulk-infer", help="fill the transition table over all pairs")
    p.add_argument("--clusters", required=True)
    p.add_argument("--level", type=int, default=curation.DEFAULT_PLANNING_LEVEL)
    p.add_argument("--generator", choices=("stub", "memorize", "remote"), default="stub")
    p.add_argument("--sft", default=None, help="sft.jsonl for --generator memorize")
    p.add_argument("--transitions", default=None, help="transitions.jsonl alternative to --sft")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bulk_infer)

    p = sub.add_parser("train-scorer", help="fit the reference sequence scorer")
    p.add_argument("--events", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--quality-threshold", type=float, default=corpus_mod.DEFAULT_QUALITY_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_scorer)

    p = sub.add_parser("serve", help="run the recommendation HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("eval", help="evaluate a transition table against held-out transitions")
    p.add_argument("--table", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("simulate", help="run the closed-loop policy simulator")
    p.add_argument("--config", required=True)
    p.add_argument("--policies", default="exploration,exploitation")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NovelrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
