"""Command-line interface for profiling, threshold search, campaign runs,
and deviation statistics. Exit codes: 0 success, 1 config error, 2 runtime
error."""

from __future__ import annotations

import argparse
import json
import sys

from . import campaign as camp
from .campaign import ConfigError
from .thresholds import AlphaAssignment, SearchConfig, binary_search_global_alpha, greedy_gemmwise_search, profile_all
from .workload import build_model, generate_dataset


def _ctx(config_path: str):
    config = camp.load_config(config_path)
    model = build_model(config.model)
    return config, model


def cmd_gemms(args) -> int:
    _, model = _ctx(args.config)
    print(f"{'gemm_id':<28} {'m':>5} {'k':>5} {'n':>5} {'macs':>9}")
    for gid, m, k, n in model.node_table():
        print(f"{gid:<28} {m:>5} {k:>5} {n:>5} {m * k * n:>9}")
    return 0


def cmd_profile(args) -> int:
    config, model = _ctx(args.config)
    dataset = generate_dataset(model, config.n_samples, config.data_seed)
    profiles = {
        ber: profile_all(model, dataset.inputs, ber, args.trials, config.base_seed)
        for ber in config.bers
        if ber > 0
    }
    with open(args.out, "w") as f:
        json.dump(camp.profiles_to_dict(profiles), f, indent=1, sort_keys=True)
    print(f"wrote deviation profiles for {len(profiles)} BER points to {args.out}")
    return 0


def cmd_search(args) -> int:
    config, model = _ctx(args.config)
    if config.profiles is None:
        raise ConfigError("search needs abft.profiles in the config")
    dataset = generate_dataset(model, config.n_samples, config.data_seed)
    scfg = config.search
    scfg = SearchConfig(
        accuracy_budget=args.budget if args.budget is not None else scfg.accuracy_budget,
        trials_per_eval=scfg.trials_per_eval,
        ber=args.ber if args.ber is not None else scfg.ber,
        resolution=scfg.resolution,
        order="ascending_size" if args.order == "ascending" else "inorder",
        strategy=scfg.strategy,
    )
    if scfg.ber not in config.profiles:
        raise ConfigError(f"no profiles for search ber={scfg.ber!r}")
    profiles = config.profiles[scfg.ber]
    if args.mode == "global":
        alpha, feasible = binary_search_global_alpha(
            model, dataset, scfg, profiles, config.base_seed
        )
        assignment = AlphaAssignment.uniform([n.gemm_id for n in model.nodes], alpha)
        print(f"global alpha = {alpha:.6f} (feasible={feasible})")
    else:
        assignment = greedy_gemmwise_search(model, dataset, scfg, profiles, config.base_seed)
        print(f"gemm-wise alphas searched over {len(assignment.alphas)} GEMMs")
    assignment.save(args.out)
    print(f"wrote alpha assignment to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = camp.load_config(args.config)
    if args.strategy:
        config.strategies = args.strategy
    if args.ber:
        config.bers = [float(b) for b in args.ber]
    if args.trials is not None:
        config.trials = args.trials
    if args.out:
        config.output_path = args.out
    # re-validate after overrides
    config.__post_init__()
    rows = camp.run_campaign(config, workers=args.workers)
    camp.emit(rows, config.output_format, config.output_path)
    print(f"wrote {len(rows)} result rows to {config.output_path}")
    return 0


def cmd_stats(args) -> int:
    config, model = _ctx(args.config)
    dataset = generate_dataset(model, config.n_samples, config.data_seed)
    selector = args.gemms.split(",") if args.gemms else "largest_per_layer"
    report = camp.compute_stats(
        model,
        dataset.inputs,
        ber=args.ber if args.ber is not None else config.bers[0],
        trials=args.trials,
        seed=config.base_seed,
        gemm_selector=selector,
    )
    payload = report.to_dict()
    if args.kind != "all":
        keep = {"msd": "msd", "rcsd": "rcsd"}.get(args.kind)
        if keep:
            payload["histograms"] = {
                gid: {keep: h[keep]} for gid, h in payload["histograms"].items()
            }
        else:  # multierror
            payload.pop("histograms")
    with open(args.out, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    print(f"wrote stats to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftgemm", description="Checksum-protected GEMM fault-injection campaigns"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gemms", help="list the workload's GEMM nodes")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gemms)

    p = sub.add_parser("profile", help="emit per-GEMM deviation profiles")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("search", help="search approximation thresholds")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["global", "gemmwise"], default="global")
    p.add_argument("--order", choices=["inorder", "ascending"], default="ascending")
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--ber", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("run", help="run a fault-injection campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", nargs="+", default=None)
    p.add_argument("--ber", nargs="+", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("stats", help="deviation distribution statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=["msd", "rcsd", "multierror", "all"], default="all")
    p.add_argument("--ber", type=float, default=None)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--gemms", default=None, help="comma-separated gemm ids")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
