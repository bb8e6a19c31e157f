"""Command line: enumerate-metapaths, train, gradcheck, synth-data, dump-weights.

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 bad data,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .bilevel import FitResult, Problem, Strategy, fit
from .config import ExperimentConfig, build_strict, load_config, parse_config
from .errors import (
    CompositionError,
    ConfigError,
    InsufficientNegativesError,
    InsufficientPositivesError,
    ModeError,
    NumericError,
    OracleRefusedError,
    ParseError,
    SchemaError,
    SelarError,
    SplitError,
    StateError,
    UndefinedMetricError,
)
from .experiment import SYNTH_AUX, link_problem, node_problem
from .gradcheck import GradcheckConfig, run_all
from .hetgraph import (
    DEFAULT_PLANTED,
    HeteroGraph,
    MetaPathSpec,
    PairLabelSet,
    enumerate_metapaths,
    load_kg_dataset,
    load_typed_graph,
    metapath_labels,
    synth_hetero,
    write_typed_graph,
)
from .metrics import fmt, loss_grid, weight_curve_dump

log = logging.getLogger("selar")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
FAILED_MARKER = "FAILED"
_DATA_ERRORS = (ParseError, SchemaError, CompositionError, OracleRefusedError, InsufficientPositivesError,
                InsufficientNegativesError, SplitError, UndefinedMetricError, StateError)


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ModeError)):
        return EXIT_CONFIG
    if isinstance(exc, _DATA_ERRORS) or isinstance(exc, OSError):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_CHECK


# ---------------------------------------------------------------- datasets


def load_graph(cfg: ExperimentConfig, seed: int):
    """(graph, primary) where primary is a PairLabelSet (link) or a label vector (node)."""
    ds = cfg.dataset
    if ds.source == "synth":
        return synth_hetero(ds.n_per_type, ds.n_edge_types, DEFAULT_PLANTED, ds.signal_strength, seed,
                            avg_degree=ds.avg_degree, feature_dim=ds.feature_dim, n_primary=ds.n_primary)
    if ds.source == "kg":
        return load_kg_dataset(ds.interactions, ds.triples, add_inverse=ds.add_inverse)
    return load_typed_graph(ds.nodes, ds.edges, ds.labels)


def metapath_specs(cfg: ExperimentConfig, graph: HeteroGraph) -> list[MetaPathSpec]:
    names = cfg.metapaths
    if names is None:
        if cfg.dataset.source != "synth":
            raise ConfigError("metapaths must be listed for kg and typed datasets (see enumerate-metapaths)")
        names = [list(p) for p in SYNTH_AUX]
    return [MetaPathSpec.from_names(graph, p) for p in names]


def build_problem(cfg: ExperimentConfig, seed: int, hint: bool) -> Problem:
    graph, primary = load_graph(cfg, seed)
    specs = metapath_specs(cfg, graph)
    split_spec = cfg.split.spec(seed)
    if isinstance(primary, PairLabelSet):
        edge_type = graph.edge_type_id("user-item") if cfg.dataset.source == "kg" else None
        return link_problem(graph, primary, specs, split_spec=split_spec, aux_pos=cfg.aux_pos,
                            primary_edge_type=edge_type, label_seed=seed, hint=hint)
    return node_problem(graph, primary, specs, split_spec=split_spec, aux_pos=cfg.aux_pos,
                        label_seed=seed, hint=hint)


# ---------------------------------------------------------------- output helpers


def write_history(path: Path, result: FitResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "strategy", "train_loss", "val_metric", "test_metric"])
        for row in result.history:
            w.writerow([row["iteration"], row["strategy"], fmt(row["train_loss"]), fmt(row["val_metric"]),
                        fmt(row["test_metric"])])


def write_summary(path: Path, runs: list[dict], encoders: Sequence[str], strategies: Sequence[str]) -> None:
    """Rows = encoder, columns = strategy, cells = mean test metric over seeds."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encoder", *strategies])
        for arch in encoders:
            cells = []
            for s in strategies:
                vals = [r["test_metric"] for r in runs if r["encoder"] == arch and r["strategy"] == s]
                cells.append(fmt(float(np.mean(vals))) if vals else "")
            w.writerow([arch, *cells])


def _split_theta(arrays: dict[str, np.ndarray]):
    theta = {k: v for k, v in arrays.items() if k.startswith("theta.")}
    theta_h = {k: v for k, v in arrays.items() if k.startswith("theta_h.")}
    return theta, theta_h


# ---------------------------------------------------------------- commands


def cmd_enumerate(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    graph, _ = load_graph(cfg, args.seed if args.seed is not None else cfg.seeds[0])
    for spec, count in enumerate_metapaths(graph, args.min_len, args.max_len):
        print(f"{count}\t{len(spec)}\t{spec.name(graph)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.strategy is not None:
        cfg.strategies = [Strategy.parse(args.strategy).value]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    try:
        runs = _train_all(cfg, out)
    except BaseException as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    write_summary(out / "summary.csv", runs, [a.upper() for a in cfg.encoders], cfg.strategies)
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["encoder", "strategy", "seed", "best_val", "test_metric"])
        for r in runs:
            w.writerow([r["encoder"], r["strategy"], r["seed"], fmt(r["best_val"]), fmt(r["test_metric"])])
    print((out / "summary.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _train_all(cfg: ExperimentConfig, out: Path) -> list[dict]:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    need_hint = any(Strategy.parse(s).uses_hint for s in cfg.strategies)
    runs = []
    for seed in cfg.seeds:
        problem = build_problem(cfg, seed, need_hint)
        for arch in cfg.encoders:
            encoder = cfg.encoder_config(arch)
            for name in cfg.strategies:
                train_cfg = cfg.train_config(name, seed)
                run_dir = out / encoder.arch / name / f"seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                snapshot = cfg.to_dict()
                snapshot.update(seeds=[seed], strategies=[name], encoders=[encoder.arch])
                (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2), encoding="utf-8")
                log.info("training %s %s seed=%d", encoder.arch, name, seed)
                result = fit(problem, encoder, train_cfg)
                write_history(run_dir / "metrics.csv", result)
                ad.save_checkpoint(run_dir / "best.ckpt", result.best.arrays())
                ad.save_checkpoint(run_dir / "final.ckpt", result.state.arrays())
                theta, theta_h = _split_theta(result.best.arrays())
                if theta:
                    n_aux = problem.n_aux if train_cfg.strategy.uses_aux else 0
                    (run_dir / "weights.csv").write_text(weight_curve_dump(theta, n_aux, theta_h=theta_h or None),
                                                         encoding="utf-8")
                runs.append({"encoder": encoder.arch, "strategy": name, "seed": seed,
                             "best_val": result.best_val, "test_metric": result.test_at_best})
    return runs


def cmd_gradcheck(args) -> int:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        data = data.get("gradcheck", data) if isinstance(data, dict) else data
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    config = build_strict(GradcheckConfig, data, "gradcheck")
    results = run_all(config, corrupt=args.corrupt_gradient)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<28} rel_err={r.error:.3e}  tol={r.tol:.0e}  {r.detail}".rstrip())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    if cfg.dataset.source != "synth":
        raise ConfigError("synth-data needs dataset.source = 'synth'")
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    graph, primary = load_graph(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_typed_graph(graph, out / "nodes.txt", out / "edges.txt")
    primary.write(out / "primary.txt")
    aux = [metapath_labels(graph, spec, t, cfg.aux_pos, seed)
           for t, spec in enumerate(metapath_specs(cfg, graph), start=1)]
    if aux:
        lines = [line for labels in aux for line in labels.to_lines()]
        (out / "aux.txt").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"wrote {graph.num_nodes} nodes, {graph.num_edges()} edges, {len(primary)} primary pairs to {out}")
    return EXIT_OK


def cmd_dump_weights(args) -> int:
    arrays = ad.load_checkpoint(args.checkpoint)
    theta, theta_h = _split_theta(arrays)
    if not theta:
        raise StateError(f"{args.checkpoint} holds no weighting network")
    width = theta["theta.W1"].shape[0]
    n_aux = args.n_aux if args.n_aux is not None else width - (3 if theta_h else 2)
    grid = loss_grid(*args.grid)
    text = weight_curve_dump(theta, n_aux, grid, theta_h or None)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selar", description="Meta-learned auxiliary meta-path training for GNNs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override the seed list with one seed")
        p.add_argument("--strategy", help="override the strategy list with one strategy")
        return p

    p = common(sub.add_parser("enumerate-metapaths", help="list composable meta-paths by positive-pair count"))
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=4)
    p.set_defaults(func=cmd_enumerate)

    p = common(sub.add_parser("train", help="run every (encoder, strategy, seed) combination"), out_required=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("gradcheck", help="finite-difference checks on tiny instances"))
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("synth-data", help="write a synthetic dataset to text files"), out_required=True)
    p.set_defaults(func=cmd_synth_data)

    p = common(sub.add_parser("dump-weights", help="weighting-function table from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-aux", type=int, help="number of auxiliary tasks (inferred from the net width by default)")
    p.add_argument("--grid", type=float, nargs=3, default=(0.0, 5.0, 0.05), metavar=("START", "STOP", "STEP"))
    p.set_defaults(func=cmd_dump_weights)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SelarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # unexpected: keep the traceback
        traceback.print_exc()
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
