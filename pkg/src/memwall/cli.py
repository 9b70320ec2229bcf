"""Command-line entry point: ``memwall <command>``.

Commands:
    plan      Generate an execution plan for a graph and memory budget (or sweep budgets).
    codec     Compress an activation tensor, verify the round trip or bench the corpus.
    simulate  Run federated rounds over a simulated fleet.
    gen       Write fleet, memory-trace or graph fixtures.
    predict   Replay a memory trace through the budget predictor.

Exit codes: 0 success, 1 invalid input, 2 infeasible budget, 3 internal contract violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any, NoReturn, TextIO

import numpy as np
import yaml

from memwall.codec import (
    ActivationTensor,
    CodecConfig,
    CodecModel,
    CompressedTensor,
    bench_corpus,
    compress_tensor,
    decompress_tensor,
    synthetic_activation,
    verify_bounds,
)
from memwall.config import VARIANTS, SimulationConfig, load_config, resolve_seed
from memwall.exceptions import ConfigError, InfeasibleBudgetError, MemwallError
from memwall.fleet import dump_fleet, generate_fleet
from memwall.graph import ComputationGraph, dump_graph, read_graph
from memwall.graphgen import random_dag, training_graph
from memwall.models import DeviceProfile, SwapKind
from memwall.orchestrator import (
    compare_variants,
    run_simulation,
    wins_by_variant,
    write_rounds_csv,
    write_summary_csv,
)
from memwall.planner import Strategy, generate_plan
from memwall.predictor import PredictorConfig, RegenConfig, replay_trace
from memwall.traces import (
    GIB,
    dump_trace,
    read_trace,
    session_lengths,
    spike_trace,
    synthetic_trace,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "budget_fraction",
    "budget",
    "est_latency",
    "peak_memory",
    "evictions",
    "compressions",
)
_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([KMGT]i?B?|B)?\s*$", re.IGNORECASE)
_UNITS = {"": 1, "B": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30, "T": 1 << 40}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1, leaving 2 for infeasible budgets."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_size(text: str) -> int:
    """Bytes from ``"1048576"``, ``"512MiB"``, ``"1.5G"`` and the like (binary units)."""
    match = _SIZE.match(text)
    if match is None:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    number, unit = match.groups()
    return int(float(number) * _UNITS[(unit or "")[:1].upper()])


def parse_shape(text: str) -> tuple[int, int, int]:
    """``C x H x W`` such as ``"16x32x32"``."""
    try:
        dims = tuple(int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a CxHxW shape: {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"not a CxHxW shape: {text!r}")
    return dims[0], dims[1], dims[2]


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _load_device(path: Path | None) -> DeviceProfile:
    if path is None:
        return DeviceProfile.reference()
    data = yaml.safe_load(path.read_text())
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: device profile must be a mapping"])
    return DeviceProfile.from_dict(data)


def _codec_config(args: argparse.Namespace, base: CodecConfig | None = None) -> CodecConfig:
    base = base or CodecConfig()
    overrides = {
        name: getattr(args, name)
        for name in ("bits", "block", "tau", "epsilon", "radius")
        if getattr(args, name, None) is not None
    }
    return replace(base, **overrides)


def _predictor_config(
    args: argparse.Namespace, base: PredictorConfig | None = None
) -> PredictorConfig:
    base = base or PredictorConfig()
    regen_overrides = {
        name: getattr(args, name)
        for name in ("tp1", "tp2", "ws_adj")
        if getattr(args, name, None) is not None
    }
    overrides: dict[str, Any] = {
        name: getattr(args, name)
        for name in ("window_s", "slide_s", "sample_s")
        if getattr(args, name, None) is not None
    }
    regen: RegenConfig = replace(base.regen, **regen_overrides)
    return replace(base, regen=regen, **overrides)


# plan


def _sweep(
    graph: ComputationGraph,
    device: DeviceProfile,
    model: CodecModel,
    strategy: Strategy,
    steps: int,
    out: Path,
) -> None:
    peak = graph.untreated_peak()
    rows = []
    for index in range(steps):
        fraction = 1.0 - 0.6 * index / max(steps - 1, 1)
        budget = int(peak * fraction)
        try:
            plan = generate_plan(graph, device, budget, model, strategy)
        except InfeasibleBudgetError as exc:
            logger.warning("budget %d infeasible: %s", budget, exc.message)
            continue
        counts = plan.action_counts()
        rows.append(
            {
                "budget_fraction": round(fraction, 6),
                "budget": budget,
                "est_latency": plan.est_latency,
                "peak_memory": plan.peak_memory,
                "evictions": counts["EVICT"],
                "compressions": counts["COMPRESS"],
            }
        )
    _write_rows(out, SWEEP_COLUMNS, rows)
    print(f"sweep: {len(rows)} of {steps} budgets feasible -> {out}")


def cmd_plan(args: argparse.Namespace) -> int:
    graph = read_graph(args.graph)
    device = _load_device(args.device)
    model = CodecModel.calibrate(seed=args.seed) if args.calibrate else CodecModel.default()
    strategy = Strategy(args.strategy)
    if args.sweep is not None:
        _sweep(graph, device, model, strategy, args.sweep_steps, args.sweep)
        return 0
    if args.budget is None:
        raise ConfigError(["plan needs --budget or --sweep"])
    plan = generate_plan(graph, device, args.budget, model, strategy)
    _emit(plan.to_yaml(), args.out)
    counts = " ".join(f"{kind.lower()}={n}" for kind, n in plan.action_counts().items())
    print(
        f"est_latency={plan.est_latency:.6f}s peak_memory={plan.peak_memory} "
        f"budget={plan.budget} {counts}",
        file=sys.stderr if args.out is None else sys.stdout,
    )
    return 0


# codec


def cmd_codec(args: argparse.Namespace) -> int:
    config = _codec_config(args)
    if args.bench is not None:
        rows = bench_corpus(config, seed=args.seed)
        columns = tuple(rows[0].to_dict()) if rows else ()
        _write_rows(args.bench, columns, [row.to_dict() for row in rows])
        print(f"bench: {len(rows)} tensors -> {args.bench}")
        return 0

    if args.decode is not None:
        restored = decompress_tensor(args.decode.read_bytes())
        if args.out is None:
            raise ConfigError(["--decode needs --out for the restored .npy file"])
        np.save(args.out, restored.data)
        print(f"decoded shape={'x'.join(map(str, restored.data.shape))} -> {args.out}")
        return 0

    if args.synthetic is not None:
        tensor = synthetic_activation(args.synthetic, seed=args.seed).tensor
    elif args.tensor is not None:
        tensor = ActivationTensor(np.load(args.tensor))
    else:
        raise ConfigError(["codec needs a tensor file, --synthetic, --decode or --bench"])

    compressed = compress_tensor(tensor, config)
    stream = compressed.to_bytes()
    if args.out is not None:
        args.out.write_bytes(stream)
    restored = decompress_tensor(stream)
    if args.verify:
        max_error = verify_bounds(tensor, CompressedTensor.from_bytes(stream), restored)
    else:
        diff = restored.data.astype(np.float64) - tensor.data.astype(np.float64)
        max_error = float(np.abs(diff).max())
    print(
        f"ratio={tensor.nbytes / len(stream):.4f} max_error={max_error:.6g} "
        f"outliers={compressed.outliers} salient={len(compressed.classification.salient)}"
        + (" verified" if args.verify else "")
    )
    return 0


# simulate


def _selection_overrides(args: argparse.Namespace, config: SimulationConfig) -> SimulationConfig:
    overrides = {
        name: getattr(args, f"select_{name}")
        for name in ("k", "epsilon")
        if getattr(args, f"select_{name}") is not None
    }
    if overrides:
        config = replace(config, selection=replace(config.selection, **overrides))
    return config


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed=args.seed)
    if args.rounds is not None:
        config = replace(config, rounds=args.rounds)
    config = _selection_overrides(args, config)
    config = replace(
        config,
        predictor=_predictor_config(args, config.predictor),
        codec=_codec_config(args, config.codec),
    )
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    disabled = [v for v in VARIANTS[1:] if getattr(args, v.replace("-", "_"))]
    if disabled or args.seeds > 1:
        variants = ["full", *disabled]
        seeds = range(config.seed, config.seed + args.seeds)
        summaries = compare_variants(config, seeds, variants, stop_at_target=args.stop_at_target)
        with (out_dir / "summary.csv").open("w", newline="") as handle:
            write_summary_csv(summaries, handle)
        _print_summaries(summaries, sys.stdout)
        for variant, (wins, paired) in wins_by_variant(summaries).items():
            print(f"full beats {variant} on {wins}/{paired} seeds")
        return 0

    result = run_simulation(config, stop_at_target=args.stop_at_target)
    with (out_dir / "rounds.csv").open("w", newline="") as handle:
        write_rounds_csv(result.records, handle)
    with (out_dir / "summary.csv").open("w", newline="") as handle:
        write_summary_csv([result.summary], handle)
    _print_summaries([result.summary], sys.stdout)
    return 0


def _print_summaries(summaries: Sequence[Any], out: TextIO) -> None:
    for s in summaries:
        target = "-" if s.time_to_target is None else f"{s.time_to_target:.1f}s"
        out.write(
            f"{s.variant} seed={s.seed}: time_to_target={target} final_loss={s.final_loss:.4f} "
            f"faults={s.page_faults} kills={s.lmk_kills} regen={s.regen_requests}\n"
        )


# gen


def cmd_gen_fleet(args: argparse.Namespace) -> int:
    fleet = generate_fleet(args.clients, seed=args.seed, alpha=args.alpha)
    _emit(dump_fleet(fleet), args.out)
    histogram = " ".join(f"{gb}gb={n}" for gb, n in fleet.tier_histogram().items())
    print(f"fleet clients={len(fleet)} {histogram}", file=sys.stderr)
    return 0


def cmd_gen_trace(args: argparse.Namespace) -> int:
    if args.spike:
        samples = spike_trace(args.duration, seed=args.seed, sample_s=args.sample_s)
    else:
        samples = synthetic_trace(
            args.duration,
            int(args.memory_gb * GIB),
            seed=args.seed,
            sample_s=args.sample_s,
            swap_kind=SwapKind(args.swap_kind),
        )
    _emit(dump_trace(samples), args.out)
    lengths = session_lengths(samples, args.sample_s)
    mean = sum(lengths) / len(lengths) if lengths else 0.0
    print(
        f"trace samples={len(samples)} sessions={len(lengths)} mean_session={mean:.1f}s",
        file=sys.stderr,
    )
    return 0


def cmd_gen_graph(args: argparse.Namespace) -> int:
    if args.training:
        graph = training_graph(
            blocks=args.blocks,
            batch=args.batch,
            channels=args.channels,
            size=args.size,
            classes=args.classes,
        )
    else:
        graph = random_dag(args.ops, seed=args.seed)
    _emit(dump_graph(graph), args.out)
    print(
        f"graph ops={len(graph.ops)} tensors={len(graph.tensors)} "
        f"untreated_peak={graph.untreated_peak()} pinned_minimum={graph.pinned_minimum()}",
        file=sys.stderr,
    )
    return 0


# predict


def cmd_predict(args: argparse.Namespace) -> int:
    samples = read_trace(args.trace)
    rows = replay_trace(samples, _predictor_config(args))
    columns = ("t", "m_safe", "m_pred")
    payload = [{"t": r.t, "m_safe": r.m_safe, "m_pred": r.m_pred} for r in rows]
    if args.out is None:
        writer = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(payload)
    else:
        _write_rows(args.out, columns, payload)
    return 0


def _add_codec_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("codec overrides")
    group.add_argument("--bits", type=int, help="quantization width of normal channels (4 or 8)")
    group.add_argument("--block", type=int, help="block size of salient channels")
    group.add_argument("--tau", type=float, help="nonzero fraction at which a block is dense")
    group.add_argument("--epsilon", type=float, help="error bound of dense salient blocks")
    group.add_argument("--radius", type=int, help="largest quantization code magnitude")


def _add_predictor_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("predictor overrides")
    group.add_argument("--window", dest="window_s", type=float, help="window length, seconds")
    group.add_argument("--slide", dest="slide_s", type=float, help="slide interval, seconds")
    group.add_argument("--sample", dest="sample_s", type=float, help="sampling period, seconds")
    group.add_argument("--tp1", type=float, help="page-fault growth trigger")
    group.add_argument("--tp2", type=int, help="LMK kill trigger")
    group.add_argument("--ws-adj", dest="ws_adj", type=float, help="window shrink factor")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memwall", description="Memory-budgeted federated training toolkit.")
    parser.add_argument("--verbose", "-v", action="store_true", help="log debug output")
    parser.add_argument("--seed", type=int, default=None, help="seed (overrides MEMWALL_SEED)")
    # Lets --seed follow the subcommand too; absent, the top-level value stands.
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    plan = commands.add_parser("plan", parents=[seeded], help="generate an execution plan")
    plan.add_argument("graph", type=Path, help="graph YAML document")
    plan.add_argument("--budget", type=parse_size, help="memory budget, e.g. 512MiB")
    plan.add_argument("--device", type=Path, help="device profile YAML (default: reference)")
    plan.add_argument(
        "--strategy", choices=[s.value for s in Strategy], default=Strategy.HYBRID.value
    )
    plan.add_argument("--calibrate", action="store_true", help="measure codec ratios first")
    plan.add_argument("--out", type=Path, help="plan file (default: stdout)")
    plan.add_argument("--sweep", type=Path, help="write a budget sweep CSV instead")
    plan.add_argument("--sweep-steps", type=int, default=13, help="budgets from 100%% to 40%%")
    plan.set_defaults(handler=cmd_plan)

    codec = commands.add_parser("codec", parents=[seeded], help="compress an activation tensor")
    codec.add_argument("tensor", type=Path, nargs="?", help="C x H x W float32 .npy file")
    codec.add_argument("--synthetic", type=parse_shape, help="use a synthetic CxHxW activation")
    codec.add_argument("--out", type=Path, help="bitstream (or .npy with --decode) to write")
    codec.add_argument("--verify", action="store_true", help="check the error bounds")
    codec.add_argument("--decode", type=Path, help="restore a bitstream instead")
    codec.add_argument("--bench", type=Path, help="write the corpus bench CSV instead")
    _add_codec_options(codec)
    codec.set_defaults(handler=cmd_codec)

    simulate = commands.add_parser("simulate", parents=[seeded], help="run federated rounds")
    simulate.add_argument("config", type=Path, nargs="?", help="config YAML (default: quickstart)")
    simulate.add_argument("--out-dir", type=Path, default=Path("."), help="CSV output directory")
    simulate.add_argument("--rounds", type=int, help="number of rounds")
    simulate.add_argument("--k", dest="select_k", type=int, help="clients per round")
    simulate.add_argument(
        "--exploit", dest="select_epsilon", type=float, help="exploited share of each round"
    )
    simulate.add_argument("--seeds", type=int, default=1, help="paired seeds to compare")
    simulate.add_argument(
        "--stop-at-target", action="store_true", help="end each run once it reaches the target loss"
    )
    for variant in VARIANTS[1:]:
        simulate.add_argument(f"--{variant}", action="store_true", help=f"also run {variant}")
    _add_codec_options(simulate)
    _add_predictor_options(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    gen = commands.add_parser("gen", help="write fixtures")
    targets = gen.add_subparsers(dest="target", required=True, parser_class=_Parser)

    fleet = targets.add_parser("fleet", parents=[seeded], help="device fleet")
    fleet.add_argument("--clients", type=int, default=100)
    fleet.add_argument("--alpha", type=float, default=0.1, help="Dirichlet label concentration")
    fleet.add_argument("--out", type=Path)
    fleet.set_defaults(handler=cmd_gen_fleet)

    trace = targets.add_parser("trace", parents=[seeded], help="memory trace")
    trace.add_argument("--duration", type=float, default=3600.0, help="seconds")
    trace.add_argument("--memory-gb", type=float, default=8.0)
    trace.add_argument("--sample-s", type=float, default=1.0)
    trace.add_argument(
        "--swap-kind", choices=[k.value for k in SwapKind], default=SwapKind.DISK_SWAP.value
    )
    trace.add_argument("--spike", action="store_true", help="steady baseline with short dips")
    trace.add_argument("--out", type=Path)
    trace.set_defaults(handler=cmd_gen_trace)

    graph = targets.add_parser("graph", parents=[seeded], help="computation graph")
    graph.add_argument("--ops", type=int, default=30, help="size of a random DAG")
    graph.add_argument("--training", action="store_true", help="conv-net training step instead")
    graph.add_argument("--blocks", type=int, default=16)
    graph.add_argument("--batch", type=int, default=200)
    graph.add_argument("--channels", type=int, default=64)
    graph.add_argument("--size", type=int, default=56)
    graph.add_argument("--classes", type=int, default=10)
    graph.add_argument("--out", type=Path)
    graph.set_defaults(handler=cmd_gen_graph)

    predict = commands.add_parser(
        "predict", parents=[seeded], help="replay a trace through the predictor"
    )
    predict.add_argument("trace", type=Path, help="trace YAML document")
    predict.add_argument("--out", type=Path, help="CSV file (default: stdout)")
    _add_predictor_options(predict)
    predict.set_defaults(handler=cmd_predict)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command != "simulate":
            args.seed = resolve_seed(args.seed)
        code: int = args.handler(args)
    except ConfigError as exc:
        for problem in exc.errors:
            print(f"error: {problem}", file=sys.stderr)
        return exc.exit_code
    except MemwallError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code

