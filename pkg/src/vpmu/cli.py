"""Experiment runner: bandwidth arithmetic, latency campaigns, estimation.

Subcommands:
    bandwidth   per-config/format/placement bandwidth table and savings
    latency     full-pipeline latency campaign with CDF and dependability
    se          state estimation over pipeline-delivered measurements
    topics      evaluate a topic filter against a topic name
    dump-grid   write the parsed network as buses.csv / branches.csv

All randomness flows from --seed through numpy SeedSequence spawning
(network links and PMU noise each get their own child stream), so a given
configuration and seed reproduces byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data_files
from .broker import TopicError, topic_matches
from .codec import FrameFormat, data_frame_size
from .cvo import AlignedSet
from .estimator import (
    UnobservableError,
    build_measurement_matrix,
    measurement_vector,
    timed_estimate,
)
from .grid import GridModel, build_placement, parse_cdf
from .netsim import (
    DEFAULT_OVERHEAD_BYTES,
    LatencyRecord,
    bandwidth_saving,
    dependability,
    latency_cdf,
    parse_links,
    stream_bandwidth,
)
from .pipeline import Pipeline, PipelineConfig
from .pmu import NoiseModel, Scenario, load_scenario

DEFAULT_MONITORED = (2, 6, 7, 9)
CONFIG_PHASORS = {"A": 6, "B": 12}  # phasors per PMU block
PMUS_PER_NODE = 3  # the three-device node the bandwidth table describes
DEPENDABILITY_THRESHOLDS_S = (0.05, 0.1, 0.5)


def _load_grid(args: argparse.Namespace) -> GridModel:
    if args.grid is None:
        return data_files.default_grid()
    return parse_cdf(Path(args.grid).read_text())


def _load_scenario(args: argparse.Namespace) -> Scenario:
    if args.scenario is None:
        return data_files.default_scenario()
    return load_scenario(Path(args.scenario).read_text())


def _load_links(args: argparse.Namespace):
    if args.links is None:
        return data_files.calibrated_links()
    return parse_links(Path(args.links).read_text())


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_of(name: str) -> FrameFormat:
    return FrameFormat.FIXED16 if name == "fixed" else FrameFormat.FLOAT32


# ---------------------------------------------------------------- bandwidth


def bandwidth_table(
    rate: int, overhead: int, streams: int = PMUS_PER_NODE
) -> list[dict[str, object]]:
    """All (config, format, placement) cells: one aggregated uplink versus
    one single-block stream per device."""
    rows: list[dict[str, object]] = []
    for config, n_phasors in CONFIG_PHASORS.items():
        for fmt_name in ("fixed", "float"):
            fmt = _fmt_of(fmt_name)
            local_frame = data_frame_size(streams, n_phasors, fmt)
            remote_frame = data_frame_size(1, n_phasors, fmt)
            local_bps = stream_bandwidth(local_frame, rate, overhead, 1)
            remote_bps = stream_bandwidth(remote_frame, rate, overhead, streams)
            saving = bandwidth_saving(local_bps, remote_bps)
            rows.append(
                {
                    "config": config,
                    "format": fmt_name,
                    "placement": "local",
                    "frame_bytes": local_frame,
                    "bps": local_bps,
                    "saving_pct": saving,
                }
            )
            rows.append(
                {
                    "config": config,
                    "format": fmt_name,
                    "placement": "remote",
                    "frame_bytes": remote_frame,
                    "bps": remote_bps,
                    "saving_pct": saving,
                }
            )
    return rows


def cmd_bandwidth(args: argparse.Namespace) -> int:
    rows = bandwidth_table(args.rate, args.overhead)
    out = _out_dir(args)
    lines = ["config,format,placement,bps,saving_pct"]
    lines += [
        f"{r['config']},{r['format']},{r['placement']},{r['bps']},{r['saving_pct']:.1f}"
        for r in rows
    ]
    (out / "bandwidth.csv").write_text("\n".join(lines) + "\n")
    print(f"rate {args.rate} fps, per-message overhead {args.overhead} B")
    print(f"{'config':<8}{'format':<8}{'placement':<10}{'frame B':>8}{'bps':>9}{'saving':>8}")
    for r in rows:
        print(
            f"{r['config']:<8}{r['format']:<8}{r['placement']:<10}"
            f"{r['frame_bytes']:>8}{r['bps']:>9}{r['saving_pct']:>7.1f}%"
        )
    print(f"wrote {out / 'bandwidth.csv'}")
    return 0


# ------------------------------------------------------------------ latency


def run_latency_campaign(args: argparse.Namespace) -> tuple[list[LatencyRecord], Pipeline]:
    grid = _load_grid(args)
    scenario = _load_scenario(args)
    links = _load_links(args)
    placement = build_placement(grid, {args.node}, channels_per_pmu=2)
    config = PipelineConfig(
        monitored_nodes=(args.node,),
        mode=args.mode,
        channel_config=args.config,
        fmt=_fmt_of(args.format),
        rate=args.rate,
        trials=args.trials,
        seed=args.seed,
        lan=links["lan"],
        wan_local=links["wan_local"],
        wan_remote=links["wan_remote"],
        cloud=links["cloud"],
    )
    pipeline = Pipeline(grid, scenario, placement, config)
    result = pipeline.run()
    return result.latency_records, pipeline


def write_latency_report(
    records: list[LatencyRecord], mode: str, out: Path
) -> dict[str, float]:
    latencies, fractions, summary = latency_cdf(records)
    lines = ["latency_ms"] + [repr(lat * 1e3) for lat in latencies]
    (out / f"latency_{mode}.csv").write_text("\n".join(lines) + "\n")
    cdf_lines = ["latency_ms,cum_fraction"] + [
        f"{lat * 1e3!r},{frac!r}" for lat, frac in zip(latencies, fractions)
    ]
    (out / f"cdf_{mode}.csv").write_text("\n".join(cdf_lines) + "\n")
    stats = {
        "count": summary.count,
        "min_ms": summary.min_s * 1e3,
        "mean_ms": summary.mean_s * 1e3,
        "max_ms": summary.max_s * 1e3,
    }
    for threshold in DEPENDABILITY_THRESHOLDS_S:
        stats[f"dep_{int(threshold * 1e3)}ms_pct"] = dependability(records, threshold)
    return stats


def cmd_latency(args: argparse.Namespace) -> int:
    records, _ = run_latency_campaign(args)
    out = _out_dir(args)
    stats = write_latency_report(records, args.mode, out)
    print(f"{args.mode} CVO, {args.trials} trials, seed {args.seed}")
    print(
        f"latency min/mean/max: {stats['min_ms']:.1f} / {stats['mean_ms']:.1f} / "
        f"{stats['max_ms']:.1f} ms over {stats['count']} records"
    )
    for threshold in DEPENDABILITY_THRESHOLDS_S:
        key = f"dep_{int(threshold * 1e3)}ms_pct"
        print(f"{int(threshold * 1e3):>4} ms dependability: {stats[key]:.1f}%")
    print(f"wrote {out / f'latency_{args.mode}.csv'} and {out / f'cdf_{args.mode}.csv'}")
    return 0


# ----------------------------------------------------------------------- se


def _parse_placement_arg(value: str) -> tuple[int, ...]:
    try:
        nodes = tuple(sorted({int(p) for p in value.split(",") if p.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad placement list {value!r}") from None
    if not nodes:
        raise argparse.ArgumentTypeError("placement needs at least one node")
    return nodes


def run_se_campaign(args: argparse.Namespace):
    """Drive the remote key-value pipeline and estimate per aligned set."""
    grid = _load_grid(args)
    scenario = _load_scenario(args)
    links = _load_links(args)
    placement = build_placement(grid, set(args.placement), channels_per_pmu=2)
    noise = NoiseModel(phasor_rel=args.noise)
    config = PipelineConfig(
        monitored_nodes=tuple(args.placement),
        mode="remote",
        channel_config="bare",
        rate=args.rate,
        trials=args.trials,
        seed=args.seed,
        noise=noise,
        output_mode="key_value",
        lan=links["lan"],
        wan_remote=links["wan_remote"],
        cloud=links["cloud"],
    )
    pipeline = Pipeline(grid, scenario, placement, config)
    result = pipeline.run()

    channel_of = {}
    for vo_id, descriptors in pipeline.pmu_channels.items():
        for idx, descriptor in enumerate(descriptors):
            channel_of[descriptor] = (vo_id, idx)
    descriptors = placement.all_descriptors()

    def z_from(aligned: AlignedSet) -> np.ndarray:
        values = []
        for descriptor in descriptors:
            vo_id, idx = channel_of[descriptor]
            record = aligned.contributions[vo_id]
            values.append(
                complex(record[f"phasor.{idx}.re"], record[f"phasor.{idx}.im"])
            )
        return measurement_vector(values)

    complete = [
        payload
        for payload in result.app_payloads
        if isinstance(payload, AlignedSet) and payload.complete
    ]
    if not complete:
        raise RuntimeError("pipeline delivered no complete aligned sets")

    sigmas = None
    if noise.phasor_rel > 0:
        sigma_list = []
        for descriptor in descriptors:
            vo_id, idx = channel_of[descriptor]
            record = complete[0].contributions[vo_id]
            magnitude = abs(
                complex(record[f"phasor.{idx}.re"], record[f"phasor.{idx}.im"])
            )
            sigma_list.extend([noise.phasor_rel * magnitude] * 2)
        sigmas = np.array(sigma_list)
    model = build_measurement_matrix(grid, placement, sigmas=sigmas)

    states, residual_norms, timings = [], [], []
    for aligned in complete:
        state, residuals, elapsed = timed_estimate(model, z_from(aligned))
        states.append(state)
        residual_norms.append(float(np.linalg.norm(residuals)))
        timings.append(elapsed)
    return grid, model, states, residual_norms, timings, pipeline


def cmd_se(args: argparse.Namespace) -> int:
    try:
        grid, model, states, residual_norms, timings, _ = run_se_campaign(args)
    except UnobservableError as exc:
        print(f"placement is unobservable: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args)
    last = states[-1]
    lines = ["bus,e,f,mag,angle_deg"]
    for i, bus in enumerate(last.bus_ids):
        v = last.voltages[i]
        lines.append(
            f"{bus},{v.real!r},{v.imag!r},{abs(v)!r},{np.degrees(np.angle(v))!r}"
        )
    (out / "estimate.csv").write_text("\n".join(lines) + "\n")
    timing_ms = np.array(timings) * 1e3
    (out / "se_timing.csv").write_text(
        "mean_ms,std_ms,trials\n"
        f"{float(timing_ms.mean())!r},{float(timing_ms.std(ddof=1)) if len(timings) > 1 else 0.0!r},{len(timings)}\n"
    )
    print(f"estimated over {len(states)} aligned sets, seed {args.seed}")
    print(f"residual norm (last set): {residual_norms[-1]:.3e}")
    print(
        f"solve time: mean {timing_ms.mean():.3f} ms, std "
        f"{timing_ms.std(ddof=1) if len(timings) > 1 else 0.0:.3f} ms over {len(timings)} trials"
    )
    print(f"wrote {out / 'estimate.csv'} and {out / 'se_timing.csv'}")
    return 0


# ------------------------------------------------------------------- topics


def cmd_topics(args: argparse.Namespace) -> int:
    try:
        matched = topic_matches(args.filter, args.name)
    except TopicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("true" if matched else "false")
    return 0 if matched else 1


# ---------------------------------------------------------------- dump-grid


def cmd_dump_grid(args: argparse.Namespace) -> int:
    grid = _load_grid(args)
    out = _out_dir(args)
    bus_lines = ["id,name,base_kv"] + [
        f"{b.id},{b.name},{b.base_kv!r}" for b in grid.buses
    ]
    (out / "buses.csv").write_text("\n".join(bus_lines) + "\n")
    branch_lines = ["from,to,r,x,b,tap"] + [
        f"{br.from_bus},{br.to_bus},{br.r!r},{br.x!r},{br.b_total!r},{br.tap!r}"
        for br in grid.branches
    ]
    (out / "branches.csv").write_text("\n".join(branch_lines) + "\n")
    print(f"{len(grid.buses)} buses, {len(grid.branches)} branches -> {out}")
    return 0


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpmu", description="virtualized-PMU measurement system simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, scenario: bool = False) -> None:
        p.add_argument("--grid", help="CDF network file (default: bundled 14-bus)")
        p.add_argument("--out", default="out", help="output directory")
        if scenario:
            p.add_argument("--scenario", help="operating point file (default: bundled)")
            p.add_argument("--links", help="link configuration file (default: bundled)")
            p.add_argument("--trials", type=int, default=2500)
            p.add_argument("--seed", type=int, default=42)
            p.add_argument("--rate", type=int, default=50, help="frames per second")

    p_bw = sub.add_parser("bandwidth", help="node uplink bandwidth table")
    p_bw.add_argument("--rate", type=int, default=50)
    p_bw.add_argument(
        "--overhead",
        type=int,
        default=DEFAULT_OVERHEAD_BYTES,
        help="per-message header bytes (40 = bare TCP-IP lower bound)",
    )
    p_bw.add_argument("--out", default="out")
    p_bw.set_defaults(fn=cmd_bandwidth)

    p_lat = sub.add_parser("latency", help="end-to-end latency campaign")
    add_common(p_lat, scenario=True)
    p_lat.add_argument("--mode", choices=("local", "remote"), default="local")
    p_lat.add_argument("--config", choices=("A", "B"), default="A")
    p_lat.add_argument("--format", choices=("fixed", "float"), default="float")
    p_lat.add_argument("--node", type=int, default=2, help="monitored node")
    p_lat.set_defaults(fn=cmd_latency)

    p_se = sub.add_parser("se", help="state estimation over the pipeline")
    add_common(p_se, scenario=True)
    p_se.add_argument(
        "--placement",
        type=_parse_placement_arg,
        default=DEFAULT_MONITORED,
        help="comma-separated monitored nodes",
    )
    p_se.add_argument("--noise", type=float, default=0.0, help="relative phasor sigma")
    p_se.set_defaults(fn=cmd_se)

    p_topics = sub.add_parser("topics", help="match a filter against a topic")
    p_topics.add_argument("filter")
    p_topics.add_argument("name")
    p_topics.set_defaults(fn=cmd_topics)

    p_dump = sub.add_parser("dump-grid", help="dump the network model as CSV")
    add_common(p_dump)
    p_dump.set_defaults(fn=cmd_dump_grid)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
