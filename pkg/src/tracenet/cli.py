"""Command-line front end: validate, analyze, simulate, synth.

Exit codes: 0 ok, 1 findings, 2 usage / parse / config errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .analysis import count_by_operation, emit_report, ideal_replay, time_series, traffic_matrix
from .metrics import (
    DEFAULT_WINDOW_NS,
    SessionSummary,
    fct_cdf,
    fct_summary,
    render_heatmap,
    write_fct_csv,
    write_occupancy_csv,
    write_summary_csv,
)
from .metrics import _write_csv
from .network import build_topology, preset, simulate
from .network.config import NetworkConfig, coerce_field
from .replay import MappingPolicy, Session, map_tasks
from .synth import IncastSpec, incast_mapping, parse_incast, synth_incast
from .trace import TraceError, TraceParseError, load_trace, save_trace, validate_structure

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2

_NET_FIELDS = {f.name for f in dataclasses.fields(NetworkConfig)}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    traces: list[str] = field(default_factory=list)
    topology: str = "fat-tree-256"
    network: str = "config1"
    overrides: dict[str, object] = field(default_factory=dict)
    mapping: str = "linear"
    mapping_table: str | None = None
    seed: int = 0
    window_ns: int = DEFAULT_WINDOW_NS
    heatmap_windows: list[int] = field(default_factory=lambda: [0])
    heatmap_relative: bool = False
    incast: IncastSpec | None = None
    out: str = "out"

    def network_config(self) -> NetworkConfig:
        try:
            return preset(self.network).with_overrides(**self.overrides)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None

    def validate(self) -> None:
        if not self.traces and self.incast is None:
            raise ConfigError("nothing to simulate: give a trace and/or an incast spec")
        for p in self.traces + ([self.mapping_table] if self.mapping_table else []):
            if not os.path.isfile(p):
                raise ConfigError(f"no such file: {p}")
        try:
            MappingPolicy(self.mapping)
        except ValueError:
            raise ConfigError(f"unknown mapping policy {self.mapping!r}") from None
        if self.mapping == "explicit" and not self.mapping_table:
            raise ConfigError("explicit mapping needs mapping_table")
        if self.window_ns <= 0:
            raise ConfigError("window_ns must be positive")
        if any(w < 0 for w in self.heatmap_windows):
            raise ConfigError("heatmap window indices must be non-negative")
        self.network_config()
        try:
            build_topology(self.topology)
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


_KEYS = {
    "trace": lambda cfg, v, base: cfg.traces.append(_resolve(v, base)),
    "topology": lambda cfg, v, base: setattr(cfg, "topology", v),
    "network": lambda cfg, v, base: setattr(cfg, "network", v),
    "mapping": lambda cfg, v, base: setattr(cfg, "mapping", v.lower()),
    "mapping_table": lambda cfg, v, base: setattr(cfg, "mapping_table", _resolve(v, base)),
    "seed": lambda cfg, v, base: setattr(cfg, "seed", int(v)),
    "window_ns": lambda cfg, v, base: setattr(cfg, "window_ns", int(v)),
    "heatmap_windows": lambda cfg, v, base: setattr(cfg, "heatmap_windows", _int_list(v)),
    "heatmap_relative": lambda cfg, v, base: setattr(cfg, "heatmap_relative", _bool(v)),
    "incast": lambda cfg, v, base: setattr(cfg, "incast", parse_incast(v)),
    "out": lambda cfg, v, base: setattr(cfg, "out", _resolve(v, base)),
}


def _bool(text: str) -> bool:
    return coerce_field("variable_packet_size", text)


def _resolve(path: str, base: str | None) -> str:
    return path if base is None or os.path.isabs(path) else os.path.join(base, path)


def apply_setting(cfg: ExperimentConfig, key: str, value: str, base: str | None = None) -> None:
    """Apply one ``key = value`` pair; NetworkConfig field names become overrides."""
    key = key.strip().replace("-", "_")
    value = value.strip()
    try:
        if key in _KEYS:
            _KEYS[key](cfg, value, base)
        elif key in _NET_FIELDS:
            cfg.overrides[key] = coerce_field(key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{key}: {e}") from None


def parse_config_text(text: str, base: str | None = None, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; ``trace`` may repeat.

    Relative paths resolve against ``base`` (the config file's directory).
    """
    cfg = cfg or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            apply_setting(cfg, key, value, base)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return cfg


def load_config(path_or_preset: str) -> ExperimentConfig:
    """A config file, or just a network preset name (``1``, ``config2`` ...)."""
    if os.path.isfile(path_or_preset):
        with open(path_or_preset, encoding="utf-8") as fh:
            return parse_config_text(fh.read(), os.path.dirname(os.path.abspath(path_or_preset)))
    try:
        preset(path_or_preset)
    except ValueError:
        raise ConfigError(f"--config {path_or_preset!r} is neither a file nor a network preset") from None
    return ExperimentConfig(network=path_or_preset)


# --- commands -------------------------------------------------------------------


def _load(path: str, err) -> object:
    try:
        return load_trace(path)
    except TraceParseError as e:
        print(f"{path}:{e.line}:{e.column}: {e.reason}", file=err)
    except (TraceError, OSError) as e:
        print(f"{path}: {e}", file=err)
    return None


def cmd_validate(path: str, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    trace = _load(path, err)
    if trace is None:
        return EXIT_USAGE
    findings = list(validate_structure(trace))
    if not findings:
        findings = ideal_replay(trace).findings
    for f in findings:
        where = f"record {f.record_id}" if f.record_id is not None else "trace"
        print(f"{path}: {where}: {f.message}", file=out)
    if findings:
        return EXIT_FINDINGS
    print(f"{path}: ok ({trace.num_tasks} tasks, {len(trace.records)} records)", file=out)
    return EXIT_OK


def cmd_analyze(path: str, out_dir: str, bin_width_ns: int | None = None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    trace = _load(path, err)
    if trace is None:
        return EXIT_USAGE
    replay = ideal_replay(trace)
    if replay.findings:
        for f in replay.findings:
            print(f"{path}: {f.message}", file=err)
        return EXIT_FINDINGS
    if bin_width_ns is not None and bin_width_ns <= 0:
        print("--bin-ns must be positive", file=err)
        return EXIT_USAGE
    written = emit_report(
        count_by_operation(trace), time_series(trace, bin_width_ns, replay), traffic_matrix(trace), out_dir
    )
    print(f"ideal duration {replay.duration_ns} ns; wrote {len(written)} files to {out_dir}", file=out)
    return EXIT_OK


def _session_names(cfg: ExperimentConfig) -> list[str]:
    names = []
    for i, p in enumerate(cfg.traces):
        stem = os.path.splitext(os.path.basename(p))[0]
        names.append(stem if stem not in names else f"{stem}.{i}")
    if cfg.incast is not None:
        names.append("incast")
    return names


def run_experiment(cfg: ExperimentConfig, out=None, check_invariants: bool = False) -> list[SessionSummary]:
    """Run one experiment and write its bundle under ``cfg.out``."""
    out = out or sys.stdout
    cfg.validate()
    topo = build_topology(cfg.topology)
    net = cfg.network_config()
    nodes = range(topo.num_nodes)
    table = None
    if cfg.mapping_table:
        with open(cfg.mapping_table, encoding="utf-8") as fh:
            table = _int_list(fh.read())
    sessions = []
    for sid, path in enumerate(cfg.traces):
        trace = load_trace(path)
        findings = validate_structure(trace)
        if findings:
            raise ConfigError(f"{path}: {findings[0].message}")
        mapping = map_tasks(cfg.mapping, trace.num_tasks, nodes, cfg.seed, table)
        sessions.append(Session(trace, mapping, sid))
    if cfg.incast is not None:
        try:
            mapping = incast_mapping(cfg.incast, topo.num_nodes)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        sessions.append(Session(synth_incast(cfg.incast), mapping, len(sessions)))

    result = simulate(topo, net, sessions, cfg.window_ns, check_invariants)

    names = _session_names(cfg)
    name_of = dict(enumerate(names))
    os.makedirs(cfg.out, exist_ok=True)
    records = sorted(result.fct, key=lambda r: (r.session_id, r.msg_id))
    summaries = []
    cdf_rows = []
    for sid, name in name_of.items():
        mine = [r for r in records if r.session_id == sid]
        mean, mx, n = fct_summary(mine)
        summaries.append(SessionSummary(name, result.execution_time_ns[sid], mean, mx, n))
        cdf_rows += [[x, f"{f:.6f}", name] for x, f in fct_cdf(mine)]
    write_summary_csv(os.path.join(cfg.out, "summary.csv"), summaries)
    write_fct_csv(os.path.join(cfg.out, "fct.csv"), records, name_of)
    _write_csv(os.path.join(cfg.out, "fct_cdf.csv"), ["fct_ns", "fraction", "session"], cdf_rows)
    num_windows = result.occupancy.num_windows(result.end_time_ns)
    write_occupancy_csv(os.path.join(cfg.out, "occupancy.csv"), result.occupancy, num_windows)
    for w in cfg.heatmap_windows:
        render_heatmap(topo, result.occupancy, w, os.path.join(cfg.out, f"heatmap_w{w}.svg"), cfg.heatmap_relative)

    print(f"{topo.name} {net.switch_arch.value}/{net.flow_control.value}: {result.packets_delivered} packets", file=out)
    for s in summaries:
        print(
            f"  {s.name}: execution time {s.execution_time_ns} ns, "
            f"mean FCT {s.mean_fct_ns} ns, max FCT {s.max_fct_ns} ns ({s.messages} messages)",
            file=out,
        )
    return summaries


def _run_isolated(cfg: ExperimentConfig) -> tuple[int, str]:
    buf = io.StringIO()
    try:
        run_experiment(cfg, buf)
    except ConfigError as e:
        return EXIT_USAGE, f"config error: {e}\n"
    except TraceParseError as e:
        return EXIT_USAGE, f"trace line {e.line} column {e.column}: {e.reason}\n"
    except (TraceError, OSError) as e:
        return EXIT_USAGE, f"{e}\n"
    return EXIT_OK, buf.getvalue()


def cmd_simulate(configs: list[ExperimentConfig], jobs: int = 1, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_isolated, configs))
    else:
        results = [_run_isolated(c) for c in configs]
    code = EXIT_OK
    for rc, text in results:
        (out if rc == EXIT_OK else err).write(text)
        code = max(code, rc)
    return code


def cmd_synth(spec: IncastSpec, path: str, out=None) -> int:
    out = out or sys.stdout
    trace = synth_incast(spec)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_trace(trace, path)
    print(f"wrote {len(trace.records)} records to {path}", file=out)
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracenet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a trace structurally and by ideal replay")
    p.add_argument("trace")

    p = sub.add_parser("analyze", help="static analysis report (CSV + SVG)")
    p.add_argument("trace")
    p.add_argument("--out", required=True)
    p.add_argument("--bin-ns", type=int, default=None, help="time-series bin width")

    p = sub.add_parser("simulate", help="replay traces through the network simulator")
    p.add_argument("--config", action="append", required=True, metavar="FILE_OR_PRESET",
                   help="experiment config file or network preset; repeat with --jobs for parallel runs")
    p.add_argument("--topology")
    p.add_argument("--network", help="network preset (config1/config2)")
    p.add_argument("--trace", action="append", help="trace file (repeatable; replaces config traces)")
    p.add_argument("--mapping", choices=[m.value for m in MappingPolicy])
    p.add_argument("--mapping-table")
    p.add_argument("--seed", type=int)
    p.add_argument("--incast", help="sources=N,bytes=B,dst=D,at=T[,seed=S]; at is required")
    p.add_argument("--window-ns", type=int)
    p.add_argument("--heatmap-windows", help="comma separated window indices")
    p.add_argument("--heatmap-relative", action="store_const", const="true", default=None,
                   help="scale heatmap colors by the window's peak instead of buffer capacity")
    p.add_argument("--out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set mtu_bytes=4096")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="write a synthetic trace")
    kinds = p.add_subparsers(dest="kind", required=True)
    q = kinds.add_parser("incast", help="N sources send one message each to one destination")
    q.add_argument("--sources", type=int, default=64)
    q.add_argument("--bytes", type=int, default=10 * (1 << 20))
    q.add_argument("--dst", type=int, default=0)
    q.add_argument("--at", type=int, required=True, help="injection time in ns (no default)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    return ap


def _configs_from_args(args) -> list[ExperimentConfig]:
    configs = []
    for src in args.config:
        cfg = load_config(src)
        flags = {
            "topology": args.topology,
            "network": args.network,
            "mapping": args.mapping,
            "mapping_table": args.mapping_table,
            "seed": args.seed,
            "incast": args.incast,
            "window_ns": args.window_ns,
            "heatmap_windows": args.heatmap_windows,
            "heatmap_relative": args.heatmap_relative,
            "out": args.out,
        }
        for key, value in flags.items():
            if value is not None:
                apply_setting(cfg, key, str(value))
        if args.trace:
            cfg.traces = list(args.trace)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            apply_setting(cfg, *item.split("=", 1))
        configs.append(cfg)
    outs = [os.path.abspath(c.out) for c in configs]
    if len(set(outs)) != len(outs):
        raise ConfigError("parallel experiments need distinct output directories")
    return configs


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command == "validate":
        return cmd_validate(args.trace)
    if args.command == "analyze":
        return cmd_analyze(args.trace, args.out, args.bin_ns)
    if args.command == "simulate":
        try:
            configs = _configs_from_args(args)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return EXIT_USAGE
        return cmd_simulate(configs, args.jobs)
    try:
        spec = IncastSpec(args.sources, args.dst, args.bytes, args.at, seed=args.seed)
        spec.validate()
    except ValueError as e:
        print(f"invalid incast spec: {e}", file=sys.stderr)
        return EXIT_USAGE
    return cmd_synth(spec, args.out)


if __name__ == "__main__":
    sys.exit(main())
