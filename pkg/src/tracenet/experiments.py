"""Reusable experiment scenarios shared by scripts/ and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import fct_summary
from .network import build_topology, preset, simulate
from .replay import MappingPolicy, Session, map_tasks
from .synth import MIB, IncastSpec, incast_mapping, synth_incast, uniform_background
from .trace import CollKind, Collective, Communicator, Dependency, DepKind, Trace, TraceRecord

TOPOLOGY_NAMES = ("fat-tree-256", "megafly-288")
CONFIG_NAMES = ("config1", "config2")


@dataclass(frozen=True)
class IncastScenario:
    """Uniform closed-loop background with an optional 64-source incast on top.

    The 10 MiB incast messages are scaled by ``scale`` to keep a 4-way matrix
    of runs inside a desk budget. The background is long and mostly idle so
    that, as in a long application run, the burst touches a small fraction of
    the background messages.
    """

    background_tasks: int = 256
    messages_per_task: int = 1200
    message_bytes: int = 4096
    mean_gap_ns: int = 7_500_000
    background_seed: int = 1
    incast_sources: int = 64
    incast_bytes: int = 10 * MIB
    scale: int = 16
    incast_dst: int = 0
    incast_at_ns: int = 3_000_000_000
    incast_seed: int = 3

    def background(self) -> Trace:
        return uniform_background(
            self.background_tasks, self.messages_per_task, self.message_bytes, self.mean_gap_ns, self.background_seed
        )

    def incast(self) -> IncastSpec:
        return IncastSpec(
            self.incast_sources, self.incast_dst, self.incast_bytes // self.scale, self.incast_at_ns, seed=self.incast_seed
        )


@dataclass(frozen=True)
class IncastOutcome:
    topology: str
    config: str
    base_mean_ns: int
    base_max_ns: int
    incast_mean_ns: int
    incast_max_ns: int
    background_messages: int
    burst_time_ns: int

    @property
    def mean_change(self) -> float:
        return self.incast_mean_ns / self.base_mean_ns - 1.0

    @property
    def max_ratio(self) -> float:
        return self.incast_max_ns / self.base_max_ns


def run_incast(topology: str, config: str, scenario: IncastScenario = IncastScenario(), background: Trace | None = None):
    """Background alone, then background + incast; summaries of the background session."""
    topo = build_topology(topology)
    cfg = preset(config)
    bg = background if background is not None else scenario.background()
    nodes = range(topo.num_nodes)
    summaries = []
    burst = 0
    for with_incast in (False, True):
        sessions = [Session(bg, map_tasks(MappingPolicy.LINEAR, bg.num_tasks, nodes), 0)]
        if with_incast:
            spec = scenario.incast()
            sessions.append(Session(synth_incast(spec), incast_mapping(spec, topo.num_nodes), 1))
        res = simulate(topo, cfg, sessions)
        summaries.append(fct_summary(r for r in res.fct if r.session_id == 0))
        if with_incast:
            burst = res.execution_time_ns[1] - scenario.incast_at_ns
    (m0, x0, n0), (m1, x1, _) = summaries
    return IncastOutcome(topology, config, m0, x0, m1, x1, n0, burst)


def app_phases(num_tasks: int = 64, iterations: int = 3, a2a_bytes: int = 1024, compute_ns: int = 200_000) -> Trace:
    """A small bulk-synchronous application: compute, all-to-all, allreduce, repeat."""
    comm = Communicator(0, tuple(range(num_tasks)))
    records = []
    prev = None
    for _ in range(iterations):
        for kind, size, delay in ((CollKind.ALLTOALL, a2a_bytes, compute_ns), (CollKind.ALLREDUCE, 8, 1_000)):
            rid = len(records)
            dep = Dependency(DepKind.INIT, None, delay) if prev is None else Dependency(DepKind.AFTER_RECV, prev, delay)
            records.append(TraceRecord(rid, Collective(0, kind, 0, size), dep))
            prev = rid
    return Trace.build(num_tasks, [comm], records)
