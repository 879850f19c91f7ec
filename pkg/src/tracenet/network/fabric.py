"""Packet-level fabric: NICs, IQ/CIOQ switches, credit and PFC flow control.

Timing model (all integer ns):

* a packet starting on a link at ``t`` has its first byte at the receiver at
  ``t + prop`` (buffer space is taken then) and is fully received at
  ``t + ser + prop``; forwarding is store-and-forward;
* internal switch transfers take no time;
* IQ inputs hold a packet until it has left on the output link; CIOQ inputs
  release it as soon as it moves into the output buffer.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..kernel import Kernel
from ..metrics import DEFAULT_WINDOW_NS, FctRecord, OccupancyLog
from ..replay import Message, Session
from .config import FlowControl, NetworkConfig, SwitchArch
from .topology import NIC, Topology


class FabricError(RuntimeError):
    """A lossless-fabric invariant was violated."""


class Packet:
    __slots__ = ("msg", "index", "payload", "wire", "dst", "last")

    def __init__(self, msg, index, payload, wire, dst, last):
        self.msg = msg
        self.index = index
        self.payload = payload
        self.wire = wire
        self.dst = dst
        self.last = last

    @property
    def src(self) -> int:
        return self.msg.src_node

    @property
    def generation_time_ns(self) -> int:
        return self.msg.gen_time

    def __repr__(self) -> str:
        return f"Packet(msg={self.msg.msg_id}, idx={self.index}, payload={self.payload}, wire={self.wire})"


def packet_count(length: int, mtu: int) -> int:
    return max(1, -(-length // mtu))


def packetize(message: Message | int, config: NetworkConfig) -> list[Packet]:
    """Split a message (or a length in bytes) into MTU-sized packets."""
    length = message if isinstance(message, int) else message.length_bytes
    mtu = config.mtu_bytes
    n = packet_count(length, mtu)
    pkts = []
    for i in range(n):
        payload = min(mtu, length - i * mtu)
        wire = (payload if config.variable_packet_size else mtu) + config.header_bytes
        dst = -1 if isinstance(message, int) else message.dst_node
        pkts.append(Packet(message, i, payload, wire, dst, i == n - 1))
    return pkts


# device kinds for flow-control wakeups
_K_NIC, _K_IQ, _K_CIOQ = 0, 1, 2


class OutPort:
    __slots__ = (
        "kind",
        "dev",
        "index",
        "peer",
        "prop",
        "busy",
        "cur",
        "credits",
        "paused",
        "data_in_flight",
        "credits_in_flight",
        "busy_ns",
        "tx_packets",
        "tx_bytes",
        "src_input",
    )

    def __init__(self, kind, dev, index, prop):
        self.kind = kind
        self.dev = dev
        self.index = index
        self.peer: InPort | None = None
        self.prop = prop
        self.busy = False
        self.cur: Packet | None = None
        self.credits = 0
        self.paused = False
        self.data_in_flight = 0
        self.credits_in_flight = 0
        self.busy_ns = 0
        self.tx_packets = 0
        self.tx_bytes = 0
        self.src_input = -1


class InPort:
    __slots__ = ("dev", "index", "fifo", "occ", "cap", "xoff", "upstream", "busy", "trk", "is_nic")

    def __init__(self, dev, index, cap, is_nic=False):
        self.dev = dev
        self.index = index
        self.fifo: deque[Packet] = deque()
        self.occ = 0
        self.cap = cap
        self.xoff = False
        self.upstream: OutPort | None = None
        self.busy = False
        self.trk = None
        self.is_nic = is_nic


class Switch:
    __slots__ = ("sid", "inputs", "outputs", "waiting", "rr", "routes", "out_fifo", "out_occ", "radix")

    def __init__(self, sid, radix, routes):
        self.sid = sid
        self.radix = radix
        self.inputs: list[InPort | None] = [None] * radix
        self.outputs: list[OutPort | None] = [None] * radix
        self.waiting: list[list[int]] = [[] for _ in range(radix)]
        self.rr = [radix - 1] * radix
        self.routes = routes
        self.out_fifo: list[deque] = [deque() for _ in range(radix)]
        self.out_occ = [0] * radix


class Nic:
    __slots__ = ("node", "out", "inp", "queue", "next_index")

    def __init__(self, node):
        self.node = node
        self.out: OutPort | None = None
        self.inp: InPort | None = None
        self.queue: deque[Message] = deque()
        self.next_index = 0


@dataclass
class RunResult:
    execution_time_ns: dict[int, int]
    fct: list[FctRecord]
    occupancy: OccupancyLog
    end_time_ns: int
    packets_injected: int
    packets_delivered: int
    events: int
    per_session_messages: dict[int, int] = field(default_factory=dict)


class Fabric:
    """One experiment: a topology, a config and the sessions replayed on it."""

    def __init__(
        self,
        topology: Topology,
        config: NetworkConfig,
        occupancy_window_ns: int = DEFAULT_WINDOW_NS,
        check_invariants: bool = False,
    ):
        self.topo = topology
        self.cfg = config
        self.kernel = Kernel()
        self.check = check_invariants
        self.occupancy = OccupancyLog(occupancy_window_ns)
        self.fct: list[FctRecord] = []
        self.sessions: list[Session] = []
        self._wakes: set[int] = set()
        self.packets_injected = 0
        self.packets_delivered = 0
        self._credit = config.flow_control is FlowControl.CREDIT
        self._cioq = config.switch_arch is SwitchArch.CIOQ
        self._xoff_free = config.pfc_xoff_free_bytes
        self._xon_free = config.pfc_xon_free_bytes
        self._ser: dict[int, int] = {}
        self._build()

    # -- construction -------------------------------------------------------------

    def _build(self) -> None:
        topo, cfg = self.topo, self.cfg
        prop = cfg.propagation_ns
        cap = cfg.input_buffer_bytes
        routes = topo.routing_table()
        sw_kind = _K_CIOQ if self._cioq else _K_IQ
        self.switches = [Switch(s, topo.radix, routes[s]) for s in range(topo.num_switches)]
        self.nics = [Nic(n) for n in range(topo.num_nodes)]
        for nic in self.nics:
            nic.out = OutPort(_K_NIC, nic, 0, prop)
            nic.inp = InPort(nic, 0, cap, is_nic=True)
        for sw in self.switches:
            for p, q in enumerate(topo.peer[sw.sid]):
                if q is None:
                    continue
                sw.outputs[p] = OutPort(sw_kind, sw, p, prop)
                inp = InPort(sw, p, cap)
                inp.trk = self.occupancy.port((sw.sid, p), cap)
                sw.inputs[p] = inp
        for (ka, ia, pa), (kb, ib, pb) in topo.directed_links():
            out = self.nics[ia].out if ka == NIC else self.switches[ia].outputs[pa]
            inp = self.nics[ib].inp if kb == NIC else self.switches[ib].inputs[pb]
            out.peer = inp
            inp.upstream = out
            out.credits = inp.cap
        self.out_ports = [n.out for n in self.nics] + [o for s in self.switches for o in s.outputs if o is not None]

    def ser(self, wire: int) -> int:
        v = self._ser.get(wire)
        if v is None:
            v = self._ser[wire] = self.cfg.serialization_ns(wire)
        return v

    # -- session driving ------------------------------------------------------------

    def add_session(self, session: Session) -> None:
        for node in session.mapping.task_to_node:
            if not 0 <= node < self.topo.num_nodes:
                raise ValueError(f"session {session.session_id} maps a task to unknown node {node}")
        self.sessions.append(session)

    def _arm(self) -> None:
        best = None
        for s in self.sessions:
            t = s.next_event_time()
            if t is not None and (best is None or t < best):
                best = t
        if best is not None and best not in self._wakes:
            self._wakes.add(best)
            self.kernel.schedule(max(best, self.kernel.now), self._ev_pull)

    def _ev_pull(self) -> None:
        now = self.kernel.now
        self._wakes.discard(now)
        for s in self.sessions:
            t = s.next_event_time()
            if t is not None and t <= now:
                for m in s.next_ready_messages(now):
                    self.inject(m)
        self._arm()

    def run(self) -> RunResult:
        self._arm()
        end = self.kernel.run_until_idle()
        for s in self.sessions:
            if not s.is_finished():
                raise FabricError(
                    f"session {s.session_id} did not finish: {s.outstanding()} messages in flight, "
                    f"records {s.incomplete_records()[:5]} incomplete"
                )
        if self.packets_injected != self.packets_delivered:
            raise FabricError(f"{self.packets_injected} packets injected, {self.packets_delivered} delivered")
        self.verify_idle()
        return RunResult(
            execution_time_ns={s.session_id: s.elapsed() for s in self.sessions},
            fct=self.fct,
            occupancy=self.occupancy,
            end_time_ns=end,
            packets_injected=self.packets_injected,
            packets_delivered=self.packets_delivered,
            events=self.kernel.executed,
            per_session_messages={s.session_id: s.generated for s in self.sessions},
        )

    def verify_idle(self) -> None:
        """Every buffer empty and every credit returned once traffic has drained."""
        for out in self.out_ports:
            inp = out.peer
            if out.busy or inp.occ or inp.fifo:
                raise FabricError("fabric not idle after run")
            if self._credit and out.credits != inp.cap:
                raise FabricError(f"credits not restored on link into {inp.dev!r}:{inp.index}")

    # -- endpoints ----------------------------------------------------------------------

    def inject(self, msg: Message) -> None:
        """Queue a message at its source NIC for packetized transmission."""
        n = packet_count(msg.length_bytes, self.cfg.mtu_bytes)
        msg.net = [n, 0]
        self.packets_injected += n
        nic = self.nics[msg.src_node]
        nic.queue.append(msg)
        if not nic.out.busy:
            self._nic_try(nic, self.kernel.now)

    def _nic_try(self, nic: Nic, t: int) -> None:
        out = nic.out
        if out.busy or not nic.queue:
            return
        msg = nic.queue[0]
        cfg = self.cfg
        idx = nic.next_index
        payload = min(cfg.mtu_bytes, msg.length_bytes - idx * cfg.mtu_bytes)
        wire = (payload if cfg.variable_packet_size else cfg.mtu_bytes) + cfg.header_bytes
        if self._credit:
            if out.credits < wire:
                return
        elif out.paused:
            return
        last = idx == msg.net[0] - 1
        if last:
            nic.queue.popleft()
            nic.next_index = 0
        else:
            nic.next_index = idx + 1
        self._transmit(out, Packet(msg, idx, payload, wire, msg.dst_node, last), t)

    def _nic_receive(self, inp: InPort, pkt: Packet, t: int) -> None:
        inp.fifo.popleft()
        self._free_input(inp, pkt.wire, t)
        msg = pkt.msg
        self.packets_delivered += 1
        msg.net[1] += 1
        if msg.net[1] == msg.net[0]:
            self.fct.append(FctRecord(msg.msg_id, msg.length_bytes, msg.gen_time, t, msg.session_id))
            self._session(msg).notify_delivered(msg.msg_id, t)
            self._arm()

    def _session(self, msg: Message) -> Session:
        for s in self.sessions:
            if s.session_id == msg.session_id:
                return s
        raise KeyError(msg.session_id)

    # -- links and flow control ------------------------------------------------------------

    def _transmit(self, out: OutPort, pkt: Packet, t: int) -> None:
        wire = pkt.wire
        ser = self.ser(wire)
        out.busy = True
        out.cur = pkt
        out.busy_ns += ser
        out.tx_packets += 1
        out.tx_bytes += wire
        if self._credit:
            out.credits -= wire
            out.data_in_flight += wire
            if self.check:
                self._check_credit(out)
        k = self.kernel
        k.schedule(t + out.prop, self._ev_head, out, pkt)
        k.schedule(t + ser, self._ev_tx_end, out)
        k.schedule(t + ser + out.prop, self._ev_tail, out.peer, pkt)

    def _ev_head(self, out: OutPort, pkt: Packet) -> None:
        inp = out.peer
        inp.occ += pkt.wire
        if self._credit:
            out.data_in_flight -= pkt.wire
        t = self.kernel.now
        if inp.occ > inp.cap:
            raise FabricError(f"buffer overflow at {inp.dev!r} port {inp.index}: {inp.occ} > {inp.cap}")
        if inp.trk is not None:
            inp.trk.sample(t, inp.occ)
        if self._credit:
            if self.check:
                self._check_credit(out)
        elif not inp.xoff and inp.cap - inp.occ < self._xoff_free:
            inp.xoff = True
            self.kernel.schedule(t + out.prop, self._ev_pause, out, True)

    def _ev_tail(self, inp: InPort, pkt: Packet) -> None:
        t = self.kernel.now
        inp.fifo.append(pkt)
        if inp.is_nic:
            self._nic_receive(inp, pkt, t)
        elif len(inp.fifo) == 1:
            if self._cioq:
                self._cioq_pull(inp.dev, inp, t)
            else:
                self._iq_head(inp.dev, inp, t)

    def _free_input(self, inp: InPort, wire: int, t: int) -> None:
        inp.occ -= wire
        if inp.trk is not None:
            inp.trk.sample(t, inp.occ)
        up = inp.upstream
        if self._credit:
            up.credits_in_flight += wire
            self.kernel.schedule(t + up.prop, self._ev_credit, up, wire)
            if self.check:
                self._check_credit(up)
        elif inp.xoff and inp.cap - inp.occ >= self._xon_free:
            inp.xoff = False
            self.kernel.schedule(t + up.prop, self._ev_pause, up, False)

    def _ev_credit(self, out: OutPort, nbytes: int) -> None:
        out.credits += nbytes
        out.credits_in_flight -= nbytes
        if self.check:
            self._check_credit(out)
        if not out.busy:
            self._kick(out, self.kernel.now)

    def _ev_pause(self, out: OutPort, paused: bool) -> None:
        out.paused = paused
        if not paused and not out.busy:
            self._kick(out, self.kernel.now)

    def _check_credit(self, out: OutPort) -> None:
        inp = out.peer
        total = out.credits + out.data_in_flight + inp.occ + out.credits_in_flight
        if total != inp.cap or out.credits < 0:
            raise FabricError(
                f"credit conservation broken: credits {out.credits} + in-flight {out.data_in_flight} + "
                f"occupancy {inp.occ} + returning {out.credits_in_flight} != {inp.cap}"
            )

    def _kick(self, out: OutPort, t: int) -> None:
        if out.kind == _K_NIC:
            self._nic_try(out.dev, t)
        elif out.kind == _K_IQ:
            self._iq_try_output(out.dev, out.index, t)
        else:
            self._cioq_try_tx(out.dev, out.index, t)

    def _ev_tx_end(self, out: OutPort) -> None:
        t = self.kernel.now
        out.busy = False
        pkt = out.cur
        out.cur = None
        kind = out.kind
        if kind == _K_NIC:
            if pkt.last:
                msg = pkt.msg
                self._session(msg).notify_send_complete(msg.msg_id, t)
                self._arm()
            self._nic_try(out.dev, t)
        elif kind == _K_IQ:
            sw = out.dev
            inp = sw.inputs[out.src_input]
            inp.fifo.popleft()
            inp.busy = False
            self._free_input(inp, pkt.wire, t)
            if inp.fifo:
                self._iq_head(sw, inp, t)
            self._iq_try_output(sw, out.index, t)
        else:
            sw = out.dev
            o = out.index
            sw.out_fifo[o].popleft()
            sw.out_occ[o] -= pkt.wire
            self._cioq_refill(sw, o, t)
            self._cioq_try_tx(sw, o, t)

    # -- input-queued switch -------------------------------------------------------------------

    def _rr_pick(self, sw: Switch, o: int) -> int:
        w = sw.waiting[o]
        if len(w) == 1:
            return w[0]
        r = sw.rr[o]
        radix = sw.radix
        return min(w, key=lambda p: (p - r - 1) % radix)

    def _iq_head(self, sw: Switch, inp: InPort, t: int) -> None:
        o = sw.routes[inp.fifo[0].dst]
        sw.waiting[o].append(inp.index)
        self._iq_try_output(sw, o, t)

    def _iq_try_output(self, sw: Switch, o: int, t: int) -> None:
        out = sw.outputs[o]
        if out.busy or not sw.waiting[o]:
            return
        p = self._rr_pick(sw, o)
        inp = sw.inputs[p]
        pkt = inp.fifo[0]
        if self._credit:
            if out.credits < pkt.wire:
                return
        elif out.paused:
            return
        sw.waiting[o].remove(p)
        sw.rr[o] = p
        inp.busy = True
        out.src_input = p
        self._transmit(out, pkt, t)

    # -- combined input-output-queued switch -----------------------------------------------------

    def _cioq_move(self, sw: Switch, inp: InPort, o: int, t: int) -> None:
        pkt = inp.fifo.popleft()
        self._free_input(inp, pkt.wire, t)
        sw.out_fifo[o].append(pkt)
        sw.out_occ[o] += pkt.wire

    def _cioq_pull(self, sw: Switch, inp: InPort, t: int) -> None:
        cap = self.cfg.output_buffer_bytes
        while inp.fifo:
            pkt = inp.fifo[0]
            o = sw.routes[pkt.dst]
            if sw.waiting[o] or sw.out_occ[o] + pkt.wire > cap:
                sw.waiting[o].append(inp.index)
                return
            self._cioq_move(sw, inp, o, t)
            self._cioq_try_tx(sw, o, t)

    def _cioq_refill(self, sw: Switch, o: int, t: int) -> None:
        cap = self.cfg.output_buffer_bytes
        w = sw.waiting[o]
        while w:
            p = self._rr_pick(sw, o)
            inp = sw.inputs[p]
            if sw.out_occ[o] + inp.fifo[0].wire > cap:
                return
            w.remove(p)
            sw.rr[o] = p
            self._cioq_move(sw, inp, o, t)
            self._cioq_pull(sw, inp, t)

    def _cioq_try_tx(self, sw: Switch, o: int, t: int) -> None:
        out = sw.outputs[o]
        fifo = sw.out_fifo[o]
        if out.busy or not fifo:
            return
        pkt = fifo[0]
        if self._credit:
            if out.credits < pkt.wire:
                return
        elif out.paused:
            return
        self._transmit(out, pkt, t)


def simulate(
    topology: Topology,
    config: NetworkConfig,
    sessions: list[Session],
    occupancy_window_ns: int = DEFAULT_WINDOW_NS,
    check_invariants: bool = False,
) -> RunResult:
    fab = Fabric(topology, config, occupancy_window_ns, check_invariants)
    for s in sessions:
        fab.add_session(s)
    return fab.run()
