"""Fat-Tree and Megafly topologies with D-mod-K deterministic routing.

Switch ports are numbered per switch. Endpoints are ``("nic", n, 0)`` or
``("sw", s, port)``; every physical cable appears as two directed links.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

NIC = "nic"
SW = "sw"


class RoutingError(LookupError):
    pass


@dataclass(frozen=True)
class SwitchInfo:
    switch_id: int
    role: str  # "leaf" or "spine"
    group: int  # Megafly group; 0 for the fat tree
    index: int  # position within its role (fat tree) or within its group (Megafly)
    radix: int


@dataclass
class Topology:
    name: str
    kind: str
    num_nodes: int
    radix: int
    switches: list[SwitchInfo]
    # peer[s][p] = (endpoint kind, id, port) for connected ports, None for unused ones
    peer: list[list[tuple[str, int, int] | None]]
    nic_attach: list[tuple[int, int]]  # node -> (switch, port)
    params: dict = field(default_factory=dict)
    _routes: list[list[int]] | None = field(default=None, repr=False)

    @property
    def num_switches(self) -> int:
        return len(self.switches)

    def ports_used(self) -> int:
        return sum(p is not None for ports in self.peer for p in ports)

    def leaves(self) -> list[int]:
        return [s.switch_id for s in self.switches if s.role == "leaf"]

    def terminals_per_leaf(self) -> int:
        return self.params["terminals_per_leaf"]

    def directed_links(self):
        """All directed links as ((kind, id, port), (kind, id, port))."""
        for n, (s, p) in enumerate(self.nic_attach):
            yield (NIC, n, 0), (SW, s, p)
        for s, ports in enumerate(self.peer):
            for p, q in enumerate(ports):
                if q is not None:
                    yield (SW, s, p), q

    def route(self, switch: int, dst_node: int) -> int:
        return route_next_hop(self, switch, dst_node)

    def routing_table(self) -> list[list[int]]:
        """routes[s][dst] = output port; computed once."""
        if self._routes is None:
            self._routes = [[route_next_hop(self, s, d) for d in range(self.num_nodes)] for s in range(self.num_switches)]
        return self._routes

    def path(self, src_node: int, dst_node: int) -> list[int]:
        """Switches visited by a packet from src to dst under the routing function."""
        s, _ = self.nic_attach[src_node]
        visited = [s]
        for _ in range(2 * self.num_switches):
            p = route_next_hop(self, s, dst_node)
            kind, ident, _ = self.peer[s][p]
            if kind == NIC:
                if ident != dst_node:
                    raise RoutingError(f"misrouted to node {ident}")
                return visited
            s = ident
            visited.append(s)
        raise RoutingError("routing loop")

    def switch_graph(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {s: set() for s in range(self.num_switches)}
        for s, ports in enumerate(self.peer):
            for q in ports:
                if q is not None and q[0] == SW:
                    adj[s].add(q[1])
        return adj

    def diameter(self) -> int:
        """Largest number of switches on a shortest terminal-to-terminal path (BFS)."""
        adj = self.switch_graph()
        leaves = sorted({s for s, _ in self.nic_attach})
        best = 0
        for src in leaves:
            dist = {src: 0}
            q = deque([src])
            while q:
                u = q.popleft()
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        q.append(v)
            best = max(best, max(dist[leaf] for leaf in leaves) + 1)
        return best


def _connect(peer, a: tuple[int, int], b: tuple[int, int]) -> None:
    (sa, pa), (sb, pb) = a, b
    assert peer[sa][pa] is None and peer[sb][pb] is None, (a, b)
    peer[sa][pa] = (SW, sb, pb)
    peer[sb][pb] = (SW, sa, pa)


def build_fat_tree(num_leaves: int = 16, terminals_per_leaf: int = 16, radix: int = 32) -> Topology:
    """Two-level fat tree; defaults give the 256-terminal preset.

    Leaf l: down-ports 0..k-1 host nodes k*l..k*l+k-1, up-port u (physical
    port k+u) goes to spine u, arriving on the spine's down-port l.
    """
    k = terminals_per_leaf
    num_spines = k
    switches = [SwitchInfo(l, "leaf", 0, l, radix) for l in range(num_leaves)]
    switches += [SwitchInfo(num_leaves + u, "spine", 0, u, radix) for u in range(num_spines)]
    peer: list[list] = [[None] * radix for _ in switches]
    nic_attach = []
    for l in range(num_leaves):
        for i in range(k):
            n = k * l + i
            peer[l][i] = (NIC, n, 0)
            nic_attach.append((l, i))
        for u in range(num_spines):
            _connect(peer, (l, k + u), (num_leaves + u, l))
    return Topology(
        name="fat-tree-256" if (num_leaves, k, radix) == (16, 16, 32) else f"fat-tree-{num_leaves * k}",
        kind="fat-tree",
        num_nodes=num_leaves * k,
        radix=radix,
        switches=switches,
        peer=peer,
        nic_attach=nic_attach,
        params={"num_leaves": num_leaves, "terminals_per_leaf": k, "num_spines": num_spines},
    )


def build_megafly(
    num_groups: int = 9, leaves_per_group: int = 4, spines_per_group: int = 4, terminals_per_leaf: int = 8
) -> Topology:
    """Megafly (Dragonfly+) with parallel leaf-spine links; defaults give megafly-288.

    Leaf ports: 0..T-1 terminals, then T + m*s + j for parallel link j to local
    spine s (m = parallel links per pair). Spine ports: m*l + j down to leaf l,
    then L*m + (h - g - 1) mod G as the global link toward group h. Spine s of
    each group pairs with spine s of every other group.
    """
    G, L, S, T = num_groups, leaves_per_group, spines_per_group, terminals_per_leaf
    m = T // S  # parallel links between each leaf/spine pair
    assert m * S == T, "leaf uplinks must match terminal count"
    leaf_radix = T + S * m
    spine_radix = L * m + (G - 1)
    radix = max(leaf_radix, spine_radix)
    num_leaves = G * L
    switches = [SwitchInfo(g * L + l, "leaf", g, l, radix) for g in range(G) for l in range(L)]
    switches += [SwitchInfo(num_leaves + g * S + s, "spine", g, s, radix) for g in range(G) for s in range(S)]
    peer: list[list] = [[None] * radix for _ in switches]
    nic_attach = []
    for leaf in range(num_leaves):
        for i in range(T):
            n = T * leaf + i
            peer[leaf][i] = (NIC, n, 0)
            nic_attach.append((leaf, i))
    for g in range(G):
        for l in range(L):
            for s in range(S):
                for j in range(m):
                    _connect(peer, (g * L + l, T + m * s + j), (num_leaves + g * S + s, m * l + j))
    for g in range(G):
        for h in range(g + 1, G):
            for s in range(S):
                a = (num_leaves + g * S + s, L * m + (h - g - 1) % G)
                b = (num_leaves + h * S + s, L * m + (g - h - 1) % G)
                _connect(peer, a, b)
    default = (G, L, S, T) == (9, 4, 4, 8)
    return Topology(
        name="megafly-288" if default else f"megafly-{num_leaves * T}",
        kind="megafly",
        num_nodes=num_leaves * T,
        radix=radix,
        switches=switches,
        peer=peer,
        nic_attach=nic_attach,
        params={
            "num_groups": G,
            "leaves_per_group": L,
            "spines_per_group": S,
            "terminals_per_leaf": T,
            "parallel_links": m,
            "num_leaves": num_leaves,
        },
    )


TOPOLOGIES = {"fat-tree-256": build_fat_tree, "megafly-288": build_megafly}


def build_topology(name: str) -> Topology:
    try:
        return TOPOLOGIES[name]()
    except KeyError:
        raise ValueError(f"unknown topology {name!r} (choose {', '.join(TOPOLOGIES)})") from None


def route_next_hop(topo: Topology, switch: int, dst_node: int) -> int:
    """D-mod-K output port at ``switch`` for a packet headed to ``dst_node``."""
    if not 0 <= dst_node < topo.num_nodes:
        raise RoutingError(f"unreachable destination {dst_node}")
    info = topo.switches[switch]
    if topo.kind == "fat-tree":
        k = topo.params["terminals_per_leaf"]
        if info.role == "leaf":
            if dst_node // k == info.index:
                return dst_node % k
            return k + dst_node % topo.params["num_spines"]
        return dst_node // k

    p = topo.params
    T, L, S, m, G = p["terminals_per_leaf"], p["leaves_per_group"], p["spines_per_group"], p["parallel_links"], p["num_groups"]
    dst_leaf = dst_node // T
    dst_group = dst_leaf // L
    link = (dst_node // S) % m
    if info.role == "leaf":
        if dst_leaf == switch:
            return dst_node % T
        return T + m * (dst_node % S) + link
    if dst_group == info.group:
        return m * (dst_leaf % L) + link
    return L * m + (dst_group - info.group - 1) % G
