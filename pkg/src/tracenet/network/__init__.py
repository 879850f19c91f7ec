from .config import CONFIG1, CONFIG2, FlowControl, NetworkConfig, SwitchArch, preset
from .fabric import Fabric, FabricError, Packet, RunResult, packetize, simulate
from .topology import Topology, build_fat_tree, build_megafly, build_topology, route_next_hop

__all__ = [
    "CONFIG1",
    "CONFIG2",
    "Fabric",
    "FabricError",
    "FlowControl",
    "NetworkConfig",
    "Packet",
    "RunResult",
    "SwitchArch",
    "Topology",
    "build_fat_tree",
    "build_megafly",
    "build_topology",
    "packetize",
    "preset",
    "route_next_hop",
    "simulate",
]
