"""Switch / flow-control configurations."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from fractions import Fraction

from ..kernel import round_half_up

KIB = 1024


class SwitchArch(enum.Enum):
    CIOQ = "CIOQ"
    IQ = "IQ"


class FlowControl(enum.Enum):
    PFC = "PFC"
    CREDIT = "CREDIT"


@dataclass(frozen=True)
class NetworkConfig:
    switch_arch: SwitchArch
    input_buffer_bytes: int
    output_buffer_bytes: int | None
    flow_control: FlowControl
    mtu_bytes: int
    variable_packet_size: bool
    link_bandwidth_gbps: float
    link_length_m: float
    link_latency_ns_per_m: float
    num_virtual_channels: int = 1
    header_bytes: int = 0

    def __post_init__(self):
        if self.switch_arch is SwitchArch.CIOQ and not self.output_buffer_bytes:
            raise ValueError("CIOQ needs an output buffer")
        if self.mtu_bytes <= 0 or self.input_buffer_bytes < self.mtu_bytes + self.header_bytes:
            raise ValueError("input buffer must hold at least one MTU packet")
        if self.num_virtual_channels != 1:
            raise ValueError("only one virtual channel is modelled")
        if self.link_bandwidth_gbps <= 0:
            raise ValueError("link bandwidth must be positive")

    @property
    def propagation_ns(self) -> int:
        return round_half_up(Fraction(str(self.link_length_m)) * Fraction(str(self.link_latency_ns_per_m)))

    def serialization_exact(self, wire_bytes: int) -> Fraction:
        return Fraction(wire_bytes * 8) / Fraction(str(self.link_bandwidth_gbps))

    def serialization_ns(self, wire_bytes: int) -> int:
        """Wire time of ``wire_bytes`` in ns: exact byte time rounded half-up."""
        return round_half_up(self.serialization_exact(wire_bytes))

    @property
    def max_packet_bytes(self) -> int:
        return self.mtu_bytes + self.header_bytes

    @property
    def pfc_xoff_free_bytes(self) -> int:
        """Assert XOFF once free input space drops below this many bytes.

        Two MTUs for the presets. The headroom is widened when the bytes a
        sender can push in one round trip exceed one MTU, so a paused link
        can never overflow the buffer.
        """
        rtt_bytes = -(-2 * self.propagation_ns * Fraction(str(self.link_bandwidth_gbps)) // 8)
        return self.max_packet_bytes + max(self.max_packet_bytes, int(rtt_bytes))

    @property
    def pfc_xon_free_bytes(self) -> int:
        return self.pfc_xoff_free_bytes + 2 * self.max_packet_bytes

    def with_overrides(self, **overrides) -> "NetworkConfig":
        fields = {f.name: f for f in dataclasses.fields(self)}
        clean = {}
        for key, value in overrides.items():
            if key not in fields:
                raise ValueError(f"unknown network config field {key!r}")
            clean[key] = coerce_field(key, value)
        return dataclasses.replace(self, **clean)


_FIELD_TYPES = {
    "switch_arch": SwitchArch,
    "flow_control": FlowControl,
    "input_buffer_bytes": int,
    "output_buffer_bytes": int,
    "mtu_bytes": int,
    "variable_packet_size": bool,
    "link_bandwidth_gbps": float,
    "link_length_m": float,
    "link_latency_ns_per_m": float,
    "num_virtual_channels": int,
    "header_bytes": int,
}


def coerce_field(name: str, value):
    """Convert a textual override to the field's type (raises ValueError)."""
    typ = _FIELD_TYPES[name]
    if not isinstance(value, str):
        return typ(value) if typ is not bool else bool(value)
    v = value.strip()
    if typ is bool:
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {value!r}")
    if issubclass(typ, enum.Enum):
        return typ(v.upper())
    if name == "output_buffer_bytes" and v.lower() in ("", "none", "-"):
        return None
    try:
        return typ(v)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {value!r} as {typ.__name__}") from None


CONFIG1 = NetworkConfig(
    switch_arch=SwitchArch.CIOQ,
    input_buffer_bytes=128 * KIB,
    output_buffer_bytes=48 * KIB,
    flow_control=FlowControl.PFC,
    mtu_bytes=9600,
    variable_packet_size=True,
    link_bandwidth_gbps=400,
    link_length_m=3,
    link_latency_ns_per_m=5,
    num_virtual_channels=1,
)

CONFIG2 = NetworkConfig(
    switch_arch=SwitchArch.IQ,
    input_buffer_bytes=128 * KIB,
    output_buffer_bytes=None,
    flow_control=FlowControl.CREDIT,
    mtu_bytes=4096,
    variable_packet_size=False,
    link_bandwidth_gbps=100,
    link_length_m=3,
    link_latency_ns_per_m=5,
    num_virtual_channels=1,
)

PRESETS = {"config1": CONFIG1, "config2": CONFIG2}


def preset(name: str) -> NetworkConfig:
    key = str(name).lower()
    if key in ("1", "2", "#1", "#2"):
        key = "config" + key.lstrip("#")
    if key not in PRESETS:
        raise ValueError(f"unknown network preset {name!r} (choose config1 or config2)")
    return PRESETS[key]
