"""Four-terminal meshed test grid built from averaged converters and pi-section cables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import Pole
from .network import GROUND, Network

POLES = (Pole.POSITIVE, Pole.NEGATIVE)
_TAG = {Pole.POSITIVE: "p", Pole.NEGATIVE: "n"}
_SIGN = {Pole.POSITIVE: 1.0, Pole.NEGATIVE: -1.0}


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ConverterModel:
    name: str
    rated_mva: float
    c_arm: float  # F
    l_arm: float  # H
    r_arm: float  # ohm
    v_dc_kv: float = 320.0

    @property
    def series_r(self) -> float:
        return 2.0 / 3.0 * self.r_arm

    @property
    def series_l(self) -> float:
        return 2.0 / 3.0 * self.l_arm

    @property
    def terminal_c(self) -> float:
        return 6.0 * self.c_arm

    @property
    def rated_current_ka(self) -> float:
        return self.rated_mva / (2.0 * self.v_dc_kv)


def table2_converters() -> tuple[ConverterModel, ...]:
    small = dict(rated_mva=900.0, c_arm=29.3e-6, l_arm=84.8e-3, r_arm=0.885)
    return (
        ConverterModel("T1", **small),
        ConverterModel("T2", **small),
        ConverterModel("T3", **small),
        ConverterModel("T4", rated_mva=1200.0, c_arm=39e-6, l_arm=63.6e-3, r_arm=0.67),
    )


@dataclass(frozen=True)
class CableModel:
    r_per_km: float = 0.011
    l_per_km: float = 0.151e-3
    c_per_km: float = 0.146e-6
    section_km: float = 10.0

    @property
    def delay_per_km(self) -> float:
        return math.sqrt(self.l_per_km * self.c_per_km)

    @property
    def wave_speed(self) -> float:
        """km/s"""
        return 1.0 / self.delay_per_km

    @property
    def surge_impedance(self) -> float:
        return math.sqrt(self.l_per_km / self.c_per_km)

    def sections(self, length_km: float) -> int:
        n = length_km / self.section_km
        if n < 1 or abs(n - round(n)) > 1e-9:
            raise ConfigurationError(
                f"section length {self.section_km} km does not divide line length {length_km} km"
            )
        return int(round(n))


@dataclass(frozen=True)
class GridTopology:
    """Terminal 1 is the dc-voltage master; the others inject fixed currents [kA]."""

    converters: tuple[ConverterModel, ...] = field(default_factory=table2_converters)
    lines: tuple[tuple[str, int, int, float], ...] = (
        ("Line12", 1, 2, 100.0),
        ("Line34", 3, 4, 100.0),
        ("Line13", 1, 3, 200.0),
        ("Line14", 1, 4, 200.0),
        ("Line24", 2, 4, 150.0),
    )
    injections_ka: tuple[float, ...] = (0.0, -0.6, -1.3, 0.5)
    reactor_h: float = 50e-3
    ground_r: float = 0.1

    def __post_init__(self):
        if len(self.converters) != 4:
            raise ConfigurationError("the test grid has exactly four terminals")
        links = sorted(tuple(sorted((a, b))) for _, a, b, _ in self.lines)
        if links != [(1, 2), (1, 3), (1, 4), (2, 4), (3, 4)]:
            raise ConfigurationError(f"unexpected connectivity {links}")

    @property
    def line_lengths(self) -> dict[str, float]:
        return {name: length for name, _, _, length in self.lines}

    def line(self, name: str) -> tuple[str, int, int, float]:
        for rec in self.lines:
            if rec[0] == name:
                return rec
        raise ConfigurationError(f"unknown line {name!r}")


@dataclass(frozen=True)
class FaultTap:
    """Fault switch closing at ``t_on`` at the pi-node nearest ``location_km``.

    ``pole=None`` connects the two poles; otherwise the pole goes to ground.
    """

    line: str
    location_km: float
    resistance: float
    t_on: float
    pole: Optional[Pole] = None


R_SWITCH_ON = 1e-3


def bus(term: int, pole: Pole) -> str:
    return f"T{term}.bus{_TAG[pole]}"


def line_node(line: str, pole: Pole, j: int) -> str:
    return f"{line}.{_TAG[pole]}{j}"


@dataclass
class Grid:
    topology: GridTopology
    cable: CableModel
    net: Network
    sections: dict[str, int]
    reactor_branch: dict[tuple[str, int, Pole], int]
    fault_switches: list[tuple[int, FaultTap]]
    snapped_km: list[float]

    def end_node(self, line: str, term: int, pole: Pole) -> str:
        _, a, b, _ = self.topology.line(line)
        if term == a:
            return line_node(line, pole, 0)
        if term == b:
            return line_node(line, pole, self.sections[line])
        raise ConfigurationError(f"terminal {term} is not an end of {line}")

    def sensor_map(self, line: str, term: int):
        """Branch and node indices feeding the six relay channels.

        Returns (reactor branch per pole, line-end node per pole, bus node per pole).
        """
        branches = [self.reactor_branch[(line, term, p)] for p in POLES]
        ends = [self.net.index(self.end_node(line, term, p)) for p in POLES]
        buses = [self.net.index(bus(term, p)) for p in POLES]
        return branches, ends, buses


def snap_section(location_km: float, length_km: float, section_km: float) -> int:
    n = int(round(length_km / section_km))
    j = int(math.floor(location_km / section_km + 0.5))
    return min(max(j, 0), n)


def build_grid(topology: Optional[GridTopology] = None, cable: Optional[CableModel] = None,
               faults: tuple[FaultTap, ...] = ()) -> Grid:
    topology = topology or GridTopology()
    cable = cable or CableModel()
    net = Network()
    sections = {name: cable.sections(length) for name, _, _, length in topology.lines}

    for k, conv in enumerate(topology.converters, start=1):
        mid = f"T{k}.mid"
        net.add_resistor(mid, GROUND, topology.ground_r, name=f"T{k}.ground")
        for pole in POLES:
            sgn = _SIGN[pole]
            b = bus(k, pole)
            net.add_capacitor(b, mid, conv.terminal_c, name=f"T{k}.C{_TAG[pole]}")
            if k == 1:
                src = f"T{k}.src{_TAG[pole]}"
                net.add_vsource(src, mid, sgn * conv.v_dc_kv * 1e3, name=f"T{k}.E{_TAG[pole]}")
                net.add_rl(src, b, conv.series_r, conv.series_l, name=f"T{k}.Z{_TAG[pole]}")
            else:
                net.add_isource(b, sgn * topology.injections_ka[k - 1] * 1e3, ret=mid,
                                name=f"T{k}.I{_TAG[pole]}")

    r_sec = cable.r_per_km * cable.section_km
    l_sec = cable.l_per_km * cable.section_km
    c_sec = cable.c_per_km * cable.section_km
    reactor_branch = {}
    for name, a, b, _length in topology.lines:
        n = sections[name]
        for pole in POLES:
            for j in range(n + 1):
                c = c_sec if 0 < j < n else 0.5 * c_sec
                net.add_capacitor(line_node(name, pole, j), GROUND, c)
            for j in range(n):
                net.add_rl(line_node(name, pole, j), line_node(name, pole, j + 1), r_sec, l_sec)
            reactor_branch[(name, a, pole)] = net.add_inductor(
                bus(a, pole), line_node(name, pole, 0), topology.reactor_h, name=f"{name}.{_TAG[pole]}@T{a}")
            reactor_branch[(name, b, pole)] = net.add_inductor(
                bus(b, pole), line_node(name, pole, n), topology.reactor_h, name=f"{name}.{_TAG[pole]}@T{b}")

    fault_switches = []
    snapped = []
    for tap in faults:
        length = topology.line(tap.line)[3]
        if not 0 <= tap.location_km <= length:
            raise ConfigurationError(f"fault location {tap.location_km} km outside {tap.line}")
        j = snap_section(tap.location_km, length, cable.section_km)
        snapped.append(j * cable.section_km)
        r = max(tap.resistance, 0.0) + R_SWITCH_ON
        if tap.pole is None:
            idx = net.add_switch(line_node(tap.line, Pole.POSITIVE, j), line_node(tap.line, Pole.NEGATIVE, j),
                                 r, name=f"fault:{tap.line}@{j}")
        else:
            idx = net.add_switch(line_node(tap.line, tap.pole, j), GROUND, r, name=f"fault:{tap.line}@{j}")
        fault_switches.append((idx, tap))

    return Grid(topology, cable, net, sections, reactor_branch, fault_switches, snapped)
