"""Network model: buses, branches, admittances and PMU placement.

The grid is read from an IEEE Common Data Format (CDF) file, the legacy
fixed-column text format in which the 14-bus benchmark is distributed.
Only topology and branch parameters are used; loads and generators are
ignored (operating points come from scenario files).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Legacy CDF files often leave the base-kV column at 0; per-unit work never
# touches it, so 0 is mapped to this stand-in to keep Bus invariants whole.
DEFAULT_BASE_KV = 100.0


class CdfParseError(ValueError):
    """Malformed CDF record; carries the 1-based source line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GridValidationError(ValueError):
    """Structurally valid input describing an inconsistent network."""


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    base_kv: float

    def __post_init__(self) -> None:
        if self.id <= 0:
            raise GridValidationError(f"bus id {self.id} must be positive")
        if self.base_kv <= 0:
            raise GridValidationError(f"bus {self.id}: base_kv must be > 0")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_total: float = 0.0
    tap: float = 1.0

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise GridValidationError(f"branch {self.from_bus}-{self.to_bus} is a self-loop")
        if self.r == 0.0 and self.x == 0.0:
            raise GridValidationError(
                f"branch {self.from_bus}-{self.to_bus} has zero impedance"
            )
        if self.tap <= 0:
            raise GridValidationError(
                f"branch {self.from_bus}-{self.to_bus}: tap {self.tap} must be > 0"
            )

    def touches(self, node: int) -> bool:
        return node in (self.from_bus, self.to_bus)

    def other_end(self, node: int) -> int:
        if node == self.from_bus:
            return self.to_bus
        if node == self.to_bus:
            return self.from_bus
        raise ValueError(f"bus {node} is not an endpoint of {self.from_bus}-{self.to_bus}")


class GridModel:
    """Immutable bus/branch network; safe for concurrent read access."""

    def __init__(self, buses: list[Bus] | tuple[Bus, ...], branches: list[Branch] | tuple[Branch, ...]):
        self.buses = tuple(buses)
        self.branches = tuple(branches)
        self._by_id = {b.id: b for b in self.buses}
        if len(self._by_id) != len(self.buses):
            raise GridValidationError("duplicate bus ids")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._by_id:
                    raise GridValidationError(
                        f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}"
                    )

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    def bus(self, node: int) -> Bus:
        try:
            return self._by_id[node]
        except KeyError:
            raise GridValidationError(f"unknown bus {node}") from None

    def degree(self, node: int) -> int:
        return len(incident_branches(self, node))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, GridModel)
            and self.buses == other.buses
            and self.branches == other.branches
        )

    def __repr__(self) -> str:
        return f"GridModel({len(self.buses)} buses, {len(self.branches)} branches)"


def _parse_float(token: str, line_no: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise CdfParseError(line_no, f"bad {what} value {token!r}") from None


def _parse_bus_record(line: str, line_no: int) -> Bus:
    try:
        bus_id = int(line[0:4])
    except ValueError:
        raise CdfParseError(line_no, f"bad bus number {line[0:4]!r}") from None
    name = line[5:17].strip()
    rest = line[17:].split()
    if len(rest) < 10:
        raise CdfParseError(line_no, "truncated bus record")
    base_kv = _parse_float(rest[9], line_no, "base kV")
    if base_kv <= 0:
        base_kv = DEFAULT_BASE_KV
    return Bus(id=bus_id, name=name or f"Bus {bus_id}", base_kv=base_kv)


def _parse_branch_record(line: str, line_no: int) -> Branch:
    fields = line.split()
    if len(fields) < 15:
        raise CdfParseError(line_no, "truncated branch record")
    try:
        from_bus, to_bus = int(fields[0]), int(fields[1])
    except ValueError:
        raise CdfParseError(line_no, "bad branch endpoints") from None
    r = _parse_float(fields[6], line_no, "resistance")
    x = _parse_float(fields[7], line_no, "reactance")
    b = _parse_float(fields[8], line_no, "charging susceptance")
    tap = _parse_float(fields[14], line_no, "turns ratio")
    if tap == 0.0:
        tap = 1.0
    try:
        return Branch(from_bus=from_bus, to_bus=to_bus, r=r, x=x, b_total=b, tap=tap)
    except GridValidationError as exc:
        raise CdfParseError(line_no, str(exc)) from None


def parse_cdf(text: str) -> GridModel:
    """Parse the bus and branch sections of a CDF document.

    Sections are the 'BUS DATA FOLLOWS' / 'BRANCH DATA FOLLOWS' card decks,
    each terminated by a -999 card.  Both must be present.
    """
    buses: list[Bus] = []
    branches: list[Branch] = []
    section = None
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        upper = stripped.upper()
        if upper.startswith("BUS DATA FOLLOWS"):
            section = "bus"
            seen.add("bus")
            continue
        if upper.startswith("BRANCH DATA FOLLOWS"):
            section = "branch"
            seen.add("branch")
            continue
        if stripped.startswith(("-999", "-9")) and not stripped.startswith("-9."):
            section = None
            continue
        if upper.startswith("END OF DATA"):
            break
        if section == "bus":
            buses.append(_parse_bus_record(line, line_no))
        elif section == "branch":
            branches.append(_parse_branch_record(line, line_no))
    if "bus" not in seen:
        raise CdfParseError(0, "missing BUS DATA section")
    if "branch" not in seen:
        raise CdfParseError(0, "missing BRANCH DATA section")
    return GridModel(buses, branches)


def branch_admittance(branch: Branch) -> tuple[complex, complex, complex]:
    """Series and shunt admittances of the branch pi equivalent.

    For tap ratio t on the from side, the two-port reads
        I_from = (y + jb/2)/t^2 * V_from - (y/t) * V_to
        I_to   = -(y/t) * V_from + (y + jb/2) * V_to
    returned here as (series, shunt_from, shunt_to) with
    series = y/t, so that I_from = series*(V_from - V_to) + shunt_from*V_from.
    """
    z = complex(branch.r, branch.x)
    if z == 0:
        raise GridValidationError(
            f"branch {branch.from_bus}-{branch.to_bus} has zero impedance"
        )
    y = 1.0 / z
    half_charge = complex(0.0, branch.b_total / 2.0)
    t = branch.tap
    series = y / t
    shunt_from = (y + half_charge) / (t * t) - series
    shunt_to = (y + half_charge) - series
    return series, shunt_from, shunt_to


def incident_branches(grid: GridModel, node: int) -> list[Branch]:
    """Branches touching `node`, sorted by (from, to) endpoints."""
    grid.bus(node)
    found = [br for br in grid.branches if br.touches(node)]
    found.sort(key=lambda br: (br.from_bus, br.to_bus))
    return found


@dataclass(frozen=True)
class Descriptor:
    """One measured quantity: a node voltage or a branch current.

    Currents are directed: `bus` is the monitored end at which the branch
    current is taken, so the same branch seen from both ends yields two
    distinct descriptors.
    """

    kind: str  # "voltage" | "current"
    bus: int
    branch: Branch | None = None

    @classmethod
    def voltage_at(cls, bus: int) -> "Descriptor":
        return cls(kind="voltage", bus=bus)

    @classmethod
    def current_on(cls, branch: Branch, at_bus: int) -> "Descriptor":
        if not branch.touches(at_bus):
            raise ValueError(f"bus {at_bus} not on branch {branch.from_bus}-{branch.to_bus}")
        return cls(kind="current", bus=at_bus, branch=branch)

    def label(self) -> str:
        if self.kind == "voltage":
            return f"V{self.bus}"
        assert self.branch is not None
        return f"I{self.bus}-{self.branch.other_end(self.bus)}"


@dataclass(frozen=True)
class PmuPlacement:
    """Descriptors packed into per-node PMUs of fixed channel capacity."""

    monitored_nodes: frozenset[int]
    channels_per_pmu: int
    assignments: dict[int, tuple[tuple[Descriptor, ...], ...]]

    def pmu_count(self, node: int | None = None) -> int:
        if node is not None:
            return len(self.assignments[node])
        return sum(len(pmus) for pmus in self.assignments.values())

    def node_descriptors(self, node: int) -> tuple[Descriptor, ...]:
        return tuple(d for pmu in self.assignments[node] for d in pmu)

    def all_descriptors(self) -> tuple[Descriptor, ...]:
        """Every descriptor, nodes in ascending order, PMU packing order."""
        out: list[Descriptor] = []
        for node in sorted(self.assignments):
            out.extend(self.node_descriptors(node))
        return tuple(out)


def build_placement(
    grid: GridModel, monitored: set[int] | frozenset[int], channels_per_pmu: int
) -> PmuPlacement:
    """Assign each monitored node its voltage plus all incident currents.

    Descriptors are packed greedily, voltage first then branch currents in
    (from, to) order, into PMUs holding at most `channels_per_pmu` each, so
    placements are reproducible.
    """
    if channels_per_pmu < 1:
        raise ValueError("channels_per_pmu must be >= 1")
    assignments: dict[int, tuple[tuple[Descriptor, ...], ...]] = {}
    for node in sorted(monitored):
        grid.bus(node)  # raises for unknown ids
        descriptors = [Descriptor.voltage_at(node)]
        descriptors += [
            Descriptor.current_on(br, node) for br in incident_branches(grid, node)
        ]
        pmus = [
            tuple(descriptors[i : i + channels_per_pmu])
            for i in range(0, len(descriptors), channels_per_pmu)
        ]
        assignments[node] = tuple(pmus)
    return PmuPlacement(
        monitored_nodes=frozenset(monitored),
        channels_per_pmu=channels_per_pmu,
        assignments=assignments,
    )


def expected_pmu_count(grid: GridModel, node: int, channels_per_pmu: int) -> int:
    """ceil((1 + degree) / channels): voltage plus one current per branch."""
    return math.ceil((1 + grid.degree(node)) / channels_per_pmu)
