"""Synchronized PMU emulator fed by a pre-stored operating point.

All emulators draw timestamps from the same reporting grid, which models a
shared GPS clock; at a given instant every streaming PMU stamps the same
(soc, fracsec).  Measurements are the exact network quantities plus
optional zero-mean Gaussian noise per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .codec import (
    TIME_BASE,
    CMD_DATA_OFF,
    CMD_DATA_ON,
    CommandFrame,
    DataFrame,
    FrameFormat,
    PmuBlock,
    Timestamp,
)
from .grid import Descriptor, GridModel, branch_admittance

SUPPORTED_RATES = (10, 25, 50)

# one measured quantity expands to this many frame phasors:
#   bare - the single positive-sequence equivalent value
#   A    - a three-phase set (typical PMU channel)
#   B    - three phases plus positive/negative/zero sequences
CHANNEL_EXPANSION = {"bare": 1, "A": 3, "B": 6}

_ROT_B = complex(-0.5, -(3.0**0.5) / 2.0)  # e^{-j 2pi/3}
_ROT_C = complex(-0.5, +(3.0**0.5) / 2.0)  # e^{+j 2pi/3}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Pre-stored operating point: bus voltages plus a frequency profile."""

    bus_voltages: dict[int, complex]
    nominal_freq_hz: float = 50.0
    freq_profile: tuple[tuple[float, float, float], ...] = ()  # (t_s, dev_mhz, rocof)

    def __post_init__(self) -> None:
        for bus, v in self.bus_voltages.items():
            if not 0.5 < abs(v) < 1.5:
                raise ScenarioError(f"bus {bus}: |V| = {abs(v):.3f} pu outside (0.5, 1.5)")

    def freq_at(self, t_seconds: float) -> tuple[float, float]:
        """Step interpolation of (dev_mhz, rocof) at time t; (0, 0) before/none."""
        dev, rocof = 0.0, 0.0
        for t, d, r in self.freq_profile:
            if t <= t_seconds:
                dev, rocof = d, r
            else:
                break
        return dev, rocof


def load_scenario(text: str, nominal_freq_hz: float = 50.0) -> Scenario:
    """Parse scenario records: `bus,v_re,v_im` and `freq,t,dev_mhz,rocof`."""
    voltages: dict[int, complex] = {}
    profile: list[tuple[float, float, float]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        try:
            if parts[0] == "freq":
                if len(parts) != 4:
                    raise ValueError("freq record needs t,dev_mhz,rocof")
                profile.append((float(parts[1]), float(parts[2]), float(parts[3])))
            else:
                if len(parts) != 3:
                    raise ValueError("bus record needs bus,v_re,v_im")
                voltages[int(parts[0])] = complex(float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ScenarioError(f"line {line_no}: {exc}") from None
    profile.sort(key=lambda rec: rec[0])
    return Scenario(
        bus_voltages=voltages,
        nominal_freq_hz=nominal_freq_hz,
        freq_profile=tuple(profile),
    )


def true_measurements(grid: GridModel, scenario: Scenario, descriptor: Descriptor) -> complex:
    """Exact value of one descriptor at the scenario operating point.

    Branch currents flow out of the descriptor's node into the branch,
    including that end's charging/tap shunt term.
    """
    voltages = scenario.bus_voltages
    if descriptor.kind == "voltage":
        try:
            return voltages[descriptor.bus]
        except KeyError:
            raise ScenarioError(f"no scenario voltage for bus {descriptor.bus}") from None
    branch = descriptor.branch
    assert branch is not None
    try:
        v_here = voltages[descriptor.bus]
        v_there = voltages[branch.other_end(descriptor.bus)]
    except KeyError as exc:
        raise ScenarioError(f"no scenario voltage for bus {exc.args[0]}") from None
    series, shunt_from, shunt_to = branch_admittance(branch)
    shunt = shunt_from if descriptor.bus == branch.from_bus else shunt_to
    return series * (v_here - v_there) + shunt * v_here


def expand_quantity(value: complex, channel_config: str) -> tuple[complex, ...]:
    """Map one measured quantity to its frame phasor set (see CHANNEL_EXPANSION)."""
    if channel_config == "bare":
        return (value,)
    if channel_config == "A":
        return (value, value * _ROT_B, value * _ROT_C)
    if channel_config == "B":
        return (value, value * _ROT_B, value * _ROT_C, value, 0j, 0j)
    raise ValueError(f"unknown channel config {channel_config!r}")


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel standard deviations; phasor sigma is magnitude-relative."""

    phasor_rel: float = 0.0
    freq_mhz: float = 0.0
    rocof_hzps: float = 0.0

    @property
    def silent(self) -> bool:
        return self.phasor_rel == 0.0 and self.freq_mhz == 0.0 and self.rocof_hzps == 0.0


class EmulatedPmu:
    """One emulated device streaming frames for its assigned descriptors."""

    def __init__(
        self,
        idcode: int,
        descriptors: tuple[Descriptor, ...],
        rate: int = 50,
        fmt: FrameFormat = FrameFormat.FLOAT32,
        noise: NoiseModel = NoiseModel(),
        channel_config: str = "bare",
        rng: np.random.Generator | None = None,
        streaming: bool = True,
    ):
        if rate not in SUPPORTED_RATES:
            raise ValueError(f"rate {rate} fps not in {SUPPORTED_RATES}")
        if channel_config not in CHANNEL_EXPANSION:
            raise ValueError(f"unknown channel config {channel_config!r}")
        self.idcode = idcode
        self.descriptors = tuple(descriptors)
        self.rate = rate
        self.fmt = fmt
        self.noise = noise
        self.channel_config = channel_config
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.streaming = streaming
        self.audit_log: list[str] = []

    @property
    def frame_interval_us(self) -> int:
        return TIME_BASE // self.rate

    @property
    def phasors_per_frame(self) -> int:
        return len(self.descriptors) * CHANNEL_EXPANSION[self.channel_config]

    def _noisy(self, value: complex) -> complex:
        sigma = self.noise.phasor_rel * abs(value)
        if sigma == 0.0:
            return value
        return complex(
            value.real + self.rng.normal(0.0, sigma),
            value.imag + self.rng.normal(0.0, sigma),
        )

    def sample_frame(
        self, t: Timestamp, grid: GridModel, scenario: Scenario
    ) -> DataFrame | None:
        """Emit the frame for reporting instant t, or nothing if muted."""
        if t.fracsec % self.frame_interval_us != 0:
            raise ValueError(
                f"timestamp {t} is off the {self.rate} fps reporting grid"
            )
        if not self.streaming:
            return None
        phasors: list[complex] = []
        for descriptor in self.descriptors:
            value = self._noisy(true_measurements(grid, scenario, descriptor))
            phasors.extend(expand_quantity(value, self.channel_config))
        dev_mhz, rocof = scenario.freq_at(t.seconds)
        if self.noise.freq_mhz > 0.0:
            dev_mhz += self.rng.normal(0.0, self.noise.freq_mhz)
        if self.noise.rocof_hzps > 0.0:
            rocof += self.rng.normal(0.0, self.noise.rocof_hzps)
        block = PmuBlock(phasors=tuple(phasors), freq_dev_mhz=dev_mhz, rocof_hzps=rocof)
        return DataFrame(idcode=self.idcode, timestamp=t, blocks=(block,), fmt=self.fmt)

    def handle_command(self, cmd: CommandFrame) -> None:
        """Apply a data_on/data_off command; foreign idcodes are ignored."""
        if cmd.idcode != self.idcode:
            self.audit_log.append(
                f"ignored command {cmd.command} for foreign idcode {cmd.idcode}"
            )
            return
        if cmd.command == CMD_DATA_ON:
            self.streaming = True
        elif cmd.command == CMD_DATA_OFF:
            self.streaming = False

    def set_rate(self, rate: int) -> None:
        """Move subsequent frames onto a new second-aligned reporting grid."""
        if rate not in SUPPORTED_RATES:
            raise ValueError(f"rate {rate} fps not in {SUPPORTED_RATES}")
        self.rate = rate


def reporting_instants(rate: int, n_frames: int, start_soc: int = 0) -> list[Timestamp]:
    """The first n timestamps of a second-aligned reporting grid."""
    if rate not in SUPPORTED_RATES:
        raise ValueError(f"rate {rate} fps not in {SUPPORTED_RATES}")
    step = TIME_BASE // rate
    base = start_soc * TIME_BASE
    return [Timestamp.from_us(base + k * step) for k in range(n_frames)]
