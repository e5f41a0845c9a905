"""Linear WLS state estimation over rectangular node-voltage coordinates.

Voltage and branch-current phasor measurements are linear in the state
x = [e_1, f_1, ..., e_N, f_N], so the design matrix is assembled from the
branch admittances directly: a complex coefficient a+jb acting on bus
voltage (e, f) contributes the real 2x2 block [[a, -b], [b, a]].  The
solve itself is a QR-based least squares on the weighted system.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import Descriptor, GridModel, PmuPlacement, branch_admittance

RANK_TOLERANCE = 1e-8  # singular values below tol * largest count as zero


class EstimatorError(ValueError):
    pass


class UnobservableError(EstimatorError):
    """The measurement set does not determine the full state."""

    def __init__(self, rank: int, dim: int, deficient: list[str]):
        self.rank = rank
        self.dim = dim
        self.deficient = deficient
        super().__init__(
            f"rank {rank} < {dim} state variables; "
            f"zero-pivot state components: {', '.join(deficient)}"
        )


@dataclass(frozen=True)
class StateVector:
    """Rectangular node voltages (e, f) for every bus, in bus order."""

    bus_ids: tuple[int, ...]
    e: np.ndarray
    f: np.ndarray

    @property
    def voltages(self) -> np.ndarray:
        return self.e + 1j * self.f

    def voltage(self, bus: int) -> complex:
        return complex(self.voltages[self.bus_ids.index(bus)])

    @property
    def dim(self) -> int:
        return 2 * len(self.bus_ids)


@dataclass(frozen=True)
class MeasurementModel:
    """Design matrix H (2M x 2N), weights, and row/column bookkeeping."""

    bus_ids: tuple[int, ...]
    rows: tuple[tuple[Descriptor, str], ...]  # (descriptor, "re" | "im")
    H: np.ndarray
    weights: np.ndarray  # diagonal of W, one entry per row

    @property
    def state_labels(self) -> tuple[str, ...]:
        out = []
        for bus in self.bus_ids:
            out.append(f"e_{bus}")
            out.append(f"f_{bus}")
        return tuple(out)


def _state_columns(bus_ids: tuple[int, ...]) -> dict[int, int]:
    return {bus: 2 * i for i, bus in enumerate(bus_ids)}


def _add_complex_coefficient(
    H: np.ndarray, row: int, col: int, coefficient: complex
) -> None:
    a, b = coefficient.real, coefficient.imag
    H[row, col] += a
    H[row, col + 1] -= b
    H[row + 1, col] += b
    H[row + 1, col + 1] += a


def build_measurement_matrix(
    grid: GridModel,
    placement: PmuPlacement,
    sigmas: np.ndarray | list[float] | None = None,
    include_shunts: bool = True,
) -> MeasurementModel:
    """Assemble H and W for every descriptor of the placement.

    `sigmas` gives one standard deviation per descriptor component (2 per
    phasor, row order); weights are 1/sigma^2, or all ones when omitted.
    `include_shunts` drops the charging/tap shunt terms from current rows
    for sensitivity studies.
    """
    bus_ids = grid.bus_ids
    columns = _state_columns(bus_ids)
    descriptors = placement.all_descriptors()
    H = np.zeros((2 * len(descriptors), 2 * len(bus_ids)))
    rows: list[tuple[Descriptor, str]] = []
    for i, descriptor in enumerate(descriptors):
        row = 2 * i
        rows.append((descriptor, "re"))
        rows.append((descriptor, "im"))
        if descriptor.kind == "voltage":
            if descriptor.bus not in columns:
                raise EstimatorError(f"descriptor references unknown bus {descriptor.bus}")
            _add_complex_coefficient(H, row, columns[descriptor.bus], 1.0 + 0j)
            continue
        branch = descriptor.branch
        assert branch is not None
        if branch not in grid.branches:
            raise EstimatorError(
                f"descriptor references unknown branch {branch.from_bus}-{branch.to_bus}"
            )
        series, shunt_from, shunt_to = branch_admittance(branch)
        here = descriptor.bus
        there = branch.other_end(here)
        shunt = shunt_from if here == branch.from_bus else shunt_to
        if not include_shunts:
            shunt = 0j
        _add_complex_coefficient(H, row, columns[here], series + shunt)
        _add_complex_coefficient(H, row, columns[there], -series)
    if sigmas is None:
        weights = np.ones(H.shape[0])
    else:
        sigma_arr = np.asarray(sigmas, dtype=float)
        if sigma_arr.shape != (H.shape[0],):
            raise EstimatorError(
                f"need {H.shape[0]} sigmas (one per measurement component), got {sigma_arr.shape}"
            )
        if np.any(sigma_arr <= 0):
            raise EstimatorError("measurement sigmas must be positive")
        weights = 1.0 / sigma_arr**2
    return MeasurementModel(bus_ids=bus_ids, rows=tuple(rows), H=H, weights=weights)


def observability_rank(model: MeasurementModel) -> tuple[int, bool]:
    """Numerical rank of H and whether it spans the full state."""
    svals = np.linalg.svd(model.H, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0, model.H.shape[1] == 0
    rank = int(np.sum(svals > RANK_TOLERANCE * svals[0]))
    return rank, rank == model.H.shape[1]


def _deficient_columns(A: np.ndarray, rank: int) -> list[int]:
    # column-pivoted QR: pivots past the numerical rank mark the state
    # directions the measurements do not constrain
    _, _, pivots = scipy.linalg.qr(A, mode="economic", pivoting=True)
    return sorted(int(p) for p in pivots[rank:])


def wls_solve(model: MeasurementModel, z: np.ndarray | list[float]) -> tuple[StateVector, np.ndarray]:
    """argmin (z - Hx)' W (z - Hx) and its residual vector z - H x_hat."""
    z_arr = np.asarray(z, dtype=float)
    if z_arr.shape != (model.H.shape[0],):
        raise EstimatorError(f"need {model.H.shape[0]} measurements, got {z_arr.shape}")
    sqrt_w = np.sqrt(model.weights)
    A = model.H * sqrt_w[:, None]
    rank, observable = observability_rank(model)
    if not observable:
        labels = model.state_labels
        deficient = [labels[i] for i in _deficient_columns(A, rank)]
        raise UnobservableError(rank, model.H.shape[1], deficient)
    x, *_ = np.linalg.lstsq(A, z_arr * sqrt_w, rcond=None)
    residuals = z_arr - model.H @ x
    state = StateVector(bus_ids=model.bus_ids, e=x[0::2].copy(), f=x[1::2].copy())
    return state, residuals


def timed_estimate(
    model: MeasurementModel, z: np.ndarray | list[float]
) -> tuple[StateVector, np.ndarray, float]:
    """wls_solve plus the wall-clock duration of the solve, in seconds."""
    start = time.perf_counter()
    state, residuals = wls_solve(model, z)
    elapsed = time.perf_counter() - start
    return state, residuals, elapsed


def estimation_sigma(model: MeasurementModel) -> np.ndarray:
    """Per-component standard deviation of the WLS estimate."""
    normal = model.H.T @ (model.weights[:, None] * model.H)
    return np.sqrt(np.diag(np.linalg.inv(normal)))


def measurement_vector(values: list[complex] | np.ndarray) -> np.ndarray:
    """Interleave complex measurements into the real (re, im) row order."""
    z = np.empty(2 * len(values))
    for i, v in enumerate(values):
        z[2 * i] = v.real
        z[2 * i + 1] = v.imag
    return z
