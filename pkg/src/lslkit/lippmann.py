"""Linearized time-domain Lippmann-Schwinger system and data lifting.

Both directions discretize the same space-time integral

    F0(k tau) - F(k tau) = int_0^{k tau} int  w0(x, k tau - t) u(x, t) q(x) dx dt

with the trapezoidal rule in time on the sample grid and trapezoidal
node weights in space. `assemble_system` leaves q unknown and stacks one
row per (source, time index) against measured diagonal data;
`forward_lift` dots the same rows with a potential estimate to predict
the unmeasured off-diagonal series. Replacing the unknown internal field
u by the background field gives the Born linearization; replacing it by
the data-generated field gives the sharper variant.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import (
    Grid2D,
    MaskState,
    Potential,
    SnapshotSet,
    TransferData,
    prolong,
    refinement_ratio,
)
from .errors import (
    DimensionError,
    OverRegularizationError,
    PreconditionError,
)


@dataclass(frozen=True)
class LSSystem:
    """Dense linearized system G q = rhs on an inversion grid.

    Rows are indexed by (source, time index) via `row_index`; columns
    follow the row-major node order of `grid`, so a solution vector
    reshapes straight onto the grid.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    row_index: tuple[tuple[int, int], ...]
    grid: Grid2D
    tsvd_threshold: float

    def __post_init__(self):
        if self.matrix.shape[0] != self.rhs.shape[0] or len(self.row_index) != self.rhs.shape[0]:
            raise DimensionError("system rows, rhs and row index disagree")
        if self.matrix.shape[1] != self.grid.num_nodes:
            raise DimensionError("system columns do not match the inversion grid")
        if not np.isfinite(self.matrix).all() or not np.isfinite(self.rhs).all():
            raise PreconditionError("system contains non-finite entries")


def convolution_rows(
    w0_samples: np.ndarray,
    field_samples: np.ndarray,
    node_weights: np.ndarray,
    tau: float,
    num_out: int,
) -> np.ndarray:
    """Spatial rows of the time convolution for k = 0 .. num_out-1.

    rows[k, c] = tau * sum_t c_t w0[k-t, c] field[t, c] weights[c] with
    trapezoidal endpoint weights c_0 = c_k = 1/2; row 0 (empty interval)
    is zero. This one kernel backs both system assembly and lifting.
    """
    if w0_samples.shape[0] < num_out or field_samples.shape[0] < num_out:
        raise DimensionError(
            f"need {num_out} samples, have {w0_samples.shape[0]} antiderivative "
            f"and {field_samples.shape[0]} field samples"
        )
    if w0_samples.shape[1] != field_samples.shape[1] or w0_samples.shape[1] != node_weights.size:
        raise DimensionError("kernel inputs live on different grids")
    w = w0_samples[:num_out] * node_weights
    u = field_samples[:num_out]
    if num_out == 1:
        return np.zeros((1, w.shape[1]))
    rows = fftconvolve(w, u, mode="full", axes=0)[:num_out]
    rows -= 0.5 * (w * u[0] + w[0] * u)
    rows *= tau
    rows[0] = 0.0
    return rows


def _flat_restricted(snapshots: SnapshotSet, grid: Grid2D, count: int) -> np.ndarray:
    ratio = refinement_ratio(snapshots.grid, grid)
    return snapshots.samples[:count, ::ratio, ::ratio].reshape(count, -1)


def _common_sample_count(sets: list[SnapshotSet]) -> int:
    counts = {s.num_samples for s in sets}
    if len(counts) != 1:
        raise DimensionError(f"snapshot sets have differing lengths {sorted(counts)}")
    return counts.pop()


def _check_time_axes(tau: float, *others: float) -> None:
    for other in others:
        if abs(other - tau) > 1e-12 * tau:
            raise DimensionError(f"sample intervals differ: {tau} vs {other}")


def assemble_system(
    w0: list[SnapshotSet],
    fields: list[SnapshotSet],
    data: TransferData,
    data0: TransferData,
    inv_grid: Grid2D,
    tsvd_threshold: float,
) -> LSSystem:
    """Stack rows (source j, time k) for k = 1 .. N-1 on the inversion grid.

    `fields` may be data-generated internal fields or plain background
    fields (the Born variant). The right-hand side uses measured diagonal
    data only.
    """
    K = len(fields)
    if len(w0) != K or data.num_sources != K or data0.num_sources != K:
        raise DimensionError("source counts of fields, antiderivatives and data differ")
    data.require_measured_diagonal()
    tau = data.tau
    _check_time_axes(tau, data0.tau, *(s.tau for s in w0), *(s.tau for s in fields))
    num = _common_sample_count(fields)
    if data.num_samples < num or data0.num_samples < num:
        raise DimensionError(
            f"transfer records ({data.num_samples}, {data0.num_samples}) shorter "
            f"than the {num} field samples"
        )
    weights = inv_grid.node_weights.ravel()
    blocks = []
    rhs = []
    index = []
    for j in range(K):
        wj = _flat_restricted(w0[j], inv_grid, num)
        uj = _flat_restricted(fields[j], inv_grid, num)
        blocks.append(convolution_rows(wj, uj, weights, tau, num)[1:])
        rhs.append(data0.values[j, j, 1:num] - data.values[j, j, 1:num])
        index.extend((j, k) for k in range(1, num))
    return LSSystem(
        np.vstack(blocks), np.concatenate(rhs), tuple(index), inv_grid, tsvd_threshold
    )


def solve_tsvd(system: LSSystem) -> Potential:
    """Minimum-norm solution after truncating singular values below
    threshold * sigma_max. The result is sign-unconstrained."""
    u, s, vt = np.linalg.svd(system.matrix, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise OverRegularizationError("system matrix is zero")
    keep = s >= system.tsvd_threshold * s[0]
    if not keep.any():
        raise OverRegularizationError(
            f"threshold {system.tsvd_threshold} removed all "
            f"{s.size} singular values"
        )
    coeff = (u[:, keep].T @ system.rhs) / s[keep]
    values = vt[keep].T @ coeff
    return Potential(system.grid, values.reshape(system.grid.shape))


def residual_norm(system: LSSystem, potential: Potential) -> float:
    """Relative data misfit ||G q - rhs|| / ||rhs|| of a reconstruction."""
    misfit = system.matrix @ potential.values.ravel() - system.rhs
    scale = float(np.linalg.norm(system.rhs))
    norm = float(np.linalg.norm(misfit))
    return norm / scale if scale > 0.0 else norm


def forward_lift(
    fields: list[SnapshotSet],
    q_est: Potential,
    w0: list[SnapshotSet],
    data0: TransferData,
    n_out: int,
    measured: TransferData,
    threads: int = 1,
) -> TransferData:
    """Predict off-diagonal transfer data from a potential estimate.

    Evaluates the forward integral on the field grid (the estimate is
    prolonged there if it lives on a coarser nested grid) for every pair
    i != j; diagonals are copied verbatim from the measured record. The
    output holds n_out samples.
    """
    K = len(fields)
    if len(w0) != K or data0.num_sources != K or measured.num_sources != K:
        raise DimensionError("source counts of fields, antiderivatives and data differ")
    data0.require_full()
    measured.require_measured_diagonal()
    grid = fields[0].grid
    for s in list(fields) + list(w0):
        if s.grid != grid:
            raise DimensionError("field and antiderivative sets live on different grids")
    tau = measured.tau
    _check_time_axes(tau, data0.tau, *(s.tau for s in w0), *(s.tau for s in fields))
    available = min(
        _common_sample_count(list(fields)),
        min(s.num_samples for s in w0),
        data0.num_samples,
        measured.num_samples,
    )
    if n_out < 1 or n_out > available:
        raise DimensionError(
            f"cannot produce {n_out} lifted samples from {available} available"
        )
    if q_est.grid == grid:
        q_flat = q_est.values.ravel()
    else:
        q_flat = prolong(q_est.values, q_est.grid, grid).ravel()
    weights = grid.node_weights.ravel()
    u_flat = [s.matrix(n_out) for s in fields]
    w_flat = [s.matrix(n_out) for s in w0]

    def lift_pair(pair):
        i, j = pair
        rows = convolution_rows(w_flat[j], u_flat[i], weights, tau, n_out)
        return data0.values[i, j, :n_out] - rows @ q_flat

    pairs = [(i, j) for i in range(K) for j in range(K) if i != j]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lifted = list(pool.map(lift_pair, pairs))
    else:
        lifted = [lift_pair(p) for p in pairs]

    values = np.zeros((K, K, n_out))
    mask = np.full((K, K), MaskState.LIFTED, dtype=np.int8)
    for (i, j), series in zip(pairs, lifted):
        values[i, j] = series
    for i in range(K):
        values[i, i] = measured.values[i, i, :n_out]
        mask[i, i] = MaskState.MEASURED
    return TransferData(values, mask, tau)
