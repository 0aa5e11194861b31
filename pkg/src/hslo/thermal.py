"""Finite-difference model of the volume-to-point heat conduction problem.

The square plate is discretised with an N x N node-centred grid (spacing
``h = L / (N - 1)``).  All boundaries are adiabatic except a short patch of
nodes on one edge held at the sink temperature.  Adiabatic edges use mirror
ghost nodes; after halving edge rows (quartering corners) the operator is the
weighted graph Laplacian of the grid, which keeps the reduced system
symmetric positive definite once the sink rows are eliminated.

Everything is solved for the temperature rise ``theta = T - T0`` so the model
is exactly linear in the source intensities.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConstraintViolation, DomainError, SingularSystemError, SolverError

EDGES = ("north", "south", "east", "west")
DEFAULT_TOL = 1e-8
REFERENCE_INTENSITY = 10000.0


@dataclass(frozen=True)
class DomainSpec:
    side_length_m: float = 0.1
    conductivity: float = 1.0
    sink_temperature_K: float = 298.0
    sink_width_m: float = 0.001
    sink_edge: str = "west"
    sink_center_fraction: float = 0.5
    fine_resolution: int = 200
    cell_partition: int = 10
    source_side_m: float | None = None

    def __post_init__(self):
        if self.source_side_m is None:
            object.__setattr__(self, "source_side_m", self.side_length_m / self.cell_partition)
        if self.side_length_m <= 0:
            raise DomainError("side_length_m must be positive")
        if self.conductivity <= 0:
            raise DomainError("conductivity must be positive")
        if self.sink_width_m < 0:
            raise DomainError("sink_width_m must be non-negative")
        if self.sink_edge not in EDGES:
            raise DomainError(f"sink_edge must be one of {EDGES}, got {self.sink_edge!r}")
        if not 0.0 <= self.sink_center_fraction <= 1.0:
            raise DomainError("sink_center_fraction must lie in [0, 1]")
        if self.cell_partition < 1 or self.fine_resolution < self.cell_partition:
            raise DomainError("need fine_resolution >= cell_partition >= 1")
        if self.fine_resolution < 2:
            raise DomainError("fine_resolution must be at least 2")
        if self.fine_resolution % self.cell_partition:
            raise DomainError(
                f"fine_resolution {self.fine_resolution} is not divisible by "
                f"cell_partition {self.cell_partition}"
            )
        if not np.isclose(self.source_side_m, self.side_length_m / self.cell_partition):
            raise DomainError("source_side_m must equal side_length_m / cell_partition")

    @property
    def h(self) -> float:
        return self.side_length_m / (self.fine_resolution - 1)

    @property
    def n_cells(self) -> int:
        return self.cell_partition**2

    @property
    def cell_nodes(self) -> int:
        """Fine nodes per cell along one axis."""
        return self.fine_resolution // self.cell_partition

    def with_resolution(self, resolution: int) -> "DomainSpec":
        from dataclasses import replace

        return replace(self, fine_resolution=resolution)


@dataclass(frozen=True, eq=False)
class Layout:
    """Sources placed on distinct unit cells.

    ``cells`` keeps generation order (neighbourhood moves address sources by
    position); equality and hashing go through the canonical, cell-sorted form.
    """

    cells: tuple[int, ...]
    intensities: tuple[float, ...]
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        intens = tuple(float(q) for q in self.intensities)
        if len(cells) != len(intens):
            raise DomainError("cells and intensities differ in length")
        if len(set(cells)) != len(cells):
            dup = sorted({c for c in cells if cells.count(c) > 1})
            raise ConstraintViolation(f"duplicate cell indices {dup}")
        if any(c < 1 for c in cells):
            raise DomainError("cell indices are 1-based")
        if any(not q > 0 for q in intens):
            raise DomainError("intensities must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "intensities", intens)
        object.__setattr__(self, "_key", tuple(sorted(zip(cells, intens))))

    @classmethod
    def uniform(cls, cells: Iterable[int], intensity: float = REFERENCE_INTENSITY) -> "Layout":
        cells = tuple(cells)
        return cls(cells, (intensity,) * len(cells))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "Layout":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    def __len__(self):
        return len(self.cells)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def canonical(self) -> "Layout":
        return Layout(tuple(c for c, _ in self._key), tuple(q for _, q in self._key))

    @property
    def key(self) -> tuple:
        """Sorted ``(cell, intensity)`` pairs."""
        return self._key

    @property
    def sorted_cells(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self._key)

    def check(self, spec: DomainSpec) -> None:
        bad = [c for c in self.cells if c > spec.n_cells]
        if bad:
            raise DomainError(f"cell indices {bad} exceed {spec.n_cells}")

    def total_power(self, spec: DomainSpec) -> float:
        """Sum of cell area times intensity, in W per unit depth."""
        return spec.source_side_m**2 * sum(self.intensities)


def cell_slices(cell: int, spec: DomainSpec) -> tuple[slice, slice]:
    """Fine-grid row/column slices covered by a 1-based, row-major cell index."""
    r, c = divmod(cell - 1, spec.cell_partition)
    m = spec.cell_nodes
    return slice(r * m, (r + 1) * m), slice(c * m, (c + 1) * m)


def rasterize_intensity(layout: Layout, spec: DomainSpec) -> np.ndarray:
    layout.check(spec)
    n = spec.fine_resolution
    phi = np.zeros((n, n))
    for cell, q in zip(layout.cells, layout.intensities):
        phi[cell_slices(cell, spec)] = q
    return phi


def sink_nodes(spec: DomainSpec) -> np.ndarray:
    """Flat indices of the Dirichlet nodes.

    The sink covers every boundary node whose distance along the edge from the
    sink centre is at most half the sink width; if that captures nothing, the
    nearest node (both nodes on an exact tie) is used.
    """
    n, h = spec.fine_resolution, spec.h
    pos = np.arange(n) * h
    centre = spec.sink_center_fraction * spec.side_length_m
    dist = np.abs(pos - centre)
    along = np.flatnonzero(dist <= 0.5 * spec.sink_width_m + 1e-12 * h)
    if along.size == 0:
        along = np.flatnonzero(dist <= dist.min() + 1e-9 * h)
    if spec.sink_edge == "north":
        rows, cols = np.zeros_like(along), along
    elif spec.sink_edge == "south":
        rows, cols = np.full_like(along, n - 1), along
    elif spec.sink_edge == "west":
        rows, cols = along, np.zeros_like(along)
    else:
        rows, cols = along, np.full_like(along, n - 1)
    return rows * n + cols


def node_volumes(n: int) -> np.ndarray:
    """Control-volume weights: 1 inside, 1/2 on edges, 1/4 at corners."""
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return np.outer(w, w)


def grid_laplacian(n: int) -> sp.csr_matrix:
    """Weighted graph Laplacian of the n x n node grid (edge links weigh 1/2)."""
    idx = np.arange(n * n).reshape(n, n)
    wline = np.ones(n)
    wline[0] = wline[-1] = 0.5
    # horizontal links (r, c)-(r, c+1) lie on an edge when r is a boundary row
    hw = np.repeat(wline, n - 1)
    hi, hj = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    vw = np.tile(wline, n - 1)
    vi, vj = idx[:-1, :].ravel(), idx[1:, :].ravel()
    i = np.concatenate([hi, vi])
    j = np.concatenate([hj, vj])
    w = np.concatenate([hw, vw])
    off = sp.coo_matrix((-w, (i, j)), shape=(n * n, n * n))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


class FDMSolver:
    """Assembled system for one DomainSpec.

    The sparse LU factorisation and the per-cell unit responses are built
    lazily and cached; both are read-only afterwards, so a single instance can
    serve concurrent ``solve`` calls.
    """

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        n = spec.fine_resolution
        self.n = n
        sink = sink_nodes(spec)
        if sink.size == 0:
            raise SingularSystemError("no sink nodes: system is singular")
        self.sink = sink
        free = np.ones(n * n, dtype=bool)
        free[sink] = False
        self.free = np.flatnonzero(free)
        lap = grid_laplacian(n)
        self.A = lap[self.free][:, self.free].tocsc()
        self.weights = (node_volumes(n).ravel() * spec.h**2 / spec.conductivity)[self.free]
        self._lock = threading.Lock()
        self._lu = None
        self._basis = None

    @property
    def lu(self):
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
        return self._lu

    def rhs(self, phi: np.ndarray) -> np.ndarray:
        return phi.reshape(self.n * self.n)[self.free] * self.weights

    def relative_residual(self, theta_free: np.ndarray, b: np.ndarray) -> float:
        bn = np.linalg.norm(b)
        r = np.linalg.norm(b - self.A @ theta_free)
        return 0.0 if bn == 0 else r / bn

    def solve_rise(self, phi: np.ndarray, tol: float = DEFAULT_TOL, method: str = "direct",
                   maxiter: int | None = None) -> np.ndarray:
        """Temperature rise above the sink for an intensity field ``phi``."""
        if not tol > 0:
            raise DomainError("tol must be positive")
        b = self.rhs(np.asarray(phi, dtype=float))
        if not b.any():
            return np.zeros((self.n, self.n))
        if method == "direct":
            x = self.lu.solve(b)
        elif method == "cg":
            x = self._cg(b, tol, maxiter)
        else:
            raise DomainError(f"unknown solver method {method!r}")
        res = self.relative_residual(x, b)
        if res > tol:
            raise SolverError(f"relative residual {res:.3e} exceeds tol {tol:.1e}", residual=res)
        out = np.zeros(self.n * self.n)
        out[self.free] = x
        return out.reshape(self.n, self.n)

    def _cg(self, b, tol, maxiter):
        diag = self.A.diagonal()
        precond = spla.LinearOperator(self.A.shape, matvec=lambda v: v / diag)
        maxiter = maxiter or 20 * self.n * self.n
        # a tighter internal target absorbs the drift between recursive and true residuals
        x, info = spla.cg(self.A, b, rtol=0.1 * tol, atol=0.0, maxiter=maxiter, M=precond)
        if info != 0:
            raise SolverError(
                f"CG did not converge in {maxiter} iterations",
                residual=self.relative_residual(x, b),
            )
        return x

    def unit_responses(self) -> np.ndarray:
        """(C*C, N*N) array: rise field per unit intensity in each cell."""
        if self._basis is None:
            spec = self.spec
            n, ncell = self.n, spec.n_cells
            rhs = np.zeros((self.free.size, ncell))
            for cell in range(1, ncell + 1):
                phi = np.zeros((n, n))
                phi[cell_slices(cell, spec)] = 1.0
                rhs[:, cell - 1] = self.rhs(phi)
            sol = self.lu.solve(rhs)
            basis = np.zeros((ncell, n * n))
            basis[:, self.free] = sol.T
            with self._lock:
                if self._basis is None:
                    self._basis = basis
        return self._basis

    def rise_by_superposition(self, layout: Layout) -> np.ndarray:
        layout.check(self.spec)
        if len(layout) == 0:
            return np.zeros((self.n, self.n))
        basis = self.unit_responses()
        idx = np.fromiter((c - 1 for c in layout.cells), dtype=np.intp, count=len(layout))
        q = np.asarray(layout.intensities)
        return (q @ basis[idx]).reshape(self.n, self.n)


@lru_cache(maxsize=8)
def get_solver(spec: DomainSpec) -> FDMSolver:
    return FDMSolver(spec)


def solve_temperature(layout: Layout, spec: DomainSpec, tol: float = DEFAULT_TOL,
                      method: str = "direct") -> np.ndarray:
    """Steady temperature field in kelvin, shape (N, N), row 0 = north edge."""
    phi = rasterize_intensity(layout, spec)
    rise = get_solver(spec).solve_rise(phi, tol=tol, method=method)
    return rise + spec.sink_temperature_K


def normalized_metric(field: np.ndarray, spec: DomainSpec,
                      reference_intensity: float = REFERENCE_INTENSITY) -> float:
    """Peak rise over the sink, scaled by ``phi0 * L**2 / k``."""
    if not reference_intensity > 0:
        raise DomainError("reference_intensity must be positive")
    return metric_from_tmax(float(np.max(field)), spec, reference_intensity)


def metric_from_tmax(tmax: float, spec: DomainSpec,
                     reference_intensity: float = REFERENCE_INTENSITY) -> float:
    scale = reference_intensity * spec.side_length_m**2 / spec.conductivity
    return (tmax - spec.sink_temperature_K) / scale


def tmax_from_metric(r_m: float, spec: DomainSpec,
                     reference_intensity: float = REFERENCE_INTENSITY) -> float:
    scale = reference_intensity * spec.side_length_m**2 / spec.conductivity
    return spec.sink_temperature_K + r_m * scale


def reflect_cell(cell: int, spec: DomainSpec, axis: str) -> int:
    """Mirror a cell index across the horizontal ("rows") or vertical ("cols") midline."""
    C = spec.cell_partition
    r, c = divmod(cell - 1, C)
    if axis == "rows":
        r = C - 1 - r
    elif axis == "cols":
        c = C - 1 - c
    else:
        raise DomainError(f"axis must be 'rows' or 'cols', got {axis!r}")
    return r * C + c + 1


def sink_adjacent_cells(spec: DomainSpec) -> set[int]:
    """Cells in the row or column of cells touching the sink edge."""
    C = spec.cell_partition
    out = set()
    for r in range(C):
        for c in range(C):
            edge_hit = {
                "north": r == 0, "south": r == C - 1, "west": c == 0, "east": c == C - 1,
            }[spec.sink_edge]
            if edge_hit:
                out.add(r * C + c + 1)
    return out


def as_layout(cells: Sequence[int], intensities: Sequence[float] | float = REFERENCE_INTENSITY) -> Layout:
    if np.isscalar(intensities):
        return Layout.uniform(cells, float(intensities))
    return Layout(tuple(cells), tuple(intensities))
