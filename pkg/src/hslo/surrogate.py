"""Fitness evaluators (exact, coarse-grid, LRU-cached) and surrogate error metrics.

Every evaluator maps a layout to the normalised peak-temperature objective.
The exact and coarse evaluators precompute one unit-intensity response field
per cell with a single sparse factorisation, so each evaluation is a weighted
sum of at most ``N_s`` stored fields followed by a max.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DomainError, SolverError
from .thermal import (
    DEFAULT_TOL,
    REFERENCE_INTENSITY,
    DomainSpec,
    FDMSolver,
    Layout,
    cell_slices,
    get_solver,
    metric_from_tmax,
    node_volumes,
    normalized_metric,
    solve_temperature,
)


class Evaluator:
    """Base class: counts calls and routes them to ``_evaluate_many``.

    ``calls`` grows by exactly one per evaluated layout, whether it arrived
    through ``evaluate`` or ``evaluate_many``.
    """

    name = "evaluator"

    def __init__(self, spec: DomainSpec, resolution: int,
                 reference_intensity: float = REFERENCE_INTENSITY):
        self.spec = spec
        self.resolution = resolution
        self.reference_intensity = reference_intensity
        self._count_lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        return self._calls

    def _bump(self, n: int) -> None:
        with self._count_lock:
            self._calls += n

    def evaluate(self, layout: Layout) -> float:
        self._bump(1)
        return float(self._evaluate_many([layout])[0])

    def evaluate_many(self, layouts: Sequence[Layout]) -> np.ndarray:
        layouts = list(layouts)
        self._bump(len(layouts))
        if not layouts:
            return np.zeros(0)
        return self._evaluate_many(layouts)

    def _evaluate_many(self, layouts: list[Layout]) -> np.ndarray:
        raise NotImplementedError

    def field(self, layout: Layout) -> np.ndarray:
        """Predicted temperature field in kelvin at this evaluator's resolution."""
        raise NotImplementedError

    def tmax(self, layout: Layout) -> float:
        return float(np.max(self.field(layout)))

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} N={self.resolution} calls={self.calls}>"


class _BasisEvaluator(Evaluator):
    def __init__(self, spec: DomainSpec, grid_spec: DomainSpec, tol: float,
                 cell_scale: np.ndarray | None = None, workers: int = 1):
        super().__init__(spec, grid_spec.fine_resolution)
        if not tol > 0:
            raise DomainError("tol must be positive")
        self.grid_spec = grid_spec
        self.tol = tol
        self.workers = max(1, int(workers))
        self.solver: FDMSolver = get_solver(grid_spec)
        self.cell_scale = np.ones(spec.n_cells) if cell_scale is None else cell_scale
        self._basis = None
        self._lock = threading.Lock()

    @property
    def basis(self) -> np.ndarray:
        if self._basis is None:
            with self._lock:
                if self._basis is None:
                    basis = self.solver.unit_responses()
                    self._check_residual(basis)
                    self._basis = basis
        return self._basis

    def _check_residual(self, basis):
        s = self.solver
        for cell in range(basis.shape[0]):
            phi = np.zeros((s.n, s.n))
            phi[cell_slices(cell + 1, self.grid_spec)] = 1.0
            b = s.rhs(phi)
            res = s.relative_residual(basis[cell, s.free], b)
            if res > self.tol:
                raise SolverError(f"unit response for cell {cell + 1} has residual {res:.3e}", residual=res)

    def _rise(self, layout: Layout) -> np.ndarray:
        """Flat rise field, summed over cells in canonical order so the value
        does not depend on generation order or batch composition."""
        layout.check(self.spec)
        if len(layout) == 0:
            return np.zeros(self.resolution**2)
        idx = np.fromiter((c - 1 for c, _ in layout.key), dtype=np.intp, count=len(layout))
        q = np.fromiter((q for _, q in layout.key), dtype=float, count=len(layout))
        return (q * self.cell_scale[idx]) @ self.basis[idx]

    def _peaks(self, layouts: list[Layout]) -> np.ndarray:
        return np.array([self._rise(lay).max() for lay in layouts])

    def _evaluate_many(self, layouts):
        self.basis
        if self.workers > 1 and len(layouts) >= 2 * self.workers:
            chunks = [list(c) for c in np.array_split(np.array(layouts, dtype=object), self.workers)]
            with ThreadPoolExecutor(self.workers) as pool:
                peaks = np.concatenate(list(pool.map(self._peaks, chunks)))
        else:
            peaks = self._peaks(layouts)
        scale = self.reference_intensity * self.spec.side_length_m**2 / self.spec.conductivity
        return peaks / scale

    def field(self, layout: Layout) -> np.ndarray:
        n = self.resolution
        return self._rise(layout).reshape(n, n) + self.spec.sink_temperature_K


class ExactEvaluator(_BasisEvaluator):
    """Full-resolution finite-difference objective.

    ``method="superposition"`` sums stored unit responses (linear model, same
    factorised system); ``method="solve"`` runs a fresh ``solve_temperature``
    per call.
    """

    name = "exact"

    def __init__(self, spec: DomainSpec, tol: float = DEFAULT_TOL, method: str = "superposition",
                 workers: int = 1):
        if method not in ("superposition", "solve"):
            raise DomainError(f"unknown method {method!r}")
        super().__init__(spec, spec, tol, workers=workers)
        self.method = method

    def _evaluate_many(self, layouts):
        if self.method == "solve":
            return np.array([normalized_metric(self.field(x), self.spec, self.reference_intensity)
                             for x in layouts])
        return super()._evaluate_many(layouts)

    def field(self, layout):
        if self.method == "solve":
            return solve_temperature(layout, self.spec, tol=self.tol)
        return super().field(layout)


def cell_powers(spec: DomainSpec) -> np.ndarray:
    """Discrete heat input per cell for unit intensity (sum of V_P h^2)."""
    vol = node_volumes(spec.fine_resolution) * spec.h**2
    return np.array([vol[cell_slices(c, spec)].sum() for c in range(1, spec.n_cells + 1)])


class CoarseEvaluator(_BasisEvaluator):
    """Same physics on a coarser grid; per-cell intensities are rescaled so each
    cell injects the same heat as on the full-resolution grid."""

    def __init__(self, spec: DomainSpec, coarse_resolution: int, tol: float = DEFAULT_TOL,
                 workers: int = 1):
        if coarse_resolution >= spec.fine_resolution:
            raise DomainError("coarse_resolution must be below fine_resolution")
        if coarse_resolution < spec.cell_partition or coarse_resolution % spec.cell_partition:
            raise DomainError(
                f"coarse_resolution {coarse_resolution} not divisible by cell_partition {spec.cell_partition}")
        coarse = replace(spec, fine_resolution=coarse_resolution)
        scale = cell_powers(spec) / cell_powers(coarse)
        super().__init__(spec, coarse, tol, cell_scale=scale, workers=workers)
        self.name = f"coarse:{coarse_resolution}"


class CachedEvaluator(Evaluator):
    """LRU memo in front of another evaluator, keyed by canonical layout."""

    def __init__(self, inner: Evaluator, capacity: int = 100_000):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        super().__init__(inner.spec, inner.resolution, inner.reference_intensity)
        self.inner = inner
        self.capacity = capacity
        self.name = f"cached({inner.name})"
        self.hits = 0
        self._memo: OrderedDict[tuple, float] = OrderedDict()
        self._lock = threading.Lock()

    def _evaluate_many(self, layouts):
        out = np.empty(len(layouts))
        missing: dict[tuple, list[int]] = {}
        todo = []
        with self._lock:
            for i, lay in enumerate(layouts):
                key = lay.key
                if key in self._memo:
                    self._memo.move_to_end(key)
                    out[i] = self._memo[key]
                    self.hits += 1
                elif key in missing:
                    missing[key].append(i)
                    self.hits += 1
                else:
                    missing[key] = [i]
                    todo.append(lay)
        if todo:
            vals = self.inner.evaluate_many(todo)
            with self._lock:
                for lay, v in zip(todo, vals):
                    for i in missing[lay.key]:
                        out[i] = v
                    self._memo[lay.key] = float(v)
                    self._memo.move_to_end(lay.key)
                    while len(self._memo) > self.capacity:
                        self._memo.popitem(last=False)
        return out

    def field(self, layout):
        return self.inner.field(layout)


def exact_evaluator(spec: DomainSpec, tol: float = DEFAULT_TOL, **kw) -> ExactEvaluator:
    return ExactEvaluator(spec, tol, **kw)


def coarse_evaluator(spec: DomainSpec, coarse_resolution: int, tol: float = DEFAULT_TOL,
                     **kw) -> CoarseEvaluator:
    return CoarseEvaluator(spec, coarse_resolution, tol, **kw)


def cached_evaluator(inner: Evaluator, capacity: int) -> CachedEvaluator:
    return CachedEvaluator(inner, capacity)


def parse_evaluator(text: str, spec: DomainSpec, tol: float = DEFAULT_TOL, cache: int = 0,
                    workers: int = 1) -> Evaluator:
    """Build an evaluator from ``exact`` or ``coarse:R``; ``cache > 0`` wraps it in an LRU."""
    kind, _, arg = text.partition(":")
    if kind == "exact" and not arg:
        ev = ExactEvaluator(spec, tol, workers=workers)
    elif kind == "coarse":
        try:
            res = int(arg)
        except ValueError as exc:
            raise DomainError(f"bad coarse resolution in {text!r}") from exc
        ev = CoarseEvaluator(spec, res, tol, workers=workers)
    else:
        raise DomainError(f"unknown evaluator {text!r} (expected exact or coarse:R)")
    return CachedEvaluator(ev, cache) if cache > 0 else ev


# --- error metrics -----------------------------------------------------------

def compute_mae(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    predicted, truth = np.asarray(predicted, float), np.asarray(truth, float)
    if predicted.shape != truth.shape:
        raise DomainError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    ae = np.abs(predicted - truth)
    return float(ae.mean()), float(ae.max())


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation between node-centred grids spanning the same interval."""
    x = np.linspace(0.0, n_in - 1, n_out)
    lo = np.clip(np.floor(x).astype(int), 0, n_in - 2) if n_in > 1 else np.zeros(n_out, int)
    frac = x - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def prolong(field: np.ndarray, n_fine: int) -> np.ndarray:
    """Bilinear prolongation of an n x n node field to n_fine x n_fine."""
    field = np.asarray(field, float)
    if field.shape == (n_fine, n_fine):
        return field.copy()
    p_r = _interp_matrix(n_fine, field.shape[0])
    p_c = _interp_matrix(n_fine, field.shape[1])
    return p_r @ field @ p_c.T


@dataclass
class SampleError:
    sample_id: int
    mae_K: float
    max_ae_K: float
    tmax_ae_K: float


@dataclass
class SurrogateReport:
    name: str
    mae_K: float
    max_ae_K: float
    samples: list[SampleError] = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return len(self.samples)

    @property
    def ae_K(self) -> list[float]:
        return [s.mae_K for s in self.samples]

    def summary_line(self) -> str:
        return (f"evaluator={self.name} samples={self.sample_count} "
                f"mae_K={self.mae_K:.9g} max_ae_K={self.max_ae_K:.9g}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("sample_id,ae_K,max_ae_K,tmax_ae_K\n")
            for s in self.samples:
                fh.write(f"{s.sample_id},{s.mae_K:.9g},{s.max_ae_K:.9g},{s.tmax_ae_K:.9g}\n")
            fh.write(f"# {self.summary_line()}\n")


def benchmark_surrogate(candidate: Evaluator, spec: DomainSpec, sample_count: int, seed: int,
                        scheme=None, tol: float = DEFAULT_TOL) -> SurrogateReport:
    """Compare candidate fields against exact solves on random layouts.

    Per sample: field MAE over the full-resolution grid, max pointwise error
    and the error of the peak temperature.  The report MAE averages the
    per-sample MAEs.
    """
    from .dataset import IntensityScheme, sample_random_layout

    if sample_count < 1:
        raise DomainError("sample_count must be >= 1")
    scheme = scheme or IntensityScheme()
    rng = np.random.default_rng(seed)
    n = spec.fine_resolution
    rows = []
    for i in range(sample_count):
        layout = sample_random_layout(spec, scheme, rng)
        truth = solve_temperature(layout, spec, tol=tol)
        pred = prolong(candidate.field(layout), n)
        mae, mx = compute_mae(pred, truth)
        rows.append(SampleError(i, mae, mx, abs(float(pred.max()) - float(truth.max()))))
    return SurrogateReport(
        candidate.name,
        float(np.mean([r.mae_K for r in rows])),
        float(max(r.max_ae_K for r in rows)),
        rows,
    )


def tmax_of(evaluator: Evaluator, r_m: float) -> float:
    """Peak temperature corresponding to an objective value of ``evaluator``."""
    spec = evaluator.spec
    return spec.sink_temperature_K + r_m * evaluator.reference_intensity * spec.side_length_m**2 / spec.conductivity


__all__ = [
    "Evaluator", "ExactEvaluator", "CoarseEvaluator", "CachedEvaluator",
    "exact_evaluator", "coarse_evaluator", "cached_evaluator", "parse_evaluator",
    "compute_mae", "prolong", "benchmark_surrogate", "SurrogateReport", "SampleError",
    "cell_powers", "metric_from_tmax", "tmax_of",
]
