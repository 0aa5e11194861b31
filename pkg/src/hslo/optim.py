"""Multimodal neighbourhood search for discrete source layouts.

The population is split into groups around distant leaders, each leader is
improved by repeated neighbourhood sweeps, and every candidate within
``epsilon`` of its neighbourhood's best is offered to a bounded archive, so a
single run returns many distinct near-optimal layouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import IntensityScheme, sample_random_layout
from .errors import ConfigError, DomainError
from .surrogate import Evaluator
from .thermal import Layout


@dataclass(frozen=True)
class MnsloConfig:
    population_size: int = 30
    group_count: int = 1
    archive_capacity: int = 100
    epsilon: float = 5e-4
    max_sweeps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1 or self.group_count < 1:
            raise ConfigError("population_size and group_count must be >= 1")
        if self.population_size % self.group_count:
            raise ConfigError(
                f"population_size {self.population_size} not divisible by group_count {self.group_count}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.archive_capacity < 1:
            raise ConfigError("archive_capacity must be >= 1")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1")


class SolutionArchive:
    """Bounded set of distinct layouts with their fitness.

    Ties in fitness are broken by insertion order, so truncation is
    deterministic.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: dict[tuple, tuple[float, int, Layout]] = {}
        self._seq = 0

    def offer(self, layout: Layout, fitness: float) -> bool:
        key = layout.key
        if key in self._entries:
            return False
        self._entries[key] = (float(fitness), self._seq, layout)
        self._seq += 1
        return True

    def truncate(self) -> None:
        if len(self._entries) <= self.capacity:
            return
        keep = sorted(self._entries.items(), key=lambda kv: kv[1][:2])[: self.capacity]
        self._entries = dict(keep)

    def entries(self) -> list[tuple[Layout, float]]:
        """(layout, fitness) pairs sorted by fitness."""
        return [(lay, f) for f, _, lay in sorted(self._entries.values(), key=lambda v: v[:2])]

    def __len__(self):
        return len(self._entries)

    def __contains__(self, layout: Layout):
        return layout.key in self._entries

    def best(self) -> tuple[Layout, float]:
        if not self._entries:
            raise DomainError("archive is empty")
        return self.entries()[0]


@dataclass
class MnsloResult:
    archive: SolutionArchive
    best_layout: Layout
    best_fitness: float
    trajectories: list[list[tuple[int, float]]]
    evaluations: int
    groups: list[list[int]] = field(default_factory=list)


def similarity(a: Layout, b: Layout) -> float:
    """Mean absolute difference between the sorted cell sequences."""
    if len(a) != len(b):
        raise DomainError(f"layouts hold {len(a)} and {len(b)} sources")
    if len(a) == 0:
        return 0.0
    sa = np.asarray(a.sorted_cells)
    sb = np.asarray(b.sorted_cells)
    return float(np.abs(sa - sb).sum() / len(a))


def cluster_population(pop: Sequence[tuple[Layout, float]], c: int) -> list[list[int]]:
    """Split ``pop`` into ``c`` equal groups; element 0 of each group is its leader.

    Repeatedly the fittest remaining individual leads a group and takes its
    ``M - 1`` most similar remaining peers (ties go to the lower index).
    """
    n = len(pop)
    if c < 1 or n % c:
        raise DomainError(f"population of {n} cannot be split into {c} equal groups")
    m = n // c
    order = sorted(range(n), key=lambda i: (pop[i][1], i))
    remaining = list(order)
    groups = []
    while remaining:
        leader = remaining.pop(0)
        others = sorted(remaining, key=lambda i: (similarity(pop[leader][0], pop[i][0]), i))
        members = others[: m - 1]
        taken = set(members)
        remaining = [i for i in remaining if i not in taken]
        groups.append([leader] + members)
    return groups


def neighborhood(x: Layout, t: int, n_cells: int, rng: np.random.Generator) -> list[Layout]:
    """All single-source moves of the source at position ``t`` (0-based).

    Cells are visited in a random order.  An empty cell receives the source;
    an occupied one swaps places with it.  The source's own cell is skipped,
    giving ``n_cells - 1`` candidates.
    """
    ns = len(x)
    if not 0 <= t < ns:
        raise DomainError(f"position {t} outside 0..{ns - 1}")
    cells = list(x.cells)
    where = {c: k for k, c in enumerate(cells)}
    own = cells[t]
    out = []
    for i in rng.permutation(n_cells) + 1:
        i = int(i)
        if i == own:
            continue
        nb = cells.copy()
        k = where.get(i)
        if k is None:
            nb[t] = i
        else:
            nb[t], nb[k] = i, own
        out.append(Layout(tuple(nb), x.intensities))
    return out


def _admit(fits: np.ndarray, eps: float) -> np.ndarray:
    fmin = fits.min()
    return (fits < fmin + eps) | (fits == fmin)


def local_search_sweep(x: Layout, fitness: float, evaluator: Evaluator, archive: SolutionArchive,
                       cfg: MnsloConfig, rng: np.random.Generator,
                       on_neighborhood: Callable | None = None) -> tuple[Layout, float, bool]:
    """One pass over all source positions in random order.

    After each neighbourhood the incumbent moves to the neighbourhood's best
    candidate when that is strictly better.
    """
    n_cells = evaluator.spec.n_cells
    improved = False
    for t in rng.permutation(len(x)):
        cand = neighborhood(x, int(t), n_cells, rng)
        if not cand:
            continue
        fits = evaluator.evaluate_many(cand)
        admitted = _admit(fits, cfg.epsilon)
        for lay, f, ok in zip(cand, fits, admitted):
            if ok:
                archive.offer(lay, float(f))
        archive.truncate()
        if on_neighborhood is not None:
            on_neighborhood(cand, fits)
        j = int(np.argmin(fits))
        if fits[j] < fitness:
            x, fitness, improved = cand[j], float(fits[j]), True
    return x, fitness, improved


def initial_population(spec, scheme: IntensityScheme, size: int, rng: np.random.Generator,
                       max_tries: int = 1000) -> list[Layout]:
    pop: list[Layout] = []
    seen = set()
    limit = math.comb(spec.n_cells, scheme.n_sources)
    if scheme.kind == "uniform" and size > limit:
        raise ConfigError(f"only {limit} distinct layouts exist, {size} requested")
    tries = 0
    while len(pop) < size:
        lay = sample_random_layout(spec, scheme, rng)
        if lay.key in seen:
            tries += 1
            if tries > max_tries * size:
                raise ConfigError("could not draw enough distinct layouts")
            continue
        seen.add(lay.key)
        pop.append(lay)
    return pop


def run_mnslo(evaluator: Evaluator, cfg: MnsloConfig, scheme: IntensityScheme | None = None,
              progress: Callable[[int, int, float], None] | None = None) -> MnsloResult:
    """Clustered multi-start neighbourhood search sharing one archive.

    ``progress(sweep, group, fitness)`` is called after every sweep.
    """
    spec = evaluator.spec
    scheme = scheme or IntensityScheme(n_sources=min(20, spec.n_cells))
    start_calls = evaluator.calls
    rng = np.random.default_rng(cfg.seed)
    pop = initial_population(spec, scheme, cfg.population_size, rng)
    fits = evaluator.evaluate_many(pop)
    groups = cluster_population(list(zip(pop, fits)), cfg.group_count)
    archive = SolutionArchive(cfg.archive_capacity)
    trajectories = []
    for g, members in enumerate(groups):
        x, fx = pop[members[0]], float(fits[members[0]])
        archive.offer(x, fx)
        archive.truncate()
        traj = [(0, fx)]
        for sweep in range(1, cfg.max_sweeps + 1):
            x, fx, improved = local_search_sweep(x, fx, evaluator, archive, cfg, rng)
            traj.append((sweep, fx))
            if progress is not None:
                progress(sweep, g, fx)
            if not improved:
                break
        trajectories.append(traj)
    best_layout, best_fit = archive.best()
    return MnsloResult(archive, best_layout, best_fit, trajectories,
                       evaluator.calls - start_calls, groups)


def resimulate(archive: SolutionArchive, exact: Evaluator) -> list[tuple[Layout, float, float]]:
    """(layout, search fitness, exact peak temperature) for each archived entry."""
    return [(lay, f, exact.tmax(lay)) for lay, f in archive.entries()]


def count_solutions_below(archive: SolutionArchive, exact: Evaluator, threshold_K: float) -> int:
    if len(archive) == 0:
        raise DomainError("archive is empty")
    return sum(1 for _, _, t in resimulate(archive, exact) if t <= threshold_K)


def write_archive_csv(path, rows: Sequence[tuple[Layout, float, float | None]]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("rank,fitness,exact_tmax_K,cells,intensities\n")
        for rank, (lay, f, t) in enumerate(rows, 1):
            tt = "" if t is None else f"{t:.9f}"
            cells = ",".join(str(c) for c in lay.sorted_cells)
            intens = ",".join(f"{q:g}" for _, q in lay.key)
            fh.write(f'{rank},{f:.12g},{tt},"{cells}","{intens}"\n')


def write_trajectories_csv(path, trajectories) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("group,sweep,fitness\n")
        for g, traj in enumerate(trajectories):
            for sweep, f in traj:
                fh.write(f"{g},{sweep},{f:.12g}\n")
