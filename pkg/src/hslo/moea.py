"""NSGA-II over inverted-residual backbone genomes.

A genome lists, per layer, a set of depthwise kernel sizes (parallel paths)
and an expansion rate.  ``cost_model`` counts parameters and FLOPs
analytically; the accuracy objective is a plug-in callable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError

KERNELS = (3, 5, 7, 9)
RATES = (3, 6)
N_LAYERS = 12
DEFAULT_CHANNELS = (32, 48, 48, 96, 96, 96, 192, 192, 192, 256, 256, 320, 320)


@dataclass(frozen=True, order=True)
class LayerGene:
    kernels: tuple[int, ...]
    rate: int

    def __post_init__(self):
        ks = tuple(sorted(set(int(k) for k in self.kernels)))
        if not ks:
            raise DomainError("a layer needs at least one kernel")
        if any(k not in KERNELS for k in ks):
            raise DomainError(f"kernel sizes must come from {KERNELS}, got {ks}")
        if self.rate not in RATES:
            raise DomainError(f"expansion rate must be one of {RATES}, got {self.rate}")
        object.__setattr__(self, "kernels", ks)

    def token(self) -> str:
        return "".join(f"k{k}" for k in self.kernels) + f":r{self.rate}"

    @classmethod
    def parse(cls, token: str) -> "LayerGene":
        ks, sep, rate = token.strip().partition(":")
        if not sep or not rate.startswith("r") or not ks.startswith("k"):
            raise DomainError(f"bad layer token {token!r}")
        try:
            kernels = tuple(int(k) for k in ks.split("k")[1:])
            return cls(kernels, int(rate[1:]))
        except ValueError as exc:
            raise DomainError(f"bad layer token {token!r}") from exc


@dataclass(frozen=True, order=True)
class ArchitectureGenome:
    layers: tuple[LayerGene, ...]

    def __post_init__(self):
        if not self.layers:
            raise DomainError("genome has no layers")

    def __len__(self):
        return len(self.layers)

    def to_text(self) -> str:
        return " ".join(g.token() for g in self.layers)

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureGenome":
        return cls(tuple(LayerGene.parse(t) for t in text.split()))

    def as_dict(self) -> dict:
        return {i: {"conv": list(g.kernels), "rate": g.rate} for i, g in enumerate(self.layers)}


@dataclass(frozen=True)
class BackbonePreset:
    """Channel plan: ``channels[0]`` is the stem output, ``channels[i+1]`` layer i's output."""

    channels: tuple[int, ...] = DEFAULT_CHANNELS
    stage_starts: tuple[int, ...] = (0, 3, 6, 9)
    stem_resolution: int = 50
    input_resolution: int = 200

    def __post_init__(self):
        if len(self.channels) < 2:
            raise DomainError("need a stem and at least one layer")
        if any(s < 0 or s >= self.n_layers for s in self.stage_starts):
            raise DomainError("stage start outside the layer range")

    @property
    def n_layers(self) -> int:
        return len(self.channels) - 1

    def spatial_sizes(self) -> list[int]:
        """Output side length of each layer; each stage start halves (rounding up)."""
        s = self.stem_resolution
        out = []
        for i in range(self.n_layers):
            if i in self.stage_starts:
                s = -(-s // 2)
            out.append(s)
        return out


@dataclass(frozen=True)
class MoeaConfig:
    population: int = 40
    generations: int = 30
    pc: float = 1.0
    pm: float = 1.0
    m_max: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ConfigError("population must be even and >= 2")
        if not (0 <= self.pc <= 1 and 0 <= self.pm <= 1):
            raise ConfigError("pc and pm must lie in [0, 1]")
        if not 1 <= self.m_max <= len(KERNELS):
            raise ConfigError(f"m_max must lie in 1..{len(KERNELS)}")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")


@dataclass
class ObjectivePoint:
    objectives: tuple[float, ...]
    genome: ArchitectureGenome | None = None

    def __post_init__(self):
        self.objectives = tuple(float(v) for v in self.objectives)
        if not all(np.isfinite(self.objectives)):
            raise DomainError(f"non-finite objectives {self.objectives}")


# --- variation operators -------------------------------------------------------

def sample_layer(m_max: int, rng: np.random.Generator) -> LayerGene:
    rate = RATES[rng.integers(len(RATES))]
    m = int(rng.integers(1, m_max + 1))
    kernels = rng.choice(KERNELS, size=m, replace=False)
    return LayerGene(tuple(int(k) for k in kernels), int(rate))


def sample_genome(m_max: int, rng: np.random.Generator, n_layers: int = N_LAYERS) -> ArchitectureGenome:
    if not 1 <= m_max <= len(KERNELS):
        raise DomainError(f"m_max must lie in 1..{len(KERNELS)}")
    return ArchitectureGenome(tuple(sample_layer(m_max, rng) for _ in range(n_layers)))


def crossover(a: ArchitectureGenome, b: ArchitectureGenome, pc: float,
              rng: np.random.Generator) -> tuple[ArchitectureGenome, ArchitectureGenome]:
    if len(a) != len(b):
        raise DomainError("parents differ in depth")
    swap = rng.random(len(a)) < pc
    c1 = tuple(gb if s else ga for ga, gb, s in zip(a.layers, b.layers, swap))
    c2 = tuple(ga if s else gb for ga, gb, s in zip(a.layers, b.layers, swap))
    return ArchitectureGenome(c1), ArchitectureGenome(c2)


def mutate(g: ArchitectureGenome, pm: float, rng: np.random.Generator, m_max: int = 4) -> ArchitectureGenome:
    if rng.random() >= pm:
        return g
    i = int(rng.integers(len(g)))
    layers = list(g.layers)
    layers[i] = sample_layer(m_max, rng)
    return ArchitectureGenome(tuple(layers))


# --- objectives ----------------------------------------------------------------

def layer_cost(c_in: int, c_out: int, gene: LayerGene, side: int) -> tuple[int, int]:
    hidden = gene.rate * c_in
    params = c_in * hidden + sum(k * k for k in gene.kernels) * hidden + hidden * c_out
    return params, 2 * params * side * side


def cost_model(g: ArchitectureGenome, preset: BackbonePreset | None = None) -> tuple[int, int]:
    """Total (params, flops) of the backbone, bias and normalisation ignored."""
    preset = preset or BackbonePreset()
    if len(g) != preset.n_layers:
        raise DomainError(f"genome has {len(g)} layers, preset expects {preset.n_layers}")
    params = flops = 0
    for i, (gene, side) in enumerate(zip(g.layers, preset.spatial_sizes())):
        p, f = layer_cost(preset.channels[i], preset.channels[i + 1], gene, side)
        params += p
        flops += f
    return params, flops


def error_proxy(g: ArchitectureGenome) -> float:
    """Deterministic stand-in for validation error.

    Only the largest kernel and the expansion rate of each layer matter, with
    diminishing returns; extra parallel paths cost parameters but do not help.
    """
    total = 0.0
    for gene in g.layers:
        width = 1.0 if gene.rate == 3 else 1.25
        total += 1.0 / (1.0 + width * max(gene.kernels) / 3.0)
    return total / len(g)


def make_objective(preset: BackbonePreset | None = None,
                   error: Callable[[ArchitectureGenome], float] = error_proxy):
    preset = preset or BackbonePreset()

    def evaluate(g: ArchitectureGenome) -> ObjectivePoint:
        return ObjectivePoint((error(g), float(cost_model(g, preset)[0])), g)

    return evaluate


# --- NSGA-II machinery -------------------------------------------------------

def _as_array(points) -> np.ndarray:
    rows = [p.objectives if isinstance(p, ObjectivePoint) else p for p in points]
    arr = np.asarray(rows, dtype=float)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DomainError("objectives must be finite")
    return arr.reshape(len(rows), -1) if len(rows) else np.zeros((0, 0))


def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(points) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as sorted index lists."""
    f = _as_array(points)
    n = len(f)
    if n == 0:
        return []
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while current.size:
        fronts.append(sorted(int(i) for i in current))
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def crowding_distance(front) -> np.ndarray:
    f = _as_array(front)
    n, m = f.shape if f.size else (len(front), 0)
    if n == 0:
        raise DomainError("front is empty")
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for j in range(m):
        order = np.argsort(f[:, j], kind="stable")
        col = f[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = col[-1] - col[0]
        if span == 0:
            continue
        dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def select_survivors(objs: np.ndarray, n: int) -> list[int]:
    """Indices of the ``n`` survivors by rank, then crowding distance."""
    chosen: list[int] = []
    for front in non_dominated_sort(objs):
        if len(chosen) + len(front) <= n:
            chosen.extend(front)
            continue
        cd = crowding_distance(objs[front])
        order = sorted(range(len(front)), key=lambda k: (-cd[k], front[k]))
        chosen.extend(front[k] for k in order[: n - len(chosen)])
        break
    return chosen


@dataclass
class Nsga2Result:
    population: list[ArchitectureGenome]
    objectives: np.ndarray
    front: list[ArchitectureGenome]
    front_objectives: np.ndarray
    evaluations: int


def run_nsga2(evaluate: Callable[[ArchitectureGenome], ObjectivePoint], cfg: MoeaConfig,
              n_layers: int = N_LAYERS, progress: Callable[[int, np.ndarray], None] | None = None
              ) -> Nsga2Result:
    """Elitist NSGA-II.

    Each generation draws parent pairs uniformly, exchanges layers with
    probability ``pc``, mutates each child with probability ``pm``, and keeps
    the best ``n`` of parents plus children.  Duplicate genomes in the merged
    pool rank behind all distinct ones so the population keeps its spread.
    """
    rng = np.random.default_rng(cfg.seed)
    memo: dict[ArchitectureGenome, tuple[float, ...]] = {}

    def score(g):
        if g not in memo:
            memo[g] = evaluate(g).objectives
        return memo[g]

    pop = [sample_genome(cfg.m_max, rng, n_layers) for _ in range(cfg.population)]
    n = cfg.population
    for gen in range(cfg.generations):
        children = []
        for _ in range(0, n, 2):
            i, j = rng.integers(n, size=2)
            c1, c2 = crossover(pop[i], pop[j], cfg.pc, rng)
            children.append(mutate(c1, cfg.pm, rng, cfg.m_max))
            children.append(mutate(c2, cfg.pm, rng, cfg.m_max))
        merged = pop + children
        seen = set()
        unique, dups = [], []
        for g in merged:
            (dups if g in seen else unique).append(g)
            seen.add(g)
        objs = np.array([score(g) for g in unique])
        keep = select_survivors(objs, min(n, len(unique)))
        pop = [unique[k] for k in keep] + dups[: n - len(keep)]
        if progress is not None:
            progress(gen + 1, np.array([score(g) for g in pop]))
    objs = np.array([score(g) for g in pop])
    first = non_dominated_sort(objs)[0]
    front, fobjs = [], []
    for k in first:
        if pop[k] not in front:
            front.append(pop[k])
            fobjs.append(objs[k])
    return Nsga2Result(pop, objs, front, np.array(fobjs), len(memo))


def write_front_csv(path, front: Sequence[ArchitectureGenome], preset: BackbonePreset,
                    error: Callable[[ArchitectureGenome], float] = error_proxy) -> None:
    rows = []
    for g in front:
        params, flops = cost_model(g, preset)
        rows.append((error(g), params, flops, g.to_text()))
    rows.sort()
    with open(path, "w", newline="\n") as fh:
        fh.write("error_proxy,params,flops,genome\n")
        for e, p, f, txt in rows:
            fh.write(f"{e:.12g},{p},{f},{txt}\n")
