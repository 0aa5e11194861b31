"""End-to-end acceptance checks, one test per criterion.

Each test is tagged with ``criterion(n)``; the conftest hook prints a
PASS/FAIL line per criterion in the terminal summary.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hslo.cli import main
from hslo.config import derive_seed
from hslo.dataset import MANIFEST_NAME, SAMPLES_NAME, IntensityScheme, sample_random_layout
from hslo.moea import (
    KERNELS,
    ArchitectureGenome,
    BackbonePreset,
    LayerGene,
    MoeaConfig,
    cost_model,
    make_objective,
    non_dominated_sort,
    run_nsga2,
)
from hslo.optim import MnsloConfig, neighborhood, resimulate, run_mnslo, similarity
from hslo.surrogate import coarse_evaluator, compute_mae, exact_evaluator
from hslo.thermal import (
    DomainSpec,
    Layout,
    metric_from_tmax,
    normalized_metric,
    rasterize_intensity,
    sink_adjacent_cells,
    solve_temperature,
)

from oracles import TOY, brute_fronts, dense_ghost_oracle, enumerate_small, toy_pareto

DEFAULT = DomainSpec()
TINY = DomainSpec(fine_resolution=40, cell_partition=4)
TINY_SCHEME = IntensityScheme(n_sources=4)
GRID20 = DomainSpec(fine_resolution=20, cell_partition=10, sink_width_m=0.011)


def note(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.fixture(scope="module")
def enumeration():
    return enumerate_small(TINY, 4)


def run_case(scheme):
    """Coarse-surrogate search plus exact re-simulation for seeds 0..2."""
    search = coarse_evaluator(DEFAULT, 50)
    exact = exact_evaluator(DEFAULT)
    runs = []
    for seed in range(3):
        cfg = MnsloConfig(population_size=30, group_count=3, seed=derive_seed(seed, "mnslo"))
        result = run_mnslo(search, cfg, scheme)
        rows = sorted(resimulate(result.archive, exact), key=lambda r: r[2])
        runs.append(rows)
    return runs


@pytest.fixture(scope="module")
def case1():
    return run_case(IntensityScheme())


@pytest.fixture(scope="module")
def case2():
    return run_case(IntensityScheme.case2())


@pytest.mark.criterion(1)
def test_solver_correctness(request):
    zero = solve_temperature(Layout.uniform([]), DEFAULT)
    assert np.all(zero == DEFAULT.sink_temperature_K)

    rng = np.random.default_rng(1)
    lay = sample_random_layout(DEFAULT, IntensityScheme.case2(), rng)
    double = Layout(lay.cells, tuple(2 * q for q in lay.intensities))
    t1 = solve_temperature(lay, DEFAULT) - DEFAULT.sink_temperature_K
    t2 = solve_temperature(double, DEFAULT) - DEFAULT.sink_temperature_K
    lin = np.max(np.abs(t2 - 2 * t1)) / np.max(np.abs(t2))
    assert lin <= 1e-8

    a, b = Layout.uniform(lay.cells[:10]), Layout.uniform(lay.cells[10:])
    ta, tb = (solve_temperature(x, DEFAULT) - 298.0 for x in (a, b))
    tab = solve_temperature(Layout.uniform(lay.cells), DEFAULT) - 298.0
    sup = np.max(np.abs(tab - ta - tb)) / np.max(np.abs(tab))
    assert sup <= 1e-6

    small = Layout((23, 68, 45), (10000.0, 4000.0, 16000.0))
    dense = dense_ghost_oracle(rasterize_intensity(small, GRID20), GRID20)
    agree = max(float(np.max(np.abs(solve_temperature(small, GRID20, method=m) - dense)))
                for m in ("direct", "cg"))
    assert agree <= 1e-6
    note(request, f"linearity {lin:.1e}, superposition {sup:.1e}, dense vs solvers {agree:.1e} K")


@pytest.mark.criterion(2)
def test_normalization(request):
    for tmax, expected in ((327.02, 0.2902), (326.74, 0.2874)):
        field = np.full((DEFAULT.fine_resolution,) * 2, DEFAULT.sink_temperature_K)
        field[50, 50] = tmax
        assert abs(normalized_metric(field, DEFAULT) - expected) <= 1e-12
    # a case-2 baseline temperature goes through the same formula
    assert abs(metric_from_tmax(333.51, DEFAULT) - 0.3551) <= 1e-12
    note(request, "327.02 K -> 0.2902, 326.74 K -> 0.2874")


@pytest.mark.criterion(3)
def test_small_instance_optimum(request, enumeration):
    best_cells, best_f = enumeration[0]
    assert len(enumeration) == 1820
    ev = exact_evaluator(TINY)
    for seed in range(3):
        t0 = time.perf_counter()
        res = run_mnslo(ev, MnsloConfig(population_size=8, group_count=2, seed=seed), TINY_SCHEME)
        assert time.perf_counter() - t0 < 60
        assert res.best_fitness == best_f
        assert res.best_layout.sorted_cells == best_cells
    note(request, f"optimum {best_cells} R_m={best_f:.10f} found by seeds 0-2")


@pytest.mark.criterion(4)
def test_small_instance_multimodality(request, enumeration):
    eps = enumeration[4][1] - enumeration[0][1] + 1e-9
    expected = {c for c, f in enumeration if f < enumeration[0][1] + eps}
    ev = exact_evaluator(TINY)
    missing = {}
    for seed in range(3):
        cfg = MnsloConfig(population_size=8, group_count=2, epsilon=eps, seed=seed)
        res = run_mnslo(ev, cfg, TINY_SCHEME)
        found = {lay.sorted_cells for lay, _ in res.archive.entries()}
        lost = sorted(expected - found)
        if lost:
            missing[seed] = lost
    note(request, f"{len(expected)} layouts within eps; missing per seed {missing or 'none'}")
    assert not missing


@pytest.mark.criterion(5)
def test_case1_benchmark(request, case1):
    best = min(rows[0][2] for rows in case1)
    best_run = min(case1, key=lambda rows: rows[0][2])
    n_below = sum(1 for _, _, t in best_run if t <= 327.05)
    note(request, f"best Tmax {best:.4f} K (target <= 327.1), {n_below} archived layouts <= 327.05 K")
    assert best <= 327.1
    assert n_below >= 3


@pytest.mark.criterion(6)
def test_case2_benchmark(request, case2):
    best_run = min(case2, key=lambda rows: rows[0][2])
    best = best_run[0][2]
    adjacent = sink_adjacent_cells(DEFAULT)
    placements = []
    for lay, _, _ in best_run[:3]:
        hot = [c for c, q in zip(lay.cells, lay.intensities) if q == 20000.0]
        assert len(hot) == 2
        placements.append(all(c in adjacent for c in hot))
    note(request, f"best Tmax {best:.4f} K (target <= 330.0), top-3 hot sources by sink {placements}")
    assert best <= 330.0 < 333.51
    assert all(placements)


@pytest.mark.criterion(7)
def test_neighborhood_contract(request):
    rng = np.random.default_rng(7)
    x = sample_random_layout(DEFAULT, IntensityScheme(), rng)
    for t in range(len(x)):
        cand = neighborhood(x, t, DEFAULT.n_cells, rng)
        assert len(cand) == 99
        swaps = 0
        for y in cand:
            y.check(DEFAULT)
            if y.cells[t] in x.cells:
                swaps += 1
                assert set(y.cells) == set(x.cells)
            else:
                assert len(set(y.cells) - set(x.cells)) == 1
        assert swaps == len(x) - 1
    note(request, "99 valid candidates for each of 20 positions")


@pytest.mark.criterion(8)
def test_similarity_units(request):
    rng = np.random.default_rng(8)
    a = Layout.uniform(range(1, 21))
    assert similarity(a, a) == 0.0
    assert similarity(a, Layout.uniform(range(2, 22))) == 1.0
    for _ in range(200):
        x = Layout.uniform(rng.choice(100, 20, replace=False) + 1)
        y = Layout.uniform(rng.choice(100, 20, replace=False) + 1)
        assert similarity(x, y) == similarity(y, x) >= 0
    note(request, "identity 0, shift 1.0, symmetric, nonnegative")


@pytest.mark.criterion(9)
def test_nsga2_oracles(request):
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        # small integer grid to force ties and duplicates
        pts = rng.integers(0, 6, size=(n, 2)).astype(float)
        got = [sorted(f) for f in non_dominated_sort(pts)]
        assert got == [sorted(f) for f in brute_fronts(pts)]

    pareto, _ = toy_pareto()
    evaluate = make_objective(TOY)
    t0 = time.perf_counter()
    coverage = []
    for seed in range(3):
        res = run_nsga2(evaluate, MoeaConfig(generations=60, seed=seed), n_layers=2)
        coverage.append(len(pareto & set(res.front)) / len(pareto))
    elapsed = time.perf_counter() - t0
    note(request, f"sort exact on 200 sets; coverage {[round(c, 2) for c in coverage]} in {elapsed:.1f} s")
    assert min(coverage) >= 0.9
    assert elapsed < 60


_gene = st.builds(LayerGene, st.sets(st.sampled_from(KERNELS), min_size=1).map(tuple), st.sampled_from((3, 6)))


@pytest.mark.criterion(10)
@settings(max_examples=60, deadline=None)
@given(st.lists(_gene, min_size=12, max_size=12), st.integers(0, 11), st.sampled_from(KERNELS))
def test_cost_model(layers, i, extra):
    single = BackbonePreset(channels=(32, 48), stage_starts=(0,))
    assert cost_model(ArchitectureGenome((LayerGene((3,), 3),)), single) == (8544, 2 * 8544 * 625)

    g = ArchitectureGenome(tuple(layers))
    base = cost_model(g)
    assert base == cost_model(g)
    gene = layers[i]
    bigger = [LayerGene(tuple(sorted(set(gene.kernels) | {extra})), gene.rate), LayerGene(gene.kernels, 6)]
    for new in bigger:
        grown = list(layers)
        grown[i] = new
        p, f = cost_model(ArchitectureGenome(tuple(grown)))
        assert p >= base[0] and f >= base[1]


@pytest.mark.criterion(11)
def test_mae_arithmetic(request):
    truth = np.full((200, 200), 300.0)
    assert compute_mae(truth, truth) == (0.0, 0.0)
    assert compute_mae(truth + 1.0, truth) == (1.0, 1.0)
    pred = truth.copy()
    pred[3, 7] += 1.0
    assert compute_mae(pred, truth) == (1.0 / 40000, 1.0)
    pred[150, 20] -= 3.0
    assert compute_mae(pred, truth) == (4.0 / 40000, 3.0)
    note(request, "single 1 K error -> 1/40000")


SMALL_INI = """\
[domain]
fine_resolution = 40
cell_partition = 10

[scheme]
n_sources = 20

[mnslo]
population_size = 6
group_count = 2

[moea]
population = 10
generations = 3
"""


def _snapshot(directory, skip=()):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file() and p.name not in skip}


def _strip_created(files):
    text = files[MANIFEST_NAME].decode()
    files[MANIFEST_NAME] = "\n".join(ln for ln in text.splitlines() if not ln.startswith("created="))
    return files


@pytest.mark.criterion(12)
def test_cli_reproducible(request, tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(SMALL_INI)
    layout = tmp_path / "layout.csv"
    layout.write_text("cell,intensity\n3,10000\n47,4000\n88,16000\n")
    common = ["--config", str(cfg), "--seed", "4"]
    compared = []

    def twice(name, build, collect):
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            capsys.readouterr()
            assert main(build(d)) == 0
            outs.append((capsys.readouterr().out.replace(str(d), "<out>"), collect(d)))
        assert outs[0] == outs[1], name
        compared.append(name)

    twice("simulate", lambda d: ["simulate", str(layout), *common, "--csv", str(d / "f.csv"),
                                 "--hslf", str(d / "f.hslf")], _snapshot)
    field = tmp_path / "simulate0" / "f.hslf"
    twice("render", lambda d: ["render", str(field), str(d / "f.ppm"), *common], _snapshot)
    twice("generate", lambda d: ["generate", *common, "--count", "3", "--out", str(d / "ds")],
          lambda d: _strip_created(_snapshot(d / "ds")))
    # wall-clock time is the one non-deterministic report
    twice("optimize", lambda d: ["optimize", *common, "--evaluator", "coarse:20", "--out-dir", str(d)],
          lambda d: _snapshot(d, skip=("timing.txt",)))
    twice("nas", lambda d: ["nas", *common, "--out", str(d)], _snapshot)
    twice("benchmark", lambda d: ["benchmark", "surrogate", *common, "--coarse", "20", "--samples", "4",
                                  "--out", str(d)], _snapshot)
    twice("benchmark-case1", lambda d: ["benchmark", "case1", *common, "--coarse", "20", "--seeds", "2",
                                        "--out", str(d)], _snapshot)
    assert (tmp_path / "generate0" / "ds" / SAMPLES_NAME).stat().st_size > 0
    note(request, "byte-identical: " + ", ".join(compared))
