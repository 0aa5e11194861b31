"""Heat-source layout optimisation: FDM thermal model, layout search and NSGA-II."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConstraintViolation,
    DomainError,
    FormatError,
    HsloError,
    SingularSystemError,
    SolverError,
)
from .thermal import (
    DomainSpec,
    Layout,
    normalized_metric,
    rasterize_intensity,
    solve_temperature,
)
from .surrogate import (
    SurrogateReport,
    benchmark_surrogate,
    cached_evaluator,
    coarse_evaluator,
    compute_mae,
    exact_evaluator,
)
from .optim import (
    MnsloConfig,
    MnsloResult,
    SolutionArchive,
    cluster_population,
    count_solutions_below,
    local_search_sweep,
    neighborhood,
    run_mnslo,
    similarity,
)
from .moea import (
    ArchitectureGenome,
    BackbonePreset,
    MoeaConfig,
    cost_model,
    crossover,
    crowding_distance,
    mutate,
    non_dominated_sort,
    run_nsga2,
    sample_genome,
)
from .dataset import (
    DatasetManifest,
    IntensityScheme,
    SamplePair,
    generate_dataset,
    load_dataset,
    sample_random_layout,
)
