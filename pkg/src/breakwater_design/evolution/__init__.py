"""Genetic operators, SPEA2 selection and the surrogate-assisted optimizer."""

from .operators import (
    InfeasibleDomainError,
    OperatorConfig,
    apply_mutation,
    applicable_mutations,
    crossover,
    mutate,
    random_breakwater,
    random_system,
)
from .optimizer import (
    APPROACHES,
    BuiltinOracle,
    ConfigError,
    EAConfig,
    ExternalOracle,
    GenerationRecord,
    Individual,
    RunTrace,
    default_reference,
    init_population,
    optimize,
    reproduce,
    select,
    write_archive_csv,
    write_geometry,
)
from .spea2 import density, environmental_selection, spea2_fitness, strength_raw, truncate

__all__ = [
    "APPROACHES",
    "BuiltinOracle",
    "ConfigError",
    "EAConfig",
    "ExternalOracle",
    "GenerationRecord",
    "Individual",
    "InfeasibleDomainError",
    "OperatorConfig",
    "RunTrace",
    "applicable_mutations",
    "apply_mutation",
    "crossover",
    "default_reference",
    "density",
    "environmental_selection",
    "init_population",
    "mutate",
    "optimize",
    "random_breakwater",
    "random_system",
    "reproduce",
    "select",
    "spea2_fitness",
    "strength_raw",
    "truncate",
    "write_archive_csv",
    "write_geometry",
]
