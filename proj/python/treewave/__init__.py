"""Wave, heat and Schrodinger equations on metric trees; potential recovery by leaf peeling."""

from ._core import (
    Measurements,
    MetricTree,
    NumericalError,
    ValidationError,
    __version__,
    default_peel_horizon,
    load_network,
    make_tree,
    member_seed,
    observability,
    parse_network,
    peel,
    peel_schedule,
    random_smooth_potential,
    random_tree,
    relative_network_error,
    reznitzkaya,
    serialize_network,
    simulate,
    stability,
    uniqueness,
    validate_tree,
)

__all__ = [
    "Measurements",
    "MetricTree",
    "NumericalError",
    "ValidationError",
    "__version__",
    "default_peel_horizon",
    "load_network",
    "make_tree",
    "member_seed",
    "observability",
    "parse_network",
    "peel",
    "peel_schedule",
    "random_smooth_potential",
    "random_tree",
    "relative_network_error",
    "reznitzkaya",
    "serialize_network",
    "simulate",
    "stability",
    "uniqueness",
    "validate_tree",
]
