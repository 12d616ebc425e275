"""Two-dimensional electro-communication and electro-sensing toolkit for weakly electric fish."""

from .geometry import (
    BoundaryMesh,
    ElectricOrgan,
    EodSignal,
    FishSpec,
    MediumParams,
    Receptors,
    SearchGrid,
    TargetSpec,
    make_ellipse_mesh,
    make_search_grid,
    place_receptors,
)
from .forward import (
    Admittivity,
    ForwardSolution,
    Scene,
    solve_background_hatU1,
    solve_two_fish,
    solve_with_target,
)

__version__ = "0.1.0"

__all__ = [
    "Admittivity",
    "BoundaryMesh",
    "ElectricOrgan",
    "EodSignal",
    "FishSpec",
    "ForwardSolution",
    "MediumParams",
    "Receptors",
    "Scene",
    "SearchGrid",
    "TargetSpec",
    "make_ellipse_mesh",
    "make_search_grid",
    "place_receptors",
    "solve_background_hatU1",
    "solve_two_fish",
    "solve_with_target",
]
