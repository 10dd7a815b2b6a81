"""Transition probabilities of walks on Z by finite perturbation of the free walk."""
from .bessel import FreeGreen, g0, g0_laplace, scaled_bessel_i, scaled_bessel_table
from .convergence import bn_norm, convergence_study, incremental_greens, truncated_rates
from .coord_ops import (
    CoordOperator,
    L1Vector,
    Perturbation,
    RateField,
    apply,
    apply_adjoint,
    build_walk_generator,
    operator_norm,
    perturbation_from,
)
from .laplace import InversionScheme, greens_exact, greens_exact_many, invert, laplace_solve, resolvent_check
from .oracle import evolve, oracle_green, oracle_paths, truncate
from .volterra import (
    GreenPath,
    KernelPath,
    PerturbedGreen,
    TimeGrid,
    gronwall_bound,
    kernel_F,
    kernel_H,
    picard_iterate,
    solve_backward,
    solve_forward,
)

__version__ = "0.1.0"
