"""Markov renewal theory on a lattice grid.

Perron data of quasi-stochastic matrices, semi-Markov kernels, Markov renewal
measures with limit-theorem diagnostics, a Markov renewal equation solver,
regenerative simulation and three application drivers.
"""

from .errors import (ArithmeticKernel, DivergentMoment, GridMismatch, InsufficientVisits,
                     MarkovRenewalError, NoRoot, NonConvergence, NonPositiveDrift,
                     NotIrreducible, NotPrimitive, NotQuasiStochastic, NotSpreadOut,
                     TruncationFailure, ValidationError, WindowTooSmall)
from .families import parse_family
from .perron import (PerronData, harmonic_transform, is_primitive, perron_pair,
                     spectral_radius, stationary_measure)
from .kernel import (Dist, KernelStats, LatticeType, Measure, SemiMarkovKernel, convolve,
                     kernel_convolve, kernel_power, kernel_stats, lattice_type, stationary_drift)
from .renewal import (GridMeasure, blackwell_check, local_bound_check, markov_renewal_measure,
                      renewal_measure, stone_density, taboo_occupation, uv_transform)
from .simulate import (cycle_estimators, empirical_renewal, replicate_rng, sample_path,
                       sample_paths, tilted_kernel)
from .mre import (GridFunction, asymptotic_limit, dri_check, homogeneous_probe, residual,
                  solve_mre)
from .apps import (BranchingModel, PerpetuityModel, find_tilt_root, lindley_tail, malthusian,
                   mm1_kernel, perpetuity)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
