"""Particle-based distributional optimisation by variational transport."""

__version__ = "0.1.0"

from .space import Space, Topology
from .kernel import Kernel
from .ensemble import Ensemble, Gaussian, NumericalError, ScoreModel, UniformTorus, WrappedGaussian, sample_init
from .witness import Potential, RepresenterWitness, Witness
from .functionals import FunctionalSpec, Kind, Backend, build_spec, solve_witness
from .transport import TransportConfig, TransportMapHistory, apply_history, run_direct, run_map_composition
from .diagnostics import IterationRecord, Monitor, exact_w2, grid_kl, mmd_stats, rate_fit

__all__ = [
    "Space", "Topology", "Kernel", "Ensemble", "Gaussian", "UniformTorus", "WrappedGaussian",
    "NumericalError", "ScoreModel", "sample_init", "Potential", "Witness", "RepresenterWitness",
    "FunctionalSpec", "Kind", "Backend", "build_spec", "solve_witness", "TransportConfig",
    "TransportMapHistory", "apply_history", "run_direct", "run_map_composition",
    "IterationRecord", "Monitor", "exact_w2", "grid_kl", "mmd_stats", "rate_fit",
]
