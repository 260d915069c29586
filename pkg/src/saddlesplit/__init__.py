"""Index-1 saddle search for phase-field energies with convex-splitting inner solvers."""

from .energy import GinzburgLandau1D, LandauBrazovskii2D
from .fields import Grid, Metric
from .imf import AuxProblem, IMFOptions, InnerStop, run_cycle, run_imf
from .minmode import EigOptions, min_mode, spectrum_head
from .schemes import StepperConfig, make_stepper, relax

__version__ = "0.1.0"

__all__ = [
    "AuxProblem",
    "EigOptions",
    "GinzburgLandau1D",
    "Grid",
    "IMFOptions",
    "InnerStop",
    "LandauBrazovskii2D",
    "Metric",
    "StepperConfig",
    "make_stepper",
    "min_mode",
    "relax",
    "run_cycle",
    "run_imf",
    "spectrum_head",
]
