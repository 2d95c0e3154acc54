from .bratu import BratuProblem, make_bratu
from .convdiff import AnisoConvDiffProblem, make_aniso_convdiff
from .euler import Quasi1dEulerProblem, default_nozzle_area, make_quasi1d_euler

__all__ = [
    "BratuProblem",
    "AnisoConvDiffProblem",
    "Quasi1dEulerProblem",
    "make_bratu",
    "make_aniso_convdiff",
    "make_quasi1d_euler",
    "default_nozzle_area",
]
