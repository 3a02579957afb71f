"""Magnetic detumbling of a small satellite with one body-x magnetorquer:
B-dot and continuation/GMRES NMPC controllers, dipole and IGRF field models,
and a numerical controllability analysis."""

from .bdot import BdotConfig, BdotController
from .dynamics import BodyState, InertiaTensor, rk4_step
from .nmpc import NmpcConfig, NmpcController
from .orbit import AEOLUS, OrbitElements
from .sim import RunConfig, RunResult, load_config, paper_cases, run_case, run_suite

__all__ = [
    "AEOLUS",
    "BdotConfig",
    "BdotController",
    "BodyState",
    "InertiaTensor",
    "NmpcConfig",
    "NmpcController",
    "OrbitElements",
    "RunConfig",
    "RunResult",
    "load_config",
    "paper_cases",
    "rk4_step",
    "run_case",
    "run_suite",
]
