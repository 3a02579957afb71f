"""Bang-bang B-dot detumbling law for a single body-x torquer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BdotConfig:
    m_max: float = 1.0  # A m^2
    threshold: float = 1e-7  # T/s, deadband on |dB_x/dt|
    sample_period: float = 1.0  # s
    derivative: str = "finite_difference"  # or "ideal": dB/dt = -omega x B
    noise_std: float = 0.0  # T, additive magnetometer noise
    # "symmetric": idle when |dB_x/dt| < threshold; "one_sided": idle when dB_x/dt < threshold
    deadband: str = "symmetric"

    def __post_init__(self):
        if self.m_max <= 0:
            raise ValueError("m_max must be positive")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if self.derivative not in ("finite_difference", "ideal"):
            raise ValueError(f"unknown derivative source {self.derivative!r}")
        if self.deadband not in ("symmetric", "one_sided"):
            raise ValueError(f"unknown deadband mode {self.deadband!r}")


def bdot_command(b_dot_x: float | None, cfg: BdotConfig) -> float:
    """Dipole command: zero inside the deadband, else ``-m_max * sign(dB_x/dt)``."""
    if b_dot_x is None:
        return 0.0
    if (b_dot_x if cfg.deadband == "one_sided" else abs(b_dot_x)) < cfg.threshold:
        return 0.0
    return -cfg.m_max * math.copysign(1.0, b_dot_x)


def estimate_bdot(b_prev: float | None, b_curr: float, dt: float) -> float | None:
    """Backward difference; ``None`` until a previous sample exists."""
    if b_prev is None:
        return None
    return (b_curr - b_prev) / dt


def ideal_bdot(omega: np.ndarray, b_body: np.ndarray) -> np.ndarray:
    return -np.cross(omega, b_body)


def lyapunov_rate_diag(omega: np.ndarray, b_body: np.ndarray, cfg: BdotConfig) -> float:
    """Rate of 0.5 w'Jw under the law driven by the idealised derivative.

    With dB_x/dt = -(w_y B_z - w_z B_y) the rate is
    ``-(m_max / |dB_x/dt|) (w_y B_z - w_z B_y)^2``; zero in the deadband.
    """
    s = omega[1] * b_body[2] - omega[2] * b_body[1]
    if abs(s) < cfg.threshold:
        return 0.0
    return -(cfg.m_max / abs(s)) * s * s


class BdotController:
    """Holds the previous magnetometer sample for the backward difference."""

    def __init__(self, cfg: BdotConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._prev_bx: float | None = None

    def reset(self):
        self._prev_bx = None

    def command(self, t: float, omega: np.ndarray, b_body: np.ndarray) -> float:
        cfg = self.cfg
        if cfg.derivative == "ideal":
            return bdot_command(ideal_bdot(omega, b_body)[0], cfg)
        bx = float(b_body[0])
        if cfg.noise_std:
            bx += cfg.noise_std * self.rng.standard_normal()
        b_dot_x = estimate_bdot(self._prev_bx, bx, cfg.sample_period)
        self._prev_bx = bx
        return bdot_command(b_dot_x, cfg)
