"""Rigid-body rotational dynamics under a single body-x magnetic torquer.

Quaternions are stored scalar-first, ``(w, x, y, z)``, Hamilton product.
``BodyState.q`` is the body attitude: rotating the inertial axes by ``q``
yields the body axes, so body components of an inertial vector are
``v_body = q* (0, v_inertial) q`` and the kinematics read
``q_dot = 0.5 * q (x) (0, omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    """Raised when a propagation step produces a non-finite state."""


@dataclass(frozen=True)
class InertiaTensor:
    """Principal moments of inertia [kg m^2]."""

    jx: float
    jy: float
    jz: float

    def __post_init__(self):
        jx, jy, jz = self.jx, self.jy, self.jz
        if not (jx > 0 and jy > 0 and jz > 0):
            raise ValueError(f"moments of inertia must be positive, got {self.as_array()}")
        if jx + jy < jz or jy + jz < jx or jz + jx < jy:
            raise ValueError(f"moments of inertia violate the triangle inequality: {self.as_array()}")

    def as_array(self) -> np.ndarray:
        return np.array([self.jx, self.jy, self.jz])

    @property
    def axisymmetric_about_x(self) -> bool:
        return self.jy == self.jz


@dataclass(frozen=True)
class BodyState:
    omega: np.ndarray
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(4))


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Matrix ``C`` with ``v_body = C @ v_inertial`` for attitude ``q``."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)],
        [2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)],
        [2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)],
    ])


def to_body(q: np.ndarray, v_inertial: np.ndarray) -> np.ndarray:
    return quat_to_dcm(q) @ v_inertial


def to_inertial(q: np.ndarray, v_body: np.ndarray) -> np.ndarray:
    return quat_to_dcm(q).T @ v_body


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate(([math.cos(angle / 2)], math.sin(angle / 2) * axis))


def magnetic_torque(m_x: float, b_body: np.ndarray) -> np.ndarray:
    """Torque of a dipole ``(m_x, 0, 0)`` in field ``b_body``: ``[0, -Bz m_x, By m_x]``."""
    return np.array([0.0, -b_body[2] * m_x, b_body[1] * m_x])


def euler_rhs(omega: np.ndarray, inertia: InertiaTensor, torque: np.ndarray) -> np.ndarray:
    jx, jy, jz = inertia.jx, inertia.jy, inertia.jz
    wx, wy, wz = omega
    return np.array([
        ((jy - jz) * wy * wz + torque[0]) / jx,
        ((jz - jx) * wz * wx + torque[1]) / jy,
        ((jx - jy) * wx * wy + torque[2]) / jz,
    ])


def kinematics_rhs(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return 0.5 * quat_multiply(q, np.array([0.0, omega[0], omega[1], omega[2]]))


def _coupled_rhs(omega, q, t, inertia, m_x, field_fn, coupled=True):
    b_body = to_body(q, field_fn(t)) if coupled else field_fn(t)
    return euler_rhs(omega, inertia, magnetic_torque(m_x, b_body)), kinematics_rhs(q, omega)


def rk4_step(
    state: BodyState,
    inertia: InertiaTensor,
    m_x: float,
    field_fn: Callable[[float], np.ndarray],
    h: float,
    attitude_coupled: bool = True,
) -> BodyState:
    """Advance ``state`` by ``h`` seconds with classical RK4.

    ``field_fn(t)`` returns the inertial-frame field [T]; it is re-evaluated
    and rotated into the body frame at every substage. ``m_x`` is held
    constant over the step. With ``attitude_coupled=False`` the field is
    taken as already resolved on the body axes and ``q`` only rides along.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    w0, q0, t0 = state.omega, state.q, state.t
    k1w, k1q = _coupled_rhs(w0, q0, t0, inertia, m_x, field_fn, attitude_coupled)
    k2w, k2q = _coupled_rhs(w0 + 0.5 * h * k1w, q0 + 0.5 * h * k1q, t0 + 0.5 * h, inertia, m_x, field_fn, attitude_coupled)
    k3w, k3q = _coupled_rhs(w0 + 0.5 * h * k2w, q0 + 0.5 * h * k2q, t0 + 0.5 * h, inertia, m_x, field_fn, attitude_coupled)
    k4w, k4q = _coupled_rhs(w0 + h * k3w, q0 + h * k3q, t0 + h, inertia, m_x, field_fn, attitude_coupled)
    w1 = w0 + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    q1 = q0 + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(q1))):
        raise IntegrationError(f"non-finite state after step at t={t0 + h:.3f}s")
    q1 = q1 / np.linalg.norm(q1)
    return BodyState(w1, q1, t0 + h)


def kinetic_energy(omega: np.ndarray, inertia: InertiaTensor) -> float:
    w = np.asarray(omega, dtype=float)
    return 0.5 * float(w @ (inertia.as_array() * w))


def angular_momentum_inertial(state: BodyState, inertia: InertiaTensor) -> np.ndarray:
    return to_inertial(state.q, inertia.as_array() * state.omega)
