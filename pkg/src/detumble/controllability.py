"""Numerical rank test for local weak controllability of the single-torquer
angular-velocity dynamics ``w' = f0(w) + f1(w, t) m_x``.

Time-varying fields are handled by the symmetric product
``<xi, eta> = [xi, eta] - d(xi)/dt`` alongside the ordinary Lie bracket
``[xi, eta] = (d eta/d w) xi - (d xi/d w) eta``. All Jacobians are central
differences, so any callable field can be analysed; closed forms for the
single-torquer basis are provided separately as a cross-check.

The analysis resolves the field on body axes aligned with the orbit-plane
frame, so ``B_y`` and ``B_z`` are functions of time only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import InertiaTensor
from .geomag import dipole_derivatives, load_igrf, igrf_inertial_array, IgrfCoefficients
from .orbit import OrbitElements, orbital_to_inertial

TIME_STEP = 1e-4  # s, finite-difference step for partial time derivatives


# --------------------------------------------------------------------------
# field histories


class DipoleFieldHistory:
    """Orbit-plane dipole field with analytic first and second derivatives."""

    def __init__(self, el: OrbitElements):
        self.el = el
        self._cache: dict[float, tuple] = {}

    def _eval(self, t):
        # nested differences revisit the same instants many times
        hit = self._cache.get(t)
        if hit is None:
            if len(self._cache) > 4096:
                self._cache.clear()
            hit = self._cache[t] = dipole_derivatives(self.el, t)
        return hit

    def b(self, t):
        return self._eval(t)[0]

    def b_dot(self, t):
        return self._eval(t)[1]

    def b_ddot(self, t):
        return self._eval(t)[2]


class SampledFieldHistory:
    """Any ``B(t)`` callable; derivatives by central differences."""

    def __init__(self, fn: Callable[[float], np.ndarray], step: float = 1.0):
        self.fn = fn
        self.step = step
        self._cache: dict[float, np.ndarray] = {}

    def b(self, t):
        hit = self._cache.get(t)
        if hit is None:
            if len(self._cache) > 4096:
                self._cache.clear()
            hit = self._cache[t] = np.asarray(self.fn(t), float)
        return hit

    def b_dot(self, t):
        h = self.step
        return (self.b(t + h) - self.b(t - h)) / (2 * h)

    def b_ddot(self, t):
        h = self.step
        return (self.b(t + h) - 2 * self.b(t) + self.b(t - h)) / (h * h)


class ConstantFieldHistory:
    def __init__(self, b):
        self._b = np.asarray(b, float)

    def b(self, t):
        return self._b

    def b_dot(self, t):
        return np.zeros(3)

    def b_ddot(self, t):
        return np.zeros(3)


def igrf_history(el: OrbitElements, coeffs: IgrfCoefficients | None = None, epoch_year: float = 2020.0):
    coeffs = load_igrf() if coeffs is None else coeffs
    C = orbital_to_inertial(el).T
    return SampledFieldHistory(lambda t: C @ igrf_inertial_array(coeffs, el, [t], epoch_year)[0])


# --------------------------------------------------------------------------
# vector fields and products


@dataclass
class VectorField:
    """``fn(omega, t) -> R^3`` with an optional analytic partial time derivative."""

    fn: Callable[[np.ndarray, float], np.ndarray]
    dt: Callable[[np.ndarray, float], np.ndarray] | None = None
    name: str = ""
    time_invariant: bool = False

    def __call__(self, omega, t) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(omega, float), t), float)

    def time_derivative(self, omega, t, step: float = TIME_STEP) -> np.ndarray:
        if self.time_invariant:
            return np.zeros(3)
        if self.dt is not None:
            return np.asarray(self.dt(np.asarray(omega, float), t), float)
        return (self(omega, t + step) - self(omega, t - step)) / (2 * step)


def drift_field(j: InertiaTensor) -> VectorField:
    jx, jy, jz = j.jx, j.jy, j.jz

    def f0(w, t):
        return np.array([(jy - jz) * w[1] * w[2] / jx, (jz - jx) * w[2] * w[0] / jy, (jx - jy) * w[0] * w[1] / jz])

    return VectorField(f0, name="f0", time_invariant=True)


def input_field(j: InertiaTensor, history) -> VectorField:
    def f1(w, t):
        b = history.b(t)
        return np.array([0.0, -b[2] / j.jy, b[1] / j.jz])

    def f1_dt(w, t):
        db = history.b_dot(t)
        return np.array([0.0, -db[2] / j.jy, db[1] / j.jz])

    return VectorField(f1, f1_dt, name="f1")


def jacobian(field: VectorField, omega, t) -> np.ndarray:
    omega = np.asarray(omega, float)
    h = 1e-6 * (1.0 + np.linalg.norm(omega))
    J = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (field(omega + e, t) - field(omega - e, t)) / (2 * h)
    return J


def lie_bracket(xi: VectorField, eta: VectorField, omega, t) -> np.ndarray:
    return jacobian(eta, omega, t) @ xi(omega, t) - jacobian(xi, omega, t) @ eta(omega, t)


def symmetric_product(xi: VectorField, eta: VectorField, omega, t, time_step: float = TIME_STEP) -> np.ndarray:
    return lie_bracket(xi, eta, omega, t) - xi.time_derivative(omega, t, time_step)


def bracket_field(xi: VectorField, eta: VectorField, kind: str, name: str = "") -> VectorField:
    """The product of two fields as a new (numerically evaluated) field."""
    if kind == "symmetric":
        return VectorField(lambda w, t: symmetric_product(xi, eta, w, t), name=name or f"<{xi.name},{eta.name}>")
    if kind == "lie":
        return VectorField(lambda w, t: lie_bracket(xi, eta, w, t), name=name or f"[{xi.name},{eta.name}]")
    raise ValueError(f"unknown product {kind!r}")


# --------------------------------------------------------------------------
# closed forms


def g_closed_forms(j: InertiaTensor, b, b_dot, b_ddot, omega) -> dict[str, np.ndarray]:
    """Printed closed forms of ``f1``, ``g1 = <f1,f0>``, ``g2 = <g1,f0>``, ``g3 = [g1,f1]``."""
    Jx, Jy, Jz = j.jx, j.jy, j.jz
    By, Bz = b[1], b[2]
    dBy, dBz = b_dot[1], b_dot[2]
    ddBy, ddBz = b_ddot[1], b_ddot[2]
    wx, wy, wz = omega
    f1 = np.array([0.0, -Bz / Jy, By / Jz])
    g1 = np.array([
        By * wy * (Jy - Jz) / (Jx * Jz) - Bz * wz * (Jy - Jz) / (Jx * Jy),
        dBz / Jy - By * wx * (Jx - Jz) / (Jy * Jz),
        -dBy / Jz - Bz * wx * (Jx - Jy) / (Jy * Jz),
    ])
    g2 = np.array([
        -2.0 / (Jx * Jy * Jz) * (Jy - Jz) * (Jy * dBy * wy - Jz * dBz * wz),
        -1.0 / (Jx * Jy**2 * Jz) * (
            Jy * (
                Bz * Jx**2 * wx**2 - 2 * dBy * Jx**2 * wx - Bz * Jx * Jz * wx**2 + 2 * dBy * Jx * Jz * wx
                - Bz * Jx * Jz * wz**2 + ddBz * Jx * Jz + Bz * Jz**2 * wz**2
            )
            - Bz * Jx**3 * wx**2 - Bz * Jz**3 * wz**2 + Bz * Jx**2 * Jz * wx**2 + Bz * Jx * Jz**2 * wz**2
        ),
        1.0 / (Jx * Jy * Jz**2) * (
            Jz * (
                By * Jx**2 * wx**2 + 2 * dBz * Jx**2 * wx - By * Jx * Jy * wx**2 - 2 * dBz * Jx * Jy * wx
                - By * Jx * Jy * wy**2 + ddBy * Jx * Jy + By * Jy**2 * wy**2
            )
            - By * Jx**3 * wx**2 - By * Jy**3 * wy**2 + By * Jx**2 * Jy * wx**2 + By * Jx * Jy**2 * wy**2
        ),
    ])
    g3 = np.array([2.0 * By * Bz * (Jy - Jz) / (Jx * Jy * Jz), 0.0, 0.0])
    return {"f1": f1, "g1": g1, "g2": g2, "g3": g3}


# --------------------------------------------------------------------------
# rank evaluation


@dataclass
class DistributionBasis:
    names: tuple[str, ...]
    vectors: np.ndarray  # one row per field
    omega: np.ndarray
    t: float
    singular_values: np.ndarray
    rank: int
    degenerate: bool = False

    @property
    def sigma3(self) -> float:
        return float(self.singular_values[2]) if self.singular_values.size > 2 else 0.0


def numeric_rank(vectors: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, int]:
    """Singular values (descending, padded to 3) and rank at relative cutoff ``tol * sigma_max``."""
    sv = np.linalg.svd(np.atleast_2d(vectors), compute_uv=False)
    sv = np.pad(sv, (0, max(0, 3 - sv.size)))[:3]
    if sv[0] == 0.0:
        return sv, 0
    return sv, int(np.sum(sv > tol * sv[0]))


def single_torquer_fields(j: InertiaTensor, history) -> dict[str, VectorField]:
    f0 = drift_field(j)
    f1 = input_field(j, history)
    g1 = bracket_field(f1, f0, "symmetric", "g1")
    g2 = bracket_field(g1, f0, "symmetric", "g2")
    g3 = bracket_field(g1, f1, "lie", "g3")
    return {"f0": f0, "f1": f1, "g1": g1, "g2": g2, "g3": g3}


def algorithm1_rank(j: InertiaTensor, history, omega, t: float, tol: float = 1e-8) -> DistributionBasis:
    """Rank of ``span{f1, g1, g2, g3}``, the converged distribution for this system."""
    omega = np.asarray(omega, float)
    fields = single_torquer_fields(j, history)
    names = ("f1", "g1", "g2", "g3")
    vecs = np.array([fields[n](omega, t) for n in names])
    sv, rank = numeric_rank(vecs, tol)
    degenerate = not np.any(history.b(t))
    return DistributionBasis(names, vecs, omega, t, sv, rank, degenerate)


def controllability_distribution(
    f0: VectorField, f1: VectorField, omega, t: float, tol: float = 1e-8, max_steps: int = 3
) -> tuple[list[VectorField], list[int]]:
    """Generic iteration: grow the field list by ``<d, f0>`` and ``[d, f1]`` until the
    pointwise dimension stops increasing. Returns the fields and dimension history."""
    fields = [f1]
    dims = [numeric_rank(np.array([f1(omega, t)]), tol)[1]]
    for _ in range(max_steps):
        if dims[-1] >= 3:
            break
        grown = list(fields)
        for d in fields:
            grown.append(bracket_field(d, f0, "symmetric"))
            grown.append(bracket_field(d, f1, "lie"))
        dim = numeric_rank(np.array([g(omega, t) for g in grown]), tol)[1]
        if dim <= dims[-1]:
            break
        fields = grown
        dims.append(dim)
    return fields, dims


@dataclass
class RankSweepReport:
    t: np.ndarray
    singular_values: np.ndarray  # (n, 3)
    ranks: np.ndarray
    omega: np.ndarray
    g3_vanishes: bool

    @property
    def min_rank(self) -> int:
        return int(self.ranks.min())

    @property
    def max_rank(self) -> int:
        return int(self.ranks.max())

    @property
    def deficient(self) -> np.ndarray:
        return np.flatnonzero(self.ranks < 3)

    @property
    def min_sigma3(self) -> float:
        return float(self.singular_values[:, 2].min())

    def to_csv(self) -> str:
        lines = ["t_s,sigma1,sigma2,sigma3,rank"]
        for t, s, r in zip(self.t, self.singular_values, self.ranks):
            lines.append(f"{t:.6g},{s[0]:.10g},{s[1]:.10g},{s[2]:.10g},{r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        note = " (g3 vanishes identically: structural deficiency)" if self.g3_vanishes else ""
        return (
            f"samples={len(self.t)} min_rank={self.min_rank} max_rank={self.max_rank} "
            f"deficient={len(self.deficient)} min_sigma3={self.min_sigma3:.3e}{note}"
        )


def rank_sweep(
    j: InertiaTensor,
    el: OrbitElements,
    n_samples: int = 360,
    omega=(0.0, 0.0, 0.0),
    history=None,
    tol: float = 1e-8,
) -> RankSweepReport:
    """Evaluate the distribution rank at evenly spaced times over one orbit."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    history = DipoleFieldHistory(el) if history is None else history
    omega = np.asarray(omega, float)
    times = np.arange(n_samples) * (el.period / n_samples)
    svs = np.empty((n_samples, 3))
    ranks = np.empty(n_samples, dtype=int)
    g3_zero = True
    for k, t in enumerate(times):
        basis = algorithm1_rank(j, history, omega, t, tol)
        svs[k], ranks[k] = basis.singular_values, basis.rank
        g3_zero &= bool(np.linalg.norm(basis.vectors[3]) <= tol * max(basis.singular_values[0], 1e-300))
    return RankSweepReport(times, svs, ranks, omega, g3_zero)
