"""Receding-horizon detumbling solved by continuation/GMRES.

The horizon problem minimises

    0.5 w_N' Qt w_N + sum_i [0.5 (w_i' Q w_i + R1 m_i^2) - R2 v_i] dtau

subject to forward-Euler dynamics and ``m_i^2 + v_i^2 = m_max^2``, where the
dummy input ``v`` turns the dipole bound into an equality. The unknown vector
``U`` stacks ``(m_i, v_i, mu_i)`` per stage and must satisfy ``F(U, w, t) = 0``
(stationarity of the Hamiltonian plus the constraint). Instead of solving
that from scratch each period, ``U`` is integrated along
``dF/dt = -zeta F`` with the linear system solved matrix-free by GMRES.

Field samples along the horizon are passed in as an ``(N, 3)`` array of
body-frame vectors so the residual itself is pure arithmetic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import InertiaTensor, kinematics_rhs
from .gmres import gmres

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    pass


@dataclass(frozen=True)
class NmpcConfig:
    horizon: float = 10.0  # s
    stages: int = 10
    q: tuple[float, float, float] = (1e4, 1e2, 50.0)
    q_terminal: tuple[float, float, float] = (1e4, 1e2, 50.0)
    r1: float = 0.1
    r2: float = 0.1
    m_max: float = 1.0
    zeta: float = 1.0  # 1/s
    h_fd: float = 1e-6
    gmres_k_max: int | None = None  # defaults to 3N
    gmres_tol: float = 1e-8
    control_period: float = 1.0  # s
    horizon_attitude: str = "frozen"  # "frozen" or "propagated"

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "q_terminal", tuple(float(x) for x in self.q_terminal))
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if min(self.q) <= 0 or min(self.q_terminal) <= 0:
            raise ValueError("state weights must be positive")
        if self.r1 <= 0 or self.r2 <= 0:
            raise ValueError("input weights must be positive")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.horizon_attitude not in ("frozen", "propagated"):
            raise ValueError(f"unknown horizon attitude mode {self.horizon_attitude!r}")

    @property
    def dtau(self) -> float:
        return self.horizon / self.stages

    @property
    def k_max(self) -> int:
        return 3 * self.stages if self.gmres_k_max is None else self.gmres_k_max


# --------------------------------------------------------------------------
# discretised necessary conditions


def model_rhs(omega, m_x: float, b, inertia: InertiaTensor) -> tuple[float, float, float]:
    jx, jy, jz = inertia.jx, inertia.jy, inertia.jz
    wx, wy, wz = omega
    return (
        (jy - jz) * wy * wz / jx,
        ((jz - jx) * wz * wx - b[2] * m_x) / jy,
        ((jx - jy) * wx * wy + b[1] * m_x) / jz,
    )


def predict_states(omega_now, U, b_stages, inertia: InertiaTensor, cfg: NmpcConfig) -> np.ndarray:
    """Forward-Euler prediction ``w_0 .. w_N`` starting from ``omega_now``."""
    N, dt = cfg.stages, cfg.dtau
    out = np.empty((N + 1, 3))
    w = tuple(float(x) for x in omega_now)
    out[0] = w
    for i in range(N):
        f = model_rhs(w, U[3 * i], b_stages[i], inertia)
        w = (w[0] + f[0] * dt, w[1] + f[1] * dt, w[2] + f[2] * dt)
        out[i + 1] = w
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite predicted state")
    return out


def backward_costates(states, inertia: InertiaTensor, cfg: NmpcConfig) -> np.ndarray:
    """``lambda_N = Qt w_N``; ``lambda_i = lambda_{i+1} + H_w(w_i, lambda_{i+1}) dtau``.

    The input does not enter ``H_w`` because it appears linearly and is
    state-independent, so ``U`` is not needed here.
    """
    N, dt = cfg.stages, cfg.dtau
    jx, jy, jz = inertia.jx, inertia.jy, inertia.jz
    ax, ay, az = (jy - jz) / jx, (jz - jx) / jy, (jx - jy) / jz
    qx, qy, qz = cfg.q
    lam = np.empty((N + 1, 3))
    lx, ly, lz = (cfg.q_terminal[k] * states[N][k] for k in range(3))
    lam[N] = (lx, ly, lz)
    for i in range(N - 1, -1, -1):
        wx, wy, wz = states[i]
        hx = qx * wx + ay * wz * ly + az * wy * lz
        hy = qy * wy + ax * wz * lx + az * wx * lz
        hz = qz * wz + ax * wy * lx + ay * wx * ly
        lx, ly, lz = lx + hx * dt, ly + hy * dt, lz + hz * dt
        lam[i] = (lx, ly, lz)
    return lam


def hamiltonian(omega, lam, m_x, v, mu, b, inertia: InertiaTensor, cfg: NmpcConfig) -> float:
    w = np.asarray(omega, float)
    f = model_rhs(w, m_x, b, inertia)
    stage_cost = 0.5 * float(w @ (np.array(cfg.q) * w) + cfg.r1 * m_x * m_x) - cfg.r2 * v
    return stage_cost + float(np.dot(lam, f)) + mu * (m_x * m_x + v * v - cfg.m_max**2)


def _residual(U, omega_now, b_stages, inertia: InertiaTensor, cfg: NmpcConfig) -> np.ndarray:
    # fused forward/backward sweep on floats; called ~10^5 times per run
    N, dt = cfg.stages, cfg.dtau
    jx, jy, jz = inertia.jx, inertia.jy, inertia.jz
    ax, ay, az = (jy - jz) / jx, (jz - jx) / jy, (jx - jy) / jz
    qx, qy, qz = cfg.q
    r1, r2, mm2 = cfg.r1, cfg.r2, cfg.m_max**2
    U = U.tolist() if isinstance(U, np.ndarray) else list(U)
    B = b_stages.tolist() if isinstance(b_stages, np.ndarray) else b_stages
    wx, wy, wz = (float(x) for x in omega_now)
    ws = [(wx, wy, wz)]
    for i in range(N):
        m = U[3 * i]
        by, bz = B[i][1], B[i][2]
        wx, wy, wz = (
            wx + ax * wy * wz * dt,
            wy + (ay * wz * wx - bz * m / jy) * dt,
            wz + (az * wx * wy + by * m / jz) * dt,
        )
        ws.append((wx, wy, wz))
    lx, ly, lz = cfg.q_terminal[0] * wx, cfg.q_terminal[1] * wy, cfg.q_terminal[2] * wz
    F = [0.0] * (3 * N)
    for i in range(N - 1, -1, -1):
        m, v, mu = U[3 * i], U[3 * i + 1], U[3 * i + 2]
        by, bz = B[i][1], B[i][2]
        # stage i pairs with lambda_{i+1}
        F[3 * i] = r1 * m - ly * bz / jy + lz * by / jz + 2.0 * mu * m
        F[3 * i + 1] = -r2 + 2.0 * mu * v
        F[3 * i + 2] = m * m + v * v - mm2
        wx, wy, wz = ws[i]
        hx = qx * wx + ay * wz * ly + az * wy * lz
        hy = qy * wy + ax * wz * lx + az * wx * lz
        hz = qz * wz + ax * wy * lx + ay * wx * ly
        lx, ly, lz = lx + hx * dt, ly + hy * dt, lz + hz * dt
    return np.array(F)


def optimality_residual(U, omega_now, b_stages, inertia: InertiaTensor, cfg: NmpcConfig) -> np.ndarray:
    """``F(U, w, t)``: per stage ``[dH/dm_x, dH/dv, m_x^2 + v^2 - m_max^2]``."""
    return _residual(np.asarray(U, float), omega_now, np.asarray(b_stages, float), inertia, cfg)


def seed_U(cfg: NmpcConfig) -> np.ndarray:
    """Stationary point at rest: ``m_x = 0, v = m_max, mu = R2 / (2 m_max)``."""
    return np.tile([0.0, cfg.m_max, cfg.r2 / (2.0 * cfg.m_max)], cfg.stages)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], U: np.ndarray, h: float, central: bool) -> np.ndarray:
    n = U.size
    J = np.empty((n, n))
    F0 = None if central else fun(U)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, k] = (fun(U + e) - fun(U - e)) / (2 * h) if central else (fun(U + e) - F0) / h
    return J


def initialize_U(
    omega0,
    b_stages,
    inertia: InertiaTensor,
    cfg: NmpcConfig,
    U0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> np.ndarray:
    """Damped Newton on ``F(U) = 0`` from the analytic seed (or ``U0``)."""
    fun = lambda U: _residual(U, omega0, b_stages, inertia, cfg)  # noqa: E731
    U = seed_U(cfg) if U0 is None else np.array(U0, float)
    F = fun(U)
    norm = np.linalg.norm(F)
    for it in range(max_iter):
        if norm < tol:
            return U
        J = fd_jacobian(fun, U, 1e-7, central=False)
        try:
            dU = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            dU = np.linalg.lstsq(J, -F, rcond=None)[0]
        step = 1.0
        while step > 1e-6:
            cand = U + step * dU
            Fc = fun(cand)
            nc = np.linalg.norm(Fc)
            if nc < (1 - 1e-4 * step) * norm:
                break
            step *= 0.5
        U, F, norm = cand, Fc, nc
    if norm < tol:
        return U
    raise NewtonError(f"Newton did not converge in {max_iter} iterations: |F|={norm:.3e}")


def dense_kkt_oracle(
    omega_now,
    b_stages,
    inertia: InertiaTensor,
    cfg: NmpcConfig,
    U0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Independent root of ``F(U) = 0``: plain Newton, explicit central-difference Jacobian.

    Started from ``U0`` it polishes to the nearest root, which bounds how far
    a tracked ``U`` sits from an exact solution.
    """
    fun = lambda U: optimality_residual(U, omega_now, b_stages, inertia, cfg)  # noqa: E731
    U = seed_U(cfg) if U0 is None else np.array(U0, float)
    for _ in range(max_iter):
        F = fun(U)
        if np.linalg.norm(F) < tol:
            return U
        J = fd_jacobian(fun, U, 1e-6, central=True)
        U = U - np.linalg.solve(J, F)
    if np.linalg.norm(fun(U)) < tol:
        return U
    raise NewtonError(f"dense Newton did not converge: |F|={np.linalg.norm(fun(U)):.3e}")


# --------------------------------------------------------------------------
# continuation step


@dataclass
class CgmresResult:
    U: np.ndarray
    U_dot: np.ndarray
    residual_norm: float
    gmres_residual: float
    gmres_iterations: int
    command: float
    ok: bool = True


def cgmres_step(
    U_prev: np.ndarray,
    omega_now,
    omega_dot_now,
    b_now: np.ndarray,
    b_next: np.ndarray,
    inertia: InertiaTensor,
    cfg: NmpcConfig,
    U_dot_guess: np.ndarray | None = None,
    dt: float | None = None,
) -> CgmresResult:
    """One continuation update of ``U`` over ``dt`` (default: control period).

    ``b_now`` and ``b_next`` are the horizon field samples at ``t`` and
    ``t + h_fd``; the pair gives the forward difference that stands in for
    ``dF/dw * w_dot + dF/dt``.
    """
    dt = cfg.control_period if dt is None else dt
    h = cfg.h_fd
    w = np.asarray(omega_now, float)
    w_h = w + h * np.asarray(omega_dot_now, float)
    F = _residual(U_prev, w, b_now, inertia, cfg)
    F_xt = _residual(U_prev, w_h, b_next, inertia, cfg)
    rhs = -cfg.zeta * F - (F_xt - F) / h

    def matvec(v):
        return (_residual(U_prev + h * v, w_h, b_next, inertia, cfg) - F_xt) / h

    res_norm = float(np.linalg.norm(F))
    try:
        U_dot, gres, iters = gmres(matvec, rhs, x0=U_dot_guess, k_max=cfg.k_max, tol=cfg.gmres_tol)
        U_next = U_prev + dt * U_dot
        if not (np.all(np.isfinite(U_next)) and math.isfinite(res_norm)):
            raise FloatingPointError("non-finite continuation update")
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("C/GMRES step failed (%s); commanding zero dipole", exc)
        return CgmresResult(U_prev, np.zeros_like(U_prev), res_norm, math.inf, 0, 0.0, ok=False)
    command = float(np.clip(U_next[0], -cfg.m_max, cfg.m_max))
    return CgmresResult(U_next, U_dot, res_norm, gres, iters, command)


# --------------------------------------------------------------------------
# controller wrapper


@dataclass
class NmpcTelemetry:
    t: list = field(default_factory=list)
    m_x: list = field(default_factory=list)
    v0: list = field(default_factory=list)
    mu0: list = field(default_factory=list)
    f_norm: list = field(default_factory=list)
    gmres_iterations: list = field(default_factory=list)
    failed_steps: int = 0
    # solver state at each control instant, for offline checks against the dense oracle
    omega: list = field(default_factory=list)
    q: list = field(default_factory=list)
    U: list = field(default_factory=list)


class NmpcController:
    """C/GMRES controller driven by a body-frame horizon field model.

    ``horizon_field(t, q, omega)`` must return the ``(N, 3)`` body-frame field
    at ``t + i*dtau``; the simulation harness builds it from the dipole model.
    """

    def __init__(self, cfg: NmpcConfig, inertia: InertiaTensor, horizon_field):
        self.cfg = cfg
        self.inertia = inertia
        self.horizon_field = horizon_field
        self.U: np.ndarray | None = None
        self.U_dot: np.ndarray | None = None
        self.telemetry = NmpcTelemetry()

    def reset(self):
        self.U = None
        self.U_dot = None
        self.telemetry = NmpcTelemetry()

    def command(self, t: float, omega: np.ndarray, q: np.ndarray) -> float:
        cfg = self.cfg
        b_now = self.horizon_field(t, q, omega)
        if self.U is None:
            self.U = initialize_U(omega, b_now, self.inertia, cfg)
            self.U_dot = np.zeros_like(self.U)
        m_applied = float(np.clip(self.U[0], -cfg.m_max, cfg.m_max))
        omega_dot = model_rhs(omega, m_applied, b_now[0], self.inertia)
        # the horizon field depends on the attitude and rate too, so the forward
        # difference follows all of them along the trajectory
        h = cfg.h_fd
        q_h = q + h * kinematics_rhs(q, omega)
        q_h = q_h / np.linalg.norm(q_h)
        b_next = self.horizon_field(t + h, q_h, np.asarray(omega, float) + h * np.asarray(omega_dot))
        res = cgmres_step(self.U, omega, omega_dot, b_now, b_next, self.inertia, cfg, self.U_dot)
        tel = self.telemetry
        tel.omega.append(np.array(omega, float))
        tel.q.append(np.array(q, float))
        tel.U.append(self.U.copy())
        if not res.ok:
            tel.failed_steps += 1
            self.U_dot = np.zeros_like(self.U)
        else:
            self.U, self.U_dot = res.U, res.U_dot
        # the stage-0 input of the solution at t is applied over [t, t + dt)
        cmd = m_applied if res.ok else 0.0
        tel.t.append(t)
        tel.m_x.append(cmd)
        tel.v0.append(float(self.U[1]))
        tel.mu0.append(float(self.U[2]))
        tel.f_norm.append(res.residual_norm)
        tel.gmres_iterations.append(res.gmres_iterations)
        return cmd
