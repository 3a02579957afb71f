"""Closed-loop detumbling runs: plant, truth field, controller, termination."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bdot import BdotConfig, BdotController
from .dynamics import (
    BodyState,
    InertiaTensor,
    IntegrationError,
    kinetic_energy,
    quat_multiply,
    quat_to_dcm,
    rk4_step,
)
from .geomag import IgrfCoefficients, dipole_orbital_array, load_igrf, truth_field
from .nmpc import NewtonError, NmpcConfig, NmpcController
from .orbit import AEOLUS, OrbitElements, orbital_to_inertial

log = logging.getLogger(__name__)

CONTROLLERS = ("bdot", "nmpc", "none")
TRUTH_MODELS = ("igrf", "dipole")
ATTITUDE_COUPLING = ("quaternion", "orbital")

SERIES_COLUMNS = (
    "t_s",
    "omega_x_dps",
    "omega_y_dps",
    "omega_z_dps",
    "m_x_Am2",
    "B_body_x_T",
    "B_body_y_T",
    "B_body_z_T",
    "V_J",
    "F_norm",
)

TABLE2_INERTIA = InertiaTensor(0.020, 0.030, 0.040)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    orbit: OrbitElements = AEOLUS
    inertia: InertiaTensor = TABLE2_INERTIA
    controller: str = "nmpc"
    bdot: BdotConfig = field(default_factory=BdotConfig)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    truth_model: str = "igrf"
    omega0_dps: tuple[float, float, float] = (0.0, 0.0, 0.0)
    q0: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    plant_step: float = 0.1
    control_period: float = 1.0
    max_duration: float = 150 * 60.0
    threshold_dps: float = 0.10
    seed: int = 0
    epoch_year: float = 2020.0
    igrf_degree: int = 13
    igrf_path: str | None = None
    # "orbital" resolves the field with body axes held on the orbit-plane axes
    attitude_coupling: str = "quaternion"

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.truth_model not in TRUTH_MODELS:
            raise ConfigError(f"truth model must be one of {TRUTH_MODELS}, got {self.truth_model!r}")
        if self.attitude_coupling not in ATTITUDE_COUPLING:
            raise ConfigError(f"attitude coupling must be one of {ATTITUDE_COUPLING}")
        if self.plant_step <= 0 or self.control_period <= 0:
            raise ConfigError("plant step and control period must be positive")
        ratio = self.control_period / self.plant_step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("control period must be an integer multiple of the plant step")
        if self.max_duration < 0:
            raise ConfigError("max duration must be non-negative")

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.plant_step))


@dataclass
class RunResult:
    name: str
    controller: str
    status: str  # "ok" or "failed"
    detumbled: bool
    detumble_time: float | None
    final_omega_dps: np.ndarray
    series: np.ndarray  # rows follow SERIES_COLUMNS
    control_effort: float  # integral of |m_x| dt, A m^2 s
    max_f_norm: float | None
    duration: float
    message: str = ""
    telemetry: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# config I/O

_ORBIT_KEYS = {
    "semi_major_axis_km": "semi_major_axis",
    "eccentricity": "eccentricity",
    "inclination_deg": "inclination",
    "raan_deg": "raan",
    "arg_perigee_deg": "arg_perigee",
    "mean_anomaly_deg": "mean_anomaly_epoch",
}


def _build(cls, section: dict, what: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from None


def config_from_dict(d: dict) -> list[RunConfig]:
    """One RunConfig per controller listed under ``controllers`` (or ``controller``)."""
    d = dict(d)
    kw: dict = {"name": str(d.pop("name", "run"))}
    if "orbit" in d:
        orbit = d.pop("orbit")
        unknown = set(orbit) - set(_ORBIT_KEYS)
        if unknown:
            raise ConfigError(f"unknown orbit keys: {sorted(unknown)}")
        kw["orbit"] = _build(OrbitElements, {_ORBIT_KEYS[k]: float(v) for k, v in orbit.items()}, "orbit")
    if "inertia" in d:
        j = d.pop("inertia")
        if isinstance(j, dict):
            j = [j["jx"], j["jy"], j["jz"]]
        kw["inertia"] = _build(InertiaTensor, dict(zip(("jx", "jy", "jz"), map(float, j))), "inertia")
    if "bdot" in d:
        kw["bdot"] = _build(BdotConfig, d.pop("bdot") or {}, "bdot")
    if "nmpc" in d:
        sec = dict(d.pop("nmpc") or {})
        for k in ("q", "q_terminal"):
            if k in sec:
                sec[k] = tuple(sec[k])
        kw["nmpc"] = _build(NmpcConfig, sec, "nmpc")
    if "omega0_dps" in d:
        kw["omega0_dps"] = tuple(float(x) for x in d.pop("omega0_dps"))
    if "q0" in d:
        kw["q0"] = tuple(float(x) for x in d.pop("q0"))
    sim = dict(d.pop("simulation", {}) or {})
    if "max_minutes" in sim:
        sim["max_duration"] = 60.0 * float(sim.pop("max_minutes"))
    kw.update(sim)
    controllers = d.pop("controllers", None)
    single = d.pop("controller", None)
    kw.update(d)
    if controllers is None:
        controllers = [single or "nmpc"]
    try:
        return [RunConfig(**kw, controller=c) for c in controllers]
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from None


def load_config(path: str | os.PathLike) -> list[RunConfig]:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    data.setdefault("name", path.stem)
    return config_from_dict(data)


def bundled_cases_dir() -> Path:
    return Path(__file__).parent / "cases"


def paper_cases() -> list[RunConfig]:
    """The four shipped detumbling cases, each expanded over both controllers."""
    out: list[RunConfig] = []
    for p in sorted(bundled_cases_dir().glob("case*.yaml")):
        out.extend(load_config(p))
    return out


# --------------------------------------------------------------------------
# closed loop


def make_horizon_field(cfg: RunConfig):
    """Body-frame dipole samples over the NMPC horizon.

    The orbit-plane field is rotated through the attitude held at its value
    when the controller samples (``frozen``) or extrapolated at constant
    rate (``propagated``).
    """
    el, n = cfg.orbit, cfg.nmpc
    offsets = np.arange(n.stages) * n.dtau
    C_oi = orbital_to_inertial(el)
    coupled = cfg.attitude_coupling == "quaternion"

    def horizon_field(t, q, omega):
        b_orb = dipole_orbital_array(el, t + offsets)
        if not coupled:
            return b_orb
        b_in = b_orb @ C_oi.T
        if n.horizon_attitude == "frozen":
            return b_in @ quat_to_dcm(q).T
        out = np.empty_like(b_in)
        w = np.linalg.norm(omega)
        axis = omega / w if w > 0 else np.array([1.0, 0, 0])
        for i, dt in enumerate(offsets):
            a = w * dt
            dq = np.concatenate(([math.cos(a / 2)], math.sin(a / 2) * axis))
            out[i] = quat_to_dcm(quat_multiply(q, dq)) @ b_in[i]
        return out

    return horizon_field


def _make_controller(cfg: RunConfig):
    if cfg.controller == "bdot":
        bcfg = replace(cfg.bdot, sample_period=cfg.control_period)
        return BdotController(bcfg, np.random.default_rng(cfg.seed))
    if cfg.controller == "nmpc":
        ncfg = cfg.nmpc if cfg.nmpc.control_period == cfg.control_period else replace(
            cfg.nmpc, control_period=cfg.control_period
        )
        return NmpcController(ncfg, cfg.inertia, make_horizon_field(replace(cfg, nmpc=ncfg)))
    return None


def run_case(cfg: RunConfig, coeffs: IgrfCoefficients | None = None) -> RunResult:
    """Deterministic closed-loop run with the 'all rates below threshold' stop rule."""
    h, sub = cfg.plant_step, cfg.substeps
    n_ctrl = int(round(cfg.max_duration / cfg.control_period))
    if cfg.truth_model == "igrf" and coeffs is None:
        coeffs = load_igrf(cfg.igrf_path, cfg.igrf_degree)
    truth = truth_field(cfg.truth_model, cfg.orbit, n_ctrl * cfg.control_period + h, h / 2, coeffs, cfg.epoch_year)
    if cfg.attitude_coupling == "orbital":
        C_io = orbital_to_inertial(cfg.orbit).T
        values = truth.values @ C_io.T
        fb = truth.fallback
        truth = replace(truth, values=values, fallback=lambda t: C_io @ fb(t))
    coupled = cfg.attitude_coupling == "quaternion"

    def body_field(state: BodyState) -> np.ndarray:
        b = truth(state.t)
        return quat_to_dcm(state.q) @ b if coupled else b

    controller = _make_controller(cfg)
    thr = math.radians(cfg.threshold_dps)
    state = BodyState(np.radians(cfg.omega0_dps), np.array(cfg.q0, float) / np.linalg.norm(cfg.q0), 0.0)
    rows = np.full((n_ctrl * sub + 1, len(SERIES_COLUMNS)), np.nan)
    n_rows = 0
    effort = 0.0
    f_norm = math.nan
    m_x = 0.0

    def record(st, m, fn):
        nonlocal n_rows
        b = body_field(st)
        w = np.degrees(st.omega)
        rows[n_rows] = (st.t, w[0], w[1], w[2], m, b[0], b[1], b[2], kinetic_energy(st.omega, cfg.inertia), fn)
        n_rows += 1

    status, message = "ok", ""
    detumbled, t_det = False, None
    try:
        for k in range(n_ctrl + 1):
            if np.all(np.abs(state.omega) < thr):
                detumbled, t_det = True, state.t
                break
            if k == n_ctrl:
                break
            b_meas = body_field(state)
            if controller is None:
                m_x = 0.0
            elif cfg.controller == "bdot":
                m_x = controller.command(state.t, state.omega, b_meas)
            else:
                m_x = controller.command(state.t, state.omega, state.q)
                f_norm = controller.telemetry.f_norm[-1]
            if k == 0:
                record(state, m_x, f_norm)
            effort += abs(m_x) * cfg.control_period
            for _ in range(sub):
                state = rk4_step(state, cfg.inertia, m_x, truth, h, attitude_coupled=coupled)
                record(state, m_x, f_norm)
        if n_rows == 0:
            record(state, 0.0, f_norm)
    except (IntegrationError, NewtonError, FloatingPointError) as exc:
        status, message = "failed", str(exc)
        log.error("%s/%s failed: %s", cfg.name, cfg.controller, exc)
    series = rows[:n_rows]
    if cfg.controller != "nmpc":
        series[:, -1] = np.nan
    tel = {}
    max_f = None
    if cfg.controller == "nmpc" and controller is not None:
        t = controller.telemetry
        max_f = float(np.max(t.f_norm)) if t.f_norm else None
        tel = {
            "failed_steps": t.failed_steps,
            "mean_gmres_iterations": float(np.mean(t.gmres_iterations)) if t.gmres_iterations else 0.0,
            "f_norm": np.array(t.f_norm),
            "t": np.array(t.t),
            "m_x": np.array(t.m_x),
            "v0": np.array(t.v0),
            "mu0": np.array(t.mu0),
            "omega": np.array(t.omega),
            "q": np.array(t.q),
            "U": np.array(t.U),
        }
    return RunResult(
        name=cfg.name,
        controller=cfg.controller,
        status=status,
        detumbled=detumbled,
        detumble_time=t_det,
        final_omega_dps=np.degrees(state.omega),
        series=series,
        control_effort=effort,
        max_f_norm=max_f,
        duration=state.t,
        message=message,
        telemetry=tel,
    )


# --------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


def series_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for row in result.series:
        w.writerow([_fmt(float(x)) for x in row])
    return buf.getvalue()


def _svg_plot(t: np.ndarray, ys: dict[str, np.ndarray], title: str, ylabel: str) -> str:
    W, H, pad = 800, 360, 50
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    t = np.asarray(t, float)
    allv = np.concatenate([np.asarray(v, float) for v in ys.values()])
    allv = allv[np.isfinite(allv)]
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1, hi + 1
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1

    def X(v):
        return pad + (v - t0) / (t1 - t0) * (W - 2 * pad)

    def Y(v):
        return H - pad - (v - lo) / (hi - lo) * (H - 2 * pad)

    stride = max(1, len(t) // 2000)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">time [min]</text>',
        f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad - 4}" y="{Y(hi) + 4:.1f}" text-anchor="end">{hi:.3g}</text>',
        f'<text x="{pad - 4}" y="{Y(lo) + 4:.1f}" text-anchor="end">{lo:.3g}</text>',
        f'<text x="{W - pad}" y="{H - pad + 15}" text-anchor="end">{t1 / 60:.1f}</text>',
    ]
    if lo < 0 < hi:
        parts.append(f'<line x1="{pad}" y1="{Y(0):.1f}" x2="{W - pad}" y2="{Y(0):.1f}" stroke="#bbb"/>')
    for i, (label, y) in enumerate(ys.items()):
        y = np.asarray(y, float)
        pts = " ".join(f"{X(a):.1f},{Y(b):.1f}" for a, b in zip(t[::stride], y[::stride]) if np.isfinite(b))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{W - pad - 80}" y="{pad + 15 * i}" fill="{c}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_series(result: RunResult, out_dir: str | os.PathLike, plot: bool = False) -> list[Path]:
    """Write ``<name>_<controller>.csv`` (and SVG plots when ``plot``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{result.name}_{result.controller}"
    paths = [out / f"{stem}.csv"]
    paths[0].write_text(series_csv(result))
    if plot and len(result.series):
        s = result.series
        w_svg = _svg_plot(
            s[:, 0],
            {"omega_x": s[:, 1], "omega_y": s[:, 2], "omega_z": s[:, 3]},
            f"{result.name} ({result.controller}): angular velocity",
            "deg/s",
        )
        m_svg = _svg_plot(s[:, 0], {"m_x": s[:, 4]}, f"{result.name} ({result.controller}): dipole", "A m^2")
        for suffix, text in (("omega", w_svg), ("mx", m_svg)):
            p = out / f"{stem}_{suffix}.svg"
            p.write_text(text)
            paths.append(p)
    return paths


SUMMARY_COLUMNS = (
    "case",
    "controller",
    "omega0_x_dps",
    "omega0_y_dps",
    "omega0_z_dps",
    "detumbled",
    "detumble_time_min",
    "final_omega_x_dps",
    "final_omega_y_dps",
    "final_omega_z_dps",
    "control_effort_Am2s",
    "max_F_norm",
    "status",
)


def summary_csv(configs: list[RunConfig], results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for c, r in zip(configs, results):
        w.writerow([
            r.name,
            r.controller,
            *(_fmt(x) for x in c.omega0_dps),
            "Yes" if r.detumbled else "No",
            _fmt(r.detumble_time / 60.0) if r.detumble_time is not None else "",
            *(_fmt(float(x)) for x in r.final_omega_dps),
            _fmt(r.control_effort),
            _fmt(r.max_f_norm) if r.max_f_norm is not None else "",
            r.status,
        ])
    return buf.getvalue()


def _run_one(cfg: RunConfig) -> RunResult:
    return run_case(cfg)


def run_suite(
    configs: list[RunConfig],
    out_dir: str | os.PathLike | None = None,
    plot: bool = False,
    workers: int | None = None,
) -> tuple[list[RunResult], int]:
    """Run every config; returns results and an exit code (2 if any run failed)."""
    if not configs:
        raise ConfigError("run_suite needs at least one config")
    workers = min(len(configs), workers or os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, configs))
    else:
        results = [_run_one(c) for c in configs]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            emit_series(r, out, plot)
        (out / "summary.csv").write_text(summary_csv(configs, results))
    code = 2 if any(r.status != "ok" for r in results) else 0
    return results, code
