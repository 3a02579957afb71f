"""Geomagnetic field models: the aligned dipole used by the controller and
IGRF spherical-harmonic synthesis used as simulation truth.

All fields are in tesla. The dipole model is expressed in the orbit-plane
frame described in :mod:`detumble.orbit`; in that frame its z-component is
constant and the in-plane components carry only twice-orbital harmonics.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import quat_to_dcm
from .orbit import (
    R_EARTH,
    OrbitElements,
    anomaly_radius,
    greenwich_angle,
    orbit_state,
    orbital_to_inertial,
    positions,
)

# 8.1e25 gauss cm^3 -> T m^3
EARTH_DIPOLE_MOMENT = 8.1e25 * 1e-4 * 1e-6

FRAMES = ("orbital", "inertial", "body")
IGRF_DIR_ENV = "DETUMBLE_IGRF_DIR"
DEFAULT_IGRF_FILE = "igrf14coeffs.txt"


class FrameMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GeomagneticSample:
    b: np.ndarray
    b_dot: np.ndarray
    frame: str
    t: float

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")

    def expect(self, frame: str) -> GeomagneticSample:
        if self.frame != frame:
            raise FrameMismatchError(f"expected a {frame}-frame sample, got {self.frame}")
        return self


# --------------------------------------------------------------------------
# dipole model


def _dipole_shape(incl: float, eta):
    si, ci = math.sin(incl), math.cos(incl)
    s2, c2 = np.sin(2 * eta), np.cos(2 * eta)
    b = np.stack([1.5 * si * s2, -1.5 * si * (c2 - 1.0 / 3.0), -ci * np.ones_like(s2)], axis=-1)
    db = np.stack([3 * si * c2, 3 * si * s2, np.zeros_like(s2)], axis=-1)
    ddb = np.stack([-6 * si * s2, 6 * si * c2, np.zeros_like(s2)], axis=-1)
    return b, db, ddb


def dipole_derivatives(el: OrbitElements, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orbit-plane dipole field and its first two time derivatives at ``t``."""
    s = orbit_state(el, t)
    b, db, ddb = _dipole_shape(math.radians(el.inclination), s.arg_latitude)
    r = s.radius
    Me = EARTH_DIPOLE_MOMENT
    d = -Me / r**3
    d_dot = 3 * Me * s.radius_rate / r**4
    d_ddot = 3 * Me * (s.radius_accel / r**4 - 4 * s.radius_rate**2 / r**5)
    eta_dot, eta_ddot = s.anomaly_rate, s.anomaly_accel
    B = d * b
    B_dot = d_dot * b + d * db * eta_dot
    B_ddot = d_ddot * b + 2 * d_dot * db * eta_dot + d * (ddb * eta_dot**2 + db * eta_ddot)
    return B, B_dot, B_ddot


def dipole_field_orbital(el: OrbitElements, t: float) -> GeomagneticSample:
    B, B_dot, _ = dipole_derivatives(el, t)
    return GeomagneticSample(B, B_dot, "orbital", t)


def dipole_orbital_array(el: OrbitElements, times) -> np.ndarray:
    theta, r = anomaly_radius(el, times)
    b, _, _ = _dipole_shape(math.radians(el.inclination), theta + math.radians(el.arg_perigee))
    return (-EARTH_DIPOLE_MOMENT / r**3)[:, None] * b


def dipole_inertial_array(el: OrbitElements, times) -> np.ndarray:
    return dipole_orbital_array(el, times) @ orbital_to_inertial(el).T


# --------------------------------------------------------------------------
# IGRF


@dataclass(frozen=True)
class IgrfCoefficients:
    """Gauss coefficients indexed ``[epoch, n, m]`` in nT, SV in nT/yr."""

    epochs: np.ndarray
    g: np.ndarray
    h: np.ndarray
    sv_g: np.ndarray
    sv_h: np.ndarray
    max_degree: int

    @property
    def valid_range(self) -> tuple[float, float]:
        return float(self.epochs[0]), float(self.epochs[-1]) + 5.0

    def truncated(self, degree: int) -> IgrfCoefficients:
        if degree > self.max_degree:
            raise ValueError(f"degree {degree} exceeds coefficient file degree {self.max_degree}")
        k = degree + 1
        return IgrfCoefficients(
            self.epochs, self.g[:, :k, :k], self.h[:, :k, :k], self.sv_g[:k, :k], self.sv_h[:k, :k], degree
        )

    def at(self, date: float) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (g, h) in nT at decimal year ``date``."""
        lo, hi = self.valid_range
        if not lo <= date <= hi:
            raise ValueError(f"date {date} outside coefficient validity {lo}..{hi}")
        ep = self.epochs
        if date >= ep[-1]:
            dt = date - ep[-1]
            return self.g[-1] + dt * self.sv_g, self.h[-1] + dt * self.sv_h
        i = int(np.searchsorted(ep, date, side="right")) - 1
        w = (date - ep[i]) / (ep[i + 1] - ep[i])
        return (1 - w) * self.g[i] + w * self.g[i + 1], (1 - w) * self.h[i] + w * self.h[i + 1]


def default_igrf_path() -> Path:
    env = os.environ.get(IGRF_DIR_ENV)
    if env:
        return Path(env) / DEFAULT_IGRF_FILE
    return Path(str(resources.files("detumble") / "data" / DEFAULT_IGRF_FILE))


def load_igrf(path: str | os.PathLike | None = None, max_degree: int | None = None) -> IgrfCoefficients:
    """Parse the published whitespace-delimited IGRF coefficient table.

    Lines starting with ``#`` are ignored, the header beginning ``g/h`` gives
    the epoch columns, and the final column is secular variation.
    """
    path = Path(path) if path is not None else default_igrf_path()
    if not path.exists():
        raise FileNotFoundError(
            f"IGRF coefficient file not found: {path} (expected the standard 'g/h n m <epochs> SV' text table)"
        )
    epochs = None
    rows = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "g/h":
                epochs = [float(x) for x in parts[3:-1]]
            elif parts[0] in ("g", "h"):
                rows.append(parts)
    if epochs is None or not rows:
        raise ValueError(f"{path} is not an IGRF coefficient table (no 'g/h' header)")
    nmax = max(int(r[1]) for r in rows)
    ne = len(epochs)
    g = np.zeros((ne, nmax + 1, nmax + 1))
    h = np.zeros_like(g)
    sv_g = np.zeros((nmax + 1, nmax + 1))
    sv_h = np.zeros_like(sv_g)
    for r in rows:
        n, m = int(r[1]), int(r[2])
        vals = np.array([float(x) for x in r[3 : 3 + ne]])
        sv = float(r[3 + ne])
        if not np.all(np.isfinite(vals)) or not math.isfinite(sv):
            raise ValueError(f"non-finite coefficient for {r[0]}({n},{m})")
        if r[0] == "g":
            g[:, n, m], sv_g[n, m] = vals, sv
        else:
            h[:, n, m], sv_h[n, m] = vals, sv
    coeffs = IgrfCoefficients(np.array(epochs), g, h, sv_g, sv_h, nmax)
    return coeffs.truncated(max_degree) if max_degree is not None else coeffs


def schmidt_legendre(nmax: int, colat) -> tuple[np.ndarray, np.ndarray]:
    """Schmidt semi-normalised P_n^m(cos colat) and dP/dcolat, shape ``(nmax+1, nmax+1, ...)``."""
    colat = np.asarray(colat, dtype=float)
    c, s = np.cos(colat), np.sin(colat)
    P = np.zeros((nmax + 1, nmax + 1) + colat.shape)
    dP = np.zeros_like(P)
    P[0, 0] = 1.0
    for n in range(1, nmax + 1):
        for m in range(n + 1):
            if n == m:
                P[n, n] = s * P[n - 1, n - 1]
                dP[n, n] = s * dP[n - 1, n - 1] + c * P[n - 1, n - 1]
            elif n == 1:
                P[1, 0] = c
                dP[1, 0] = -s
            else:
                k = ((n - 1) ** 2 - m**2) / ((2 * n - 1) * (2 * n - 3))
                P[n, m] = c * P[n - 1, m] - k * P[n - 2, m]
                dP[n, m] = c * dP[n - 1, m] - s * P[n - 1, m] - k * dP[n - 2, m]
    # Gauss -> Schmidt normalisation
    S = np.zeros((nmax + 1, nmax + 1))
    S[0, 0] = 1.0
    for n in range(1, nmax + 1):
        S[n, 0] = S[n - 1, 0] * (2 * n - 1) / n
        for m in range(1, n + 1):
            S[n, m] = S[n, m - 1] * math.sqrt((n - m + 1) * (2 if m == 1 else 1) / (n + m))
    scale = S.reshape(S.shape + (1,) * colat.ndim)
    return P * scale, dP * scale


def igrf_field_geocentric(coeffs: IgrfCoefficients, radius, colat, lon, date: float) -> np.ndarray:
    """Field at geocentric spherical positions, returned as (B_r, B_theta, B_phi) [T].

    ``radius`` in metres, ``colat`` and ``lon`` in radians; arrays broadcast.
    B_theta points south, B_phi east.
    """
    radius, colat, lon = np.broadcast_arrays(
        np.asarray(radius, float), np.asarray(colat, float), np.asarray(lon, float)
    )
    if np.any(radius < R_EARTH * (1 - 1e-12)):
        raise ValueError("position below the reference sphere")
    g, h = coeffs.at(date)
    nmax = coeffs.max_degree
    P, dP = schmidt_legendre(nmax, colat)
    ratio = R_EARTH / radius
    sin_t = np.sin(colat)
    br = np.zeros_like(radius)
    bt = np.zeros_like(radius)
    bp = np.zeros_like(radius)
    for m in range(nmax + 1):
        cm, sm = np.cos(m * lon), np.sin(m * lon)
        for n in range(max(m, 1), nmax + 1):
            rn = ratio ** (n + 2)
            a = g[n, m] * cm + h[n, m] * sm
            br += (n + 1) * rn * a * P[n, m]
            bt -= rn * a * dP[n, m]
            if m:
                bp += rn * m * (g[n, m] * sm - h[n, m] * cm) * P[n, m]
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.where(sin_t > 1e-12, bp / np.where(sin_t > 1e-12, sin_t, 1.0), 0.0)
    return np.stack([br, bt, bp], axis=-1) * 1e-9


def igrf_field_ecef(coeffs: IgrfCoefficients, r_ecef: np.ndarray, date: float) -> np.ndarray:
    r_ecef = np.atleast_2d(r_ecef)
    x, y, z = r_ecef[:, 0], r_ecef[:, 1], r_ecef[:, 2]
    rad = np.sqrt(x * x + y * y + z * z)
    colat = np.arccos(np.clip(z / rad, -1.0, 1.0))
    lon = np.arctan2(y, x)
    sph = igrf_field_geocentric(coeffs, rad, colat, lon, date)
    st, ct, sp, cp = np.sin(colat), np.cos(colat), np.sin(lon), np.cos(lon)
    e_r = np.stack([st * cp, st * sp, ct], axis=-1)
    e_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return sph[:, :1] * e_r + sph[:, 1:2] * e_t + sph[:, 2:3] * e_p


def igrf_inertial_array(
    coeffs: IgrfCoefficients, el: OrbitElements, times, epoch_year: float = 2020.0
) -> np.ndarray:
    """IGRF field [T] in the inertial frame along the orbit at ``times`` [s after epoch]."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    r_eci = positions(el, times)
    gst = greenwich_angle(epoch_year, times)
    c, s = np.cos(gst), np.sin(gst)
    r_ecef = np.stack([c * r_eci[:, 0] + s * r_eci[:, 1], -s * r_eci[:, 0] + c * r_eci[:, 1], r_eci[:, 2]], axis=-1)
    # date drift over an orbit is negligible for the secular variation
    b_ecef = igrf_field_ecef(coeffs, r_ecef, epoch_year + float(np.mean(times)) / 31557600.0)
    return np.stack(
        [c * b_ecef[:, 0] - s * b_ecef[:, 1], s * b_ecef[:, 0] + c * b_ecef[:, 1], b_ecef[:, 2]], axis=-1
    )


# --------------------------------------------------------------------------
# frame handling


def field_in_body(
    sample: GeomagneticSample,
    q: np.ndarray,
    omega: np.ndarray,
    orbital_to_inertial_dcm: np.ndarray | None = None,
) -> GeomagneticSample:
    """Express an orbital- or inertial-frame sample in the body frame.

    The body-frame derivative includes the transport term ``-omega x B``.
    """
    if sample.frame == "body":
        raise FrameMismatchError("sample is already in the body frame")
    b, b_dot = sample.b, sample.b_dot
    if sample.frame == "orbital":
        if orbital_to_inertial_dcm is None:
            raise FrameMismatchError("an orbital-frame sample needs the orbital->inertial rotation")
        # the orbit-plane frame is non-rotating
        b, b_dot = orbital_to_inertial_dcm @ b, orbital_to_inertial_dcm @ b_dot
    C = quat_to_dcm(q)
    b_body = C @ b
    b_dot_body = C @ b_dot - np.cross(omega, b_body)
    return GeomagneticSample(b_body, b_dot_body, "body", sample.t)


@dataclass
class SampledField:
    """Inertial field tabulated on a uniform grid, with an exact fallback.

    RK4 substages land on a half-step grid, so the truth field is evaluated
    once, vectorised, and looked up afterwards.
    """

    t0: float
    dt: float
    values: np.ndarray
    fallback: object = None

    def __call__(self, t: float) -> np.ndarray:
        x = (t - self.t0) / self.dt
        k = int(round(x))
        if abs(x - k) < 1e-6 and 0 <= k < len(self.values):
            return self.values[k]
        if self.fallback is None:
            raise ValueError(f"t={t} is off the tabulated grid")
        return self.fallback(t)


def truth_field(
    model: str,
    el: OrbitElements,
    duration: float,
    grid_step: float,
    coeffs: IgrfCoefficients | None = None,
    epoch_year: float = 2020.0,
    chunk: int = 20000,
) -> SampledField:
    n = int(math.ceil(duration / grid_step)) + 3
    times = np.arange(n) * grid_step
    if model == "dipole":
        values = dipole_inertial_array(el, times)
        fallback = lambda t: dipole_inertial_array(el, [t])[0]  # noqa: E731
    elif model == "igrf":
        if coeffs is None:
            coeffs = load_igrf()
        values = np.concatenate(
            [igrf_inertial_array(coeffs, el, times[i : i + chunk], epoch_year) for i in range(0, n, chunk)]
        )
        fallback = lambda t: igrf_inertial_array(coeffs, el, [t], epoch_year)[0]  # noqa: E731
    else:
        raise ValueError(f"unknown field model {model!r}")
    return SampledField(0.0, grid_step, values, fallback)


# --------------------------------------------------------------------------
# model comparison


@dataclass
class FieldComparison:
    t: np.ndarray
    dipole: np.ndarray
    igrf: np.ndarray
    frame: str


def compare_models(
    el: OrbitElements,
    coeffs: IgrfCoefficients,
    duration: float | None = None,
    step: float = 10.0,
    epoch_year: float = 2020.0,
    frame: str = "orbital",
    q: np.ndarray | None = None,
) -> FieldComparison:
    """Dipole and IGRF series along the same trajectory.

    ``frame='body'`` resolves both in a body frame held at attitude ``q``
    (identity by default).
    """
    duration = el.period if duration is None else duration
    t = np.arange(0.0, duration + 0.5 * step, step)
    dip = dipole_inertial_array(el, t)
    igrf = igrf_inertial_array(coeffs, el, t, epoch_year)
    if frame == "orbital":
        C = orbital_to_inertial(el).T
    elif frame == "inertial":
        C = np.eye(3)
    elif frame == "body":
        C = quat_to_dcm(np.array([1.0, 0, 0, 0]) if q is None else np.asarray(q, float))
    else:
        raise ValueError(f"unknown frame {frame!r}")
    return FieldComparison(t, dip @ C.T, igrf @ C.T, frame)


def dominant_period(series: np.ndarray, dt: float) -> float:
    """Period [s] of the largest non-DC spectral peak of a uniformly sampled series."""
    x = np.asarray(series, float)
    x = x - x.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    freqs = np.fft.rfftfreq(x.size, dt)
    k = 1 + int(np.argmax(spec[1:]))
    return 1.0 / freqs[k]


def sign_agreement(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-component fraction of samples where the two series share a sign."""
    return np.mean(np.sign(a) == np.sign(b), axis=0)


def comparison_csv(cmp: FieldComparison) -> str:
    head = "t_s," + ",".join(f"{m}_{c}_T" for m in ("dipole", "igrf") for c in "xyz")
    lines = [head]
    for t, d, g in zip(cmp.t, cmp.dipole, cmp.igrf):
        lines.append(f"{t:.6g}," + ",".join(f"{v:.10g}" for v in (*d, *g)))
    return "\n".join(lines) + "\n"
