"""Keplerian two-body orbit and the frames built on it.

Frames used throughout the package:

* inertial: Earth-centred inertial (equator/equinox of date, no precession).
* orbital: orbit-plane frame, x toward the ascending node, z along the orbit
  normal, y completing the triad in the orbit plane. It does not rotate with
  the satellite, so it differs from the inertial frame by a constant rotation.
* ecef: Earth-fixed, rotated from inertial by the Greenwich sidereal angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

MU_EARTH = 3.986004418e14  # m^3/s^2
R_EARTH = 6371.2e3  # m, geomagnetic reference radius
EARTH_ROTATION_RATE = 7.292115e-5  # rad/s


@dataclass(frozen=True)
class OrbitElements:
    semi_major_axis: float  # km
    eccentricity: float
    inclination: float  # deg
    raan: float  # deg
    arg_perigee: float  # deg
    mean_anomaly_epoch: float  # deg

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.eccentricity}")
        if self.semi_major_axis * 1e3 * (1.0 - self.eccentricity) <= R_EARTH:
            raise ValueError("perigee lies inside the Earth")

    @property
    def a_m(self) -> float:
        return self.semi_major_axis * 1e3

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.a_m**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


# Aeolus, sun-synchronous
AEOLUS = OrbitElements(6691.6, 0.00046440, 96.700, 100.90, 119.70, 240.49)


@dataclass(frozen=True)
class OrbitStateScalar:
    true_anomaly: float  # rad
    radius: float  # m
    arg_latitude: float  # rad, true anomaly + argument of perigee
    radius_rate: float  # m/s
    anomaly_rate: float  # rad/s
    radius_accel: float  # m/s^2
    anomaly_accel: float  # rad/s^2


def solve_kepler(mean_anomaly: float, e: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """Eccentric anomaly for ``E - e sin E = M`` by Newton iteration."""
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must lie in [0, 1), got {e}")
    M = math.remainder(mean_anomaly, 2.0 * math.pi)
    E = M if e < 0.8 else math.pi * math.copysign(1.0, M)
    for _ in range(max_iter):
        f = E - e * math.sin(E) - M
        if abs(f) < tol:
            break
        E -= f / (1.0 - e * math.cos(E))
    else:
        if abs(E - e * math.sin(E) - M) >= tol:
            raise RuntimeError(f"Kepler iteration did not converge for M={M}, e={e}")
    # restore the caller's revolution count
    return E + (mean_anomaly - M)


def true_from_eccentric(E: float, e: float) -> float:
    return 2.0 * math.atan2(math.sqrt(1 + e) * math.sin(E / 2), math.sqrt(1 - e) * math.cos(E / 2))


def orbit_state(el: OrbitElements, t: float) -> OrbitStateScalar:
    e = el.eccentricity
    n = el.mean_motion
    M = math.radians(el.mean_anomaly_epoch) + n * t
    E = solve_kepler(M, e)
    theta = true_from_eccentric(E, e)
    p = el.a_m * (1 - e * e)
    r = p / (1 + e * math.cos(theta))
    h = math.sqrt(MU_EARTH * p)
    theta_dot = h / (r * r)
    r_dot = math.sqrt(MU_EARTH / p) * e * math.sin(theta)
    r_ddot = h * h / r**3 - MU_EARTH / (r * r)
    theta_ddot = -2.0 * r_dot * theta_dot / r
    return OrbitStateScalar(theta, r, theta + math.radians(el.arg_perigee), r_dot, theta_dot, r_ddot, theta_ddot)


def _rot1(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot3(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orbital_to_inertial(el: OrbitElements) -> np.ndarray:
    """Constant matrix taking orbit-plane frame components to inertial."""
    return _rot3(math.radians(el.raan)) @ _rot1(math.radians(el.inclination))


def position_velocity(el: OrbitElements, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Inertial position [m] and velocity [m/s]."""
    s = orbit_state(el, t)
    u = s.arg_latitude
    r_orb = s.radius * np.array([math.cos(u), math.sin(u), 0.0])
    v_orb = np.array([
        s.radius_rate * math.cos(u) - s.radius * s.anomaly_rate * math.sin(u),
        s.radius_rate * math.sin(u) + s.radius * s.anomaly_rate * math.cos(u),
        0.0,
    ])
    C = orbital_to_inertial(el)
    return C @ r_orb, C @ v_orb


def anomaly_radius(el: OrbitElements, times) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised true anomaly [rad] and radius [m] at ``times``."""
    times = np.asarray(times, dtype=float)
    e = el.eccentricity
    M = math.radians(el.mean_anomaly_epoch) + el.mean_motion * times
    M = np.remainder(M + np.pi, 2 * np.pi) - np.pi
    E = M.copy() if e < 0.8 else np.pi * np.sign(M)
    for _ in range(50):
        f = E - e * np.sin(E) - M
        if np.max(np.abs(f), initial=0.0) < 1e-12:
            break
        E = E - f / (1 - e * np.cos(E))
    theta = 2 * np.arctan2(np.sqrt(1 + e) * np.sin(E / 2), np.sqrt(1 - e) * np.cos(E / 2))
    r = el.a_m * (1 - e * e) / (1 + e * np.cos(theta))
    return theta, r


def positions(el: OrbitElements, times) -> np.ndarray:
    """Inertial positions [m] for an array of times, shape ``(n, 3)``."""
    theta, r = anomaly_radius(el, times)
    u = theta + math.radians(el.arg_perigee)
    r_orb = np.stack([r * np.cos(u), r * np.sin(u), np.zeros_like(r)], axis=-1)
    return r_orb @ orbital_to_inertial(el).T


def decimal_year_to_datetime(year: float) -> datetime:
    y = int(math.floor(year))
    start = datetime(y, 1, 1)
    length = (datetime(y + 1, 1, 1) - start).total_seconds()
    return start + timedelta(seconds=(year - y) * length)


def datetime_to_decimal_year(dt: datetime) -> float:
    start = datetime(dt.year, 1, 1)
    length = (datetime(dt.year + 1, 1, 1) - start).total_seconds()
    return dt.year + (dt - start).total_seconds() / length


def julian_date(dt: datetime) -> float:
    return 2451545.0 + (dt - datetime(2000, 1, 1, 12)).total_seconds() / 86400.0


def gmst(jd_ut1: float) -> float:
    """Greenwich mean sidereal angle [rad], IAU-82."""
    tu = (jd_ut1 - 2451545.0) / 36525.0
    sec = 67310.54841 + (876600.0 * 3600 + 8640184.812866) * tu + 0.093104 * tu**2 - 6.2e-6 * tu**3
    return math.radians((sec % 86400.0) / 240.0)


def greenwich_angle(epoch_year: float, t):
    """Greenwich angle [rad] at ``t`` seconds (scalar or array) after ``epoch_year``."""
    g0 = gmst(julian_date(decimal_year_to_datetime(epoch_year)))
    return g0 + EARTH_ROTATION_RATE * t
