"""Shared value types, SVO angle parameterization and scenario configuration.

Positions are measured along each road relative to the conflict point:
negative upstream, zero at the conflict point, positive once past it.
Controls are plain floats (accelerations, m/s^2) and control sequences are
1-D float arrays of length ``H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

HALF_PI = 0.5 * math.pi


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario configuration."""


@dataclass(frozen=True)
class VehicleState:
    position: float
    speed: float

    def __post_init__(self):
        if not (math.isfinite(self.position) and math.isfinite(self.speed)):
            raise ValueError(f"non-finite vehicle state {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.position, self.speed])

    @classmethod
    def from_array(cls, x) -> VehicleState:
        return cls(float(x[0]), float(x[1]))


def _sigmoid(psi: float) -> float:
    # split branches so exp never overflows
    if psi >= 0:
        return 1.0 / (1.0 + math.exp(-psi))
    e = math.exp(psi)
    return e / (1.0 + e)


def phi_from_psi(psi: float) -> float:
    """Map the unconstrained parameter to an SVO angle in (0, pi/2)."""
    if not math.isfinite(psi):
        raise ValueError(f"psi must be finite, got {psi}")
    return HALF_PI * _sigmoid(psi)


def psi_from_phi(phi: float) -> float:
    """Inverse of :func:`phi_from_psi`; ``phi`` must lie strictly inside (0, pi/2)."""
    if not (0.0 < phi < HALF_PI):
        raise ValueError(f"SVO angle {phi} outside the open interval (0, pi/2)")
    q = phi / HALF_PI
    return math.log(q) - math.log1p(-q)


def check_angle(phi: float, name: str = "phi") -> float:
    if not (0.0 < phi < HALF_PI):
        raise ValueError(f"{name}={phi} outside the open interval (0, pi/2)")
    return float(phi)


@dataclass(frozen=True)
class SvoPair:
    """SVO angles of the CAV (``phi1``) and the HDV (``phi2``).

    ``psi`` is the unconstrained parameter of the HDV angle; the constructor
    checks ``phi2 == phi_from_psi(psi)``. Use :meth:`from_angles` or
    :meth:`from_psi` rather than passing all three.
    """

    phi1: float
    phi2: float
    psi: float

    def __post_init__(self):
        check_angle(self.phi1, "phi1")
        check_angle(self.phi2, "phi2")
        if abs(phi_from_psi(self.psi) - self.phi2) > 1e-12:
            raise ValueError("phi2 is inconsistent with psi")

    @classmethod
    def from_angles(cls, phi1: float, phi2: float) -> SvoPair:
        psi = psi_from_phi(phi2)
        # keep the stored angle bit-consistent with psi
        return cls(phi1, phi_from_psi(psi), psi)

    @classmethod
    def from_psi(cls, phi1: float, psi: float) -> SvoPair:
        return cls(phi1, phi_from_psi(psi), psi)


@dataclass(frozen=True)
class TrajectorySegment:
    """One-step record of both vehicles: start states, next states and actions."""

    x1: VehicleState
    x2: VehicleState
    x1_next: VehicleState
    x2_next: VehicleState
    u1: float
    u2: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Weights, horizons, bounds and geometry of the merging problem.

    Defaults are the simulation parameters of the original study. ``r`` and
    ``barrier_epsilon`` were not published and are free parameters here.
    """

    w1: float = 1.0
    w2: float = 5.0
    w3: float = 1.0
    w4: float = 5.0
    w5: float = 1e7
    dt: float = 0.1
    v_min: float = 0.0
    v_max: float = 30.0
    u_min: float = -10.0
    u_max: float = 5.0
    H: int = 20
    L: int = 20
    eta: float = 1.0
    r: float = 10.0
    Lc: float = 120.0
    barrier_epsilon: float = 1.0
    n_inner: int = 1
    hdv_horizon: int = 1

    def __post_init__(self):
        problems = []
        for name in ("w1", "w2", "w3", "w4", "w5", "dt", "eta", "r", "Lc", "barrier_epsilon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                problems.append(f"{name} must be positive and finite (got {value})")
        if not self.v_min < self.v_max:
            problems.append("v_min must be below v_max")
        if not self.u_min < 0 < self.u_max:
            problems.append("need u_min < 0 < u_max")
        for name in ("H", "L", "n_inner", "hdv_horizon"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                problems.append(f"{name} must be a positive integer (got {value})")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_overrides(self, **kwargs) -> ScenarioConfig:
        return replace(self, **kwargs)


def default_config() -> ScenarioConfig:
    return ScenarioConfig()


_INT_FIELDS = {"H", "L", "n_inner", "hdv_horizon"}


def parse_config(text: str) -> ScenarioConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Keys are the :class:`ScenarioConfig` field names. Missing keys keep their
    defaults, unknown or repeated keys raise :class:`ConfigError`.
    """
    known = {f.name for f in fields(ScenarioConfig)}
    values: dict[str, float | int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} is not a number: {value!r}") from None
        if key in _INT_FIELDS:
            if number != int(number):
                raise ConfigError(f"line {lineno}: {key} must be an integer")
            number = int(number)
        values[key] = number
    return ScenarioConfig(**values)


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
