"""Overhead crane plant, equilibrium map and PD laws.

State ordering is ``[x, theta, xdot, thetadot]``: gantry position (m), payload
angle (rad), and their rates. The model is only valid for
``theta in (-pi/2, pi/2)``; leaving that interval raises
:class:`~dsmcbf.errors.ModelDomainError` instead of wrapping the angle.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import cos, sin, pi

import numpy as np

from ._backend import kernels
from .errors import ConfigurationError, ModelDomainError

GRAVITY = 9.81


@dataclass(frozen=True)
class CraneParams:
    """Gantry mass, payload mass, rod length and gravity (SI units)."""

    m_c: float = 1.0
    m_p: float = 0.5
    L: float = 0.7
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("m_c", "m_p", "L", "g"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"CraneParams.{name} must be positive")

    @property
    def tuple(self):
        return (self.m_c, self.m_p, self.L, self.g)


@dataclass(frozen=True)
class PdGains:
    kp: float
    kd: float

    def __post_init__(self):
        if not (self.kp > 0 and self.kd > 0):
            raise ConfigurationError("PD gains must be positive")


def plant_state(x=0.0, theta=0.0, xdot=0.0, thetadot=0.0) -> np.ndarray:
    return np.array([x, theta, xdot, thetadot], dtype=float)


def equilibrium(r: float) -> np.ndarray:
    """Equilibrium state for reference ``r``; the matching input is zero."""
    return plant_state(r, 0.0, 0.0, 0.0)


def equilibrium_input(r: float) -> float:
    return 0.0


def check_domain(s) -> None:
    if not abs(s[1]) < 0.5 * pi:
        raise ModelDomainError(f"payload angle {s[1]!r} outside (-pi/2, pi/2)")


def mass_matrix(theta: float, p: CraneParams) -> np.ndarray:
    c = cos(theta)
    return np.array([[p.m_c + p.m_p, -p.m_p * p.L * c],
                     [-p.m_p * p.L * c, p.m_p * p.L ** 2]])


def mass_matrix_det(theta: float, p: CraneParams) -> float:
    return p.m_p * p.L ** 2 * (p.m_c + p.m_p * sin(theta) ** 2)


def crane_dynamics(s, u: float, p: CraneParams) -> np.ndarray:
    """State derivative ``[xdot, thetadot, xddot, thetaddot]`` under force ``u``."""
    return np.array(kernels.crane_rhs(_seq(s), float(u), *p.tuple))


def drift(s, p: CraneParams) -> np.ndarray:
    """Drift term f0(x) of the control-affine form."""
    return crane_dynamics(s, 0.0, p)


def input_gain(s, p: CraneParams) -> np.ndarray:
    """Input column g(x) of the control-affine form."""
    return np.array(kernels.crane_input_gain(_seq(s), p.m_c, p.m_p, p.L))


def pd_law(s, ref: float, gains: PdGains) -> float:
    return -gains.kp * (s[0] - ref) - gains.kd * s[2]


def prestab_pi(s, v: float, gains: PdGains) -> float:
    """Prestabilizing PD law steering the crane to the equilibrium at ``v``."""
    return pd_law(s, v, gains)


def nominal_kappa(s, r: float, gains: PdGains) -> float:
    """Nominal PD law (typically stiffer gains) tracking the target ``r``."""
    return pd_law(s, r, gains)


def closed_loop_f_pi(s, v: float, p: CraneParams, gains: PdGains) -> np.ndarray:
    return crane_dynamics(s, prestab_pi(s, v, gains), p)


def payload_position(s, p: CraneParams) -> float:
    return s[0] + p.L * sin(s[1])


def _seq(s):
    if isinstance(s, np.ndarray):
        return s.tolist()
    return s
