"""Physical parameters of the quadrotor-cable system.

Defaults are the simulation values used throughout the package: a 1 m
cable of 10 mm diameter hanging from a 0.3 kg quadrotor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class CableParams:
    length: float = 1.0  # L (m)
    cross_section: float = 7.854e-5  # A (m^2)
    density: float = 1.2732e3  # rho_c (kg/m^3)
    young_modulus: float = 1.0e5  # E (N/m^2)
    drag_coeff: float = 0.01  # c_d
    air_density: float = 1.293  # rho_a (kg/m^3)

    def __post_init__(self):
        for name in ("length", "cross_section", "density", "young_modulus", "air_density"):
            if not getattr(self, name) > 0:
                raise ValueError(f"cable.{name} must be positive, got {getattr(self, name)}")
        if self.drag_coeff < 0:
            raise ValueError(f"cable.drag_coeff must be non-negative, got {self.drag_coeff}")

    @property
    def EA(self) -> float:
        return self.young_modulus * self.cross_section

    @property
    def linear_density(self) -> float:
        """Mass per unit length rho_c * A (kg/m)."""
        return self.density * self.cross_section

    @property
    def mass(self) -> float:
        return self.linear_density * self.length

    @property
    def drag_per_length(self) -> float:
        """Aggregate drag coefficient rho_a * c_d."""
        return self.air_density * self.drag_coeff

    def with_(self, **kw) -> "CableParams":
        return replace(self, **kw)


def _default_rotors():
    return np.array([[0.15, 0.0, 0.0], [0.0, 0.15, 0.0], [-0.15, 0.0, 0.0], [0.0, -0.15, 0.0]])


@dataclass(frozen=True)
class QuadParams:
    mass: float = 0.3  # m_B (kg)
    inertia: tuple = (1e-6, 1e-6, 2e-6)  # diagonal of J_B (kg m^2)
    rotor_positions: np.ndarray = field(default_factory=_default_rotors)
    thrust_coeffs: tuple = (4e-7, 4e-7, 4e-7, 4e-7)  # c_T (N s^2)
    drag_coeffs: tuple = (3e-9, 3e-9, 3e-9, 3e-9)  # c_tau (N m s^2)
    gravity: float = 9.8

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"quad.mass must be positive, got {self.mass}")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("quad.inertia needs three positive diagonal entries")
        rp = np.asarray(self.rotor_positions, dtype=float)
        if rp.shape != (4, 3) or len(self.thrust_coeffs) != 4 or len(self.drag_coeffs) != 4:
            raise ValueError("exactly 4 rotors are required")
        object.__setattr__(self, "rotor_positions", rp)
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        object.__setattr__(self, "thrust_coeffs", tuple(float(v) for v in self.thrust_coeffs))
        object.__setattr__(self, "drag_coeffs", tuple(float(v) for v in self.drag_coeffs))

    @property
    def J(self) -> np.ndarray:
        return np.diag(self.inertia)

    def with_(self, **kw) -> "QuadParams":
        return replace(self, **kw)


@dataclass
class Attitude:
    """Tait-Bryan angles (Z -> Y -> X) and their time derivatives."""

    angles: np.ndarray = field(default_factory=lambda: np.zeros(3))  # theta_x, theta_y, theta_z
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float).reshape(3)
        self.rates = np.asarray(self.rates, dtype=float).reshape(3)


def experiment_cable() -> CableParams:
    """Cable measured and identified for the hardware setup (thin 1 m cable)."""
    return CableParams(
        length=1.0,
        cross_section=3.1416e-6,
        density=3.0239e3,
        young_modulus=1234623.7038,
        drag_coeff=0.0013648,
    )


def total_mass(cable: CableParams, quad: QuadParams) -> float:
    return quad.mass + cable.mass
