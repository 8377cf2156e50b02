"""Kinematics, constitutive laws and rotor model.

Everything here is a pure function of its inputs. Vector arguments are
length-3 arrays in the world frame unless stated otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateSegment, GimbalLock, InfeasibleAllocation
from .params import Attitude, CableParams, QuadParams

GIMBAL_MARGIN = 1e-3
MIN_SEGMENT = 1e-9

E_Z = np.array([0.0, 0.0, 1.0])


def _angles(att):
    return att.angles if isinstance(att, Attitude) else np.asarray(att, dtype=float)


def rotation_from_attitude(att) -> np.ndarray:
    """Body-to-world rotation R = Rz(theta_z) @ Ry(theta_y) @ Rx(theta_x)."""
    tx, ty, tz = _angles(att)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    cz, sz = np.cos(tz), np.sin(tz)
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    )


def _check_gimbal(theta_y):
    if abs(theta_y) > np.pi / 2 - GIMBAL_MARGIN:
        raise GimbalLock(f"theta_y = {theta_y:.6f} rad is within {GIMBAL_MARGIN} of pi/2")


def euler_rate_matrix(att) -> np.ndarray:
    """T such that d(theta)/dt = T @ omega_B (ZYX angles, body rates)."""
    tx, ty, _ = _angles(att)
    _check_gimbal(ty)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, ty_ = np.cos(ty), np.tan(ty)
    return np.array(
        [
            [1.0, sx * ty_, cx * ty_],
            [0.0, cx, -sx],
            [0.0, sx / cy, cx / cy],
        ]
    )


def inverse_euler_rate_matrix(att) -> np.ndarray:
    """T^-1, mapping Euler-angle rates to body angular velocity."""
    tx, ty, _ = _angles(att)
    _check_gimbal(ty)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    return np.array(
        [
            [1.0, 0.0, -sy],
            [0.0, cx, sx * cy],
            [0.0, -sx, cx * cy],
        ]
    )


def euler_rate_matrix_dot(att: Attitude) -> np.ndarray:
    """Time derivative of T along the current Euler-angle rates."""
    tx, ty, _ = att.angles
    _check_gimbal(ty)
    dx, dy, _ = att.rates
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    sec2 = 1.0 / cy**2
    tny = sy / cy
    d_tx = np.array([[0.0, cx * tny, -sx * tny], [0.0, -sx, -cx], [0.0, cx / cy, -sx / cy]])
    d_ty = np.array([[0.0, sx * sec2, cx * sec2], [0.0, 0.0, 0.0], [0.0, sx * sy * sec2, cx * sy * sec2]])
    return d_tx * dx + d_ty * dy


def body_rates_from_euler_rates(att: Attitude) -> np.ndarray:
    return inverse_euler_rate_matrix(att) @ att.rates


def strain(r_s) -> float:
    norm = float(np.linalg.norm(r_s))
    if norm < MIN_SEGMENT:
        raise DegenerateSegment(f"spatial derivative norm {norm:.3e} below {MIN_SEGMENT}")
    return norm - 1.0


def internal_force(r_s, params: CableParams) -> np.ndarray:
    """Linear-elastic tension vector, tangent to the cable."""
    r_s = np.asarray(r_s, dtype=float)
    eps = strain(r_s)
    return params.EA * eps * r_s / np.linalg.norm(r_s)


def drag_load(r_t, params: CableParams) -> np.ndarray:
    """Quadratic aerodynamic drag per unit length; zero at zero velocity."""
    r_t = np.asarray(r_t, dtype=float)
    return -params.drag_per_length * np.linalg.norm(r_t) * r_t


def gravity_load(params: CableParams, g: float = 9.8) -> np.ndarray:
    return -params.linear_density * g * E_Z


def allocation_matrix(quad: QuadParams) -> np.ndarray:
    """Map squared rotor speeds to (total thrust, tau_x, tau_y, tau_z)."""
    rows = np.zeros((4, 4))
    for i in range(4):
        c_t = quad.thrust_coeffs[i]
        rx, ry, _ = quad.rotor_positions[i]
        rows[0, i] = c_t
        # r_p x (0, 0, c_T) = (ry c_T, -rx c_T, 0)
        rows[1, i] = ry * c_t
        rows[2, i] = -rx * c_t
        rows[3, i] = (-1) ** (i + 1) * quad.drag_coeffs[i]
    return rows


def thrust_and_torque(omega, quad: QuadParams):
    """Forward rotor model: total body thrust (N) and body torque (N m)."""
    w2 = np.asarray(omega, dtype=float) ** 2
    out = allocation_matrix(quad) @ w2
    return float(out[0]), out[1:]


def allocate_rotors(thrust: float, torque, quad: QuadParams, saturate: bool = False) -> np.ndarray:
    """Invert the quadratic rotor model for the four rotor speeds (rad/s).

    With ``saturate`` the squared speeds are clipped at zero instead of
    raising; the closed-loop simulators use this since a physical rotor
    cannot produce negative thrust.
    """
    wrench = np.concatenate([[thrust], np.asarray(torque, dtype=float)])
    w2 = np.linalg.solve(allocation_matrix(quad), wrench)
    if np.any(w2 < 0):
        if not saturate:
            raise InfeasibleAllocation(f"negative squared rotor speed in {w2}")
        w2 = np.clip(w2, 0.0, None)
    return np.sqrt(w2)
