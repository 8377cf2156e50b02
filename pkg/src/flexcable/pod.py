"""Snapshot collection and proper orthogonal decomposition of the cable shape.

Mode normalisation: the columns of ``ModeBank.modes`` are unit vectors
over the M+1 sampling points.  The continuous mode value at ``s = k h_d``
is ``modes[k, i] / sqrt(h_d)``, so the discrete inner product
``sum_k phi_i(k h_d) phi_j(k h_d) h_d`` is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroSpectrum, ConvergenceFailure, GridMismatch
from .params import CableParams


@dataclass
class SnapshotTensor:
    data: np.ndarray  # (3, M+1, S+1), head-centred displacements
    h_d: float
    t_s: float
    head: np.ndarray | None = None  # (S+1, 3) recorded head positions
    source_hash: str = ""

    @property
    def M(self) -> int:
        return self.data.shape[1] - 1

    @property
    def S(self) -> int:
        return self.data.shape[2] - 1


def array_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def sample_indices(n_segments: int, M: int) -> np.ndarray:
    """FDM node indices k N / M, k = 0..M."""
    if M < 1 or n_segments % M:
        raise GridMismatch(f"M = {M} does not divide N = {n_segments}")
    return np.arange(M + 1) * (n_segments // M)


def collect_snapshots(record, M: int, t_s: float, t_end: float | None = None) -> SnapshotTensor:
    """Head-centred shape samples of an FDM run at period ``t_s``."""
    idx = sample_indices(record.segments, M)
    times = np.asarray(record.times)
    t_end = times[-1] if t_end is None else t_end
    S = int(np.floor((t_end - times[0]) / t_s + 1e-9))
    wanted = times[0] + t_s * np.arange(S + 1)
    k = np.searchsorted(times, wanted - 1e-9)
    if np.any(k >= len(times)) or np.any(np.abs(times[np.minimum(k, len(times) - 1)] - wanted) > 1e-6):
        raise GridMismatch("record is not sampled at multiples of t_s")
    pts = record.positions[k][:, idx, :]  # (S+1, M+1, 3)
    head = pts[:, 0, :].copy()
    centred = pts - head[:, None, :]
    data = np.transpose(centred, (2, 1, 0)).copy()
    h_d = 1.0 / M if "length" not in record.meta else record.meta["length"] / M
    return SnapshotTensor(data, h_d, t_s, head, array_hash(data))


def unfold_mode2(tensor) -> np.ndarray:
    """(M+1) x 3(S+1) matrix; row j holds [r_j(0)^T, r_j(t_s)^T, ...]."""
    data = tensor.data if isinstance(tensor, SnapshotTensor) else np.asarray(tensor)
    return np.transpose(data, (1, 2, 0)).reshape(data.shape[1], -1)


def fold_mode2(matrix: np.ndarray, n_times: int) -> np.ndarray:
    rows = matrix.shape[0]
    return np.transpose(np.asarray(matrix).reshape(rows, n_times, 3), (2, 0, 1))


@dataclass
class ModeBank:
    modes: np.ndarray  # (M+1, r), orthonormal columns
    sigma: np.ndarray  # (r,)
    h_d: float
    K: int
    source_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not 1 <= self.K <= self.modes.shape[1]:
            raise ValueError(f"K = {self.K} outside 1..{self.modes.shape[1]}")

    @property
    def M(self) -> int:
        return self.modes.shape[0] - 1

    @property
    def phi(self) -> np.ndarray:
        """Truncated modes as continuous values phi_i(k h_d), shape (M+1, K)."""
        return self.modes[:, : self.K] / np.sqrt(self.h_d)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights phi_i^k sqrt(h_d) for k = 1..M (row 0 zeroed)."""
        w = self.modes[:, : self.K] * np.sqrt(self.h_d)
        w[0] = 0.0
        return w

    @property
    def integrals(self) -> np.ndarray:
        """Rectangle-rule integrals of the first K modes over the cable."""
        return self.weights.sum(axis=0)

    def truncate(self, K: int) -> "ModeBank":
        return ModeBank(self.modes, self.sigma, self.h_d, K, self.source_hash, dict(self.meta))

    def energy(self) -> np.ndarray:
        return energy_ratios(self.sigma)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def compute_modes(matrix: np.ndarray, h_d: float, K: int = 3, source_hash: str = "") -> ModeBank:
    """Left singular vectors of the mode-2 unfolding, largest first."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("snapshot matrix contains non-finite entries")
    try:
        u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge: {exc}") from exc
    u = _fix_signs(u)
    K = min(K, u.shape[1])
    return ModeBank(u, s, h_d, K, source_hash or array_hash(matrix))


def modes_from_tensor(tensor: SnapshotTensor, K: int = 3) -> ModeBank:
    if not np.any(tensor.data):
        raise AllZeroSpectrum("snapshot tensor is identically zero; run a sweep that moves the cable")
    bank = compute_modes(unfold_mode2(tensor), tensor.h_d, K, tensor.source_hash)
    bank.meta.update({"t_s": tensor.t_s, "S": tensor.S})
    return bank


def energy_ratios(sigma) -> np.ndarray:
    s2 = np.asarray(sigma, dtype=float) ** 2
    total = s2.sum()
    if total <= 0:
        raise AllZeroSpectrum("all singular values are zero")
    return s2 / total


def steady_profile(s, cable: CableParams, g: float = 9.8):
    """Vertical offset below the head of the hanging cable at rest."""
    s = np.asarray(s, dtype=float)
    rho, E, L = cable.density, cable.young_modulus, cable.length
    return -(1.0 + rho * g * L / E) * s + rho * g / (2.0 * E) * s**2


def steady_shape(cable: CableParams, n_points: int, head=(0.0, 0.0, 0.0), g: float = 9.8) -> np.ndarray:
    """Equilibrium positions at ``n_points`` equally spaced material points."""
    s = np.linspace(0.0, cable.length, n_points)
    pos = np.tile(np.asarray(head, dtype=float), (n_points, 1))
    pos[:, 2] += steady_profile(s, cable, g)
    return pos


# ---------------------------------------------------------------------------
# Reduced state and coordinate maps
# ---------------------------------------------------------------------------


@dataclass
class RomState:
    coeffs: np.ndarray  # (K, 3)
    head: np.ndarray  # (3,)
    coeff_rates: np.ndarray  # (K, 3)
    head_vel: np.ndarray  # (3,)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, 3)
        self.coeff_rates = np.asarray(self.coeff_rates, dtype=float).reshape(-1, 3)
        self.head = np.asarray(self.head, dtype=float).reshape(3)
        self.head_vel = np.asarray(self.head_vel, dtype=float).reshape(3)

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.coeffs.ravel(), self.head, self.coeff_rates.ravel(), self.head_vel])

    @classmethod
    def from_vector(cls, x, K: int) -> "RomState":
        x = np.asarray(x, dtype=float)
        n = 3 * (K + 1)
        if x.shape != (2 * n,):
            raise ValueError(f"expected a vector of length {2 * n}")
        return cls(x[: 3 * K], x[3 * K : n], x[n : n + 3 * K], x[n + 3 * K :])

    @classmethod
    def zeros(cls, K: int, head=(0.0, 0.0, 0.0)) -> "RomState":
        return cls(np.zeros((K, 3)), head, np.zeros((K, 3)), np.zeros(3))


def reduced_samples(positions: np.ndarray, M: int) -> np.ndarray:
    """Pick the M+1 reduced-grid points from an FDM node array."""
    positions = np.asarray(positions)
    return positions[sample_indices(positions.shape[-2] - 1, M)] if positions.ndim == 2 else positions[:, sample_indices(positions.shape[-2] - 1, M)]


def project(positions, velocities, bank: ModeBank) -> RomState:
    """Coefficients of the head-relative shape and velocity on the first K modes."""
    P = reduced_samples(positions, bank.M)
    V = reduced_samples(velocities, bank.M)
    w = bank.weights  # row 0 is zero, so the k = 0 term drops out
    coeffs = w.T @ (P - P[0])
    rates = w.T @ (V - V[0])
    return RomState(coeffs, P[0], rates, V[0])


def reconstruct(state: RomState, bank: ModeBank) -> np.ndarray:
    """Cable points on the reduced grid, shape (M+1, 3)."""
    pos = state.head + bank.phi @ state.coeffs
    pos[0] = state.head
    return pos


def reconstruct_velocity(state: RomState, bank: ModeBank) -> np.ndarray:
    vel = state.head_vel + bank.phi @ state.coeff_rates
    vel[0] = state.head_vel
    return vel
