"""Reduced-order cable model driven by the head acceleration.

State layout (length 6(K+1)): ``[a^1..a^K, r0, da^1..da^K, v0]`` with each
block a 3-vector.  The input ``u`` is the head acceleration.  The cable
shape is rebuilt on the reduced grid, the elastic and drag loads are
evaluated with the finite-difference stencil (ghost point at the free
tail), and projected back onto the modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .params import CableParams
from .pod import ModeBank, RomState

_OK, _DEGENERATE = 0, 1


@dataclass(frozen=True)
class RomModel:
    """Precomputed arrays for the compiled right-hand side."""

    K: int
    phi: np.ndarray  # (M+1, K), continuous mode values (row 0 forced to 0)
    weights: np.ndarray  # (M+1, K), phi * h_d, row 0 zero
    integrals: np.ndarray  # (K,)
    prm: np.ndarray  # [E/rho, h_d, drag coefficient per unit mass, g]

    @classmethod
    def build(cls, bank: ModeBank, cable: CableParams, g: float = 9.8) -> "RomModel":
        phi = bank.phi.copy()
        phi[0] = 0.0
        w = bank.weights
        kdrag = cable.air_density * cable.drag_coeff / (cable.density * cable.cross_section)
        prm = np.array([cable.young_modulus / cable.density, bank.h_d, kdrag, g])
        return cls(bank.K, np.ascontiguousarray(phi), np.ascontiguousarray(w), w.sum(axis=0), prm)

    @property
    def nx(self) -> int:
        return 6 * (self.K + 1)

    def rhs(self, x, u) -> np.ndarray:
        out = np.empty(self.nx)
        status = _rhs(np.asarray(x, float), np.asarray(u, float), self.phi, self.weights, self.integrals, self.prm, out, _work(self.phi))
        _raise_on(status)
        return out

    def jacobian(self, x, u):
        """Continuous-time (f, df/dx, df/du)."""
        n = self.nx
        f, A, B = np.empty(n), np.zeros((n, n)), np.zeros((n, 3))
        status = _rhs_jac(np.asarray(x, float), np.asarray(u, float), self.phi, self.weights, self.integrals, self.prm, f, A, B, _work(self.phi))
        _raise_on(status)
        return f, A, B

    def step(self, x, u, dt: float) -> np.ndarray:
        out = np.empty(self.nx)
        status = _rk4(np.asarray(x, float), np.asarray(u, float), dt, self.phi, self.weights, self.integrals, self.prm, out, _work(self.phi))
        _raise_on(status)
        return out

    def rollout(self, x0, controls, dt: float) -> np.ndarray:
        """States X_0..X_H for a control sequence of shape (H, 3)."""
        controls = np.ascontiguousarray(controls, dtype=float).reshape(-1, 3)
        xs = np.empty((controls.shape[0] + 1, self.nx))
        status = _rollout(np.asarray(x0, float), controls, dt, self.phi, self.weights, self.integrals, self.prm, xs)
        _raise_on(status)
        return xs

    def rollout_sensitivities(self, x0, controls, dt: float):
        """States plus per-step Jacobians A_k = dX_{k+1}/dX_k, B_k = dX_{k+1}/du_k."""
        controls = np.ascontiguousarray(controls, dtype=float).reshape(-1, 3)
        H, n = controls.shape[0], self.nx
        xs = np.empty((H + 1, n))
        As = np.empty((H, n, n))
        Bs = np.empty((H, n, 3))
        status = _rollout_sens(np.asarray(x0, float), controls, dt, self.phi, self.weights, self.integrals, self.prm, xs, As, Bs)
        _raise_on(status)
        return xs, As, Bs

    def cost_gradient(self, x0, controls, dt, reference, Q, R):
        """Horizon objective and its gradient with respect to the controls."""
        controls = np.ascontiguousarray(controls, dtype=float).reshape(-1, 3)
        xs = np.empty((controls.shape[0] + 1, self.nx))
        grad = np.empty_like(controls)
        f, status = _cost_grad(np.asarray(x0, float), controls, dt, np.ascontiguousarray(reference, dtype=float), np.asarray(Q, float), np.asarray(R, float), self.phi, self.weights, self.integrals, self.prm, xs, grad, _work(self.phi))
        _raise_on(status)
        return f, grad, xs

    def equilibrium(self, x_guess, tol: float = 1e-11, max_iter: int = 50) -> np.ndarray:
        """Newton solve for coefficients with zero acceleration at rest (u = 0)."""
        x = np.array(x_guess, dtype=float)
        n = 3 * (self.K + 1)
        x[n:] = 0.0
        m = 3 * self.K
        for _ in range(max_iter):
            f, A, _ = self.jacobian(x, np.zeros(3))
            r = f[n : n + m]
            if np.max(np.abs(r)) < tol:
                return x
            x[:m] -= np.linalg.solve(A[n : n + m, :m], r)
        from .errors import ConvergenceFailure

        raise ConvergenceFailure("reduced-model equilibrium did not converge")

    def to_state(self, x) -> RomState:
        return RomState.from_vector(x, self.K)


def _raise_on(status):
    if status != _OK:
        from .errors import DegenerateSegment

        raise DegenerateSegment("reconstructed cable segment collapsed to zero length", int(status) - 1)


def _work(phi):
    return np.empty((6, phi.shape[0], 3)), np.empty((phi.shape[0] + 1, 3, 3))


# Workspace layout: ws[0] points, ws[1] velocities, ws[2] elastic term,
# ws[3] drag term, ws[4, :, 0] segment lengths, ws[5] stage scratch;
# cj[k] interior stiffness block of segment k, cj[M+1] the tail block.


@nb.njit(cache=True)
def _shape(x, phi, K, M, P, V):
    n = 3 * (K + 1)
    for j in range(M + 1):
        for c in range(3):
            p = x[3 * K + c]
            v = x[n + 3 * K + c]
            for i in range(K):
                p += x[3 * i + c] * phi[j, i]
                v += x[n + 3 * i + c] * phi[j, i]
            P[j, c] = p
            V[j, c] = v


@nb.njit(cache=True)
def _loads(M, h, ws):
    """Elastic stencil term and drag |V|V at nodes 1..M; returns a status code."""
    P, V, S, D = ws[0], ws[1], ws[2], ws[3]
    inv_h2 = 1.0 / (h * h)
    for k in range(1, M + 1):
        ln = 0.0
        for c in range(3):
            d = P[k, c] - P[k - 1, c]
            ln += d * d
        ln = np.sqrt(ln)
        if ln < 1e-12:
            return _DEGENERATE + k
        ws[4, k, 0] = ln
    for j in range(1, M):
        for c in range(3):
            dm = P[j, c] - P[j - 1, c]
            dp = P[j + 1, c] - P[j, c]
            S[j, c] = (dp - dm) * inv_h2 - (dp / ws[4, j + 1, 0] - dm / ws[4, j, 0]) / h
    # ghost node: the tail is stress free, so d_{M+1} = 2 h t_M - d_M
    lm = ws[4, M, 0]
    sig = 1.0 if 2.0 * h > lm else -1.0
    for c in range(3):
        dm = P[M, c] - P[M - 1, c]
        t = dm / lm
        S[M, c] = (2.0 * h * t - 2.0 * dm) * inv_h2 - (sig - 1.0) * t / h
    for j in range(1, M + 1):
        sp = np.sqrt(V[j, 0] ** 2 + V[j, 1] ** 2 + V[j, 2] ** 2)
        for c in range(3):
            D[j, c] = sp * V[j, c]
    return _OK


@nb.njit(cache=True)
def _rhs(x, u, phi, w, integ, prm, out, work):
    ws = work[0]
    K = integ.shape[0]
    M = phi.shape[0] - 1
    n = 3 * (K + 1)
    e_rho, h, kd, g = prm[0], prm[1], prm[2], prm[3]
    _shape(x, phi, K, M, ws[0], ws[1])
    st = _loads(M, h, ws)
    if st != _OK:
        return st
    S, D = ws[2], ws[3]
    for q in range(n):
        out[q] = x[n + q]
    for i in range(K):
        for c in range(3):
            el = 0.0
            dr = 0.0
            for j in range(1, M + 1):
                el += S[j, c] * w[j, i]
                dr += D[j, c] * w[j, i]
            grav = g if c == 2 else 0.0
            out[n + 3 * i + c] = -(u[c] + grav) * integ[i] + e_rho * el - kd * dr
    for c in range(3):
        out[n + 3 * K + c] = u[c]
    return _OK


@nb.njit(cache=True)
def _acc_jac(x, phi, w, prm, Jp, Jv, work):
    """Derivatives of the coefficient accelerations.

    ``Jp[3i+a, 3l+b]`` is d(acc^i_a)/d(a^l_b); ``Jv`` the same with respect
    to the coefficient rates followed by the head velocity.  The head
    position does not enter (only differences of points do).
    """
    ws, cj = work
    K = Jp.shape[0] // 3
    M = phi.shape[0] - 1
    e_rho, h, kd = prm[0], prm[1], prm[2]
    P, V = ws[0], ws[1]
    _shape(x, phi, K, M, P, V)
    inv_h2 = 1.0 / (h * h)
    for k in range(1, M + 1):
        d0 = P[k, 0] - P[k - 1, 0]
        d1 = P[k, 1] - P[k - 1, 1]
        d2 = P[k, 2] - P[k - 1, 2]
        l2 = d0 * d0 + d1 * d1 + d2 * d2
        ln = np.sqrt(l2)
        sig = 1.0 if 2.0 * h > ln else -1.0
        for a in range(3):
            da = d0 if a == 0 else (d1 if a == 1 else d2)
            for b in range(3):
                db = d0 if b == 0 else (d1 if b == 1 else d2)
                eye = 1.0 if a == b else 0.0
                G = (eye - da * db / l2) / ln
                cj[k, a, b] = -eye * inv_h2 + G / h
                if k == M:
                    cj[M + 1, a, b] = (2.0 / h) * G - 2.0 * inv_h2 * eye - (sig - 1.0) * G / h
    Jp[:, :] = 0.0
    Jv[:, :] = 0.0
    for i in range(K):
        for k in range(1, M + 1):
            wm1 = w[k - 1, i] if k >= 2 else 0.0
            wk = w[k, i] - wm1
            for a in range(3):
                for b in range(3):
                    if k < M:
                        mk = wk * cj[k, a, b]
                    else:
                        # node M closes with the ghost point; node M-1 sees d_M as its plus side
                        mk = w[k, i] * cj[M + 1, a, b] - wm1 * cj[k, a, b]
                    mk *= e_rho
                    for l in range(K):
                        Jp[3 * i + a, 3 * l + b] += mk * (phi[k, l] - phi[k - 1, l])
    for j in range(1, M + 1):
        v0, v1, v2 = V[j, 0], V[j, 1], V[j, 2]
        sp = np.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
        if sp == 0.0:
            continue
        for a in range(3):
            va = v0 if a == 0 else (v1 if a == 1 else v2)
            for b in range(3):
                vb = v0 if b == 0 else (v1 if b == 1 else v2)
                dD = (sp if a == b else 0.0) + va * vb / sp
                for i in range(K):
                    val = kd * w[j, i] * dD
                    Jv[3 * i + a, 3 * K + b] -= val
                    for l in range(K):
                        Jv[3 * i + a, 3 * l + b] -= val * phi[j, l]


@nb.njit(cache=True)
def _rhs_jac(x, u, phi, w, integ, prm, f, A, B, work):
    K = integ.shape[0]
    n = 3 * (K + 1)
    st = _rhs(x, u, phi, w, integ, prm, f, work)
    if st != _OK:
        return st
    Jp = np.empty((3 * K, 3 * K))
    Jv = np.empty((3 * K, 3 * K + 3))
    _acc_jac(x, phi, w, prm, Jp, Jv, work)
    A[:, :] = 0.0
    B[:, :] = 0.0
    for q in range(n):
        A[q, n + q] = 1.0
    for r in range(3 * K):
        for c in range(3 * K):
            A[n + r, c] = Jp[r, c]
        for c in range(3 * K + 3):
            A[n + r, n + c] = Jv[r, c]
    for i in range(K):
        for c in range(3):
            B[n + 3 * i + c, c] = -integ[i]
    for c in range(3):
        B[n + 3 * K + c, c] = 1.0
    return _OK


@nb.njit(cache=True)
def _rk4(x, u, dt, phi, w, integ, prm, out, work):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    st = _rhs(x, u, phi, w, integ, prm, k1, work)
    if st != _OK:
        return st
    for q in range(n):
        xt[q] = x[q] + 0.5 * dt * k1[q]
    st = _rhs(xt, u, phi, w, integ, prm, k2, work)
    if st != _OK:
        return st
    for q in range(n):
        xt[q] = x[q] + 0.5 * dt * k2[q]
    st = _rhs(xt, u, phi, w, integ, prm, k3, work)
    if st != _OK:
        return st
    for q in range(n):
        xt[q] = x[q] + dt * k3[q]
    st = _rhs(xt, u, phi, w, integ, prm, k4, work)
    if st != _OK:
        return st
    for q in range(n):
        out[q] = x[q] + dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
    return _OK


@nb.njit(cache=True)
def _rollout(x0, controls, dt, phi, w, integ, prm, xs):
    work = (np.empty((6, phi.shape[0], 3)), np.empty((phi.shape[0] + 1, 3, 3)))
    xs[0] = x0
    for k in range(controls.shape[0]):
        st = _rk4(xs[k], controls[k], dt, phi, w, integ, prm, xs[k + 1], work)
        if st != _OK:
            return st
    return _OK


@nb.njit(cache=True)
def _rk4_sens(x, u, dt, phi, w, integ, prm, out, Ad, Bd, work):
    n = x.shape[0]
    f1, f2, f3, f4 = np.empty(n), np.empty(n), np.empty(n), np.empty(n)
    J1, J2, J3, J4 = np.empty((n, n)), np.empty((n, n)), np.empty((n, n)), np.empty((n, n))
    Bc = np.empty((n, 3))
    eye = np.eye(n)
    st = _rhs_jac(x, u, phi, w, integ, prm, f1, J1, Bc, work)
    if st != _OK:
        return st
    st = _rhs_jac(x + 0.5 * dt * f1, u, phi, w, integ, prm, f2, J2, Bc, work)
    if st != _OK:
        return st
    st = _rhs_jac(x + 0.5 * dt * f2, u, phi, w, integ, prm, f3, J3, Bc, work)
    if st != _OK:
        return st
    st = _rhs_jac(x + dt * f3, u, phi, w, integ, prm, f4, J4, Bc, work)
    if st != _OK:
        return st
    dk1x = J1
    dk1u = Bc.copy()
    dk2x = J2 @ (eye + 0.5 * dt * dk1x)
    dk2u = J2 @ (0.5 * dt * dk1u) + Bc
    dk3x = J3 @ (eye + 0.5 * dt * dk2x)
    dk3u = J3 @ (0.5 * dt * dk2u) + Bc
    dk4x = J4 @ (eye + dt * dk3x)
    dk4u = J4 @ (dt * dk3u) + Bc
    for q in range(n):
        out[q] = x[q] + dt / 6.0 * (f1[q] + 2.0 * f2[q] + 2.0 * f3[q] + f4[q])
    Ad[:, :] = eye + dt / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Bd[:, :] = dt / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return _OK


@nb.njit(cache=True)
def _rollout_sens(x0, controls, dt, phi, w, integ, prm, xs, As, Bs):
    work = (np.empty((6, phi.shape[0], 3)), np.empty((phi.shape[0] + 1, 3, 3)))
    xs[0] = x0
    for k in range(controls.shape[0]):
        st = _rk4_sens(xs[k], controls[k], dt, phi, w, integ, prm, xs[k + 1], As[k], Bs[k], work)
        if st != _OK:
            return st
    return _OK


# ---------------------------------------------------------------------------
# Objective and gradient for the predictive controller
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _cost(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, work):
    """Rollout into ``xs`` and return (objective, status)."""
    n = x0.shape[0]
    H = U.shape[0]
    xs[0] = x0
    f = 0.0
    for k in range(H):
        st = _rk4(xs[k], U[k], dt, phi, w, integ, prm, xs[k + 1], work)
        if st != _OK:
            return np.inf, st
        for c in range(3):
            f += R[c] * U[k, c] * U[k, c]
        for q in range(n):
            e = xs[k + 1, q] - ref[k, q]
            f += Q[q] * e * e
    return f, _OK


@nb.njit(cache=True)
def _cost_grad(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, grad, work):
    """Objective and its gradient w.r.t. U by a reverse sweep through the RK4 stages."""
    n = x0.shape[0]
    nh = n // 2
    H = U.shape[0]
    K = integ.shape[0]
    stages = np.empty((H, 4, n))
    kk = np.empty((4, n))
    xs[0] = x0
    f = 0.0
    stage_coef = (0.5 * dt, 0.5 * dt, dt)
    for k in range(H):
        stages[k, 0] = xs[k]
        for s in range(4):
            st = _rhs(stages[k, s], U[k], phi, w, integ, prm, kk[s], work)
            if st != _OK:
                return np.inf, st
            if s < 3:
                for q in range(n):
                    stages[k, s + 1, q] = xs[k, q] + stage_coef[s] * kk[s, q]
        for q in range(n):
            xs[k + 1, q] = xs[k, q] + dt / 6.0 * (kk[0, q] + 2.0 * kk[1, q] + 2.0 * kk[2, q] + kk[3, q])
            e = xs[k + 1, q] - ref[k, q]
            f += Q[q] * e * e
        for c in range(3):
            f += R[c] * U[k, c] * U[k, c]
    lam = np.zeros(n)
    Jp = np.empty((3 * K, 3 * K))
    Jv = np.empty((3 * K, 3 * K + 3))
    nu = np.empty((4, n))
    mu = np.empty(n)
    musum = np.empty(n)
    out_coef = (dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0)
    for k in range(H - 1, -1, -1):
        for q in range(n):
            lam[q] += 2.0 * Q[q] * (xs[k + 1, q] - ref[k, q])
            musum[q] = 0.0
        for s in range(3, -1, -1):
            for q in range(n):
                mu[q] = out_coef[s] * lam[q]
                if s < 3:
                    mu[q] += stage_coef[s] * nu[s + 1, q]
            _acc_jac(stages[k, s], phi, w, prm, Jp, Jv, work)
            # nu = J^T mu with J = [[0, I], [Jp, 0, Jv], [0, 0]]
            for q in range(nh):
                nu[s, q] = 0.0
                nu[s, nh + q] = mu[q]
            for r in range(3 * K):
                m_r = mu[nh + r]
                if m_r == 0.0:
                    continue
                for c in range(3 * K):
                    nu[s, c] += Jp[r, c] * m_r
                for c in range(3 * K + 3):
                    nu[s, nh + c] += Jv[r, c] * m_r
            for q in range(n):
                musum[q] += mu[q]
        for c in range(3):
            # B has -I_i on the coefficient-acceleration rows and 1 on the head-velocity row
            gsum = 2.0 * R[c] * U[k, c] + musum[nh + 3 * K + c]
            for i in range(K):
                gsum -= integ[i] * musum[nh + 3 * i + c]
            grad[k, c] = gsum
        for q in range(n):
            lam[q] += nu[0, q] + nu[1, q] + nu[2, q] + nu[3, q]
    return f, _OK


@nb.njit(cache=True)
def _project_box(U, lo, hi, out):
    for k in range(U.shape[0]):
        for c in range(3):
            v = U[k, c]
            out[k, c] = lo[c] if v < lo[c] else (hi[c] if v > hi[c] else v)


@nb.njit(cache=True)
def _lag_forward(U, lag, a0, V):
    """Head accelerations realised through a first-order input lag.

    Per axis, ``lag[0]`` is the fraction of a commanded change realised on
    average over one step and ``lag[1]`` the fraction reached at its end;
    ``a0`` is the acceleration being realised at the start.  Ones give
    ``V = U``.
    """
    for c in range(3):
        a = a0[c]
        for k in range(U.shape[0]):
            V[k, c] = a + lag[0, c] * (U[k, c] - a)
            a += lag[1, c] * (U[k, c] - a)


@nb.njit(cache=True)
def _lag_backward(gV, lag, gU):
    for c in range(3):
        lam = 0.0
        for k in range(gV.shape[0] - 1, -1, -1):
            gU[k, c] = lag[0, c] * gV[k, c] + lag[1, c] * lam
            lam = (1.0 - lag[0, c]) * gV[k, c] + (1.0 - lag[1, c]) * lam


@nb.njit(cache=True)
def _lag_cost(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, work, lag, a0, V, R0):
    _lag_forward(U, lag, a0, V)
    f, st = _cost(x0, V, dt, ref, Q, R0, phi, w, integ, prm, xs, work)
    for k in range(U.shape[0]):
        for c in range(3):
            f += R[c] * U[k, c] * U[k, c]
    return f, st


@nb.njit(cache=True)
def _lag_cost_grad(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, grad, work, lag, a0, V, gV, R0):
    _lag_forward(U, lag, a0, V)
    f, st = _cost_grad(x0, V, dt, ref, Q, R0, phi, w, integ, prm, xs, gV, work)
    _lag_backward(gV, lag, grad)
    for k in range(U.shape[0]):
        for c in range(3):
            f += R[c] * U[k, c] * U[k, c]
            grad[k, c] += 2.0 * R[c] * U[k, c]
    return f, st


@nb.njit(cache=True)
def _pg_solve(x0, ref, Q, R, lo, hi, U0, dt, tol, max_iter, phi, w, integ, prm, trace, lag, a0):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    Returns (U, xs, f, iterations, converged, n_trace, status).
    """
    H = U0.shape[0]
    n = x0.shape[0]
    U = np.empty((H, 3))
    _project_box(U0, lo, hi, U)
    xs = np.empty((H + 1, n))
    xs_new = np.empty((H + 1, n))
    work = (np.empty((6, phi.shape[0], 3)), np.empty((phi.shape[0] + 1, 3, 3)))
    g = np.empty((H, 3))
    g_prev = np.empty((H, 3))
    U_prev = np.empty((H, 3))
    U_new = np.empty((H, 3))
    V = np.empty((H, 3))
    gV = np.empty((H, 3))
    R0 = np.zeros(3)
    f, st = _lag_cost_grad(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, g, work, lag, a0, V, gV, R0)
    if st != _OK:
        return U, xs, f, 0, False, 0, st
    trace[0] = f
    nt = 1
    qmax = 0.0
    for q in range(n):
        qmax = max(qmax, Q[q])
    alpha = 1.0 / (2.0 * (max(R[0], max(R[1], R[2])) + qmax * dt * dt * H) + 1e-12)
    have_prev = False
    converged = False
    it = 0
    while it < max_iter:
        # projected-gradient stationarity
        pg = 0.0
        for k in range(H):
            for c in range(3):
                v = U[k, c] - g[k, c]
                v = lo[c] if v < lo[c] else (hi[c] if v > hi[c] else v)
                pg = max(pg, abs(U[k, c] - v))
        if pg <= tol:
            converged = True
            break
        it += 1
        if have_prev:
            sy = 0.0
            ss = 0.0
            for k in range(H):
                for c in range(3):
                    s_ = U[k, c] - U_prev[k, c]
                    y_ = g[k, c] - g_prev[k, c]
                    sy += s_ * y_
                    ss += s_ * s_
            if sy > 1e-16:
                alpha = min(max(ss / sy, 1e-8), 1e4)
        f_new = np.inf
        for _ in range(40):
            for k in range(H):
                for c in range(3):
                    U_new[k, c] = U[k, c] - alpha * g[k, c]
            _project_box(U_new, lo, hi, U_new)
            gd = 0.0
            dmax = 0.0
            for k in range(H):
                for c in range(3):
                    d = U_new[k, c] - U[k, c]
                    gd += g[k, c] * d
                    dmax = max(dmax, abs(d))
            f_new, st = _lag_cost(x0, U_new, dt, ref, Q, R, phi, w, integ, prm, xs_new, work, lag, a0, V, R0)
            if st == _OK and (f_new <= f + 1e-4 * gd or dmax < 1e-14):
                break
            alpha *= 0.5
        if not f_new <= f:
            break
        U_prev[:, :] = U
        g_prev[:, :] = g
        have_prev = True
        U[:, :] = U_new
        f, st = _lag_cost_grad(x0, U, dt, ref, Q, R, phi, w, integ, prm, xs, g, work, lag, a0, V, gV, R0)
        if st != _OK:
            return U, xs, f, it, False, nt, st
        trace[nt] = f
        nt += 1
    if not converged:
        pg = 0.0
        for k in range(H):
            for c in range(3):
                v = U[k, c] - g[k, c]
                v = lo[c] if v < lo[c] else (hi[c] if v > hi[c] else v)
                pg = max(pg, abs(U[k, c] - v))
        converged = pg <= tol
    return U, xs, f, it, converged, nt, _OK
