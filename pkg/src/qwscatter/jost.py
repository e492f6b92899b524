"""Transfer matrices, Jost modifiers m_+-(x, xi) and Wiener-algebra norms.

Jost solutions are phi_+-(x, xi) = e^{+-i xi x} m_+-(x, xi) with
m_+- -> phi_+-(xi) at +-infinity. Writing A = e^{-+i xi} T_0 and
V(x) = e^{-+i xi} (T(x) - T_0), the transfer recursion reads
m(x+1) = (A + V(x)) m(x). Everything here works on the gauge-reduced coin
(beta = rho real), where the transfer form of Uu = e^{i lam} u holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coin import CoinField, gauge_reduce
from .dispersion import (
    Branch,
    as_branch,
    check_pow2,
    free_eigenpair,
    free_transfer,
    lambda_of_xi,
    offset_grid,
)
from .errors import ConfigurationError, SolverError, WindowError
from .lattice import bracket

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
DEFAULT_MARGIN = 8


def transfer_matrices(coin: CoinField, xs, lam):
    """T_lam(x) = rho(x)^{-1} [[e^{i(lam - th(x))}, alpha(x)], [conj(alpha(x)), e^{-i(lam - th(x))}]].

    Broadcasts: result has shape lam.shape + (len(xs), 2, 2).
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=int))
    lam = np.asarray(lam, dtype=complex)[..., None]
    a, th = coin.alpha(xs), coin.theta(xs)
    rho = np.abs(coin.beta(xs))
    ph = np.exp(1j * (lam - th))
    shape = np.broadcast(lam, a).shape
    T = np.empty(shape + (2, 2), dtype=complex)
    T[..., 0, 0] = ph
    T[..., 0, 1] = np.broadcast_to(a, shape)
    T[..., 1, 0] = np.broadcast_to(np.conj(a), shape)
    T[..., 1, 1] = 1 / ph
    return T / rho[:, None, None]


def transfer_matrix(coin: CoinField, x: int, lam) -> np.ndarray:
    return transfer_matrices(coin, [x], complex(lam))[0]


def potential(coin: CoinField, xi, sign, x, branch=Branch.MINUS):
    """V_{xi,+-}(x) = e^{-+i xi} (T_{lam(xi)}(x) - T_{0,lam(xi)}); multiplies m(x)."""
    if x not in coin.entries:
        return np.zeros((2, 2), dtype=complex)
    lam = lambda_of_xi(xi, coin.rho0, branch)
    T = transfer_matrix(coin, x, lam)
    return np.exp(-sign * 1j * complex(xi)) * (T - free_transfer(lam, coin.alpha0))


def potential_l1(coin: CoinField, xi, sign=+1, sigma=0, branch=Branch.MINUS) -> float:
    if coin.support is None:
        return 0.0
    lo, hi = coin.support
    return float(
        sum(bracket(x) ** sigma * np.linalg.norm(potential(coin, xi, sign, x, branch), 2) for x in range(lo, hi + 1))
    )


def _free_sites(coin: CoinField, xs) -> np.ndarray:
    """Mask of sites carrying the far-field coin, where V vanishes identically."""
    return np.array([int(x) not in coin.entries for x in xs], dtype=bool)


def _sq_inv(M):
    """Inverse of stacked 2x2 matrices."""
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out / det[..., None, None]


def _mv(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def default_window(coin: CoinField, margin=DEFAULT_MARGIN):
    supp = coin.support or (0, 0)
    return supp[0] - margin, supp[1] + margin


def _check_window(coin, window):
    supp = coin.support
    if supp is not None and (window[0] > supp[0] or window[1] < supp[1] + 1):
        raise WindowError(f"window {window} must cover the coin support {supp} (plus one site on the right)")


def jost_plus_volterra(coin: CoinField, xi, window, branch=Branch.MINUS):
    """m_+ on the window by backward substitution of the Volterra sum.

    With R(x) = sum_{y >= x} A^{-(y+1-x)} V(y) m(y) one has m = phi_+ - R and
    R(x) = A^{-1} V(x) m(x) + A^{-1} R(x+1); each site solves a 2x2 system.
    Returns (m, residual) with m of shape (len(xi), n, 2).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    lo, hi = window
    xs = np.arange(lo, hi + 1)
    lam = lambda_of_xi(xi, coin.rho0, branch)
    phi = free_eigenpair(xi, coin.alpha0, branch).phi_plus
    A = np.exp(-1j * xi)[:, None, None] * free_transfer(lam, coin.alpha0)
    Ainv = _sq_inv(A)
    T = transfer_matrices(coin, xs, lam)
    V = np.exp(-1j * xi)[:, None, None, None] * (T - free_transfer(lam, coin.alpha0)[:, None])
    V[:, _free_sites(coin, xs)] = 0
    m = np.empty((len(xi), len(xs), 2), dtype=complex)
    R = np.zeros((len(xi), 2), dtype=complex)
    eye = np.eye(2)
    for i in range(len(xs) - 1, -1, -1):
        AV = Ainv @ V[:, i]
        if not np.any(AV):
            m[:, i] = phi - _mv(Ainv, R)
            R = _mv(Ainv, R)
            continue
        rhs = phi - _mv(Ainv, R)
        m[:, i] = np.linalg.solve(eye + AV, rhs[..., None])[..., 0]
        R = _mv(AV, m[:, i]) + _mv(Ainv, R)
    res = recursion_residual(m, T, xi, +1)
    return m, res


def jost_minus_forward(coin: CoinField, xi, window, branch=Branch.MINUS):
    """m_- by forward substitution: R(x+1) = A R(x) + V(x) m(x), m = phi_- + R."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    lo, hi = window
    xs = np.arange(lo, hi + 1)
    lam = lambda_of_xi(xi, coin.rho0, branch)
    phi = free_eigenpair(xi, coin.alpha0, branch).phi_minus
    T0 = free_transfer(lam, coin.alpha0)
    A = np.exp(1j * xi)[:, None, None] * T0
    T = transfer_matrices(coin, xs, lam)
    V = np.exp(1j * xi)[:, None, None, None] * (T - T0[:, None])
    V[:, _free_sites(coin, xs)] = 0
    m = np.empty((len(xi), len(xs), 2), dtype=complex)
    R = np.zeros((len(xi), 2), dtype=complex)
    for i in range(len(xs)):
        m[:, i] = phi + R
        R = _mv(A, R) + _mv(V[:, i], m[:, i])
    return m, recursion_residual(m, T, xi, -1)


def jost_plus_propagation(coin: CoinField, xi, window, branch=Branch.MINUS):
    """Oracle: m_+(x) = e^{i xi} T(x)^{-1} m_+(x+1), started from phi_+ right of the support."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    lo, hi = window
    xs = np.arange(lo, hi + 1)
    lam = lambda_of_xi(xi, coin.rho0, branch)
    Tinv = _sq_inv(transfer_matrices(coin, xs, lam))
    m = np.empty((len(xi), len(xs), 2), dtype=complex)
    m[:, -1] = free_eigenpair(xi, coin.alpha0, branch).phi_plus
    for i in range(len(xs) - 2, -1, -1):
        m[:, i] = np.exp(1j * xi)[:, None] * _mv(Tinv[:, i], m[:, i + 1])
    return m


def jost_plus_picard(coin: CoinField, xi, window, branch=Branch.MINUS, tol=1e-13, max_iter=500):
    """Fixed-point iteration of the Volterra equation (cross-check only)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    lo, hi = window
    xs = np.arange(lo, hi + 1)
    lam = lambda_of_xi(xi, coin.rho0, branch)
    phi = free_eigenpair(xi, coin.alpha0, branch).phi_plus
    T0 = free_transfer(lam, coin.alpha0)
    Ainv = _sq_inv(np.exp(-1j * xi)[:, None, None] * T0)
    V = np.exp(-1j * xi)[:, None, None, None] * (transfer_matrices(coin, xs, lam) - T0[:, None])
    V[:, _free_sites(coin, xs)] = 0
    m = np.repeat(phi[:, None, :], len(xs), axis=1)
    for it in range(max_iter):
        new = np.empty_like(m)
        R = np.zeros((len(xi), 2), dtype=complex)
        for i in range(len(xs) - 1, -1, -1):
            R = _mv(Ainv, _mv(V[:, i], m[:, i]) + R)
            new[:, i] = phi - R
        diff = np.max(np.abs(new - m))
        m = new
        if diff < tol:
            return m, it + 1
        if not np.isfinite(diff) or diff > 1e8:
            break
    raise SolverError(f"Volterra fixed-point iteration did not contract (last change {diff:.3e})")


def recursion_residual(m, T, xi, sign) -> float:
    """max |m(x+1) - e^{-+i xi} T(x) m(x)| / max |m| over interior sites."""
    if m.shape[1] < 2:
        return 0.0
    pred = np.exp(-sign * 1j * xi)[:, None, None] * _mv(T[:, :-1], m[:, :-1])
    return float(np.max(np.abs(m[:, 1:] - pred)) / max(np.max(np.abs(m)), 1.0))


def mirror_scale(xi, alpha0, branch=Branch.MINUS):
    """s(xi) with sigma_1 phi_-(xi; alpha0) = s phi_+(xi; -conj(alpha0))."""
    a = free_eigenpair(xi, alpha0, branch).phi_minus
    b = free_eigenpair(xi, -np.conj(alpha0), branch).phi_plus
    return a[..., 1] / b[..., 0]


def jost_minus_mirror(coin: CoinField, xi, window, branch=Branch.MINUS):
    """m_-(x) = s(xi) sigma_1 m'_+(-x) where m'_+ belongs to the reflected coin."""
    lo, hi = window
    ref = coin.reflected()
    mp, res = jost_plus_volterra(ref, xi, (-hi, -lo), branch)
    s = mirror_scale(np.atleast_1d(xi), coin.alpha0, branch)
    m = s[:, None, None] * mp[:, ::-1, ::-1]
    return m, res


@dataclass
class JostTable:
    coin: CoinField  # gauge-reduced
    branch: Branch
    xi: np.ndarray  # complex samples (real grid + i delta)
    delta: float
    window: tuple
    m_plus: np.ndarray  # (K, n, 2)
    m_minus: np.ndarray
    residual: float
    offset: bool = True
    info: dict = field(default_factory=dict)

    @property
    def sites(self):
        return np.arange(self.window[0], self.window[1] + 1)

    def index(self, x) -> int:
        if not self.window[0] <= x <= self.window[1]:
            raise WindowError(f"x={x} outside table window {self.window}")
        return x - self.window[0]

    def phi_plus(self):
        return np.exp(1j * np.outer(self.xi, self.sites))[..., None] * self.m_plus

    def phi_minus(self):
        return np.exp(-1j * np.outer(self.xi, self.sites))[..., None] * self.m_minus

    def fourier(self, which="plus", x=None):
        """Fourier coefficients over the xi grid, u_hat(n), n in fftfreq order."""
        m = self.m_plus if which == "plus" else self.m_minus
        data = m if x is None else m[:, self.index(x)]
        return fourier_coefficients(data, offset=self.offset)


def xi_grid(n: int, delta=0.0, offset=True) -> np.ndarray:
    check_pow2(n)
    base = offset_grid(n) if offset else 2 * np.pi * np.arange(n) / n
    return base + 1j * delta


def solve_jost(coin: CoinField, branch=Branch.MINUS, xi=None, delta=0.0, window=None, grid=256, offset=True):
    """Tabulate m_+ (Volterra backward substitution) and m_- (mirror) on a xi grid."""
    branch = as_branch(branch)
    if delta < 0:
        raise ConfigurationError("delta must be >= 0")
    reduced, _ = gauge_reduce(coin)
    if xi is None:
        xi = xi_grid(grid, delta, offset)
    else:
        xi = np.atleast_1d(np.asarray(xi, dtype=complex))
        offset = None
    window = tuple(window or default_window(reduced))
    _check_window(reduced, window)
    mp, rp = jost_plus_volterra(reduced, xi, window, branch)
    mm, rm = jost_minus_mirror(reduced, xi, window, branch)
    T = transfer_matrices(reduced, np.arange(window[0], window[1] + 1), lambda_of_xi(xi, reduced.rho0, branch))
    res = max(rp, rm, recursion_residual(mm, T, xi, -1))
    return JostTable(reduced, branch, xi, float(delta), window, mp, mm, res, bool(offset))


# ---------------------------------------------------------------------------
# bounds


def growth_constant(table: JostTable, which="plus") -> float:
    """Smallest C with |m(x, xi)| <= C max(1, -+x) on the table."""
    x = table.sites
    sgn = -1 if which == "plus" else 1
    scale = np.maximum(1.0, sgn * x)
    m = table.m_plus if which == "plus" else table.m_minus
    return float(np.max(np.linalg.norm(m, axis=-1) / scale[None, :]))


def wiener_growth_constant(table: JostTable, which="plus", order=0) -> float:
    """Smallest C with ||m(x, .)||_A <= C max(1, -+x) over the window."""
    m = table.m_plus if which == "plus" else table.m_minus
    sgn = -1 if which == "plus" else 1
    out = 0.0
    for i, x in enumerate(table.sites):
        w = sum(wiener_norm(m[:, i, c], order) for c in range(2))
        out = max(out, w / max(1.0, sgn * x))
    return float(out)


# ---------------------------------------------------------------------------
# Fourier / Wiener


def fourier_coefficients(samples, offset=False, axis=0):
    """u_hat(n) = (1/2pi) int u e^{-in xi} d xi from uniform samples, n in fftfreq order."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    check_pow2(n)
    uh = np.fft.fft(samples, axis=axis) / n
    if offset:
        k = np.fft.fftfreq(n, 1.0 / n)
        ph = np.exp(-1j * np.pi * k / n)
        shape = [1] * samples.ndim
        shape[axis] = n
        uh = uh * ph.reshape(shape)
    return uh


def wiener_norm(samples, order=0, offset=False) -> float:
    """sum_n <n>^order |u_hat(n)| for periodic samples on a power-of-two grid."""
    if order not in (0, 1):
        raise ConfigurationError("order must be 0 or 1")
    uh = fourier_coefficients(samples, offset)
    n = len(uh)
    k = np.fft.fftfreq(n, 1.0 / n)
    return float(np.sum(bracket(k) ** order * np.abs(uh)))
