"""The walk operator U = S C, its powers, the vertex/edge change of view,
the banded CMV form, a dense truncated oracle and the decoupling check.

Component form of one step::

    (Uu)_up(x)   = e^{i th(x-1)} ( beta(x-1) u_up(x-1) + conj(alpha(x-1)) u_down(x-1) )
    (Uu)_down(x) = e^{i th(x+1)} (-alpha(x+1) u_up(x+1) + conj(beta(x+1)) u_down(x+1) )
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coin import CoinField, CoinPoint
from .errors import ConfigurationError, MemoryGuardError, WindowError, WindowOverflowError
from .lattice import Outside, SpinorField

DENSE_MAX_SITES = 8192


class WalkOperator:
    def __init__(self, coin: CoinField, window):
        lo, hi = int(window[0]), int(window[1])
        if hi < lo:
            raise ConfigurationError(f"empty window {window}")
        supp = coin.support
        if supp is not None and (supp[0] - 1 < lo or supp[1] + 1 > hi):
            raise WindowError(f"window {window} must contain coin support {supp} with margin >= 1")
        self.coin = coin
        self.window = (lo, hi)
        self._mats = {}

    @property
    def sites(self):
        return np.arange(self.window[0], self.window[1] + 1)

    def __len__(self):
        return self.window[1] - self.window[0] + 1

    def coin_mats(self, window=None) -> np.ndarray:
        window = tuple(window or self.window)
        if window not in self._mats:
            self._mats[window] = self.coin.matrices(np.arange(window[0], window[1] + 1))
        return self._mats[window]


def _step(vals: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """One step on raw arrays of shape (n, 2, ...); edges assumed already checked."""
    c = np.einsum("xij,xj...->xi...", mats, vals)
    out = np.zeros_like(c)
    out[1:, 0] = c[:-1, 0]
    out[:-1, 1] = c[1:, 1]
    return out


def _overflows(vals, mats) -> bool:
    """True when a step would move weight past the window edges."""
    right = mats[-1, 0] @ vals[-1].reshape(2, -1)
    left = mats[0, 1] @ vals[0].reshape(2, -1)
    return bool(np.any(right != 0) or np.any(left != 0))


def _pad(u: SpinorField, k=1) -> SpinorField:
    return u.restrict((u.x_min - k, u.x_max + k))


def apply_U(op: WalkOperator, u: SpinorField) -> SpinorField:
    if u.outside is Outside.FREE_EXTENSION:
        if u.window[0] > op.window[0] or u.window[1] < op.window[1]:
            raise WindowError(f"field window {u.window} must contain operator window {op.window}")
        mats = op.coin_mats(u.window)
        if _overflows(u.values, mats):
            u = _pad(u)
            mats = op.coin_mats(u.window)
        return u.with_values(_step(u.values, mats))
    if u.window != op.window:
        raise WindowError(f"window mismatch: field {u.window} vs operator {op.window}")
    mats = op.coin_mats()
    if _overflows(u.values, mats):
        raise WindowOverflowError(f"support of U u would leave window {op.window}")
    return u.with_values(_step(u.values, mats))


def apply_U_power(op: WalkOperator, u: SpinorField, t: int) -> SpinorField:
    if t < 0:
        raise ConfigurationError("t must be nonnegative")
    if u.outside is Outside.FREE_EXTENSION:
        # grow once by t; the light cone then stays inside
        u = _pad(u, t) if t else u
        mats = op.coin_mats(u.window)
        vals = u.values
        for _ in range(t):
            vals = _step(vals, mats)
        return u.with_values(vals)
    if u.window != op.window:
        raise WindowError(f"window mismatch: field {u.window} vs operator {op.window}")
    supp = u.support()
    if supp is not None and t and (supp[0] - t < op.window[0] or supp[1] + t > op.window[1]):
        # the light cone would reach the edge; step exactly and raise only on a real overflow
        mats = op.coin_mats()
        vals = u.values
        for _ in range(t):
            if _overflows(vals, mats):
                raise WindowOverflowError(f"support of U^{t} u would leave window {op.window}")
            vals = _step(vals, mats)
        return u.with_values(vals)
    return u.with_values(evolve_array(op, u.values, t))


def evolve_array(op: WalkOperator, vals: np.ndarray, t: int, record=None) -> np.ndarray:
    """U^t on raw arrays (n, 2, ...) over the operator window, no edge checks.

    ``record`` optionally maps each step index to a callback receiving the state.
    """
    mats = op.coin_mats()
    vals = np.asarray(vals, dtype=complex)
    if record is not None:
        record(0, vals)
    for s in range(1, t + 1):
        vals = _step(vals, mats)
        if record is not None:
            record(s, vals)
    return vals


# ---------------------------------------------------------------------------
# vertex <-> edge


def vertex_to_edge(u: SpinorField) -> SpinorField:
    """(J_VE u)(x) = (u_down(x-1), u_up(x)) on the same window."""
    if u.values[-1, 1] != 0:
        raise WindowOverflowError("u_down(x_max) would move past the window under J_VE")
    v = np.zeros_like(u.values)
    v[1:, 0] = u.values[:-1, 1]
    v[:, 1] = u.values[:, 0]
    return u.with_values(v)


def edge_to_vertex(v: SpinorField) -> SpinorField:
    """(J_EV v)(x) = (v_down(x), v_up(x+1)) on the same window."""
    if v.values[0, 0] != 0:
        raise WindowOverflowError("v_up(x_min) would move past the window under J_EV")
    u = np.zeros_like(v.values)
    u[:, 0] = v.values[:, 1]
    u[:-1, 1] = v.values[1:, 0]
    return v.with_values(u)


# ---------------------------------------------------------------------------
# CMV band


@dataclass(frozen=True)
class CmvBand:
    window: tuple
    lower: np.ndarray  # V_{x,x-1}, shape (n, 2, 2)
    diag: np.ndarray  # V_{x,x}
    upper: np.ndarray  # V_{x,x+1}

    def blocks(self, x):
        i = x - self.window[0]
        return self.lower[i], self.diag[i], self.upper[i]


def cmv_blocks(coin: CoinField, xs) -> tuple:
    """Blocks (V_{x,x-1}, V_{x,x}, V_{x,x+1}) at the sites xs.

    For real beta = rho these are the usual CMV entries; for complex beta the
    (1,1) entry of V_{x,x+1} carries conj(beta(x)) and the (2,2) entry of
    V_{x,x-1} carries beta(x-1), which keeps C = J_VE U J_EV exact.
    """
    xs = np.asarray(xs, dtype=int)
    a, b, th = coin.alpha(xs), coin.beta(xs), coin.theta(xs)
    am, bm, thm = coin.alpha(xs - 1), coin.beta(xs - 1), coin.theta(xs - 1)
    n = len(xs)
    lower = np.zeros((n, 2, 2), dtype=complex)
    diag = np.zeros((n, 2, 2), dtype=complex)
    upper = np.zeros((n, 2, 2), dtype=complex)
    lower[:, 1, 1] = np.exp(1j * thm) * bm
    diag[:, 0, 1] = -np.exp(1j * th) * a
    diag[:, 1, 0] = np.exp(1j * thm) * np.conj(am)
    upper[:, 0, 0] = np.exp(1j * th) * np.conj(b)
    return lower, diag, upper


def cmv_band(op: WalkOperator) -> CmvBand:
    lower, diag, upper = cmv_blocks(op.coin, op.sites)
    return CmvBand(op.window, lower, diag, upper)


def cmv_apply_array(band: CmvBand, v: np.ndarray) -> np.ndarray:
    """Banded action on raw arrays (n, 2, ...), zero outside the window."""
    out = np.einsum("xij,xj...->xi...", band.diag, v)
    out[1:] += np.einsum("xij,xj...->xi...", band.lower[1:], v[:-1])
    out[:-1] += np.einsum("xij,xj...->xi...", band.upper[:-1], v[1:])
    return out


def cmv_apply(band: CmvBand, v: SpinorField) -> SpinorField:
    if v.window != band.window:
        raise WindowError(f"window mismatch: field {v.window} vs band {band.window}")
    return v.with_values(cmv_apply_array(band, v.values))


# ---------------------------------------------------------------------------
# truncated matrices


def _ring_entries(op: WalkOperator):
    n = len(op)
    mats = op.coin_mats()
    rows, cols, data = [], [], []
    for i in range(n):
        C = mats[i]
        right = (i + 1) % n
        left = (i - 1) % n
        # up output at i+1 from coin row 0 at i; down output at i-1 from coin row 1 at i
        for s in range(2):
            rows.append(2 * right)
            cols.append(2 * i + s)
            data.append(C[0, s])
            rows.append(2 * left + 1)
            cols.append(2 * i + s)
            data.append(C[1, s])
    return n, np.array(rows), np.array(cols), np.array(data)


def sparse_truncation(op: WalkOperator) -> sp.csr_matrix:
    """Periodic truncation of U as a sparse matrix; index 2 (x - x_min) + s."""
    n, r, c, d = _ring_entries(op)
    return sp.csr_matrix((d, (r, c)), shape=(2 * n, 2 * n))


def dense_truncation(op: WalkOperator) -> np.ndarray:
    """Dense 2N x 2N periodic truncation of U (oracle use only)."""
    if len(op) > DENSE_MAX_SITES:
        raise MemoryGuardError(f"dense truncation limited to {DENSE_MAX_SITES} sites, got {len(op)}")
    return sparse_truncation(op).toarray()


def field_to_vector(u: SpinorField) -> np.ndarray:
    return u.values.reshape(-1).copy()


def vector_to_field(vec, window) -> SpinorField:
    return SpinorField(window[0], np.asarray(vec).reshape(-1, 2))


# ---------------------------------------------------------------------------
# decoupling


def chi_plus(window, x0) -> np.ndarray:
    """Diagonal of chi_{x0,+}: sites x > x0 plus the down component at x0."""
    xs = np.arange(window[0], window[1] + 1)
    d = np.zeros((len(xs), 2))
    d[xs > x0] = 1.0
    d[xs == x0, 1] = 1.0
    return d.reshape(-1)


def decoupling_coin(alpha0, x0, alpha_phase=0.0, theta=0.0) -> CoinField:
    """Coin with beta(x0) = 0; bypasses the |alpha| < 1 check at x0 only."""
    p = CoinPoint(np.exp(1j * alpha_phase), theta, 0.0, validate=False)
    return CoinField(alpha0, {x0: p}, validate=False)


def decoupling_check(op: WalkOperator, x0: int) -> float:
    """max over delta basis vectors e of ||[U, chi_{x0,+}] e||.

    Uses the non-periodic restriction of U to the window (Zero convention).
    """
    lo, hi = op.window
    if not lo < x0 < hi:
        raise WindowError(f"x0={x0} must lie strictly inside {op.window}")
    n, r, c, d = _ring_entries(op)
    keep = np.abs(r // 2 - c // 2) <= 1  # drop wrap-around entries
    M = sp.csr_matrix((d[keep], (r[keep], c[keep])), shape=(2 * n, 2 * n))
    chi = chi_plus(op.window, x0)
    D = sp.diags(chi)
    comm = (M @ D - D @ M).toarray()
    return float(np.max(np.linalg.norm(comm, axis=0)))
