"""Wronskians, transmission/reflection coefficients, band-edge resonances,
bound states, the perturbed resolvent kernel and the continuous projection.

All quantities refer to the gauge-reduced walk; |t|, |r|, bound-state
eigenvalues and projections do not depend on the gauge.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigvals_banded
from scipy.optimize import brentq

from .coin import CoinField, gauge_reduce
from .dispersion import (
    Branch,
    as_branch,
    free_eigenpair,
    free_wronskian,
    gamma_factor,
    lambda_derivatives,
    lambda_of_xi,
    side_matrices,
)
from .errors import ConsistencyError, DependencyError, PoleError, SolverError
from .evolution import WalkOperator, edge_to_vertex, sparse_truncation
from .jost import (
    JostTable,
    default_window,
    jost_minus_mirror,
    jost_plus_volterra,
    solve_jost,
)
from .lattice import SpinorField

W_FLOOR = 1e-12
BOUND_W_TOL = 1e-9
IM_LAMBDA_TOL = 1e-8


def _det(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def wronskian_profile(table: JostTable) -> np.ndarray:
    """det(m_+(x), m_-(x)) for every (xi, x); equals det(phi_+, phi_-)."""
    return _det(table.m_plus, table.m_minus)


def wronskian(table: JostTable, xi=None, tol=1e-11):
    """W at the window midpoint; x-constancy is asserted to ``tol`` (relative)."""
    prof = wronskian_profile(table)
    mid = prof.shape[1] // 2
    W = prof[:, mid]
    var = np.max(np.abs(prof - W[:, None]) / np.maximum(1.0, np.abs(W))[:, None])
    if var > tol:
        raise ConsistencyError(f"Wronskian varies by {var:.3e} across the window")
    if xi is None:
        return W
    k = int(np.argmin(np.abs(table.xi - xi)))
    if abs(table.xi[k] - xi) > 1e-12:
        raise ValueError(f"xi={xi} not on the table grid")
    return W[k]


def wronskian_variation(table: JostTable) -> float:
    prof = wronskian_profile(table)
    W = prof[:, prof.shape[1] // 2]
    return float(np.max(np.abs(prof - W[:, None]) / np.maximum(1.0, np.abs(W))[:, None]))


def reflected_index(table: JostTable) -> np.ndarray:
    """Index of -xi on the grid."""
    K = len(table.xi)
    if table.offset:
        return K - 1 - np.arange(K)
    return (K - np.arange(K)) % K


@dataclass
class ScatteringReport:
    branch: Branch
    xi: np.ndarray
    W: np.ndarray
    t: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    unitarity_defect: float
    t_consistency: float
    relation_residual: float
    min_abs_W: float
    corner_flags: dict = field(default_factory=dict)
    resonance_flags: list = field(default_factory=list)
    bound_states: list = field(default_factory=list)

    def to_dict(self):
        return {
            "branch": self.branch.value,
            "grid": len(self.xi),
            "unitarity_defect": self.unitarity_defect,
            "t_consistency": self.t_consistency,
            "relation_residual": self.relation_residual,
            "min_abs_W": self.min_abs_W,
            "max_abs_t": float(np.max(np.abs(self.t))),
            "corner_flags": self.corner_flags,
            "resonance_flags": [f.to_dict() for f in self.resonance_flags],
            "bound_states": [b.to_dict() for b in self.bound_states],
        }


def _quartic_extrapolate(xs, ys, x0):
    c = np.polyfit(xs, ys.real, 4) + 1j * np.polyfit(xs, ys.imag, 4)
    return np.polyval(c, x0)


def scattering_coefficients(table: JostTable, probes=8) -> ScatteringReport:
    if np.any(table.xi.imag != 0):
        raise ValueError("scattering coefficients need a real xi grid")
    xi = table.xi.real
    W = wronskian(table)
    W0 = free_wronskian(xi, table.coin.alpha0, table.branch)
    ref = reflected_index(table)
    mid = table.m_plus.shape[1] // 2
    x = table.sites[mid]
    php = np.exp(1j * xi * x)[:, None] * table.m_plus[:, mid]
    phm = np.exp(-1j * xi * x)[:, None] * table.m_minus[:, mid]
    corner = np.isclose(np.sin(xi), 0.0, atol=1e-14)
    flags = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        t = W0 / W
        r_plus = -_det(php[ref], phm) / W
        r_minus = -_det(php, phm[ref]) / W
        t_plus = -_det(php[ref], php) / W
        t_minus = _det(phm[ref], phm) / W
    scale = np.median(np.abs(W))
    for k in np.flatnonzero(corner):
        if abs(W[k]) > 1e-8 * scale:
            t[k] = t_plus[k] = t_minus[k] = 0.0
            flags[float(xi[k])] = "generic: t = 0 by continuity"
            continue
        # exceptional corner: one-sided quartic extrapolation from the next five samples
        idx = (k + np.arange(1, 6)) % len(xi)
        xs = np.unwrap(xi[idx] - xi[k])
        for arr in (t, r_plus, r_minus, t_plus, t_minus):
            arr[k] = _quartic_extrapolate(xs, arr[idx], 0.0)
        flags[float(xi[k])] = "exceptional: extrapolated"
    off = ~corner
    if np.any(np.abs(W[off]) < W_FLOOR):
        raise ConsistencyError("|W| vanishes at a real off-corner xi (embedded degeneracy)")
    unit = max(
        np.max(np.abs(np.abs(t) ** 2 + np.abs(r_plus) ** 2 - 1)),
        np.max(np.abs(np.abs(t) ** 2 + np.abs(r_minus) ** 2 - 1)),
    )
    cons = max(np.max(np.abs(t_plus - t)), np.max(np.abs(t_minus - t)))
    rel = relation_residual(table, t, r_plus, r_minus, probes)
    return ScatteringReport(
        table.branch,
        xi,
        W,
        t,
        r_plus,
        r_minus,
        float(unit),
        float(cons),
        float(rel),
        float(np.min(np.abs(W[off]))) if np.any(off) else float("nan"),
        flags,
    )


def relation_residual(table, t, r_plus, r_minus, probes=8) -> float:
    """Pointwise residual of phi_+(-xi) = -r_+ phi_+(xi) + t phi_-(xi) and its mirror."""
    ref = reflected_index(table)
    php = table.phi_plus()
    phm = table.phi_minus()
    cols = np.unique(np.linspace(0, php.shape[1] - 1, probes).astype(int))
    a = php[ref][:, cols] - (-r_plus[:, None, None] * php[:, cols] + t[:, None, None] * phm[:, cols])
    b = phm[ref][:, cols] - (-r_minus[:, None, None] * phm[:, cols] + t[:, None, None] * php[:, cols])
    scale = np.maximum(1.0, np.abs(php[:, cols]).max(axis=-1, keepdims=True))
    return float(max(np.max(np.abs(a) / scale), np.max(np.abs(b) / scale)))


# ---------------------------------------------------------------------------
# pointwise Wronskian (any complex xi in the strip)


def _support_window(coin: CoinField):
    return default_window(coin, margin=1)


def wronskian_at(coin: CoinField, xi, branch=Branch.MINUS, raw=False):
    """W(xi) for a gauge-reduced coin; ``raw`` drops the A^{-1/2} normalizations (holomorphic)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    win = _support_window(coin)
    mp, _ = jost_plus_volterra(coin, xi, win, branch)
    mm, _ = jost_minus_mirror(coin, xi, win, branch)
    W = _det(mp[:, 1], mm[:, 1])
    if raw:
        e = free_eigenpair(xi, coin.alpha0, branch)
        k = 1j * np.conj(coin.alpha0) / abs(coin.alpha0)
        W = W * np.sqrt(e.A_plus) * np.sqrt(e.A_minus) / k**2
    return W


# ---------------------------------------------------------------------------
# resonances


@dataclass
class EdgeFlag:
    branch: Branch
    xi: float
    lam: float
    W: complex
    status: str  # generic | exceptional | indeterminate
    tol: float
    solution: SpinorField | None = None

    def to_dict(self):
        return {
            "branch": self.branch.value,
            "xi": self.xi,
            "lambda": self.lam,
            "abs_W": abs(self.W),
            "status": self.status,
            "edge_tol": self.tol,
        }


def edge_scale(coin: CoinField, branch=Branch.MINUS, grid=256) -> float:
    tab = solve_jost(coin, branch, grid=grid)
    return float(np.median(np.abs(wronskian(tab))))


def resonance_classify(coin: CoinField, branch=None, grid=256, rel_tol=1e-8, window=None):
    """Classify the band edges xi in {0, pi} of one or both branches."""
    reduced, gauge = gauge_reduce(coin)
    branches = list(Branch) if branch is None else [as_branch(branch)]
    out = []
    for b in branches:
        tol = rel_tol * edge_scale(reduced, b, grid)
        win = window or default_window(reduced, margin=16)
        tab = solve_jost(reduced, b, xi=[0.0, np.pi], window=win)
        W = wronskian(tab)
        for k, xe in enumerate((0.0, np.pi)):
            a = abs(W[k])
            if a < tol / 10:
                status = "exceptional"
            elif a <= 10 * tol:
                status = "indeterminate"
                warnings.warn(f"|W| at edge xi={xe} is within 10x of edge_tol; refine", RuntimeWarning, stacklevel=2)
            else:
                status = "generic"
            sol = None
            if status == "exceptional":
                v = SpinorField(win[0], np.exp(1j * xe * tab.sites)[:, None] * tab.m_plus[k])
                sol = gauge.apply_inverse(edge_to_vertex(v.restrict((win[0] - 1, win[1]))))
            lam = float(np.real(lambda_of_xi(xe, reduced.rho0, b)))
            out.append(EdgeFlag(b, xe, lam, complex(W[k]), status, tol, sol))
    return out


def edge_invariant(coin: CoinField, xe=0.0, branch=Branch.MINUS) -> float:
    """Real-valued version of W at an edge: W / sqrt(-gamma^2), gamma from the free eigenvectors.

    At a band edge W = -gamma^2 conj(W), so this quotient is real and changes
    sign where W crosses zero under a real parameter continuation.
    """
    reduced, _ = gauge_reduce(coin)
    W = wronskian_at(reduced, [xe], branch)[0]
    g = complex(gamma_factor(np.array([xe]), coin.alpha0, branch)[0])
    ph = np.sqrt(-(g**2))
    val = W / ph
    if abs(val.imag) > 1e-8 * max(1.0, abs(val)):
        raise ConsistencyError(f"edge Wronskian is not real after phase removal: {val}")
    return float(val.real)


# ---------------------------------------------------------------------------
# bound states


@dataclass
class BoundState:
    branch: Branch
    xi: complex
    lam: float
    eigenvalue: complex
    decay_rate: float
    vector: SpinorField | None = None

    def to_dict(self):
        return {
            "branch": self.branch.value,
            "xi_re": self.xi.real,
            "xi_im": self.xi.imag,
            "lambda": self.lam,
            "eig_re": self.eigenvalue.real,
            "eig_im": self.eigenvalue.imag,
            "decay_rate": self.decay_rate,
        }


def _secant(f, z0, z1, tol=1e-15, max_iter=60):
    f0, f1 = f(z0), f(z1)
    for _ in range(max_iter):
        if f1 == f0:
            break
        z2 = z1 - f1 * (z1 - z0) / (f1 - f0)
        z0, f0 = z1, f1
        z1, f1 = z2, f(z2)
        if abs(z1 - z0) < tol * max(1.0, abs(z1)):
            break
    return z1, f1


def bound_states(coin: CoinField, n_scan=400, with_vectors=True, tol=BOUND_W_TOL):
    """Zeros of W on xi = i delta and xi = pi + i delta, 0 < delta < delta0, both branches."""
    reduced, gauge = gauge_reduce(coin)
    if reduced.support is None or reduced.is_free():
        return []
    d0 = reduced.delta0
    deltas = d0 * (np.arange(1, n_scan + 1) / (n_scan + 1))
    found = []
    for b in Branch:
        for base in (0.0, np.pi):
            f = lambda z, b=b: complex(wronskian_at(reduced, [z], b, raw=True)[0])  # noqa: E731
            zs = base + 1j * deltas
            Ws = wronskian_at(reduced, zs, b, raw=True)
            scale = max(1.0, float(np.median(np.abs(Ws))))
            aw = np.abs(Ws)
            cand = [
                i for i in range(len(aw)) if (i == 0 or aw[i] <= aw[i - 1]) and (i == len(aw) - 1 or aw[i] <= aw[i + 1])
            ]
            for i in cand:
                h = deltas[1] - deltas[0]
                z, fz = _secant(f, zs[i], zs[i] + 0.25j * h)
                if not np.isfinite(z) or abs(fz) > tol * scale:
                    continue
                if abs(z.real - base) > 1e-6 or not 0 < z.imag < d0:
                    continue
                lam = complex(lambda_of_xi(z, reduced.rho0, b))
                if abs(lam.imag) > IM_LAMBDA_TOL:
                    raise ConsistencyError(f"W zero at xi={z} gives Im(lambda)={lam.imag:.3e}")
                z = complex(base, z.imag)
                if any(abs(z - s.xi) < 1e-8 and s.branch is b for s in found):
                    continue
                bs = BoundState(b, z, lam.real, np.exp(1j * lam.real), z.imag)
                if with_vectors:
                    bs.vector = gauge.apply_inverse(bound_state_vector(reduced, b, z))
                found.append(bs)
    found.sort(key=lambda s: s.lam)
    return found


def bound_state_vector(coin: CoinField, branch, xi, cutoff=1e-17, max_radius=4000) -> SpinorField:
    """Normalized vertex-form eigenvector of the reduced walk at a W-zero xi (Im xi > 0)."""
    lo, hi = _support_window(coin)
    d = xi.imag
    L = int(min(max_radius, np.ceil(-np.log(cutoff) / d) + 2))
    win = (lo - L, hi + L)
    xs = np.arange(win[0], win[1] + 1)
    mp, _ = jost_plus_volterra(coin, [xi], (lo, win[1]), branch)
    v = np.zeros((len(xs), 2), dtype=complex)
    right = xs >= lo
    v[right] = np.exp(1j * xi * xs[right])[:, None] * mp[0]
    # left of the support phi_+ = c phi_-, with phi_- = e^{-i xi x} phi_-(xi) exactly
    phm = free_eigenpair(xi, coin.alpha0, branch).phi_minus
    at_lo = v[xs == lo][0]
    ref = np.exp(-1j * xi * lo) * phm
    k = int(np.argmax(np.abs(ref)))
    c = at_lo[k] / ref[k]
    left = xs < lo
    v[left] = c * np.exp(-1j * xi * xs[left])[:, None] * phm
    v[0, 0] = 0.0  # below cutoff; keeps J_EV inside the window
    u = edge_to_vertex(SpinorField(win[0], v)).values
    u = u / np.linalg.norm(u)
    # fix the global phase so the largest entry is real positive
    j = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    u = u * np.exp(-1j * np.angle(u[j]))
    return SpinorField(win[0], u)


def _folded_order(n_sites):
    """Site order 0, n-1, 1, n-2, ... turning a ring into a band of width 2."""
    order = np.empty(n_sites, dtype=int)
    order[0::2] = np.arange((n_sites + 1) // 2)
    order[1::2] = n_sites - 1 - np.arange(n_sites // 2)
    return order


def _inverse_iteration(M, w, steps=4, seed=0):
    n = M.shape[0]
    lu = spla.splu((M - w * sp.identity(n, format="csc")).tocsc())
    v = np.random.Generator(np.random.PCG64(seed)).standard_normal(n) + 0j
    for _ in range(steps):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
    return v, float(np.linalg.norm(M @ v - w * v))


def gap_eigenvalues_oracle(coin: CoinField, window, edge_margin=1e-6, res_tol=1e-8):
    """Eigenpairs of the periodic truncation of U inside the two spectral gaps.

    U is normal, so H = (U + U*)/2 shares its eigenvectors with eigenvalues
    cos(lam). The ring is folded into a band and LAPACK's banded Hermitian
    solver counts every eigenvalue of H above rho0 (gap around +1) or below
    -rho0 (gap around -1). Each value c fixes e^{i lam} up to conjugation;
    inverse iteration on U decides which of c +- i sqrt(1 - c^2) is present.
    Returns (eigenvalues sorted by angle, list of (n, 2) vertex-form vectors).
    """
    op = WalkOperator(coin, window)
    n = len(op)
    M = sparse_truncation(op).tocsc()
    perm = (2 * _folded_order(n)[:, None] + np.arange(2)[None, :]).reshape(-1)
    Mp = M[perm][:, perm]
    H = (0.5 * (Mp + Mp.getH())).tocoo()
    bw = int(np.max(np.abs(H.row - H.col)))
    ab = np.zeros((bw + 1, 2 * n), dtype=complex)
    upper = H.row <= H.col
    ab[bw + H.row[upper] - H.col[upper], H.col[upper]] = H.data[upper]
    rho0 = coin.rho0
    hs = np.concatenate(
        [
            eigvals_banded(ab, select="v", select_range=(rho0 + edge_margin, 1.5)),
            eigvals_banded(ab, select="v", select_range=(-1.5, -rho0 - edge_margin)),
        ]
    )
    vals, vecs = [], []
    i = 0
    hs = np.sort(hs)
    while i < len(hs):
        j = i + 1
        while j < len(hs) and hs[j] - hs[i] < 1e-9:
            j += 1
        c = float(np.clip(np.mean(hs[i:j]), -1, 1))
        hits = []
        for w in (complex(c, np.sqrt(1 - c * c)), complex(c, -np.sqrt(1 - c * c))):
            v, res = _inverse_iteration(M, w * (1 + 1e-12j))
            if res < res_tol:
                hits.append((complex(np.vdot(v, M @ v)), v))
        if len(hits) != j - i:
            raise SolverError(f"oracle could not resolve the gap eigenvalue cluster at cos(lam)={c:.12f}")
        for w, v in hits:
            vals.append(w)
            vecs.append(v.reshape(-1, 2))
        i = j
    order = np.argsort(np.angle(vals))
    return np.array(vals)[order] if vals else np.array([]), [vecs[k] for k in order]


# ---------------------------------------------------------------------------
# resolvent kernel


def resolvent_column(coin: CoinField, xi, y, window, branch=Branch.MINUS):
    """Blocks R(lam(xi))(x, y) for every x in ``window`` (gauge-reduced coin)."""
    reduced, _ = gauge_reduce(coin)
    xi = complex(xi)
    lo = min(window[0], y, (reduced.support or (0, 0))[0])
    hi = max(window[1], y, (reduced.support or (0, 0))[1] + 1)
    mp, _ = jost_plus_volterra(reduced, [xi], (lo, hi), branch)
    mm, _ = jost_minus_mirror(reduced, [xi], (lo, hi), branch)
    mp, mm = mp[0], mm[0]
    xs = np.arange(window[0], window[1] + 1)
    W = _det(mp[0], mm[0])
    if abs(W) < W_FLOOR:
        raise PoleError(f"W vanishes at xi={xi}")
    lam = complex(lambda_of_xi(xi, reduced.rho0, branch))
    iy = y - lo
    out = np.empty((len(xs), 2, 2), dtype=complex)
    for j, x in enumerate(xs):
        ix = x - lo
        M = side_matrices((mp[ix], mp[iy]), (mm[ix], mm[iy]), x, y)
        out[j] = np.exp(1j * xi * abs(x - y)) * np.exp(-1j * lam) / W * M
    return out


def resolvent_kernel(source, xi, x, y, branch=Branch.MINUS):
    """R(lam(xi))(x, y) = e^{i xi|x-y|} e^{-i lam} W^{-1} (m_- m_+^T s1 D_< + m_+ m_-^T s1 D_>)."""
    if isinstance(source, JostTable):
        k = int(np.argmin(np.abs(source.xi - xi)))
        if abs(source.xi[k] - xi) > 1e-12:
            raise ValueError("xi not on the table grid")
        ix, iy = source.index(x), source.index(y)
        W = _det(source.m_plus[k, ix], source.m_minus[k, ix])
        if abs(W) < W_FLOOR:
            raise PoleError(f"W vanishes at xi={xi}")
        lam = complex(lambda_of_xi(xi, source.coin.rho0, source.branch))
        M = side_matrices(
            (source.m_plus[k, ix], source.m_plus[k, iy]), (source.m_minus[k, ix], source.m_minus[k, iy]), x, y
        )
        return np.exp(1j * xi * abs(x - y)) * np.exp(-1j * lam) / W * M
    return resolvent_column(source, xi, y, (x, x), branch)[0]


# ---------------------------------------------------------------------------
# continuous projection


class ContinuousProjection:
    """P_c u = u - sum_j <psi_j, u> psi_j over normalized bound states."""

    def __init__(self, states):
        self.states = list(states)
        for s in self.states:
            if s.vector is None:
                raise DependencyError("bound state without eigenvector")

    def apply(self, u: SpinorField) -> SpinorField:
        vals = u.values.copy()
        for s in self.states:
            psi = s.vector.restrict(u.window).values
            vals -= np.vdot(psi, u.values) * psi
        return u.with_values(vals)

    __call__ = apply

    def apply_array(self, vals, window):
        """Same on raw (n, 2, k) arrays."""
        vals = np.array(vals, dtype=complex)
        for s in self.states:
            psi = s.vector.restrict(window).values
            coef = np.einsum("xi,xi...->...", np.conj(psi), vals)
            vals -= psi[..., None] * coef if vals.ndim == 3 else psi * coef
        return vals


def continuous_projection(coin: CoinField, states=None, auto=True) -> ContinuousProjection:
    if states is None:
        if not auto:
            raise DependencyError("bound states have not been computed")
        states = bound_states(coin)
    return ContinuousProjection(states)


def contour_projection_kernel(coin: CoinField, state: BoundState, xs, y, nodes=64, radius=None):
    """Riesz projection onto one eigenvalue, edge-form kernel column, via a circle in xi.

    P(x, y) = -(1/2pi) \\oint lam'(xi) W^{-1} e^{i xi |x-y|} M(x, y, xi) dxi.
    """
    reduced, _ = gauge_reduce(coin)
    z0 = state.xi
    if radius is None:
        radius = 0.5 * min(z0.imag, reduced.delta0 - z0.imag)
    th = 2 * np.pi * np.arange(nodes) / nodes
    zs = z0 + radius * np.exp(1j * th)
    dz = 1j * radius * np.exp(1j * th) * (2 * np.pi / nodes)
    xs = np.asarray(xs)
    acc = np.zeros((len(xs), 2, 2), dtype=complex)
    for z, w in zip(zs, dz):
        lam = complex(lambda_of_xi(z, reduced.rho0, state.branch))
        lp = lambda_derivatives(z, reduced.rho0, state.branch)[0]
        R = resolvent_column(reduced, z, y, (xs.min(), xs.max()), state.branch)
        # R carries e^{-i lam}; the contour weight is -(1/2pi) lam' e^{i lam}
        acc += -(1 / (2 * np.pi)) * lp * np.exp(1j * lam) * R[xs - xs.min()] * w
    return acc


def locate_resonance(family, s_lo, s_hi, xe=0.0, branch=Branch.MINUS, xtol=1e-13):
    """Parameter s in [s_lo, s_hi] where the edge invariant of ``family(s)`` changes sign."""
    f = lambda s: edge_invariant(family(s), xe, branch)  # noqa: E731
    a, b = f(s_lo), f(s_hi)
    if a * b > 0:
        raise SolverError(f"edge invariant does not change sign on [{s_lo}, {s_hi}]")
    return float(brentq(f, s_lo, s_hi, xtol=xtol))
