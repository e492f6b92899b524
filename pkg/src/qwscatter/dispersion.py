"""The constant-coin walk: arccos branches, the dispersion relation
cos(lam) = rho0 cos(xi), free eigenvectors, diagonalizer/triangularizer,
free resolvent kernel and free propagator.

Branch convention: ``Branch.MINUS`` gives lam in the upper half plane
(the arc of P_+), ``Branch.PLUS`` the lower arc (P_-), with
lam_plus = -lam_minus.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BranchPointError, ConfigurationError, DegenerateError, DomainError, ResolutionError

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
NEAR_DEGENERATE_A = 1e-8
DEFAULT_GRID_EXP = 12
PROPAGATOR_TOL = 1e-9


class Branch(enum.Enum):
    MINUS = "minus"
    PLUS = "plus"

    @property
    def sign(self) -> int:
        return 1 if self is Branch.MINUS else -1


def as_branch(b) -> Branch:
    return b if isinstance(b, Branch) else Branch(str(b).lower())


@dataclass(frozen=True)
class QuasiMomentum:
    xi: complex
    branch: Branch = Branch.MINUS

    def check(self, rho0):
        check_strip(self.xi, rho0)
        return self


def delta0_of(rho0) -> float:
    return float(np.arccosh(1.0 / rho0))


def check_strip(xi, rho0):
    d0 = delta0_of(rho0)
    if np.any(np.abs(np.imag(xi)) >= d0):
        raise DomainError(f"|Im xi| must be < delta0 = {d0:.6g}")


@dataclass(frozen=True)
class BandStructure:
    rho0: float

    @property
    def delta0(self) -> float:
        return delta0_of(self.rho0)

    @property
    def I1(self):
        a = float(np.arccos(self.rho0))
        return a, float(np.pi - a)

    @property
    def I2(self):
        lo, hi = self.I1
        return -hi, -lo

    @property
    def edges(self):
        lo, hi = self.I1
        return lo, hi, -lo, -hi

    def in_band(self, lam, tol=1e-12) -> np.ndarray:
        return np.abs(np.cos(np.real(lam))) <= self.rho0 + tol


def acos_branch(z, side=None):
    """Inverse cosine on a chosen sheet.

    ``side`` Minus returns arccos(z), Plus returns -arccos(z) (for |Re z| < 1).
    With ``side=None`` the principal map C \\ [-1, 1] -> {Im w > 0} is used.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(np.isclose(z, 1.0, rtol=0, atol=1e-15) | np.isclose(z, -1.0, rtol=0, atol=1e-15)):
        raise BranchPointError("arccos branch point at z = +-1")
    if side is None:
        on_cut = (np.abs(z.real) <= 1) & (z.imag == 0)
        if np.any(on_cut):
            raise DomainError("principal map is defined off [-1, 1]")
        w = np.arccos(z)
        w = np.where(w.imag > 0, w, -w)
    else:
        side = as_branch(side)
        if np.any(np.abs(z.real) >= 1):
            raise DomainError("branch sheets need |Re z| < 1")
        w = side.sign * np.arccos(z)
    return w[()] if w.ndim == 0 else w


def lambda_of_xi(xi, rho0, branch=Branch.MINUS):
    if isinstance(xi, QuasiMomentum):
        xi, branch = xi.xi, xi.branch
    check_strip(xi, rho0)
    return acos_branch(rho0 * np.cos(np.asarray(xi, dtype=complex)), as_branch(branch))


def lambda_derivatives(xi, rho0, branch=Branch.MINUS):
    """(lam', lam'', lam''') of lam(xi) = acos_branch(rho0 cos xi).

    Uses sin(lam)^2 = s := 1 - rho0^2 cos^2 xi, so every branch and complex
    xi in the strip are covered by the same expressions.
    """
    xi = np.asarray(xi, dtype=complex)
    lam = lambda_of_xi(xi, rho0, branch)
    sl = np.sin(lam)
    f, f1, f2 = rho0 * np.sin(xi), rho0 * np.cos(xi), -rho0 * np.sin(xi)
    s1 = rho0**2 * np.sin(2 * xi)
    s2 = 2 * rho0**2 * np.cos(2 * xi)
    g = 1 / sl
    g1 = -0.5 * s1 / sl**3
    g2 = 0.75 * s1**2 / sl**5 - 0.5 * s2 / sl**3
    d1 = f * g
    d2 = f1 * g + f * g1
    d3 = f2 * g + 2 * f1 * g1 + f * g2
    if np.all(np.imag(xi) == 0):
        d1, d2, d3 = d1.real, d2.real, d3.real
    return d1, d2, d3


def curvature_floor(rho0, n=4096) -> float:
    """inf over the torus of max(|lam''|, |lam'''|), sampled on n points."""
    xi = 2 * np.pi * np.arange(n) / n
    _, d2, d3 = lambda_derivatives(xi, rho0)
    return float(np.min(np.maximum(np.abs(d2), np.abs(d3))))


# ---------------------------------------------------------------------------
# free transfer matrix and eigenvectors


def free_transfer(lam, alpha0):
    """T_{0,lam} = rho0^{-1} [[e^{i lam}, alpha0], [conj(alpha0), e^{-i lam}]]."""
    lam = np.asarray(lam, dtype=complex)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    T = np.empty(lam.shape + (2, 2), dtype=complex)
    T[..., 0, 0] = np.exp(1j * lam)
    T[..., 0, 1] = alpha0
    T[..., 1, 0] = np.conj(alpha0)
    T[..., 1, 1] = np.exp(-1j * lam)
    return T / rho0


def phase_kappa(alpha0) -> complex:
    """Constant phase making det(phi_+, phi_-) equal 2i conj(alpha0) rho0 sin(xi) / sqrt(A+ A-)."""
    return 1j * np.conj(alpha0) / abs(alpha0)


def raw_eigenvectors(xi, lam, alpha0):
    """Unnormalized (-alpha0, e^{i lam} - rho0 e^{+-i xi}), entire in xi."""
    xi = np.asarray(xi, dtype=complex)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    shape = np.broadcast(xi, lam).shape
    vp = np.empty(shape + (2,), dtype=complex)
    vm = np.empty(shape + (2,), dtype=complex)
    vp[..., 0] = vm[..., 0] = -alpha0
    vp[..., 1] = np.exp(1j * lam) - rho0 * np.exp(1j * xi)
    vm[..., 1] = np.exp(1j * lam) - rho0 * np.exp(-1j * xi)
    return vp, vm


def normalizers(xi, lam, alpha0):
    """A_+-(xi) = |alpha0|^2 + (sin lam -+ rho0 sin xi)^2."""
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    a2 = abs(alpha0) ** 2
    return a2 + (np.sin(lam) - rho0 * np.sin(xi)) ** 2, a2 + (np.sin(lam) + rho0 * np.sin(xi)) ** 2


@dataclass(frozen=True)
class FreeEigenpair:
    xi: np.ndarray
    lam: np.ndarray
    phi_plus: np.ndarray  # (..., 2)
    phi_minus: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    branch: Branch = Branch.MINUS


def free_eigenpair(xi, alpha0, branch=Branch.MINUS) -> FreeEigenpair:
    """phi_+-(xi) = kappa A_+-^{-1/2} (-alpha0, e^{i lam} - rho0 e^{+-i xi}).

    T_{0,lam} phi_+- = e^{+-i xi} phi_+-, and |phi_+-| = 1 for real xi.
    """
    branch = as_branch(branch)
    xi = np.asarray(xi, dtype=complex)
    rho0 = float(np.sqrt(1 - abs(alpha0) ** 2))
    lam = lambda_of_xi(xi, rho0, branch)
    ap, am = normalizers(xi, lam, alpha0)
    if np.any(np.abs(ap) < NEAR_DEGENERATE_A) or np.any(np.abs(am) < NEAR_DEGENERATE_A):
        warnings.warn(
            "A_+- nearly vanishes; eigenvector normalization is ill conditioned", RuntimeWarning, stacklevel=2
        )
    vp, vm = raw_eigenvectors(xi, lam, alpha0)
    k = phase_kappa(alpha0)
    php = k * vp / np.sqrt(ap)[..., None]
    phm = k * vm / np.sqrt(am)[..., None]
    return FreeEigenpair(xi, lam, php, phm, ap, am, branch)


def free_wronskian(xi, alpha0, branch=Branch.MINUS):
    """W_0 = det(phi_+, phi_-) = 2i conj(alpha0) rho0 sin(xi) / (sqrt(A+) sqrt(A-))."""
    ep = free_eigenpair(xi, alpha0, branch)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    return 2j * np.conj(alpha0) * rho0 * np.sin(ep.xi) / (np.sqrt(ep.A_plus) * np.sqrt(ep.A_minus))


def lambda_prime_over_w0(xi, alpha0, branch=Branch.MINUS):
    """lam'/W_0 = sqrt(A+) sqrt(A-) / (2i conj(alpha0) sin lam); regular at xi in {0, pi}."""
    branch = as_branch(branch)
    xi = np.asarray(xi, dtype=complex)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    lam = lambda_of_xi(xi, rho0, branch)
    ap, am = normalizers(xi, lam, alpha0)
    return np.sqrt(ap) * np.sqrt(am) / (2j * np.conj(alpha0) * np.sin(lam))


def gamma_factor(xi, alpha0, branch=Branch.MINUS, tol=1e-10):
    """gamma(xi) with gamma sigma_1 conj(phi_+-(xi)) = phi_+-(-xi), for real xi."""
    xi = np.asarray(xi, dtype=float)
    e = free_eigenpair(xi, alpha0, branch)
    r = free_eigenpair(-xi, alpha0, branch)
    out = []
    for cur, ref in ((e.phi_plus, r.phi_plus), (e.phi_minus, r.phi_minus)):
        g_up = ref[..., 0] / np.conj(cur[..., 1])
        g_dn = ref[..., 1] / np.conj(cur[..., 0])
        if np.max(np.abs(g_up - g_dn)) > tol:
            raise DegenerateError("gamma ratios from the two components disagree")
        out.append(g_up)
    if np.max(np.abs(out[0] - out[1])) > tol:
        raise DegenerateError("gamma differs between phi_+ and phi_-")
    return out[0]


# ---------------------------------------------------------------------------
# diagonalizer / triangularizer


def _corner(xi, tol=1e-12) -> bool:
    return abs(np.sin(complex(xi))) < tol


def diagonalizer(xi, alpha0, branch=Branch.MINUS):
    if _corner(xi):
        raise DegenerateError("diagonalizer undefined at xi in {0, pi}; use triangularizer")
    e = free_eigenpair(xi, alpha0, branch)
    P = np.stack([e.phi_plus, e.phi_minus], axis=-1)
    return P, np.linalg.inv(P)


def phi_tilde(xi, alpha0, branch=Branch.MINUS):
    """Solves (T_0 - e^{-i xi}) phi_tilde = phi_+ : kappa A_+^{-1/2} (0, -rho0)."""
    e = free_eigenpair(xi, alpha0, branch)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    v = np.zeros(np.shape(e.xi) + (2,), dtype=complex)
    v[..., 1] = -rho0
    return phase_kappa(alpha0) * v / np.sqrt(e.A_plus)[..., None]


def triangularizer(xi, alpha0, branch=Branch.MINUS):
    e = free_eigenpair(xi, alpha0, branch)
    P = np.stack([e.phi_plus, phi_tilde(xi, alpha0, branch)], axis=-1)
    return P, np.linalg.inv(P)


def jordan_power(xi, x: int) -> np.ndarray:
    """[[e^{i xi}, 1], [0, e^{-i xi}]]^x in closed form."""
    xi = complex(xi)
    if x >= 0:
        c = np.sum(np.exp(1j * xi * (x - 1 - 2 * np.arange(0, x))))
    else:
        c = -np.sum(np.exp(1j * xi * (x - 1 - 2 * np.arange(x, 0))))
    return np.array([[np.exp(1j * xi * x), c], [0, np.exp(-1j * xi * x)]], dtype=complex)


def A_matrix(xi, alpha0, sign=+1, branch=Branch.MINUS):
    """A_{xi,+-} = e^{-+i xi} T_{0, lam(xi)}."""
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    lam = lambda_of_xi(xi, rho0, branch)
    return np.exp(-sign * 1j * np.asarray(xi, dtype=complex))[..., None, None] * free_transfer(lam, alpha0)


def A_power_norm(xi, sign, x: int, alpha0, branch=Branch.MINUS) -> float:
    A = A_matrix(xi, alpha0, sign, branch)
    return float(np.linalg.norm(np.linalg.matrix_power(A, int(x)), 2))


def A_power_constant(xi, sign, xs, alpha0, branch=Branch.MINUS) -> float:
    """Smallest C with ||A^x|| <= C max(1, min(|x|, 1/|sin xi|)) over xs."""
    s = abs(np.sin(complex(xi)))
    ratios = []
    for x in xs:
        scale = max(1.0, min(abs(x), 1 / s if s > 0 else np.inf))
        ratios.append(A_power_norm(xi, sign, x, alpha0, branch) / scale)
    return float(max(ratios))


# ---------------------------------------------------------------------------
# free resolvent and propagator


def side_matrices(phi_p, phi_m, x, y):
    """Bracket of the kernel: phi_- phi_+^T s1 diag(1_{x<=y}, 1_{x<y}) + phi_+ phi_-^T s1 diag(1_{x>y}, 1_{x>=y}).

    phi_p and phi_m are the values at x (first factor) and y (second) as pairs.
    """
    (pp_x, pp_y), (pm_x, pm_y) = phi_p, phi_m
    left = np.einsum("...i,...j->...ij", pm_x, pp_y @ SIGMA1)
    right = np.einsum("...i,...j->...ij", pp_x, pm_y @ SIGMA1)
    dl = np.array([x <= y, x < y], dtype=float)
    dr = np.array([x > y, x >= y], dtype=float)
    return left * dl + right * dr


def free_resolvent_kernel(xi, x, y, alpha0, branch=Branch.MINUS):
    """R_0(lam(xi))(x, y): kernel of (C_0 - e^{i lam})^{-1} for Im xi > 0."""
    if _corner(xi):
        raise DegenerateError("free resolvent kernel undefined at xi in {0, pi}")
    e = free_eigenpair(xi, alpha0, branch)
    w0 = free_wronskian(xi, alpha0, branch)
    M = side_matrices((e.phi_plus, e.phi_plus), (e.phi_minus, e.phi_minus), x, y)
    return np.exp(1j * e.xi * abs(x - y)) * np.exp(-1j * e.lam) / w0 * M


def offset_grid(n: int) -> np.ndarray:
    """xi_k = 2 pi (k + 1/2) / n; avoids the corners 0 and pi."""
    return 2 * np.pi * (np.arange(n) + 0.5) / n


def check_pow2(n: int):
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"grid size must be a power of two, got {n}")


def oscillatory_sum(F: np.ndarray, ns: np.ndarray) -> np.ndarray:
    """(1/2pi) int F(xi) e^{i xi n} dxi on the offset grid, for integer n >= 0 < N.

    F has the grid on axis 0; trailing axes are carried through.
    """
    N = F.shape[0]
    ns = np.asarray(ns)
    if np.any(ns < 0) or np.any(ns >= N):
        raise ResolutionError("|x - y| must be below the grid size")
    S = np.fft.ifft(F, axis=0)  # (1/N) sum_k F_k e^{2 pi i k n / N}
    ph = np.exp(1j * np.pi * ns / N)
    return ph.reshape((-1,) + (1,) * (F.ndim - 1)) * S[ns]


def propagator_grid_size(t, nmax, rho0, exp_min=DEFAULT_GRID_EXP) -> int:
    need = 2 * (rho0 * t + nmax) + 64
    n = 2**exp_min
    while n < need:
        n *= 2
    return n


def _free_column(t, y, xs, alpha0, branch, n):
    xi = offset_grid(n)
    e = free_eigenpair(xi, alpha0, branch)
    g = np.exp(1j * t * e.lam) * lambda_prime_over_w0(xi, alpha0, branch)
    # bracket matrices for x > y, x < y and x == y
    Qr = np.einsum("ki,kj->kij", e.phi_plus, e.phi_minus @ SIGMA1)
    Ql = np.einsum("ki,kj->kij", e.phi_minus, e.phi_plus @ SIGMA1)
    xs = np.asarray(xs)
    d = np.abs(xs - y)
    if d.max() >= n:
        raise ResolutionError("grid too small for the requested separation")
    out = np.empty((len(xs), 2, 2), dtype=complex)
    for mask, F in (
        (xs > y, Qr),
        (xs < y, Ql),
        (xs == y, Ql * np.array([1.0, 0.0]) + Qr * np.array([0.0, 1.0])),
    ):
        if np.any(mask):
            out[mask] = oscillatory_sum(g[:, None, None] * F, d[mask])
    # +1/2pi: the xi-contour runs clockwise around the arc (fixed by the t = 0 projection check)
    return out


def free_propagator_column(t, y, xs, alpha0, branch=Branch.MINUS, n=None, tol=PROPAGATOR_TOL, max_exp=20):
    """Blocks K_t(x, y) of J_VE U_0^t P J_EV for x in xs (P the arc projection of ``branch``).

    Grid doubles from the rule-of-thumb size until two successive grids agree to ``tol``.
    """
    branch = as_branch(branch)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    xs = np.asarray(xs)
    if n is None:
        n = propagator_grid_size(t, int(np.max(np.abs(xs - y))), rho0)
    check_pow2(n)
    prev = _free_column(t, y, xs, alpha0, branch, n)
    while True:
        if n > 2**max_exp:
            raise ResolutionError(f"propagator did not converge to {tol} by grid {n}")
        n *= 2
        cur = _free_column(t, y, xs, alpha0, branch, n)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur


def free_propagator(t, x, y, alpha0, branch=Branch.MINUS, n=None):
    return free_propagator_column(t, y, [x], alpha0, branch, n)[0]


# ---------------------------------------------------------------------------
# Fourier-space oracle for the free walk on a ring


def free_symbol(k, alpha0):
    """U_0 on e^{ikx} spinors: diag(e^{-ik}, e^{ik}) C_0."""
    k = np.asarray(k, dtype=float)
    rho0 = np.sqrt(1 - abs(alpha0) ** 2)
    C = np.array([[rho0, np.conj(alpha0)], [-alpha0, rho0]], dtype=complex)
    D = np.zeros(k.shape + (2, 2), dtype=complex)
    D[..., 0, 0] = np.exp(-1j * k)
    D[..., 1, 1] = np.exp(1j * k)
    return D @ C


def free_arc_projector_symbol(k, alpha0, branch=Branch.MINUS):
    """Per-momentum spectral projector of the free symbol onto one arc."""
    S = free_symbol(k, alpha0)
    w, v = np.linalg.eig(S)
    upper = np.angle(w) > 0
    keep = upper if as_branch(branch) is Branch.MINUS else ~upper
    # the symbol is unitary (normal) so eigenvectors are orthonormal
    v = v / np.linalg.norm(v, axis=-2, keepdims=True)
    vk = v * keep[..., None, :]
    return vk @ np.conj(np.swapaxes(v, -1, -2))


def free_evolve_fft(values: np.ndarray, t: int, alpha0, branch=None) -> np.ndarray:
    """U_0^t (optionally followed by an arc projection) on a periodic ring via FFT.

    ``values`` has shape (L, 2) with site index 0 at position 0.
    """
    L = values.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(L)
    uh = np.fft.fft(values, axis=0)  # uh(k) = sum_x u(x) e^{-ikx}
    S = free_symbol(k, alpha0)
    St = np.linalg.matrix_power(S, t) if t else np.broadcast_to(np.eye(2), S.shape)
    if branch is not None:
        St = St @ free_arc_projector_symbol(k, alpha0, branch)
    return np.fft.ifft(np.einsum("kij,kj->ki", St, uh), axis=0)
