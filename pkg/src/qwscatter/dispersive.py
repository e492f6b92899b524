"""Dispersive decay experiments: direct evolution, oscillatory-integral
propagator kernels, van der Corput bounds and envelope fits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.stats import linregress

from .coin import CoinField, gauge_reduce
from .dispersion import (
    SIGMA1,
    Branch,
    as_branch,
    check_pow2,
    free_arc_projector_symbol,
    lambda_of_xi,
    lambda_prime_over_w0,
    offset_grid,
    propagator_grid_size,
)
from .errors import ConfigurationError, ConsistencyError, DomainError, FitError, ResolutionError
from .evolution import WalkOperator, evolve_array, vertex_to_edge
from .jost import JostTable, jost_minus_mirror, jost_plus_volterra, wiener_norm
from .lattice import SpinorField, l1_norm
from .scattering import ContinuousProjection, continuous_projection, scattering_coefficients

DEFAULT_SCHEDULE = tuple(int(round(100 * 1.25**k)) for k in range(16))
ROUTE_TOL = 1e-7


class Route(enum.Enum):
    DIRECT = "direct"
    KERNEL = "kernel"
    BOTH = "both"


class Projection(enum.Enum):
    CONTINUOUS = "continuous"  # P_c = P_+ + P_-
    UPPER = "upper"  # P_+, the arc of Branch.MINUS
    LOWER = "lower"  # P_-, the arc of Branch.PLUS

    def branches(self):
        if self is Projection.UPPER:
            return [Branch.MINUS]
        if self is Projection.LOWER:
            return [Branch.PLUS]
        return [Branch.MINUS, Branch.PLUS]


@dataclass
class DecayExperiment:
    coin: CoinField
    initial: SpinorField
    t_schedule: tuple = DEFAULT_SCHEDULE
    route: Route = Route.DIRECT
    projection: Projection = Projection.CONTINUOUS
    every_step: bool = False  # record sup-norm at every t in [min, max] of the schedule
    margin: int = 16
    results: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = list(self.t_schedule)
        if any(t < 0 for t in ts) or ts != sorted(set(ts)):
            raise ConfigurationError("t_schedule must be strictly increasing nonnegative integers")
        self.route = Route(self.route)
        self.projection = Projection(self.projection)


@dataclass
class DecayResults:
    t: np.ndarray
    supnorm: np.ndarray
    l2norm: np.ndarray
    ratio: np.ndarray
    route: str
    l2_drift: float
    route_difference: float | None = None

    def rows(self):
        for i in range(len(self.t)):
            yield int(self.t[i]), float(self.supnorm[i]), float(self.l2norm[i]), float(self.ratio[i]), self.route


# ---------------------------------------------------------------------------
# projections


def free_arc_project(u: SpinorField, coin: CoinField, branch, pad=256) -> SpinorField:
    """Arc projection of the free walk via the momentum-space symbol, on a padded ring."""
    if not coin.is_free():
        raise ConfigurationError("single-arc projection by symbol needs a free coin")
    n = len(u) + 2 * pad
    L = 1 << int(np.ceil(np.log2(n)))
    lo = u.x_min - (L - len(u)) // 2
    ring = np.zeros((L, 2), dtype=complex)
    ring[u.x_min - lo : u.x_min - lo + len(u)] = u.values
    # move site lo to ring index 0 is implicit: the projector is translation invariant
    k = 2 * np.pi * np.fft.fftfreq(L)
    P = free_arc_projector_symbol(k, coin.alpha0, branch)
    out = np.fft.ifft(np.einsum("kij,kj->ki", P, np.fft.fft(ring, axis=0)), axis=0)
    return SpinorField(lo, out)


def project(exp: DecayExperiment, u: SpinorField, proj: ContinuousProjection | None = None) -> SpinorField:
    if exp.projection is Projection.CONTINUOUS:
        proj = proj or continuous_projection(exp.coin)
        win = (u.x_min, u.x_max)
        for s in proj.states:
            win = (min(win[0], s.vector.x_min), max(win[1], s.vector.x_max))
        return proj.apply(u.restrict(win))
    return free_arc_project(u, exp.coin, exp.projection.branches()[0])


# ---------------------------------------------------------------------------
# direct route


def _direct_series(exp: DecayExperiment, u0: SpinorField, proj=None):
    pu = project(exp, u0, proj)
    tmax = max(exp.t_schedule)
    supp = exp.coin.support or (0, 0)
    lo = min(pu.x_min, supp[0]) - tmax - exp.margin
    hi = max(pu.x_max, supp[1]) + tmax + exp.margin
    op = WalkOperator(exp.coin, (lo, hi))
    vals0 = pu.restrict((lo, hi)).values
    if exp.every_step:
        want = set(range(min(exp.t_schedule), tmax + 1))
    else:
        want = set(exp.t_schedule)
    rec = {}

    def record(s, vals):
        if s in want:
            pw = np.sqrt(np.sum(np.abs(vals) ** 2, axis=1))
            rec[s] = (float(pw.max()), float(np.linalg.norm(pw)))

    evolve_array(op, vals0, tmax, record)
    ts = np.array(sorted(rec))
    return ts, np.array([rec[t][0] for t in ts]), np.array([rec[t][1] for t in ts])


def run_decay(exp: DecayExperiment) -> DecayResults:
    """Sup-norm of U^t P u0 along the schedule; kernel route checked against direct where both run."""
    u0 = exp.initial
    n1 = l1_norm(u0)
    proj = continuous_projection(exp.coin) if exp.projection is Projection.CONTINUOUS else None
    diff = None
    if exp.route in (Route.DIRECT, Route.BOTH):
        ts, sup, l2 = _direct_series(exp, u0, proj)
        route = "direct"
    if exp.route in (Route.KERNEL, Route.BOTH):
        kts = np.array(sorted(exp.t_schedule))
        ksup = []
        kl2 = []
        for t in kts:
            field_t = kernel_evolve(exp.coin, u0, int(t), exp.projection)
            pw = np.sqrt(np.sum(np.abs(field_t.values) ** 2, axis=1))
            ksup.append(pw.max())
            kl2.append(np.linalg.norm(pw))
        ksup, kl2 = np.array(ksup), np.array(kl2)
        if exp.route is Route.KERNEL:
            ts, sup, l2, route = kts, ksup, kl2, "kernel"
        else:
            idx = np.searchsorted(ts, kts)
            diff = float(np.max(np.abs(sup[idx] - ksup)))
            if diff > ROUTE_TOL:
                raise ConsistencyError(f"direct and kernel routes differ by {diff:.3e}")
            route = "both"
    drift = float(np.max(np.abs(l2 - l2[0]))) if len(l2) else 0.0
    return DecayResults(ts, sup, l2, sup / n1, route, drift, diff)


# ---------------------------------------------------------------------------
# kernel route


def _edge_gauge(coin: CoinField, xs):
    """Scalar edge-form gauge: J_VE G J_EV acts at edge x as e^{-i B(x)}."""
    _, g = gauge_reduce(coin)
    return np.exp(-1j * g.B(np.asarray(xs)))


def _outer(a, b):
    return np.einsum("ki,kj->kij", a, b @ SIGMA1)


class KernelSampler:
    """Jost tables and scattering data of the reduced coin on one offset grid.

    Columns of the perturbed kernel are oscillatory sums over this grid:
    K(x, y) = (1/2pi) int e^{it lam} (lam'/W_0) t e^{i xi |x-y|} M(x, y) dxi
    with M = m_- m_+^T s1 (x left of y) or m_+ m_-^T s1 (x right of y).
    """

    def __init__(self, reduced: CoinField, window, branch, n):
        check_pow2(n)
        self.coin = reduced
        self.branch = as_branch(branch)
        self.n = n
        supp = reduced.support or (0, 0)
        lo, hi = min(window[0], supp[0], 0), max(window[1], supp[1] + 1, 0)
        self.window = (lo, hi)
        xi = offset_grid(n)
        mp, _ = jost_plus_volterra(reduced, xi, self.window, self.branch)
        mm, _ = jost_minus_mirror(reduced, xi, self.window, self.branch)
        table = JostTable(reduced, self.branch, xi.astype(complex), 0.0, self.window, mp, mm, 0.0)
        rep = scattering_coefficients(table)
        self.xi, self.mp, self.mm = xi, mp, mm
        self.t, self.r_plus, self.r_minus = rep.t, rep.r_plus, rep.r_minus
        self.ref = n - 1 - np.arange(n)
        self.lam = lambda_of_xi(xi, reduced.rho0, self.branch)
        self.lpw = lambda_prime_over_w0(xi, reduced.alpha0, self.branch)

    def tm_minus(self, z, subst):
        """t m_-(z); for z >= 0 optionally via t m_-(z) = m_+(z, -xi) + r_+ e^{2i xi z} m_+(z, xi)."""
        i = z - self.window[0]
        if subst and z >= 0:
            return self.mp[self.ref, i] + (self.r_plus * np.exp(2j * self.xi * z))[:, None] * self.mp[:, i]
        return self.t[:, None] * self.mm[:, i]

    def tm_plus(self, z, subst):
        """t m_+(z); for z <= 0 optionally via t m_+(z) = m_-(z, -xi) + r_- e^{-2i xi z} m_-(z, xi)."""
        i = z - self.window[0]
        if subst and z <= 0:
            return self.mm[self.ref, i] + (self.r_minus * np.exp(-2j * self.xi * z))[:, None] * self.mm[:, i]
        return self.t[:, None] * self.mp[:, i]

    def _right(self, x, y, subst):
        """Integrand bracket for x > y: t m_+(x) m_-(y)^T s1, with t placed by the sign of x and y."""
        if subst and x <= 0:
            return _outer(self.tm_plus(x, True), self.mm[:, y - self.window[0]])
        return _outer(self.mp[:, x - self.window[0]], self.tm_minus(y, subst))

    def _left(self, x, y, subst):
        """Bracket for x < y: t m_-(x) m_+(y)^T s1."""
        if subst and x >= 0:
            return _outer(self.tm_minus(x, True), self.mp[:, y - self.window[0]])
        return _outer(self.mm[:, x - self.window[0]], self.tm_plus(y, subst))

    def column(self, t, y, xs, variant="substituted"):
        if variant not in ("direct", "substituted"):
            raise ConfigurationError(f"unknown variant {variant!r}")
        subst = variant == "substituted"
        xs = np.asarray(xs, dtype=int)
        lo, hi = self.window
        if xs.min() < lo or xs.max() > hi or not lo <= y <= hi:
            raise ConfigurationError("sites outside the sampler window")
        d = np.abs(xs - y)
        if d.max() >= self.n:
            raise ResolutionError("grid too small for the requested separation")
        g = np.exp(1j * t * self.lam) * self.lpw
        F = np.empty((self.n, len(xs), 2, 2), dtype=complex)
        for j, x in enumerate(xs):
            if x > y:
                F[:, j] = self._right(x, y, subst)
            elif x < y:
                F[:, j] = self._left(x, y, subst)
            else:
                F[:, j] = self._left(x, y, subst) * np.array([1.0, 0.0]) + self._right(x, y, subst) * np.array(
                    [0.0, 1.0]
                )
        phase = np.exp(1j * np.outer(self.xi, d))
        return np.einsum("k,kx,kxij->xij", g, phase, F) / self.n


def propagator_column(
    coin: CoinField, t: int, y: int, xs, branch=None, n=None, variant="substituted", tol=1e-10, max_exp=16
):
    """Edge-form kernel column K_t(x, y) of J_VE U^t P J_EV for x in xs.

    ``branch`` selects one arc (P_+ for Branch.MINUS, P_- for Branch.PLUS);
    None sums both arcs, which gives U^t P_c. The xi integral is the periodic
    trapezoid on an offset grid, doubled until two grids agree to ``tol``.
    """
    reduced, _ = gauge_reduce(coin)
    xs = np.atleast_1d(np.asarray(xs, dtype=int))
    branches = list(Branch) if branch is None else [as_branch(branch)]
    window = (min(int(xs.min()), y), max(int(xs.max()), y))
    if n is None:
        n = propagator_grid_size(t, int(np.max(np.abs(xs - y))), reduced.rho0, exp_min=8)

    def total(nn):
        return sum(KernelSampler(reduced, window, b, nn).column(t, y, xs, variant) for b in branches)

    prev = total(n)
    while True:
        if n >= 2**max_exp:
            raise ResolutionError(f"kernel quadrature did not reach {tol} by grid {n}")
        n *= 2
        cur = total(n)
        if not np.all(np.isfinite(cur)):
            raise ConsistencyError("non-finite propagator kernel")
        if np.max(np.abs(cur - prev)) < tol:
            break
        prev = cur
    g = _edge_gauge(coin, xs)
    gy = _edge_gauge(coin, [y])[0]
    return cur * (np.conj(g)[:, None, None] * gy)


def propagator_kernel(coin: CoinField, t: int, x: int, y: int, branch=None, **kw) -> np.ndarray:
    return propagator_column(coin, t, y, [x], branch, **kw)[0]


def kernel_evolve(
    coin: CoinField, u0: SpinorField, t: int, projection=Projection.CONTINUOUS, variant="substituted", pad=24
):
    """U^t P u0 assembled from kernel columns (vertex form).

    The window is the light cone of u0 widened by ``pad`` sites, which also
    holds the exponentially small tails of the projection.
    """
    projection = Projection(projection)
    branch = None if projection is Projection.CONTINUOUS else projection.branches()[0]
    supp0 = u0.support()
    if supp0 is None:
        return u0
    lo, hi = supp0[0] - t - pad, supp0[1] + t + pad + 1
    v0 = vertex_to_edge(u0.restrict((supp0[0], supp0[1] + 1)))
    xs = np.arange(lo, hi + 1)
    acc = np.zeros((len(xs), 2), dtype=complex)
    for y in range(v0.x_min, v0.x_max + 1):
        vy = v0[y]
        if np.any(vy):
            K = propagator_column(coin, t, y, xs, branch, variant=variant)
            acc += np.einsum("xij,j->xi", K, vy)
    u = np.zeros_like(acc)
    u[:, 0] = acc[:, 1]
    u[:-1, 1] = acc[1:, 0]
    return SpinorField(lo, u)


def direct_evolve(coin: CoinField, u0: SpinorField, t: int, projection=Projection.CONTINUOUS, margin=16):
    """U^t P u0 by projecting first and stepping the walk on a light-cone window."""
    exp = DecayExperiment(coin, u0, (t,), Route.DIRECT, projection, margin=margin)
    pu = project(exp, u0)
    supp = coin.support or (0, 0)
    lo = min(pu.x_min, supp[0]) - t - margin
    hi = max(pu.x_max, supp[1]) + t + margin
    op = WalkOperator(coin, (lo, hi))
    return SpinorField(lo, evolve_array(op, pu.restrict((lo, hi)).values, t))


def substitution_residual(coin: CoinField, n=256, window=(-12, 12), branch=Branch.MINUS, variant="y"):
    """Max residual over a window of t m_-(z) = m_+(z, -xi) + r_+ e^{2i xi z} m_+(z, xi)
    (``y``) or of t m_+(z) = m_-(z, -xi) + r_- e^{-2i xi z} m_-(z, xi) (``x``)."""
    reduced, _ = gauge_reduce(coin)
    s = KernelSampler(reduced, window, branch, n)
    zs = np.arange(window[0], window[1] + 1)
    i = zs - s.window[0]
    e = np.exp(2j * np.outer(s.xi, zs))[..., None]
    if variant == "y":
        lhs = s.t[:, None, None] * s.mm[:, i]
        rhs = s.mp[s.ref][:, i] + s.r_plus[:, None, None] * e * s.mp[:, i]
    elif variant == "x":
        lhs = s.t[:, None, None] * s.mp[:, i]
        rhs = s.mm[s.ref][:, i] + s.r_minus[:, None, None] / e * s.mm[:, i]
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# van der Corput


def vdc_constant(m: int) -> float:
    """c_m = 5 2^{m-1} - 2 in |int_a^b e^{it phi} psi| <= c_m (t mu)^{-1/m} (|psi(b)| + int |psi'|)."""
    return 5.0 * 2 ** (m - 1) - 2.0


@dataclass
class VdcResult:
    value: complex
    bound: float
    mu: float
    amplitude_norm: float
    constant: float


def van_der_corput_bound(phase, g, t, m, interval=(-1.0, 1.0), n=None, amplitude="auto", dphase=None):
    """Quadrature of int e^{i t phase} g over ``interval`` with its van der Corput bound.

    ``phase`` and ``g`` are callables on real arrays (``g`` may be a scalar).
    ``dphase`` optionally gives the m-th derivative of the phase; otherwise it
    is obtained by finite differences. The amplitude enters through its Wiener
    norm when the interval is a full period and through |g(b)| + int |g'|
    otherwise.
    """
    if m not in (2, 3):
        raise ConfigurationError("m must be 2 or 3")
    a, b = map(float, interval)
    if n is None:
        probe = np.linspace(a, b, 4097)
        slope = np.max(np.abs(np.gradient(phase(probe), probe)))
        n = int(max(4097, 40 * t * slope * (b - a) / (2 * np.pi)))
        n += (n + 1) % 2
    xs = np.linspace(a, b, n)
    gv = np.broadcast_to(np.asarray(g(xs) if callable(g) else g, dtype=complex), xs.shape)
    value = complex(simpson(np.exp(1j * t * phase(xs)) * gv, x=xs))
    if dphase is not None:
        dm = np.asarray(dphase(xs), dtype=float)
    else:
        dm = phase(xs)
        for _ in range(m):
            dm = np.gradient(dm, xs)
        dm = dm[m:-m]
    mu = float(np.min(np.abs(dm)))
    if not mu > 1e-10:
        zero = xs[int(np.argmin(np.abs(dm)))]
        raise DomainError(f"|phase^({m})| vanishes near xi={zero:.6g}; split the interval there")
    full = abs((b - a) - 2 * np.pi) < 1e-12
    if amplitude == "wiener" or (amplitude == "auto" and full):
        k = 1 << 12
        grid = a + (b - a) * np.arange(k) / k
        gs = np.broadcast_to(np.asarray(g(grid) if callable(g) else g, dtype=complex), grid.shape)
        norm = wiener_norm(gs)
    else:
        norm = float(abs(gv[-1]) + np.sum(np.abs(np.diff(gv))))
    c = vdc_constant(m)
    bound = c * (t * mu) ** (-1.0 / m) * norm
    if abs(value) > bound * (1 + 1e-9):
        raise ConsistencyError(f"|I(t)| = {abs(value):.3e} exceeds the bound {bound:.3e}")
    return VdcResult(value, float(bound), mu, float(norm), c)


def split_van_der_corput(phase, d2, d3, g, t, interval=(0.0, 2 * np.pi), n=None):
    """Bound on an interval where the second and third phase derivatives never vanish together.

    The interval is cut where the larger of |d2| and |d3| changes; each
    piece gets the m = 2 or m = 3 bound and the pieces are summed.
    """
    a, b = map(float, interval)
    xs = np.linspace(a, b, 20001)
    use3 = np.abs(d3(xs)) > np.abs(d2(xs))
    cuts = np.flatnonzero(np.diff(use3.astype(int))) + 1
    edges = [a] + [float(xs[c]) for c in cuts] + [b]
    flags = [bool(use3[0])] + [bool(use3[c]) for c in cuts]
    value, bound = 0j, 0.0
    pieces = []
    for (lo, hi), m3 in zip(zip(edges[:-1], edges[1:]), flags):
        m = 3 if m3 else 2
        r = van_der_corput_bound(phase, g, t, m, (lo, hi), n=n, amplitude="variation", dphase=d3 if m3 else d2)
        value += r.value
        bound += r.bound
        pieces.append((lo, hi, m, r.mu))
    if abs(value) > bound * (1 + 1e-9):
        raise ConsistencyError(f"|I(t)| = {abs(value):.3e} exceeds the summed bound {bound:.3e}")
    return value, bound, pieces


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    exponent: float
    stderr: float
    n_points: int
    residual: float
    envelope: bool

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "stderr": self.stderr,
            "n_points": self.n_points,
            "residual": self.residual,
            "envelope": self.envelope,
        }


def local_maxima(values) -> np.ndarray:
    v = np.asarray(values)
    idx = [i for i in range(1, len(v) - 1) if v[i] >= v[i - 1] and v[i] >= v[i + 1]]
    return np.array(idx, dtype=int)


def fit_decay(t, values, min_points=8, min_decades=1.2) -> FitResult:
    """Least-squares slope of log(value) against log(t) on the upper envelope.

    The envelope is the set of interior local maxima; with fewer than three
    of them the whole series is used.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < min_points:
        raise FitError(f"need at least {min_points} points, got {len(t)}")
    if np.any(t <= 0) or np.any(v <= 0):
        raise FitError("times and values must be positive")
    if np.log10(t.max() / t.min()) < min_decades:
        raise FitError(f"t must span at least {min_decades} decades")
    order = np.argsort(t)
    t, v = t[order], v[order]
    idx = local_maxima(v)
    env = len(idx) >= 3
    if not env:
        idx = np.arange(len(t))
    lt, lv = np.log(t[idx]), np.log(v[idx])
    if np.ptp(lv) == 0:
        return FitResult(0.0, 0.0, len(idx), 0.0, env)
    fit = linregress(lt, lv)
    resid = float(np.sqrt(np.mean((lv - (fit.intercept + fit.slope * lt)) ** 2)))
    return FitResult(float(fit.slope), float(fit.stderr), len(idx), resid, env)


def ratio_constant(results: DecayResults) -> float:
    """Smallest C with ratio(t) <= C <t>^{-1/3} over the recorded schedule."""
    return float(np.max(results.ratio * np.sqrt(1.0 + results.t.astype(float) ** 2) ** (1.0 / 3.0)))


def probe_states(seed=0, positions=(-2, -1, 0, 1, 2), n_random=3, radius=3):
    """Deltas at ``positions`` plus ``n_random`` l1-normalized random states on [-radius, radius]."""
    states = [SpinorField.delta((x, x), x, (1.0, 0.0)) for x in positions]
    rng = np.random.Generator(np.random.PCG64(seed))
    n = 2 * radius + 1
    for _ in range(n_random):
        v = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        u = SpinorField(-radius, v)
        states.append(u * (1.0 / l1_norm(u)))
    return states


def ratio_envelope(coin: CoinField, t_schedule=DEFAULT_SCHEDULE, states=None, seed=0, projection="continuous"):
    """Sup over probe states of ||U^t P u0||_inf / ||u0||_1 at each t, and the single constant C
    with ratio(t) <= C <t>^{-1/3} across the schedule."""
    states = probe_states(seed) if states is None else states
    ratios = []
    res = None
    for u0 in states:
        res = run_decay(DecayExperiment(coin, u0, tuple(t_schedule), projection=projection))
        ratios.append(res.ratio)
    sup = np.max(ratios, axis=0)
    env = DecayResults(res.t, sup, res.l2norm, sup, "direct", 0.0)
    return res.t, sup, ratio_constant(env)
