import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import A0, mixed_coin
from qwscatter.coin import CoinField, CoinPoint, free_field, single_defect
from qwscatter.dispersion import Branch, free_propagator_column, lambda_derivatives, lambda_of_xi
from qwscatter.dispersive import (
    DEFAULT_SCHEDULE,
    DecayExperiment,
    Projection,
    Route,
    direct_evolve,
    fit_decay,
    free_arc_project,
    kernel_evolve,
    local_maxima,
    probe_states,
    propagator_column,
    propagator_kernel,
    ratio_constant,
    ratio_envelope,
    run_decay,
    split_van_der_corput,
    substitution_residual,
    van_der_corput_bound,
    vdc_constant,
)
from qwscatter.errors import ConfigurationError, ConsistencyError, DomainError, FitError
from qwscatter.lattice import SpinorField, l1_norm, l2_norm, sup_norm
from qwscatter.scattering import continuous_projection


def delta(x=0, spinor=(1.0, 0.0)):
    return SpinorField.delta((x, x), x, spinor)


def strong_defect():
    return CoinField(A0, {0: CoinPoint(A0 - 0.5, 0.0)})


def test_schedule_and_errors(free):
    assert DEFAULT_SCHEDULE[0] == 100 and DEFAULT_SCHEDULE[-1] >= 2800
    assert list(DEFAULT_SCHEDULE) == sorted(set(DEFAULT_SCHEDULE))
    with pytest.raises(ConfigurationError):
        DecayExperiment(free, delta(), (5, 3))
    with pytest.raises(ValueError):
        DecayExperiment(free, delta(), (1, 2), route="sideways")


@pytest.mark.parametrize("coin", [free_field(A0), single_defect(A0, 0.2)], ids=["free", "defect"])
@pytest.mark.parametrize("t", [10, 30, 50])
def test_route_agreement(coin, t):
    u0 = SpinorField(-1, np.array([[0.3, 0.1j], [1.0, 0.0], [0.0, -0.5]]))
    a = direct_evolve(coin, u0, t)
    b = kernel_evolve(coin, u0, t)
    win = (min(a.x_min, b.x_min), max(a.x_max, b.x_max))
    assert np.max(np.abs(a.restrict(win).values - b.restrict(win).values)) < 1e-7


def test_route_agreement_single_arc(free):
    for proj in (Projection.UPPER, Projection.LOWER):
        a = direct_evolve(free, delta(), 20, proj)
        b = kernel_evolve(free, delta(), 20, proj)
        win = (min(a.x_min, b.x_min), max(a.x_max, b.x_max))
        assert np.max(np.abs(a.restrict(win).values - b.restrict(win).values)) < 1e-7


def test_kernel_variants_agree(mixed):
    xs = np.arange(-25, 26)
    a = propagator_column(mixed, 20, 1, xs, variant="direct")
    b = propagator_column(mixed, 20, 1, xs, variant="substituted")
    assert np.max(np.abs(a - b)) < 1e-9


def test_free_kernel_matches_free_propagator(free):
    xs = np.arange(-30, 31)
    for b in Branch:
        K = propagator_column(free, 25, 0, xs, b)
        K0 = free_propagator_column(25, 0, xs, A0, b)
        assert np.max(np.abs(K - K0)) < 1e-10
    k = propagator_kernel(free, 25, 3, 0, Branch.MINUS)
    assert np.allclose(k, free_propagator_column(25, 0, [3], A0, Branch.MINUS)[0], atol=1e-10)


def test_kernel_with_complex_beta(cbeta):
    u0 = delta(0)
    a = direct_evolve(cbeta, u0, 15)
    b = kernel_evolve(cbeta, u0, 15)
    # P_c leaves exponentially small bound-state tails outside the kernel window
    win = (max(a.x_min, b.x_min), min(a.x_max, b.x_max))
    assert np.max(np.abs(a.restrict(win).values - b.restrict(win).values)) < 1e-7


def test_kernel_route_with_bound_states():
    c = strong_defect()
    a = direct_evolve(c, delta(), 12)
    b = kernel_evolve(c, delta(), 12)
    win = (max(a.x_min, b.x_min), min(a.x_max, b.x_max))
    assert np.max(np.abs(a.restrict(win).values - b.restrict(win).values)) < 1e-7


@pytest.mark.parametrize("variant", ["y", "x"])
def test_substitution_identity(defect, mixed, variant):
    for c in (defect, mixed):
        for b in Branch:
            assert substitution_residual(c, n=256, branch=b, variant=variant) < 1e-9
    with pytest.raises(ConfigurationError):
        substitution_residual(defect, variant="z")


def test_fit_exact_power():
    t = np.geomspace(100, 3000, 20)
    r = fit_decay(t, 3 * t ** (-1 / 3))
    assert abs(r.exponent + 1 / 3) < 1e-12
    assert r.n_points == 20 and not r.envelope


def test_fit_oscillating_envelope():
    t = np.arange(100, 3001, dtype=float)
    r = fit_decay(t, t**-0.5 * (2 + np.sin(t)))
    assert r.envelope
    assert abs(r.exponent + 0.5) < 0.02


def test_fit_constant_and_errors():
    t = np.geomspace(10, 1000, 10)
    assert fit_decay(t, np.ones_like(t)).exponent == 0
    with pytest.raises(FitError):
        fit_decay(t[:5], t[:5])
    with pytest.raises(FitError):
        fit_decay(np.linspace(100, 200, 10), np.ones(10))
    with pytest.raises(FitError):
        fit_decay(t, -np.ones_like(t))
    d = fit_decay(t, t**-1.0).to_dict()
    assert set(d) >= {"exponent", "stderr", "n_points"}


def test_local_maxima():
    assert list(local_maxima([0, 2, 1, 3, 1, 0])) == [1, 3]


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 0.5), st.floats(0.01, 100.0))
def test_fit_recovers_power(p, c):
    t = np.geomspace(50, 5000, 12)
    assert abs(fit_decay(t, c * t**p).exponent - p) < 1e-9


def test_vdc_constants():
    assert vdc_constant(2) == 8 and vdc_constant(3) == 18


def test_vdc_quadratic_phase():
    for t in (1e2, 1e3, 1e4):
        r = van_der_corput_bound(lambda x: x**2 / 2, 1.0, t, 2)
        # stationary point: sqrt(2 pi / t) up to endpoint terms of order 1/t
        assert abs(abs(r.value) - np.sqrt(2 * np.pi / t)) < 3 / t
        assert abs(r.value) <= r.bound
        assert abs(r.mu - 1) < 1e-6


def test_vdc_amplitude_scaling():
    g = lambda x: 1 + 0.3 * x  # noqa: E731
    a = van_der_corput_bound(lambda x: x**2 / 2, g, 500.0, 2)
    b = van_der_corput_bound(lambda x: x**2 / 2, lambda x: 5 * g(x), 500.0, 2)
    assert abs(b.bound - 5 * a.bound) < 1e-12 * b.bound
    assert abs(b.value - 5 * a.value) < 1e-12


def test_vdc_cubic_caustic_rate():
    ts = np.geomspace(1e2, 1e4, 9)
    vals = [abs(van_der_corput_bound(lambda x: x**3, 1.0, t, 3, dphase=lambda x: 6 + 0 * x).value) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert abs(slope + 1 / 3) < 0.02


def test_vdc_domain_error():
    with pytest.raises(DomainError, match="split"):
        van_der_corput_bound(lambda x: x**3, 1.0, 100.0, 2)
    with pytest.raises(ConfigurationError):
        van_der_corput_bound(lambda x: x**2, 1.0, 100.0, 4)


def test_vdc_full_period_dispersion():
    lam = lambda x: lambda_of_xi(x, A0, Branch.MINUS).real  # noqa: E731
    d2 = lambda x: lambda_derivatives(x, A0, Branch.MINUS)[1].real  # noqa: E731
    d3 = lambda x: lambda_derivatives(x, A0, Branch.MINUS)[2].real  # noqa: E731
    with pytest.raises(DomainError):
        van_der_corput_bound(lam, 1.0, 200.0, 2, interval=(0.0, 2 * np.pi), dphase=d2)
    prev = None
    for t in (100.0, 1000.0):
        value, bound, pieces = split_van_der_corput(lam, d2, d3, lambda x: np.cos(x) + 2, t)
        assert abs(value) <= bound
        assert {p[2] for p in pieces} == {2, 3}
        if prev is not None:
            # the bound decays at least like t^{-1/3}
            assert bound <= prev * (t / 100.0) ** (-1 / 3) * (1 + 1e-12)
        prev = bound


def test_run_decay_free_l2_and_t0(free):
    exp = DecayExperiment(free, delta(), (0, 5, 40, 80), projection=Projection.UPPER)
    res = run_decay(exp)
    pu = free_arc_project(delta(), free, Branch.MINUS)
    assert abs(res.supnorm[0] - sup_norm(pu)) < 1e-12
    assert res.l2_drift < 1e-10
    assert abs(res.l2norm[0] - l2_norm(pu)) < 1e-12
    rows = list(res.rows())
    assert rows[1][0] == 5 and rows[0][4] == "direct"


def test_run_decay_continuous_projection():
    c = strong_defect()
    exp = DecayExperiment(c, delta(), (0, 10, 50, 100))
    res = run_decay(exp)
    P = continuous_projection(c)
    assert res.l2_drift < 1e-10
    big = delta().restrict((-200, 200))
    assert abs(res.l2norm[0] - l2_norm(P(big))) < 1e-12
    assert res.l2norm[0] < 1


def test_run_decay_both_routes(defect):
    res = run_decay(DecayExperiment(defect, delta(), (10, 30), route=Route.BOTH))
    assert res.route == "both" and res.route_difference < 1e-7
    res = run_decay(DecayExperiment(defect, delta(), (10, 30), route="kernel"))
    assert res.route == "kernel"


def test_run_decay_linearity(defect):
    sched = (0, 20, 60)
    a = run_decay(DecayExperiment(defect, delta(), sched))
    b = run_decay(DecayExperiment(defect, delta() * 2.0, sched))
    assert np.allclose(b.supnorm, 2 * a.supnorm, rtol=1e-12)
    assert np.allclose(b.ratio, a.ratio, rtol=1e-12)


def test_every_step_records_all(free):
    res = run_decay(DecayExperiment(free, delta(), (10, 30), every_step=True, projection="upper"))
    assert list(res.t) == list(range(10, 31))


def test_ratio_constant(defect):
    res = run_decay(DecayExperiment(defect, delta(), (0, 50, 200, 400)))
    C = ratio_constant(res)
    tb = np.sqrt(1 + res.t.astype(float) ** 2) ** (-1 / 3)
    assert np.all(res.ratio <= C * tb * (1 + 1e-12))
    assert np.isclose(np.max(res.ratio / tb), C)


def test_arc_projection_needs_free(defect):
    with pytest.raises(ConfigurationError):
        free_arc_project(delta(), defect, Branch.MINUS)


def test_arc_projections_sum_to_identity(free, rng):
    u = SpinorField(-4, rng.normal(size=(9, 2)) + 0j)
    a = free_arc_project(u, free, Branch.MINUS)
    b = free_arc_project(u, free, Branch.PLUS)
    s = (a + b).restrict(u.window)
    assert np.max(np.abs(s.values - u.values)) < 1e-12
    aa = free_arc_project(a, free, Branch.MINUS).restrict(a.window)
    assert np.max(np.abs(aa.values - a.values)) < 1e-10


@settings(max_examples=6, deadline=None)
@given(st.integers(-3, 3), st.complex_numbers(max_magnitude=1, allow_nan=False, allow_infinity=False))
def test_route_property(y, c):
    u0 = SpinorField(y, np.array([[1.0, c]]))
    coin = mixed_coin()
    a = direct_evolve(coin, u0, 8)
    b = kernel_evolve(coin, u0, 8)
    win = (max(a.x_min, b.x_min), min(a.x_max, b.x_max))
    assert np.max(np.abs(a.restrict(win).values - b.restrict(win).values)) < 1e-7


def test_route_mismatch_detected(monkeypatch, defect):
    import qwscatter.dispersive as d

    monkeypatch.setattr(d, "ROUTE_TOL", -1.0)
    with pytest.raises(ConsistencyError):
        run_decay(DecayExperiment(defect, delta(), (10,), route=Route.BOTH))


def test_vdc_dispersion_caustic():
    from scipy.optimize import brentq

    d = lambda x: lambda_derivatives(x, A0, Branch.MINUS)  # noqa: E731
    xs = np.linspace(0.05, np.pi - 0.05, 400)
    d2 = np.array([d(x)[1].real for x in xs])
    k = int(np.flatnonzero(np.diff(np.sign(d2)))[0])
    xs_star = brentq(lambda x: d(x)[1].real, xs[k], xs[k + 1], xtol=1e-14)
    v = -d(xs_star)[0].real
    phase = lambda x: lambda_of_xi(x, A0, Branch.MINUS).real + v * x  # noqa: E731
    d3 = lambda x: d(x)[2].real  # noqa: E731
    iv = (xs_star - 0.3, xs_star + 0.3)
    # a bump amplitude removes endpoint terms; the cubic regime needs t |phase'''| h^3 >> 1
    bump = lambda x: np.cos(np.pi * (x - xs_star) / 0.6) ** 2  # noqa: E731
    ts = np.geomspace(1e4, 1e6, 7)
    vals = [abs(van_der_corput_bound(phase, bump, t, 3, interval=iv, dphase=d3).value) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert abs(slope + 1 / 3) < 0.02


def test_ratio_envelope(defect):
    states = probe_states(seed=4)
    assert len(states) == 8
    assert all(abs(l1_norm(u) - 1) < 1e-12 for u in states)
    ts, sup, C = ratio_envelope(defect, (0, 20, 60, 120), states)
    tb = np.sqrt(1 + ts.astype(float) ** 2) ** (-1 / 3)
    assert np.all(sup <= C * tb * (1 + 1e-12))
    assert sup[-1] < sup[0]
