import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from vspin.dynamics import (Drive, EnsembleModel, LevelSystem, PulseSequence, RateParams, Segment,
                            build_rate_matrix, default_recovery_delays, depletion_recovery_scan, depletion_vs_field,
                            evolve, evolve_adaptive, expm, propagators, simulate_hole_burning, simulate_ple_sweep,
                            simulate_sequence, standard_recovery_sequence)
from vspin.dynamics.rates import E_DOWN, E_UP, G_DOWN, G_UP, IONIZED, SHELF, relaxation_rates
from vspin.errors import IntegrationError, InvalidParameterError, OutOfRangeError
from vspin.fitting import fit_biexponential, fit_monoexponential

rates = st.floats(0, 1e7)
params = st.builds(RateParams, Gamma_opt=st.floats(1e5, 1e8), beta_flip=st.floats(0, 1), Gamma_1=st.floats(0, 10),
                   Gamma_0=st.floats(0, 1e4), shelf_in=st.floats(0, 1e6), kappa_ion=st.floats(0, 1e-3),
                   green_reset_rate=st.floats(0, 1e6))
drives = st.builds(Drive, st.floats(0, 1e7), st.floats(0, 1), st.floats(0, 1))
states = st.lists(st.floats(0, 1), min_size=6, max_size=6).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: LevelSystem(np.array(v) / np.sum(v)))


def quiet(**kw):
    base = dict(Gamma_opt=0.0, beta_flip=0.0, Gamma_1=0.0, Gamma_0=0.0, shelf_in=0.0, kappa_ion=0.0,
                green_reset_rate=0.0)
    base.update(kw)
    return RateParams(**base)


# ---------------------------------------------------------------------------
# generator


@given(params, drives, st.floats(0, 2e4), st.floats(0, 1e6))
def test_generator_columns_sum_to_zero(p, drive, split, green):
    M = build_rate_matrix(p, drive, split, green)
    assert np.abs(M.sum(axis=0)).max() <= 1e-9 * max(1.0, np.abs(M).max())
    off = M - np.diag(np.diag(M))
    assert off.min() >= 0


def test_all_zero_rates_give_zero_matrix():
    assert np.count_nonzero(build_rate_matrix(quiet(linewidth_fwhm=1.0))) == 0


def test_negative_rate_rejected():
    with pytest.raises(InvalidParameterError):
        RateParams(Gamma_1=-1.0)
    with pytest.raises(InvalidParameterError):
        RateParams(beta_flip=1.5)
    with pytest.raises(InvalidParameterError):
        build_rate_matrix(RateParams(), Drive(-1.0, 1.0, 0.0))


def test_pump_without_flip_leaves_up_invariant():
    p = quiet(Gamma_opt=6e6)
    M = build_rate_matrix(p, Drive.on("down", 1e6))
    out, _ = evolve(LevelSystem([0.3, 0.7, 0, 0, 0, 0]), M, 1e-3, p=p)
    assert out[G_UP] == pytest.approx(0.7, abs=1e-12)


def test_pump_with_flip_depletes_completely():
    p = quiet(Gamma_opt=6e6, beta_flip=0.05)
    M = build_rate_matrix(p, Drive.on("down", 1e6))
    out, _ = evolve(LevelSystem.mixed(), M, 1.0, p=p)
    assert out[G_UP] == pytest.approx(1.0, abs=1e-9)
    # oracle: the null vector of the generator
    w, v = np.linalg.eig(M)
    ss = np.real(v[:, np.argmin(np.abs(w))])
    np.testing.assert_allclose(ss / ss.sum(), out.populations, atol=1e-9)


def test_detailed_balance():
    p = RateParams(temperature=0.23)
    k_up, k_down = relaxation_rates(p, 11988.1)
    assert k_up + k_down == pytest.approx(p.Gamma_1)
    assert k_up / k_down == pytest.approx(np.exp(-11988.1 / (20836.619 * 0.23)))
    sym = relaxation_rates(RateParams(), 11988.1)
    assert sym[0] == sym[1]


def test_dark_steady_state_symmetric():
    p = RateParams()
    M = build_rate_matrix(p)
    out, _ = evolve(LevelSystem([1, 0, 0, 0, 0, 0]), M, 2000.0, p=p)
    assert out[G_DOWN] == pytest.approx(out[G_UP], abs=1e-9)


# ---------------------------------------------------------------------------
# propagation


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 50))
def test_expm_matches_scipy(seed, scale):
    A = np.random.default_rng(seed).standard_normal((6, 6)) * scale
    ref = scipy.linalg.expm(A)
    np.testing.assert_allclose(expm(A), ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_expm_batched():
    A = np.random.default_rng(0).standard_normal((5, 4, 4))
    np.testing.assert_allclose(expm(A), np.stack([scipy.linalg.expm(a) for a in A]), rtol=1e-11, atol=1e-13)


def test_integrated_propagator():
    M = build_rate_matrix(RateParams(), Drive.on("down", 1e6))
    dt = 3e-6
    _, psi = propagators(M, dt)
    ts = np.linspace(0, dt, 4001)
    ref = scipy.integrate.trapezoid(np.stack([scipy.linalg.expm(M * t) for t in ts]), ts, axis=0)
    np.testing.assert_allclose(psi, ref, atol=1e-12)


def test_zero_generator_keeps_state():
    s = LevelSystem([0.2, 0.3, 0.1, 0.1, 0.2, 0.1])
    out, counts = evolve(s, np.zeros((6, 6)), 10.0)
    np.testing.assert_array_equal(out.populations, s.populations)


def test_pure_decay_closed_form():
    G, beta, t = 6e6, 0.02, 2e-7
    p = quiet(Gamma_opt=G, beta_flip=beta)
    out, counts = evolve(LevelSystem([0, 0, 1, 0, 0, 0]), build_rate_matrix(p), t, p=p)
    assert out[E_DOWN] == pytest.approx(np.exp(-G * t), rel=1e-12)
    # photon count = rate integral = (1 - beta)(1 - exp(-G t))
    assert counts.sum() == pytest.approx((1 - beta) * (1 - np.exp(-G * t)), rel=1e-12)


def test_conservation_over_million_fast_timescales():
    p = RateParams()
    M = build_rate_matrix(p, Drive.on("down", 2e6), green_rate=0.0)
    fastest = 1.0 / np.abs(np.diag(M)).max()
    s = LevelSystem.mixed()
    n, step = 1000, 1e6 * fastest / 1000
    for _ in range(n):
        s, _ = evolve(s, M, step, p=p)
        assert abs(s.populations.sum() - 1) < 1e-9
        assert s.populations.min() >= -1e-12


@given(params, drives, states, st.floats(1e-9, 10))
def test_positivity_and_conservation(p, drive, s, t):
    out, counts = evolve(s, build_rate_matrix(p, drive), t, bins=3, p=p)
    assert abs(out.total - 1) < 1e-9
    assert out.populations.min() >= -1e-12
    assert counts.min() >= -1e-9


@pytest.mark.parametrize("duration", [1e-7, 2e-4, 0.1, 30.0])
def test_expm_against_adaptive(duration):
    p = RateParams()
    M = build_rate_matrix(p, Drive.on("down", 2e6))
    s0 = LevelSystem.mixed()
    a, ca = evolve(s0, M, duration, p=p)
    b, cb = evolve_adaptive(s0, M, duration, p=p)
    np.testing.assert_allclose(a.populations, b.populations, atol=1e-8)
    assert ca.sum() == pytest.approx(cb, rel=1e-8)


def test_adaptive_failure_reported(monkeypatch):
    from types import SimpleNamespace

    from vspin.dynamics import rates as rates_mod
    fake = SimpleNamespace(success=False, t=np.array([0.0, 1e-3]), message="step size collapsed", y=None)
    monkeypatch.setattr(rates_mod, "solve_ivp", lambda *a, **k: fake)
    with pytest.raises(IntegrationError, match="step size"):
        evolve_adaptive(LevelSystem.mixed(), build_rate_matrix(RateParams()), 1.0)


def test_propagators_against_high_precision():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    M = build_rate_matrix(RateParams(), Drive.on("down", 2e6))
    for t in (1e-6, 1.0, 3600.0):
        phi, _ = propagators(M, t)
        ref = np.array(mpmath.expm(mpmath.matrix(M * t)).tolist(), dtype=float)
        assert np.abs(phi - ref).max() < 1e-13


def test_level_system_validation():
    with pytest.raises(InvalidParameterError):
        LevelSystem([0.5, 0.5, 0.1, 0, 0, 0])
    with pytest.raises(InvalidParameterError):
        LevelSystem([1.1, -0.1, 0, 0, 0, 0])
    assert LevelSystem.thermal(0.0, 0.2)["g_down"] == 0.5


# ---------------------------------------------------------------------------
# sequences


def test_sequence_json_round_trip():
    seq = standard_recovery_sequence(0.01)
    back = PulseSequence.from_json(json.dumps(seq.to_dict()))
    assert back == seq
    with pytest.raises(InvalidParameterError):
        PulseSequence.from_dict({"segments": [], "typo": 1})


def test_segment_validation():
    with pytest.raises(InvalidParameterError):
        Segment("wait", 0.0)
    with pytest.raises(InvalidParameterError):
        Segment("laser", 1.0)


def test_infinite_wait_full_recovery():
    exact = depletion_recovery_scan([0.0, 2000.0], p=RateParams(kappa_ion=0.0))
    assert exact.recovered_fraction[-1] == pytest.approx(1.0, abs=1e-9)
    # the pump pulse ionizes a small fraction that the dark wait cannot bring back
    curve = depletion_recovery_scan([0.0, 2000.0])
    assert curve.recovered_fraction[-1] == pytest.approx(1.0, abs=1e-3)
    assert curve.recovered_fraction[0] < 0.2


def test_recovery_monotone_without_shelf():
    p = RateParams(shelf_in=0.0)
    curve = depletion_recovery_scan(np.geomspace(1e-4, 300, 60), p=p)
    assert np.all(np.diff(curve.recovered_fraction) >= -1e-12)


def test_slow_channel_one_over_e():
    p = RateParams(shelf_in=0.0)
    r0, r = depletion_recovery_scan([0.0, 25.0], p=p).recovered_fraction
    assert (r - r0) / (1 - r0) == pytest.approx(1 - np.exp(-1), abs=0.005)


def test_biexponential_emergence():
    curve = depletion_recovery_scan(default_recovery_delays())
    bi = fit_biexponential(curve)
    mono = fit_monoexponential(curve)
    assert mono.residual_norm / bi.residual_norm > 10
    assert bi["Gamma_0"] == pytest.approx(100, rel=0.05)
    assert bi["Gamma_1"] == pytest.approx(0.04, rel=0.05)


def test_long_pump_mono_exponential():
    tmpl = standard_recovery_sequence(1.0, pump_duration=0.1)
    curve = depletion_recovery_scan(np.geomspace(1e-3, 300, 120), tmpl)
    assert fit_monoexponential(curve)["Gamma"] == pytest.approx(0.04, rel=0.05)


def test_sequence_trace_and_totals():
    seq = standard_recovery_sequence(0.0).replace(
        segments=tuple(Segment(s.kind, s.duration, s.pump_rate, bins=5) for s in standard_recovery_sequence(0.0).segments))
    res = simulate_sequence(seq)
    t, f = res.trace()
    assert t.size == f.size == 15 and np.all(np.diff(t) > 0)
    assert res.totals("probe")[0] < res.totals("resonant")[0]


# ---------------------------------------------------------------------------
# ensembles


def test_ensemble_weights_normalized():
    e = EnsembleModel.gaussian(100.0, n=11)
    assert e.weights.sum() == pytest.approx(1.0)
    with pytest.raises(InvalidParameterError):
        EnsembleModel([0, 1], [-1, 2])


def test_ensemble_from_csv(tmp_path):
    f = tmp_path / "lineshape.csv"
    f.write_text("detuning_MHz,signal\n-1,0.1\n0,1\n1,0.2\n")
    e = EnsembleModel.from_csv(f)
    np.testing.assert_allclose(e.weights, np.array([0.1, 1, 0.2]) / 1.3)


def test_zero_field_weak_pump_follows_weights(model4h):
    e = EnsembleModel.gaussian(2500.0, model4h, n=81)
    s = simulate_ple_sweep(e, 0.0, pump_rate=1.0, laser_grid=e.detuning,
                           p=RateParams(linewidth_fwhm=1.0))
    np.testing.assert_allclose(s.signal / s.signal.max(), e.weights / e.weights.max(), atol=1e-3)


def test_high_field_depletion_contrast(model4h):
    e = EnsembleModel.gaussian(model=model4h)
    s0 = simulate_ple_sweep(e, 0.0)
    s1 = simulate_ple_sweep(e, 490.0)
    assert 1 - s1.signal.sum() / s0.signal.sum() > 0.9
    assert s1.signal.max() < 0.1 * s0.signal.max()


def test_hole_burning_band_and_monotonicity(model4h):
    e = EnsembleModel.gaussian(model=model4h)
    h1 = simulate_hole_burning(e)
    h2 = simulate_hole_burning(e, pump_rate=2 * 1.6e6)
    assert 2000 <= h1.width <= 6000 and h1.depth <= 0.8
    assert h2.width >= h1.width and h2.depth >= h1.depth


def test_hole_persistence_and_restore(model4h):
    e = EnsembleModel.gaussian(model=model4h)
    h = simulate_hole_burning(e)
    dark, _ = h.evolve(3600.0)
    np.testing.assert_allclose(dark, h.after, atol=1e-12)
    np.testing.assert_allclose(h.restore(), h.before, atol=1e-6 * h.before.max())


def test_zero_duration_burn(model4h):
    e = EnsembleModel.gaussian(model=model4h, n=41)
    h = simulate_hole_burning(e, duration=0.0)
    np.testing.assert_array_equal(h.before, h.after)


def test_burn_outside_grid(model4h):
    e = EnsembleModel.gaussian(model=model4h, n=41)
    with pytest.raises(OutOfRangeError):
        simulate_hole_burning(e, burn_detuning=1e6)


def test_depletion_vs_field_anchors(model4h):
    B, dep = depletion_vs_field(model4h, fields=[0.0, 132.3, 490.0])
    assert dep[0] == pytest.approx(0.0, abs=1e-12)
    assert dep[1] == pytest.approx(0.5, abs=0.01)
    assert dep[2] > 0.8


def test_constant_level_indices():
    assert (G_DOWN, G_UP, E_DOWN, E_UP, SHELF, IONIZED) == tuple(range(6))
