"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are also collected in
the ``acceptance`` section of the terminal summary.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_hermitian
from vspin import ManifoldParams, pi_doublet_positions, solve_manifold, synthesize_two_laser_map, zeeman_splitting
from vspin.dynamics import (Drive, EnsembleModel, LevelSystem, RateParams, build_rate_matrix, default_recovery_delays,
                            depletion_recovery_scan, depletion_vs_field, evolve, evolve_adaptive,
                            optical_splittings, simulate_hole_burning, simulate_ple_sweep, standard_recovery_sequence)
from vspin.fitting import (LineshapeTemplate, fit_biexponential, fit_hyperfine_from_map, fit_lorentzian,
                           fit_monoexponential, fit_zeeman_doublet, g_from_pi_slope, spin_temperature,
                           synthesize_features)
from vspin.fitting.hyperfine import excited_with
from vspin.hamiltonian import eigensystem
from vspin.spectra import LAMBDA, LAMBDA_STAR, PI, V, V_STAR

GOLDEN = Path(__file__).parent / "data" / "golden_map_4h.csv"
PI_SLOPE = (2.18 - 1.748) * 13.9962449


def test_eigensolver_accuracy(criterion):
    with criterion(1, "eigensolver residual, orthonormality, isotropic spectrum, < 10 s") as c:
        rng = np.random.default_rng(1)
        mats = [random_hermitian(rng, 16, scale=rng.uniform(0.1, 1e3)) for _ in range(1000)]
        t0 = time.perf_counter()
        worst_res = worst_orth = 0.0
        for H in mats:
            es = eigensystem(H)
            w, v = es.energies, es.states
            worst_res = max(worst_res, np.linalg.norm(H @ v - v * w) / np.linalg.norm(H))
            worst_orth = max(worst_orth, np.abs(v.conj().T @ v - np.eye(16)).max())
        elapsed = time.perf_counter() - t0
        worst_iso = 0.0
        for a in (1.0, 232.0, -213.0):
            w = np.sort(solve_manifold(ManifoldParams(2.0, a), 0.0).energies)
            ref = np.sort([1.75 * a] * 9 + [-2.25 * a] * 7)
            worst_iso = max(worst_iso, np.abs(w - ref).max() / abs(a))
        c.detail = f"res {worst_res:.1e}, orth {worst_orth:.1e}, iso {worst_iso:.1e}, {elapsed:.1f} s"
        assert worst_res <= 1e-9 and worst_orth <= 1e-10 and worst_iso <= 1e-8
        assert elapsed < 10


def test_ground_zeeman_anchor(criterion, model4h):
    with criterion(2, "4H ground splitting at 490 mT = 11988 MHz +- 1%") as c:
        z = zeeman_splitting(model4h.ground, 490.0)
        c.detail = f"{z:.1f} MHz"
        assert z == pytest.approx(11988.0, rel=0.01)


def test_pi_slope(criterion, model4h):
    with criterion(3, "Pi slope 6.046 MHz/mT within 2%, g_e = 2.18 +- 0.02, < 5 s") as c:
        t0 = time.perf_counter()
        pts = np.array(pi_doublet_positions(model4h, np.linspace(50, 500, 19)))
        slope = np.polyfit(pts[:, 0], pts[:, 1], 1)[0]
        g = g_from_pi_slope(pts, 1.748)
        elapsed = time.perf_counter() - t0
        c.detail = f"slope {slope:.4f}, g {g:.4f}, {elapsed:.2f} s"
        assert slope == pytest.approx(PI_SLOPE, rel=0.02)
        assert g == pytest.approx(2.18, abs=0.02)
        assert elapsed < 5


@pytest.mark.parametrize("factor", [0.8, 1.2])
def test_hyperfine_round_trip(criterion, model4h, factor):
    with criterion(4, f"hyperfine round trip from x{factor} start, < 60 s") as c:
        t0 = time.perf_counter()
        ex = model4h.excited
        start = excited_with(ex, ex.A_tensor[0, 2] * factor, ex.A_tensor[2, 2] * factor, ex.g_tensor[2, 2] * factor)
        res = fit_hyperfine_from_map(synthesize_features(model4h), (model4h.ground, start))
        elapsed = time.perf_counter() - t0
        c.detail = f"A_xz {res['A_xz']:.2f}, A_zz {res['A_zz']:.2f}, {elapsed:.1f} s"
        assert res["A_xz"] == pytest.approx(75.0, abs=4)
        assert res["A_zz"] == pytest.approx(-213.0, abs=4)
        assert elapsed < 60


def test_map_synthesis(criterion, model4h):
    with criterion(5, "default 200x300 map < 60 s, sign rule, golden CSV stable") as c:
        t0 = time.perf_counter()
        m = synthesize_two_laser_map(model4h)
        elapsed = time.perf_counter() - t0
        assert m.intensity.shape == (200, 300)
        assert (m.field_axis[0], m.field_axis[-1], m.detuning_axis[0], m.detuning_axis[-1]) == (0, 61, 0, 1499)
        again = synthesize_two_laser_map(model4h)
        assert np.array_equal(m.intensity, again.intensity)

        fields = np.linspace(0.0, 61.0, 25)
        bright = synthesize_two_laser_map(model4h, fields, families=(LAMBDA, LAMBDA_STAR, PI))
        dark = synthesize_two_laser_map(model4h, fields, families=(V, V_STAR))
        assert bright.intensity.min() >= 0 and dark.intensity.max() <= 0

        golden = np.loadtxt(GOLDEN, delimiter=",", skiprows=1)
        g = synthesize_two_laser_map(model4h, np.linspace(0.0, 61.0, 13), np.linspace(0.0, 1499.0, 60))
        got = np.array([(b, d, g.intensity[i, j]) for i, b in enumerate(g.field_axis)
                        for j, d in enumerate(g.detuning_axis)])
        c.detail = f"{elapsed:.1f} s, golden max dev {np.abs(got - golden).max():.1e}"
        np.testing.assert_allclose(got, golden, rtol=0, atol=1e-9)
        assert elapsed < 60


def test_dynamics_conservation(criterion):
    with criterion(6, "population conserved over 1e6 fastest timescales, expm vs adaptive 1e-8") as c:
        p = RateParams()
        M = build_rate_matrix(p, Drive.on("down", 2e6), green_rate=0.0)
        fastest = 1.0 / np.abs(np.diag(M)).max()
        s = LevelSystem.mixed()
        step = 1e6 * fastest / 1000
        drift = 0.0
        for _ in range(1000):
            s, _ = evolve(s, M, step, p=p)
            drift = max(drift, abs(s.populations.sum() - 1))
        worst = 0.0
        for duration in (1e-7, 2e-4, 0.1, 30.0):
            a, _ = evolve(LevelSystem.mixed(), M, duration, p=p)
            b, _ = evolve_adaptive(LevelSystem.mixed(), M, duration, p=p)
            worst = max(worst, np.abs(a.populations - b.populations).max())
        c.detail = f"drift {drift:.1e}, expm/adaptive {worst:.1e}"
        assert drift < 1e-9 and worst <= 1e-8


def test_biexponential_pipeline(criterion):
    with criterion(7, "recovery fit Gamma_0 = 100/s, Gamma_1 = 0.04/s within 5% at 2% noise") as c:
        curve = depletion_recovery_scan(default_recovery_delays())
        fits = []
        for child in np.random.SeedSequence(20240601).spawn(5):
            noise = 0.02 * np.random.default_rng(child).standard_normal(curve.tau.size)
            fits.append(fit_biexponential(curve.tau, curve.recovered_fraction + noise))
        g0 = np.array([f["Gamma_0"] for f in fits])
        g1 = np.array([f["Gamma_1"] for f in fits])
        long = depletion_recovery_scan(np.geomspace(1e-3, 300, 120), standard_recovery_sequence(1.0, pump_duration=0.1))
        mono = fit_monoexponential(long)
        c.detail = f"G0 {g0.min():.2f}..{g0.max():.2f}, G1 {g1.min():.4f}..{g1.max():.4f} over 5 seeds, " \
                   f"100 ms pump mono {mono['Gamma']:.4f}"
        assert np.all(np.abs(g0 / 100 - 1) < 0.05)
        assert np.all(np.abs(g1 / 0.04 - 1) < 0.05)
        assert mono["Gamma"] == pytest.approx(0.04, rel=0.05)


def test_depletion(criterion, model4h, model6h):
    with criterion(8, "PLE contrast > 90% at 490 mT, Lorentzian HWHM 0.8/0.6 GHz within 10%") as c:
        e = EnsembleModel.gaussian(model=model4h)
        s0, s1 = simulate_ple_sweep(e, 0.0), simulate_ple_sweep(e, 490.0)
        contrast = 1 - s1.signal.sum() / s0.signal.sum()
        hw = {}
        for name, model, fwhm in (("4H", model4h, 1.6), ("6H", model6h, 1.2)):
            B, dep = depletion_vs_field(model, fields=np.arange(0.0, 500.0, 10.0), single_spin_fwhm=fwhm)
            hw[name] = fit_lorentzian(B, dep, model=model)["hwhm_MHz"] / 1e3
        c.detail = f"contrast {contrast:.3f}, HWHM 4H {hw['4H']:.3f} GHz, 6H {hw['6H']:.3f} GHz"
        assert contrast > 0.9
        assert hw["4H"] == pytest.approx(0.8, rel=0.1)
        assert hw["6H"] == pytest.approx(0.6, rel=0.1)


def test_spin_temperature(criterion, model4h):
    with criterion(9, "spin temperature 230 +- 10 mK from ratio 0.082 at 11988 MHz") as c:
        direct = spin_temperature(0.082, 11988.0)
        # doublet recovered from a simulated 490 mT PLE spectrum at 230 mK
        zg, _ = optical_splittings(model4h, 490.0)
        e = EnsembleModel.gaussian(1000.0, model4h, n=241)
        p = RateParams(temperature=0.230)
        s0 = simulate_ple_sweep(e, 0.0, p, green=True)
        s1 = simulate_ple_sweep(e, 490.0, p, green=True, laser_grid=np.linspace(-3500, 3500, 281))
        res = fit_zeeman_doublet(s1.detuning, LineshapeTemplate(s0.detuning, s0.signal), s1.signal / s0.signal.max())
        lo, hi = sorted([abs(res["A_low"]), abs(res["A_high"])])
        simulated = spin_temperature(lo / hi, zg)
        c.detail = f"arithmetic {1e3 * direct:.1f} mK, simulated doublet {1e3 * simulated:.1f} mK"
        assert direct == pytest.approx(0.230, abs=0.010)
        assert simulated == pytest.approx(0.230, abs=0.010)


def test_hole_burning(criterion, model4h):
    with criterion(10, "hole FWHM 2-6 GHz, depth <= 80%, monotone in pump, green restore < 1e-6") as c:
        e = EnsembleModel.gaussian(model=model4h)
        h1 = simulate_hole_burning(e, duration=60.0)
        h2 = simulate_hole_burning(e, duration=60.0, pump_rate=2 * 1.6e6)
        dev = np.abs(h1.restore() - h1.before).max() / h1.before.max()
        c.detail = f"FWHM {h1.width / 1e3:.2f} GHz, depth {h1.depth:.3f}, x2 pump {h2.width / 1e3:.2f} GHz " \
                   f"{h2.depth:.3f}, restore {dev:.1e}"
        assert 2000 <= h1.width <= 6000 and h1.depth <= 0.8
        assert h2.width >= h1.width and h2.depth >= h1.depth
        assert dev < 1e-6
