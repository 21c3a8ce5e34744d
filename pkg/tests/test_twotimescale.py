import math

import numpy as np
import pytest

from spectrascan.twotimescale import (
    ConfigurationError,
    NoisyTrajectory,
    PhiSpec,
    SimParams,
    check_predictions,
    default_alpha_star,
    default_phi,
    simulate,
)


class TestDefaultPhi:
    SPEC = PhiSpec(tau_per_layer=100.0, width=25.0)

    def test_midpoint(self):
        for l in range(5):
            assert default_phi(l, 100.0 * l, self.SPEC) == pytest.approx(0.5)

    def test_saturates(self):
        assert default_phi(0, 1e6, self.SPEC) == pytest.approx(1.0)
        assert default_phi(10, -1e6, self.SPEC) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_in_time_and_layer(self):
        ts = np.linspace(0, 1000, 50)
        for l in (0, 3, 7):
            vals = [default_phi(l, t, self.SPEC) for t in ts]
            assert all(a <= b for a, b in zip(vals, vals[1:]))
        for t in (0.0, 250.0, 900.0):
            vals = [default_phi(l, t, self.SPEC) for l in range(8)]
            assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_narrow_width_approaches_step(self):
        spec = PhiSpec(tau_per_layer=100.0, width=1e-6)
        for l in range(4):
            for t in (100.0 * l - 1.0, 100.0 * l + 1.0):
                hard = 1.0 if t > 100.0 * l else 0.0
                assert default_phi(l, t, spec) == pytest.approx(hard, abs=1e-9)


class TestDefaultAlphaStar:
    def test_symmetric_tent(self):
        prof = default_alpha_star(3, 0.5, 0.2, 0.5)
        assert prof == {0: pytest.approx(0.2), 1: pytest.approx(0.5), 2: pytest.approx(0.2)}

    def test_peak_ratio_zero_is_monotone_decreasing(self):
        prof = default_alpha_star(6, 0.0, 0.1, 0.6)
        vals = [prof[l] for l in range(6)]
        assert vals[0] == pytest.approx(0.6)
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(0.1)

    def test_deep_model_endpoint_values(self):
        prof = default_alpha_star(16, 0.13, 0.256, 0.567)
        assert max(prof, key=prof.get) == 2
        assert prof[2] == pytest.approx(0.567)
        assert prof[0] == pytest.approx(0.256)
        assert prof[15] == pytest.approx(0.256)


def default_params(**kw):
    base = dict(
        L=8,
        steps=5000,
        dt=1.0,
        lambda_R=0.05,
        lambda_alpha=0.002,
        R_star=15.0,
        phi_spec=PhiSpec(tau_per_layer=100.0, width=25.0),
        seed=3,
    )
    base.update(kw)
    return SimParams(**base)


class TestSimulate:
    def test_frozen_fast_dynamics(self):
        p = default_params(lambda_R=0.0, steps=200)
        traj = simulate(p)
        assert np.allclose(traj.R, traj.R[0])

    def test_frozen_slow_dynamics(self):
        p = default_params(lambda_alpha=0.0, steps=200)
        traj = simulate(p)
        assert np.allclose(traj.alpha, traj.alpha[0])

    def test_against_reference_euler(self):
        # independent explicit-Euler loop with the identical noise stream
        p = default_params(steps=500, noise_sigma_R=0.3, noise_sigma_alpha=0.001)
        traj = simulate(p)
        rng = np.random.default_rng(p.seed)
        L = p.L
        R = np.array([p.R_init[l] for l in range(L)])
        A = np.array([p.alpha_init[l] for l in range(L)])
        star = np.array([p.alpha_star[l] for l in range(L)])
        for i in range(p.steps):
            t = i * p.dt
            phi = np.array([default_phi(l, t, p.phi_spec) for l in range(L)])
            R = R + p.dt * (-p.lambda_R * phi * (R - p.R_star))
            A = A + p.dt * (p.lambda_alpha * (star - A))
            R = R + p.noise_sigma_R * math.sqrt(p.dt) * rng.standard_normal(L)
            A = A + p.noise_sigma_alpha * math.sqrt(p.dt) * rng.standard_normal(L)
        assert np.max(np.abs(traj.R[-1] - R)) < 1e-10
        assert np.max(np.abs(traj.alpha[-1] - A)) < 1e-10

    def test_deterministic_for_seed(self):
        p1 = default_params(noise_sigma_R=0.5, steps=300)
        p2 = default_params(noise_sigma_R=0.5, steps=300)
        t1, t2 = simulate(p1), simulate(p2)
        assert np.array_equal(t1.R, t2.R)
        assert np.array_equal(t1.alpha, t2.alpha)

    def test_exponential_decay_closed_form(self):
        # phi == 1 everywhere (t >> 0, tau = 0): R follows the exact exponential
        p = default_params(
            steps=5000,
            dt=0.02,
            lambda_R=0.05,
            phi_spec=PhiSpec(tau_per_layer=-1.0, width=1e-3),  # phi exactly 1 from t=0
        )
        traj = simulate(p)
        t = traj.times
        exact = p.R_star + (130.0 - p.R_star) * np.exp(-p.lambda_R * t)
        rel = np.abs(traj.R[:, 0] - exact) / exact
        assert np.max(rel) < 1e-3

    def test_stability_guard(self):
        with pytest.raises(ConfigurationError):
            simulate(default_params(dt=50.0, lambda_R=0.05))

    def test_premise_violation_is_warning_not_error(self):
        p = default_params(lambda_R=0.001, lambda_alpha=0.01, steps=10)
        notes = p.validate()
        assert any("timescale" in n for n in notes)
        simulate(p)  # still integrates


class TestCheckPredictions:
    def test_defaults_all_true(self):
        p = default_params()
        report = check_predictions(simulate(p), p)
        assert report.all_true, report.evidence

    def test_rejects_noisy(self):
        p = default_params(noise_sigma_R=0.1, steps=100)
        with pytest.raises(NoisyTrajectory):
            check_predictions(simulate(p), p)

    def test_no_wave_flagged(self):
        p = default_params(phi_spec=PhiSpec(tau_per_layer=0.0, width=25.0))
        report = check_predictions(simulate(p), p)
        assert report.forward_wave
        assert any("no wave" in f for f in report.flags)

    def test_constant_alpha_star_flagged(self):
        p = default_params(alpha_star={l: 0.3 for l in range(8)})
        report = check_predictions(simulate(p), p)
        assert any("absent by construction" in f for f in report.flags)
        assert report.evidence["final_alpha_spread"] < 1e-6

    @pytest.mark.parametrize("ratio", [10, 50, 100])
    def test_spread_monotone_across_timescale_ratios(self, ratio):
        lam_a = 0.05 / ratio
        # run long enough for alpha to equilibrate (lambda_alpha * T >= 5)
        p = default_params(lambda_R=0.05, lambda_alpha=lam_a, steps=max(5000, math.ceil(5 / lam_a)))
        report = check_predictions(simulate(p), p)
        assert report.evidence["alpha_spread_nondecreasing"]
        assert report.persistent_alpha_gradient, report.evidence

    def test_timescale_ordering(self):
        # with the gate fully open, stable rank closes half its distance to
        # equilibrium long before alpha does (ln2/lambda_R << ln2/lambda_alpha)
        p = default_params(phi_spec=PhiSpec(tau_per_layer=-1.0, width=1e-3))
        traj = simulate(p)
        dist_r = np.abs(traj.R[:, 0] - p.R_star)
        half_r = int(np.argmax(dist_r <= dist_r[0] / 2))
        star0 = p.alpha_star[0]
        dist_a = np.abs(traj.alpha[:, 0] - star0)
        half_a = int(np.argmax(dist_a <= dist_a[0] / 2))
        assert 0 < half_r < half_a
        assert half_r == pytest.approx(math.log(2) / p.lambda_R, abs=2)
        assert half_a == pytest.approx(math.log(2) / p.lambda_alpha, abs=2)
