import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdpvfl.errors import InputError
from hdpvfl.glm import least_squares, logistic, make_penalty
from hdpvfl.privacy import (NO_PRIVACY, Hyperparams, delta2_ir_a, delta2_ir_b, delta_w_bound,
                            gaussian_sigma, gradient_error_bound, noise_scales, perturb,
                            step_size_limit, stream_rng, utility_bound)

mpmath.mp.dps = 30

# The worked configuration: e=2, r=2 (T=4), b=2, eta=0.1.
WORKED = Hyperparams(epsilon=1.0, delta=0.01, learning_rate=0.1, batch_size=2, epochs=2,
                     batches_per_epoch=2, clip_norm=1.0)


def _oracle_sigma(delta2, eps, delta):
    return mpmath.sqrt(2 * mpmath.log(mpmath.mpf(1.25) / mpmath.mpf(delta))) * delta2 / eps


class TestHyperparams:
    def test_iterations(self):
        assert WORKED.iterations == 4

    def test_full_batch_downgrade(self):
        h = Hyperparams(batch_size=3200).resolve(569)
        assert (h.batch_size, h.batches_per_epoch) == (569, 1)
        h = Hyperparams(batch_size=2).resolve(5)
        assert h.batches_per_epoch == 2

    @pytest.mark.parametrize("field,value", [("epochs", 0), ("epsilon", 0.0), ("delta", 1.0),
                                             ("clip_norm", 0.0), ("batch_size", 0),
                                             ("epsilon", float("nan"))])
    def test_rejects(self, field, value):
        with pytest.raises(InputError):
            Hyperparams(**{field: value})

    def test_dict_round_trip_with_infinite_budget(self):
        h = Hyperparams(epsilon=NO_PRIVACY)
        assert h.to_dict()["epsilon"] == "inf"
        assert Hyperparams.from_dict(h.to_dict()) == h


class TestSensitivities:
    def test_weight_bound_examples(self):
        h = Hyperparams(epochs=2, learning_rate=0.1, batch_size=4)
        assert delta_w_bound(h, 1.0) == pytest.approx(0.1, abs=1e-4)
        assert delta_w_bound(Hyperparams(epochs=7, learning_rate=0.0), 1.0) == 0.0
        assert delta_w_bound(Hyperparams(epochs=1, learning_rate=1.0, batch_size=1), 1.0) == 2.0

    def test_passive_examples(self):
        assert delta2_ir_b(Hyperparams(epochs=1, learning_rate=0.0, clip_norm=1.0), 1.0) == 2.0
        h = Hyperparams(epochs=2, batches_per_epoch=2, learning_rate=0.1, batch_size=2, clip_norm=0.5)
        assert delta2_ir_b(h, 1.0) == pytest.approx(math.sqrt(0.32 + 0.8 + 2), abs=1e-4)
        assert delta2_ir_b(h, 1.0) == pytest.approx(1.76635, abs=1e-4)

    def test_passive_vanishes_without_step_or_clip(self):
        # k must be positive for Hyperparams; evaluate the limit through tiny k.
        h = Hyperparams(epochs=3, learning_rate=0.0, clip_norm=1e-300)
        assert delta2_ir_b(h, 1.0) == pytest.approx(0.0, abs=1e-250)

    def test_active_examples(self):
        h0 = Hyperparams(epochs=1, learning_rate=0.0, clip_norm=1.0)
        assert delta2_ir_a(h0, logistic()) == pytest.approx(2.7, abs=1e-12)
        assert delta2_ir_a(WORKED, logistic()) == pytest.approx(math.sqrt(0.02 + 0.54 + 14.58), abs=1e-4)
        assert delta2_ir_a(WORKED, logistic()) == pytest.approx(3.8910, abs=1e-4)
        flat = logistic()
        degenerate = type(flat)("logistic", L=1.0, beta_theta=0.0, beta_y=0.0, k_y=1.0, beta=0.25)
        assert delta2_ir_a(WORKED, degenerate) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(e=st.integers(1, 20), r=st.integers(1, 5), b=st.integers(1, 100),
           eta=st.floats(1e-4, 2.0), k=st.floats(1e-3, 10.0))
    def test_monotone_in_epochs_and_clip(self, e, r, b, eta, k):
        h = Hyperparams(epochs=e, batches_per_epoch=r, batch_size=b, learning_rate=eta, clip_norm=k)
        bigger_e = Hyperparams(epochs=e + 1, batches_per_epoch=r, batch_size=b, learning_rate=eta, clip_norm=k)
        bigger_k = Hyperparams(epochs=e, batches_per_epoch=r, batch_size=b, learning_rate=eta, clip_norm=2 * k)
        for f in (lambda x: delta2_ir_b(x, 1.0), lambda x: delta2_ir_a(x, logistic())):
            assert f(bigger_e) > f(h)
            assert f(bigger_k) > f(h)


class TestGaussianSigma:
    def test_closed_form_against_oracle(self):
        assert gaussian_sigma(2.0, 1.0, 0.01) == pytest.approx(float(_oracle_sigma(2, 1, 0.01)), rel=1e-12)
        assert gaussian_sigma(2.0, 1.0, 0.01) == pytest.approx(2 * math.sqrt(2 * math.log(125)), rel=1e-12)

    def test_trivial_examples(self):
        assert gaussian_sigma(0.0, 0.5, 0.01) == 0.0
        assert gaussian_sigma(1.0, 2.0, 0.01) == pytest.approx(gaussian_sigma(1.0, 1.0, 0.01) / 2)

    def test_rejects(self):
        with pytest.raises(InputError):
            gaussian_sigma(1.0, 0.0, 0.01)
        with pytest.raises(InputError):
            gaussian_sigma(1.0, 1.0, 1.5)

    def test_noise_scales_zero_only_without_privacy(self):
        assert noise_scales(Hyperparams(epsilon=NO_PRIVACY), logistic()).sigma_ir_a == 0.0
        s = noise_scales(Hyperparams(epsilon=0.5), logistic())
        assert s.sigma_ir_a > 0 and s.sigma_ir_b > 0

    def test_large_budget_is_flagged(self, caplog):
        noise_scales(Hyperparams(epsilon=123.0), logistic())
        assert "outside the range" in caplog.text


class TestPerturb:
    def test_zero_sigma_copies(self):
        v = np.array([1.0, 2.0, 3.0])
        out = perturb(v, 0.0, stream_rng(0, "active_noise"))
        assert np.array_equal(out, v) and out is not v

    def test_sample_std(self):
        out = perturb(np.zeros(10**6), 3.1, stream_rng(7, "active_noise"))
        assert abs(out.std() / 3.1 - 1) < 0.01

    def test_deterministic(self):
        a = perturb(np.ones(5), 1.0, stream_rng(3, "passive_noise"))
        b = perturb(np.ones(5), 1.0, stream_rng(3, "passive_noise"))
        assert np.array_equal(a, b)

    def test_streams_are_independent(self):
        a = perturb(np.zeros(5), 1.0, stream_rng(3, "passive_noise"))
        b = perturb(np.zeros(5), 1.0, stream_rng(3, "active_noise"))
        assert not np.array_equal(a, b)


class TestBounds:
    def test_gradient_error_noiseless(self):
        assert gradient_error_bound(Hyperparams(epsilon=NO_PRIVACY), logistic()) == 0.0

    def test_gradient_error_scales_with_inverse_epsilon(self):
        a = gradient_error_bound(Hyperparams(epsilon=0.5), logistic())
        b = gradient_error_bound(Hyperparams(epsilon=1.0), logistic())
        assert a == pytest.approx(2 * b)

    def test_gradient_error_worked_expression(self):
        quarter = delta2_ir_a(WORKED, logistic()) ** 2 / 4
        assert quarter == pytest.approx(3.7850, abs=1e-4)
        expected = math.sqrt(math.log(125)) * math.sqrt(quarter)
        assert gradient_error_bound(WORKED, logistic()) == pytest.approx(expected, rel=1e-12)
        oracle = mpmath.sqrt(mpmath.log(125)) * mpmath.sqrt(mpmath.mpf("0.005") + mpmath.mpf("0.135")
                                                            + mpmath.mpf("3.645"))
        assert gradient_error_bound(WORKED, logistic()) == pytest.approx(float(oracle), rel=1e-12)

    def test_utility_noiseless_limit(self):
        h = Hyperparams(epsilon=NO_PRIVACY, epochs=2, batches_per_epoch=2)
        assert utility_bound(h, logistic()) == pytest.approx(1.0 * 0.25 / 4)

    def test_utility_composes_gradient_error(self):
        g = gradient_error_bound(WORKED, logistic())
        assert utility_bound(WORKED, logistic()) == pytest.approx((1 * 0.25 + 2 * 4 * g) ** 2, rel=1e-12)
        assert utility_bound(WORKED, logistic()) == pytest.approx(1186.7730, abs=1e-3)

    def test_utility_nonincreasing_in_epsilon(self):
        values = [utility_bound(Hyperparams(epsilon=eps), least_squares())
                  for eps in (0.1, 0.5, 1.0, 4.0, NO_PRIVACY)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_step_size_limit(self):
        assert step_size_limit(logistic()) == 8.0
        assert step_size_limit(logistic(), make_penalty("l2", 0.25)) == 4.0
