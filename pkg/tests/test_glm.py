import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdpvfl.errors import InputError
from hdpvfl.glm import (EdfFamily, LossSpec, apply_penalty, dl_dtheta, edf_beta_theta,
                        exp_dispersion, l2_svm, least_squares, logistic, loss_value, make_loss,
                        make_penalty, soft_threshold)


class TestLossConstants:
    def test_builtin_constants(self):
        for spec, consts in [(logistic(), (1, 0.25, 1.1, 1)),
                             (least_squares(), (6, 2, 2, 3)),
                             (l2_svm(), (2, 2, 2, 1))]:
            assert (spec.L, spec.beta_theta, spec.beta_y, spec.k_y) == consts

    def test_edf_constants_follow_dispersion(self):
        spec = exp_dispersion("normal", phi=2.0, k_y=3.0)
        assert spec.L == pytest.approx(3.0 / 2.0)
        assert spec.beta_y == pytest.approx(0.5)
        assert spec.beta_theta == pytest.approx(0.5)

    def test_make_loss_identifiers(self):
        assert make_loss("logistic") == logistic()
        assert make_loss("edf:poisson").family.family == "poisson"
        with pytest.raises(InputError):
            make_loss("hinge")

    def test_negative_constant_rejected(self):
        with pytest.raises(InputError):
            LossSpec("logistic", L=-1, beta_theta=0.25, beta_y=1.1, k_y=1, beta=0.25)

    def test_round_trip_dict(self):
        spec = exp_dispersion("gamma", phi=0.5, theta_bound=3.0)
        assert LossSpec.from_dict(spec.to_dict()) == spec


class TestEdfBetaTheta:
    def test_examples(self):
        assert edf_beta_theta(EdfFamily("bernoulli")) == 0.25
        assert edf_beta_theta(EdfFamily("normal")) == 1.0
        assert edf_beta_theta(EdfFamily("poisson", theta_bound=1.0)) == pytest.approx(math.e, abs=1e-4)

    @pytest.mark.parametrize("family,tb", [("bernoulli", 2.0), ("normal", 2.0),
                                           ("poisson", 1.5), ("gamma", 2.0)])
    def test_bounds_second_derivative_on_domain(self, family, tb):
        fam = EdfFamily(family, theta_bound=tb)
        grid = np.linspace(-tb, -1.0 / tb, 2001) if family == "gamma" else np.linspace(-tb, tb, 2001)
        assert np.max(np.abs(fam.b_second(grid))) <= edf_beta_theta(fam) + 1e-12

    def test_fixed_dispersion(self):
        with pytest.raises(InputError):
            EdfFamily("poisson", phi=2.0)


class TestLossValue:
    def test_examples(self):
        assert loss_value(logistic(), 0.0, 1.0) == pytest.approx(math.log(2), abs=1e-4)
        assert loss_value(least_squares(), 1.0, 3.0) == 4.0
        assert loss_value(l2_svm(), 2.0, 1.0) == 0.0
        assert loss_value(logistic(), math.log(3), 1.0) == pytest.approx(math.log(4 / 3), abs=1e-4)

    def test_vectorised(self):
        out = loss_value(logistic(), np.zeros(3), np.array([1.0, -1.0, 1.0]))
        assert out.shape == (3,)

    def test_domain_errors(self):
        with pytest.raises(InputError):
            loss_value(logistic(), 0.0, 0.5)
        with pytest.raises(InputError):
            loss_value(make_loss("edf:gamma"), 0.5, 1.0)
        with pytest.raises(InputError):
            loss_value(least_squares(), float("nan"), 1.0)


class TestDerivative:
    def test_examples(self):
        assert dl_dtheta(logistic(), 0.0, 1.0) == -0.5
        assert dl_dtheta(logistic(), 0.0, -1.0) == 0.5
        assert dl_dtheta(least_squares(), 1.0, 3.0) == -4.0
        assert dl_dtheta(l2_svm(), 0.0, 1.0) == -2.0
        assert dl_dtheta(make_loss("edf:poisson"), 0.0, 1.0) == 0.0
        gamma = exp_dispersion("gamma", phi=1.0, theta_bound=2.0)
        assert dl_dtheta(gamma, -1.0, 2.0) == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("spec,y", [(logistic(), 1.0), (logistic(), -1.0),
                                        (least_squares(), 0.7), (l2_svm(), -1.0),
                                        (exp_dispersion("poisson"), 2.0),
                                        (exp_dispersion("normal", phi=2.0), -0.4)])
    def test_matches_finite_difference(self, spec, y):
        theta = np.linspace(-2.5, 2.5, 41)
        h = 1e-6
        fd = (loss_value(spec, theta + h, np.full_like(theta, y))
              - loss_value(spec, theta - h, np.full_like(theta, y))) / (2 * h)
        assert np.allclose(dl_dtheta(spec, theta, np.full_like(theta, y)), fd, atol=1e-5)

    @settings(max_examples=200, deadline=None)
    @given(t1=st.floats(-5, 5), t2=st.floats(-5, 5), y=st.sampled_from([-1.0, 1.0]),
           kind=st.sampled_from(["logistic", "least_squares", "l2_svm"]))
    def test_smooth_in_theta(self, t1, t2, y, kind):
        spec = make_loss(kind)
        gap = abs(dl_dtheta(spec, t1, y) - dl_dtheta(spec, t2, y))
        assert gap <= spec.beta_theta * abs(t1 - t2) + 1e-9

    @settings(max_examples=200, deadline=None)
    @given(theta=st.floats(-3, 3), y1=st.floats(-3, 3), y2=st.floats(-3, 3))
    def test_least_squares_smooth_in_target(self, theta, y1, y2):
        spec = least_squares()
        gap = abs(dl_dtheta(spec, theta, y1) - dl_dtheta(spec, theta, y2))
        assert gap <= spec.beta_y * abs(y1 - y2) + 1e-9


class TestPenalty:
    def test_examples(self):
        assert apply_penalty(make_penalty("l2", 0.001), [1.0], [0.5], 0.1) == pytest.approx([0.9499], abs=1e-4)
        assert apply_penalty(make_penalty("l1", 1.0), [0.5], [0.0], 0.1) == pytest.approx([0.4])
        assert apply_penalty(make_penalty("l1", 1.0), [0.05], [0.0], 0.1)[0] == 0.0
        out = apply_penalty(make_penalty("elastic_net", 1.0, 1.0), [0.4], [0.0], 0.1)
        assert out == pytest.approx([0.3 / 1.1], abs=1e-4)

    def test_zero_step_is_identity(self):
        w = np.array([0.3, -0.2])
        for kind in ("l2", "l1", "elastic_net"):
            assert np.array_equal(apply_penalty(make_penalty(kind, 0.5, 0.5), w, np.ones(2), 0.0), w)

    def test_soft_threshold_is_odd(self):
        x = np.linspace(-2, 2, 9)
        assert np.array_equal(soft_threshold(-x, 0.3), -soft_threshold(x, 0.3))

    def test_rejects_bad_input(self):
        with pytest.raises(InputError):
            make_penalty("l2", -1.0)
        with pytest.raises(InputError):
            apply_penalty(make_penalty("l2", 0.1), [1.0, 2.0], [1.0], 0.1)
        with pytest.raises(InputError):
            apply_penalty(make_penalty("l2", 0.1), [1.0], [1.0], -0.1)
