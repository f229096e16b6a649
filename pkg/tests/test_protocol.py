import threading

import numpy as np
import pytest
from conftest import small_problem

from hdpvfl.errors import DivergenceError, InputError, ProtocolError, TransportError
from hdpvfl.glm import l2_svm, least_squares, logistic, make_loss, make_penalty
from hdpvfl.messages import Done, IrA, IrB, Setup, check_transcript
from hdpvfl.privacy import NO_PRIVACY, Hyperparams
from hdpvfl.protocol import (ActiveParty, PassiveParty, _new_state, active_compute_ir,
                             active_gradient, build_schedule, centralized_sgd, clip_weights,
                             passive_compute_ir, passive_gradient, run_training)
from hdpvfl.transport import InProcessChannel, RecordingChannel

PLAIN = Hyperparams(epsilon=NO_PRIVACY, learning_rate=0.5, batch_size=4, epochs=3, clip_norm=1.0)
NOISY = Hyperparams(epsilon=0.5, learning_rate=0.5, batch_size=4, epochs=3, clip_norm=1.0)


def _state(role, d, h=PLAIN, n=4, spec=None):
    return _new_state(role, d, h, n, spec or logistic(), make_penalty("l2", 0.0), None)


def _passive_state(b, n):
    h = Hyperparams(epsilon=NO_PRIVACY, batch_size=b, epochs=1)
    return _new_state("passive", 2, h, n, None, make_penalty("l2", 0.0), None)


class TestSchedule:
    def test_exact_partition(self):
        sched = build_schedule(Hyperparams(batch_size=2, epochs=1), 4)
        assert len(sched) == 2
        assert sorted(np.concatenate(sched).tolist()) == [0, 1, 2, 3]

    def test_remainder_dropped(self):
        sched = build_schedule(Hyperparams(batch_size=2, epochs=1), 5)
        assert len(sched) == 2 and len(set(np.concatenate(sched).tolist())) == 4

    def test_deterministic_and_seeded(self):
        h = Hyperparams(batch_size=3, epochs=4, seed=9)
        a, b = build_schedule(h, 10), build_schedule(h, 10)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = build_schedule(Hyperparams(batch_size=3, epochs=4, seed=10), 10)
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_full_batch_downgrade(self):
        sched = build_schedule(Hyperparams(batch_size=3200, epochs=2), 7)
        assert [len(s) for s in sched] == [7, 7]


class TestClip:
    def test_examples(self):
        assert np.allclose(clip_weights([3.0, 4.0], 1.0), [0.6, 0.8])
        assert np.array_equal(clip_weights([0.3, 0.4], 1.0), [0.3, 0.4])
        assert np.array_equal(clip_weights(np.zeros(3), 1.0), np.zeros(3))

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(InputError):
            clip_weights([1.0], 0.0)


class TestIntermediateResults:
    def test_passive_zero_weights(self):
        st = _state("passive", 2)
        assert np.array_equal(passive_compute_ir(st, np.ones((4, 2))), np.zeros(4))

    def test_passive_single_sample(self):
        st = _passive_state(1, 1)
        st.w = np.array([0.5, 0.3])
        assert passive_compute_ir(st, np.array([[1.0, 0.0]])) == pytest.approx([0.5])

    def test_passive_hand_matrix(self):
        st = _passive_state(3, 3)
        st.w = np.array([1.0, -2.0])
        X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        expected = {0: -3.0, 1: -5.0, 2: -7.0}
        out = passive_compute_ir(st, X)
        assert out.tolist() == [expected[i] for i in st.batch]

    def test_active_logistic_at_origin(self):
        st = _state("active", 2)
        out = active_compute_ir(st, np.ones((4, 2)), np.ones(4), np.zeros(4))
        assert np.array_equal(out, np.full(4, -0.5))

    def test_active_least_squares_perfect_fit(self):
        st = _state("active", 1, spec=least_squares())
        st.w = np.array([0.5])
        X, sec = np.ones((4, 1)), np.full(4, 0.25)
        out = active_compute_ir(st, X, np.full(4, 0.75), sec)
        assert np.array_equal(out, np.zeros(4))

    def test_active_logistic_at_log3(self):
        st = _state("active", 1, n=1, h=Hyperparams(batch_size=1, epochs=1))
        out = active_compute_ir(st, np.zeros((1, 1)), np.ones(1), np.array([np.log(3.0)]))
        assert out == pytest.approx([-0.25], abs=1e-4)

    def test_wrong_role(self):
        with pytest.raises(InputError):
            passive_compute_ir(_state("active", 2), np.ones((4, 2)))


class TestGradients:
    def test_zero_ir(self):
        assert np.array_equal(active_gradient(np.zeros(2), np.ones((2, 3)), 2), np.zeros(3))
        assert np.array_equal(passive_gradient(np.zeros(2), np.ones((2, 3)), 2), np.zeros(3))

    def test_single_sample(self):
        assert active_gradient([-0.5], [[1.0, 2.0]], 1) == pytest.approx([-0.5, -1.0])

    def test_hand_two_samples(self):
        g = active_gradient([1.0, -0.5], [[1.0, 2.0], [4.0, 0.0]], 2)
        assert g == pytest.approx([(1.0 - 2.0) / 2, 2.0 / 2])
        g = passive_gradient([0.2, 0.4], [[1.0], [3.0]], 2)
        assert g == pytest.approx([(0.2 + 1.2) / 2])

    def test_symmetry_without_noise(self):
        ir, X = np.array([0.3, -0.7]), np.array([[1.0, 2.0], [0.5, -1.0]])
        assert np.array_equal(active_gradient(ir, X, 2), passive_gradient(ir, X, 2))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            active_gradient([1.0, 2.0], [[1.0]], 1)


@pytest.mark.parametrize("kind", ["logistic", "least_squares", "l2_svm"])
class TestNoiselessEquivalence:
    def test_matches_centralized(self, kind, channel_pair):
        X_a, X_b, y = small_problem(np.random.default_rng(1), n=30, kind=kind)
        spec, pen = make_loss(kind), make_penalty("l2", 0.01)
        h = Hyperparams(epsilon=NO_PRIVACY, learning_rate=0.2, batch_size=8, epochs=4, clip_norm=0.5)
        model = run_training(X_a, y, X_b, h, spec, pen, channel_pair, trace=True)
        ref = centralized_sgd(np.hstack([X_a, X_b]), y, h, spec, pen, blocks=[3, 2], record=True)
        joint = np.concatenate([model.w_a, model.w_b])
        assert np.allclose(joint, ref.w, rtol=1e-9, atol=1e-12)
        for step, g in zip(model.trace, ref.gradients):
            assert np.allclose(np.concatenate([step["g_a"], step["g_b"]]), g, rtol=1e-9, atol=1e-12)


class TestTraining:
    def test_clip_invariant_every_iteration(self, channel_pair):
        X_a, X_b, y = small_problem(np.random.default_rng(2))
        h = Hyperparams(epsilon=0.3, learning_rate=5.0, batch_size=5, epochs=4, clip_norm=0.2)
        model = run_training(X_a, y, X_b, h, logistic(), make_penalty("l1", 0.01), channel_pair,
                             trace=True)
        for step in model.trace:
            assert np.linalg.norm(step["w_a"]) <= 0.2 + 1e-12
            assert np.linalg.norm(step["w_b"]) <= 0.2 + 1e-12

    def test_zero_step_keeps_initial_weights(self, channel_pair):
        X_a, X_b, y = small_problem(np.random.default_rng(3))
        h = Hyperparams(epsilon=NO_PRIVACY, learning_rate=0.0, batch_size=20, epochs=1)
        model = run_training(X_a, y, X_b, h, logistic(), make_penalty("l2", 0.1), channel_pair)
        assert not model.w_a.any() and not model.w_b.any()

    def test_noisy_run_is_deterministic(self, make_pair, channel_kind):
        X_a, X_b, y = small_problem(np.random.default_rng(4))
        runs = [run_training(X_a, y, X_b, NOISY, logistic(), make_penalty("l2", 0.01),
                             make_pair(channel_kind)) for _ in range(2)]
        assert np.array_equal(runs[0].w_a, runs[1].w_a)
        assert np.array_equal(runs[0].w_b, runs[1].w_b)
        assert runs[0].history == runs[1].history

    def test_noise_actually_changes_weights(self):
        X_a, X_b, y = small_problem(np.random.default_rng(5))
        plain = run_training(X_a, y, X_b, PLAIN, logistic(), make_penalty("l2", 0.0))
        noisy = run_training(X_a, y, X_b, NOISY, logistic(), make_penalty("l2", 0.0))
        assert not np.allclose(plain.w_b, noisy.w_b)

    def test_private_noise_seeds(self):
        X_a, X_b, y = small_problem(np.random.default_rng(6))
        a = run_training(X_a, y, X_b, NOISY, logistic(), make_penalty("l2", 0.0), noise_seeds=(11, 12))
        b = run_training(X_a, y, X_b, NOISY, logistic(), make_penalty("l2", 0.0))
        assert not np.array_equal(a.w_b, b.w_b)

    def test_history_per_epoch(self):
        X_a, X_b, y = small_problem(np.random.default_rng(7))
        model = run_training(X_a, y, X_b, PLAIN, logistic(), make_penalty("l2", 0.0))
        assert [r["epoch"] for r in model.history] == [1, 2, 3]
        assert all(0 <= r["train_accuracy"] <= 1 for r in model.history)

    def test_weight_dimensions(self):
        X_a, X_b, y = small_problem(np.random.default_rng(8), d_a=4, d_b=3)
        model = run_training(X_a, y, X_b, PLAIN, l2_svm(), make_penalty("l2", 0.0))
        assert model.w_a.size + model.w_b.size == 7

    def test_transcript_order(self, channel_pair):
        X_a, X_b, y = small_problem(np.random.default_rng(9))
        a, p, transcript = RecordingChannel.wrap_pair(*channel_pair)
        run_training(X_a, y, X_b, NOISY, logistic(), make_penalty("l2", 0.0), (a, p))
        check_transcript([m for _, m in transcript])
        roles = {type(m).__name__: r for r, m in transcript}
        assert roles == {"Setup": "active", "IrB": "passive", "IrA": "active", "Done": "active"}

    def test_mismatched_entity_count(self):
        with pytest.raises(InputError):
            run_training(np.ones((4, 1)), np.ones(4), np.ones((5, 1)), PLAIN, logistic(),
                         make_penalty("l2", 0.0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestFailures:
    def test_divergence_raised(self):
        # Finite features whose gradient sum overflows a double.
        X_a, X_b, y = np.ones((20, 1)), np.full((20, 1), 1e308), np.ones(20)
        with pytest.raises(DivergenceError):
            run_training(X_a, y, X_b, PLAIN, logistic(), make_penalty("l2", 0.0))

    def test_centralized_divergence(self):
        with pytest.raises(DivergenceError):
            centralized_sgd(np.full((4, 2), 1e308), np.ones(4), PLAIN, logistic(),
                            make_penalty("l2", 0.0))

    def test_passive_rejects_out_of_order(self):
        a, p = InProcessChannel.pair(timeout=5)
        a.send(IrA(0, [1.0]))
        with pytest.raises(ProtocolError):
            PassiveParty(np.ones((4, 1))).run(p)

    def test_passive_rejects_wrong_iteration(self):
        a, p = InProcessChannel.pair(timeout=5)
        h = Hyperparams(epsilon=NO_PRIVACY, batch_size=4, epochs=2)
        a.send(Setup(h, logistic(), make_penalty("l2", 0.0), n=4, d_a=1, d_b=1))
        a.send(IrA(1, np.zeros(4)))
        with pytest.raises(ProtocolError):
            PassiveParty(np.ones((4, 1))).run(p)

    def test_passive_rejects_feature_mismatch(self):
        a, p = InProcessChannel.pair(timeout=5)
        a.send(Setup(PLAIN, logistic(), make_penalty("l2", 0.0), n=4, d_a=1, d_b=3))
        with pytest.raises(InputError):
            PassiveParty(np.ones((4, 1))).run(p)

    def test_active_sees_peer_drop(self):
        a, p = InProcessChannel.pair(timeout=5)
        party = ActiveParty(np.ones((4, 1)), np.ones(4), PLAIN, logistic(), make_penalty("l2", 0.0))

        def peer():
            assert isinstance(p.recv(), Setup)
            p.close()

        worker = threading.Thread(target=peer)
        worker.start()
        with pytest.raises(TransportError):
            party.run(a)
        worker.join()

    def test_done_sent_last(self):
        a, p = InProcessChannel.pair(timeout=5)
        h = Hyperparams(epsilon=NO_PRIVACY, batch_size=4, epochs=1)
        party = ActiveParty(np.ones((4, 1)), np.ones(4), h, logistic(), make_penalty("l2", 0.0))
        p.send(IrB(0, np.zeros(4)))
        party.run(a)
        assert isinstance(p.recv(), Setup)
        assert isinstance(p.recv(), IrA)
        assert isinstance(p.recv(), Done)
