"""Two-party training loop.

Each iteration ``t``:

1. passive computes ``IR_B = X_B[s_t] @ w_B``, adds N(0, sigma_ir_b^2)
   noise and sends it (``IrB``);
2. active forms ``theta = X_A[s_t] @ w_A + Sec[IR_B]``, computes
   ``IR_A = dloss/dtheta``, adds N(0, sigma_ir_a^2) noise and sends it
   (``IrA``);
3. active steps on ``IR_A @ X_A[s_t] / b`` (its own *unperturbed* copy),
   passive steps on ``Sec[IR_A] @ X_B[s_t] / b``;
4. both apply the penalty update and project their weights onto the
   ``clip_norm`` ball.

Both parties derive the mini-batch schedule ``s_t`` from the shared seed
in ``Setup``, so no indices cross the wire. Weights start at zero.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DivergenceError, InputError, ProtocolError, TransportError)
from .glm import LossSpec, PenaltySpec, apply_penalty, dl_dtheta, loss_value
from .messages import Done, IrA, IrB, Setup
from .privacy import Hyperparams, NoiseScales, noise_scales, perturb, stream_rng
from .transport import InProcessChannel

log = logging.getLogger(__name__)


def build_schedule(h: Hyperparams, n: int) -> list[np.ndarray]:
    """Mini-batch indices for every iteration, derived from ``h.seed``.

    Each epoch draws a fresh permutation of ``0 .. n-1`` and cuts it into
    ``n // b`` batches of exactly ``b`` rows; leftover rows sit out that
    epoch.
    """
    h = h.resolve(n)
    b, r = h.batch_size, h.batches_per_epoch
    rng = stream_rng(h.seed, "schedule")
    schedule = []
    for _ in range(h.epochs):
        perm = rng.permutation(n)
        schedule.extend(perm[j * b:(j + 1) * b] for j in range(r))
    return schedule


def clip_weights(w, k: float) -> np.ndarray:
    """Project onto the l2 ball of radius ``k``: ``w / max(1, ||w|| / k)``."""
    if not k > 0:
        raise InputError("clip norm must be positive")
    w = np.asarray(w, dtype=float)
    return w / max(1.0, float(np.linalg.norm(w)) / k)


@dataclass
class PartyState:
    role: str
    w: np.ndarray
    h: Hyperparams
    schedule: list
    noise: NoiseScales
    penalty: PenaltySpec
    rng: np.random.Generator
    spec: Optional[LossSpec] = None
    t: int = 0

    @property
    def batch(self) -> np.ndarray:
        return self.schedule[self.t]


def _new_state(role, d, h, n, spec, penalty, noise_seed) -> PartyState:
    h = h.resolve(n)
    stream = "active_noise" if role == "active" else "passive_noise"
    rng = stream_rng(h.seed, stream) if noise_seed is None else np.random.default_rng(noise_seed)
    return PartyState(role=role, w=np.zeros(d), h=h, schedule=build_schedule(h, n),
                      noise=noise_scales(h, spec), penalty=penalty, rng=rng,
                      spec=spec if role == "active" else None)


def _check_columns(X: np.ndarray, w: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != w.shape[0]:
        raise InputError(f"feature matrix with shape {X.shape} does not match {w.shape[0]} weights")


def passive_compute_ir(st: PartyState, X_b: np.ndarray) -> np.ndarray:
    """Unperturbed inner products ``X_B[s_t] @ w_B``."""
    if st.role != "passive":
        raise InputError("passive_compute_ir needs the passive party's state")
    _check_columns(X_b, st.w)
    ir = X_b[st.batch] @ st.w
    if not np.all(np.isfinite(ir)):
        raise DivergenceError(st.t, st.role)
    return ir


def active_compute_ir(st: PartyState, X_a: np.ndarray, y: np.ndarray, sec_ir_b) -> np.ndarray:
    """Unperturbed loss derivatives at ``theta = X_A[s_t] @ w_A + Sec[IR_B]``."""
    if st.role != "active":
        raise InputError("active_compute_ir needs the active party's state")
    _check_columns(X_a, st.w)
    idx = st.batch
    sec_ir_b = np.asarray(sec_ir_b, dtype=float)
    if sec_ir_b.shape != idx.shape:
        raise InputError(f"expected {idx.size} passive inner products, got {sec_ir_b.size}")
    theta = X_a[idx] @ st.w + sec_ir_b
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(st.t, st.role)
    return np.asarray(dl_dtheta(st.spec, theta, y[idx]), dtype=float)


def _batch_gradient(ir, X_batch, b: int) -> np.ndarray:
    ir = np.asarray(ir, dtype=float)
    X_batch = np.asarray(X_batch, dtype=float)
    if X_batch.ndim != 2 or ir.shape != (X_batch.shape[0],):
        raise InputError(f"{ir.size} intermediate results do not match a batch of shape {X_batch.shape}")
    return ir @ X_batch / b


def active_gradient(ir_a_unperturbed, X_a_batch, b: int) -> np.ndarray:
    """``IR_A @ X_A_batch / b`` using the active party's own noiseless IR."""
    return _batch_gradient(ir_a_unperturbed, X_a_batch, b)


def passive_gradient(sec_ir_a, X_b_batch, b: int) -> np.ndarray:
    """``Sec[IR_A] @ X_B_batch / b`` using the perturbed IR received."""
    return _batch_gradient(sec_ir_a, X_b_batch, b)


def _update(st: PartyState, g: np.ndarray) -> None:
    w = apply_penalty(st.penalty, st.w, g, st.h.learning_rate)
    w = clip_weights(w, st.h.clip_norm)
    if not np.all(np.isfinite(w)):
        raise DivergenceError(st.t, st.role)
    st.w = w
    st.t += 1


def _expect(channel, cls, t: Optional[int] = None):
    msg = channel.recv()
    if msg is None:
        raise TransportError(f"peer closed the session while waiting for {cls.__name__}")
    if not isinstance(msg, cls):
        raise ProtocolError(f"expected {cls.__name__}, received {type(msg).__name__}")
    if t is not None and msg.t != t:
        raise ProtocolError(f"expected {cls.__name__} for iteration {t}, received iteration {msg.t}")
    return msg


class PassiveParty:
    """Feature-only party. Listens for ``Setup`` and follows the active party.

    ``noise_seed`` seeds this party's private noise stream. Left as
    ``None`` the stream is derived from the shared seed, which makes runs
    reproducible but lets anyone holding the seed regenerate the noise;
    deployments should pass a secret value.
    """

    def __init__(self, X: np.ndarray, *, noise_seed: Optional[int] = None, trace: bool = False):
        self.X = np.asarray(X, dtype=float)
        self.noise_seed = noise_seed
        self.trace: Optional[list] = [] if trace else None
        self.state: Optional[PartyState] = None

    def run(self, channel) -> np.ndarray:
        try:
            return self._run(channel)
        except BaseException:
            channel.close()
            raise

    def _run(self, channel) -> np.ndarray:
        setup = _expect(channel, Setup)
        n, d = self.X.shape
        if setup.n != n:
            raise InputError(f"active party has {setup.n} entities, passive has {n}")
        if setup.d_b is not None and setup.d_b != d:
            raise InputError(f"active party expects {setup.d_b} passive features, passive has {d}")
        st = self.state = _new_state("passive", d, setup.hyperparams, n, setup.loss,
                                     setup.penalty, self.noise_seed)
        b = st.h.batch_size
        for t in range(st.h.iterations):
            idx = st.batch
            ir_b = passive_compute_ir(st, self.X)
            sec_ir_b = perturb(ir_b, st.noise.sigma_ir_b, st.rng)
            channel.send(IrB(t, sec_ir_b))
            sec_ir_a = _expect(channel, IrA, t).values
            g_b = passive_gradient(sec_ir_a, self.X[idx], b)
            _update(st, g_b)
            if self.trace is not None:
                self.trace.append({"ir_b": ir_b, "sec_ir_b": sec_ir_b, "g_b": g_b, "w_b": st.w.copy()})
        _expect(channel, Done)
        return st.w


class ActiveParty:
    """Feature-and-label party. Opens the session and drives every iteration."""

    def __init__(self, X: np.ndarray, y: np.ndarray, h: Hyperparams, spec: LossSpec,
                 penalty: PenaltySpec, *, d_b: Optional[int] = None,
                 noise_seed: Optional[int] = None, trace: bool = False):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.y.shape != (self.X.shape[0],):
            raise InputError("targets must have one entry per feature row")
        self.h, self.spec, self.penalty = h, spec, penalty
        self.d_b = d_b
        self.noise_seed = noise_seed
        self.trace: Optional[list] = [] if trace else None
        self.history: list[dict] = []
        self.state: Optional[PartyState] = None

    def run(self, channel) -> np.ndarray:
        try:
            return self._run(channel)
        except BaseException:
            channel.close()
            raise

    def _run(self, channel) -> np.ndarray:
        n, d = self.X.shape
        st = self.state = _new_state("active", d, self.h, n, self.spec, self.penalty, self.noise_seed)
        channel.send(Setup(st.h, self.spec, self.penalty, n=n, d_a=d, d_b=self.d_b))
        b, r = st.h.batch_size, st.h.batches_per_epoch
        losses, hits = [], []
        for t in range(st.h.iterations):
            idx = st.batch
            sec_ir_b = _expect(channel, IrB, t).values
            ir_a = active_compute_ir(st, self.X, self.y, sec_ir_b)
            sec_ir_a = perturb(ir_a, st.noise.sigma_ir_a, st.rng)
            channel.send(IrA(t, sec_ir_a))

            # Only theta the active party can form: own part plus noisy passive part.
            theta = self.X[idx] @ st.w + sec_ir_b
            losses.append(float(np.mean(loss_value(self.spec, theta, self.y[idx]))))
            if self.spec.is_classifier:
                hits.append(float(np.mean(np.where(theta >= 0, 1.0, -1.0) == self.y[idx])))

            g_a = active_gradient(ir_a, self.X[idx], b)
            _update(st, g_a)
            if self.trace is not None:
                self.trace.append({"t": t, "batch": idx, "sec_ir_b": sec_ir_b, "ir_a": ir_a,
                                   "sec_ir_a": sec_ir_a, "g_a": g_a, "w_a": st.w.copy()})
            if (t + 1) % r == 0:
                self.history.append({
                    "epoch": (t + 1) // r,
                    "train_loss": float(np.mean(losses)),
                    "train_accuracy": float(np.mean(hits)) if hits else None,
                })
                losses, hits = [], []
        final = self.history[-1] if self.history else {}
        channel.send(Done({"iterations": st.h.iterations, **final}))
        return st.w


@dataclass
class TrainedModel:
    w_a: np.ndarray
    w_b: np.ndarray
    history: list = field(default_factory=list)
    hyperparams: Optional[Hyperparams] = None
    noise: Optional[NoiseScales] = None
    trace: Optional[list] = None

    def decision_function(self, X_a: np.ndarray, X_b: np.ndarray) -> np.ndarray:
        """Joint scores ``X_A @ w_A + X_B @ w_B`` (noiseless scoring)."""
        return np.asarray(X_a) @ self.w_a + np.asarray(X_b) @ self.w_b


def run_training(X_a, y, X_b, h: Hyperparams, spec: LossSpec, pen: PenaltySpec,
                 channels=None, *, trace: bool = False, timeout: Optional[float] = 60.0,
                 noise_seeds: tuple = (None, None)) -> TrainedModel:
    """Run both parties to completion and collect their weights.

    ``channels`` is an ``(active_end, passive_end)`` pair; by default an
    in-process pair is created. The passive party runs on a worker thread.
    ``noise_seeds`` is ``(active, passive)``.
    """
    X_a = np.asarray(X_a, dtype=float)
    X_b = np.asarray(X_b, dtype=float)
    if X_a.shape[0] != X_b.shape[0]:
        raise InputError("parties must hold the same number of aligned entities")
    if channels is None:
        channels = InProcessChannel.pair(timeout=timeout)
    active_end, passive_end = channels
    active = ActiveParty(X_a, y, h, spec, pen, d_b=X_b.shape[1],
                         noise_seed=noise_seeds[0], trace=trace)
    passive = PassiveParty(X_b, noise_seed=noise_seeds[1], trace=trace)

    result: dict = {}

    def passive_main():
        try:
            result["w_b"] = passive.run(passive_end)
        except BaseException as exc:
            result["error"] = exc

    worker = threading.Thread(target=passive_main, name="passive-party", daemon=True)
    worker.start()
    active_error = None
    try:
        w_a = active.run(active_end)
    except BaseException as exc:
        active_error = exc
    worker.join(timeout)
    if worker.is_alive():
        active_end.close()
        worker.join(1.0)
        raise TransportError("passive party did not finish")
    passive_error = result.get("error")
    if active_error is not None:
        # A transport failure on the active side is usually the echo of
        # the passive party's real failure.
        if isinstance(active_error, TransportError) and passive_error is not None:
            raise passive_error from active_error
        raise active_error
    if passive_error is not None:
        raise passive_error

    merged = None
    if trace:
        merged = [{**a, **p} for a, p in zip(active.trace, passive.trace)]
    return TrainedModel(w_a=w_a, w_b=result["w_b"], history=active.history,
                        hyperparams=active.state.h, noise=active.state.noise, trace=merged)


@dataclass
class CentralizedResult:
    w: np.ndarray
    history: list
    gradients: Optional[list] = None


def centralized_sgd(X, y, h: Hyperparams, spec: LossSpec, pen: PenaltySpec,
                    blocks: Optional[list[int]] = None, *, record: bool = False) -> CentralizedResult:
    """Single-table mini-batch SGD with the same schedule, penalty and clipping.

    ``blocks`` lists column-block widths that are clipped separately;
    passing the two party widths reproduces noiseless two-party training
    exactly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    blocks = [d] if blocks is None else list(blocks)
    if sum(blocks) != d:
        raise InputError(f"block widths {blocks} do not cover {d} columns")
    edges = np.cumsum([0] + blocks)
    h = h.resolve(n)
    schedule = build_schedule(h, n)
    b, r = h.batch_size, h.batches_per_epoch
    w = np.zeros(d)
    history, grads, losses = [], [] if record else None, []
    for t, idx in enumerate(schedule):
        theta = X[idx] @ w
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(t)
        losses.append(float(np.mean(loss_value(spec, theta, y[idx]))))
        g = np.asarray(dl_dtheta(spec, theta, y[idx])) @ X[idx] / b
        if record:
            grads.append(g)
        w = apply_penalty(pen, w, g, h.learning_rate)
        w = np.concatenate([clip_weights(w[lo:hi], h.clip_norm)
                            for lo, hi in zip(edges[:-1], edges[1:])])
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t)
        if (t + 1) % r == 0:
            history.append({"epoch": (t + 1) // r, "train_loss": float(np.mean(losses))})
            losses = []
    return CentralizedResult(w=w, history=history, gradients=grads)
