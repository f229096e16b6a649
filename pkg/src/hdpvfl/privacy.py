"""Sequence sensitivities and Gaussian noise calibration.

Both parties perturb every intermediate result they send with i.i.d.
Gaussian noise. The noise scale is calibrated once per run from the
l2-sensitivity of the *whole* sequence of intermediate results over all
``T = epochs * batches_per_epoch`` iterations, so the same sigma applies at
every iteration.

Naming: ``sigma_ir_b`` is the scale the passive party adds to its inner
products ``X_B @ w_B``; ``sigma_ir_a`` is the scale the active party adds
to its per-sample loss derivatives.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .errors import InputError
from .glm import LossSpec, PenaltySpec

log = logging.getLogger(__name__)

#: Sentinel privacy budget selecting the noiseless (non-private) mode.
NO_PRIVACY = math.inf

_STREAMS = {"schedule": 0, "passive_noise": 1, "active_noise": 2, "split": 3}


def stream_rng(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for one purpose, derived from a shared seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[purpose],)))


@dataclass(frozen=True)
class Hyperparams:
    """Knobs of one training run.

    ``batches_per_epoch`` depends on the number of common entities; call
    :meth:`resolve` once ``n`` is known. ``epsilon = NO_PRIVACY`` switches
    noise off entirely.
    """

    epsilon: float = 1.0
    delta: float = 0.01
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    batches_per_epoch: int = 1
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.epsilon) or not self.epsilon > 0:
            raise InputError(f"epsilon must be > 0 (or inf), got {self.epsilon!r}")
        if not 0 < self.delta < 1:
            raise InputError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise InputError(f"learning_rate must be finite and >= 0, got {self.learning_rate!r}")
        for name in ("batch_size", "epochs", "batches_per_epoch"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise InputError(f"{name} must be a positive integer, got {v!r}")
        if not (math.isfinite(self.clip_norm) and self.clip_norm > 0):
            raise InputError(f"clip_norm must be positive, got {self.clip_norm!r}")
        if not 0 <= self.seed < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    @property
    def iterations(self) -> int:
        return self.epochs * self.batches_per_epoch

    @property
    def private(self) -> bool:
        return self.epsilon != NO_PRIVACY

    def resolve(self, n: int) -> "Hyperparams":
        """Fix the batch layout for ``n`` samples.

        A batch larger than the data degrades to full-batch training.
        Remainder samples are dropped each epoch so every batch has exactly
        ``batch_size`` rows.
        """
        if n < 1:
            raise InputError("need at least one sample")
        b = self.batch_size
        if b > n:
            log.info("batch size %d exceeds n=%d; using full-batch training", b, n)
            b = n
        return replace(self, batch_size=b, batches_per_epoch=n // b)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.private:
            d["epsilon"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        if d.get("epsilon") == "inf":
            d["epsilon"] = NO_PRIVACY
        return cls(**d)


@dataclass(frozen=True)
class NoiseScales:
    sigma_ir_b: float
    sigma_ir_a: float

    def __post_init__(self):
        for v in (self.sigma_ir_b, self.sigma_ir_a):
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"noise scale must be finite and >= 0, got {v!r}")


def delta_w_bound(h: Hyperparams, L: float) -> float:
    """Worst-case weight divergence ``2 e eta L / b`` between neighbouring runs."""
    return 2.0 * h.epochs * h.learning_rate * L / h.batch_size


def delta2_ir_b(h: Hyperparams, L: float) -> float:
    """l2-sensitivity of the passive party's stacked inner products."""
    e, T, eta, b, k = h.epochs, h.iterations, h.learning_rate, h.batch_size, h.clip_norm
    return math.sqrt(4 * L**2 * e**2 * T * eta**2 / b
                     + 8 * k * L * e**2 * eta / b
                     + 4 * k**2 * e)


def _ir_a_terms(h: Hyperparams, spec: LossSpec) -> tuple[float, float, float]:
    e, T, eta, b, k = h.epochs, h.iterations, h.learning_rate, h.batch_size, h.clip_norm
    bt, L = spec.beta_theta, spec.L
    c = bt * k + spec.beta_y * spec.k_y
    return (bt**2 * L**2 * e**2 * T * eta**2 / b,
            2 * c * bt * L * e**2 * eta / b,
            c**2 * e)


def delta2_ir_a(h: Hyperparams, spec: LossSpec) -> float:
    """l2-sensitivity of the active party's stacked loss derivatives."""
    return 2.0 * math.sqrt(sum(_ir_a_terms(h, spec)))


def gaussian_sigma(delta2: float, epsilon: float, delta: float) -> float:
    """Gaussian-mechanism scale ``sqrt(2 ln(1.25/delta)) * delta2 / epsilon``."""
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta!r}")
    if math.isnan(epsilon) or not epsilon > 0:
        raise InputError(f"epsilon must be > 0, got {epsilon!r}")
    if delta2 < 0:
        raise InputError("sensitivity must be nonnegative")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * delta2 / epsilon


_warned_epsilons: set = set()


def noise_scales(h: Hyperparams, spec: LossSpec) -> NoiseScales:
    """Per-run noise scales for both intermediate-result streams."""
    if not h.private:
        return NoiseScales(0.0, 0.0)
    if h.epsilon >= 1 and h.epsilon not in _warned_epsilons:
        _warned_epsilons.add(h.epsilon)
        log.warning("epsilon=%g >= 1: outside the range where the Gaussian "
                    "mechanism guarantee is stated", h.epsilon)
    try:
        d_b, d_a = delta2_ir_b(h, spec.L), delta2_ir_a(h, spec)
    except OverflowError:
        raise InputError("sensitivity overflows a double; hyperparameters out of range") from None
    return NoiseScales(
        sigma_ir_b=gaussian_sigma(d_b, h.epsilon, h.delta),
        sigma_ir_a=gaussian_sigma(d_a, h.epsilon, h.delta),
    )


def perturb(v, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma^2)`` noise to each component of ``v``."""
    v = np.asarray(v, dtype=float)
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    if sigma == 0:
        return v.copy()
    return v + rng.normal(0.0, sigma, size=v.shape)


def gradient_error_bound(h: Hyperparams, spec: LossSpec) -> float:
    """Magnitude (constant 1) of the per-step gradient error the noise causes."""
    if not h.private:
        return 0.0
    return math.sqrt(math.log(1.25 / h.delta)) / h.epsilon * math.sqrt(sum(_ir_a_terms(h, spec)))


def utility_bound(h: Hyperparams, spec: LossSpec) -> float:
    """Excess-risk bound (constant 1) for the averaged iterate."""
    if not spec.beta > 0:
        raise InputError("utility bound needs a positive smoothness constant beta")
    T, beta = h.iterations, spec.beta
    return (h.clip_norm * math.sqrt(beta / T)
            + 2.0 * math.sqrt(T / beta) * gradient_error_bound(h, spec)) ** 2


def step_size_limit(spec: LossSpec, pen: Optional[PenaltySpec] = None) -> float:
    """Largest step ``2 / (beta + gamma)`` for which the weight-divergence
    bound is guaranteed. ``gamma`` falls back to the l2 strength when the
    loss spec leaves it at zero."""
    gamma = spec.gamma
    if gamma == 0 and pen is not None and pen.kind == "l2":
        gamma = pen.lam
    denom = spec.beta + gamma
    return math.inf if denom == 0 else 2.0 / denom
