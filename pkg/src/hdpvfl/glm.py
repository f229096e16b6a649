"""GLM per-sample losses, their derivatives in the natural parameter, and
the proximal/penalised weight updates.

Every loss is written as a function of the natural parameter
``theta = x @ w`` and the target ``y``. The constants carried by
:class:`LossSpec` are the ones the sensitivity formulas in
:mod:`hdpvfl.privacy` consume:

========== ==============================================================
``L``      Lipschitz constant of the loss in the weights
``beta_theta``  smoothness of the loss in ``theta``
``beta_y`` Lipschitz constant of ``dloss/dtheta`` in ``y``
``k_y``    high-probability bound on ``|y|``
``beta``   smoothness in the weights (utility bound only)
``gamma``  strong convexity in the weights (step-size limit only)
========== ==============================================================

All feature rows are assumed normalised to ``||x||_2 <= 1``, so smoothness
in ``theta`` carries over to the weights unchanged (``beta = beta_theta``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln

from .errors import InputError

LOSS_KINDS = ("logistic", "least_squares", "l2_svm", "edf")
EDF_FAMILIES = ("bernoulli", "normal", "poisson", "gamma")
PENALTY_KINDS = ("l2", "l1", "elastic_net")


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check_nonneg(**values):
    for name, v in values.items():
        if not (math.isfinite(v) and v >= 0):
            raise InputError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class EdfFamily:
    """A member of the exponential dispersion family.

    ``a(phi) = phi`` for every supported family; Bernoulli and Poisson fix
    ``phi = 1``. ``theta_bound`` limits the natural-parameter domain over
    which ``sup |b''|`` is taken (for Gamma the domain is
    ``[-theta_bound, -1/theta_bound]``).
    """

    family: str
    phi: float = 1.0
    theta_bound: float = 2.0

    def __post_init__(self):
        if self.family not in EDF_FAMILIES:
            raise InputError(f"unknown exponential-dispersion family {self.family!r}")
        if not (math.isfinite(self.phi) and self.phi > 0):
            raise InputError(f"phi must be positive, got {self.phi!r}")
        if self.family in ("bernoulli", "poisson") and self.phi != 1.0:
            raise InputError(f"{self.family} has fixed dispersion phi = 1")
        if not (math.isfinite(self.theta_bound) and self.theta_bound > 0):
            raise InputError(f"theta_bound must be positive, got {self.theta_bound!r}")
        if self.family == "gamma" and self.theta_bound < 1:
            raise InputError("gamma theta_bound must be >= 1 so that [-tb, -1/tb] is nonempty")

    def a(self) -> float:
        return self.phi

    def b(self, theta):
        if self.family == "bernoulli":
            return np.logaddexp(0.0, theta)
        if self.family == "normal":
            return 0.5 * np.square(theta)
        if self.family == "poisson":
            return np.exp(theta)
        return -np.log(-theta)

    def b_prime(self, theta):
        if self.family == "bernoulli":
            return expit(theta)
        if self.family == "normal":
            return np.asarray(theta, dtype=float)
        if self.family == "poisson":
            return np.exp(theta)
        return -1.0 / theta

    def b_second(self, theta):
        if self.family == "bernoulli":
            s = expit(theta)
            return s * (1.0 - s)
        if self.family == "normal":
            return np.ones_like(np.asarray(theta, dtype=float))
        if self.family == "poisson":
            return np.exp(theta)
        return 1.0 / np.square(theta)

    def c(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "bernoulli":
            return np.zeros_like(y)
        if self.family == "normal":
            return -0.5 * (np.square(y) / self.phi + math.log(2 * math.pi))
        if self.family == "poisson":
            return -gammaln(y + 1.0)
        alpha = 1.0 / self.phi
        return alpha * math.log(alpha) + (alpha - 1.0) * np.log(y) - gammaln(alpha)


def edf_beta_theta(fam: EdfFamily) -> float:
    """``sup |b''(theta)|`` over the family's bounded theta domain."""
    if fam.family == "bernoulli":
        return 0.25
    if fam.family == "normal":
        return 1.0
    if fam.family == "poisson":
        return math.exp(fam.theta_bound)
    # 1/theta^2 peaks at the endpoint closest to zero, theta = -1/theta_bound
    return fam.theta_bound**2


@dataclass(frozen=True)
class LossSpec:
    kind: str
    L: float
    beta_theta: float
    beta_y: float
    k_y: float
    beta: float
    gamma: float = 0.0
    family: Optional[EdfFamily] = field(default=None)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InputError(f"unknown loss kind {self.kind!r}")
        if (self.kind == "edf") != (self.family is not None):
            raise InputError("an EdfFamily is required for, and only for, kind='edf'")
        _check_nonneg(L=self.L, beta_theta=self.beta_theta, beta_y=self.beta_y,
                      k_y=self.k_y, beta=self.beta, gamma=self.gamma)

    @property
    def name(self) -> str:
        if self.kind == "edf":
            return f"edf:{self.family.family}"
        return self.kind

    @property
    def is_classifier(self) -> bool:
        return self.kind in ("logistic", "l2_svm")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "L": self.L, "beta_theta": self.beta_theta,
             "beta_y": self.beta_y, "k_y": self.k_y, "beta": self.beta,
             "gamma": self.gamma}
        if self.family is not None:
            d["family"] = {"family": self.family.family, "phi": self.family.phi,
                           "theta_bound": self.family.theta_bound}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        d = dict(d)
        fam = d.pop("family", None)
        return cls(family=EdfFamily(**fam) if fam is not None else None, **d)


def logistic(gamma: float = 0.0) -> LossSpec:
    return LossSpec("logistic", L=1.0, beta_theta=0.25, beta_y=1.1, k_y=1.0,
                    beta=0.25, gamma=gamma)


def least_squares(gamma: float = 0.0) -> LossSpec:
    """Squared error on standardised targets (``|y| <= 3`` w.h.p.)."""
    return LossSpec("least_squares", L=6.0, beta_theta=2.0, beta_y=2.0, k_y=3.0,
                    beta=2.0, gamma=gamma)


def l2_svm(gamma: float = 0.0) -> LossSpec:
    return LossSpec("l2_svm", L=2.0, beta_theta=2.0, beta_y=2.0, k_y=1.0,
                    beta=2.0, gamma=gamma)


def exp_dispersion(family: str, *, phi: float = 1.0, k_y: float = 1.0,
                   theta_bound: Optional[float] = None, k: float = 1.0,
                   gamma: float = 0.0) -> LossSpec:
    """Build an exponential-dispersion loss.

    ``theta_bound`` defaults to ``k + 1``: the weight-norm clip plus slack.
    """
    fam = EdfFamily(family, phi=phi,
                    theta_bound=k + 1.0 if theta_bound is None else theta_bound)
    a = fam.a()
    beta_theta = edf_beta_theta(fam) / a
    return LossSpec("edf", L=k_y / a, beta_theta=beta_theta, beta_y=1.0 / a,
                    k_y=k_y, beta=beta_theta, gamma=gamma, family=fam)


def make_loss(identifier: str, **kwargs) -> LossSpec:
    """Resolve a string identifier such as ``"logistic"`` or ``"edf:poisson"``."""
    ident = identifier.strip().lower()
    if ident.startswith("edf:"):
        return exp_dispersion(ident[4:], **kwargs)
    builders = {"logistic": logistic, "least_squares": least_squares, "l2_svm": l2_svm}
    if ident not in builders:
        raise InputError(f"unknown loss identifier {identifier!r}")
    allowed = {k: v for k, v in kwargs.items() if k == "gamma"}
    return builders[ident](**allowed)


def _check_domain(spec: LossSpec, theta: np.ndarray, y: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)):
        raise InputError("theta must be finite")
    if not np.all(np.isfinite(y)):
        raise InputError("targets must be finite")
    if spec.kind in ("logistic", "l2_svm"):
        if not np.all((y == 1.0) | (y == -1.0)):
            raise InputError(f"{spec.kind} targets must be -1 or +1")
    elif spec.kind == "edf":
        fam = spec.family.family
        if fam == "bernoulli" and not np.all((y == 0.0) | (y == 1.0)):
            raise InputError("bernoulli targets must be 0 or 1")
        if fam == "poisson" and np.any(y < 0):
            raise InputError("poisson targets must be >= 0")
        if fam == "gamma":
            if np.any(y <= 0):
                raise InputError("gamma targets must be > 0")
            if np.any(theta >= 0):
                raise InputError("gamma natural parameter must be strictly negative")


def loss_value(spec: LossSpec, theta, y):
    """Per-sample loss at natural parameter ``theta`` (no regularisation).

    For ``kind='edf'`` this is ``(y*theta - b(theta)) / a(phi) + c(y; phi)``.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_domain(spec, theta, y)
    if spec.kind == "logistic":
        out = np.logaddexp(0.0, -y * theta)
    elif spec.kind == "least_squares":
        out = np.square(y - theta)
    elif spec.kind == "l2_svm":
        out = np.square(np.maximum(0.0, 1.0 - y * theta))
    else:
        fam = spec.family
        out = (y * theta - fam.b(theta)) / fam.a() + fam.c(y)
    return _scalar_or_array(out)


def dl_dtheta(spec: LossSpec, theta, y):
    """Derivative of :func:`loss_value` with respect to ``theta``."""
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_domain(spec, theta, y)
    if spec.kind == "logistic":
        out = (expit(y * theta) - 1.0) * y
    elif spec.kind == "least_squares":
        out = -2.0 * (y - theta)
    elif spec.kind == "l2_svm":
        out = -2.0 * y * np.maximum(0.0, 1.0 - y * theta)
    else:
        fam = spec.family
        out = (y - fam.b_prime(theta)) / fam.a()
    return _scalar_or_array(out)


@dataclass(frozen=True)
class PenaltySpec:
    kind: str = "l2"
    lam: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InputError(f"unknown penalty kind {self.kind!r}")
        _check_nonneg(lam=self.lam, mu=self.mu)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam, "mu": self.mu}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltySpec":
        return cls(**d)


def make_penalty(identifier: str, lam: float, mu: float = 0.0) -> PenaltySpec:
    ident = identifier.strip().lower().replace("-", "_")
    if ident not in PENALTY_KINDS:
        raise InputError(f"unknown penalty identifier {identifier!r}")
    return PenaltySpec(ident, lam=lam, mu=mu if ident == "elastic_net" else 0.0)


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def apply_penalty(pen: PenaltySpec, w, g, eta: float) -> np.ndarray:
    """One penalised gradient step.

    ``l2`` takes a plain step on ``loss + (lam/2)||w||^2``; ``l1`` and
    ``elastic_net`` take a gradient step on the loss then apply the
    proximal operator of the penalty.
    """
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    if w.shape != g.shape:
        raise InputError(f"weight shape {w.shape} does not match gradient shape {g.shape}")
    if not (math.isfinite(eta) and eta >= 0):
        raise InputError(f"learning rate must be finite and >= 0, got {eta!r}")
    if pen.kind == "l2":
        return w - eta * (g + pen.lam * w)
    shrunk = soft_threshold(w - eta * g, eta * pen.lam)
    if pen.kind == "l1":
        return shrunk
    return shrunk / (1.0 + eta * pen.lam * pen.mu)
