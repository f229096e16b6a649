"""Protocol messages exchanged between the active and passive party.

A session is ``Setup``, then ``IrB(t)`` / ``IrA(t)`` for ``t = 0 .. T-1``,
then ``Done``. Only these four variants ever cross the channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .glm import LossSpec, PenaltySpec
from .privacy import Hyperparams


@dataclass(frozen=True)
class Setup:
    hyperparams: Hyperparams
    loss: LossSpec
    penalty: PenaltySpec
    n: int
    d_a: int
    d_b: Optional[int] = None


@dataclass(frozen=True, eq=False)
class _IrMessage:
    t: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __eq__(self, other):
        return (type(self) is type(other) and self.t == other.t
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class IrB(_IrMessage):
    """Perturbed passive-party inner products for iteration ``t``."""


@dataclass(frozen=True, eq=False)
class IrA(_IrMessage):
    """Perturbed active-party loss derivatives for iteration ``t``."""


@dataclass(frozen=True)
class Done:
    metrics: dict = field(default_factory=dict)


Message = Union[Setup, IrB, IrA, Done]


def check_transcript(messages) -> None:
    """Raise ``AssertionError`` if a recorded session violates message order."""
    kinds = [type(m).__name__ for m in messages]
    assert kinds and kinds[0] == "Setup", "session must open with Setup"
    assert kinds.count("Setup") == 1, "exactly one Setup per session"
    assert kinds[-1] == "Done" and kinds.count("Done") == 1, "exactly one Done, last"
    body = messages[1:-1]
    assert len(body) % 2 == 0, "IrB/IrA must come in pairs"
    last_t = -1
    for ir_b, ir_a in zip(body[::2], body[1::2]):
        assert isinstance(ir_b, IrB) and isinstance(ir_a, IrA), "IrB(t) must precede IrA(t)"
        assert ir_b.t == ir_a.t, "IrA must answer the IrB of the same iteration"
        assert ir_b.t > last_t, "iteration indices must strictly increase"
        last_t = ir_b.t
