"""Exception hierarchy shared across the package."""


class HdpVflError(Exception):
    """Base class for all errors raised by hdpvfl."""


class InputError(HdpVflError, ValueError):
    """Bad user input: malformed CSV, out-of-domain target, invalid knob."""


class DivergenceError(HdpVflError, ArithmeticError):
    """Training produced non-finite weights."""

    def __init__(self, iteration: int, role: str = ""):
        who = f"{role} party " if role else ""
        super().__init__(f"{who}weights became non-finite at iteration {iteration}")
        self.iteration = iteration
        self.role = role


class TransportError(HdpVflError, OSError):
    """Channel failure: closed endpoint, dropped peer, broken frame."""


class ChannelClosedError(TransportError):
    pass


class TruncationError(TransportError):
    """Peer went away in the middle of a frame."""


class DecodeError(TransportError):
    """A frame arrived intact but its payload could not be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ProtocolError(TransportError):
    """A well-formed message arrived out of the expected order."""


class EncodeError(TransportError, ValueError):
    """A message could not be serialised (non-finite value, oversize frame)."""
