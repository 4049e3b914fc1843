"""Exception types shared across the package.

Plain file-system problems (missing files, unwritable directories) surface as
the built-in ``OSError`` family; everything domain-specific derives from
``AttribError`` so callers can catch one base class at the CLI boundary.
"""


class AttribError(Exception):
    """Base class for all domain errors raised by this package."""


class DecodeError(AttribError):
    """Image bytes could not be decoded as PNG or JPEG."""


class InvalidParam(AttribError):
    """A parameter is outside its documented range."""


class EmptyInput(AttribError):
    """An operation that needs at least one element got none."""


class NotCentered(AttribError):
    """A spectrum operation requires a DC-centered spectrum."""


class DimensionMismatch(AttribError):
    """Vector dimensions or image shapes do not agree."""


class ZeroVector(AttribError):
    """Cosine similarity is undefined for a zero-norm vector."""


class TooSmall(AttribError):
    """Image is smaller than the operation's minimum window."""


class EmptyPool(AttribError):
    """A candidate pool with zero entries cannot be scored."""


class EmptyScores(AttribError):
    """A score set with zero entries cannot be ranked."""


class PromptUnavailable(AttribError):
    """No prompt could be produced for the given image."""


class GenerationFailed(AttribError):
    """A backend failed to produce candidate images for a model."""

    def __init__(self, model_id: str, reason: str = ""):
        self.model_id = model_id
        msg = f"generation failed for model {model_id!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class RegistryMiss(AttribError):
    """The prompt registry has no entry for the image."""


class TooManyModels(AttribError):
    """Requested family size exceeds the fingerprint palette."""


class LengthMismatch(AttribError):
    """Truth and prediction sequences differ in length."""


class UnknownLabel(AttribError):
    """A label does not belong to the declared model set."""


class GatewayError(AttribError):
    """Base class for wire-protocol client failures."""


class TransportError(GatewayError):
    """Connection, timeout, or other transport failure after retries."""


class ProtocolError(GatewayError):
    """The remote body does not conform to the wire protocol."""


class RemoteError(GatewayError):
    """The remote service returned an error payload."""

    def __init__(self, status: int, code: str, message: str = ""):
        self.status = status
        self.code = code
        super().__init__(f"remote error {status} ({code}): {message}")


class CountMismatch(GatewayError):
    """The remote returned a different number of images than requested."""


class NonFiniteVector(GatewayError):
    """A remote embedding contains NaN or infinite entries."""


class UsageError(AttribError):
    """Bad command-line or config-file input (exit code 2)."""
