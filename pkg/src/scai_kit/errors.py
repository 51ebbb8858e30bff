"""Exception hierarchy shared by every scai_kit module.

Every exception exposes ``reason``, a stable machine-readable name used by the
CLI when reporting failures.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from scai_kit.model import ValidationIssue


class ScaiError(Exception):
    """Base class for all scai_kit errors."""

    @property
    def reason(self) -> str:
        return type(self).__name__


# -- parsing / validation ----------------------------------------------------


class MalformedJson(ScaiError, ValueError):
    """Input is not UTF-8 JSON, or contains duplicate keys or non-finite numbers."""


class NonCanonicalizable(ScaiError, ValueError):
    """Value cannot be encoded as canonical JSON."""


class ValidationFailed(ScaiError):
    """A document decoded but failed structural validation."""

    def __init__(self, issues: Sequence[ValidationIssue], message: str | None = None) -> None:
        self.issues = list(issues)
        if message is None:
            errors = [i for i in self.issues if i.severity == "error"]
            message = "; ".join(f"{i.path}: {i.code}" for i in errors) or "validation failed"
        super().__init__(message)


class StrictValidationFailed(ValidationFailed):
    """A report was refused for signing because strict validation failed."""


# -- keys and envelopes ------------------------------------------------------


class BadSeedLength(ScaiError, ValueError):
    pass


class KeyFileError(ScaiError):
    """A key file is unreadable or malformed."""


class EnvelopeFormatError(ScaiError):
    """An envelope document does not have the expected shape."""


class VerificationError(ScaiError):
    """Base class for envelope verification failures."""


class SignatureInvalid(VerificationError):
    """A signature attributed to a trusted key failed cryptographic verification."""


class UntrustedSigner(VerificationError):
    """No signature in the envelope belongs to a trusted key."""


class ThresholdNotMet(VerificationError):
    """Fewer distinct trusted keys verified than the threshold requires."""


class PayloadInvalid(VerificationError):
    """Signatures verified but the payload is not an acceptable report."""


# -- store and resolution ----------------------------------------------------


class StoreError(ScaiError):
    pass


class NotFound(StoreError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "not found"


class CorruptObject(StoreError):
    """A stored object no longer hashes to the digest its path claims."""


class IoFailure(StoreError, OSError):
    pass


class ResolveError(ScaiError):
    pass


class Unresolvable(ResolveError):
    """Every source for a descriptor was tried and none produced bytes."""


class IntegrityMismatch(ResolveError):
    """Bytes were obtained but do not match the descriptor's digest."""


class NoOverlapDigest(ResolveError):
    """The descriptor only lists digest algorithms this toolkit cannot compute."""


class FetchError(ScaiError):
    """A fetcher backend could not retrieve a location."""


# -- policy ------------------------------------------------------------------


class MalformedPolicy(ValidationFailed):
    pass


class EvidenceUnresolvable(ScaiError):
    """Evidence required by a policy rule could not be obtained with a verified digest."""


# -- graph -------------------------------------------------------------------


class GraphError(ScaiError):
    pass


class CycleDetected(GraphError):
    def __init__(self, path: Sequence[str]) -> None:
        self.path = list(path)
        super().__init__("dependency cycle: " + " -> ".join(self.path))


class DepthExceeded(GraphError):
    def __init__(self, path: Sequence[str], max_depth: int) -> None:
        self.path = list(path)
        self.max_depth = max_depth
        super().__init__(f"dependency chain deeper than {max_depth}: " + " -> ".join(self.path))


class ChildVerificationFailed(GraphError):
    """A linked dependency report could not be resolved or verified.

    ``edge`` is ``(parent_key, assertion_index)`` of the failing link and
    ``path`` the chain of node keys from the root down to the parent.
    """

    def __init__(self, path: Sequence[str], assertion_index: int, cause: ScaiError) -> None:
        self.path = list(path)
        self.assertion_index = assertion_index
        self.cause = cause
        self.edge = (self.path[-1], assertion_index)
        super().__init__(
            f"edge {self.path[-1]} /attributes/{assertion_index}/evidence: "
            f"{cause.reason}: {cause}"
        )


# -- producer ----------------------------------------------------------------


class ProducerError(ScaiError):
    pass


class MalformedRuleSet(ValidationFailed):
    pass


class CommandFailed(ProducerError):
    def __init__(self, argv: Sequence[str], exit_code: int) -> None:
        self.argv = list(argv)
        self.exit_code = exit_code
        super().__init__(f"command exited with status {exit_code}: {' '.join(self.argv)}")


class OutputMissing(ProducerError):
    pass


class NoAttributes(ProducerError):
    """No rule fired and no baseline attribute is configured."""
