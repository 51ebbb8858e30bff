"""Ed25519 keys and DSSE-style envelopes around canonical SCAI reports."""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import os
import secrets
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from scai_kit.canon import CanonicalBytes, canonicalize, parse_json, pre_auth_encode
from scai_kit.errors import (
    BadSeedLength,
    EnvelopeFormatError,
    KeyFileError,
    MalformedJson,
    PayloadInvalid,
    SignatureInvalid,
    StrictValidationFailed,
    ThresholdNotMet,
    UntrustedSigner,
    ValidationFailed,
)
from scai_kit.model import (
    Mode,
    ModeLike,
    Report,
    ValidationIssue,
    check_report,
    encode_report,
    has_errors,
    validate_report,
)

SCHEME = "ed25519"
# Envelope-format identifier written alongside payloadType/payload/signatures.
ENVELOPE_TYPE = "https://github.com/secure-systems-lab/dsse"

REPORT_PAYLOAD_TYPE = "scai/report/v0.2"
ACCEPTED_PAYLOAD_TYPES = frozenset(
    {"scai/report/v0.1", "scai/report/v0.2", "application/vnd.scai.report+json"}
)


def compute_keyid(public_key: bytes) -> str:
    return hashlib.sha256(public_key).hexdigest()


@dataclass(frozen=True)
class PublicKey:
    raw: bytes
    scheme: str = SCHEME

    @property
    def keyid(self) -> str:
        return compute_keyid(self.raw)

    def verify(self, signature: bytes, message: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(self.raw).verify(signature, message)
        except InvalidSignature:
            return False
        return True


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    scheme: str = SCHEME
    keyid: str = ""

    def __post_init__(self) -> None:
        expected = compute_keyid(self.public_key)
        if self.keyid and self.keyid != expected:
            raise KeyFileError(f"keyid {self.keyid} does not match public key ({expected})")
        object.__setattr__(self, "keyid", expected)

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.public_key, self.scheme)

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(message)


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Create an Ed25519 key pair; deterministic when ``seed`` is given."""
    if seed is None:
        seed = secrets.token_bytes(32)
    elif len(seed) != 32:
        raise BadSeedLength(f"seed must be 32 bytes, got {len(seed)}")
    public = (
        Ed25519PrivateKey.from_private_bytes(seed)
        .public_key()
        .public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    )
    return KeyPair(public_key=public, private_key=bytes(seed))


# -- key files ---------------------------------------------------------------


def keypair_to_json(key: KeyPair, include_private: bool = True) -> dict[str, str]:
    doc = {
        "scheme": key.scheme,
        "keyid": key.keyid,
        "public": base64.b64encode(key.public_key).decode("ascii"),
    }
    if include_private:
        doc["private"] = base64.b64encode(key.private_key).decode("ascii")
    return doc


def write_key_file(path: str | Path, key: KeyPair, include_private: bool = True) -> None:
    data = json.dumps(keypair_to_json(key, include_private), indent=2) + "\n"
    path = Path(path)
    if include_private:
        # Create with restrictive permissions rather than chmod after the fact.
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
    else:
        path.write_text(data, encoding="utf-8")


def _b64field(doc: Mapping[str, Any], key: str, size: int) -> bytes:
    value = doc.get(key)
    if not isinstance(value, str):
        raise KeyFileError(f"key field {key!r} missing or not a string")
    try:
        raw = base64.b64decode(value, validate=True)
    except binascii.Error as exc:
        raise KeyFileError(f"key field {key!r} is not base64: {exc}") from None
    if len(raw) != size:
        raise KeyFileError(f"key field {key!r} must decode to {size} bytes")
    return raw


def key_from_json(doc: Any) -> KeyPair | PublicKey:
    """Load a key document; returns a KeyPair when private material is present."""
    if not isinstance(doc, dict):
        raise KeyFileError("key document must be a JSON object")
    scheme = doc.get("scheme", SCHEME)
    if scheme != SCHEME:
        raise KeyFileError(f"unsupported key scheme {scheme!r}")
    public = _b64field(doc, "public", 32)
    keyid = doc.get("keyid")
    if keyid is not None and keyid != compute_keyid(public):
        raise KeyFileError("keyid does not match public key")
    if "private" in doc:
        pair = generate_keypair(_b64field(doc, "private", 32))
        if pair.public_key != public:
            raise KeyFileError("private key does not match public key")
        return pair
    return PublicKey(public, scheme)


def load_key_file(path: str | Path) -> KeyPair | PublicKey:
    try:
        text = Path(path).read_bytes()
    except OSError as exc:
        raise KeyFileError(f"cannot read key file {path}: {exc.strerror}") from None
    try:
        return key_from_json(parse_json(text))
    except MalformedJson as exc:
        raise KeyFileError(f"key file {path} is not JSON: {exc}") from None


def load_public_key(path: str | Path) -> PublicKey:
    key = load_key_file(path)
    return key.public if isinstance(key, KeyPair) else key


# -- envelopes ---------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    sig: bytes
    keyid: str | None = None


@dataclass(frozen=True)
class Envelope:
    payload_type: str
    payload: bytes
    signatures: tuple[Signature, ...]

    def to_json(self) -> dict[str, Any]:
        sigs = []
        for s in self.signatures:
            entry = {"sig": base64.b64encode(s.sig).decode("ascii")}
            if s.keyid is not None:
                entry = {"keyid": s.keyid, **entry}
            sigs.append(entry)
        return {
            "type": ENVELOPE_TYPE,
            "payloadType": self.payload_type,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "signatures": sigs,
        }

    def to_bytes(self) -> bytes:
        return (json.dumps(self.to_json(), indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_json(cls, doc: Any) -> Envelope:
        if not isinstance(doc, dict):
            raise EnvelopeFormatError("envelope must be a JSON object")
        env_type = doc.get("type", ENVELOPE_TYPE)
        if env_type != ENVELOPE_TYPE:
            raise EnvelopeFormatError(f"unsupported envelope type {env_type!r}")
        payload_type = doc.get("payloadType")
        if not isinstance(payload_type, str) or not payload_type:
            raise EnvelopeFormatError("payloadType must be a non-empty string")
        payload = _decode_b64(doc.get("payload"), "payload")
        raw_sigs = doc.get("signatures")
        if not isinstance(raw_sigs, list) or not raw_sigs:
            raise EnvelopeFormatError("signatures must be a non-empty list")
        sigs = []
        for i, entry in enumerate(raw_sigs):
            if not isinstance(entry, dict):
                raise EnvelopeFormatError(f"signatures[{i}] must be an object")
            keyid = entry.get("keyid")
            if keyid is not None and not isinstance(keyid, str):
                raise EnvelopeFormatError(f"signatures[{i}].keyid must be a string")
            sigs.append(Signature(_decode_b64(entry.get("sig"), f"signatures[{i}].sig"), keyid or None))
        return cls(payload_type, payload, tuple(sigs))

    @classmethod
    def from_bytes(cls, data: bytes | str) -> Envelope:
        try:
            doc = parse_json(data)
        except MalformedJson as exc:
            raise EnvelopeFormatError(f"envelope is not JSON: {exc}") from None
        return cls.from_json(doc)


def _decode_b64(value: Any, what: str) -> bytes:
    if not isinstance(value, str):
        raise EnvelopeFormatError(f"{what} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except binascii.Error as exc:
        raise EnvelopeFormatError(f"{what} is not valid base64: {exc}") from None


def sign_report(
    report: Report,
    signer: KeyPair,
    payload_type: str = REPORT_PAYLOAD_TYPE,
    mode: ModeLike = Mode.STRICT,
) -> Envelope:
    """Validate ``report`` and wrap its canonical bytes in a signed envelope.

    The payload is exactly the canonical encoding of subject, attributes and
    producer; signature material lives only in the envelope.
    """
    issues = validate_report(report, mode)
    if has_errors(issues):
        raise StrictValidationFailed(issues)
    payload = canonicalize(encode_report(report))
    sig = signer.sign(pre_auth_encode(payload_type, payload))
    return Envelope(payload_type, payload, (Signature(sig, signer.keyid),))


def add_signature(envelope: Envelope, signer: KeyPair) -> Envelope:
    """Counter-sign an existing envelope (for multi-signer thresholds)."""
    sig = signer.sign(pre_auth_encode(envelope.payload_type, envelope.payload))
    kept = tuple(s for s in envelope.signatures if s.keyid != signer.keyid)
    return Envelope(envelope.payload_type, envelope.payload, kept + (Signature(sig, signer.keyid),))


@dataclass(frozen=True)
class VerifiedReport:
    report: Report
    signer_keyids: tuple[str, ...]
    payload_bytes: CanonicalBytes
    payload_type: str = REPORT_PAYLOAD_TYPE
    warnings: tuple[ValidationIssue, ...] = ()


def _as_public(key: PublicKey | KeyPair | bytes) -> PublicKey:
    if isinstance(key, KeyPair):
        return key.public
    if isinstance(key, bytes):
        return PublicKey(key)
    return key


def verify_envelope(
    env: Envelope,
    trusted_keys: Iterable[PublicKey | KeyPair | bytes],
    threshold: int = 1,
) -> VerifiedReport:
    """Check signatures against ``trusted_keys`` and decode the payload.

    A signature whose keyid names a trusted key must verify, otherwise the
    whole envelope is rejected; signatures from unknown keyids are ignored.
    Signatures without a keyid are tried against every trusted key.
    """
    trusted = {k.keyid: k for k in map(_as_public, trusted_keys)}
    if not trusted:
        raise ValueError("at least one trusted key is required")
    if threshold < 1:
        raise ValueError("threshold must be at least 1")

    try:
        message: bytes | None = pre_auth_encode(env.payload_type, env.payload)
    except ValueError:
        message = None  # a non-ASCII type can never have been signed
    verified: set[str] = set()
    failed: list[str] = []
    for sig in env.signatures:
        if sig.keyid is not None:
            key = trusted.get(sig.keyid)
            if key is None:
                continue
            if message is not None and key.verify(sig.sig, message):
                verified.add(key.keyid)
            else:
                failed.append(key.keyid)
        elif message is not None:
            verified.update(k.keyid for k in trusted.values() if k.verify(sig.sig, message))

    if failed:
        raise SignatureInvalid(f"signature by trusted key {sorted(failed)[0]} does not verify")
    if not verified:
        raise UntrustedSigner("no signature from a trusted key")
    if len(verified) < threshold:
        raise ThresholdNotMet(f"{len(verified)} of required {threshold} trusted signatures")

    if env.payload_type not in ACCEPTED_PAYLOAD_TYPES:
        raise PayloadInvalid(f"unsupported payloadType {env.payload_type!r}")
    try:
        report, issues = check_report(env.payload, Mode.LAX)
    except MalformedJson as exc:
        raise PayloadInvalid(f"payload is not JSON: {exc}") from None
    if report is None:
        raise PayloadInvalid(str(ValidationFailed(issues)))
    return VerifiedReport(
        report=report,
        signer_keyids=tuple(sorted(verified)),
        payload_bytes=CanonicalBytes(env.payload),
        payload_type=env.payload_type,
        warnings=tuple(issues),
    )
