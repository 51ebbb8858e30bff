"""SCAI domain types, JSON decoding/encoding and structural validation.

Decoding never stops at the first problem: every violation in a document is
reported as a :class:`ValidationIssue` so CI logs show the complete picture.

Two modes exist. ``lax`` accepts the published example corpus (untyped
conditions, legacy Object Reference keys, unknown fields) with warnings;
``strict`` turns those warnings into errors and is what signing uses.
"""

from __future__ import annotations

import base64
import binascii
import enum
import re
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Any, Literal

from scai_kit.canon import parse_json
from scai_kit.errors import ValidationFailed


class Mode(str, enum.Enum):
    STRICT = "strict"
    LAX = "lax"


ModeLike = Mode | Literal["strict", "lax"]

# Hex length of every algorithm this toolkit can compute and check.
DIGEST_ALGORITHMS: Mapping[str, int] = {"sha256": 64, "sha512": 128}

_ALGORITHM_NAME = re.compile(r"^[a-z0-9][a-z0-9_-]*$")
_LOWER_HEX = re.compile(r"^[0-9a-f]+$")
# RFC 3986: scheme ":" followed by characters drawn from unreserved,
# reserved and pct-encoded productions.
_URI = re.compile(
    r"^[A-Za-z][A-Za-z0-9+.\-]*:"
    r"(?:[A-Za-z0-9\-._~:/?#\[\]@!$&'()*+,;=]|%[0-9A-Fa-f]{2})*$"
)

# Closed set of issue codes.
ISSUE_CODES = frozenset(
    {
        "NOT_AN_OBJECT",  # a JSON object was expected
        "WRONG_TYPE",  # field present with the wrong JSON type
        "MISSING_FIELD",  # required field absent
        "UNKNOWN_FIELD",  # field not part of the format (warning in lax mode)
        "MISSING_ATTRIBUTE",  # assertion attribute absent or blank
        "EMPTY_ATTRIBUTES",  # report attributes list is empty
        "SUBJECT_DIGEST_REQUIRED",  # report subject has no digest
        "DESCRIPTOR_EMPTY",  # descriptor has none of name/uri/digest
        "INVALID_URI",  # uri/downloadLocation/locationURI is not an RFC 3986 URI
        "INVALID_CONTENT",  # descriptor content is not base64
        "EMPTY_DIGEST_SET",  # digest object has no entries
        "INVALID_ALGORITHM_NAME",  # digest key is not a lowercase token
        "INVALID_DIGEST",  # registered algorithm with bad hex or length
        "UNKNOWN_ALGORITHM",  # unregistered algorithm (warning in lax mode)
        "CONDITIONS_UNTYPED",  # conditions lack a "type" key (warning in lax mode)
        "EVIDENCE_DIGEST_MISSING",  # evidence without digest (warning in lax mode)
        "LEGACY_OBJECT_REFERENCE",  # deprecated keys upgraded (error in strict mode)
        "LEGACY_CONFLICT",  # legacy key disagrees with its modern counterpart
    }
)

Severity = Literal["error", "warning"]


@dataclass(frozen=True)
class ValidationIssue:
    severity: Severity
    path: str
    code: str
    message: str

    def __post_init__(self) -> None:
        if self.code not in ISSUE_CODES:
            raise ValueError(f"undocumented issue code {self.code!r}")

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.code}: {self.message}"


@dataclass(frozen=True)
class DigestSet:
    """Algorithm name to lowercase hex digest. Stored sorted, so equality is
    independent of insertion order and instances are hashable."""

    items: tuple[tuple[str, str], ...]

    def __init__(self, entries: Mapping[str, str] | None = None, /, **kwargs: str) -> None:
        merged = dict(entries or {})
        merged.update(kwargs)
        if not merged:
            raise ValueError("a digest set needs at least one entry")
        object.__setattr__(self, "items", tuple(sorted(merged.items())))

    def __getitem__(self, algorithm: str) -> str:
        for alg, value in self.items:
            if alg == algorithm:
                return value
        raise KeyError(algorithm)

    def __contains__(self, algorithm: object) -> bool:
        return any(alg == algorithm for alg, _ in self.items)

    def __iter__(self) -> Iterator[str]:
        return (alg for alg, _ in self.items)

    def __len__(self) -> int:
        return len(self.items)

    def get(self, algorithm: str, default: str | None = None) -> str | None:
        return dict(self.items).get(algorithm, default)

    def as_dict(self) -> dict[str, str]:
        return dict(self.items)

    def __repr__(self) -> str:
        return f"DigestSet({self.as_dict()!r})"


class DigestMatch(str, enum.Enum):
    MATCH = "Match"
    NO_OVERLAP = "NoOverlap"
    MISMATCH = "Mismatch"


def digest_set_match(expected: DigestSet, actual: DigestSet) -> DigestMatch:
    """Compare two digest sets on the algorithms they share.

    Any disagreement on a shared algorithm is a mismatch; sharing nothing means
    the objects cannot be considered the same.
    """
    shared = set(expected) & set(actual)
    if not shared:
        return DigestMatch.NO_OVERLAP
    if any(expected[alg] != actual[alg] for alg in shared):
        return DigestMatch.MISMATCH
    return DigestMatch.MATCH


@dataclass(frozen=True)
class ResourceDescriptor:
    name: str | None = None
    uri: str | None = None
    digest: DigestSet | None = None
    download_location: str | None = None
    media_type: str | None = None
    content: bytes | None = None


@dataclass(frozen=True)
class LegacyObjectReference:
    """The deprecated v0.1 Object Reference."""

    name: str
    digest: DigestSet
    location_uri: str | None = None
    object_type: str | None = None


def upgrade_object_reference(legacy: LegacyObjectReference) -> ResourceDescriptor:
    return ResourceDescriptor(
        name=legacy.name,
        digest=legacy.digest,
        uri=legacy.location_uri,
        media_type=legacy.object_type,
    )


@dataclass(frozen=True)
class Conditions:
    body: dict[str, Any] = field(default_factory=dict)

    @property
    def type_discriminator(self) -> str | None:
        value = self.body.get("type")
        return value if isinstance(value, str) else None


@dataclass(frozen=True)
class AttributeAssertion:
    attribute: str
    conditions: Conditions | None = None
    target: ResourceDescriptor | None = None
    evidence: ResourceDescriptor | None = None


@dataclass(frozen=True)
class Report:
    subject: ResourceDescriptor
    attributes: tuple[AttributeAssertion, ...]
    producer: ResourceDescriptor | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.attributes, tuple):
            object.__setattr__(self, "attributes", tuple(self.attributes))


# -- encoding ----------------------------------------------------------------


def encode_descriptor(rd: ResourceDescriptor) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if rd.name is not None:
        out["name"] = rd.name
    if rd.uri is not None:
        out["uri"] = rd.uri
    if rd.digest is not None:
        out["digest"] = rd.digest.as_dict()
    if rd.content is not None:
        out["content"] = base64.b64encode(rd.content).decode("ascii")
    if rd.download_location is not None:
        out["downloadLocation"] = rd.download_location
    if rd.media_type is not None:
        out["mediaType"] = rd.media_type
    return out


def encode_assertion(a: AttributeAssertion) -> dict[str, Any]:
    out: dict[str, Any] = {"attribute": a.attribute}
    if a.conditions is not None:
        out["conditions"] = a.conditions.body
    if a.target is not None:
        out["target"] = encode_descriptor(a.target)
    if a.evidence is not None:
        out["evidence"] = encode_descriptor(a.evidence)
    return out


def encode_report(r: Report) -> dict[str, Any]:
    out: dict[str, Any] = {
        "subject": encode_descriptor(r.subject),
        "attributes": [encode_assertion(a) for a in r.attributes],
    }
    if r.producer is not None:
        out["producer"] = encode_descriptor(r.producer)
    return out


# -- decoding ----------------------------------------------------------------

_DESCRIPTOR_KEYS = {"name", "uri", "digest", "downloadLocation", "mediaType", "content"}
_LEGACY_KEYS = {"objectType", "locationURI"}
_ASSERTION_KEYS = {"attribute", "conditions", "target", "evidence"}
_REPORT_KEYS = {"subject", "attributes", "producer"}


class _Checker:
    """Accumulates issues while walking one JSON document."""

    def __init__(self, mode: ModeLike) -> None:
        self.mode = Mode(mode)
        self.issues: list[ValidationIssue] = []

    def error(self, path: str, code: str, message: str) -> None:
        self.issues.append(ValidationIssue("error", path or "/", code, message))

    def soft(self, path: str, code: str, message: str) -> None:
        """Warning in lax mode, error in strict mode."""
        severity: Severity = "error" if self.mode is Mode.STRICT else "warning"
        self.issues.append(ValidationIssue(severity, path or "/", code, message))

    def unknown_keys(self, obj: Mapping[str, Any], allowed: set[str], path: str) -> None:
        for key in sorted(set(obj) - allowed):
            self.soft(f"{path}/{key}", "UNKNOWN_FIELD", f"unknown field {key!r} dropped")

    def text(self, obj: Mapping[str, Any], key: str, path: str) -> str | None:
        if key not in obj:
            return None
        value = obj[key]
        if not isinstance(value, str):
            self.error(f"{path}/{key}", "WRONG_TYPE", f"{key} must be a string")
            return None
        return value

    def uri(self, obj: Mapping[str, Any], key: str, path: str) -> str | None:
        value = self.text(obj, key, path)
        if value is not None and not is_uri(value):
            self.error(f"{path}/{key}", "INVALID_URI", f"{value!r} is not an RFC 3986 URI")
            return None
        return value

    def digest_set(self, value: Any, path: str) -> DigestSet | None:
        if not isinstance(value, dict):
            self.error(path, "WRONG_TYPE", "digest must be an object")
            return None
        if not value:
            self.error(path, "EMPTY_DIGEST_SET", "digest set has no entries")
            return None
        entries: dict[str, str] = {}
        ok = True
        for alg, hexval in value.items():
            p = f"{path}/{alg}"
            if not _ALGORITHM_NAME.match(alg):
                self.error(p, "INVALID_ALGORITHM_NAME", f"{alg!r} is not a lowercase algorithm id")
                ok = False
                continue
            if not isinstance(hexval, str):
                self.error(p, "WRONG_TYPE", "digest value must be a string")
                ok = False
                continue
            expected_len = DIGEST_ALGORITHMS.get(alg)
            if expected_len is None:
                self.soft(p, "UNKNOWN_ALGORITHM", f"algorithm {alg!r} is not registered")
            elif len(hexval) != expected_len or not _LOWER_HEX.match(hexval):
                self.error(
                    p, "INVALID_DIGEST", f"{alg} digest must be {expected_len} lowercase hex chars"
                )
                ok = False
                continue
            entries[alg] = hexval
        if not ok or not entries:
            return None
        return DigestSet(entries)

    def descriptor(self, value: Any, path: str) -> ResourceDescriptor | None:
        if not isinstance(value, dict):
            self.error(path, "NOT_AN_OBJECT", "resource descriptor must be an object")
            return None
        obj = dict(value)
        n_before = len(self.issues)
        legacy = _LEGACY_KEYS & set(obj)
        if legacy:
            self.soft(
                path,
                "LEGACY_OBJECT_REFERENCE",
                f"deprecated Object Reference key(s) {sorted(legacy)} upgraded",
            )
            obj = self._merge_legacy(obj, path)
        self.unknown_keys(obj, _DESCRIPTOR_KEYS, path)

        name = self.text(obj, "name", path)
        uri = self.uri(obj, "uri", path)
        location = self.uri(obj, "downloadLocation", path)
        media_type = self.text(obj, "mediaType", path)
        digest = None
        if "digest" in obj:
            digest = self.digest_set(obj["digest"], f"{path}/digest")
        content = None
        raw = self.text(obj, "content", path)
        if raw is not None:
            try:
                content = base64.b64decode(raw, validate=True)
            except binascii.Error:
                self.error(f"{path}/content", "INVALID_CONTENT", "content must be base64")
        if not ({"name", "uri", "digest"} & set(obj)):
            self.error(path, "DESCRIPTOR_EMPTY", "descriptor needs at least one of name, uri, digest")
        if self._has_errors_since(n_before):
            return None
        return ResourceDescriptor(
            name=name,
            uri=uri,
            digest=digest,
            download_location=location,
            media_type=media_type,
            content=content,
        )

    def _merge_legacy(self, obj: dict[str, Any], path: str) -> dict[str, Any]:
        merged = {k: v for k, v in obj.items() if k not in _LEGACY_KEYS}
        for old, new in (("locationURI", "uri"), ("objectType", "mediaType")):
            if old not in obj:
                continue
            if new in obj and obj[new] != obj[old]:
                self.error(
                    f"{path}/{old}", "LEGACY_CONFLICT", f"{old} disagrees with {new}"
                )
                continue
            merged[new] = obj[old]
        return merged

    def _has_errors_since(self, index: int) -> bool:
        return any(i.severity == "error" for i in self.issues[index:])

    def assertion(self, value: Any, path: str) -> AttributeAssertion | None:
        if not isinstance(value, dict):
            self.error(path, "NOT_AN_OBJECT", "attribute assertion must be an object")
            return None
        n_before = len(self.issues)
        self.unknown_keys(value, _ASSERTION_KEYS, path)
        attribute = value.get("attribute")
        if attribute is None or (isinstance(attribute, str) and not attribute.strip()):
            self.error(f"{path}/attribute", "MISSING_ATTRIBUTE", "attribute must be non-empty text")
        elif not isinstance(attribute, str):
            self.error(f"{path}/attribute", "WRONG_TYPE", "attribute must be a string")

        conditions = None
        if "conditions" in value:
            body = value["conditions"]
            if not isinstance(body, dict):
                self.error(f"{path}/conditions", "NOT_AN_OBJECT", "conditions must be an object")
            else:
                conditions = Conditions(body)
                if conditions.type_discriminator is None:
                    self.soft(
                        f"{path}/conditions",
                        "CONDITIONS_UNTYPED",
                        'conditions are not self-describing (no "type" key)',
                    )
        target = None
        if "target" in value:
            target = self.descriptor(value["target"], f"{path}/target")
        evidence = None
        if "evidence" in value:
            evidence = self.descriptor(value["evidence"], f"{path}/evidence")
            if isinstance(value["evidence"], dict) and "digest" not in value["evidence"]:
                self.soft(
                    f"{path}/evidence",
                    "EVIDENCE_DIGEST_MISSING",
                    "evidence has no digest so its integrity cannot be checked",
                )
        if self._has_errors_since(n_before):
            return None
        assert isinstance(attribute, str)
        return AttributeAssertion(attribute, conditions, target, evidence)

    def report(self, value: Any) -> Report | None:
        if not isinstance(value, dict):
            self.error("/", "NOT_AN_OBJECT", "report must be a JSON object")
            return None
        self.unknown_keys(value, _REPORT_KEYS, "")

        subject = None
        if "subject" not in value:
            self.error("/subject", "MISSING_FIELD", "subject is required")
        else:
            raw_subject = value["subject"]
            subject = self.descriptor(raw_subject, "/subject")
            if isinstance(raw_subject, dict) and "digest" not in raw_subject:
                self.error(
                    "/subject/digest",
                    "SUBJECT_DIGEST_REQUIRED",
                    "subject must carry at least a digest",
                )
                subject = None

        attributes: list[AttributeAssertion] = []
        attrs_ok = False
        if "attributes" not in value:
            self.error("/attributes", "MISSING_FIELD", "attributes is required")
        elif not isinstance(value["attributes"], list):
            self.error("/attributes", "WRONG_TYPE", "attributes must be a list")
        elif not value["attributes"]:
            self.error("/attributes", "EMPTY_ATTRIBUTES", "attributes needs one or more assertions")
        else:
            attrs_ok = True
            for i, item in enumerate(value["attributes"]):
                a = self.assertion(item, f"/attributes/{i}")
                if a is None:
                    attrs_ok = False
                else:
                    attributes.append(a)

        producer = None
        producer_ok = True
        if "producer" in value:
            producer = self.descriptor(value["producer"], "/producer")
            producer_ok = producer is not None

        if subject is None or not attrs_ok or not producer_ok:
            return None
        return Report(subject, tuple(attributes), producer)


def is_uri(value: str) -> bool:
    return bool(_URI.match(value))


def has_errors(issues: list[ValidationIssue]) -> bool:
    return any(i.severity == "error" for i in issues)


def _load(document: bytes | str | Mapping[str, Any]) -> Any:
    if isinstance(document, (bytes, str)):
        return parse_json(document)
    return document


def check_report(
    document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX
) -> tuple[Report | None, list[ValidationIssue]]:
    """Decode a report and return it with every issue found.

    The report is ``None`` exactly when some issue has error severity.
    Raises :class:`~scai_kit.errors.MalformedJson` for unparseable text.
    """
    checker = _Checker(mode)
    report = checker.report(_load(document))
    if has_errors(checker.issues):
        report = None
    return report, checker.issues


def check_assertion(
    document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX
) -> tuple[AttributeAssertion | None, list[ValidationIssue]]:
    checker = _Checker(mode)
    assertion = checker.assertion(_load(document), "")
    if has_errors(checker.issues):
        assertion = None
    return assertion, checker.issues


def check_descriptor(
    document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX
) -> tuple[ResourceDescriptor | None, list[ValidationIssue]]:
    checker = _Checker(mode)
    rd = checker.descriptor(_load(document), "")
    if has_errors(checker.issues):
        rd = None
    return rd, checker.issues


def decode_report(document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX) -> Report:
    """Decode a report, raising :class:`ValidationFailed` carrying all issues."""
    report, issues = check_report(document, mode)
    if report is None:
        raise ValidationFailed(issues)
    return report


def decode_assertion(
    document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX
) -> AttributeAssertion:
    assertion, issues = check_assertion(document, mode)
    if assertion is None:
        raise ValidationFailed(issues)
    return assertion


def decode_descriptor(
    document: bytes | str | Mapping[str, Any], mode: ModeLike = Mode.LAX
) -> ResourceDescriptor:
    rd, issues = check_descriptor(document, mode)
    if rd is None:
        raise ValidationFailed(issues)
    return rd


def validate_report(report: Report, mode: ModeLike = Mode.STRICT) -> list[ValidationIssue]:
    """Validate an in-memory report by round-tripping it through its JSON form."""
    return check_report(encode_report(report), mode)[1]


def decode_legacy_reference(document: Mapping[str, Any]) -> LegacyObjectReference:
    """Read a v0.1 Object Reference (name + digest required)."""
    checker = _Checker(Mode.LAX)
    checker.unknown_keys(document, {"objectType", "name", "digest", "locationURI"}, "")
    name = checker.text(document, "name", "")
    if name is None and "name" not in document:
        checker.error("/name", "MISSING_FIELD", "name is required")
    digest = None
    if "digest" not in document:
        checker.error("/digest", "MISSING_FIELD", "digest is required")
    else:
        digest = checker.digest_set(document["digest"], "/digest")
    location = checker.uri(document, "locationURI", "")
    object_type = checker.text(document, "objectType", "")
    if has_errors(checker.issues):
        raise ValidationFailed(checker.issues)
    assert name is not None and digest is not None
    return LegacyObjectReference(name, digest, location, object_type)


def descriptor_key(digest: DigestSet) -> str:
    """Stable identity string for a digest set: sha256 when present, else the
    lexicographically first algorithm."""
    alg = "sha256" if "sha256" in digest else sorted(digest)[0]
    return f"{alg}:{digest[alg]}"
