"""Canonical JSON (RFC 8785 / JCS) and the DSSE pre-authentication encoding.

Signatures are computed over ``pre_auth_encode(payload_type, canonicalize(doc))``
so that two producers serializing the same report always sign the same bytes.
"""

from __future__ import annotations

import json
import math
from typing import Any, NewType

from scai_kit.errors import MalformedJson, NonCanonicalizable

CanonicalBytes = NewType("CanonicalBytes", bytes)

# Largest integer magnitude an IEEE-754 double holds exactly.
MAX_SAFE_INTEGER = 2**53

_SHORT_ESCAPES = {
    0x08: "\\b",
    0x09: "\\t",
    0x0A: "\\n",
    0x0C: "\\f",
    0x0D: "\\r",
    0x22: '\\"',
    0x5C: "\\\\",
}


def parse_json(data: bytes | str) -> Any:
    """Parse UTF-8 JSON, rejecting duplicate object keys and NaN/Infinity."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not UTF-8: {exc}") from None
    try:
        return json.loads(
            data,
            object_pairs_hook=_reject_duplicates,
            parse_constant=_reject_constant,
            parse_int=_parse_int,
            parse_float=_parse_float,
        )
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise MalformedJson(f"duplicate key {key!r}")
        out[key] = value
    return out


def _reject_constant(name: str) -> Any:
    raise MalformedJson(f"non-finite number {name} is not JSON")


def _parse_float(text: str) -> float:
    value = float(text)
    if math.isinf(value):
        raise MalformedJson(f"number {text[:40]} overflows a double")
    return value


def _parse_int(text: str) -> int | float:
    # Integer literals name a double; beyond 2**53 keep the double, not the exact int.
    value = int(text)
    if abs(value) <= MAX_SAFE_INTEGER:
        return value
    return _parse_float(text)


def canonicalize(value: Any) -> CanonicalBytes:
    """Serialize ``value`` to JCS canonical bytes.

    >>> canonicalize({"b": 1, "a": 2})
    b'{"a":2,"b":1}'
    """
    parts: list[str] = []
    _emit(value, parts)
    text = "".join(parts)
    try:
        return CanonicalBytes(text.encode("utf-8"))
    except UnicodeEncodeError as exc:  # lone surrogate slipped through a key
        raise NonCanonicalizable(f"lone surrogate in string: {exc}") from None


def canonicalize_text(data: bytes | str) -> CanonicalBytes:
    """Parse JSON text and canonicalize it; duplicate keys are not canonicalizable."""
    try:
        value = parse_json(data)
    except MalformedJson as exc:
        raise NonCanonicalizable(str(exc)) from None
    return canonicalize(value)


def _emit(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        if abs(value) <= MAX_SAFE_INTEGER:
            out.append(str(value))
            return
        # Large integers are fine only when a double holds them exactly; this
        # keeps canonical output (e.g. "9007199254740994") a fixed point.
        try:
            as_float = float(value)
        except OverflowError:
            as_float = math.inf
        if math.isinf(as_float) or int(as_float) != value:
            raise NonCanonicalizable(f"integer {value} is not exactly representable as IEEE-754")
        out.append(format_number(as_float))
    elif isinstance(value, float):
        out.append(format_number(value))
    elif isinstance(value, str):
        out.append(_quote(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise NonCanonicalizable(f"object key {key!r} is not a string")
        out.append("{")
        for i, key in enumerate(sorted(value, key=_utf16_sort_key)):
            if i:
                out.append(",")
            out.append(_quote(key))
            out.append(":")
            _emit(value[key], out)
        out.append("}")
    else:
        raise NonCanonicalizable(f"cannot canonicalize {type(value).__name__}")


def _utf16_sort_key(key: str) -> bytes:
    try:
        return key.encode("utf-16-be")
    except UnicodeEncodeError:
        raise NonCanonicalizable(f"lone surrogate in key {key!r}") from None


def _quote(s: str) -> str:
    chunks = ['"']
    for ch in s:
        cp = ord(ch)
        if 0xD800 <= cp <= 0xDFFF:
            raise NonCanonicalizable(f"lone surrogate U+{cp:04X} in string")
        esc = _SHORT_ESCAPES.get(cp)
        if esc is not None:
            chunks.append(esc)
        elif cp < 0x20:
            chunks.append(f"\\u{cp:04x}")
        else:
            chunks.append(ch)
    chunks.append('"')
    return "".join(chunks)


def format_number(x: float) -> str:
    """Format a double the way ECMAScript ``Number.prototype.toString`` does."""
    if not math.isfinite(x):
        raise NonCanonicalizable(f"{x} is not a finite number")
    if x == 0:
        return "0"
    sign = "-" if x < 0 else ""
    digits, point = _shortest_digits(abs(x))
    k = len(digits)
    n = point
    if k <= n <= 21:
        body = digits + "0" * (n - k)
    elif 0 < n <= 21:
        body = digits[:n] + "." + digits[n:]
    elif -6 < n <= 0:
        body = "0." + "0" * (-n) + digits
    else:
        exp = n - 1
        exp_text = f"e+{exp}" if exp >= 0 else f"e-{-exp}"
        mantissa = digits if k == 1 else digits[0] + "." + digits[1:]
        body = mantissa + exp_text
    return sign + body


def _shortest_digits(x: float) -> tuple[str, int]:
    """Return (digits, n) with x == 0.digits * 10**n and digits minimal.

    Python's ``repr`` already yields the shortest round-tripping digit string.
    """
    text = repr(x)
    mantissa, _, exp_part = text.partition("e")
    exp = int(exp_part) if exp_part else 0
    int_part, _, frac_part = mantissa.partition(".")
    digits = int_part + frac_part
    point = len(int_part) + exp
    stripped = digits.lstrip("0")
    point -= len(digits) - len(stripped)
    digits = stripped.rstrip("0")
    return digits, point


def pre_auth_encode(payload_type: str, payload: bytes) -> bytes:
    """DSSE v1 PAE: ``"DSSEv1" SP len(type) SP type SP len(payload) SP payload``."""
    if not payload_type or not payload_type.isascii():
        raise ValueError("payloadType must be non-empty ASCII")
    type_bytes = payload_type.encode("ascii")
    return b"DSSEv1 %d %b %d %b" % (len(type_bytes), type_bytes, len(payload), payload)
