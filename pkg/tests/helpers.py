"""Builders shared across the test modules."""

from __future__ import annotations

import hashlib
import json
import random
import string
from pathlib import Path

from scai_kit.envelope import Envelope, KeyPair, generate_keypair, keypair_to_json, sign_report
from scai_kit.model import (
    AttributeAssertion,
    Conditions,
    DigestSet,
    Report,
    ResourceDescriptor,
)
from scai_kit.store import MemoryFetcher, Resolver, Store

FIXTURES = Path(__file__).parent / "fixtures"
REFERENCE = FIXTURES / "reference"
GOLDEN = FIXTURES / "golden"

SEED_A = bytes(range(32))
SEED_B = bytes(range(32, 64))
SEED_C = bytes(range(64, 96))


def reference_fixture(name: str) -> bytes:
    return (REFERENCE / name).read_bytes()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def key(seed: bytes = SEED_A) -> KeyPair:
    return generate_keypair(seed)


# -- random valid reports ----------------------------------------------------

_NAME_CHARS = string.ascii_letters + string.digits + "-_.+ é€😀"
_URI_CHARS = string.ascii_letters + string.digits + "-._~/"


def _name(rng: random.Random) -> str:
    return "".join(rng.choice(_NAME_CHARS) for _ in range(rng.randint(1, 12)))


def _uri(rng: random.Random) -> str:
    path = "".join(rng.choice(_URI_CHARS) for _ in range(rng.randint(0, 20)))
    return f"{rng.choice(['https', 'http', 'file'])}://example.com/{path}"


def _digest(rng: random.Random) -> DigestSet:
    entries = {"sha256": rng.randbytes(32).hex()}
    if rng.random() < 0.3:
        entries["sha512"] = rng.randbytes(64).hex()
    return DigestSet(entries)


def random_descriptor(rng: random.Random, need_digest: bool = False) -> ResourceDescriptor:
    fields: dict = {}
    if rng.random() < 0.7:
        fields["name"] = _name(rng)
    if rng.random() < 0.5:
        fields["uri"] = _uri(rng)
    if need_digest or rng.random() < 0.6 or not fields:
        fields["digest"] = _digest(rng)
    if rng.random() < 0.3:
        fields["download_location"] = _uri(rng)
    if rng.random() < 0.4:
        fields["media_type"] = rng.choice(["application/json", "scai/report/v0.2", "application/x.elf"])
    if rng.random() < 0.1:
        fields["content"] = rng.randbytes(rng.randint(0, 16))
    return ResourceDescriptor(**fields)


def _json_value(rng: random.Random, depth: int = 0):
    kind = rng.randint(0, 6 if depth < 2 else 4)
    if kind == 0:
        return _name(rng)
    if kind == 1:
        return rng.randint(-(2**53), 2**53)
    if kind == 2:
        return rng.choice([True, False, None])
    if kind == 3:
        return rng.choice([0.5, -1.25, 1e-7, 3.14159, 1e21, 123456.789])
    if kind == 4:
        return "-f" + _name(rng)
    if kind == 5:
        return [_json_value(rng, depth + 1) for _ in range(rng.randint(0, 3))]
    return {_name(rng): _json_value(rng, depth + 1) for _ in range(rng.randint(0, 3))}


def random_assertion(rng: random.Random) -> AttributeAssertion:
    conditions = None
    if rng.random() < 0.6:
        body = {"type": "https://example.com/conditions/v1"}
        for _ in range(rng.randint(0, 3)):
            body[_name(rng)] = _json_value(rng)
        conditions = Conditions(body)
    target = random_descriptor(rng) if rng.random() < 0.4 else None
    evidence = random_descriptor(rng, need_digest=True) if rng.random() < 0.5 else None
    attribute = rng.choice(["WITH_STACK_PROTECTION", "REPRODUCIBLE", "ATTESTED_HARDWARE"]) + (
        "" if rng.random() < 0.5 else "_" + _name(rng).strip() + "X"
    )
    return AttributeAssertion(attribute, conditions, target, evidence)


def random_report(rng: random.Random) -> Report:
    """A report that passes strict validation."""
    return Report(
        subject=random_descriptor(rng, need_digest=True),
        attributes=tuple(random_assertion(rng) for _ in range(rng.randint(1, 4))),
        producer=random_descriptor(rng) if rng.random() < 0.5 else None,
    )


# -- dependency chains -------------------------------------------------------

SCAI_MEDIA = "scai/report/v0.2"


def artifact_descriptor(name: str) -> ResourceDescriptor:
    return ResourceDescriptor(name=name, digest=DigestSet(sha256=sha256(name.encode())))


def dependency_assertion(child_subject: ResourceDescriptor, child_env_bytes: bytes, location: str) -> AttributeAssertion:
    return AttributeAssertion(
        "ATTESTED_DEPENDENCY",
        target=child_subject,
        evidence=ResourceDescriptor(
            name=f"{child_subject.name}-build-report",
            digest=DigestSet(sha256=sha256(child_env_bytes)),
            download_location=location,
            media_type=SCAI_MEDIA,
        ),
    )


def build_chain(names: list[str], signer: KeyPair, extra: dict[str, list[AttributeAssertion]] | None = None):
    """Sign reports for names[0] -> names[1] -> ... (each depends on the next).

    Returns (envelope bytes by name, MemoryFetcher serving every envelope at
    ``mem://reports/<position>-<name>``). A repeated name maps to the root's bytes.
    """
    extra = extra or {}
    fetcher = MemoryFetcher()
    blobs: dict[str, bytes] = {}
    child: tuple[ResourceDescriptor, bytes, str] | None = None
    for position in reversed(range(len(names))):
        name = names[position]
        subject = artifact_descriptor(name)
        assertions = [AttributeAssertion("BUILT", Conditions({"type": "t/v1", "by": "ci"}))]
        assertions += extra.get(name, [])
        if child is not None:
            assertions.append(dependency_assertion(*child))
        env = sign_report(Report(subject, tuple(assertions)), signer)
        data = env.to_bytes()
        if position == 0 or name not in blobs:
            blobs[name] = data
        location = f"mem://reports/{position}-{name}"
        fetcher.objects[location] = data
        child = (subject, data, location)
    return blobs, fetcher


def memory_resolver(fetcher: MemoryFetcher, store: Store | None = None) -> Resolver:
    return Resolver(store, [fetcher])


def envelope(data: bytes) -> Envelope:
    return Envelope.from_bytes(data)


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


# -- glob oracle ---------------------------------------------------------------

GCC_FLAGS = [
    "-fstack-protector",
    "-fstack-protector-strong",
    "-fstack-protector-all",
    "-fstack-protector-explicit",
    "-fno-stack-protector",
    "-fstack-clash-protection",
    "-O2",
    "-D_FORTIFY_SOURCE=2",
]


def glob_oracle(pattern: str, value: str) -> bool:
    """Expand each token literally: a `*` tries every prefix length of the rest."""
    if not pattern:
        return value == ""
    head, rest = pattern[0], pattern[1:]
    if head == "*":
        return any(glob_oracle(rest, value[k:]) for k in range(len(value) + 1))
    if not value:
        return False
    if head == "?" or head == value[0]:
        return glob_oracle(rest, value[1:])
    return False


def glob_corpus(n: int = 200, seed: int = 2024) -> list[tuple[str, str]]:
    """Fixed (pattern, value) pairs: the gcc flag family plus random small-alphabet cases."""
    pairs = [(p, v) for p in ("-fstack-protector*", "-fstack-protector", "-f*-protector", "*protector?*") for v in GCC_FLAGS]
    pairs += [("ATTESTED_*", "ATTESTED_HARDWARE"), ("abc", "ABC"), ("DEBUG_*", "DEBUG_"), ("*", ""), ("?", "é")]
    rng = random.Random(seed)
    while len(pairs) < n:
        pattern = "".join(rng.choice("ab*?") for _ in range(rng.randint(1, 6)))
        value = "".join(rng.choice("ab*") for _ in range(rng.randint(0, 7)))
        pairs.append((pattern, value))
    return pairs[:n]


def keypair_to_json_public(pair: KeyPair) -> dict:
    return keypair_to_json(pair, include_private=False)
