"""A SCAI-aware command wrapper.

Runs a build command unchanged, hashes the declared outputs, derives attribute
assertions from rules over the command line and an allowlisted set of
environment variables, and signs one report per output file.

Flag rules match whole argv tokens, anchored at the first character, so
``-fno-stack-protector`` never satisfies ``-fstack-protector*``. Later flags
overriding earlier ones (``-fstack-protector ... -fno-stack-protector``) are
not interpreted.
"""

from __future__ import annotations

import hashlib
import os
import subprocess
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from scai_kit.canon import parse_json
from scai_kit.envelope import REPORT_PAYLOAD_TYPE, Envelope, KeyPair, sign_report
from scai_kit.errors import (
    CommandFailed,
    MalformedJson,
    MalformedRuleSet,
    NoAttributes,
    OutputMissing,
)
from scai_kit.model import (
    AttributeAssertion,
    Conditions,
    DigestSet,
    Mode,
    Report,
    ResourceDescriptor,
    _Checker,
)
from scai_kit.policy import match_glob
from scai_kit.store import Store

FLAG_CONDITIONS_TYPE = "scai-kit/flag-conditions/v1"


@dataclass(frozen=True)
class AttributeRuleSpec:
    attribute: str
    when_flag_matches: str | None = None
    when_env_matches: tuple[tuple[str, str], ...] = ()
    record_conditions: bool = True
    evidence_from: str | None = None
    evidence_media_type: str | None = None

    def __post_init__(self) -> None:
        if self.when_flag_matches is None and not self.when_env_matches:
            raise ValueError(f"rule for {self.attribute!r} has no trigger")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[AttributeRuleSpec, ...]
    producer: ResourceDescriptor | None = None
    baseline_attribute: str | None = None
    toolchain_path: str | None = None
    # "typed" adds a "type" key to conditions so reports sign in strict mode;
    # "untyped" omits it and signs in lax mode.
    conditions_style: str = "typed"


@dataclass(frozen=True)
class RunRecord:
    argv: tuple[str, ...]
    exit_code: int
    output_descriptors: tuple[ResourceDescriptor, ...]
    started_at: datetime
    finished_at: datetime


_RULESET_KEYS = {"rules", "producer", "baselineAttribute", "toolchainPath", "conditionsStyle"}
_RULE_KEYS = {
    "attribute",
    "whenFlagMatches",
    "whenEnvMatches",
    "recordConditions",
    "evidenceFrom",
    "evidenceMediaType",
}


def parse_ruleset(document: bytes | str) -> RuleSet:
    checker = _Checker(Mode.STRICT)
    try:
        doc = parse_json(document)
    except MalformedJson as exc:
        raise MalformedRuleSet([], f"rule set is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        checker.error("/", "NOT_AN_OBJECT", "rule set must be a JSON object")
        raise MalformedRuleSet(checker.issues)
    checker.unknown_keys(doc, _RULESET_KEYS, "")

    rules: list[AttributeRuleSpec] = []
    raw_rules = doc.get("rules", [])
    if not isinstance(raw_rules, list):
        checker.error("/rules", "WRONG_TYPE", "rules must be a list")
        raw_rules = []
    for i, raw in enumerate(raw_rules):
        path = f"/rules/{i}"
        if not isinstance(raw, dict):
            checker.error(path, "NOT_AN_OBJECT", "rule must be an object")
            continue
        checker.unknown_keys(raw, _RULE_KEYS, path)
        attribute = raw.get("attribute")
        if not isinstance(attribute, str) or not attribute.strip():
            checker.error(f"{path}/attribute", "MISSING_ATTRIBUTE", "attribute must be non-empty text")
            continue
        flag = checker.text(raw, "whenFlagMatches", path)
        env = raw.get("whenEnvMatches", {})
        if not isinstance(env, dict) or not all(isinstance(v, str) for v in env.values()):
            checker.error(f"{path}/whenEnvMatches", "WRONG_TYPE", "whenEnvMatches maps names to globs")
            continue
        if flag is None and not env:
            checker.error(path, "MISSING_FIELD", "rule needs whenFlagMatches or whenEnvMatches")
            continue
        record = raw.get("recordConditions", True)
        if not isinstance(record, bool):
            checker.error(f"{path}/recordConditions", "WRONG_TYPE", "recordConditions must be a boolean")
            continue
        rules.append(
            AttributeRuleSpec(
                attribute=attribute,
                when_flag_matches=flag,
                when_env_matches=tuple(sorted(env.items())),
                record_conditions=record,
                evidence_from=checker.text(raw, "evidenceFrom", path),
                evidence_media_type=checker.text(raw, "evidenceMediaType", path),
            )
        )

    producer = None
    if "producer" in doc:
        producer = checker.descriptor(doc["producer"], "/producer")
    baseline = checker.text(doc, "baselineAttribute", "")
    toolchain = checker.text(doc, "toolchainPath", "")
    style = doc.get("conditionsStyle", "typed")
    if style not in ("typed", "untyped"):
        checker.error("/conditionsStyle", "WRONG_TYPE", 'conditionsStyle must be "typed" or "untyped"')
    if any(i.severity == "error" for i in checker.issues):
        raise MalformedRuleSet(checker.issues)
    return RuleSet(tuple(rules), producer, baseline or None, toolchain, style)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _file_descriptor(
    path: Path, media_type: str | None = None, store: Store | None = None, with_uri: bool = False
) -> ResourceDescriptor:
    if store is not None:
        digest = store.put(path.read_bytes())
    else:
        digest = DigestSet(sha256=sha256_file(path))
    uri = path.resolve().as_uri() if with_uri else None
    return ResourceDescriptor(name=path.name, uri=uri, digest=digest, media_type=media_type)


def match_rules(
    argv: Sequence[str], env: Mapping[str, str], rules: RuleSet
) -> list[tuple[AttributeRuleSpec, list[str], dict[str, str]]]:
    """Rules that fire, with the argv tokens and env values that triggered them.

    argv[0] (the program) is not treated as a flag.
    """
    fired = []
    for rule in rules.rules:
        tokens: list[str] = []
        if rule.when_flag_matches is not None:
            tokens = [t for t in argv[1:] if match_glob(rule.when_flag_matches, t)]
        env_hits: dict[str, str] = {}
        if rule.when_env_matches:
            env_hits = {
                name: env[name]
                for name, pattern in rule.when_env_matches
                if name in env and match_glob(pattern, env[name])
            }
            if len(env_hits) != len(rule.when_env_matches):
                env_hits = {}
        if tokens or env_hits:
            fired.append((rule, tokens, env_hits))
    return fired


def _conditions(style: str, tokens: list[str], env_hits: dict[str, str]) -> Conditions:
    body: dict[str, Any] = {}
    if style == "typed":
        body["type"] = FLAG_CONDITIONS_TYPE
    if tokens:
        body["flags"] = " ".join(tokens)
    if env_hits:
        body["env"] = dict(env_hits)
    return Conditions(body)


def _now() -> datetime:
    return datetime.now(timezone.utc)


def run_and_attest(
    argv: Sequence[str],
    outputs: Sequence[str | Path],
    rules: RuleSet,
    signer: KeyPair,
    *,
    env: Mapping[str, str] | None = None,
    cwd: str | Path | None = None,
    store: Store | None = None,
    payload_type: str = REPORT_PAYLOAD_TYPE,
) -> tuple[list[Envelope], RunRecord]:
    """Run ``argv`` and return one signed envelope per declared output."""
    if not argv:
        raise ValueError("argv must not be empty")
    env = dict(os.environ if env is None else env)
    base = Path(cwd) if cwd is not None else Path.cwd()

    started = _now()
    proc = subprocess.run(list(argv), env=env, cwd=cwd, check=False)
    finished = _now()
    if proc.returncode != 0:
        raise CommandFailed(argv, proc.returncode)

    output_paths = [Path(o) if Path(o).is_absolute() else base / o for o in outputs]
    for path in output_paths:
        if not path.is_file():
            raise OutputMissing(f"declared output {path} was not produced")
    descriptors = [_file_descriptor(p, store=store) for p in output_paths]
    record = RunRecord(tuple(argv), proc.returncode, tuple(descriptors), started, finished)

    fired = match_rules(argv, env, rules)
    if not fired and rules.baseline_attribute is None:
        raise NoAttributes("no rule matched the command and no baselineAttribute is configured")

    producer = rules.producer
    if rules.toolchain_path is not None:
        digest = DigestSet(sha256=sha256_file(rules.toolchain_path))
        producer = ResourceDescriptor(
            name=producer.name if producer else Path(rules.toolchain_path).name,
            uri=producer.uri if producer else None,
            digest=digest,
            download_location=producer.download_location if producer else None,
            media_type=producer.media_type if producer else None,
        )
    mode = Mode.STRICT if rules.conditions_style == "typed" else Mode.LAX

    envelopes = []
    for path, subject in zip(output_paths, descriptors):
        assertions: list[AttributeAssertion] = []
        for rule, tokens, env_hits in fired:
            conditions = _conditions(rules.conditions_style, tokens, env_hits) if rule.record_conditions else None
            evidence = None
            if rule.evidence_from is not None:
                evidence_path = Path(
                    rule.evidence_from.format(output=str(path), output_name=path.name, output_dir=str(path.parent))
                )
                if not evidence_path.is_absolute():
                    evidence_path = base / evidence_path
                if not evidence_path.is_file():
                    raise OutputMissing(f"evidence file {evidence_path} for {rule.attribute} is missing")
                evidence = _file_descriptor(evidence_path, rule.evidence_media_type, store, with_uri=True)
            assertions.append(AttributeAssertion(rule.attribute, conditions, None, evidence))
        if not assertions:
            assert rules.baseline_attribute is not None
            assertions.append(AttributeAssertion(rules.baseline_attribute))
        report = Report(subject, tuple(assertions), producer)
        envelopes.append(sign_report(report, signer, payload_type, mode))
    return envelopes, record


def load_ruleset(path: str | Path) -> RuleSet:
    return parse_ruleset(Path(path).read_bytes())


__all__ = [
    "FLAG_CONDITIONS_TYPE",
    "AttributeRuleSpec",
    "RuleSet",
    "RunRecord",
    "load_ruleset",
    "match_rules",
    "parse_ruleset",
    "run_and_attest",
    "sha256_file",
]
