"""Declarative trust policies and their evaluation over verified reports.

Glob patterns come from the policy and are matched against values taken
literally from the report. A report condition such as ``"-fstack-protector*"``
therefore matches the policy pattern ``"-fstack-protector*"`` (the ``*``
absorbs the literal asterisk) but not ``"-fstack-protector"``.
"""

from __future__ import annotations

import enum
import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from scai_kit.canon import canonicalize, parse_json
from scai_kit.envelope import KeyPair, PublicKey, VerifiedReport, key_from_json, load_public_key
from scai_kit.errors import KeyFileError, MalformedJson, MalformedPolicy, ResolveError
from scai_kit.model import (
    AttributeAssertion,
    DigestMatch,
    DigestSet,
    Mode,
    ResourceDescriptor,
    ValidationIssue,
    _Checker,
    digest_set_match,
    validate_report,
)
from scai_kit.store import ResolvedObject

logger = logging.getLogger(__name__)

ResolveFn = Callable[[ResourceDescriptor], ResolvedObject]


def match_glob(pattern: str, value: str) -> bool:
    """Whole-value, case-sensitive glob: ``*`` is any run, ``?`` one code point."""
    p = v = 0
    star_p = -1
    star_v = 0
    while v < len(value):
        if p < len(pattern) and (pattern[p] == "?" or pattern[p] == value[v]) and pattern[p] != "*":
            p += 1
            v += 1
        elif p < len(pattern) and pattern[p] == "*":
            star_p = p
            star_v = v
            p += 1
        elif star_p >= 0:
            p = star_p + 1
            star_v += 1
            v = star_v
        else:
            return False
    while p < len(pattern) and pattern[p] == "*":
        p += 1
    return p == len(pattern)


class RuleKind(str, enum.Enum):
    REQUIRE = "require"
    FORBID = "forbid"


class Outcome(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    MISSING = "missing"


@dataclass(frozen=True)
class AttributeRule:
    kind: RuleKind
    attribute_pattern: str
    condition_matchers: tuple[tuple[str, str], ...] = ()
    require_evidence: bool = False
    evidence_media_type_pattern: str | None = None
    target_digest: DigestSet | None = None


@dataclass(frozen=True)
class TrustPolicy:
    trusted_keys: tuple[PublicKey, ...]
    threshold: int = 1
    rules: tuple[AttributeRule, ...] = ()
    mode: Mode = Mode.LAX
    signature_only: bool = False

    @property
    def trusted_keyids(self) -> frozenset[str]:
        return frozenset(k.keyid for k in self.trusted_keys)


@dataclass(frozen=True)
class RuleResult:
    rule_index: int
    outcome: Outcome
    matched_assertion_indices: tuple[int, ...] = ()
    detail: str = ""


@dataclass(frozen=True)
class PolicyVerdict:
    passed: bool
    per_rule: tuple[RuleResult, ...]
    unruled_assertions: tuple[int, ...] = ()
    signer_failure: str | None = None
    evidence_failures: tuple[str, ...] = ()
    validation_errors: tuple[ValidationIssue, ...] = ()
    warnings: tuple[ValidationIssue, ...] = field(default=(), compare=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "pass": self.passed,
            "perRule": [
                {
                    "ruleIndex": r.rule_index,
                    "outcome": r.outcome.value,
                    "matchedAssertionIndices": list(r.matched_assertion_indices),
                    "detail": r.detail,
                }
                for r in self.per_rule
            ],
            "unruledAssertions": list(self.unruled_assertions),
            "signerFailure": self.signer_failure,
            "evidenceFailures": list(self.evidence_failures),
            "validationErrors": [str(i) for i in self.validation_errors],
            "warnings": [str(w) for w in self.warnings],
        }


# -- parsing -----------------------------------------------------------------

_POLICY_KEYS = {"trustedKeys", "threshold", "mode", "rules", "signatureOnly"}
_RULE_KEYS = {"kind", "attribute", "conditions", "requireEvidence", "evidenceMediaType", "targetDigest"}


def parse_policy(document: bytes | str, base_dir: str | Path | None = None) -> TrustPolicy:
    """Parse a policy file. Key file references resolve relative to ``base_dir``."""
    checker = _Checker(Mode.STRICT)
    try:
        doc = parse_json(document)
    except MalformedJson as exc:
        raise MalformedPolicy([], f"policy is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        checker.error("/", "NOT_AN_OBJECT", "policy must be a JSON object")
        raise MalformedPolicy(checker.issues)
    checker.unknown_keys(doc, _POLICY_KEYS, "")
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    keys: list[PublicKey] = []
    raw_keys = doc.get("trustedKeys")
    if not isinstance(raw_keys, list) or not raw_keys:
        checker.error("/trustedKeys", "MISSING_FIELD", "trustedKeys must be a non-empty list")
    else:
        for i, ref in enumerate(raw_keys):
            try:
                if isinstance(ref, str):
                    path = Path(ref)
                    keys.append(load_public_key(path if path.is_absolute() else base / path))
                else:
                    key = key_from_json(ref)
                    keys.append(key.public if isinstance(key, KeyPair) else key)
            except KeyFileError as exc:
                checker.error(f"/trustedKeys/{i}", "WRONG_TYPE", str(exc))

    threshold = doc.get("threshold", 1)
    if isinstance(threshold, bool) or not isinstance(threshold, int) or threshold < 1:
        checker.error("/threshold", "WRONG_TYPE", "threshold must be an integer >= 1")
        threshold = 1

    mode = Mode.LAX
    raw_mode = doc.get("mode", "lax")
    if raw_mode not in ("strict", "lax"):
        checker.error("/mode", "WRONG_TYPE", 'mode must be "strict" or "lax"')
    else:
        mode = Mode(raw_mode)

    signature_only = doc.get("signatureOnly", False)
    if not isinstance(signature_only, bool):
        checker.error("/signatureOnly", "WRONG_TYPE", "signatureOnly must be a boolean")
        signature_only = False

    rules: list[AttributeRule] = []
    raw_rules = doc.get("rules", [])
    if not isinstance(raw_rules, list):
        checker.error("/rules", "WRONG_TYPE", "rules must be a list")
    else:
        if not raw_rules and not signature_only:
            checker.error("/rules", "MISSING_FIELD", "rules is empty and signatureOnly is not set")
        for i, raw in enumerate(raw_rules):
            rule = _parse_rule(raw, f"/rules/{i}", checker)
            if rule is not None:
                rules.append(rule)

    if any(issue.severity == "error" for issue in checker.issues):
        raise MalformedPolicy(checker.issues)
    return TrustPolicy(tuple(keys), threshold, tuple(rules), mode, signature_only)


def _parse_rule(raw: Any, path: str, checker: _Checker) -> AttributeRule | None:
    if not isinstance(raw, dict):
        checker.error(path, "NOT_AN_OBJECT", "rule must be an object")
        return None
    n_before = len(checker.issues)
    checker.unknown_keys(raw, _RULE_KEYS, path)
    kind = raw.get("kind", "require")
    if kind not in ("require", "forbid"):
        checker.error(f"{path}/kind", "WRONG_TYPE", 'kind must be "require" or "forbid"')
    attribute = raw.get("attribute")
    if not isinstance(attribute, str) or not attribute:
        checker.error(f"{path}/attribute", "MISSING_ATTRIBUTE", "attribute pattern must be non-empty text")

    matchers: list[tuple[str, str]] = []
    conditions = raw.get("conditions", {})
    if not isinstance(conditions, dict):
        checker.error(f"{path}/conditions", "NOT_AN_OBJECT", "conditions must map key paths to globs")
    else:
        for key_path, pattern in conditions.items():
            if not isinstance(pattern, str) or not pattern or not key_path:
                checker.error(f"{path}/conditions/{key_path}", "WRONG_TYPE", "condition matcher must be a non-empty glob")
            else:
                matchers.append((key_path, pattern))

    require_evidence = raw.get("requireEvidence", False)
    if not isinstance(require_evidence, bool):
        checker.error(f"{path}/requireEvidence", "WRONG_TYPE", "requireEvidence must be a boolean")
    media = checker.text(raw, "evidenceMediaType", path)
    target = None
    if "targetDigest" in raw:
        target = checker.digest_set(raw["targetDigest"], f"{path}/targetDigest")

    if any(i.severity == "error" for i in checker.issues[n_before:]):
        return None
    return AttributeRule(
        kind=RuleKind(kind),
        attribute_pattern=attribute,
        condition_matchers=tuple(matchers),
        require_evidence=require_evidence,
        evidence_media_type_pattern=media,
        target_digest=target,
    )


def load_policy(path: str | Path) -> TrustPolicy:
    path = Path(path)
    return parse_policy(path.read_bytes(), base_dir=path.parent)


# -- evaluation --------------------------------------------------------------

_MISSING = object()


def lookup_condition(body: Any, key_path: str) -> Any:
    """Walk a "/"-separated key path into a conditions body."""
    node = body
    for part in key_path.strip("/").split("/"):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            return _MISSING
    return node


def condition_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return canonicalize(value).decode("utf-8")


def _static_match(rule: AttributeRule, a: AttributeAssertion) -> bool:
    """Everything about a rule except evidence resolution."""
    if not match_glob(rule.attribute_pattern, a.attribute):
        return False
    for key_path, pattern in rule.condition_matchers:
        if a.conditions is None:
            return False
        value = lookup_condition(a.conditions.body, key_path)
        if value is _MISSING or not match_glob(pattern, condition_text(value)):
            return False
    if rule.evidence_media_type_pattern is not None:
        media = a.evidence.media_type if a.evidence is not None else None
        if media is None or not match_glob(rule.evidence_media_type_pattern, media):
            return False
    if rule.target_digest is not None:
        if a.target is None or a.target.digest is None:
            return False
        if digest_set_match(rule.target_digest, a.target.digest) is not DigestMatch.MATCH:
            return False
    return True


def evaluate(verified: VerifiedReport, policy: TrustPolicy, resolver: ResolveFn | None = None) -> PolicyVerdict:
    """Evaluate every rule of ``policy`` against ``verified``.

    All rules are evaluated even after one fails. A required rule whose only
    candidates had evidence that could not be obtained or failed its digest
    check is reported as missing and the cause is listed in
    ``evidence_failures`` (an infrastructure problem, not a policy one).
    """
    assertions = verified.report.attributes
    signer_failure = None
    signers = set(verified.signer_keyids)
    untrusted = signers - policy.trusted_keyids
    if untrusted:
        signer_failure = f"signers not trusted by policy: {sorted(untrusted)}"
    elif len(signers) < policy.threshold:
        signer_failure = f"{len(signers)} trusted signers, policy requires {policy.threshold}"

    strict_errors: tuple[ValidationIssue, ...] = ()
    if policy.mode is Mode.STRICT:
        strict_errors = tuple(
            i for i in validate_report(verified.report, Mode.STRICT) if i.severity == "error"
        )

    results: list[RuleResult] = []
    evidence_failures: list[str] = []
    ruled: set[int] = set()
    for ri, rule in enumerate(policy.rules):
        candidates = [i for i, a in enumerate(assertions) if _static_match(rule, a)]
        ruled.update(i for i, a in enumerate(assertions) if match_glob(rule.attribute_pattern, a.attribute))
        if rule.kind is RuleKind.FORBID:
            if candidates:
                results.append(RuleResult(ri, Outcome.VIOLATED, tuple(candidates), "forbidden attribute present"))
            else:
                results.append(RuleResult(ri, Outcome.SATISFIED))
            continue

        satisfied: list[int] = []
        problems: list[str] = []
        for i in candidates:
            if not rule.require_evidence:
                satisfied.append(i)
                continue
            problem = _check_evidence(assertions[i], resolver)
            if problem is None:
                satisfied.append(i)
            else:
                problems.append(f"/attributes/{i}/evidence: {problem}")
        if satisfied:
            results.append(RuleResult(ri, Outcome.SATISFIED, tuple(satisfied)))
        elif problems:
            detail = "EvidenceUnresolvable: " + "; ".join(problems)
            evidence_failures.extend(problems)
            results.append(RuleResult(ri, Outcome.MISSING, (), detail))
        else:
            results.append(RuleResult(ri, Outcome.MISSING, (), "no matching assertion"))

    unruled = tuple(i for i in range(len(assertions)) if i not in ruled)
    passed = (
        signer_failure is None
        and not strict_errors
        and all(r.outcome is Outcome.SATISFIED for r in results)
    )
    return PolicyVerdict(
        passed=passed,
        per_rule=tuple(results),
        unruled_assertions=unruled,
        signer_failure=signer_failure,
        evidence_failures=tuple(evidence_failures),
        validation_errors=strict_errors,
        warnings=tuple(verified.warnings),
    )


def _check_evidence(a: AttributeAssertion, resolver: ResolveFn | None) -> str | None:
    """Return None when the evidence resolves with a verified digest."""
    if a.evidence is None:
        return "no evidence"
    if a.evidence.digest is None:
        return "evidence has no digest"
    if resolver is None:
        return "no resolver configured"
    try:
        resolved = resolver(a.evidence)
    except ResolveError as exc:
        return f"{exc.reason}: {exc}"
    if not resolved.verified_algorithms:
        return "evidence digest was not verified"
    return None


def verdict_table(verdict: PolicyVerdict, policy: TrustPolicy) -> str:
    """Human-readable per-rule table."""
    lines = [f"{'#':>3}  {'kind':<8} {'attribute':<32} {'outcome':<10} detail"]
    for r in verdict.per_rule:
        rule = policy.rules[r.rule_index]
        detail = r.detail or (
            "assertions " + ",".join(map(str, r.matched_assertion_indices)) if r.matched_assertion_indices else ""
        )
        lines.append(
            f"{r.rule_index:>3}  {rule.kind.value:<8} {rule.attribute_pattern:<32} {r.outcome.value:<10} {detail}"
        )
    if verdict.signer_failure:
        lines.append(f"signers: {verdict.signer_failure}")
    for issue in verdict.validation_errors:
        lines.append(f"strict: {issue}")
    if verdict.unruled_assertions:
        lines.append("unruled assertions: " + ",".join(map(str, verdict.unruled_assertions)))
    lines.append("PASS" if verdict.passed else "FAIL")
    return "\n".join(lines)


def dump_verdict(verdict: PolicyVerdict) -> str:
    return json.dumps(verdict.to_json(), indent=2)
