"""Transitive verification of reports linked through SCAI-typed evidence.

An assertion whose evidence ``mediaType`` looks like a SCAI report
(``scai/report/*`` or ``application/vnd.scai.*``) is an edge: the evidence
is resolved, verified as an envelope, and becomes a node of its own. Nodes
are identified by their subject digest (see :func:`~scai_kit.model.descriptor_key`).
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from scai_kit.envelope import Envelope, KeyPair, PublicKey, VerifiedReport, verify_envelope
from scai_kit.errors import (
    ChildVerificationFailed,
    CycleDetected,
    DepthExceeded,
    ScaiError,
)
from scai_kit.model import AttributeAssertion, DigestMatch, descriptor_key, digest_set_match
from scai_kit.policy import PolicyVerdict, ResolveFn, TrustPolicy, evaluate, match_glob

SCAI_MEDIA_TYPES = ("scai/report/*", "application/vnd.scai.*")
DEFAULT_MAX_DEPTH = 32


def is_scai_evidence(assertion: AttributeAssertion) -> bool:
    evidence = assertion.evidence
    if evidence is None or evidence.media_type is None:
        return False
    return any(match_glob(p, evidence.media_type) for p in SCAI_MEDIA_TYPES)


def node_key(verified: VerifiedReport) -> str:
    digest = verified.report.subject.digest
    assert digest is not None  # decode guarantees a subject digest
    return descriptor_key(digest)


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    assertion_index: int


@dataclass
class DependencyGraph:
    root: str
    nodes: dict[str, VerifiedReport] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)

    def children(self, key: str) -> list[Edge]:
        return [e for e in self.edges if e.parent == key]


def build_graph(
    root: Envelope,
    trusted_keys: Iterable[PublicKey | KeyPair | bytes],
    resolver: ResolveFn,
    max_depth: int = DEFAULT_MAX_DEPTH,
    threshold: int = 1,
) -> DependencyGraph:
    """Verify ``root`` and recursively every SCAI report it links to.

    ``max_depth`` bounds the number of reports on any root-to-leaf path, so
    ``max_depth=1`` accepts only a root with no SCAI-typed evidence. Errors
    from the root envelope propagate unchanged; errors below it are wrapped in
    :class:`ChildVerificationFailed` naming the failing edge.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    trusted = list(trusted_keys)
    verified_root = verify_envelope(root, trusted, threshold)
    graph = DependencyGraph(root=node_key(verified_root))
    graph.nodes[graph.root] = verified_root

    def visit(key: str, path: list[str]) -> None:
        report = graph.nodes[key].report
        for index, assertion in enumerate(report.attributes):
            if not is_scai_evidence(assertion):
                continue
            assert assertion.evidence is not None
            if len(path) + 1 > max_depth:
                raise DepthExceeded(path + [f"/attributes/{index}/evidence"], max_depth)
            try:
                resolved = resolver(assertion.evidence)
                child = verify_envelope(Envelope.from_bytes(resolved.data), trusted, threshold)
            except ScaiError as exc:
                raise ChildVerificationFailed(path, index, exc) from exc
            child_key = node_key(child)
            if child_key in path:
                raise CycleDetected(path + [child_key])
            graph.edges.append(Edge(key, child_key, index))
            if child_key in graph.nodes:
                continue
            graph.nodes[child_key] = child
            visit(child_key, path + [child_key])

    visit(graph.root, [graph.root])
    return graph


@dataclass(frozen=True)
class NodeFailure:
    key: str
    reason: str
    detail: str = ""


@dataclass
class GraphVerdict:
    passed: bool
    per_node: dict[str, PolicyVerdict]
    failures: list[NodeFailure]

    def to_json(self) -> dict[str, Any]:
        return {
            "pass": self.passed,
            "perNode": {k: v.to_json() for k, v in self.per_node.items()},
            "failures": [
                {"digestKey": f.key, "reason": f.reason, "detail": f.detail} for f in self.failures
            ],
        }


def select_policy(
    verified: VerifiedReport, policies: Mapping[str, TrustPolicy], default: TrustPolicy
) -> TrustPolicy:
    """First policy whose selector glob matches the subject name or uri."""
    subject = verified.report.subject
    for selector, policy in policies.items():
        for value in (subject.name, subject.uri):
            if value is not None and match_glob(selector, value):
                return policy
    return default


def verify_graph(
    graph: DependencyGraph,
    policies: Mapping[str, TrustPolicy],
    default_policy: TrustPolicy,
    resolver: ResolveFn | None = None,
) -> GraphVerdict:
    """Evaluate every node against its policy and check every edge.

    For an edge, the parent assertion's target digest must match the child
    report's subject digest; an absent target or disjoint algorithms count as
    a mismatch.
    """
    per_node: dict[str, PolicyVerdict] = {}
    failures: list[NodeFailure] = []
    for key in sorted(graph.nodes):
        verified = graph.nodes[key]
        verdict = evaluate(verified, select_policy(verified, policies, default_policy), resolver)
        per_node[key] = verdict
        if not verdict.passed:
            failures.append(NodeFailure(key, "PolicyFailed", _summarize(verdict)))

    for edge in graph.edges:
        parent = graph.nodes[edge.parent].report
        target = parent.attributes[edge.assertion_index].target
        child_digest = graph.nodes[edge.child].report.subject.digest
        if target is None or target.digest is None or child_digest is None:
            match = DigestMatch.NO_OVERLAP
        else:
            match = digest_set_match(target.digest, child_digest)
        if match is not DigestMatch.MATCH:
            failures.append(
                NodeFailure(
                    edge.child,
                    "TargetSubjectMismatch",
                    f"{edge.parent} /attributes/{edge.assertion_index}/target: {match.value}",
                )
            )
    return GraphVerdict(passed=not failures, per_node=per_node, failures=failures)


def _summarize(verdict: PolicyVerdict) -> str:
    bits = [f"rule {r.rule_index} {r.outcome.value}" for r in verdict.per_rule if r.outcome.value != "satisfied"]
    if verdict.signer_failure:
        bits.append(verdict.signer_failure)
    if verdict.validation_errors:
        bits.append(f"{len(verdict.validation_errors)} strict validation error(s)")
    return "; ".join(bits)


def render_tree(graph: DependencyGraph, verdict: GraphVerdict | None = None) -> str:
    """Indented tree of nodes, marking pass/fail when a verdict is given."""
    failed = {f.key for f in verdict.failures} if verdict else set()
    lines: list[str] = []

    def label(key: str) -> str:
        subject = graph.nodes[key].report.subject
        name = subject.name or subject.uri or ""
        mark = ""
        if verdict is not None:
            mark = "[FAIL] " if key in failed else "[ok]   "
        return f"{mark}{name} ({key})" if name else f"{mark}{key}"

    def walk(key: str, depth: int, seen: frozenset[str]) -> None:
        lines.append("  " * depth + label(key))
        for edge in graph.children(key):
            if edge.child in seen:
                continue
            walk(edge.child, depth + 1, seen | {edge.child})

    walk(graph.root, 0, frozenset({graph.root}))
    return "\n".join(lines)


def dump_verdict(verdict: GraphVerdict) -> str:
    return json.dumps(verdict.to_json(), indent=2)
