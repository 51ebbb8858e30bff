"""``scai-kit`` command line.

Exit status: 0 success, 1 verification or policy failure, 2 usage error,
3 I/O or resolution error. With ``--json`` exactly one JSON document is
written to stdout; diagnostics always go to stderr.
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, NoReturn

from scai_kit import __version__
from scai_kit.canon import parse_json
from scai_kit.envelope import (
    REPORT_PAYLOAD_TYPE,
    Envelope,
    KeyPair,
    VerifiedReport,
    generate_keypair,
    load_key_file,
    load_public_key,
    sign_report,
    verify_envelope,
    write_key_file,
)
from scai_kit.errors import (
    BadSeedLength,
    ChildVerificationFailed,
    CorruptObject,
    EnvelopeFormatError,
    EvidenceUnresolvable,
    FetchError,
    IoFailure,
    KeyFileError,
    MalformedJson,
    MalformedPolicy,
    MalformedRuleSet,
    NotFound,
    OutputMissing,
    ScaiError,
    Unresolvable,
    ValidationFailed,
)
from scai_kit.graph import build_graph, render_tree, verify_graph
from scai_kit.model import DIGEST_ALGORITHMS, DigestSet, Mode, check_report, encode_report
from scai_kit.policy import TrustPolicy, evaluate, load_policy, verdict_table
from scai_kit.producer import load_ruleset, run_and_attest
from scai_kit.store import Resolver, Store, default_fetchers

logger = logging.getLogger("scai_kit")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3

STORE_ENV = "SCAI_STORE"


class UsageError(ScaiError):
    pass


# First matching class wins.
_EXIT_TABLE: list[tuple[type[BaseException], int]] = [
    (UsageError, EXIT_USAGE),
    (MalformedPolicy, EXIT_USAGE),
    (MalformedRuleSet, EXIT_USAGE),
    (KeyFileError, EXIT_USAGE),
    (BadSeedLength, EXIT_USAGE),
    (EnvelopeFormatError, EXIT_IO),
    (MalformedJson, EXIT_IO),
    (IoFailure, EXIT_IO),
    (NotFound, EXIT_IO),
    (Unresolvable, EXIT_IO),
    (FetchError, EXIT_IO),
    (OutputMissing, EXIT_IO),
    (EvidenceUnresolvable, EXIT_IO),
    (CorruptObject, EXIT_FAIL),
    (ScaiError, EXIT_FAIL),
    (OSError, EXIT_IO),
]


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ChildVerificationFailed):
        return EXIT_IO if isinstance(exc.cause, (Unresolvable, IoFailure, FetchError)) else EXIT_FAIL
    for cls, code in _EXIT_TABLE:
        if isinstance(exc, cls):
            return code
    raise exc


def _reason(exc: BaseException) -> str:
    if isinstance(exc, ScaiError):
        return exc.reason
    return type(exc).__name__


def _emit_json(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror}") from None


def _read_envelope(path: str) -> Envelope:
    return Envelope.from_bytes(_read(path))


def _load_policy(path: str) -> TrustPolicy:
    if not Path(path).is_file():
        raise UsageError(f"policy file {path} does not exist")
    return load_policy(path)


def _store_from(args: argparse.Namespace, required: bool = False) -> Store | None:
    root = getattr(args, "store", None) or os.environ.get(STORE_ENV)
    if not root:
        if required:
            raise UsageError(f"no store: pass --store or set {STORE_ENV}")
        return None
    return Store(root)


def _resolver(args: argparse.Namespace) -> Resolver:
    return Resolver(_store_from(args), default_fetchers())


def _verified_summary(v: VerifiedReport) -> dict[str, Any]:
    return {
        "ok": True,
        "signerKeyids": list(v.signer_keyids),
        "payloadType": v.payload_type,
        "subject": encode_report(v.report)["subject"],
        "attributes": [a.attribute for a in v.report.attributes],
        "warnings": [str(w) for w in v.warnings],
    }


# -- commands ----------------------------------------------------------------


def cmd_keygen(args: argparse.Namespace) -> int:
    seed = None
    if args.seed is not None:
        try:
            seed = bytes.fromhex(args.seed)
        except ValueError:
            raise UsageError("--seed must be hex") from None
    key = generate_keypair(seed)
    try:
        write_key_file(args.out, key)
        if args.public_out:
            write_key_file(args.public_out, key, include_private=False)
    except OSError as exc:
        raise IoFailure(f"cannot write key file: {exc.strerror}") from None
    if args.json:
        _emit_json({"ok": True, "keyid": key.keyid, "scheme": key.scheme})
    else:
        print(key.keyid)
    return EXIT_OK


def cmd_sign(args: argparse.Namespace) -> int:
    key = load_key_file(args.key)
    if not isinstance(key, KeyPair):
        raise UsageError(f"{args.key} holds no private key")
    mode = Mode.LAX if args.lax else Mode.STRICT
    report, issues = check_report(_read(args.report), Mode.LAX)
    if report is None:
        raise ValidationFailed(issues)
    env = sign_report(report, key, args.payload_type, mode)
    data = env.to_bytes()
    if args.out:
        try:
            Path(args.out).write_bytes(data)
        except OSError as exc:
            raise IoFailure(f"cannot write {args.out}: {exc.strerror}") from None
        if args.json:
            _emit_json({"ok": True, "envelope": args.out, "keyid": key.keyid})
    else:
        sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    keys = [load_public_key(p) for p in args.key]
    env = _read_envelope(args.envelope)
    verified = verify_envelope(env, keys, args.threshold)
    subject = verified.report.subject.digest
    if args.json:
        _emit_json(_verified_summary(verified))
    else:
        print("signers: " + ", ".join(verified.signer_keyids))
        if subject is not None:
            print("subject: " + ", ".join(f"{a}:{h}" for a, h in subject.items))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    raw = _read(args.file)
    doc = parse_json(raw)
    envelope_info: dict[str, Any] | None = None
    if isinstance(doc, dict) and "payloadType" in doc and "signatures" in doc:
        env = Envelope.from_json(doc)
        envelope_info = {
            "payloadType": env.payload_type,
            "signatures": [s.keyid for s in env.signatures],
        }
        report_doc: Any = env.payload
    else:
        report_doc = doc
    report, issues = check_report(report_doc, Mode.STRICT if args.strict else Mode.LAX)
    body = parse_json(report_doc) if isinstance(report_doc, bytes) else report_doc
    if args.json:
        _emit_json(
            {
                "ok": report is not None,
                "envelope": envelope_info,
                "report": body,
                "issues": [
                    {"severity": i.severity, "path": i.path, "code": i.code, "message": i.message}
                    for i in issues
                ],
            }
        )
    else:
        if envelope_info is not None:
            print(f"envelope: payloadType={envelope_info['payloadType']} "
                  f"signatures={len(envelope_info['signatures'])} (unverified)")
        print(json.dumps(body, indent=2))
        for issue in issues:
            print(str(issue), file=sys.stderr)
    return EXIT_OK if report is not None else EXIT_FAIL


def cmd_check(args: argparse.Namespace) -> int:
    policy = _load_policy(args.policy)
    env = _read_envelope(args.envelope)
    verified = verify_envelope(env, policy.trusted_keys, policy.threshold)
    verdict = evaluate(verified, policy, _resolver(args))
    if args.json:
        _emit_json(verdict.to_json())
    else:
        print(verdict_table(verdict, policy))
    if verdict.passed:
        return EXIT_OK
    if verdict.evidence_failures:
        for failure in verdict.evidence_failures:
            print(f"EvidenceUnresolvable: {failure}", file=sys.stderr)
        return EXIT_IO
    return EXIT_FAIL


def cmd_graph(args: argparse.Namespace) -> int:
    default = _load_policy(args.policy)
    node_policies: dict[str, TrustPolicy] = {}
    for entry in args.node_policy or []:
        selector, sep, path = entry.partition("=")
        if not sep or not selector or not path:
            raise UsageError(f"--node-policy expects SELECTOR=PATH, got {entry!r}")
        node_policies[selector] = _load_policy(path)
    trusted = {k.keyid: k for p in [default, *node_policies.values()] for k in p.trusted_keys}
    resolver = _resolver(args)
    env = _read_envelope(args.envelope)
    graph = build_graph(env, trusted.values(), resolver, args.max_depth)
    verdict = verify_graph(graph, node_policies, default, resolver)
    if args.json:
        _emit_json(verdict.to_json())
    else:
        print(render_tree(graph, verdict))
        for failure in verdict.failures:
            print(f"{failure.reason}: {failure.key}: {failure.detail}", file=sys.stderr)
    return EXIT_OK if verdict.passed else EXIT_FAIL


def cmd_produce(args: argparse.Namespace) -> int:
    if not args.command:
        raise UsageError("no command given after --")
    rules = load_ruleset(args.rules)
    key = load_key_file(args.key)
    if not isinstance(key, KeyPair):
        raise UsageError(f"{args.key} holds no private key")
    envelopes, record = run_and_attest(
        args.command, args.output, rules, key, store=_store_from(args), payload_type=args.payload_type
    )
    out_dir = Path(args.out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for rd, env in zip(record.output_descriptors, envelopes):
            target = out_dir / f"{rd.name}.scai.json"
            target.write_bytes(env.to_bytes())
            written.append(str(target))
    except OSError as exc:
        raise IoFailure(f"cannot write envelope: {exc.strerror}") from None
    if args.json:
        _emit_json({"ok": True, "envelopes": written, "exitCode": record.exit_code})
    else:
        for path in written:
            print(path)
    return EXIT_OK


def _parse_digest(text: str) -> DigestSet:
    alg, sep, value = text.partition(":")
    if not sep:
        alg, value = "sha256", text
    value = value.lower()
    expected = DIGEST_ALGORITHMS.get(alg)
    if expected is None or len(value) != expected or any(c not in "0123456789abcdef" for c in value):
        raise UsageError(f"bad digest {text!r}: expected <alg>:<hex> with alg in {sorted(DIGEST_ALGORITHMS)}")
    return DigestSet({alg: value})


def cmd_store_put(args: argparse.Namespace) -> int:
    store = _store_from(args, required=True)
    assert store is not None
    digest = store.put(_read(args.file))
    if args.json:
        _emit_json({"ok": True, "digest": digest.as_dict()})
    else:
        print("sha256:" + digest["sha256"])
    return EXIT_OK


def cmd_store_get(args: argparse.Namespace) -> int:
    store = _store_from(args, required=True)
    assert store is not None
    digest = _parse_digest(args.digest)
    data = store.get(digest)
    if args.out:
        try:
            Path(args.out).write_bytes(data)
        except OSError as exc:
            raise IoFailure(f"cannot write {args.out}: {exc.strerror}") from None
    if args.json:
        doc: dict[str, Any] = {"ok": True, "digest": digest.as_dict(), "size": len(data), "out": args.out}
        if not args.out:
            doc["contentBase64"] = base64.b64encode(data).decode("ascii")
        _emit_json(doc)
    elif not args.out:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scai-kit", description="Create, sign and verify SCAI reports.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit one JSON document on stdout")
    store_opt = argparse.ArgumentParser(add_help=False)
    store_opt.add_argument("--store", help=f"object store root (default: ${STORE_ENV})")

    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", parents=[common], help="generate an ed25519 key file")
    p.add_argument("--out", required=True, help="key file to write (private, mode 0600)")
    p.add_argument("--public-out", help="also write a public-only key file")
    p.add_argument("--seed", help="32-byte seed as 64 hex characters (deterministic key)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("sign", parents=[common], help="sign a report into an envelope")
    p.add_argument("report")
    p.add_argument("--key", required=True)
    p.add_argument("--out")
    p.add_argument("--payload-type", default=REPORT_PAYLOAD_TYPE)
    p.add_argument("--lax", action="store_true", help="sign reports that only pass lax validation")
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("verify", parents=[common], help="verify an envelope's signatures")
    p.add_argument("envelope")
    p.add_argument("--key", action="append", required=True, help="trusted key file (repeatable)")
    p.add_argument("--threshold", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", parents=[common], help="pretty-print a report or envelope")
    p.add_argument("file")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("check", parents=[common, store_opt], help="verify and evaluate a trust policy")
    p.add_argument("envelope")
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("graph", parents=[common, store_opt], help="verify the dependency graph")
    p.add_argument("envelope")
    p.add_argument("--policy", required=True, help="default policy for every node")
    p.add_argument("--node-policy", action="append", metavar="SELECTOR=PATH",
                   help="policy for nodes whose subject name or uri matches SELECTOR")
    p.add_argument("--max-depth", type=int, default=32)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("produce", parents=[common, store_opt], help="run a command and attest its outputs")
    p.add_argument("--rules", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--output", action="append", required=True, help="declared output file (repeatable)")
    p.add_argument("--out-dir", default=".", help="where to write <output>.scai.json envelopes")
    p.add_argument("--payload-type", default=REPORT_PAYLOAD_TYPE)
    p.add_argument("command", nargs=argparse.REMAINDER, help="-- followed by the wrapped command")
    p.set_defaults(func=cmd_produce)

    p = sub.add_parser("store", help="content-addressed object store")
    store_sub = p.add_subparsers(dest="store_cmd", required=True, parser_class=_Parser)
    sp = store_sub.add_parser("put", parents=[common, store_opt])
    sp.add_argument("file")
    sp.set_defaults(func=cmd_store_put)
    sp = store_sub.add_parser("get", parents=[common, store_opt])
    sp.add_argument("digest", help="sha256:<hex> or bare sha256 hex")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_store_get)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) and args.command[0] == "--":
        args.command = args.command[1:]
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ScaiError, OSError) as exc:
        code = exit_code_for(exc)
        if getattr(args, "json", False):
            _emit_json({"ok": False, "reason": _reason(exc), "message": str(exc)})
        print(f"error: {_reason(exc)}: {exc}", file=sys.stderr)
        if isinstance(exc, ValidationFailed):
            for issue in exc.issues:
                print(f"  {issue}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
