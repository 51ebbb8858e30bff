import hashlib
import json

import pytest

from helpers import key, write_json
from scai_kit.envelope import verify_envelope
from scai_kit.errors import CommandFailed, MalformedRuleSet, NoAttributes, OutputMissing
from scai_kit.model import Mode, ResourceDescriptor, validate_report
from scai_kit.producer import (
    FLAG_CONDITIONS_TYPE,
    AttributeRuleSpec,
    RuleSet,
    load_ruleset,
    match_rules,
    parse_ruleset,
    run_and_attest,
)
from scai_kit.store import Store

STACK_RULE = AttributeRuleSpec("WITH_STACK_PROTECTION", when_flag_matches="-fstack-protector*")
GCC = ["gcc", "-fstack-protector", "-o", "hello-world", "hello-world.c"]


def run(tmp_path, env, argv=GCC, rules=RuleSet((STACK_RULE,)), outputs=("hello-world",), **kw):
    return run_and_attest(argv, list(outputs), rules, key(), env=env, cwd=tmp_path, **kw)


def test_stack_protection_assertion(tmp_path, fake_gcc):
    envelopes, record = run(tmp_path, fake_gcc)
    assert len(envelopes) == 1 and record.exit_code == 0
    report = verify_envelope(envelopes[0], [key()]).report
    assertion = report.attributes[0]
    assert assertion.attribute == "WITH_STACK_PROTECTION"
    assert assertion.conditions.body == {"type": FLAG_CONDITIONS_TYPE, "flags": "-fstack-protector"}
    assert not validate_report(report, Mode.STRICT)


def test_subject_digest_matches_independent_hash(tmp_path, fake_gcc):
    envelopes, record = run(tmp_path, fake_gcc)
    expected = hashlib.sha256((tmp_path / "hello-world").read_bytes()).hexdigest()
    report = verify_envelope(envelopes[0], [key()]).report
    assert report.subject.digest["sha256"] == expected
    assert report.subject.name == "hello-world"
    assert record.output_descriptors[0].digest["sha256"] == expected
    assert record.started_at <= record.finished_at
    assert record.started_at.tzinfo is not None


def test_no_matching_rule(tmp_path, fake_gcc):
    argv = ["gcc", "-O2", "-o", "hello-world", "hello-world.c"]
    with pytest.raises(NoAttributes):
        run(tmp_path, fake_gcc, argv=argv)


def test_baseline_attribute(tmp_path, fake_gcc):
    argv = ["gcc", "-O2", "-o", "hello-world", "hello-world.c"]
    rules = RuleSet((STACK_RULE,), baseline_attribute="BUILT_BY_WRAPPER")
    envelopes, _ = run(tmp_path, fake_gcc, argv=argv, rules=rules)
    report = verify_envelope(envelopes[0], [key()]).report
    assert [a.attribute for a in report.attributes] == ["BUILT_BY_WRAPPER"]


def test_output_missing(tmp_path, fake_gcc):
    with pytest.raises(OutputMissing):
        run(tmp_path, {**fake_gcc, "FAKE_GCC_SKIP_OUTPUT": "1"})


def test_command_failed(tmp_path, fake_gcc):
    with pytest.raises(CommandFailed) as info:
        run(tmp_path, {**fake_gcc, "FAKE_GCC_FAIL": "1"})
    assert info.value.exit_code == 4


def test_one_envelope_per_output(tmp_path, fake_gcc):
    (tmp_path / "extra.map").write_text("map")
    envelopes, _ = run(tmp_path, fake_gcc, outputs=("hello-world", "extra.map"))
    names = [verify_envelope(e, [key()]).report.subject.name for e in envelopes]
    assert names == ["hello-world", "extra.map"]


def test_negative_flag_does_not_match():
    rules = RuleSet((STACK_RULE,))
    assert match_rules(["gcc", "-fno-stack-protector"], {}, rules) == []
    fired = match_rules(["gcc", "-c", "-fstack-protector-strong", "x.c", "-fstack-protector"], {}, rules)
    assert fired[0][1] == ["-fstack-protector-strong", "-fstack-protector"]


def test_program_name_is_not_a_flag():
    rules = RuleSet((AttributeRuleSpec("X", when_flag_matches="*gcc"),))
    assert match_rules(["/usr/bin/gcc", "-O2"], {}, rules) == []


def test_position_independent():
    rules = RuleSet((STACK_RULE,))
    a = match_rules(["gcc", "-fstack-protector", "-o", "x"], {}, rules)
    b = match_rules(["gcc", "-o", "x", "-fstack-protector"], {}, rules)
    assert [(r.attribute, t) for r, t, _ in a] == [(r.attribute, t) for r, t, _ in b]


def test_env_rules_are_allowlisted(tmp_path, fake_gcc):
    rule = AttributeRuleSpec("HARDENED_BUILD", when_env_matches=(("CFLAGS", "*-D_FORTIFY_SOURCE=2*"),))
    env = {**fake_gcc, "CFLAGS": "-O2 -D_FORTIFY_SOURCE=2", "SECRET_TOKEN": "hunter2"}
    argv = ["gcc", "-O2", "-o", "hello-world", "hello-world.c"]
    envelopes, _ = run(tmp_path, env, argv=argv, rules=RuleSet((rule,)))
    report = verify_envelope(envelopes[0], [key()]).report
    body = report.attributes[0].conditions.body
    assert body["env"] == {"CFLAGS": "-O2 -D_FORTIFY_SOURCE=2"}
    assert "hunter2" not in json.dumps(body)
    assert b"hunter2" not in envelopes[0].payload


def test_env_rule_needs_every_variable():
    rule = AttributeRuleSpec("X", when_env_matches=(("A", "1"), ("B", "2")))
    assert match_rules(["cc"], {"A": "1"}, RuleSet((rule,))) == []
    assert len(match_rules(["cc"], {"A": "1", "B": "2"}, RuleSet((rule,)))) == 1


def test_record_conditions_off(tmp_path, fake_gcc):
    rule = AttributeRuleSpec("WITH_STACK_PROTECTION", when_flag_matches="-fstack-protector*", record_conditions=False)
    envelopes, _ = run(tmp_path, fake_gcc, rules=RuleSet((rule,)))
    assert verify_envelope(envelopes[0], [key()]).report.attributes[0].conditions is None


def test_untyped_style_conditions(tmp_path, fake_gcc):
    envelopes, _ = run(tmp_path, fake_gcc, rules=RuleSet((STACK_RULE,), conditions_style="untyped"))
    verified = verify_envelope(envelopes[0], [key()])
    assert verified.report.attributes[0].conditions.body == {"flags": "-fstack-protector"}
    assert "CONDITIONS_UNTYPED" in {w.code for w in verified.warnings}


def test_evidence_attached(tmp_path, fake_gcc):
    (tmp_path / "quote.json").write_bytes(b'{"quote": "opaque"}')
    rule = AttributeRuleSpec(
        "ATTESTED_HARDWARE",
        when_flag_matches="-fstack-protector*",
        record_conditions=False,
        evidence_from="quote.json",
        evidence_media_type="application/x.sgx.dcap1.14+json",
    )
    store = Store(tmp_path / "store")
    envelopes, _ = run(tmp_path, fake_gcc, rules=RuleSet((rule,)), store=store)
    evidence = verify_envelope(envelopes[0], [key()]).report.attributes[0].evidence
    assert evidence.media_type == "application/x.sgx.dcap1.14+json"
    assert evidence.digest["sha256"] == hashlib.sha256(b'{"quote": "opaque"}').hexdigest()
    assert evidence.uri == (tmp_path / "quote.json").resolve().as_uri()
    assert store.get(evidence.digest) == b'{"quote": "opaque"}'


def test_missing_evidence_file(tmp_path, fake_gcc):
    rule = AttributeRuleSpec("A", when_flag_matches="-f*", evidence_from="{output}.sig")
    with pytest.raises(OutputMissing):
        run(tmp_path, fake_gcc, rules=RuleSet((rule,)))


def test_producer_descriptor_and_toolchain_digest(tmp_path, fake_gcc):
    toolchain = tmp_path / "bin" / "gcc"
    rules = RuleSet((STACK_RULE,), producer=ResourceDescriptor(name="gcc9.3.0", uri="https://gcc.example/"))
    report = verify_envelope(run(tmp_path, fake_gcc, rules=rules)[0][0], [key()]).report
    assert report.producer == ResourceDescriptor(name="gcc9.3.0", uri="https://gcc.example/")
    hashed = RuleSet(rules.rules, rules.producer, toolchain_path=str(toolchain))
    report = verify_envelope(run(tmp_path, fake_gcc, rules=hashed)[0][0], [key()]).report
    assert report.producer.digest["sha256"] == hashlib.sha256(toolchain.read_bytes()).hexdigest()
    assert report.producer.name == "gcc9.3.0"


def test_argv_passed_verbatim(tmp_path, fake_gcc):
    argv = ["gcc", "-fstack-protector", "-DMSG=a b", "-o", "hello-world", "hello-world.c"]
    run(tmp_path, fake_gcc, argv=argv)
    assert (tmp_path / "hello-world").read_bytes() == b"ELF:-fstack-protector -DMSG=a b -o hello-world.c"


def test_rule_needs_trigger():
    with pytest.raises(ValueError):
        AttributeRuleSpec("X")


def test_parse_ruleset(tmp_path):
    path = write_json(
        tmp_path / "rules.json",
        {
            "rules": [
                {"attribute": "WITH_STACK_PROTECTION", "whenFlagMatches": "-fstack-protector*"},
                {"attribute": "HARDENED", "whenEnvMatches": {"CFLAGS": "*FORTIFY*"}, "recordConditions": False},
            ],
            "producer": {"name": "gcc9.3.0", "digest": {"sha256": "a" * 64}},
            "baselineAttribute": "BUILT",
            "conditionsStyle": "untyped",
        },
    )
    rules = load_ruleset(path)
    assert rules.rules[0] == STACK_RULE
    assert rules.rules[1].when_env_matches == (("CFLAGS", "*FORTIFY*"),) and not rules.rules[1].record_conditions
    assert rules.producer.name == "gcc9.3.0"
    assert rules.baseline_attribute == "BUILT" and rules.conditions_style == "untyped"


@pytest.mark.parametrize(
    "doc",
    [
        [],
        {"rules": [{"attribute": "A"}]},
        {"rules": [{"attribute": "", "whenFlagMatches": "x"}]},
        {"rules": [{"attribute": "A", "whenEnvMatches": {"X": 1}}]},
        {"rules": [{"attribute": "A", "whenFlagMatches": "x", "recordConditions": "yes"}]},
        {"rules": "none"},
        {"conditionsStyle": "fancy"},
        {"rules": [], "unknown": 1},
    ],
)
def test_malformed_rulesets(doc):
    with pytest.raises(MalformedRuleSet):
        parse_ruleset(json.dumps(doc))
    with pytest.raises(MalformedRuleSet):
        parse_ruleset("{")
