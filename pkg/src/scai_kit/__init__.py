"""Toolkit for SCAI (Software Supply Chain Attribute Integrity) metadata.

Build attribute assertions and reports, sign them into DSSE-style envelopes,
resolve referenced evidence through a content-addressed store, and verify
reports and their dependency graphs against trust policies.
"""

__version__ = "0.1.0"

from scai_kit.canon import canonicalize, pre_auth_encode
from scai_kit.envelope import (
    Envelope,
    KeyPair,
    PublicKey,
    VerifiedReport,
    generate_keypair,
    sign_report,
    verify_envelope,
)
from scai_kit.model import (
    AttributeAssertion,
    Conditions,
    DigestMatch,
    DigestSet,
    Mode,
    Report,
    ResourceDescriptor,
    ValidationIssue,
    decode_assertion,
    decode_report,
    digest_set_match,
    encode_report,
    upgrade_object_reference,
)
from scai_kit.policy import TrustPolicy, evaluate, match_glob, parse_policy
from scai_kit.store import Resolver, Store, resolve

__all__ = [
    "AttributeAssertion",
    "Conditions",
    "DigestMatch",
    "DigestSet",
    "Envelope",
    "KeyPair",
    "Mode",
    "PublicKey",
    "Report",
    "ResourceDescriptor",
    "Resolver",
    "Store",
    "TrustPolicy",
    "ValidationIssue",
    "VerifiedReport",
    "canonicalize",
    "decode_assertion",
    "decode_report",
    "digest_set_match",
    "encode_report",
    "evaluate",
    "generate_keypair",
    "match_glob",
    "parse_policy",
    "pre_auth_encode",
    "resolve",
    "sign_report",
    "upgrade_object_reference",
    "verify_envelope",
]
