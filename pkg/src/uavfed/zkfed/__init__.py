"""Verifiable aggregation: commitments, signatures, constant-size proof."""

from .group import (
    GroupParams,
    SigningKey,
    commit,
    hash_to_group,
    setup,
    sign,
    verify_sig,
)
from .merkle import leaf_hash, merkle_root
from .protocol import (
    AggregateOutcome,
    AggregateProof,
    ClientUpdate,
    PolicyResult,
    Rejection,
    VerificationPolicy,
    VerifyResult,
    aggregate,
    check_policy,
    deserialize_broadcast,
    make_client_update,
    serialize_broadcast,
    serialize_proof_component,
    verify_aggregate,
    verify_broadcast_bytes,
)
from .quantize import MAX_CLIENTS, SCALE_BITS, QuantizedVector, dequantize, quantize

__all__ = [
    "GroupParams",
    "SigningKey",
    "setup",
    "commit",
    "hash_to_group",
    "sign",
    "verify_sig",
    "leaf_hash",
    "merkle_root",
    "QuantizedVector",
    "quantize",
    "dequantize",
    "SCALE_BITS",
    "MAX_CLIENTS",
    "VerificationPolicy",
    "PolicyResult",
    "ClientUpdate",
    "AggregateProof",
    "AggregateOutcome",
    "Rejection",
    "VerifyResult",
    "make_client_update",
    "check_policy",
    "aggregate",
    "verify_aggregate",
    "serialize_proof_component",
    "serialize_broadcast",
    "deserialize_broadcast",
    "verify_broadcast_bytes",
]
