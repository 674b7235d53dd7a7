"""Commit / sign / aggregate / prove / verify pipeline for one FL round.

Clients commit per coordinate (Pedersen), sign the commitment digest
bound to the round id, and disclose plaintext update and blinding vector
to the honest-but-curious aggregator. The aggregator verifies signatures
and openings, applies the norm policy, multiplies commitments
coordinatewise, and proves knowledge of the aggregate blinding behind
C_j * g^{-w_j} = h^{s_j} for every coordinate at once: a random-linear-
combination batch collapses the d relations into one Schnorr statement,
made non-interactive by hashing the transcript, so the proof is one
group element and two scalars regardless of dimension.

Broadcast = (aggregate values, commitment vector, inclusion leaf list,
proof component). Each client re-derives the challenge, checks the
batched equation, and audits that its own commitment digest is included,
which defeats silent dropping of a client's update.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .group import (
    ELEMENT_NBYTES,
    SCALAR_NBYTES,
    GroupParams,
    SigningKey,
    bytes_to_element,
    commit,
    element_to_bytes,
    scalar_to_bytes,
    sign,
    verify_sig,
)
from .merkle import leaf_hash, merkle_root
from .quantize import MAX_CLIENTS, QuantizedVector, dequantize

__all__ = [
    "VerificationPolicy",
    "PolicyResult",
    "ClientUpdate",
    "AggregateProof",
    "Rejection",
    "AggregateOutcome",
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

_RLC_NBYTES = 16  # 128-bit batching coefficients


@dataclass(frozen=True)
class VerificationPolicy:
    """Norm bound on dequantized updates plus the registered signer set."""

    norm_bound: float
    signers: dict[int, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.norm_bound <= 0:
            raise ValueError("norm_bound must be strictly positive")


@dataclass(frozen=True)
class PolicyResult:
    passed: bool
    norm: float


@dataclass(frozen=True)
class ClientUpdate:
    """One client's contribution; blindings ride along for the aggregator."""

    client_id: int
    round_id: int
    values: np.ndarray  # quantized int64
    blindings: tuple[int, ...]
    commitments: tuple[int, ...]
    signature: bytes
    n_clamped: int = 0

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def commitment_digest(self, params: GroupParams) -> bytes:
        return _commitment_digest(
            params, self.client_id, self.round_id, self.commitments
        )


@dataclass(frozen=True)
class Rejection:
    client_id: int
    reason: str


@dataclass(frozen=True)
class AggregateProof:
    """Broadcast transcript: aggregate, commitments, inclusion data and
    the constant-size proof component (announcement, challenge, response,
    aggregator signature, inclusion root)."""

    round_id: int
    agg_values: np.ndarray  # int64 sums, no modular wrap by construction
    commitments: tuple[int, ...]
    announcement: int
    challenge: int
    response: int
    inclusion_root: bytes
    inclusion_leaves: tuple[tuple[int, bytes], ...]
    agg_signature: bytes

    @property
    def dim(self) -> int:
        return int(self.agg_values.shape[0])


@dataclass(frozen=True)
class AggregateOutcome:
    proof: AggregateProof
    total: np.ndarray
    accepted_ids: tuple[int, ...]
    rejected: tuple[Rejection, ...]


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: str = "ok"


def _commitment_digest(
    params: GroupParams, client_id: int, round_id: int, commitments: tuple[int, ...]
) -> bytes:
    m = hashlib.sha256()
    m.update(params.tag + b"|leaf|")
    m.update(struct.pack("<IQ", client_id, round_id))
    for c in commitments:
        m.update(element_to_bytes(c))
    return m.digest()


def _client_sig_message(params: GroupParams, round_id: int, digest: bytes) -> bytes:
    return params.tag + b"|client-sig|" + struct.pack("<Q", round_id) + digest


def make_client_update(
    client_id: int,
    round_id: int,
    qv: QuantizedVector,
    params: GroupParams,
    key: SigningKey,
    rng=None,
) -> ClientUpdate:
    """Commit to every coordinate, sign the digest bound to the round.

    ``rng`` may be a ``random.Random`` for deterministic tests; system
    entropy is used otherwise. Blindings stay with the update because the
    aggregator opens the aggregate in this trust model.
    """
    if rng is None:
        draw = lambda: secrets.randbits(256) % params.q
    else:
        draw = lambda: rng.getrandbits(256) % params.q
    blindings = tuple(draw() for _ in range(qv.dim))
    commitments = tuple(
        commit(int(w), s, params) for w, s in zip(qv.values, blindings)
    )
    digest = _commitment_digest(params, client_id, round_id, commitments)
    signature = sign(_client_sig_message(params, round_id, digest), key)
    return ClientUpdate(
        client_id=client_id,
        round_id=round_id,
        values=qv.values.copy(),
        blindings=blindings,
        commitments=commitments,
        signature=signature,
        n_clamped=qv.n_clamped,
    )


def check_policy(qv: QuantizedVector, policy: VerificationPolicy) -> PolicyResult:
    """L2 norm of the dequantized update against the bound (inclusive)."""
    norm = float(np.linalg.norm(dequantize(qv)))
    return PolicyResult(passed=norm <= policy.norm_bound, norm=norm)


def _transcript_digest(
    params: GroupParams,
    round_id: int,
    root: bytes,
    commitments: tuple[int, ...],
    values: np.ndarray,
) -> bytes:
    m = hashlib.sha256()
    m.update(params.tag + b"|transcript|")
    m.update(params.digest())
    m.update(struct.pack("<QI", round_id, len(commitments)))
    m.update(root)
    for c in commitments:
        m.update(element_to_bytes(c))
    m.update(np.asarray(values, dtype="<i8").tobytes())
    return m.digest()


def _rlc_coeff(params: GroupParams, transcript: bytes, j: int) -> int:
    raw = hashlib.sha256(
        params.tag + b"|rlc|" + transcript + struct.pack("<I", j)
    ).digest()
    return int.from_bytes(raw[:_RLC_NBYTES], "big")


def _challenge(params: GroupParams, transcript: bytes, announcement: int) -> int:
    raw = hashlib.sha256(
        params.tag + b"|chal|" + transcript + element_to_bytes(announcement)
    ).digest()
    return int.from_bytes(raw, "big") % params.q


def _agg_sig_message(
    params: GroupParams, transcript: bytes, announcement: int, response: int
) -> bytes:
    return (
        params.tag
        + b"|agg-sig|"
        + transcript
        + element_to_bytes(announcement)
        + scalar_to_bytes(response)
    )


def aggregate(
    updates: list[ClientUpdate],
    params: GroupParams,
    policy: VerificationPolicy,
    agg_key: SigningKey,
    round_id: int,
    rng=None,
) -> AggregateOutcome:
    """Filter, combine and prove one round's updates.

    Clients failing signature, opening, dimension or policy checks are
    rejected by name; the aggregation proceeds over the accepted set and
    the inclusion root covers exactly that set. Raises ``ValueError``
    when no update survives or the client count exceeds the no-wrap cap.
    """
    if len(updates) > MAX_CLIENTS:
        raise ValueError("client count exceeds the no-wrap bound")
    accepted: list[ClientUpdate] = []
    rejected: list[Rejection] = []
    dim = updates[0].dim if updates else 0
    for upd in updates:
        if upd.round_id != round_id:
            rejected.append(Rejection(upd.client_id, "round_mismatch"))
            continue
        if upd.client_id not in policy.signers:
            rejected.append(Rejection(upd.client_id, "unknown_signer"))
            continue
        if upd.dim != dim:
            rejected.append(Rejection(upd.client_id, "dimension_mismatch"))
            continue
        digest = upd.commitment_digest(params)
        if not verify_sig(
            _client_sig_message(params, round_id, digest),
            upd.signature,
            policy.signers[upd.client_id],
        ):
            rejected.append(Rejection(upd.client_id, "bad_signature"))
            continue
        if not _openings_match(upd, params):
            rejected.append(Rejection(upd.client_id, "bad_opening"))
            continue
        pol = check_policy(QuantizedVector(upd.values, n_clamped=upd.n_clamped), policy)
        if not pol.passed:
            rejected.append(Rejection(upd.client_id, "policy_norm"))
            continue
        accepted.append(upd)

    if not accepted:
        raise ValueError("no client update was accepted")

    p, q = params.p, params.q
    agg_c = [gmpy2.mpz(1)] * dim
    total = np.zeros(dim, dtype=np.int64)
    agg_s = [0] * dim
    for upd in accepted:
        total += upd.values
        for j in range(dim):
            agg_c[j] = agg_c[j] * upd.commitments[j] % p
            agg_s[j] = (agg_s[j] + upd.blindings[j]) % q
    commitments = tuple(int(c) for c in agg_c)

    leaves = tuple(
        (u.client_id, u.commitment_digest(params)) for u in accepted
    )
    root = merkle_root([leaf_hash(d) for _, d in leaves])
    transcript = _transcript_digest(params, round_id, root, commitments, total)

    batched_s = 0
    for j in range(dim):
        batched_s = (batched_s + _rlc_coeff(params, transcript, j) * agg_s[j]) % q
    if rng is None:
        r = secrets.randbits(256) % q
    else:
        r = rng.getrandbits(256) % q
    announcement = int(gmpy2.powmod(params.h, r, p))
    c = _challenge(params, transcript, announcement)
    response = (r + c * batched_s) % q
    agg_signature = sign(
        _agg_sig_message(params, transcript, announcement, response), agg_key
    )

    proof = AggregateProof(
        round_id=round_id,
        agg_values=total,
        commitments=commitments,
        announcement=announcement,
        challenge=c,
        response=response,
        inclusion_root=root,
        inclusion_leaves=leaves,
        agg_signature=agg_signature,
    )
    return AggregateOutcome(
        proof=proof,
        total=total,
        accepted_ids=tuple(u.client_id for u in accepted),
        rejected=tuple(rejected),
    )


def _openings_match(upd: ClientUpdate, params: GroupParams) -> bool:
    for w, s, c in zip(upd.values, upd.blindings, upd.commitments):
        if commit(int(w), s, params) != c:
            return False
    return True


def verify_aggregate(
    proof: AggregateProof,
    own_update: ClientUpdate | None,
    params: GroupParams,
    agg_public: bytes,
) -> VerifyResult:
    """Client-side verification of the broadcast transcript.

    Checks, in order: aggregator signature; Fiat-Shamir challenge and the
    batched knowledge equation h^z == A * Y^c with
    Y = prod_j (C_j * g^{-w_j})^{rho_j}; inclusion-root consistency and,
    when ``own_update`` is given, membership of the client's own
    commitment digest. Every failure returns a distinct reason code.
    """
    p, q = params.p, params.q
    transcript = _transcript_digest(
        params, proof.round_id, proof.inclusion_root, proof.commitments, proof.agg_values
    )
    if not verify_sig(
        _agg_sig_message(params, transcript, proof.announcement, proof.response),
        proof.agg_signature,
        agg_public,
    ):
        return VerifyResult(False, "agg_signature")

    if not 0 < proof.announcement < p:
        return VerifyResult(False, "announcement_range")
    if _challenge(params, transcript, proof.announcement) != proof.challenge:
        return VerifyResult(False, "challenge_mismatch")

    y = gmpy2.mpz(1)
    for j in range(proof.dim):
        cj = proof.commitments[j]
        if not 0 < cj < p:
            return VerifyResult(False, "commitment_range")
        w = int(proof.agg_values[j])
        if w >= 0:
            gw_inv = gmpy2.invert(gmpy2.powmod(params.g, w % q, p), p)
        else:
            gw_inv = gmpy2.powmod(params.g, (-w) % q, p)
        y = y * gmpy2.powmod(cj * gw_inv % p, _rlc_coeff(params, transcript, j), p) % p
    lhs = gmpy2.powmod(params.h, proof.response, p)
    rhs = proof.announcement * gmpy2.powmod(y, proof.challenge, p) % p
    if lhs != rhs:
        return VerifyResult(False, "proof_equation")

    recomputed = merkle_root([leaf_hash(d) for _, d in proof.inclusion_leaves])
    if recomputed != proof.inclusion_root:
        return VerifyResult(False, "inclusion_root_mismatch")
    if own_update is not None:
        own = (own_update.client_id, own_update.commitment_digest(params))
        if own not in proof.inclusion_leaves:
            return VerifyResult(False, "not_included")
    return VerifyResult(True, "ok")


# ---------------------------------------------------------------------------
# wire format: length-prefixed (little-endian u32) fields, canonical
# fixed-width big-endian group elements and scalars
# ---------------------------------------------------------------------------


def _frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _read_frame(raw: bytes, off: int) -> tuple[bytes, int]:
    if off + 4 > len(raw):
        raise ValueError("truncated frame header")
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    if off + n > len(raw):
        raise ValueError("truncated frame payload")
    return raw[off : off + n], off + n


def serialize_proof_component(proof: AggregateProof) -> bytes:
    """The dimension-independent part: round id, announcement, challenge,
    response, aggregator signature, inclusion root."""
    return b"".join(
        [
            _frame(struct.pack("<Q", proof.round_id)),
            _frame(element_to_bytes(proof.announcement)),
            _frame(scalar_to_bytes(proof.challenge)),
            _frame(scalar_to_bytes(proof.response)),
            _frame(proof.agg_signature),
            _frame(proof.inclusion_root),
        ]
    )


def serialize_broadcast(proof: AggregateProof) -> bytes:
    values = np.asarray(proof.agg_values, dtype="<i8").tobytes()
    commitments = b"".join(element_to_bytes(c) for c in proof.commitments)
    leaves = b"".join(
        struct.pack("<I", cid) + digest for cid, digest in proof.inclusion_leaves
    )
    return serialize_proof_component(proof) + _frame(values) + _frame(commitments) + _frame(leaves)


def deserialize_broadcast(raw: bytes, params: GroupParams) -> AggregateProof:
    """Parse and validate a broadcast; raises ``ValueError`` on malformed
    framing, out-of-range elements or non-subgroup commitments."""
    off = 0
    rid_b, off = _read_frame(raw, off)
    if len(rid_b) != 8:
        raise ValueError("bad round id field")
    (round_id,) = struct.unpack("<Q", rid_b)
    ann_b, off = _read_frame(raw, off)
    announcement = bytes_to_element(ann_b, params)
    chal_b, off = _read_frame(raw, off)
    resp_b, off = _read_frame(raw, off)
    if len(chal_b) != SCALAR_NBYTES or len(resp_b) != SCALAR_NBYTES:
        raise ValueError("bad scalar field width")
    challenge = int.from_bytes(chal_b, "big")
    response = int.from_bytes(resp_b, "big")
    if not 0 <= challenge < params.q or not 0 <= response < params.q:
        raise ValueError("scalar out of range")
    sig, off = _read_frame(raw, off)
    if len(sig) != 64:
        raise ValueError("bad signature width")
    root, off = _read_frame(raw, off)
    if len(root) != 32:
        raise ValueError("bad root width")

    values_b, off = _read_frame(raw, off)
    if len(values_b) % 8:
        raise ValueError("bad values blob")
    values = np.frombuffer(values_b, dtype="<i8").astype(np.int64)
    if values.size and int(np.max(np.abs(values))) > MAX_CLIENTS * (1 << 31):
        raise ValueError("aggregate value exceeds the no-wrap bound")
    comm_b, off = _read_frame(raw, off)
    if len(comm_b) != values.size * ELEMENT_NBYTES:
        raise ValueError("commitment blob does not match dimension")
    commitments = tuple(
        bytes_to_element(comm_b[i : i + ELEMENT_NBYTES], params)
        for i in range(0, len(comm_b), ELEMENT_NBYTES)
    )
    leaves_b, off = _read_frame(raw, off)
    if off != len(raw):
        raise ValueError("trailing bytes after broadcast")
    if len(leaves_b) % 36:
        raise ValueError("bad leaf blob")
    leaves = tuple(
        (struct.unpack_from("<I", leaves_b, i)[0], leaves_b[i + 4 : i + 36])
        for i in range(0, len(leaves_b), 36)
    )
    return AggregateProof(
        round_id=round_id,
        agg_values=values,
        commitments=commitments,
        announcement=announcement,
        challenge=challenge,
        response=response,
        inclusion_root=root,
        inclusion_leaves=leaves,
        agg_signature=sig,
    )


def verify_broadcast_bytes(
    raw: bytes,
    own_update: ClientUpdate | None,
    params: GroupParams,
    agg_public: bytes,
) -> VerifyResult:
    """Deserialize-and-verify; malformed wire data rejects as such."""
    try:
        proof = deserialize_broadcast(raw, params)
    except ValueError:
        return VerifyResult(False, "malformed")
    return verify_aggregate(proof, own_update, params, agg_public)
