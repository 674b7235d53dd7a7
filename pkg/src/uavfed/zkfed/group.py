"""Prime-order commitment group and signing keys.

The commitment group is the order-q subgroup of Z_p^* for fixed primes
(q 256 bits, p = q*c + 1 of 512 bits) derived once from a public tag via
a SHA-256 counter stream, so the moduli carry no hidden structure.
Generators are produced per setup by hash-to-group (raise a hashed value
to the cofactor), with h derived from g so no discrete-log relation
between them is known to anyone.

Scalar arithmetic uses gmpy2; this layer is desk-scale: the subgroup
order satisfies the >= 2^250 requirement, the 512-bit modulus favors
speed over long-term security margins.

Signatures are Ed25519 (via `cryptography`), with per-party keys derived
deterministically from the setup seed in test mode.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

import gmpy2
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)

__all__ = [
    "GROUP_P",
    "GROUP_Q",
    "GROUP_COFACTOR",
    "GroupParams",
    "SigningKey",
    "setup",
    "hash_to_group",
    "commit",
    "element_to_bytes",
    "bytes_to_element",
    "scalar_to_bytes",
    "sign",
    "verify_sig",
]

DOMAIN_TAG = b"uavfed/zkfed/v1"

# order-q subgroup of Z_p^*; q = next_prime(SHA-256 stream | 2^255),
# p = q*c + 1 with the first even c >= 2^255 making p prime
GROUP_Q = 0xBDD28C3FA11CB3D43163BFC5E8FCE6A47BA305F921711C0E0B02B75EEE81DD57
GROUP_P = int(
    "0x9D283CE0B842F550B985063260AD72AE03986FD9490D4B652F71D3D93D40E784"
    "FB252D4539EF04FDF05DA082AAE549F521E282C443FD7D75041C288F81A69CF5",
    16,
)
GROUP_COFACTOR = (GROUP_P - 1) // GROUP_Q

ELEMENT_NBYTES = 64
SCALAR_NBYTES = 32


@dataclass(frozen=True)
class GroupParams:
    """Cyclic group of prime order q with independent generators g, h."""

    p: int
    q: int
    g: int
    h: int
    tag: bytes = DOMAIN_TAG

    def __post_init__(self) -> None:
        for name in ("g", "h"):
            el = getattr(self, name)
            if not 1 < el < self.p or gmpy2.powmod(el, self.q, self.p) != 1:
                raise ValueError(f"generator {name} is not a non-identity subgroup element")

    def digest(self) -> bytes:
        m = hashlib.sha256()
        m.update(self.tag)
        m.update(self.p.to_bytes(ELEMENT_NBYTES, "big"))
        m.update(self.q.to_bytes(SCALAR_NBYTES, "big"))
        m.update(element_to_bytes(self.g))
        m.update(element_to_bytes(self.h))
        return m.digest()


def _hash_stream(material: bytes, nbytes: int) -> bytes:
    out = b""
    ctr = 0
    while len(out) < nbytes:
        out += hashlib.sha256(material + ctr.to_bytes(4, "little")).digest()
        ctr += 1
    return out[:nbytes]


def hash_to_group(material: bytes) -> int:
    """Map bytes onto a non-identity element of the order-q subgroup."""
    ctr = 0
    while True:
        u = int.from_bytes(
            _hash_stream(DOMAIN_TAG + b"|h2g|" + material + ctr.to_bytes(4, "little"), 80),
            "big",
        ) % GROUP_P
        el = int(gmpy2.powmod(u, GROUP_COFACTOR, GROUP_P))
        if el != 1 and el != 0:
            return el
        ctr += 1


@dataclass(frozen=True)
class SigningKey:
    """Ed25519 keypair; `public` is the 32-byte raw public key."""

    private: bytes
    public: bytes

    @classmethod
    def from_seed(cls, seed32: bytes) -> "SigningKey":
        sk = Ed25519PrivateKey.from_private_bytes(seed32)
        pub = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(private=seed32, public=pub)


def setup(
    seed: bytes | int | None = None, n_clients: int = 5
) -> tuple[GroupParams, list[SigningKey], SigningKey]:
    """Group generators plus per-party signing keys.

    Deterministic when ``seed`` is given (test mode), system entropy
    otherwise. h is derived from g by hash-to-group, so no discrete-log
    relation between them is known.
    """
    if seed is None:
        seed_bytes = secrets.token_bytes(32)
    elif isinstance(seed, int):
        seed_bytes = seed.to_bytes(32, "big", signed=False)
    else:
        seed_bytes = bytes(seed)
    root = hashlib.sha256(DOMAIN_TAG + b"|setup|" + seed_bytes).digest()

    g = hash_to_group(b"generator-g|" + root)
    h = hash_to_group(b"generator-h|" + element_to_bytes(g) + DOMAIN_TAG)
    params = GroupParams(p=GROUP_P, q=GROUP_Q, g=g, h=h)

    clients = [
        SigningKey.from_seed(
            hashlib.sha256(root + b"|client-key|" + i.to_bytes(4, "little")).digest()
        )
        for i in range(n_clients)
    ]
    aggregator = SigningKey.from_seed(hashlib.sha256(root + b"|aggregator-key|").digest())
    return params, clients, aggregator


def commit(w: int, s: int, params: GroupParams) -> int:
    """Pedersen commitment g^w * h^s mod p; commit(0, 0) is the identity.

    The value exponent is usually a small quantized weight, so it is
    exponentiated at its own magnitude (inverting for negatives) rather
    than reduced to a full-size scalar first.
    """
    p = params.p
    if w >= 0:
        gw = gmpy2.powmod(params.g, w % params.q, p)
    else:
        gw = gmpy2.invert(gmpy2.powmod(params.g, (-w) % params.q, p), p)
    hs = gmpy2.powmod(params.h, s % params.q, p)
    return int(gw * hs % p)


def element_to_bytes(el: int) -> bytes:
    return int(el).to_bytes(ELEMENT_NBYTES, "big")


def bytes_to_element(raw: bytes, params: GroupParams, check_subgroup: bool = True) -> int:
    if len(raw) != ELEMENT_NBYTES:
        raise ValueError("group element must be exactly 64 bytes")
    el = int.from_bytes(raw, "big")
    if not 0 < el < params.p:
        raise ValueError("group element out of range")
    if check_subgroup and gmpy2.powmod(el, params.q, params.p) != 1:
        raise ValueError("value is not in the prime-order subgroup")
    return el


def scalar_to_bytes(s: int) -> bytes:
    return int(s).to_bytes(SCALAR_NBYTES, "big")


def sign(message: bytes, key: SigningKey) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(key.private).sign(message)


def verify_sig(message: bytes, signature: bytes, public: bytes) -> bool:
    """True iff the signature is valid; malformed keys/signatures raise."""
    if len(public) != 32:
        raise ValueError("Ed25519 public key must be 32 bytes")
    if len(signature) != 64:
        raise ValueError("Ed25519 signature must be 64 bytes")
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except InvalidSignature:
        return False
