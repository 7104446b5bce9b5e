"""RFC 8785 canonical JSON, event digests, signatures and keyed value hashing.

Compute order for a sealed event:

1. signature over the canonical event minus ``signature_value`` and
   ``current_hash`` (optional);
2. ``current_hash`` over the canonical event minus ``current_hash`` only,
   so the hash covers the signature.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import math
from json.encoder import encode_basestring
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519

from des_ledger.errors import (
    AlreadySealed,
    CanonicalizationError,
    SealPreconditionError,
    SignatureMissing,
    UnsupportedAlgorithm,
)
from des_ledger.event_model import HEX64, DecisionEvent

DEFAULT_HASH_ALGORITHM = "sha-256"
DEFAULT_SIGNATURE_ALGORITHM = "ed25519"

HASH_ALGORITHMS = {"sha-256": hashlib.sha256}
SIGNATURE_ALGORITHMS = frozenset({"ed25519", "ecdsa-p256"})

_MAX_SAFE_INTEGER = 2**53 - 1


# -- canonical JSON --------------------------------------------------------------


def _format_number(value: int | float) -> str:
    if isinstance(value, int):
        if abs(value) <= _MAX_SAFE_INTEGER:
            return str(value)
        # Beyond 2**53 an integer is accepted only when its decimal text is
        # already the canonical text of the nearest double. The canonical text
        # of a large float parses back as such an int and must re-serialise
        # to the same bytes; any other wide integer would silently lose digits.
        try:
            text = _format_number(float(value))
        except OverflowError:
            text = ""
        if text != str(value):
            raise CanonicalizationError(f"integer {value} does not round-trip through an IEEE-754 double")
        return text
    if not math.isfinite(value):
        raise CanonicalizationError(f"{value!r} has no JSON representation")
    if value == 0:
        return "0"
    sign = "-" if value < 0 else ""
    # repr() yields the shortest round-trip digits; re-lay them out the way
    # ECMAScript Number.prototype.toString does.
    mantissa, _, exp = repr(abs(value)).partition("e")
    int_part, _, frac_part = mantissa.partition(".")
    digits = int_part + frac_part
    point = len(int_part) + (int(exp) if exp else 0)
    stripped = digits.lstrip("0")
    point -= len(digits) - len(stripped)
    digits = stripped.rstrip("0")
    k = len(digits)
    if k <= point <= 21:
        body = digits + "0" * (point - k)
    elif 0 < point <= 21:
        body = f"{digits[:point]}.{digits[point:]}"
    elif -6 < point <= 0:
        body = "0." + "0" * -point + digits
    else:
        e = point - 1
        body = digits[0] + (f".{digits[1:]}" if k > 1 else "") + f"e{'+' if e > 0 else '-'}{abs(e)}"
    return sign + body


def _escape_string(value: str) -> str:
    # The stdlib encoder with ensure_ascii off escapes exactly '"', '\\' and
    # U+0000..U+001F, using the short forms and lowercase \u00xx as JCS requires.
    return encode_basestring(value)


def _utf16_key(key: str) -> bytes:
    return key.encode("utf-16-be", "surrogatepass")


def _emit(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(_escape_string(value))
    elif isinstance(value, (int, float)):
        out.append(_format_number(value))
    elif isinstance(value, Mapping):
        keys = list(value.keys())
        for k in keys:
            if not isinstance(k, str):
                raise CanonicalizationError(f"object key {k!r} is not a string")
        out.append("{")
        for i, k in enumerate(sorted(keys, key=_utf16_key)):
            if i:
                out.append(",")
            out.append(_escape_string(k))
            out.append(":")
            _emit(value[k], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise CanonicalizationError(f"cannot canonicalize {type(value).__name__}")


def canonicalize(document: Any) -> bytes:
    """Serialize ``document`` per RFC 8785 (JSON Canonicalization Scheme)."""
    out: list[str] = []
    _emit(document, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalizationError("string contains a lone surrogate") from exc


# -- event digests -----------------------------------------------------------------


@dataclass(frozen=True)
class SealedDigest:
    algorithm: str
    hex: str

    def __post_init__(self) -> None:
        if HEX64.match(self.hex) is None:
            raise ValueError(f"{self.algorithm} digest must be 64 lowercase hex characters")


def _hash_function(algorithm: str):
    try:
        return HASH_ALGORITHMS[algorithm]
    except KeyError:
        raise UnsupportedAlgorithm(f"hash algorithm {algorithm!r} is not supported") from None


def _without(doc: dict[str, Any], *paths: tuple[str, ...]) -> dict[str, Any]:
    for path in paths:
        node: Any = doc
        for part in path[:-1]:
            node = node.get(part) if isinstance(node, dict) else None
        if isinstance(node, dict):
            node.pop(path[-1], None)
    return doc


_CURRENT_HASH = ("temporal_metadata", "hash_chain", "current_hash")
_SIGNATURE_VALUE = ("temporal_metadata", "digital_signature", "signature_value")


def hashing_view(event: DecisionEvent | Mapping[str, Any]) -> bytes:
    """Canonical bytes that ``current_hash`` is computed over."""
    doc = event.to_dict() if isinstance(event, DecisionEvent) else _plain(event)
    return canonicalize(_without(doc, _CURRENT_HASH))


def signing_view(event: DecisionEvent | Mapping[str, Any]) -> bytes:
    """Canonical bytes a signature is computed over."""
    doc = event.to_dict() if isinstance(event, DecisionEvent) else _plain(event)
    return canonicalize(_without(doc, _CURRENT_HASH, _SIGNATURE_VALUE))


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def compute_event_hash(event: DecisionEvent) -> SealedDigest:
    chain = event.get_path("temporal_metadata.hash_chain")
    if not isinstance(chain, Mapping) or "previous_hash" not in chain:
        raise SealPreconditionError("temporal_metadata.hash_chain.previous_hash is not set")
    if event.sequence_number is None:
        raise SealPreconditionError("temporal_metadata.sequence_number is not set")
    algorithm = chain.get("algorithm", DEFAULT_HASH_ALGORITHM)
    digest = _hash_function(algorithm)(hashing_view(event)).hexdigest()
    return SealedDigest(algorithm, digest)


# -- signatures -------------------------------------------------------------------


@dataclass(frozen=True)
class Signer:
    """A private key plus the identity metadata written into ``digital_signature``."""

    key: ed25519.Ed25519PrivateKey | ec.EllipticCurvePrivateKey
    signer_id: str
    certificate_ref: str

    @property
    def algorithm(self) -> str:
        return key_algorithm(self.key)

    def public_key(self):
        return self.key.public_key()


def key_algorithm(key: Any) -> str:
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return "ed25519"
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        if isinstance(key.curve, ec.SECP256R1):
            return "ecdsa-p256"
    raise UnsupportedAlgorithm(f"unsupported key type {type(key).__name__}")


def load_private_key(pem: bytes, password: bytes | None = None):
    key = serialization.load_pem_private_key(pem, password=password)
    key_algorithm(key)
    return key


def load_public_key(pem: bytes):
    key = serialization.load_pem_public_key(pem)
    key_algorithm(key)
    return key


def sign_event(
    event: DecisionEvent,
    signing_key: ed25519.Ed25519PrivateKey | ec.EllipticCurvePrivateKey,
    signer_id: str,
    certificate_ref: str,
) -> dict[str, str]:
    """Return a ``digital_signature`` object for an unsealed event.

    The signed view already contains the returned object minus its
    ``signature_value``, so signer identity is covered by the signature.
    """
    if event.is_sealed:
        raise AlreadySealed("cannot sign a sealed event")
    algorithm = key_algorithm(signing_key)
    signature = {"signer_id": signer_id, "algorithm": algorithm, "certificate_ref": certificate_ref}
    view = signing_view(event.replace("temporal_metadata.digital_signature", signature))
    if algorithm == "ed25519":
        raw = signing_key.sign(view)
    else:
        raw = signing_key.sign(view, ec.ECDSA(hashes.SHA256()))
    return {**signature, "signature_value": base64.b64encode(raw).decode("ascii")}


def verify_signature(event: DecisionEvent, public_key) -> bool:
    sig = event.get_path("temporal_metadata.digital_signature")
    if not isinstance(sig, Mapping) or "signature_value" not in sig:
        raise SignatureMissing("event carries no digital_signature.signature_value")
    algorithm = sig.get("algorithm")
    if algorithm not in SIGNATURE_ALGORITHMS:
        raise UnsupportedAlgorithm(f"signature algorithm {algorithm!r} is not supported")
    if key_algorithm(public_key) != algorithm:
        return False
    try:
        raw = base64.b64decode(sig["signature_value"], validate=True)
    except (ValueError, TypeError):
        return False
    view = signing_view(event)
    try:
        if algorithm == "ed25519":
            public_key.verify(raw, view)
        else:
            public_key.verify(raw, view, ec.ECDSA(hashes.SHA256()))
    except InvalidSignature:
        return False
    return True


# -- privacy ---------------------------------------------------------------------


def hash_sensitive_value(value: Any, deployment_key: bytes | str, *, keyed: bool = True) -> str:
    """Digest of a personal-data value for ``input_value``.

    Keyed (HMAC-SHA-256) by default so low-entropy values cannot be recovered
    by hashing a dictionary of candidates. ``keyed=False`` gives plain SHA-256
    of the canonical value and ignores the key.
    """
    data = canonicalize(value)
    if not keyed:
        return hashlib.sha256(data).hexdigest()
    if isinstance(deployment_key, str):
        deployment_key = deployment_key.encode("utf-8")
    if not deployment_key:
        raise ValueError("deployment_key must be non-empty")
    return hmac.new(deployment_key, data, hashlib.sha256).hexdigest()
