"""Trading passports: signed, expiring trust edges and transfer restrictions.

A passport is a directional trust edge (truster signs the trustee's address
plus validity window). Restricted transfers are validated by computing the
degrees of trust separation between the security's issuer and the receiving
address over the live edges a directory holds, depth two at most. The
issuer's node is never consulted; evidence travels with the buyer.

Restriction levels:
  0  free trade
  1  receiver within two degrees of the issuer, and the seller may not be
     the intermediary on a two-degree path
  2  receiver directly trusted by the issuer
  3  units may only return to the issuer
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping

from . import crypto
from .canonical import DAY, canon_bytes, from_hex, to_hex
from .errors import EquibitError

DEFAULT_PASSPORT_LIFETIME = 180 * DAY

UNREACHABLE = "unreachable"


class PassportError(EquibitError):
    pass


class PastExpiry(PassportError):
    pass


class NotYourEdge(PassportError):
    pass


def _edge_payload(trustee_address: bytes, issued_at: int, expires_at: int) -> bytes:
    return canon_bytes(
        {"trustee": to_hex(trustee_address), "issued_at": issued_at, "expires_at": expires_at}
    )


@dataclass(frozen=True)
class TrustEdge:
    """A passport: the truster's signed assertion of trust in the trustee."""

    truster_address: bytes
    trustee_address: bytes
    truster_public_key: bytes
    issued_at: int
    expires_at: int
    signature: bytes

    @cached_property
    def edge_id(self) -> bytes:
        return crypto.hash_bytes(self.to_payload())

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.truster_public_key) != self.truster_address:
            return False
        return crypto.verify(
            self.truster_public_key,
            _edge_payload(self.trustee_address, self.issued_at, self.expires_at),
            self.signature,
        )

    def signature_valid(self) -> bool:
        return self._signature_ok

    def to_payload(self) -> bytes:
        return canon_bytes(self.to_json())

    def to_json(self) -> dict:
        return {
            "truster": to_hex(self.truster_address),
            "trustee": to_hex(self.trustee_address),
            "truster_public_key": to_hex(self.truster_public_key),
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TrustEdge":
        return cls(
            truster_address=from_hex(doc["truster"]),
            trustee_address=from_hex(doc["trustee"]),
            truster_public_key=from_hex(doc["truster_public_key"]),
            issued_at=int(doc["issued_at"]),
            expires_at=int(doc["expires_at"]),
            signature=from_hex(doc["signature"]),
        )


@dataclass(frozen=True)
class Revocation:
    """Signed notice that a previously issued edge is dead; broadcast publicly."""

    edge_id: bytes
    truster_address: bytes
    truster_public_key: bytes
    revoked_at: int
    signature: bytes

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.truster_public_key) != self.truster_address:
            return False
        payload = canon_bytes({"edge_id": to_hex(self.edge_id), "revoked_at": self.revoked_at})
        return crypto.verify(self.truster_public_key, payload, self.signature)

    def signature_valid(self) -> bool:
        return self._signature_ok

    def to_json(self) -> dict:
        return {
            "edge_id": to_hex(self.edge_id),
            "truster": to_hex(self.truster_address),
            "truster_public_key": to_hex(self.truster_public_key),
            "revoked_at": self.revoked_at,
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Revocation":
        return cls(
            edge_id=from_hex(doc["edge_id"]),
            truster_address=from_hex(doc["truster"]),
            truster_public_key=from_hex(doc["truster_public_key"]),
            revoked_at=int(doc["revoked_at"]),
            signature=from_hex(doc["signature"]),
        )


def issue_passport(truster: crypto.KeyPair, trustee_address: bytes, expires_at: int, now: int) -> TrustEdge:
    if expires_at <= now:
        raise PastExpiry(f"expires_at {expires_at} is not in the future (now {now})")
    sig = crypto.sign(truster.private_key, _edge_payload(trustee_address, now, expires_at))
    return TrustEdge(
        truster_address=truster.address,
        trustee_address=trustee_address,
        truster_public_key=truster.public_key,
        issued_at=now,
        expires_at=expires_at,
        signature=sig,
    )


def revoke_passport(truster: crypto.KeyPair, edge: TrustEdge, now: int) -> Revocation:
    if edge.truster_address != truster.address:
        raise NotYourEdge("only the truster that signed an edge may revoke it")
    payload = canon_bytes({"edge_id": to_hex(edge.edge_id), "revoked_at": now})
    return Revocation(
        edge_id=edge.edge_id,
        truster_address=truster.address,
        truster_public_key=truster.public_key,
        revoked_at=now,
        signature=crypto.sign(truster.private_key, payload),
    )


@dataclass(frozen=True)
class PassportDirectory:
    """Per-node store of passports held or shown, plus the revocation set."""

    edges: tuple[TrustEdge, ...] = ()
    revocations: tuple[Revocation, ...] = ()

    def with_edges(self, extra: Iterable[TrustEdge]) -> "PassportDirectory":
        known = {e.edge_id for e in self.edges}
        added = tuple(e for e in extra if e.edge_id not in known)
        return replace(self, edges=self.edges + added) if added else self

    def with_revocations(self, extra: Iterable[Revocation]) -> "PassportDirectory":
        known = {r.edge_id for r in self.revocations}
        added = tuple(r for r in extra if r.edge_id not in known)
        return replace(self, revocations=self.revocations + added) if added else self

    def is_revoked(self, edge: TrustEdge) -> bool:
        return any(r.edge_id == edge.edge_id and r.signature_valid() for r in self.revocations)

    def is_live(self, edge: TrustEdge, now: int) -> bool:
        return (
            edge.signature_valid()
            and edge.issued_at <= now < edge.expires_at
            and not self.is_revoked(edge)
        )

    def live_edges(self, now: int) -> list[TrustEdge]:
        return [e for e in self.edges if self.is_live(e, now)]

    def edges_from(self, truster_address: bytes, now: int) -> list[TrustEdge]:
        return [e for e in self.live_edges(now) if e.truster_address == truster_address]

    def edges_to(self, trustee_address: bytes, now: int) -> list[TrustEdge]:
        return [e for e in self.live_edges(now) if e.trustee_address == trustee_address]


def trust_paths(
    issuer_address: bytes, buyer_address: bytes, directory: PassportDirectory, now: int
) -> tuple[bool, frozenset[bytes]]:
    """(direct issuer->buyer edge exists, set of live two-step intermediaries)."""
    direct = any(
        e.trustee_address == buyer_address for e in directory.edges_from(issuer_address, now)
    )
    intermediaries = set()
    for first in directory.edges_from(issuer_address, now):
        mid = first.trustee_address
        if mid == buyer_address:
            continue
        for second in directory.edges_from(mid, now):
            if second.trustee_address == buyer_address:
                intermediaries.add(mid)
    return direct, frozenset(intermediaries)


def degrees_of_trust(
    issuer_address: bytes, buyer_address: bytes, directory: PassportDirectory, now: int
):
    """1, 2, or UNREACHABLE over the live edges the directory can see."""
    direct, intermediaries = trust_paths(issuer_address, buyer_address, directory, now)
    if direct:
        return 1
    if intermediaries:
        return 2
    return UNREACHABLE


@dataclass(frozen=True)
class TransferVerdict:
    allowed: bool
    detail: str = ""

    def __bool__(self) -> bool:
        return self.allowed


ALLOWED = TransferVerdict(True)


def validate_transfer(
    restriction_level: int,
    issuer_address: bytes,
    seller_addresses: frozenset[bytes] | set[bytes],
    buyer_address: bytes,
    directory: PassportDirectory,
    now: int,
) -> TransferVerdict:
    """Apply the level 0..3 rules to one receiving address.

    Returning units to the issuer, or to an address that already held them,
    is allowed at every level.
    """
    sellers = frozenset(seller_addresses)
    if buyer_address == issuer_address or buyer_address in sellers:
        return ALLOWED
    if restriction_level == 0:
        return ALLOWED
    if restriction_level == 3:
        return TransferVerdict(False, "level 3: units may only be returned to the issuer")

    direct, intermediaries = trust_paths(issuer_address, buyer_address, directory, now)
    if restriction_level == 2:
        if direct:
            return ALLOWED
        return TransferVerdict(False, "level 2: receiver is not directly trusted by the issuer")
    if restriction_level == 1:
        if direct:
            return ALLOWED
        usable = intermediaries - sellers
        if usable:
            return ALLOWED
        if intermediaries:
            return TransferVerdict(
                False, "level 1: only two-degree path runs through the seller as accreditor"
            )
        return TransferVerdict(False, "level 1: receiver is beyond two degrees of trust")
    raise PassportError(f"unknown restriction level {restriction_level}")
