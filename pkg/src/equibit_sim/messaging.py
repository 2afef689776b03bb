"""Off-chain messaging: PoW-gated envelopes, confirmations, retention, sync.

Every envelope carries a proof-of-work stamp over its canonical content; a
node drops anything failing the check before doing any other work. Direct
and group payloads are sealed to their recipient list (the access-control
contract is what matters here, not a particular cipher), public payloads
are cleartext but limited to four subtypes: order-book bids and asks,
payment addresses, proxy designations, and passport revocations.

A node that decrypts a message confirms it back to the sender; senders
rebroadcast unconfirmed messages on an exponential schedule, forever.
Stores are pruned by retention class, and a node returning from an outage
pulls the live public set plus anything addressed to it from a peer.
"""

from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import cached_property
from typing import Iterable, Mapping

from . import crypto
from .canonical import DAY, from_hex, ordered_bytes, to_hex
from .errors import EquibitError


class MessagingError(EquibitError):
    pass


class ForbiddenPublicPayload(MessagingError):
    pass


class NoPeers(MessagingError):
    pass


class Kind(str, enum.Enum):
    DIRECT = "direct"
    GROUP = "group"
    PUBLIC = "public"


class PublicSubtype(str, enum.Enum):
    BID_ASK = "bid_ask"
    PAYMENT_ADDRESS = "payment_address"
    PROXY_DESIGNATION = "proxy_designation"
    PASSPORT_REVOCATION = "passport_revocation"


@dataclass(frozen=True)
class MessagingConfig:
    # Default target expects ~4096 hash attempts per message.
    pow_target: int = 1 << 244


DEFAULT_CONFIG = MessagingConfig()


@dataclass(frozen=True)
class Envelope:
    kind: Kind
    sender_address: bytes
    recipients: tuple[bytes, ...]
    payload: bytes
    created_at: int
    public_subtype: PublicSubtype | None
    pow_nonce: int
    sender_signature: bytes
    sender_public_key: bytes

    def content_json(self) -> dict:
        # Field order is part of the wire format.
        return {
            "kind": self.kind.value,
            "sender": to_hex(self.sender_address),
            "recipients": [to_hex(r) for r in self.recipients],
            "created_at": self.created_at,
            "subtype": self.public_subtype.value if self.public_subtype else None,
            "payload": base64.b64encode(self.payload).decode("ascii"),
        }

    def content_bytes(self) -> bytes:
        return ordered_bytes(self.content_json())

    @cached_property
    def message_id(self) -> bytes:
        """Hash of the wire form minus the nonce and signature fields."""
        return crypto.hash_bytes(self.content_bytes())

    def to_json(self) -> dict:
        doc = self.content_json()
        doc["nonce"] = self.pow_nonce
        doc["signature"] = to_hex(self.sender_signature)
        doc["sender_public_key"] = to_hex(self.sender_public_key)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Envelope":
        return cls(
            kind=Kind(doc["kind"]),
            sender_address=from_hex(doc["sender"]),
            recipients=tuple(from_hex(r) for r in doc["recipients"]),
            payload=base64.b64decode(doc["payload"]),
            created_at=int(doc["created_at"]),
            public_subtype=PublicSubtype(doc["subtype"]) if doc["subtype"] else None,
            pow_nonce=int(doc["nonce"]),
            sender_signature=from_hex(doc["signature"]),
            sender_public_key=from_hex(doc["sender_public_key"]),
        )

    @cached_property
    def signature_ok(self) -> bool:
        if crypto.address_of(self.sender_public_key) != self.sender_address:
            return False
        try:
            return crypto.verify(self.sender_public_key, self.content_bytes(), self.sender_signature)
        except crypto.CryptoError:
            return False


def payload_tag(payload: bytes) -> str | None:
    """Top-level JSON tag of a cleartext payload, if it parses."""
    try:
        doc = json.loads(payload)
    except (ValueError, UnicodeDecodeError):
        return None
    if isinstance(doc, dict) and len(doc) == 1:
        return next(iter(doc))
    return None


def is_confirmation(envelope: Envelope) -> bool:
    return envelope.kind is Kind.DIRECT and payload_tag(envelope.payload) == "confirm"


def confirmed_message_id(envelope: Envelope) -> bytes:
    return from_hex(json.loads(envelope.payload)["confirm"])


def _pow_value(content: bytes, nonce: int) -> int:
    stamp = crypto.hash_bytes(content + nonce.to_bytes(8, "big"))
    return int.from_bytes(stamp, "big")


def mine_pow(content: bytes, target: int) -> int:
    """Iterate the nonce from zero until the stamp clears the target."""
    nonce = 0
    while _pow_value(content, nonce) >= target:
        nonce += 1
    return nonce


def validate_pow(envelope: Envelope, config: MessagingConfig = DEFAULT_CONFIG) -> bool:
    """Checked before anything else; confirmations are exempt lightweight acks."""
    if is_confirmation(envelope):
        return True
    return _pow_value(envelope.content_bytes(), envelope.pow_nonce) < config.pow_target


def compose(
    sender: crypto.KeyPair,
    kind: Kind,
    recipients: Iterable[bytes],
    payload: bytes,
    now: int,
    public_subtype: PublicSubtype | None = None,
    config: MessagingConfig = DEFAULT_CONFIG,
) -> Envelope:
    if not payload:
        raise MessagingError("payload must not be empty")
    if kind is Kind.PUBLIC:
        if public_subtype is None:
            raise ForbiddenPublicPayload(
                "public messages are limited to bid/ask, payment address, proxy "
                "designation, and passport revocation payloads"
            )
        if recipients:
            raise MessagingError("public messages carry no recipient list")
    elif public_subtype is not None:
        raise MessagingError("only public messages carry a subtype")
    draft = Envelope(
        kind=kind,
        sender_address=sender.address,
        recipients=tuple(recipients),
        payload=payload,
        created_at=now,
        public_subtype=public_subtype,
        pow_nonce=0,
        sender_signature=b"",
        sender_public_key=sender.public_key,
    )
    content = draft.content_bytes()
    nonce = 0 if is_confirmation(draft) else mine_pow(content, config.pow_target)
    signature = crypto.sign(sender.private_key, content)
    return Envelope(
        kind=kind,
        sender_address=sender.address,
        recipients=tuple(recipients),
        payload=payload,
        created_at=now,
        public_subtype=public_subtype,
        pow_nonce=nonce,
        sender_signature=signature,
        sender_public_key=sender.public_key,
    )


def make_confirmation(receiver: crypto.KeyPair, envelope: Envelope, now: int) -> Envelope:
    payload = json.dumps({"confirm": to_hex(envelope.message_id)}).encode()
    return compose(receiver, Kind.DIRECT, [envelope.sender_address], payload, now)


def open_payload(envelope: Envelope, keypair: crypto.KeyPair) -> bytes | None:
    """The sealing contract: only a holder of a recipient's keypair can read
    a direct or group payload; public payloads are cleartext for everyone."""
    if envelope.kind is Kind.PUBLIC:
        return envelope.payload
    derived = crypto.keypair_from_seed(keypair.private_key)
    if derived.public_key != keypair.public_key:
        return None
    if keypair.address not in envelope.recipients:
        return None
    return envelope.payload


# ---------------------------------------------------------------------------
# Retention


class RetentionClass(enum.Enum):
    PRIVATE_TWO_DAY = "PrivateTwoDay"
    POLL_UNTIL_CLOSE = "PollUntilClose"
    ORDER_UNTIL_EXPIRY = "OrderUntilExpiry"
    UNTIL_REVOKED_OR_SUPERSEDED = "UntilRevokedOrSuperseded"
    REVOCATION_PERMANENT = "RevocationPermanent"


def close_date_to_seconds(text: str) -> int:
    """ISO-8601 without zone, read as simulated UTC."""
    stamp = datetime.fromisoformat(text).replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())


def retention_class(envelope: Envelope, cleartext: bytes | None) -> tuple[RetentionClass, int | None]:
    """(class, expiry time or None); a pure function of kind, subtype, and
    payload type, as far as this node can see the payload."""
    if envelope.kind is Kind.PUBLIC:
        subtype = envelope.public_subtype
        if subtype is PublicSubtype.BID_ASK:
            try:
                expiry = int(json.loads(envelope.payload)["offer"]["expiry"])
            except (ValueError, KeyError, TypeError):
                expiry = envelope.created_at + 2 * DAY
            return RetentionClass.ORDER_UNTIL_EXPIRY, expiry
        if subtype is PublicSubtype.PASSPORT_REVOCATION:
            return RetentionClass.REVOCATION_PERMANENT, None
        return RetentionClass.UNTIL_REVOKED_OR_SUPERSEDED, None
    if cleartext is not None and payload_tag(cleartext) == "eqbPoll":
        try:
            close = close_date_to_seconds(json.loads(cleartext)["eqbPoll"]["closeDate"])
        except (ValueError, KeyError, TypeError):
            close = envelope.created_at + 2 * DAY
        return RetentionClass.POLL_UNTIL_CLOSE, close
    return RetentionClass.PRIVATE_TWO_DAY, envelope.created_at + 2 * DAY


# ---------------------------------------------------------------------------
# Node-side store


class DeliveryResult(enum.Enum):
    DECRYPTED_AND_CONFIRMED = "DecryptedAndConfirmed"
    NOT_FOR_ME = "NotForMe"
    BAD_POW = "BadPow"
    BAD_SIGNATURE = "BadSignature"


@dataclass
class StoredMessage:
    envelope: Envelope
    received_at: int
    cleartext: bytes | None
    retention: RetentionClass
    expires_at: int | None


@dataclass
class RebroadcastState:
    message_id: bytes
    recipient: bytes
    attempt: int
    next_at: int


def rebroadcast_time(created_at: int, attempt: int) -> int:
    """Doubling schedule measured from creation: +4d, +8d, +16d, ..."""
    return created_at + (4 * DAY << attempt)


class NodeInbox:
    """One node's message store, outbound tracker, and wallet keys."""

    def __init__(self, keypairs: Iterable[crypto.KeyPair]):
        self.keypairs: dict[bytes, crypto.KeyPair] = {kp.address: kp for kp in keypairs}
        self.stored: dict[bytes, StoredMessage] = {}
        self.sent: dict[bytes, Envelope] = {}
        self.outbound: dict[tuple[bytes, bytes], RebroadcastState] = {}
        self.confirmed: set[tuple[bytes, bytes]] = set()
        self.revocation_watermark: int = -1

    def track_send(self, envelope: Envelope):
        """Start per-recipient delivery tracking for a direct or group send."""
        self.sent[envelope.message_id] = envelope
        if envelope.kind is Kind.PUBLIC or is_confirmation(envelope):
            return
        for recipient in envelope.recipients:
            key = (envelope.message_id, recipient)
            if key not in self.confirmed:
                self.outbound[key] = RebroadcastState(
                    message_id=envelope.message_id,
                    recipient=recipient,
                    attempt=0,
                    next_at=rebroadcast_time(envelope.created_at, 0),
                )

    def decrypt_for_me(self, envelope: Envelope) -> bytes | None:
        if envelope.kind is Kind.PUBLIC:
            return envelope.payload
        for kp in self.keypairs.values():
            opened = open_payload(envelope, kp)
            if opened is not None:
                return opened
        return None


def deliver(
    envelope: Envelope,
    inbox: NodeInbox,
    now: int,
    config: MessagingConfig = DEFAULT_CONFIG,
) -> tuple[DeliveryResult, Envelope | None]:
    """Process one incoming envelope: PoW gate, store, decrypt, confirm.

    Returns the result plus a confirmation envelope to queue, when owed.
    Envelopes failing the PoW or signature check are dropped, never stored
    or relayed.
    """
    if not validate_pow(envelope, config):
        return DeliveryResult.BAD_POW, None
    if not envelope.signature_ok:
        return DeliveryResult.BAD_SIGNATURE, None

    if is_confirmation(envelope):
        if envelope.recipients and envelope.recipients[0] in inbox.keypairs:
            key = (confirmed_message_id(envelope), envelope.sender_address)
            inbox.confirmed.add(key)
            inbox.outbound.pop(key, None)
        return DeliveryResult.NOT_FOR_ME, None

    cleartext = inbox.decrypt_for_me(envelope)
    if envelope.message_id not in inbox.stored:
        rclass, expires = retention_class(envelope, cleartext)
        inbox.stored[envelope.message_id] = StoredMessage(
            envelope=envelope,
            received_at=now,
            cleartext=cleartext,
            retention=rclass,
            expires_at=expires,
        )
    if envelope.kind is Kind.PUBLIC:
        if envelope.public_subtype is PublicSubtype.PASSPORT_REVOCATION:
            try:
                revoked_at = int(json.loads(envelope.payload)["passportRevocation"]["revoked_at"])
                inbox.revocation_watermark = max(inbox.revocation_watermark, revoked_at)
            except (ValueError, KeyError, TypeError):
                pass
        return DeliveryResult.NOT_FOR_ME, None
    if cleartext is None:
        return DeliveryResult.NOT_FOR_ME, None
    receiver = next(
        kp for kp in inbox.keypairs.values() if kp.address in envelope.recipients
    )
    confirmation = make_confirmation(receiver, envelope, now)
    return DeliveryResult.DECRYPTED_AND_CONFIRMED, confirmation


def _supersession_victims(inbox: NodeInbox) -> set[bytes]:
    """Older payment-address or proxy designations replaced by later ones."""
    newest: dict[tuple, tuple[int, str, bytes]] = {}
    victims: set[bytes] = set()
    for mid, item in inbox.stored.items():
        if item.retention is not RetentionClass.UNTIL_REVOKED_OR_SUPERSEDED:
            continue
        try:
            doc = json.loads(item.envelope.payload)
        except ValueError:
            continue
        if "paymentAddress" in doc:
            record = doc["paymentAddress"]
            key = ("pay", record["owner"], record["currency"])
        elif "proxyDesignation" in doc:
            record = doc["proxyDesignation"]
            key = ("proxy", record["grantor"], record["proxy"], record["scope"], record.get("scope_arg"))
        else:
            continue
        rank = (int(record["designated_at"]), to_hex(mid), mid)
        held = newest.get(key)
        if held is None:
            newest[key] = rank
        elif rank[:2] > held[:2]:
            victims.add(held[2])
            newest[key] = rank
        else:
            victims.add(mid)
    return victims


def retention_gc(inbox: NodeInbox, now: int) -> list[bytes]:
    """Delete per retention class; returns the expired message ids."""
    expired = [
        mid
        for mid, item in inbox.stored.items()
        if item.expires_at is not None and now > item.expires_at
    ]
    expired.extend(_supersession_victims(inbox))
    for mid in expired:
        inbox.stored.pop(mid, None)
    return expired


def rebroadcast_tick(inbox: NodeInbox, now: int) -> list[Envelope]:
    """Envelopes due for another send; advances each backoff state."""
    due = []
    for key, state in sorted(inbox.outbound.items(), key=lambda kv: to_hex(kv[0][0]) + to_hex(kv[0][1])):
        if key in inbox.confirmed:
            continue
        if state.next_at <= now:
            due.append(inbox.sent[state.message_id])
            state.attempt += 1
            state.next_at = rebroadcast_time(
                inbox.sent[state.message_id].created_at, state.attempt
            )
    # The same envelope may be due for several recipients; send once.
    unique = []
    seen = set()
    for env in due:
        if env.message_id not in seen:
            seen.add(env.message_id)
            unique.append(env)
    return unique


def rejoin_sync(inbox: NodeInbox, peers: list[NodeInbox], now: int) -> list[Envelope]:
    """Catch up from the first peer: the live public set (revocations past the
    watermark), plus retained direct and group traffic addressed to this node."""
    if not peers:
        raise NoPeers("no online peer to sync from")
    peer = peers[0]
    mine = set(inbox.keypairs)
    collected: list[Envelope] = []
    for item in sorted(peer.stored.values(), key=lambda it: to_hex(it.envelope.message_id)):
        env = item.envelope
        if item.expires_at is not None and now > item.expires_at:
            continue  # never transfer expired envelopes
        if env.message_id in inbox.stored:
            continue
        if env.kind is Kind.PUBLIC:
            if env.public_subtype is PublicSubtype.PASSPORT_REVOCATION:
                try:
                    revoked_at = int(json.loads(env.payload)["passportRevocation"]["revoked_at"])
                except (ValueError, KeyError, TypeError):
                    revoked_at = None
                if revoked_at is not None and revoked_at <= inbox.revocation_watermark:
                    continue
            collected.append(env)
        elif mine & set(env.recipients):
            collected.append(env)
    return collected
