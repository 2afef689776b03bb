"""Off-chain bid/ask lifecycle over public messages.

Offers broadcast to everyone; counters travel privately between maker and
responder and never touch the public book. A taker settles by opening an
atomic swap session, so the chain records sales and ownership while the
book itself stays entirely off-chain. Prices are integer ratios (payment
units per equity unit) and an offer's total must settle integrally.

There is no matching engine: trades are negotiated bilaterally and takers
pick offers explicitly. An offer leaves the book only by expiring.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

from . import crypto, ledger, messaging, passport as passport_mod, swap
from .canonical import canon_bytes, from_hex, to_hex
from .errors import EquibitError


class OrderBookError(EquibitError):
    pass


class InvalidTerms(OrderBookError):
    pass


class OfferExpired(OrderBookError):
    pass


class BuyerNotQualified(OrderBookError):
    pass


class UnknownOffer(OrderBookError):
    pass


@dataclass(frozen=True)
class Offer:
    side: str  # "bid" buys equity, "ask" sells it
    issuer_address: bytes
    security_name: str
    quantity: int
    price_num: int  # payment units per equity unit, as a ratio
    price_den: int
    maker_address: bytes
    created_at: int
    expiry: int
    maker_public_key: bytes
    signature: bytes

    def _payload(self) -> bytes:
        return canon_bytes(
            {
                "side": self.side,
                "issuer": to_hex(self.issuer_address),
                "security": self.security_name,
                "quantity": self.quantity,
                "price_num": self.price_num,
                "price_den": self.price_den,
                "maker": to_hex(self.maker_address),
                "created_at": self.created_at,
                "expiry": self.expiry,
            }
        )

    @cached_property
    def offer_id(self) -> bytes:
        return crypto.hash_bytes(self._payload())

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.maker_public_key) != self.maker_address:
            return False
        return crypto.verify(self.maker_public_key, self._payload(), self.signature)

    def signature_valid(self) -> bool:
        return self._signature_ok

    @property
    def payment_total(self) -> int:
        return self.quantity * self.price_num // self.price_den

    def live(self, now: int) -> bool:
        return now < self.expiry

    def to_json(self) -> dict:
        return {
            "side": self.side,
            "issuer": to_hex(self.issuer_address),
            "security": self.security_name,
            "quantity": self.quantity,
            "price_num": self.price_num,
            "price_den": self.price_den,
            "maker": to_hex(self.maker_address),
            "created_at": self.created_at,
            "expiry": self.expiry,
            "maker_public_key": to_hex(self.maker_public_key),
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Offer":
        return cls(
            side=doc["side"],
            issuer_address=from_hex(doc["issuer"]),
            security_name=doc["security"],
            quantity=int(doc["quantity"]),
            price_num=int(doc["price_num"]),
            price_den=int(doc["price_den"]),
            maker_address=from_hex(doc["maker"]),
            created_at=int(doc["created_at"]),
            expiry=int(doc["expiry"]),
            maker_public_key=from_hex(doc["maker_public_key"]),
            signature=from_hex(doc["signature"]),
        )


def make_offer(
    maker: crypto.KeyPair,
    side: str,
    issuer_address: bytes,
    security_name: str,
    quantity: int,
    price_num: int,
    price_den: int,
    expiry: int,
    now: int,
) -> Offer:
    if side not in ("bid", "ask"):
        raise InvalidTerms(f"side must be bid or ask, got {side!r}")
    if quantity <= 0:
        raise InvalidTerms("quantity must be positive")
    if price_num < 0 or price_den <= 0:
        raise InvalidTerms("price must be a non-negative ratio")
    if expiry <= now:
        raise InvalidTerms("expiry must be in the future")
    if (quantity * price_num) % price_den != 0:
        raise InvalidTerms("offer total does not settle to whole payment units")
    draft = Offer(
        side=side,
        issuer_address=issuer_address,
        security_name=security_name,
        quantity=quantity,
        price_num=price_num,
        price_den=price_den,
        maker_address=maker.address,
        created_at=now,
        expiry=expiry,
        maker_public_key=maker.public_key,
        signature=b"",
    )
    return dataclasses.replace(draft, signature=crypto.sign(maker.private_key, draft._payload()))


def offer_envelope(
    offer: Offer,
    maker: crypto.KeyPair,
    config: messaging.MessagingConfig = messaging.DEFAULT_CONFIG,
) -> messaging.Envelope:
    payload = json.dumps({"offer": offer.to_json()}).encode()
    return messaging.compose(
        maker,
        messaging.Kind.PUBLIC,
        [],
        payload,
        offer.created_at,
        public_subtype=messaging.PublicSubtype.BID_ASK,
        config=config,
    )


def offer_from_envelope(envelope: messaging.Envelope) -> Offer | None:
    if envelope.public_subtype is not messaging.PublicSubtype.BID_ASK:
        return None
    try:
        return Offer.from_json(json.loads(envelope.payload)["offer"])
    except (ValueError, KeyError, TypeError):
        return None


def counter_offer(
    responder: crypto.KeyPair,
    offer: Offer,
    price_num: int,
    price_den: int,
    now: int,
    config: messaging.MessagingConfig = messaging.DEFAULT_CONFIG,
) -> messaging.Envelope:
    """A private counter to the maker; counters never enter the public book."""
    if not offer.live(now):
        raise OfferExpired(f"offer {to_hex(offer.offer_id)[:16]} expired at {offer.expiry}")
    if price_den <= 0 or price_num < 0 or (offer.quantity * price_num) % price_den != 0:
        raise InvalidTerms("countered price does not settle to whole payment units")
    payload = json.dumps(
        {
            "counterOffer": {
                "offer_id": to_hex(offer.offer_id),
                "price_num": price_num,
                "price_den": price_den,
                "responder": to_hex(responder.address),
                "sent_at": now,
            }
        }
    ).encode()
    return messaging.compose(
        responder, messaging.Kind.DIRECT, [offer.maker_address], payload, now, config=config
    )


def find_issuance(
    state: ledger.ChainState, issuer_address: bytes, security_name: str
) -> ledger.IssuerInfo | None:
    """The on-chain annotation for an issuance, if it was ever authorized."""
    for _, tx in state.tx_lookup.values():
        for out in tx.outputs:
            info = out.issuer_info
            if info is not None and info.issuance_key == (issuer_address, security_name):
                return info
    return None


def verify_offer(offer: Offer, state: ledger.ChainState) -> bool:
    """Offers are not chain-validated on ingestion; inspections use this to
    flag offers for issuances that do not exist on chain."""
    return find_issuance(state, offer.issuer_address, offer.security_name) is not None


class OrderBook:
    """One node's view of the public book plus its local trade log."""

    def __init__(self):
        self.offers: dict[bytes, Offer] = {}
        self.offers_seen: list[bytes] = []
        self.settlements: list[dict] = []
        self.taken: set[bytes] = set()

    def ingest(self, offer: Offer, now: int) -> bool:
        if not offer.signature_valid() or not offer.live(now):
            return False
        if offer.offer_id in self.offers:
            return False
        self.offers[offer.offer_id] = offer
        self.offers_seen.append(offer.offer_id)
        return True

    def get(self, offer_id: bytes) -> Offer:
        offer = self.offers.get(offer_id)
        if offer is None:
            raise UnknownOffer(to_hex(offer_id)[:16])
        return offer

    def live_offers(self, now: int, include_taken: bool = True) -> list[Offer]:
        """Unexpired offers; ``include_taken=False`` hides ones this node
        already settled, a local marking that never leaves the node."""
        return sorted(
            (
                o
                for o in self.offers.values()
                if o.live(now) and (include_taken or o.offer_id not in self.taken)
            ),
            key=lambda o: (o.created_at, to_hex(o.offer_id)),
        )

    def gc(self, now: int) -> list[bytes]:
        expired = [oid for oid, o in self.offers.items() if not o.live(now)]
        for oid in expired:
            del self.offers[oid]
        return expired

    def mark_taken(self, offer_id: bytes):
        self.taken.add(offer_id)

    def record_settlement(self, offer: Offer, session: swap.SwapSession):
        self.settlements.append(
            {
                "offer_id": to_hex(offer.offer_id),
                "security": offer.security_name,
                "quantity": offer.quantity,
                "payment": offer.payment_total,
                "session": session.session_id,
            }
        )

    def snapshot_json(self, now: int) -> list[dict]:
        return [o.to_json() for o in self.live_offers(now)]

    def compile_history(self) -> dict:
        """Everything this node ever saw or settled, never chain-recorded."""
        return {
            "offers_seen": [to_hex(oid) for oid in self.offers_seen],
            "trades_settled": list(self.settlements),
        }


def initiate_trade(
    taker: crypto.KeyPair,
    maker: crypto.KeyPair,
    offer: Offer,
    equibit_state: ledger.ChainState,
    directory: passport_mod.PassportDirectory,
    now: int,
    seed: bytes,
    swap_config: swap.SwapConfig | None = None,
    price_num: int | None = None,
    price_den: int | None = None,
    buyer_passports: tuple[passport_mod.TrustEdge, ...] = (),
) -> swap.SwapSession:
    """Open a settlement session for an offer, optionally at countered terms.

    For an ask the maker sells and the taker buys; for a bid the roles flip.
    Restricted issuances require the buyer to qualify before the session
    opens ("validate the buyer's credentials").
    """
    if not offer.live(now):
        raise OfferExpired(f"offer expired at {offer.expiry}")
    issuance = find_issuance(equibit_state, offer.issuer_address, offer.security_name)
    if issuance is None:
        raise InvalidTerms("offer names an issuance that does not exist on chain")
    if offer.side == "ask":
        buyer, seller = taker, maker
    else:
        buyer, seller = maker, taker
    if issuance.restriction_level > 0:
        effective = directory.with_edges(buyer_passports)
        verdict = passport_mod.validate_transfer(
            issuance.restriction_level,
            issuance.issuer_address,
            {seller.address},
            buyer.address,
            effective,
            now,
        )
        if not verdict:
            raise BuyerNotQualified(verdict.detail)
    num = offer.price_num if price_num is None else price_num
    den = offer.price_den if price_den is None else price_den
    if (offer.quantity * num) % den != 0:
        raise InvalidTerms("countered price does not settle to whole payment units")
    terms = swap.SwapTerms(
        payment_amount=offer.quantity * num // den,
        equibit_amount=offer.quantity,
        issuance=issuance,
    )
    return swap.open_session(
        session_id=f"trade-{to_hex(offer.offer_id)[:16]}",
        buyer=buyer,
        seller=seller,
        terms=terms,
        now=now,
        seed=seed,
        config=swap_config,
        buyer_passports=buyer_passports,
    )
