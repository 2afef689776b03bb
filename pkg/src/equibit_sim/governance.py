"""Earnings distributions, payment addresses, polls, proxies, tabulation.

Dividends snapshot holders at a record date from the chain alone, then split
the gross amount pro rata by largest remainder (ties to the lowest address)
so every node computes the identical integer allocation. Holders without a
registered payment address are withheld and reported.

Polls travel as group messages in a fixed JSON shape under the root key
"eqbPoll"; replies are ballots signed by their caster. An investor may
designate proxies in three scopes. At tabulation exactly one ballot counts
per investor, chosen by authority: the investor's own vote, then a proxy
for the specific poll, then one for the specific issuer, then a general
proxy. Every other ballot stays in the audit record.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from . import crypto, ledger, messaging
from .canonical import canon_bytes, from_hex, to_hex
from .errors import EquibitError


class GovernanceError(EquibitError):
    pass


class MalformedPoll(GovernanceError):
    pass


class PollStillOpen(GovernanceError):
    pass


class EmptySnapshot(GovernanceError):
    pass


class UnknownIssuance(GovernanceError):
    pass


# ---------------------------------------------------------------------------
# Payment addresses


@dataclass(frozen=True)
class PaymentAddressRecord:
    owner_address: bytes
    currency: str
    payment_address: bytes
    designated_at: int
    owner_public_key: bytes
    signature: bytes

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.owner_public_key) != self.owner_address:
            return False
        return crypto.verify(self.owner_public_key, self._payload(), self.signature)

    def signature_valid(self) -> bool:
        return self._signature_ok

    def _payload(self) -> bytes:
        return canon_bytes(
            {
                "owner": to_hex(self.owner_address),
                "currency": self.currency,
                "payment_address": to_hex(self.payment_address),
                "designated_at": self.designated_at,
            }
        )

    def to_json(self) -> dict:
        return {
            "owner": to_hex(self.owner_address),
            "currency": self.currency,
            "payment_address": to_hex(self.payment_address),
            "designated_at": self.designated_at,
            "owner_public_key": to_hex(self.owner_public_key),
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "PaymentAddressRecord":
        return cls(
            owner_address=from_hex(doc["owner"]),
            currency=doc["currency"],
            payment_address=from_hex(doc["payment_address"]),
            designated_at=int(doc["designated_at"]),
            owner_public_key=from_hex(doc["owner_public_key"]),
            signature=from_hex(doc["signature"]),
        )


def designate_payment_address(
    owner: crypto.KeyPair, currency: str, payment_address: bytes, now: int
) -> PaymentAddressRecord:
    draft = PaymentAddressRecord(
        owner_address=owner.address,
        currency=currency,
        payment_address=payment_address,
        designated_at=now,
        owner_public_key=owner.public_key,
        signature=b"",
    )
    return PaymentAddressRecord(
        owner_address=owner.address,
        currency=currency,
        payment_address=payment_address,
        designated_at=now,
        owner_public_key=owner.public_key,
        signature=crypto.sign(owner.private_key, draft._payload()),
    )


# ---------------------------------------------------------------------------
# Proxies


class ProxyScope(str, enum.Enum):
    GENERAL = "general"
    SPECIFIC_ISSUER = "specific_issuer"
    SPECIFIC_POLL = "specific_poll"


PROXY_AUTHORITY = {
    ProxyScope.SPECIFIC_POLL: 3,
    ProxyScope.SPECIFIC_ISSUER: 2,
    ProxyScope.GENERAL: 1,
}
SELF_AUTHORITY = 4


@dataclass(frozen=True)
class ProxyDesignation:
    grantor_address: bytes
    proxy_address: bytes
    scope: ProxyScope
    scope_arg: str | None
    designated_at: int
    grantor_public_key: bytes
    signature: bytes

    def _payload(self) -> bytes:
        return canon_bytes(
            {
                "grantor": to_hex(self.grantor_address),
                "proxy": to_hex(self.proxy_address),
                "scope": self.scope.value,
                "scope_arg": self.scope_arg,
                "designated_at": self.designated_at,
            }
        )

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.grantor_public_key) != self.grantor_address:
            return False
        return crypto.verify(self.grantor_public_key, self._payload(), self.signature)

    def signature_valid(self) -> bool:
        return self._signature_ok

    def covers(self, poll: "Poll") -> bool:
        if self.scope is ProxyScope.GENERAL:
            return True
        if self.scope is ProxyScope.SPECIFIC_ISSUER:
            return self.scope_arg == poll.issuer_id
        return self.scope_arg == poll.poll_guid

    @property
    def authority(self) -> int:
        return PROXY_AUTHORITY[self.scope]

    def to_json(self) -> dict:
        return {
            "grantor": to_hex(self.grantor_address),
            "proxy": to_hex(self.proxy_address),
            "scope": self.scope.value,
            "scope_arg": self.scope_arg,
            "designated_at": self.designated_at,
            "grantor_public_key": to_hex(self.grantor_public_key),
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ProxyDesignation":
        return cls(
            grantor_address=from_hex(doc["grantor"]),
            proxy_address=from_hex(doc["proxy"]),
            scope=ProxyScope(doc["scope"]),
            scope_arg=doc["scope_arg"],
            designated_at=int(doc["designated_at"]),
            grantor_public_key=from_hex(doc["grantor_public_key"]),
            signature=from_hex(doc["signature"]),
        )


def designate_proxy(
    grantor: crypto.KeyPair,
    proxy_address: bytes,
    scope: ProxyScope,
    now: int,
    scope_arg: str | None = None,
) -> ProxyDesignation:
    if scope is not ProxyScope.GENERAL and not scope_arg:
        raise GovernanceError(f"scope {scope.value} needs a target")
    draft = ProxyDesignation(
        grantor_address=grantor.address,
        proxy_address=proxy_address,
        scope=scope,
        scope_arg=scope_arg if scope is not ProxyScope.GENERAL else None,
        designated_at=now,
        grantor_public_key=grantor.public_key,
        signature=b"",
    )
    return ProxyDesignation(
        grantor_address=draft.grantor_address,
        proxy_address=draft.proxy_address,
        scope=draft.scope,
        scope_arg=draft.scope_arg,
        designated_at=now,
        grantor_public_key=grantor.public_key,
        signature=crypto.sign(grantor.private_key, draft._payload()),
    )


class Registry:
    """Per-node registry of payment addresses and live proxy designations."""

    def __init__(self):
        self.payment_addresses: dict[tuple[str, str], PaymentAddressRecord] = {}
        self.proxies: dict[tuple, ProxyDesignation] = {}

    def ingest_payment_address(self, record: PaymentAddressRecord) -> bool:
        if not record.signature_valid():
            return False
        key = (to_hex(record.owner_address), record.currency)
        held = self.payment_addresses.get(key)
        if held is None or record.designated_at > held.designated_at:
            self.payment_addresses[key] = record  # later-signed record supersedes
            return True
        return False

    def ingest_proxy(self, designation: ProxyDesignation) -> bool:
        if not designation.signature_valid():
            return False
        key = (
            to_hex(designation.grantor_address),
            to_hex(designation.proxy_address),
            designation.scope.value,
            designation.scope_arg,
        )
        held = self.proxies.get(key)
        if held is None or designation.designated_at > held.designated_at:
            self.proxies[key] = designation
            return True
        return False

    def payment_address_for(self, owner_address: bytes, currency: str) -> PaymentAddressRecord | None:
        return self.payment_addresses.get((to_hex(owner_address), currency))

    def proxies_for(self, grantor_address: bytes) -> list[ProxyDesignation]:
        return sorted(
            (d for d in self.proxies.values() if d.grantor_address == grantor_address),
            key=lambda d: (d.designated_at, to_hex(d.proxy_address)),
        )

    def to_json(self) -> dict:
        return {
            "payment_addresses": [
                self.payment_addresses[k].to_json() for k in sorted(self.payment_addresses)
            ],
            "proxies": [self.proxies[k].to_json() for k in sorted(self.proxies, key=str)],
        }


# ---------------------------------------------------------------------------
# Record-date snapshots and dividend allocation


def snapshot_holders(
    state: ledger.ChainState, issuer_address: bytes, security_name: str, record_datetime: int
) -> dict[bytes, int]:
    """Authentic holdings of one issuance as of the last block at or before
    the record date. The issuer's own retained units count; they hold too."""
    if record_datetime > state.tip.timestamp:
        raise GovernanceError("record date is past the chain tip")
    cut = 0
    for i, block in enumerate(state.blocks):
        if block.timestamp <= record_datetime:
            cut = i
    as_of = ledger.ChainState.genesis(state.config, timestamp=state.blocks[0].timestamp)
    for block in state.blocks[1 : cut + 1]:
        as_of = ledger.connect_block(as_of, block, validate=False)
    issuance_key = (issuer_address, security_name)
    known = any(
        out.issuer_info is not None and out.issuer_info.issuance_key == issuance_key
        for _, tx in as_of.tx_lookup.values()
        for out in tx.outputs
    )
    if not known:
        raise UnknownIssuance(f"no issuance {security_name!r} by {to_hex(issuer_address)[:16]}")
    holdings: dict[bytes, int] = {}
    for outpoint, out in as_of.utxo.items():
        info = out.issuer_info
        if info is None or info.issuance_key != issuance_key:
            continue
        if ledger.verify_authenticity(outpoint, as_of) is not ledger.Authenticity.AUTHENTIC:
            continue
        holdings[out.owner_address] = holdings.get(out.owner_address, 0) + out.amount
    return holdings


@dataclass(frozen=True)
class DistributionPlan:
    issuer_address: bytes
    security_name: str
    record_datetime: int
    gross_amount: int
    currency: str = "PAY"

    def __post_init__(self):
        if self.gross_amount <= 0:
            raise GovernanceError("gross amount must be positive")


@dataclass(frozen=True)
class DividendAllocation:
    paid: tuple[tuple[bytes, bytes, int], ...]  # (holder, payment address, amount)
    withheld: tuple[tuple[bytes, int], ...]  # (holder, amount)

    @property
    def total_paid(self) -> int:
        return sum(a for _, _, a in self.paid)

    @property
    def total_withheld(self) -> int:
        return sum(a for _, a in self.withheld)


def largest_remainder_split(gross: int, holdings: Mapping[bytes, int]) -> dict[bytes, int]:
    """Integer pro-rata split: floor everyone, then hand the leftover units to
    the largest remainders, ties to the ascending address."""
    total_units = sum(holdings.values())
    shares = {}
    remainders = []
    for address in sorted(holdings):
        units = holdings[address]
        shares[address] = gross * units // total_units
        remainders.append((-(gross * units % total_units), address))
    leftover = gross - sum(shares.values())
    for _, address in sorted(remainders)[:leftover]:
        shares[address] += 1
    return shares


def allocate_dividend(
    plan: DistributionPlan, snapshot: Mapping[bytes, int], registry: Registry
) -> DividendAllocation:
    if not snapshot or sum(snapshot.values()) <= 0:
        raise EmptySnapshot("no holders at the record date")
    shares = largest_remainder_split(plan.gross_amount, snapshot)
    paid = []
    withheld = []
    for address in sorted(shares):
        amount = shares[address]
        if amount == 0:
            continue
        record = registry.payment_address_for(address, plan.currency)
        if record is None:
            withheld.append((address, amount))
        else:
            paid.append((address, record.payment_address, amount))
    return DividendAllocation(paid=tuple(paid), withheld=tuple(withheld))


# ---------------------------------------------------------------------------
# Polls


@dataclass(frozen=True)
class PollAnswer:
    text: str
    value: str = "0"


@dataclass(frozen=True)
class PollQuestion:
    text: str
    multiple_choice: bool
    answers: tuple[PollAnswer, ...]


@dataclass(frozen=True)
class Poll:
    poll_guid: str
    issuer_id: str
    description: str
    close_poll: str
    close_date: str
    questions: tuple[PollQuestion, ...]

    @property
    def close_seconds(self) -> int:
        return messaging.close_date_to_seconds(self.close_date)


_TRAILING_COMMAS = re.compile(r",(\s*[}\]])")


def _as_list(node) -> list:
    return node if isinstance(node, list) else [node]


def parse_poll(text: str | bytes) -> Poll:
    """Parse the wire shape, tolerating trailing commas inside objects."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(_TRAILING_COMMAS.sub(r"\1", text))
    except ValueError as exc:
        raise MalformedPoll(f"not JSON: {exc}") from exc
    if not isinstance(doc, Mapping) or "eqbPoll" not in doc:
        raise MalformedPoll('missing the "eqbPoll" root key')
    body = doc["eqbPoll"]
    try:
        questions = []
        for q in _as_list(body["questions"]["question"]):
            answers = tuple(
                PollAnswer(text=a["text"], value=str(a.get("value", "0")))
                for a in _as_list(q["answers"]["answer"])
            )
            questions.append(
                PollQuestion(
                    text=q["text"],
                    multiple_choice=str(q.get("multipleChoice", "no")).lower() == "yes",
                    answers=answers,
                )
            )
        poll = Poll(
            poll_guid=str(body["pollGUID"]),
            issuer_id=str(body["issuerID"]),
            description=str(body["description"]),
            close_poll=str(body.get("closePoll", "yes")),
            close_date=str(body["closeDate"]),
            questions=tuple(questions),
        )
    except (KeyError, TypeError) as exc:
        raise MalformedPoll(f"bad poll shape: {exc}") from exc
    validate_poll(poll)
    return poll


def validate_poll(poll: Poll):
    if not poll.questions:
        raise MalformedPoll("a poll needs at least one question")
    for q in poll.questions:
        if len(q.answers) < 2:
            raise MalformedPoll("every question needs at least two answers")
    try:
        poll.close_seconds
    except ValueError as exc:
        raise MalformedPoll(f"bad closeDate: {exc}") from exc


def serialize_poll(poll: Poll) -> str:
    def answer_doc(a: PollAnswer) -> dict:
        return {"text": a.text, "value": a.value}

    def question_doc(q: PollQuestion) -> dict:
        return {
            "text": q.text,
            "multipleChoice": "yes" if q.multiple_choice else "no",
            "answers": {"answer": [answer_doc(a) for a in q.answers]},
        }

    questions = [question_doc(q) for q in poll.questions]
    doc = {
        "eqbPoll": {
            "pollGUID": poll.poll_guid,
            "issuerID": poll.issuer_id,
            "description": poll.description,
            "closePoll": poll.close_poll,
            "closeDate": poll.close_date,
            "questions": {"question": questions[0] if len(questions) == 1 else questions},
        }
    }
    return json.dumps(doc, indent=2)


def poll_recipients(poll: Poll, holders: Iterable[bytes], registry: Registry) -> tuple[bytes, ...]:
    """Holders plus every live proxy whose scope covers this poll."""
    recipients = set(holders)
    for holder in list(recipients):
        for designation in registry.proxies_for(holder):
            if designation.covers(poll):
                recipients.add(designation.proxy_address)
    return tuple(sorted(recipients))


def create_poll(
    issuer: crypto.KeyPair,
    poll: Poll,
    holders: Iterable[bytes],
    registry: Registry,
    now: int,
    config: messaging.MessagingConfig = messaging.DEFAULT_CONFIG,
) -> messaging.Envelope:
    """Seal the poll to all current holders and their routed proxies."""
    validate_poll(poll)
    if poll.close_seconds <= now:
        raise MalformedPoll("closeDate must be in the future at creation")
    recipients = poll_recipients(poll, holders, registry)
    if not recipients:
        raise GovernanceError("a poll needs at least one recipient")
    payload = serialize_poll(poll).encode("utf-8")
    return messaging.compose(
        issuer, messaging.Kind.GROUP, recipients, payload, now, config=config
    )


# ---------------------------------------------------------------------------
# Ballots and tabulation


@dataclass(frozen=True)
class Ballot:
    poll_guid: str
    voter_address: bytes
    caster_address: bytes
    answers: tuple[int, ...]  # chosen answer index per question
    cast_at: int
    caster_public_key: bytes
    signature: bytes

    def _payload(self) -> bytes:
        return canon_bytes(
            {
                "pollGUID": self.poll_guid,
                "voter": to_hex(self.voter_address),
                "caster": to_hex(self.caster_address),
                "answers": list(self.answers),
                "cast_at": self.cast_at,
            }
        )

    @cached_property
    def _signature_ok(self) -> bool:
        if crypto.address_of(self.caster_public_key) != self.caster_address:
            return False
        return crypto.verify(self.caster_public_key, self._payload(), self.signature)

    def signature_valid(self) -> bool:
        return self._signature_ok

    def to_json(self) -> dict:
        return {
            "pollGUID": self.poll_guid,
            "voter": to_hex(self.voter_address),
            "caster": to_hex(self.caster_address),
            "answers": list(self.answers),
            "cast_at": self.cast_at,
            "caster_public_key": to_hex(self.caster_public_key),
            "signature": to_hex(self.signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Ballot":
        return cls(
            poll_guid=doc["pollGUID"],
            voter_address=from_hex(doc["voter"]),
            caster_address=from_hex(doc["caster"]),
            answers=tuple(int(a) for a in doc["answers"]),
            cast_at=int(doc["cast_at"]),
            caster_public_key=from_hex(doc["caster_public_key"]),
            signature=from_hex(doc["signature"]),
        )


def cast_ballot(
    caster: crypto.KeyPair,
    poll: Poll,
    voter_address: bytes,
    answers: Sequence[int],
    now: int,
) -> Ballot:
    draft = Ballot(
        poll_guid=poll.poll_guid,
        voter_address=voter_address,
        caster_address=caster.address,
        answers=tuple(answers),
        cast_at=now,
        caster_public_key=caster.public_key,
        signature=b"",
    )
    return Ballot(
        poll_guid=draft.poll_guid,
        voter_address=voter_address,
        caster_address=caster.address,
        answers=draft.answers,
        cast_at=now,
        caster_public_key=caster.public_key,
        signature=crypto.sign(caster.private_key, draft._payload()),
    )


@dataclass(frozen=True)
class AuditEntry:
    ballot: Ballot
    status: str  # counted | overridden | replaced | rejected:<why>
    authority: int | None

    def to_json(self) -> dict:
        return {
            "ballot": self.ballot.to_json(),
            "status": self.status,
            "authority": self.authority,
        }


@dataclass(frozen=True)
class TabulationResult:
    totals: tuple[tuple[int, ...], ...]  # per question, per answer, in units
    counted_weight: int
    audit: tuple[AuditEntry, ...]

    def to_json(self) -> dict:
        return {
            "totals": [list(t) for t in self.totals],
            "counted_weight": self.counted_weight,
            "audit": [entry.to_json() for entry in self.audit],
        }


def _ballot_authority(
    ballot: Ballot, designations: Sequence[ProxyDesignation], poll: Poll
) -> tuple[int, int] | None:
    """(authority, designation time) of the strongest designation backing the
    caster, or the self rank; None when the caster has no standing."""
    if ballot.caster_address == ballot.voter_address:
        return (SELF_AUTHORITY, 2**63)
    backing = [
        d
        for d in designations
        if d.grantor_address == ballot.voter_address
        and d.proxy_address == ballot.caster_address
        and d.signature_valid()
        and d.covers(poll)
    ]
    if not backing:
        return None
    best = max(backing, key=lambda d: (d.authority, d.designated_at))
    return (best.authority, best.designated_at)


def tabulate(
    poll: Poll,
    ballots: Sequence[Ballot],
    designations: Sequence[ProxyDesignation],
    snapshot: Mapping[bytes, int],
    now: int,
) -> TabulationResult:
    """Count one ballot per investor by authority; audit everything else."""
    close = poll.close_seconds
    if now < close:
        raise PollStillOpen(f"poll closes at {close}")

    statuses: dict[int, tuple[str, int | None]] = {}
    valid: dict[int, tuple[tuple[int, int], Ballot]] = {}
    latest_by_caster: dict[tuple[bytes, bytes], int] = {}

    def reject(index: int, why: str):
        statuses[index] = (f"rejected:{why}", None)

    for index, ballot in enumerate(ballots):
        if ballot.poll_guid != poll.poll_guid:
            reject(index, "wrong_poll")
            continue
        if not ballot.signature_valid():
            reject(index, "bad_signature")
            continue
        if ballot.cast_at >= close:
            reject(index, "late")
            continue
        if len(ballot.answers) != len(poll.questions) or any(
            not (0 <= a < len(q.answers)) for a, q in zip(ballot.answers, poll.questions)
        ):
            reject(index, "malformed_answers")
            continue
        rank = _ballot_authority(ballot, designations, poll)
        if rank is None:
            reject(index, "not_designated")
            continue
        if ballot.voter_address not in snapshot:
            reject(index, "not_a_holder")
            continue
        valid[index] = (rank, ballot)
        # A later ballot from the same caster for the same poll supersedes
        # their earlier one.
        key = (ballot.caster_address, ballot.voter_address)
        held = latest_by_caster.get(key)
        if held is None or (ballots[held].cast_at, held) < (ballot.cast_at, index):
            latest_by_caster[key] = index

    candidates: dict[bytes, list[tuple[tuple[int, int], int, Ballot]]] = {}
    for index, (rank, ballot) in valid.items():
        if latest_by_caster[(ballot.caster_address, ballot.voter_address)] != index:
            statuses[index] = ("replaced", rank[0])
            continue
        statuses[index] = ("candidate", rank[0])
        candidates.setdefault(ballot.voter_address, []).append((rank, index, ballot))

    totals = [[0] * len(q.answers) for q in poll.questions]
    counted_weight = 0
    for voter, entries in candidates.items():
        # Highest authority, then the latest designation, then the lowest
        # caster address wins; everything else is overridden.
        entries.sort(key=lambda e: (-e[0][0], -e[0][1], to_hex(e[2].caster_address)))
        winner_rank, winner_index, winner = entries[0]
        weight = snapshot[voter]
        counted_weight += weight
        for q_index, answer in enumerate(winner.answers):
            totals[q_index][answer] += weight
        statuses[winner_index] = ("counted", winner_rank[0])
        for _, index, _ in entries[1:]:
            if statuses[index][0] == "candidate":
                statuses[index] = ("overridden", statuses[index][1])

    audit = tuple(
        AuditEntry(ballot=ballots[i], status=statuses[i][0], authority=statuses[i][1])
        for i in range(len(ballots))
    )
    return TabulationResult(
        totals=tuple(tuple(row) for row in totals),
        counted_weight=counted_weight,
        audit=audit,
    )
