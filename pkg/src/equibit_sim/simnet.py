"""Deterministic discrete-event harness driving every protocol layer.

A scenario is a seed, a config, and a time-ordered event script. The world
holds one equity chain, one payment chain, and a set of nodes, each with
its own message store, order book, registry, and passport directory. Ticks
process in a fixed phase order: deliver queued envelopes, run scripted
actions and pump open swap sessions, produce blocks from the mempools,
collect retention garbage, then rebroadcast unconfirmed mail. Broadcast
latency is one tick.

The same (seed, script, config) always yields a byte-identical transcript;
its digest is the scenario's fingerprint. Offline nodes receive nothing,
and their state is fingerprinted while away to prove no hidden channel
touched them; rejoining triggers a peer sync.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable, Mapping

from . import crypto, governance, ledger, messaging, orderbook, passport as passport_mod, swap
from .canonical import DAY, canon_bytes, from_hex, to_hex
from .errors import EquibitError, InvariantViolation, ScriptError


def iso_from_seconds(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


@dataclass(frozen=True)
class SimConfig:
    node_ids: tuple[str, ...]
    equibit: ledger.ChainConfig = ledger.ChainConfig()
    payment: ledger.ChainConfig = ledger.ChainConfig(plain_units=True)
    messaging: messaging.MessagingConfig = messaging.MessagingConfig()
    swap: swap.SwapConfig = swap.SwapConfig()
    passport_lifetime: int = 180 * DAY

    def to_json(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "equibit": self.equibit.to_json(),
            "payment": self.payment.to_json(),
            "pow_target_bits": self.messaging.pow_target.bit_length() - 1,
            "payment_refund_delay": self.swap.payment_refund_delay,
            "equibit_refund_delay": self.swap.equibit_refund_delay,
            "passport_lifetime": self.passport_lifetime,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "SimConfig":
        payment = ledger.ChainConfig.from_json(doc["payment"])
        if not payment.plain_units:
            raise ScriptError("the payment chain must run with plain units")
        return cls(
            node_ids=tuple(doc["node_ids"]),
            equibit=ledger.ChainConfig.from_json(doc["equibit"]),
            payment=payment,
            messaging=messaging.MessagingConfig(pow_target=1 << int(doc["pow_target_bits"])),
            swap=swap.SwapConfig(
                payment_refund_delay=int(doc["payment_refund_delay"]),
                equibit_refund_delay=int(doc["equibit_refund_delay"]),
            ),
            passport_lifetime=int(doc["passport_lifetime"]),
        )


@dataclass(frozen=True)
class ScriptEvent:
    time: int
    actor: str
    action: str
    params: Mapping[str, Any]

    def to_json(self) -> dict:
        return {"time": self.time, "actor": self.actor, "action": self.action, "params": dict(self.params)}


@dataclass(frozen=True)
class Scenario:
    seed: int
    config: SimConfig
    events: tuple[ScriptEvent, ...]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_json(),
            "events": [e.to_json() for e in self.events],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Scenario":
        try:
            seed = int(doc["seed"])
            config = SimConfig.from_json(doc["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScriptError(f"bad scenario header: {exc}") from exc
        events = []
        for index, entry in enumerate(doc.get("events", [])):
            try:
                events.append(
                    ScriptEvent(
                        time=int(entry["time"]),
                        actor=str(entry["actor"]),
                        action=str(entry["action"]),
                        params=dict(entry.get("params", {})),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ScriptError(f"bad event: {exc}", event_index=index) from exc
        return cls(seed=seed, config=config, events=tuple(events))


class SimNode:
    """One participant: wallet, message store, book, registry, passports."""

    def __init__(self, node_id: str, keypair: crypto.KeyPair):
        self.node_id = node_id
        self.keypair = keypair
        self.online = True
        self.inbox = messaging.NodeInbox([keypair])
        self.book = orderbook.OrderBook()
        self.registry = governance.Registry()
        self.passports = passport_mod.PassportDirectory()
        self.polls: dict[str, governance.Poll] = {}
        self.ballots: list[governance.Ballot] = []
        self.counters: list[dict] = []
        self._offline_fingerprint: bytes | None = None

    @property
    def address(self) -> bytes:
        return self.keypair.address

    def state_fingerprint(self, clock: int) -> bytes:
        return crypto.hash_bytes(canon_bytes(self.summary_json(clock)))

    def summary_json(self, clock: int) -> dict:
        return {
            "node_id": self.node_id,
            "address": to_hex(self.address),
            "online": self.online,
            "stored_messages": sorted(to_hex(mid) for mid in self.inbox.stored),
            "book": self.book.snapshot_json(clock),
            "registry": self.registry.to_json(),
            "passports": sorted(to_hex(e.edge_id) for e in self.passports.edges),
            "revocations": sorted(to_hex(r.edge_id) for r in self.passports.revocations),
            "polls": sorted(self.polls),
            "history": self.book.compile_history(),
            "unconfirmed_outbound": sorted(
                [to_hex(mid), to_hex(rcpt), state.attempt, state.next_at]
                for (mid, rcpt), state in self.inbox.outbound.items()
            ),
            "confirmed": sorted(
                [to_hex(mid), to_hex(rcpt)] for (mid, rcpt) in self.inbox.confirmed
            ),
        }

    def convergence_view(self, clock: int) -> dict:
        """The state every online node must agree on."""
        return {
            "book": self.book.snapshot_json(clock),
            "registry": self.registry.to_json(),
            "revocations": sorted(to_hex(r.edge_id) for r in self.passports.revocations),
        }


class _SwapDriver:
    """Pumps one settlement session forward a chain-step per tick."""

    def __init__(self, label, session, offer, buyer_node, seller_node):
        self.label = label
        self.session = session
        self.offer = offer
        self.buyer_node = buyer_node
        self.seller_node = seller_node
        self.halted = False
        self.failed: str | None = None

    def done(self) -> bool:
        return self.failed is not None or self.session.state in (
            swap.SwapState.COMPLETED,
            swap.SwapState.ABORTED_CLEAN,
        )

    def pump(self, world: "World", now: int):
        if self.halted or self.done():
            return
        s = self.session
        # Each step runs only while the acting parties are online; a stalled
        # session waits, and its counterparty falls back to scripted refunds.
        both_online = self.buyer_node.online and self.seller_node.online
        try:
            if s.state is swap.SwapState.INIT:
                if not both_online:
                    return
                s.build_tx1(world.payment)
                s.build_tx2()
                world._swap_handoff(self.buyer_node, self.seller_node, "payment_refund", s.tx2, now)
                s.countersign_tx2()
                s.post_tx1(world.payment, now, mine=False)
            elif s.state is swap.SwapState.TX1_POSTED:
                if not both_online or s.tx1.txid not in world.payment.state.tx_lookup:
                    return  # wait for the lock to confirm and both parties
                s.build_tx3(world.equibit)
                s.build_tx4()
                world._swap_handoff(self.seller_node, self.buyer_node, "equity_refund", s.tx4, now)
                s.countersign_tx4()
                s.post_tx3(world.equibit, now, mine=False)
            elif s.state is swap.SwapState.TX3_POSTED:
                if not self.buyer_node.online or s.tx3.txid not in world.equibit.state.tx_lookup:
                    return
                s.claim_equibits(world.equibit, now, mine=False)
            elif s.state is swap.SwapState.BUYER_CLAIMED:
                if not self.seller_node.online:
                    return
                spender = world.equibit.spender_of((s.tx3.txid, 0))
                if spender is None:
                    return  # the claim has not confirmed yet
                s.claim_payment(world.payment, world.equibit, now, mine=False)
                for node in (self.buyer_node, self.seller_node):
                    node.book.mark_taken(self.offer.offer_id)
                    node.book.record_settlement(self.offer, s)
                world.log(now, "swap", "settled", {"label": self.label})
        except swap.SwapError as exc:
            self.failed = str(exc)
            world.log(now, "swap", "failed", {"label": self.label, "reason": str(exc)})


class World:
    """Authoritative simulation state; built from a scenario and run once."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.clock = 0
        self.validator_directory = passport_mod.PassportDirectory()
        self.equibit = swap.Chain(ledger.ChainState.genesis(scenario.config.equibit), b"\x00" * 32)
        self.payment = swap.Chain(ledger.ChainState.genesis(scenario.config.payment), b"\x00" * 32)
        self.equibit.passports = self.validator_directory
        self.payment.passports = self.validator_directory
        self.nodes: dict[str, SimNode] = {}
        for node_id in scenario.config.node_ids:
            seed = crypto.hash_bytes(
                b"node-key:" + scenario.seed.to_bytes(8, "big") + node_id.encode()
            )
            self.nodes[node_id] = SimNode(node_id, crypto.keypair_from_seed(seed))
        self.pending: list[tuple[int, messaging.Envelope]] = []
        self.drivers: dict[str, _SwapDriver] = {}
        self.offers: dict[str, orderbook.Offer] = {}
        self.polls: dict[str, governance.Poll] = {}
        self.events_log: list[dict] = []
        self.checkpoints: list[dict] = []
        self._miner_cursor = 0
        self._seed_counter = 0
        self._last_tx: dict[str, ledger.Transaction] = {}

    # ------------------------------------------------------------------ utils

    def derive_seed(self, purpose: str) -> bytes:
        self._seed_counter += 1
        return crypto.hash_bytes(
            b"derived:"
            + self.scenario.seed.to_bytes(8, "big")
            + purpose.encode()
            + self._seed_counter.to_bytes(8, "big")
        )

    def node(self, node_id: str) -> SimNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise ScriptError(f"unknown actor {node_id!r}")
        return node

    def online_nodes(self) -> list[SimNode]:
        return [self.nodes[nid] for nid in sorted(self.nodes) if self.nodes[nid].online]

    def log(self, time: int, actor: str, action: str, result: dict):
        self.events_log.append(
            {"time": time, "actor": actor, "action": action, "result": result}
        )

    def chain_named(self, name: str) -> swap.Chain:
        if name == "equibit":
            return self.equibit
        if name == "payment":
            return self.payment
        raise ScriptError(f"unknown chain {name!r}")

    def broadcast(self, sender: SimNode, envelope: messaging.Envelope, now: int):
        if not sender.online:
            raise ScriptError(f"{sender.node_id} is offline and cannot broadcast")
        sender.inbox.track_send(envelope)
        self.pending.append((now + 1, envelope))

    def _swap_handoff(self, frm: SimNode, to: SimNode, stage: str, tx, now: int):
        """Steps 4/5 and 9/10: refund drafts travel privately, never on chain."""
        payload = json.dumps({"swapTx": {"stage": stage, "txid": to_hex(tx.txid)}}).encode()
        envelope = messaging.compose(
            frm.keypair,
            messaging.Kind.DIRECT,
            [to.address],
            payload,
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(frm, envelope, now)

    def _describe_verdict(self, verdict: ledger.Verdict) -> dict:
        if verdict.ok:
            return {"accepted": True}
        return {"accepted": False, "reason": verdict.reason.value, "detail": verdict.detail}

    # -------------------------------------------------------------- delivery

    def _ingest_public(self, node: SimNode, envelope: messaging.Envelope, now: int):
        subtype = envelope.public_subtype
        if subtype is messaging.PublicSubtype.BID_ASK:
            offer = orderbook.offer_from_envelope(envelope)
            if offer is not None:
                node.book.ingest(offer, now)
        elif subtype is messaging.PublicSubtype.PAYMENT_ADDRESS:
            try:
                record = governance.PaymentAddressRecord.from_json(
                    json.loads(envelope.payload)["paymentAddress"]
                )
            except (ValueError, KeyError, TypeError):
                return
            node.registry.ingest_payment_address(record)
        elif subtype is messaging.PublicSubtype.PROXY_DESIGNATION:
            try:
                designation = governance.ProxyDesignation.from_json(
                    json.loads(envelope.payload)["proxyDesignation"]
                )
            except (ValueError, KeyError, TypeError):
                return
            node.registry.ingest_proxy(designation)
        elif subtype is messaging.PublicSubtype.PASSPORT_REVOCATION:
            try:
                revocation = passport_mod.Revocation.from_json(
                    json.loads(envelope.payload)["passportRevocation"]
                )
            except (ValueError, KeyError, TypeError):
                return
            if revocation.signature_valid():
                node.passports = node.passports.with_revocations([revocation])

    def _ingest_cleartext(self, node: SimNode, envelope: messaging.Envelope, cleartext: bytes):
        tag = messaging.payload_tag(cleartext)
        if tag == "eqbPoll":
            try:
                poll = governance.parse_poll(cleartext)
            except governance.MalformedPoll:
                return
            node.polls[poll.poll_guid] = poll
        elif tag == "ballot":
            try:
                ballot = governance.Ballot.from_json(json.loads(cleartext)["ballot"])
            except (ValueError, KeyError, TypeError):
                return
            node.ballots.append(ballot)
        elif tag == "passport":
            try:
                edge = passport_mod.TrustEdge.from_json(json.loads(cleartext)["passport"])
            except (ValueError, KeyError, TypeError):
                return
            if edge.signature_valid():
                node.passports = node.passports.with_edges([edge])
        elif tag == "counterOffer":
            node.counters.append(json.loads(cleartext)["counterOffer"])

    def _deliver_envelope(self, envelope: messaging.Envelope, now: int):
        for node in self.online_nodes():
            result, confirmation = messaging.deliver(
                envelope, node.inbox, now, self.scenario.config.messaging
            )
            if result is messaging.DeliveryResult.BAD_POW:
                continue  # dropped, not relayed, not stored
            if envelope.kind is messaging.Kind.PUBLIC:
                self._ingest_public(node, envelope, now)
            elif result is messaging.DeliveryResult.DECRYPTED_AND_CONFIRMED:
                stored = node.inbox.stored.get(envelope.message_id)
                if stored is not None and stored.cleartext is not None:
                    self._ingest_cleartext(node, envelope, stored.cleartext)
            if confirmation is not None:
                self.broadcast(node, confirmation, now)
        if envelope.kind is messaging.Kind.PUBLIC:
            if envelope.public_subtype is messaging.PublicSubtype.PASSPORT_REVOCATION:
                try:
                    revocation = passport_mod.Revocation.from_json(
                        json.loads(envelope.payload)["passportRevocation"]
                    )
                except (ValueError, KeyError, TypeError):
                    return
                if revocation.signature_valid():
                    self.validator_directory = self.validator_directory.with_revocations(
                        [revocation]
                    )
                    self.equibit.passports = self.validator_directory
                    self.payment.passports = self.validator_directory

    # ------------------------------------------------------------------ tick

    def tick(self, now: int, events: list[tuple[int, ScriptEvent]]):
        self.clock = now
        # 1. deliver
        due = [env for (at, env) in self.pending if at <= now]
        self.pending = [(at, env) for (at, env) in self.pending if at > now]
        for envelope in due:
            self._deliver_envelope(envelope, now)
        # 2. scripted actions in (time, sequence) order, then session pumping
        for index, event in events:
            try:
                self.dispatch(event, now)
            except ScriptError as exc:
                raise ScriptError(str(exc), event_index=index) from exc
        for label in sorted(self.drivers):
            self.drivers[label].pump(self, now)
        # 3. chain production
        miner = self._next_miner()
        if miner is not None:
            self.equibit.flush(now, miner.address)
            self.payment.flush(now, miner.address)
        for chain in (self.equibit, self.payment):
            if chain.state.utxo_total() != chain.state.issued_so_far:
                raise InvariantViolation("conservation", "utxo sum diverged from issuance")
        # 4. retention
        for node in self.online_nodes():
            messaging.retention_gc(node.inbox, now)
            node.book.gc(now)
        # 5. rebroadcast
        for node in self.online_nodes():
            for envelope in messaging.rebroadcast_tick(node.inbox, now):
                self.pending.append((now + 1, envelope))

    def _next_miner(self) -> SimNode | None:
        online = self.online_nodes()
        if not online:
            return None
        miner = online[self._miner_cursor % len(online)]
        self._miner_cursor += 1
        return miner

    # ------------------------------------------------------------------- run

    def run(self) -> "Transcript":
        events = sorted(
            enumerate(self.scenario.events), key=lambda pair: (pair[1].time, pair[0])
        )
        by_time: dict[int, list[tuple[int, ScriptEvent]]] = {}
        for index, event in events:
            if event.time < 0:
                raise ScriptError("event times must be non-negative", event_index=index)
            by_time.setdefault(event.time, []).append((index, event))
        horizon = max((e.time for e in self.scenario.events), default=0)

        agenda = set(by_time)
        processed: set[int] = set()
        while True:
            wakeups = {at for (at, _) in self.pending if at <= horizon}
            for node in self.online_nodes():
                for state in node.inbox.outbound.values():
                    if state.next_at <= horizon:
                        wakeups.add(state.next_at)
            candidates = (agenda | wakeups) - processed
            if not candidates:
                break
            t = min(candidates)
            processed.add(t)
            self.tick(t, by_time.get(t, []))
        # Settle any deliveries still in flight just past the horizon.
        extra = horizon + 1
        while self.pending and extra < horizon + 5:
            self.tick(extra, [])
            extra += 1
        self._check_invariants()
        return self.build_transcript()

    def _check_invariants(self):
        views = [node.convergence_view(self.clock) for node in self.online_nodes()]
        for view in views[1:]:
            if canon_bytes(view) != canon_bytes(views[0]):
                raise InvariantViolation("convergence", "online nodes disagree")
        for node in self.nodes.values():
            for stored in node.inbox.stored.values():
                if not messaging.validate_pow(stored.envelope, self.scenario.config.messaging):
                    raise InvariantViolation("spam-gate", "a stored envelope fails its stamp")

    # ------------------------------------------------------------ transcript

    def state_json(self) -> dict:
        return {
            "clock": self.clock,
            "equibit": self.equibit.state.to_json(),
            "payment": self.payment.state.to_json(),
            "nodes": {nid: self.nodes[nid].summary_json(self.clock) for nid in sorted(self.nodes)},
            "offers": {label: self.offers[label].to_json() for label in sorted(self.offers)},
            "sessions": {
                label: self.drivers[label].session.to_json() for label in sorted(self.drivers)
            },
        }

    def digest(self) -> bytes:
        return crypto.hash_bytes(canon_bytes(self.state_json()))

    def build_transcript(self) -> "Transcript":
        return Transcript(
            seed=self.scenario.seed,
            events=list(self.events_log),
            checkpoints=list(self.checkpoints),
            final=self.state_json(),
        )

    # ---------------------------------------------------------------- actions

    def dispatch(self, event: ScriptEvent, now: int):
        handler: Callable | None = getattr(self, f"_act_{event.action}", None)
        if handler is None:
            raise ScriptError(f"unknown action {event.action!r}")
        try:
            result = handler(event.actor, dict(event.params), now) or {}
        except (ScriptError, InvariantViolation):
            raise
        except (EquibitError, KeyError) as exc:
            raise ScriptError(f"{event.action}: {exc}") from exc
        self.log(now, event.actor, event.action, result)

    def _require_online(self, node: SimNode):
        if not node.online:
            raise ScriptError(f"{node.node_id} is offline")

    def _act_advance(self, actor, params, now):
        return {}

    def _act_checkpoint(self, actor, params, now):
        digest = to_hex(self.digest())
        self.checkpoints.append({"time": now, "label": params.get("label", ""), "digest": digest})
        return {"digest": digest}

    def _act_set_offline(self, actor, params, now):
        node = self.node(actor)
        node.online = False
        node._offline_fingerprint = node.state_fingerprint(now)
        return {}

    def _act_set_online(self, actor, params, now):
        node = self.node(actor)
        if node.online:
            return {"noop": True}
        if node._offline_fingerprint != node.state_fingerprint(now):
            raise InvariantViolation(
                "no-hidden-channels", f"{node.node_id} changed while offline"
            )
        node.online = True
        node._offline_fingerprint = None
        peers = [n for n in self.online_nodes() if n is not node]
        synced = messaging.rejoin_sync(node.inbox, [p.inbox for p in peers], now)
        for envelope in synced:
            result, confirmation = messaging.deliver(
                envelope, node.inbox, now, self.scenario.config.messaging
            )
            if envelope.kind is messaging.Kind.PUBLIC:
                self._ingest_public(node, envelope, now)
            elif result is messaging.DeliveryResult.DECRYPTED_AND_CONFIRMED:
                stored = node.inbox.stored.get(envelope.message_id)
                if stored is not None and stored.cleartext is not None:
                    self._ingest_cleartext(node, envelope, stored.cleartext)
            if confirmation is not None:
                self.broadcast(node, confirmation, now)
        return {"synced": len(synced)}

    def _act_mine_blanks(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        chain = self.chain_named(params.get("chain", "equibit"))
        blocks = int(params.get("blocks", 1))
        for _ in range(blocks):
            chain.mine_empty(now, node.address)
        return {"blocks": blocks, "balance": chain.state.balance(node.address, None)}

    def _find_issuance(self, issuer_id: str, security: str) -> ledger.IssuerInfo:
        issuer = self.node(issuer_id)
        info = orderbook.find_issuance(self.equibit.state, issuer.address, security)
        if info is None:
            raise ScriptError(f"no issuance {security!r} by {issuer_id}")
        return info

    def _presented_passports(self, receiver: SimNode) -> tuple[passport_mod.TrustEdge, ...]:
        """What the receiver can show: its own passports plus, one query hop
        out, the passports its trusters hold themselves."""
        held = [
            e for e in receiver.passports.edges if e.trustee_address == receiver.address
        ]
        presented = {e.edge_id: e for e in held}
        trusters = {e.truster_address for e in held}
        by_address = {n.address: n for n in self.nodes.values()}
        for truster_address in trusters:
            truster_node = by_address.get(truster_address)
            if truster_node is None:
                continue
            for e in truster_node.passports.edges:
                if e.trustee_address == truster_address:
                    presented[e.edge_id] = e
        return tuple(presented[k] for k in sorted(presented))

    def _act_transfer(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        chain = self.chain_named(params.get("chain", "equibit"))
        recipient = self.node(params["to"])
        issuance = None
        passports: tuple[passport_mod.TrustEdge, ...] = ()
        if "security" in params:
            issuance = self._find_issuance(params.get("issuer", actor), params["security"])
            if issuance.restriction_level > 0:
                passports = self._presented_passports(recipient)
        tx = ledger.make_transfer(
            chain.state,
            node.keypair,
            recipient.address,
            int(params["amount"]),
            issuance=issuance,
            fee=int(params.get("fee", 0)),
            passports=passports,
        )
        verdict = chain.submit(tx, now, mine=False)
        self._last_tx[params.get("chain", "equibit")] = tx
        return self._describe_verdict(verdict)

    def _act_replay_last_tx(self, actor, params, now):
        chain_name = params.get("chain", "equibit")
        tx = self._last_tx.get(chain_name)
        if tx is None:
            raise ScriptError("nothing to replay")
        chain = self.chain_named(chain_name)
        chain.flush(now)  # confirm the original first; the replay double-spends
        verdict = chain.submit(tx, now, mine=False)
        return self._describe_verdict(verdict)

    def _act_authorize(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        blanks = [op for op, _ in self.equibit.state.spendable(node.address)]
        if "amount" in params:
            picked, total = [], 0
            for op in blanks:
                picked.append(op)
                total += self.equibit.state.utxo[op].amount
                if total >= int(params["amount"]):
                    break
            blanks = picked
        tx = ledger.authorize(
            self.equibit.state,
            blanks,
            node.keypair,
            company_name=params["company"],
            company_domicile=params.get("domicile", "CA"),
            security_name=params["security"],
            security_type=params.get("type", "CommonShares"),
            restriction_level=int(params.get("level", 0)),
            fee=int(params.get("fee", 0)),
        )
        verdict = self.equibit.submit(tx, now, mine=False)
        return self._describe_verdict(verdict)

    def _act_cancel(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        issuance = self._find_issuance(params.get("issuer", actor), params["security"])
        held = [op for op, _ in self.equibit.state.spendable(node.address, issuance)]
        if not held:
            raise ScriptError(f"{actor} holds no {params['security']!r}")
        tx = ledger.cancel(self.equibit.state, held, node.keypair)
        verdict = self.equibit.submit(tx, now, mine=False)
        return self._describe_verdict(verdict)

    def _act_send_direct(self, actor, params, now):
        node = self.node(actor)
        recipient = self.node(params["to"])
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.DIRECT,
            [recipient.address],
            params["text"].encode(),
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {"message_id": to_hex(envelope.message_id)}

    def _act_send_group(self, actor, params, now):
        node = self.node(actor)
        recipients = [self.node(nid).address for nid in params["to"]]
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.GROUP,
            recipients,
            params["text"].encode(),
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {"message_id": to_hex(envelope.message_id)}

    def _act_designate_payment_address(self, actor, params, now):
        node = self.node(actor)
        target = self.node(params["address_of"]).address if "address_of" in params else node.address
        record = governance.designate_payment_address(
            node.keypair, params.get("currency", "PAY"), target, now
        )
        payload = json.dumps({"paymentAddress": record.to_json()}).encode()
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.PUBLIC,
            [],
            payload,
            now,
            public_subtype=messaging.PublicSubtype.PAYMENT_ADDRESS,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {}

    def _act_designate_proxy(self, actor, params, now):
        node = self.node(actor)
        proxy = self.node(params["proxy"])
        scope = governance.ProxyScope(params.get("scope", "general"))
        scope_arg = None
        if scope is governance.ProxyScope.SPECIFIC_ISSUER:
            scope_arg = to_hex(self.node(params["issuer"]).address)
        elif scope is governance.ProxyScope.SPECIFIC_POLL:
            scope_arg = self.polls[params["poll"]].poll_guid
        designation = governance.designate_proxy(
            node.keypair, proxy.address, scope, now, scope_arg=scope_arg
        )
        payload = json.dumps({"proxyDesignation": designation.to_json()}).encode()
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.PUBLIC,
            [],
            payload,
            now,
            public_subtype=messaging.PublicSubtype.PROXY_DESIGNATION,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {}

    def _act_issue_passport(self, actor, params, now):
        node = self.node(actor)
        trustee = self.node(params["trustee"])
        lifetime = int(params["days"]) * DAY if "days" in params else self.scenario.config.passport_lifetime
        edge = passport_mod.issue_passport(node.keypair, trustee.address, now + lifetime, now)
        node.passports = node.passports.with_edges([edge])
        payload = json.dumps({"passport": edge.to_json()}).encode()
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.DIRECT,
            [trustee.address],
            payload,
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {"edge_id": to_hex(edge.edge_id)}

    def _act_revoke_passport(self, actor, params, now):
        node = self.node(actor)
        trustee = self.node(params["trustee"])
        edges = [
            e
            for e in node.passports.edges
            if e.truster_address == node.address and e.trustee_address == trustee.address
        ]
        if not edges:
            raise ScriptError(f"{actor} holds no edge to revoke for {params['trustee']}")
        revocation = passport_mod.revoke_passport(node.keypair, edges[-1], now)
        payload = json.dumps({"passportRevocation": revocation.to_json()}).encode()
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.PUBLIC,
            [],
            payload,
            now,
            public_subtype=messaging.PublicSubtype.PASSPORT_REVOCATION,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {"edge_id": to_hex(revocation.edge_id)}

    def _act_post_offer(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        issuer = self.node(params.get("issuer", actor))
        offer = orderbook.make_offer(
            node.keypair,
            params["side"],
            issuer.address,
            params["security"],
            int(params["quantity"]),
            int(params["price_num"]),
            int(params.get("price_den", 1)),
            now + int(params.get("days", 7)) * DAY,
            now,
        )
        self.offers[params["label"]] = offer
        envelope = orderbook.offer_envelope(offer, node.keypair, self.scenario.config.messaging)
        self.broadcast(node, envelope, now)
        return {"offer_id": to_hex(offer.offer_id)}

    def _act_counter_offer(self, actor, params, now):
        node = self.node(actor)
        offer = self.offers[params["label"]]
        envelope = orderbook.counter_offer(
            node.keypair,
            offer,
            int(params["price_num"]),
            int(params.get("price_den", 1)),
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {}

    def _open_trade(self, taker: SimNode, maker: SimNode, offer, params, now):
        buyer = taker if offer.side == "ask" else maker
        session = orderbook.initiate_trade(
            taker.keypair,
            maker.keypair,
            offer,
            self.equibit.state,
            buyer.passports.with_edges(self.validator_directory.edges).with_revocations(
                self.validator_directory.revocations
            ),
            now,
            seed=self.derive_seed(f"swap:{params['label']}"),
            swap_config=self.scenario.config.swap,
            price_num=int(params["price_num"]) if "price_num" in params else None,
            price_den=int(params.get("price_den", 1)) if "price_num" in params else None,
            buyer_passports=self._presented_passports(buyer),
        )
        label = params.get("session_label", params["label"])
        buyer_node = taker if offer.side == "ask" else maker
        seller_node = maker if offer.side == "ask" else taker
        self.drivers[label] = _SwapDriver(label, session, offer, buyer_node, seller_node)
        return {"session": label, "hashlock": to_hex(session.h)}

    def _act_take_offer(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        offer = self.offers[params["label"]]
        maker = next(n for n in self.nodes.values() if n.address == offer.maker_address)
        return self._open_trade(node, maker, offer, params, now)

    def _act_accept_counter(self, actor, params, now):
        maker = self.node(actor)
        self._require_online(maker)
        offer = self.offers[params["label"]]
        if maker.address != offer.maker_address:
            raise ScriptError("only the maker can accept a counter")
        responder = self.node(params["responder"])
        return self._open_trade(responder, maker, offer, params, now)

    def _act_swap_halt(self, actor, params, now):
        driver = self.drivers[params["label"]]
        driver.halted = True
        return {"state": driver.session.state.value}

    def _act_swap_refund(self, actor, params, now):
        driver = self.drivers[params["label"]]
        session = driver.session
        try:
            if params["side"] == "payment":
                verdict = session.refund_payment(self.payment, now, mine=False)
            else:
                verdict = session.refund_equibits(self.equibit, now, mine=False)
        except swap.SwapError as exc:
            return {"accepted": False, "error": str(exc)}
        return self._describe_verdict(verdict)

    def _act_create_poll(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        issuance = self._find_issuance(actor, params["security"])
        questions = tuple(
            governance.PollQuestion(
                text=q["text"],
                multiple_choice=bool(q.get("multipleChoice", False)),
                answers=tuple(governance.PollAnswer(text=a) for a in q["answers"]),
            )
            for q in params["questions"]
        )
        poll = governance.Poll(
            poll_guid=to_hex(self.derive_seed(f"poll:{params['label']}"))[:32],
            issuer_id=to_hex(node.address),
            description=params.get("description", params["label"]),
            close_poll="yes",
            close_date=iso_from_seconds(now + int(params["close_days"]) * DAY),
            questions=questions,
        )
        holders = governance.snapshot_holders(
            self.equibit.state, node.address, params["security"], self.equibit.state.tip.timestamp
        )
        envelope = governance.create_poll(
            node.keypair, poll, sorted(holders), node.registry, now,
            config=self.scenario.config.messaging,
        )
        self.polls[params["label"]] = poll
        node.polls[poll.poll_guid] = poll
        self.broadcast(node, envelope, now)
        return {"poll_guid": poll.poll_guid, "recipients": len(envelope.recipients)}

    def _act_cast_ballot(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        poll = self.polls[params["poll"]]
        if poll.poll_guid not in node.polls:
            raise ScriptError(f"{actor} never received poll {params['poll']!r}")
        voter = self.node(params.get("voter", actor))
        ballot = governance.cast_ballot(
            node.keypair, poll, voter.address, [int(a) for a in params["answers"]], now
        )
        payload = json.dumps({"ballot": ballot.to_json()}).encode()
        envelope = messaging.compose(
            node.keypair,
            messaging.Kind.DIRECT,
            [from_hex(poll.issuer_id)],
            payload,
            now,
            config=self.scenario.config.messaging,
        )
        self.broadcast(node, envelope, now)
        return {}

    def _act_tabulate_poll(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        poll = self.polls[params["poll"]]
        ballots = [b for b in node.ballots if b.poll_guid == poll.poll_guid]
        designations = list(node.registry.proxies.values())
        snapshot = governance.snapshot_holders(
            self.equibit.state,
            node.address,
            params["security"],
            min(poll.close_seconds, self.equibit.state.tip.timestamp),
        )
        result = governance.tabulate(poll, ballots, designations, snapshot, now)
        return {
            "totals": [list(row) for row in result.totals],
            "counted_weight": result.counted_weight,
            "ballots": len(ballots),
            "audit": [e.status for e in result.audit],
        }

    def _act_distribute_dividend(self, actor, params, now):
        node = self.node(actor)
        self._require_online(node)
        record_time = int(params.get("record_time", self.equibit.state.tip.timestamp))
        snapshot = governance.snapshot_holders(
            self.equibit.state, node.address, params["security"], record_time
        )
        plan = governance.DistributionPlan(
            issuer_address=node.address,
            security_name=params["security"],
            record_datetime=record_time,
            gross_amount=int(params["gross"]),
            currency=params.get("currency", "PAY"),
        )
        allocation = governance.allocate_dividend(plan, snapshot, node.registry)
        result = {
            "paid": [[to_hex(h), to_hex(p), a] for h, p, a in allocation.paid],
            "withheld": [[to_hex(h), a] for h, a in allocation.withheld],
        }
        if allocation.paid:
            total = allocation.total_paid
            outpoints, funded = ledger.select_outpoints(self.payment.state, node.keypair, total)
            outputs = [
                ledger.EquibitOutput(amount, pay_address)
                for _, pay_address, amount in allocation.paid
            ]
            if funded > total:
                outputs.append(ledger.EquibitOutput(funded - total, node.address))
            tx = ledger.Transaction(
                inputs=tuple(ledger.TxInput(*op) for op in outpoints),
                outputs=tuple(outputs),
            )
            sighash = tx.sighash()
            proof = ledger.SpendProof(
                signatures=(
                    (node.keypair.public_key, crypto.sign(node.keypair.private_key, sighash)),
                )
            )
            tx = ledger.signed(tx, [proof] * len(tx.inputs))
            verdict = self.payment.submit(tx, now, mine=False)
            result.update(self._describe_verdict(verdict))
        return result


@dataclass
class Transcript:
    seed: int
    events: list[dict]
    checkpoints: list[dict]
    final: dict

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "events": self.events,
            "checkpoints": self.checkpoints,
            "final": self.final,
        }

    @property
    def digest(self) -> str:
        return to_hex(crypto.hash_bytes(canon_bytes(self.to_json())))


def run(scenario: Scenario) -> Transcript:
    """Execute a scenario start to finish; deterministic in (seed, script)."""
    return World(scenario).run()
