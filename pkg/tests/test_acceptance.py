"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import itertools
import json
import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent / "data"))

from equibit_sim import cli, governance, ledger, messaging, simnet, swap
from equibit_sim.canonical import DAY, canon_bytes, to_hex
from equibit_sim.crypto import hash_bytes, keypair_from_seed
from equibit_sim.passport import PassportDirectory, trust_paths, validate_transfer
from equibit_sim.swap import enumerate_schedules

from conftest import actor, default_issuance_fields, mine, submit
from golden_lifecycle import golden_scenario
from test_ledger import brute_force_trace, inject_forged_block, run_random_ledger_scenario
from test_governance import SAMPLE_POLL, enumeration_oracle_split
from test_passport import check_graph_against_oracle, random_trust_world
from test_simnet import LIFECYCLE_EVENTS, scenario

GOLDEN_DIGEST_FILE = Path(__file__).parent / "data" / "golden_digest.txt"


def report(number, name, detail=""):
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {number:02d} {name}: PASS{suffix}")


def test_criterion_01_swap_atomicity_sweep():
    started = time.time()
    result = enumerate_schedules()
    elapsed = time.time() - started
    assert result.terminal_count >= 60
    assert result.violations == []
    shapes = {(o.halt_before_step, o.offset_hours, o.race): o.shape for o in result.outcomes}
    # The four abort windows behave per the protocol table.
    for halt in range(1, 6):  # before anything public: nothing happens
        assert shapes[(halt, 49, "buyer-seller")] == "untouched"
    assert shapes[(7, 49, "buyer-seller")] == "unwound"  # payment refunded after 48h
    assert shapes[(12, 25, "seller-buyer")] == "unwound"  # equity refunded after 24h
    assert shapes[(13, 0, "seller-buyer")] == "completed"  # post-reveal claim wins
    assert shapes[(13, 49, "buyer-seller")] == "negligence:seller"
    assert elapsed < 10
    report(1, "swap atomicity sweep",
           f"{result.terminal_count} terminal states, 0 violations, {elapsed:.2f}s")


def test_criterion_02_conservation():
    checked_blocks = 0
    for seed in range(1000):
        state = run_random_ledger_scenario(seed, ops=6)
        checked_blocks += len(state.blocks)
    report(2, "conservation over randomized scenarios",
           f"1000 scenarios, {checked_blocks} blocks, zero violations")


def test_criterion_03_authenticity_oracle():
    outpoints_checked = 0
    forged_seen = 0
    mismatches = 0
    for seed in range(30):
        state = run_random_ledger_scenario(seed + 5000, ops=16)
        # Inject a tampered annotation wherever an issuance exists to forge from.
        issuances = {
            out.issuer_info
            for _, tx in state.tx_lookup.values()
            for out in tx.outputs
            if out.issuer_info is not None
        }
        holder = actor(f"rand-{seed + 5000}-0")
        if issuances and state.spendable(holder.address):
            import dataclasses

            original = sorted(issuances, key=lambda i: i.security_name)[0]
            forged = dataclasses.replace(original, company_domicile="XX")
            state, _ = inject_forged_block(state, holder, forged)
        assert len(state.blocks) <= 51
        for block in state.blocks:
            if block.coinbase is not None:
                outpoint = (ledger.coinbase_txid(block.height, block.coinbase), 0)
                expected = brute_force_trace(state, outpoint)
                got = ledger.verify_authenticity(outpoint, state)
                outpoints_checked += 1
                mismatches += got is not expected
            for tx in block.transactions:
                for index in range(len(tx.outputs)):
                    outpoint = (tx.txid, index)
                    expected = brute_force_trace(state, outpoint)
                    got = ledger.verify_authenticity(outpoint, state)
                    outpoints_checked += 1
                    mismatches += got is not expected
                    forged_seen += got is ledger.Authenticity.FORGED
    assert outpoints_checked >= 500
    assert forged_seen > 0, "no forged outpoints exercised"
    assert mismatches == 0
    report(3, "authenticity matches the brute-force tracer",
           f"{outpoints_checked} outpoints, {forged_seen} forged, 100% agreement")


def test_criterion_04_passport_oracle():
    rng = random.Random(20240)
    mismatches = check_graph_against_oracle(rng, n_graphs=200, times_per_graph=5)
    assert mismatches == []
    # The sweep must include live seller-as-accreditor exclusions.
    rng = random.Random(20240)
    exclusions = 0
    for _ in range(200):
        actors, edges, revoked, revocations = random_trust_world(rng)
        directory = PassportDirectory(edges=tuple(edges), revocations=tuple(revocations))
        addresses = [a.address for a in actors]
        for _ in range(5):
            now = rng.randrange(0, 250 * DAY)
            for issuer in addresses[:4]:
                for seller in addresses[:4]:
                    for buyer in addresses[:4]:
                        direct, mids = trust_paths(issuer, buyer, directory, now)
                        if not direct and mids and mids <= {seller}:
                            verdict = validate_transfer(
                                1, issuer, {seller}, buyer, directory, now
                            )
                            if buyer not in (issuer, seller):
                                assert not verdict
                                exclusions += 1
    assert exclusions > 0
    report(4, "passport oracle agreement",
           f"200 graphs, 5 times each, {exclusions} seller-exclusion cases")


def test_criterion_05_witness_pruning():
    from test_ledger import build_busy_chain

    state = build_busy_chain(blocks=22, authorizations=10)
    pruned = ledger.prune_witness(state)
    assert ledger.verify_pruned(pruned)
    full_size = ledger.chain_serialized_size(state)
    pruned_size = pruned.serialized_size()
    assert pruned_size < full_size
    # Full single-byte mutation sweep over one block's base transactions.
    doc = pruned.to_json()
    target_block = 5
    base_bytes = bytearray(canon_bytes(doc["base_transactions"][target_block]))
    assert base_bytes, "picked an empty block"
    survived = 0
    for position in range(len(base_bytes)):
        mutated = bytearray(base_bytes)
        mutated[position] = (mutated[position] + 1) % 256
        try:
            replacement = json.loads(bytes(mutated))
            candidate = dict(doc)
            candidate["base_transactions"] = list(doc["base_transactions"])
            candidate["base_transactions"][target_block] = replacement
            if ledger.verify_pruned(ledger.PrunedChain.from_json(candidate)):
                survived += 1
        except ValueError:
            continue  # the mutation broke the serialization itself
    assert survived == 0
    report(5, "witness pruning",
           f"pruned {pruned_size}B < full {full_size}B; {len(base_bytes)}-byte mutation sweep clean")


def test_criterion_06_poll_round_trip_and_tabulation():
    poll = governance.parse_poll(SAMPLE_POLL)
    assert governance.parse_poll(governance.serialize_poll(poll)) == poll
    assert poll.description == "Question for our shareholders"
    assert poll.close_date == "2017-03-30T00:42:00"
    assert len(poll.questions) == 1 and len(poll.questions[0].answers) == 2

    investors = [actor(f"acc6-v{i}") for i in range(4)]
    proxies = [actor(f"acc6-p{i}") for i in range(3)]
    issuer_hex = poll.issuer_id
    designations = [
        governance.designate_proxy(investors[0], proxies[0].address,
                                   governance.ProxyScope.GENERAL, now=1),
        governance.designate_proxy(investors[1], proxies[1].address,
                                   governance.ProxyScope.SPECIFIC_ISSUER, now=1,
                                   scope_arg=issuer_hex),
        governance.designate_proxy(investors[1], proxies[0].address,
                                   governance.ProxyScope.GENERAL, now=1),
        governance.designate_proxy(investors[2], proxies[2].address,
                                   governance.ProxyScope.SPECIFIC_POLL, now=1,
                                   scope_arg=poll.poll_guid),
        governance.designate_proxy(investors[2], proxies[1].address,
                                   governance.ProxyScope.GENERAL, now=1),
    ]
    snapshot = {v.address: units for v, units in zip(investors, (10, 20, 30, 40))}
    ballots = [
        # Investor 0 votes themselves; their general proxy disagrees: self wins.
        governance.cast_ballot(investors[0], poll, investors[0].address, [0], now=5),
        governance.cast_ballot(proxies[0], poll, investors[0].address, [1], now=6),
        # Investor 1: specific-issuer proxy beats their general proxy.
        governance.cast_ballot(proxies[1], poll, investors[1].address, [0], now=7),
        governance.cast_ballot(proxies[0], poll, investors[1].address, [1], now=8),
        # Investor 2: specific-poll proxy beats the general one.
        governance.cast_ballot(proxies[2], poll, investors[2].address, [1], now=9),
        governance.cast_ballot(proxies[1], poll, investors[2].address, [0], now=10),
        # Investor 3 votes only themselves.
        governance.cast_ballot(investors[3], poll, investors[3].address, [0], now=11),
    ]
    result = governance.tabulate(poll, ballots, designations, snapshot, now=poll.close_seconds)
    # Yes: inv0 (10) + inv1 (20) + inv3 (40); No: inv2 (30).
    assert result.totals == ((70, 30),)
    statuses = [entry.status for entry in result.audit]
    assert statuses == ["counted", "overridden", "counted", "overridden",
                        "counted", "overridden", "counted"]
    assert len(result.audit) == len(ballots)  # every ballot stays on record
    report(6, "poll round-trip and authority tabulation",
           f"totals {result.totals}, audit complete")


def test_criterion_07_dividend_allocation():
    rng = random.Random(777)
    for case in range(1000):
        gross = rng.randrange(1, 10**7)
        holders = {
            hash_bytes(b"acc7:%d:%d" % (case, i)): rng.randrange(1, 10**5)
            for i in range(rng.randrange(1, 9))
        }
        split = governance.largest_remainder_split(gross, holders)
        assert sum(split.values()) == gross
        total_units = sum(holders.values())
        for address, amount in split.items():
            assert abs(amount - gross * holders[address] / total_units) < 1
    exact = governance.largest_remainder_split(
        100, {hash_bytes(b"acc7-a"): 1, hash_bytes(b"acc7-b"): 1, hash_bytes(b"acc7-c"): 1}
    )
    oracle = enumeration_oracle_split(
        100, {hash_bytes(b"acc7-a"): 1, hash_bytes(b"acc7-b"): 1, hash_bytes(b"acc7-c"): 1}
    )
    assert exact == oracle
    assert sorted(exact.values(), reverse=True) == [34, 33, 33]
    report(7, "dividend allocation", "1000 random instances conserve; 34/33/33 oracle case")


def test_criterion_08_messaging_lifecycle():
    offline_at, rejoin_at = 400, 400 + 10 * DAY
    events = [
        (0, "alice", "mine_blanks", {"chain": "equibit", "blocks": 3}),
        (60, "alice", "authorize", {"company": "Mill Co", "security": "MILL", "level": 0}),
        (120, "alice", "transfer", {"to": "bob", "amount": 40, "security": "MILL"}),
        (180, "alice", "transfer", {"to": "carol", "amount": 30, "security": "MILL"}),
        (offline_at, "carol", "set_offline", {}),
        # Everything below happens while carol is away.
        (offline_at + 100, "alice", "send_direct", {"to": "carol", "text": "record date soon"}),
        (offline_at + 200, "alice", "designate_payment_address", {}),
        (offline_at + 200, "bob", "designate_payment_address", {}),
        (offline_at + 300, "alice", "post_offer", {"label": "live-ask", "side": "ask",
                                                   "security": "MILL", "quantity": 10,
                                                   "price_num": 1, "days": 30}),
        (offline_at + 300, "bob", "post_offer", {"label": "stale-ask", "side": "bid",
                                                 "security": "MILL", "quantity": 5,
                                                 "price_num": 1, "days": 2}),
        (offline_at + 400, "alice", "issue_passport", {"trustee": "bob", "days": 90}),
        (offline_at + 500, "alice", "revoke_passport", {"trustee": "bob"}),
        (DAY, "alice", "create_poll", {"label": "open-poll", "security": "MILL",
                                       "close_days": 25, "description": "while away",
                                       "questions": [{"text": "Q?", "answers": ["A", "B"]}]}),
        (rejoin_at, "carol", "set_online", {}),
        (rejoin_at + 60, "world", "checkpoint", {"label": "after-rejoin"}),
        # Push beyond the third rebroadcast so the schedule is observable.
        (offline_at + 100 + 17 * DAY, "world", "advance", {}),
    ]
    transcript = simnet.run(scenario(2611, events))
    carol = transcript.final["nodes"]["carol"]
    bob = transcript.final["nodes"]["bob"]
    for key in ("registry", "revocations", "book", "polls"):
        assert canon_bytes(carol[key]) == canon_bytes(bob[key]), f"{key} diverged"
    assert len(carol["book"]) == 1  # the stale offer expired and never synced
    assert carol["polls"], "the open poll never reached the returning node"

    # Rebroadcast schedule: closed form says created_at + 4d, 8d, 16d.
    sender = messaging.NodeInbox([actor("acc8-sender")])
    envelope = messaging.compose(
        actor("acc8-sender"), messaging.Kind.DIRECT, [actor("acc8-peer").address],
        b"anyone home?", now=0,
    )
    sender.track_send(envelope)
    observed = [
        tick
        for tick in range(0, 20 * DAY, 3600)
        if messaging.rebroadcast_tick(sender, tick)
    ]
    assert observed == [4 * DAY, 8 * DAY, 16 * DAY]

    # The message finally lands through the late rebroadcast, so the sender's
    # tracker must show a confirmation from the returning node.
    alice = transcript.final["nodes"]["alice"]
    carol_address = carol["address"]
    assert any(rcpt == carol_address for _, rcpt in alice["confirmed"])
    assert not any(entry[1] == carol_address for entry in alice["unconfirmed_outbound"])
    report(8, "messaging lifecycle",
           "10-day outage byte-matches an online peer; rebroadcasts at +4d, +8d, +16d")


def test_criterion_09_determinism():
    corpus = {
        "golden": lambda seed: golden_scenario(seed),
        "lifecycle": lambda seed: scenario(seed, LIFECYCLE_EVENTS),
        "doublespend": lambda seed: scenario(seed, [
            (0, "alice", "mine_blanks", {"blocks": 2}),
            (1, "alice", "transfer", {"to": "bob", "amount": 30}),
            (2, "alice", "replay_last_tx", {}),
        ]),
    }
    for name, build in corpus.items():
        first = simnet.run(build(1234)).digest
        second = simnet.run(build(1234)).digest
        different = simnet.run(build(4321)).digest
        assert first == second, f"{name} not reproducible"
        assert first != different, f"{name} insensitive to the seed"
    report(9, "determinism", f"{len(corpus)} scenarios replay bit-exactly")


def test_criterion_10_golden_lifecycle(tmp_path, capsys):
    started = time.time()
    path = tmp_path / "golden.json"
    path.write_text(json.dumps(golden_scenario().to_json()))
    code = cli.main(["run", str(path), "--out", str(tmp_path)])
    elapsed = time.time() - started
    out = capsys.readouterr().out
    assert code == 0
    digest = out.strip().splitlines()[-1].split()[-1]
    expected = GOLDEN_DIGEST_FILE.read_text().strip()
    assert digest == expected, "golden transcript digest changed"

    doc = json.loads((tmp_path / "golden.transcript.json").read_text())
    actions = {}
    for entry in doc["events"]:
        actions.setdefault(entry["action"], []).append(entry["result"])
    assert actions["settled"], "the negotiated swap never settled"
    assert doc["final"]["sessions"]["gold-ask"]["state"] == "Completed"
    assert doc["final"]["sessions"]["gold-ask"]["payment_amount"] == 75  # countered price
    assert actions["tabulate_poll"][0]["totals"] == [[170, 30]]
    dividend = actions["distribute_dividend"][0]
    paid = sum(a for _, _, a in dividend["paid"])
    withheld = sum(a for _, a in dividend["withheld"])
    assert paid + withheld == 100 and withheld == 0
    assert actions["cancel"][0]["accepted"] and actions["authorize"][-1]["accepted"]

    # The recycled units are authentic equity of the new issuer.
    state = ledger.ChainState.from_json(doc["final"]["equibit"])
    bob_address = bytes.fromhex(doc["final"]["nodes"]["bob"]["address"])
    summary = ledger.issuer_summary(state, bob_address)
    assert summary["BOB-FUND"]["authorized"] == 50

    # Off-chain guarantee: no envelope content ever lands in a block.
    chain_bytes = canon_bytes(doc["final"]["equibit"]) + canon_bytes(doc["final"]["payment"])
    for marker in (b"eqbPoll", b"paymentAddress", b"proxyDesignation",
                   b"passportRevocation", b"counterOffer", b"ballot", b"offer_id"):
        assert marker not in chain_bytes
    assert elapsed < 5
    report(10, "golden lifecycle", f"exit 0, digest {digest[:16]}..., {elapsed:.2f}s")
