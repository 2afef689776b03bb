import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equibit_sim import governance, ledger
from equibit_sim.canonical import DAY, to_hex
from equibit_sim.governance import (
    Ballot,
    DistributionPlan,
    EmptySnapshot,
    MalformedPoll,
    Poll,
    PollStillOpen,
    ProxyScope,
    Registry,
    UnknownIssuance,
    allocate_dividend,
    cast_ballot,
    create_poll,
    designate_payment_address,
    designate_proxy,
    largest_remainder_split,
    parse_poll,
    poll_recipients,
    serialize_poll,
    snapshot_holders,
    tabulate,
)

from conftest import actor, authorize_issuance, submit

ISSUER = actor("gov-issuer")
A = actor("gov-a")
B = actor("gov-b")
C = actor("gov-c")
P = actor("gov-proxy")
Q = actor("gov-proxy2")


# Reference wire sample for the poll format, placeholders filled with real
# addresses. Note the trailing commas: the parser must tolerate them.
SAMPLE_POLL = """
{
  "eqbPoll": {
    "pollGUID": "%(guid)s",
    "issuerID": "%(issuer)s",
    "description": "Question for our shareholders",
    "closePoll": "yes",
    "closeDate": "2017-03-30T00:42:00",
    "questions": {
      "question": {
        "text": "Do you like polls?",
        "multipleChoice": "no",
        "answers": {
          "answer": [{
            "text": "Yes",
            "value": "0",
          }, {
            "text": "No",
            "value": "0",
          }]
        }
      }
    }
  }
}
""" % {"guid": to_hex(actor("poll-guid").address), "issuer": to_hex(ISSUER.address)}


# ---------------------------------------------------------------------------
# Snapshots


def build_holding_chain():
    state = ledger.ChainState.genesis(ledger.ChainConfig())
    state, info = authorize_issuance(state, ISSUER, amount_blocks=2)  # 100 units
    _, state = submit(state, ledger.make_transfer(state, ISSUER, A.address, 3, issuance=info), now=50)
    _, state = submit(state, ledger.make_transfer(state, ISSUER, B.address, 1, issuance=info), now=60)
    return state, info


def test_snapshot_reads_holdings_at_record_date():
    state, info = build_holding_chain()
    snapshot = snapshot_holders(state, ISSUER.address, info.security_name, record_datetime=60)
    assert snapshot[A.address] == 3
    assert snapshot[B.address] == 1
    assert snapshot[ISSUER.address] == 96  # retained units count; the issuer holds too
    # Oracle: raw UTXO scan of the same chain.
    raw = {}
    for _, out in state.utxo.items():
        if out.issuer_info == info:
            raw[out.owner_address] = raw.get(out.owner_address, 0) + out.amount
    assert snapshot == raw


def test_snapshot_excludes_transfers_after_record_date():
    state, info = build_holding_chain()
    before = snapshot_holders(state, ISSUER.address, info.security_name, record_datetime=55)
    _, state = submit(state, ledger.make_transfer(state, ISSUER, C.address, 10, issuance=info), now=70)
    after = snapshot_holders(state, ISSUER.address, info.security_name, record_datetime=55)
    # Two-snapshot differencing: the late transfer changes nothing at the record date.
    assert before == after
    assert C.address not in after
    latest = snapshot_holders(state, ISSUER.address, info.security_name, record_datetime=70)
    assert latest[C.address] == 10


def test_snapshot_unknown_issuance():
    state, info = build_holding_chain()
    with pytest.raises(UnknownIssuance):
        snapshot_holders(state, ISSUER.address, "NOPE", record_datetime=60)


# ---------------------------------------------------------------------------
# Dividend allocation


def registry_with(*records):
    registry = Registry()
    for record in records:
        assert registry.ingest_payment_address(record)
    return registry


def test_exact_proportional_split():
    plan = DistributionPlan(ISSUER.address, "S", record_datetime=0, gross_amount=1000)
    registry = registry_with(
        designate_payment_address(A, "PAY", A.address, now=1),
        designate_payment_address(B, "PAY", B.address, now=1),
    )
    allocation = allocate_dividend(plan, {A.address: 3, B.address: 1}, registry)
    amounts = {holder: amount for holder, _, amount in allocation.paid}
    assert amounts == {A.address: 750, B.address: 250}
    assert allocation.withheld == ()


def enumeration_oracle_split(gross, holdings):
    """Enumerate every integer allocation summing to gross; keep those with
    minimal worst-case deviation from the exact shares, then apply the
    tie-break: surplus to the lowest address first."""
    addresses = sorted(holdings)
    total = sum(holdings.values())
    exact = {a: gross * holdings[a] / total for a in addresses}
    best, best_dev = None, None
    for combo in itertools.product(range(gross + 1), repeat=len(addresses) - 1):
        rest = gross - sum(combo)
        if rest < 0:
            continue
        allocation = dict(zip(addresses, combo + (rest,)))
        deviation = max(abs(allocation[a] - exact[a]) for a in addresses)
        key = (deviation, [-allocation[a] for a in addresses])
        if best_dev is None or key < best_dev:
            best_dev, best = key, allocation
    return best


def test_largest_remainder_matches_enumeration_oracle():
    holdings = {A.address: 1, B.address: 1, C.address: 1}
    split = largest_remainder_split(100, holdings)
    assert split == enumeration_oracle_split(100, holdings)
    assert sorted(split.values(), reverse=True) == [34, 33, 33]
    lowest = min(holdings)
    assert split[lowest] == 34  # remainder tie broken by ascending address


def test_withheld_without_payment_address():
    plan = DistributionPlan(ISSUER.address, "S", record_datetime=0, gross_amount=1000)
    registry = registry_with(designate_payment_address(A, "PAY", A.address, now=1))
    allocation = allocate_dividend(plan, {A.address: 3, B.address: 1}, registry)
    assert allocation.total_paid == 750
    assert allocation.withheld == ((B.address, 250),)
    assert allocation.total_paid + allocation.total_withheld == 1000


def test_empty_snapshot_rejected():
    plan = DistributionPlan(ISSUER.address, "S", record_datetime=0, gross_amount=10)
    with pytest.raises(EmptySnapshot):
        allocate_dividend(plan, {}, Registry())


@settings(max_examples=200, deadline=None)
@given(
    gross=st.integers(min_value=1, max_value=10**9),
    units=st.lists(st.integers(min_value=1, max_value=10**6), min_size=1, max_size=8),
)
def test_allocation_conservation_and_proportionality(gross, units):
    holdings = {actor(f"h{i}").address: u for i, u in enumerate(units)}
    split = largest_remainder_split(gross, holdings)
    assert sum(split.values()) == gross
    total = sum(holdings.values())
    for address, amount in split.items():
        assert abs(amount - gross * holdings[address] / total) < 1


def test_superseding_payment_address():
    registry = Registry()
    registry.ingest_payment_address(designate_payment_address(A, "PAY", A.address, now=1))
    registry.ingest_payment_address(designate_payment_address(A, "PAY", B.address, now=9))
    record = registry.payment_address_for(A.address, "PAY")
    assert record.payment_address == B.address  # later-signed record supersedes


# ---------------------------------------------------------------------------
# Poll wire format


def test_sample_poll_parses():
    poll = parse_poll(SAMPLE_POLL)
    assert poll.description == "Question for our shareholders"
    assert poll.close_date == "2017-03-30T00:42:00"
    assert len(poll.questions) == 1
    q = poll.questions[0]
    assert q.text == "Do you like polls?"
    assert not q.multiple_choice
    assert [a.text for a in q.answers] == ["Yes", "No"]
    assert [a.value for a in q.answers] == ["0", "0"]


def test_poll_round_trip_is_identity():
    poll = parse_poll(SAMPLE_POLL)
    assert parse_poll(serialize_poll(poll)) == poll
    # Token streams match once whitespace and trailing commas are normalized.
    def tokens(text):
        return json.dumps(
            json.loads(governance._TRAILING_COMMAS.sub(r"\1", text)), sort_keys=True
        )
    assert tokens(serialize_poll(poll)) == tokens(SAMPLE_POLL)


def test_poll_without_questions_malformed():
    doc = json.loads(governance._TRAILING_COMMAS.sub(r"\1", SAMPLE_POLL))
    doc["eqbPoll"]["questions"] = {"question": []}
    with pytest.raises(MalformedPoll):
        parse_poll(json.dumps(doc))


def test_single_answer_malformed():
    doc = json.loads(governance._TRAILING_COMMAS.sub(r"\1", SAMPLE_POLL))
    doc["eqbPoll"]["questions"]["question"]["answers"]["answer"] = [{"text": "Yes", "value": "0"}]
    with pytest.raises(MalformedPoll):
        parse_poll(json.dumps(doc))


def test_multi_question_round_trip():
    poll = parse_poll(SAMPLE_POLL)
    multi = Poll(
        poll_guid=poll.poll_guid,
        issuer_id=poll.issuer_id,
        description="two items",
        close_poll="yes",
        close_date="1970-03-01T00:00:00",
        questions=poll.questions + poll.questions,
    )
    assert parse_poll(serialize_poll(multi)) == multi


# ---------------------------------------------------------------------------
# Poll routing


def fresh_poll(guid="poll-1", close_date="1970-02-01T00:00:00"):
    return Poll(
        poll_guid=guid,
        issuer_id=to_hex(ISSUER.address),
        description="routing",
        close_poll="yes",
        close_date=close_date,
        questions=(
            governance.PollQuestion(
                text="Approve?",
                multiple_choice=False,
                answers=(governance.PollAnswer("Yes"), governance.PollAnswer("No")),
            ),
        ),
    )


def test_poll_routes_to_holders_and_proxies():
    registry = Registry()
    registry.ingest_proxy(designate_proxy(A, P.address, ProxyScope.GENERAL, now=1))
    poll = fresh_poll()
    recipients = poll_recipients(poll, [A.address, B.address], registry)
    assert set(recipients) == {A.address, B.address, P.address}
    envelope = create_poll(ISSUER, poll, [A.address, B.address], registry, now=10)
    assert set(envelope.recipients) == {A.address, B.address, P.address}


def test_specific_issuer_proxy_not_routed_for_other_issuer():
    registry = Registry()
    registry.ingest_proxy(
        designate_proxy(A, P.address, ProxyScope.SPECIFIC_ISSUER, now=1, scope_arg=to_hex(B.address))
    )
    recipients = poll_recipients(fresh_poll(), [A.address], registry)
    assert set(recipients) == {A.address}


# ---------------------------------------------------------------------------
# Tabulation


def close_s(poll):
    return poll.close_seconds


def test_investor_self_vote_beats_general_proxy():
    poll = fresh_poll()
    designations = [designate_proxy(A, P.address, ProxyScope.GENERAL, now=1)]
    ballots = [
        cast_ballot(A, poll, A.address, [0], now=10),  # investor: Yes
        cast_ballot(P, poll, A.address, [1], now=11),  # proxy: No
    ]
    result = tabulate(poll, ballots, designations, {A.address: 5}, now=close_s(poll))
    assert result.totals == ((5, 0),)
    statuses = [e.status for e in result.audit]
    assert statuses == ["counted", "overridden"]  # the proxy vote stays on record


def test_specific_issuer_beats_general():
    poll = fresh_poll()
    designations = [
        designate_proxy(A, P.address, ProxyScope.GENERAL, now=1),
        designate_proxy(
            A, Q.address, ProxyScope.SPECIFIC_ISSUER, now=1, scope_arg=to_hex(ISSUER.address)
        ),
    ]
    ballots = [
        cast_ballot(P, poll, A.address, [0], now=10),
        cast_ballot(Q, poll, A.address, [1], now=11),
    ]
    result = tabulate(poll, ballots, designations, {A.address: 7}, now=close_s(poll))
    assert result.totals == ((0, 7),)


def test_specific_poll_beats_specific_issuer():
    poll = fresh_poll()
    designations = [
        designate_proxy(
            A, P.address, ProxyScope.SPECIFIC_ISSUER, now=1, scope_arg=to_hex(ISSUER.address)
        ),
        designate_proxy(A, Q.address, ProxyScope.SPECIFIC_POLL, now=1, scope_arg=poll.poll_guid),
    ]
    ballots = [
        cast_ballot(P, poll, A.address, [0], now=10),
        cast_ballot(Q, poll, A.address, [1], now=11),
    ]
    result = tabulate(poll, ballots, designations, {A.address: 2}, now=close_s(poll))
    assert result.totals == ((0, 2),)


def test_general_proxy_conflict_later_designation_wins():
    poll = fresh_poll()
    designations = [
        designate_proxy(A, P.address, ProxyScope.GENERAL, now=1),
        designate_proxy(A, Q.address, ProxyScope.GENERAL, now=5),
    ]
    ballots = [
        cast_ballot(P, poll, A.address, [0], now=10),
        cast_ballot(Q, poll, A.address, [1], now=9),
    ]
    result = tabulate(poll, ballots, designations, {A.address: 3}, now=close_s(poll))
    assert result.totals == ((0, 3),)  # Q designated later, so Q's ballot counts
    assert {e.status for e in result.audit} == {"counted", "overridden"}


def test_undesignated_caster_rejected():
    poll = fresh_poll()
    ballots = [cast_ballot(P, poll, A.address, [0], now=10)]
    result = tabulate(poll, ballots, [], {A.address: 3}, now=close_s(poll))
    assert result.totals == ((0, 0),)
    assert result.audit[0].status == "rejected:not_designated"


def test_later_ballot_from_same_caster_replaces():
    poll = fresh_poll()
    ballots = [
        cast_ballot(A, poll, A.address, [0], now=10),
        cast_ballot(A, poll, A.address, [1], now=20),
    ]
    result = tabulate(poll, ballots, [], {A.address: 4}, now=close_s(poll))
    assert result.totals == ((0, 4),)
    assert [e.status for e in result.audit] == ["replaced", "counted"]


def test_tabulate_requires_closed_poll():
    poll = fresh_poll()
    with pytest.raises(PollStillOpen):
        tabulate(poll, [], [], {A.address: 1}, now=close_s(poll) - 1)


def test_late_ballot_rejected():
    poll = fresh_poll()
    ballots = [cast_ballot(A, poll, A.address, [0], now=close_s(poll) + 1)]
    result = tabulate(poll, ballots, [], {A.address: 1}, now=close_s(poll) + 2)
    assert result.audit[0].status == "rejected:late"


def ranking(totals):
    return tuple(
        tuple(sorted(range(len(row)), key=lambda i: (-row[i], i))) for row in totals
    )


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10**6),
    k=st.integers(min_value=1, max_value=50),
)
def test_tabulation_ranking_scale_equivariant(seed, k):
    import random as _random

    rng = _random.Random(seed)
    poll = fresh_poll()
    voters = [actor(f"eq-{seed}-{i}") for i in range(4)]
    snapshot = {v.address: rng.randrange(1, 100) for v in voters}
    ballots = [
        cast_ballot(v, poll, v.address, [rng.randrange(2)], now=5 + i)
        for i, v in enumerate(voters)
    ]
    base = tabulate(poll, ballots, [], snapshot, now=close_s(poll))
    scaled_snapshot = {a: u * k for a, u in snapshot.items()}
    scaled = tabulate(poll, ballots, [], scaled_snapshot, now=close_s(poll))
    assert ranking(base.totals) == ranking(scaled.totals)
    assert scaled.counted_weight == base.counted_weight * k


def test_one_counted_ballot_per_investor():
    poll = fresh_poll()
    designations = [
        designate_proxy(A, P.address, ProxyScope.GENERAL, now=1),
        designate_proxy(A, Q.address, ProxyScope.GENERAL, now=2),
    ]
    ballots = [
        cast_ballot(A, poll, A.address, [0], now=10),
        cast_ballot(P, poll, A.address, [1], now=10),
        cast_ballot(Q, poll, A.address, [1], now=10),
        cast_ballot(B, poll, B.address, [0], now=10),
    ]
    snapshot = {A.address: 5, B.address: 2}
    result = tabulate(poll, ballots, designations, snapshot, now=close_s(poll))
    counted = [e for e in result.audit if e.status == "counted"]
    assert len(counted) == 2  # one per investor
    assert result.counted_weight <= sum(snapshot.values())
