"""Command-line entry point: run scenarios, inspect artifacts, play demos.

Exit codes for ``run``: 0 success (transcript written, digest printed),
1 invariant violation (diagnostic names the violated property), 2 script
or usage error. Inspection works on transcript files or bare chain
snapshots; every ``--format json`` output is canonical JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import governance, ledger, orderbook, passport as passport_mod, simnet, swap
from .canonical import DAY, HOUR, canon_bytes, from_hex, to_hex
from .crypto import hash_bytes, keypair_from_seed
from .errors import EquibitError, InvariantViolation, ScriptError

KNOWN_QUERIES = ("issuer-summary", "holder-balances", "authenticity", "swap-sessions", "book")
KNOWN_DEMOS = ("swap", "poll", "passport")


class UnknownQuery(EquibitError):
    pass


class UnknownDemo(EquibitError):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on unknown flags; keep that contract
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ScriptError as exc:
        print(f"script error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violated: {exc.prop}: {exc}", file=sys.stderr)
        return 1
    except (UnknownQuery, UnknownDemo, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equibit-sim",
        description="Deterministic peer-to-peer equity protocol simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file and write its transcript")
    p_run.add_argument("scenario", type=Path)
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", type=Path, default=None, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_inspect = sub.add_parser("inspect", help="query a transcript or chain snapshot")
    p_inspect.add_argument("artifact", type=Path)
    p_inspect.add_argument("--query", required=True, choices=KNOWN_QUERIES)
    p_inspect.add_argument("--format", choices=("json", "table"), default="table")
    p_inspect.add_argument("--at", type=int, default=None, help="clock time for time queries")
    p_inspect.add_argument("--issuer", default=None, help="issuer address (hex)")
    p_inspect.add_argument("--security", default=None)
    p_inspect.add_argument("--outpoint", default=None, help="txid:index for authenticity")
    p_inspect.set_defaults(func=cmd_inspect)

    p_demo = sub.add_parser("demo", help="scripted walkthrough: swap | poll | passport")
    p_demo.add_argument("name")
    p_demo.set_defaults(func=cmd_demo)
    return parser


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    doc = json.loads(args.scenario.read_text())
    scenario = simnet.Scenario.from_json(doc)
    if args.seed is not None:
        scenario = simnet.Scenario(seed=args.seed, config=scenario.config, events=scenario.events)
    transcript = simnet.run(scenario)
    out_dir = args.out or Path(os.environ.get("EQB_SIM_OUT", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{args.scenario.stem}.transcript.json"
    out_path.write_bytes(canon_bytes(transcript.to_json()))
    print(f"transcript {out_path}")
    print(f"digest {transcript.digest}")
    return 0


# ---------------------------------------------------------------------------
# inspect


def _load_chain(doc: dict) -> ledger.ChainState:
    if "final" in doc:  # transcript
        return ledger.ChainState.from_json(doc["final"]["equibit"])
    if "blocks" in doc:  # bare chain snapshot
        return ledger.ChainState.from_json(doc)
    raise UnknownQuery("the artifact is neither a transcript nor a chain snapshot")


def _all_issuers(state: ledger.ChainState) -> list[bytes]:
    seen = set()
    for _, tx in state.tx_lookup.values():
        for out in tx.outputs:
            if out.issuer_info is not None:
                seen.add(out.issuer_info.issuer_address)
    return sorted(seen)


def query_issuer_summary(doc: dict, args) -> dict:
    state = _load_chain(doc)
    issuers = [from_hex(args.issuer)] if args.issuer else _all_issuers(state)
    return {
        to_hex(issuer): ledger.issuer_summary(state, issuer) for issuer in issuers
    }


def query_holder_balances(doc: dict, args) -> dict:
    state = _load_chain(doc)
    if args.issuer and args.security:
        at = args.at if args.at is not None else state.tip.timestamp
        snapshot = governance.snapshot_holders(state, from_hex(args.issuer), args.security, at)
        return {to_hex(addr): units for addr, units in sorted(snapshot.items())}
    balances: dict[str, int] = {}
    for out in state.utxo.values():
        key = to_hex(out.owner_address)
        balances[key] = balances.get(key, 0) + out.amount
    return dict(sorted(balances.items()))


def query_authenticity(doc: dict, args) -> dict:
    if not args.outpoint or ":" not in args.outpoint:
        raise UnknownQuery("authenticity needs --outpoint TXID:INDEX")
    state = _load_chain(doc)
    txid_hex, index = args.outpoint.rsplit(":", 1)
    verdict = ledger.verify_authenticity((from_hex(txid_hex), int(index)), state)
    return {"outpoint": args.outpoint, "status": verdict.value}


def query_swap_sessions(doc: dict, args) -> dict:
    if "final" not in doc:
        raise UnknownQuery("swap sessions live in transcripts")
    return doc["final"]["sessions"]


def query_book(doc: dict, args) -> dict:
    if "final" not in doc:
        raise UnknownQuery("the book lives in transcripts")
    at = args.at if args.at is not None else doc["final"]["clock"]
    state = _load_chain(doc)
    offers = []
    for entry in doc["final"].get("offers", {}).values():
        if not entry["created_at"] <= at < entry["expiry"]:
            continue
        entry = dict(entry)
        # The book never chain-validates; inspection flags issuances that
        # do not exist on chain.
        entry["verifiable"] = orderbook.verify_offer(orderbook.Offer.from_json(entry), state)
        offers.append(entry)
    offers.sort(key=lambda o: (o["created_at"], o["signature"]))
    return {"at": at, "offers": offers}


QUERY_HANDLERS = {
    "issuer-summary": query_issuer_summary,
    "holder-balances": query_holder_balances,
    "authenticity": query_authenticity,
    "swap-sessions": query_swap_sessions,
    "book": query_book,
}


def _print_table(result, indent=""):
    if isinstance(result, dict):
        for key, value in result.items():
            if isinstance(value, (dict, list)):
                print(f"{indent}{key}:")
                _print_table(value, indent + "  ")
            else:
                print(f"{indent}{key}: {value}")
    elif isinstance(result, list):
        for item in result:
            _print_table(item, indent)
    else:
        print(f"{indent}{result}")


def cmd_inspect(args) -> int:
    doc = json.loads(args.artifact.read_text())
    handler = QUERY_HANDLERS.get(args.query)
    if handler is None:
        raise UnknownQuery(args.query)
    result = handler(doc, args)
    if args.format == "json":
        sys.stdout.write(canon_bytes({"query": args.query, "result": result}).decode() + "\n")
    else:
        _print_table(result)
    return 0


# ---------------------------------------------------------------------------
# demos


def _demo_actor(label: str):
    return keypair_from_seed(hash_bytes(b"demo:" + label.encode()))


def demo_swap() -> int:
    buyer, seller = _demo_actor("buyer"), _demo_actor("seller")
    payment = swap.Chain(
        ledger.ChainState.genesis(ledger.ChainConfig(plain_units=True, block_subsidy=200, supply_cap=400)),
        buyer.address,
    )
    payment.mine_empty(1)
    payment.mine_empty(2)
    equibit = swap.Chain(
        ledger.ChainState.genesis(ledger.ChainConfig(block_subsidy=50, supply_cap=100)),
        seller.address,
    )
    equibit.mine_empty(1)
    equibit.mine_empty(2)
    blanks = [op for op, _ in equibit.state.spendable(seller.address)]
    auth = ledger.authorize(
        equibit.state, blanks, seller,
        company_name="Demo Industries", company_domicile="CA",
        security_name="DEMO", security_type="CommonShares", restriction_level=0,
    )
    equibit.submit(auth, now=3)
    issuance = auth.outputs[0].issuer_info
    session = swap.open_session(
        "demo", buyer, seller,
        swap.SwapTerms(payment_amount=150, equibit_amount=60, issuance=issuance),
        now=10, seed=b"demo-swap",
    )
    t0 = session.t0

    def say(step, text):
        print(f"step {step:>2}  {text}")

    say(1, f"buyer draws secret x; publishes hashlock {to_hex(session.h)[:16]}...")
    session.build_tx1(payment)
    say(2, f"buyer builds TX1 locking 150 payment units under the hashlock ({to_hex(session.tx1.txid)[:16]}...)")
    session.build_tx2()
    say(3, f"buyer builds refund TX2, timelocked to t0+48h = {session.payment_refund_time}")
    say(4, "buyer sends TX2 to the seller (off-chain)")
    session.countersign_tx2()
    say(5, "seller countersigns TX2 and returns it")
    session.post_tx1(payment, now=10)
    say(6, f"buyer posts TX1; payment chain height {payment.state.height}")
    session.build_tx3(equibit)
    say(7, f"seller builds TX3 locking 60 DEMO units for the buyer ({to_hex(session.tx3.txid)[:16]}...)")
    session.build_tx4()
    say(8, f"seller builds refund TX4, timelocked to t0+24h = {session.equibit_refund_time}")
    say(9, "seller sends TX4 to the buyer (off-chain)")
    session.countersign_tx4()
    say(10, "buyer countersigns TX4 and returns it")
    session.post_tx3(equibit, now=11)
    say(11, f"seller posts TX3; equity chain height {equibit.state.height}")
    session.claim_equibits(equibit, now=12)
    say(12, "buyer claims the equibits, revealing x on the equity chain")
    session.claim_payment(payment, equibit, now=13)
    say(13, "seller extracts x from the chain and claims the payment")
    print()
    print(f"final: buyer holds {equibit.state.balance(buyer.address, issuance.issuance_key)} DEMO, "
          f"seller holds {payment.state.balance(seller.address)} payment units; "
          f"session state {session.state.value}")
    print(f"abort windows: equity refund after {(session.equibit_refund_time - t0) // HOUR}h, "
          f"payment refund after {(session.payment_refund_time - t0) // HOUR}h")
    return 0


DEMO_POLL_TEXT = """{
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
}"""


def demo_poll() -> int:
    issuer = _demo_actor("issuer")
    text = DEMO_POLL_TEXT % {
        "guid": to_hex(_demo_actor("poll").address),
        "issuer": to_hex(issuer.address),
    }
    print("reference poll wire sample (note the tolerated trailing commas):")
    print(text)
    poll = governance.parse_poll(text)
    print()
    print(f"parsed: description={poll.description!r} closeDate={poll.close_date} "
          f"questions={len(poll.questions)} answers={len(poll.questions[0].answers)}")
    out = governance.serialize_poll(poll)
    print()
    print("canonical serialization:")
    print(out)
    again = governance.parse_poll(out)
    print(f"round trip identical: {again == poll}")
    investor, proxy = _demo_actor("investor"), _demo_actor("proxy")
    designation = governance.designate_proxy(
        investor, proxy.address, governance.ProxyScope.GENERAL, now=0
    )
    ballots = [
        governance.cast_ballot(investor, poll, investor.address, [0], now=10),
        governance.cast_ballot(proxy, poll, investor.address, [1], now=11),
    ]
    result = governance.tabulate(
        poll, ballots, [designation], {investor.address: 5}, now=poll.close_seconds
    )
    print(f"tabulation with a conflicting general proxy: totals={result.totals} "
          f"audit={[entry.status for entry in result.audit]}")
    return 0


def demo_passport() -> int:
    issuer, accreditor, buyer, seller = (
        _demo_actor(x) for x in ("issuer", "accreditor", "buyer", "seller")
    )
    e1 = passport_mod.issue_passport(issuer, accreditor.address, expires_at=90 * DAY, now=0)
    e2 = passport_mod.issue_passport(accreditor, buyer.address, expires_at=90 * DAY, now=0)
    directory = passport_mod.PassportDirectory(edges=(e1, e2))
    print("trust graph: issuer -> accreditor -> buyer")
    degree = passport_mod.degrees_of_trust(issuer.address, buyer.address, directory, now=1)
    print(f"degrees of trust separation from the issuer to the buyer: {degree}")
    for level in (0, 1, 2, 3):
        verdict = passport_mod.validate_transfer(
            level, issuer.address, {seller.address}, buyer.address, directory, now=1
        )
        print(f"  level {level}: {'allowed' if verdict else 'rejected (' + verdict.detail + ')'}")
    revocation = passport_mod.revoke_passport(accreditor, e2, now=2)
    directory = directory.with_revocations([revocation])
    print("accreditor broadcasts a revocation of the buyer's passport")
    degree = passport_mod.degrees_of_trust(issuer.address, buyer.address, directory, now=3)
    print(f"degrees of trust after revocation: {degree}")
    verdict = passport_mod.validate_transfer(
        1, issuer.address, {seller.address}, buyer.address, directory, now=3
    )
    print(f"  level 1 transfer now: {'allowed' if verdict else 'rejected'}")
    return 0


def cmd_demo(args) -> int:
    if args.name == "swap":
        return demo_swap()
    if args.name == "poll":
        return demo_poll()
    if args.name == "passport":
        return demo_passport()
    raise UnknownDemo(f"unknown demo {args.name!r}; pick one of {', '.join(KNOWN_DEMOS)}")


if __name__ == "__main__":
    sys.exit(main())
