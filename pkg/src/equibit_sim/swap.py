"""Atomic cross-chain settlement of equibits against payment units.

One trade uses four transactions. The buyer locks payment units under a
hashlock (TX1) after the seller countersigns a timelocked refund (TX2,
48 hours); the seller mirrors this on the equity chain (TX3 locked, TX4
refundable after 24 hours). The buyer's claim of the equibits reveals the
hash preimage on the equity chain, which is exactly what the seller needs
to claim the payment. Halt the protocol anywhere and every participant can
recover their original value once the relevant timelock expires; the
equity refund window is strictly shorter than the payment one.

TX2 and TX4 travel off-chain between the parties until (and unless) they
are needed; only TX1, TX3, and the claim or refund spends ever hit a
block. Since txids ignore witnesses, refunds can safely spend transactions
that have not been posted yet.

``enumerate_schedules`` drives a fresh trade to every halt point, clock
offset, and claim/refund race, and checks the recovery guarantee in every
terminal state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from . import crypto, ledger, passport as passport_mod
from .canonical import HOUR, canon_bytes, to_hex
from .errors import EquibitError


class SwapError(EquibitError):
    pass


class OutOfOrder(SwapError):
    pass


class TermsMismatch(SwapError):
    pass


class TimelockNotExpired(SwapError):
    pass


class AlreadyClaimed(SwapError):
    pass


class NoPreimage(SwapError):
    pass


class BadTimelockConfig(SwapError):
    pass


class ChainRejected(SwapError):
    def __init__(self, verdict: ledger.Verdict):
        super().__init__(f"{verdict.reason.value}: {verdict.detail}")
        self.verdict = verdict


@dataclass(frozen=True)
class SwapConfig:
    """Refund windows; the equity refund must expire before the payment one."""

    payment_refund_delay: int = 48 * HOUR
    equibit_refund_delay: int = 24 * HOUR


@dataclass(frozen=True)
class SwapTerms:
    payment_amount: int
    equibit_amount: int
    issuance: ledger.IssuerInfo | None = None  # None trades blank units


_AGREED_TERMS = object()  # sentinel: build the equity lock per the session terms


class SwapState(enum.Enum):
    INIT = "Init"
    TX2_COUNTERSIGNED = "Tx2Countersigned"
    TX1_POSTED = "Tx1Posted"
    TX4_COUNTERSIGNED = "Tx4Countersigned"
    TX3_POSTED = "Tx3Posted"
    BUYER_CLAIMED = "BuyerClaimed"
    COMPLETED = "Completed"
    REFUNDED_EQUIBIT = "RefundedEquibit"
    REFUNDED_PAYMENT = "RefundedPayment"
    ABORTED_CLEAN = "AbortedClean"


class Chain:
    """Mutable holder of one chain tip plus a mempool; states stay values."""

    def __init__(
        self,
        state: ledger.ChainState,
        default_miner: bytes,
        passports: passport_mod.PassportDirectory | None = None,
    ):
        self.state = state
        self.mempool: list[ledger.Transaction] = []
        self.default_miner = default_miner
        self.passports = passports

    def submit(self, tx: ledger.Transaction, now: int, mine: bool = True) -> ledger.Verdict:
        verdict = ledger.validate_transaction(tx, self.state, self.passports, now=now)
        if verdict:
            self.mempool.append(tx)
            if mine:
                self.flush(now)
        return verdict

    def flush(self, now: int, miner: bytes | None = None) -> ledger.Block | None:
        if not self.mempool:
            return None
        block = ledger.produce_block(
            self.mempool, self.state, miner or self.default_miner, now, self.passports
        )
        self.state = ledger.connect_block(self.state, block, self.passports)
        self.mempool = []
        return block

    def mine_empty(self, now: int, miner: bytes | None = None) -> ledger.Block:
        block = ledger.produce_block([], self.state, miner or self.default_miner, now)
        self.state = ledger.connect_block(self.state, block)
        return block

    def is_spent(self, outpoint: ledger.Outpoint) -> bool:
        return outpoint in self.state.spent_in

    def spender_of(self, outpoint: ledger.Outpoint) -> ledger.Transaction | None:
        txid = self.state.spent_in.get(outpoint)
        if txid is None:
            return None
        return self.state.tx_lookup[txid][1]

    def snapshot_bytes(self) -> bytes:
        return canon_bytes(self.state.to_json())

    def clone(self) -> "Chain":
        twin = Chain(self.state, self.default_miner, self.passports)
        twin.mempool = list(self.mempool)
        return twin


def extract_preimage(chain: Chain, outpoint: ledger.Outpoint) -> bytes | None:
    """Read the revealed hashlock preimage from whatever spent ``outpoint``."""
    spender = chain.spender_of(outpoint)
    if spender is None:
        return None
    for txin, proof in zip(spender.inputs, spender.proofs):
        if txin.outpoint() == outpoint and proof.preimage is not None:
            return proof.preimage
    return None


def _solo_spend(
    chain_state: ledger.ChainState,
    outpoint: ledger.Outpoint,
    claimant: crypto.KeyPair,
    preimage: bytes,
    issuance: ledger.IssuerInfo | None,
) -> ledger.Transaction:
    amount = chain_state.utxo[outpoint].amount
    tx = ledger.Transaction(
        inputs=(ledger.TxInput(*outpoint),),
        outputs=(ledger.EquibitOutput(amount, claimant.address, issuance),),
    )
    proof = ledger.SpendProof(
        signatures=((claimant.public_key, crypto.sign(claimant.private_key, tx.sighash())),),
        preimage=preimage,
    )
    return ledger.signed(tx, [proof])


class SwapSession:
    """One trade's state machine; actions must follow the 13-step order."""

    def __init__(
        self,
        session_id: str,
        buyer: crypto.KeyPair,
        seller: crypto.KeyPair,
        terms: SwapTerms,
        opened_at: int,
        seed: bytes,
        config: SwapConfig | None = None,
        buyer_passports: tuple[passport_mod.TrustEdge, ...] = (),
    ):
        config = config or SwapConfig()
        if config.equibit_refund_delay >= config.payment_refund_delay:
            raise BadTimelockConfig(
                "the equity refund window must expire before the payment refund window"
            )
        self.session_id = session_id
        self.buyer = buyer
        self.seller = seller
        self.terms = terms
        self.config = config
        self.t0 = opened_at
        self.buyer_passports = buyer_passports
        # The buyer's secret; public data must not contain it before the claim.
        self._x = crypto.hash_bytes(b"swap-secret:" + seed)
        self.h = crypto.hash_bytes(self._x)
        self.state = SwapState.INIT
        self.tx1: ledger.Transaction | None = None
        self.tx2: ledger.Transaction | None = None
        self.tx3: ledger.Transaction | None = None
        self.tx4: ledger.Transaction | None = None
        self._tx2_buyer_sig: bytes | None = None
        self._tx4_seller_sig: bytes | None = None
        self.refunded_payment = False
        self.refunded_equibit = False

    # -- timelocks

    @property
    def payment_refund_time(self) -> int:
        return self.t0 + self.config.payment_refund_delay

    @property
    def equibit_refund_time(self) -> int:
        return self.t0 + self.config.equibit_refund_delay

    def _require(self, *states: SwapState):
        if self.state not in states:
            raise OutOfOrder(f"cannot do this in state {self.state.value}")

    # -- steps 2..6: payment side

    def build_tx1(self, payment: Chain) -> ledger.Transaction:
        self._require(SwapState.INIT)
        lock = ledger.HashlockOrBoth(
            preimage_hash=self.h,
            solo_claimant=self.seller.address,
            pair=(self.buyer.address, self.seller.address),
        )
        self.tx1 = ledger.make_transfer(
            payment.state, self.buyer, self.seller.address, self.terms.payment_amount, lock=lock
        )
        return self.tx1

    def build_tx2(self) -> ledger.Transaction:
        self._require(SwapState.INIT)
        if self.tx1 is None:
            raise OutOfOrder("the payment lock transaction has not been built")
        tx = ledger.Transaction(
            inputs=(ledger.TxInput(self.tx1.txid, 0),),
            outputs=(ledger.EquibitOutput(self.terms.payment_amount, self.buyer.address),),
            locktime=self.payment_refund_time,
        )
        self._tx2_buyer_sig = crypto.sign(self.buyer.private_key, tx.sighash())
        self.tx2 = tx
        return tx

    def countersign_tx2(self) -> ledger.Transaction:
        self._require(SwapState.INIT)
        if self.tx2 is None or self._tx2_buyer_sig is None:
            raise OutOfOrder("the payment refund transaction has not been built")
        seller_sig = crypto.sign(self.seller.private_key, self.tx2.sighash())
        proof = ledger.SpendProof(
            signatures=(
                (self.buyer.public_key, self._tx2_buyer_sig),
                (self.seller.public_key, seller_sig),
            )
        )
        self.tx2 = ledger.signed(self.tx2, [proof])
        self.state = SwapState.TX2_COUNTERSIGNED
        return self.tx2

    def post_tx1(self, payment: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        if self.state is not SwapState.TX2_COUNTERSIGNED:
            raise OutOfOrder("the refund must be countersigned before the payment is locked")
        verdict = payment.submit(self.tx1, now, mine=mine)
        if not verdict:
            raise ChainRejected(verdict)
        self.state = SwapState.TX1_POSTED
        return verdict

    # -- steps 7..11: equity side

    def build_tx3(self, equibit: Chain, issuance=_AGREED_TERMS) -> ledger.Transaction:
        self._require(SwapState.TX1_POSTED)
        info = self.terms.issuance if issuance is _AGREED_TERMS else issuance
        lock = ledger.HashlockOrBoth(
            preimage_hash=self.h,
            solo_claimant=self.buyer.address,
            pair=(self.buyer.address, self.seller.address),
        )
        self.tx3 = ledger.make_transfer(
            equibit.state,
            self.seller,
            self.buyer.address,
            self.terms.equibit_amount,
            issuance=info,
            lock=lock,
            passports=self.buyer_passports,
        )
        return self.tx3

    def build_tx4(self) -> ledger.Transaction:
        self._require(SwapState.TX1_POSTED)
        if self.tx3 is None:
            raise OutOfOrder("the equity lock transaction has not been built")
        tx = ledger.Transaction(
            inputs=(ledger.TxInput(self.tx3.txid, 0),),
            outputs=(
                ledger.EquibitOutput(
                    self.terms.equibit_amount, self.seller.address, self.tx3.outputs[0].issuer_info
                ),
            ),
            locktime=self.equibit_refund_time,
        )
        self._tx4_seller_sig = crypto.sign(self.seller.private_key, tx.sighash())
        self.tx4 = tx
        return tx

    def countersign_tx4(self) -> ledger.Transaction:
        self._require(SwapState.TX1_POSTED)
        if self.tx4 is None or self._tx4_seller_sig is None:
            raise OutOfOrder("the equity refund transaction has not been built")
        buyer_sig = crypto.sign(self.buyer.private_key, self.tx4.sighash())
        proof = ledger.SpendProof(
            signatures=(
                (self.seller.public_key, self._tx4_seller_sig),
                (self.buyer.public_key, buyer_sig),
            )
        )
        self.tx4 = ledger.signed(self.tx4, [proof])
        self.state = SwapState.TX4_COUNTERSIGNED
        return self.tx4

    def post_tx3(self, equibit: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        if self.state is not SwapState.TX4_COUNTERSIGNED:
            raise OutOfOrder("the refund must be countersigned before the equity is locked")
        locked = self.tx3.outputs[0]
        if locked.issuer_info != self.terms.issuance or locked.amount != self.terms.equibit_amount:
            raise TermsMismatch("the locked equity does not match the agreed terms")
        verdict = equibit.submit(self.tx3, now, mine=mine)
        if not verdict:
            raise ChainRejected(verdict)
        self.state = SwapState.TX3_POSTED
        return verdict

    # -- steps 12..13: claims

    def claim_equibits(self, equibit: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        self._require(SwapState.TX3_POSTED)
        outpoint = (self.tx3.txid, 0)
        if equibit.is_spent(outpoint):
            raise AlreadyClaimed("the locked equity was already spent")
        tx = _solo_spend(
            equibit.state, outpoint, self.buyer, self._x, self.tx3.outputs[0].issuer_info
        )
        verdict = equibit.submit(tx, now, mine=mine)
        if not verdict:
            raise ChainRejected(verdict)
        self.state = SwapState.BUYER_CLAIMED
        return verdict

    def claim_payment(self, payment: Chain, equibit: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        if self.tx1 is None or self.state not in (
            SwapState.TX3_POSTED,
            SwapState.BUYER_CLAIMED,
            SwapState.REFUNDED_EQUIBIT,
        ):
            raise OutOfOrder(f"cannot claim the payment in state {self.state.value}")
        outpoint = (self.tx1.txid, 0)
        if payment.is_spent(outpoint):
            raise AlreadyClaimed("the locked payment was already spent")
        revealed = extract_preimage(equibit, (self.tx3.txid, 0))
        if revealed is None:
            raise NoPreimage("the secret has not been revealed on the equity chain")
        tx = _solo_spend(payment.state, outpoint, self.seller, revealed, None)
        verdict = payment.submit(tx, now, mine=mine)
        if not verdict:
            raise ChainRejected(verdict)
        self.state = SwapState.COMPLETED
        return verdict

    # -- refunds

    def refund_payment(self, payment: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        if self.tx2 is None or self.state in (SwapState.INIT, SwapState.TX2_COUNTERSIGNED):
            raise OutOfOrder("nothing public to refund on the payment chain")
        if payment.is_spent((self.tx1.txid, 0)):
            raise AlreadyClaimed("the locked payment was already spent")
        verdict = payment.submit(self.tx2, now, mine=mine)
        if not verdict:
            if verdict.reason is ledger.Reason.TIMELOCK_NOT_EXPIRED:
                raise TimelockNotExpired(verdict.detail)
            raise ChainRejected(verdict)
        self.refunded_payment = True
        self.state = SwapState.REFUNDED_PAYMENT
        return verdict

    def refund_equibits(self, equibit: Chain, now: int, mine: bool = True) -> ledger.Verdict:
        if self.tx4 is None or self.state in (
            SwapState.INIT,
            SwapState.TX2_COUNTERSIGNED,
            SwapState.TX1_POSTED,
            SwapState.TX4_COUNTERSIGNED,
        ):
            raise OutOfOrder("nothing public to refund on the equity chain")
        if equibit.is_spent((self.tx3.txid, 0)):
            raise AlreadyClaimed("the locked equity was already spent")
        verdict = equibit.submit(self.tx4, now, mine=mine)
        if not verdict:
            if verdict.reason is ledger.Reason.TIMELOCK_NOT_EXPIRED:
                raise TimelockNotExpired(verdict.detail)
            raise ChainRejected(verdict)
        self.refunded_equibit = True
        self.state = SwapState.REFUNDED_EQUIBIT
        return verdict

    def abort_clean(self):
        """Walk away before anything public was broadcast."""
        self._require(SwapState.INIT, SwapState.TX2_COUNTERSIGNED)
        self.state = SwapState.ABORTED_CLEAN

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "buyer": to_hex(self.buyer.address),
            "seller": to_hex(self.seller.address),
            "state": self.state.value,
            "hashlock": to_hex(self.h),
            "opened_at": self.t0,
            "payment_amount": self.terms.payment_amount,
            "equibit_amount": self.terms.equibit_amount,
            "security": self.terms.issuance.security_name if self.terms.issuance else None,
            "tx1": to_hex(self.tx1.txid) if self.tx1 is not None else None,
            "tx2": to_hex(self.tx2.txid) if self.tx2 is not None else None,
            "tx3": to_hex(self.tx3.txid) if self.tx3 is not None else None,
            "tx4": to_hex(self.tx4.txid) if self.tx4 is not None else None,
        }


def open_session(
    session_id: str,
    buyer: crypto.KeyPair,
    seller: crypto.KeyPair,
    terms: SwapTerms,
    now: int,
    seed: bytes,
    config: SwapConfig | None = None,
    buyer_passports: tuple[passport_mod.TrustEdge, ...] = (),
) -> SwapSession:
    """Step 1: the buyer draws the secret and publishes its hash to the session."""
    return SwapSession(
        session_id, buyer, seller, terms, now, seed, config, buyer_passports=buyer_passports
    )


# ---------------------------------------------------------------------------
# Exhaustive halt/refund schedule enumeration


HALT_LABELS = {
    1: "before step 1 (nothing agreed)",
    2: "before step 2 (secret drawn)",
    3: "before step 3 (payment lock built)",
    4: "before step 4 (payment refund built)",
    5: "before step 5 (refund sent to seller)",
    6: "before step 6 (refund countersigned)",
    7: "before step 7 (payment locked on chain)",
    8: "before step 8 (equity lock built)",
    9: "before step 9 (equity refund built)",
    10: "before step 10 (refund sent to buyer)",
    11: "before step 11 (refund countersigned)",
    12: "before step 12 (equity locked on chain)",
    13: "before step 13 (buyer claimed, secret public)",
    14: "completed",
}


@dataclass(frozen=True)
class ScheduleOutcome:
    halt_before_step: int
    offset_hours: int
    race: str
    terminal_state: str
    shape: str
    atomic: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "halt_before_step": self.halt_before_step,
            "halt": HALT_LABELS[self.halt_before_step],
            "offset_hours": self.offset_hours,
            "race": self.race,
            "terminal_state": self.terminal_state,
            "shape": self.shape,
            "atomic": self.atomic,
            "detail": self.detail,
        }


@dataclass
class ScheduleReport:
    outcomes: list[ScheduleOutcome] = field(default_factory=list)

    @property
    def terminal_count(self) -> int:
        return len(self.outcomes)

    @property
    def violations(self) -> list[ScheduleOutcome]:
        return [o for o in self.outcomes if not o.atomic]

    def to_json(self) -> dict:
        return {
            "terminal_states": self.terminal_count,
            "violations": len(self.violations),
            "outcomes": [o.to_json() for o in self.outcomes],
        }


@dataclass
class _Fixture:
    payment: Chain
    equibit: Chain
    session: SwapSession
    buyer: crypto.KeyPair
    seller: crypto.KeyPair
    issuance: ledger.IssuerInfo
    pre_payment_snapshot: bytes
    pre_equibit_snapshot: bytes
    initial_buyer_pay: int
    initial_seller_eq: int


def _build_fixture(seed: bytes, config: SwapConfig) -> _Fixture:
    buyer = crypto.keypair_from_seed(crypto.hash_bytes(b"swap-buyer:" + seed))
    seller = crypto.keypair_from_seed(crypto.hash_bytes(b"swap-seller:" + seed))
    # Capped supplies keep post-funding blocks from minting anything new, so
    # terminal balances compare exactly against the initial ones.
    payment = Chain(
        ledger.ChainState.genesis(
            ledger.ChainConfig(plain_units=True, block_subsidy=200, supply_cap=400)
        ),
        default_miner=buyer.address,
    )
    payment.mine_empty(now=1)
    payment.mine_empty(now=2)
    equibit = Chain(
        ledger.ChainState.genesis(ledger.ChainConfig(block_subsidy=50, supply_cap=100)),
        seller.address,
    )
    equibit.mine_empty(now=1)
    equibit.mine_empty(now=2)
    blanks = [op for op, _ in equibit.state.spendable(seller.address)]
    auth = ledger.authorize(
        equibit.state,
        blanks,
        seller,
        company_name="Crossing Ltd",
        company_domicile="CA",
        security_name="XCHG",
        security_type="CommonShares",
        restriction_level=0,
    )
    verdict = equibit.submit(auth, now=3)
    assert verdict.ok, verdict
    issuance = auth.outputs[0].issuer_info
    terms = SwapTerms(payment_amount=150, equibit_amount=60, issuance=issuance)
    session = open_session("sweep", buyer, seller, terms, now=10, seed=seed, config=config)
    return _Fixture(
        payment=payment,
        equibit=equibit,
        session=session,
        buyer=buyer,
        seller=seller,
        issuance=issuance,
        pre_payment_snapshot=payment.snapshot_bytes(),
        pre_equibit_snapshot=equibit.snapshot_bytes(),
        initial_buyer_pay=payment.state.balance(buyer.address),
        initial_seller_eq=equibit.state.balance(seller.address, issuance.issuance_key),
    )


def _run_steps(fx: _Fixture, upto_exclusive: int, now: int):
    """Execute protocol steps 1..upto_exclusive-1. Steps 4 and 9 are the
    off-chain handoffs and have no observable effect here."""
    s = fx.session
    steps = {
        2: lambda: s.build_tx1(fx.payment),
        3: lambda: s.build_tx2(),
        5: lambda: s.countersign_tx2(),
        6: lambda: s.post_tx1(fx.payment, now),
        7: lambda: s.build_tx3(fx.equibit),
        8: lambda: s.build_tx4(),
        10: lambda: s.countersign_tx4(),
        11: lambda: s.post_tx3(fx.equibit, now),
        12: lambda: s.claim_equibits(fx.equibit, now),
        13: lambda: s.claim_payment(fx.payment, fx.equibit, now),
    }
    for step in range(1, upto_exclusive):
        action = steps.get(step)
        if action is not None:
            action()


def _secret_is_public(fx: _Fixture) -> bool:
    x = fx.session._x
    public = fx.payment.snapshot_bytes() + fx.equibit.snapshot_bytes()
    return x.hex().encode() in public or x in public


def _available_moves(fx: _Fixture, now: int) -> dict[str, list[str]]:
    s = fx.session
    moves: dict[str, list[str]] = {"buyer": [], "seller": []}
    tx1_live = s.tx1 is not None and (s.tx1.txid, 0) in fx.payment.state.utxo
    tx3_live = s.tx3 is not None and (s.tx3.txid, 0) in fx.equibit.state.utxo
    tx1_posted = s.state not in (SwapState.INIT, SwapState.TX2_COUNTERSIGNED, SwapState.ABORTED_CLEAN)
    tx3_posted = s.tx3 is not None and s.tx3.txid in fx.equibit.state.tx_lookup
    if tx3_live and tx3_posted and s.state is SwapState.TX3_POSTED:
        moves["buyer"].append("claim_equibits")
    if tx1_live and tx1_posted and now >= s.payment_refund_time:
        moves["buyer"].append("refund_payment")
    if (
        tx1_live
        and tx1_posted
        and s.tx3 is not None
        and extract_preimage(fx.equibit, (s.tx3.txid, 0)) is not None
    ):
        moves["seller"].append("claim_payment")
    if tx3_live and tx3_posted and now >= s.equibit_refund_time:
        moves["seller"].append("refund_equibits")
    return moves


def _execute_move(fx: _Fixture, party: str, move: str, now: int):
    s = fx.session
    if move == "claim_equibits":
        s.claim_equibits(fx.equibit, now)
    elif move == "refund_payment":
        s.refund_payment(fx.payment, now)
    elif move == "claim_payment":
        s.claim_payment(fx.payment, fx.equibit, now)
    elif move == "refund_equibits":
        s.refund_equibits(fx.equibit, now)


def _settle(fx: _Fixture, now: int, order: tuple[str, str], had_recovery: dict[str, bool]):
    """Let both parties act greedily in ``order`` until nothing is available."""
    while True:
        acted = False
        for party in order:
            moves = _available_moves(fx, now)
            for other in ("buyer", "seller"):
                if moves[other]:
                    had_recovery[other] = True
            if moves[party]:
                _execute_move(fx, party, moves[party][0], now)
                acted = True
        if not acted:
            return


def _classify_terminal(fx: _Fixture, had_recovery: dict[str, bool]) -> tuple[str, bool, str]:
    s = fx.session
    buyer_pay = fx.payment.state.balance(fx.buyer.address)
    seller_pay = fx.payment.state.balance(fx.seller.address)
    buyer_eq = fx.equibit.state.balance(fx.buyer.address, fx.issuance.issuance_key)
    seller_eq = fx.equibit.state.balance(fx.seller.address, fx.issuance.issuance_key)
    locked_pay = s.tx1 is not None and not fx.payment.is_spent((s.tx1.txid, 0)) and (
        s.tx1.txid in fx.payment.state.tx_lookup
    )
    locked_eq = s.tx3 is not None and not fx.equibit.is_spent((s.tx3.txid, 0)) and (
        s.tx3.txid in fx.equibit.state.tx_lookup
    )
    if locked_pay or locked_eq:
        return ("stuck", False, "value still locked after the horizon settlement pass")

    p, e = fx.session.terms.payment_amount, fx.session.terms.equibit_amount
    untouched = (
        fx.payment.snapshot_bytes() == fx.pre_payment_snapshot
        and fx.equibit.snapshot_bytes() == fx.pre_equibit_snapshot
    )
    if untouched:
        return ("untouched", True, "both chains byte-identical to the pre-session snapshots")
    completed = (
        buyer_eq == e
        and seller_eq == fx.initial_seller_eq - e
        and seller_pay == p
        and buyer_pay == fx.initial_buyer_pay - p
    )
    if completed:
        return ("completed", True, "")
    unwound = (
        buyer_pay == fx.initial_buyer_pay
        and seller_eq == fx.initial_seller_eq
        and buyer_eq == 0
        and seller_pay == 0
    )
    if unwound:
        return ("unwound", True, "")
    buyer_whole = buyer_pay >= fx.initial_buyer_pay - p and (buyer_eq == e or buyer_pay == fx.initial_buyer_pay)
    seller_whole = seller_eq >= fx.initial_seller_eq - e and (seller_pay == p or seller_eq == fx.initial_seller_eq)
    if buyer_whole and not seller_whole:
        if had_recovery["seller"]:
            return ("negligence:seller", True, "the seller declined or lost an available recovery")
        return ("one-sided:buyer", False, "the buyer gained with no seller recovery path")
    if seller_whole and not buyer_whole:
        if had_recovery["buyer"]:
            return ("negligence:buyer", True, "the buyer declined or lost an available recovery")
        return ("one-sided:seller", False, "the seller gained with no buyer recovery path")
    return ("mixed", False, "unrecognized terminal allocation")


SETTLE_HORIZON = 100 * HOUR


def enumerate_schedules(
    config: SwapConfig | None = None,
    offsets_hours: tuple[int, ...] = (0, 23, 25, 47, 49),
    seed: bytes = b"schedule-sweep",
) -> ScheduleReport:
    """Drive a fresh trade to every halt point crossed with clock offsets and
    claim/refund races, then verify the recovery guarantee in each terminal.

    The secret must stay out of all public data until the buyer's claim; a
    violated guarantee surfaces as a non-atomic outcome in the report.
    """
    config = config or SwapConfig()
    report = ScheduleReport()
    for halt in range(1, 15):
        for offset in offsets_hours:
            for order in (("buyer", "seller"), ("seller", "buyer")):
                fx = _build_fixture(seed, config)
                now = fx.session.t0
                _run_steps(fx, halt, now)
                if halt < 13:  # the secret is revealed by step 12 (halt 13 means 12 ran)
                    assert not _secret_is_public(fx), "secret leaked before the claim"
                now = fx.session.t0 + offset * HOUR
                had_recovery = {"buyer": False, "seller": False}
                _settle(fx, now, order, had_recovery)
                horizon = fx.session.t0 + SETTLE_HORIZON
                _settle(fx, horizon, order, had_recovery)
                shape, atomic, detail = _classify_terminal(fx, had_recovery)
                report.outcomes.append(
                    ScheduleOutcome(
                        halt_before_step=halt,
                        offset_hours=offset,
                        race="-".join(order),
                        terminal_state=fx.session.state.value,
                        shape=shape,
                        atomic=atomic,
                        detail=detail,
                    )
                )
    return report
