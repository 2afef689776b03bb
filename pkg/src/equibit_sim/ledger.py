"""The equity chain: blank units, issuer authorization, validation, blocks.

Units are UTXO outputs. A blank output (null issuer field) is fungible and
pays fees; an authorized output carries an IssuerInfo annotation signed by
the issuer, turning it into equity. Any holder may cancel authorized units
back to blank; nothing ever leaves the system.

Transactions split into a base portion (outpoints, amounts, owners, locks,
fee, locktime) and a witness (spend proofs, issuance annotations, presented
passports). The txid hashes the base only, so no witness change can ever
malleate an id, and blocks commit to two merkle roots: one over txids, one
over base-plus-witness. Dropping every witness leaves a smaller chain whose
transaction history still verifies.

States are values: validation and block production never mutate shared data.
The same machinery runs the payment chain used for cross-chain settlement
(``ChainConfig(plain_units=True)``) where issuer annotations are forbidden.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

from . import crypto, passport as passport_mod
from .canonical import canon_bytes, from_hex, to_hex
from .errors import EquibitError

SECURITY_TYPES = (
    "CommonShares",
    "PreferredShares",
    "TrustUnits",
    "FundUnits",
    "PartnershipUnits",
)

GENESIS_PREV_HASH = bytes(32)


class LedgerError(EquibitError):
    pass


class NonBlankInput(LedgerError):
    pass


class AlreadyBlank(LedgerError):
    pass


class EmptyAuthorization(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


class UnknownOutpoint(LedgerError):
    pass


class BlockValidationError(LedgerError):
    pass


# ---------------------------------------------------------------------------
# Issuer annotation


@dataclass(frozen=True)
class IssuerInfo:
    """The annotation that turns blank units into equity of one issuer.

    The authorization signature covers the descriptive fields, the issuer
    address, and the (amount, owner) pairs of the outputs being authorized,
    so it can only ever vouch for the issuance transaction that created the
    units. Downstream transfers carry the annotation unchanged; equality is
    byte-exact over all fields.
    """

    company_name: str
    company_domicile: str
    security_name: str
    security_type: str
    restriction_level: int
    issuer_address: bytes
    issuer_public_key: bytes
    authorization_signature: bytes

    def __post_init__(self):
        if self.security_type not in SECURITY_TYPES:
            raise LedgerError(f"unknown security type {self.security_type!r}")
        if self.restriction_level not in (0, 1, 2, 3):
            raise LedgerError(f"restriction level must be 0..3, got {self.restriction_level}")

    @cached_property
    def issuance_key(self) -> tuple[bytes, str]:
        """Identity of the issuance for bookkeeping: (issuer, security name)."""
        return (self.issuer_address, self.security_name)

    def to_json(self) -> dict:
        return {
            "company_name": self.company_name,
            "company_domicile": self.company_domicile,
            "security_name": self.security_name,
            "security_type": self.security_type,
            "restriction_level": self.restriction_level,
            "issuer_address": to_hex(self.issuer_address),
            "issuer_public_key": to_hex(self.issuer_public_key),
            "authorization_signature": to_hex(self.authorization_signature),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "IssuerInfo":
        return cls(
            company_name=doc["company_name"],
            company_domicile=doc["company_domicile"],
            security_name=doc["security_name"],
            security_type=doc["security_type"],
            restriction_level=int(doc["restriction_level"]),
            issuer_address=from_hex(doc["issuer_address"]),
            issuer_public_key=from_hex(doc["issuer_public_key"]),
            authorization_signature=from_hex(doc["authorization_signature"]),
        )


def authorization_payload(
    company_name: str,
    company_domicile: str,
    security_name: str,
    security_type: str,
    restriction_level: int,
    issuer_address: bytes,
    authorized_outputs: Sequence[tuple[int, bytes]],
) -> bytes:
    """Bytes the issuer signs: descriptive fields, issuer address, outputs."""
    return canon_bytes(
        {
            "company_name": company_name,
            "company_domicile": company_domicile,
            "security_name": security_name,
            "security_type": security_type,
            "restriction_level": restriction_level,
            "issuer_address": to_hex(issuer_address),
            "outputs": [[amount, to_hex(owner)] for amount, owner in authorized_outputs],
        }
    )


def authorization_signature_valid(
    info: IssuerInfo, authorized_outputs: Sequence[tuple[int, bytes]]
) -> bool:
    if crypto.address_of(info.issuer_public_key) != info.issuer_address:
        return False
    payload = authorization_payload(
        info.company_name,
        info.company_domicile,
        info.security_name,
        info.security_type,
        info.restriction_level,
        info.issuer_address,
        authorized_outputs,
    )
    try:
        return crypto.verify(info.issuer_public_key, payload, info.authorization_signature)
    except EquibitError:
        # Malformed embedded key material means the annotation cannot vouch
        # for anything; at this layer that is simply an invalid authorization.
        return False


# ---------------------------------------------------------------------------
# Spend conditions


@dataclass(frozen=True)
class HashlockOrBoth:
    """Spendable by (preimage of ``preimage_hash`` + solo claimant's signature)
    or by both pair members signing."""

    preimage_hash: bytes
    solo_claimant: bytes
    pair: tuple[bytes, bytes]

    def to_json(self) -> dict:
        return {
            "type": "hashlock_or_both",
            "hash": to_hex(self.preimage_hash),
            "solo": to_hex(self.solo_claimant),
            "pair": [to_hex(self.pair[0]), to_hex(self.pair[1])],
        }


@dataclass(frozen=True)
class TimelockedSingle:
    """Spendable by the beneficiary in blocks timestamped at or after ``not_before``."""

    beneficiary: bytes
    not_before: int

    def to_json(self) -> dict:
        return {
            "type": "timelocked_single",
            "beneficiary": to_hex(self.beneficiary),
            "not_before": self.not_before,
        }


Lock = HashlockOrBoth | TimelockedSingle | None


def lock_from_json(doc) -> Lock:
    if doc is None:
        return None
    if doc["type"] == "hashlock_or_both":
        return HashlockOrBoth(
            preimage_hash=from_hex(doc["hash"]),
            solo_claimant=from_hex(doc["solo"]),
            pair=(from_hex(doc["pair"][0]), from_hex(doc["pair"][1])),
        )
    if doc["type"] == "timelocked_single":
        return TimelockedSingle(beneficiary=from_hex(doc["beneficiary"]), not_before=int(doc["not_before"]))
    raise LedgerError(f"unknown lock type {doc['type']!r}")


# ---------------------------------------------------------------------------
# Transactions


@dataclass(frozen=True)
class EquibitOutput:
    amount: int
    owner_address: bytes
    issuer_info: IssuerInfo | None = None
    lock: Lock = None

    def base_json(self) -> dict:
        return {
            "amount": self.amount,
            "owner": to_hex(self.owner_address),
            "lock": self.lock.to_json() if self.lock is not None else None,
        }

    @classmethod
    def from_json(cls, base: Mapping, issuance) -> "EquibitOutput":
        return cls(
            amount=int(base["amount"]),
            owner_address=from_hex(base["owner"]),
            issuer_info=IssuerInfo.from_json(issuance) if issuance is not None else None,
            lock=lock_from_json(base["lock"]),
        )


@dataclass(frozen=True)
class TxInput:
    txid: bytes
    index: int

    def outpoint(self) -> tuple[bytes, int]:
        return (self.txid, self.index)

    def to_json(self) -> dict:
        return {"txid": to_hex(self.txid), "index": self.index}


@dataclass(frozen=True)
class SpendProof:
    """Witness data unlocking one input: (public key, signature) pairs and,
    for the solo hashlock branch, the revealed preimage."""

    signatures: tuple[tuple[bytes, bytes], ...]
    preimage: bytes | None = None

    def to_json(self) -> dict:
        return {
            "signatures": [[to_hex(pk), to_hex(sig)] for pk, sig in self.signatures],
            "preimage": to_hex(self.preimage) if self.preimage is not None else None,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "SpendProof":
        return cls(
            signatures=tuple((from_hex(pk), from_hex(sig)) for pk, sig in doc["signatures"]),
            preimage=from_hex(doc["preimage"]) if doc["preimage"] is not None else None,
        )


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[EquibitOutput, ...]
    proofs: tuple[SpendProof, ...] = ()
    fee: int = 0
    locktime: int = 0
    passports: tuple[passport_mod.TrustEdge, ...] = ()

    def base_json(self) -> dict:
        return {
            "inputs": [i.to_json() for i in self.inputs],
            "outputs": [o.base_json() for o in self.outputs],
            "fee": self.fee,
            "locktime": self.locktime,
        }

    def witness_json(self) -> dict:
        return {
            "proofs": [p.to_json() for p in self.proofs],
            "issuance": [
                o.issuer_info.to_json() if o.issuer_info is not None else None for o in self.outputs
            ],
            "passports": [p.to_json() for p in self.passports],
        }

    def base_bytes(self) -> bytes:
        return canon_bytes(self.base_json())

    def witness_bytes(self) -> bytes:
        return canon_bytes(self.witness_json())

    @cached_property
    def txid(self) -> bytes:
        """Hash of the base portion only; the witness never affects the txid."""
        return crypto.hash_bytes(self.base_bytes())

    def full_leaf(self) -> bytes:
        return crypto.hash_bytes(self.base_bytes() + self.witness_bytes())

    def sighash(self) -> bytes:
        return self.txid

    def to_json(self) -> dict:
        return {"base": self.base_json(), "witness": self.witness_json()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Transaction":
        base, witness = doc["base"], doc["witness"]
        outputs = tuple(
            EquibitOutput.from_json(o, iss) for o, iss in zip(base["outputs"], witness["issuance"])
        )
        return cls(
            inputs=tuple(TxInput(from_hex(i["txid"]), int(i["index"])) for i in base["inputs"]),
            outputs=outputs,
            proofs=tuple(SpendProof.from_json(p) for p in witness["proofs"]),
            fee=int(base["fee"]),
            locktime=int(base["locktime"]),
            passports=tuple(passport_mod.TrustEdge.from_json(p) for p in witness["passports"]),
        )


def signed(tx: Transaction, proofs: Sequence[SpendProof]) -> Transaction:
    """Attach spend proofs; the txid is unchanged because proofs are witness data."""
    return replace(tx, proofs=tuple(proofs))


# ---------------------------------------------------------------------------
# Blocks


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Pairwise-hash tree; empty list hashes to H(""), odd levels duplicate the tail."""
    if not leaves:
        return crypto.hash_bytes(b"")
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [crypto.hash_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    base_merkle_root: bytes
    full_merkle_root: bytes
    coinbase: EquibitOutput | None
    transactions: tuple[Transaction, ...]

    def header_json(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": to_hex(self.prev_hash),
            "timestamp": self.timestamp,
            "base_merkle_root": to_hex(self.base_merkle_root),
            "full_merkle_root": to_hex(self.full_merkle_root),
            "coinbase": self.coinbase.base_json() if self.coinbase is not None else None,
        }

    @cached_property
    def block_hash(self) -> bytes:
        return crypto.hash_bytes(canon_bytes(self.header_json()))

    def to_json(self) -> dict:
        doc = self.header_json()
        doc["transactions"] = [tx.to_json() for tx in self.transactions]
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "Block":
        coinbase = doc["coinbase"]
        return cls(
            height=int(doc["height"]),
            prev_hash=from_hex(doc["prev_hash"]),
            timestamp=int(doc["timestamp"]),
            base_merkle_root=from_hex(doc["base_merkle_root"]),
            full_merkle_root=from_hex(doc["full_merkle_root"]),
            coinbase=EquibitOutput.from_json(coinbase, None) if coinbase is not None else None,
            transactions=tuple(Transaction.from_json(t) for t in doc["transactions"]),
        )


def coinbase_txid(height: int, output: EquibitOutput) -> bytes:
    return crypto.hash_bytes(canon_bytes({"coinbase_height": height, "output": output.base_json()}))


# ---------------------------------------------------------------------------
# Chain state


@dataclass(frozen=True)
class ChainConfig:
    supply_cap: int = 1_000_000
    block_subsidy: int = 50
    plain_units: bool = False  # payment chain: issuer annotations forbidden

    def to_json(self) -> dict:
        return {
            "supply_cap": self.supply_cap,
            "block_subsidy": self.block_subsidy,
            "plain_units": self.plain_units,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ChainConfig":
        return cls(
            supply_cap=int(doc["supply_cap"]),
            block_subsidy=int(doc["block_subsidy"]),
            plain_units=bool(doc["plain_units"]),
        )


Outpoint = tuple[bytes, int]

ALL_CLASSES = object()  # sentinel: balance over every unit class


@dataclass(frozen=True)
class ChainState:
    """A chain tip as a value. connect_block returns a new state."""

    config: ChainConfig
    blocks: tuple[Block, ...]
    utxo: dict[Outpoint, EquibitOutput]
    issued_so_far: int
    tx_lookup: dict[bytes, tuple[int, Transaction]] = field(repr=False, default_factory=dict)
    spent_in: dict[Outpoint, bytes] = field(repr=False, default_factory=dict)

    @classmethod
    def genesis(cls, config: ChainConfig | None = None, timestamp: int = 0) -> "ChainState":
        config = config or ChainConfig()
        block = Block(
            height=0,
            prev_hash=GENESIS_PREV_HASH,
            timestamp=timestamp,
            base_merkle_root=merkle_root([]),
            full_merkle_root=merkle_root([]),
            coinbase=None,
            transactions=(),
        )
        return cls(config=config, blocks=(block,), utxo={}, issued_so_far=0)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def utxo_total(self) -> int:
        return sum(o.amount for o in self.utxo.values())

    def remaining_subsidy(self, requested: int) -> int:
        return max(0, min(requested, self.config.supply_cap - self.issued_so_far))

    def output_at(self, outpoint: Outpoint) -> EquibitOutput:
        """Resolve any historical outpoint, spent or not."""
        txid, index = outpoint
        found = self.tx_lookup.get(txid)
        if found is not None:
            _, tx = found
            if 0 <= index < len(tx.outputs):
                return tx.outputs[index]
            raise UnknownOutpoint(f"{to_hex(txid)}:{index}")
        for block in self.blocks:
            if block.coinbase is not None and coinbase_txid(block.height, block.coinbase) == txid:
                if index == 0:
                    return block.coinbase
                raise UnknownOutpoint(f"{to_hex(txid)}:{index}")
        raise UnknownOutpoint(f"{to_hex(txid)}:{index}")

    def balance(self, address: bytes, issuance_key=ALL_CLASSES) -> int:
        """Units owned by ``address``; pass ``None`` for blank units only, an
        issuance key for one security, or leave the default for everything."""
        total = 0
        for out in self.utxo.values():
            if out.owner_address != address:
                continue
            key = out.issuer_info.issuance_key if out.issuer_info is not None else None
            if issuance_key is not ALL_CLASSES and key != issuance_key:
                continue
            total += out.amount
        return total

    def spendable(self, address: bytes, issuance: IssuerInfo | None = None):
        """Standard-lock outputs owned by ``address`` carrying exactly ``issuance``."""
        picks = []
        for outpoint, out in self.utxo.items():
            if out.owner_address != address or out.lock is not None:
                continue
            if out.issuer_info != issuance:
                continue
            picks.append((outpoint, out))
        picks.sort(key=lambda item: (item[0][0], item[0][1]))
        return picks

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "blocks": [b.to_json() for b in self.blocks],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ChainState":
        """Rebuild by replaying every block through full validation."""
        state = cls.genesis(ChainConfig.from_json(doc["config"]), timestamp=int(doc["blocks"][0]["timestamp"]))
        genesis_block = Block.from_json(doc["blocks"][0])
        if genesis_block != state.tip:
            raise BlockValidationError("genesis block mismatch")
        for block_doc in doc["blocks"][1:]:
            state = connect_block(state, Block.from_json(block_doc))
        return state


# ---------------------------------------------------------------------------
# Validation


class Reason(enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    DOUBLE_SPEND = "DoubleSpend"
    CONSERVATION_VIOLATION = "ConservationViolation"
    FEE_NOT_BLANK = "FeeNotBlank"
    ISSUER_MISMATCH = "IssuerMismatch"
    RESTRICTION_VIOLATION = "RestrictionViolation"
    WRONG_PREIMAGE = "WrongPreimage"
    TIMELOCK_NOT_EXPIRED = "TimelockNotExpired"


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Reason | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = Verdict(True)


def _reject(reason: Reason, detail: str = "") -> Verdict:
    return Verdict(False, reason, detail)


def _check_spend_proof(out: EquibitOutput, proof: SpendProof, sighash: bytes, now: int) -> Verdict:
    sigs = proof.signatures
    addresses = []
    for pk, sig in sigs:
        try:
            if not crypto.verify(pk, sighash, sig):
                return _reject(Reason.BAD_SIGNATURE, "signature does not verify")
        except crypto.CryptoError as exc:
            return _reject(Reason.BAD_SIGNATURE, str(exc))
        addresses.append(crypto.address_of(pk))

    lock = out.lock
    if lock is None:
        if len(sigs) != 1 or addresses[0] != out.owner_address:
            return _reject(Reason.BAD_SIGNATURE, "spend not signed by the output owner")
        if proof.preimage is not None:
            return _reject(Reason.BAD_SIGNATURE, "unexpected preimage on a standard spend")
        return ACCEPT
    if isinstance(lock, HashlockOrBoth):
        if proof.preimage is not None:
            # Solo branch: preimage plus the solo claimant's signature.
            if crypto.hash_bytes(proof.preimage) != lock.preimage_hash:
                return _reject(Reason.WRONG_PREIMAGE, "preimage does not match the hashlock")
            if len(sigs) != 1 or addresses[0] != lock.solo_claimant:
                return _reject(Reason.BAD_SIGNATURE, "solo branch must be signed by the claimant")
            return ACCEPT
        # Both branch: one signature per pair member.
        if len(sigs) != 2 or set(addresses) != set(lock.pair):
            return _reject(Reason.BAD_SIGNATURE, "both pair members must sign")
        return ACCEPT
    if isinstance(lock, TimelockedSingle):
        if now < lock.not_before:
            return _reject(Reason.TIMELOCK_NOT_EXPIRED, f"locked until {lock.not_before}")
        if len(sigs) != 1 or addresses[0] != lock.beneficiary:
            return _reject(Reason.BAD_SIGNATURE, "must be signed by the beneficiary")
        return ACCEPT
    return _reject(Reason.BAD_SIGNATURE, "unknown lock type")


def _prior_holders(out: EquibitOutput) -> frozenset[bytes]:
    if isinstance(out.lock, HashlockOrBoth):
        return frozenset({out.lock.solo_claimant, *out.lock.pair})
    if isinstance(out.lock, TimelockedSingle):
        return frozenset({out.owner_address, out.lock.beneficiary})
    return frozenset({out.owner_address})


def validate_transaction(
    tx: Transaction,
    state: ChainState,
    passports: passport_mod.PassportDirectory | None = None,
    now: int | None = None,
    spent: set[Outpoint] | None = None,
) -> Verdict:
    """Full transaction validation against a chain tip.

    ``spent`` lets block assembly thread intra-block spends through.
    Restriction checks use the given passport directory extended by the
    passports embedded in the transaction witness, so any node can
    re-validate with no extra round trips.
    """
    now = state.tip.timestamp if now is None else now
    if not tx.inputs or not tx.outputs:
        return _reject(Reason.CONSERVATION_VIOLATION, "transaction needs inputs and outputs")
    if tx.fee < 0:
        return _reject(Reason.CONSERVATION_VIOLATION, "negative fee")
    if any(o.amount <= 0 for o in tx.outputs):
        return _reject(Reason.CONSERVATION_VIOLATION, "outputs must have positive amounts")
    if len(tx.proofs) != len(tx.inputs):
        return _reject(Reason.BAD_SIGNATURE, "one spend proof required per input")
    if now < tx.locktime:
        return _reject(Reason.TIMELOCK_NOT_EXPIRED, f"transaction locked until {tx.locktime}")

    seen: set[Outpoint] = set()
    resolved: list[EquibitOutput] = []
    for txin in tx.inputs:
        op = txin.outpoint()
        if op in seen:
            return _reject(Reason.DOUBLE_SPEND, "duplicate outpoint within the transaction")
        seen.add(op)
        if op not in state.utxo or (spent is not None and op in spent):
            return _reject(Reason.DOUBLE_SPEND, f"unknown or spent outpoint {to_hex(op[0])[:16]}:{op[1]}")
        resolved.append(state.utxo[op])

    sighash = tx.sighash()
    for out, proof in zip(resolved, tx.proofs):
        verdict = _check_spend_proof(out, proof, sighash, now)
        if not verdict:
            return verdict

    total_in = sum(o.amount for o in resolved)
    total_out = sum(o.amount for o in tx.outputs)
    if total_in != total_out + tx.fee:
        return _reject(
            Reason.CONSERVATION_VIOLATION,
            f"inputs {total_in} != outputs {total_out} + fee {tx.fee}",
        )

    if state.config.plain_units:
        if any(o.issuer_info is not None for o in tx.outputs):
            return _reject(Reason.ISSUER_MISMATCH, "issuer annotations are not valid on this chain")
    else:
        verdict = _check_issuer_flows(tx, resolved)
        if not verdict:
            return verdict

    blank_in = sum(o.amount for o in resolved if o.issuer_info is None)
    if tx.fee > blank_in:
        return _reject(Reason.FEE_NOT_BLANK, "fees must be covered by blank-unit inputs")

    if not state.config.plain_units:
        verdict = _check_restrictions(tx, resolved, passports, now)
        if not verdict:
            return verdict
    return ACCEPT


def _check_issuer_flows(tx: Transaction, resolved: Sequence[EquibitOutput]) -> Verdict:
    """Per-issuance value flow: equity may move, cancel to blank, or be newly
    authorized under a verifying signature; it may never change class."""
    in_by_class: dict[IssuerInfo, int] = {}
    for out in resolved:
        if out.issuer_info is not None:
            in_by_class[out.issuer_info] = in_by_class.get(out.issuer_info, 0) + out.amount
    out_by_class: dict[IssuerInfo, list[EquibitOutput]] = {}
    for out in tx.outputs:
        if out.issuer_info is not None:
            out_by_class.setdefault(out.issuer_info, []).append(out)

    for info, outs in out_by_class.items():
        created = sum(o.amount for o in outs) - in_by_class.get(info, 0)
        if created <= 0:
            continue  # pure transfer or partial cancellation of this class
        authorized = [(o.amount, o.owner_address) for o in outs]
        if not authorization_signature_valid(info, authorized):
            return _reject(
                Reason.ISSUER_MISMATCH,
                f"outputs claim {info.security_name!r} without a valid authorization",
            )
    return ACCEPT


def _check_restrictions(
    tx: Transaction,
    resolved: Sequence[EquibitOutput],
    passports: passport_mod.PassportDirectory | None,
    now: int,
) -> Verdict:
    directory = passports or passport_mod.PassportDirectory()
    if tx.passports:
        directory = directory.with_edges(tx.passports)

    holders_by_class: dict[IssuerInfo, set[bytes]] = {}
    for out in resolved:
        if out.issuer_info is not None:
            holders_by_class.setdefault(out.issuer_info, set()).update(_prior_holders(out))

    for out in tx.outputs:
        info = out.issuer_info
        if info is None or info.restriction_level == 0:
            continue
        receiver = out.lock.solo_claimant if isinstance(out.lock, HashlockOrBoth) else out.owner_address
        sellers = holders_by_class.get(info, {info.issuer_address})
        if receiver in sellers or receiver == info.issuer_address:
            continue  # change, unwind to a prior holder, or return to issuer
        verdict = passport_mod.validate_transfer(
            info.restriction_level, info.issuer_address, sellers, receiver, directory, now
        )
        if not verdict:
            return _reject(Reason.RESTRICTION_VIOLATION, verdict.detail)
    return ACCEPT


# ---------------------------------------------------------------------------
# Builders


def _sign_all(tx: Transaction, signer: crypto.KeyPair) -> Transaction:
    sighash = tx.sighash()
    proof = SpendProof(signatures=((signer.public_key, crypto.sign(signer.private_key, sighash)),))
    return signed(tx, [proof] * len(tx.inputs))


def select_outpoints(
    state: ChainState, owner: crypto.KeyPair, amount: int, issuance: IssuerInfo | None = None
) -> tuple[list[Outpoint], int]:
    """Pick spendable outpoints of one class covering ``amount``; returns (picks, total)."""
    picked: list[Outpoint] = []
    total = 0
    for outpoint, out in state.spendable(owner.address, issuance):
        picked.append(outpoint)
        total += out.amount
        if total >= amount:
            return picked, total
    raise InsufficientFunds(
        f"{to_hex(owner.address)[:16]} holds {total} of the needed {amount}"
    )


def make_transfer(
    state: ChainState,
    sender: crypto.KeyPair,
    recipient: bytes,
    amount: int,
    issuance: IssuerInfo | None = None,
    fee: int = 0,
    lock: Lock = None,
    locktime: int = 0,
    passports: Sequence[passport_mod.TrustEdge] = (),
) -> Transaction:
    """Standard transfer of ``amount`` units of one class, change back to sender.

    Fees always come from blank inputs, pulled in separately when the moved
    class is an issuance.
    """
    if amount <= 0:
        raise LedgerError("transfer amount must be positive")
    outputs = [EquibitOutput(amount, recipient, issuance, lock)]
    if issuance is None:
        outpoints, total = select_outpoints(state, sender, amount + fee)
        change = total - amount - fee
        if change > 0:
            outputs.append(EquibitOutput(change, sender.address))
    else:
        outpoints, total = select_outpoints(state, sender, amount, issuance)
        change = total - amount
        if change > 0:
            outputs.append(EquibitOutput(change, sender.address, issuance))
        if fee > 0:
            fee_points, fee_total = select_outpoints(state, sender, fee)
            outpoints += fee_points
            if fee_total > fee:
                outputs.append(EquibitOutput(fee_total - fee, sender.address))
    tx = Transaction(
        inputs=tuple(TxInput(*op) for op in outpoints),
        outputs=tuple(outputs),
        fee=fee,
        locktime=locktime,
        passports=tuple(passports),
    )
    return _sign_all(tx, sender)


def authorize(
    state: ChainState,
    blank_outpoints: Sequence[Outpoint],
    issuer: crypto.KeyPair,
    company_name: str,
    company_domicile: str,
    security_name: str,
    security_type: str,
    restriction_level: int,
    fee: int = 0,
) -> Transaction:
    """Sign blank units into equity of the issuer, paid to the issuer's address."""
    total = 0
    for outpoint in blank_outpoints:
        if outpoint not in state.utxo:
            raise UnknownOutpoint(f"{to_hex(outpoint[0])[:16]}:{outpoint[1]}")
        out = state.utxo[outpoint]
        if out.issuer_info is not None:
            raise NonBlankInput("authorization inputs must be blank units")
        if out.owner_address != issuer.address:
            raise LedgerError("authorization inputs must be owned by the issuer")
        total += out.amount
    issued_amount = total - fee
    if issued_amount <= 0:
        raise EmptyAuthorization("no units to authorize")
    authorized_outputs = [(issued_amount, issuer.address)]
    payload = authorization_payload(
        company_name,
        company_domicile,
        security_name,
        security_type,
        restriction_level,
        issuer.address,
        authorized_outputs,
    )
    info = IssuerInfo(
        company_name=company_name,
        company_domicile=company_domicile,
        security_name=security_name,
        security_type=security_type,
        restriction_level=restriction_level,
        issuer_address=issuer.address,
        issuer_public_key=issuer.public_key,
        authorization_signature=crypto.sign(issuer.private_key, payload),
    )
    tx = Transaction(
        inputs=tuple(TxInput(*op) for op in blank_outpoints),
        outputs=(EquibitOutput(issued_amount, issuer.address, info),),
        fee=fee,
    )
    return _sign_all(tx, issuer)


def cancel(
    state: ChainState,
    outpoints: Sequence[Outpoint],
    holder: crypto.KeyPair,
    fee: int = 0,
    blank_fee_outpoints: Sequence[Outpoint] = (),
) -> Transaction:
    """Overwrite the issuer field back to null; the blanks stay with the holder.

    A nonzero fee needs separate blank inputs: units canceled in the same
    transaction are not blank inputs yet.
    """
    total = 0
    for outpoint in outpoints:
        if outpoint not in state.utxo:
            raise UnknownOutpoint(f"{to_hex(outpoint[0])[:16]}:{outpoint[1]}")
        out = state.utxo[outpoint]
        if out.issuer_info is None:
            raise AlreadyBlank("input is already a blank unit")
        if out.owner_address != holder.address:
            raise LedgerError("cancellation inputs must be owned by the holder")
        total += out.amount
    blank_total = 0
    for outpoint in blank_fee_outpoints:
        blank_total += state.utxo[outpoint].amount
    if fee > blank_total:
        raise LedgerError("cancel fee must be covered by blank inputs")
    outputs = [EquibitOutput(total, holder.address)]
    if blank_total - fee > 0:
        outputs.append(EquibitOutput(blank_total - fee, holder.address))
    tx = Transaction(
        inputs=tuple(TxInput(*op) for op in tuple(outpoints) + tuple(blank_fee_outpoints)),
        outputs=tuple(outputs),
        fee=fee,
    )
    return _sign_all(tx, holder)


# ---------------------------------------------------------------------------
# Block production and connection


def produce_block(
    mempool: Sequence[Transaction],
    state: ChainState,
    miner_address: bytes,
    now: int,
    passports: passport_mod.PassportDirectory | None = None,
) -> Block:
    """Assemble the next block: transactions by descending fee then txid,
    coinbase = remaining subsidy plus collected fees, always blank."""
    ordered = sorted(mempool, key=lambda tx: (-tx.fee, tx.txid))
    included: list[Transaction] = []
    spent: set[Outpoint] = set()
    fees = 0
    for tx in ordered:
        if validate_transaction(tx, state, passports, now=now, spent=spent):
            included.append(tx)
            spent.update(i.outpoint() for i in tx.inputs)
            fees += tx.fee
    subsidy = state.remaining_subsidy(state.config.block_subsidy)
    reward = subsidy + fees
    coinbase = EquibitOutput(reward, miner_address) if reward > 0 else None
    txs = tuple(included)
    return Block(
        height=state.height + 1,
        prev_hash=state.tip.block_hash,
        timestamp=max(now, state.tip.timestamp),
        base_merkle_root=merkle_root([tx.txid for tx in txs]),
        full_merkle_root=merkle_root([tx.full_leaf() for tx in txs]),
        coinbase=coinbase,
        transactions=txs,
    )


def connect_block(
    state: ChainState,
    block: Block,
    passports: passport_mod.PassportDirectory | None = None,
    validate: bool = True,
) -> ChainState:
    """Append a block, returning the new state. ``validate=False`` exists for
    test fixtures that need to inject invalid history."""
    if validate:
        if block.height != state.height + 1:
            raise BlockValidationError(f"height {block.height}, expected {state.height + 1}")
        if block.prev_hash != state.tip.block_hash:
            raise BlockValidationError("prev_hash does not match the tip")
        if block.timestamp < state.tip.timestamp:
            raise BlockValidationError("timestamps must not go backwards")
        if block.base_merkle_root != merkle_root([tx.txid for tx in block.transactions]):
            raise BlockValidationError("base merkle root mismatch")
        if block.full_merkle_root != merkle_root([tx.full_leaf() for tx in block.transactions]):
            raise BlockValidationError("full merkle root mismatch")

    spent: set[Outpoint] = set()
    fees = 0
    for tx in block.transactions:
        if validate:
            verdict = validate_transaction(tx, state, passports, now=block.timestamp, spent=spent)
            if not verdict:
                raise BlockValidationError(f"invalid transaction: {verdict.reason.value} {verdict.detail}")
        spent.update(i.outpoint() for i in tx.inputs)
        fees += tx.fee

    subsidy = 0
    if block.coinbase is not None:
        if validate:
            if block.coinbase.issuer_info is not None:
                raise BlockValidationError("coinbase must be blank units")
            if block.coinbase.amount <= 0:
                raise BlockValidationError("coinbase amount must be positive")
        subsidy = block.coinbase.amount - fees
        if validate and not (0 <= subsidy <= state.remaining_subsidy(state.config.block_subsidy)):
            raise BlockValidationError("coinbase exceeds subsidy plus fees")

    utxo = dict(state.utxo)
    tx_lookup = dict(state.tx_lookup)
    spent_in = dict(state.spent_in)
    for tx in block.transactions:
        for txin in tx.inputs:
            utxo.pop(txin.outpoint(), None)
            spent_in[txin.outpoint()] = tx.txid
        for index, out in enumerate(tx.outputs):
            utxo[(tx.txid, index)] = out
        tx_lookup[tx.txid] = (block.height, tx)
    if block.coinbase is not None:
        utxo[(coinbase_txid(block.height, block.coinbase), 0)] = block.coinbase

    return ChainState(
        config=state.config,
        blocks=state.blocks + (block,),
        utxo=utxo,
        issued_so_far=state.issued_so_far + subsidy,
        tx_lookup=tx_lookup,
        spent_in=spent_in,
    )


# ---------------------------------------------------------------------------
# Authenticity


class Authenticity(enum.Enum):
    AUTHENTIC = "Authentic"
    FORGED = "Forged"
    BLANK = "Blank"


def verify_authenticity(outpoint: Outpoint, state: ChainState) -> Authenticity:
    """Trace an output's ancestry back to the authorization that created it.

    Blank outputs are blank. An annotated output is authentic when, following
    the flow of its exact issuance class backwards, it reaches a creation
    point whose authorization signature verifies over the outputs authorized
    there, with the annotation byte-identical along the way. Anything else,
    including annotations conjured without a verifying signature, is forged.
    """
    out = state.output_at(outpoint)
    if out.issuer_info is None:
        return Authenticity.BLANK
    memo: dict[Outpoint, Authenticity] = {}
    return _trace(state, outpoint, out.issuer_info, memo)


def _trace(state: ChainState, outpoint: Outpoint, info: IssuerInfo, memo) -> Authenticity:
    if outpoint in memo:
        return memo[outpoint]
    txid, _ = outpoint
    found = state.tx_lookup.get(txid)
    if found is None:
        # Coinbase outputs are blank by construction; one carrying an
        # annotation can only be an injected forgery.
        memo[outpoint] = Authenticity.FORGED
        return Authenticity.FORGED
    _, tx = found
    class_outs = [o for o in tx.outputs if o.issuer_info == info]
    out_total = sum(o.amount for o in class_outs)
    in_points = [
        txin.outpoint()
        for txin in tx.inputs
        if state.output_at(txin.outpoint()).issuer_info == info
    ]
    in_total = sum(state.output_at(op).amount for op in in_points)

    if out_total > in_total:
        # Creation point: the authorization signature decides.
        authorized = [(o.amount, o.owner_address) for o in class_outs]
        result = (
            Authenticity.AUTHENTIC
            if authorization_signature_valid(info, authorized)
            else Authenticity.FORGED
        )
    elif not in_points:
        result = Authenticity.FORGED
    else:
        result = Authenticity.AUTHENTIC
        for op in in_points:
            if _trace(state, op, info, memo) is not Authenticity.AUTHENTIC:
                result = Authenticity.FORGED
                break
    memo[outpoint] = result
    return result


def issuer_summary(state: ChainState, issuer_address: bytes) -> dict[str, dict[str, int]]:
    """Public-record bookkeeping per issuance of one issuer: total authorized,
    still at the originating address, and in circulation, counting only
    authentic units and net of cancellations."""
    totals: dict[str, dict[str, int]] = {}
    for block in state.blocks:
        for tx in block.transactions:
            in_by_class: dict[IssuerInfo, int] = {}
            for txin in tx.inputs:
                prior = state.output_at(txin.outpoint())
                if prior.issuer_info is not None:
                    in_by_class[prior.issuer_info] = (
                        in_by_class.get(prior.issuer_info, 0) + prior.amount
                    )
            out_by_class: dict[IssuerInfo, int] = {}
            for out in tx.outputs:
                if out.issuer_info is not None:
                    out_by_class[out.issuer_info] = out_by_class.get(out.issuer_info, 0) + out.amount
            for info in set(in_by_class) | set(out_by_class):
                if info.issuer_address != issuer_address:
                    continue
                entry = totals.setdefault(
                    info.security_name, {"authorized": 0, "at_origin": 0, "circulating": 0}
                )
                delta = out_by_class.get(info, 0) - in_by_class.get(info, 0)
                if delta > 0:
                    sample_index = next(
                        i for i, o in enumerate(tx.outputs) if o.issuer_info == info
                    )
                    if verify_authenticity((tx.txid, sample_index), state) is Authenticity.AUTHENTIC:
                        entry["authorized"] += delta
                elif delta < 0:
                    entry["authorized"] += delta  # cancellation recycles units
    for outpoint, out in state.utxo.items():
        info = out.issuer_info
        if info is None or info.issuer_address != issuer_address:
            continue
        if verify_authenticity(outpoint, state) is not Authenticity.AUTHENTIC:
            continue
        entry = totals.setdefault(
            info.security_name, {"authorized": 0, "at_origin": 0, "circulating": 0}
        )
        if out.owner_address == issuer_address:
            entry["at_origin"] += out.amount
        else:
            entry["circulating"] += out.amount
    return totals


# ---------------------------------------------------------------------------
# Witness pruning


@dataclass(frozen=True)
class PrunedChain:
    """Base portions and headers only: issuance data and signatures dropped."""

    config: ChainConfig
    headers: tuple[dict, ...]
    base_transactions: tuple[tuple[dict, ...], ...]
    tip_hash: bytes

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "headers": list(self.headers),
            "base_transactions": [list(txs) for txs in self.base_transactions],
            "tip_hash": to_hex(self.tip_hash),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "PrunedChain":
        return cls(
            config=ChainConfig.from_json(doc["config"]),
            headers=tuple(doc["headers"]),
            base_transactions=tuple(tuple(txs) for txs in doc["base_transactions"]),
            tip_hash=from_hex(doc["tip_hash"]),
        )

    def serialized_size(self) -> int:
        return len(canon_bytes(self.to_json()))


def prune_witness(state: ChainState) -> PrunedChain:
    headers = tuple(b.header_json() for b in state.blocks)
    base_txs = tuple(tuple(tx.base_json() for tx in b.transactions) for b in state.blocks)
    return PrunedChain(
        config=state.config,
        headers=headers,
        base_transactions=base_txs,
        tip_hash=state.tip.block_hash,
    )


def chain_serialized_size(state: ChainState) -> int:
    return len(canon_bytes(state.to_json()))


def verify_pruned(pruned: PrunedChain) -> bool:
    """Re-derive every base merkle root, header link, and the value flow of
    the base transactions. Signatures are gone; history still has to cohere."""
    try:
        prev_hash = None
        utxo: dict[Outpoint, int] = {}
        issued = 0
        for height, (header, base_txs) in enumerate(zip(pruned.headers, pruned.base_transactions)):
            if header["height"] != height:
                return False
            if height == 0:
                if from_hex(header["prev_hash"]) != GENESIS_PREV_HASH:
                    return False
            elif from_hex(header["prev_hash"]) != prev_hash:
                return False
            txids = []
            fees = 0
            for base in base_txs:
                base_bytes = canon_bytes(base)
                txid = crypto.hash_bytes(base_bytes)
                txids.append(txid)
                total_in = 0
                for txin in base["inputs"]:
                    op = (from_hex(txin["txid"]), int(txin["index"]))
                    if op not in utxo:
                        return False
                    total_in += utxo.pop(op)
                total_out = 0
                for index, out in enumerate(base["outputs"]):
                    amount = int(out["amount"])
                    if amount <= 0:
                        return False
                    utxo[(txid, index)] = amount
                    total_out += amount
                fee = int(base["fee"])
                if fee < 0 or total_in != total_out + fee:
                    return False
                fees += fee
            if from_hex(header["base_merkle_root"]) != merkle_root(txids):
                return False
            coinbase = header["coinbase"]
            if coinbase is not None:
                amount = int(coinbase["amount"])
                if amount <= 0:
                    return False
                subsidy = amount - fees
                if subsidy < 0 or issued + subsidy > pruned.config.supply_cap:
                    return False
                issued += subsidy
                cb_out = EquibitOutput.from_json(coinbase, None)
                utxo[(coinbase_txid(height, cb_out), 0)] = amount
            prev_hash = crypto.hash_bytes(canon_bytes(header))
        return prev_hash == pruned.tip_hash
    except (KeyError, ValueError, TypeError, IndexError, LedgerError):
        return False
