"""Shared builders for chain-backed tests."""

import pytest

from equibit_sim import ledger
from equibit_sim.crypto import hash_bytes, keypair_from_seed


def actor(label: str):
    return keypair_from_seed(hash_bytes(b"actor:" + label.encode()))


def mine(state, miner_address, blocks=1, now=None):
    """Append empty blocks paying the subsidy to one miner."""
    for _ in range(blocks):
        ts = state.tip.timestamp + 1 if now is None else now
        block = ledger.produce_block([], state, miner_address, now=ts)
        state = ledger.connect_block(state, block)
    return state


def submit(state, tx, miner_address=None, now=None, passports=None):
    """Validate, mine into a block, and connect; returns (verdict, new_state)."""
    ts = state.tip.timestamp + 1 if now is None else now
    verdict = ledger.validate_transaction(tx, state, passports, now=ts)
    if not verdict:
        return verdict, state
    miner = miner_address if miner_address is not None else actor("default-miner").address
    block = ledger.produce_block([tx], state, miner, now=ts, passports=passports)
    return verdict, ledger.connect_block(state, block, passports=passports)


def fund(state, kp, blocks=3):
    return mine(state, kp.address, blocks=blocks)


@pytest.fixture
def fresh_chain():
    return ledger.ChainState.genesis(ledger.ChainConfig())


def default_issuance_fields(**overrides):
    fields = {
        "company_name": "Apex Robotics Ltd",
        "company_domicile": "CA",
        "security_name": "APEX-A",
        "security_type": "CommonShares",
        "restriction_level": 0,
    }
    fields.update(overrides)
    return fields


def authorize_issuance(state, issuer, amount_blocks=3, fee=0, **overrides):
    """Mine blanks to the issuer and authorize them; returns (state, issuance)."""
    state = fund(state, issuer, blocks=amount_blocks)
    outpoints = [op for op, _ in state.spendable(issuer.address)]
    tx = ledger.authorize(
        state, outpoints, issuer, fee=fee, **default_issuance_fields(**overrides)
    )
    verdict, state = submit(state, tx)
    assert verdict.ok, verdict
    issued = next(o for o in tx.outputs if o.issuer_info is not None)
    return state, issued.issuer_info
