import json
from pathlib import Path

import pytest

from equibit_sim import cli, simnet
from equibit_sim.canonical import DAY, canon_bytes

from test_simnet import LIFECYCLE_EVENTS, scenario


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "lifecycle.json"
    path.write_text(json.dumps(scenario(42, LIFECYCLE_EVENTS).to_json()))
    return path


def run_cli(argv):
    return cli.main(argv)


def test_run_writes_transcript_and_prints_digest(scenario_file, tmp_path, capsys):
    code = run_cli(["run", str(scenario_file), "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert code == 0
    assert "digest " in out
    transcript_path = tmp_path / "out" / "lifecycle.transcript.json"
    assert transcript_path.exists()
    doc = json.loads(transcript_path.read_text())
    digest = out.strip().splitlines()[-1].split()[-1]
    assert simnet.Transcript(**doc).digest == digest


def test_run_seed_override_changes_digest(scenario_file, tmp_path, capsys):
    run_cli(["run", str(scenario_file), "--out", str(tmp_path / "a")])
    base = capsys.readouterr().out.strip().splitlines()[-1]
    run_cli(["run", str(scenario_file), "--out", str(tmp_path / "b"), "--seed", "99"])
    other = capsys.readouterr().out.strip().splitlines()[-1]
    assert base != other


def test_run_env_out_dir(scenario_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("EQB_SIM_OUT", str(tmp_path / "env-out"))
    assert run_cli(["run", str(scenario_file)]) == 0
    capsys.readouterr()
    assert (tmp_path / "env-out" / "lifecycle.transcript.json").exists()


def test_run_double_spend_scenario_exits_zero(tmp_path, capsys):
    events = [
        (0, "alice", "mine_blanks", {"blocks": 2}),
        (1, "alice", "transfer", {"to": "bob", "amount": 30}),
        (2, "alice", "replay_last_tx", {}),
    ]
    path = tmp_path / "doublespend.json"
    path.write_text(json.dumps(scenario(3, events).to_json()))
    assert run_cli(["run", str(path), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "doublespend.transcript.json").read_text())
    rejections = [e for e in doc["events"] if e["result"].get("reason") == "DoubleSpend"]
    assert rejections  # the rejection is normal operation, recorded in the transcript


def test_run_malformed_scenario_exits_two(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"seed": "nope"}')
    assert run_cli(["run", str(path)]) == 2


def test_run_bad_script_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(scenario(1, [(0, "alice", "frobnicate", {})]).to_json()))
    assert run_cli(["run", str(path)]) == 2


def test_unknown_flag_is_an_error(scenario_file, capsys):
    assert run_cli(["run", str(scenario_file), "--frobnicate"]) == 2


@pytest.fixture
def transcript_file(scenario_file, tmp_path, capsys):
    run_cli(["run", str(scenario_file), "--out", str(tmp_path / "t")])
    capsys.readouterr()
    return tmp_path / "t" / "lifecycle.transcript.json"


def test_inspect_issuer_summary(transcript_file, capsys):
    assert run_cli(["inspect", str(transcript_file), "--query", "issuer-summary",
                    "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    summaries = list(doc["result"].values())
    assert summaries, "no issuer found"
    entry = summaries[0]["MILL"]
    assert entry["authorized"] == 150  # 3 blocks of 50, all authorized
    assert entry["at_origin"] + entry["circulating"] == 150


def test_inspect_authenticity_of_coinbase(transcript_file, capsys):
    doc = json.loads(transcript_file.read_text())
    block1 = doc["final"]["equibit"]["blocks"][1]
    from equibit_sim import ledger

    coinbase = ledger.EquibitOutput.from_json(block1["coinbase"], None)
    txid = ledger.coinbase_txid(block1["height"], coinbase)
    outpoint = f"{txid.hex()}:0"
    assert run_cli(["inspect", str(transcript_file), "--query", "authenticity",
                    "--outpoint", outpoint, "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["result"]["status"] == "Blank"


def test_inspect_holder_balances_matches_snapshot(transcript_file, capsys):
    doc = json.loads(transcript_file.read_text())
    # Resolve the issuer from the summary query instead of guessing.
    run_cli(["inspect", str(transcript_file), "--query", "issuer-summary", "--format", "json"])
    summary = json.loads(capsys.readouterr().out)["result"]
    issuer_hex = next(iter(summary))
    assert run_cli(["inspect", str(transcript_file), "--query", "holder-balances",
                    "--issuer", issuer_hex, "--security", "MILL", "--format", "json"]) == 0
    balances = json.loads(capsys.readouterr().out)["result"]
    from equibit_sim import governance, ledger
    from equibit_sim.canonical import from_hex

    state = ledger.ChainState.from_json(doc["final"]["equibit"])
    snapshot = governance.snapshot_holders(
        state, from_hex(issuer_hex), "MILL", state.tip.timestamp
    )
    assert balances == {addr.hex(): units for addr, units in snapshot.items()}


def test_inspect_book_at_time(transcript_file, capsys):
    assert run_cli(["inspect", str(transcript_file), "--query", "book",
                    "--at", str(4), "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["result"]["offers"]) == 1
    assert run_cli(["inspect", str(transcript_file), "--query", "book",
                    "--at", str(30 * DAY), "--format", "json"]) == 0
    late = json.loads(capsys.readouterr().out)
    assert late["result"]["offers"] == []


def test_inspect_swap_sessions(transcript_file, capsys):
    assert run_cli(["inspect", str(transcript_file), "--query", "swap-sessions",
                    "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["result"]["ask1"]["state"] == "Completed"


def test_inspect_json_is_canonical(transcript_file, capsys):
    run_cli(["inspect", str(transcript_file), "--query", "issuer-summary", "--format", "json"])
    raw = capsys.readouterr().out
    parsed = json.loads(raw)
    assert canon_bytes(parsed).decode() + "\n" == raw  # self-round-trip


def test_inspect_table_format(transcript_file, capsys):
    assert run_cli(["inspect", str(transcript_file), "--query", "issuer-summary"]) == 0
    out = capsys.readouterr().out
    assert "MILL" in out


def test_demo_swap_prints_thirteen_steps(capsys):
    assert run_cli(["demo", "swap"]) == 0
    out = capsys.readouterr().out
    for step in range(1, 14):
        assert f"step {step:>2}" in out
    assert "Completed" in out


def test_demo_poll_round_trip(capsys):
    assert run_cli(["demo", "poll"]) == 0
    out = capsys.readouterr().out
    assert "Question for our shareholders" in out
    assert "round trip identical: True" in out


def test_demo_passport(capsys):
    assert run_cli(["demo", "passport"]) == 0
    out = capsys.readouterr().out
    assert "degrees of trust separation from the issuer to the buyer: 2" in out
    assert "unreachable" in out


def test_demo_unknown(capsys):
    assert run_cli(["demo", "time-travel"]) == 2
