import csv
import io
import json

import pytest

from conftest import NOW
from tpaudit.cli import EXIT_CODES, main, parse_size

ID = ["--client", "alice", "--motherboard", "MB-1", "--disk", "DSK-9", "--password", "hunter2"]
QA = ["--qa", "pet=rex", "--qa", "city=oslo", "--qa", "color=blue"]


@pytest.fixture
def run(tmp_path, capsys):
    ws = str(tmp_path / "ws")

    def _run(*args, minute=NOW.epoch_minute):
        code = main(["--workspace", ws, "--epoch-minute", str(minute), *args])
        out = capsys.readouterr()
        return code, out.out, out.err

    _run("init", "--seed", "5", "--admin-token", "adm")
    _run.ws = tmp_path / "ws"
    return _run


def _token(out):
    return next(line.split()[1] for line in out.splitlines() if line.startswith("token "))


def test_exit_codes_are_distinct_per_protocol_outcome():
    protocol = ["mismatch", "expired", "access_denied", "unknown_client", "replay", "already_registered",
                "stale_key", "unauthorized", "bad_token", "unknown_file", "conflict", "chain_invalid",
                "checksum_mismatch", "descriptor_mismatch", "timestamp_mismatch"]
    codes = [EXIT_CODES[c] for c in protocol]
    assert len(set(codes)) == len(codes) and 0 not in codes


def test_register_login_replay_mismatch(run):
    assert run("register", *ID, *QA)[0] == 0
    code, out, _ = run("login", *ID)
    assert code == 0 and "granted" in out
    assert run("login", *ID)[0] == EXIT_CODES["replay"]
    bad = ID[:-1] + ["hunter3"]
    assert run("login", *bad, minute=NOW.epoch_minute + 1)[0] == EXIT_CODES["mismatch"]
    assert run("register", *ID, *QA)[0] == EXIT_CODES["already_registered"]
    assert run("login", "--client", "bob", *ID[2:])[0] == EXIT_CODES["unknown_client"]


def test_register_needs_three_pairs(run):
    assert run("register", *ID, "--qa", "a=b")[0] == EXIT_CODES["parameter_error"]
    assert run("register", *ID, "--qa", "nonsense")[0] == EXIT_CODES["parameter_error"]


def test_upload_audit_reaudit(run, tmp_path):
    run("register", *ID, *QA)
    token = _token(run("login", *ID)[1])
    f = tmp_path / "report.bin"
    f.write_bytes(bytes(range(256)) * 40)
    assert run("upload", "--token", token, "--file", str(f))[0] == 0
    code, out, _ = run("audit", "--token", token, "--file", "report.bin", "--blocks", "2")
    assert code == 0 and out.startswith("report.bin,pass,")
    assert run("audit", "--file", "report.bin")[0] == EXIT_CODES["bad_token"]
    assert run("audit", "--token", "ff" * 32, "--file", "report.bin")[0] == EXIT_CODES["bad_token"]
    assert run("audit", "--token", token, "--file", "nope")[0] == EXIT_CODES["unknown_file"]
    assert run("upload", "--token", token, "--file", str(f))[0] == EXIT_CODES["conflict"]
    stored = run.ws / "store" / "report.bin.bin"
    data = bytearray(stored.read_bytes())
    data[-1] ^= 0xFF
    stored.write_bytes(bytes(data))
    code, out, _ = run("reaudit", "--token", token, "--file", "report.bin")
    assert code == EXIT_CODES["checksum_mismatch"] and out.split(",")[2] == "2"
    rows = list(csv.reader((run.ws / "audits.csv").open()))
    assert rows[0] == ["at", "op", "file_id", "auditor", "status", "failing", "duration_us"]
    assert [r[1] for r in rows[1:]] == ["upload", "audit", "reaudit"]


def test_verify_ledger(run):
    run("register", *ID, *QA)
    run("login", *ID)
    code, out, _ = run("verify-ledger")
    assert code == 0 and out.startswith("valid")
    chain = run.ws / "ledger.chain"
    raw = bytearray(chain.read_bytes())
    pos = len(raw) // 2
    raw[pos] ^= 0x04
    chain.write_bytes(bytes(raw))
    code, out, _ = run("verify-ledger")
    assert code == EXIT_CODES["chain_invalid"]
    assert out.strip() == f"invalid: first bad block {bytes(raw[:pos]).count(10)}"


def test_revoke_and_recover(run):
    run("register", *ID, *QA)
    assert run("revoke", "--client", "alice", "--admin-token", "bad")[0] == EXIT_CODES["unauthorized"]
    assert run("revoke", "--client", "alice", "--admin-token", "adm")[0] == 0
    assert run("login", *ID)[0] == EXIT_CODES["access_denied"]
    assert run("recover", "--client", "alice", "--answer", "rex", "--answer", "x", "--answer", "blue")[0] \
        == EXIT_CODES["rejected"]
    code, out, _ = run("recover", "--client", "alice", "--answer", "Rex", "--answer", "oslo",
                       "--answer", "blue", "--new-password", "n3w")
    assert code == 0 and "password reset" in out


def test_stale_controller_key(run):
    run("register", *ID, *QA)
    later = NOW.epoch_minute + 91 * 1440
    assert run("login", *ID, minute=later)[0] == EXIT_CODES["stale_key"]


def test_sentinel_report(run):
    code, out, _ = run("sentinel-report")
    assert code == 0 and out.splitlines() == ["auditor_id,status,color,aggregate_deviation,record_count"]


def test_env_overrides(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TPAUDIT_WORKSPACE", str(tmp_path / "envws"))
    monkeypatch.setenv("TPAUDIT_EPOCH_MINUTE", str(NOW.epoch_minute))
    assert main(["init", "--seed", "1"]) == 0
    assert (tmp_path / "envws" / "controller.key").exists()
    monkeypatch.setenv("TPAUDIT_CLIENT", "alice")
    monkeypatch.setenv("TPAUDIT_MOTHERBOARD", "MB")
    monkeypatch.setenv("TPAUDIT_DISK", "D")
    monkeypatch.setenv("TPAUDIT_PASSWORD", "pw")
    assert main(["register", *QA]) == 0
    assert main(["login"]) == 0


def test_bench_sizes(capsys):
    assert main(["bench", "--sizes", "100KB,500KB"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["size_bytes", "seconds", "reference_bound_500kb_s"]
    assert [int(r[0]) for r in rows[1:]] == [100_000, 500_000]
    assert float(rows[2][1]) < 0.40


def test_bench_blocks(capsys, tmp_path):
    assert main(["bench", "--blocks", "1,4,16", "--out", str(tmp_path / "b")]) == 0
    rows = list(csv.reader((tmp_path / "b" / "transfer.csv").open()))
    assert rows[0] == ["blocks", "upload_ms", "download_ms", "reference_download_overhead_s"]
    ups = [int(r[1]) for r in rows[1:]]
    assert ups == sorted(ups) and all(int(r[2]) >= int(r[1]) for r in rows[1:])


def test_parse_size():
    assert parse_size("100KB") == 100_000
    assert parse_size("2MB") == 2_000_000
    assert parse_size("77") == 77


def test_scenario_suite_and_script(capsys, tmp_path):
    assert main(["scenario", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "baseline/honest: registered granted" in out
    assert "auditor-4,blacklisted" in out
    script = tmp_path / "s.jsonl"
    script.write_text('{"time":0,"actor":"c","event":"register","payload":{"client_id":"a","motherboard":"m",'
                      '"disk":"d","password":"p","questions":[["a","1"],["b","2"],["c","3"]]}}\n'
                      '{"time":1000,"actor":"c","event":"login","payload":{"client_id":"a"}}\n')
    assert main(["scenario", "--script", str(script), "--skew", "a=-3"]) == 0
    trace = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [t["payload"]["status"] for t in trace if t["event"] == "outcome"] == ["registered", "expired"]
    script.write_text('{"time":0,"actor":"c","event":"teleport","payload":{}}\n')
    assert main(["scenario", "--script", str(script)]) == EXIT_CODES["malformed_script"]


def test_uninitialized_workspace(tmp_path, capsys):
    code = main(["--workspace", str(tmp_path / "none"), "verify-ledger"])
    assert code == EXIT_CODES["parameter_error"]


def test_scenario_bundled_script_name(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["scenario", "--script", "replay", "--seed", "2"]) == 0
    trace = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [t["payload"]["status"] for t in trace if t["event"] == "outcome"][-2:] == ["granted", "replay"]
