"""Command-line entry point.

Runs against a local workspace by default, or a running service with
``--server``. Every flag can also be set through an environment variable
named ``TPAUDIT_<FLAG>`` (``--admin-token`` -> ``TPAUDIT_ADMIN_TOKEN``).

Exit codes are listed in ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import base64
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import netsim
from .client import LocalBackend, RemoteBackend, login_request, registration_request
from .errors import AuditError, ChainInvalid
from .keyforge import DeviceIdentity, MinuteStamp
from .schemas import AuditRequest, ReauditRequest, RecoverRequest, RevokeRequest, UploadRequest
from .workspace import ENV_PREFIX, init_workspace

EXIT_CODES = {
    "ok": 0,
    "usage": 2,
    "error": 1,
    "mismatch": 10,
    "expired": 11,
    "access_denied": 12,
    "unknown_client": 13,
    "replay": 14,
    "already_registered": 15,
    "invalid_identity": 16,
    "zero_case": 16,
    "stale_key": 17,
    "unauthorized": 18,
    "rejected": 19,
    "bad_token": 20,
    "unknown_file": 21,
    "conflict": 22,
    "empty_file": 23,
    "parameter_error": 24,
    "message_too_large": 24,
    "chain_invalid": 30,
    "checksum_mismatch": 40,
    "descriptor_mismatch": 41,
    "timestamp_mismatch": 42,
    "malformed_script": 50,
    "insufficient_data": 51,
    "degenerate_model": 51,
}
ENCRYPT_HEADER = ("size_bytes", "seconds", "reference_bound_500kb_s")
TRANSFER_HEADER = ("blocks", "upload_ms", "download_ms", "reference_download_overhead_s")
REFERENCE_500KB_BOUND_S = 0.40


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def parse_size(text: str) -> int:
    t = text.strip().upper()
    for suffix, mult in (("KB", 1000), ("MB", 1000_000), ("B", 1)):
        if t.endswith(suffix):
            return int(float(t[: -len(suffix)]) * mult)
    return int(t)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpaudit", description=__doc__.splitlines()[0])
    p.add_argument("--workspace", default=_env("workspace", "tpaudit-ws"))
    p.add_argument("--config", default=_env("config"))
    p.add_argument("--server", default=_env("server"), help="base URL of a running service")
    p.add_argument("--epoch-minute", type=int, default=_env("epoch_minute"),
                   help="pin the clock (UTC minutes since epoch)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def identity_flags(sp):
        sp.add_argument("--client", default=_env("client"), required=_env("client") is None)
        sp.add_argument("--motherboard", default=_env("motherboard"), required=_env("motherboard") is None)
        sp.add_argument("--disk", default=_env("disk"), required=_env("disk") is None)
        sp.add_argument("--password", default=_env("password"), required=_env("password") is None)

    sp = sub.add_parser("init", help="create a workspace")
    sp.add_argument("--seed", type=int, default=_env("seed"))
    sp.add_argument("--admin-token", default=_env("admin_token"))

    sp = sub.add_parser("register", help="register a client identity")
    identity_flags(sp)
    sp.add_argument("--qa", action="append", default=[], metavar="QUESTION=ANSWER",
                    help="security question and answer; give exactly three")

    sp = sub.add_parser("login", help="log in and print a session token")
    identity_flags(sp)

    sp = sub.add_parser("revoke", help="deny a client's access rights")
    sp.add_argument("--client", default=_env("client"), required=True)
    sp.add_argument("--admin-token", default=_env("admin_token"), required=_env("admin_token") is None)

    sp = sub.add_parser("recover", help="answer security questions, optionally set a new password")
    sp.add_argument("--client", default=_env("client"), required=True)
    sp.add_argument("--answer", action="append", default=[])
    sp.add_argument("--new-password")

    sp = sub.add_parser("upload", help="store a file and record its checksums")
    sp.add_argument("--token", default=_env("token"))
    sp.add_argument("--file", required=True, help="path of the file to upload")
    sp.add_argument("--file-id")

    for name in ("audit", "reaudit"):
        sp = sub.add_parser(name, help=f"{name} a stored file")
        sp.add_argument("--token", default=_env("token"))
        sp.add_argument("--file", required=True, help="file id")
        if name == "audit":
            sp.add_argument("--blocks", type=int, help="number of blocks to challenge (default all)")
            sp.add_argument("--seed", type=int, default=int(_env("seed", 0)))
            sp.add_argument("--auditor", default=_env("auditor", "tpa"))

    sub.add_parser("verify-ledger", help="re-verify the persisted hash chain")
    sub.add_parser("sentinel-report", help="score auditors and emit a CSV report")

    sp = sub.add_parser("bench", help="encryption and transfer benchmarks as CSV")
    sp.add_argument("--sizes", default=_env("sizes"), help="e.g. 100KB,500KB")
    sp.add_argument("--blocks", default=_env("blocks"), help="e.g. 1,2,4,8")
    sp.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    sp.add_argument("--out", help="directory for encrypt.csv / transfer.csv")

    sp = sub.add_parser("scenario", help="run simulated protocol scenarios")
    sp.add_argument("--script", help="scenario file or bundled script name; default: bundled suite")
    sp.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    sp.add_argument("--skew", action="append", default=[], metavar="NODE=MINUTES")
    sp.add_argument("--drop", type=float, default=0.0)
    sp.add_argument("--out", help="directory for suite artifacts")

    sp = sub.add_parser("serve", help="run the HTTP service over the workspace")
    sp.add_argument("--host", default=_env("host", "127.0.0.1"))
    sp.add_argument("--port", type=int, default=int(_env("port", 8080)))
    return p


def _backend(args):
    if args.server:
        return RemoteBackend(args.server)
    return LocalBackend(args.workspace, _clock(args), args.config)


def _clock(args) -> MinuteStamp | None:
    return MinuteStamp(int(args.epoch_minute)) if args.epoch_minute is not None else None


def _identity(args) -> DeviceIdentity:
    return DeviceIdentity(args.motherboard, args.disk, args.password)


def _require_token(args) -> str:
    if not args.token:
        raise _Exit("bad_token", "a session token is required (--token)")
    return args.token


class _Exit(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def cmd_init(args) -> str:
    config = {}
    if args.seed is not None:
        config["seed"] = args.seed
    if args.admin_token:
        config["admin_token"] = args.admin_token
    clock = _clock(args)
    root = init_workspace(args.workspace, config, today=clock.epoch_minute // 1440 if clock else None)
    print(f"workspace ready at {root}")
    return "ok"


def cmd_register(args) -> str:
    pairs = []
    for item in args.qa:
        q, sep, a = item.partition("=")
        if not sep:
            raise _Exit("parameter_error", f"--qa expects QUESTION=ANSWER, got {item!r}")
        pairs.append((q, a))
    resp = _backend(args).register(registration_request(args.client, _identity(args), pairs))
    print(f"registered {resp.client_id} (access {resp.access_rights})")
    return "ok"


def cmd_login(args) -> str:
    backend = _backend(args)
    key = backend.public_key()
    now = _clock(args) or MinuteStamp.now()
    resp = backend.login(login_request(args.client, _identity(args), key, now))
    print(f"{resp.status}")
    if resp.session_token:
        print(f"token {resp.session_token}")
    return "ok" if resp.status == "granted" else resp.status


def cmd_revoke(args) -> str:
    resp = _backend(args).revoke(RevokeRequest(client_id=args.client, admin_token=args.admin_token))
    print(f"{resp.client_id} access {resp.access_rights}")
    return "ok"


def cmd_recover(args) -> str:
    from .keyforge import encode_ascii

    new = str(encode_ascii(args.new_password)) if args.new_password else None
    resp = _backend(args).recover(RecoverRequest(client_id=args.client, answers=args.answer, new_pwd_num=new))
    print(resp.status + (" (password reset)" if resp.password_reset else ""))
    return "ok" if resp.status == "accepted" else "rejected"


def cmd_upload(args) -> str:
    token = _require_token(args)
    path = Path(args.file)
    payload = path.read_bytes()
    resp = _backend(args).upload(UploadRequest(token=token, file_id=args.file_id or path.name, name=path.name,
                                               payload_b64=base64.b64encode(payload).decode("ascii")))
    print(f"stored {resp.file_id}: {resp.block_count} blocks, checksum {resp.file_checksum}")
    return "ok"


def _print_verdict(resp) -> str:
    failing = " ".join(map(str, resp.failing_indices))
    print(f"{resp.file_id},{resp.status},{failing},{resp.duration_us}")
    if resp.ledger_bad_block is not None:
        print(f"warning: ledger chain invalid at block {resp.ledger_bad_block}; verdict not logged",
              file=sys.stderr)
    return "ok" if resp.status == "pass" else resp.status


def cmd_audit(args) -> str:
    token = _require_token(args)
    return _print_verdict(_backend(args).audit(AuditRequest(
        token=token, file_id=args.file, count=args.blocks, seed=args.seed, auditor=args.auditor)))


def cmd_reaudit(args) -> str:
    token = _require_token(args)
    return _print_verdict(_backend(args).reaudit(ReauditRequest(token=token, file_id=args.file)))


def cmd_verify_ledger(args) -> str:
    resp = _backend(args).verify_ledger()
    if resp.valid:
        print(f"valid ({resp.blocks} blocks)")
        return "ok"
    print(f"invalid: first bad block {resp.first_bad_block}")
    return "chain_invalid"


def cmd_sentinel_report(args) -> str:
    resp = _backend(args).sentinel_report()
    sys.stdout.write(resp.csv)
    for aid in resp.newly_blacklisted:
        print(f"blacklisted {aid}", file=sys.stderr)
    for fid, status in resp.reaudits.items():
        print(f"reaudit {fid}: {status}", file=sys.stderr)
    return "ok"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_bench(args) -> str:
    sizes = [parse_size(s) for s in args.sizes.split(",")] if args.sizes else None
    blocks = _int_list(args.blocks) if args.blocks else None
    if sizes is None and blocks is None:
        sizes = [100_000, 200_000, 300_000, 400_000, 500_000]
        blocks = [1, 2, 4, 8, 16, 32, 64]
    outputs = {}
    if sizes:
        rows = [(n, f"{t:.6f}", REFERENCE_500KB_BOUND_S) for n, t in netsim.bench_encrypt(sizes, seed=args.seed)]
        outputs["encrypt.csv"] = _csv(ENCRYPT_HEADER, rows)
    if blocks:
        rows = [(n, up, down, netsim.REFERENCE_DOWNLOAD_OVERHEAD_S)
                for n, up, down in netsim.bench_transfer(blocks, netsim.SimConfig(seed=args.seed))]
        outputs["transfer.csv"] = _csv(TRANSFER_HEADER, rows)
    _emit(outputs, args.out)
    return "ok"


def _emit(outputs: dict[str, str], out: str | None) -> None:
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            (d / name).write_text(text)
            print(d / name)
    else:
        sys.stdout.write("\n".join(outputs.values()))


def cmd_scenario(args) -> str:
    if args.script:
        skew = {}
        for item in args.skew:
            node, _, minutes = item.partition("=")
            skew[node] = int(minutes)
        cfg = netsim.SimConfig(seed=args.seed, clock_skew=skew, drop_probability=args.drop)
        path = Path(args.script)
        bundled = netsim.standard_scripts()
        if not path.exists() and args.script in bundled:
            script = bundled[args.script]
        else:
            script = path.read_text()
        result = netsim.run_scenario(script, cfg)
        outputs = {"trace.jsonl": result.serialize_trace(),
                   "ledger.chain": result.ledger.serialize().decode("ascii"),
                   "states.json": json.dumps(result.states, sort_keys=True) + "\n"}
        if args.out:
            _emit(outputs, args.out)
        else:
            sys.stdout.write(outputs["trace.jsonl"])
        return "ok"
    suite = netsim.run_suite(args.seed)
    if args.out:
        _emit({name.replace("/", "__") + ".txt": text for name, text in suite.items()}, args.out)
    else:
        for name in sorted(suite):
            if name.endswith("/trace"):
                outcomes = [json.loads(line)["payload"]["status"]
                            for line in suite[name].splitlines() if '"event":"outcome"' in line]
                print(f"{name.rsplit('/', 1)[0]}: {' '.join(outcomes)}")
        sys.stdout.write(suite["auditors/report"])
    return "ok"


def cmd_serve(args) -> str:
    from .service import serve

    serve(args.workspace, args.host, args.port)
    return "ok"


COMMANDS = {
    "init": cmd_init, "register": cmd_register, "login": cmd_login, "revoke": cmd_revoke,
    "recover": cmd_recover, "upload": cmd_upload, "audit": cmd_audit, "reaudit": cmd_reaudit,
    "verify-ledger": cmd_verify_ledger, "sentinel-report": cmd_sentinel_report,
    "bench": cmd_bench, "scenario": cmd_scenario, "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        outcome = COMMANDS[args.command](args)
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        outcome = exc.code
    except ChainInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        outcome = "chain_invalid"
    except AuditError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        outcome = exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        outcome = "error"
    return EXIT_CODES.get(outcome, EXIT_CODES["error"])


if __name__ == "__main__":
    sys.exit(main())
