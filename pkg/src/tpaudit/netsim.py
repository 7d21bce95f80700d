"""Deterministic discrete-event harness for the three-party protocol.

A scenario script is a list of timed actor events. Messages between nodes
pay link latency (base + seeded jitter) plus size/bandwidth, and may be
dropped. Every node reads a virtual clock shifted by its configured skew,
in whole minutes. Identical (script, config) pairs give byte-identical
traces.

Scripts and traces share one line format: a JSON object per line with the
keys ``time``, ``actor``, ``event``, ``payload`` in that order.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
import time as _time
from dataclasses import dataclass, field

from . import cryptbox
from .canon import H
from .errors import AuditError, MalformedScript, ParameterError
from .integrity import CloudStore, IntegrityAuditor
from .keyforge import DeviceIdentity, MinuteStamp, PrimeConfig
from .ledger import Ledger
from .protocol import (
    CSP, AttemptLogEntry, CandidateReply, Controller, LoginRequest, Status, client_login,
)
from .sentinel import Sentinel, complexity_class, records_from_ledger

MS_PER_MINUTE = 60_000
# 2023-03-25 00:00 UTC in epoch minutes
DEFAULT_START_MINUTE = 27_997_920
REFERENCE_DOWNLOAD_OVERHEAD_S = 0.61
ADMIN_TOKEN = "sim-admin"


@dataclass(frozen=True)
class Link:
    base_ms: int = 20
    jitter_ms: int = 0


@dataclass
class SimConfig:
    seed: int = 0
    latency: dict[str, Link] = field(default_factory=dict)  # "src->dst" -> Link
    default_link: Link = Link()
    drop_probability: float = 0.0
    clock_skew: dict[str, int] = field(default_factory=dict)  # node -> minutes
    bandwidth: float = 1000.0  # bytes per simulated ms
    start_epoch_minute: int = DEFAULT_START_MINUTE
    key_bits: int = 128
    prime: int = 7
    batch_size: int = 8
    block_size: int = 4096
    crypto_ms_per_block: int = 2
    verify_ms_per_block: int = 1
    csp_timeout_ms: int = 2 * MS_PER_MINUTE

    def __post_init__(self):
        if not 0 <= self.drop_probability < 1:
            raise ParameterError("drop_probability must lie in [0, 1)")
        if self.bandwidth <= 0:
            raise ParameterError("bandwidth must be positive")

    def link(self, src: str, dst: str) -> Link:
        return self.latency.get(f"{src}->{dst}", self.default_link)


@dataclass(frozen=True)
class TraceEvent:
    time: int
    actor: str
    event: str
    payload: dict

    def to_line(self) -> str:
        return json.dumps({"time": self.time, "actor": self.actor, "event": self.event,
                           "payload": self.payload}, separators=(",", ":"), sort_keys=False) + "\n"


def parse_script(text: str) -> list[TraceEvent]:
    events = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ev = TraceEvent(int(obj["time"]), str(obj["actor"]), str(obj["event"]), dict(obj.get("payload", {})))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedScript(f"line {n}: {exc}") from None
        events.append(ev)
    return events


def dump_script(events: list[TraceEvent]) -> str:
    return "".join(e.to_line() for e in events)


@dataclass
class SimResult:
    trace: list[TraceEvent]
    states: dict
    ledger: Ledger

    def serialize_trace(self) -> str:
        return "".join(e.to_line() for e in self.trace)

    def outcomes(self, client_id: str | None = None) -> list[str]:
        return [e.payload["status"] for e in self.trace
                if e.event == "outcome" and (client_id is None or e.payload["client_id"] == client_id)]

    def count(self, event: str) -> int:
        return sum(1 for e in self.trace if e.event == event)


class Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.now = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._net = random.Random(cfg.seed)
        self.trace: list[TraceEvent] = []
        self.ledger = Ledger(cfg.batch_size)
        self.prime = PrimeConfig(cfg.prime)
        self.keypair = cryptbox.keygen(cfg.key_bits, cfg.seed,
                                       created_at=cfg.start_epoch_minute // 1440)
        self.csp = CSP(ADMIN_TOKEN, self.prime, random.Random(cfg.seed + 1))
        self.controller = Controller(self.keypair, self.csp, self._log, random.Random(cfg.seed + 2))
        self.integrity = IntegrityAuditor(CloudStore(), self.ledger, cfg.block_size)
        self.identities: dict[str, DeviceIdentity] = {}
        self._pending: dict[int, LoginRequest] = {}
        self._req_ids = itertools.count(1)

    # clock and logging

    def minute(self, node: str) -> MinuteStamp:
        skew = self.cfg.clock_skew.get(node, 0)
        return MinuteStamp(self.cfg.start_epoch_minute + self.now // MS_PER_MINUTE + skew)

    def _log(self, entry: AttemptLogEntry) -> None:
        self.ledger.append(entry.to_entry(), self.minute("controller").epoch_minute)

    def _record(self, actor: str, event: str, payload: dict) -> None:
        self.trace.append(TraceEvent(self.now, actor, event, payload))

    # event queue

    def _schedule(self, at: int, handler, *args) -> None:
        heapq.heappush(self._queue, (at, next(self._seq), handler, args))

    def send(self, src: str, dst: str, kind: str, body: dict, size: int = 256) -> None:
        self._record(src, "send", {"to": dst, "kind": kind, **body})
        if self._net.random() < self.cfg.drop_probability:
            self._record(src, "drop", {"to": dst, "kind": kind})
            return
        link = self.cfg.link(src, dst)
        jitter = self._net.randint(0, link.jitter_ms) if link.jitter_ms else 0
        delay = link.base_ms + jitter + math.ceil(size / self.cfg.bandwidth)
        self._schedule(self.now + delay, self._deliver, src, dst, kind, body)

    def _deliver(self, src: str, dst: str, kind: str, body: dict) -> None:
        self._record(dst, "deliver", {"from": src, "kind": kind, **body})
        getattr(self, f"_on_{kind}")(src, body)

    def run(self, script: list[TraceEvent]) -> SimResult:
        for ev in script:
            if ev.time < 0:
                raise MalformedScript("event time must be non-negative")
            if not hasattr(self, f"_script_{ev.event}"):
                raise MalformedScript(f"unknown event {ev.event!r}")
            self._schedule(ev.time, self._script_event, ev)
        while self._queue:
            at, _, handler, args = heapq.heappop(self._queue)
            self.now = at
            handler(*args)
        self.ledger.flush(self.minute("controller").epoch_minute)
        return SimResult(self.trace, self.final_states(), self.ledger)

    def final_states(self) -> dict:
        return {
            "controller": {"replay_cache": len(self.controller.replay.seen),
                           "sessions": len(self.controller.sessions)},
            "csp": {cid: rec.access_rights.value for cid, rec in sorted(self.csp.records.items())},
            "files": self.integrity.store.file_ids(),
            "ledger_head": self.ledger.head_hash.hex(),
        }

    # script events

    def _script_event(self, ev: TraceEvent) -> None:
        handler = getattr(self, f"_script_{ev.event}", None)
        if handler is None:
            raise MalformedScript(f"unknown event {ev.event!r}")
        self._record(ev.actor, "script", {"event": ev.event, **_public(ev.payload)})
        try:
            handler(ev.actor, ev.payload)
        except KeyError as exc:
            raise MalformedScript(f"event {ev.event!r} missing field {exc}") from None

    def _script_register(self, actor: str, p: dict) -> None:
        cid = p["client_id"]
        self.identities[cid] = DeviceIdentity(p["motherboard"], p["disk"], p["password"])
        self.send(cid, "csp", "register", {"client_id": cid, "questions": [list(q) for q in p["questions"]]})

    def _script_login(self, actor: str, p: dict) -> None:
        cid = p["client_id"]
        base = self.identities.get(cid) or DeviceIdentity(p["motherboard"], p["disk"], p["password"])
        ident = DeviceIdentity(p.get("motherboard", base.motherboard_serial),
                               p.get("disk", base.disk_serial), p.get("password", base.password))
        now = self.minute(cid)
        req = client_login(cid, ident, now, self.controller.public_key, cfg=self.prime)
        self.send(cid, "controller", "login", req.to_record())

    def _script_recover(self, actor: str, p: dict) -> None:
        self.send(p["client_id"], "controller", "recover",
                  {"client_id": p["client_id"], "answers": list(p["answers"])})

    def _script_revoke(self, actor: str, p: dict) -> None:
        self.send(actor, "csp", "revoke", {"client_id": p["client_id"], "token": p.get("token", ADMIN_TOKEN)})

    def _script_upload(self, actor: str, p: dict) -> None:
        payload = random.Random(p["seed"]).randbytes(p["size"])
        self.send(p["client_id"], "csp", "upload",
                  {"client_id": p["client_id"], "file_id": p["file_id"], "seed": p["seed"],
                   "size": p["size"], "checksum": H(payload).hex()}, size=p["size"])

    def _script_audit(self, actor: str, p: dict) -> None:
        self.send(actor, "csp", "audit", {"file_id": p["file_id"], "count": p["count"],
                                          "seed": p["seed"], "duration_ms": p.get("duration_ms", 1)})

    def _script_corrupt(self, actor: str, p: dict) -> None:
        # the upload may have been dropped in transit
        try:
            data = bytearray(self.integrity.store.payload(p["file_id"]))
        except AuditError as exc:
            status = exc.code
        else:
            if not 0 <= p["offset"] < len(data):
                raise MalformedScript(f"corrupt offset {p['offset']} outside payload")
            data[p["offset"]] ^= 0xFF
            self.integrity.store.write_payload(p["file_id"], bytes(data))
            status = "corrupted"
        self._record(actor, "outcome", {"client_id": actor, "op": "corrupt", "file_id": p["file_id"],
                                        "status": status})

    # message handlers

    def _on_register(self, src: str, body: dict) -> None:
        cid = body["client_id"]
        try:
            self.csp.register(cid, self.identities[cid], [tuple(q) for q in body["questions"]],
                              self.minute("csp").epoch_minute)
            status = "registered"
        except AuditError as exc:
            status = exc.code
        self.send("csp", cid, "registered", {"client_id": cid, "status": status})

    def _on_registered(self, src: str, body: dict) -> None:
        self._record(body["client_id"], "outcome", {"client_id": body["client_id"], "op": "register",
                                                     "status": body["status"]})

    def _on_login(self, src: str, body: dict) -> None:
        req = LoginRequest.from_record(body)
        now = self.minute("controller")
        early = self.controller.precheck(req, now)
        if early is not None:
            self._reply(req, early.status)
            return
        rid = next(self._req_ids)
        self._pending[rid] = req
        self.send("controller", "csp", "candidates", {"rid": rid, "client_id": req.client_id})
        self._schedule(self.now + self.cfg.csp_timeout_ms, self._timeout, rid)

    def _on_candidates(self, src: str, body: dict) -> None:
        reply = self.csp.candidate_reply(body["client_id"], self.minute("csp"), self.controller.public_key)
        self.send("csp", "controller", "candidate_reply",
                  {"rid": body["rid"], "client_id": body["client_id"],
                   "candidates": [str(c.value) for c in reply.candidates],
                   "refusal": reply.refusal.value if reply.refusal else ""})

    def _on_candidate_reply(self, src: str, body: dict) -> None:
        req = self._pending.pop(body["rid"], None)
        if req is None:
            return
        ver = self.keypair.version
        reply = CandidateReply(body["client_id"],
                               tuple(cryptbox.Ciphertext(int(v), ver) for v in body["candidates"]),
                               Status(body["refusal"]) if body["refusal"] else None)
        outcome = self.controller.complete(req, reply, self.minute("controller"))
        self._reply(req, outcome.status)

    def _timeout(self, rid: int) -> None:
        req = self._pending.pop(rid, None)
        if req is not None:
            outcome = self.controller.timeout(req, self.minute("controller"))
            self._reply(req, outcome.status)

    def _reply(self, req: LoginRequest, status: Status) -> None:
        self.send("controller", req.client_id, "outcome", {"client_id": req.client_id, "status": status.value})

    def _on_outcome(self, src: str, body: dict) -> None:
        self._record(body["client_id"], "outcome", {"client_id": body["client_id"], "op": "login",
                                                     "status": body["status"]})

    def _on_recover(self, src: str, body: dict) -> None:
        try:
            status = self.controller.recover_password(body["client_id"], body["answers"],
                                                      self.minute("controller")).value
        except AuditError as exc:
            status = exc.code
        self.send("controller", body["client_id"], "recovered", {"client_id": body["client_id"], "status": status})

    def _on_recovered(self, src: str, body: dict) -> None:
        self._record(body["client_id"], "outcome", {"client_id": body["client_id"], "op": "recover",
                                                     "status": body["status"]})

    def _on_revoke(self, src: str, body: dict) -> None:
        try:
            self.csp.revoke_access(body["token"], body["client_id"])
            status = "revoked"
        except AuditError as exc:
            status = exc.code
        self._record("csp", "outcome", {"client_id": body["client_id"], "op": "revoke", "status": status})

    def _on_upload(self, src: str, body: dict) -> None:
        payload = random.Random(body["seed"]).randbytes(body["size"])
        try:
            self.integrity.record_upload(body["file_id"], payload, body["file_id"], body["client_id"],
                                         self.minute("csp").epoch_minute)
            status = "stored"
        except AuditError as exc:
            status = exc.code
        self._record("csp", "outcome", {"client_id": body["client_id"], "op": "upload", "status": status})

    def _on_audit(self, src: str, body: dict) -> None:
        now = self.minute("csp").epoch_minute
        try:
            ch = self.integrity.issue_challenge(body["file_id"], body["count"], body["seed"], src, now)
            verdict = self.integrity.audit_verify(ch, now, duration_ms=body["duration_ms"])
            status, failing = verdict.status.value, list(verdict.failing_indices)
        except AuditError as exc:
            status, failing = exc.code, []
        self._record("csp", "outcome", {"client_id": src, "op": "audit", "file_id": body["file_id"],
                                        "status": status, "failing": failing})


def _public(payload: dict) -> dict:
    return {k: v for k, v in payload.items() if k != "password"}


def run_scenario(script: list[TraceEvent] | str, cfg: SimConfig) -> SimResult:
    if isinstance(script, str):
        script = parse_script(script)
    return Simulation(cfg).run(script)


@dataclass(frozen=True)
class TransferMeasurement:
    block_count: int
    direction: str
    elapsed: int  # simulated ms
    block_size: int


def measure_transfer(block_count: int, direction: str, cfg: SimConfig) -> TransferMeasurement:
    """Simulated time to move ``block_count`` blocks to or from the CSP.

    Each block pays a request and a response traversal, its transmission
    time, and the per-block crypto cost. Downloads also pay the checksum
    verification leg. Jitter draws come from ``cfg.seed`` so both directions
    see the same network.
    """
    if block_count < 1:
        raise ParameterError("block_count must be >= 1")
    if direction not in ("upload", "download"):
        raise ParameterError("direction must be 'upload' or 'download'")
    rng = random.Random(cfg.seed)
    link = cfg.link("client", "csp")
    per_block = math.ceil(cfg.block_size / cfg.bandwidth) + cfg.crypto_ms_per_block
    if direction == "download":
        per_block += cfg.verify_ms_per_block
    elapsed = 0
    for _ in range(block_count):
        for _leg in range(2):
            elapsed += link.base_ms + (rng.randint(0, link.jitter_ms) if link.jitter_ms else 0)
        elapsed += per_block
    return TransferMeasurement(block_count, direction, elapsed, cfg.block_size)


def bench_encrypt(sizes: list[int], repeats: int = 3, seed: int = 0) -> list[tuple[int, float]]:
    """Wall-clock seconds (best of ``repeats``) to keystream-encrypt each size."""
    rng = random.Random(seed)
    sk = cryptbox.SessionKey.generate(rng)
    rows = []
    for size in sizes:
        if size <= 0:
            raise ParameterError("sizes must be positive")
        payload = rng.randbytes(size)
        best = math.inf
        for _ in range(repeats):
            t0 = _time.perf_counter()
            cryptbox.keystream_xor(payload, sk)
            best = min(best, _time.perf_counter() - t0)
        rows.append((size, best))
    return rows


def bench_transfer(block_counts: list[int], cfg: SimConfig) -> list[tuple[int, int, int]]:
    return [(n, measure_transfer(n, "upload", cfg).elapsed, measure_transfer(n, "download", cfg).elapsed)
            for n in block_counts]


# Auditor behavior scenario

@dataclass
class AuditorScenario:
    sentinel: Sentinel
    ledger: Ledger
    integrity: IntegrityAuditor
    blacklisted: list[str]
    reaudits: dict

    def report(self) -> str:
        return self.sentinel.report_csv()


def auditor_scenario(seed: int, auditors: tuple[str, ...] = ("auditor-1", "auditor-2", "auditor-3", "auditor-4"),
                     cheater: str | None = "auditor-4", audits_each: int = 20, n_files: int = 32,
                     slope_ms: float = 10.0, intercept_ms: float = 5.0, noise_ms: float | None = None,
                     block_size: int = 64, start_minute: int = DEFAULT_START_MINUTE,
                     k: float = 3.0, min_n: int = 10) -> AuditorScenario:
    """Auditors check uploaded files; honest durations follow the complexity line.

    The cheater's durations are flat and short regardless of file complexity.
    Noise on honest durations is Gaussian with sigma = ``noise_ms``
    (default: the slope).
    """
    rng = random.Random(seed)
    noise = slope_ms if noise_ms is None else noise_ms
    ledger = Ledger()
    integrity = IntegrityAuditor(CloudStore(), ledger, block_size)
    now = start_minute
    files = []
    for i in range(n_files):
        blocks = rng.randint(1, 200)
        fid = f"file-{i:03d}"
        integrity.record_upload(fid, rng.randbytes(blocks * block_size), fid, "owner", now)
        files.append((fid, blocks))
    for a in auditors:
        for j in range(audits_each):
            fid, blocks = rng.choice(files)
            c = complexity_class(blocks)
            if a == cheater:
                dur = 1.0 + rng.random()
            else:
                dur = max(0.1, slope_ms * c + intercept_ms + rng.gauss(0, noise))
            ch = integrity.issue_challenge(fid, min(blocks, 4), rng.getrandbits(32), a, now)
            integrity.audit_verify(ch, now, duration_ms=dur)
            now += 1
    sentinel = Sentinel(ledger, k, min_n)
    for rec in records_from_ledger(ledger):
        sentinel.observe(rec)
    blacklisted = sentinel.review(now)
    reaudits = sentinel.run_reaudits(integrity, now, duration_ms=1.0)
    ledger.flush(now)
    return AuditorScenario(sentinel, ledger, integrity, blacklisted, reaudits)


def standard_scripts() -> dict[str, list[TraceEvent]]:
    """The bundled end-to-end scenarios used by the CLI and determinism checks."""
    qs = [["first pet", "rex"], ["birth city", "madurai"], ["school", "st. mary"]]
    reg = TraceEvent(1_000, "client", "register", {"client_id": "alice", "motherboard": "MB-9X72Q",
                                                   "disk": "WD-ZX81", "password": "s3cret!", "questions": qs})
    at = 20_000
    return {
        "honest": [reg, TraceEvent(at, "client", "login", {"client_id": "alice"})],
        "wrong_password": [reg, TraceEvent(at, "client", "login", {"client_id": "alice", "password": "s3cret?"})],
        "replay": [reg, TraceEvent(at, "client", "login", {"client_id": "alice"}),
                   TraceEvent(at + 5_000, "client", "login", {"client_id": "alice"})],
        "revoked": [reg, TraceEvent(10_000, "admin", "revoke", {"client_id": "alice"}),
                    TraceEvent(at, "client", "login", {"client_id": "alice"})],
        "recovery": [reg, TraceEvent(at, "client", "recover", {"client_id": "alice",
                                                               "answers": ["Rex", "madurai", "st. mary"]})],
        "integrity": [reg,
                      TraceEvent(at, "client", "upload", {"client_id": "alice", "file_id": "doc", "size": 20_000, "seed": 5}),
                      TraceEvent(at + 10_000, "tpa", "audit", {"file_id": "doc", "count": 5, "seed": 1}),
                      TraceEvent(at + 20_000, "csp", "corrupt", {"file_id": "doc", "offset": 9_000}),
                      TraceEvent(at + 30_000, "tpa", "audit", {"file_id": "doc", "count": 5, "seed": 1})],
    }


def standard_configs(seed: int) -> dict[str, SimConfig]:
    return {
        "baseline": SimConfig(seed=seed),
        "skew_minus_1": SimConfig(seed=seed, clock_skew={"alice": -1}),
        "skew_minus_3": SimConfig(seed=seed, clock_skew={"alice": -3}),
        "lossy": SimConfig(seed=seed, drop_probability=0.3, default_link=Link(20, 40)),
    }


def run_suite(seed: int = 0) -> dict[str, str]:
    """Every bundled script under every bundled config, plus the auditor scenario.

    Returns name -> serialized artifact (trace, ledger, or report text).
    """
    out = {}
    for cname, cfg in standard_configs(seed).items():
        for sname, script in standard_scripts().items():
            res = run_scenario(script, cfg)
            out[f"{cname}/{sname}/trace"] = res.serialize_trace()
            out[f"{cname}/{sname}/ledger"] = res.ledger.serialize().decode("ascii")
            out[f"{cname}/{sname}/states"] = json.dumps(res.states, sort_keys=True)
    scen = auditor_scenario(seed)
    out["auditors/ledger"] = scen.ledger.serialize().decode("ascii")
    out["auditors/report"] = scen.report()
    return out
