"""Auditor behavior monitoring.

Audit duration should grow with the complexity of the audited file. A
robust line (Theil-Sen) is fitted to the pooled audits of all auditors. Each
auditor is then scored by how far its median residual sits from zero,
measured in units of the pool's residual MAD. Auditors far off the line are
blacklisted and everything they audited is queued for re-audit.
"""

from __future__ import annotations

import enum
import io
import csv
from dataclasses import dataclass, field, replace
from itertools import combinations
from statistics import median
from typing import Iterable

from ..canon import encode_record
from ..errors import InsufficientData
from ..ledger import Ledger

MAX_COMPLEXITY = 8
MIN_RECORDS = 10
DEFAULT_K = 3.0
MAD_FLOOR_MS = 1.0
REPORT_HEADER = ("auditor_id", "status", "color", "aggregate_deviation", "record_count")


class AuditorStatus(str, enum.Enum):
    ACTIVE = "active"
    WATCH = "watch"
    BLACKLISTED = "blacklisted"


class Color(str, enum.Enum):
    GREEN = "green"
    RED = "red"
    WHITE = "white"
    BLUE = "blue"


@dataclass(frozen=True)
class AuditRecord:
    auditor_id: str
    file_id: str
    complexity: int
    duration: float  # ms
    verdict: str = "pass"
    at: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.complexity < 1:
            raise ValueError("complexity must be >= 1")


@dataclass(frozen=True)
class DurationModel:
    slope: float
    intercept: float
    fitted_over: int
    residual_mad: float

    def predict(self, complexity: int) -> float:
        return self.slope * complexity + self.intercept

    def residual(self, rec: AuditRecord) -> float:
        return rec.duration - self.predict(rec.complexity)


@dataclass
class AuditorProfile:
    auditor_id: str
    history: list[AuditRecord] = field(default_factory=list)
    status: AuditorStatus = AuditorStatus.ACTIVE
    color: Color = Color.GREEN
    deviation_stats: tuple[float, float] = (0.0, 0.0)
    aggregate: float = 0.0


def complexity_class(block_count) -> int:
    """1 + floor(log2(block_count)), capped at 8.

    Accepts a block count or anything with a ``block_count`` attribute.
    """
    block_count = getattr(block_count, "block_count", block_count)
    if block_count < 1:
        raise ValueError("block_count must be >= 1")
    return min(MAX_COMPLEXITY, block_count.bit_length())


def theil_sen(points: Iterable[tuple[float, float]]) -> tuple[float, float]:
    pts = list(points)
    slopes = [(y2 - y1) / (x2 - x1) for (x1, y1), (x2, y2) in combinations(pts, 2) if x1 != x2]
    if not slopes:
        raise InsufficientData("need at least two distinct x values")
    slope = median(slopes)
    return slope, median(y - slope * x for x, y in pts)


def mad(values: Iterable[float]) -> float:
    vals = list(values)
    center = median(vals)
    return median(abs(v - center) for v in vals)


def fit_duration_model(pool: Iterable[AuditRecord], min_records: int = MIN_RECORDS) -> DurationModel:
    pool = list(pool)
    if len(pool) < min_records:
        raise InsufficientData(f"need >= {min_records} audit records, got {len(pool)}")
    if len({r.complexity for r in pool}) < 2:
        raise InsufficientData("need records from at least two complexity classes")
    slope, intercept = theil_sen((r.complexity, r.duration) for r in pool)
    residuals = [r.duration - (slope * r.complexity + intercept) for r in pool]
    return DurationModel(slope, intercept, len(pool), mad(residuals))


def deviation_score(history: Iterable[AuditRecord], model: DurationModel) -> float:
    """|median residual| over the pool residual MAD (floored at 1 ms)."""
    residuals = [model.residual(r) for r in history]
    if not residuals:
        return 0.0
    return abs(median(residuals)) / max(model.residual_mad, MAD_FLOOR_MS)


def update_status(profile: AuditorProfile, model: DurationModel, k: float = DEFAULT_K,
                  min_n: int = MIN_RECORDS) -> AuditorProfile:
    """New profile with status and deviation stats refreshed.

    Blacklisting is permanent. With fewer than ``min_n`` records the status
    is left alone.
    """
    if len(profile.history) < min_n:
        return profile
    agg = deviation_score(profile.history, model)
    med = median(model.residual(r) for r in profile.history)
    if profile.status is AuditorStatus.BLACKLISTED or agg > k:
        status = AuditorStatus.BLACKLISTED
    elif agg > k / 2:
        status = AuditorStatus.WATCH
    else:
        status = AuditorStatus.ACTIVE
    return replace(profile, status=status, aggregate=agg,
                   deviation_stats=(med, model.residual_mad))


def assign_quadrant(profile: AuditorProfile, model: DurationModel,
                    pool: Iterable[AuditRecord], k: float = DEFAULT_K) -> Color:
    pool_median = median(r.complexity for r in pool)
    if not profile.history:
        return Color.GREEN
    high_complexity = median(r.complexity for r in profile.history) > pool_median
    high_deviation = deviation_score(profile.history, model) > k / 2
    return {
        (False, False): Color.GREEN,
        (True, False): Color.BLUE,
        (False, True): Color.WHITE,
        (True, True): Color.RED,
    }[(high_complexity, high_deviation)]


def records_from_ledger(ledger: Ledger) -> list[AuditRecord]:
    """Audit records (not re-audits) reconstructed from ledger entries."""
    out = []
    for rec in ledger.records():
        if rec.get("kind") != "audit":
            continue
        out.append(AuditRecord(
            auditor_id=rec["auditor"], file_id=rec["file_id"],
            complexity=complexity_class(rec["block_count"]),
            duration=rec["duration_us"] / 1000.0, verdict=rec["status"], at=rec["at"],
        ))
    return out


class Sentinel:
    """Holds auditor profiles and applies blacklisting side effects."""

    def __init__(self, ledger: Ledger, k: float = DEFAULT_K, min_n: int = MIN_RECORDS):
        self.ledger = ledger
        self.k = k
        self.min_n = min_n
        self.profiles: dict[str, AuditorProfile] = {}
        self.reaudit_queue: list[str] = []
        self.model: DurationModel | None = None

    def observe(self, rec: AuditRecord) -> None:
        self.profiles.setdefault(rec.auditor_id, AuditorProfile(rec.auditor_id)).history.append(rec)

    @property
    def pool(self) -> list[AuditRecord]:
        return [r for aid in sorted(self.profiles) for r in self.profiles[aid].history]

    def review(self, now: int) -> list[str]:
        """Refit, rescore and recolor every auditor; return newly blacklisted ids."""
        pool = self.pool
        self.model = fit_duration_model(pool, self.min_n)
        newly = []
        for aid in sorted(self.profiles):
            old = self.profiles[aid]
            new = update_status(old, self.model, self.k, self.min_n)
            new = replace(new, color=assign_quadrant(new, self.model, pool, self.k))
            self.profiles[aid] = new
            if new.status is AuditorStatus.BLACKLISTED and old.status is not AuditorStatus.BLACKLISTED:
                newly.append(aid)
                self._blacklist(new, now)
        return newly

    def _blacklist(self, profile: AuditorProfile, now: int) -> None:
        files = list(dict.fromkeys(r.file_id for r in profile.history))
        self.ledger.append(encode_record({
            "kind": "blacklist", "client_id": profile.auditor_id, "at": now,
            "auditor": profile.auditor_id, "aggregate_milli": round(profile.aggregate * 1000),
            "files": files,
        }), now)
        self.reaudit_queue.extend(files)

    def run_reaudits(self, integrity, now: int, duration_ms: float | None = None) -> dict:
        """Drain the re-audit queue through ``integrity.reaudit``."""
        results = {}
        while self.reaudit_queue:
            file_id = self.reaudit_queue.pop(0)
            results[file_id] = integrity.reaudit(file_id, now, duration_ms=duration_ms)
        return results

    def report_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for aid in sorted(self.profiles):
            p = self.profiles[aid]
            writer.writerow((aid, p.status.value, p.color.value, f"{p.aggregate:.4f}", len(p.history)))
        return buf.getvalue()
