"""Time-bound login key derivation.

A client's hardware serials and password are turned into integers by
concatenating zero-padded 3-digit ASCII codes. Those integers give the
identity's *case* value, and the case is combined with the current UTC
minute and hour into a *time case* that changes every minute. Everything
here is exact integer arithmetic; nothing is reduced modulo anything.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .errors import InvalidIdentity, ParameterError, ZeroCase

ALLOWED_PRIMES = (2, 3, 5, 7)
WINDOW_MINUTES = 2


def encode_ascii(s: str) -> int:
    """Concatenate the 3-digit decimal code of every character.

    >>> encode_ascii("AB")
    65066
    """
    if not s:
        raise InvalidIdentity("empty identity field")
    for ch in s:
        if not 32 <= ord(ch) <= 126:
            raise InvalidIdentity(f"character {ch!r} outside printable ASCII")
    return int("".join(f"{ord(ch):03d}" for ch in s))


@dataclass(frozen=True)
class DeviceIdentity:
    motherboard_serial: str
    disk_serial: str
    password: str = field(repr=False)

    def __post_init__(self):
        for value in (self.motherboard_serial, self.disk_serial, self.password):
            if not isinstance(value, str):
                raise InvalidIdentity("identity fields must be strings")
            encode_ascii(value)

    def numeric(self) -> NumericIdentity:
        return NumericIdentity(
            moboard_num=encode_ascii(self.motherboard_serial),
            disk_no=encode_ascii(self.disk_serial),
            pwd_num=encode_ascii(self.password),
        )


@dataclass(frozen=True)
class NumericIdentity:
    moboard_num: int
    disk_no: int
    pwd_num: int

    def __post_init__(self):
        for value in (self.moboard_num, self.disk_no, self.pwd_num):
            if not isinstance(value, int) or value < 0:
                raise InvalidIdentity("numeric identity values must be non-negative ints")


@dataclass(frozen=True)
class CaseValue:
    value: int


def compute_case(ident: NumericIdentity) -> CaseValue:
    return CaseValue((ident.disk_no + ident.moboard_num) * ident.pwd_num)


def _next_prime(n: int) -> int:
    c = n + 1
    while any(c % d == 0 for d in range(2, int(c**0.5) + 1)):
        c += 1
    return c


@dataclass(frozen=True)
class PrimeConfig:
    p: int = 7

    def __post_init__(self):
        if self.p not in ALLOWED_PRIMES:
            raise ParameterError(f"p must be one of {ALLOWED_PRIMES}, got {self.p}")

    @property
    def q(self) -> int:
        return _next_prime(self.p)


@dataclass(frozen=True)
class MinuteStamp:
    epoch_minute: int

    def __post_init__(self):
        if not isinstance(self.epoch_minute, int) or self.epoch_minute < 0:
            raise ParameterError("epoch_minute must be a non-negative int")

    @property
    def minute(self) -> int:
        return self.epoch_minute % 60

    @property
    def hour(self) -> int:
        return (self.epoch_minute // 60) % 24

    @classmethod
    def now(cls) -> MinuteStamp:
        return cls(int(time.time()) // 60)

    def shifted(self, minutes: int) -> MinuteStamp:
        return MinuteStamp(self.epoch_minute + minutes)


@dataclass(frozen=True)
class TimeCaseValue:
    value: int
    epoch_minute: int


def processed_min(minute: int, cfg: PrimeConfig) -> int:
    return (minute + cfg.p) * cfg.q**2


def hour_exponent(hour: int) -> int:
    """Exponent n of the 2**n factor; always within 1..6."""
    return hour % 6 + 1


def processed_hour(hour: int, pm: int) -> int:
    return hour + pm * 2 ** hour_exponent(hour)


def time_case(case: CaseValue, ts: MinuteStamp, cfg: PrimeConfig) -> TimeCaseValue:
    if case.value == 0:
        raise ZeroCase("case value is zero")
    pm = processed_min(ts.minute, cfg)
    ph = processed_hour(ts.hour, pm)
    return TimeCaseValue(pm * ph * case.value, ts.epoch_minute)


def candidate_time_cases(case: CaseValue, now: MinuteStamp, cfg: PrimeConfig) -> list[TimeCaseValue]:
    """Values accepted at ``now``: the current and the previous minute."""
    return [time_case(case, now.shifted(-k), cfg) for k in range(WINDOW_MINUTES)]
