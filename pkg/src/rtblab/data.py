"""Bid-log ingestion, serialization, and synthetic log generation.

The canonical log is a UTF-8 comma-delimited file with header
``ts,pctr,pcvr,market_price,click,conversion``: integer millisecond
timestamps (nondecreasing), probabilities with up to six fraction digits,
integer fen prices, 0/1 labels.  Parsing is streaming (constant memory);
the replay-facing ``BidLog`` is a column-oriented view built once per run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import BidRecord, ConfigurationError

CANONICAL_HEADER = "ts,pctr,pcvr,market_price,click,conversion"
_CANONICAL_FIELDS = CANONICAL_HEADER.split(",")


class LogFormatError(ValueError):
    """A rejected input row; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class MalformedRow(LogFormatError):
    pass


class NonMonotonicTimestamp(LogFormatError):
    pass


class LabelViolation(LogFormatError):
    pass


def _parse_row(fields: Sequence[str], line_no: int, last_ts: int | None) -> BidRecord:
    if len(fields) != 6:
        raise MalformedRow(line_no, f"expected 6 fields, got {len(fields)}")
    try:
        ts = int(fields[0])
        pctr = float(fields[1])
        pcvr = float(fields[2])
        price = int(fields[3])
        click = int(fields[4])
        conversion = int(fields[5])
    except ValueError as exc:
        raise MalformedRow(line_no, f"unparseable field: {exc}") from None
    if not (0.0 <= pctr <= 1.0) or not (0.0 <= pcvr <= 1.0):
        raise MalformedRow(line_no, f"prediction out of [0, 1]: pctr={pctr}, pcvr={pcvr}")
    if price < 0:
        raise MalformedRow(line_no, f"negative market price {price}")
    if click not in (0, 1) or conversion not in (0, 1):
        raise MalformedRow(line_no, f"labels must be 0/1, got click={fields[4]}, conversion={fields[5]}")
    if conversion and not click:
        raise LabelViolation(line_no, "conversion without click")
    if last_ts is not None and ts < last_ts:
        raise NonMonotonicTimestamp(line_no, f"timestamp {ts} < previous {last_ts}")
    return BidRecord(ts=ts, pctr=pctr, pcvr=pcvr, market_price=price,
                     click=bool(click), conversion=bool(conversion))


def parse_canonical(stream: Iterable[str]) -> Iterator[BidRecord]:
    """Parse a canonical log lazily; the first bad row aborts with its line number."""
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise MalformedRow(1, "empty input, missing header") from None
    if header.rstrip("\r\n") != CANONICAL_HEADER:
        raise MalformedRow(1, f"bad header {header.rstrip()!r}, expected {CANONICAL_HEADER!r}")
    last_ts: int | None = None
    for line_no, line in enumerate(lines, start=2):
        stripped = line.rstrip("\r\n")
        if not stripped:
            continue
        record = _parse_row(stripped.split(","), line_no, last_ts)
        last_ts = record.ts
        yield record


def _format_prob(p: float) -> str:
    return f"{p:.6f}"


def serialize_canonical(records: Iterable[BidRecord], stream) -> None:
    """Write records in the canonical format (probabilities at 6 fraction digits)."""
    stream.write(CANONICAL_HEADER + "\n")
    for r in records:
        stream.write(
            f"{r.ts},{_format_prob(r.pctr)},{_format_prob(r.pcvr)},"
            f"{r.market_price},{int(r.click)},{int(r.conversion)}\n"
        )


@dataclass(frozen=True)
class ColumnMap:
    """0-based column indices locating canonical fields in a raw log.

    Prediction columns must be produced offline and joined into the raw
    file before conversion; there is no default layout.
    """

    ts: int
    pctr: int
    pcvr: int
    market_price: int
    click: int
    conversion: int

    def __post_init__(self) -> None:
        for name in _CANONICAL_FIELDS:
            idx = getattr(self, name)
            if not isinstance(idx, int) or idx < 0:
                raise ConfigurationError(f"column index for {name!r} must be a nonnegative int, got {idx!r}")

    @property
    def max_index(self) -> int:
        return max(getattr(self, name) for name in _CANONICAL_FIELDS)


def convert_ipinyou(stream: Iterable[str], columns: ColumnMap,
                    delimiter: str = "\t", has_header: bool = False) -> Iterator[str]:
    """Re-map a raw delimited log (iPinYou-style) into canonical lines.

    Field text is passed through verbatim after validation, so an identity
    map over already-canonical input reproduces it byte for byte.  Yields
    the canonical header first; yielded lines include the newline.
    """
    yield CANONICAL_HEADER + "\n"
    last_ts: int | None = None
    start = 2 if has_header else 1
    lines = iter(stream)
    if has_header:
        next(lines, None)
    for line_no, line in enumerate(lines, start=start):
        stripped = line.rstrip("\r\n")
        if not stripped:
            continue
        raw = stripped.split(delimiter)
        if len(raw) <= columns.max_index:
            raise MalformedRow(line_no, f"row has {len(raw)} fields, column map needs {columns.max_index + 1}")
        fields = [raw[getattr(columns, name)] for name in _CANONICAL_FIELDS]
        record = _parse_row(fields, line_no, last_ts)  # validation only
        last_ts = record.ts
        yield ",".join(fields) + "\n"


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for the seeded synthetic bid-log generator.

    Market prices are log-normal (rounded to integer fen); labels are
    Bernoulli with conversion gated on click; predictions are the true
    rates under multiplicative Gaussian noise, clamped to (1e-6, 1] and
    rounded to the canonical 6 fraction digits.
    """

    n_records: int = 10_000
    ctr_true: float = 0.05
    cvr_true: float = 0.2
    price_log_mean: float = 4.0
    price_log_sigma: float = 0.8
    pctr_noise: float = 0.1
    pcvr_noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_records < 0:
            raise ConfigurationError("n_records must be >= 0")
        for name in ("ctr_true", "cvr_true"):
            p = getattr(self, name)
            if not (0.0 < p < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1), got {p}")
        if self.price_log_sigma < 0:
            raise ConfigurationError("price_log_sigma must be >= 0")


class BidLog:
    """Column-oriented bid log: one numpy array per canonical field.

    Iterating yields ``BidRecord`` values; slicing via :meth:`segment` and
    masking via :meth:`filter` return views/copies sharing no mutable state
    with the original.
    """

    __slots__ = ("ts", "pctr", "pcvr", "market_price", "click", "conversion")

    def __init__(self, ts, pctr, pcvr, market_price, click, conversion):
        self.ts = np.asarray(ts, dtype=np.int64)
        self.pctr = np.asarray(pctr, dtype=np.float64)
        self.pcvr = np.asarray(pcvr, dtype=np.float64)
        self.market_price = np.asarray(market_price, dtype=np.int64)
        self.click = np.asarray(click, dtype=bool)
        self.conversion = np.asarray(conversion, dtype=bool)

    def __len__(self) -> int:
        return self.ts.shape[0]

    def __iter__(self) -> Iterator[BidRecord]:
        for i in range(len(self)):
            yield BidRecord(
                ts=int(self.ts[i]), pctr=float(self.pctr[i]), pcvr=float(self.pcvr[i]),
                market_price=int(self.market_price[i]),
                click=bool(self.click[i]), conversion=bool(self.conversion[i]),
            )

    def segment(self, lo: int, hi: int) -> "BidLog":
        return BidLog(self.ts[lo:hi], self.pctr[lo:hi], self.pcvr[lo:hi],
                      self.market_price[lo:hi], self.click[lo:hi], self.conversion[lo:hi])

    def filter(self, mask: np.ndarray) -> "BidLog":
        return BidLog(self.ts[mask], self.pctr[mask], self.pcvr[mask],
                      self.market_price[mask], self.click[mask], self.conversion[mask])

    def max_price(self) -> int:
        return int(self.market_price.max()) if len(self) else 0

    @classmethod
    def from_records(cls, records: Iterable[BidRecord]) -> "BidLog":
        cols: tuple[list, ...] = ([], [], [], [], [], [])
        for r in records:
            cols[0].append(r.ts)
            cols[1].append(r.pctr)
            cols[2].append(r.pcvr)
            cols[3].append(r.market_price)
            cols[4].append(r.click)
            cols[5].append(r.conversion)
        return cls(*cols)

    @classmethod
    def from_csv(cls, path) -> "BidLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_records(parse_canonical(fh))


def generate_synthetic(config: SynthConfig) -> BidLog:
    """Generate a seeded synthetic log; the same config is bit-reproducible."""
    n = config.n_records
    rng = np.random.default_rng(config.seed)
    gaps = rng.integers(1, 100, size=n)
    ts = np.cumsum(gaps, dtype=np.int64) if n else np.zeros(0, dtype=np.int64)
    price = np.rint(rng.lognormal(config.price_log_mean, config.price_log_sigma, size=n))
    price = np.maximum(price, 0).astype(np.int64)
    click = rng.random(n) < config.ctr_true
    conversion = click & (rng.random(n) < config.cvr_true)
    pctr = config.ctr_true * (1.0 + config.pctr_noise * rng.standard_normal(n))
    pcvr = config.cvr_true * (1.0 + config.pcvr_noise * rng.standard_normal(n))
    pctr = np.round(np.clip(pctr, 1e-6, 1.0), 6)
    pcvr = np.round(np.clip(pcvr, 1e-6, 1.0), 6)
    return BidLog(ts, pctr, pcvr, price, click, conversion)
