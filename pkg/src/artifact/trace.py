"""Raw and processed Flush+Reload traces, and the de-noising pass.

Raw traces are ``cycles,symbol`` lines, one cache hit per line.  A processed
trace has one entry per op invocation with the GEMM hits observed during that
invocation summed into two counters.
"""
from __future__ import annotations

import difflib
import hashlib
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .arch import OpKind

Timestamp = Union[int, float]

GEMM_CONV = "GEMM(conv)"
GEMM_ONCOPY = "GEMM(oncopy)"
GEMM_SYMBOLS = (GEMM_CONV, GEMM_ONCOPY)

# symbol emitted by the simulator for each op
OP_SYMBOLS: dict[OpKind, str] = {
    OpKind.CONV1D: "Conv1d",
    OpKind.CONV2D: "Conv2d",
    OpKind.DEPTHCONV2D: "DepthConv2d",
    OpKind.BATCHNORM: "BatchNorm2d",
    OpKind.RELU6: "ReLU6",
    OpKind.SIGMOID: "Sigmoid",
    OpKind.LINEAR: "Linear",
    OpKind.EMBEDDING: "Embedding",
    OpKind.MAXPOOL1D: "MaxPool1d",
    OpKind.AVGPOOL: "AvgPool2d",
    OpKind.ADD: "add",
    OpKind.MULTIPLY: "multiply",
    OpKind.TRANSPOSE: "transpose",
    OpKind.NARROW: "narrow",
}

# every spelling accepted on input, including the PyTorch and TensorFlow names
_ALIASES: dict[str, OpKind] = {
    "Conv2D": OpKind.CONV2D,
    "DepthwiseConv": OpKind.DEPTHCONV2D,
    "DepthwiseConv2d": OpKind.DEPTHCONV2D,
    "BatchNorm": OpKind.BATCHNORM,
    "BatchNorm1d": OpKind.BATCHNORM,
    "BatchNorm2D": OpKind.BATCHNORM,
    "FC": OpKind.LINEAR,
    "Embeddings": OpKind.EMBEDDING,
    "MaxPool": OpKind.MAXPOOL1D,
    "AvgPool": OpKind.AVGPOOL,
    "TensorAdd": OpKind.ADD,
    "* (multiply)": OpKind.MULTIPLY,
    "mul": OpKind.MULTIPLY,
}

SYMBOL_TO_OP: dict[str, OpKind] = {sym: op for op, sym in OP_SYMBOLS.items()}
SYMBOL_TO_OP.update({op.value: op for op in OpKind})
SYMBOL_TO_OP.update(_ALIASES)

MONITORED_SYMBOLS = frozenset(SYMBOL_TO_OP) | frozenset(GEMM_SYMBOLS)

PROCESSED_FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 100_000


class TraceFormatError(ValueError):
    """A trace file line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownSymbolError(TraceFormatError):
    """A raw event names a function outside the monitored set."""


class UnsortedTraceError(ValueError):
    """Raw events are not in timestamp order."""


class VersionMismatchError(TraceFormatError):
    """Processed trace header has an unsupported version."""


def op_for_symbol(symbol: str) -> OpKind:
    try:
        return SYMBOL_TO_OP[symbol]
    except KeyError:
        raise UnknownSymbolError(f"unknown symbol {symbol!r}") from None


def _parse_number(text: str) -> Timestamp:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        return int(value) if value.is_integer() else value


def _format_number(value: Timestamp) -> str:
    return str(value)


# ------------------------------------------------------------------ raw trace


@dataclass(frozen=True)
class RawEvent:
    timestamp: Timestamp
    symbol: str

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.symbol not in MONITORED_SYMBOLS:
            raise UnknownSymbolError(f"unknown symbol {self.symbol!r}")

    @property
    def is_gemm(self) -> bool:
        return self.symbol in GEMM_SYMBOLS


def parse_raw_text(text: str) -> list[RawEvent]:
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        stamp, sep, symbol = line.partition(",")
        if not sep or not symbol:
            raise TraceFormatError(f"expected 'cycles,symbol', got {line!r}", lineno)
        try:
            t = _parse_number(stamp)
        except ValueError:
            raise TraceFormatError(f"bad timestamp {stamp!r}", lineno) from None
        if t < 0:
            raise TraceFormatError(f"negative timestamp {t}", lineno)
        symbol = symbol.strip()
        if symbol not in MONITORED_SYMBOLS:
            raise UnknownSymbolError(f"unknown symbol {symbol!r}", lineno)
        events.append(RawEvent(t, symbol))
    return events


def parse_raw(path: str | Path) -> list[RawEvent]:
    return parse_raw_text(Path(path).read_text(encoding="ascii"))


def format_raw(events: Iterable[RawEvent]) -> str:
    return "".join(f"{_format_number(e.timestamp)},{e.symbol}\n" for e in events)


def write_raw(events: Iterable[RawEvent], path: str | Path) -> None:
    Path(path).write_text(format_raw(events), encoding="ascii", newline="\n")


def raw_digest(events: Iterable[RawEvent]) -> str:
    return "sha256:" + hashlib.sha256(format_raw(events).encode("ascii")).hexdigest()


# ------------------------------------------------------------ processed trace


@dataclass(frozen=True)
class ProcessedEntry:
    index: int
    op: OpKind
    timestamp: Timestamp
    gemm_conv: int = 0
    gemm_oncopy: int = 0

    def __post_init__(self) -> None:
        if self.gemm_conv < 0 or self.gemm_oncopy < 0:
            raise ValueError("GEMM counts must be >= 0")


@dataclass(frozen=True)
class ProcessedTrace:
    entries: tuple[ProcessedEntry, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        for i, e in enumerate(self.entries):
            if e.index != i:
                raise ValueError(f"entry indices must run 0..n-1, got {e.index} at position {i}")
            if i and not e.timestamp > self.entries[i - 1].timestamp:
                raise ValueError(f"timestamps must increase strictly (entry {i})")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> ProcessedEntry:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    @property
    def labels(self) -> list[OpKind]:
        return [e.op for e in self.entries]

    def spans(self) -> list[Timestamp | None]:
        """Cycles from each entry to the next; ``None`` for the last entry."""
        ts = [e.timestamp for e in self.entries]
        return [b - a for a, b in zip(ts, ts[1:])] + [None] * bool(ts)

    @classmethod
    def from_labels(cls, labels: Sequence[OpKind], gap: int = 1_000_000) -> "ProcessedTrace":
        """Timing-free trace, used when only the op sequence matters."""
        return cls(tuple(ProcessedEntry(i, op, i * gap) for i, op in enumerate(labels)))


def format_processed(t: ProcessedTrace) -> str:
    header = {"version": PROCESSED_FORMAT_VERSION}
    header.update({k: v for k, v in t.meta.items() if k != "version"})
    lines = ["#meta " + json.dumps(header, sort_keys=True)]
    for e in t.entries:
        lines.append(f"{e.index},{e.op.value},{_format_number(e.timestamp)},{e.gemm_conv},{e.gemm_oncopy}")
    return "\n".join(lines) + "\n"


def write_processed(t: ProcessedTrace, path: str | Path) -> None:
    Path(path).write_text(format_processed(t), encoding="ascii", newline="\n")


def parse_processed_text(text: str) -> ProcessedTrace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#meta"):
        raise TraceFormatError("missing '#meta' header", 1)
    try:
        meta = json.loads(lines[0][len("#meta"):].strip() or "{}")
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from None
    if not isinstance(meta, dict):
        raise TraceFormatError("header must be a JSON object", 1)
    version = meta.pop("version", None)
    if version != PROCESSED_FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported processed-trace version {version!r}", 1)
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceFormatError(f"expected 5 fields, got {len(parts)}", lineno)
        try:
            index = int(parts[0])
            stamp = _parse_number(parts[2])
            gc, go = int(parts[3]), int(parts[4])
        except ValueError:
            raise TraceFormatError(f"bad numeric field in {line!r}", lineno) from None
        op = SYMBOL_TO_OP.get(parts[1].strip())
        if op is None:
            raise UnknownSymbolError(f"unknown op {parts[1]!r}", lineno)
        entries.append(ProcessedEntry(index, op, stamp, gc, go))
    try:
        return ProcessedTrace(tuple(entries), meta)
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from None


def read_processed(path: str | Path) -> ProcessedTrace:
    return parse_processed_text(Path(path).read_text(encoding="ascii"))


# -------------------------------------------------------------- condensation


@dataclass
class _Open:
    op: OpKind
    first: Timestamp
    last: Timestamp
    gemm_conv: int = 0
    gemm_oncopy: int = 0
    gemm_times: list = field(default_factory=list)

    def steady_gap(self) -> float | None:
        ts = self.gemm_times
        if len(ts) < 3:
            return None
        return statistics.median(b - a for a, b in zip(ts, ts[1:]))


# a GEMM stream that resumes within this fraction of its usual spacing never stopped
RHYTHM_TOLERANCE = 0.1


def condense(events: Sequence[RawEvent], threshold: int = DEFAULT_THRESHOLD,
             filter_noise: bool = True, min_op_gap: int | None = None) -> ProcessedTrace:
    """De-noise raw events into one entry per op invocation.

    Consecutive hits of one op symbol within ``threshold`` cycles of each other
    merge into a single entry stamped with the first hit.  GEMM hits are
    counted and credited to the entry open when they occur.

    With ``filter_noise`` spurious op hits are dropped: a hit that lands less
    than ``min_op_gap`` cycles after the start of a different op (no op
    finishes that fast), and a hit wedged inside a running GEMM stream, either
    a dense burst or one whose steady spacing carries on across the hit.
    ``min_op_gap`` defaults to half the threshold.
    """
    if min_op_gap is None:
        min_op_gap = threshold // 2
    entries: list[ProcessedEntry] = []
    cur: _Open | None = None
    orphan_gemm = 0
    filtered = 0

    def close() -> None:
        if cur is not None:
            entries.append(ProcessedEntry(len(entries), cur.op, cur.first, cur.gemm_conv, cur.gemm_oncopy))

    prev_t = None
    n = len(events)
    for i, ev in enumerate(events):
        if prev_t is not None and ev.timestamp < prev_t:
            raise UnsortedTraceError(f"event {i} at {ev.timestamp} precedes {prev_t}")
        prev_t = ev.timestamp
        if ev.symbol in GEMM_SYMBOLS:
            if cur is None:
                orphan_gemm += 1
            else:
                if ev.symbol == GEMM_CONV:
                    cur.gemm_conv += 1
                else:
                    cur.gemm_oncopy += 1
                cur.gemm_times.append(ev.timestamp)
            continue
        op = op_for_symbol(ev.symbol)
        if cur is not None and op is cur.op and ev.timestamp - cur.last <= threshold:
            cur.last = ev.timestamp
            continue
        if filter_noise and cur is not None:
            if ev.timestamp - cur.first < min_op_gap:
                filtered += 1
                continue
            # a repeat launch of the open op keeps the GEMM cadence too, so a
            # same-symbol hit is only wedged when it hugs the preceding event
            wedged = op is not cur.op or ev.timestamp - events[i - 1].timestamp < min_op_gap
            if wedged and 0 < i < n - 1 and events[i - 1].is_gemm and events[i + 1].is_gemm:
                across = events[i + 1].timestamp - events[i - 1].timestamp
                steady = cur.steady_gap()
                if across < min_op_gap or (steady and abs(across - steady) <= RHYTHM_TOLERANCE * steady):
                    filtered += 1
                    continue
        close()
        cur = _Open(op, ev.timestamp, ev.timestamp)
    close()
    meta = {
        "condense_threshold": threshold,
        "source": raw_digest(events),
        "dropped_gemm_hits": orphan_gemm,
        "filtered_op_hits": filtered,
    }
    return ProcessedTrace(tuple(entries), meta)


def expand(t: ProcessedTrace) -> list[RawEvent]:
    """One op hit per entry followed by its GEMM hits, one cycle apart."""
    out = []
    for e in t.entries:
        out.append(RawEvent(e.timestamp, OP_SYMBOLS[e.op]))
        k = 1
        for symbol, count in ((GEMM_CONV, e.gemm_conv), (GEMM_ONCOPY, e.gemm_oncopy)):
            for _ in range(count):
                out.append(RawEvent(e.timestamp + k, symbol))
                k += 1
    return out


def diff_traces(observed: ProcessedTrace, reference: ProcessedTrace, gemm_slack: int = 2) -> list[str]:
    """Describe where ``observed`` departs from ``reference``.

    Reports op-sequence differences first; when the sequences agree it lists
    entries whose GEMM counts moved by more than ``gemm_slack`` (hits credited
    to the wrong invocation).
    """
    a, b = observed.labels, reference.labels
    if a != b:
        out = []
        sm = difflib.SequenceMatcher(a=[x.value for x in a], b=[x.value for x in b], autojunk=False)
        for tag, i1, i2, j1, j2 in sm.get_opcodes():
            if tag == "equal":
                continue
            got = ",".join(x.value for x in a[i1:i2]) or "-"
            want = ",".join(x.value for x in b[j1:j2]) or "-"
            out.append(f"op sequence {tag} at entry {i1}: observed [{got}] expected [{want}]")
        return out
    out = []
    for x, y in zip(observed.entries, reference.entries):
        dc, do = x.gemm_conv - y.gemm_conv, x.gemm_oncopy - y.gemm_oncopy
        if abs(dc) > gemm_slack or abs(do) > gemm_slack:
            out.append(f"entry {x.index} {x.op.value}: GEMM counts off by ({dc:+d}, {do:+d})")
    return out
