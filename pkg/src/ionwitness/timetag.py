"""IONTAG time-tag streams and their reduction to per-bin click tallies.

File layout (little-endian)::

    magic         8 bytes  b"IONTAG1\\0"
    version       u16
    regime        u8       0 = continuous, 1 = pulsed
    reserved      u8
    resolution_ps u32
    duration_ps   u64
    record_count  u64
    records       record_count * (channel u8, time_ps u64)

Records are time-ordered.  Time bins are half-open, ``[b*tau, (b+1)*tau)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "RECORD_DTYPE",
    "CONTINUOUS",
    "PULSED",
    "TagFormatError",
    "BadMagicError",
    "TruncatedStreamError",
    "TimeOrderError",
    "StreamHeader",
    "TagStream",
    "BinCounts",
    "GateSpec",
    "write_stream",
    "read_stream",
    "iter_stream",
    "write_csv",
    "read_csv",
    "BinReducer",
    "continuous_binner",
    "gated_binner",
    "reduce_stream",
    "bin_counts_continuous",
    "gated_counts",
]

MAGIC = b"IONTAG1\0"
VERSION = 1
CONTINUOUS = 0
PULSED = 1
_HEADER = struct.Struct("<8sHBBIQQ")
HEADER_SIZE = _HEADER.size
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time_ps", "<u8")])

assert HEADER_SIZE == 32 and RECORD_DTYPE.itemsize == 9


class TagFormatError(ValueError):
    pass


class BadMagicError(TagFormatError):
    pass


class TruncatedStreamError(TagFormatError):
    pass


class TimeOrderError(TagFormatError):
    pass


@dataclass(frozen=True)
class StreamHeader:
    regime: int = CONTINUOUS
    resolution_ps: int = 1
    duration_ps: int = 0
    version: int = VERSION


@dataclass(frozen=True, eq=False)
class TagStream:
    """Time-ordered detection records as parallel arrays."""

    channels: np.ndarray
    times_ps: np.ndarray

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.uint8)
        t = np.ascontiguousarray(self.times_ps, dtype=np.uint64)
        if ch.shape != t.shape or ch.ndim != 1:
            raise ValueError("channels and times must be 1-D arrays of equal length")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "times_ps", t)

    @classmethod
    def empty(cls) -> "TagStream":
        return cls(np.empty(0, np.uint8), np.empty(0, np.uint64))

    @classmethod
    def from_records(cls, records: Iterable[tuple[int, int]]) -> "TagStream":
        recs = list(records)
        if not recs:
            return cls.empty()
        ch, t = zip(*recs)
        return cls(np.array(ch), np.array(t, dtype=np.uint64))

    @classmethod
    def merge(cls, *streams: "TagStream") -> "TagStream":
        ch = np.concatenate([s.channels for s in streams])
        t = np.concatenate([s.times_ps for s in streams])
        order = np.argsort(t, kind="stable")
        return cls(ch[order], t[order])

    def __len__(self) -> int:
        return len(self.times_ps)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return zip(self.channels.tolist(), self.times_ps.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.channels, other.channels) and np.array_equal(
            self.times_ps, other.times_ps
        )

    def is_ordered(self) -> bool:
        return bool(np.all(self.times_ps[1:] >= self.times_ps[:-1]))

    def window(self, start_ps: int, stop_ps: int) -> "TagStream":
        """Records with ``start_ps <= t < stop_ps``."""
        lo, hi = np.searchsorted(self.times_ps, [start_ps, stop_ps], side="left")
        return TagStream(self.channels[lo:hi], self.times_ps[lo:hi])

    def to_records(self) -> np.ndarray:
        out = np.empty(len(self), RECORD_DTYPE)
        out["channel"] = self.channels
        out["time_ps"] = self.times_ps
        return out


@dataclass(frozen=True)
class BinCounts:
    """Tallies of time bins by click pattern.

    ``n_s1`` and ``n_s2`` count bins in which only that detector clicked,
    ``n_c`` bins in which both clicked.
    """

    n_tb: int
    n_s1: int
    n_s2: int
    n_c: int

    def __post_init__(self):
        for name in ("n_tb", "n_s1", "n_s2", "n_c"):
            value = getattr(self, name)
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, int(value))
        if self.n_s1 + self.n_s2 + self.n_c > self.n_tb:
            raise ValueError(
                f"click bins ({self.n_s1}+{self.n_s2}+{self.n_c}) exceed total bins {self.n_tb}"
            )

    def __add__(self, other: "BinCounts") -> "BinCounts":
        return BinCounts(
            self.n_tb + other.n_tb,
            self.n_s1 + other.n_s1,
            self.n_s2 + other.n_s2,
            self.n_c + other.n_c,
        )

    @property
    def n_silent(self) -> int:
        return self.n_tb - self.n_s1 - self.n_s2 - self.n_c

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BinCounts":
        return cls(data["n_tb"], data["n_s1"], data["n_s2"], data["n_c"])


@dataclass(frozen=True)
class GateSpec:
    """Detection window inside each pulse period, all in picoseconds."""

    period_ps: int
    gate_open_ps: int
    gate_close_ps: int
    trim_ps: int = 0

    def __post_init__(self):
        if not 0 <= self.gate_open_ps < self.gate_close_ps <= self.period_ps:
            raise ValueError(
                "need 0 <= gate_open < gate_close <= period, got "
                f"{self.gate_open_ps}, {self.gate_close_ps}, {self.period_ps}"
            )
        if self.trim_ps < 0 or 2 * self.trim_ps >= self.gate_close_ps - self.gate_open_ps:
            raise ValueError(f"trim {self.trim_ps} ps leaves an empty gate window")

    @property
    def window(self) -> tuple[int, int]:
        """Accepted phase range ``[start, stop)`` within each period."""
        return self.gate_open_ps + self.trim_ps, self.gate_close_ps - self.trim_ps


# --- codec ---------------------------------------------------------------


def _check_order(times: np.ndarray) -> None:
    if len(times) > 1 and np.any(times[1:] < times[:-1]):
        bad = int(np.argmax(times[1:] < times[:-1])) + 1
        raise TimeOrderError(f"record {bad} is earlier than record {bad - 1}")


def write_stream(
    stream: TagStream, header: StreamHeader, dest: str | Path | BinaryIO | None = None
) -> bytes | None:
    """Encode ``stream``; returns the bytes when ``dest`` is None."""
    _check_order(stream.times_ps)
    if stream.channels.size and not np.isin(stream.channels, (1, 2)).all():
        raise ValueError("channels must be 1 or 2")
    head = _HEADER.pack(
        MAGIC,
        header.version,
        header.regime,
        0,
        header.resolution_ps,
        header.duration_ps,
        len(stream),
    )
    payload = stream.to_records().tobytes()
    if dest is None:
        return head + payload
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            fh.write(head)
            fh.write(payload)
    else:
        dest.write(head)
        dest.write(payload)
    return None


def _parse_header(raw: bytes) -> tuple[StreamHeader, int]:
    if len(raw) < HEADER_SIZE:
        if not MAGIC.startswith(raw[:8]):
            raise BadMagicError(f"bad magic {raw[:8]!r}")
        raise TruncatedStreamError(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    magic, version, regime, _, resolution, duration, count = _HEADER.unpack(
        raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"unsupported IONTAG version {version}")
    return StreamHeader(regime, resolution, duration, version), count


def _decode(buf: bytes, count: int) -> TagStream:
    recs = np.frombuffer(buf, RECORD_DTYPE, count=count)
    stream = TagStream(recs["channel"], recs["time_ps"])
    if stream.channels.size and not np.isin(stream.channels, (1, 2)).all():
        raise TagFormatError("channel outside {1, 2}")
    _check_order(stream.times_ps)
    return stream


def read_stream(src: bytes | str | Path | BinaryIO) -> tuple[StreamHeader, TagStream]:
    """Decode a whole IONTAG stream from bytes, a path or a binary file."""
    if isinstance(src, (bytes, bytearray, memoryview)):
        data = bytes(src)
    elif isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
    else:
        data = src.read()
    header, count = _parse_header(data[:HEADER_SIZE])
    need = HEADER_SIZE + count * RECORD_DTYPE.itemsize
    if len(data) < need:
        raise TruncatedStreamError(
            f"header announces {count} records ({need} bytes), file has {len(data)} bytes"
        )
    return header, _decode(data[HEADER_SIZE:need], count)


def iter_stream(
    src: str | Path | BinaryIO, chunk_records: int = 1 << 20
) -> tuple[StreamHeader, Iterator[TagStream]]:
    """Header plus an iterator of record chunks, for bounded-memory reduction."""
    fh = open(src, "rb") if isinstance(src, (str, Path)) else src
    header, count = _parse_header(fh.read(HEADER_SIZE))

    def chunks():
        left = count
        last = None
        try:
            while left:
                n = min(left, chunk_records)
                buf = fh.read(n * RECORD_DTYPE.itemsize)
                if len(buf) < n * RECORD_DTYPE.itemsize:
                    raise TruncatedStreamError(
                        f"stream ended with {left - len(buf) // RECORD_DTYPE.itemsize}"
                        " records missing"
                    )
                part = _decode(buf, n)
                if last is not None and len(part) and part.times_ps[0] < last:
                    raise TimeOrderError("records out of order across chunk boundary")
                if len(part):
                    last = part.times_ps[-1]
                left -= n
                yield part
        finally:
            if isinstance(src, (str, Path)):
                fh.close()

    return header, chunks()


def write_csv(stream: TagStream, dest: str | Path) -> None:
    with open(dest, "w") as fh:
        fh.write("channel,time_ps\n")
        for ch, t in stream:
            fh.write(f"{ch},{t}\n")


def read_csv(src: str | Path) -> TagStream:
    text = Path(src).read_text()
    if not text.startswith("channel,time_ps"):
        raise TagFormatError("CSV time tags need a 'channel,time_ps' header")
    body = text.split("\n", 1)[1]
    if not body.strip():
        return TagStream.empty()
    arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.uint64, ndmin=2)
    stream = TagStream(arr[:, 0].astype(np.uint8), arr[:, 1])
    _check_order(stream.times_ps)
    return stream


# --- reducers ------------------------------------------------------------


def _clicked_bins(bins: np.ndarray, channels: np.ndarray, channel: int) -> np.ndarray:
    """Sorted distinct bin indices holding at least one ``channel`` record."""
    b = bins[channels == channel]
    if b.size == 0:
        return b
    keep = np.empty(b.size, dtype=bool)
    keep[0] = True
    np.not_equal(b[1:], b[:-1], out=keep[1:])
    return b[keep]


class BinReducer:
    """Single-pass classifier of time bins into silent/1/2/coincidence.

    Feed time-ordered chunks of ``(bin_index, channel)`` pairs.  Only the
    most recent bin is carried between chunks, so memory stays bounded by
    the chunk size.
    """

    def __init__(self, n_bins: int):
        self.n_bins = int(n_bins)
        self._s1 = self._s2 = self._c = 0
        self._open_bin = -1
        self._open_mask = 0
        self._last_bin = -1

    def _close_open(self):
        if self._open_bin < 0:
            return
        if self._open_mask == 3:
            self._c += 1
        elif self._open_mask == 1:
            self._s1 += 1
        elif self._open_mask == 2:
            self._s2 += 1
        self._open_bin = -1
        self._open_mask = 0

    def feed(self, bins: np.ndarray, channels: np.ndarray) -> None:
        bins = np.asarray(bins, dtype=np.int64)
        channels = np.asarray(channels)
        keep = (bins >= 0) & (bins < self.n_bins)
        if not keep.all():
            bins, channels = bins[keep], channels[keep]
        if bins.size == 0:
            return
        if bins[0] < self._last_bin:
            raise TimeOrderError("bins must be fed in non-decreasing order")
        self._last_bin = int(bins[-1])
        u1 = _clicked_bins(bins, channels, 1)
        u2 = _clicked_bins(bins, channels, 2)
        # fold the carried bin into this chunk's first bin if they coincide
        if self._open_bin >= 0:
            if self._open_bin == bins[0]:
                if self._open_mask & 1 and (u1.size == 0 or u1[0] != self._open_bin):
                    u1 = np.concatenate(([self._open_bin], u1))
                if self._open_mask & 2 and (u2.size == 0 or u2[0] != self._open_bin):
                    u2 = np.concatenate(([self._open_bin], u2))
                self._open_bin = -1
                self._open_mask = 0
            else:
                self._close_open()
        last = self._last_bin
        both = np.intersect1d(u1, u2, assume_unique=True)
        mask = (1 if u1.size and u1[-1] == last else 0) | (
            2 if u2.size and u2[-1] == last else 0
        )
        self._c += both.size
        self._s1 += u1.size - both.size
        self._s2 += u2.size - both.size
        # hold back the last bin: the next chunk may add to it
        if mask == 3:
            self._c -= 1
        elif mask == 1:
            self._s1 -= 1
        elif mask == 2:
            self._s2 -= 1
        self._open_bin = last
        self._open_mask = mask

    def result(self) -> BinCounts:
        self._close_open()
        return BinCounts(self.n_bins, self._s1, self._s2, self._c)


def _as_chunks(records) -> Iterable[TagStream]:
    if isinstance(records, TagStream):
        return (records,)
    return records


def continuous_binner(tau_ps: int):
    tau_ps = int(tau_ps)
    if tau_ps <= 0:
        raise ValueError(f"bin width must be positive, got {tau_ps}")
    tau = np.uint64(tau_ps)

    def binner(chunk: TagStream):
        return chunk.times_ps // tau, chunk.channels

    return binner


def gated_binner(gate: GateSpec):
    start, stop = gate.window
    period = np.uint64(gate.period_ps)

    def binner(chunk: TagStream):
        phase = chunk.times_ps % period
        inside = (phase >= start) & (phase < stop)
        return chunk.times_ps[inside] // period, chunk.channels[inside]

    return binner


def reduce_stream(records, n_bins: int, binner, n_chunks: int = 1) -> list[BinCounts]:
    """Tallies for ``n_chunks`` contiguous, near-equal runs of bins.

    ``records`` is a TagStream or an iterable of time-ordered chunks;
    ``binner`` maps a chunk to ``(bin_index, channel)`` arrays.
    """
    if n_chunks < 1 or n_chunks > max(n_bins, 1):
        raise ValueError(f"cannot split {n_bins} bins into {n_chunks} chunks")
    edges = np.linspace(0, n_bins, n_chunks + 1).round().astype(np.int64)
    reducers = [BinReducer(b - a) for a, b in zip(edges[:-1], edges[1:])]
    for chunk in _as_chunks(records):
        bins, channels = binner(chunk)
        bins = bins.astype(np.int64)
        cuts = np.searchsorted(bins, edges, side="left")
        for reducer, first, lo, hi in zip(reducers, edges[:-1], cuts[:-1], cuts[1:]):
            if hi > lo:
                reducer.feed(bins[lo:hi] - first, channels[lo:hi])
    return [r.result() for r in reducers]


def bin_counts_continuous(records, tau_ps: int, duration_ps: int) -> BinCounts:
    """Classify ``floor(duration / tau)`` consecutive bins of width ``tau_ps``.

    ``records`` is a TagStream or an iterable of time-ordered TagStream
    chunks.  Records past the last whole bin are ignored.
    """
    binner = continuous_binner(tau_ps)
    return reduce_stream(records, int(duration_ps) // int(tau_ps), binner)[0]


def gated_counts(records, gate: GateSpec, n_pulses: int) -> BinCounts:
    """One bin per pulse; only records inside the trimmed gate window count."""
    if n_pulses < 1:
        raise ValueError(f"need at least one pulse, got {n_pulses}")
    return reduce_stream(records, n_pulses, gated_binner(gate))[0]
