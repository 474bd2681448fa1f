"""Event streams: data model, file formats, windowing, frame stacking and a
synthetic event-camera generator.

Timestamps are integer microseconds. Polarity is -1/+1 in memory, "-1"/"1"
in CSV and 0/1 in the binary format. Whenever a time axis is cut into
windows, an event lying exactly on a cut belongs to the earlier window, so
every partition conserves the event count.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np


class EventFormatError(ValueError):
    """Malformed event file (reports the line or byte offset)."""


class EventValidationError(ValueError):
    """Well-formed but semantically invalid events or metadata."""


class ConfigError(ValueError):
    pass


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events of one recording, stored column-wise."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    height: int
    width: int
    duration: int
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "x", _frozen(self.x, np.int64))
        object.__setattr__(self, "y", _frozen(self.y, np.int64))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventValidationError("event columns have different lengths")
        if self.height < 1 or self.width < 1:
            raise EventValidationError(f"bad sensor size {self.height}x{self.width}")
        if n:
            if (self.t < 0).any():
                raise EventValidationError("negative timestamp")
            if (np.diff(self.t) < 0).any():
                raise EventValidationError("events are not sorted by time")
            bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
            if bad.any():
                i = int(np.argmax(bad))
                raise EventValidationError(
                    f"event {i} at ({self.x[i]}, {self.y[i]}) outside {self.width}x{self.height} sensor")
            if not np.isin(self.p, (-1, 1)).all():
                raise EventValidationError("polarity must be -1 or +1")
            if self.duration < self.t[-1]:
                raise EventValidationError(f"duration {self.duration} < last timestamp {self.t[-1]}")
        if self.duration < 0:
            raise EventValidationError("negative duration")

    @classmethod
    def from_events(cls, events, height, width, duration=None, label=None, sort=True):
        arr = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls.from_columns(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], height, width, duration, label, sort)

    @classmethod
    def from_columns(cls, t, x, y, p, height, width, duration=None, label=None, sort=True):
        t = np.asarray(t, dtype=np.int64)
        if sort and len(t):
            order = np.argsort(t, kind="stable")
            t, x, y, p = t[order], np.asarray(x)[order], np.asarray(y)[order], np.asarray(p)[order]
        if duration is None:
            duration = int(t[-1]) if len(t) else 0
        return cls(t, x, y, p, int(height), int(width), int(duration), label)

    def __len__(self):
        return len(self.t)

    @property
    def events(self) -> list[Event]:
        return [Event(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(self.x, self.y, self.p, self.t)]

    def subset(self, mask_or_index) -> EventStream:
        return EventStream(self.t[mask_or_index], self.x[mask_or_index], self.y[mask_or_index],
                           self.p[mask_or_index], self.height, self.width, self.duration, self.label)

    def same_events(self, other: EventStream) -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "txyp")


@dataclass(frozen=True, eq=False)
class FrameStack:
    """(H, W, N_t, 3) normalized counts: positive, negative, total."""

    frames: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.frames.shape[2]


# ------------------------------------------------------------------ windows


def window_edges(duration: float, n: int) -> np.ndarray:
    """n + 1 uniform cut points over [0, duration]."""
    return np.arange(n + 1, dtype=np.float64) * (float(duration) / n)


def window_index(t: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    """Window of each timestamp for cuts ``boundaries`` (first = 0, last = duration).

    Window k covers (b_k, b_{k+1}]; window 0 also takes t = b_0.
    """
    return np.searchsorted(np.asarray(boundaries)[1:-1], t, side="left")


def slice_window(stream: EventStream, t0: float, t1: float) -> EventStream:
    """Events with t0 <= t <= t1, order preserved."""
    if t0 > t1:
        raise ValueError(f"empty window: t0={t0} > t1={t1}")
    lo = np.searchsorted(stream.t, t0, side="left")
    hi = np.searchsorted(stream.t, t1, side="right")
    return stream.subset(slice(lo, hi))


def partition(stream: EventStream, boundaries) -> list[EventStream]:
    """Cut a stream at increasing boundaries; events on a cut go to the earlier slice."""
    b = np.asarray(boundaries, dtype=np.float64)
    idx = np.searchsorted(stream.t, b[1:-1], side="right")
    starts = np.concatenate([[0], idx])
    stops = np.concatenate([idx, [len(stream)]])
    return [stream.subset(slice(s, e)) for s, e in zip(starts, stops)]


def _scaled_coords(stream: EventStream, height: int, width: int):
    if (height, width) == (stream.height, stream.width):
        return stream.x, stream.y
    return stream.x * width // stream.width, stream.y * height // stream.height


def polarity_counts(stream: EventStream, n_windows: int, height: int, width: int, boundaries=None) -> np.ndarray:
    """Raw (n_windows, 2, H, W) counts; channel 0 positive, channel 1 negative.

    Coordinates are mapped to the target grid by nearest-pixel downsampling.
    """
    if boundaries is None:
        boundaries = window_edges(stream.duration, n_windows)
    out = np.zeros((n_windows, 2, height, width), dtype=np.float64)
    if len(stream):
        k = window_index(stream.t, boundaries)
        x, y = _scaled_coords(stream, height, width)
        c = (stream.p < 0).astype(np.int64)
        flat = ((k * 2 + c) * height + y) * width + x
        out.ravel()[:] = np.bincount(flat, minlength=out.size)
    return out


def _normalize_per_window(counts: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, counts.ndim))
    peak = counts.max(axis=axes, keepdims=True)
    return np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)


def stack_frames(stream: EventStream, n_frames: int, height: int | None = None, width: int | None = None) -> FrameStack:
    """Stack the stream into ``n_frames`` equal-duration count frames.

    Channels are positive, negative and total counts, each divided by its own
    per-frame maximum.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    height = stream.height if height is None else height
    width = stream.width if width is None else width
    pol = polarity_counts(stream, n_frames, height, width)
    total = pol.sum(axis=1, keepdims=True)
    counts = np.concatenate([pol, total], axis=1)  # (N_t, 3, H, W)
    peak = counts.max(axis=(2, 3), keepdims=True)
    norm = np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)
    return FrameStack(norm.transpose(2, 3, 0, 1).astype(np.float32))


# ------------------------------------------------------------------ file formats

BIN_MAGIC = b"EVST"
BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<4sHHHQQ")
_BIN_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])


def write_event_file(stream: EventStream, fmt: str = "bin") -> bytes:
    if fmt == "bin":
        rec = np.empty(len(stream), dtype=_BIN_RECORD)
        rec["t"], rec["x"], rec["y"] = stream.t, stream.x, stream.y
        rec["p"] = (stream.p > 0).astype(np.uint8)
        head = _BIN_HEADER.pack(BIN_MAGIC, BIN_VERSION, stream.height, stream.width, stream.duration, len(stream))
        return head + rec.tobytes()
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("t,x,y,p\n")
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            buf.write(f"{t},{x},{y},{p}\n")
        return buf.getvalue().encode("ascii")
    raise ValueError(f"unknown event format {fmt!r}")


def sidecar(stream: EventStream) -> dict:
    meta = {"height": stream.height, "width": stream.width, "duration_us": stream.duration}
    if stream.label is not None:
        meta["label"] = int(stream.label)
    return meta


def parse_event_file(data: bytes, fmt: str = "bin", meta: dict | None = None) -> EventStream:
    """Decode a binary or CSV event file into a validated, time-sorted stream.

    CSV files carry no geometry, so ``meta`` (the JSON sidecar contents with
    height, width, duration_us and optional label) is required for them.
    """
    if fmt == "bin":
        return _parse_bin(data, meta)
    if fmt == "csv":
        if meta is None:
            raise EventFormatError("CSV events need sidecar metadata (height, width, duration_us)")
        return _parse_csv(data, meta)
    raise ValueError(f"unknown event format {fmt!r}")


def _parse_bin(data: bytes, meta):
    if len(data) < _BIN_HEADER.size:
        raise EventFormatError(f"offset 0: truncated header ({len(data)} bytes)")
    magic, version, h, w, duration, count = _BIN_HEADER.unpack_from(data, 0)
    if magic != BIN_MAGIC:
        raise EventFormatError(f"offset 0: bad magic {magic!r}")
    if version != BIN_VERSION:
        raise EventFormatError(f"offset 4: unsupported version {version}")
    need = _BIN_HEADER.size + count * _BIN_RECORD.itemsize
    if len(data) != need:
        raise EventFormatError(
            f"offset {_BIN_HEADER.size}: header declares {count} records ({need} bytes) but file has {len(data)} bytes")
    rec = np.frombuffer(data, dtype=_BIN_RECORD, count=count, offset=_BIN_HEADER.size)
    if count and rec["p"].max() > 1:
        i = int(np.argmax(rec["p"] > 1))
        raise EventFormatError(f"offset {_BIN_HEADER.size + i * _BIN_RECORD.itemsize}: polarity byte {rec['p'][i]}")
    if count and rec["t"].max() > np.iinfo(np.int64).max:
        raise EventFormatError("timestamp overflow")
    label = None if meta is None else meta.get("label")
    p = np.where(rec["p"] > 0, 1, -1)
    return EventStream.from_columns(rec["t"].astype(np.int64), rec["x"], rec["y"], p, h, w, duration, label)


def _parse_csv(data: bytes, meta):
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise EventFormatError(f"offset {exc.start}: non-ASCII byte") from None
    lines = text.splitlines()
    rows = []
    start = 0
    if lines and lines[0].strip().replace(" ", "") == "t,x,y,p":
        start = 1
    for lineno, row in enumerate(csv.reader(lines[start:]), start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            t, x, y, p = (int(c) for c in row)
        except ValueError:
            raise EventFormatError(f"line {lineno}: non-integer field in {row}") from None
        if p not in (-1, 1):
            raise EventFormatError(f"line {lineno}: polarity {p} not in {{-1, 1}}")
        rows.append((t, x, y, p))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    try:
        h, w, duration = int(meta["height"]), int(meta["width"]), int(meta["duration_us"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EventFormatError(f"sidecar metadata incomplete: {exc}") from None
    return EventStream.from_columns(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], h, w, duration, meta.get("label"))


def save_stream(stream: EventStream, path: str) -> None:
    fmt = "csv" if path.endswith(".csv") else "bin"
    with open(path, "wb") as fh:
        fh.write(write_event_file(stream, fmt))
    if fmt == "csv":
        with open(path[:-4] + ".json", "w") as fh:
            json.dump(sidecar(stream), fh)


def load_stream(path: str, label: int | None = None) -> EventStream:
    fmt = "csv" if path.endswith(".csv") else "bin"
    meta = None
    if fmt == "csv":
        with open(path[:-4] + ".json") as fh:
            meta = json.load(fh)
    with open(path, "rb") as fh:
        stream = parse_event_file(fh.read(), fmt, meta)
    if label is not None and stream.label != label:
        stream = EventStream(stream.t, stream.x, stream.y, stream.p, stream.height, stream.width,
                             stream.duration, label)
    return stream


# ------------------------------------------------------------------ manifest


@dataclass
class DatasetManifest:
    class_names: list[str]
    paths: list[str]
    labels: list[int]
    splits: list[str]
    root: str = "."

    def __post_init__(self):
        if not (len(self.paths) == len(self.labels) == len(self.splits)):
            raise EventValidationError("manifest columns have different lengths")
        q = len(self.class_names)
        for lab in self.labels:
            if not 0 <= lab < q:
                raise EventValidationError(f"label {lab} outside [0, {q})")
        for s in self.splits:
            if s not in ("train", "test"):
                raise EventValidationError(f"unknown split tag {s!r}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.root, path)

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def check_paths(self):
        missing = [p for p in self.paths if not os.path.exists(self.resolve(p))]
        if missing:
            raise EventValidationError(f"{len(missing)} manifest paths do not exist, e.g. {missing[0]}")

    def to_json(self) -> str:
        entries = [{"path": p, "label": lab, "split": s} for p, lab, s in zip(self.paths, self.labels, self.splits)]
        return json.dumps({"class_names": self.class_names, "entries": entries}, indent=1)

    def save(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> DatasetManifest:
        with open(path) as fh:
            doc = json.load(fh)
        entries = doc["entries"]
        m = cls(list(doc["class_names"]), [e["path"] for e in entries], [int(e["label"]) for e in entries],
                [e["split"] for e in entries], root=os.path.dirname(os.path.abspath(path)))
        m.check_paths()
        return m


# ------------------------------------------------------------------ synthetic generator

MOTIFS = (
    "bar_right", "bar_left", "bar_down", "bar_up", "orbit_cw", "orbit_ccw",
    "ring_expand", "ring_contract", "zigzag_h", "zigzag_v",
)


@dataclass
class SynthConfig:
    num_classes: int = 8
    samples_per_class: int = 100
    height: int = 64
    width: int = 64
    duration_us: int = 100_000
    noise_rate: float = 0.005
    seed: int = 7
    speed_scale: float = 1.0
    test_fraction: float = 0.2

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_classes > len(MOTIFS):
            raise ConfigError(f"only {len(MOTIFS)} motifs available, asked for {self.num_classes} classes")
        if self.height < 16 or self.width < 16:
            raise ConfigError("sensor must be at least 16x16")
        if self.noise_rate < 0:
            raise ConfigError("noise_rate must be >= 0")
        if self.samples_per_class < 1 or self.duration_us < 1:
            raise ConfigError("samples_per_class and duration_us must be positive")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in [0, 1)")


@dataclass
class MotifSample:
    """One generated recording plus the trajectory parameters that produced it."""

    stream: EventStream
    motif: str
    params: dict = field(default_factory=dict)


_RENDER_STEPS = 256


def _render(motif: str, prm: dict, s: float, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    """Occupancy mask of a motif at motion progress s in [0, 1]."""
    if motif.startswith("bar"):
        c = prm["start"] + prm["travel"] * s
        half = prm["thickness"] / 2
        along, across = (xx, yy) if motif in ("bar_right", "bar_left") else (yy, xx)
        lo, hi = prm["extent"]
        return (np.abs(along + 0.5 - c) < half) & (across >= lo) & (across < hi)
    if motif.startswith("orbit"):
        ang = prm["phase"] + prm["turns"] * 2 * np.pi * s * (1 if motif == "orbit_ccw" else -1)
        mask = np.zeros(xx.shape, dtype=bool)
        for k in (0.0, np.pi):
            cx = prm["cx"] + prm["radius"] * np.cos(ang + k)
            cy = prm["cy"] - prm["radius"] * np.sin(ang + k)
            mask |= (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 < prm["dot"] ** 2
        return mask
    if motif.startswith("ring"):
        r = prm["r0"] + (prm["r1"] - prm["r0"]) * s
        d = np.sqrt((xx + 0.5 - prm["cx"]) ** 2 + (yy + 0.5 - prm["cy"]) ** 2)
        return np.abs(d - r) < prm["thickness"] / 2
    if motif.startswith("zigzag"):
        u = prm["start"] + prm["travel"] * s
        tri = 2 * np.abs((s * prm["cycles"]) % 1.0 - 0.5)  # triangle wave in [0, 1]
        v = prm["lo"] + (prm["hi"] - prm["lo"]) * tri
        cx, cy = (u, v) if motif == "zigzag_h" else (v, u)
        return (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 < prm["dot"] ** 2
    raise ConfigError(f"unknown motif {motif!r}")


def _motif_params(motif: str, rng: np.random.Generator, h: int, w: int, speed: float) -> dict:
    size = min(h, w)
    if motif.startswith("bar"):
        horizontal = motif in ("bar_right", "bar_left")
        length = w if horizontal else h
        span = length * rng.uniform(0.45, 0.65) * speed
        first = rng.uniform(0.12, 0.88 - span / length) * length if span < 0.76 * length else 0.12 * length
        sign = 1 if motif in ("bar_right", "bar_down") else -1
        start = first if sign > 0 else first + span
        other = h if horizontal else w
        ext = rng.uniform(0.45, 0.7) * other
        lo = rng.uniform(0.05 * other, other - ext - 0.05 * other)
        return {"start": start, "travel": sign * span, "thickness": rng.uniform(2.5, 4.5),
                "extent": (lo, lo + ext)}
    if motif.startswith("orbit"):
        return {"cx": w / 2 + rng.uniform(-0.08, 0.08) * w, "cy": h / 2 + rng.uniform(-0.08, 0.08) * h,
                "radius": rng.uniform(0.2, 0.3) * size, "dot": rng.uniform(0.05, 0.08) * size,
                "phase": rng.uniform(0, 2 * np.pi), "turns": rng.uniform(0.6, 0.9) * speed}
    if motif.startswith("ring"):
        small, large = rng.uniform(0.06, 0.1) * size, rng.uniform(0.3, 0.4) * size
        small = large - (large - small) * speed
        r0, r1 = (small, large) if motif == "ring_expand" else (large, small)
        return {"cx": w / 2 + rng.uniform(-0.06, 0.06) * w, "cy": h / 2 + rng.uniform(-0.06, 0.06) * h,
                "r0": r0, "r1": r1, "thickness": rng.uniform(2.0, 3.5)}
    if motif.startswith("zigzag"):
        length = w if motif == "zigzag_h" else h
        other = h if motif == "zigzag_h" else w
        span = length * rng.uniform(0.5, 0.7) * speed
        start = rng.uniform(0.1 * length, 0.9 * length - span)
        mid = other / 2 + rng.uniform(-0.1, 0.1) * other
        amp = rng.uniform(0.15, 0.25) * other * (1 if speed > 0 else 0)
        return {"start": start, "travel": span, "lo": mid - amp, "hi": mid + amp,
                "cycles": rng.uniform(1.5, 2.5), "dot": rng.uniform(0.05, 0.08) * size}
    raise ConfigError(f"unknown motif {motif!r}")


def synth_sample(motif: str, rng: np.random.Generator, cfg: SynthConfig, label: int | None = None) -> MotifSample:
    """Render one recording of ``motif``.

    The pattern (bright on a dark background) sits still, moves during a
    random active window, then sits still again. Events are emitted where
    the rendered occupancy changes between consecutive render steps: +1 for
    pixels switching on, -1 for pixels switching off, with timestamps drawn
    uniformly inside the step. Poisson background noise is added on top.
    """
    h, w, dur = cfg.height, cfg.width, cfg.duration_us
    prm = _motif_params(motif, rng, h, w, cfg.speed_scale)
    active = rng.uniform(0.45, 0.65)
    t_start = rng.uniform(0.05, 0.95 - active)
    prm["active"] = (t_start * dur, (t_start + active) * dur)
    yy, xx = np.mgrid[0:h, 0:w]
    step_edges = np.linspace(0.0, dur, _RENDER_STEPS + 1)
    prog = np.clip((step_edges - prm["active"][0]) / (prm["active"][1] - prm["active"][0]), 0.0, 1.0)
    cols = []
    prev = _render(motif, prm, prog[0], yy, xx)
    for k in range(1, _RENDER_STEPS + 1):
        if prog[k] == prog[k - 1]:
            continue
        cur = _render(motif, prm, prog[k], yy, xx)
        on, off = cur & ~prev, prev & ~cur
        for mask, pol in ((on, 1), (off, -1)):
            ys, xs = np.nonzero(mask)
            if len(xs):
                ts = rng.uniform(step_edges[k - 1], step_edges[k], size=len(xs))
                cols.append((ts, xs, ys, np.full(len(xs), pol)))
        prev = cur
    n_noise = rng.poisson(cfg.noise_rate * dur) if cfg.noise_rate > 0 else 0
    if n_noise:
        cols.append((rng.uniform(0, dur, n_noise), rng.integers(0, w, n_noise), rng.integers(0, h, n_noise),
                     rng.choice([-1, 1], n_noise)))
    if cols:
        t, x, y, p = (np.concatenate(c) for c in zip(*cols))
        t = np.minimum(np.floor(t).astype(np.int64), dur)
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    stream = EventStream.from_columns(t, x, y, p, h, w, dur, label)
    if motif.startswith("bar"):
        prm["velocity"] = prm["travel"] / (prm["active"][1] - prm["active"][0])
    return MotifSample(stream, motif, prm)


def synth_generate(cfg: SynthConfig) -> list[EventStream]:
    """Deterministic labeled dataset, class-major order; class q uses MOTIFS[q]."""
    cfg.validate()
    out = []
    for q in range(cfg.num_classes):
        for i in range(cfg.samples_per_class):
            rng = np.random.default_rng([cfg.seed, q, i])
            out.append(synth_sample(MOTIFS[q], rng, cfg, label=q).stream)
    return out


def synth_splits(cfg: SynthConfig) -> list[str]:
    """Per class, the last ``test_fraction`` of samples are test."""
    n_test = int(round(cfg.samples_per_class * cfg.test_fraction))
    per_class = ["train"] * (cfg.samples_per_class - n_test) + ["test"] * n_test
    return per_class * cfg.num_classes


def synth_config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
