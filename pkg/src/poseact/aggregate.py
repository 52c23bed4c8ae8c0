"""Temporal aggregation of frame descriptor series into video descriptors.

Each (part, stream) series contributes blocks chosen by the scheme:
min/max over frames (static), min/max over temporal differences
(dynamic), or the mean over frames.  Blocks are divided by the average
training-frame descriptor norm of their (part, stream) pair and
concatenated stream-major, then by part, then by block.
"""

import io
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from poseact import binio
from poseact.embed import STREAM_CODES, STREAM_NAMES, STREAMS, DescriptorSeries
from poseact.errors import FormatError, ValidationError
from poseact.partcrop import PART_CODES, PART_NAMES, PART_ORDER

DESCRIPTOR_MAGIC = "PCNV"
DESCRIPTOR_VERSION = 1

SCHEMES = {
    "max": ("max",),
    "max_min": ("min", "max"),
    "static_dyn_max": ("max", "dyn_max"),
    "static_dyn_max_min": ("min", "max", "dyn_min", "dyn_max"),
    "mean": ("mean",),
}

BLOCK_CODES = {"min": 0, "max": 1, "dyn_min": 2, "dyn_max": 3, "mean": 4}
BLOCK_NAMES = {code: name for name, code in BLOCK_CODES.items()}

# layout entries for vectors that are not split by part/stream/block
# (pose-feature histograms, Fisher vectors) use this wildcard label
WHOLE = "*"
WHOLE_CODE = 255

DEFAULT_DELTA_T = 4


@dataclass
class AggregationConfig:
    scheme: str = "static_dyn_max_min"
    delta_t: int = DEFAULT_DELTA_T
    parts: Tuple[str, ...] = PART_ORDER
    streams: str = "both"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(
                f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}"
            )
        if self.delta_t < 1:
            raise ValidationError("delta_t must be >= 1")
        if self.streams not in ("appearance", "flow", "both"):
            raise ValidationError(f"unknown streams value {self.streams!r}")
        self.parts = tuple(self.parts)
        for part in self.parts:
            if part not in PART_CODES:
                raise ValidationError(f"unknown part {part!r}")

    @property
    def stream_list(self) -> Tuple[str, ...]:
        return STREAMS if self.streams == "both" else (self.streams,)

    @property
    def blocks(self) -> Tuple[str, ...]:
        return SCHEMES[self.scheme]


@dataclass(frozen=True)
class LayoutEntry:
    part: str
    stream: str
    block: str
    offset: int
    length: int


@dataclass
class VideoDescriptor:
    values: np.ndarray = field(repr=False)
    layout: Tuple[LayoutEntry, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.layout = tuple(self.layout)
        expected = 0
        for entry in self.layout:
            if entry.offset != expected:
                raise ValidationError(
                    f"layout entry {entry} starts at {entry.offset}, expected {expected}"
                )
            expected += entry.length
        if self.layout and expected != self.values.size:
            raise ValidationError(
                f"layout covers {expected} values but vector has {self.values.size}"
            )

    @property
    def dim(self) -> int:
        return self.values.size

    def block(self, part: str, stream: str, block: str) -> np.ndarray:
        for entry in self.layout:
            if (entry.part, entry.stream, entry.block) == (part, stream, block):
                return self.values[entry.offset : entry.offset + entry.length]
        raise ValidationError(f"no block ({part}, {stream}, {block}) in layout")


@dataclass
class Normalizer:
    """Average training-frame descriptor norm per (part, stream)."""

    scales: Dict[Tuple[str, str], float]

    def __post_init__(self):
        for key, value in self.scales.items():
            if not (value > 0 and np.isfinite(value)):
                raise ValidationError(f"normalizer scale for {key} must be finite > 0")

    def scale(self, part: str, stream: str) -> float:
        try:
            return self.scales[(part, stream)]
        except KeyError:
            raise ValidationError(f"normalizer has no entry for ({part}, {stream})") from None

    @classmethod
    def ones(cls, parts: Sequence[str] = PART_ORDER, streams: Sequence[str] = STREAMS):
        return cls({(p, s): 1.0 for p in parts for s in streams})


def min_max(series: DescriptorSeries) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension minimum and maximum over frames."""
    return series.vectors.min(axis=0), series.vectors.max(axis=0)


def static_descriptor(series: DescriptorSeries) -> np.ndarray:
    m, big_m = min_max(series)
    return np.concatenate([m, big_m])


def temporal_diffs(series: DescriptorSeries, delta_t: int = DEFAULT_DELTA_T) -> np.ndarray:
    """Rows f_{t+dt'} - f_t with dt' = min(delta_t, T-1).

    A single-frame series yields one all-zero row so downstream min/max
    stay defined.
    """
    if delta_t < 1:
        raise ValidationError("delta_t must be >= 1")
    f = series.vectors
    t_count = f.shape[0]
    if t_count == 1:
        return np.zeros((1, f.shape[1]))
    dt = min(delta_t, t_count - 1)
    return f[dt:] - f[: t_count - dt]


def dynamic_descriptor(series: DescriptorSeries, delta_t: int = DEFAULT_DELTA_T) -> np.ndarray:
    diffs = temporal_diffs(series, delta_t)
    return np.concatenate([diffs.min(axis=0), diffs.max(axis=0)])


def fit_normalizer(training_series: Iterable[DescriptorSeries]) -> Normalizer:
    """Mean L2 norm of frame descriptors, grouped by (part, stream)."""
    sums: Dict[Tuple[str, str], float] = {}
    counts: Dict[Tuple[str, str], int] = {}
    for series in training_series:
        key = (series.part, series.stream)
        norms = np.linalg.norm(series.vectors, axis=1)
        sums[key] = sums.get(key, 0.0) + float(norms.sum())
        counts[key] = counts.get(key, 0) + series.length
    if not sums:
        raise ValidationError("cannot fit a normalizer on an empty training set")
    scales = {}
    for key, total in sums.items():
        mean_norm = total / counts[key]
        if mean_norm <= 0:
            raise ValidationError(f"all-zero training descriptors for {key}")
        scales[key] = mean_norm
    return Normalizer(scales)


def _block_values(series: DescriptorSeries, block: str, delta_t: int) -> np.ndarray:
    if block in ("min", "max"):
        m, big_m = min_max(series)
        return m if block == "min" else big_m
    if block in ("dyn_min", "dyn_max"):
        diffs = temporal_diffs(series, delta_t)
        return diffs.min(axis=0) if block == "dyn_min" else diffs.max(axis=0)
    if block == "mean":
        return series.vectors.mean(axis=0)
    raise ValidationError(f"unknown block {block!r}")


def assemble(
    series_set: Sequence[DescriptorSeries],
    config: AggregationConfig,
    normalizer: Normalizer,
) -> VideoDescriptor:
    """Build the video descriptor for one video from its series set."""
    by_key: Dict[Tuple[str, str], DescriptorSeries] = {}
    for series in series_set:
        key = (series.part, series.stream)
        if key in by_key:
            raise ValidationError(f"duplicate series for {key}")
        by_key[key] = series

    chunks: List[np.ndarray] = []
    layout: List[LayoutEntry] = []
    offset = 0
    for stream in config.stream_list:
        for part in config.parts:
            series = by_key.get((part, stream))
            if series is None:
                raise ValidationError(f"missing series for ({part}, {stream})")
            scale = normalizer.scale(part, stream)
            for block in config.blocks:
                values = _block_values(series, block, config.delta_t) / scale
                chunks.append(values)
                layout.append(LayoutEntry(part, stream, block, offset, values.size))
                offset += values.size
    return VideoDescriptor(np.concatenate(chunks), tuple(layout))


def plan_layout(config: AggregationConfig, dim: int) -> Tuple[LayoutEntry, ...]:
    """Layout that assemble would emit for series of the given dim."""
    if dim <= 0:
        raise ValidationError("dim must be positive")
    layout = []
    offset = 0
    for stream in config.stream_list:
        for part in config.parts:
            for block in config.blocks:
                layout.append(LayoutEntry(part, stream, block, offset, dim))
                offset += dim
    return tuple(layout)


def describe_layout(layout: Union[VideoDescriptor, Sequence[LayoutEntry]]) -> str:
    """Fixed-width table of layout rows plus the total dimension."""
    entries = layout.layout if isinstance(layout, VideoDescriptor) else tuple(layout)
    rows = [("part", "stream", "block", "offset", "length")]
    for e in entries:
        rows.append((e.part, e.stream, e.block, str(e.offset), str(e.length)))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    out = io.StringIO()
    for r in rows:
        line = "  ".join(col.ljust(widths[i]) for i, col in enumerate(r))
        out.write(line.rstrip() + "\n")
    total = sum(e.length for e in entries)
    out.write(f"total dimensions: {total}\n")
    return out.getvalue()


def whole_vector(values: np.ndarray) -> VideoDescriptor:
    """Wrap a vector with a single wildcard layout entry."""
    values = np.asarray(values, dtype=np.float64).ravel()
    return VideoDescriptor(values, (LayoutEntry(WHOLE, WHOLE, WHOLE, 0, values.size),))


def _part_code(name: str) -> int:
    if name == WHOLE:
        return WHOLE_CODE
    return PART_CODES[name]


def _stream_code(name: str) -> int:
    if name == WHOLE:
        return WHOLE_CODE
    return STREAM_CODES[name]


def _block_code(name: str) -> int:
    if name == WHOLE:
        return WHOLE_CODE
    return BLOCK_CODES[name]


def write_descriptor(fh: Union[str, BinaryIO], desc: VideoDescriptor) -> None:
    if isinstance(fh, str):
        with open(fh, "wb") as out:
            write_descriptor(out, desc)
        return
    binio.write_magic(fh, DESCRIPTOR_MAGIC)
    binio.write_u32(fh, DESCRIPTOR_VERSION)
    binio.write_u32(fh, desc.dim)
    binio.write_u32(fh, len(desc.layout))
    for entry in desc.layout:
        binio.write_u8(fh, _part_code(entry.part))
        binio.write_u8(fh, _stream_code(entry.stream))
        binio.write_u8(fh, _block_code(entry.block))
        binio.write_u32(fh, entry.offset)
        binio.write_u32(fh, entry.length)
    binio.write_f32(fh, desc.values)


def read_descriptor(fh: Union[str, BinaryIO]) -> VideoDescriptor:
    if isinstance(fh, str):
        with open(fh, "rb") as inp:
            return read_descriptor(inp)
    binio.read_magic(fh, DESCRIPTOR_MAGIC)
    version = binio.read_u32(fh)
    if version != DESCRIPTOR_VERSION:
        raise ValidationError(f"unsupported descriptor version {version}")
    dim = binio.read_u32(fh)
    entry_count = binio.read_u32(fh)
    layout = []
    for _ in range(entry_count):
        part_code = binio.read_u8(fh)
        stream_code = binio.read_u8(fh)
        block_code = binio.read_u8(fh)
        offset = binio.read_u32(fh)
        length = binio.read_u32(fh)
        part = WHOLE if part_code == WHOLE_CODE else PART_NAMES.get(part_code)
        stream = WHOLE if stream_code == WHOLE_CODE else STREAM_NAMES.get(stream_code)
        block = WHOLE if block_code == WHOLE_CODE else BLOCK_NAMES.get(block_code)
        if part is None or stream is None or block is None:
            raise FormatError("descriptor layout has unknown part/stream/block code")
        layout.append(LayoutEntry(part, stream, block, offset, length))
    values = binio.read_f32(fh, dim)
    return VideoDescriptor(values, tuple(layout))


def write_normalizer(fh, normalizer: Normalizer) -> None:
    """Text format: one `part stream scale` line per entry."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_normalizer(out, normalizer)
        return
    fh.write("# frame-norm scales: part stream scale\n")
    for (part, stream) in sorted(normalizer.scales):
        fh.write(f"{part} {stream} {normalizer.scales[(part, stream)]!r}\n")


def read_normalizer(fh) -> Normalizer:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_normalizer(inp)
    scales = {}
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 3:
            raise FormatError(f"normalizer line {lineno}: expected 3 fields")
        try:
            scales[(fields[0], fields[1])] = float(fields[2])
        except ValueError:
            raise FormatError(f"normalizer line {lineno}: bad scale {fields[2]!r}") from None
    if not scales:
        raise FormatError("normalizer file has no entries")
    return Normalizer(scales)
