"""Per-frame, per-part descriptor providers.

Real deployments compute frame descriptors with external networks and
import them into a file store; the store then answers lookups by
(video_id, frame, part, stream) key.  A deterministic test embedder
stands in for the network during development: it downsamples a patch to
16x16x3, scales to [0, 1], and applies a fixed seeded random projection.
"""

from dataclasses import dataclass, field
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from poseact import binio
from poseact.errors import FormatError, ValidationError
from poseact.flowprep import FlowField, QuantizedFlowImage, quantize_flow
from poseact.partcrop import (
    PART_CODES,
    PART_NAMES,
    PART_ORDER,
    Patch,
    PartBox,
    PoseSequence,
    crop_resize,
    part_boxes,
)

STORE_MAGIC = "PCNF"
STORE_VERSION = 1

STREAMS = ("appearance", "flow")
STREAM_CODES = {name: i for i, name in enumerate(STREAMS)}
STREAM_NAMES = {i: name for name, i in STREAM_CODES.items()}

DescriptorKey = Tuple[str, int, str, str]  # (video_id, frame, part, stream)

_PROBE_SIDE = 16


@dataclass
class DescriptorSeries:
    """Frame descriptors for one (part, stream): a (T, k) float matrix."""

    part: str
    stream: str
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValidationError("vectors must be (T, k) with T >= 1")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("descriptor values must be finite")
        if self.stream not in STREAM_CODES:
            raise ValidationError(f"unknown stream {self.stream!r}")

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ProviderConfig:
    kind: str = "test_embedder"
    dim: int = 4096
    seed: int = 0
    store_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("file_store", "test_embedder"):
            raise ValidationError(f"unknown provider kind {self.kind!r}")
        if self.dim <= 0:
            raise ValidationError("descriptor dim must be positive")


class TestEmbedder:
    """Seeded random projection of a 16x16x3 patch probe.

    The projection matrix has unit-variance entries drawn once from a
    PCG64 generator, so identical (patch, seed) pairs embed identically
    on every platform.
    """

    __test__ = False  # pytest: provider, not a test case

    def __init__(self, dim: int, seed: int = 0):
        if dim <= 0:
            raise ValidationError("dim must be positive")
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dim, 3 * _PROBE_SIDE * _PROBE_SIDE))

    def describe(self, patch: Patch, key: DescriptorKey = None) -> np.ndarray:
        if patch is None:
            raise ValidationError("test embedder needs a patch")
        probe = _downsample_probe(patch)
        return self._projection @ probe


def _downsample_probe(patch: Patch) -> np.ndarray:
    box = PartBox("full_image", 0.0, 0.0, float(patch.side), float(patch.side))
    small = crop_resize(patch.data, box, side=_PROBE_SIDE)
    return small.data.ravel() / 255.0


class FileStore:
    """Read-only-after-build descriptor lookup by key."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValidationError("dim must be positive")
        self.dim = dim
        self._data: Dict[DescriptorKey, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._data)

    def add(self, key: DescriptorKey, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise FormatError(
                f"vector for {key} has shape {vector.shape}, expected ({self.dim},)"
            )
        # round-trip through float32 so memory semantics equal disk semantics
        self._data[key] = vector.astype("<f4").astype(np.float64)

    def describe(self, patch: Optional[Patch], key: DescriptorKey) -> np.ndarray:
        try:
            return self._data[key]
        except KeyError:
            raise ValidationError(f"descriptor store has no entry for key {key}") from None

    def keys(self):
        return self._data.keys()

    def save(self, fh: Union[str, BinaryIO]) -> None:
        if isinstance(fh, str):
            with open(fh, "wb") as out:
                self.save(out)
            return
        binio.write_magic(fh, STORE_MAGIC)
        binio.write_u32(fh, STORE_VERSION)
        binio.write_u32(fh, self.dim)
        binio.write_u32(fh, len(self._data))
        for key in sorted(self._data):
            video_id, frame, part, stream = key
            binio.write_str(fh, video_id)
            binio.write_u32(fh, frame)
            binio.write_u8(fh, PART_CODES[part])
            binio.write_u8(fh, STREAM_CODES[stream])
            binio.write_f32(fh, self._data[key])

    @classmethod
    def load(cls, fh: Union[str, BinaryIO]) -> "FileStore":
        if isinstance(fh, str):
            with open(fh, "rb") as inp:
                return cls.load(inp)
        binio.read_magic(fh, STORE_MAGIC)
        version = binio.read_u32(fh)
        if version != STORE_VERSION:
            raise ValidationError(f"unsupported store version {version}")
        dim = binio.read_u32(fh)
        count = binio.read_u32(fh)
        store = cls(dim)
        for _ in range(count):
            video_id = binio.read_str(fh)
            frame = binio.read_u32(fh)
            part = PART_NAMES.get(binio.read_u8(fh))
            stream = STREAM_NAMES.get(binio.read_u8(fh))
            if part is None or stream is None:
                raise FormatError("store record has unknown part/stream code")
            store._data[(video_id, frame, part, stream)] = binio.read_f32(fh, dim)
        return store


Provider = Union[TestEmbedder, FileStore]


def make_provider(config: ProviderConfig) -> Provider:
    if config.kind == "test_embedder":
        return TestEmbedder(config.dim, config.seed)
    if config.store_path is None:
        raise ValidationError("file_store provider needs a store_path")
    store = FileStore.load(config.store_path)
    if store.dim != config.dim:
        raise FormatError(f"store dim {store.dim} != configured dim {config.dim}")
    return store


def describe(patch: Optional[Patch], provider, key: DescriptorKey) -> np.ndarray:
    """Descriptor for one patch/key under the given provider."""
    if isinstance(provider, ProviderConfig):
        provider = make_provider(provider)
    return provider.describe(patch, key)


def extract_series(
    frames: Sequence[np.ndarray],
    flows: Sequence[Union[FlowField, QuantizedFlowImage]],
    poses: PoseSequence,
    provider: Provider,
    parts: Sequence[str] = PART_ORDER,
    hand_scale: float = 0.5,
    body_dilation: float = 0.1,
    patch_side: int = 224,
) -> List[DescriptorSeries]:
    """Extract one DescriptorSeries per (part, stream) over all frames.

    With T frames there are T-1 flow fields; field t describes frame t
    and field T-1 is reused for the last frame so both streams align to
    length T.  A single-frame video uses a zero flow field.
    """
    t_count = len(poses)
    if len(frames) != t_count:
        raise ValidationError(f"{len(frames)} frames but {t_count} poses")
    expected_flows = max(t_count - 1, 0)
    if len(flows) != expected_flows:
        raise ValidationError(f"{len(flows)} flow fields, expected {expected_flows}")

    flow_rasters = [_as_flow_raster(fl) for fl in flows]
    if t_count == 1:
        h, w = np.asarray(frames[0]).shape[:2]
        flow_rasters = [quantize_flow(FlowField.zero(w, h)).data]

    needs_patch = not isinstance(provider, FileStore)
    per_key: Dict[Tuple[str, str], List[np.ndarray]] = {
        (part, stream): [] for stream in STREAMS for part in parts
    }
    for t in range(t_count):
        rgb = np.asarray(frames[t])
        flow_img = flow_rasters[min(t, len(flow_rasters) - 1)]
        h, w = rgb.shape[:2]
        boxes = part_boxes(poses.frames[t], w, h, hand_scale, body_dilation, parts)
        for box in boxes:
            for stream, raster in (("appearance", rgb), ("flow", flow_img)):
                key = (poses.video_id, t, box.part, stream)
                patch = crop_resize(raster, box, patch_side) if needs_patch else None
                try:
                    vec = provider.describe(patch, key)
                except ValidationError as exc:
                    raise ValidationError(
                        f"frame {t}, part {box.part}, stream {stream}: {exc}"
                    ) from exc
                per_key[(box.part, stream)].append(vec)

    out = []
    for stream in STREAMS:
        for part in parts:
            out.append(DescriptorSeries(part, stream, np.stack(per_key[(part, stream)])))
    return out


def _as_flow_raster(flow) -> np.ndarray:
    if isinstance(flow, FlowField):
        return quantize_flow(flow).data
    if isinstance(flow, QuantizedFlowImage):
        return flow.data
    return np.asarray(flow)
