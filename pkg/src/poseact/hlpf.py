"""High-level pose features: quantized histograms of joint geometry.

Poses are first made translation- and scale-invariant (offsets to the
head, divided by the median head-to-hip distance).  Static features per
frame are all pairwise joint distances, pairwise orientations, and the
inner angles at every vertex of every joint triple.  Dynamic features
difference the static ones over time and add per-joint translations.
Every feature dimension gets its own 1-D k-means codebook; a video is
the L2-normalized concatenation of per-dimension count histograms.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from poseact.errors import DegenerateGeometryError, FormatError, ValidationError
from poseact.partcrop import HEAD, HIP_CENTER, Pose, PoseSequence

DEFAULT_CODEBOOK_SIZE = 20


@dataclass
class HlpfConfig:
    codebook_size: int = DEFAULT_CODEBOOK_SIZE
    delta_t: int = 1
    reference_joint: str = HEAD
    size_joint: str = HIP_CENTER
    seed: int = 0
    restarts: int = 16

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValidationError("codebook_size must be >= 2")
        if self.delta_t < 1:
            raise ValidationError("delta_t must be >= 1")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


@dataclass
class Codebook:
    """Per-dimension scalar centers, each row sorted ascending."""

    centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2:
            raise ValidationError("centers must be (dims, codebook_size)")
        if not np.all(np.isfinite(self.centers)):
            raise ValidationError("centers must be finite")
        if np.any(np.diff(self.centers, axis=1) < 0):
            raise ValidationError("each row of centers must be sorted ascending")

    @property
    def dims(self) -> int:
        return self.centers.shape[0]

    @property
    def size(self) -> int:
        return self.centers.shape[1]


def wrap_angle(x: np.ndarray) -> np.ndarray:
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def normalize_poses(seq: PoseSequence, config: HlpfConfig = None) -> PoseSequence:
    """Head-relative joints divided by the median head-to-hip distance."""
    config = config or HlpfConfig()
    sizes = []
    for pose in seq.frames:
        head = pose.joint(config.reference_joint)
        hip = pose.joint(config.size_joint)
        sizes.append(float(np.linalg.norm(hip - head)))
    person_size = float(np.median(sizes))
    if person_size <= 0:
        raise DegenerateGeometryError(
            f"person size is zero for video {seq.video_id!r} "
            f"({config.reference_joint} and {config.size_joint} coincide)"
        )
    frames = []
    for pose in seq.frames:
        head = pose.joint(config.reference_joint)
        frames.append(Pose((pose.coords - head) / person_size, pose.joint_names, pose.score))
    return PoseSequence(frames, seq.video_id)


_TRIPLE_CACHE: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _triple_indices(j_count: int):
    """(vertex, arm_a, arm_b) index arrays for all inner angles."""
    cached = _TRIPLE_CACHE.get(j_count)
    if cached is None:
        vertex, arm_a, arm_b = [], [], []
        for j in range(j_count):
            for i in range(j_count):
                if i == j:
                    continue
                for k in range(i + 1, j_count):
                    if k == j:
                        continue
                    vertex.append(j)
                    arm_a.append(i)
                    arm_b.append(k)
        cached = (np.array(vertex), np.array(arm_a), np.array(arm_b))
        _TRIPLE_CACHE[j_count] = cached
    return cached


def static_feature_count(j_count: int) -> int:
    pairs = j_count * (j_count - 1) // 2
    triples = j_count * (j_count - 1) * (j_count - 2) // 2
    return 2 * pairs + triples


def dynamic_feature_count(j_count: int) -> int:
    return static_feature_count(j_count) + 3 * j_count


def _pair_count(j_count: int) -> int:
    return j_count * (j_count - 1) // 2


def static_features(pose: Pose) -> np.ndarray:
    """Distances, orientations (i < j), and inner angles, in that order."""
    coords = pose.coords
    j_count = coords.shape[0]
    iu, ju = np.triu_indices(j_count, k=1)
    delta = coords[ju] - coords[iu]
    distances = np.hypot(delta[:, 0], delta[:, 1])
    orientations = wrap_angle(np.arctan2(delta[:, 1], delta[:, 0]))

    vertex, arm_a, arm_b = _triple_indices(j_count)
    u = coords[arm_a] - coords[vertex]
    v = coords[arm_b] - coords[vertex]
    nu = np.hypot(u[:, 0], u[:, 1])
    nv = np.hypot(v[:, 0], v[:, 1])
    denom = nu * nv
    # zero-length arm (coincident joints): angle defined as 0
    safe = denom > 0
    cosines = np.zeros(len(denom))
    np.divide((u * v).sum(axis=1), denom, out=cosines, where=safe)
    angles = np.where(safe, np.arccos(np.clip(cosines, -1.0, 1.0)), 0.0)
    return np.concatenate([distances, orientations, angles])


def dynamic_features(seq: PoseSequence, config: HlpfConfig = None) -> np.ndarray:
    """(T - delta_t, D) rows: wrapped static diffs plus joint motions.

    Per joint the motion triplet is (dx, dy, atan2(dy, dx)); a zero
    translation has orientation 0.  T <= delta_t gives an empty array.
    """
    config = config or HlpfConfig()
    j_count = len(seq.joint_names)
    t_count = len(seq)
    dt = config.delta_t
    if t_count <= dt:
        return np.zeros((0, dynamic_feature_count(j_count)))

    static = np.stack([static_features(pose) for pose in seq.frames])
    diffs = static[dt:] - static[:-dt]
    angle_dims = slice(_pair_count(j_count), static.shape[1])
    diffs[:, angle_dims] = wrap_angle(diffs[:, angle_dims])

    coords = np.stack([pose.coords for pose in seq.frames])
    moves = coords[dt:] - coords[:-dt]  # (T-dt, J, 2)
    theta = wrap_angle(np.arctan2(moves[:, :, 1], moves[:, :, 0]))
    motion = np.concatenate([moves, theta[:, :, None]], axis=2)
    return np.concatenate([diffs, motion.reshape(moves.shape[0], -1)], axis=1)


def video_features(seq: PoseSequence, config: HlpfConfig = None) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize a sequence and return its (static, dynamic) feature rows."""
    config = config or HlpfConfig()
    normalized = normalize_poses(seq, config)
    static = np.stack([static_features(pose) for pose in normalized.frames])
    dynamic = dynamic_features(normalized, config)
    return static, dynamic


def kmeans_1d(
    values: np.ndarray,
    k: int,
    rng: np.random.Generator,
    restarts: int = 16,
    max_iter: int = 100,
) -> np.ndarray:
    """Best-of-restarts Lloyd on scalars; returns k sorted centers.

    Fewer than k distinct values short-circuits to the distinct values
    padded with the maximum, which is also the fallback when clusters
    collapse during iteration.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("cannot fit a codebook on no values")
    if not np.all(np.isfinite(values)):
        raise ValidationError("codebook values must be finite")
    distinct = np.unique(values)
    if distinct.size <= k:
        return _pad_centers(distinct, k)

    best_inertia = np.inf
    best_centers = None
    for _ in range(restarts):
        centers = _kmeanspp_init(values, k, rng)
        centers, inertia = _lloyd_1d(values, centers, max_iter)
        if inertia < best_inertia:
            best_inertia = inertia
            best_centers = centers
    centers = np.sort(best_centers)
    unique_centers = np.unique(centers)
    if unique_centers.size < k:
        return _pad_centers(unique_centers, k)
    return centers


def _pad_centers(distinct: np.ndarray, k: int) -> np.ndarray:
    pad = np.full(k - distinct.size, distinct.max())
    return np.sort(np.concatenate([distinct, pad]))


def _kmeanspp_init(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = values[rng.integers(values.size)]
    d2 = (values - centers[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = values[rng.integers(values.size, size=k - i)]
            break
        centers[i] = values[rng.choice(values.size, p=d2 / total)]
        d2 = np.minimum(d2, (values - centers[i]) ** 2)
    return centers


def _lloyd_1d(values: np.ndarray, centers: np.ndarray, max_iter: int):
    centers = centers.copy()
    k = centers.size
    assign = None
    for _ in range(max_iter):
        dist = np.abs(values[:, None] - centers[None, :])
        new_assign = dist.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = values[assign == c]
            if members.size:
                centers[c] = members.mean()
            else:
                # revive an empty cluster at the worst-fit point
                worst = np.abs(values - centers[assign]).argmax()
                centers[c] = values[worst]
    dist = np.abs(values[:, None] - centers[None, :])
    assign = dist.argmin(axis=1)
    inertia = float(((values - centers[assign]) ** 2).sum())
    return centers, inertia


def fit_codebooks(
    feature_collection: Iterable[Tuple[np.ndarray, np.ndarray]],
    config: HlpfConfig = None,
) -> Codebook:
    """One codebook per feature dimension over all training frames.

    Takes (static, dynamic) row-matrices per video as produced by
    video_features; static dimensions come first in the codebook.
    """
    config = config or HlpfConfig()
    static_rows: List[np.ndarray] = []
    dynamic_rows: List[np.ndarray] = []
    for static, dynamic in feature_collection:
        static_rows.append(np.asarray(static, dtype=np.float64))
        dynamic_rows.append(np.asarray(dynamic, dtype=np.float64))
    if not static_rows:
        raise ValidationError("cannot fit codebooks on an empty collection")
    all_static = np.vstack(static_rows)
    nonempty_dynamic = [d for d in dynamic_rows if d.size]
    if not nonempty_dynamic:
        raise ValidationError("no dynamic feature rows; need at least one multi-frame video")
    all_dynamic = np.vstack(nonempty_dynamic)

    columns = [all_static[:, d] for d in range(all_static.shape[1])]
    columns += [all_dynamic[:, d] for d in range(all_dynamic.shape[1])]

    centers = np.empty((len(columns), config.codebook_size))
    for d, column in enumerate(columns):
        rng = np.random.default_rng([config.seed, d])
        centers[d] = kmeans_1d(column, config.codebook_size, rng, config.restarts)
    return Codebook(centers)


def quantize_counts(rows: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Per-dimension histograms of nearest-center assignments.

    rows: (T, D) values; centers: (D, k).  Returns (D, k) counts.  Ties
    go to the lower-index (smaller) center.
    """
    rows = np.asarray(rows, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    d_count, k = centers.shape
    counts = np.zeros((d_count, k), dtype=np.int64)
    if rows.shape[0] == 0:
        return counts
    assign = np.abs(rows[:, :, None] - centers[None, :, :]).argmin(axis=2)
    for d in range(d_count):
        counts[d] = np.bincount(assign[:, d], minlength=k)
    return counts


def encode_video(
    seq: PoseSequence, codebooks: Codebook, config: HlpfConfig = None
) -> np.ndarray:
    """L2-normalized concatenation of per-dimension count histograms."""
    config = config or HlpfConfig()
    j_count = len(seq.joint_names)
    expected = static_feature_count(j_count) + dynamic_feature_count(j_count)
    if codebooks.dims != expected:
        raise ValidationError(
            f"codebook has {codebooks.dims} dimensions; poses with {j_count} "
            f"joints need {expected}"
        )
    static, dynamic = video_features(seq, config)
    split = static.shape[1]
    counts_static = quantize_counts(static, codebooks.centers[:split])
    counts_dynamic = quantize_counts(dynamic, codebooks.centers[split:])
    histogram = np.concatenate([counts_static, counts_dynamic]).ravel().astype(np.float64)
    norm = np.linalg.norm(histogram)
    return histogram / norm if norm > 0 else histogram


def write_codebook(fh, codebook: Codebook) -> None:
    """Text format: dimension index then its centers, one line each."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_codebook(out, codebook)
        return
    for d in range(codebook.dims):
        centers = " ".join(repr(float(c)) for c in codebook.centers[d])
        fh.write(f"{d} {centers}\n")


def read_codebook(fh) -> Codebook:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_codebook(inp)
    rows = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            index = int(fields[0])
            centers = [float(x) for x in fields[1:]]
        except (ValueError, IndexError):
            raise FormatError(f"codebook line {lineno}: malformed") from None
        if index != len(rows):
            raise FormatError(f"codebook line {lineno}: expected dimension {len(rows)}")
        if rows and len(centers) != len(rows[0]):
            raise FormatError(f"codebook line {lineno}: inconsistent center count")
        if not centers:
            raise FormatError(f"codebook line {lineno}: no centers")
        rows.append(centers)
    if not rows:
        raise FormatError("codebook file has no rows")
    return Codebook(np.array(rows))
