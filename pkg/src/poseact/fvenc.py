"""Fisher-vector encoding of local descriptor sets.

Covers the full desk-scale stack: PCA halving, diagonal-covariance GMM
fit by EM (k-means init, variance floor, monotone log-likelihood),
first/second-order Fisher statistics, signed-sqrt plus L2 normalization,
and a configurable spatial pyramid over normalized (x, y) positions.
"""

from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Sequence, Tuple, Union

import numpy as np

from poseact import binio
from poseact.errors import FormatError, ValidationError

PCA_MAGIC = "PPCA"
GMM_MAGIC = "PGMM"
MODEL_VERSION = 1

DEFAULT_PYRAMID = ((1, 1), (1, 3))  # (cols, rows): whole frame + 3 horizontal bands

_VARIANCE_FLOOR_FACTOR = 1e-4
_ORTHO_TOL = 1e-5  # loose enough to survive a float32 round trip


@dataclass
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.ndim != 2 or self.basis.shape[1] != self.mean.size:
            raise ValidationError("basis must be (d_out, d) matching mean")
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.basis.shape[0]), atol=_ORTHO_TOL):
            raise ValidationError("basis rows are not orthonormal")

    @property
    def d_in(self) -> int:
        return self.mean.size

    @property
    def d_out(self) -> int:
        return self.basis.shape[0]


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)
    log_likelihoods: Tuple[float, ...] = ()

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        k = self.weights.size
        if self.means.ndim != 2 or self.means.shape[0] != k:
            raise ValidationError("means must be (K, d)")
        if self.variances.shape != self.means.shape:
            raise ValidationError("variances must match means shape")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValidationError("weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise ValidationError("variances must be positive")

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass
class LocalDescriptorSet:
    """N local descriptors with frame positions normalized to [0, 1]^2."""

    descriptors: np.ndarray = field(repr=False)
    positions: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.descriptors = np.atleast_2d(np.asarray(self.descriptors, dtype=np.float64))
        if self.descriptors.size == 0:
            self.descriptors = self.descriptors.reshape(0, self.descriptors.shape[-1] or 0)
        if self.positions is not None:
            self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
            if self.positions.shape != (self.descriptors.shape[0], 2):
                raise ValidationError("positions must be (N, 2)")
            if self.positions.size and (
                self.positions.min() < 0 or self.positions.max() > 1
            ):
                raise ValidationError("positions must lie in [0, 1]^2")

    @property
    def n(self) -> int:
        return self.descriptors.shape[0]

    @property
    def d(self) -> int:
        return self.descriptors.shape[1]


def pca_fit(data: np.ndarray, d_out: int = None) -> PcaModel:
    """Top-d_out principal axes (default d//2), deterministic signs.

    Each axis is flipped so its largest-magnitude entry is positive,
    removing the eigenvector sign ambiguity.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValidationError("pca_fit needs at least 2 rows")
    n, d = data.shape
    if d_out is None:
        d_out = max(d // 2, 1)
    if not (1 <= d_out <= d):
        raise ValidationError(f"d_out must be in [1, {d}]")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = (centered.T @ centered) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_out]
    basis = eigvecs[:, order].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, basis)


def pca_apply(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return model.basis @ (x - model.mean)
    return (x - model.mean) @ model.basis.T


def _kmeans(data: np.ndarray, k: int, rng: np.random.Generator, iters: int = 25):
    """Plain Lloyd with k-means++ seeding; revives empty clusters."""
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = data[rng.integers(n, size=k - i)]
            break
        centers[i] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((data - centers[i]) ** 2).sum(axis=1))

    assign = None
    for _ in range(iters):
        dist = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = data[assign == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
            else:
                worst = ((data - centers[assign]) ** 2).sum(axis=1).argmax()
                centers[c] = data[worst]
                assign[worst] = c
    dist = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return centers, dist.argmin(axis=1)


def _log_gauss(data: np.ndarray, gmm_means: np.ndarray, gmm_vars: np.ndarray) -> np.ndarray:
    """(N, K) log densities of diagonal Gaussians."""
    n = data.shape[0]
    k = gmm_means.shape[0]
    out = np.empty((n, k))
    for c in range(k):
        var = gmm_vars[c]
        quad = ((data - gmm_means[c]) ** 2 / var).sum(axis=1)
        out[:, c] = -0.5 * (np.log(2 * np.pi * var).sum() + quad)
    return out


def _log_sum_exp(rows: np.ndarray) -> np.ndarray:
    peak = rows.max(axis=1)
    return peak + np.log(np.exp(rows - peak[:, None]).sum(axis=1))


def gmm_fit(
    data: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> GmmModel:
    """Diagonal-covariance EM from a seeded k-means start.

    Variances never drop below 1e-4 times the per-dimension data
    variance (with a tiny absolute guard for constant dimensions); the
    floored M-step is the constrained maximizer, so the log-likelihood
    sequence recorded on the model is non-decreasing and that is
    checked every iteration.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = data.shape
    if n < k:
        raise ValidationError(f"need at least {k} points to fit {k} components, got {n}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    floor = np.maximum(_VARIANCE_FLOOR_FACTOR * data.var(axis=0), 1e-12)

    rng = np.random.default_rng(seed)
    centers, assign = _kmeans(data, k, rng)
    weights = np.bincount(assign, minlength=k).astype(np.float64)
    weights = np.maximum(weights, 1.0)
    weights /= weights.sum()
    means = centers.copy()
    variances = np.empty((k, d))
    for c in range(k):
        members = data[assign == c]
        variances[c] = members.var(axis=0) if members.shape[0] else 0.0
    variances = np.maximum(variances, floor)

    history = []
    for _ in range(max_iter):
        joint = np.log(weights)[None, :] + _log_gauss(data, means, variances)
        per_row = _log_sum_exp(joint)
        ll = float(per_row.sum())
        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(
                f"EM log-likelihood decreased: {history[-1]} -> {ll}"
            )
        converged = bool(history) and ll - history[-1] < tol
        history.append(ll)
        if converged:
            break
        resp = np.exp(joint - per_row[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 0
        if not np.all(alive):
            nk = np.where(alive, nk, 1.0)
        new_means = (resp.T @ data) / nk[:, None]
        new_vars = np.empty_like(variances)
        for c in range(k):
            new_vars[c] = (resp[:, c, None] * (data - new_means[c]) ** 2).sum(axis=0) / nk[c]
        means = np.where(alive[:, None], new_means, means)
        variances = np.maximum(np.where(alive[:, None], new_vars, variances), floor)
        weights = np.maximum(resp.sum(axis=0) / n, 1e-12)
        weights /= weights.sum()

    return GmmModel(weights, means, variances, tuple(history))


def responsibilities(gmm: GmmModel, data: np.ndarray) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    joint = np.log(gmm.weights)[None, :] + _log_gauss(data, gmm.means, gmm.variances)
    return np.exp(joint - _log_sum_exp(joint)[:, None])


def fisher_encode(dset: LocalDescriptorSet, gmm: GmmModel) -> np.ndarray:
    """Unnormalized FV: first-order blocks for all components, then
    second-order, each block d-dimensional.  An empty set encodes to
    the zero vector so descriptor-free videos stay representable.
    """
    if dset.d != gmm.d and dset.n > 0:
        raise ValidationError(f"descriptor dim {dset.d} != GMM dim {gmm.d}")
    k, d = gmm.k, gmm.d
    if dset.n == 0:
        return np.zeros(2 * k * d)
    x = dset.descriptors
    n = dset.n
    gamma = responsibilities(gmm, x)
    sigma = np.sqrt(gmm.variances)
    first = np.empty((k, d))
    second = np.empty((k, d))
    for c in range(k):
        u = (x - gmm.means[c]) / sigma[c]
        g = gamma[:, c][:, None]
        first[c] = (g * u).sum(axis=0) / (n * np.sqrt(gmm.weights[c]))
        second[c] = ((g * (u**2 - 1.0)).sum(axis=0)) / (n * np.sqrt(2 * gmm.weights[c]))
    return np.concatenate([first.ravel(), second.ravel()])


def normalize_fv(v: np.ndarray) -> np.ndarray:
    """Signed square root then L2; the zero vector passes through."""
    v = np.asarray(v, dtype=np.float64)
    rooted = np.sign(v) * np.sqrt(np.abs(v))
    norm = np.linalg.norm(rooted)
    return rooted / norm if norm > 0 else rooted


def pyramid_encode(
    dset: LocalDescriptorSet,
    gmm: GmmModel,
    grid: Sequence[Tuple[int, int]] = DEFAULT_PYRAMID,
) -> np.ndarray:
    """Concatenated per-cell normalized FVs, cells in row-major order.

    grid lists (cols, rows) levels; descriptors land in cells by their
    normalized positions.  A single 1x1 level equals plain
    fisher_encode + normalize_fv.
    """
    if not grid:
        raise ValidationError("pyramid grid is empty")
    if dset.positions is None and any(level != (1, 1) for level in grid):
        raise ValidationError("pyramid with multi-cell levels needs positions")
    blocks = []
    for cols, rows in grid:
        if cols < 1 or rows < 1:
            raise ValidationError("grid levels must be >= 1x1")
        for row in range(rows):
            for col in range(cols):
                if (cols, rows) == (1, 1):
                    member = dset
                else:
                    x = dset.positions[:, 0]
                    y = dset.positions[:, 1]
                    inside = (
                        (np.minimum((x * cols).astype(int), cols - 1) == col)
                        & (np.minimum((y * rows).astype(int), rows - 1) == row)
                    )
                    member = LocalDescriptorSet(
                        dset.descriptors[inside].reshape(-1, dset.d),
                        dset.positions[inside].reshape(-1, 2),
                    )
                blocks.append(normalize_fv(fisher_encode(member, gmm)))
    return np.concatenate(blocks)


def write_locals(fh, dset: LocalDescriptorSet) -> None:
    """Text format: `#locals <dim>` header, then `x y v1 .. vd` lines."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_locals(out, dset)
        return
    if dset.positions is None:
        raise ValidationError("cannot serialize a descriptor set without positions")
    fh.write(f"#locals {dset.d}\n")
    for i in range(dset.n):
        x, y = (float(c) for c in dset.positions[i])
        values = " ".join(repr(float(v)) for v in dset.descriptors[i])
        fh.write(f"{x!r} {y!r} {values}\n")


def read_locals(fh) -> LocalDescriptorSet:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_locals(inp)
    header = fh.readline().split()
    if len(header) != 2 or header[0] != "#locals":
        raise FormatError("local descriptor file must start with `#locals <dim>`")
    try:
        dim = int(header[1])
    except ValueError:
        raise FormatError(f"bad local descriptor dim {header[1]!r}") from None
    rows = []
    positions = []
    for lineno, line in enumerate(fh, start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2 + dim:
            raise FormatError(
                f"locals line {lineno}: {len(fields)} fields, expected {2 + dim}"
            )
        try:
            numbers = [float(v) for v in fields]
        except ValueError:
            raise FormatError(f"locals line {lineno}: non-numeric field") from None
        positions.append(numbers[:2])
        rows.append(numbers[2:])
    if rows:
        return LocalDescriptorSet(np.array(rows), np.array(positions))
    return LocalDescriptorSet(np.zeros((0, dim)), np.zeros((0, 2)))


def write_pca(fh: Union[str, BinaryIO], model: PcaModel) -> None:
    if isinstance(fh, str):
        with open(fh, "wb") as out:
            write_pca(out, model)
        return
    binio.write_magic(fh, PCA_MAGIC)
    binio.write_u32(fh, MODEL_VERSION)
    binio.write_u32(fh, model.d_in)
    binio.write_u32(fh, model.d_out)
    binio.write_f32(fh, model.mean)
    binio.write_f32(fh, model.basis.ravel())


def read_pca(fh: Union[str, BinaryIO]) -> PcaModel:
    if isinstance(fh, str):
        with open(fh, "rb") as inp:
            return read_pca(inp)
    binio.read_magic(fh, PCA_MAGIC)
    version = binio.read_u32(fh)
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported PCA model version {version}")
    d_in = binio.read_u32(fh)
    d_out = binio.read_u32(fh)
    mean = binio.read_f32(fh, d_in)
    basis = binio.read_f32(fh, d_out * d_in).reshape(d_out, d_in)
    return PcaModel(mean, basis)


def write_gmm(fh: Union[str, BinaryIO], model: GmmModel) -> None:
    if isinstance(fh, str):
        with open(fh, "wb") as out:
            write_gmm(out, model)
        return
    binio.write_magic(fh, GMM_MAGIC)
    binio.write_u32(fh, MODEL_VERSION)
    binio.write_u32(fh, model.k)
    binio.write_u32(fh, model.d)
    binio.write_f32(fh, model.weights)
    binio.write_f32(fh, model.means.ravel())
    binio.write_f32(fh, model.variances.ravel())


def read_gmm(fh: Union[str, BinaryIO]) -> GmmModel:
    if isinstance(fh, str):
        with open(fh, "rb") as inp:
            return read_gmm(inp)
    binio.read_magic(fh, GMM_MAGIC)
    version = binio.read_u32(fh)
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported GMM model version {version}")
    k = binio.read_u32(fh)
    d = binio.read_u32(fh)
    weights = binio.read_f32(fh, k)
    weights = weights / weights.sum()  # restore exact sum after float32 rounding
    means = binio.read_f32(fh, k * d).reshape(k, d)
    variances = binio.read_f32(fh, k * d).reshape(k, d)
    return GmmModel(weights, means, variances)
