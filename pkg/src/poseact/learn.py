"""One-vs-rest SVM training, scoring, and score fusion.

Linear models solve the L2-regularized hinge loss by dual coordinate
descent with a constant-1 bias feature; histogram models use an
exponential chi-square kernel solved the same way on the precomputed
kernel matrix.  Training is deterministic given the seed: example
order is reshuffled per epoch from a fixed generator, and the stop
rule is a duality gap below 1e-4 per training example.
"""

from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np

from poseact import binio
from poseact.errors import CapacityError, FormatError, ValidationError

MODEL_MAGIC = "PSVM"
MODEL_VERSION = 1

_KIND_CODES = {"linear": 0, "chi2_kernel": 1}
_KIND_NAMES = {code: name for name, code in _KIND_CODES.items()}
_FORM_CODES = {"exp": 0, "additive": 1}
_FORM_NAMES = {code: name for name, code in _FORM_CODES.items()}

DEFAULT_C = 1.0
DEFAULT_GAP_FACTOR = 1e-4
DEFAULT_MAX_EPOCHS = 1000
DEFAULT_KERNEL_CAP = 4096

CHI2_EPS = 1e-10


@dataclass
class ScoreMatrix:
    """Per-video, per-class decision values."""

    video_ids: Tuple[str, ...]
    classes: Tuple[str, ...]
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.video_ids = tuple(self.video_ids)
        self.classes = tuple(self.classes)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.video_ids), len(self.classes)):
            raise ValidationError(
                f"scores shape {self.scores.shape} does not match "
                f"{len(self.video_ids)} videos x {len(self.classes)} classes"
            )
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("scores must be finite")


@dataclass
class SvmModel:
    kind: str
    classes: Tuple[str, ...]
    weights: Optional[np.ndarray] = field(default=None, repr=False)  # linear (C, D)
    bias: Optional[np.ndarray] = None  # (C,)
    support: Optional[np.ndarray] = field(default=None, repr=False)  # kernel (N, D)
    coefs: Optional[np.ndarray] = field(default=None, repr=False)  # kernel (C, N)
    gamma: Optional[float] = None
    kernel_form: str = "exp"

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValidationError(f"unknown model kind {self.kind!r}")
        self.classes = tuple(str(c) for c in self.classes)
        if len(self.classes) < 2:
            raise ValidationError("model needs at least 2 classes")
        if self.kind == "linear":
            if self.weights is None or self.bias is None:
                raise ValidationError("linear model needs weights and bias")
            self.weights = np.asarray(self.weights, dtype=np.float64)
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.weights.shape[0] != len(self.classes) or self.bias.shape != (
                len(self.classes),
            ):
                raise ValidationError("per-class weights/bias shape mismatch")
            finite = np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))
        else:
            if self.support is None or self.coefs is None or self.gamma is None:
                raise ValidationError("kernel model needs support, coefs, gamma")
            if self.kernel_form not in _FORM_CODES:
                raise ValidationError(f"unknown kernel form {self.kernel_form!r}")
            self.support = np.asarray(self.support, dtype=np.float64)
            self.coefs = np.asarray(self.coefs, dtype=np.float64)
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.coefs.shape != (len(self.classes), self.support.shape[0]):
                raise ValidationError("coefs must be (classes, support count)")
            finite = (
                np.all(np.isfinite(self.support))
                and np.all(np.isfinite(self.coefs))
                and np.isfinite(self.gamma)
            )
        if not finite:
            raise ValidationError("model parameters must be finite")


def _check_training_inputs(features: np.ndarray, labels: Sequence) -> Tuple[np.ndarray, List[str]]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("features must be (N, D) with N >= 2")
    labels = [str(label) for label in labels]
    if len(labels) != features.shape[0]:
        raise ValidationError(f"{len(labels)} labels for {features.shape[0]} rows")
    if len(set(labels)) < 2:
        raise ValidationError("training set has a single class")
    if not np.all(np.isfinite(features)):
        raise ValidationError("features must be finite")
    return features, labels


def _dcd_binary(
    gram_column,
    diag: np.ndarray,
    y: np.ndarray,
    c: float,
    rng: np.random.Generator,
    gap_factor: float,
    max_epochs: int,
):
    """Dual coordinate descent on 0 <= alpha <= C.

    gram_column(i) returns column i of the (bias-augmented) Gram
    matrix; diag is its diagonal.  Returns (alpha, decision values).
    """
    n = y.size
    alpha = np.zeros(n)
    f = np.zeros(n)  # f_i = sum_j alpha_j y_j Q~_ij (decision values)
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for i in order:
            grad = y[i] * f[i] - 1.0
            new_alpha = min(max(alpha[i] - grad / diag[i], 0.0), c)
            delta = new_alpha - alpha[i]
            if delta != 0.0:
                alpha[i] = new_alpha
                f = f + (delta * y[i]) * gram_column(i)
        w_norm_sq = float(np.dot(alpha * y, f))
        hinge = np.maximum(0.0, 1.0 - y * f).sum()
        gap = w_norm_sq + c * hinge - alpha.sum()
        if gap <= gap_factor * n:
            break
    return alpha, f


def _dcd_linear(
    aug: np.ndarray,
    y: np.ndarray,
    c: float,
    rng: np.random.Generator,
    gap_factor: float,
    max_epochs: int,
) -> np.ndarray:
    """Linear-case coordinate descent keeping the primal vector w."""
    n = y.size
    diag = (aug * aug).sum(axis=1)
    alpha = np.zeros(n)
    w = np.zeros(aug.shape[1])
    for _ in range(max_epochs):
        for i in rng.permutation(n):
            grad = y[i] * float(aug[i] @ w) - 1.0
            new_alpha = min(max(alpha[i] - grad / diag[i], 0.0), c)
            delta = new_alpha - alpha[i]
            if delta != 0.0:
                alpha[i] = new_alpha
                w = w + (delta * y[i]) * aug[i]
        hinge = np.maximum(0.0, 1.0 - y * (aug @ w)).sum()
        gap = float(w @ w) + c * hinge - alpha.sum()
        if gap <= gap_factor * n:
            break
    return w


def train_linear(
    features: np.ndarray,
    labels: Sequence,
    c: float = DEFAULT_C,
    seed: int = 0,
    gap_factor: float = DEFAULT_GAP_FACTOR,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
) -> SvmModel:
    """One-vs-rest linear SVM with an augmented constant-1 bias feature."""
    features, labels = _check_training_inputs(features, labels)
    if c <= 0:
        raise ValidationError("C must be positive")
    classes = tuple(sorted(set(labels)))
    aug = np.hstack([features, np.ones((features.shape[0], 1))])

    weights = np.empty((len(classes), features.shape[1]))
    bias = np.empty(len(classes))
    for ci, cls in enumerate(classes):
        y = np.where(np.array(labels) == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        w_aug = _dcd_linear(aug, y, c, rng, gap_factor, max_epochs)
        weights[ci] = w_aug[:-1]
        bias[ci] = w_aug[-1]
    return SvmModel("linear", classes, weights=weights, bias=bias)


def chi2_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Sum of (x_i - y_i)^2 / (x_i + y_i + eps) over dimensions."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(((x - y) ** 2 / (x + y + CHI2_EPS)).sum())


def _chi2_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        out[i] = ((a[i] - b) ** 2 / (a[i] + b + CHI2_EPS)).sum(axis=1)
    return out


def chi2_kernel_matrix(
    a: np.ndarray, b: np.ndarray, gamma: float, form: str = "exp"
) -> np.ndarray:
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("chi-square kernels need non-negative features")
    if form == "exp":
        return np.exp(-gamma * _chi2_distance_matrix(a, b))
    if form == "additive":
        out = np.empty((a.shape[0], b.shape[0]))
        for i in range(a.shape[0]):
            out[i] = (2.0 * a[i] * b / (a[i] + b + CHI2_EPS)).sum(axis=1)
        return out
    raise ValidationError(f"unknown kernel form {form!r}")


def train_chi2(
    features: np.ndarray,
    labels: Sequence,
    c: float = DEFAULT_C,
    seed: int = 0,
    gap_factor: float = DEFAULT_GAP_FACTOR,
    max_epochs: int = DEFAULT_MAX_EPOCHS,
    kernel_form: str = "exp",
    max_kernel_rows: int = DEFAULT_KERNEL_CAP,
) -> SvmModel:
    """One-vs-rest SVM on the chi-square kernel matrix.

    gamma is 1 over the mean of the full pairwise distance matrix
    (diagonal included); identical-only training sets fall back to
    gamma = 1.  The N x N matrix is dense, so N is capped.
    """
    features, labels = _check_training_inputs(features, labels)
    if c <= 0:
        raise ValidationError("C must be positive")
    n = features.shape[0]
    if n > max_kernel_rows:
        raise CapacityError(
            f"{n} training rows exceed the kernel matrix cap {max_kernel_rows}"
        )
    if np.any(features < 0):
        raise ValidationError("chi-square kernels need non-negative features")
    classes = tuple(sorted(set(labels)))

    distances = _chi2_distance_matrix(features, features)
    mean_distance = float(distances.mean())
    gamma = 1.0 / mean_distance if mean_distance > 0 else 1.0
    if kernel_form == "exp":
        kernel = np.exp(-gamma * distances)
    else:
        kernel = chi2_kernel_matrix(features, features, gamma, kernel_form)
    kernel_aug = kernel + 1.0  # constant-1 bias feature in kernel space
    diag = np.diag(kernel_aug).copy()

    coefs = np.empty((len(classes), n))
    for ci, cls in enumerate(classes):
        y = np.where(np.array(labels) == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        alpha, _ = _dcd_binary(
            lambda i: kernel_aug[:, i], diag, y, c, rng, gap_factor, max_epochs
        )
        coefs[ci] = alpha * y
    bias = coefs.sum(axis=1)
    return SvmModel(
        "chi2_kernel",
        classes,
        support=features,
        coefs=coefs,
        bias=bias,
        gamma=gamma,
        kernel_form=kernel_form,
    )


def score(
    model: SvmModel, features: np.ndarray, video_ids: Sequence[str] = None
) -> ScoreMatrix:
    """Raw decision values for each video and class."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if video_ids is None:
        video_ids = [f"v{i:04d}" for i in range(features.shape[0])]
    if model.kind == "linear":
        if features.shape[1] != model.weights.shape[1]:
            raise ValidationError(
                f"feature dim {features.shape[1]} != model dim {model.weights.shape[1]}"
            )
        values = features @ model.weights.T + model.bias
    else:
        kernel = chi2_kernel_matrix(features, model.support, model.gamma, model.kernel_form)
        values = kernel @ model.coefs.T + model.bias
    return ScoreMatrix(tuple(video_ids), model.classes, values)


def late_fuse(matrices: Sequence[ScoreMatrix], weights: Sequence[float] = None) -> ScoreMatrix:
    """Weighted per-cell mean of score matrices over the same videos."""
    if not matrices:
        raise ValidationError("nothing to fuse")
    first = matrices[0]
    for m in matrices[1:]:
        if m.video_ids != first.video_ids or m.classes != first.classes:
            raise ValidationError("fused matrices must share videos and classes")
    if weights is None:
        weights = [1.0] * len(matrices)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(matrices),) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValidationError("weights must be non-negative with a positive sum")
    weights = weights / weights.sum()
    fused = sum(w * m.scores for w, m in zip(weights, matrices))
    return ScoreMatrix(first.video_ids, first.classes, fused)


def frame_score_aggregate(matrices: Sequence[ScoreMatrix], mode: str = "max") -> ScoreMatrix:
    """Collapse per-frame score matrices into one per-video matrix."""
    if not matrices:
        raise ValidationError("no frame scores to aggregate")
    first = matrices[0]
    for m in matrices[1:]:
        if m.video_ids != first.video_ids or m.classes != first.classes:
            raise ValidationError("frame matrices must share videos and classes")
    stack = np.stack([m.scores for m in matrices])
    if mode == "max":
        values = stack.max(axis=0)
    elif mode == "mean":
        values = stack.mean(axis=0)
    else:
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    return ScoreMatrix(first.video_ids, first.classes, values)


def write_model(fh: Union[str, BinaryIO], model: SvmModel) -> None:
    if isinstance(fh, str):
        with open(fh, "wb") as out:
            write_model(out, model)
        return
    binio.write_magic(fh, MODEL_MAGIC)
    binio.write_u32(fh, MODEL_VERSION)
    binio.write_u8(fh, _KIND_CODES[model.kind])
    binio.write_u32(fh, len(model.classes))
    for cls in model.classes:
        binio.write_str(fh, cls)
    if model.kind == "linear":
        binio.write_u32(fh, model.weights.shape[1])
        for ci in range(len(model.classes)):
            binio.write_f32(fh, model.weights[ci])
            binio.write_f32(fh, model.bias[ci : ci + 1])
    else:
        binio.write_u8(fh, _FORM_CODES[model.kernel_form])
        binio.write_u32(fh, model.support.shape[0])
        binio.write_u32(fh, model.support.shape[1])
        binio.write_f32(fh, np.array([model.gamma]))
        binio.write_f32(fh, model.support.ravel())
        for ci in range(len(model.classes)):
            binio.write_f32(fh, model.coefs[ci])
            binio.write_f32(fh, model.bias[ci : ci + 1])


def read_model(fh: Union[str, BinaryIO]) -> SvmModel:
    if isinstance(fh, str):
        with open(fh, "rb") as inp:
            return read_model(inp)
    binio.read_magic(fh, MODEL_MAGIC)
    version = binio.read_u32(fh)
    if version != MODEL_VERSION:
        raise ValidationError(f"unsupported model version {version}")
    kind = _KIND_NAMES.get(binio.read_u8(fh))
    if kind is None:
        raise FormatError("unknown model kind code")
    class_count = binio.read_u32(fh)
    classes = tuple(binio.read_str(fh) for _ in range(class_count))
    if kind == "linear":
        dim = binio.read_u32(fh)
        weights = np.empty((class_count, dim))
        bias = np.empty(class_count)
        for ci in range(class_count):
            weights[ci] = binio.read_f32(fh, dim)
            bias[ci] = binio.read_f32(fh, 1)[0]
        return SvmModel(kind, classes, weights=weights, bias=bias)
    form = _FORM_NAMES.get(binio.read_u8(fh))
    if form is None:
        raise FormatError("unknown kernel form code")
    n = binio.read_u32(fh)
    dim = binio.read_u32(fh)
    gamma = float(binio.read_f32(fh, 1)[0])
    support = binio.read_f32(fh, n * dim).reshape(n, dim)
    coefs = np.empty((class_count, n))
    bias = np.empty(class_count)
    for ci in range(class_count):
        coefs[ci] = binio.read_f32(fh, n)
        bias[ci] = binio.read_f32(fh, 1)[0]
    return SvmModel(
        kind, classes, support=support, coefs=coefs, bias=bias, gamma=gamma, kernel_form=form
    )


def write_scores(fh, matrix: ScoreMatrix) -> None:
    """Tab-separated text: header of class names, then id + scores rows."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_scores(out, matrix)
        return
    fh.write("video_id\t" + "\t".join(matrix.classes) + "\n")
    for i, video_id in enumerate(matrix.video_ids):
        row = "\t".join(repr(float(v)) for v in matrix.scores[i])
        fh.write(f"{video_id}\t{row}\n")


def read_scores(fh) -> ScoreMatrix:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_scores(inp)
    header = fh.readline().strip()
    fields = header.split("\t")
    if len(fields) < 2 or fields[0] != "video_id":
        raise FormatError("score file must start with a video_id + classes header")
    classes = tuple(fields[1:])
    video_ids = []
    rows = []
    for lineno, line in enumerate(fh, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 1 + len(classes):
            raise FormatError(f"score line {lineno}: {len(parts)} fields")
        video_ids.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise FormatError(f"score line {lineno}: non-numeric score") from None
    if not rows:
        raise FormatError("score file has no rows")
    return ScoreMatrix(tuple(video_ids), classes, np.array(rows))
