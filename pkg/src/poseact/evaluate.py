"""Classification metrics, dataset manifests, and ranking reports.

Accuracy assigns each video the argmax class (ties to the lowest class
index); average precision ranks one class's scores descending with
stable tie order and averages precision at the positive ranks; mAP
averages over classes that have at least one positive.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from poseact.errors import FormatError, ValidationError
from poseact.learn import ScoreMatrix

Labels = Union[Sequence[str], Mapping[str, str]]


def _aligned_labels(matrix: ScoreMatrix, labels: Labels) -> List[str]:
    if isinstance(labels, Mapping):
        missing = [v for v in matrix.video_ids if v not in labels]
        if missing:
            raise ValidationError(f"labels missing for videos: {missing[:5]}")
        return [str(labels[v]) for v in matrix.video_ids]
    labels = [str(l) for l in labels]
    if len(labels) != len(matrix.video_ids):
        raise ValidationError(
            f"{len(labels)} labels for {len(matrix.video_ids)} videos"
        )
    return labels


def accuracy(matrix: ScoreMatrix, labels: Labels) -> float:
    """Fraction of videos whose top-scoring class matches the label."""
    aligned = _aligned_labels(matrix, labels)
    predicted = np.argmax(matrix.scores, axis=1)  # first max wins ties
    correct = sum(
        1 for i, label in enumerate(aligned) if matrix.classes[predicted[i]] == label
    )
    return correct / len(aligned)


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP of one ranking: mean precision at each positive's rank."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    if scores.shape != positives.shape:
        raise ValidationError("scores and positive flags must align")
    if not positives.any():
        raise ValidationError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    ranked = positives[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, scores.size + 1)
    return float((hits[ranked] / ranks[ranked]).mean())


def mean_ap(matrix: ScoreMatrix, labels: Labels) -> float:
    """Mean AP over classes that have at least one positive video."""
    aligned = np.array(_aligned_labels(matrix, labels))
    aps = []
    for ci, cls in enumerate(matrix.classes):
        positives = aligned == cls
        if positives.any():
            aps.append(average_precision(matrix.scores[:, ci], positives))
    if not aps:
        raise ValidationError("no class has positive videos")
    return float(np.mean(aps))


def cross_split_mean(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValidationError("no split values to average")
    return float(np.mean([float(v) for v in values]))


def _ranks_within_class(matrix: ScoreMatrix, class_index: int) -> np.ndarray:
    """1-based rank of every video under one class's score column."""
    order = np.argsort(-matrix.scores[:, class_index], kind="stable")
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


@dataclass
class RankDiffReport:
    """Per-video rank movement plus per-class accuracy deltas."""

    video_rows: List[Tuple[str, str, int, int, int]]  # id, label, rank_a, rank_b, delta
    class_rows: List[Tuple[str, float, float, float]]  # class, acc_a, acc_b, delta


def rank_diff_report(
    scores_a: ScoreMatrix, scores_b: ScoreMatrix, labels: Labels
) -> RankDiffReport:
    """Compare two scorers: rank of each video within its true class
    under each, sorted by improvement (rank_a - rank_b descending).
    """
    if scores_a.video_ids != scores_b.video_ids or scores_a.classes != scores_b.classes:
        raise ValidationError("score matrices must share videos and classes")
    aligned = _aligned_labels(scores_a, labels)
    class_index = {cls: i for i, cls in enumerate(scores_a.classes)}

    ranks_a = {cls: _ranks_within_class(scores_a, ci) for cls, ci in class_index.items()}
    ranks_b = {cls: _ranks_within_class(scores_b, ci) for cls, ci in class_index.items()}
    video_rows = []
    for i, video_id in enumerate(scores_a.video_ids):
        label = aligned[i]
        if label not in class_index:
            raise ValidationError(f"video {video_id} has unknown label {label!r}")
        ra = int(ranks_a[label][i])
        rb = int(ranks_b[label][i])
        video_rows.append((video_id, label, ra, rb, ra - rb))
    video_rows.sort(key=lambda row: (-row[4], row[0]))

    aligned_arr = np.array(aligned)
    pred_a = np.argmax(scores_a.scores, axis=1)
    pred_b = np.argmax(scores_b.scores, axis=1)
    class_rows = []
    for cls in scores_a.classes:
        members = aligned_arr == cls
        if not members.any():
            continue
        acc_a = float(np.mean([scores_a.classes[p] == cls for p in pred_a[members]]))
        acc_b = float(np.mean([scores_b.classes[p] == cls for p in pred_b[members]]))
        class_rows.append((cls, acc_a, acc_b, acc_b - acc_a))
    return RankDiffReport(video_rows, class_rows)


def write_report(fh, report: RankDiffReport) -> None:
    """Two tab-separated sections split by a blank line."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_report(out, report)
        return
    fh.write("video_id\tlabel\trank_a\trank_b\tdelta\n")
    for video_id, label, ra, rb, delta in report.video_rows:
        fh.write(f"{video_id}\t{label}\t{ra}\t{rb}\t{delta}\n")
    fh.write("\n")
    fh.write("class\taccuracy_a\taccuracy_b\tdelta\n")
    for cls, acc_a, acc_b, delta in report.class_rows:
        fh.write(f"{cls}\t{acc_a!r}\t{acc_b!r}\t{delta!r}\n")


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    split_id: int
    subset: str  # train | test
    label: str
    resources: Tuple[Tuple[str, str], ...] = ()

    def resource(self, key: str) -> str:
        for k, v in self.resources:
            if k == key:
                return v
        raise ValidationError(f"video {self.video_id}: no {key!r} resource")


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.subset not in ("train", "test"):
                raise ValidationError(
                    f"video {entry.video_id}: subset must be train or test"
                )
            key = (entry.split_id, entry.video_id)
            if key in seen:
                raise ValidationError(
                    f"duplicate video {entry.video_id} in split {entry.split_id}"
                )
            seen.add(key)
            if entry.subset == "test" and not entry.label:
                raise ValidationError(f"test video {entry.video_id} has no label")

    @property
    def splits(self) -> List[int]:
        return sorted({e.split_id for e in self.entries})

    def select(self, split_id: int, subset: str = None) -> List[ManifestEntry]:
        return [
            e
            for e in self.entries
            if e.split_id == split_id and (subset is None or e.subset == subset)
        ]

    def labels(self) -> Dict[str, str]:
        return {e.video_id: e.label for e in self.entries if e.label}


def write_manifest(fh, manifest: DatasetManifest) -> None:
    """Text lines: video_id split subset label [key=value ...]."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_manifest(out, manifest)
        return
    fh.write("# video_id split subset label [key=value ...]\n")
    for e in manifest.entries:
        extras = "".join(f" {k}={v}" for k, v in e.resources)
        fh.write(f"{e.video_id} {e.split_id} {e.subset} {e.label}{extras}\n")


def read_manifest(fh) -> DatasetManifest:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_manifest(inp)
    entries = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 4:
            raise FormatError(f"manifest line {lineno}: expected at least 4 fields")
        try:
            split_id = int(fields[1])
        except ValueError:
            raise FormatError(f"manifest line {lineno}: bad split id {fields[1]!r}") from None
        resources = []
        for extra in fields[4:]:
            if "=" not in extra:
                raise FormatError(f"manifest line {lineno}: expected key=value, got {extra!r}")
            key, _, value = extra.partition("=")
            resources.append((key, value))
        entries.append(
            ManifestEntry(fields[0], split_id, fields[2], fields[3], tuple(resources))
        )
    if not entries:
        raise FormatError("manifest has no entries")
    return DatasetManifest(entries)
