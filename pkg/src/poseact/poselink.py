"""Candidate pose selection over time by dynamic programming.

Each frame offers several scored pose candidates; the linker picks one
per frame maximizing total detector score minus a weighted flow
inconsistency: the squared distance between next-frame joints and
current joints displaced by the optical flow sampled at them.

Exactness contract: transition_cost and path_objective accumulate in a
fixed left-to-right order, so a brute-force enumeration using the same
tables reproduces the DP objective bit for bit.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from poseact.errors import FormatError, ValidationError
from poseact.flowprep import FlowField
from poseact.partcrop import Pose, PoseSequence


@dataclass
class LinkerConfig:
    lam: float = 1.0
    score_floor: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("lambda must be finite and >= 0")


@dataclass
class CandidateSet:
    """Per-frame pose candidates; every pose carries a detector score."""

    frames: List[List[Pose]]
    video_id: str = "video"

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("candidate set has no frames")
        names = None
        for t, candidates in enumerate(self.frames):
            if not candidates:
                raise ValidationError(f"frame {t} has no candidates")
            for pose in candidates:
                if pose.score is None or not np.isfinite(pose.score):
                    raise ValidationError(f"frame {t}: candidate without a finite score")
                if names is None:
                    names = pose.joint_names
                elif pose.joint_names != names:
                    raise ValidationError(f"frame {t}: candidate joint order differs")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def joint_names(self) -> Tuple[str, ...]:
        return self.frames[0][0].joint_names


@dataclass
class LinkResult:
    poses: PoseSequence
    indices: List[int]
    objective: float


def flow_at(flow: FlowField, point: Sequence[float]) -> Tuple[float, float]:
    """Bilinear flow lookup; points outside the frame read (0, 0)."""
    x, y = float(point[0]), float(point[1])
    h, w = flow.vx.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return (0.0, 0.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    out = []
    for plane in (flow.vx, flow.vy):
        top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
        bottom = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
        out.append(float(top * (1 - fy) + bottom * fy))
    return (out[0], out[1])


def transition_cost(pose_a: Pose, pose_b: Pose, flow: FlowField, lam: float) -> float:
    """lam * sum over joints of ||b_j - (a_j + flow(a_j))||^2.

    Accumulates joint terms sequentially in joint order; reuse this
    helper wherever the exact same float value is required.
    """
    cost = 0.0
    for j in range(pose_a.coords.shape[0]):
        ax, ay = float(pose_a.coords[j, 0]), float(pose_a.coords[j, 1])
        vx, vy = flow_at(flow, (ax, ay))
        dx = float(pose_b.coords[j, 0]) - (ax + vx)
        dy = float(pose_b.coords[j, 1]) - (ay + vy)
        cost += dx * dx + dy * dy
    return lam * cost


def _filtered(candidates: CandidateSet, config: LinkerConfig):
    """Apply the optional score floor, keeping original indices."""
    if config.score_floor is None:
        return [list(enumerate(frame)) for frame in candidates.frames]
    kept = []
    for t, frame in enumerate(candidates.frames):
        survivors = [(i, p) for i, p in enumerate(frame) if p.score >= config.score_floor]
        if not survivors:
            raise ValidationError(
                f"frame {t}: score floor {config.score_floor} removes every candidate"
            )
        kept.append(survivors)
    return kept


def score_tables(
    candidates: CandidateSet,
    flows: Sequence[FlowField],
    config: LinkerConfig = None,
):
    """Unary scores and transition-cost matrices the linker optimizes.

    Returns (kept, unary, trans): kept[t] pairs (original_index, Pose),
    unary[t][c] detector scores, trans[t][p][c] weighted costs between
    frame t candidate p and frame t+1 candidate c.
    """
    config = config or LinkerConfig()
    t_count = len(candidates)
    if len(flows) != t_count - 1:
        raise ValidationError(f"{len(flows)} flow fields for {t_count} frames")
    kept = _filtered(candidates, config)
    unary = [[pose.score for _, pose in frame] for frame in kept]
    trans = []
    for t in range(t_count - 1):
        rows = []
        for _, pose_a in kept[t]:
            rows.append(
                [transition_cost(pose_a, pose_b, flows[t], config.lam) for _, pose_b in kept[t + 1]]
            )
        trans.append(rows)
    return kept, unary, trans


def path_objective(unary, trans, path: Sequence[int]) -> float:
    """Objective of one candidate path, same accumulation order as link."""
    value = unary[0][path[0]]
    for t in range(1, len(path)):
        value = value + (unary[t][path[t]] - trans[t - 1][path[t - 1]][path[t]])
    return value


def link(
    candidates: CandidateSet,
    flows: Sequence[FlowField],
    config: LinkerConfig = None,
) -> LinkResult:
    """Best-scoring flow-consistent pose path (Viterbi, O(T C^2 J))."""
    config = config or LinkerConfig()
    kept, unary, trans = score_tables(candidates, flows, config)
    t_count = len(kept)

    best = [list(unary[0])]
    back: List[List[int]] = []
    for t in range(1, t_count):
        prev = best[-1]
        row = []
        ptr = []
        for c in range(len(kept[t])):
            best_value = None
            best_prev = 0
            for p in range(len(kept[t - 1])):
                value = prev[p] + (unary[t][c] - trans[t - 1][p][c])
                if best_value is None or value > best_value:
                    best_value = value
                    best_prev = p
            row.append(best_value)
            ptr.append(best_prev)
        best.append(row)
        back.append(ptr)

    last = best[-1]
    cursor = max(range(len(last)), key=lambda c: (last[c], -c))
    objective = last[cursor]
    path = [cursor]
    for t in range(t_count - 1, 0, -1):
        cursor = back[t - 1][cursor]
        path.append(cursor)
    path.reverse()

    chosen = [kept[t][c][1] for t, c in enumerate(path)]
    original = [kept[t][c][0] for t, c in enumerate(path)]
    return LinkResult(PoseSequence(chosen, candidates.video_id), original, objective)


def write_candidates(fh, candidates: CandidateSet) -> None:
    """Pose-file layout with a trailing score and repeated frame lines."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_candidates(out, candidates)
        return
    fh.write("#joints " + " ".join(candidates.joint_names) + "\n")
    for t, frame in enumerate(candidates.frames):
        for pose in frame:
            coords = " ".join(repr(float(v)) for v in pose.coords.ravel())
            fh.write(f"{t} {coords} {float(pose.score)!r}\n")


def read_candidates(fh, video_id: str = "video") -> CandidateSet:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_candidates(inp, video_id)
    names = None
    frames: List[List[Pose]] = []
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#joints"):
            names = tuple(line.split()[1:])
            continue
        if line.startswith("#"):
            continue
        if names is None:
            raise FormatError(f"candidate line {lineno}: no #joints header yet")
        fields = line.split()
        expected = 1 + 2 * len(names) + 1
        if len(fields) != expected:
            raise FormatError(
                f"candidate line {lineno}: {len(fields)} fields, expected {expected}"
            )
        try:
            frame = int(fields[0])
            numbers = [float(x) for x in fields[1:]]
        except ValueError:
            raise FormatError(f"candidate line {lineno}: non-numeric field") from None
        coords = np.array(numbers[:-1]).reshape(len(names), 2)
        if frame == len(frames):
            frames.append([])
        elif frame != len(frames) - 1:
            raise FormatError(f"candidate line {lineno}: frame {frame} out of order")
        frames[-1].append(Pose(coords, names, score=numbers[-1]))
    if not frames:
        raise FormatError("candidate file has no pose lines")
    return CandidateSet(frames, video_id)
