"""Bundled two-class synthetic dataset.

Clips show a simple 8-joint figure rendered as colored disks on a
gradient background.  Class "wave" oscillates the right wrist while the
body stays put; class "walk" translates the whole figure.  Ground-truth
poses, analytic flow fields, scored pose candidates, and per-joint
motion descriptors are all generated alongside the frames, so every
pipeline stage has data without any external dataset.
"""

import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from poseact.errors import ValidationError
from poseact.evaluate import DatasetManifest, ManifestEntry, write_manifest
from poseact.flowprep import FlowField, save_flow_image, quantize_flow, write_flow
from poseact.fvenc import LocalDescriptorSet
from poseact.partcrop import Pose, PoseSequence, write_pose_file
from poseact.poselink import CandidateSet, write_candidates

CLASSES = ("walk", "wave")

JOINTS = (
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "hip_center",
)

_BASE_SKELETON = np.array(
    [
        [32.0, 10.0],  # head
        [26.0, 16.0],  # left_shoulder
        [38.0, 16.0],  # right_shoulder
        [24.0, 24.0],  # left_elbow
        [40.0, 24.0],  # right_elbow
        [23.0, 31.0],  # left_wrist
        [41.0, 31.0],  # right_wrist
        [32.0, 34.0],  # hip_center
    ]
)

_PALETTE = np.array(
    [
        [230, 60, 60],
        [60, 200, 60],
        [70, 90, 230],
        [230, 200, 50],
        [200, 60, 200],
        [60, 210, 210],
        [240, 140, 40],
        [160, 160, 160],
    ],
    dtype=np.uint8,
)

_JOINT_RADIUS = 3.0
_FLOW_RADIUS = 4.0


@dataclass
class SyntheticConfig:
    train_per_class: int = 20
    test_per_class: int = 10
    frames: int = 12
    width: int = 64
    height: int = 48
    seed: int = 0
    jitter: float = 0.3
    distractors: int = 2

    def __post_init__(self):
        if self.frames < 2:
            raise ValidationError("need at least 2 frames per clip")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValidationError("need at least one clip per class and subset")


@dataclass
class SyntheticVideo:
    video_id: str
    label: str
    subset: str
    poses: PoseSequence
    frames: List[np.ndarray] = field(repr=False)
    flows: List[FlowField] = field(repr=False)
    candidates: CandidateSet = field(repr=False, default=None)
    locals: LocalDescriptorSet = field(repr=False, default=None)


def _trajectory(label: str, config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """(T, J, 2) joint positions before jitter."""
    t_count = config.frames
    coords = np.repeat(_BASE_SKELETON[None, :, :], t_count, axis=0).copy()
    if label == "walk":
        velocity = rng.uniform(1.5, 2.5)
        start = rng.uniform(-8.0, -4.0)
        shift = start + velocity * np.arange(t_count)
        coords[:, :, 0] += shift[:, None]
        coords[:, :, 1] += rng.uniform(-2.0, 2.0)
    elif label == "wave":
        offset = rng.uniform(-3.0, 3.0, size=2)
        coords += offset[None, None, :]
        amp = rng.uniform(6.0, 9.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        omega = 2 * np.pi / rng.uniform(5.0, 7.0)
        swing = amp * np.sin(omega * np.arange(t_count) + phase)
        wrist = JOINTS.index("right_wrist")
        elbow = JOINTS.index("right_elbow")
        coords[:, wrist, 0] += swing
        coords[:, wrist, 1] -= np.abs(swing) * 0.4
        coords[:, elbow, 0] += swing * 0.4
    else:
        raise ValidationError(f"unknown class {label!r}")
    coords += rng.normal(0.0, config.jitter, size=coords.shape)
    return coords


def render_frame(pose: Pose, width: int, height: int) -> np.ndarray:
    """Colored joint disks over a horizontal luminance gradient."""
    frame = np.empty((height, width, 3), dtype=np.uint8)
    gradient = np.linspace(20, 60, width).astype(np.uint8)
    frame[:] = gradient[None, :, None]
    yy, xx = np.mgrid[0:height, 0:width]
    for j in range(pose.coords.shape[0]):
        cx, cy = pose.coords[j]
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= _JOINT_RADIUS**2
        frame[mask] = _PALETTE[j % len(_PALETTE)]
    return frame


def render_flow(pose_a: Pose, pose_b: Pose, width: int, height: int) -> FlowField:
    """Per-joint velocity disks on a zero background."""
    vx = np.zeros((height, width))
    vy = np.zeros((height, width))
    yy, xx = np.mgrid[0:height, 0:width]
    for j in range(pose_a.coords.shape[0]):
        cx, cy = pose_a.coords[j]
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= _FLOW_RADIUS**2
        delta = pose_b.coords[j] - pose_a.coords[j]
        vx[mask] = delta[0]
        vy[mask] = delta[1]
    return FlowField(vx, vy)


def make_candidates(
    poses: PoseSequence, config: SyntheticConfig, rng: np.random.Generator
) -> CandidateSet:
    """True pose among noisy distractors, shuffled, true score highest."""
    frames = []
    for pose in poses.frames:
        true = Pose(pose.coords, pose.joint_names, score=float(rng.uniform(2.0, 3.0)))
        others = [
            Pose(
                pose.coords + rng.normal(0.0, 3.0, size=pose.coords.shape),
                pose.joint_names,
                score=float(rng.uniform(0.0, 1.0)),
            )
            for _ in range(config.distractors)
        ]
        group = [true] + others
        order = rng.permutation(len(group))
        frames.append([group[i] for i in order])
    return CandidateSet(frames, poses.video_id)


def make_locals(
    poses: PoseSequence, config: SyntheticConfig
) -> LocalDescriptorSet:
    """Per (frame, joint) motion descriptors with normalized positions.

    Each row is (dx, dy, speed, x, y) plus a joint one-hot, taken
    between consecutive frames.
    """
    j_count = len(poses.joint_names)
    rows = []
    positions = []
    coords = np.stack([p.coords for p in poses.frames])
    moves = coords[1:] - coords[:-1]
    for t in range(moves.shape[0]):
        for j in range(j_count):
            dx, dy = moves[t, j]
            x, y = coords[t, j]
            onehot = np.zeros(j_count)
            onehot[j] = 1.0
            rows.append(
                np.concatenate([[dx, dy, np.hypot(dx, dy), x / config.width, y / config.height], onehot])
            )
            positions.append(
                [
                    min(max(x / (config.width - 1), 0.0), 1.0),
                    min(max(y / (config.height - 1), 0.0), 1.0),
                ]
            )
    return LocalDescriptorSet(np.array(rows), np.array(positions))


def make_video(
    video_id: str, label: str, subset: str, config: SyntheticConfig, rng: np.random.Generator
) -> SyntheticVideo:
    coords = _trajectory(label, config, rng)
    frames_poses = [Pose(coords[t], JOINTS) for t in range(config.frames)]
    poses = PoseSequence(frames_poses, video_id)
    frames = [render_frame(p, config.width, config.height) for p in poses.frames]
    flows = [
        render_flow(poses.frames[t], poses.frames[t + 1], config.width, config.height)
        for t in range(config.frames - 1)
    ]
    return SyntheticVideo(
        video_id,
        label,
        subset,
        poses,
        frames,
        flows,
        candidates=make_candidates(poses, config, rng),
        locals=make_locals(poses, config),
    )


def make_dataset(config: SyntheticConfig = None) -> Tuple[List[SyntheticVideo], DatasetManifest]:
    """All clips plus a single-split manifest (train first, then test)."""
    config = config or SyntheticConfig()
    videos = []
    entries = []
    serial = 0
    for subset, per_class in (("train", config.train_per_class), ("test", config.test_per_class)):
        for index in range(per_class):
            for label in CLASSES:
                video_id = f"{label}{serial:03d}"
                rng = np.random.default_rng([config.seed, serial, CLASSES.index(label)])
                videos.append(make_video(video_id, label, subset, config, rng))
                entries.append(ManifestEntry(video_id, 0, subset, label))
                serial += 1
    return videos, DatasetManifest(entries)


def write_dataset(root: str, config: SyntheticConfig = None) -> str:
    """Materialize the dataset under root; returns the manifest path.

    Layout: poses/, candidates/, frames/<id>/fNNN.png, flow/<id>/fNNN.flw
    (raw fields) and fNNN.png (quantized), locals/<id>.txt, manifest.txt
    with relative resource paths.
    """
    from PIL import Image

    from poseact.fvenc import write_locals

    config = config or SyntheticConfig()
    videos, manifest = make_dataset(config)
    for sub in ("poses", "candidates", "frames", "flow", "locals"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    entries = []
    for video in videos:
        write_pose_file(os.path.join(root, "poses", f"{video.video_id}.txt"), video.poses)
        write_candidates(
            os.path.join(root, "candidates", f"{video.video_id}.txt"), video.candidates
        )
        frame_dir = os.path.join(root, "frames", video.video_id)
        flow_dir = os.path.join(root, "flow", video.video_id)
        os.makedirs(frame_dir, exist_ok=True)
        os.makedirs(flow_dir, exist_ok=True)
        for t, frame in enumerate(video.frames):
            Image.fromarray(frame).save(os.path.join(frame_dir, f"f{t:03d}.png"))
        for t, flow in enumerate(video.flows):
            write_flow(os.path.join(flow_dir, f"f{t:03d}.flw"), flow)
            save_flow_image(os.path.join(flow_dir, f"f{t:03d}.png"), quantize_flow(flow))
        write_locals(os.path.join(root, "locals", f"{video.video_id}.txt"), video.locals)
        entry = next(e for e in manifest.entries if e.video_id == video.video_id)
        entries.append(
            ManifestEntry(
                entry.video_id,
                entry.split_id,
                entry.subset,
                entry.label,
                (
                    ("poses", f"poses/{video.video_id}.txt"),
                    ("candidates", f"candidates/{video.video_id}.txt"),
                    ("frames", f"frames/{video.video_id}"),
                    ("flow", f"flow/{video.video_id}"),
                    ("locals", f"locals/{video.video_id}.txt"),
                ),
            )
        )
    manifest_path = os.path.join(root, "manifest.txt")
    write_manifest(manifest_path, DatasetManifest(entries))
    return manifest_path
