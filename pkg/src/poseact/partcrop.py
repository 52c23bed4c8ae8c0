"""Part boxes from poses, and fixed-size patches from image rasters.

Five parts are derived per pose: wrist-centered squares for the hands
(side proportional to the head-hip distance), dilated joint hulls for
upper body and full body, and the whole frame.  Patches are produced by
deterministic bilinear resampling; samples outside the image read zero,
which keeps a part centered on its joint near frame borders.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from poseact.errors import DegenerateGeometryError, FormatError, ValidationError

PART_ORDER = ("right_hand", "left_hand", "upper_body", "full_body", "full_image")
UPPER_BODY_PARTS = ("right_hand", "left_hand", "upper_body", "full_image")

PART_CODES = {name: i for i, name in enumerate(PART_ORDER)}
PART_NAMES = {i: name for name, i in PART_CODES.items()}

HEAD = "head"
HIP_CENTER = "hip_center"
UPPER_JOINTS = (
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "hip_center",
)

DEFAULT_HAND_SCALE = 0.5
DEFAULT_BODY_DILATION = 0.1
DEFAULT_PATCH_SIDE = 224


@dataclass
class Pose:
    """One frame's 2-D joint coordinates with their joint-name order."""

    coords: np.ndarray
    joint_names: Tuple[str, ...]
    score: Optional[float] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.joint_names = tuple(self.joint_names)
        if self.score is not None:
            self.score = float(self.score)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValidationError("coords must be a (J, 2) array")
        if self.coords.shape[0] < 2:
            raise ValidationError("a pose needs at least 2 joints")
        if len(self.joint_names) != self.coords.shape[0]:
            raise ValidationError("joint_names length must match joint count")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("joint coordinates must be finite")

    @property
    def num_joints(self) -> int:
        return self.coords.shape[0]

    def joint(self, name: str) -> np.ndarray:
        try:
            idx = self.joint_names.index(name)
        except ValueError:
            raise ValidationError(f"pose has no joint named {name!r}") from None
        return self.coords[idx]

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.coords + np.array([dx, dy]), self.joint_names, self.score)


@dataclass
class PoseSequence:
    """Temporally ordered poses for one video."""

    frames: List[Pose]
    video_id: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("pose sequence needs at least one frame")
        names = self.frames[0].joint_names
        for t, pose in enumerate(self.frames):
            if pose.joint_names != names:
                raise ValidationError(f"frame {t} has a different joint order")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def joint_names(self) -> Tuple[str, ...]:
        return self.frames[0].joint_names

    def joint_track(self, name: str) -> np.ndarray:
        """(T, 2) coordinates of one joint over time."""
        return np.stack([pose.joint(name) for pose in self.frames])


@dataclass
class PartBox:
    part: str
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DegenerateGeometryError(
                f"{self.part} box has no area: "
                f"({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class Patch:
    """Square float raster in [0, 255], side x side x 3."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValidationError("patch must be side x side x 3")
        if self.data.shape[0] != self.data.shape[1] or self.data.shape[0] == 0:
            raise ValidationError("patch must be square and non-empty")

    @property
    def side(self) -> int:
        return self.data.shape[0]


def _hull(points: np.ndarray) -> Tuple[float, float, float, float]:
    return (
        float(points[:, 0].min()),
        float(points[:, 1].min()),
        float(points[:, 0].max()),
        float(points[:, 1].max()),
    )


def _dilated_box(part: str, points: np.ndarray, dilation: float) -> PartBox:
    x0, y0, x1, y1 = _hull(points)
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise DegenerateGeometryError(f"{part}: joint hull has no area")
    return PartBox(part, x0 - dilation * w, y0 - dilation * h,
                   x1 + dilation * w, y1 + dilation * h)


def _hand_box(part: str, wrist: np.ndarray, side: float) -> PartBox:
    if side <= 0:
        raise DegenerateGeometryError(f"{part}: zero hand-box side")
    half = side / 2.0
    return PartBox(part, wrist[0] - half, wrist[1] - half,
                   wrist[0] + half, wrist[1] + half)


def part_boxes(
    pose: Pose,
    image_width: int,
    image_height: int,
    hand_scale: float = DEFAULT_HAND_SCALE,
    body_dilation: float = DEFAULT_BODY_DILATION,
    parts: Sequence[str] = PART_ORDER,
) -> List[PartBox]:
    """Derive part boxes for one pose, in the fixed documented order.

    Hand boxes are squares of side hand_scale * dist(head, hip_center)
    centered at the wrists; body boxes are tight joint hulls dilated by
    body_dilation * extent per side.  Boxes may extend beyond the frame;
    crop_resize zero-pads the out-of-frame area.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValidationError("image dimensions must be positive")
    unknown = [p for p in parts if p not in PART_CODES]
    if unknown:
        raise ValidationError(f"unknown parts: {unknown}")

    wanted = [p for p in PART_ORDER if p in parts]
    boxes = []
    for part in wanted:
        if part == "full_image":
            boxes.append(PartBox(part, 0.0, 0.0, float(image_width), float(image_height)))
        elif part == "full_body":
            boxes.append(_dilated_box(part, pose.coords, body_dilation))
        elif part == "upper_body":
            pts = np.stack([pose.joint(name) for name in UPPER_JOINTS])
            boxes.append(_dilated_box(part, pts, body_dilation))
        else:
            person_size = float(np.linalg.norm(pose.joint(HEAD) - pose.joint(HIP_CENTER)))
            wrist = pose.joint("right_wrist" if part == "right_hand" else "left_wrist")
            boxes.append(_hand_box(part, wrist, hand_scale * person_size))
    return boxes


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) at float positions; positions outside read zero."""
    h, w = image.shape[:2]
    image = np.asarray(image, dtype=np.float64)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros(xs.shape + (image.shape[2],))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = image[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += (wx * wy * inside)[..., None] * vals
    return out


def crop_resize(image: np.ndarray, box: PartBox, side: int = DEFAULT_PATCH_SIDE) -> Patch:
    """Resample the box region of an HxWx3 raster to a side x side patch.

    Output pixel centers map linearly onto the box; source reads outside
    the image contribute zeros.  Aspect ratio is not preserved: the box
    is stretched onto the square grid.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("expected an HxWx3 raster")
    if side <= 0:
        raise ValidationError("patch side must be positive")
    x0, y0, x1, y1 = box.bounds
    if not (x1 > x0 and y1 > y0):
        raise ValidationError("box has no area")

    cols = x0 + (np.arange(side) + 0.5) * (x1 - x0) / side - 0.5
    rows = y0 + (np.arange(side) + 0.5) * (y1 - y0) / side - 0.5
    xs, ys = np.meshgrid(cols, rows)
    return Patch(bilinear_sample(image, xs, ys))


def write_pose_file(fh: Union[str, TextIO], seq: PoseSequence) -> None:
    """Text pose track: '#joints ...' header, then 'frame x y x y ...' lines."""
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_pose_file(out, seq)
        return
    fh.write("#joints " + " ".join(seq.joint_names) + "\n")
    for t, pose in enumerate(seq.frames):
        coords = " ".join(repr(float(v)) for v in pose.coords.ravel())
        fh.write(f"{t} {coords}\n")


def _parse_joint_header(line: str) -> Tuple[str, ...]:
    if not line.startswith("#joints"):
        raise FormatError("pose file must start with a '#joints' header line")
    names = tuple(line.split()[1:])
    if len(names) < 2:
        raise FormatError("joint header must name at least 2 joints")
    return names


def read_pose_file(fh: Union[str, TextIO], video_id: str = "") -> PoseSequence:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_pose_file(inp, video_id)
    lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError("empty pose file")
    names = _parse_joint_header(lines[0])
    frames = []
    for ln in lines[1:]:
        fields = ln.split()
        if len(fields) != 1 + 2 * len(names):
            raise FormatError(
                f"pose line has {len(fields)} fields, expected {1 + 2 * len(names)}"
            )
        coords = np.array([float(v) for v in fields[1:]]).reshape(-1, 2)
        frames.append(Pose(coords, names))
    return PoseSequence(frames, video_id=video_id)
