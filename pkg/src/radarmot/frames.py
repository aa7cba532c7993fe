"""Radar frame types, box annotations, and sequence directory I/O.

A sequence directory holds:
    frames/NNNNNN.csv   one row per point: x,y,z,v_r,v_c (6-decimal fixed)
    poses.csv           one row per frame: row-major 3x4 rigid transform
    annotations.jsonl   one JSON object per box annotation
    meta.json           fps, sensor id

Positions and velocities are per-frame sensor coordinates; the ego pose maps
sensor coordinates into the world frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import warn_count
from .transforms import RigidTransform, ValidationError

ORIGIN_EPS = 1e-9


@dataclass(frozen=True)
class RadarPoint:
    """Single-point view: 3D position plus radial-velocity features."""

    position: np.ndarray
    rrv: float
    rrv_compensated: float


@dataclass(frozen=True)
class RadarFrame:
    """One radar scan. Per-point data is stored columnar for vector math.

    positions: (N, 3) meters; rrv / rrv_compensated: (N,) m/s.
    """

    positions: np.ndarray
    rrv: np.ndarray
    rrv_compensated: np.ndarray
    ego_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    timestamp: float = 0.0
    frame_index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        rrv = np.asarray(self.rrv, dtype=float).reshape(-1)
        rrv_c = np.asarray(self.rrv_compensated, dtype=float).reshape(-1)
        if not (pos.shape[0] == rrv.shape[0] == rrv_c.shape[0]):
            raise ValidationError("frame column lengths disagree")
        if pos.size and not np.all(np.isfinite(pos)):
            raise ValidationError("non-finite point position")
        if rrv.size and not (np.all(np.isfinite(rrv)) and np.all(np.isfinite(rrv_c))):
            raise ValidationError("non-finite velocity feature")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "rrv", rrv)
        object.__setattr__(self, "rrv_compensated", rrv_c)
        self.ego_pose.validate()

    def __len__(self) -> int:
        return self.positions.shape[0]

    def point(self, i: int) -> RadarPoint:
        return RadarPoint(self.positions[i], float(self.rrv[i]), float(self.rrv_compensated[i]))


@dataclass(frozen=True)
class BoxAnnotation:
    """Oriented box label used only for pseudo ground-truth generation."""

    center: np.ndarray
    dims: np.ndarray
    yaw: float
    track_id: int
    frame_index: int

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        d = np.asarray(self.dims, dtype=float).reshape(3)
        if np.any(d <= 0):
            raise ValidationError("box dims must be strictly positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)


def compensate_rrv(frame: RadarFrame, ego_velocity) -> RadarFrame:
    """Recompute rrv_compensated = rrv + <unit(position), ego_velocity>.

    ego_velocity is expressed in the sensor frame. Points at the sensor origin
    have no defined ray direction; their compensated value falls back to the
    raw rrv and a warning counter is bumped.
    """
    v = np.asarray(ego_velocity, dtype=float).reshape(3)
    norms = np.linalg.norm(frame.positions, axis=1)
    at_origin = norms < ORIGIN_EPS
    if np.any(at_origin):
        warn_count("compensate_rrv.point_at_origin", int(at_origin.sum()))
    safe = np.where(at_origin, 1.0, norms)
    radial = (frame.positions / safe[:, None]) @ v
    radial[at_origin] = 0.0
    return RadarFrame(
        positions=frame.positions,
        rrv=frame.rrv,
        rrv_compensated=frame.rrv + radial,
        ego_pose=frame.ego_pose,
        timestamp=frame.timestamp,
        frame_index=frame.frame_index,
    )


# ---------------------------------------------------------------------------
# sequence directory I/O

def _read_points_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        raw = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read point file {path}: {exc}") from exc
    rows = []
    for ln, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise OSError(f"corrupt point file {path}: line {ln} has {len(parts)} fields")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise OSError(f"corrupt point file {path}: line {ln}: {exc}") from exc
    arr = np.asarray(rows, dtype=float).reshape(-1, 5)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite value in point file {path}")
    return arr[:, :3], arr[:, 3], arr[:, 4]


def load_sequence(path) -> list[tuple[RadarFrame, list[BoxAnnotation]]]:
    """Load a sequence directory; frames come back sorted by frame index.

    An empty or missing frames/ directory yields an empty sequence.
    """
    root = Path(path)
    frames_dir = root / "frames"
    if not frames_dir.is_dir():
        return []
    frame_files = sorted(frames_dir.glob("*.csv"))
    if not frame_files:
        return []

    fps = 10.0
    meta_path = root / "meta.json"
    if meta_path.exists():
        try:
            fps = float(json.loads(meta_path.read_text()).get("fps", fps))
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"corrupt meta file {meta_path}: {exc}") from exc

    poses_path = root / "poses.csv"
    poses: list[RigidTransform] = []
    if poses_path.exists():
        for ln, line in enumerate(poses_path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            vals = [float(p) for p in line.split(",")]
            if len(vals) != 12:
                raise OSError(f"corrupt pose file {poses_path}: line {ln} has {len(vals)} values")
            try:
                poses.append(RigidTransform.from_flat(vals).validate())
            except ValidationError as exc:
                raise ValidationError(f"{poses_path} line {ln}: {exc}") from exc

    annotations: dict[int, list[BoxAnnotation]] = {}
    ann_path = root / "annotations.jsonl"
    if ann_path.exists():
        seen = set()
        for ln, line in enumerate(ann_path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise OSError(f"corrupt annotation file {ann_path}: line {ln}: {exc}") from exc
            box = BoxAnnotation(
                center=np.asarray(obj["center"], dtype=float),
                dims=np.asarray(obj["dims"], dtype=float),
                yaw=float(obj["yaw"]),
                track_id=int(obj["track_id"]),
                frame_index=int(obj["frame_index"]),
            )
            key = (box.track_id, box.frame_index)
            if key in seen:
                raise ValidationError(f"{ann_path}: duplicate (track_id, frame_index) {key}")
            seen.add(key)
            annotations.setdefault(box.frame_index, []).append(box)

    sequence = []
    last_index = None
    for row, f in enumerate(frame_files):
        idx = int(f.stem)
        if last_index is not None and idx <= last_index:
            raise ValidationError(f"frame indices not strictly increasing at {f}")
        last_index = idx
        pos, rrv, rrv_c = _read_points_csv(f)
        pose = poses[row] if row < len(poses) else RigidTransform.identity()
        try:
            frame = RadarFrame(
                positions=pos,
                rrv=rrv,
                rrv_compensated=rrv_c,
                ego_pose=pose,
                timestamp=idx / fps,
                frame_index=idx,
            )
        except ValidationError as exc:
            raise ValidationError(f"{f}: {exc}") from exc
        sequence.append((frame, annotations.get(idx, [])))
    return sequence


def save_sequence(path, sequence, fps: float = 10.0, sensor_id: str = "synthetic") -> None:
    """Write a sequence in the canonical on-disk format (6-decimal points)."""
    root = Path(path)
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    pose_rows = []
    ann_lines = []
    for frame, boxes in sequence:
        lines = [
            "%.6f,%.6f,%.6f,%.6f,%.6f" % (p[0], p[1], p[2], r, c)
            for p, r, c in zip(frame.positions, frame.rrv, frame.rrv_compensated)
        ]
        payload = "\n".join(lines)
        if lines:
            payload += "\n"
        (frames_dir / f"{frame.frame_index:06d}.csv").write_text(payload)
        pose_rows.append(",".join("%.9f" % v for v in frame.ego_pose.as_flat()))
        for box in boxes:
            ann_lines.append(json.dumps({
                "center": [float(v) for v in box.center],
                "dims": [float(v) for v in box.dims],
                "yaw": float(box.yaw),
                "track_id": box.track_id,
                "frame_index": box.frame_index,
            }, sort_keys=True))
    (root / "poses.csv").write_text("\n".join(pose_rows) + ("\n" if pose_rows else ""))
    (root / "annotations.jsonl").write_text("\n".join(ann_lines) + ("\n" if ann_lines else ""))
    (root / "meta.json").write_text(
        json.dumps({"fps": fps, "sensor_id": sensor_id}, sort_keys=True) + "\n"
    )
