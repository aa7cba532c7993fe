"""Pseudo ground-truth labels from box annotations and ego poses.

Flow labels: points inside a box whose track id also exists in the previous
frame move rigidly with the box (previous box pose composed with the inverse
of the current one); all other points get the flow induced by ego motion
alone. The motion mask thresholds the ego-compensated flow magnitude. The
affinity target marks (detection, previous-object) pairs whose inherited
ground-truth ids agree, with ids inherited greedily by point IoU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import BoxAnnotation, RadarFrame
from .metrics import point_iou
from .transforms import RigidTransform, rot_z

DEFAULT_MOTION_LABEL_THRESHOLD = 0.05  # meters per frame interval
DEFAULT_INHERIT_IOU = 0.25


@dataclass(frozen=True)
class GroundTruthLabels:
    flow: np.ndarray             # (N, 3)
    motion_mask: np.ndarray      # (N,) of {0, 1}
    affinity: np.ndarray         # (K, M) of {0, 1}, at most one 1 per row/col
    point_object_id: np.ndarray  # (N,), -1 for background


def box_pose(box: BoxAnnotation) -> RigidTransform:
    return RigidTransform(rot_z(box.yaw), np.asarray(box.center, dtype=float))


def box_members(frame: RadarFrame, boxes: list[BoxAnnotation]) -> dict[int, np.ndarray]:
    """track_id -> sorted member indices. First box (by id) claims overlaps."""
    claimed = np.zeros(len(frame), dtype=bool)
    members: dict[int, np.ndarray] = {}
    for box in sorted(boxes, key=lambda b: b.track_id):
        local = box_pose(box).inverse().apply(frame.positions)
        inside = np.all(np.abs(local) <= np.asarray(box.dims) / 2.0, axis=1)
        inside &= ~claimed
        claimed |= inside
        members[box.track_id] = np.flatnonzero(inside)
    return members


def ego_flow(frame_t: RadarFrame, frame_prev: RadarFrame) -> np.ndarray:
    """Backward flow of a world-static point: t sensor -> world -> t-1 sensor."""
    to_prev = frame_prev.ego_pose.inverse().compose(frame_t.ego_pose)
    return to_prev.apply(frame_t.positions) - frame_t.positions


def inherit_ids(groups: list[tuple[int, ...]], gt_objects: dict[int, set],
                min_iou: float = DEFAULT_INHERIT_IOU) -> list[int]:
    """Greedy one-to-one id inheritance by descending point IoU (> min_iou).

    Ties break toward the lower group index, then the lower ground-truth id.
    Unmatched groups get -1.
    """
    ids = [-1] * len(groups)
    pairs = []
    for gi, group in enumerate(groups):
        gset = set(group)
        for oid in sorted(gt_objects):
            iou = point_iou(gset, gt_objects[oid])
            if iou > min_iou:
                pairs.append((-iou, gi, oid))
    used_groups: set[int] = set()
    used_objects: set[int] = set()
    for neg_iou, gi, oid in sorted(pairs):
        if gi in used_groups or oid in used_objects:
            continue
        used_groups.add(gi)
        used_objects.add(oid)
        ids[gi] = oid
    return ids


def generate_labels(frame_t: RadarFrame, frame_prev: RadarFrame,
                    boxes_t: list[BoxAnnotation],
                    boxes_prev: list[BoxAnnotation],
                    detections: list[tuple[int, ...]],
                    prev_groups: list[tuple[int, ...]],
                    motion_label_threshold: float = DEFAULT_MOTION_LABEL_THRESHOLD,
                    inherit_iou: float = DEFAULT_INHERIT_IOU) -> GroundTruthLabels:
    """Labels for one frame pair.

    `detections` and `prev_groups` are point-index groups (current clusters
    and the previous frame's tracked clusters) used for the affinity target.
    A box with no same-id predecessor contributes ego-only flow; its points
    are labeled by the mask threshold like any others.
    """
    n = len(frame_t)
    flow = ego_flow(frame_t, frame_prev)
    baseline = flow.copy()
    object_id = np.full(n, -1, dtype=int)

    prev_by_id = {b.track_id: b for b in boxes_prev}
    members_t = box_members(frame_t, boxes_t)
    for tid in sorted(members_t):
        idx = members_t[tid]
        if idx.size == 0:
            continue
        object_id[idx] = tid
        if tid not in prev_by_id:
            continue
        box_t = next(b for b in boxes_t if b.track_id == tid)
        rigid = box_pose(prev_by_id[tid]).compose(box_pose(box_t).inverse())
        flow[idx] = rigid.apply(frame_t.positions[idx]) - frame_t.positions[idx]

    compensated = flow - baseline
    mask = (np.linalg.norm(compensated, axis=1) > motion_label_threshold).astype(int)

    gt_t = {tid: set(map(int, members_t[tid])) for tid in members_t
            if members_t[tid].size}
    members_prev = box_members(frame_prev, boxes_prev)
    gt_prev = {tid: set(map(int, members_prev[tid])) for tid in members_prev
               if members_prev[tid].size}
    det_ids = inherit_ids(detections, gt_t, inherit_iou)
    prev_ids = inherit_ids(prev_groups, gt_prev, inherit_iou)

    aff = np.zeros((len(detections), len(prev_groups)), dtype=int)
    for k, did in enumerate(det_ids):
        if did == -1:
            continue
        for m, pid in enumerate(prev_ids):
            if pid == did:
                aff[k, m] = 1
    return GroundTruthLabels(flow, mask, aff, object_id)
