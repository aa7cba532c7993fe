"""Point-set IoU matching and the MOT metric suite.

Objects are point-index sets per frame. Matching is greedy by descending
IoU with a fixed acceptance threshold; objects with too few points are
dropped from both sides before anything is counted. Headline CLEAR metrics
(MOTA, MODA, MT, ML) use all predictions; the AMOTA family re-runs the
evaluation at confidence thresholds chosen to hit a ladder of recall
targets, following the published sweep convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .transforms import ValidationError


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.25
    min_points_valid: int = 5
    recall_steps: int = 40
    confidence_sweep: bool = True

    def validate(self) -> "EvalConfig":
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must lie in (0, 1]")
        if self.min_points_valid < 1:
            raise ValidationError("min_points_valid must be >= 1")
        if self.recall_steps < 2:
            raise ValidationError("recall_steps must be >= 2")
        return self


@dataclass
class FrameResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    id_switches: int = 0
    matched_iou_sum: float = 0.0
    gt_count: int = 0


@dataclass(frozen=True)
class EvalSequence:
    """Per-frame object maps for one sequence.

    gt[f] and pred[f] map object id -> point-index set; conf[f] maps
    predicted id -> confidence.
    """

    gt: list
    pred: list
    conf: list

    def __post_init__(self):
        if not (len(self.gt) == len(self.pred) == len(self.conf)):
            raise ValidationError("per-frame list lengths disagree")


def point_iou(a, b) -> float:
    """|a n b| / |a u b| on index sets; two empty sets give 0."""
    sa, sb = set(a), set(b)
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


def _valid(objs: dict, min_points: int) -> dict:
    return {oid: pts for oid, pts in objs.items() if len(pts) >= min_points}


def greedy_iou_match(gt: dict, pred: dict,
                     iou_threshold: float) -> list[tuple[int, int, float]]:
    """One-to-one (gt_id, pred_id, iou) pairs, descending IoU.

    Ties break toward the lower gt id, then the lower predicted id.
    """
    candidates = []
    for gid in sorted(gt):
        for pid in sorted(pred):
            iou = point_iou(gt[gid], pred[pid])
            if iou >= iou_threshold:
                candidates.append((-iou, gid, pid))
    used_g: set = set()
    used_p: set = set()
    out = []
    for neg_iou, gid, pid in sorted(candidates):
        if gid in used_g or pid in used_p:
            continue
        used_g.add(gid)
        used_p.add(pid)
        out.append((gid, pid, -neg_iou))
    return out


def match_frame(gt: dict, pred: dict, cfg: EvalConfig,
                prev_assignment: dict | None = None):
    """Returns (FrameResult, assignment dict gt_id -> pred_id).

    `prev_assignment` carries each gt trajectory's last matched predicted id;
    a change between matched frames counts one id switch.
    """
    prev_assignment = prev_assignment or {}
    gt_v = _valid(gt, cfg.min_points_valid)
    pred_v = _valid(pred, cfg.min_points_valid)
    matches = greedy_iou_match(gt_v, pred_v, cfg.iou_threshold)

    res = FrameResult(gt_count=len(gt_v))
    res.tp = len(matches)
    res.fp = len(pred_v) - len(matches)
    res.fn = len(gt_v) - len(matches)
    assignment = {}
    for gid, pid, iou in matches:
        res.matched_iou_sum += iou
        if gid in prev_assignment and prev_assignment[gid] != pid:
            res.id_switches += 1
        assignment[gid] = pid
    return res, assignment


@dataclass
class Accumulator:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    id_switches: int = 0
    gt: int = 0
    matched_iou_sum: float = 0.0
    # (sequence index, gt id) -> [valid frames, matched frames]
    trajectories: dict = field(default_factory=dict)

    def add(self, other: "Accumulator") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.id_switches += other.id_switches
        self.gt += other.gt
        self.matched_iou_sum += other.matched_iou_sum
        for key, (v, m) in other.trajectories.items():
            cur = self.trajectories.setdefault(key, [0, 0])
            cur[0] += v
            cur[1] += m


def _threshold_preds(pred: dict, conf: dict, threshold: float | None) -> dict:
    if threshold is None:
        return pred
    return {pid: pts for pid, pts in pred.items()
            if conf.get(pid, 0.0) >= threshold}


def accumulate_sequence(seq: EvalSequence, cfg: EvalConfig,
                        threshold: float | None = None,
                        seq_key: int = 0) -> Accumulator:
    acc = Accumulator()
    last_matched: dict = {}
    for f, (gt, pred, conf) in enumerate(zip(seq.gt, seq.pred, seq.conf)):
        use_pred = _threshold_preds(pred, conf, threshold)
        res, assignment = match_frame(gt, use_pred, cfg, last_matched)
        last_matched.update(assignment)
        acc.tp += res.tp
        acc.fp += res.fp
        acc.fn += res.fn
        acc.id_switches += res.id_switches
        acc.gt += res.gt_count
        acc.matched_iou_sum += res.matched_iou_sum
        for gid in _valid(gt, cfg.min_points_valid):
            traj = acc.trajectories.setdefault((seq_key, gid), [0, 0])
            traj[0] += 1
            if gid in assignment:
                traj[1] += 1
    return acc


def accumulate_all(seqs: list[EvalSequence], cfg: EvalConfig,
                   threshold: float | None = None) -> Accumulator:
    total = Accumulator()
    for i, seq in enumerate(seqs):
        total.add(accumulate_sequence(seq, cfg, threshold, seq_key=i))
    return total


def clear_metrics(acc: Accumulator):
    """(mota, moda, mt, ml); all None when there is no valid ground truth."""
    if acc.gt == 0:
        return None, None, None, None
    mota = 1.0 - (acc.fp + acc.fn + acc.id_switches) / acc.gt
    moda = 1.0 - (acc.fp + acc.fn) / acc.gt
    if acc.trajectories:
        n = len(acc.trajectories)
        mt = sum(1 for v, m in acc.trajectories.values() if m / v >= 0.8) / n
        ml = sum(1 for v, m in acc.trajectories.values() if m / v <= 0.2) / n
    else:
        mt = ml = None
    return mota, moda, mt, ml


@dataclass(frozen=True)
class RecallPoint:
    target_recall: float
    threshold: float | None   # None: unreachable, contributes zeros
    achieved_recall: float
    mota: float
    smota: float
    motp: float
    tp: int
    fp: int
    fn: int
    id_switches: int

    def to_dict(self) -> dict:
        return {
            "target_recall": self.target_recall,
            "threshold": self.threshold,
            "achieved_recall": self.achieved_recall,
            "mota": self.mota,
            "smota": self.smota,
            "motp": self.motp,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "id_switches": self.id_switches,
        }


def amota_family(seqs: list[EvalSequence], cfg: EvalConfig):
    """(samota, amota, amotp, best_mota, recall table).

    Candidate thresholds are the distinct prediction confidences. For each
    target recall the highest threshold reaching it is evaluated; a target
    no threshold reaches contributes zero to every average.
    """
    base = accumulate_all(seqs, cfg)
    if base.gt == 0:
        return None, None, None, None, []
    confidences = sorted({c for seq in seqs for frame in seq.conf
                          for c in frame.values()}, reverse=True)
    runs = []
    for th in confidences:
        acc = accumulate_all(seqs, cfg, threshold=th)
        runs.append((th, acc, acc.tp / acc.gt))

    table = []
    best_mota = None
    for _, acc, _ in runs:
        raw = 1.0 - (acc.fp + acc.fn + acc.id_switches) / acc.gt
        best_mota = raw if best_mota is None else max(best_mota, raw)
    for j in range(cfg.recall_steps):
        target = (j + 1) / cfg.recall_steps
        chosen = next(((th, acc, rec) for th, acc, rec in runs
                       if rec >= target - 1e-12), None)
        if chosen is None:
            table.append(RecallPoint(target, None, 0.0, 0.0, 0.0, 0.0,
                                     0, 0, 0, 0))
            continue
        th, acc, rec = chosen
        errors = acc.fp + acc.fn + acc.id_switches
        mota_r = max(0.0, min(1.0, 1.0 - errors / acc.gt))
        smota_r = max(0.0, min(1.0, 1.0 - (errors - (1.0 - target) * acc.gt)
                               / (target * acc.gt)))
        motp_r = acc.matched_iou_sum / acc.tp if acc.tp else 0.0
        table.append(RecallPoint(target, th, rec, mota_r, smota_r, motp_r,
                                 acc.tp, acc.fp, acc.fn, acc.id_switches))
    steps = cfg.recall_steps
    samota = sum(p.smota for p in table) / steps
    amota = sum(p.mota for p in table) / steps
    amotp = sum(p.motp for p in table) / steps
    return samota, amota, amotp, best_mota, table


@dataclass(frozen=True)
class MetricReport:
    mota: float | None
    moda: float | None
    mt: float | None
    ml: float | None
    samota: float | None
    amota: float | None
    amotp: float | None
    best_threshold_mota: float | None
    recall_table: list

    def to_dict(self) -> dict:
        return {
            "mota": self.mota,
            "moda": self.moda,
            "mt": self.mt,
            "ml": self.ml,
            "samota": self.samota,
            "amota": self.amota,
            "amotp": self.amotp,
            "best_threshold_mota": self.best_threshold_mota,
            "recall_table": [p.to_dict() for p in self.recall_table],
        }


def evaluate(seqs: list[EvalSequence], cfg: EvalConfig) -> MetricReport:
    acc = accumulate_all(seqs, cfg)
    mota, moda, mt, ml = clear_metrics(acc)
    if cfg.confidence_sweep:
        samota, amota, amotp, best_mota, table = amota_family(seqs, cfg)
    else:
        samota = amota = amotp = best_mota = None
        table = []
    return MetricReport(mota, moda, mt, ml, samota, amota, amotp, best_mota,
                        table)


def sweep(seqs: list[EvalSequence], axis: str, values, cfg: EvalConfig):
    """Re-evaluate per value of `axis`; returns [(value, MetricReport)]."""
    if axis not in ("min_points_valid", "iou_threshold"):
        raise ValidationError(f"unknown sweep axis: {axis}")
    out = []
    for v in values:
        kwargs = {axis: int(v) if axis == "min_points_valid" else float(v)}
        sub = replace(cfg, **kwargs).validate()
        out.append((v, evaluate(seqs, sub)))
    return out


# ---------------------------------------------------------------------------
# object-record files (JSON lines: frame_index, track_id, point_indices[, confidence])

def load_object_frames(path, n_frames: int):
    """Returns (objects, confidences) as per-frame dicts from a JSONL file.

    Duplicate (frame_index, track_id) pairs are rejected. Records without a
    confidence default to 1.0.
    """
    objects = [dict() for _ in range(n_frames)]
    confidences = [dict() for _ in range(n_frames)]
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            f = int(rec["frame_index"])
            tid = int(rec["track_id"])
            pts = frozenset(int(i) for i in rec["point_indices"])
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise OSError(f"{path}:{line_no}: bad object record: {e}") from e
        if not 0 <= f < n_frames:
            raise ValidationError(f"{path}:{line_no}: frame_index {f} out of range")
        if tid in objects[f]:
            raise ValidationError(
                f"{path}:{line_no}: duplicate id {tid} in frame {f}")
        objects[f][tid] = pts
        confidences[f][tid] = float(rec.get("confidence", 1.0))
    return objects, confidences


def eval_sequence_from_records(gt_frames: list, records: list[dict]) -> EvalSequence:
    """Build an EvalSequence from tracker records and per-frame gt objects.

    gt_frames is a list of dicts id -> point-index collection, one per frame;
    records are tracker output rows carrying frame_index, track_id,
    point_indices and confidence.
    """
    n = len(gt_frames)
    pred = [dict() for _ in range(n)]
    conf = [dict() for _ in range(n)]
    for rec in records:
        t = int(rec["frame_index"])
        if not 0 <= t < n:
            raise ValidationError(f"record frame_index {t} out of range")
        pred[t][int(rec["track_id"])] = frozenset(int(i) for i in rec["point_indices"])
        conf[t][int(rec["track_id"])] = float(rec["confidence"])
    gt = [{int(k): frozenset(int(i) for i in v) for k, v in frame.items()}
          for frame in gt_frames]
    return EvalSequence(gt, pred, conf)
