"""Inference: cascaded boundary refinement, score fusion, NMS, mAP@tIoU.

The cascade re-feeds each refined window through the same network (shared
parameters); predicted variances are ignored at test time.  Detections are
scored as actioness times the class posterior, suppressed per video and
class with greedy NMS, and evaluated with all-point interpolated average
precision at several tIoU thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from utal.data import (
    Dataset,
    Proposal,
    ProposalConfig,
    UnitFeatureSequence,
    pool_k_parts,
    sliding_windows,
    tiou,
)
from utal.errors import ConfigError
from utal.model import HeadOutput, Model
from utal.net import softmax

_MIN_LENGTH = 1.0  # fallback span, in units, for degenerate refinements


@dataclass
class DetectConfig:
    cascade_steps: int = 2
    nms_thr: float = 0.5
    tiou_thresholds: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7)
    score_floor: float = 0.01

    def validate(self) -> None:
        if self.cascade_steps < 1:
            raise ConfigError("cascade_steps must be at least 1")
        if not 0.0 <= self.nms_thr <= 1.0:
            raise ConfigError("nms_thr must lie in [0, 1]")
        if not self.tiou_thresholds:
            raise ConfigError("need at least one tIoU threshold")
        if self.score_floor < 0:
            raise ConfigError("score_floor must be nonnegative")


@dataclass
class Detection:
    video_id: str
    start: float
    end: float
    class_id: int
    score: float


@dataclass
class EvalReport:
    """mAP per tIoU threshold plus the per-class AP matrix behind it."""

    map_by_tiou: dict[float, float]
    per_class_ap: dict[float, dict[int, float | None]]
    num_detections: int
    num_ground_truths: int
    no_detections: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map_by_tiou": {repr(t): self.map_by_tiou[t] for t in sorted(self.map_by_tiou)},
            "per_class_ap": {
                repr(t): {str(c): ap for c, ap in sorted(self.per_class_ap[t].items())}
                for t in sorted(self.per_class_ap)
            },
            "num_detections": self.num_detections,
            "num_ground_truths": self.num_ground_truths,
            "no_detections": self.no_detections,
            "config": self.config,
        }


def apply_offsets(prop: Proposal, y_s: float, y_e: float, t_max: float) -> Proposal:
    """Inverse of offset computation: shift boundaries by offset * length.

    The result is clamped to [0, t_max]; if the boundaries cross, a window of
    minimum length centered at their midpoint is used instead.
    """
    length = prop.length
    if length <= 0:
        raise ConfigError("proposal length must be positive")
    s = min(max(prop.start + y_s * length, 0.0), t_max)
    e = min(max(prop.end + y_e * length, 0.0), t_max)
    if s >= e:
        span = min(_MIN_LENGTH, t_max)
        mid = 0.5 * (s + e)
        s = mid - 0.5 * span
        e = mid + 0.5 * span
        if s < 0.0:
            s, e = 0.0, span
        elif e > t_max:
            s, e = t_max - span, t_max
    return Proposal(s, e, prop.scale_id)


def _refine_batch(
    model: Model, video: UnitFeatureSequence, proposals: list[Proposal], steps: int
) -> tuple[list[Proposal], list[HeadOutput]]:
    """Run the shared-parameter cascade on many proposals at once.

    Each step pools, forwards, and moves every live proposal by the argmax
    class offsets; a proposal that degenerates stops refining and keeps its
    last state.  Returns final proposals and the head outputs of the last
    forward pass.
    """
    if steps < 1:
        raise ConfigError("cascade needs at least one step")
    t_max = float(video.num_units)
    current = list(proposals)
    heads: list[HeadOutput] = [None] * len(current)  # type: ignore[list-item]
    live = list(range(len(current)))
    for _ in range(steps):
        if not live:
            break
        x = np.stack([pool_k_parts(video, current[i], model.k) for i in live])
        fwd = model.forward_batch(x)
        best = fwd.logits.argmax(axis=1)
        next_live = []
        for row, i in enumerate(live):
            c = int(best[row])
            if model.uncertainty:
                offsets = np.stack(
                    [fwd.mu[row, :, 0], fwd.alpha[row, :, 0], fwd.mu[row, :, 1], fwd.alpha[row, :, 1]],
                    axis=1,
                )
            else:
                offsets = fwd.mu[row]
            heads[i] = HeadOutput(float(fwd.y_a[row]), fwd.logits[row].copy(), offsets)
            refined = apply_offsets(
                current[i], float(fwd.mu[row, c, 0]), float(fwd.mu[row, c, 1]), t_max
            )
            if refined.length > 1e-9:
                current[i] = refined
                next_live.append(i)
        live = next_live
    return current, heads


def refine_cascade(
    model: Model, video: UnitFeatureSequence, prop: Proposal, steps: int
) -> tuple[Proposal, HeadOutput]:
    """Cascade one proposal; returns the final window and last head output."""
    final, heads = _refine_batch(model, video, [prop], steps)
    return final[0], heads[0]


def fuse_scores(out: HeadOutput) -> np.ndarray:
    """Per-class detection scores: actioness times the class posterior."""
    return out.y_a * softmax(out.class_logits)


def _det_sort_key(det: Detection):
    return (-det.score, det.video_id, det.start, det.end, det.class_id)


def nms(dets: list[Detection], tiou_thr: float) -> list[Detection]:
    """Greedy NMS over detections of one video and class.

    Sorted by score (ties by video then start); a detection is kept iff its
    tIoU with every kept detection is below the threshold.
    """
    kept: list[Detection] = []
    for det in sorted(dets, key=_det_sort_key):
        if all(
            tiou((det.start, det.end), (k.start, k.end)) < tiou_thr for k in kept
        ):
            kept.append(det)
    return kept


def average_precision(
    dets: list[Detection],
    gts: list[tuple[str, float, float]],
    tiou_thr: float,
) -> float | None:
    """All-point interpolated AP for one class.

    `gts` are (video_id, start, end) triples.  Detections are matched in
    score order to the highest-tIoU unmatched ground truth of the same video
    at or above the threshold.  Returns None when the class has no ground
    truths (excluded from mAP).
    """
    if not gts:
        return None
    by_video: dict[str, list[int]] = {}
    for gi, (vid, _, _) in enumerate(gts):
        by_video.setdefault(vid, []).append(gi)
    matched = [False] * len(gts)
    tp = np.zeros(len(dets))
    for di, det in enumerate(sorted(dets, key=_det_sort_key)):
        best_t, best_gi = 0.0, -1
        for gi in by_video.get(det.video_id, ()):
            if matched[gi]:
                continue
            t = tiou((det.start, det.end), (gts[gi][1], gts[gi][2]))
            if t >= tiou_thr and t > best_t:
                best_t, best_gi = t, gi
        if best_gi >= 0:
            matched[best_gi] = True
            tp[di] = 1.0
    if not dets:
        return 0.0
    tp_cum = np.cumsum(tp)
    recall = tp_cum / len(gts)
    precision = tp_cum / np.arange(1, len(dets) + 1)
    # precision envelope over recall, all-point interpolation
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[1.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def video_detections(
    model: Model,
    video: UnitFeatureSequence,
    det_cfg: DetectConfig,
    prop_cfg: ProposalConfig,
) -> list[Detection]:
    """Full single-video inference: windows -> cascade -> fusion -> NMS."""
    windows = sliding_windows(video.num_units, prop_cfg.scales, prop_cfg.overlap)
    windows.sort(key=lambda p: (p.start, p.scale_id))
    refined, heads = _refine_batch(model, video, windows, det_cfg.cascade_steps)
    per_class: dict[int, list[Detection]] = {}
    for prop, head in zip(refined, heads):
        fused = fuse_scores(head)
        for c in range(fused.shape[0]):
            if fused[c] >= det_cfg.score_floor:
                per_class.setdefault(c, []).append(
                    Detection(video.video_id, prop.start, prop.end, c, float(fused[c]))
                )
    out: list[Detection] = []
    for c in sorted(per_class):
        out.extend(nms(per_class[c], det_cfg.nms_thr))
    return out


def collect_detections(
    model: Model,
    dataset: Dataset,
    det_cfg: DetectConfig,
    prop_cfg: ProposalConfig,
) -> list[Detection]:
    """Inference over every video, in fixed video order."""
    out: list[Detection] = []
    for item in sorted(dataset.videos, key=lambda v: v.sequence.video_id):
        out.extend(video_detections(model, item.sequence, det_cfg, prop_cfg))
    return out


def ground_truths_by_class(dataset: Dataset) -> dict[int, list[tuple[str, float, float]]]:
    gts: dict[int, list[tuple[str, float, float]]] = {}
    for item in sorted(dataset.videos, key=lambda v: v.sequence.video_id):
        for ann in item.annotations:
            gts.setdefault(ann.class_id, []).append(
                (item.sequence.video_id, ann.start, ann.end)
            )
    return gts


def evaluate_detections(
    all_dets: list[Detection],
    gts_by_class: dict[int, list[tuple[str, float, float]]],
    tiou_thresholds: tuple[float, ...],
) -> EvalReport:
    """AP per class per threshold, mAP over classes with ground truth."""
    classes = sorted(gts_by_class)
    num_gt = sum(len(v) for v in gts_by_class.values())
    map_by_tiou: dict[float, float] = {}
    per_class_ap: dict[float, dict[int, float | None]] = {}
    for thr in tiou_thresholds:
        aps: dict[int, float | None] = {}
        for c in classes:
            dets_c = [d for d in all_dets if d.class_id == c]
            aps[c] = average_precision(dets_c, gts_by_class[c], thr)
        per_class_ap[thr] = aps
        valid = [ap for ap in aps.values() if ap is not None]
        map_by_tiou[thr] = float(np.mean(valid)) if valid else 0.0
    return EvalReport(
        map_by_tiou=map_by_tiou,
        per_class_ap=per_class_ap,
        num_detections=len(all_dets),
        num_ground_truths=num_gt,
        no_detections=len(all_dets) == 0,
    )


def evaluate(
    model: Model,
    dataset: Dataset,
    det_cfg: DetectConfig | None = None,
    prop_cfg: ProposalConfig | None = None,
) -> EvalReport:
    """mAP at each configured tIoU threshold over the whole dataset."""
    det_cfg = det_cfg or DetectConfig()
    prop_cfg = prop_cfg or ProposalConfig()
    det_cfg.validate()
    prop_cfg.validate()
    all_dets = collect_detections(model, dataset, det_cfg, prop_cfg)
    return evaluate_detections(all_dets, ground_truths_by_class(dataset), det_cfg.tiou_thresholds)
