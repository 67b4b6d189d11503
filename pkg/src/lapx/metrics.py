"""Keypoint evaluation: PCKh@0.5, object keypoint similarity, and
OKS-thresholded average precision / recall.
"""

from __future__ import annotations

import numpy as np

from .codec import PoseAnnotation

__all__ = [
    "pckh", "oks", "ap_over_oks",
    "DEFAULT_OKS_K", "OKS_THRESHOLDS", "UndefinedOksError",
]


class UndefinedOksError(ValueError):
    """OKS is undefined when the ground truth has no annotated joints."""


# Per-keypoint falloff constants for the 17-keypoint COCO skeleton
# (nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles),
# twice the COCO evaluator's per-keypoint sigmas.
DEFAULT_OKS_K = 2.0 * np.array(
    [0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
     0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089],
    dtype=np.float64)

OKS_THRESHOLDS = np.array(
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95])


def pckh(preds, gts, threshold: float = 0.5, groups: dict | None = None):
    """Percentage of correct keypoints, normalized by each pose's norm.

    preds/gts: equal-length lists of PoseAnnotation with matching K.  A
    joint counts iff annotated (v>0) and its prediction error is strictly
    below threshold*norm.  Returns (per_group, total) where per_group maps
    group name -> percentage over that group's annotated joints and total
    is the percentage over all annotated joints (so groups with more
    annotations weigh more).
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not gts:
        raise ValueError("empty evaluation set")
    k = gts[0].num_joints
    correct = np.zeros(k, dtype=np.int64)
    counted = np.zeros(k, dtype=np.int64)
    for pred, gt in zip(preds, gts):
        if pred.num_joints != k or gt.num_joints != k:
            raise ValueError("keypoint count mismatch")
        vis = gt.visible()
        d = np.linalg.norm(pred.joints[:, :2] - gt.joints[:, :2], axis=1)
        hit = vis & (d < threshold * gt.norm)
        counted += vis
        correct += hit
    if groups is None:
        groups = {f"joint_{j}": [j] for j in range(k)}
    per_group = {}
    for name, idxs in groups.items():
        idxs = list(idxs)
        n = counted[idxs].sum()
        per_group[name] = 100.0 * correct[idxs].sum() / n if n else float("nan")
    total_n = counted.sum()
    total = 100.0 * correct.sum() / total_n if total_n else float("nan")
    return per_group, total


def oks(pred: PoseAnnotation, gt: PoseAnnotation, consts=None) -> float:
    """Mean Gaussian keypoint similarity over the gt's annotated joints."""
    k = gt.num_joints
    consts = DEFAULT_OKS_K if consts is None else np.asarray(consts, dtype=np.float64)
    if consts.shape != (k,):
        raise ValueError(f"need {k} falloff constants, got {consts.shape}")
    vis = gt.visible()
    if not vis.any():
        raise UndefinedOksError("ground truth has no annotated joints")
    d2 = np.sum((pred.joints[:, :2] - gt.joints[:, :2]).astype(np.float64) ** 2,
                axis=1)
    s = float(gt.norm)
    e = np.exp(-d2[vis] / (2.0 * s * s * consts[vis] ** 2))
    return float(e.mean())


def _match_image(preds, gts, consts, thr):
    """Greedy matching for one image: predictions in descending score order
    each take the highest-OKS not-yet-matched gt with OKS >= thr.

    Returns [(score, is_tp), ...] and the gt count.
    """
    order = sorted(range(len(preds)),
                   key=lambda i: -(preds[i].score if preds[i].score is not None else 0.0))
    taken = [False] * len(gts)
    rows = []
    for i in order:
        best, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = oks(preds[i], gt, consts)
            if v > best:
                best, best_j = v, j
        score = preds[i].score if preds[i].score is not None else 0.0
        if best_j >= 0 and best >= thr:
            taken[best_j] = True
            rows.append((score, True))
        else:
            rows.append((score, False))
    return rows, len(gts)


def _ap_from_rows(rows, num_gt):
    """101-point interpolated AP and final recall from (score, tp) rows."""
    if num_gt == 0:
        return float("nan"), float("nan")
    if not rows:
        return 0.0, 0.0
    rows = sorted(rows, key=lambda r: -r[0])
    tp = np.cumsum([1 if r[1] else 0 for r in rows])
    fp = np.cumsum([0 if r[1] else 1 for r in rows])
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r - 1e-12
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 101.0, float(recall[-1])


def ap_over_oks(pred_sets, gt_sets, consts=None, thresholds=None):
    """AP/AR over OKS thresholds.

    pred_sets/gt_sets: per-image lists of PoseAnnotation (predictions carry
    scores).  Returns (AP, AR, per_threshold) where per_threshold maps each
    OKS threshold to its (ap, recall).
    """
    if len(pred_sets) != len(gt_sets):
        raise ValueError("prediction and ground-truth image counts differ")
    thresholds = OKS_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    per_threshold = {}
    for thr in thresholds:
        rows, num_gt = [], 0
        for preds, gts in zip(pred_sets, gt_sets):
            r, n = _match_image(preds, gts, consts, thr)
            rows.extend(r)
            num_gt += n
        per_threshold[float(thr)] = _ap_from_rows(rows, num_gt)
    aps = [v[0] for v in per_threshold.values()]
    ars = [v[1] for v in per_threshold.values()]
    return float(np.mean(aps)), float(np.mean(ars)), per_threshold
