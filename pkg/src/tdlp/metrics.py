"""Tracking metrics: CLEAR-MOT (MOTA, IDSW), IDF1, HOTA with DetA/AssA.

Definitions implemented:
  * per-frame correspondence: maximum-cardinality matching among pairs with
    IoU >= threshold, maximizing total IoU among those (Hungarian);
  * MOTA = 1 - (FN + FP + IDSW) / GT, identity switches counted when a
    matched ground-truth object changes its matched prediction id relative
    to its previous match;
  * IDF1 via a global one-to-one identity mapping maximizing identity true
    positives (a gt/pred identity pair scores one IDTP per frame where both
    boxes overlap at IoU >= 0.5);
  * HOTA averaged over localization thresholds alpha in {0.05, ..., 0.95};
    per alpha, DetA = TP/(TP+FN+FP) and AssA is the mean over TP pairs c of
    TPA(c)/(TPA(c)+FNA(c)+FPA(c)).

Aggregation across sequences pools the underlying counts before ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import iou_matrix
from .assoc import hungarian_solve
from .mot_io import SequenceData

HOTA_ALPHAS = np.round(np.arange(0.05, 1.0, 0.05), 2)
CLEAR_IOU_THRESHOLD = 0.5


@dataclass
class EvalReport:
    name: str
    hota: float | None
    deta: float | None
    assa: float | None
    mota: float | None
    idf1: float | None
    idsw: int
    fp: int
    fn: int
    gt: int

    CSV_FIELDS = ("name", "hota", "deta", "assa", "mota", "idf1", "idsw", "fp", "fn", "gt")

    def csv_row(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.6f}"
            return str(v)

        return ",".join(fmt(getattr(self, f)) for f in self.CSV_FIELDS)


def _frames_view(seq: SequenceData):
    """{frame: (ids int array, boxes (n, 4))} with empty frames dropped."""
    out = {}
    for f in seq.frame_ids():
        recs = seq.frames[f]
        if not recs:
            continue
        ids = np.array([r.id for r in recs], dtype=np.int64)
        boxes = np.stack([r.box() for r in recs])
        out[f] = (ids, boxes)
    return out


def frame_match(gt_boxes, pred_boxes, iou_threshold: float):
    """Optimal per-frame correspondence.

    Returns (pairs, iou) where pairs is a list of (gt_index, pred_index)
    with IoU >= threshold, maximum cardinality, maximum IoU sum.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    if gt_boxes.size == 0 or pred_boxes.size == 0:
        return [], np.zeros((gt_boxes.shape[0], pred_boxes.shape[0]))
    iou = iou_matrix(np.ascontiguousarray(gt_boxes), np.ascontiguousarray(pred_boxes))
    forbidden = iou < iou_threshold
    if forbidden.all():
        return [], iou
    pairs = hungarian_solve(-iou, forbidden=forbidden)
    return pairs, iou


def compute_clearmot(gt: SequenceData, pred: SequenceData,
                     iou_threshold: float = CLEAR_IOU_THRESHOLD):
    """Returns dict with mota (None when GT empty), idsw, fp, fn, gt."""
    gtv = _frames_view(gt)
    pdv = _frames_view(pred)
    fp = fn = idsw = gt_total = 0
    last_pred: dict[int, int] = {}
    for f in sorted(set(gtv) | set(pdv)):
        g_ids, g_boxes = gtv.get(f, (np.empty(0, np.int64), np.empty((0, 4))))
        p_ids, p_boxes = pdv.get(f, (np.empty(0, np.int64), np.empty((0, 4))))
        gt_total += len(g_ids)
        pairs, _ = frame_match(g_boxes, p_boxes, iou_threshold)
        fn += len(g_ids) - len(pairs)
        fp += len(p_ids) - len(pairs)
        for gi, pj in pairs:
            gid = int(g_ids[gi])
            pid = int(p_ids[pj])
            if gid in last_pred and last_pred[gid] != pid:
                idsw += 1
            last_pred[gid] = pid
    mota = None if gt_total == 0 else 1.0 - (fn + fp + idsw) / gt_total
    return {"mota": mota, "idsw": idsw, "fp": fp, "fn": fn, "gt": gt_total}


def _idf1_counts(gt: SequenceData, pred: SequenceData, iou_threshold: float):
    """(IDTP under the optimal identity mapping, total gt boxes, total pred boxes)."""
    gtv = _frames_view(gt)
    pdv = _frames_view(pred)
    gt_ids = sorted({int(i) for ids, _ in gtv.values() for i in ids})
    pr_ids = sorted({int(i) for ids, _ in pdv.values() for i in ids})
    g_index = {g: k for k, g in enumerate(gt_ids)}
    p_index = {p: k for k, p in enumerate(pr_ids)}
    overlap = np.zeros((len(gt_ids), len(pr_ids)))
    g_total = sum(len(ids) for ids, _ in gtv.values())
    p_total = sum(len(ids) for ids, _ in pdv.values())
    for f in sorted(set(gtv) & set(pdv)):
        g_ids, g_boxes = gtv[f]
        p_ids, p_boxes = pdv[f]
        iou = iou_matrix(np.ascontiguousarray(g_boxes), np.ascontiguousarray(p_boxes))
        hit = iou >= iou_threshold
        for gi, pj in zip(*np.nonzero(hit)):
            overlap[g_index[int(g_ids[gi])], p_index[int(p_ids[pj])]] += 1
    if overlap.size == 0 or overlap.max() == 0:
        return 0, g_total, p_total
    pairs = hungarian_solve(-overlap, forbidden=overlap == 0)
    idtp = int(sum(overlap[i, j] for i, j in pairs))
    return idtp, g_total, p_total


def compute_idf1(gt: SequenceData, pred: SequenceData,
                 iou_threshold: float = CLEAR_IOU_THRESHOLD):
    idtp, g_total, p_total = _idf1_counts(gt, pred, iou_threshold)
    if g_total == 0:
        return None
    return 2.0 * idtp / (g_total + p_total) if (g_total + p_total) else None


def _hota_counts(gt: SequenceData, pred: SequenceData):
    """Per-alpha counts: TP, association-fraction sum, plus box totals."""
    gtv = _frames_view(gt)
    pdv = _frames_view(pred)
    g_total = sum(len(ids) for ids, _ in gtv.values())
    p_total = sum(len(ids) for ids, _ in pdv.values())
    n_alpha = len(HOTA_ALPHAS)
    tp = np.zeros(n_alpha, dtype=np.int64)
    assoc_sum = np.zeros(n_alpha)
    gt_count: dict[int, int] = {}
    pred_count: dict[int, int] = {}
    for ids, _ in gtv.values():
        for g in ids:
            gt_count[int(g)] = gt_count.get(int(g), 0) + 1
    for ids, _ in pdv.values():
        for p in ids:
            pred_count[int(p)] = pred_count.get(int(p), 0) + 1
    matches_per_alpha: list[dict[tuple[int, int], int]] = [dict() for _ in range(n_alpha)]
    match_lists: list[list[tuple[int, int]]] = [[] for _ in range(n_alpha)]
    frames = sorted(set(gtv) & set(pdv))
    for f in frames:
        g_ids, g_boxes = gtv[f]
        p_ids, p_boxes = pdv[f]
        for ai, alpha in enumerate(HOTA_ALPHAS):
            pairs, _ = frame_match(g_boxes, p_boxes, alpha)
            tp[ai] += len(pairs)
            for gi, pj in pairs:
                key = (int(g_ids[gi]), int(p_ids[pj]))
                matches_per_alpha[ai][key] = matches_per_alpha[ai].get(key, 0) + 1
                match_lists[ai].append(key)
    for ai in range(n_alpha):
        for gid, pid in match_lists[ai]:
            tpa = matches_per_alpha[ai][(gid, pid)]
            denom = gt_count[gid] + pred_count[pid] - tpa
            assoc_sum[ai] += tpa / denom
    return tp, assoc_sum, g_total, p_total


def _hota_from_counts(tp, assoc_sum, g_total, p_total):
    deta = np.zeros(len(HOTA_ALPHAS))
    assa = np.zeros(len(HOTA_ALPHAS))
    hota = np.zeros(len(HOTA_ALPHAS))
    for ai in range(len(HOTA_ALPHAS)):
        denom = g_total + p_total - tp[ai]
        deta[ai] = tp[ai] / denom if denom else 0.0
        assa[ai] = assoc_sum[ai] / tp[ai] if tp[ai] else 0.0
        hota[ai] = float(np.sqrt(deta[ai] * assa[ai]))
    return float(hota.mean()), float(deta.mean()), float(assa.mean())


def compute_hota(gt: SequenceData, pred: SequenceData):
    """(HOTA, DetA, AssA) averaged over the alpha grid; None when GT empty."""
    tp, assoc_sum, g_total, p_total = _hota_counts(gt, pred)
    if g_total == 0:
        return None, None, None
    return _hota_from_counts(tp, assoc_sum, g_total, p_total)


def evaluate_sequences(pairs: list[tuple[str, SequenceData, SequenceData]]) -> list[EvalReport]:
    """Per-sequence reports plus a COMBINED row pooling counts before ratios."""
    reports = []
    tp_pool = np.zeros(len(HOTA_ALPHAS), dtype=np.int64)
    assoc_pool = np.zeros(len(HOTA_ALPHAS))
    g_pool = p_pool = 0
    idtp_pool = 0
    fp_pool = fn_pool = idsw_pool = gt_pool = 0
    for name, gt, pred in pairs:
        clear = compute_clearmot(gt, pred)
        idtp, g_total, p_total = _idf1_counts(gt, pred, CLEAR_IOU_THRESHOLD)
        idf1 = None if g_total == 0 else (2.0 * idtp / (g_total + p_total) if g_total + p_total else None)
        tp, assoc_sum, hg, hp = _hota_counts(gt, pred)
        if hg == 0:
            hota = deta = assa = None
        else:
            hota, deta, assa = _hota_from_counts(tp, assoc_sum, hg, hp)
        reports.append(EvalReport(name=name, hota=hota, deta=deta, assa=assa,
                                  mota=clear["mota"], idf1=idf1, idsw=clear["idsw"],
                                  fp=clear["fp"], fn=clear["fn"], gt=clear["gt"]))
        tp_pool += tp
        assoc_pool += assoc_sum
        g_pool += hg
        p_pool += hp
        idtp_pool += idtp
        fp_pool += clear["fp"]
        fn_pool += clear["fn"]
        idsw_pool += clear["idsw"]
        gt_pool += clear["gt"]
    if g_pool == 0:
        hota = deta = assa = mota = idf1 = None
    else:
        hota, deta, assa = _hota_from_counts(tp_pool, assoc_pool, g_pool, p_pool)
        mota = 1.0 - (fn_pool + fp_pool + idsw_pool) / gt_pool
        idf1 = 2.0 * idtp_pool / (g_pool + p_pool)
    reports.append(EvalReport(name="COMBINED", hota=hota, deta=deta, assa=assa,
                              mota=mota, idf1=idf1, idsw=idsw_pool, fp=fp_pool,
                              fn=fn_pool, gt=gt_pool))
    return reports


def write_report_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(EvalReport.CSV_FIELDS) + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")
