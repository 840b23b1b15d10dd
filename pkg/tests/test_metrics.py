"""Metric oracles: hand-built micro-cases and exhaustive brute-force checks."""

import itertools

import numpy as np
import pytest

from tdlp.metrics import (
    HOTA_ALPHAS,
    compute_clearmot,
    compute_hota,
    compute_idf1,
    evaluate_sequences,
    frame_match,
    write_report_csv,
)
from tdlp.mot_io import DetectionRecord, SequenceData


def seq_from(spec_rows) -> SequenceData:
    """spec_rows: {frame: [(id, x, y, w, h), ...]}"""
    frames = {}
    for f, rows in sorted(spec_rows.items()):
        frames[f] = [
            DetectionRecord(f, i, float(x), float(y), float(w), float(h), 1.0)
            for (i, x, y, w, h) in rows
        ]
    return SequenceData(name="t", frames=frames)


def boxes_iou(a, b):
    ax1, ay1, ax2, ay2 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx1, by1, bx2, by2 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def brute_match(iou, thr):
    """Exhaustive matching: max cardinality, max IoU sum, lexicographic."""
    n, m = iou.shape
    best = None

    def rec(i, used, pairs, total):
        nonlocal best
        if i == n:
            key = (-len(pairs), -total, pairs)
            if best is None or key < best:
                best = key
            return
        rec(i + 1, used, pairs, total)
        for j in range(m):
            if j not in used and iou[i, j] >= thr:
                rec(i + 1, used | {j}, pairs + [(i, j)], total + iou[i, j])

    rec(0, frozenset(), [], 0.0)
    return best[2]


def frames_of(seq):
    out = {}
    for f in seq.frame_ids():
        out[f] = [(r.id, np.array([r.x, r.y, r.w, r.h])) for r in seq.frames[f]]
    return out


def oracle_clear(gt, pred, thr=0.5):
    gtv, pdv = frames_of(gt), frames_of(pred)
    fp = fn = idsw = total = 0
    last = {}
    for f in sorted(set(gtv) | set(pdv)):
        g = gtv.get(f, [])
        p = pdv.get(f, [])
        total += len(g)
        iou = np.array([[boxes_iou(gb, pb) for _, pb in p] for _, gb in g]).reshape(len(g), len(p))
        pairs = brute_match(iou, thr) if g and p else []
        fn += len(g) - len(pairs)
        fp += len(p) - len(pairs)
        for gi, pj in pairs:
            gid, pid = g[gi][0], p[pj][0]
            if gid in last and last[gid] != pid:
                idsw += 1
            last[gid] = pid
    mota = None if total == 0 else 1 - (fn + fp + idsw) / total
    return mota, idsw, fp, fn, total


def oracle_idf1(gt, pred, thr=0.5):
    gtv, pdv = frames_of(gt), frames_of(pred)
    g_ids = sorted({i for rows in gtv.values() for i, _ in rows})
    p_ids = sorted({i for rows in pdv.values() for i, _ in rows})
    overlap = {}
    g_total = sum(len(v) for v in gtv.values())
    p_total = sum(len(v) for v in pdv.values())
    for f in set(gtv) & set(pdv):
        for gid, gb in gtv[f]:
            for pid, pb in pdv[f]:
                if boxes_iou(gb, pb) >= thr:
                    overlap[(gid, pid)] = overlap.get((gid, pid), 0) + 1
    best = 0
    # exhaustive one-to-one identity mappings (gt ids to pred ids or none)
    for perm in itertools.permutations(list(p_ids) + [None] * len(g_ids), len(g_ids)):
        if any(p is not None and perm.count(p) > 1 for p in perm):
            continue
        best = max(best, sum(overlap.get((g, p), 0) for g, p in zip(g_ids, perm)))
    if g_total == 0:
        return None
    return 2 * best / (g_total + p_total)


def oracle_hota(gt, pred):
    gtv, pdv = frames_of(gt), frames_of(pred)
    g_total = sum(len(v) for v in gtv.values())
    p_total = sum(len(v) for v in pdv.values())
    gt_count, pred_count = {}, {}
    for rows in gtv.values():
        for i, _ in rows:
            gt_count[i] = gt_count.get(i, 0) + 1
    for rows in pdv.values():
        for i, _ in rows:
            pred_count[i] = pred_count.get(i, 0) + 1
    hotas, detas, assas = [], [], []
    for alpha in HOTA_ALPHAS:
        tp_pairs = []
        for f in sorted(set(gtv) & set(pdv)):
            g, p = gtv[f], pdv[f]
            iou = np.array([[boxes_iou(gb, pb) for _, pb in p] for _, gb in g]).reshape(len(g), len(p))
            for gi, pj in brute_match(iou, alpha):
                tp_pairs.append((g[gi][0], p[pj][0]))
        tp = len(tp_pairs)
        counts = {}
        for key in tp_pairs:
            counts[key] = counts.get(key, 0) + 1
        assoc = sum(
            counts[(g, p)] / (gt_count[g] + pred_count[p] - counts[(g, p)])
            for (g, p) in tp_pairs
        )
        deta = tp / (g_total + p_total - tp) if (g_total + p_total - tp) else 0.0
        assa = assoc / tp if tp else 0.0
        detas.append(deta)
        assas.append(assa)
        hotas.append(np.sqrt(deta * assa))
    if g_total == 0:
        return None, None, None
    return float(np.mean(hotas)), float(np.mean(detas)), float(np.mean(assas))


# -- micro-cases --------------------------------------------------------------


def two_object_world(n_frames=5):
    return {
        f: [(1, 0, 0, 10, 10), (2, 100, 100, 10, 10)] for f in range(1, n_frames + 1)
    }


def test_perfect_tracking_all_ones():
    gt = seq_from(two_object_world())
    pred = seq_from(two_object_world())
    clear = compute_clearmot(gt, pred)
    assert clear["mota"] == 1.0 and clear["idsw"] == 0
    assert compute_idf1(gt, pred) == 1.0
    hota, deta, assa = compute_hota(gt, pred)
    assert hota == deta == assa == 1.0


def test_mota_hand_case_point_seven():
    gt_rows = two_object_world(5)  # 10 gt boxes
    pred_rows = {}
    for f in range(1, 6):
        rows = []
        if f <= 4:  # object 1 matched frames 1-4, missed at 5 -> FN = 1
            rows.append((1, 0, 0, 10, 10))
        # object 2: id 2 for frames 1-2, id 3 afterwards -> exactly 1 switch
        rows.append((2 if f <= 2 else 3, 100, 100, 10, 10))
        pred_rows[f] = rows
    pred_rows[1] = pred_rows[1] + [(9, 500, 500, 10, 10)]  # one FP
    clear = compute_clearmot(seq_from(gt_rows), seq_from(pred_rows))
    assert clear["fn"] == 1 and clear["fp"] == 1 and clear["idsw"] == 1
    assert clear["mota"] == pytest.approx(0.7, abs=1e-9)
    mota_o, idsw_o, fp_o, fn_o, _ = oracle_clear(seq_from(gt_rows), seq_from(pred_rows))
    assert clear["mota"] == pytest.approx(mota_o, abs=1e-12)


def test_idf1_split_identity_half():
    gt_rows = {f: [(1, 0, 0, 10, 10)] for f in range(1, 11)}
    pred_rows = {f: [(1 if f <= 5 else 2, 0, 0, 10, 10)] for f in range(1, 11)}
    idf1 = compute_idf1(seq_from(gt_rows), seq_from(pred_rows))
    assert idf1 == pytest.approx(0.5, abs=1e-9)
    assert idf1 == pytest.approx(oracle_idf1(seq_from(gt_rows), seq_from(pred_rows)), abs=1e-12)


def test_idf1_no_predictions_zero():
    gt_rows = {f: [(1, 0, 0, 10, 10)] for f in range(1, 6)}
    assert compute_idf1(seq_from(gt_rows), seq_from({})) == 0.0


def test_mota_empty_predictions_zero():
    gt_rows = {f: [(1, 0, 0, 10, 10)] for f in range(1, 6)}
    clear = compute_clearmot(seq_from(gt_rows), seq_from({}))
    assert clear["mota"] == 0.0 and clear["fn"] == 5


def test_mota_zero_gt_is_none():
    pred_rows = {1: [(1, 0, 0, 10, 10)]}
    clear = compute_clearmot(seq_from({}), seq_from(pred_rows))
    assert clear["mota"] is None


def test_hota_two_object_swap():
    # perfect boxes, ids swap halfway: DetA = 1, AssA = 1/3 at every alpha
    gt_rows = two_object_world(10)
    pred_rows = {}
    for f in range(1, 11):
        a, b = (1, 2) if f <= 5 else (2, 1)
        pred_rows[f] = [(a, 0, 0, 10, 10), (b, 100, 100, 10, 10)]
    gt, pred = seq_from(gt_rows), seq_from(pred_rows)
    hota, deta, assa = compute_hota(gt, pred)
    o_hota, o_deta, o_assa = oracle_hota(gt, pred)
    assert deta == pytest.approx(o_deta, abs=1e-9)
    assert assa == pytest.approx(o_assa, abs=1e-9)
    assert hota == pytest.approx(o_hota, abs=1e-9)
    assert deta == pytest.approx(1.0, abs=1e-12)
    assert assa == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert hota == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-12)


def test_hota_no_predictions_zero():
    gt_rows = {f: [(1, 0, 0, 10, 10)] for f in range(1, 6)}
    hota, deta, assa = compute_hota(seq_from(gt_rows), seq_from({}))
    assert hota == 0.0 and deta == 0.0 and assa == 0.0


def test_frame_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        g = rng.uniform(0, 50, size=(3, 4)) + [0, 0, 10, 10]
        p = rng.uniform(0, 50, size=(3, 4)) + [0, 0, 10, 10]
        pairs, iou = frame_match(g, p, 0.1)
        want = brute_match(iou, 0.1)
        assert pairs == want


def test_frame_match_trivial_cases():
    boxes = np.array([[0, 0, 10, 10], [50, 50, 10, 10]], dtype=float)
    pairs, _ = frame_match(boxes, boxes.copy(), 0.5)
    assert pairs == [(0, 0), (1, 1)]
    far = boxes + 1000.0
    pairs, _ = frame_match(boxes, far, 0.5)
    assert pairs == []


# -- randomized oracle + invariance checks ------------------------------------


def random_tracking_case(rng):
    n_obj = int(rng.integers(1, 4))
    n_frames = int(rng.integers(2, 11))
    gt_rows = {}
    pred_rows = {}
    pos = rng.uniform(0, 80, size=(n_obj, 2))
    vel = rng.uniform(-3, 3, size=(n_obj, 2))
    for f in range(1, n_frames + 1):
        g_list = []
        p_list = []
        for k in range(n_obj):
            x, y = pos[k] + f * vel[k]
            g_list.append((k + 1, x, y, 12, 12))
            if rng.random() < 0.85:  # occasional miss
                nx = x + rng.normal(0, 2)
                ny = y + rng.normal(0, 2)
                pid = k + 1 if rng.random() < 0.8 else int(rng.integers(1, 6))
                p_list.append((pid, nx, ny, 12, 12))
        if rng.random() < 0.2:  # occasional false positive
            p_list.append((int(rng.integers(6, 9)), rng.uniform(0, 100), rng.uniform(0, 100), 12, 12))
        gt_rows[f] = g_list
        pred_rows[f] = p_list
    return seq_from(gt_rows), seq_from(pred_rows)


@pytest.mark.parametrize("seed", range(12))
def test_metrics_match_brute_force_on_tiny_sequences(seed):
    rng = np.random.default_rng(seed)
    gt, pred = random_tracking_case(rng)
    clear = compute_clearmot(gt, pred)
    mota_o, idsw_o, fp_o, fn_o, gt_o = oracle_clear(gt, pred)
    assert clear["idsw"] == idsw_o and clear["fp"] == fp_o and clear["fn"] == fn_o
    if mota_o is None:
        assert clear["mota"] is None
    else:
        assert clear["mota"] == pytest.approx(mota_o, abs=1e-9)
    idf1 = compute_idf1(gt, pred)
    assert idf1 == pytest.approx(oracle_idf1(gt, pred), abs=1e-9)
    hota, deta, assa = compute_hota(gt, pred)
    o_hota, o_deta, o_assa = oracle_hota(gt, pred)
    assert hota == pytest.approx(o_hota, abs=1e-9)
    assert deta == pytest.approx(o_deta, abs=1e-9)
    assert assa == pytest.approx(o_assa, abs=1e-9)


def relabel(seq, mapping):
    frames = {}
    for f in seq.frame_ids():
        frames[f] = [
            DetectionRecord(f, mapping[r.id], r.x, r.y, r.w, r.h, r.conf)
            for r in seq.frames[f]
        ]
    return SequenceData(name=seq.name, frames=frames)


def test_metrics_invariant_under_prediction_relabeling():
    rng = np.random.default_rng(99)
    for _ in range(50):
        gt, pred = random_tracking_case(rng)
        ids = sorted({r.id for r in pred.all_records()})
        new_ids = (np.array(ids) * 0).tolist()
        shuffled = rng.permutation(len(ids)) + 1000
        mapping = {i: int(s) for i, s in zip(ids, shuffled)}
        pred2 = relabel(pred, mapping)
        assert compute_idf1(gt, pred) == pytest.approx(compute_idf1(gt, pred2), abs=1e-12)
        h1 = compute_hota(gt, pred)
        h2 = compute_hota(gt, pred2)
        for a, b in zip(h1, h2):
            assert a == pytest.approx(b, abs=1e-12)
        c1 = compute_clearmot(gt, pred)
        c2 = compute_clearmot(gt, pred2)
        assert c1 == c2


def test_hota_upper_bound_sqrt_deta():
    rng = np.random.default_rng(5)
    for _ in range(10):
        gt, pred = random_tracking_case(rng)
        hota, deta, assa = compute_hota(gt, pred)
        assert hota <= np.sqrt(deta) + 1e-12


def test_evaluate_sequences_pools_counts(tmp_path):
    gt1, pred1 = seq_from(two_object_world(4)), seq_from(two_object_world(4))
    gt_rows = {f: [(1, 0, 0, 10, 10)] for f in range(1, 5)}
    gt2, pred2 = seq_from(gt_rows), seq_from({})
    reports = evaluate_sequences([("a", gt1, pred1), ("b", gt2, pred2)])
    assert [r.name for r in reports] == ["a", "b", "COMBINED"]
    comb = reports[-1]
    assert comb.gt == 12 and comb.fn == 4
    assert comb.mota == pytest.approx(1 - 4 / 12)
    # pooled IDF1: IDTP=8 of 12 gt + 8 pred boxes
    assert comb.idf1 == pytest.approx(2 * 8 / (12 + 8))
    out = tmp_path / "report.csv"
    write_report_csv(reports, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("name,hota,deta,assa,mota,idf1")
    assert len(lines) == 4
