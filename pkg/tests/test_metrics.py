
import numpy as np
import pytest

from cystseg.errors import EmptyDatasetError, MetricError, NoGroundTruthError, NoPredictionsError, ValidationError
from cystseg.metrics import (
    AP_THRESHOLDS,
    CURVE_THRESHOLDS,
    Counts,
    ImageMatch,
    InstanceMatch,
    MatchTally,
    afnr,
    aji,
    aji_parts,
    appv,
    average_precision,
    fnr_at,
    iou,
    match_image,
    ppv_at,
    precision_at,
    tally,
)


def tally_of(tp, fp, fn, thresholds=CURVE_THRESHOLDS):
    return MatchTally({round(t, 6): Counts(tp, fp, fn) for t in thresholds})


def brute_matches(pred, gt):
    """Reference matcher: every prediction's max-IoU partner, claimed in descending IoU order."""
    preds = [int(v) for v in np.unique(pred) if v]
    gts = [int(v) for v in np.unique(gt) if v]
    best = []
    for p in preds:
        scores = []
        for g in gts:
            inter = int(np.sum((pred == p) & (gt == g)))
            union = int(np.sum((pred == p) | (gt == g)))
            scores.append((inter / union, -g, inter, union))
        if scores and max(scores)[0] > 0:
            top = max(scores)
            best.append((top[0], -p, -top[1], top[2], top[3]))
    best.sort(reverse=True)
    claimed = {}
    for _, neg_p, g, inter, union in best:
        if g not in claimed:
            claimed[g] = (-neg_p, inter, union)
    return {p: (g, inter, union) for g, (p, inter, union) in claimed.items()}


def test_iou_examples():
    a = np.zeros(300, dtype=bool)
    b = np.zeros(300, dtype=bool)
    a[:100] = True
    b[50:150] = True
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    with pytest.raises(ValidationError):
        iou(np.zeros(3, dtype=bool), np.zeros(3, dtype=bool))


def test_exact_threshold_comparison():
    match = InstanceMatch(1, 1, intersection=7, union=10)
    assert match.meets(0.7)
    assert not match.meets(0.75)
    assert InstanceMatch(1, 1, 10, 10).meets(1.0)
    assert not InstanceMatch(1, None).meets(0.5)


def test_match_identical_maps(discs):
    gt = discs((60, 60), [(15, 15), (15, 45), (45, 30)], 8)
    result = match_image(gt, gt)
    assert [m.iou for m in result.matches] == [1.0, 1.0, 1.0]
    assert result.unmatched_gt == []


def test_match_empty_prediction():
    gt = np.zeros((10, 10), dtype=np.int32)
    gt[1:3, 1:3] = 1
    gt[5:8, 5:8] = 2
    result = match_image(np.zeros_like(gt), gt)
    assert result.matches == [] and result.unmatched_gt == [1, 2]


def test_one_to_one_keeps_best_prediction():
    gt = np.zeros((1, 20), dtype=np.int32)
    gt[0, :10] = 1
    pred = np.zeros_like(gt)
    pred[0, :6] = 1  # iou 0.6
    pred[0, 6:9] = 2  # iou 0.3
    result = match_image(pred, gt)
    by_label = {m.pred_label: m for m in result.matches}
    assert by_label[1].gt_label == 1 and by_label[1].iou == pytest.approx(0.6)
    assert by_label[2].gt_label is None


def test_tally_examples(discs):
    gt = discs((80, 80), [(12, 12), (12, 40), (12, 68), (50, 20), (50, 60)], 7)
    t = tally([match_image(gt, gt)])
    for tau in CURVE_THRESHOLDS:
        assert t.at(tau) == Counts(5, 0, 0)

    single = ImageMatch([InstanceMatch(1, 1, 72, 100)], [], 1, 1)
    t = tally([single])
    assert t.at(0.70) == Counts(1, 0, 0)
    assert t.at(0.75) == Counts(0, 1, 1)

    a = tally([ImageMatch([InstanceMatch(i, i, 1, 1) for i in range(1, 4)], [], 3, 3)])
    b = tally([ImageMatch([InstanceMatch(i, i, 1, 1) for i in range(1, 5)], [], 4, 4)])
    assert (a + b).at(0.5).tp == 7


def test_tally_rejects_thresholds():
    with pytest.raises(ValidationError):
        tally([], [0.0])
    with pytest.raises(MetricError):
        tally([], [0.5]).at(0.55)


def test_ratio_examples():
    assert precision_at(tally_of(8, 1, 1), 0.5) == pytest.approx(0.8)
    assert precision_at(tally_of(0, 2, 3), 0.5) == 0.0
    assert ppv_at(tally_of(8, 2, 0), 0.5) == pytest.approx(0.8)
    assert fnr_at(tally_of(8, 0, 2), 0.5) == pytest.approx(0.2)
    assert ppv_at(tally_of(0, 3, 3), 0.5) == 0.0
    assert fnr_at(tally_of(0, 3, 3), 0.5) == 1.0


def test_undefined_ratios_are_distinguished():
    with pytest.raises(EmptyDatasetError):
        precision_at(tally_of(0, 0, 0), 0.5)
    with pytest.raises(NoPredictionsError):
        ppv_at(tally_of(0, 0, 4), 0.5)
    with pytest.raises(NoGroundTruthError):
        fnr_at(tally_of(0, 4, 0), 0.5)


def test_average_precision_examples():
    assert average_precision(tally_of(5, 0, 0)) == 1.0
    assert appv(tally_of(5, 0, 0)) == 1.0
    assert afnr(tally_of(5, 0, 0)) == 0.0
    t = tally([ImageMatch([InstanceMatch(1, 1, 7, 10)], [], 1, 1)])
    assert average_precision(t) == pytest.approx(0.5)
    assert average_precision(tally_of(0, 0, 4)) == 0.0
    with pytest.raises(MetricError):
        average_precision(tally_of(1, 0, 0, AP_THRESHOLDS[:5]))


def test_precision_never_exceeds_ppv():
    rng = np.random.default_rng(0)
    for tp, fp, fn in rng.integers(0, 20, size=(200, 3)):
        if tp + fp == 0:
            continue
        t = tally_of(int(tp), int(fp), int(fn))
        assert 0.0 <= precision_at(t, 0.5) <= ppv_at(t, 0.5) <= 1.0


def test_aji_examples(discs):
    gt = discs((40, 40), [(10, 10), (28, 28)], 6)
    assert aji(gt, gt) == 1.0
    assert aji(np.zeros_like(gt), gt) == 0.0
    g = np.zeros((1, 200), dtype=np.int32)
    p = np.zeros_like(g)
    g[0, :100] = 1
    p[0, 50:150] = 1
    assert aji(p, g) == pytest.approx(1 / 3)
    with pytest.raises(EmptyDatasetError):
        aji(np.zeros((3, 3), dtype=np.int32), np.zeros((3, 3), dtype=np.int32))


def test_aji_counts_unused_predictions():
    g = np.zeros((1, 30), dtype=np.int32)
    p = np.zeros_like(g)
    g[0, :10] = 1
    p[0, :10] = 1
    p[0, 20:25] = 2
    parts = aji_parts(p, g)
    assert (parts.intersection, parts.union) == (10, 15)


def shifted_discs(discs, shift):
    gt = discs((120, 120), [(30, 30), (30, 90), (90, 60)], 20)
    pred = np.roll(gt, shift, axis=1)
    return pred, gt


def test_shifted_predictions_against_brute_force(discs):
    pred, gt = shifted_discs(discs, 3)
    result = match_image(pred, gt)
    expected = brute_matches(pred, gt)
    got = {m.pred_label: (m.gt_label, m.intersection, m.union) for m in result.matches if m.gt_label is not None}
    assert got == expected
    t = tally([result])
    ap = average_precision(t)
    brute_ap = np.mean(
        [sum(1 for _, i, u in expected.values() if i / u >= tau - 1e-12) / (2 * 3 - sum(1 for _, i, u in expected.values() if i / u >= tau - 1e-12)) for tau in AP_THRESHOLDS]
    )
    assert 0.0 < ap < 1.0
    assert ap == pytest.approx(brute_ap, abs=1e-12)


def test_random_maps_against_brute_force():
    rng = np.random.default_rng(17)
    for _ in range(100):
        pred = rng.integers(0, 4, size=(6, 7)).astype(np.int32)
        gt = rng.integers(0, 4, size=(6, 7)).astype(np.int32)
        result = match_image(pred, gt)
        got = {m.pred_label: (m.gt_label, m.intersection, m.union) for m in result.matches if m.gt_label is not None}
        assert got == brute_matches(pred, gt)
        matched = {m.gt_label for m in result.matches if m.gt_label is not None}
        assert len(matched) == len(got)
        for tau in CURVE_THRESHOLDS:
            c = tally([result], [tau]).at(tau)
            assert c.tp + c.fn == result.n_gt
            assert c.tp + c.fp == result.n_pred


def brute_aji(pred, gt):
    preds = [int(v) for v in np.unique(pred) if v]
    used = set()
    inter_sum = union_sum = 0
    for g in (int(v) for v in np.unique(gt) if v):
        gm = gt == g
        best = None
        for p in preds:
            if p in used:
                continue
            pm = pred == p
            inter = int(np.sum(pm & gm))
            if inter == 0:
                continue
            union = int(np.sum(pm | gm))
            if best is None or inter / union > best[0]:
                best = (inter / union, p, inter, union)
        if best is None:
            union_sum += int(np.sum(gm))
        else:
            used.add(best[1])
            inter_sum += best[2]
            union_sum += best[3]
    union_sum += sum(int(np.sum(pred == p)) for p in preds if p not in used)
    return inter_sum / union_sum


def test_random_maps_aji_and_monotonicity():
    rng = np.random.default_rng(23)
    for _ in range(200):
        pred = rng.integers(0, 5, size=(7, 8)).astype(np.int32)
        gt = rng.integers(0, 5, size=(7, 8)).astype(np.int32)
        if not pred.any() or not gt.any():
            continue
        assert aji(pred, gt) == pytest.approx(brute_aji(pred, gt), abs=1e-12)
        t = tally([match_image(pred, gt)])
        precisions = [precision_at(t, tau) for tau in CURVE_THRESHOLDS]
        fnrs = [fnr_at(t, tau) for tau in CURVE_THRESHOLDS]
        assert all(a >= b for a, b in zip(precisions, precisions[1:]))
        assert all(a <= b for a, b in zip(fnrs, fnrs[1:]))


def rectangles(rng, size=48):
    gt = np.zeros((size, size), dtype=np.int32)
    pred = np.zeros_like(gt)
    n = int(rng.integers(2, 7))
    for label in range(1, n + 1):
        r, c = rng.integers(0, size - 10, 2)
        h, w = rng.integers(3, 11, 2)
        gt[r : r + h, c : c + w] = label
        dr, dc = rng.integers(-3, 4, 2)
        dh, dw = rng.integers(-1, 2, 2)
        r2, c2 = max(r + dr, 0), max(c + dc, 0)
        pred[r2 : r2 + h + dh, c2 : c2 + w + dw] = label
    return pred, gt


def has_iou_ties(pred, gt):
    values = []
    for p in (v for v in np.unique(pred) if v):
        for g in (v for v in np.unique(gt) if v):
            inter = int(np.sum((pred == p) & (gt == g)))
            if inter:
                values.append(inter / int(np.sum((pred == p) | (gt == g))))
    return len(values) != len(set(values))


def relabel(labels, rng):
    lut = np.concatenate([[0], rng.permutation(np.arange(1, labels.max() + 1))]).astype(np.int32)
    return lut[labels]


def test_metrics_ignore_label_permutation():
    rng = np.random.default_rng(29)
    checked = 0
    for _ in range(200):
        pred, gt = rectangles(rng)
        if has_iou_ties(pred, gt):
            continue
        checked += 1
        pred2, gt2 = relabel(pred, rng), relabel(gt, rng)
        before = tally([match_image(pred, gt)])
        after = tally([match_image(pred2, gt2)])
        for tau in CURVE_THRESHOLDS:
            assert before.at(tau) == after.at(tau)
        assert average_precision(before) == average_precision(after)
        assert aji(pred, gt) == pytest.approx(aji(pred2, gt2), abs=1e-12)
    assert checked >= 100
