import itertools
import math

import numpy as np
import pytest

from pemprobe.matching import (
    COST_SENTINEL, build_correspondences, greedy_match, hungarian, pair_cost_matrix,
)
from pemprobe.types import BoxSet

from conftest import make_box, make_object


# ---------------------------------------------------------------------------
# greedy matching
# ---------------------------------------------------------------------------

def test_greedy_single_pair_in_range():
    dets = BoxSet.from_boxes([make_box(x=10.5)])
    gts = [make_object(x=10.0)]
    assert list(greedy_match(dets, gts, 2.0)) == [0]


def test_greedy_out_of_range():
    dets = BoxSet.from_boxes([make_box(x=13.0)])
    gts = [make_object(x=10.0)]
    assert list(greedy_match(dets, gts, 2.0)) == [-1]


def test_greedy_score_priority_cascades():
    # both detections nearest to A; the higher-scored one claims it, the other
    # falls through to B which is still within range
    gt_a = make_object(x=10.0, track_id="a")
    gt_b = make_object(x=11.5, track_id="b")
    det_hi = make_box(x=10.1, scores=(0.9, 0.0, 0.0))
    det_lo = make_box(x=10.2, scores=(0.8, 0.0, 0.0))
    dets = BoxSet.from_boxes([det_lo, det_hi])
    result = greedy_match(dets, [gt_a, gt_b], 2.0)
    assert list(result) == [1, 0]


def test_greedy_category_aware():
    dets = BoxSet.from_boxes([make_box(x=10.0, scores=(0.1, 0.9, 0.0))])
    gts = [make_object(x=10.0, category=0)]
    assert list(greedy_match(dets, gts, 2.0)) == [-1]


def greedy_oracle(det_xy, det_scores, det_cat, gt_xy, gt_cat, threshold):
    """Independent plain-python greedy simulation."""
    order = sorted(range(len(det_xy)), key=lambda i: (-det_scores[i], i))
    taken = set()
    result = [-1] * len(gt_xy)
    for i in order:
        best, best_d = None, None
        for g in range(len(gt_xy)):
            if g in taken or gt_cat[g] != det_cat[i]:
                continue
            d = math.hypot(gt_xy[g][0] - det_xy[i][0], gt_xy[g][1] - det_xy[i][1])
            if d <= threshold and (best_d is None or d < best_d):
                best, best_d = g, d
    # claim
        if best is not None:
            taken.add(best)
            result[best] = i
    return result


def test_greedy_against_simulation_oracle(rng):
    for _ in range(200):
        n_gt = rng.integers(0, 7)
        n_det = rng.integers(0, 7)
        gts = [make_object(x=rng.uniform(0, 12), y=rng.uniform(-4, 4),
                           category=int(rng.integers(0, 2)), track_id=f"g{k}")
               for k in range(n_gt)]
        boxes = []
        for k in range(n_det):
            cat = int(rng.integers(0, 2))
            scores = np.full(3, 0.01)
            scores[cat] = rng.uniform(0.2, 1.0)
            boxes.append(make_box(x=rng.uniform(0, 12), y=rng.uniform(-4, 4),
                                  scores=tuple(scores)))
        dets = BoxSet.from_boxes(boxes, n_categories=3)
        got = list(greedy_match(dets, gts, 2.0))
        expected = greedy_oracle(
            [tuple(p[:2]) for p in dets.positions], list(dets.max_scores()),
            list(dets.categories()), [tuple(o.position[:2]) for o in gts],
            [o.category for o in gts], 2.0)
        assert got == expected


def test_greedy_order_invariance_with_distinct_scores(rng):
    gts = [make_object(x=float(x), track_id=f"g{x}") for x in (5, 8, 11)]
    boxes = [make_box(x=5.3, scores=(0.9, 0, 0)), make_box(x=8.2, scores=(0.7, 0, 0)),
             make_box(x=10.6, scores=(0.5, 0, 0))]
    dets = BoxSet.from_boxes(boxes)
    base = greedy_match(dets, gts, 2.0)
    perm = [2, 0, 1]
    shuffled = BoxSet.from_boxes([boxes[i] for i in perm])
    got = greedy_match(shuffled, gts, 2.0)
    # map shuffled detection indices back to the original labels
    remapped = [perm[j] if j >= 0 else -1 for j in got]
    assert remapped == list(base)


# ---------------------------------------------------------------------------
# Hungarian
# ---------------------------------------------------------------------------

def test_hungarian_diagonal():
    cost = np.full((3, 3), 5.0)
    np.fill_diagonal(cost, 1.0)
    assert hungarian(cost) == [(0, 0), (1, 1), (2, 2)]


def test_hungarian_single_cell():
    assert hungarian(np.array([[3.0]])) == [(0, 0)]


def test_hungarian_rejects_nonfinite():
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf, 1.0], [1.0, 2.0]]))


def brute_force_min_cost(cost):
    n, m = cost.shape
    k = min(n, m)
    best = math.inf
    if n <= m:
        for cols in itertools.permutations(range(m), k):
            best = min(best, sum(cost[i, c] for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), k):
            best = min(best, sum(cost[r, j] for j, r in enumerate(rows)))
    return best


def test_hungarian_against_enumeration_oracle(rng):
    for _ in range(300):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        cost = rng.uniform(0, 10, size=(n, m))
        pairs = hungarian(cost)
        assert len(pairs) == min(n, m)
        total = sum(cost[i, j] for i, j in pairs)
        assert total == pytest.approx(brute_force_min_cost(cost), abs=1e-9)


def test_hungarian_beats_random_assignments(rng):
    for _ in range(20):
        n = int(rng.integers(2, 7))
        cost = rng.uniform(0, 10, size=(n, n))
        opt = sum(cost[i, j] for i, j in hungarian(cost))
        for _ in range(100):
            perm = rng.permutation(n)
            assert opt <= sum(cost[i, perm[i]] for i in range(n)) + 1e-12


def test_hungarian_tie_break_prefers_low_rank():
    cost = np.zeros((2, 2))
    assert hungarian(cost) == [(0, 0), (1, 1)]


# ---------------------------------------------------------------------------
# build_correspondences
# ---------------------------------------------------------------------------

def _proxy_for(dets, n_hyp, n_categories=3):
    """Proxy outputs colocated with detections for easy reasoning in tests."""
    reg = np.zeros((n_hyp, 10))
    scores = np.full((n_hyp, n_categories), 0.1)
    det_reg = dets.reg_vectors()
    for i in range(min(n_hyp, len(dets))):
        reg[i] = det_reg[i]
        scores[i] = np.clip(dets.scores[i], 0.05, 0.95)
    return reg, scores


def test_all_matched_leaves_fp_queries_unmatched():
    dets = BoxSet.from_boxes([make_box(x=10.0), make_box(x=20.0)])
    greedy = np.array([0, 1])
    reg, scores = _proxy_for(dets, 4)
    corr = build_correspondences(greedy, 2, 2, dets, reg, scores)
    assert corr.pairs == [(0, 0), (1, 1)]
    assert corr.unmatched_hypotheses == [2, 3]
    assert corr.unmatched_detections == []


def test_zero_detections_all_hypotheses_unmatched():
    dets = BoxSet.empty(3)
    corr = build_correspondences(np.array([-1, -1]), 2, 2, dets)
    assert corr.pairs == []
    assert corr.unmatched_hypotheses == [0, 1, 2, 3]


def test_duplicate_detection_lands_on_fp_query():
    # one object, two detections: the greedy match takes the high-score one,
    # the duplicate must be assigned to an fp query by the Hungarian stage
    primary = make_box(x=10.0, scores=(0.9, 0.01, 0.01))
    duplicate = make_box(x=11.0, scores=(0.5, 0.01, 0.01))
    dets = BoxSet.from_boxes([primary, duplicate])
    greedy = np.array([0])
    n_gt, n_fp = 1, 2
    reg = np.zeros((3, 10))
    scores = np.full((3, 3), 0.1)
    reg[0] = dets.reg_vectors()[0]
    reg[1] = dets.reg_vectors()[1]  # fp query 1 sits on the duplicate
    reg[2] = 50.0
    corr = build_correspondences(greedy, n_gt, n_fp, dets, reg, scores)
    assert (1, 1) in corr.pairs
    assert corr.unmatched_hypotheses == [2]

    # cross-check the Hungarian stage against brute force on the same cost
    cost = pair_cost_matrix(reg[[1, 2]], scores[[1, 2]],
                            dets.reg_vectors()[[1]], dets.scores[[1]])
    best = min(((a,) for a in range(2)), key=lambda rows: cost[rows[0], 0])
    assert best[0] == 0


def test_correspondences_are_bijective(rng):
    for _ in range(50):
        n_gt = int(rng.integers(0, 5))
        n_fp = int(rng.integers(0, 4))
        n_det = int(rng.integers(0, 6))
        boxes = [make_box(x=rng.uniform(0, 30), y=rng.uniform(-5, 5),
                          scores=tuple(np.clip(rng.uniform(0, 1, 3), 0.01, 0.99)))
                 for _ in range(n_det)]
        dets = BoxSet.from_boxes(boxes, n_categories=3)
        greedy = np.full(n_gt, -1)
        available = list(range(n_det))
        for g in range(n_gt):
            if available and rng.random() < 0.5:
                greedy[g] = available.pop(0)
        reg = rng.normal(size=(n_gt + n_fp, 10))
        scores = rng.uniform(0.05, 0.95, size=(n_gt + n_fp, 3))
        corr = build_correspondences(greedy, n_gt, n_fp, dets, reg, scores)
        corr.validate(n_gt + n_fp, n_det)  # raises on any duplicate index
