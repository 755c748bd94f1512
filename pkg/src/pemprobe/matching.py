"""Correspondence construction between hypotheses and detector outputs.

Two stages mirror the training recipe: a score-greedy center-distance match of
detections to ground-truth objects (computed once per scene and cached with
the dataset), and an online Hungarian assignment of the leftover detections to
the leftover hypotheses under the reconstruction pair cost.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .types import BoxSet, GroundTruthObject

# Disallowed pairs in Hungarian cost matrices use this finite sentinel.
COST_SENTINEL = 1e6

# Center-distance gate for greedy ground-truth matching (nuScenes TP convention).
GREEDY_DIST_THRESHOLD = 2.0


@dataclass
class CorrespondenceSet:
    """Matched (hypothesis, detection) pairs plus both unmatched index sets."""

    pairs: list[tuple[int, int]]
    unmatched_hypotheses: list[int]
    unmatched_detections: list[int]

    def validate(self, n_hypotheses: int, n_detections: int) -> None:
        hyp = [i for i, _ in self.pairs]
        det = [j for _, j in self.pairs]
        if len(set(hyp)) != len(hyp) or len(set(det)) != len(det):
            raise ValueError("each index may appear at most once across pairs")
        if sorted(hyp + list(self.unmatched_hypotheses)) != list(range(n_hypotheses)):
            raise ValueError("pairs plus unmatched_hypotheses must cover all hypotheses")
        if sorted(det + list(self.unmatched_detections)) != list(range(n_detections)):
            raise ValueError("pairs plus unmatched_detections must cover all detections")


def greedy_match(detections: BoxSet, ground_truth: Sequence[GroundTruthObject],
                 dist_threshold: float = GREEDY_DIST_THRESHOLD) -> np.ndarray:
    """Score-greedy detection-to-ground-truth matching.

    Detections are visited in descending max-score order (ties by lower index);
    each claims the nearest unclaimed same-category object within the 2D
    center-distance threshold (distance ties by lower object index). Returns an
    array of length ``len(ground_truth)`` holding the claimed detection index,
    or -1 where the object went undetected.
    """
    if dist_threshold <= 0:
        raise ValueError("dist_threshold must be positive")
    n_gt = len(ground_truth)
    result = np.full(n_gt, -1, dtype=int)
    if len(detections) == 0 or n_gt == 0:
        return result
    gt_xy = np.stack([obj.position[:2] for obj in ground_truth])
    gt_cat = np.array([obj.category for obj in ground_truth])
    det_xy = detections.positions[:, :2]
    det_cat = detections.categories()
    order = np.lexsort((np.arange(len(detections)), -detections.max_scores()))
    claimed = np.zeros(n_gt, dtype=bool)
    for det_idx in order:
        dists = np.linalg.norm(gt_xy - det_xy[det_idx], axis=1)
        eligible = (~claimed) & (gt_cat == det_cat[det_idx]) & (dists <= dist_threshold)
        if not np.any(eligible):
            continue
        cand = np.flatnonzero(eligible)
        best = cand[np.argmin(dists[cand])]  # argmin is first-on-ties: lower index
        claimed[best] = True
        result[best] = det_idx
    return result


def hungarian(cost: np.ndarray, tie_break: str = "rank") -> list[tuple[int, int]]:
    """Minimum-total-cost assignment of ``min(n, m)`` pairs.

    Costs must be finite; mark disallowed pairs with COST_SENTINEL. The result
    is deterministic: with ``tie_break="rank"`` (default), cost ties between
    optimal assignments are broken toward lexicographically smaller (row, col)
    pairs via an infinitesimal rank-proportional bias; ``tie_break="solver"``
    skips the bias and relies on the solver's deterministic internal order
    (used in the training hot path where costs are continuous).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("costs must be finite; use COST_SENTINEL for disallowed pairs")
    if cost.size == 0:
        return []
    if tie_break == "rank":
        n, m = cost.shape
        scale = max(1.0, float(np.max(np.abs(cost))))
        ranks = np.arange(n)[:, None] * m + np.arange(m)[None, :]
        biased = cost + (1e-13 * scale) * ranks
    elif tie_break == "solver":
        biased = cost
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    rows, cols = linear_sum_assignment(biased)
    return sorted(zip(rows.tolist(), cols.tolist()))


def assignment_cost(cost: np.ndarray, pairs: Sequence[tuple[int, int]]) -> float:
    return float(sum(cost[i, j] for i, j in pairs))


def pair_cost_matrix(proxy_reg: np.ndarray, proxy_scores: np.ndarray,
                     det_reg: np.ndarray, det_scores: np.ndarray) -> np.ndarray:
    """Reconstruction pair cost: L1 over regression params plus per-category BCE.

    ``proxy_reg``/``det_reg`` are (N, 10) regression vectors, scores are (N, C)
    sigmoid confidences. Equal weighting of both terms, matching the loss.
    """
    l1 = np.abs(proxy_reg[:, None, :] - det_reg[None, :, :]).sum(axis=2)
    p = np.clip(proxy_scores, 1e-7, 1.0 - 1e-7)
    t = det_scores
    bce = -(t[None, :, :] * np.log(p[:, None, :])
            + (1.0 - t[None, :, :]) * np.log(1.0 - p[:, None, :])).sum(axis=2)
    return l1 + bce


def build_correspondences(gt_hypothesis_matches: np.ndarray,
                          n_gt_queries: int,
                          n_fp_queries: int,
                          detections: BoxSet,
                          proxy_reg: np.ndarray | None = None,
                          proxy_scores: np.ndarray | None = None,
                          tie_break: str = "rank") -> CorrespondenceSet:
    """Full hypothesis-detection correspondences for the reconstruction loss.

    Hypothesis ``i < n_gt_queries`` pairs with the detection greedy-matched to
    ground-truth object ``i`` (if any). The remaining detections go to the
    remaining hypotheses (false-positive queries plus unmatched ground-truth
    queries) via Hungarian over the pair cost computed from the current proxy
    outputs; leftover hypotheses form the unmatched set.
    """
    if len(gt_hypothesis_matches) != n_gt_queries:
        raise ValueError("greedy matches must cover exactly the ground-truth queries")
    n_hyp = n_gt_queries + n_fp_queries
    n_det = len(detections)

    pairs = [(i, int(j)) for i, j in enumerate(gt_hypothesis_matches) if j >= 0]
    matched_dets = {j for _, j in pairs}
    free_dets = [j for j in range(n_det) if j not in matched_dets]
    free_hyps = ([i for i in range(n_gt_queries) if gt_hypothesis_matches[i] < 0]
                 + list(range(n_gt_queries, n_hyp)))

    if free_dets and free_hyps:
        if proxy_reg is None or proxy_scores is None:
            raise ValueError("proxy outputs are required to assign leftover detections")
        det_reg = detections.reg_vectors()
        cost = pair_cost_matrix(np.asarray(proxy_reg)[free_hyps],
                                np.asarray(proxy_scores)[free_hyps],
                                det_reg[free_dets],
                                detections.scores[free_dets])
        for a, b in hungarian(cost, tie_break=tie_break):
            pairs.append((free_hyps[a], free_dets[b]))

    matched_hyps = {i for i, _ in pairs}
    matched_dets = {j for _, j in pairs}
    corr = CorrespondenceSet(
        pairs=sorted(pairs),
        unmatched_hypotheses=[i for i in range(n_hyp) if i not in matched_hyps],
        unmatched_detections=[j for j in range(n_det) if j not in matched_dets],
    )
    corr.validate(n_hyp, n_det)
    return corr
