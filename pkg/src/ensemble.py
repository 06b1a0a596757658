"""
Design-based ensemble learning by voting and averaging.

Selection is an expected majority vote over the shared cross-validation
splits. Mixing weights either minimise the estimated quadratic risk w' D w
on the simplex, or are the proportions of splits each learner wins.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from config import Config
from src.srb import check_same_splits, pairwise_risk, per_split_risk, per_split_sse, srb_predict

logger = logging.getLogger(__name__)


class EnsembleError(ValueError):
    """Represents an invalid ensemble input"""


class Provenance(str, Enum):
    OPTIMAL = 'OPTIMAL'
    ROBUST = 'ROBUST'
    HYPOTHETICAL = 'HYPOTHETICAL'


@dataclass(frozen=True)
class RiskMatrix:
    values: np.ndarray
    weight_mode: object = None
    names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        _check_square_symmetric(values)
        object.__setattr__(self, 'values', values)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)


@dataclass(frozen=True)
class MixWeights:
    w: np.ndarray
    provenance: Provenance
    names: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise EnsembleError('weights must be a nonempty vector')
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise EnsembleError(f'weights {w} are not on the simplex')
        object.__setattr__(self, 'w', w)


@dataclass(frozen=True)
class SelectorResult:
    selected: int
    proportions: np.ndarray
    names: tuple = field(default=())

    @property
    def selected_name(self) -> str:
        return self.names[self.selected] if self.names else str(self.selected)


def _check_square_symmetric(values: np.ndarray):
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise EnsembleError(f'risk matrix must be square, got shape {values.shape}')
    if not np.all(np.isfinite(values)):
        raise EnsembleError('risk matrix entries must be finite')
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    if not np.allclose(values, values.T, rtol=0.0, atol=1e-10 * scale):
        raise EnsembleError('risk matrix must be symmetric')


def _vote_shares(scores: np.ndarray) -> np.ndarray:
    """
    scores is K x T; on each split the minimisers share one vote equally.
    Returns the average vote per learner.
    """
    winners = scores == scores.min(axis=0, keepdims=True)
    votes = winners / winners.sum(axis=0, keepdims=True)
    return votes.mean(axis=1)


def _rings(runs, rings):
    if rings is None:
        return [srb_predict(run) for run in runs]
    if len(rings) != len(runs):
        raise EnsembleError('need one SRB predictor per run')
    return list(rings)


def risk_matrix(runs, rings=None) -> RiskMatrix:
    """Estimated pairwise risks D_kl for K runs sharing one split sequence."""
    check_same_splits(runs)
    rings = _rings(runs, rings)
    K = len(runs)
    values = np.empty((K, K))
    for k in range(K):
        for l in range(k, K):
            values[k, l] = values[l, k] = pairwise_risk(runs[k], runs[l], rings[k], rings[l])
    return RiskMatrix(values=values, weight_mode=runs[0].weight_mode,
                      names=tuple(run.name for run in runs))


def srb_select(runs) -> SelectorResult:
    """Expected majority vote of the least test-set SSE over the splits."""
    if not runs:
        raise EnsembleError('selection needs at least one run')
    check_same_splits(runs)
    sse = np.stack([per_split_sse(run) for run in runs])
    proportions = _vote_shares(sse)
    selected = int(np.argmax(proportions))
    logger.debug(f"Selected {runs[selected].name} with vote share {proportions[selected]:.3f}")
    return SelectorResult(selected=selected, proportions=proportions,
                          names=tuple(run.name for run in runs))


def robust_weights(runs, rings=None) -> MixWeights:
    """Proportion of splits on which each learner attains the least estimated risk."""
    if not runs:
        raise EnsembleError('robust weights need at least one run')
    check_same_splits(runs)
    rings = _rings(runs, rings)
    scores = np.stack([per_split_risk(run, ring) for run, ring in zip(runs, rings)])
    return MixWeights(w=_vote_shares(scores), provenance=Provenance.ROBUST,
                      names=tuple(run.name for run in runs))


def _solve_face(D: np.ndarray, face: tuple):
    """Stationary point of w' D w on the affine hull {w_F : sum w_F = 1}, or None."""
    m = len(face)
    D_F = D[np.ix_(face, face)]
    kkt = np.block([
        [2.0 * D_F, np.ones((m, 1))],
        [np.ones((1, m)), np.zeros((1, 1))],
    ])
    rhs = np.concatenate([np.zeros(m), [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    scale = max(1.0, float(np.abs(kkt).max()))
    if np.abs(kkt @ sol - rhs).max() > 1e-9 * scale:
        return None
    w_F = sol[:m]
    if np.any(w_F < -1e-12):
        return None
    w_F = np.clip(w_F, 0.0, None)
    return w_F / w_F.sum()


def minimise_on_simplex(D) -> np.ndarray:
    """
    Exact minimiser of w' D w over the simplex by enumerating all 2^K - 1 faces.

    D may be indefinite. Among candidates within rounding of the best objective
    the one with the largest support wins, then the earliest face.
    """
    D = np.asarray(D, dtype=float)
    _check_square_symmetric(D)
    K = D.shape[0]
    if K > Config.MAX_ENSEMBLE_SIZE:
        raise EnsembleError(f'face enumeration supports K <= {Config.MAX_ENSEMBLE_SIZE}, got {K}')

    candidates = []
    for size in range(1, K + 1):
        for face in itertools.combinations(range(K), size):
            w_F = _solve_face(D, face)
            if w_F is None:
                continue
            w = np.zeros(K)
            w[list(face)] = w_F
            candidates.append((float(w @ D @ w), w))

    best = min(obj for obj, _ in candidates)
    tol = 1e-12 * max(1.0, abs(best), float(np.abs(D).max()))
    tied = [w for obj, w in candidates if obj <= best + tol]
    return max(tied, key=lambda w: np.count_nonzero(w))


def optimal_weights(D_hat) -> MixWeights:
    """Mixing weights minimising the estimated quadratic risk on the simplex."""
    if isinstance(D_hat, RiskMatrix):
        values, names = D_hat.values, D_hat.names
    else:
        values, names = np.asarray(D_hat, dtype=float), ()
    w = minimise_on_simplex(values)
    return MixWeights(w=w, provenance=Provenance.OPTIMAL, names=names)


def mixed_predict(preds, w, i):
    """sum_k w_k tilde_k(x_i, s) for a unit (or array of units) i."""
    weights = w.w if isinstance(w, MixWeights) else np.asarray(w, dtype=float)
    if len(preds) != weights.size:
        raise EnsembleError(f'{len(preds)} predictors but {weights.size} weights')
    try:
        values = np.stack([np.asarray(pred.tilde[i], dtype=float) for pred in preds])
    except IndexError as e:
        raise EnsembleError(f'predictor undefined at unit {i}') from e
    if not np.all(np.isfinite(values)):
        raise EnsembleError(f'predictor undefined at unit {i}')
    out = np.tensordot(weights, values, axes=1)
    return float(out) if np.ndim(out) == 0 else out
