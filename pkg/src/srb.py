"""
Monte Carlo SRB prediction and design-based risk estimation.

A SplitRun refits one learner on every training set s1 of a split sequence and
keeps its predictions on all of U. From it:

    tilde(x_i, s)  average over all T splits (used on R = U \\ s)
    oob(x_i, s)    average over the splits with i in s2 (used on s)

and the risk estimator

    D = T^-1 sum_t sum_{i in s2(t)} (w_i^-1 - 1) {e_i^2 - a_i^2}

with e_i = mu(x_i, s1(t)) - y_i, a_i = mu(x_i, s1(t)) - oob(x_i, s) and
w_i the exact pi2 or phi2 weight of the run.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src import learners
from src.design import Sample
from src.learners import LearnerError, LearnerSpec
from src.population import Population
from src.split import (SplitDesign, SplitError, WeightMode, default_weight_mode,
                       draw_split_sequence, inclusion_weights)

logger = logging.getLogger(__name__)


class SrbError(ValueError):
    """Represents a failure to build or evaluate an SRB predictor"""


class UncoveredUnitError(SrbError):
    """Represents a sample unit that never fell in a test set"""

    def __init__(self, unit: int):
        super().__init__(f'unit {unit} of s is in s1 on every split; use a larger T')
        self.unit = unit


class SplitMismatchError(SrbError):
    """Represents runs that do not share one split sequence"""


@dataclass(frozen=True)
class SplitRun:
    """
    One learner refitted on T splits of a sample.

    predictions[t, i] is mu(x_i, s1(t)) for every unit of U; weights[t, i] holds
    the test-set weight for i in s2(t) and NaN elsewhere.
    """

    population: Population
    sample: Sample
    splits: tuple
    predictions: np.ndarray
    weights: np.ndarray
    weight_mode: WeightMode
    spec: Optional[LearnerSpec] = None
    name: str = 'learner'

    def __post_init__(self):
        if not self.splits:
            raise SrbError('a split run needs at least one split')
        shape = (len(self.splits), self.population.size)
        if self.predictions.shape != shape or self.weights.shape != shape:
            raise SrbError(f'predictions and weights must have shape {shape}')
        if not np.all(np.isfinite(self.predictions[~self.train_mask])):
            raise SrbError(f'{self.name}: non-finite prediction outside a training set')
        self.predictions.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.splits)

    @cached_property
    def train_mask(self) -> np.ndarray:
        mask = np.zeros((self.T, self.population.size), dtype=bool)
        for t, split in enumerate(self.splits):
            mask[t, split.train] = True
        return mask

    @cached_property
    def test_mask(self) -> np.ndarray:
        mask = np.zeros((self.T, self.population.size), dtype=bool)
        for t, split in enumerate(self.splits):
            mask[t, split.test] = True
        return mask

    @property
    def errors(self) -> np.ndarray:
        """e_i = mu(x_i, s1(t)) - y_i for every split and unit."""
        return self.predictions - self.population.y[np.newaxis, :]

    def shares_splits(self, other: 'SplitRun') -> bool:
        return (
            self.T == other.T
            and self.sample.indices.shape == other.sample.indices.shape
            and np.array_equal(self.sample.indices, other.sample.indices)
            and all(a.same_as(b) for a, b in zip(self.splits, other.splits))
        )


@dataclass(frozen=True)
class SrbPredictor:
    """
    tilde over all units (all-splits average), oob on the sample units
    (NaN on R) and oob_counts T_i (0 on R).
    """

    sample: Sample
    tilde: np.ndarray
    oob: np.ndarray
    oob_counts: np.ndarray
    name: str = 'learner'

    def on_holdout(self) -> np.ndarray:
        """tilde(x_i, s) for i in R, in unit order."""
        return self.tilde[self.sample.holdout]


@dataclass(frozen=True)
class RiskEstimate:
    """value = e2_term + a2_term; a2_term carries the minus sign."""

    value: float
    standardized: float
    e2_term: float
    a2_term: float
    weight_mode: WeightMode


def check_same_splits(runs):
    first = runs[0]
    for run in runs[1:]:
        if not first.shares_splits(run):
            raise SplitMismatchError(f'{first.name} and {run.name} use different splits')
        if run.weight_mode != first.weight_mode:
            raise SplitMismatchError(f'{first.name} and {run.name} use different weight modes')


def fit_splits(spec: LearnerSpec, pop: Population, s: Sample, splits, design: SplitDesign,
               weight_mode: Optional[WeightMode] = None) -> SplitRun:
    """Refit the learner on every s1 of a given split sequence."""
    mode = default_weight_mode(s.design.kind) if weight_mode is None else WeightMode(weight_mode)
    p1 = design.p1(s.size)
    T, N = len(splits), pop.size
    predictions = np.empty((T, N))
    weights = np.full((T, N), np.nan)

    for t, split in enumerate(splits):
        try:
            model = learners.fit(spec, pop.x[split.train], pop.y[split.train], split.train)
            predictions[t] = learners.predict(model, pop.x)
        except (LearnerError, ValueError) as e:
            raise SrbError(f'{spec.name}: fit failed on split {t}: {e}') from e
        try:
            w = inclusion_weights(s, split, mode, p1)
        except SplitError as e:
            raise SrbError(f'{spec.name}: no weights for split {t}: {e}') from e
        weights[t, split.test] = w

    logger.debug(f"Fitted {spec.name} on {T} splits (mode={mode.value})")
    return SplitRun(
        population=pop, sample=s, splits=tuple(splits),
        predictions=predictions, weights=weights,
        weight_mode=mode, spec=spec, name=spec.name,
    )


def run_splits(spec: LearnerSpec, pop: Population, s: Sample, design: SplitDesign, T: int,
               rng: np.random.Generator, weight_mode: Optional[WeightMode] = None) -> SplitRun:
    splits = draw_split_sequence(s, design, T, rng)
    return fit_splits(spec, pop, s, splits, design, weight_mode)


def srb_predict(run: SplitRun) -> SrbPredictor:
    """Monte Carlo SRB predictions: tilde on R and out-of-bag oob on s."""
    test = run.test_mask
    counts = test.sum(axis=0)
    in_sample = run.sample.mask
    uncovered = np.flatnonzero(in_sample & (counts == 0))
    if uncovered.size:
        raise UncoveredUnitError(int(uncovered[0]))

    oob = np.full(run.population.size, np.nan)
    sums = np.where(test, run.predictions, 0.0).sum(axis=0)
    oob[in_sample] = sums[in_sample] / counts[in_sample]
    counts = np.where(in_sample, counts, 0)

    return SrbPredictor(
        sample=run.sample,
        tilde=run.predictions.mean(axis=0),
        oob=oob,
        oob_counts=counts,
        name=run.name,
    )


def _test_factors(run: SplitRun) -> np.ndarray:
    """(w_i^-1 - 1) on test units, 0 elsewhere."""
    test = run.test_mask
    w = run.weights[test]
    if not np.all(np.isfinite(w)):
        raise SrbError(f'{run.name}: missing test-set weights')
    if np.any(w <= 0):
        raise SrbError(f'{run.name}: zero-valued test-set weights')
    factors = np.zeros(run.weights.shape)
    factors[test] = 1.0 / w - 1.0
    return factors


def _test_terms(run: SplitRun, ring: SrbPredictor):
    """e and a on test units (0 elsewhere)."""
    test = run.test_mask
    oob = ring.oob[np.newaxis, :]
    if not np.all(np.isfinite(np.broadcast_to(oob, test.shape)[test])):
        raise SrbError(f'{run.name}: out-of-bag prediction missing for a test unit')
    e = np.where(test, run.errors, 0.0)
    a = np.where(test, run.predictions - np.where(test, oob, 0.0), 0.0)
    return e, a


def per_split_risk(run: SplitRun, ring: SrbPredictor) -> np.ndarray:
    """Single-split summands sum_{i in s2(t)} (w_i^-1 - 1) {e_i^2 - a_i^2}."""
    factors = _test_factors(run)
    e, a = _test_terms(run, ring)
    return (factors * (e ** 2 - a ** 2)).sum(axis=1)


def per_split_sse(run: SplitRun) -> np.ndarray:
    """Test-set sum of squared errors per split."""
    return np.where(run.test_mask, run.errors ** 2, 0.0).sum(axis=1)


def risk_estimate(run: SplitRun, ring: SrbPredictor) -> RiskEstimate:
    holdout = run.population.size - run.sample.size
    if holdout <= 0:
        raise SrbError('risk is undefined when R is empty')
    factors = _test_factors(run)
    e, a = _test_terms(run, ring)
    e2 = float((factors * e ** 2).sum() / run.T)
    a2 = -float((factors * a ** 2).sum() / run.T)
    value = e2 + a2
    return RiskEstimate(
        value=value, standardized=value / holdout,
        e2_term=e2, a2_term=a2, weight_mode=run.weight_mode,
    )


def pairwise_risk(run_k: SplitRun, run_l: SplitRun, ring_k: SrbPredictor,
                  ring_l: SrbPredictor) -> float:
    """Cross-risk estimate D_kl; D_kk equals risk_estimate(run_k).value."""
    check_same_splits([run_k, run_l])
    factors = _test_factors(run_k)
    e_k, a_k = _test_terms(run_k, ring_k)
    e_l, a_l = _test_terms(run_l, ring_l)
    return float((factors * (e_k * e_l - a_k * a_l)).sum() / run_k.T)


def residual_msep(tilde_on_s, y_s) -> float:
    """Mean of squared residuals over s (leaks training fits; optimistic)."""
    tilde_on_s = np.asarray(tilde_on_s, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    if y_s.size == 0:
        raise SrbError('residual MSEP needs a nonempty sample')
    return float(np.mean((tilde_on_s - y_s) ** 2))


def cv_msep(run: SplitRun) -> float:
    """Unweighted mean over splits of the test-set mean squared error."""
    sizes = run.test_mask.sum(axis=1)
    if np.any(sizes == 0):
        raise SrbError(f'{run.name}: empty test set')
    return float(np.mean(per_split_sse(run) / sizes))


def mix_runs(runs, w, name: str = 'mixed') -> SplitRun:
    """Split-level convex combination of K runs that share one split sequence."""
    check_same_splits(runs)
    w = np.asarray(w, dtype=float)
    if w.shape != (len(runs),):
        raise SrbError(f'expected {len(runs)} weights, got {w.shape}')
    predictions = np.tensordot(w, np.stack([run.predictions for run in runs]), axes=1)
    first = runs[0]
    return SplitRun(
        population=first.population, sample=first.sample, splits=first.splits,
        predictions=predictions, weights=first.weights.copy(),
        weight_mode=first.weight_mode, spec=None, name=name,
    )


def true_msep(ring: SrbPredictor, pop: Population) -> float:
    """D / |R| of the Monte Carlo SRB predictor (simulation only)."""
    holdout = ring.sample.holdout
    if holdout.size == 0:
        raise SrbError('true MSEP is undefined when R is empty')
    return float(np.mean((ring.tilde[holdout] - pop.y[holdout]) ** 2))


def true_risk_matrix(rings, pop: Population) -> np.ndarray:
    """D_kl = sum_{i in R} e_i(tilde_k) e_i(tilde_l) (simulation only)."""
    holdout = rings[0].sample.holdout
    errors = np.stack([ring.tilde[holdout] - pop.y[holdout] for ring in rings])
    return errors @ errors.T


def export_split_run(run: SplitRun, path) -> Path:
    """Per-split test errors and weights, one row per (split, test unit)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t_idx, unit = np.nonzero(run.test_mask)
    frame = pd.DataFrame({
        'split': t_idx,
        'unit': unit,
        'y': run.population.y[unit],
        'prediction': run.predictions[t_idx, unit],
        'error': run.errors[t_idx, unit],
        'weight': run.weights[t_idx, unit],
        'weight_mode': run.weight_mode.value,
        'learner': run.name,
    })
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Exported split run {run.name} ({run.T} splits) to {path}")
    return path
