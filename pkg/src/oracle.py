"""
Exhaustive enumeration of small pq-designs.

Every (s, s1) pair of a tiny design is tabulated with its joint probability
f(s1, s) = q(s1 | s) p(s). All design expectations in the verification
functions are exact sums over that table, so the unbiasedness identities can
be checked to floating-point tolerance instead of by simulation.

Samples that admit no valid split (for example |s| < 2 under Poisson sampling)
are left out of the table; their probability is kept in `excluded_mass` and
every expectation is taken conditional on the remaining support.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import comb

from config import Config
from src import learners
from src.design import SamplingDesign, SamplingKind, calibrate_poisson, draw_srs_wor
from src.learners import LearnerKind, LearnerSpec
from src.population import Population, PopulationSpec, generate_population, population_from_arrays
from src.split import SplitDesign, SplitError, SplitKind, phi2
from src.srb import run_splits, srb_predict, true_risk_matrix

logger = logging.getLogger(__name__)


class EnumerationError(ValueError):
    """Represents a design too large or malformed to enumerate"""


@dataclass(frozen=True)
class VerificationReport:
    identity: str
    max_abs_deviation: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return 'PASS' if self.passed else 'FAIL'

    def line(self) -> str:
        return f"{self.status}  {self.identity}  max|dev|={self.max_abs_deviation:.3e}  tol={self.tolerance:.0e}"


def _report(identity: str, deviation: float, tol: float, **details) -> VerificationReport:
    deviation = float(deviation)
    passed = bool(np.isfinite(deviation) and deviation <= tol)
    report = VerificationReport(identity, deviation, tol, passed, details)
    logger.debug(report.line())
    return report


@dataclass(frozen=True)
class DesignEnumeration:
    """
    Joint table of a pq-design. Row r pairs sample sample_of_row[r] with one
    training set; p, q and f = p q are per row.
    """

    population: Population
    sampling: SamplingDesign
    split: SplitDesign
    samples: tuple
    sample_probs: np.ndarray
    sample_of_row: np.ndarray
    train_masks: np.ndarray
    q: np.ndarray
    excluded_mass: float

    @property
    def N(self) -> int:
        return self.population.size

    @property
    def valid_mass(self) -> float:
        return 1.0 - self.excluded_mass

    @cached_property
    def sample_masks(self) -> np.ndarray:
        masks = np.zeros((len(self.samples), self.N), dtype=bool)
        for k, s in enumerate(self.samples):
            masks[k, list(s)] = True
        return masks

    @property
    def p(self) -> np.ndarray:
        return self.sample_probs[self.sample_of_row]

    @property
    def f(self) -> np.ndarray:
        """Joint f(s1, s) per row, renormalised to the valid support."""
        return self.p * self.q / self.valid_mass

    @cached_property
    def row_sample_masks(self) -> np.ndarray:
        return self.sample_masks[self.sample_of_row]

    @cached_property
    def test_masks(self) -> np.ndarray:
        return self.row_sample_masks & ~self.train_masks

    @cached_property
    def _train_groups(self):
        groups, inverse = np.unique(self.train_masks, axis=0, return_inverse=True)
        return groups, inverse.reshape(-1)

    @property
    def train_groups(self) -> np.ndarray:
        """Distinct training sets s1 as boolean masks."""
        return self._train_groups[0]

    @property
    def group_of_row(self) -> np.ndarray:
        return self._train_groups[1]

    @cached_property
    def f_s1(self) -> np.ndarray:
        """Marginal f(s1) per training group."""
        return np.bincount(self.group_of_row, weights=self.f, minlength=len(self.train_groups))

    @property
    def f_s_given_s1(self) -> np.ndarray:
        """Conditional f(s | s1) per row."""
        return self.f / self.f_s1[self.group_of_row]

    @cached_property
    def pi2(self) -> np.ndarray:
        """
        pi2[g, i] = Pr(i in s2 | s1 = group g), summed over the samples
        compatible with s1; NaN for i in s1.
        """
        num = np.zeros((len(self.train_groups), self.N))
        np.add.at(num, self.group_of_row, self.f[:, np.newaxis] * self.test_masks)
        pi2 = num / self.f_s1[:, np.newaxis]
        pi2[self.train_groups] = np.nan
        return pi2

    def check_normalization(self) -> float:
        """Largest deviation of sum p(s) and of each sum q(s1 | s) from 1."""
        total = abs(self.sample_probs.sum() + self.excluded_mass - 1.0)
        q_sums = np.bincount(self.sample_of_row, weights=self.q, minlength=len(self.samples))
        return float(max(total, np.abs(q_sums - 1.0).max(initial=0.0)))

    def group_predictions(self, spec: LearnerSpec) -> np.ndarray:
        """mu(x_i, s1) for every training group and every unit of U."""
        pop = self.population
        preds = np.empty((len(self.train_groups), self.N))
        for g, mask in enumerate(self.train_groups):
            model = learners.fit(spec, pop.x[mask], pop.y[mask])
            preds[g] = learners.predict(model, pop.x)
        return preds

    def srb_predictions(self, group_preds: np.ndarray) -> np.ndarray:
        """Exact SRB mu_bar(x_i, s) = E_q{mu(x_i, s1) | s} per sample."""
        bar = np.zeros((len(self.samples), self.N))
        np.add.at(bar, self.sample_of_row, self.q[:, np.newaxis] * group_preds[self.group_of_row])
        return bar


def _sample_support(sampling: SamplingDesign, N: int):
    if sampling.kind == SamplingKind.SRS_WOR:
        n = sampling.sample_size
        prob = 1.0 / comb(N, n, exact=True)
        for s in itertools.combinations(range(N), n):
            yield s, prob
        return
    pi = sampling.pi
    for size in range(N + 1):
        for s in itertools.combinations(range(N), size):
            inside = np.zeros(N, dtype=bool)
            inside[list(s)] = True
            prob = float(np.prod(np.where(inside, pi, 1.0 - pi)))
            if prob > 0:
                yield s, prob


def _split_support(s: tuple, split: SplitDesign):
    """(training set, q(s1 | s)) pairs; raises SplitError when s admits no split."""
    n = len(s)
    split.validate(n)
    if split.kind == SplitKind.SRS_SPLIT:
        n1 = split.train_size_for(n)
        prob = 1.0 / comb(n, n1, exact=True)
        for train in itertools.combinations(s, n1):
            yield train, prob
        return
    # One of T ragged folds drawn uniformly: a test set of size m is uniform
    # among size-m subsets, with m = ceil(n/T) with probability r/T
    T = split.folds
    big, r = -(-n // T), n % T
    sizes = {n // T: (T - r) / T}
    if r:
        sizes[big] = r / T
    for m, weight in sizes.items():
        if weight == 0:
            continue
        prob = weight / comb(n, m, exact=True)
        for test in itertools.combinations(s, m):
            yield tuple(i for i in s if i not in test), prob


def enumerate_design(pop: Population, sampling: SamplingDesign,
                     split: SplitDesign) -> DesignEnumeration:
    N = pop.size
    if sampling.population_size != N:
        raise EnumerationError('sampling design and population differ in size')
    limit = Config.ENUM_MAX_SRS_N if sampling.kind == SamplingKind.SRS_WOR else Config.ENUM_MAX_POISSON_N
    if N > limit:
        raise EnumerationError(f'{sampling.kind.value} enumeration supports N <= {limit}, got {N}')

    samples, sample_probs = [], []
    sample_of_row, train_rows, q = [], [], []
    excluded = 0.0
    for s, prob in _sample_support(sampling, N):
        try:
            support = list(_split_support(s, split))
        except SplitError:
            excluded += prob
            continue
        k = len(samples)
        samples.append(s)
        sample_probs.append(prob)
        for train, q_prob in support:
            mask = np.zeros(N, dtype=bool)
            mask[list(train)] = True
            sample_of_row.append(k)
            train_rows.append(mask)
            q.append(q_prob)

    if not samples:
        raise EnumerationError('no sample of the design admits a split')

    enum = DesignEnumeration(
        population=pop, sampling=sampling, split=split,
        samples=tuple(samples),
        sample_probs=np.array(sample_probs),
        sample_of_row=np.array(sample_of_row),
        train_masks=np.array(train_rows),
        q=np.array(q),
        excluded_mass=float(excluded),
    )
    deviation = enum.check_normalization()
    if deviation > Config.NORMALIZATION_TOL:
        raise EnumerationError(f'probability table does not normalise (deviation {deviation:.3e})')
    logger.debug(f"Enumerated {len(samples)} samples, {len(q)} rows, excluded mass {excluded:.3e}")
    return enum


def _estimator_terms(enum: DesignEnumeration, preds_k, preds_l, bar_k, bar_l):
    """
    Per row: sum over s2 of (pi2^-1 - 1)(e_k e_l - a_k a_l) with exact pi2
    and a measured against the exact SRB predictors.
    """
    y = enum.population.y
    rows_k = preds_k[enum.group_of_row]
    rows_l = preds_l[enum.group_of_row]
    test = enum.test_masks
    pi2 = enum.pi2[enum.group_of_row]
    factors = np.where(test, 1.0 / np.where(test, pi2, 1.0) - 1.0, 0.0)
    e = (rows_k - y) * (rows_l - y)
    a = (rows_k - bar_k[enum.sample_of_row]) * (rows_l - bar_l[enum.sample_of_row])
    return (factors * (e - a)).sum(axis=1)


def verify_subsample_identity(enum: DesignEnumeration, learner: LearnerSpec) -> VerificationReport:
    """E_s{D_R-hat | s1} = E_s{D_R | s1} for every training set s1."""
    y = enum.population.y
    preds = enum.group_predictions(learner)
    e2 = (preds[enum.group_of_row] - y) ** 2
    test = enum.test_masks
    pi2 = enum.pi2[enum.group_of_row]
    factors = np.where(test, 1.0 / np.where(test, pi2, 1.0) - 1.0, 0.0)

    estimate = (factors * e2).sum(axis=1)
    actual = np.where(enum.row_sample_masks, 0.0, e2).sum(axis=1)
    weights = enum.f_s_given_s1
    groups = len(enum.train_groups)
    lhs = np.bincount(enum.group_of_row, weights=weights * estimate, minlength=groups)
    rhs = np.bincount(enum.group_of_row, weights=weights * actual, minlength=groups)
    return _report(f'subsample[{learner.name}]', np.abs(lhs - rhs).max(), Config.IDENTITY_TOL,
                   training_sets=groups)


def verify_theorem1(enum: DesignEnumeration, learner: LearnerSpec,
                    other: LearnerSpec = None) -> VerificationReport:
    """
    E_p[D-hat(s; mu_bar)] = E_p[D(s; mu_bar)] with exact SRB and exact pi2.
    With a second learner, checks the cross-risk version E_p[D_kl-hat] =
    E_p[sum_R e_i(mu_bar_k) e_i(mu_bar_l)].
    """
    y = enum.population.y
    preds_k = enum.group_predictions(learner)
    preds_l = preds_k if other is None else enum.group_predictions(other)
    bar_k = enum.srb_predictions(preds_k)
    bar_l = bar_k if other is None else enum.srb_predictions(preds_l)

    row_terms = _estimator_terms(enum, preds_k, preds_l, bar_k, bar_l)
    estimate = np.bincount(enum.sample_of_row, weights=enum.q * row_terms,
                           minlength=len(enum.samples))
    holdout = ~enum.sample_masks
    actual = np.where(holdout, (bar_k - y) * (bar_l - y), 0.0).sum(axis=1)

    p = enum.sample_probs / enum.valid_mass
    lhs, rhs = float(p @ estimate), float(p @ actual)
    name = learner.name if other is None else f'{learner.name},{other.name}'
    return _report(f'theorem1[{name}]', abs(lhs - rhs), Config.IDENTITY_TOL,
                   expected_estimate=lhs, risk=rhs)


def verify_e2srb_identity(enum: DesignEnumeration, learner: LearnerSpec) -> VerificationReport:
    """e_i(mu_bar)^2 = E_q{e_i^2 | s} - E_q{a_i^2 | s} for every s and i in R."""
    y = enum.population.y
    preds = enum.group_predictions(learner)
    bar = enum.srb_predictions(preds)
    rows = preds[enum.group_of_row]
    S = len(enum.samples)
    e2 = np.zeros((S, enum.N))
    a2 = np.zeros((S, enum.N))
    np.add.at(e2, enum.sample_of_row, enum.q[:, np.newaxis] * (rows - y) ** 2)
    np.add.at(a2, enum.sample_of_row, enum.q[:, np.newaxis] * (rows - bar[enum.sample_of_row]) ** 2)
    gap = np.where(~enum.sample_masks, (bar - y) ** 2 - (e2 - a2), 0.0)
    return _report(f'e2srb[{learner.name}]', np.abs(gap).max(), Config.EXACT_TOL)


def verify_phi2(enum: DesignEnumeration) -> VerificationReport:
    """
    phi2 closed form against the enumerated E[pi2 | i not in s1], unit by unit.

    The closed form takes the table's Pr(i in s) and the split design's
    constant p1. Under fixed-size sampling p1 = n1/n holds for every unit and
    the row is gated. Under Poisson sampling n1/|s| moves with |s|, so the
    same deviation is reported as a measurement and never fails.
    """
    f = enum.f
    in_sample = enum.row_sample_masks
    in_train = enum.train_masks
    pi_eff = (enum.sample_probs / enum.valid_mass) @ enum.sample_masks.astype(float)
    covered = pi_eff > 0
    p1_eff = (f @ in_train.astype(float)) / np.where(covered, f @ in_sample.astype(float), 1.0)

    out_weight = enum.f_s1[:, np.newaxis] * ~enum.train_groups
    enumerated = np.nansum(enum.pi2 * out_weight, axis=0) / out_weight.sum(axis=0)

    fixed_size = enum.sampling.kind == SamplingKind.SRS_WOR
    n_nominal = enum.sampling.sample_size if fixed_size else max(2, round(enum.sampling.expected_size))
    p1 = enum.split.p1(n_nominal)
    closed = phi2(np.clip(pi_eff, 1e-300, 1.0), p1)
    deviation = float(np.abs(closed - enumerated)[covered].max())
    details = {
        'p1': p1,
        'p1_spread': float(np.ptp(p1_eff[covered])),
        'excluded_mass': enum.excluded_mass,
    }
    identity = f'phi2[{enum.sampling.kind.value}]'
    if fixed_size:
        return _report(identity, deviation, Config.EXACT_TOL, **details)

    report = VerificationReport(identity=identity, max_abs_deviation=deviation,
                                tolerance=float('inf'), passed=True, details=details)
    logger.debug(report.line())
    return report


def full_support_estimates(enum: DesignEnumeration, learner: LearnerSpec):
    """
    Per sample, the out-of-bag Monte Carlo estimator over the full split
    support (weighted by q) and the exact-SRB estimator of the same sample.
    """
    y = enum.population.y
    preds = enum.group_predictions(learner)
    bar = enum.srb_predictions(preds)
    rows = preds[enum.group_of_row]
    test = enum.test_masks
    S = len(enum.samples)

    oob_num = np.zeros((S, enum.N))
    oob_den = np.zeros((S, enum.N))
    np.add.at(oob_num, enum.sample_of_row, enum.q[:, np.newaxis] * np.where(test, rows, 0.0))
    np.add.at(oob_den, enum.sample_of_row, enum.q[:, np.newaxis] * test)
    oob = oob_num / np.where(oob_den > 0, oob_den, 1.0)

    pi2 = enum.pi2[enum.group_of_row]
    factors = np.where(test, 1.0 / np.where(test, pi2, 1.0) - 1.0, 0.0)
    e2 = (rows - y) ** 2
    a_oob = rows - oob[enum.sample_of_row]
    a_bar = rows - bar[enum.sample_of_row]
    mc = np.bincount(enum.sample_of_row, weights=enum.q * (factors * (e2 - a_oob ** 2)).sum(axis=1),
                     minlength=S)
    exact = np.bincount(enum.sample_of_row, weights=enum.q * (factors * (e2 - a_bar ** 2)).sum(axis=1),
                        minlength=S)
    return mc, exact


def measure_oob_gap(enum: DesignEnumeration, learner: LearnerSpec) -> VerificationReport:
    """Gap between the out-of-bag and the exact-SRB estimators; measured, never failed."""
    mc, exact = full_support_estimates(enum, learner)
    p = enum.sample_probs / enum.valid_mass
    gap = float(np.abs(mc - exact).max())
    report = VerificationReport(
        identity=f'oob_gap[{learner.name}]', max_abs_deviation=gap, tolerance=float('inf'),
        passed=True,
        details={'expected_oob_estimate': float(p @ mc), 'expected_exact_estimate': float(p @ exact)},
    )
    logger.debug(report.line())
    return report


def verify_intro_identity(pop: Population, n: int) -> VerificationReport:
    """
    Mean predictor under SRS: E_p(D_s) = (N - n)(1 + 1/n) S_y^2, and
    E_p(s_y^2) = S_y^2 when n >= 2.
    """
    y = pop.y
    N = pop.size
    if N > Config.ENUM_MAX_SRS_N:
        raise EnumerationError(f'SRS enumeration supports N <= {Config.ENUM_MAX_SRS_N}, got {N}')
    if not 1 <= n < N:
        raise EnumerationError(f'need 1 <= n < N, got n={n}, N={N}')

    S2 = float(np.var(y, ddof=1))
    losses, variances = [], []
    for s in itertools.combinations(range(N), n):
        inside = np.zeros(N, dtype=bool)
        inside[list(s)] = True
        mean = y[inside].mean()
        losses.append(float(((mean - y[~inside]) ** 2).sum()))
        if n >= 2:
            variances.append(float(np.var(y[inside], ddof=1)))

    expected_loss = float(np.mean(losses))
    closed_form = (N - n) * (1 + 1 / n) * S2
    deviation = abs(expected_loss - closed_form)
    if variances:
        deviation = max(deviation, abs(float(np.mean(variances)) - S2))
    return _report(f'intro[N={N},n={n}]', deviation, Config.IDENTITY_TOL,
                   expected_loss=expected_loss, closed_form=closed_form, S2=S2)


def verify_quadratic_expansion(pop: Population, rings, w) -> VerificationReport:
    """sum_R (sum_k w_k tilde_k - y)^2 = w' D w with D the true cross-error matrix."""
    w = np.asarray(w, dtype=float)
    holdout = rings[0].sample.holdout
    mixed = np.tensordot(w, np.stack([ring.tilde[holdout] for ring in rings]), axes=1)
    lhs = float(((mixed - pop.y[holdout]) ** 2).sum())
    rhs = float(w @ true_risk_matrix(rings, pop) @ w)
    return _report('quadratic_expansion', abs(lhs - rhs), 1e-8 * max(1.0, abs(lhs)))


def run_verification_suite(max_n: int = 8, seed: int = Config.DEFAULT_SEED) -> list:
    """The full oracle suite at desk scale; returns one report per identity."""

    if max_n < 4:
        raise EnumerationError(f'max_n must be at least 4, got {max_n}')
    rng = np.random.default_rng(seed)
    reports = []

    # Mean predictor identity
    reports.append(verify_intro_identity(population_from_arrays([1, 2, 3, 4, 5], np.zeros(5)), 2))
    for _ in range(20):
        N = int(rng.integers(3, min(8, max_n) + 1))
        n = int(rng.integers(1, N))
        y = rng.normal(0.0, 2.0, N)
        reports.append(verify_intro_identity(population_from_arrays(y, np.zeros(N)), n))

    # Twice-SRS tables for the estimator identities
    N = min(8, max_n)
    n = max(3, N // 2)
    pop = generate_population(PopulationSpec(size=N, mixture=(('M1', 0.5), ('M2', 0.5))), seed=seed)
    enum = enumerate_design(pop, SamplingDesign.srs(N, n), SplitDesign.fixed(max(2, n // 2)))
    reports.append(_report('normalization[SRS_WOR]', enum.check_normalization(),
                           Config.NORMALIZATION_TOL))

    constant = LearnerSpec(kind=LearnerKind.CONSTANT, constant=float(pop.y.mean()))
    mean = LearnerSpec(kind=LearnerKind.MEAN)
    ols = LearnerSpec(kind=LearnerKind.OLS)
    for spec in (constant, mean, ols):
        reports.append(verify_subsample_identity(enum, spec))
    for spec in (mean, ols):
        reports.append(verify_theorem1(enum, spec))
        reports.append(verify_e2srb_identity(enum, spec))
    reports.append(verify_theorem1(enum, mean, ols))
    reports.append(measure_oob_gap(enum, ols))

    # phi2 under twice-SRS and under heterogeneous Poisson sampling
    N_srs = min(10, max_n)
    pop_srs = generate_population(PopulationSpec(size=N_srs, mixture=(('M2', 1.0),)), seed=seed + 1)
    reports.append(verify_phi2(enumerate_design(
        pop_srs, SamplingDesign.srs(N_srs, N_srs // 2), SplitDesign.fixed(max(1, N_srs // 2 - 2)))))

    N_ps = min(6, max_n)
    pop_ps = generate_population(PopulationSpec(size=N_ps, mixture=(('M1', 0.5), ('M2', 0.5))),
                                 seed=seed + 2)
    pi = calibrate_poisson(pop_ps.y, n=N_ps / 2, alpha=-0.1)
    enum_ps = enumerate_design(pop_ps, SamplingDesign.poisson(pi), SplitDesign.fraction(0.5))
    reports.append(_report('normalization[POISSON]', enum_ps.check_normalization(),
                           Config.NORMALIZATION_TOL))
    reports.append(verify_phi2(enum_ps))

    # Quadratic expansion on a Monte Carlo run
    pop_mc = generate_population(PopulationSpec(size=60), seed=seed + 3)
    sample = draw_srs_wor(60, 20, rng)
    design = SplitDesign.tfold(5)
    rings = [
        srb_predict(run_splits(spec, pop_mc, sample, design, 10, np.random.default_rng(seed)))
        for spec in (ols, LearnerSpec(kind=LearnerKind.KNN))
    ]
    reports.append(verify_quadratic_expansion(pop_mc, rings, [0.5, 0.5]))

    passed = sum(r.passed for r in reports)
    logger.info(f"Verification suite: {passed}/{len(reports)} identities passed")
    return reports


def write_reports(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        'identity': [r.identity for r in reports],
        'max_abs_deviation': [r.max_abs_deviation for r in reports],
        'tolerance': [r.tolerance for r in reports],
        'status': [r.status for r in reports],
    })
    frame.to_csv(path, index=False, float_format='%.6e')
    logger.info(f"Wrote {len(reports)} verification results to {path}")
    return path
