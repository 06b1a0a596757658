"""
Sample-splitting designs q(s1 | s) and test-set inclusion probabilities.

pi2 is the conditional probability of landing in the test set s2 given the
training set s1; it has a closed form under twice-SRS. phi2 conditions only on
i not in s1 and needs nothing but pi_i and p1 = Pr(i in s1 | i in s).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from src.design import Sample, SamplingKind

logger = logging.getLogger(__name__)


class SplitError(ValueError):
    """Represents an invalid split design or split request"""


class SplitKind(str, Enum):
    SRS_SPLIT = 'SRS_SPLIT'
    TFOLD = 'TFOLD'


class WeightMode(str, Enum):
    EXACT_PI2 = 'EXACT_PI2'
    PHI2 = 'PHI2'


def default_weight_mode(kind: SamplingKind) -> WeightMode:
    """Exact pi2 where twice-SRS gives a closed form, phi2 otherwise."""
    return WeightMode.EXACT_PI2 if kind == SamplingKind.SRS_WOR else WeightMode.PHI2


@dataclass(frozen=True)
class SplitDesign:
    """
    SRS_SPLIT draws s1 as an SRS of fixed size (train_size) or of
    round(train_fraction * |s|); TFOLD partitions s into `folds` clusters.
    """

    kind: SplitKind = SplitKind.SRS_SPLIT
    train_fraction: Optional[float] = None
    train_size: Optional[int] = None
    folds: Optional[int] = None

    def __post_init__(self):
        if self.kind == SplitKind.SRS_SPLIT:
            if (self.train_fraction is None) == (self.train_size is None):
                raise SplitError('SRS_SPLIT needs exactly one of train_fraction, train_size')
            if self.train_fraction is not None and not 0 < self.train_fraction < 1:
                raise SplitError(f'train_fraction must lie in (0, 1), got {self.train_fraction}')
            if self.train_size is not None and self.train_size < 1:
                raise SplitError(f'train_size must be >= 1, got {self.train_size}')
        elif self.folds is None or self.folds < 2:
            raise SplitError(f'TFOLD needs folds >= 2, got {self.folds}')

    @classmethod
    def fraction(cls, train_fraction: float) -> 'SplitDesign':
        return cls(kind=SplitKind.SRS_SPLIT, train_fraction=train_fraction)

    @classmethod
    def fixed(cls, train_size: int) -> 'SplitDesign':
        return cls(kind=SplitKind.SRS_SPLIT, train_size=train_size)

    @classmethod
    def tfold(cls, folds: int) -> 'SplitDesign':
        return cls(kind=SplitKind.TFOLD, folds=folds)

    def train_size_for(self, n: int) -> int:
        """n1 for a sample of size n (TFOLD: the size of s1 for a largest fold)."""
        self.validate(n)
        if self.kind == SplitKind.TFOLD:
            return n - -(-n // self.folds)
        if self.train_size is not None:
            return self.train_size
        # Round half up; 0.7 * 100 must give 70 and 0.5 * 3 must give 2
        n1 = int(np.floor(self.train_fraction * n + 0.5 + 1e-9))
        return min(max(n1, 1), n - 1)

    def p1(self, n: int) -> float:
        """Pr(i in s1 | i in s), the same for every unit of s."""
        if self.kind == SplitKind.TFOLD:
            return (self.folds - 1) / self.folds
        return self.train_size_for(n) / n

    def validate(self, n: int):
        if self.kind == SplitKind.TFOLD:
            if not 2 <= self.folds <= n:
                raise SplitError(f'fold count {self.folds} out of range for |s|={n}')
        elif self.train_size is not None:
            if not 0 < self.train_size < n:
                raise SplitError(f'train size {self.train_size} must lie in (0, {n})')
        elif n < 2:
            raise SplitError(f'cannot split a sample of size {n}')


@dataclass(frozen=True)
class Split:
    """Training set s1 and test set s2 (sorted unit indices)."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        train = np.sort(np.asarray(self.train, dtype=int))
        test = np.sort(np.asarray(self.test, dtype=int))
        if train.size == 0 or test.size == 0:
            raise SplitError('training and test sets must both be nonempty')
        if np.intersect1d(train, test).size:
            raise SplitError('training and test sets overlap')
        train.setflags(write=False)
        test.setflags(write=False)
        object.__setattr__(self, 'train', train)
        object.__setattr__(self, 'test', test)

    def same_as(self, other: 'Split') -> bool:
        return np.array_equal(self.train, other.train) and np.array_equal(self.test, other.test)


def draw_split(s: Sample, design: SplitDesign, rng: np.random.Generator) -> Split:
    """s1 as an SRS without replacement of size n1 from s; s2 = s \\ s1."""
    if design.kind != SplitKind.SRS_SPLIT:
        raise SplitError('TFOLD designs are drawn with tfold_splits')
    n1 = design.train_size_for(s.size)
    perm = rng.permutation(s.indices)
    return Split(train=perm[:n1], test=perm[n1:])


def tfold_splits(s: Sample, T_fold: int, rng: np.random.Generator) -> list:
    """Random partition of s into T_fold near-equal clusters, each used once as s2."""
    if not 2 <= T_fold <= s.size:
        raise SplitError(f'fold count {T_fold} out of range for |s|={s.size}')
    clusters = np.array_split(rng.permutation(s.indices), T_fold)
    return [
        Split(train=np.setdiff1d(s.indices, cluster), test=cluster)
        for cluster in clusters
    ]


def draw_split_sequence(s: Sample, design: SplitDesign, T: int,
                        rng: np.random.Generator) -> list:
    """
    T splits from one stream, shared by every learner of an ensemble.

    For TFOLD, T must be a multiple of the fold count; each block of
    `folds` splits is one systematic pass over a fresh partition.
    """
    if T < 1:
        raise SplitError(f'T must be >= 1, got {T}')
    design.validate(s.size)
    if design.kind == SplitKind.SRS_SPLIT:
        return [draw_split(s, design, rng) for _ in range(T)]
    if T % design.folds:
        raise SplitError(f'T={T} is not a multiple of the fold count {design.folds}')
    splits = []
    for _ in range(T // design.folds):
        splits.extend(tfold_splits(s, design.folds, rng))
    return splits


def pi2_exact_srs(N: int, n1: int, n2: int) -> float:
    """Conditional test-set inclusion probability n2 / (N - n1) under twice-SRS."""
    if n2 < 1 or n1 < 0 or n1 + n2 > N:
        raise SplitError(f'need n2 >= 1, n1 >= 0 and n1 + n2 <= N (N={N}, n1={n1}, n2={n2})')
    return n2 / (N - n1)


def phi2(pi_i, p1: float):
    """pi_i (1 - p1) / (1 - pi_i p1); accepts a scalar or an array of pi_i."""
    if not 0 < p1 < 1:
        raise SplitError(f'p1 must lie in (0, 1), got {p1}')
    pi = np.asarray(pi_i, dtype=float)
    if np.any(pi <= 0) or np.any(pi > 1):
        raise SplitError('pi_i must lie in (0, 1]')
    out = pi * (1 - p1) / (1 - pi * p1)
    return float(out) if out.ndim == 0 else out


def inclusion_weights(s: Sample, split: Split, mode: WeightMode, p1: float) -> np.ndarray:
    """Weights pi2 (exact) or phi2 for the units of split.test, in the same order."""
    if mode == WeightMode.EXACT_PI2:
        if s.design.kind != SamplingKind.SRS_WOR:
            raise SplitError('exact pi2 needs simple random sampling of s')
        w = pi2_exact_srs(s.population_size, split.train.size, split.test.size)
        return np.full(split.test.size, w)
    return phi2(s.design.pi[split.test], p1)
