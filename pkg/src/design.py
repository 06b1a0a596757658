"""
Probability sampling designs p(s) over a population.

Two designs are supported: simple random sampling without replacement and
Poisson sampling with outcome-dependent inclusion probabilities calibrated
so that the expected sample size is n.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from config import Config

logger = logging.getLogger(__name__)


class SamplingError(ValueError):
    """Represents an invalid sampling design or draw request"""


class SamplingKind(str, Enum):
    SRS_WOR = 'SRS_WOR'
    POISSON = 'POISSON'


@dataclass(frozen=True)
class SamplingDesign:
    """
    Known sampling design.

    pi holds the first-order inclusion probability of every unit in U;
    for SRS_WOR it is n/N identically and sample_size is the fixed n.
    """

    kind: SamplingKind
    pi: np.ndarray
    sample_size: int = None

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.size and (np.any(pi < 0) or np.any(pi > 1) or not np.all(np.isfinite(pi))):
            raise SamplingError('inclusion probabilities must lie in [0, 1]')
        pi.setflags(write=False)
        object.__setattr__(self, 'pi', pi)

    @property
    def population_size(self) -> int:
        return int(self.pi.shape[0])

    @property
    def expected_size(self) -> float:
        return float(self.pi.sum())

    @classmethod
    def srs(cls, N: int, n: int) -> 'SamplingDesign':
        _check_srs(N, n)
        pi = np.full(N, n / N if N else 0.0)
        return cls(kind=SamplingKind.SRS_WOR, pi=pi, sample_size=n)

    @classmethod
    def poisson(cls, pi) -> 'SamplingDesign':
        return cls(kind=SamplingKind.POISSON, pi=np.asarray(pi, dtype=float))


@dataclass(frozen=True)
class Sample:
    """Sorted unit indices s drawn under a design."""

    indices: np.ndarray
    design: SamplingDesign

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=int))
        if idx.size != np.asarray(self.indices).size:
            raise SamplingError('sample indices must be unique')
        N = self.design.population_size
        if idx.size and (idx[0] < 0 or idx[-1] >= N):
            raise SamplingError(f'sample indices must lie in 0..{N - 1}')
        if self.design.kind == SamplingKind.SRS_WOR and idx.size != self.design.sample_size:
            raise SamplingError(
                f'SRS sample has {idx.size} units, design fixes {self.design.sample_size}')
        idx.setflags(write=False)
        object.__setattr__(self, 'indices', idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def population_size(self) -> int:
        return self.design.population_size

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.population_size, dtype=bool)
        m[self.indices] = True
        return m

    @property
    def holdout(self) -> np.ndarray:
        """Out-of-sample units R = U \\ s."""
        return np.flatnonzero(~self.mask)

    def __len__(self):
        return self.size


def _check_srs(N: int, n: int):
    if N < 0 or n < 0:
        raise SamplingError(f'sizes must be nonnegative, got N={N}, n={n}')
    if n > N:
        raise SamplingError(f'sample size {n} exceeds population size {N}')


def draw_srs_wor(N: int, n: int, rng: np.random.Generator) -> Sample:
    """Every size-n subset of U has probability 1/C(N, n)."""
    design = SamplingDesign.srs(N, n)
    idx = rng.choice(N, size=n, replace=False) if n else np.empty(0, dtype=int)
    return Sample(indices=np.sort(idx), design=design)


def calibrate_poisson(y, n: float, alpha: float) -> np.ndarray:
    """
    Inclusion probabilities with pi_i^-1 proportional to 1 + exp(-alpha - 0.5 y_i),
    scaled so that sum(pi) = n.

    pi_i = min(1, g_i / c) with g_i = expit(alpha + 0.5 y_i). The clamped sum is
    continuous and decreasing in c, so the root in log c already satisfies the
    recalibration on the unclamped units; the last rescale pins the sum to n.
    """
    y = np.asarray(y, dtype=float)
    N = y.size
    if not np.all(np.isfinite(y)):
        raise SamplingError('outcomes must be finite')
    if not 0 < n < N:
        raise SamplingError(f'no feasible scaling for n={n} with N={N} (need 0 < n < N)')

    g = expit(alpha + 0.5 * y)
    if np.any(g <= 0):
        raise SamplingError('outcome too extreme for calibration (underflow)')
    log_g = np.log(g)

    def excess(log_c):
        return np.minimum(1.0, np.exp(log_g - log_c)).sum() - n

    # Every unit clamps at lo, the unclamped sum is below n at hi
    lo = log_g.min() - 1.0
    hi = np.log(g.sum() / n) + 1.0
    log_c = brentq(excess, lo, hi, xtol=Config.ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)

    pi = np.minimum(1.0, np.exp(log_g - log_c))
    free = pi < 1.0
    pi[free] *= (n - (~free).sum()) / pi[free].sum()
    logger.debug(f"Calibrated Poisson design: alpha={alpha}, n={n}, clamped={(~free).sum()}")
    return pi


def draw_poisson(pi, rng: np.random.Generator) -> Sample:
    """Independent Bernoulli inclusion of every unit with probability pi_i."""
    design = SamplingDesign.poisson(pi)
    included = rng.random(design.population_size) < design.pi
    return Sample(indices=np.flatnonzero(included), design=design)


def cv_pi(pi) -> float:
    """Coefficient of variation of pi over U (population standard deviation / mean)."""
    pi = np.asarray(pi, dtype=float)
    if pi.size == 0:
        raise SamplingError('cv_pi needs at least one probability')
    mean = pi.mean()
    if mean <= 0:
        raise SamplingError('cv_pi needs a positive mean')
    return float(pi.std() / mean)


def save_inclusion_probabilities(pi, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pi = np.asarray(pi, dtype=float)
    pd.DataFrame({'id': np.arange(pi.size), 'pi': pi}).to_csv(
        path, index=False, float_format='%.17g')
    logger.info(f"Saved inclusion probabilities to {path}")
    return path
