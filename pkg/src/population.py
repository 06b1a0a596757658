"""
Fixed finite populations (y_U, x_U) for design-based experiments.

A population is generated once and then treated as a set of constants. Units
are indexed 0..N-1 in generation order; the mixture blocks appear in the order
they are listed in PopulationSpec.mixture.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from config import Config

logger = logging.getLogger(__name__)

GENERATORS = ('M1', 'M2', 'LIN')


class PopulationError(ValueError):
    """Represents an invalid population spec or population file"""


@dataclass(frozen=True)
class PopulationSpec:
    size: int
    mixture: tuple = Config.DEFAULT_MIXTURE
    seed: Optional[int] = None

    def __post_init__(self):
        if self.size < 0:
            raise PopulationError(f'size must be >= 0, got {self.size}')
        mixture = tuple((str(gen), float(prop)) for gen, prop in self.mixture)
        if not mixture:
            raise PopulationError('mixture must name at least one generator')
        for gen, prop in mixture:
            if gen not in GENERATORS:
                raise PopulationError(f'unknown generator {gen!r}')
            if prop < 0:
                raise PopulationError(f'proportion for {gen} is negative')
        total = sum(prop for _, prop in mixture)
        if abs(total - 1.0) > 1e-9:
            raise PopulationError(f'mixture proportions sum to {total}, not 1')
        object.__setattr__(self, 'mixture', mixture)

    def block_sizes(self) -> list:
        """Units per generator, largest remainder rounding so the sizes sum to N."""
        raw = np.array([prop * self.size for _, prop in self.mixture])
        sizes = np.floor(raw).astype(int)
        short = self.size - sizes.sum()
        order = np.argsort(-(raw - sizes), kind='stable')
        sizes[order[:short]] += 1
        return [int(k) for k in sizes]

    def to_dict(self) -> dict:
        return {
            'size': self.size,
            'mixture': [[gen, prop] for gen, prop in self.mixture],
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PopulationSpec':
        try:
            return cls(
                size=int(data['size']),
                mixture=tuple(tuple(item) for item in data['mixture']),
                seed=data.get('seed'),
            )
        except (KeyError, TypeError) as e:
            raise PopulationError(f'malformed population spec: {e}') from e


@dataclass(frozen=True)
class Population:
    """Outcomes y, features x = (x1, x2) and per-unit generator ids."""

    y: np.ndarray
    x: np.ndarray
    generator: np.ndarray
    spec: PopulationSpec
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise PopulationError('x must have one row per outcome')
        if self.generator.shape[0] != self.y.shape[0]:
            raise PopulationError('generator ids must have one entry per unit')
        for arr in (self.y, self.x, self.generator):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.y.shape[0])

    def __len__(self):
        return self.size


def _generate_block(generator: str, count: int, rng: np.random.Generator):
    x1 = rng.normal(0.0, 1.0, count)
    x2 = rng.poisson(5.0, count)

    if generator == 'M1':
        # Residual regime switches on the realized integer x2
        loc = np.where(x2 < 3, 0.0, np.where(x2 < 7, -2.0, 2.0))
        eps = rng.normal(loc, 1.0)
        y = x1 + 0.5 * x2 + eps
    elif generator == 'M2':
        z = rng.normal(0.0, 1.0, count)
        eps = z ** 2 + rng.normal(0.0, 0.5, count)
        y = 0.5 + 1.5 * x1 + x2 + eps
    else:
        y = 0.5 + 1.5 * x1 + x2

    return y, np.column_stack([x1, x2.astype(float)])


def generate_population(spec: PopulationSpec, seed: Optional[int] = None) -> Population:
    """
    Generate a population from a mixture spec.

    Each block is drawn from its own child stream of the seed, so a block's
    units do not depend on the sizes of the blocks before it.
    """
    seed = spec.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(len(spec.mixture))

    ys, xs, gens = [np.empty(0)], [np.empty((0, 2))], [np.empty(0, dtype=object)]
    for (gen, _), count, child in zip(spec.mixture, spec.block_sizes(), children):
        y, x = _generate_block(gen, count, np.random.default_rng(child))
        ys.append(y)
        xs.append(x)
        gens.append(np.full(count, gen, dtype=object))

    pop = Population(
        y=np.concatenate(ys),
        x=np.vstack(xs),
        generator=np.concatenate(gens),
        spec=spec,
        seed=seed,
    )
    logger.debug(f"Generated population: N={pop.size}, seed={seed}")
    return pop


def population_from_arrays(y, x, generator: str = 'FIXED') -> Population:
    """Wrap given outcome and feature arrays as a population."""
    y = np.array(y, dtype=float)
    x = np.array(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise PopulationError('population values must be finite')
    spec = PopulationSpec(size=len(y), mixture=(('LIN', 1.0),))
    return Population(
        y=y, x=x,
        generator=np.full(len(y), generator, dtype=object),
        spec=spec,
        meta={'source': generator},
    )


def _sidecar(path: Path) -> Path:
    return path.with_suffix('.json')


def save_population(pop: Population, path) -> Path:
    """Write id, x1, x2, y, generator columns plus a JSON sidecar with spec and seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        'id': np.arange(pop.size),
        'x1': pop.x[:, 0],
        'x2': pop.x[:, 1],
        'y': pop.y,
        'generator': pop.generator,
    })
    frame.to_csv(path, index=False, float_format='%.17g')
    with open(_sidecar(path), 'w') as f:
        json.dump({'spec': pop.spec.to_dict(), 'seed': pop.seed}, f, indent=2)
    logger.info(f"Saved population ({pop.size} units) to {path}")
    return path


def load_population(path) -> Population:
    path = Path(path)
    if not path.exists():
        raise PopulationError(f'population file not found: {path}')
    frame = pd.read_csv(path)
    missing = {'id', 'x1', 'x2', 'y', 'generator'} - set(frame.columns)
    if missing:
        raise PopulationError(f'population file missing columns: {sorted(missing)}')

    meta = {}
    if _sidecar(path).exists():
        with open(_sidecar(path)) as f:
            meta = json.load(f)
    spec = PopulationSpec.from_dict(meta['spec']) if 'spec' in meta else \
        PopulationSpec(size=len(frame), mixture=(('LIN', 1.0),))

    frame = frame.sort_values('id')
    return Population(
        y=frame['y'].to_numpy(dtype=float),
        x=frame[['x1', 'x2']].to_numpy(dtype=float),
        generator=frame['generator'].to_numpy(dtype=object),
        spec=spec,
        seed=meta.get('seed'),
    )
