"""
Simulation harness for design-based ensemble prediction.

Each replicate generates a fresh population, draws one sample, fits every
learner on one shared split sequence and evaluates the selected, optimally
mixed and robustly mixed SRB predictors together with the two hypothetical
benchmarks that know y on R. Replicates are independent and run in parallel;
their streams come from SeedSequence(master_seed).spawn(B), so the output
does not depend on the number of workers.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config import Config
from src.design import SamplingKind, calibrate_poisson, cv_pi, draw_poisson, draw_srs_wor
from src.ensemble import (MixWeights, Provenance, minimise_on_simplex, optimal_weights,
                          risk_matrix, robust_weights, srb_select)
from src.learners import LearnerKind, LearnerSpec
from src.population import Population, PopulationSpec, generate_population
from src.split import SplitDesign, SplitKind, WeightMode, draw_split_sequence
from src.srb import (UncoveredUnitError, cv_msep, fit_splits, mix_runs, residual_msep, risk_estimate,
                     srb_predict, true_msep, true_risk_matrix)

logger = logging.getLogger(__name__)

PREDICTORS = ('selected', 'optimal', 'robust', 'hyp_selected', 'hyp_optimal')
ESTIMATES = ('true', 'design', 'cv', 'residual')


class ConfigError(ValueError):
    """Represents a malformed experiment configuration"""


def _field(data: dict, name: str, convert, default=None, required: bool = False):
    if name not in data or data[name] is None:
        if required:
            raise ConfigError(f'{name}: missing')
        return default
    try:
        return convert(data[name])
    except (TypeError, ValueError) as e:
        raise ConfigError(f'{name}: {e}') from e


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSpec
    replicates: int = Config.DEFAULT_REPLICATES
    sampling: SamplingKind = SamplingKind.SRS_WOR
    sample_size: int = Config.DEFAULT_SAMPLE_SIZE
    alpha: Optional[float] = None
    split: SplitDesign = SplitDesign.fraction(Config.DEFAULT_TRAIN_FRACTION)
    splits: int = Config.DEFAULT_SPLITS
    learners: tuple = ()
    weight_mode: Optional[WeightMode] = None
    seed: int = Config.DEFAULT_SEED
    output_dir: str = 'results'
    threads: Optional[int] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError('replicates: must be >= 1')
        if self.splits < 1:
            raise ConfigError('split.splits: must be >= 1')
        if not self.learners:
            raise ConfigError('learners: at least one learner is required')
        if len(self.learners) > Config.MAX_ENSEMBLE_SIZE:
            raise ConfigError(f'learners: at most {Config.MAX_ENSEMBLE_SIZE} learners are supported')
        names = [spec.name for spec in self.learners]
        if len(set(names)) != len(names):
            raise ConfigError(f'learners: names must be unique, got {names}')
        if not 0 < self.sample_size < self.population.size:
            raise ConfigError('sampling.sample_size: must lie strictly between 0 and population.size')
        if self.sampling == SamplingKind.POISSON and self.alpha is None:
            raise ConfigError('sampling.alpha: required for Poisson sampling')
        if self.weight_mode == WeightMode.EXACT_PI2 and self.sampling != SamplingKind.SRS_WOR:
            raise ConfigError('weight_mode: EXACT_PI2 needs SRS_WOR sampling')
        if self.split.kind == SplitKind.TFOLD and self.splits % self.split.folds:
            raise ConfigError('split.splits: must be a multiple of split.folds')

    @property
    def names(self) -> tuple:
        return tuple(spec.name for spec in self.learners)

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError('config: expected a JSON object')

        pop = data.get('population') or {}
        try:
            population = PopulationSpec(
                size=_field(pop, 'size', int, Config.DEFAULT_N),
                mixture=tuple(tuple(item) for item in pop.get('mixture', Config.DEFAULT_MIXTURE)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f'population: {e}') from e

        sampling = data.get('sampling') or {}
        split = data.get('split') or {}
        kind = _field(split, 'kind', SplitKind, SplitKind.SRS_SPLIT)
        try:
            if kind == SplitKind.TFOLD:
                split_design = SplitDesign.tfold(_field(split, 'folds', int, required=True))
            elif 'train_size' in split:
                split_design = SplitDesign.fixed(_field(split, 'train_size', int))
            else:
                split_design = SplitDesign.fraction(
                    _field(split, 'train_fraction', float, Config.DEFAULT_TRAIN_FRACTION))
        except ValueError as e:
            raise ConfigError(f'split: {e}') from e

        raw_learners = data.get('learners') or [
            {'kind': 'OLS'}, {'kind': 'RANDOM_FOREST'}, {'kind': 'KNN'}]
        specs = []
        for k, item in enumerate(raw_learners):
            try:
                specs.append(LearnerSpec.from_dict(dict(item)))
            except (TypeError, ValueError) as e:
                raise ConfigError(f'learners[{k}]: {e}') from e

        return cls(
            population=population,
            replicates=_field(data, 'replicates', int, Config.DEFAULT_REPLICATES),
            sampling=_field(sampling, 'kind', SamplingKind, SamplingKind.SRS_WOR),
            sample_size=_field(sampling, 'sample_size', int, Config.DEFAULT_SAMPLE_SIZE),
            alpha=_field(sampling, 'alpha', float),
            split=split_design,
            splits=_field(split, 'splits', int, Config.DEFAULT_SPLITS),
            learners=tuple(specs),
            weight_mode=_field(data, 'weight_mode', WeightMode),
            seed=_field(data, 'seed', int, Config.DEFAULT_SEED),
            output_dir=_field(data, 'output_dir', str, 'results'),
            threads=_field(data, 'threads', int),
        )

    @classmethod
    def from_json(cls, path) -> 'ExperimentConfig':
        path = Path(path)
        if not path.exists():
            raise ConfigError(f'config: file not found: {path}')
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f'config: invalid JSON in {path}: {e}') from e
        return cls.from_dict(data)


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    names: tuple
    sample_size: int
    holdout_size: int
    cv_pi: float
    splits: int
    votes: np.ndarray
    selected: int
    optimal: MixWeights
    robust: MixWeights
    hyp_selected: int
    hypothetical: MixWeights
    msep: dict = field(default_factory=dict)

    def __post_init__(self):
        for predictor, values in self.msep.items():
            for estimate, value in values.items():
                if not np.isfinite(value):
                    raise ValueError(f'{predictor}_{estimate} is not finite')

    def to_row(self) -> dict:
        row = {
            'replicate': self.replicate,
            'sample_size': self.sample_size,
            'holdout_size': self.holdout_size,
            'cv_pi': self.cv_pi,
            'splits': self.splits,
            'selected': self.names[self.selected],
            'hyp_selected': self.names[self.hyp_selected],
        }
        for k, name in enumerate(self.names):
            row[f'vote_{name}'] = self.votes[k]
            row[f'w_opt_{name}'] = self.optimal.w[k]
            row[f'w_rob_{name}'] = self.robust.w[k]
            row[f'w_hyp_{name}'] = self.hypothetical.w[k]
        for predictor in PREDICTORS:
            for estimate in ESTIMATES:
                row[f'{predictor}_{estimate}'] = self.msep[predictor][estimate]
        return row


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    failures: list

    @property
    def replicates(self) -> pd.DataFrame:
        return pd.DataFrame([record.to_row() for record in self.records])

    @property
    def summary(self) -> pd.DataFrame:
        return summarize(self.replicates)


def hypothetical_benchmarks(runs, pop: Population, rings=None):
    """
    Selection by the true total squared error over R and weights minimising
    the true quadratic; both use y on R and exist only in simulation.
    """
    rings = [srb_predict(run) for run in runs] if rings is None else rings
    D_true = true_risk_matrix(rings, pop)
    selection = int(np.argmin(np.diag(D_true)))
    weights = MixWeights(w=minimise_on_simplex(D_true), provenance=Provenance.HYPOTHETICAL,
                         names=tuple(run.name for run in runs))
    return selection, weights


def _covering_splits(sample, design: SplitDesign, T: int, seq: np.random.SeedSequence):
    """
    Draw the shared split sequence, doubling T while some unit of s never
    falls in a test set.
    """
    streams = seq.spawn(Config.SPLIT_RETRIES + 1)
    for attempt, stream in enumerate(streams):
        T_eff = T * 2 ** attempt
        splits = draw_split_sequence(sample, design, T_eff, np.random.default_rng(stream))
        covered = np.zeros(sample.population_size, dtype=bool)
        for split in splits:
            covered[split.test] = True
        uncovered = sample.indices[~covered[sample.indices]]
        if uncovered.size == 0:
            return splits
        logger.warning(f"Unit {uncovered[0]} never out-of-bag with T={T_eff}; retrying with T={2 * T_eff}")
    raise UncoveredUnitError(int(uncovered[0]))


def _evaluate(run, pop: Population) -> dict:
    ring = srb_predict(run)
    s = run.sample.indices
    return {
        'true': true_msep(ring, pop),
        'design': risk_estimate(run, ring).standardized,
        'cv': cv_msep(run),
        'residual': residual_msep(ring.tilde[s], pop.y[s]),
    }


def run_replicate(config: ExperimentConfig, replicate: int,
                  seq: np.random.SeedSequence) -> ReplicateRecord:
    pop_seq, sample_seq, split_seq, learner_seq = seq.spawn(4)

    pop = generate_population(config.population, seed=int(pop_seq.generate_state(1)[0]))
    sample_rng = np.random.default_rng(sample_seq)
    if config.sampling == SamplingKind.SRS_WOR:
        sample = draw_srs_wor(pop.size, config.sample_size, sample_rng)
    else:
        pi = calibrate_poisson(pop.y, config.sample_size, config.alpha)
        sample = draw_poisson(pi, sample_rng)

    splits = _covering_splits(sample, config.split, config.splits, split_seq)
    seeds = learner_seq.generate_state(len(config.learners))
    specs = [
        spec.with_seed(seed) if spec.kind == LearnerKind.RANDOM_FOREST else spec
        for spec, seed in zip(config.learners, seeds)
    ]
    runs = [fit_splits(spec, pop, sample, splits, config.split, config.weight_mode) for spec in specs]
    rings = [srb_predict(run) for run in runs]

    selector = srb_select(runs)
    optimal = optimal_weights(risk_matrix(runs, rings))
    robust = robust_weights(runs, rings)
    hyp_selected, hypothetical = hypothetical_benchmarks(runs, pop, rings)

    predictors = {
        'selected': runs[selector.selected],
        'optimal': mix_runs(runs, optimal.w, name='optimal'),
        'robust': mix_runs(runs, robust.w, name='robust'),
        'hyp_selected': runs[hyp_selected],
        'hyp_optimal': mix_runs(runs, hypothetical.w, name='hyp_optimal'),
    }
    msep = {name: _evaluate(run, pop) for name, run in predictors.items()}

    logger.debug(f"Replicate {replicate}: n={sample.size}, selected={selector.selected_name}")
    return ReplicateRecord(
        replicate=replicate,
        names=config.names,
        sample_size=sample.size,
        holdout_size=pop.size - sample.size,
        cv_pi=cv_pi(sample.design.pi),
        splits=len(splits),
        votes=selector.proportions,
        selected=selector.selected,
        optimal=optimal,
        robust=robust,
        hyp_selected=hyp_selected,
        hypothetical=hypothetical,
        msep=msep,
    )


def _safe_replicate(config: ExperimentConfig, replicate: int, seq: np.random.SeedSequence):
    try:
        return replicate, run_replicate(config, replicate, seq), None
    except (ValueError, np.linalg.LinAlgError) as e:
        return replicate, None, f'{type(e).__name__}: {e}'


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    threads = threads or config.threads or Config.THREADS
    logger.info(f"Running {config.replicates} replicates "
                f"({config.sampling.value}, n={config.sample_size}, T={config.splits}, "
                f"learners={','.join(config.names)}) on {threads} worker(s)")

    seqs = np.random.SeedSequence(config.seed).spawn(config.replicates)
    outcomes = Parallel(n_jobs=threads)(
        delayed(_safe_replicate)(config, b, seq) for b, seq in enumerate(seqs)
    )

    records, failures = [], []
    for replicate, record, error in outcomes:
        if record is None:
            logger.warning(f"Replicate {replicate} excluded: {error}")
            failures.append((replicate, error))
        else:
            records.append(record)
    if not records:
        raise ValueError(f'all {config.replicates} replicates failed')

    logger.info(f"Finished: {len(records)} replicates kept, {len(failures)} excluded")
    return ExperimentResult(config=config, records=records, failures=failures)


def learner_names(replicates: pd.DataFrame) -> list:
    return [col[len('vote_'):] for col in replicates.columns if col.startswith('vote_')]


def summarize(replicates: pd.DataFrame) -> pd.DataFrame:
    """
    Means over replicates in two long-format tables: 'selection' (per learner
    shares and average weights) and 'msep' (true MSEP and its estimates per
    selected, optimal and robust predictor).
    """
    names = learner_names(replicates)
    rows = []

    def add(table, row, column, value):
        rows.append({'table': table, 'row': row, 'column': column, 'value': float(value)})

    for name in names:
        add('selection', 'Hypothetical selected', name, (replicates['hyp_selected'] == name).mean())
        add('selection', 'Hypothetical mixed optimal', name, replicates[f'w_hyp_{name}'].mean())
        add('selection', 'Actual selected', name, (replicates['selected'] == name).mean())
        add('selection', 'Actual mixed optimal', name, replicates[f'w_opt_{name}'].mean())
        add('selection', 'Actual mixed robust', name, replicates[f'w_rob_{name}'].mean())

    layout = [
        ('Average true', ('selected_true', 'optimal_true', 'robust_true')),
        ('Hypothetical true', ('hyp_selected_true', 'hyp_optimal_true', None)),
        ('Design hypothetical', ('hyp_selected_design', 'hyp_optimal_design', None)),
        ('Design actual', ('selected_design', 'optimal_design', 'robust_design')),
        ('Model CV-based', ('selected_cv', 'optimal_cv', 'robust_cv')),
        ('Model residual-based', ('selected_residual', 'optimal_residual', 'robust_residual')),
    ]
    for row, columns in layout:
        for column, source in zip(('Selected', 'Optimal', 'Robust'), columns):
            add('msep', row, column, np.nan if source is None else replicates[source].mean())

    return pd.DataFrame(rows, columns=['table', 'row', 'column', 'value'])


def format_tables(summary: pd.DataFrame) -> str:
    """Both summary tables as aligned text."""
    blocks = []
    for table, title in (('selection', 'Selection proportions and average mixing weights'),
                         ('msep', 'Mean squared error of prediction (D/|R|) and estimates')):
        part = summary[summary['table'] == table]
        if part.empty:
            continue
        wide = part.pivot(index='row', columns='column', values='value')
        wide = wide.reindex(index=list(dict.fromkeys(part['row'])),
                            columns=list(dict.fromkeys(part['column'])))
        blocks.append(f"{title}\n{wide.to_string(float_format=lambda v: f'{v:.3f}', na_rep='-')}")
    return '\n\n'.join(blocks)


def write_outputs(result: ExperimentResult, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    replicates = result.replicates
    replicates_path = out_dir / Config.REPLICATES_FILE
    summary_path = out_dir / Config.SUMMARY_FILE
    replicates.to_csv(replicates_path, index=False, float_format=Config.FLOAT_FORMAT)
    summarize(replicates).to_csv(summary_path, index=False, float_format=Config.FLOAT_FORMAT)
    logger.info(f"Wrote {replicates_path} and {summary_path}")
    return replicates_path, summary_path
