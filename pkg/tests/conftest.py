import json
from pathlib import Path

import numpy as np
import pytest

from src.design import draw_srs_wor
from src.learners import LearnerKind, LearnerSpec
from src.population import PopulationSpec, generate_population
from src.split import SplitDesign
from src.srb import run_splits


QUICK_CONFIG = json.loads((Path(__file__).resolve().parent.parent / "config" / "quick.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pop():
    return generate_population(PopulationSpec(size=60), seed=11)


@pytest.fixture
def sample(pop, rng):
    return draw_srs_wor(pop.size, 20, rng)


@pytest.fixture
def split_design():
    return SplitDesign.fraction(0.7)


@pytest.fixture
def ols():
    return LearnerSpec(kind=LearnerKind.OLS)


@pytest.fixture
def knn():
    return LearnerSpec(kind=LearnerKind.KNN)


@pytest.fixture
def ols_run(ols, pop, sample, split_design):
    return run_splits(ols, pop, sample, split_design, 40, np.random.default_rng(1))


@pytest.fixture
def knn_run(knn, pop, sample, split_design):
    return run_splits(knn, pop, sample, split_design, 40, np.random.default_rng(1))


@pytest.fixture
def quick_config():
    return json.loads(json.dumps(QUICK_CONFIG))


@pytest.fixture
def quick_config_file(tmp_path, quick_config):
    path = tmp_path / 'quick.json'
    with open(path, 'w') as f:
        json.dump({**quick_config, "output_dir": str(tmp_path / 'out')}, f)
    return path
