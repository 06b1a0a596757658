import numpy as np
import pytest
from scipy.special import expit

from config import Config
from src.design import (Sample, SamplingDesign, SamplingError, SamplingKind, calibrate_poisson,
                        cv_pi, draw_poisson, draw_srs_wor, save_inclusion_probabilities)
from src.population import PopulationSpec, generate_population


def test_srs_draw_has_fixed_size(rng):
    s = draw_srs_wor(50, 12, rng)
    assert s.size == 12
    assert np.all(np.diff(s.indices) > 0)
    assert s.design.kind == SamplingKind.SRS_WOR
    np.testing.assert_allclose(s.design.pi, 12 / 50)


def test_srs_inclusion_frequencies(rng):
    counts = np.zeros(10)
    for _ in range(4000):
        counts[draw_srs_wor(10, 3, rng).indices] += 1
    np.testing.assert_allclose(counts / 4000, 0.3, atol=0.04)


def test_srs_edge_sizes(rng):
    assert draw_srs_wor(5, 0, rng).size == 0
    assert draw_srs_wor(5, 5, rng).size == 5
    with pytest.raises(SamplingError):
        draw_srs_wor(5, 6, rng)


def test_holdout_is_complement(rng):
    s = draw_srs_wor(30, 8, rng)
    assert set(s.holdout) | set(s.indices) == set(range(30))
    assert not set(s.holdout) & set(s.indices)


def test_sample_validation():
    design = SamplingDesign.srs(10, 3)
    with pytest.raises(SamplingError):
        Sample(indices=np.array([1, 1, 2]), design=design)
    with pytest.raises(SamplingError):
        Sample(indices=np.array([1, 2]), design=design)
    with pytest.raises(SamplingError):
        Sample(indices=np.array([1, 2, 10]), design=design)
    with pytest.raises(SamplingError):
        SamplingDesign.poisson([0.5, 1.2])


@pytest.fixture(scope='module')
def scaled_population():
    return generate_population(PopulationSpec(size=Config.DEFAULT_N), seed=2024)


@pytest.mark.parametrize('alpha', Config.POISSON_ALPHAS)
def test_calibration_hits_expected_size(scaled_population, alpha):
    pi = calibrate_poisson(scaled_population.y, Config.DEFAULT_SAMPLE_SIZE, alpha)
    assert abs(pi.sum() - Config.DEFAULT_SAMPLE_SIZE) <= 1e-10
    assert np.all(pi > 0) and np.all(pi <= 1)


def test_cv_pi_decreases_in_alpha(scaled_population):
    cvs = [cv_pi(calibrate_poisson(scaled_population.y, Config.DEFAULT_SAMPLE_SIZE, alpha))
           for alpha in Config.POISSON_ALPHAS]
    # alphas are listed as 1, -0.1, -1
    assert cvs[0] < cvs[1] < cvs[2]
    for cv, target in zip(cvs, (0.15, 0.30, 0.45)):
        assert abs(cv - target) <= 0.10


def test_calibration_clamps_at_one():
    y = np.array([0.0, 0.0, 0.0, 0.0, 50.0])
    pi = calibrate_poisson(y, 4, alpha=0.0)
    assert pi[-1] == 1.0
    np.testing.assert_allclose(pi[:4], 0.75, atol=1e-12)
    assert abs(pi.sum() - 4) <= 1e-12


def test_calibration_of_a_constant_outcome():
    pi = calibrate_poisson(np.full(10, 3.0), 4, alpha=-1.0)
    np.testing.assert_allclose(pi, 0.4, rtol=0, atol=1e-12)


def test_calibration_matches_a_grid_search():
    y = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    pi = calibrate_poisson(y, 3, alpha=-0.1)
    assert abs(pi.sum() - 3) <= 1e-10

    base = expit(-0.1 + 0.5 * y)
    grid = np.exp(np.linspace(-6.0, 2.0, 400001))
    totals = np.minimum(1.0, base[np.newaxis, :] / grid[:, np.newaxis]).sum(axis=1)
    c = grid[np.argmin(np.abs(totals - 3))]
    np.testing.assert_allclose(pi, np.minimum(1.0, base / c), rtol=0, atol=1e-4)


def test_calibration_is_monotone_in_y(rng):
    y = rng.normal(3.0, 2.0, 40)
    pi = calibrate_poisson(y, 10, alpha=-0.1)
    order = np.argsort(y)
    assert np.all(np.diff(pi[order]) >= 0)


def test_calibration_rejects_infeasible_sizes():
    y = np.arange(5.0)
    with pytest.raises(SamplingError):
        calibrate_poisson(y, 5, 0.0)
    with pytest.raises(SamplingError):
        calibrate_poisson(y, 0, 0.0)
    with pytest.raises(SamplingError):
        calibrate_poisson(np.array([1.0, np.inf, 2.0]), 1, 0.0)


def test_poisson_draw_extremes(rng):
    assert draw_poisson(np.ones(7), rng).size == 7
    assert draw_poisson(np.zeros(7), rng).size == 0


def test_poisson_inclusion_frequencies(rng):
    pi = np.array([0.1, 0.5, 0.9, 0.3])
    counts = np.zeros(4)
    for _ in range(4000):
        counts[draw_poisson(pi, rng).indices] += 1
    np.testing.assert_allclose(counts / 4000, pi, atol=0.04)


def test_cv_pi():
    assert cv_pi(np.full(8, 0.2)) == 0.0
    assert cv_pi([0.1, 0.3]) == pytest.approx(0.5)
    with pytest.raises(SamplingError):
        cv_pi([])


def test_save_inclusion_probabilities(tmp_path):
    path = save_inclusion_probabilities([0.1, 0.2], tmp_path / 'pi.csv')
    assert path.read_text().splitlines()[0] == 'id,pi'
