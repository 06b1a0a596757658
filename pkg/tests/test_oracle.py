import numpy as np
import pandas as pd
import pytest

from config import Config
from src import oracle
from src.design import SamplingDesign, calibrate_poisson
from src.learners import LearnerKind, LearnerSpec
from src.oracle import (EnumerationError, enumerate_design, full_support_estimates,
                        measure_oob_gap, run_verification_suite, verify_e2srb_identity,
                        verify_intro_identity, verify_phi2, verify_quadratic_expansion,
                        verify_subsample_identity, verify_theorem1, write_reports)
from src.population import PopulationSpec, generate_population, population_from_arrays
from src.split import SplitDesign
from src.srb import run_splits, srb_predict

CONSTANT = LearnerSpec(kind=LearnerKind.CONSTANT, constant=4.0)
MEAN = LearnerSpec(kind=LearnerKind.MEAN)
OLS = LearnerSpec(kind=LearnerKind.OLS)


@pytest.fixture(scope='module')
def twice_srs():
    """N=8, n=4, n1=2."""
    pop = generate_population(PopulationSpec(size=8), seed=101)
    return enumerate_design(pop, SamplingDesign.srs(8, 4), SplitDesign.fixed(2))


@pytest.fixture(scope='module')
def poisson_table():
    pop = generate_population(PopulationSpec(size=6), seed=202)
    pi = calibrate_poisson(pop.y, 3, alpha=-0.1)
    return enumerate_design(pop, SamplingDesign.poisson(pi), SplitDesign.fraction(0.5))


def test_intro_identity_worked_example():
    pop = population_from_arrays([1.0, 2.0, 3.0, 4.0, 5.0], np.zeros(5))
    report = verify_intro_identity(pop, 2)
    assert report.passed
    assert report.details['expected_loss'] == pytest.approx(11.25, abs=1e-9)
    assert report.details['S2'] == pytest.approx(2.5)


def test_intro_identity_random_vectors():
    rng = np.random.default_rng(3)
    for _ in range(20):
        N = int(rng.integers(3, 9))
        n = int(rng.integers(1, N))
        pop = population_from_arrays(rng.normal(0.0, 3.0, N), np.zeros(N))
        assert verify_intro_identity(pop, n).passed


def test_intro_identity_limits():
    pop = population_from_arrays(np.arange(11.0), np.zeros(11))
    with pytest.raises(EnumerationError):
        verify_intro_identity(pop, 3)
    with pytest.raises(EnumerationError):
        verify_intro_identity(population_from_arrays(np.arange(4.0), np.zeros(4)), 4)


def test_table_shape_and_normalization(twice_srs):
    assert len(twice_srs.samples) == 70
    assert len(twice_srs.q) == 70 * 6
    assert len(twice_srs.train_groups) == 28
    assert twice_srs.excluded_mass == 0.0
    assert twice_srs.check_normalization() <= 1e-12
    assert twice_srs.f.sum() == pytest.approx(1.0, abs=1e-12)


def test_pi2_closed_form_under_twice_srs(twice_srs):
    pi2 = twice_srs.pi2
    outside = ~twice_srs.train_groups
    np.testing.assert_allclose(pi2[outside], 2 / 6, atol=1e-14)
    assert np.all(np.isnan(pi2[twice_srs.train_groups]))


@pytest.mark.parametrize('learner', [CONSTANT, MEAN, OLS], ids=lambda spec: spec.name)
def test_subsample_identity(twice_srs, learner):
    report = verify_subsample_identity(twice_srs, learner)
    assert report.passed, report.line()


@pytest.mark.parametrize('learner', [MEAN, OLS], ids=lambda spec: spec.name)
def test_theorem1_exact_srb(twice_srs, learner):
    report = verify_theorem1(twice_srs, learner)
    assert report.passed, report.line()
    assert report.details['risk'] > 0


def test_cross_risk_corollary(twice_srs):
    report = verify_theorem1(twice_srs, MEAN, OLS)
    assert report.passed, report.line()


@pytest.mark.parametrize('learner', [MEAN, OLS], ids=lambda spec: spec.name)
def test_e2srb_identity(twice_srs, learner):
    assert verify_e2srb_identity(twice_srs, learner).passed


def test_phi2_under_twice_srs():
    pop = generate_population(PopulationSpec(size=10, mixture=(('M2', 1.0),)), seed=5)
    report = verify_phi2(enumerate_design(pop, SamplingDesign.srs(10, 5), SplitDesign.fixed(3)))
    assert report.passed, report.line()
    assert report.tolerance == Config.EXACT_TOL
    assert report.max_abs_deviation <= 1e-12
    assert report.details['p1'] == pytest.approx(0.6)
    assert report.details['p1_spread'] <= 1e-12


def test_phi2_gate_fails_on_a_wrong_closed_form(twice_srs, monkeypatch):
    monkeypatch.setattr(oracle, 'phi2', lambda pi, p1: pi * (1 - p1))
    report = verify_phi2(twice_srs)
    assert not report.passed
    assert report.status == 'FAIL'
    assert report.max_abs_deviation == pytest.approx(1 / 3 - 1 / 4)


def test_phi2_under_poisson_is_measured(poisson_table):
    assert poisson_table.excluded_mass > 0
    assert poisson_table.check_normalization() <= 1e-12
    report = verify_phi2(poisson_table)
    assert report.tolerance == float('inf')
    assert report.passed
    assert report.details['p1_spread'] > 0
    assert report.max_abs_deviation > 1e-6


def test_tfold_enumeration():
    pop = generate_population(PopulationSpec(size=7), seed=9)
    enum = enumerate_design(pop, SamplingDesign.srs(7, 5), SplitDesign.tfold(2))
    assert enum.check_normalization() <= 1e-12
    assert verify_subsample_identity(enum, MEAN).passed
    assert verify_theorem1(enum, OLS).passed


def test_oob_gap_is_measured(twice_srs):
    mc, exact = full_support_estimates(twice_srs, MEAN)
    assert mc.shape == exact.shape == (70,)
    report = measure_oob_gap(twice_srs, MEAN)
    assert report.passed
    assert report.max_abs_deviation == pytest.approx(np.abs(mc - exact).max())


def test_enumeration_limits():
    pop = generate_population(PopulationSpec(size=11), seed=1)
    with pytest.raises(EnumerationError):
        enumerate_design(pop, SamplingDesign.srs(11, 4), SplitDesign.fixed(2))
    pop9 = generate_population(PopulationSpec(size=9), seed=1)
    with pytest.raises(EnumerationError):
        enumerate_design(pop9, SamplingDesign.poisson(np.full(9, 0.5)), SplitDesign.fixed(1))
    with pytest.raises(EnumerationError):
        enumerate_design(pop9, SamplingDesign.srs(8, 4), SplitDesign.fixed(2))


def test_quadratic_expansion(pop, sample, split_design):
    rings = [
        srb_predict(run_splits(spec, pop, sample, split_design, 40, np.random.default_rng(3)))
        for spec in (OLS, MEAN, LearnerSpec(kind=LearnerKind.KNN))
    ]
    assert verify_quadratic_expansion(pop, rings, [0.2, 0.3, 0.5]).passed


def test_verification_suite_passes(tmp_path):
    reports = run_verification_suite(max_n=6, seed=11)
    failed = [r.line() for r in reports if not r.passed]
    assert not failed
    names = {r.identity.split('[')[0] for r in reports}
    assert {'intro', 'subsample', 'theorem1', 'e2srb', 'phi2', 'oob_gap',
            'quadratic_expansion'} <= names

    path = write_reports(reports, tmp_path / 'verify_report.csv')
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['identity', 'max_abs_deviation', 'tolerance', 'status']
    assert set(frame['status']) == {'PASS'}
    assert len(frame) == len(reports)


def test_verification_suite_rejects_tiny_limit():
    with pytest.raises(EnumerationError):
        run_verification_suite(max_n=3)


def test_verification_suite_at_the_smallest_limit():
    reports = run_verification_suite(max_n=4, seed=2)
    assert all(r.passed for r in reports), [r.line() for r in reports if not r.passed]
