import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import floats, integers

from src.population import (PopulationError, PopulationSpec, generate_population, load_population,
                            population_from_arrays, save_population)


@given(integers(min_value=0, max_value=5000), floats(min_value=0.0, max_value=1.0))
@settings(deadline=None)
def test_block_sizes_sum_to_population_size(size, share):
    spec = PopulationSpec(size=size, mixture=(('M1', share), ('M2', 1.0 - share)))
    sizes = spec.block_sizes()
    assert sum(sizes) == size
    assert all(k >= 0 for k in sizes)
    assert abs(sizes[0] - share * size) < 1.0


def test_generation_is_reproducible():
    spec = PopulationSpec(size=200)
    a = generate_population(spec, seed=3)
    b = generate_population(spec, seed=3)
    c = generate_population(spec, seed=4)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.x, b.x)
    assert not np.array_equal(a.y, c.y)


def test_mixture_blocks_in_listed_order():
    pop = generate_population(PopulationSpec(size=11, mixture=(('M2', 0.5), ('M1', 0.5))), seed=0)
    assert list(pop.generator[:6]) == ['M2'] * 6
    assert list(pop.generator[6:]) == ['M1'] * 5


def test_linear_generator_is_noiseless():
    pop = generate_population(PopulationSpec(size=300, mixture=(('LIN', 1.0),)), seed=5)
    np.testing.assert_allclose(pop.y, 0.5 + 1.5 * pop.x[:, 0] + pop.x[:, 1])


def test_features_have_the_stated_marginals():
    pop = generate_population(PopulationSpec(size=20000), seed=9)
    x1, x2 = pop.x[:, 0], pop.x[:, 1]
    assert np.all(x2 >= 0) and np.all(x2 == np.round(x2))
    assert abs(x1.mean()) < 0.05
    assert abs(x2.mean() - 5.0) < 0.1


def test_m2_noise_has_positive_mean():
    pop = generate_population(PopulationSpec(size=20000, mixture=(('M2', 1.0),)), seed=2)
    eps = pop.y - (0.5 + 1.5 * pop.x[:, 0] + pop.x[:, 1])
    # E(z^2) = 1
    assert abs(eps.mean() - 1.0) < 0.05


def test_m1_residual_regime_means():
    pop = generate_population(PopulationSpec(size=100000, mixture=(('M1', 1.0),)), seed=31)
    x2 = pop.x[:, 1]
    eps = pop.y - pop.x[:, 0] - 0.5 * x2
    regimes = (x2 < 3, (x2 >= 3) & (x2 < 7), x2 >= 7)
    for mask, mean in zip(regimes, (0.0, -2.0, 2.0)):
        band = 3 * eps[mask].std() / np.sqrt(mask.sum())
        assert abs(eps[mask].mean() - mean) <= band


def test_m2_outcome_mean():
    pop = generate_population(PopulationSpec(size=100000, mixture=(('M2', 1.0),)), seed=32)
    # 0.5 + E(x2) + E(z^2)
    assert abs(pop.y.mean() - 6.5) <= 3 * pop.y.std() / np.sqrt(pop.size)


def test_empty_population():
    pop = generate_population(PopulationSpec(size=0), seed=1)
    assert pop.size == 0
    assert pop.y.shape == (0,)
    assert pop.x.shape == (0, 2)


def test_population_is_read_only(pop):
    with pytest.raises(ValueError):
        pop.y[0] = 0.0


def test_invalid_specs_are_rejected():
    with pytest.raises(PopulationError):
        PopulationSpec(size=-1)
    with pytest.raises(PopulationError):
        PopulationSpec(size=10, mixture=(('M3', 1.0),))
    with pytest.raises(PopulationError):
        PopulationSpec(size=10, mixture=(('M1', 0.5), ('M2', 0.6)))
    with pytest.raises(PopulationError):
        PopulationSpec(size=10, mixture=())


def test_population_from_arrays():
    y = np.array([1.0, 2.0, 3.0])
    pop = population_from_arrays(y, np.zeros(3))
    assert pop.size == 3
    assert pop.x.shape == (3, 1)
    y[0] = 10.0
    assert pop.y[0] == 1.0

    with pytest.raises(PopulationError):
        population_from_arrays([1.0, np.nan], np.zeros(2))


def test_saved_population_loads_back(tmp_path):
    pop = generate_population(PopulationSpec(size=50), seed=21)
    path = save_population(pop, tmp_path / 'pop.csv')
    assert (tmp_path / 'pop.json').exists()

    loaded = load_population(path)
    np.testing.assert_array_equal(loaded.y, pop.y)
    np.testing.assert_array_equal(loaded.x, pop.x)
    assert loaded.spec == pop.spec
    assert loaded.seed == 21


def test_load_population_errors(tmp_path):
    with pytest.raises(PopulationError):
        load_population(tmp_path / 'missing.csv')

    bad = tmp_path / 'bad.csv'
    bad.write_text('id,y\n0,1.0\n')
    with pytest.raises(PopulationError):
        load_population(bad)
