import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densityctl.control import DensityController
from densityctl.fields import von_mises_1d
from densityctl.grid import Grid1D, Grid2D
from densityctl.micro import (
    AgentPopulation,
    HeterogeneousOscillator,
    NoDrift,
    OptimalVelocityTraffic,
    TerrainGradient,
    confine,
    drift_bound_report,
    optimal_velocity,
    run_closed_loop_micro,
    sample_field,
    sample_velocity,
    step_agents,
    stream,
)

import oracles
from frozen import V_OPT_BETA


# -- sampling ------------------------------------------------------------------


def test_constant_field_is_sampled_exactly(g1p, g2r):
    x = np.random.default_rng(0).uniform(-np.pi, np.pi, 50)
    np.testing.assert_allclose(sample_field(np.full(200, 2.5), x, g1p), 2.5)
    y = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    u = sample_velocity(np.stack([np.full(g2r.shape, 1.0), np.full(g2r.shape, -2.0)]), y, g2r)
    assert u.shape == (50, 2)
    np.testing.assert_allclose(u, [[1.0, -2.0]] * 50)


def test_sine_is_interpolated_to_second_order():
    errs = []
    x = np.random.default_rng(2).uniform(-np.pi, np.pi, 200)
    for n in (100, 200, 400):
        g = Grid1D(np.pi, n)
        errs.append(np.max(np.abs(sample_field(np.sin(g.centers), x, g) - np.sin(x))))
        assert errs[-1] <= g.dx**2 / 8 + 1e-15
    assert errs[0] / errs[-1] > 10


def test_cell_centre_returns_stored_value(g1r, g2p):
    vals = np.random.default_rng(3).normal(size=100)
    np.testing.assert_allclose(sample_field(vals, g1r.centers, g1r), vals, rtol=0, atol=1e-12)
    f = np.random.default_rng(4).normal(size=g2p.shape)
    x1, x2 = g2p.centers
    pts = np.column_stack([x1.ravel(), x2.ravel()])
    np.testing.assert_allclose(sample_field(f, pts, g2p), f.ravel(), atol=1e-13)


def test_periodic_sampling_wraps_and_reflective_clamps():
    g = Grid1D(1.0, 10)
    vals = np.arange(10.0)
    # halfway between the last and the first cell across the wrap
    assert sample_field(vals, np.array([1.0]), g)[0] == pytest.approx(4.5)
    r = Grid1D(1.0, 10, "reflective")
    assert sample_field(vals, np.array([1.0]), r)[0] == pytest.approx(9.0)
    assert sample_field(vals, np.array([-1.0]), r)[0] == pytest.approx(0.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-50, 50), periodic=st.booleans())
def test_confine_lands_in_domain(x, periodic):
    g = Grid1D(2.0, 8, "periodic" if periodic else "reflective")
    y = confine(np.array([x]), g)[0]
    assert -2.0 <= y <= 2.0
    if not periodic and -2.0 <= x <= 2.0:
        assert y == pytest.approx(x)


def test_reflection_is_specular():
    g = Grid1D(1.0, 8, "reflective")
    np.testing.assert_allclose(confine(np.array([1.25, -1.5, 3.5]), g), [0.75, -0.5, -0.5])


# -- drift models ---------------------------------------------------------------------


def test_oscillator_frequencies_respect_declared_bound():
    osc = HeterogeneousOscillator.uniform(5000, 5.0, seed=0)
    g = osc(np.zeros((5000, 1)))
    assert g.shape == (5000, 1)
    assert np.max(np.abs(g)) <= 5.0
    assert drift_bound_report(osc, np.zeros((5000, 1))).conforming
    zero = HeterogeneousOscillator.uniform(10, 0.0, seed=0)
    assert np.all(zero(np.zeros((10, 1))) == 0)


def test_out_of_design_sweep_drift_is_reported():
    osc = HeterogeneousOscillator.uniform(2000, 15.0, seed=0, bound=5.0)
    rep = drift_bound_report(osc, np.zeros((2000, 1)))
    assert not rep.conforming
    assert rep.max_abs[0] > 5.0 and rep.bound[0] == 5.0


def test_oscillator_draws_are_prefix_stable():
    a = HeterogeneousOscillator.uniform(100, 5.0, seed=9).omegas
    b = HeterogeneousOscillator.uniform(1000, 5.0, seed=9).omegas
    np.testing.assert_array_equal(a, b[:100])


def test_optimal_velocity_examples():
    assert optimal_velocity(100.0, 10.0, 1.0, 0.5) == pytest.approx(10.0, abs=1e-6)
    assert optimal_velocity(0.0, 10.0, 1.0, 0.5) == pytest.approx(0.0, abs=1e-15)
    v = optimal_velocity(0.5, 10.0, 1.0, 0.5)
    assert v == pytest.approx(10 * np.tanh(0.5) / (1 + np.tanh(0.5)), rel=1e-14)
    assert v == pytest.approx(V_OPT_BETA, rel=1e-14)
    assert v == pytest.approx(oracles.optimal_velocity(0.5, 10.0, 1.0, 0.5), rel=1e-14)
    assert v == pytest.approx(3.1607, abs=1e-3)


def test_traffic_equal_spacing_gives_equal_drift():
    L = 2 * np.pi
    x = -np.pi + L * (np.arange(50) + 0.5) / 50
    model = OptimalVelocityTraffic(10.0, L / 50, 0.5, L)
    g = model(np.random.default_rng(0).permutation(x)[:, None])
    np.testing.assert_allclose(g, g[0, 0], rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 200))
def test_traffic_gaps_partition_ring_and_speeds_in_range(seed, n):
    L = 2 * np.pi
    x = np.random.default_rng(seed).uniform(-np.pi, np.pi, (n, 1))
    model = OptimalVelocityTraffic(10.0, L / n, 0.5, L)
    gaps = model.gaps(x)
    assert np.sum(gaps) == pytest.approx(L, rel=1e-12)
    assert np.all(gaps >= 0)
    g = model(x)
    assert np.all((g >= 0) & (g <= 10.0))


def test_two_vehicles_split_the_ring():
    L = 2 * np.pi
    model = OptimalVelocityTraffic(10.0, 1.0, 0.5, L)
    x = np.array([[-1.0], [2.0]])
    gaps = model.gaps(x)
    np.testing.assert_allclose(gaps, [3.0, L - 3.0])
    np.testing.assert_allclose(model(x)[:, 0], optimal_velocity(gaps, 10.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        model.gaps(np.array([[0.0]]))


def test_terrain_gradient_vanishes_at_hilltops():
    t = TerrainGradient()
    c = np.array([[np.pi / 2, np.pi / 2], [-np.pi / 2, -np.pi / 2]])
    # the other hill contributes exp(-2 * 2 pi^2) ~ 1e-17
    assert np.max(np.abs(t(c))) <= 1e-12


def test_terrain_gradient_matches_finite_differences():
    t = TerrainGradient()
    x = np.random.default_rng(5).uniform(-np.pi, np.pi, (100, 2))
    h = 1e-5
    fd = np.column_stack(
        [(t.potential(x + h * e) - t.potential(x - h * e)) / (2 * h) for e in np.eye(2)]
    )
    np.testing.assert_allclose(t(x), fd, atol=1e-6)


def test_terrain_declared_bound_is_not_conforming():
    t = TerrainGradient()
    assert t.declared_bound.tolist() == [5.0, 10.0]
    assert t.analytic_sup == pytest.approx(10 * 2 * np.exp(-0.5))
    g = Grid2D(np.pi, 200)
    x1, x2 = g.centers
    rep = drift_bound_report(t, np.column_stack([x1.ravel(), x2.ravel()]))
    assert not rep.conforming
    assert np.max(rep.max_abs) <= t.analytic_sup + 1e-12


# -- stepping ----------------------------------------------------------------------------


def test_no_motion_without_inputs(g1p):
    pop = AgentPopulation.uniform(100, g1p, seed=1)
    new = step_agents(pop, NoDrift(), np.zeros(200), 0.0, 1e-2, g1p)
    np.testing.assert_array_equal(new.positions, pop.positions)
    assert new.step == 1


def test_constant_velocity_shift(g1p):
    pop = AgentPopulation.uniform(100, g1p, seed=1)
    new = step_agents(pop, NoDrift(), np.full(200, 0.7), 0.0, 0.1, g1p)
    expected = np.mod(pop.positions + 0.07 + np.pi, 2 * np.pi) - np.pi
    np.testing.assert_allclose(new.positions, expected, atol=1e-12)


def test_diffusion_variance_growth():
    g = Grid1D(np.pi, 200)
    pop = AgentPopulation(np.zeros(10**5), seed=11)
    for _ in range(1000):
        pop = step_agents(pop, NoDrift(), np.zeros(200), 0.1, 1e-4, g)
    # the spread after t = 0.1 is ~0.14, far from the wrap, so wrapped = unwrapped
    assert np.var(pop.positions) == pytest.approx(2 * 0.1 * 0.1, rel=0.05)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), periodic=st.booleans(), D=st.floats(0, 5))
def test_agents_stay_in_domain(seed, periodic, D):
    g = Grid2D(1.0, 16, "periodic" if periodic else "reflective")
    pop = AgentPopulation.uniform(200, g, seed)
    U = np.random.default_rng(seed).uniform(-30, 30, (2, 16, 16))
    for _ in range(5):
        pop = step_agents(pop, NoDrift(2), U, D, 0.05, g)
        assert np.all(np.abs(pop.positions) <= 1.0)


def test_traffic_clipping_limits_total_speed(g1p):
    L = 2 * np.pi
    pop = AgentPopulation.uniform(500, g1p, seed=2)
    model = OptimalVelocityTraffic(10.0, L / 500, 0.5, L)
    U = 40 * np.sin(g1p.centers)
    new, u, g = step_agents(pop, model, U, 0.0, 1e-3, g1p, return_control=True)
    total = u + model(pop.positions)
    assert np.all((total >= -1e-12) & (total <= 10 + 1e-12))
    disp = np.mod(new.positions - pop.positions + np.pi, L) - np.pi
    assert np.all((disp >= -1e-12) & (disp <= 1e-2 + 1e-12))


def test_substeps_hold_the_field(g1p):
    pop = AgentPopulation.uniform(50, g1p, seed=4)
    one = step_agents(pop, NoDrift(), np.full(200, 1.0), 0.0, 0.1, g1p)
    four = step_agents(pop, NoDrift(), np.full(200, 1.0), 0.0, 0.1, g1p, substeps=4)
    np.testing.assert_allclose(one.positions, four.positions, atol=1e-12)
    with pytest.raises(ValueError):
        step_agents(pop, NoDrift(), np.zeros(200), 0.0, 0.1, g1p, substeps=0)
    with pytest.raises(ValueError):
        step_agents(pop, NoDrift(), np.zeros(200), 0.0, 0.0, g1p)


def test_streams_are_deterministic_and_prefix_stable(g1p):
    a = AgentPopulation.uniform(100, g1p, seed=3)
    b = AgentPopulation.uniform(1000, g1p, seed=3)
    np.testing.assert_array_equal(a.positions, b.positions[:100])
    np.testing.assert_array_equal(a.noise()[:, 0], b.noise()[:100, 0])
    assert not np.array_equal(a.noise(), a.noise(substep=1, substeps=2))
    assert not np.array_equal(stream(3, 0).random(5), stream(3, 1).random(5))


def test_population_is_immutable(g1p):
    pop = AgentPopulation.uniform(10, g1p)
    with pytest.raises(ValueError):
        pop.positions[0, 0] = 0.0
    with pytest.raises(ValueError):
        AgentPopulation(np.zeros((0, 1)))


# -- closed loop ---------------------------------------------------------------------------


def closed_loop(seed, n=500, t_final=0.01):
    g = Grid1D(np.pi, 100)
    ctl = DensityController(g, diffusion=0.1, disturbance=5.0).fit(von_mises_1d(2.0, 0.0, g))
    pop = AgentPopulation.uniform(n, g, seed)
    drift = HeterogeneousOscillator.uniform(n, 5.0, seed)
    return run_closed_loop_micro(ctl, pop, drift, 0.1, 1e-4, t_final, record_every=10, snapshot_every=50)


def test_closed_loop_records_and_is_deterministic():
    a, b = closed_loop(0), closed_loop(0)
    assert len(a.metrics) == 11
    assert a.metrics == b.metrics
    np.testing.assert_array_equal(a.population.positions, b.population.positions)
    assert [t for t, _ in a.snapshots] == pytest.approx([0.0, 0.005, 0.01])
    assert np.all(a.series("n_agents") == 500)
    assert np.all(np.abs(a.series("mass") - 1) <= 1e-9)
    assert a.max_drift[0] <= 5.0
    assert not np.array_equal(a.population.positions, closed_loop(1).population.positions)


def test_closed_loop_reduces_error_from_uniform():
    res = closed_loop(0, n=2000, t_final=0.1)
    err = res.series("l2_error")
    assert err[-1] < 0.25 * err[0]
