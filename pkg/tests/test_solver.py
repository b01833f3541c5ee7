import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import brentq

from nonlocalflow import (
    GridDensity,
    MeasureVector,
    ParticleMeasure,
    PicardConvergenceError,
    PicardParams,
    Scenario,
    StabilityConstants,
    StepControl,
    constant_drift_field,
    dirac,
    kernel_library,
    linear_local_field,
    particles_from_density,
    picard_window,
    polynomial_bump_test,
    sedimentation_field,
    solve,
    solve_direct,
    solve_picard,
    w1_vector,
    weak_form_residual,
    window_length,
)
from nonlocalflow.cli import _cosine_bump_1d


def bump_particles(n=30, mass=1.0, support=(-1.0, 1.0)):
    dens = _cosine_bump_1d(support[0], support[1], 64)
    dens = GridDensity(1, dens.axes, dens.values * (mass / dens.integral()))
    return particles_from_density(dens, n), dens


def sedimentation_scenario(n=30, horizon=0.4, dt=0.005, kernel=None, **kw):
    kernel = kernel or kernel_library("tent")
    mu, _ = bump_particles(n)
    return Scenario(
        "sed-test",
        sedimentation_field(kernel, mass=1.0),
        MeasureVector((mu,)),
        horizon=horizon,
        step=StepControl(dt),
        **kw,
    )


def test_zero_velocity_snapshots_static():
    model = constant_drift_field([0.0])
    mu, _ = bump_particles(10)
    scn = Scenario("zero", model, MeasureVector((mu,)), horizon=1.0, step=StepControl(0.1))
    rec = solve_direct(scn)
    for state in rec.states:
        assert np.array_equal(state.species[0].positions, mu.positions)


def test_single_dirac_follows_constant_speed_line():
    k = kernel_library("tent")
    scn = Scenario(
        "dirac",
        sedimentation_field(k),
        MeasureVector((dirac([-0.5]),)),
        horizon=1.0,
        step=StepControl(0.01),
    )
    rec = solve_direct(scn)
    eta0 = k.evaluate(0.0, np.zeros(1))
    for t, state in zip(rec.times, rec.states):
        expected = -0.5 + eta0 * t
        assert abs(state.species[0].positions[0, 0] - expected) <= 1e-8


def test_two_particles_rigid_drift():
    k = kernel_library("tent")
    a = 0.4
    mu = ParticleMeasure(1, np.array([[-a], [a]]), np.array([0.5, 0.5]))
    scn = Scenario(
        "pair", sedimentation_field(k), MeasureVector((mu,)), horizon=0.5,
        step=StepControl(0.01),
    )
    rec = solve_direct(scn)
    pos = rec.final().species[0].positions.ravel()
    assert pos[1] - pos[0] == pytest.approx(2 * a, abs=1e-8)
    speed = 0.5 * (k.evaluate(0.0, np.zeros(1)) + k.evaluate(0.0, np.array([2 * a])))
    assert pos[0] == pytest.approx(-a + speed * 0.5, abs=1e-8)


def test_masses_constant_in_record():
    scn = sedimentation_scenario()
    rec = solve_direct(scn)
    masses = rec.masses()
    assert np.abs(masses - masses[0]).max() == 0.0


def test_stability_constants():
    c = StabilityConstants(1.5, 3.0)
    assert c.K == pytest.approx(2 * c.C)
    with pytest.raises(ValueError):
        StabilityConstants(1.0, 1.5)
    scn = sedimentation_scenario()
    consts = scn.constants()
    assert consts.C == pytest.approx(1.0)  # lip_r=1, lip(eta)=1, mass=1


def test_window_length_examples():
    scn = sedimentation_scenario()

    zero_c = replace(scn, model=constant_drift_field([0.1]))
    assert window_length(zero_c) == pytest.approx(zero_c.horizon)

    c2 = replace(scn, model=linear_local_field(-2.0, 4.0, 1), horizon=10.0,
                 step=StepControl(0.01))
    got = window_length(c2)
    oracle = brentq(lambda t: 2 * t * math.exp(2 * t) - 0.5, 1e-9, 5.0, xtol=1e-13)
    assert got == pytest.approx(oracle, abs=1e-9)
    assert got == pytest.approx(0.1756, abs=1e-3)

    c4 = replace(scn, model=linear_local_field(-4.0, 4.0, 1), horizon=10.0,
                 step=StepControl(0.01))
    assert window_length(c4) < 0.5 * window_length(c2)  # doubling C more than halves


def test_picard_zero_velocity_single_iteration():
    model = constant_drift_field([0.0])
    mu, _ = bump_particles(8)
    scn = Scenario(
        "zero", model, MeasureVector((mu,)), horizon=0.5, step=StepControl(0.05),
        picard=PicardParams(tol=1e-12),
    )
    traj, dists = picard_window(scn, 0.0, 0.5, scn.initial)
    assert len(dists) == 1
    assert dists[0] <= 1e-15


def test_picard_window_matches_direct():
    scn = sedimentation_scenario(n=50, horizon=0.1, dt=0.002,
                                 picard=PicardParams(tol=1e-10, max_iter=60))
    traj, dists = picard_window(scn, 0.0, 0.1, scn.initial)
    direct = solve_direct(replace(scn, horizon=0.1))
    gap = max(
        w1_vector(a, b)
        for a, b in zip(direct.states, traj.states)
    )
    assert gap <= 1e-6
    assert all(b < a for a, b in zip(dists, dists[1:]))  # decreasing sequence


def test_picard_contraction_ratio_bound():
    scn = sedimentation_scenario(n=40, horizon=0.3, dt=0.003,
                                 picard=PicardParams(tol=1e-10, max_iter=60))
    c = scn.constants().C
    traj, dists = picard_window(scn, 0.0, 0.3, scn.initial)
    bound = c * 0.3 * math.exp(c * 0.3) + 0.05
    for a, b in zip(dists, dists[1:]):
        if a > 1e-9 and b > 1e-9:
            assert b / a <= bound


def test_picard_max_iter_error_carries_distances():
    scn = sedimentation_scenario(n=20, horizon=0.3, dt=0.003,
                                 picard=PicardParams(tol=1e-16, max_iter=3))
    with pytest.raises(PicardConvergenceError) as err:
        picard_window(scn, 0.0, 0.3, scn.initial)
    assert len(err.value.distances) == 3


def test_solve_picard_agrees_with_direct():
    scn = sedimentation_scenario(
        n=40, horizon=0.5, dt=0.004, kernel=kernel_library("bump-poly", 1, 1.2, 0.8),
        picard=PicardParams(tol=1e-9, max_iter=80),
    )
    direct = solve_direct(scn)
    picard = solve_picard(replace(scn, mode="picard"))
    assert np.allclose(direct.times, picard.times)
    gap = max(w1_vector(a, b) for a, b in zip(direct.states, picard.states))
    assert gap <= 1e-6
    assert picard.diagnostics["picard_distances"]


def test_solve_picard_zero_field_static():
    model = constant_drift_field([0.0])
    mu, _ = bump_particles(6)
    scn = Scenario(
        "zero", model, MeasureVector((mu,)), horizon=1.0, step=StepControl(0.1),
        mode="picard",
    )
    rec = solve_picard(scn)
    for state in rec.states:
        assert np.allclose(state.species[0].positions, mu.positions)


def test_solve_picard_restores_original_masses():
    # species with non-unit mass: rescaling is applied and inverted exactly
    k = kernel_library("tent")
    mu, _ = bump_particles(20, mass=2.5)
    scn = Scenario(
        "mass", sedimentation_field(k, mass=2.5), MeasureVector((mu,)),
        horizon=0.1, step=StepControl(0.002), mode="picard",
        picard=PicardParams(tol=1e-10, max_iter=60),
    )
    rec = solve_picard(scn)
    masses = rec.masses()
    assert np.abs(masses - 2.5).max() == 0.0
    for state in rec.states:
        assert state.species[0].weights is mu.weights
    direct = solve_direct(replace(scn, mode="direct"))
    gap = max(w1_vector(a, b) for a, b in zip(direct.states, rec.states))
    assert gap <= 1e-6


def test_solve_dispatch():
    scn = sedimentation_scenario(horizon=0.05, dt=0.005)
    assert solve(scn).diagnostics["mode"] == "direct"
    assert solve(replace(scn, mode="picard")).diagnostics["mode"] == "picard"


def test_weak_residual_zero_function():
    scn = sedimentation_scenario(horizon=0.1, dt=0.005)
    rec = solve_direct(scn)
    zero = polynomial_bump_test([10.0], 0.5, scn.horizon)  # support misses everything
    assert weak_form_residual(rec, scn.model, zero) == 0.0


def test_weak_residual_static_time_independent():
    model = constant_drift_field([0.0])
    mu, _ = bump_particles(10)
    scn = Scenario("zero", model, MeasureVector((mu,)), horizon=0.5, step=StepControl(0.05))
    rec = solve_direct(scn)

    from nonlocalflow.solver import TestFunction

    def psi(x):
        return np.cos(np.atleast_2d(x)[:, 0])

    phi = TestFunction(
        value=lambda t, x: psi(x),
        dt_value=lambda t, x: np.zeros(np.atleast_2d(x).shape[0]),
        grad=lambda t, x: -np.sin(np.atleast_2d(x)),
    )
    assert weak_form_residual(rec, scn.model, phi) <= 1e-12


def test_weak_residual_second_order_in_dt():
    scn = sedimentation_scenario(
        n=40, horizon=0.4, dt=0.02, kernel=kernel_library("bump-poly", 1, 1.2, 0.8)
    )
    phi = polynomial_bump_test([0.2], 1.5, scn.horizon)
    coarse = weak_form_residual(solve_direct(scn), scn.model, phi)
    fine = weak_form_residual(
        solve_direct(replace(scn, step=StepControl(0.01))), scn.model, phi
    )
    assert 3.5 <= coarse / fine <= 4.5
