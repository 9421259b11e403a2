import numpy as np
import pytest

from entroflow import core, generator, stationary


def driven_setup(n=11, m=2.0, f_left=1.0, f_right=2.0, field=0.0):
    g = core.make_uniform_grid(1, n, field_spec=field)
    gen = generator.assemble_from_grid(g, "dirichlet")
    nl = core.power_law(m)
    fb = np.zeros(g.n_cells)
    fb[0], fb[-1] = f_left, f_right
    return g, gen, nl, fb


def test_pme_profile_is_sqrt_affine():
    g, gen, nl, fb = driven_setup()
    res = stationary.solve_stationary(gen, nl, f_b=fb)
    x = g.cells[:, 0]
    assert np.max(np.abs(res.f_inf - np.sqrt(1.0 + 3.0 * x))) <= 1e-12
    assert res.f_inf[5] == pytest.approx(np.sqrt(2.5), abs=1e-12)
    assert res.newton_iters == 0


def test_constant_boundary_gives_constant_state():
    g, gen, nl, fb = driven_setup(f_left=1.3, f_right=1.3, m=1.0)
    res = stationary.solve_stationary(gen, nl, f_b=fb)
    assert np.max(np.abs(res.f_inf - 1.3)) <= 1e-12


def test_two_state_closed_chain_balance():
    gen = generator.DiscreteGenerator(
        2, np.array([0, 1]), np.array([1, 0]), np.array([1.0, 2.0]),
        np.array([0.5, 0.5]), np.zeros(2, dtype=bool))
    res = stationary.solve_stationary(gen, core.identity, mass=1.0)
    mu = res.f_inf * gen.nu
    assert np.allclose(mu, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_maximum_principle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        lo, hi = sorted(rng.uniform(0.5, 3.0, 2))
        g, gen, nl, fb = driven_setup(n=17, m=3.0, f_left=lo, f_right=hi + 1e-9)
        res = stationary.solve_stationary(gen, nl, f_b=fb)
        assert res.bounds[0] >= lo - 1e-12
        assert res.bounds[1] <= hi + 1e-9 + 1e-12


def test_idempotence_from_own_output():
    g, gen, nl, fb = driven_setup()
    first = stationary.solve_stationary(gen, nl, f_b=fb)
    again = stationary.solve_stationary(gen, nl, f_b=fb, init=first.f_inf)
    assert again.newton_iters == 0
    assert np.max(np.abs(again.f_inf - first.f_inf)) <= 1e-14


def test_driven_state_is_stationary_but_carries_flux():
    g, gen, nl, fb = driven_setup(n=21, m=1.0, field=1.0)
    res = stationary.solve_stationary(gen, nl, f_b=fb)
    assert res.residual_norm <= 1e-11
    flux = stationary.stationary_flux_norm(gen, nl, res.f_inf)
    assert flux > 1e-6


def test_disconnected_interior_rejected():
    gen = generator.DiscreteGenerator(
        3, np.array([0, 1]), np.array([1, 0]), np.array([1.0, 1.0]),
        np.ones(3), np.array([True, False, False]))
    with pytest.raises(stationary.SingularSystemError):
        stationary.solve_stationary(gen, core.identity,
                                    f_b=np.array([1.0, 0.0, 0.0]))


def test_boundary_values_must_be_positive():
    g, gen, nl, fb = driven_setup()
    fb[0] = 0.0
    with pytest.raises(ValueError):
        stationary.solve_stationary(gen, nl, f_b=fb)


def test_profile_export(tmp_path):
    g, gen, nl, fb = driven_setup(n=5)
    res = stationary.solve_stationary(gen, nl, f_b=fb)
    path = tmp_path / "f_inf.csv"
    stationary.export_profile_csv(path, g, res.f_inf, "f_inf")
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x0,f_inf"
    assert len(lines) == 6
    assert float(lines[1].split(",")[1]) == pytest.approx(1.0)


def test_closed_drift_state_is_exponential_and_fluxless():
    # zero-total-flux walls with a constant field: the stationary density of
    # sigma(f) follows the exponential tilt and carries no current, unlike
    # the wall-driven case
    E = 1.0
    g = core.make_uniform_grid(1, 101, field_spec=E, bc="neumann")
    gen = generator.assemble_from_grid(g, "neumann", drift_mode="centered")
    res = stationary.solve_stationary(gen, core.identity, mass=1.0)
    x = g.cells[:, 0]
    profile = np.exp(E * x)
    profile *= 1.0 / np.dot(profile, g.cell_volume)
    assert np.max(np.abs(res.f_inf - profile) / profile) <= 1e-3
    flux = stationary.stationary_flux_norm(gen, core.identity, res.f_inf)
    assert flux <= 1e-12 * np.max(gen.rates)
