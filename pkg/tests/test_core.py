import numpy as np
import pytest

from entroflow import core


def test_uniform_grid_1d_counts():
    g = core.make_uniform_grid(1, 11)
    assert g.n_cells == 11
    assert int(g.interior.sum()) == 9
    assert g.h == pytest.approx(0.1)
    assert np.all(g.face_diff == 1.0)
    assert np.all(g.face_drift == 0.0)


def test_uniform_grid_2d_counts():
    g = core.make_uniform_grid(2, 5)
    assert int(g.interior.sum()) == 9
    assert g.n_cells == 25


def test_grid_mass_is_domain_volume():
    for dim, n in [(1, 11), (1, 52), (2, 5), (2, 13)]:
        g = core.make_uniform_grid(dim, n)
        assert np.sum(g.cell_volume) == pytest.approx(1.0, abs=1e-12)


def test_grid_rejects_too_few_cells():
    with pytest.raises(ValueError):
        core.make_uniform_grid(1, 2)


def test_grid_rejects_negative_diffusion():
    with pytest.raises(ValueError):
        core.make_uniform_grid(1, 11, diffusion_spec=-1.0)


def test_grid_reversibility_flag():
    assert core.make_uniform_grid(1, 11).is_reversible()
    assert not core.make_uniform_grid(1, 11, field_spec=1.0).is_reversible()


def test_validate_nonlinearity_square_passes():
    nl = core.power_law(2.0)
    rep = core.validate_nonlinearity(nl, 10.0)
    assert rep.passed and rep.monotone and rep.inverse_ok


def test_validate_nonlinearity_sine_fails():
    nl = core.Nonlinearity(np.sin, np.cos, np.arcsin)
    rep = core.validate_nonlinearity(nl, 10.0)
    assert not rep.monotone


def test_identity_roundtrip_exact():
    rep = core.validate_nonlinearity(core.identity, 10.0)
    assert rep.passed
    assert rep.max_roundtrip_error == 0.0


def test_power_law_roundtrip():
    nl = core.power_law(3.0)
    s = np.linspace(0.1, 5.0, 40)
    assert np.max(np.abs(nl.inverse(nl.eval(s)) - s) / s) <= 1e-12


def test_sigma_rejects_negative_argument():
    with pytest.raises(ValueError):
        core.power_law(2.0).eval(np.array([-0.5]))


def test_tabulated_nonlinearity_roundtrip():
    s = np.linspace(0.0, 4.0, 30)
    nl = core.tabulated(s, s ** 2 + 0.5 * s)
    rep = core.validate_nonlinearity(nl, 4.0, n_samples=201)
    assert rep.passed
    probe = np.linspace(0.05, 3.9, 17)  # off the table knots
    back = nl.inverse(nl.eval(probe))
    assert np.max(np.abs(back - probe) / probe) <= 1e-12


def test_tabulated_requires_monotone_table():
    with pytest.raises(ValueError):
        core.tabulated([0.0, 1.0, 2.0], [0.0, 2.0, 1.5])


def test_phi_log_properties():
    z = np.linspace(0.05, 8.0, 101)
    assert core.PHI_LOG.eval(np.float64(1.0)) == 0.0
    assert core.PHI_LOG.deriv1(np.float64(1.0)) == 0.0
    assert np.max(np.abs(core.PHI_LOG.deriv2(z) - 1.0 / z)) <= 1e-12


def test_psi_quad_properties():
    z = np.linspace(-3.0, 3.0, 41)
    assert np.all(core.PSI_QUAD.deriv1(z) == z)
    assert np.all(core.PSI_QUAD.deriv2(z) == 1.0)


def test_psi_power_validates_exponent():
    core.psi_power(1.5)
    with pytest.raises(ValueError):
        core.psi_power(1.0)


def test_convex_generator_rejects_bad_phi():
    with pytest.raises(ValueError):
        core.ConvexGenerator("phi", lambda z: z, lambda z: np.ones_like(z),
                             lambda z: np.zeros_like(z))


def test_density_field_validation():
    g = core.make_uniform_grid(1, 5)
    with pytest.raises(ValueError):
        core.DensityField(g, -np.ones(5))
    f = core.uniform_field(g, 1.0)
    f.require_positive_boundary()
    f.values[0] = 0.0
    with pytest.raises(ValueError):
        f.require_positive_boundary()


def test_field_from_callable():
    g = core.make_uniform_grid(1, 5)
    f = core.field_from_callable(g, lambda x: 1.0 + x)
    assert f.values[2] == pytest.approx(1.5)
