import numpy as np
import pytest

from entroflow import core, generator
from entroflow.evolve import TimeStepper, evolve


def rate_map(gen):
    return {(int(r), int(c)): v for r, c, v in zip(gen.rows, gen.cols, gen.rates)}


def test_dirichlet_interior_rates():
    g = core.make_uniform_grid(1, 11)
    gen = generator.assemble_from_grid(g, "dirichlet")
    K = rate_map(gen)
    for i in range(1, 9):
        assert K[(i, i + 1)] == pytest.approx(100.0)
        assert K[(i + 1, i)] == pytest.approx(100.0)
    # half-volume reservoir cells fire inward at twice the interior rate
    assert K[(0, 1)] == pytest.approx(200.0)
    assert K[(1, 0)] == pytest.approx(100.0)


def test_neumann_constant_is_harmonic():
    g = core.make_uniform_grid(1, 11, bc="neumann")
    gen = generator.assemble_from_grid(g, "neumann")
    rate = gen.apply(np.full(11, 3.7))
    assert np.max(np.abs(rate)) <= 1e-12


def test_upwind_outflow_rates_hand_assembly():
    # n = 5, h = 1/4, unit drift: interior outflow 2/h^2 + E/h
    E = 1.0
    g = core.make_uniform_grid(1, 5, field_spec=E)
    gen = generator.assemble_from_grid(g, "dirichlet", drift_mode="upwind")
    h = g.h
    expected = 2.0 / h ** 2 + E / h
    for i in range(1, 4):
        assert gen.out_rate[i] == pytest.approx(expected)


def test_apply_three_state_chain():
    gen = generator.DiscreteGenerator(
        n_states=3,
        rows=np.array([0, 1, 1, 2]), cols=np.array([1, 0, 2, 1]),
        rates=np.ones(4), nu=np.ones(3), clamped=np.zeros(3, dtype=bool))
    rate = gen.apply(np.array([0.0, 1.0, 0.0]))
    assert np.allclose(rate, [1.0, -2.0, 1.0])


def test_apply_rejects_negative_rates_and_diagonal():
    with pytest.raises(ValueError):
        generator.DiscreteGenerator(2, np.array([0]), np.array([1]),
                                    np.array([-1.0]), np.ones(2),
                                    np.zeros(2, dtype=bool))
    with pytest.raises(ValueError):
        generator.DiscreteGenerator(2, np.array([0]), np.array([0]),
                                    np.array([1.0]), np.ones(2),
                                    np.zeros(2, dtype=bool))


def test_mass_identity_total_rate_zero():
    rng = np.random.default_rng(1)
    n = 12
    rows, cols = np.nonzero(rng.random((n, n)) < 0.4)
    keep = rows != cols
    gen = generator.DiscreteGenerator(n, rows[keep], cols[keep],
                                      rng.random(keep.sum()), rng.random(n) + 0.5,
                                      np.zeros(n, dtype=bool))
    f = rng.random(n)
    total = np.dot(gen.apply(f), gen.nu)
    assert abs(total) <= 1e-13 * np.max(gen.rates)


def test_linear_consistency_second_order():
    errs = []
    for n in (41, 81):
        g = core.make_uniform_grid(1, n)
        gen = generator.assemble_from_grid(g, "dirichlet")
        x = g.cells[:, 0]
        f = np.sin(np.pi * x)
        rate = gen.apply(f)
        target = -np.pi ** 2 * np.sin(np.pi * x)
        errs.append(np.max(np.abs(rate - target)[g.interior]))
    ratio = errs[0] / errs[1]
    assert 3.5 <= ratio <= 4.5


def test_mass_conservation_closed_evolution():
    g = core.make_uniform_grid(1, 21, bc="neumann")
    gen = generator.assemble_from_grid(g, "neumann")
    nl = core.power_law(2.0)
    x = g.cells[:, 0]
    f0 = 1.0 + 0.4 * np.cos(np.pi * x)
    st = TimeStepper(scheme="implicit", dt=1e-3, t_end=0.1, snapshot_stride=20)
    log = evolve(gen, nl, f0, st)
    m0 = np.dot(f0, g.cell_volume)
    for _, state in log.snapshots:
        assert abs(np.dot(state, g.cell_volume) - m0) <= 1e-10 * m0


def test_discrete_integration_by_parts():
    g = core.make_uniform_grid(1, 17)
    gen = generator.assemble_from_grid(g, "dirichlet")
    rng = np.random.default_rng(3)
    u = rng.random(17)
    v = rng.random(17)
    u[g.boundary] = 0.0
    v[g.boundary] = 0.0
    lhs = generator.measure_pairing(gen, u, v)
    rhs = -generator.dirichlet_form(g, u, v)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_centered_mode_rejects_large_peclet():
    g = core.make_uniform_grid(1, 5, field_spec=20.0)  # Peclet = 20 * 0.25 = 5
    with pytest.raises(ValueError):
        generator.assemble_from_grid(g, "dirichlet", drift_mode="centered")
    generator.assemble_from_grid(g, "dirichlet", drift_mode="upwind")


def test_centered_mode_small_peclet_ok():
    g = core.make_uniform_grid(1, 21, field_spec=1.0)
    gen = generator.assemble_from_grid(g, "dirichlet", drift_mode="centered")
    assert np.all(gen.rates >= 0)


def test_rate_dump_and_load_roundtrip(tmp_path):
    g = core.make_uniform_grid(1, 7, field_spec=0.5)
    gen = generator.assemble_from_grid(g, "dirichlet")
    path = tmp_path / "rates.txt"
    gen.dump_rates(path)
    back = generator.load_rates(path, gen.n_states, gen.nu, gen.clamped)
    f = np.linspace(0.2, 1.0, 7)
    assert np.allclose(gen.apply(f), back.apply(f), rtol=0, atol=0)
