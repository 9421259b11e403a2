import numpy as np
import pytest

import entroflow as ef
from entroflow import core, generator, spectral, stationary, systems
from entroflow.evolve import TimeStepper

BOX = (0.5, 2.5, 0.5, 2.5)


def incompatible_quotient_pair():
    # d2 log sigma1 = 2/s2 while d1 log sigma2 = 0
    return systems.SpeciesPair(lambda a, b: a * b ** 2,
                               lambda a, b: b * np.ones_like(a * b))


def incompatible_difference_pair():
    # d2 sigma1 = 2 while d1 sigma2 = 0
    return systems.SpeciesPair(lambda a, b: a + 2.0 * b,
                               lambda a, b: b * np.ones_like(a + b))


class TestCompatibility:
    def test_sum_family_passes_both(self):
        pair = systems.sum_power_pair(2.0)
        assert systems.check_compat_quotient(pair, BOX).max_mismatch == 0.0
        assert systems.check_compat_difference(pair, BOX).max_mismatch == 0.0

    def test_decoupled_passes_both(self):
        pair = systems.decoupled_pair(core.identity, core.identity)
        assert systems.check_compat_quotient(pair, BOX).passed
        assert systems.check_compat_difference(pair, BOX).passed

    def test_quotient_violation_detected(self):
        rep = systems.check_compat_quotient(incompatible_quotient_pair(), BOX)
        assert not rep.passed
        # symbolic partials: 2/s2 - 0, largest at the box corner s2 = 0.5
        assert rep.max_mismatch == pytest.approx(4.0, rel=1e-6)

    def test_difference_violation_detected(self):
        rep = systems.check_compat_difference(incompatible_difference_pair(), BOX)
        assert not rep.passed
        assert rep.max_mismatch == pytest.approx(2.0, rel=1e-6)

    def test_jacobian_positivity(self):
        # decoupled conductivities give a strictly positive definite Jacobian;
        # the shared-total family is only semidefinite (rank one)
        assert systems.decoupled_pair(core.identity, core.power_law(2.0)).jacobian_positive(BOX)
        assert not systems.sum_power_pair(2.0).jacobian_positive(BOX)


def grid_and_nu(n=11):
    g = core.make_uniform_grid(1, n)
    return g, g.cell_volume


class TestPairEntropies:
    def test_quotient_value_against_antiderivative(self):
        g, nu = grid_and_nu()
        pair = systems.sum_power_pair(1.0)
        pf = systems.PairField(g, np.full(11, 2.0), np.ones(11))
        ref = systems.PairField(g, np.ones(11), np.ones(11))
        val = systems.system_phi_entropy(pf, ref, pair, nu)
        assert val == pytest.approx(3.0 * np.log(1.5) - 1.0, abs=1e-10)

    def test_difference_value_against_total_formula(self):
        g, nu = grid_and_nu()
        pair = systems.sum_power_pair(2.0)
        pf = systems.PairField(g, np.full(11, 1.5), np.full(11, 1.5))
        ref = systems.PairField(g, np.ones(11), np.ones(11))
        val = systems.system_psi_entropy(pf, ref, pair, nu)
        S, S0 = 3.0, 2.0
        assert val == pytest.approx((S ** 3 - S0 ** 3) / 3.0 - (S - S0) * S0 ** 2,
                                    abs=1e-10)

    def test_zero_at_reference(self):
        g, nu = grid_and_nu()
        pair = systems.sum_power_pair(2.0)
        ref = systems.PairField(g, np.linspace(0.6, 1.0, 11), np.linspace(1.0, 0.6, 11))
        assert systems.system_phi_entropy(ref, ref, pair, nu) == pytest.approx(0.0, abs=1e-14)
        assert systems.system_psi_entropy(ref, ref, pair, nu) == pytest.approx(0.0, abs=1e-14)

    def test_path_independence_for_asymmetric_compatible_pair(self):
        # log sigma1 = 0.2 s1 + w(S), log sigma2 = 0.1 s2 + w(S) shares the
        # mixed partial w'(S), so the two integration orders must agree
        def s1(a, b):
            return np.exp(0.2 * a) * (1.0 + a + b)

        def s2(a, b):
            return np.exp(0.1 * b) * (1.0 + a + b)

        pair = systems.SpeciesPair(s1, s2)
        g, nu = grid_and_nu()
        rng = np.random.default_rng(4)
        pf = systems.PairField(g, rng.uniform(0.8, 2.0, 11), rng.uniform(0.8, 2.0, 11))
        ref = systems.PairField(g, np.full(11, 1.2), np.full(11, 1.4))
        main = systems.system_phi_entropy(pf, ref, pair, nu)
        alt = systems.system_phi_entropy_alt_path(pf, ref, pair, nu)
        assert abs(main - alt) <= 1e-8

    def test_incompatible_pair_rejected(self):
        g, nu = grid_and_nu()
        pf = systems.PairField(g, np.full(11, 2.0), np.full(11, 1.5))
        ref = systems.PairField(g, np.ones(11), np.ones(11))
        with pytest.raises(systems.IncompatiblePairError):
            systems.system_phi_entropy(pf, ref, incompatible_quotient_pair(), nu)
        with pytest.raises(systems.IncompatiblePairError):
            systems.system_psi_entropy(pf, ref, incompatible_difference_pair(), nu)

    def test_decoupled_reduces_to_scalar_sums(self):
        g, nu = grid_and_nu()
        pair = systems.decoupled_pair(core.identity, core.identity)
        fa = np.linspace(1.0, 2.0, 11)
        fb = np.linspace(2.0, 1.0, 11)
        ra = np.full(11, 1.5)
        rb = np.full(11, 1.2)
        pf = systems.PairField(g, fa, fb)
        ref = systems.PairField(g, ra, rb)
        total_h = systems.system_phi_entropy(pf, ref, pair, nu)
        parts_h = (ef.phi_entropy(fa, ra, core.identity, core.PHI_LOG, nu)
                   + ef.phi_entropy(fb, rb, core.identity, core.PHI_LOG, nu))
        assert abs(total_h - parts_h) <= 1e-12
        total_n = systems.system_psi_entropy(pf, ref, pair, nu)
        parts_n = (ef.psi_entropy(fa, ra, core.identity, core.PSI_QUAD, nu)
                   + ef.psi_entropy(fb, rb, core.identity, core.PSI_QUAD, nu))
        assert abs(total_n - parts_n) <= 1e-12


class TestEinstein:
    def test_sum_family_satisfies_relation(self):
        rep = systems.einstein_check(systems.sum_power_pair(2.0), BOX)
        assert rep.passed
        assert rep.max_residual <= 1e-8

    def test_decoupled_satisfies_relation(self):
        rep = systems.einstein_check(systems.decoupled_pair(core.identity,
                                                            core.power_law(2.0)), BOX)
        assert rep.max_residual <= 1e-8

    def test_incompatible_pair_violates_relation(self):
        rep = systems.einstein_check(incompatible_quotient_pair(), BOX)
        assert rep.max_residual > 1e-2


def coupled_setup(m, n=31):
    g = core.make_uniform_grid(1, n)
    gen = generator.assemble_from_grid(g, "dirichlet")
    pair = systems.sum_power_pair(m)
    fb1 = np.zeros(n)
    fb2 = np.zeros(n)
    fb1[0], fb1[-1] = 0.5, 1.0
    fb2[0], fb2[-1] = 0.5, 1.0
    total_inf = stationary.solve_stationary(gen, core.power_law(m),
                                            f_b=fb1 + fb2).f_inf
    ref = systems.PairField(g, 0.5 * total_inf, 0.5 * total_inf)
    f0 = systems.PairField(g, np.where(g.boundary, fb1, 0.75),
                           np.where(g.boundary, fb2, 0.75))
    return g, gen, pair, ref, f0


class TestEvolvePair:
    def test_stationary_pair_is_fixed(self):
        g, gen, pair, ref, _ = coupled_setup(2.0)
        st = TimeStepper(dt=1e-3, t_end=0.02, snapshot_stride=10)
        log = systems.evolve_pair(gen, gen, pair, ref, st)
        final = log.final_state()
        assert np.max(np.abs(final[0] - ref.f1)) <= 1e-10
        assert np.max(np.abs(final[1] - ref.f2)) <= 1e-10

    def test_difference_entropy_decays(self):
        g, gen, pair, ref, f0 = coupled_setup(2.0)
        nu = g.cell_volume
        st = TimeStepper(dt=1e-3, t_end=0.1, snapshot_stride=5)
        diags = {"N_sys": lambda a, b: systems.system_psi_entropy(
            systems.PairField(g, a, b), ref, pair, nu, check=False)}
        log = systems.evolve_pair(gen, gen, pair, f0, st, diagnostics=diags)
        vals = log.col("N_sys")
        assert vals[0] > 0
        assert np.all(np.diff(vals) <= 1e-10 * vals[:-1] + 1e-30)

    def test_linear_family_decays_like_scalar_total(self):
        # phi(z) = z: the total obeys plain diffusion with conductivity 2z
        # (both species transport it), so the scalar module run with that
        # nonlinearity is the oracle; the quadratic functional decays at
        # twice the doubled spectral rate
        g, gen, pair, ref, f0 = coupled_setup(1.0, n=51)
        x = g.cells[:, 0]
        bump = 0.05 * np.sin(np.pi * x)
        f0 = systems.PairField(g, np.where(g.boundary, f0.f1, ref.f1 + bump),
                               np.where(g.boundary, f0.f2, ref.f2 + bump))
        nu = g.cell_volume
        st = TimeStepper(dt=2e-4, t_end=0.3, snapshot_stride=10)
        diags = {"N_sys": lambda a, b: systems.system_psi_entropy(
            systems.PairField(g, a, b), ref, pair, nu, check=False)}
        log = systems.evolve_pair(gen, gen, pair, f0, st, diagnostics=diags)
        rate = spectral.fit_rate(log, "N_sys", window=(0.02, 0.2))

        from entroflow.evolve import evolve
        from entroflow.entropy import standard_diagnostics
        doubled = core.Nonlinearity(lambda s: 2.0 * s,
                                    lambda s: np.full_like(s, 2.0),
                                    lambda z: 0.5 * z)
        total_ref = ref.total()
        total0 = np.where(g.boundary, total_ref, ref.total() + 2.0 * bump)
        scalar_log = evolve(gen, doubled, total0, st,
                            diagnostics=standard_diagnostics(
                                doubled, total_ref, nu, core.PHI_LOG,
                                core.PSI_QUAD, gen=gen),
                            keep_snapshots=False)
        oracle = spectral.fit_rate(scalar_log, "N_psi", window=(0.02, 0.2))
        assert abs(rate - oracle) <= 0.01 * oracle
        assert abs(rate - 4.0 * np.pi ** 2) <= 0.02 * 4.0 * np.pi ** 2
