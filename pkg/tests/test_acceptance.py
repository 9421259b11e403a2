"""Acceptance gate: one test per shipped criterion, each printing a verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Budgets and tolerances are fixed here; nothing is calibrated at
runtime.
"""

import math
import os
import time

import numpy as np
import pytest
from scipy.stats import chisquare

import entroflow as ef
from entroflow import cli, core, entropy, generator, markov, micro, spectral, \
    stationary, systems
from entroflow.evolve import TimeStepper, evolve


def verdict(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num}: {detail}"


def driven_problem(n, m, f_left, f_right, field=0.0):
    g = ef.make_uniform_grid(1, n, field_spec=field)
    gen = ef.assemble_from_grid(g, "dirichlet")
    nl = ef.power_law(m)
    fb = np.zeros(g.n_cells)
    fb[0], fb[-1] = f_left, f_right
    f_inf = ef.solve_stationary(gen, nl, f_b=fb).f_inf
    return g, gen, nl, fb, f_inf


def test_criterion_01_entropy_monotonicity():
    t0 = time.monotonic()
    worst = -np.inf
    for m in (1.0, 2.0, 3.0):
        g, gen, nl, fb, f_inf = driven_problem(101, m, 1.0, 2.0)
        nu = g.cell_volume
        f0 = np.full(101, 1.5)
        f0[0], f0[-1] = 1.0, 2.0
        diags = {
            "H_log": lambda f, nl=nl, r=f_inf: ef.phi_entropy(f, r, nl, ef.PHI_LOG, nu),
            "H_quad": lambda f, nl=nl, r=f_inf: ef.phi_entropy(f, r, nl, ef.PHI_QUAD, nu),
            "N_psi": lambda f, nl=nl, r=f_inf: ef.psi_entropy(f, r, nl, ef.PSI_QUAD, nu),
        }
        st = TimeStepper(scheme="implicit", dt=1e-4, t_end=2.0, snapshot_stride=20)
        log = evolve(gen, nl, f0, st, diagnostics=diags, keep_snapshots=False)
        for col in ("H_log", "H_quad", "N_psi"):
            v = log.col(col)
            worst = max(worst, float(np.max(np.diff(v) - 1e-10 * np.abs(v[:-1]))))
    elapsed = time.monotonic() - t0
    ok = worst <= 0.0 and elapsed < 10.0
    verdict(1, ok, f"max step increase beyond slack {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_production_identities():
    t0 = time.monotonic()
    g, gen, nl, fb, f_inf = driven_problem(5, 2.0, 1.0, 2.0)
    nu = g.cell_volume
    f = f_inf.copy()
    f[1:-1] += np.array([0.11, -0.07, 0.19])
    dt = 1e-7
    rate = gen.apply(nl.eval(f))
    fp, fm = f.copy(), f.copy()
    fp[gen.free] += dt * rate[gen.free]
    fm[gen.free] -= dt * rate[gen.free]

    def rel(slope, prod):
        return abs(slope - prod) / abs(slope)

    slope_h = (ef.phi_entropy(fp, f_inf, nl, ef.PHI_QUAD, nu)
               - ef.phi_entropy(fm, f_inf, nl, ef.PHI_QUAD, nu)) / (2 * dt)
    err_h = rel(slope_h, entropy.phi_production_grid(f, f_inf, nl, ef.PHI_QUAD, g))
    slope_n = (ef.psi_entropy(fp, f_inf, nl, ef.PSI_QUAD, nu)
               - ef.psi_entropy(fm, f_inf, nl, ef.PSI_QUAD, nu)) / (2 * dt)
    err_n = rel(slope_n, entropy.psi_production_grid(f, f_inf, nl, ef.PSI_QUAD, g))

    # jump forms on a four-state reversible kernel
    nu4 = np.array([0.2, 0.3, 0.1, 0.4])
    rows, cols, rates = [], [], []
    for i, b in enumerate((0.7, 1.3, 0.5)):
        rows += [i, i + 1]
        cols += [i + 1, i]
        rates += [b / nu4[i], b / nu4[i + 1]]
    gen4 = generator.DiscreteGenerator(4, np.array(rows), np.array(cols),
                                       np.array(rates), nu4,
                                       np.zeros(4, dtype=bool))
    f_ref4 = np.full(4, 1.3)
    f4 = np.array([1.0, 1.8, 1.2, 1.4])
    rate4 = gen4.apply(nl.eval(f4))
    fp4, fm4 = f4 + dt * rate4, f4 - dt * rate4
    slope_hj = (ef.phi_entropy(fp4, f_ref4, nl, ef.PHI_LOG, nu4)
                - ef.phi_entropy(fm4, f_ref4, nl, ef.PHI_LOG, nu4)) / (2 * dt)
    err_hj = rel(slope_hj, entropy.phi_production_jump(f4, f_ref4, nl, ef.PHI_LOG, gen4))
    slope_nj = (ef.psi_entropy(fp4, f_ref4, nl, ef.PSI_QUAD, nu4)
                - ef.psi_entropy(fm4, f_ref4, nl, ef.PSI_QUAD, nu4)) / (2 * dt)
    err_nj = rel(slope_nj, entropy.psi_production_jump(f4, f_ref4, nl, ef.PSI_QUAD, gen4))

    elapsed = time.monotonic() - t0
    worst = max(err_h, err_n, err_hj, err_nj)
    ok = worst <= 1e-5 and elapsed < 1.0
    verdict(2, ok, f"worst slope/production mismatch {worst:.2e} rel, {elapsed:.2f}s")


def test_criterion_03_dirichlet_eigenvalue():
    t0 = time.monotonic()
    lam51 = spectral.dirichlet_eigenvalue(ef.make_uniform_grid(1, 51))
    lam101 = spectral.dirichlet_eigenvalue(ef.make_uniform_grid(1, 101))
    lam2d = spectral.dirichlet_eigenvalue(ef.make_uniform_grid(2, 51))
    e51 = abs(lam51 - np.pi ** 2) / np.pi ** 2
    e101 = abs(lam101 - np.pi ** 2) / np.pi ** 2
    e2d = abs(lam2d - 2 * np.pi ** 2) / (2 * np.pi ** 2)
    elapsed = time.monotonic() - t0
    ok = e51 <= 0.01 and e101 <= 0.0025 and e2d <= 0.02 and elapsed < 5.0
    verdict(3, ok, f"1D rel errs {e51:.2e}/{e101:.2e}, 2D {e2d:.2e}, {elapsed:.1f}s")


def test_criterion_04_decay_certificates():
    t0 = time.monotonic()
    # heat case: flat unit walls, small first-mode perturbation
    g, gen, nl, fb, f_inf = driven_problem(101, 1.0, 1.0, 1.0)
    x = g.cells[:, 0]
    f0 = f_inf + 1e-3 * np.sin(np.pi * x)
    f0[g.boundary] = 1.0
    st = TimeStepper(scheme="implicit", dt=1e-4, t_end=0.8, snapshot_stride=20)
    diags = entropy.standard_diagnostics(nl, f_inf, g.cell_volume, ef.PHI_LOG,
                                         ef.PSI_QUAD, gen=gen)
    log = evolve(gen, nl, f0, st, diagnostics=diags, keep_snapshots=False)
    heat_rate = spectral.fit_rate(log, "N_psi")
    heat_err = abs(heat_rate - 2 * np.pi ** 2) / (2 * np.pi ** 2)

    # driven power case: certificate from the eigenvalue and the comparison
    # constant, observed rate from the trajectory
    g2, gen2, nl2, fb2, f_inf2 = driven_problem(101, 2.0, 1.0, 2.0)
    f02 = np.full(101, 1.5)
    f02[0], f02[-1] = 1.0, 2.0
    st2 = TimeStepper(scheme="implicit", dt=1e-4, t_end=0.5, snapshot_stride=20)
    diags2 = entropy.standard_diagnostics(nl2, f_inf2, g2.cell_volume, ef.PHI_LOG,
                                          ef.PSI_QUAD, gen=gen2)
    log2 = evolve(gen2, nl2, f02, st2, diagnostics=diags2, keep_snapshots=False)
    cert = spectral.decay_certificate(g2, 2.0, f_inf2, log=log2)
    margin_ok = cert.margin >= -0.05 * cert.certified_rate

    # brute-force oracle for the comparison constant, written out directly
    ys = np.linspace(0.0, 50.0, 20001)
    refs = np.linspace(1.0, 2.0, 201)
    Y, R = np.meshgrid(ys, refs, indexing="ij")
    num = (Y ** 2 - R ** 2) ** 2
    den = (Y ** 3 - R ** 3) / 3.0 - (Y - R) * R ** 2
    mask = den > 1e-12
    brute = float(np.min(num[mask] / den[mask]))
    c_err = abs(cert.comparison_const - brute)
    c_ok = c_err <= 1e-3 and abs(cert.comparison_const - 1.5) <= 1e-3

    elapsed = time.monotonic() - t0
    ok = heat_err <= 0.02 and margin_ok and c_ok and elapsed < 30.0
    verdict(4, ok, f"heat rate err {heat_err:.2e}, power margin {cert.margin:.2f}, "
                   f"constant err {c_err:.1e}, {elapsed:.1f}s")


def test_criterion_05_stationary_but_not_reversible():
    g, gen, nl, fb, f_inf = driven_problem(21, 1.0, 1.0, 2.0, field=1.0)
    res = ef.solve_stationary(gen, nl, f_b=fb)
    flux = ef.stationary_flux_norm(gen, nl, res.f_inf)
    ok = flux > 1e-6 and res.residual_norm <= 1e-11
    verdict(5, ok, f"flux max-norm {flux:.3e}, residual {res.residual_norm:.2e}")


def test_criterion_06_two_species_structure():
    box = (0.5, 2.5, 0.5, 2.5)
    pair_sum = systems.sum_power_pair(2.0)
    pair_dec = systems.decoupled_pair(core.identity, core.identity)
    pair_bad = systems.SpeciesPair(lambda a, b: a * b ** 2,
                                   lambda a, b: b * np.ones_like(a * b))
    compat_ok = (systems.check_compat_quotient(pair_sum, box).passed
                 and systems.check_compat_quotient(pair_dec, box).passed
                 and not systems.check_compat_quotient(pair_bad, box).passed)

    g = ef.make_uniform_grid(1, 11)
    nu = g.cell_volume
    pf = systems.PairField(g, np.full(11, 1.5), np.full(11, 1.5))
    ref = systems.PairField(g, np.ones(11), np.ones(11))
    val = systems.system_psi_entropy(pf, ref, pair_sum, nu)
    S, S0 = 3.0, 2.0
    sigma_formula = (S ** 3 - S0 ** 3) / 3.0 - (S - S0) * S0 ** 2
    formula_err = abs(val - sigma_formula)

    einstein = systems.einstein_check(pair_sum, box).max_residual

    # coupled power-2 run against its spectral certificate (two identical
    # dissipation channels double the certified rate)
    n = 51
    g2 = ef.make_uniform_grid(1, n)
    gen2 = ef.assemble_from_grid(g2, "dirichlet")
    fb1 = np.zeros(n)
    fb1[0], fb1[-1] = 0.5, 1.0
    total_inf = ef.solve_stationary(gen2, ef.power_law(2.0), f_b=2 * fb1).f_inf
    ref2 = systems.PairField(g2, 0.5 * total_inf, 0.5 * total_inf)
    f0 = systems.PairField(g2, np.where(g2.boundary, fb1, 0.75),
                           np.where(g2.boundary, fb1, 0.75))
    st = TimeStepper(dt=2e-4, t_end=0.25, snapshot_stride=10)
    diags = {"N_sys": lambda a, b: systems.system_psi_entropy(
        systems.PairField(g2, a, b), ref2, pair_sum, g2.cell_volume, check=False)}
    log = systems.evolve_pair(gen2, gen2, pair_sum, f0, st, diagnostics=diags)
    fitted = spectral.fit_rate(log, "N_sys", window=(0.02, 0.15))
    lam_d = spectral.dirichlet_eigenvalue(g2)
    c_k = spectral.comparison_constant(2.0, (float(total_inf.min()),
                                             float(total_inf.max())))
    certified = 2.0 * lam_d * c_k
    margin_ok = fitted >= certified * 0.95

    ok = compat_ok and formula_err <= 1e-10 and einstein <= 1e-8 and margin_ok
    verdict(6, ok, f"compat {compat_ok}, total-formula err {formula_err:.1e}, "
                   f"Einstein {einstein:.1e}, rate {fitted:.1f} vs cert {certified:.1f}")


def test_criterion_07_markov_cycle():
    triples = [(0, 1, 2.0), (1, 2, 2.0), (2, 0, 2.0),
               (1, 0, 1.0), (2, 1, 1.0), (0, 2, 1.0)]
    kern = markov.kernel_from_triples(triples, np.ones(3))
    cls = markov.classify(np.ones(3), kern)
    class_ok = cls.stationary and not cls.reversible

    gen = kern.generator()
    nl = ef.power_law(2.0)
    f_inf = markov.markov_stationary_state(kern, nl, mass=3.0)
    f = np.array([1.4, 0.9, 0.7])
    raised = False
    try:
        entropy.psi_production_jump(f, f_inf, nl, ef.PSI_QUAD, gen)
    except entropy.NonReversibleError:
        raised = True

    dt = 1e-7
    rate = gen.apply(nl.eval(f))
    fp, fm = f + dt * rate, f - dt * rate
    slope = (ef.phi_entropy(fp, f_inf, nl, ef.PHI_LOG, kern.nu)
             - ef.phi_entropy(fm, f_inf, nl, ef.PHI_LOG, kern.nu)) / (2 * dt)
    prod = entropy.phi_production_jump(f, f_inf, nl, ef.PHI_LOG, gen)
    rel = abs(slope - prod) / abs(slope)

    ok = class_ok and raised and rel <= 1e-5
    verdict(7, ok, f"classified {class_ok}, refusal {raised}, H-identity {rel:.2e} rel")


def test_criterion_08_zero_range_process():
    t0 = time.monotonic()
    # (a) one-site law for the linear rate is the Poisson law
    model = micro.ZrpModel(n_sites=1_000_000,
                           g=lambda k: np.asarray(k, dtype=float))
    eta = micro.sample_product_measure(model, 2.0, rng_seed=20130515)
    kmax = 12
    counts = np.bincount(np.minimum(eta, kmax), minlength=kmax + 1)
    lam = 2.0
    probs = np.array([lam ** k * np.exp(-lam) / math.factorial(k)
                      for k in range(kmax)])
    probs = np.append(probs, 1.0 - probs.sum())
    _, p_value = chisquare(counts, eta.size * probs)
    a_ok = p_value > 0.01

    # (b) reservoir-driven stationary profile is affine for the linear rate
    N = 64
    m64 = micro.ZrpModel(n_sites=N, g=lambda k: np.asarray(k, dtype=float),
                         boundary="reservoirs", f_boundary=(1.0, 2.0))
    target = 1.0 + m64.site_positions()[:, 0]
    trajs = micro.simulate_replicas(
        m64, lambda s: micro.sample_product_measure(m64, target, s),
        t_end=1.4, obs_times=[0.4, 1.4], master_seed=20130515, n_replicas=32)
    profs = np.stack([t.density_profile(0.4, 1.4) for t in trajs])
    mean = profs.mean(axis=0)
    sem = profs.std(axis=0, ddof=1) / np.sqrt(len(trajs))
    dev = np.abs(mean - target) / sem
    b_ok = bool(np.all(dev <= 3.0))

    # (c) Legendre transform against the conductivity integral
    rep_p = micro.legendre_check(micro.ZrpModel(n_sites=4,
                                 g=lambda k: np.asarray(k, dtype=float)),
                                 1.0, [0.5, 1.0, 1.5, 2.0])
    rep_g = micro.legendre_check(micro.ZrpModel(n_sites=4,
                                 g=lambda k: (np.asarray(k) > 0).astype(float)),
                                 0.5, [0.3, 0.5, 1.0])
    c_ok = rep_p.max_mismatch <= 1e-6 and rep_g.max_mismatch <= 1e-6

    # (d) the profile cost decreases outside the replica noise band from a
    # displaced start and shows no trend from the stationary start
    m128 = micro.ZrpModel(n_sites=128, g=lambda k: np.asarray(k, dtype=float),
                          boundary="reservoirs", f_boundary=(1.0, 2.0))
    f_inf_128 = 1.0 + m128.site_positions()[:, 0]
    obs = np.linspace(0.03, 0.3, 8)
    moving = micro.simulate_replicas(
        m128, lambda s: micro.sample_product_measure(m128, 3.0, s),
        0.3, obs, master_seed=314, n_replicas=32)
    rep_down = micro.lyapunov_monitor(moving, f_inf_128, core.identity)

    m64b = micro.ZrpModel(n_sites=64, g=lambda k: np.asarray(k, dtype=float),
                          boundary="reservoirs", f_boundary=(1.0, 2.0))
    f_inf_64 = 1.0 + m64b.site_positions()[:, 0]
    settled = micro.simulate_replicas(
        m64b, lambda s: micro.sample_product_measure(m64b, f_inf_64, s),
        0.3, np.linspace(0.03, 0.3, 8), master_seed=159, n_replicas=32)
    rep_flat = micro.lyapunov_monitor(settled, f_inf_64, core.identity)
    d_ok = rep_down.decreasing and rep_flat.trendless

    elapsed = time.monotonic() - t0
    ok = a_ok and b_ok and c_ok and d_ok and elapsed < 300.0
    verdict(8, ok, f"chi2 p {p_value:.3f}, profile max|dev|/se {dev.max():.2f}, "
                   f"legendre {max(rep_p.max_mismatch, rep_g.max_mismatch):.1e}, "
                   f"monitor down/flat {rep_down.decreasing}/{rep_flat.trendless}, "
                   f"{elapsed:.0f}s")


def test_criterion_09_langevin_chain():
    # (a) periodic exchanges conserve the total charge to rounding
    model = micro.GlModel(n_sites=32, dt_em=0.01)
    xi0 = np.sin(2 * np.pi * np.arange(32) / 32)
    res = micro.simulate_gl(model, xi0, t_end=100.0, rng_seed=7, n_replicas=4)
    a_ok = res.charge_drift <= 1e-11

    # (b) equal boundary potentials pin every site mean at one
    bmodel = micro.GlModel(n_sites=16, boundary="reservoirs",
                           chem_left=1.0, chem_right=1.0, dt_em=0.01)
    obs = np.linspace(100.0, 300.0, 41)
    bres = micro.simulate_gl(bmodel, np.zeros(16), t_end=300.0, rng_seed=11,
                             obs_times=obs, n_replicas=48)
    site_means = bres.snapshots.mean(axis=0)
    mean = site_means.mean(axis=0)
    sem = site_means.std(axis=0, ddof=1) / np.sqrt(site_means.shape[0])
    b_dev = float(np.max(np.abs(mean - 1.0) / sem))
    b_ok = b_dev <= 3.0

    # (c) the chain's profile cost coincides with the quadratic difference
    # entropy
    rng = np.random.default_rng(12)
    nu = np.full(24, 1.0 / 24.0)
    worst = 0.0
    for nl in (core.identity, core.power_law(2.0)):
        f = rng.uniform(0.2, 2.5, 24)
        f_ref = rng.uniform(0.5, 1.5, 24)
        a = entropy.profile_ld_functional(f, f_ref, nl, nu)
        b = ef.psi_entropy(f, f_ref, nl, ef.PSI_QUAD, nu)
        worst = max(worst, abs(a - b))
    c_ok = worst <= 1e-12

    ok = a_ok and b_ok and c_ok
    verdict(9, ok, f"charge drift {res.charge_drift:.1e}, boundary max dev/se "
                   f"{b_dev:.2f}, cost identity {worst:.1e}")


def test_criterion_10_deterministic_reruns(tmp_path):
    def csv_bytes(root):
        out = {}
        for dirpath, _, files in os.walk(root):
            for name in sorted(files):
                if name.endswith(".csv"):
                    full = os.path.join(dirpath, name)
                    out[os.path.relpath(full, root)] = open(full, "rb").read()
        return out

    repo = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    checked = 0
    identical = True
    for config in ("configs/zrp_profile.toml", "configs/pme_decay.toml",
                   "configs/gl_boundary.toml"):
        path = os.path.join(repo, config)
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / (os.path.basename(config) + tag)
            code = cli.main(["--config", path, "--out", str(out), "--quiet"])
            assert code == 0
            outs.append(csv_bytes(out))
        identical = identical and outs[0].keys() == outs[1].keys() \
            and all(outs[0][k] == outs[1][k] for k in outs[0])
        checked += len(outs[0])
    ok = identical and checked >= 6
    verdict(10, ok, f"{checked} CSV artifacts byte-identical across re-runs")
