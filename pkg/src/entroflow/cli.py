"""Batch front end: TOML run configurations in, CSV/JSON artifacts out.

One experiment per config file.  Outputs are deterministic given the config
and the seed: numeric CSV columns reproduce byte for byte on re-runs.  Exit
codes: 0 success, 2 config/schema violation (nothing written), 3 numeric
failure (partial outputs preserved).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import core, entropy, generator, markov, spectral, stationary, systems
from .evolve import TimeStepper, evolve
from . import micro


class ConfigError(ValueError):
    pass


KINDS = ("eigen", "stationary", "evolve", "decay-certificate", "markov",
         "systems", "zrp", "gl", "sweep")

_SCHEMA = {
    "": {"kind", "seed", "out"},
    "grid": {"dim", "n", "field", "diffusion", "bc", "drift_mode"},
    "model": {"m", "f_left", "f_right", "f_boundary_value", "mass",
              "sigma_table_s", "sigma_table_v"},
    "initial": {"kind", "value", "amplitude", "mode", "left", "right", "at",
                "values", "slope"},
    "stepper": {"scheme", "dt", "t_end", "snapshot_stride", "newton_tol",
                "newton_max_iters"},
    "diagnostics": {"phi", "psi"},
    "fit": {"column", "window_lo", "window_hi"},
    "markov": {"rates", "rates_file", "nu", "nu_file", "f0", "m", "mass",
               "boltzmann_mode", "velocity_points", "velocity_span"},
    "systems": {"family", "m", "fb1_left", "fb1_right", "fb2_left", "fb2_right",
                "f0_1", "f0_2"},
    "zrp": {"n", "dim", "g", "boundary", "f_left", "f_right", "f0", "t_end",
            "replicas", "n_obs", "burn_fraction", "field", "k_cap"},
    "gl": {"n", "potential", "boundary", "chem_left", "chem_right", "dt",
           "t_end", "replicas", "n_obs", "xi0"},
    "sweep": {"kind", "axes", "base"},
}


def load_config(path: str) -> tuple[dict, str]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        cfg = tomllib.loads(raw.decode("utf-8"))
    except Exception as err:
        raise ConfigError(f"config is not valid TOML: {err}") from err
    digest = hashlib.sha256(raw).hexdigest()
    validate_config(cfg)
    return cfg, digest


def validate_config(cfg: dict) -> None:
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    for key, val in cfg.items():
        if isinstance(val, dict):
            if key == "sweep":
                _check_keys("sweep", val, allow_nested={"axes", "base"})
                continue
            if key not in _SCHEMA:
                raise ConfigError(f"unknown table [{key}]")
            _check_keys(key, val)
        elif key not in _SCHEMA[""]:
            raise ConfigError(f"unknown top-level key {key!r}")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")


def _check_keys(table: str, val: dict, allow_nested: set | None = None) -> None:
    for k, v in val.items():
        if allow_nested and k in allow_nested:
            continue
        if k not in _SCHEMA[table]:
            raise ConfigError(f"unknown key {k!r} in table [{table}]")
        if isinstance(v, dict):
            raise ConfigError(f"unexpected nested table [{table}.{k}]")


def _require(cfg: dict, table: str) -> dict:
    if table not in cfg:
        raise ConfigError(f"kind {cfg.get('kind')!r} needs a [{table}] table")
    return cfg[table]


# ---------------------------------------------------------------- builders

def build_grid(section: dict) -> core.Grid:
    dim = int(section.get("dim", 1))
    n = int(section.get("n", 51))
    field = section.get("field", 0.0)
    diff = section.get("diffusion", 1.0)
    bc = section.get("bc", "dirichlet")
    return core.make_uniform_grid(dim, n, field_spec=field, diffusion_spec=diff, bc=bc)


def build_nonlinearity(section: dict) -> core.Nonlinearity:
    if "sigma_table_s" in section:
        return core.tabulated(section["sigma_table_s"], section["sigma_table_v"])
    return core.power_law(float(section.get("m", 1.0)))


def boundary_vector(grid: core.Grid, section: dict) -> np.ndarray:
    fb = np.zeros(grid.n_cells)
    if grid.dim == 1:
        left = float(section.get("f_left", 1.0))
        right = float(section.get("f_right", 1.0))
        fb[grid.boundary & (grid.cells[:, 0] == 0.0)] = left
        fb[grid.boundary & (grid.cells[:, 0] == 1.0)] = right
    else:
        fb[grid.boundary] = float(section.get("f_boundary_value", 1.0))
    return fb


def initial_field(section: dict, grid: core.Grid, f_inf: np.ndarray | None,
                  fb: np.ndarray) -> np.ndarray:
    kind = section.get("kind", "constant")
    x = grid.cells[:, 0]
    if kind == "constant":
        f = np.full(grid.n_cells, float(section.get("value", 1.0)))
    elif kind == "stationary":
        f = f_inf.copy()
    elif kind == "stationary-plus-sine":
        amp = float(section.get("amplitude", 1e-3))
        mode = int(section.get("mode", 1))
        bump = amp * np.sin(np.pi * mode * x)
        if grid.dim == 2:
            bump = bump * np.sin(np.pi * mode * grid.cells[:, 1])
        f = f_inf + bump
    elif kind == "linear":
        f = float(section.get("value", 1.0)) + float(section.get("slope", 0.0)) * x
    elif kind == "step":
        f = np.where(x < float(section.get("at", 0.5)),
                     float(section.get("left", 1.0)), float(section.get("right", 2.0)))
    elif kind == "values":
        f = np.asarray(section["values"], dtype=float)
        if f.shape != (grid.n_cells,):
            raise ConfigError("initial values list does not match the grid")
    else:
        raise ConfigError(f"unknown initial kind {kind!r}")
    f[grid.boundary] = fb[grid.boundary]
    return f


def build_stepper(section: dict) -> TimeStepper:
    return TimeStepper(scheme=section.get("scheme", "implicit"),
                       dt=float(section.get("dt", 1e-3)),
                       t_end=float(section.get("t_end", 1.0)),
                       snapshot_stride=int(section.get("snapshot_stride", 1)),
                       newton_tol=float(section.get("newton_tol", 1e-12)),
                       newton_max_iters=int(section.get("newton_max_iters", 30)))


def _convex(name: str, family: str) -> core.ConvexGenerator:
    table = {("phi", "log"): core.PHI_LOG, ("phi", "quad"): core.PHI_QUAD,
             ("psi", "quad"): core.PSI_QUAD}
    try:
        return table[(family, name)]
    except KeyError as err:
        raise ConfigError(f"unknown {family} generator {name!r}") from err


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- runners

def run_eigen(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    grid = build_grid(_require(cfg, "grid"))
    lam = spectral.dirichlet_eigenvalue(grid)
    _write_csv(os.path.join(out, "result.csv"), ["lambda_dirichlet"], [[_fmt(lam)]])
    with open(os.path.join(out, "eigen.json"), "w") as fh:
        json.dump({"lambda_dirichlet": lam}, fh, indent=2)
        fh.write("\n")
    return {"lambda_dirichlet": lam}


def run_stationary(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    grid = build_grid(_require(cfg, "grid"))
    model = _require(cfg, "model")
    nl = build_nonlinearity(model)
    gen = generator.assemble_from_grid(grid, bc=cfg.get("grid", {}).get("bc", "dirichlet"),
                                       drift_mode=cfg.get("grid", {}).get("drift_mode", "upwind"))
    if gen.clamped.any():
        fb = boundary_vector(grid, model)
        res = stationary.solve_stationary(gen, nl, f_b=fb)
    else:
        res = stationary.solve_stationary(gen, nl, mass=float(model.get("mass", 1.0)))
    flux = stationary.stationary_flux_norm(gen, nl, res.f_inf)
    stationary.export_profile_csv(os.path.join(out, "f_inf.csv"), grid, res.f_inf, "f_inf")
    summary = dict(res.as_dict(), flux_max_norm=flux)
    with open(os.path.join(out, "stationary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _evolve_common(cfg: dict, out: str, seed: int = 0):
    grid = build_grid(_require(cfg, "grid"))
    model = _require(cfg, "model")
    nl = build_nonlinearity(model)
    bc = cfg.get("grid", {}).get("bc", "dirichlet")
    gen = generator.assemble_from_grid(grid, bc=bc,
                                       drift_mode=cfg.get("grid", {}).get("drift_mode", "upwind"))
    fb = boundary_vector(grid, model)
    if gen.clamped.any():
        f_inf = stationary.solve_stationary(gen, nl, f_b=fb).f_inf
    else:
        f_inf = stationary.solve_stationary(gen, nl, mass=float(model.get("mass", 1.0))).f_inf
    f0 = initial_field(cfg.get("initial", {"kind": "stationary"}), grid, f_inf, fb)
    stepper = build_stepper(_require(cfg, "stepper"))
    diag_cfg = cfg.get("diagnostics", {})
    phi = _convex(diag_cfg.get("phi", "log"), "phi")
    psi = _convex(diag_cfg.get("psi", "quad"), "psi")
    diags = entropy.standard_diagnostics(nl, f_inf, grid.cell_volume, phi, psi, gen=gen)
    log = evolve(gen, nl, f0, stepper, diagnostics=diags, keep_snapshots=True)
    log.meta["seed"] = seed
    log.write_csv(os.path.join(out, "trajectory.csv"))
    log.write_snapshot_csvs(os.path.join(out, "snapshots"), coords=grid.cells)
    return grid, nl, f_inf, log


def run_evolve(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    grid, nl, f_inf, log = _evolve_common(cfg, out, seed)
    return {"t_end": log.times[-1],
            "H_phi_final": log.col("H_phi")[-1],
            "N_psi_final": log.col("N_psi")[-1]}


def run_decay_certificate(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    grid, nl, f_inf, log = _evolve_common(cfg, out, seed)
    fit_cfg = cfg.get("fit", {})
    window = None
    if "window_lo" in fit_cfg or "window_hi" in fit_cfg:
        window = (float(fit_cfg.get("window_lo", log.times[0])),
                  float(fit_cfg.get("window_hi", log.times[-1])))
    m = float(cfg["model"].get("m", 1.0))
    cert = spectral.decay_certificate(grid, m, f_inf, log=log,
                                      column=fit_cfg.get("column", "N_psi"),
                                      window=window)
    cert.to_json(os.path.join(out, "certificate.json"))
    return {"lambda_dirichlet": cert.lambda_dirichlet,
            "comparison_const": cert.comparison_const,
            "certified_rate": cert.certified_rate,
            "fitted_rate": cert.fitted_rate,
            "margin": cert.margin}


def run_markov(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    sec = _require(cfg, "markov")
    if "boltzmann_mode" in sec:
        v = np.linspace(-float(sec.get("velocity_span", 3.0)),
                        float(sec.get("velocity_span", 3.0)),
                        int(sec.get("velocity_points", 21)))
        kern = markov.linear_boltzmann_kernel(v, mode=sec["boltzmann_mode"])
    elif "rates_file" in sec:
        kern = markov.load_kernel(sec["rates_file"], sec["nu_file"])
    else:
        nu = np.asarray(sec["nu"], dtype=float)
        kern = markov.kernel_from_triples([tuple(t) for t in sec["rates"]], nu)
    nl = core.power_law(float(sec.get("m", 1.0)))
    f0 = np.asarray(sec["f0"], dtype=float) if "f0" in sec \
        else np.ones(kern.n_states)
    mass = float(sec.get("mass", float(np.dot(f0, kern.nu))))
    f_inf = markov.markov_stationary_state(kern, nl, mass=mass)
    cls = markov.classify(np.asarray(nl.eval(f_inf)) * kern.nu, kern)
    gen = kern.generator()
    stepper = build_stepper(_require(cfg, "stepper"))
    diags = entropy.standard_diagnostics(nl, f_inf, kern.nu, core.PHI_LOG,
                                         core.PSI_QUAD, gen=gen)
    log = markov.evolve_markov(kern, nl, f0, stepper, diagnostics=diags)
    log.write_csv(os.path.join(out, "trajectory.csv"))
    summary = {"stationary": cls.stationary, "reversible": cls.reversible,
               "stationarity_residual": cls.stationarity_residual,
               "detailed_balance_residual": cls.detailed_balance_residual,
               "H_phi_final": log.col("H_phi")[-1]}
    with open(os.path.join(out, "classify.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_systems(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    sec = _require(cfg, "systems")
    if sec.get("family", "sum_power") != "sum_power":
        raise ConfigError("only the sum_power species family is configurable")
    m = float(sec.get("m", 1.0))
    pair = systems.sum_power_pair(m)
    grid = build_grid(_require(cfg, "grid"))
    gen = generator.assemble_from_grid(grid, bc="dirichlet")
    fb1 = np.zeros(grid.n_cells)
    fb2 = np.zeros(grid.n_cells)
    left = grid.boundary & (grid.cells[:, 0] == 0.0)
    right = grid.boundary & (grid.cells[:, 0] == 1.0)
    fb1[left], fb1[right] = float(sec.get("fb1_left", 0.5)), float(sec.get("fb1_right", 1.0))
    fb2[left], fb2[right] = float(sec.get("fb2_left", 0.5)), float(sec.get("fb2_right", 1.0))
    # the total obeys the scalar power-law problem; split the stationary total
    # by the (constant) boundary composition
    nl_m = core.power_law(m)
    sigma_b = fb1 + fb2
    total_inf = stationary.solve_stationary(gen, nl_m, f_b=np.where(sigma_b > 0, sigma_b, 1.0)).f_inf
    ratio = float(sec.get("fb1_left", 0.5)) / (float(sec.get("fb1_left", 0.5)) + float(sec.get("fb2_left", 0.5)))
    ref = systems.PairField(grid, ratio * total_inf, (1.0 - ratio) * total_inf)
    f0 = systems.PairField(grid,
                           np.where(grid.boundary, fb1, float(sec.get("f0_1", 0.75))),
                           np.where(grid.boundary, fb2, float(sec.get("f0_2", 0.75))))
    stepper = build_stepper(_require(cfg, "stepper"))
    nu = grid.cell_volume
    diags = {
        "H_sys": lambda a, b: systems.system_phi_entropy(
            systems.PairField(grid, a, b), ref, pair, nu, check=False),
        "N_sys": lambda a, b: systems.system_psi_entropy(
            systems.PairField(grid, a, b), ref, pair, nu, check=False),
    }
    log = systems.evolve_pair(gen, gen, pair, f0, stepper, diagnostics=diags)
    log.write_csv(os.path.join(out, "trajectory.csv"))
    box = (0.4, 2.2, 0.4, 2.2)
    checks = {
        "compat_quotient": systems.check_compat_quotient(pair, box).max_mismatch,
        "compat_difference": systems.check_compat_difference(pair, box).max_mismatch,
        "einstein_residual": systems.einstein_check(pair, box).max_residual,
        "N_sys_final": log.col("N_sys")[-1],
    }
    with open(os.path.join(out, "checks.json"), "w") as fh:
        json.dump(checks, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return checks


_ZRP_RATES = {
    "linear": lambda k: np.asarray(k, dtype=float),
    "geometric": lambda k: (np.asarray(k) > 0).astype(float),
    "sqrt": lambda k: np.sqrt(np.asarray(k, dtype=float)),
}


def run_zrp(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    sec = _require(cfg, "zrp")
    g_name = sec.get("g", "linear")
    if g_name not in _ZRP_RATES:
        raise ConfigError(f"unknown zrp rate function {g_name!r}")
    model = micro.ZrpModel(n_sites=int(sec.get("n", 64)),
                           dim=int(sec.get("dim", 1)),
                           g=_ZRP_RATES[g_name],
                           boundary=sec.get("boundary", "closed"),
                           f_boundary=(float(sec.get("f_left", 1.0)),
                                       float(sec.get("f_right", 1.0)))
                           if sec.get("boundary") == "reservoirs" else None,
                           outfield=sec.get("field"),
                           k_cap=int(sec.get("k_cap", 256)))
    t_end = float(sec.get("t_end", 1.0))
    n_obs = int(sec.get("n_obs", 8))
    obs = np.linspace(0.0, t_end, n_obs + 1)[1:]
    replicas = int(sec.get("replicas", 8))
    f0 = float(sec.get("f0", 1.0))
    trajs = micro.simulate_replicas(
        model, lambda s: micro.sample_product_measure(model, f0, s),
        t_end, obs, master_seed=seed, n_replicas=replicas)
    paths = micro.write_replica_csvs(os.path.join(out, "replicas"), trajs)
    burn = float(sec.get("burn_fraction", 0.5)) * t_end
    profs = np.stack([t.density_profile(burn, t_end) for t in trajs])
    mean = profs.mean(axis=0)
    sem = profs.std(axis=0, ddof=1) / np.sqrt(replicas) if replicas > 1 \
        else np.zeros_like(mean)
    pos = model.site_positions()
    rows = [[_fmt(pos[i, 0])] + ([_fmt(pos[i, 1])] if model.dim == 2 else [])
            + [_fmt(mean[i]), _fmt(sem[i])] for i in range(mean.size)]
    head = ["x0"] + (["x1"] if model.dim == 2 else []) + ["density_mean", "density_sem"]
    _write_csv(os.path.join(out, "profile.csv"), head, rows)
    summary = {"n_events_total": int(sum(t.n_events for t in trajs)),
               "replicas": replicas}
    with open(os.path.join(out, "zrp.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def run_gl(cfg: dict, out: str, seed: int, quiet: bool) -> dict:
    sec = _require(cfg, "gl")
    if sec.get("potential", "quadratic") != "quadratic":
        raise ConfigError("only the quadratic potential is configurable")
    model = micro.GlModel(n_sites=int(sec.get("n", 32)),
                          boundary=sec.get("boundary", "periodic"),
                          chem_left=float(sec.get("chem_left", 0.0)),
                          chem_right=float(sec.get("chem_right", 0.0)),
                          dt_em=float(sec.get("dt", 0.01)))
    t_end = float(sec.get("t_end", 10.0))
    n_obs = int(sec.get("n_obs", 10))
    obs = np.linspace(t_end / 2.0, t_end, n_obs)
    xi0 = np.full(model.n_sites, float(sec.get("xi0", 0.0)))
    res = micro.simulate_gl(model, xi0, t_end, rng_seed=seed,
                            obs_times=obs, n_replicas=int(sec.get("replicas", 8)))
    means = res.snapshots.mean(axis=(0, 1))
    sems = res.snapshots.mean(axis=0).std(axis=0, ddof=1) / np.sqrt(res.snapshots.shape[1])
    _write_csv(os.path.join(out, "sites.csv"), ["site", "charge_mean", "charge_sem"],
               [[i, _fmt(means[i]), _fmt(sems[i])] for i in range(means.size)])
    summary = {"charge_drift": res.charge_drift, "t_end": t_end}
    with open(os.path.join(out, "gl.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


_RUNNERS = {
    "eigen": run_eigen,
    "stationary": run_stationary,
    "evolve": run_evolve,
    "decay-certificate": run_decay_certificate,
    "markov": run_markov,
    "systems": run_systems,
    "zrp": run_zrp,
    "gl": run_gl,
}


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _point_seed(master: int, index: int) -> int:
    digest = hashlib.sha256(f"{master}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _run_sweep_point(args):
    index, sub_cfg, out_dir, seed = args
    os.makedirs(out_dir, exist_ok=True)
    try:
        summary = _RUNNERS[sub_cfg["kind"]](sub_cfg, out_dir, seed, True)
        return index, seed, "ok", summary
    except Exception as err:  # per-point failures recorded, sweep continues
        return index, seed, f"error: {type(err).__name__}: {err}", {}


def run_sweep(cfg: dict, out: str, seed: int, quiet: bool, workers: int = 1) -> dict:
    sec = _require(cfg, "sweep")
    kind = sec.get("kind")
    if kind not in _RUNNERS:
        raise ConfigError(f"sweep kind must be a runnable kind, got {kind!r}")
    axes = sec.get("axes")
    if not axes:
        raise ConfigError("sweep needs a non-empty [sweep.axes] table")
    base = sec.get("base", {})
    names = sorted(axes.keys())
    values = [axes[n] for n in names]
    if any(not isinstance(v, list) or not v for v in values):
        raise ConfigError("every sweep axis must be a non-empty list")
    sizes = [len(v) for v in values]
    total = int(np.prod(sizes))
    if total > 10_000:
        raise ConfigError(f"sweep grid has {total} points (limit 10000)")

    jobs = []
    for index in range(total):
        rem, combo = index, []
        for s in reversed(sizes):
            rem, pos = divmod(rem, s)
            combo.append(pos)
        combo.reverse()
        sub = json.loads(json.dumps(base))  # deep copy of plain data
        sub["kind"] = kind
        for name, pos in zip(names, combo):
            _set_dotted(sub, name, axes[name][pos])
        validate_config(sub)
        jobs.append((index, sub, os.path.join(out, "points", f"{index:05d}"),
                     _point_seed(seed, index)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_point, jobs))
    else:
        results = [_run_sweep_point(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    metric_names = sorted({k for _, _, status, summary in results if status == "ok"
                           for k in summary})
    header = ["index"] + names + ["seed", "status"] + metric_names
    rows = []
    for (index, pseed, status, summary), job in zip(results, jobs):
        combo_vals = []
        sub = job[1]
        for name in names:
            node = sub
            for part in name.split("."):
                node = node[part]
            combo_vals.append(node)
        row = [index] + [repr(v) if isinstance(v, float) else v for v in combo_vals]
        row += [pseed, status]
        row += [(_fmt(summary[m]) if (status == "ok" and m in summary and summary[m] is not None
                                      and isinstance(summary[m], (int, float))) else "")
                for m in metric_names]
        rows.append(row)
    _write_csv(os.path.join(out, "sweep.csv"), header, rows)
    n_failed = sum(1 for _, _, status, _ in results if status != "ok")
    return {"points": total, "failed": n_failed}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="entroflow",
        description="run a boundary-driven diffusion / particle-system experiment "
                    "from a TOML config")
    parser.add_argument("--config", required=True, help="path to the TOML run config")
    parser.add_argument("--out", default=None, help="output directory (default: <config>_out)")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--workers", type=int, default=1, help="sweep worker processes")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        cfg, digest = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out = args.out or (os.path.splitext(args.config)[0] + "_out")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    started = time.time()
    start_stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started))
    os.makedirs(out, exist_ok=True)

    try:
        if cfg["kind"] == "sweep":
            summary = run_sweep(cfg, out, seed, args.quiet, workers=args.workers)
        else:
            summary = _RUNNERS[cfg["kind"]](cfg, out, seed, args.quiet)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"numeric failure: {type(err).__name__}: {err}", file=sys.stderr)
        _write_manifest(out, digest, seed, start_stamp, started, status="failed")
        return 3

    _write_manifest(out, digest, seed, start_stamp, started, status="ok")
    if not args.quiet:
        for k, v in summary.items():
            print(f"{k}: {v}")
        print(f"outputs in {out}")
    return 0


def _write_manifest(out, digest, seed, start_stamp, started, status):
    outputs = []
    for root, _, files in os.walk(out):
        for name in sorted(files):
            if name != "manifest.json":
                outputs.append(os.path.relpath(os.path.join(root, name), out))
    manifest = {"config_hash": digest, "seed": seed, "start_time": start_stamp,
                "elapsed": time.time() - started, "status": status,
                "outputs": sorted(outputs)}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    sys.exit(main())
