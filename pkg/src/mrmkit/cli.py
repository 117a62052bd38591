"""Reproducible experiment runner.

    mrm <command> --config <path> [--seed N] [--threads K] [--out DIR]

Commands: zeta-table, simulate-1d, kpz-1d, scaling-check, kpz-2d,
gff-kpz, geometry-selftest.  Each run writes its artifacts (CSV tables,
binary dumps, a plain-text summary) plus a manifest into one directory.
Exit codes: 0 ok, 1 configuration invalid, 2 numerical failure.  With a
fixed config and seed the CSV bodies are byte-identical across runs.
"""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, chaos2d, cones, fractal, levy, measure
from .config import COMMANDS, ConfigErrors, config_hash, parse_config
from .errors import MrmError, NumericalError, ValidationError
from .fields import sample_field, scale_invariance_check, staggered_grid, write_field1d
from .seeding import derive_seed

__all__ = ["main", "run"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(out_dir: str, command: str, cfg_text: str, seed: int,
                    threads: int, files, t0: float):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"command = {command}\n")
        fh.write(f"version = {__version__}\n")
        fh.write(f"config_hash = {config_hash(cfg_text)}\n")
        fh.write(f"base_seed = {seed}\n")
        fh.write(f"threads = {threads}\n")
        fh.write("seed_scheme = sha256(base|label|index)\n")
        fh.write(f"wall_clock_s = {time.time() - t0:.3f}\n")
        for f in files:
            fh.write(f"file = {f}\n")
    return path


def _summary(out_dir: str, lines) -> str:
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _cmd_zeta_table(cfg, seed, threads, out_dir):
    triple = cfg.triple()
    qs = cfg.run["q_list"] or [0.0, 0.5, 1.0, 1.5, 2.0]
    table = levy.exponent_table(triple, qs)
    rows = [(float(q), float(p), float(z))
            for q, p, z in zip(table.qs, table.psi_vals, table.zeta_vals)]
    _write_csv(os.path.join(out_dir, "zeta_table.csv"), ["q", "psi", "zeta"], rows)
    nd = levy.check_nondegenerate(triple) if table.q_c > 1.0 else None
    lines = [
        f"model: {cfg.model['kind']}",
        f"q_c = {table.q_c}",
        f"nondegenerate = {nd.nondegenerate if nd else 'n/a (q_c <= 1)'}",
        f"hypothesis psi(-q)<inf on [0,1] = {nd.hypothesis_ok if nd else 'n/a'}",
    ]
    _summary(out_dir, lines)
    return ["zeta_table.csv", "summary.txt"]


def _cmd_simulate_1d(cfg, seed, threads, out_dir):
    triple = cfg.triple()
    cone = cfg.cone()
    n = cfg.grid["n"]
    grid = staggered_grid(cone.T, n)
    fld = sample_field(grid, cone, triple, derive_seed(seed, "field", 0))
    write_field1d(fld, os.path.join(out_dir, "field_0.bin"))
    mg = measure.build_measure(fld)
    mfield = type(fld)(grid=fld.grid, values=np.log(mg.masses), cone=cone,
                       triple=triple, seed=fld.seed, method="measure-cells")
    write_field1d(mfield, os.path.join(out_dir, "measure_0.bin"))
    files = ["field_0.bin", "measure_0.bin"]
    qs = cfg.run["q_list"] or [0.5, 1.0]
    scales = cfg.run["scale_list"] or [cone.T / 16, cone.T / 8, cone.T / 4, cone.T / 2]
    replicas = cfg.run["replicas"]
    tables = measure.pooled_moment_tables(triple, cone, scales, qs, replicas, seed,
                                          window=cone.T)
    rows = []
    fit_rows = []
    for q in qs:
        fit = measure.fit_moment_scaling(tables[float(q)], sorted(scales), cone.T, q,
                                         seed=seed)
        for t, lm, se in zip(fit.scales, fit.log_means, fit.stderrs):
            rows.append((float(q), float(t), float(lm), float(se), replicas))
        fit_rows.append((float(q), "fit", float(fit.slope), float(fit.slope_se), replicas))
    _write_csv(os.path.join(out_dir, "moments.csv"),
               ["q", "t", "log_mean", "stderr", "n_rep"], rows + fit_rows)
    files.append("moments.csv")
    _summary(out_dir, [
        f"model: {cfg.model['kind']}",
        f"grid: n={n}, l={cone.l}, T={cone.T}",
        f"replicas = {replicas}",
        f"total mass (replica 0) = {mg.total_mass!r}",
    ])
    files.append("summary.txt")
    return files


def _cmd_scaling_check(cfg, seed, threads, out_dir):
    rows = []
    lam = cfg.run["lambda"]
    qs = cfg.run["q_list"] or [0.5, 1.0]
    replicas = cfg.run["replicas"]
    kind = cfg.model["kind"]
    all_passed = True
    if kind in ("lognormal-2d",):
        m = cfg.model
        for q in qs:
            rep = chaos2d.ball_mass_scaling_check(
                m["gamma2"], m["r_scale"], m["l"], lam, q, replicas, seed,
                n=cfg.grid["n"],
            )
            rows.append(("ball-moment", f"lam={lam};q={q}", rep.observed_ratio,
                         rep.predicted_ratio, rep.log_se, rep.z, int(rep.passed)))
            all_passed &= rep.passed
    else:
        triple = cfg.triple()
        cone = cfg.cone()
        si = scale_invariance_check(cone, triple, lam, replicas=replicas, seed=seed)
        for name, (val, tol) in si.statistics.items():
            rows.append((f"field-rescaling[{si.kind}]", name, val, 0.0, tol, val,
                         int(abs(val) <= tol)))
        all_passed &= si.passed
        for q in qs:
            rep = measure.global_scaling_check(triple, cone, lam, q,
                                               replicas=replicas, seed=seed)
            rows.append(("interval-moment", f"lam={lam};q={q}", rep.observed_ratio,
                         rep.predicted_ratio, rep.log_se, rep.z, int(rep.passed)))
            all_passed &= rep.passed
    _write_csv(os.path.join(out_dir, "scaling_report.csv"),
               ["check", "param", "observed", "expected", "se", "z", "passed"], rows)
    _summary(out_dir, [f"checks = {len(rows)}", f"all_passed = {all_passed}"])
    if not all_passed:
        raise NumericalError("a scaling check failed its tolerance")
    return ["scaling_report.csv", "summary.txt"]


def _kpz_common(out_dir, report):
    rows = [(i, est, se, d) for i, est, se, d in report.rows]
    _write_csv(os.path.join(out_dir, "kpz_replicas.csv"),
               ["replica", "dim_rho_est", "stderr", "discarded"], rows)
    _write_csv(os.path.join(out_dir, "kpz_summary.csv"),
               ["set", "delta0", "delta_pred", "mean", "stderr", "euclid_est",
                "replicas", "discarded", "tolerance", "passed", "within_hypotheses"],
               [(report.set_kind, report.delta0, report.delta_pred, report.mean,
                 report.stderr, report.euclid.slope, report.replicas,
                 report.discarded, report.tolerance, int(report.passed),
                 int(report.within_hypotheses))])
    _summary(out_dir, [
        f"set = {report.set_kind} (delta0 = {report.delta0!r})",
        f"analytic prediction delta = {report.delta_pred!r}",
        f"measured dimension = {report.mean!r} +- {report.stderr!r}",
        f"euclidean estimate = {report.euclid.slope!r}",
        f"replicas = {report.replicas}, discarded = {report.discarded}",
        "within theorem hypotheses" if report.within_hypotheses
        else "OUTSIDE theorem hypotheses",
        "PASS" if report.passed else "FAIL",
    ])
    return ["kpz_replicas.csv", "kpz_summary.csv", "summary.txt"]


def _cmd_kpz_1d(cfg, seed, threads, out_dir):
    report = fractal.kpz_verify_1d(
        cfg.fractal_set(), cfg.triple(), cfg.cone(),
        replicas=cfg.run["replicas"], seed=seed,
        scales=cfg.run["box_scales"],
        tolerance=cfg.run["tolerance"] or 0.08,
        threads=threads,
    )
    return _kpz_common(out_dir, report)


def _cmd_kpz_2d(cfg, seed, threads, out_dir):
    report = chaos2d.kpz_verify_2d(
        cfg.fractal_set(), cfg.kernel2d(),
        replicas=cfg.run["replicas"], seed=seed, grid=cfg.grid2d(),
        levels=cfg.run["levels"],
        tolerance=cfg.run["tolerance"] or 0.1,
        gff_r=cfg.model.get("r_set"),
        threads=threads,
    )
    return _kpz_common(out_dir, report)


def _cmd_geometry_selftest(cfg, seed, threads, out_dir):
    rng = np.random.default_rng(derive_seed(seed, "geometry"))
    n_cfg = cfg.run["n_configs"]
    rows = []
    worst = 0.0
    for _ in range(n_cfg):
        T = float(rng.uniform(0.5, 4.0))
        l = float(T * rng.uniform(0.01, 1.0))
        tau = float(rng.uniform(0.0, 1.5) * T)
        p = cones.ConeParams(l=l, T=T)
        ana = cones.cone_overlap(p, tau)
        quad = cones.overlap_quadrature(p, tau)
        err = abs(ana - quad)
        worst = max(worst, err)
        rows.append((l, T, tau, ana, quad, err))
    seam_rows = []
    for _ in range(10):
        T = float(rng.uniform(0.5, 4.0))
        l = float(T * rng.uniform(0.01, 0.9))
        p = cones.ConeParams(l=l, T=T)
        gap = abs(cones.cone_overlap(p, l * (1 - 1e-15)) - cones.cone_overlap(p, l))
        seam_rows.append((l, T, l, gap, 0.0, gap))
        worst_seam = gap
    _write_csv(os.path.join(out_dir, "geometry_selftest.csv"),
               ["l", "T", "tau", "analytic", "quadrature", "abs_err"],
               rows + seam_rows)
    _summary(out_dir, [f"configs = {n_cfg}", f"max_abs_err = {worst!r}",
                       f"passed = {worst <= 1e-8}"])
    if worst > 1e-8:
        raise NumericalError(f"cone overlap disagrees with quadrature by {worst}")
    return ["geometry_selftest.csv", "summary.txt"]


_DISPATCH = {
    "zeta-table": _cmd_zeta_table,
    "simulate-1d": _cmd_simulate_1d,
    "kpz-1d": _cmd_kpz_1d,
    "scaling-check": _cmd_scaling_check,
    "kpz-2d": _cmd_kpz_2d,
    "gff-kpz": _cmd_kpz_2d,
    "geometry-selftest": _cmd_geometry_selftest,
}


def run(command: str, config_path: str, seed=None, threads=None, out_dir=None) -> list:
    """Execute one command; returns the list of emitted files (relative to
    the artifact directory).  Raises on failure."""
    cfg = parse_config(config_path, command)
    base_seed = cfg.run["seed"] if seed is None else int(seed)
    n_threads = cfg.run["threads"] if threads is None else int(threads)
    out = out_dir or cfg.output["directory"]
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    files = _DISPATCH[command](cfg, base_seed, n_threads, out)
    _write_manifest(out, command, cfg.raw_text, base_seed, n_threads, files, t0)
    return files


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrm",
        description="simulation and verification toolkit for multifractal random measures",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the INI-style config")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--threads", type=int, default=None, help="override run.threads")
    parser.add_argument("--out", default=None, help="override output.directory")
    args = parser.parse_args(argv)
    try:
        files = run(args.command, args.config, seed=args.seed, threads=args.threads,
                    out_dir=args.out)
    except ConfigErrors as exc:
        print(json.dumps({"errors": exc.errors}), file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(json.dumps({"errors": [str(exc)]}), file=sys.stderr)
        return 1
    except MrmError as exc:
        print(json.dumps({"errors": [str(exc)], "kind": "numerical"}), file=sys.stderr)
        return 2
    print("\n".join(files))
    return 0


if __name__ == "__main__":
    sys.exit(main())
