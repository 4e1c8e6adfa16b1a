"""Command-line frontend.

Subcommands: sigma, validate-kernel, solve, eigen, sweep, compare,
probe-coercivity. Experiment state lives entirely in the JSON config
and the output files; the config file is never modified. Exit status 0
on success, 1 on a domain error (machine-readable JSON on stderr), 2 on
a usage error. Human-readable numbers print with 6 significant digits;
machine files carry 17.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import assembly, study
from .errors import ConfigError, KernelError, NldirError
from .geometry import build_mesh
from .kernels import (kernel_by_id, normalize_w, sigma_r, validate_kernel)
from .minimize import solve_p_energy, solve_quadratic
from .study import StudyConfig


def _parser():
    ap = argparse.ArgumentParser(
        prog="nldir",
        description="Laboratory for penalized nonlocal Dirichlet energies: "
                    "kernel constants, minimizers, spectra, horizon sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", help="override the primary output path")
        sp.add_argument("--threads", type=int,
                        help="worker count (env NLDIR_THREADS as fallback)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--verbose", action="store_true")
        return sp

    sp = add("sigma", "print the kernel constant sigma_R")
    sp.add_argument("--kernel", required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--rel-tol", type=float, default=1e-8)

    sp = add("validate-kernel", "run the kernel admissibility checks")
    sp.add_argument("--kernel", required=True)

    add("solve", "minimize one assembled energy and save the field")
    add("eigen", "compute nonlocal eigenpairs, CSV output")
    add("sweep", "run a horizon sweep from a config")
    add("compare", "sweep several penalty variants on identical meshes")
    add("probe-coercivity", "random-probe coercivity ratios")
    return ap


def _load_config(args) -> StudyConfig:
    if not args.config:
        raise ConfigError("this command requires --config", field="config")
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found", path=args.config)
    except json.JSONDecodeError as exc:
        raise ConfigError("config file is not valid JSON",
                          path=args.config, detail=str(exc))
    cfg = StudyConfig.from_dict(data)
    threads = args.threads
    if threads is None and os.environ.get("NLDIR_THREADS"):
        try:
            threads = int(os.environ["NLDIR_THREADS"])
        except ValueError:
            raise ConfigError("NLDIR_THREADS must be an integer",
                              value=os.environ["NLDIR_THREADS"])
    if threads is None and "threads" not in data:
        threads = os.cpu_count() or 1
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, out_csv=args.out)
    if args.verbose:
        print(f"config: {json.dumps(cfg.to_dict())}", file=sys.stderr)
    return cfg


def _cmd_sigma(args):
    value = sigma_r(kernel_by_id(args.kernel), args.p, args.dim,
                    rel_tol=args.rel_tol).value
    print(f"{value:.6g}")
    return 0


def _cmd_validate_kernel(args):
    kernel = kernel_by_id(args.kernel)
    report = validate_kernel(kernel)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.condition}: {check.detail}")
    if report.passed:
        return 0
    err = KernelError("kernel failed validation", kernel=kernel.label,
                      conditions=[c.condition for c in report.failures()])
    print(json.dumps(err.payload()), file=sys.stderr)
    return 1


def _single_delta_setup(cfg):
    delta = cfg.deltas[0]
    mesh = build_mesh(cfg.shape, delta / cfg.ratio)
    kernel_r = kernel_by_id(cfg.kernel_r)
    spec = assembly.PenaltySpec(cfg.variant, kernel_by_id(cfg.kernel_k),
                                cfg.shi_delta_sq_prefactor)
    return delta, mesh, kernel_r, spec


def _cmd_solve(args):
    cfg = _load_config(args)
    delta, mesh, kernel_r, spec = _single_delta_setup(cfg)
    case = study.manufactured_case(cfg.case)
    a = assembly.boundary_data(mesh, case.datum)
    op = assembly.assemble(mesh, kernel_r, spec, delta, cfg.p, a)
    if cfg.p == 2.0:
        result = solve_quadratic(op, cfg.solver)
    else:
        result = solve_p_energy(op, cfg.solver)
    u = result.minimizer.values
    err = assembly.lp_norm(mesh, u - case.exact(mesh.interior_points), 2.0)
    out = cfg.out_csv
    if out:
        cols = [mesh.interior_points[:, i] for i in range(mesh.dim)]
        header = ",".join(("x", "y", "z")[i] for i in range(mesh.dim)) + ",u"
        lines = [header]
        for row_idx in range(mesh.n_interior):
            vals = [f"{c[row_idx]:.17g}" for c in cols] + [f"{u[row_idx]:.17g}"]
            lines.append(",".join(vals))
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    print(f"delta {delta:.6g}  nodes {mesh.n_interior}  "
          f"energy {result.energy:.6g}  grad {result.gradient_norm:.6g}  "
          f"iterations {result.iterations}  converged {result.converged}  "
          f"l2_error {err:.6g}")
    return 0


def _cmd_eigen(args):
    from .spectra import EigenProblem, solve_eigen
    cfg = _load_config(args)
    if cfg.eigen_modes < 1:
        raise ConfigError("eigen requires eigen_modes >= 1 in the config",
                          field="eigen_modes", value=cfg.eigen_modes)
    delta, mesh, kernel_r, spec = _single_delta_setup(cfg)
    op = assembly.assemble(mesh, kernel_r, spec, delta, 2.0,
                           np.zeros(mesh.n_boundary))
    masses = (["L2", "nonlocalW"] if cfg.eigen_mass == "both"
              else [cfg.eigen_mass])
    lines = ["mode,lambda,residual,mass_model,delta,h"]
    from .minimize import SolveOptions
    opts = SolveOptions(tol=1e-9, max_iter=max(cfg.solver.max_iter, 2000),
                        seed=cfg.seed)
    for mass in masses:
        w_kernel = None
        if mass == "nonlocalW":
            w_kernel = normalize_w(kernel_by_id(cfg.kernel_w), mesh.dim)
        prob = EigenProblem(op, mass, cfg.eigen_modes, W=w_kernel)
        res = solve_eigen(prob, opts)
        for mode in range(cfg.eigen_modes):
            lines.append(",".join([
                str(mode + 1), f"{res.eigenvalues[mode]:.17g}",
                f"{res.residuals[mode]:.17g}", mass,
                f"{res.delta:.17g}", f"{res.h:.17g}"]))
            print(f"mode {mode + 1} ({mass}): lambda "
                  f"{res.eigenvalues[mode]:.6g} residual "
                  f"{res.residuals[mode]:.6g}")
    if cfg.out_csv:
        with open(cfg.out_csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def _print_report(report):
    print(study.CSV_HEADER.replace(",", "  "))
    for r in report.rows:
        if r.error is not None:
            print(f"{r.delta:.6g}  {r.h:.6g}  {r.penalty}  {r.p:.6g}  "
                  f"ERROR {r.error}", file=sys.stderr)
        else:
            print(f"{r.delta:.6g}  {r.h:.6g}  {r.penalty}  {r.p:.6g}  "
                  f"{r.l2_error:.6g}  {r.trace_norm:.6g}  {r.energy:.6g}  "
                  f"{r.sigma_r:.6g}  {r.seconds:.6g}")


def _cmd_sweep(args):
    cfg = _load_config(args)
    report = study.run_delta_sweep(cfg)
    _print_report(report)
    return 0 if report.ok_rows() else 1


def _cmd_compare(args):
    cfg = _load_config(args)
    if not cfg.variants:
        raise ConfigError("compare requires a nonempty variants list",
                          field="variants")
    report = study.compare_penalties(cfg, cfg.variants)
    _print_report(report)
    for key, dists in report.environment["pairwise_l2_distances"].items():
        for dstr, dist in dists.items():
            print(f"distance {key} at delta {float(dstr):.6g}: {dist:.6g}")
    return 0 if report.ok_rows() else 1


def _cmd_probe(args):
    cfg = _load_config(args)
    delta, mesh, _, spec = _single_delta_setup(cfg)
    khat = kernel_by_id(cfg.kernel_khat)
    report = study.coercivity_probe(mesh, spec, khat, delta,
                                    cfg.trials, cfg.seed)
    print(f"variant {report.variant}  delta {report.delta:.6g}  "
          f"trials {report.trials}  skipped {report.skipped}  "
          f"min_ratio {report.min_ratio:.6g}  c_n {report.c_n:.6g}")
    if cfg.out_json or cfg.out_csv:
        payload = {"variant": report.variant, "delta": report.delta,
                   "trials": report.trials, "skipped": report.skipped,
                   "min_ratio": report.min_ratio, "c_n": report.c_n,
                   "ratios": [None if np.isinf(r) else r
                              for r in report.ratios]}
        path = cfg.out_json or cfg.out_csv
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
    return 0


_HANDLERS = {
    "sigma": _cmd_sigma,
    "validate-kernel": _cmd_validate_kernel,
    "solve": _cmd_solve,
    "eigen": _cmd_eigen,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "probe-coercivity": _cmd_probe,
}


def dispatch(argv) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return _HANDLERS[args.command](args)
    except NldirError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
