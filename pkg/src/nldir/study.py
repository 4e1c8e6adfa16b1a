"""Horizon-sweep experiments: manufactured-solution errors, coercivity
probes, and penalty-variant comparisons.

A sweep couples the mesh to the horizon (h = delta/ratio), assembles
and minimizes at each delta in a strictly decreasing list, and records
the L2 error against the exact local solution, a smoothed boundary
trace norm, the energy, and the kernel constant sigma_R. Reports are
reproducible bit for bit given config and seed, except for the wall
time column. Error trends are asserted by the callers (tests), not
here; rates are reported as information only.

The manufactured catalog is this laboratory's own choice of closed-form
local solutions; each entry is verified symbolically when the catalog
is first used.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import assembly
from .assembly import PenaltySpec, boundary_data, lp_norm, mollify
from .errors import ConfigError, NldirError
from .geometry import build_mesh
from .kernels import kernel_by_id, sigma_r
from .minimize import SolveOptions, solve_p_energy, solve_quadratic

_TINY = 1e-300

CSV_HEADER = "delta,h,penalty,p,l2_error,trace_norm,energy,sigma_r,seconds"


@dataclass(frozen=True)
class StudyConfig:
    """Declarative description of one sweep. deltas must be strictly
    decreasing and the horizon/mesh ratio at least 2."""

    shape: dict
    deltas: tuple
    ratio: float = 4.0
    p: float = 2.0
    variant: str = "product"
    shi_delta_sq_prefactor: bool = False
    case: str = "zero"
    kernel_r: str = "quartic"
    kernel_k: str = "quartic"
    kernel_w: str = "wendland"
    kernel_khat: str = "quartic"
    solver: SolveOptions = field(default_factory=SolveOptions)
    seed: int = 0
    threads: int = 1
    eigen_modes: int = 0
    eigen_mass: str = "L2"
    variants: tuple = ()
    trials: int = 100
    out_csv: str = None
    out_json: str = None

    def __post_init__(self):
        object.__setattr__(self, "deltas",
                           tuple(float(d) for d in self.deltas))
        if not self.deltas:
            raise ConfigError("need at least one delta", field="deltas")
        if any(d2 >= d1 for d1, d2 in zip(self.deltas, self.deltas[1:])):
            raise ConfigError("deltas must be strictly decreasing",
                              field="deltas", deltas=list(self.deltas))
        if any(d <= 0 for d in self.deltas):
            raise ConfigError("deltas must be positive", field="deltas",
                              deltas=list(self.deltas))
        if not self.ratio >= 2.0:
            raise ConfigError("horizon/mesh ratio must be at least 2",
                              field="ratio", ratio=self.ratio)
        if not self.p > 1.0:
            raise ConfigError("exponent must exceed 1", field="p", p=self.p)
        if self.eigen_modes < 0:
            raise ConfigError("eigen_modes must be nonnegative",
                              field="eigen_modes", value=self.eigen_modes)
        if self.eigen_mass not in ("L2", "nonlocalW", "both"):
            raise ConfigError("unknown eigen mass model", field="eigen_mass",
                              value=self.eigen_mass)
        if self.threads < 1:
            raise ConfigError("threads must be at least 1", field="threads",
                              value=self.threads)
        object.__setattr__(self, "variants", tuple(self.variants))

    @classmethod
    def from_dict(cls, data: dict):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("unknown config field",
                              field=sorted(unknown)[0],
                              supported=sorted(known))
        kwargs = dict(data)
        if "solver" in kwargs and isinstance(kwargs["solver"], dict):
            kwargs["solver"] = SolveOptions.from_dict(kwargs["solver"])
        return cls(**kwargs)

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if isinstance(val, SolveOptions):
                val = {"tol": val.tol, "max_iter": val.max_iter,
                       "seed": val.seed,
                       "sufficient_decrease": val.sufficient_decrease,
                       "backtrack": val.backtrack}
            elif isinstance(val, tuple):
                val = list(val)
            out[name] = val
        return out


@dataclass(frozen=True)
class SweepRow:
    delta: float
    h: float
    penalty: str
    p: float
    l2_error: float = None
    trace_norm: float = None
    energy: float = None
    sigma_r: float = None
    seconds: float = None
    ratio_to_limit: float = None
    converged: bool = None
    iterations: int = None
    eigen_lambdas: tuple = None
    error: str = None


@dataclass(frozen=True)
class StudyReport:
    rows: tuple
    environment: dict

    def ok_rows(self):
        return [r for r in self.rows if r.error is None]


# -- manufactured catalog ----------------------------------------------


@dataclass(frozen=True)
class ManufacturedCase:
    """A boundary datum together with the exact solution of the local
    limit problem it induces."""

    id: str
    datum: str
    dims: tuple  # None means any dimension
    exponents: tuple  # None means any p > 1
    exact: object  # callable points -> values
    grad_power: object  # callable (points, p) -> |grad u*|^p values

    def admits(self, dim: int, p: float) -> bool:
        if self.dims is not None and dim not in self.dims:
            return False
        if self.exponents is not None and p not in self.exponents:
            return False
        return True


_CATALOG = None


def _build_catalog():
    import sympy

    x, y = sympy.symbols("x y")
    entries = {
        "zero": (sympy.Integer(0), (x,), None, None),
        "linear_x": (x, (x, y), None, None),
        "harmonic_x2_minus_y2": (x**2 - y**2, (x, y), (2,), (2.0,)),
        "harmonic_xy": (x * y, (x, y), (2,), (2.0,)),
    }
    catalog = {}
    for cid, (expr, syms, dims, exps) in entries.items():
        # registration-time check that the exact solution solves the
        # local problem: harmonic for the p = 2 entries, affine (hence
        # p-harmonic for every p) otherwise
        if exps == (2.0,):
            lap = sum(sympy.diff(expr, s, 2) for s in syms)
            if sympy.simplify(lap) != 0:
                raise ConfigError("catalog entry is not harmonic", case=cid)
        else:
            hess = [sympy.diff(expr, s1, s2) for s1 in syms for s2 in syms]
            if any(sympy.simplify(hh) != 0 for hh in hess):
                raise ConfigError("catalog entry is not affine", case=cid)
        fn = sympy.lambdify(syms, expr, "numpy")
        gsq = sum(sympy.diff(expr, s) ** 2 for s in syms)
        gfn = sympy.lambdify(syms, gsq, "numpy")

        def exact(points, _fn=fn, _ns=len(syms)):
            cols = [points[:, i] if i < points.shape[1]
                    else np.zeros(len(points)) for i in range(_ns)]
            vals = np.asarray(_fn(*cols), dtype=float)
            return np.broadcast_to(vals, (len(points),)).copy()

        def grad_power(points, p, _gfn=gfn, _ns=len(syms)):
            cols = [points[:, i] if i < points.shape[1]
                    else np.zeros(len(points)) for i in range(_ns)]
            vals = np.asarray(_gfn(*cols), dtype=float)
            vals = np.broadcast_to(vals, (len(points),)).copy()
            return vals ** (p / 2.0)

        catalog[cid] = ManufacturedCase(cid, cid, dims, exps, exact,
                                        grad_power)
    return catalog


def manufactured_case(case_id: str) -> ManufacturedCase:
    global _CATALOG
    if _CATALOG is None:
        _CATALOG = _build_catalog()
    if case_id not in _CATALOG:
        raise ConfigError("unknown manufactured case", case=case_id,
                          catalog=sorted(_CATALOG))
    return _CATALOG[case_id]


# -- sweeps --------------------------------------------------------------


def _shape_dim(shape: dict) -> int:
    return 1 if "interval" in shape else 2


def _run_row(cfg: StudyConfig, case, delta, sigma, keep_field=False):
    t0 = time.perf_counter()
    h = delta / cfg.ratio
    mesh = build_mesh(cfg.shape, h)
    kernel_r = kernel_by_id(cfg.kernel_r)
    spec = PenaltySpec(cfg.variant, kernel_by_id(cfg.kernel_k),
                       cfg.shi_delta_sq_prefactor)
    a = boundary_data(mesh, case.datum)
    op = assembly.assemble(mesh, kernel_r, spec, delta, cfg.p, a)
    if cfg.p == 2.0:
        result = solve_quadratic(op, cfg.solver)
    else:
        result = solve_p_energy(op, cfg.solver)
    u = result.minimizer.values

    exact_vals = case.exact(mesh.interior_points)
    l2_error = lp_norm(mesh, u - exact_vals, 2.0)
    khat = kernel_by_id(cfg.kernel_khat)
    _, smooth_b = mollify(mesh, khat, delta, u)
    trace_norm = float(np.sqrt(np.sum(
        mesh.boundary_weights * (smooth_b.values - a.values) ** 2)))
    grad_int = float(np.sum(mesh.interior_weights
                            * case.grad_power(mesh.interior_points, cfg.p)))
    ratio_to_limit = (result.energy / (sigma * grad_int)
                      if sigma * grad_int > _TINY else None)

    eigen_lambdas = None
    if cfg.eigen_modes > 0:
        from .kernels import normalize_w
        from .spectra import EigenProblem, solve_eigen
        op0 = assembly.assemble(mesh, kernel_r, spec, delta, cfg.p,
                                np.zeros(mesh.n_boundary))
        mass = cfg.eigen_mass if cfg.eigen_mass != "both" else "L2"
        w_kernel = None
        if mass == "nonlocalW":
            w_kernel = normalize_w(kernel_by_id(cfg.kernel_w), mesh.dim)
        prob = EigenProblem(op0, mass, cfg.eigen_modes, W=w_kernel)
        eig = solve_eigen(prob, SolveOptions(tol=1e-9, max_iter=2000,
                                             seed=cfg.seed))
        eigen_lambdas = tuple(float(v) for v in eig.eigenvalues)

    row = SweepRow(delta=delta, h=mesh.h, penalty=cfg.variant, p=cfg.p,
                   l2_error=l2_error, trace_norm=trace_norm,
                   energy=result.energy, sigma_r=sigma,
                   seconds=time.perf_counter() - t0,
                   ratio_to_limit=ratio_to_limit,
                   converged=result.converged,
                   iterations=result.iterations,
                   eigen_lambdas=eigen_lambdas)
    return (row, u if keep_field else None, mesh)


def run_delta_sweep(cfg: StudyConfig) -> StudyReport:
    """One row per delta; a failing row records its reason and the
    remaining rows still run. Output files are written when the config
    names them."""
    report, _ = _sweep_with_fields(cfg, keep_fields=False)
    _write_outputs(report, cfg)
    return report


def _sweep_with_fields(cfg: StudyConfig, keep_fields: bool):
    case = manufactured_case(cfg.case)
    dim = _shape_dim(cfg.shape)
    if not case.admits(dim, cfg.p):
        raise ConfigError("manufactured case does not admit this setup",
                          case=case.id, dim=dim, p=cfg.p)
    sigma = sigma_r(kernel_by_id(cfg.kernel_r), cfg.p, dim).value

    def one(delta):
        try:
            return _run_row(cfg, case, delta, sigma, keep_field=keep_fields)
        except NldirError as exc:
            h = delta / cfg.ratio
            return (SweepRow(delta=delta, h=h, penalty=cfg.variant, p=cfg.p,
                             error=f"{type(exc).__name__}: {exc}"),
                    None, None)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(one, cfg.deltas))
    else:
        outcomes = [one(d) for d in cfg.deltas]

    rows = tuple(row for row, _, _ in outcomes)
    env = {
        "kernels": {"R": cfg.kernel_r, "K": cfg.kernel_k,
                    "W": cfg.kernel_w, "Khat": cfg.kernel_khat},
        "seed": cfg.seed,
        "case": cfg.case,
        "case_catalog_note": "manufactured cases are this laboratory's "
                             "own catalog",
        "variant": cfg.variant,
        "p": cfg.p,
        "ratio": cfg.ratio,
        "shape": cfg.shape,
        "version": _version(),
    }
    report = StudyReport(rows=rows, environment=env)
    fields = [(row.delta, u, mesh) for row, u, mesh in outcomes
              if u is not None]
    return report, fields


def _version():
    from . import __version__
    return __version__


# -- coercivity ----------------------------------------------------------


@dataclass(frozen=True)
class CoercivityReport:
    variant: str
    delta: float
    trials: int
    skipped: int
    min_ratio: float
    c_n: float  # min_ratio scaled by the variant's horizon power
    ratios: tuple


def coercivity_probe(mesh, spec: PenaltySpec, khat, delta: float,
                     trials: int, seed: int = 0) -> CoercivityReport:
    """Minimum over random probe fields of
    penalty_energy(u) / ||smoothed trace of u||^2 with zero datum.
    Probes where both sides vanish are skipped. c_n rescales the
    minimum by delta^2 (all variants carry delta^-2 at p = 2), giving
    a number comparable across horizons."""
    if trials < 10:
        raise ConfigError("need at least 10 trials", field="trials",
                          trials=trials)
    op = assembly.assemble(mesh, spec.kernel, spec, delta, 2.0,
                           np.zeros(mesh.n_boundary))
    rng = np.random.default_rng(seed)
    ratios = []
    skipped = 0
    for _ in range(trials):
        u = rng.standard_normal(mesh.n_interior)
        pen = op.penalty_energy(u)
        _, smooth_b = mollify(mesh, khat, delta, u)
        trace_sq = float(np.sum(mesh.boundary_weights * smooth_b.values**2))
        if trace_sq <= _TINY:
            if pen <= _TINY:
                skipped += 1
                continue
            ratios.append(np.inf)
            continue
        ratios.append(pen / trace_sq)
    if not ratios:
        raise ConfigError("all probes were degenerate", trials=trials)
    min_ratio = float(min(ratios))
    return CoercivityReport(variant=spec.variant, delta=delta, trials=trials,
                            skipped=skipped, min_ratio=min_ratio,
                            c_n=min_ratio * delta**2, ratios=tuple(ratios))


# -- variant comparison ----------------------------------------------------


def compare_penalties(cfg: StudyConfig, variants) -> StudyReport:
    """Run the same sweep once per variant on identical meshes and
    record pairwise L2 distances between the variant minimizers at each
    delta (in the report environment)."""
    variants = list(variants)
    if not variants:
        raise ConfigError("need at least one variant", field="variants")
    all_rows = []
    fields_by_variant = {}
    env = None
    for var in variants:
        sub = replace(cfg, variant=var, variants=())
        report, fields = _sweep_with_fields(sub, keep_fields=True)
        all_rows.extend(report.rows)
        fields_by_variant[var] = {d: (u, mesh) for d, u, mesh in fields}
        env = report.environment
    distances = {}
    for ai in range(len(variants)):
        for bi in range(ai + 1, len(variants)):
            va, vb = variants[ai], variants[bi]
            key = f"{va}|{vb}"
            per_delta = {}
            for d in cfg.deltas:
                if d in fields_by_variant[va] and d in fields_by_variant[vb]:
                    ua, mesh = fields_by_variant[va][d]
                    ub, _ = fields_by_variant[vb][d]
                    per_delta[repr(d)] = lp_norm(mesh, ua - ub, 2.0)
            distances[key] = per_delta
    env = dict(env or {})
    env["variants"] = variants
    env["pairwise_l2_distances"] = distances
    merged = StudyReport(rows=tuple(all_rows), environment=env)
    _write_outputs(merged, cfg)
    return merged


# -- report output ---------------------------------------------------------


def _g17(value):
    if value is None:
        return ""
    return f"{value:.17g}"


def report_csv_text(report: StudyReport) -> str:
    lines = [CSV_HEADER]
    for r in report.ok_rows():
        lines.append(",".join([
            _g17(r.delta), _g17(r.h), r.penalty, _g17(r.p),
            _g17(r.l2_error), _g17(r.trace_norm), _g17(r.energy),
            _g17(r.sigma_r), _g17(r.seconds)]))
    return "\n".join(lines) + "\n"


def report_json_dict(report: StudyReport) -> dict:
    rows = []
    for r in report.rows:
        row = {"delta": r.delta, "h": r.h, "penalty": r.penalty, "p": r.p}
        if r.error is not None:
            row["error"] = r.error
        else:
            row.update(l2_error=r.l2_error, trace_norm=r.trace_norm,
                       energy=r.energy, sigma_r=r.sigma_r,
                       seconds=r.seconds, ratio_to_limit=r.ratio_to_limit,
                       converged=r.converged, iterations=r.iterations)
            if r.eigen_lambdas is not None:
                row["eigen_lambdas"] = list(r.eigen_lambdas)
        rows.append(row)
    return {"rows": rows, "environment": report.environment}


def _write_outputs(report: StudyReport, cfg: StudyConfig):
    if cfg.out_csv:
        with open(cfg.out_csv, "w", encoding="utf-8") as fh:
            fh.write(report_csv_text(report))
    if cfg.out_json:
        with open(cfg.out_json, "w", encoding="utf-8") as fh:
            json.dump(report_json_dict(report), fh, indent=1)
