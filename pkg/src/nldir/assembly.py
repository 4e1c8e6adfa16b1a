"""Assembly of the discrete penalized nonlocal energy.

The functional has an interior part

    (1/delta^p) sum_{i != j} q_i q_j R_delta(|x_i - x_j|) |u_i - u_j|^p

(ordered pairs, so every unordered pair counts twice) plus one of five
boundary penalty variants. With k_b[j] = q_j K_delta(|x_b - x_j|) and
r_b[j] = q_j Rbar_delta(|x_b - x_j|) (Rbar the upper antiderivative of
R), the penalties at boundary node b with weight w_b and datum a_b are

    product   : w_b |(k_b . u - a_b sum(k_b)) / delta|^p
    pointwise : (w_b/delta^p) sum_j k_b[j] |u_j - a_b|^p
    dirac_diagonal : (w_b/delta^2) sum_j k_b[j] u_j^2          (a == 0)
    wang      : (2 w_b / (delta^2 wbb_b)) (k -> r) (r_b . u - a_b sum(r_b))^2
    shi       : (4 w_b / mu_b) sum_j r_b[j] u_j^2              (a == 0)

where wbb_b = sum_j q_j Rbarbar_delta(|x_b - x_j|) and
mu_b = min(2 delta, max(delta^2, d(x_b))) = delta^2 at boundary nodes
(their boundary distance is zero). A config switch selects the
alternative shi prefactor 4/(delta^2 mu_b); both scalings appear in the
literature on this penalty. dirac_diagonal and shi are zero-datum
penalties; wang, dirac_diagonal and shi are quadratic (p = 2) only.

For p = 2 the assembled operator also carries a quadratic form
F(u) = u^T A u - 2 l^T u + c0 with A split into a sparse interior
matrix, a penalty diagonal, and per-boundary-node rank-one terms that
are never materialized densely.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConfigError, MollifierError
from .geometry import DomainMesh, neighbor_pairs
from .kernels import (KernelSpec, ScaledKernel, antiderivative_kernel,
                      eval_scaled, validate_kernel)

VARIANTS = ("product", "pointwise", "dirac_diagonal", "wang", "shi")
ZERO_DATA_VARIANTS = ("dirac_diagonal", "shi")
QUADRATIC_ONLY_VARIANTS = ("dirac_diagonal", "wang", "shi")

_TINY = 1e-300


@dataclass(frozen=True)
class Field:
    """Values at the interior nodes of a particular mesh."""

    mesh: DomainMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_interior,):
            raise AssemblyError("field length does not match the mesh",
                                expected=self.mesh.n_interior,
                                got=list(vals.shape))
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, mesh, fn):
        return cls(mesh, np.asarray(fn(mesh.interior_points), dtype=float))

    @classmethod
    def zero(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_interior))


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet datum sampled at the boundary nodes of a mesh."""

    mesh: DomainMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_boundary,):
            raise AssemblyError("boundary data length does not match the mesh",
                                expected=self.mesh.n_boundary,
                                got=list(vals.shape))
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, mesh, fn):
        return cls(mesh, np.asarray(fn(mesh.boundary_points), dtype=float))


_DATA_CATALOG = ("zero", "linear_x", "harmonic_x2_minus_y2", "harmonic_xy")


def boundary_data(mesh: DomainMesh, spec) -> BoundaryData:
    """Resolve a boundary datum: None or "zero" for homogeneous data, a
    named analytic function, "csv:<path>" with one value per boundary
    node, or an explicit array."""
    if spec is None:
        return BoundaryData(mesh, np.zeros(mesh.n_boundary))
    if isinstance(spec, BoundaryData):
        if spec.mesh is not mesh:
            raise AssemblyError("boundary data bound to a different mesh")
        return spec
    if isinstance(spec, str):
        pts = mesh.boundary_points
        if spec == "zero":
            return BoundaryData(mesh, np.zeros(mesh.n_boundary))
        if spec == "linear_x":
            return BoundaryData(mesh, pts[:, 0].copy())
        if spec in ("harmonic_x2_minus_y2", "harmonic_xy"):
            if mesh.dim != 2:
                raise ConfigError("datum requires a two-dimensional shape",
                                  field="datum", datum=spec, dim=mesh.dim)
            if spec == "harmonic_x2_minus_y2":
                return BoundaryData(mesh, pts[:, 0] ** 2 - pts[:, 1] ** 2)
            return BoundaryData(mesh, pts[:, 0] * pts[:, 1])
        if spec.startswith("csv:"):
            vals = np.loadtxt(spec[4:], dtype=float, ndmin=1)
            return BoundaryData(mesh, vals)
        raise ConfigError("unknown boundary datum", field="datum", datum=spec,
                          catalog=list(_DATA_CATALOG) + ["csv:<path>"])
    return BoundaryData(mesh, np.asarray(spec, dtype=float))


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty variant plus its kernel. For product/pointwise/
    dirac_diagonal the kernel is K; for wang/shi it is the base R whose
    antiderivatives define the penalty."""

    variant: str
    kernel: KernelSpec
    shi_delta_sq_prefactor: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError("unknown penalty variant", field="penalty_variant",
                              variant=self.variant, supported=list(VARIANTS))


def lp_norm(mesh: DomainMesh, values, p: float = 2.0) -> float:
    """Quadrature-weighted L^p norm over the interior nodes."""
    v = np.asarray(values, dtype=float)
    return float(np.sum(mesh.interior_weights * np.abs(v) ** p) ** (1.0 / p))


def _field_values(op_mesh, u, what="field"):
    if isinstance(u, Field):
        if u.mesh is not op_mesh:
            raise AssemblyError(f"{what} bound to a different mesh")
        return u.values
    v = np.asarray(u, dtype=float)
    if v.shape != (op_mesh.n_interior,):
        raise AssemblyError(f"{what} length does not match the mesh",
                            expected=op_mesh.n_interior, got=list(v.shape))
    return v


def _require_valid(kernel: KernelSpec):
    report = validate_kernel(kernel)
    if not report.passed:
        raise AssemblyError(
            "kernel failed validation: "
            + "; ".join(f"{c.condition}: {c.detail}" for c in report.failures()),
            kernel=kernel.label,
            conditions=[c.condition for c in report.failures()])


def _boundary_tables(mesh, base: KernelSpec, delta):
    """CSR boundary-to-interior coefficients q_j * k_delta(|x_b - x_j|)."""
    table = neighbor_pairs(mesh, base.support * delta)
    indptr, indices = table.boundary_indptr, table.boundary_indices
    rowid = np.repeat(np.arange(mesh.n_boundary), np.diff(indptr))
    dist = np.linalg.norm(mesh.boundary_points[rowid]
                          - mesh.interior_points[indices], axis=1)
    scaled = ScaledKernel(base, delta, mesh.dim)
    coef = mesh.interior_weights[indices] * eval_scaled(scaled, dist)
    return indptr, indices, rowid, coef


class EnergyOperator:
    """Assembled discrete energy: evaluable and differentiable in u.

    Construct with assemble(); the instance is immutable in use. For
    p = 2, apply_quadratic/linear_term/constant_term expose the
    quadratic form, applied as sparse-interior + diagonal + rank-one
    penalty terms.
    """

    def __init__(self, mesh, delta, p, spec, a_values,
                 pair_i, pair_j, pair_w,
                 pen_indptr, pen_indices, pen_rowid, pen_coef, pen_pref):
        self.mesh = mesh
        self.delta = float(delta)
        self.p = float(p)
        self.spec = spec
        self.variant = spec.variant
        self.a = a_values
        self.pair_i = pair_i
        self.pair_j = pair_j
        self.pair_w = pair_w
        self.pen_indptr = pen_indptr
        self.pen_indices = pen_indices
        self.pen_rowid = pen_rowid
        self.pen_coef = pen_coef
        self.pen_pref = pen_pref
        self.pen_sums = np.bincount(pen_rowid, weights=pen_coef,
                                    minlength=mesh.n_boundary)
        self._p2 = None
        if self.p == 2.0:
            self._build_quadratic()

    # -- quadratic form ------------------------------------------------

    def _build_quadratic(self):
        n = self.mesh.n_interior
        i, j, w = self.pair_i, self.pair_j, self.pair_w
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([i, j, j, i])
        vals = np.concatenate([2 * w, 2 * w, -2 * w, -2 * w])
        a_int = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        diag = np.zeros(n)
        ell = np.zeros(n)
        c0 = 0.0
        lowrank = None
        a_b = self.a
        pref, coef = self.pen_pref, self.pen_coef
        idx, rowid = self.pen_indices, self.pen_rowid
        if self.variant in ("product", "wang"):
            lowrank = pref  # rank-one coefficient c_b per boundary node
            target = a_b * self.pen_sums  # s_b * a_b
            ell += np.bincount(idx, weights=coef * (pref * target)[rowid],
                               minlength=n)
            c0 = float(np.sum(pref * target**2))
        else:
            cpen = pref[rowid] * coef
            diag += np.bincount(idx, weights=cpen, minlength=n)
            if self.variant == "pointwise":
                ell += np.bincount(idx, weights=cpen * a_b[rowid], minlength=n)
                c0 = float(np.sum(cpen * (a_b[rowid] ** 2)))
        self._p2 = (a_int, diag, ell, c0, lowrank)

    def _require_p2(self):
        if self._p2 is None:
            raise AssemblyError("quadratic form is only assembled for p = 2",
                                p=self.p)
        return self._p2

    def apply_quadratic(self, u):
        """A @ u for the p = 2 form."""
        a_int, diag, _, _, lowrank = self._require_p2()
        v = _field_values(self.mesh, u)
        out = a_int @ v + diag * v
        if lowrank is not None:
            t = np.bincount(self.pen_rowid, weights=self.pen_coef * v[self.pen_indices],
                            minlength=self.mesh.n_boundary)
            out += np.bincount(self.pen_indices,
                               weights=self.pen_coef * (lowrank * t)[self.pen_rowid],
                               minlength=self.mesh.n_interior)
        return out

    @property
    def linear_term(self):
        return self._require_p2()[2]

    @property
    def constant_term(self):
        return self._require_p2()[3]

    def quadratic_energy(self, u):
        """u^T A u - 2 l^T u + c0 (p = 2 only)."""
        v = _field_values(self.mesh, u)
        _, _, ell, c0, _ = self._require_p2()
        return float(v @ self.apply_quadratic(v) - 2.0 * (ell @ v) + c0)

    def p2_diagonal(self):
        """Diagonal of the p = 2 form at this horizon, usable as a
        preconditioner for any exponent (pair weights rescale by
        delta^(p-2))."""
        n = self.mesh.n_interior
        scale = self.delta ** (self.p - 2.0)
        w2 = self.pair_w * scale
        diag = np.bincount(self.pair_i, weights=2 * w2, minlength=n)
        diag += np.bincount(self.pair_j, weights=2 * w2, minlength=n)
        coef, rowid, idx = self.pen_coef, self.pen_rowid, self.pen_indices
        if self.variant in ("product", "wang"):
            pref = self.pen_pref if self.variant == "wang" \
                else self.pen_pref * self.delta ** (self.p - 2.0)
            diag += np.bincount(idx, weights=(pref[rowid]) * coef**2, minlength=n)
        else:
            pref = self.pen_pref if self.variant in ZERO_DATA_VARIANTS \
                else self.pen_pref * self.delta ** (self.p - 2.0)
            diag += np.bincount(idx, weights=pref[rowid] * coef, minlength=n)
        return diag

    # -- direct evaluation ---------------------------------------------

    def interior_energy(self, u) -> float:
        """Ordered-pair double sum of kernel-weighted p-th power
        differences."""
        v = _field_values(self.mesh, u)
        d = v[self.pair_i] - v[self.pair_j]
        return float(2.0 * np.sum(self.pair_w * np.abs(d) ** self.p))

    def penalty_energy(self, u, a=None) -> float:
        """Boundary penalty at u; a defaults to the assembled datum."""
        v = _field_values(self.mesh, u)
        if a is None:
            a_b = self.a
        else:
            a_b = _field_values_boundary(self.mesh, a)
            if self.variant in ZERO_DATA_VARIANTS and np.any(a_b != 0.0):
                raise AssemblyError(
                    f"variant '{self.variant}' admits only zero boundary data",
                    variant=self.variant)
        coef, rowid, idx = self.pen_coef, self.pen_rowid, self.pen_indices
        pref = self.pen_pref
        m = self.mesh.n_boundary
        if self.variant == "product":
            # pref is w_b / delta^p, so this is w_b |inner/delta|^p
            inner = (a_b * self.pen_sums
                     - np.bincount(rowid, weights=coef * v[idx], minlength=m))
            return float(np.sum(pref * np.abs(inner) ** self.p))
        if self.variant == "wang":
            inner = (a_b * self.pen_sums
                     - np.bincount(rowid, weights=coef * v[idx], minlength=m))
            return float(np.sum(pref * inner**2))
        if self.variant == "pointwise":
            vals = coef * np.abs(v[idx] - a_b[rowid]) ** self.p
            return float(np.sum(pref[rowid] * vals))
        # dirac_diagonal, shi
        vals = coef * v[idx] ** 2
        return float(np.sum(pref[rowid] * vals))

    def energy(self, u) -> float:
        return self.interior_energy(u) + self.penalty_energy(u)

    def gradient(self, u):
        """Analytic gradient of the total energy; for p = 2 it equals
        2 A u - 2 l."""
        v = _field_values(self.mesh, u)
        n = self.mesh.n_interior
        p = self.p
        d = v[self.pair_i] - v[self.pair_j]
        # |d|^(p-2) d written as sign(d)|d|^(p-1): finite at d = 0 for p > 1
        c = 2.0 * p * self.pair_w * np.sign(d) * np.abs(d) ** (p - 1.0)
        g = np.bincount(self.pair_i, weights=c, minlength=n)
        g -= np.bincount(self.pair_j, weights=c, minlength=n)
        coef, rowid, idx = self.pen_coef, self.pen_rowid, self.pen_indices
        pref = self.pen_pref
        a_b = self.a
        m = self.mesh.n_boundary
        if self.variant in ("product", "wang"):
            inner = (a_b * self.pen_sums
                     - np.bincount(rowid, weights=coef * v[idx], minlength=m))
            if self.variant == "product":
                scale = pref * p * np.sign(inner) * np.abs(inner) ** (p - 1.0)
            else:
                scale = pref * 2.0 * inner
            g -= np.bincount(idx, weights=coef * scale[rowid], minlength=n)
        elif self.variant == "pointwise":
            dv = v[idx] - a_b[rowid]
            g += np.bincount(idx,
                             weights=pref[rowid] * coef
                             * p * np.sign(dv) * np.abs(dv) ** (p - 1.0),
                             minlength=n)
        else:
            g += np.bincount(idx, weights=pref[rowid] * coef * 2.0 * v[idx],
                             minlength=n)
        return g

    # -- transforms ------------------------------------------------------

    def scaled(self, factor: float):
        """A new operator whose energy is factor times this one."""
        if not factor > 0:
            raise AssemblyError("scale factor must be positive", factor=factor)
        out = object.__new__(EnergyOperator)
        out.__dict__.update(self.__dict__)
        out.pair_w = self.pair_w * factor
        out.pen_pref = self.pen_pref * factor
        out.pen_sums = self.pen_sums
        if self._p2 is not None:
            a_int, diag, ell, c0, lowrank = self._p2
            out._p2 = (a_int * factor, diag * factor, ell * factor,
                       c0 * factor, None if lowrank is None else lowrank * factor)
        return out

    def to_json_dict(self):
        """Binary-free dump of the pair list and penalty vectors.

        Keys: format, dim, delta, p, variant, shi_delta_sq_prefactor,
        n_interior, n_boundary, pair {i, j, w}, penalty {indptr,
        indices, coef, pref}, a. Reconstruct against the same mesh with
        operator_from_json.
        """
        return {
            "format": "nldir-operator-v1",
            "dim": self.mesh.dim,
            "delta": self.delta,
            "p": self.p,
            "variant": self.variant,
            "shi_delta_sq_prefactor": self.spec.shi_delta_sq_prefactor,
            "kernel": self.spec.kernel.label,
            "n_interior": self.mesh.n_interior,
            "n_boundary": self.mesh.n_boundary,
            "pair": {"i": self.pair_i.tolist(), "j": self.pair_j.tolist(),
                     "w": self.pair_w.tolist()},
            "penalty": {"indptr": self.pen_indptr.tolist(),
                        "indices": self.pen_indices.tolist(),
                        "coef": self.pen_coef.tolist(),
                        "pref": self.pen_pref.tolist()},
            "a": self.a.tolist(),
        }


def _field_values_boundary(mesh, a):
    if isinstance(a, BoundaryData):
        if a.mesh is not mesh:
            raise AssemblyError("boundary data bound to a different mesh")
        return a.values
    v = np.asarray(a, dtype=float)
    if v.shape != (mesh.n_boundary,):
        raise AssemblyError("boundary data length does not match the mesh",
                            expected=mesh.n_boundary, got=list(v.shape))
    return v


def assemble(mesh: DomainMesh, R: KernelSpec, spec: PenaltySpec,
             delta: float, p: float = 2.0, a=None) -> EnergyOperator:
    """Assemble the discrete energy on a mesh.

    Requires delta >= 2 h so the kernel is resolved by the quadrature,
    validated kernels, zero data for the zero-datum variants, and p = 2
    for the variants without a general-p statement.
    """
    if not delta > 0:
        raise AssemblyError("horizon must be positive", delta=delta)
    if delta < 2.0 * mesh.h * (1.0 - 1e-12):
        raise AssemblyError("horizon must be at least two cells wide",
                            delta=delta, h=mesh.h)
    if not p > 1:
        raise AssemblyError("exponent must exceed 1", p=p)
    if p != 2.0 and spec.variant in QUADRATIC_ONLY_VARIANTS:
        raise AssemblyError(
            f"variant '{spec.variant}' is defined for p = 2 only",
            variant=spec.variant, p=p)
    _require_valid(R)
    if spec.kernel is not R:
        _require_valid(spec.kernel)
    a_vals = boundary_data(mesh, a).values
    if spec.variant in ZERO_DATA_VARIANTS and np.any(a_vals != 0.0):
        raise AssemblyError(
            f"variant '{spec.variant}' admits only zero boundary data",
            variant=spec.variant)

    # interior pairs
    table = neighbor_pairs(mesh, R.support * delta)
    pair_i, pair_j = table.interior_pairs()
    dist = np.linalg.norm(mesh.interior_points[pair_i]
                          - mesh.interior_points[pair_j], axis=1)
    scaled = ScaledKernel(R, delta, mesh.dim)
    q = mesh.interior_weights
    pair_w = q[pair_i] * q[pair_j] * eval_scaled(scaled, dist) / delta**p

    # penalty tables
    if spec.variant in ("wang", "shi"):
        base = antiderivative_kernel(spec.kernel)
    else:
        base = spec.kernel
    indptr, indices, rowid, coef = _boundary_tables(mesh, base, delta)
    w_b = mesh.boundary_weights
    if spec.variant == "product":
        pref = w_b / delta**p
    elif spec.variant == "pointwise":
        pref = w_b / delta**p
    elif spec.variant == "dirac_diagonal":
        pref = w_b / delta**2
    elif spec.variant == "wang":
        bbar = antiderivative_kernel(base)
        sk = ScaledKernel(bbar, delta, mesh.dim)
        dist_b = np.linalg.norm(mesh.boundary_points[rowid]
                                - mesh.interior_points[indices], axis=1)
        wbb = np.bincount(rowid, weights=q[indices] * eval_scaled(sk, dist_b),
                          minlength=mesh.n_boundary)
        if np.any(wbb <= 0.0):
            bad = int(np.nonzero(wbb <= 0.0)[0][0])
            raise AssemblyError(
                "wang weight vanishes at a boundary node",
                node=bad, position=mesh.boundary_points[bad].tolist())
        pref = 2.0 * w_b / (delta**2 * wbb)
    else:  # shi
        # boundary nodes have zero boundary distance, so mu floors at delta^2
        mu = np.full(mesh.n_boundary,
                     min(2.0 * delta, max(delta**2, 0.0)))
        pref = 4.0 * w_b / mu
        if spec.shi_delta_sq_prefactor:
            pref = pref / delta**2

    return EnergyOperator(mesh, delta, p, spec, a_vals,
                          pair_i, pair_j, pair_w,
                          indptr, indices, rowid, coef, pref)


def operator_from_json(data: dict, mesh: DomainMesh) -> EnergyOperator:
    """Rebuild an operator from to_json_dict output and its mesh."""
    if data.get("format") != "nldir-operator-v1":
        raise AssemblyError("unrecognized operator dump format",
                            format=data.get("format"))
    if (data["n_interior"] != mesh.n_interior
            or data["n_boundary"] != mesh.n_boundary):
        raise AssemblyError("operator dump does not match the mesh",
                            dump=[data["n_interior"], data["n_boundary"]],
                            mesh=[mesh.n_interior, mesh.n_boundary])
    from .kernels import kernel_by_id
    try:
        kernel = kernel_by_id(data["kernel"])
    except Exception:
        kernel = KernelSpec(data["kernel"], lambda s: np.zeros_like(s), 1.0)
    spec = PenaltySpec(data["variant"], kernel,
                       bool(data.get("shi_delta_sq_prefactor", False)))
    op = EnergyOperator(
        mesh, float(data["delta"]), float(data["p"]), spec,
        np.asarray(data["a"], dtype=float),
        np.asarray(data["pair"]["i"], dtype=np.int64),
        np.asarray(data["pair"]["j"], dtype=np.int64),
        np.asarray(data["pair"]["w"], dtype=float),
        np.asarray(data["penalty"]["indptr"], dtype=np.int64),
        np.asarray(data["penalty"]["indices"], dtype=np.int64),
        np.repeat(np.arange(mesh.n_boundary),
                  np.diff(np.asarray(data["penalty"]["indptr"], dtype=np.int64))),
        np.asarray(data["penalty"]["coef"], dtype=float),
        np.asarray(data["penalty"]["pref"], dtype=float))
    return op


def save_operator(op: EnergyOperator, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(op.to_json_dict(), fh)


def load_operator(path, mesh: DomainMesh) -> EnergyOperator:
    with open(path, "r", encoding="utf-8") as fh:
        return operator_from_json(json.load(fh), mesh)


def mollify(mesh: DomainMesh, khat: KernelSpec, delta: float, u):
    """Kernel-smoothed field: at each node x,
    sum_j q_j Khat_delta(|x - x_j|) u_j / omega(x) with omega the same
    sum over 1. Returns values at the interior nodes and at the
    boundary nodes. A vanishing omega (support narrower than the mesh)
    raises MollifierError naming the node."""
    v = _field_values(mesh, u)
    table = neighbor_pairs(mesh, khat.support * delta)
    scaled = ScaledKernel(khat, delta, mesh.dim)
    q = mesh.interior_weights
    k0 = float(eval_scaled(scaled, np.asarray(0.0)))

    rows = np.repeat(np.arange(mesh.n_interior), np.diff(table.indptr))
    idx = table.indices
    dist = np.linalg.norm(mesh.interior_points[rows]
                          - mesh.interior_points[idx], axis=1)
    data = q[idx] * eval_scaled(scaled, dist)
    omega = np.bincount(rows, weights=data, minlength=mesh.n_interior) + q * k0
    numer = (np.bincount(rows, weights=data * v[idx], minlength=mesh.n_interior)
             + q * k0 * v)
    if np.any(omega <= _TINY):
        bad = int(np.nonzero(omega <= _TINY)[0][0])
        raise MollifierError(
            "mollifier weight vanishes at an interior node",
            node=bad, position=mesh.interior_points[bad].tolist(),
            radius=khat.support * delta)
    interior = numer / omega

    brow = np.repeat(np.arange(mesh.n_boundary), np.diff(table.boundary_indptr))
    bidx = table.boundary_indices
    bdist = np.linalg.norm(mesh.boundary_points[brow]
                           - mesh.interior_points[bidx], axis=1)
    bdata = q[bidx] * eval_scaled(scaled, bdist)
    bomega = np.bincount(brow, weights=bdata, minlength=mesh.n_boundary)
    bnumer = np.bincount(brow, weights=bdata * v[bidx], minlength=mesh.n_boundary)
    if np.any(bomega <= _TINY):
        bad = int(np.nonzero(bomega <= _TINY)[0][0])
        raise MollifierError(
            "mollifier weight vanishes at a boundary node",
            node=bad, position=mesh.boundary_points[bad].tolist(),
            radius=khat.support * delta)
    return Field(mesh, interior), BoundaryData(mesh, bnumer / bomega)


def nonlocal_inner_product(mesh: DomainMesh, W: KernelSpec, delta: float,
                           u, v) -> float:
    """Double quadrature sum q_i q_j W_delta(|x_i - x_j|) u_i v_j over
    all index pairs including i = j. W should be normalized to unit
    mass for the inner product interpretation."""
    uv = _field_values(mesh, u)
    vv = _field_values(mesh, v, what="second field")
    table = neighbor_pairs(mesh, W.support * delta)
    ii, jj = table.interior_pairs()
    scaled = ScaledKernel(W, delta, mesh.dim)
    q = mesh.interior_weights
    dist = np.linalg.norm(mesh.interior_points[ii]
                          - mesh.interior_points[jj], axis=1)
    wij = q[ii] * q[jj] * eval_scaled(scaled, dist)
    k0 = float(eval_scaled(scaled, np.asarray(0.0)))
    off = float(np.sum(wij * (uv[ii] * vv[jj] + uv[jj] * vv[ii])))
    diag = float(np.sum(q * q * k0 * uv * vv))
    return off + diag


def w_mass_matrix(mesh: DomainMesh, W: KernelSpec, delta: float):
    """Sparse symmetric mass form B[i,j] = q_i q_j W_delta(|x_i-x_j|),
    diagonal included."""
    table = neighbor_pairs(mesh, W.support * delta)
    ii, jj = table.interior_pairs()
    scaled = ScaledKernel(W, delta, mesh.dim)
    q = mesh.interior_weights
    dist = np.linalg.norm(mesh.interior_points[ii]
                          - mesh.interior_points[jj], axis=1)
    wij = q[ii] * q[jj] * eval_scaled(scaled, dist)
    k0 = float(eval_scaled(scaled, np.asarray(0.0)))
    n = mesh.n_interior
    rows = np.concatenate([ii, jj, np.arange(n)])
    cols = np.concatenate([jj, ii, np.arange(n)])
    vals = np.concatenate([wij, wij, q * q * k0])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def kernel_scale_ratio(mesh: DomainMesh, R: KernelSpec, delta: float,
                       m: float, trials: int, p: float = 2.0,
                       seed: int = 0) -> float:
    """Empirical maximum over random fields of
    interior_energy(delta) / interior_energy(m*delta), both at
    exponent p. Bounded by m**(dim+p) for m >= 1 since the rescaled
    kernel dominates pointwise."""
    if not m > 0:
        raise AssemblyError("scale factor must be positive", m=m)
    if trials < 1:
        raise AssemblyError("need at least one trial", trials=trials)

    def pair_energy_data(dd):
        table = neighbor_pairs(mesh, R.support * dd)
        ii, jj = table.interior_pairs()
        dist = np.linalg.norm(mesh.interior_points[ii]
                              - mesh.interior_points[jj], axis=1)
        q = mesh.interior_weights
        w = q[ii] * q[jj] * eval_scaled(ScaledKernel(R, dd, mesh.dim), dist) / dd**p
        return ii, jj, w

    i1, j1, w1 = pair_energy_data(delta)
    i2, j2, w2 = pair_energy_data(m * delta)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        for _attempt in range(1000):
            u = rng.standard_normal(mesh.n_interior)
            e2 = 2.0 * np.sum(w2 * np.abs(u[i2] - u[j2]) ** p)
            if e2 > _TINY:
                break
        else:
            raise AssemblyError("could not draw a field with nonzero energy",
                                m=m, delta=delta)
        e1 = 2.0 * np.sum(w1 * np.abs(u[i1] - u[j1]) ** p)
        best = max(best, float(e1 / e2))
    return best
