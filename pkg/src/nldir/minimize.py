"""Minimizers of assembled energies.

Two strictly deterministic solvers with zero initial guess: a Jacobi
preconditioned conjugate-gradient iteration for the p = 2 quadratic
form, and preconditioned nonlinear conjugate gradients (Polak-Ribiere
with restart) plus backtracking line search for general p > 1. Both
declare convergence on gradient_norm <= tol * (1 + |energy|); energy
stall is never the stopping test.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import EnergyOperator, Field, lp_norm
from .errors import ConfigError, SolverError

_TINY = 1e-300


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 20000
    seed: int = 0
    sufficient_decrease: float = 1e-4
    backtrack: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ConfigError("tol must lie in (0, 1)", field="tol",
                              tol=self.tol)
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1", field="max_iter",
                              max_iter=self.max_iter)
        if not 0.0 < self.sufficient_decrease < 1.0:
            raise ConfigError("sufficient_decrease must lie in (0, 1)",
                              field="sufficient_decrease",
                              value=self.sufficient_decrease)
        if not 0.0 < self.backtrack < 1.0:
            raise ConfigError("backtrack must lie in (0, 1)",
                              field="backtrack", value=self.backtrack)

    @classmethod
    def from_dict(cls, data: dict):
        known = {"tol", "max_iter", "seed", "sufficient_decrease", "backtrack"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError("unknown solver option",
                              field=sorted(unknown)[0],
                              supported=sorted(known))
        return cls(**data)


@dataclass(frozen=True)
class SolveResult:
    minimizer: Field
    energy: float
    gradient_norm: float
    iterations: int
    converged: bool
    max_iterate_norm: float


def _finish(op, x, iterations, opts, max_norm):
    """Recompute energy and gradient at the final iterate so the
    converged flag is exact, not inherited from solver recurrences."""
    energy = op.energy(x)
    gradient_norm = float(np.linalg.norm(op.gradient(x)))
    converged = gradient_norm <= opts.tol * (1.0 + abs(energy))
    max_norm = max(max_norm, lp_norm(op.mesh, x, op.p))
    return SolveResult(Field(op.mesh, x.copy()), energy, gradient_norm,
                       iterations, converged, max_norm)


def _jacobi(op):
    diag = op.p2_diagonal()
    return np.where(diag > _TINY, diag, 1.0)


def solve_quadratic(op: EnergyOperator, opts: SolveOptions = SolveOptions()
                    ) -> SolveResult:
    """Preconditioned conjugate gradients on A u = l from a zero start.

    Stops when the residual is small both relative to l and relative to
    the energy scale. Exhausting the budget returns the best iterate
    flagged non-converged; a direction with nonpositive curvature
    raises SolverError naming the probe vector.
    """
    if op.p != 2.0:
        raise SolverError("quadratic solve requires an operator with p = 2",
                          p=op.p)
    ell = op.linear_term
    c0 = op.constant_term
    n = op.mesh.n_interior
    x = np.zeros(n)
    max_norm = lp_norm(op.mesh, x, op.p)
    ell_norm = float(np.linalg.norm(ell))
    if ell_norm == 0.0:
        return _finish(op, x, 0, opts, max_norm)

    jacobi = _jacobi(op)
    r = ell.copy()
    z = r / jacobi
    d = z.copy()
    rz = float(r @ z)
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        ad = op.apply_quadratic(d)
        dad = float(d @ ad)
        if dad <= 0.0:
            raise SolverError("nonpositive curvature direction encountered",
                              iteration=iterations, curvature=dad, probe=d)
        alpha = rz / dad
        x += alpha * d
        r -= alpha * ad
        max_norm = max(max_norm, lp_norm(op.mesh, x, op.p))
        # F(x) via r = l - A x: x^T A x = x.(l - r)
        f_val = -float(ell @ x) - float(x @ r) + c0
        r_norm = float(np.linalg.norm(r))
        if (r_norm <= opts.tol * max(ell_norm, _TINY)
                and 2.0 * r_norm <= opts.tol * (1.0 + abs(f_val))):
            break
        z = r / jacobi
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return _finish(op, x, iterations, opts, max_norm)


def solve_p_energy(op: EnergyOperator, opts: SolveOptions = SolveOptions(),
                   x0=None) -> SolveResult:
    """Preconditioned nonlinear conjugate gradients for any p > 1.

    Polak-Ribiere coefficient clipped at zero, restart to steepest
    descent whenever the direction fails to descend, Armijo
    backtracking for sufficient decrease. Line-search underflow stops
    the iteration; the converged flag then reflects the gradient test
    at the last iterate.
    """
    n = op.mesh.n_interior
    x = np.zeros(n) if x0 is None else np.array(
        x0.values if isinstance(x0, Field) else x0, dtype=float)
    jacobi = _jacobi(op)
    energy = op.energy(x)
    g = op.gradient(x)
    z = g / jacobi
    d = -z
    gz = float(g @ z)
    max_norm = lp_norm(op.mesh, x, op.p)
    step = 1.0
    iterations = 0
    flat_count = 0
    for iterations in range(1, opts.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.tol * (1.0 + abs(energy)):
            iterations -= 1
            break
        slope = float(g @ d)
        if slope >= 0.0:
            d = -z
            slope = -gz
        t = min(2.0 * step, 1e8)
        x_new = None
        stalled = False
        while True:
            trial = x + t * d
            e_trial = op.energy(trial)
            if e_trial <= energy + opts.sufficient_decrease * t * slope:
                x_new = trial
                break
            t *= opts.backtrack
            if t <= 1e-18:
                stalled = True
                break
        if stalled:
            break
        # energy differences at the floating-point floor mean the line
        # search can no longer certify progress; stop after a streak
        if abs(energy - e_trial) <= 1e-15 * (1.0 + abs(energy)):
            flat_count += 1
            if flat_count >= 10:
                x = x_new
                break
        else:
            flat_count = 0
        step = t
        x = x_new
        energy = e_trial
        g_new = op.gradient(x)
        z_new = g_new / jacobi
        gz_new = float(g_new @ z_new)
        beta = max(0.0, float(g_new @ (z_new - z)) / gz) if gz > 0 else 0.0
        d = -z_new + beta * d
        g, z, gz = g_new, z_new, gz_new
        max_norm = max(max_norm, lp_norm(op.mesh, x, op.p))
    return _finish(op, x, iterations, opts, max_norm)
