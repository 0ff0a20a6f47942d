"""Per-time-step interface optimal control: coupling functional, adjoint
solves, objective gradient, L-BFGS minimiser and the outer time loop.

The control g lives on the shared interface trace space (one pair of
velocity components per interface P2 node); it enters the two subdomain
problems as a Neumann load with opposite signs.  The objective gradient is
assembled from the two adjoint solves and returned as the Riesz
representative in the interface L2 inner product, paired with Euclidean
L-BFGS updates on the coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp

from . import linalg
from .fem import AssembledForms, FieldCoeffs, TaylorHoodSpace, apply_dirichlet, assemble_convection
from .mesh import build_cavity_meshes, build_step_meshes
from .solver import ImplicitEulerStepper, Trajectory, TransientConfig


@dataclass
class InterfaceControl:
    g: FieldCoeffs
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass
class OptimOptions:
    it_max: int = 300
    tol_opt: float = 1e-7
    flat_tol: float = 1e7 * np.finfo(float).eps  # scipy l-bfgs-b factr default
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_line_evals: int = 25


@dataclass
class OptimReport:
    iterations: int
    f_history: list
    gnorm_history: list
    reason: str  # gradient | max_iter | flat | line_search
    n_evals: int = 0


# ---------------------------------------------------------------------------
# generic L-BFGS with strong Wolfe line search
# ---------------------------------------------------------------------------

def _zoom(fun, x, d, alo, ahi, flo, dlo, fhi, f0, d0, c1, c2, budget):
    """Nocedal-Wright zoom on a bracketed interval; returns (alpha, f, g)."""
    evals = 0
    while evals < budget:
        # quadratic interpolation safeguarded by bisection
        denom = 2.0 * (fhi - flo - dlo * (ahi - alo))
        if abs(denom) > 1e-300:
            a = alo - dlo * (ahi - alo) ** 2 / denom
        else:
            a = 0.5 * (alo + ahi)
        lo, hi = min(alo, ahi), max(alo, ahi)
        if not (lo + 0.1 * (hi - lo) <= a <= hi - 0.1 * (hi - lo)):
            a = 0.5 * (alo + ahi)
        f, g = fun(x + a * d)
        evals += 1
        dphi = float(g @ d)
        if f > f0 + c1 * a * d0 or f >= flo:
            ahi, fhi = a, f
        else:
            if abs(dphi) <= -c2 * d0:
                return (a, f, g), evals
            if dphi * (ahi - alo) >= 0:
                ahi, fhi = alo, flo
            alo, flo, dlo = a, f, dphi
        if abs(ahi - alo) < 1e-14 * max(1.0, abs(alo)):
            break
    return None, evals


def _strong_wolfe(fun, x, f0, g0, d, opts):
    """Line search; returns ((alpha, f, g) or None, evals)."""
    d0 = float(g0 @ d)
    if d0 >= 0:
        return None, 0
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = 1.0
    evals = 0
    budget = opts.max_line_evals
    first = True
    while evals < budget:
        f, g = fun(x + a * d)
        evals += 1
        dphi = float(g @ d)
        if f > f0 + opts.c1 * a * d0 or (not first and f >= f_prev):
            res, e = _zoom(fun, x, d, a_prev, a, f_prev, d_prev, f, f0, d0,
                           opts.c1, opts.c2, budget - evals)
            return res, evals + e
        if abs(dphi) <= -opts.c2 * d0:
            return (a, f, g), evals
        if dphi >= 0:
            res, e = _zoom(fun, x, d, a, a_prev, f, dphi, f_prev, f0, d0,
                           opts.c1, opts.c2, budget - evals)
            return res, evals + e
        a_prev, f_prev, d_prev = a, f, dphi
        a *= 2.0
        first = False
    return None, evals


def lbfgs_minimize(fun, x0, opts: OptimOptions = None):
    """Limited-memory BFGS over R^n with strong Wolfe line search.

    fun(x) must return (f, grad).  Terminates on the gradient infinity norm,
    the iteration cap, or a flat relative reduction of the functional;
    line-search failures return the best iterate seen so far.
    """
    opts = opts or OptimOptions()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_evals = 1
    f_hist = [float(f)]
    gnorm = float(np.abs(g).max()) if len(g) else 0.0
    g_hist = [gnorm]
    best_f, best_x = f, x.copy()
    s_mem, y_mem, rho_mem = [], [], []
    reason = "max_iter"
    iterations = 0

    for it in range(opts.it_max):
        if gnorm <= opts.tol_opt:
            reason = "gradient"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_mem), reversed(y_mem), reversed(rho_mem)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_mem:
            q *= (s_mem[-1] @ y_mem[-1]) / (y_mem[-1] @ y_mem[-1])
        for (s, y, rho), a in zip(zip(s_mem, y_mem, rho_mem), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if d @ g >= 0:  # fallback to steepest descent
            s_mem, y_mem, rho_mem = [], [], []
            d = -g

        res, evals = _strong_wolfe(fun, x, f, g, d, opts)
        n_evals += evals
        if res is None:
            reason = "line_search"
            break
        alpha, f_new, g_new = res
        iterations = it + 1
        s = alpha * d
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_mem.append(s)
            y_mem.append(y)
            rho_mem.append(1.0 / sy)
            if len(s_mem) > opts.memory:
                s_mem.pop(0)
                y_mem.pop(0)
                rho_mem.pop(0)
        x = x + s
        flat = abs(f - f_new) <= opts.flat_tol * max(abs(f), abs(f_new), 1.0)
        f, g = f_new, g_new
        gnorm = float(np.abs(g).max())
        f_hist.append(float(f))
        g_hist.append(gnorm)
        if f < best_f:
            best_f, best_x = f, x.copy()
        if flat:
            reason = "flat"
            break
    else:
        iterations = opts.it_max

    if reason == "gradient" or best_f >= f:
        best_f, best_x = f, x.copy()
    report = OptimReport(iterations, f_hist, g_hist, reason, n_evals)
    return best_x, report


# ---------------------------------------------------------------------------
# the coupled two-subdomain problem
# ---------------------------------------------------------------------------

class DDProblem:
    """Two subdomain solvers coupled through the interface control."""

    def __init__(self, cfg: TransientConfig, density=None, meshes=None):
        self.cfg = cfg
        if meshes is None:
            if cfg.geometry == "step":
                density = 6.4 if density is None else density
                meshes = build_step_meshes(density)
            else:
                density = 73 if density is None else density
                meshes = build_cavity_meshes(int(density))
        m1, m2, imap = meshes
        self.interface = imap
        self.space1 = TaylorHoodSpace(m1, imap.edges_1)
        self.space2 = TaylorHoodSpace(m2, imap.edges_2)
        self.forms1 = AssembledForms.build(self.space1, cfg.nu)
        self.forms2 = AssembledForms.build(self.space2, cfg.nu)
        self.stepper1 = ImplicitEulerStepper(self.space1, self.forms1, cfg, sign=+1)
        self.stepper2 = ImplicitEulerStepper(self.space2, self.forms2, cfg, sign=-1)

        self.trace_dim = self.space1.trace_dim
        if self.space2.trace_dim != self.trace_dim:
            raise ValueError("subdomain trace spaces disagree")
        self.Mgamma = self.forms1.Mgamma
        self._mg_chol = dla.cho_factor(self.Mgamma.toarray())
        self.E1 = self.space1.interface_dofs
        self.E2 = self.space2.interface_dofs

    # -- functional and its pieces ------------------------------------------

    def jump(self, u1, u2):
        return u1[self.E1] - u2[self.E2]

    def eval_functional(self, g, u1, u2):
        """J = 1/2 |u1 - u2|^2_{L2(interface)} + gamma/2 |g|^2_{L2(interface)}."""
        g = np.asarray(g, float)
        if g.shape != (self.trace_dim,):
            raise ValueError(f"control has shape {g.shape}, expected ({self.trace_dim},)")
        j = self.jump(np.asarray(u1, float), np.asarray(u2, float))
        val = 0.5 * j @ (self.Mgamma @ j)
        if self.cfg.gamma:
            val += 0.5 * self.cfg.gamma * g @ (self.Mgamma @ g)
        return float(val)

    def solve_states(self, g, prev1, prev2, t):
        u1, p1, i1 = self.stepper1.step(prev1, g, t)
        u2, p2, i2 = self.stepper2.step(prev2, g, t)
        return u1, p1, u2, p2, (i1, i2)

    def _adjoint_one(self, stepper, u, rhs_vel, lu=None):
        """Solve the transposed linearised system with homogeneous data."""
        if lu is None:
            skew = self.cfg.trilinear == "skew"
            c1, c2 = assemble_convection(stepper.space, u, skew=skew)
            jac_vel = stepper.constant_block + c1 + c2
            jac = sp.bmat([[jac_vel, stepper.forms.B.T], [stepper.forms.B, None]],
                          format="csr")
            jac_e, _ = apply_dirichlet(
                jac, np.zeros(jac.shape[0]), stepper.constrained,
                np.zeros(len(stepper.constrained)),
            )
            lu = linalg.sparse_lu(jac_e)
        rhs = np.concatenate([rhs_vel, np.zeros(stepper.n_p)])
        rhs[stepper.constrained] = 0.0
        sol = lu.solve(rhs, transpose=True)
        return sol[: stepper.n_u], sol[stepper.n_u :]

    def solve_adjoint_pair(self, u1, u2, reuse_factorizations=False):
        """Adjoint velocity/multiplier pairs driven by the interface jump.

        With reuse_factorizations the steppers' converged-state Jacobian
        factorizations are reused (valid right after solve_states when the
        steppers run with keep_jacobian set).
        """
        j = self.jump(np.asarray(u1, float), np.asarray(u2, float))
        load = self.Mgamma @ j
        rhs1 = np.zeros(self.space1.n_u)
        rhs1[self.E1] += load
        rhs2 = np.zeros(self.space2.n_u)
        rhs2[self.E2] -= load
        lu1 = self.stepper1.last_lu if reuse_factorizations else None
        lu2 = self.stepper2.last_lu if reuse_factorizations else None
        xi1, lam1 = self._adjoint_one(self.stepper1, np.asarray(u1, float), rhs1, lu1)
        xi2, lam2 = self._adjoint_one(self.stepper2, np.asarray(u2, float), rhs2, lu2)
        return xi1, lam1, xi2, lam2

    def trace_projection(self, xi, which):
        """L2(interface) projection of a velocity trace onto the trace space."""
        t_int = (self.forms1 if which == 1 else self.forms2).T_int
        return dla.cho_solve(self._mg_chol, t_int.T @ xi)

    def eval_gradient(self, g, xi1, xi2):
        """Riesz representative of dJ/dg: gamma g + proj(xi1) - proj(xi2)."""
        r1 = self.trace_projection(xi1, 1)
        r2 = self.trace_projection(xi2, 2)
        grad = r1 - r2
        if self.cfg.gamma:
            grad = grad + self.cfg.gamma * np.asarray(g, float)
        return grad

    def euclidean_gradient(self, riesz):
        """Pair the Riesz representative back to the coefficient gradient."""
        return self.Mgamma @ riesz

    def objective(self, prev1, prev2, t):
        """Closure g -> (J, Riesz gradient); pure in g given the previous states."""
        self.stepper1.keep_jacobian = True
        self.stepper2.keep_jacobian = True

        def fun(g):
            u1, p1, u2, p2, _ = self.solve_states(g, prev1, prev2, t)
            jval = self.eval_functional(g, u1, u2)
            xi1, _, xi2, _ = self.solve_adjoint_pair(u1, u2, reuse_factorizations=True)
            return jval, self.eval_gradient(g, xi1, xi2)

        return fun


@dataclass
class DDRunResult:
    traj1: Trajectory
    traj2: Trajectory
    reports: list
    controls: np.ndarray  # (n_steps + 1, trace_dim); row 0 is the zero start

    def iterations(self):
        return np.array([r.iterations for r in self.reports])


def dd_time_loop(problem: DDProblem, opts: OptimOptions = None, progress=None):
    """Minimise the coupling functional at every time step.

    The control warm-starts from the previous step's optimum; converged
    states are appended to both subdomain trajectories.
    """
    opts = opts or OptimOptions()
    cfg = problem.cfg
    m = cfg.n_steps
    s1, s2 = problem.space1, problem.space2
    traj1 = Trajectory(cfg.times(), np.zeros((m + 1, s1.n_u)), np.zeros((m + 1, s1.n_p)),
                       meta={"kind": "dd", "subdomain": 1, "geometry": cfg.geometry})
    traj2 = Trajectory(cfg.times(), np.zeros((m + 1, s2.n_u)), np.zeros((m + 1, s2.n_p)),
                       meta={"kind": "dd", "subdomain": 2, "geometry": cfg.geometry})
    controls = np.zeros((m + 1, problem.trace_dim))
    reports = []
    g = np.zeros(problem.trace_dim)
    for n in range(1, m + 1):
        t = cfg.dt * n
        fun = problem.objective(traj1.u[n - 1], traj2.u[n - 1], t)
        g, report = lbfgs_minimize(fun, g, opts)
        u1, p1, u2, p2, _ = problem.solve_states(g, traj1.u[n - 1], traj2.u[n - 1], t)
        traj1.u[n], traj1.p[n] = u1, p1
        traj2.u[n], traj2.p[n] = u2, p2
        controls[n] = g
        reports.append(report)
        if progress:
            progress(n, m, report)
    return DDRunResult(traj1, traj2, reports, controls)


# spec-style free functions -------------------------------------------------

def eval_functional(problem, g, states):
    u1, u2 = states
    return problem.eval_functional(g, u1, u2)


def solve_adjoint_pair(problem, u1, u2):
    return problem.solve_adjoint_pair(u1, u2)


def eval_gradient(problem, g, adjoints):
    xi1, xi2 = adjoints
    return problem.eval_gradient(g, xi1, xi2)
