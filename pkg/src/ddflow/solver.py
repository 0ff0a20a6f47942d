"""Transient incompressible Navier-Stokes solves: monolithic reference,
per-subdomain solves under interface control, lifting functions and
pressure supremisers.

Each time step is an implicit Euler step solved by exact-Jacobian Newton on
the velocity-pressure saddle system; Dirichlet data is imposed by symmetric
elimination so the final Jacobian factorization can be reused (transposed)
for the adjoint solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .fem import (
    AssembledForms,
    FieldCoeffs,
    TaylorHoodSpace,
    apply_dirichlet,
    assemble_convection,
)
from .mesh import TAG_INLET, TAG_LID, TAG_OUTLET, TAG_WALL


class NewtonError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


@dataclass
class TransientConfig:
    """Time-stepping and physical configuration shared by all solvers."""

    dt: float
    T: float
    nu: float
    Ubar: float
    geometry: str  # "step" | "cavity"
    trilinear: str = "standard"  # "standard" | "skew"
    newton_tol: float = 1e-10
    newton_max: int = 25
    smooth_inlet: bool = False
    gamma: float = 0.0

    def __post_init__(self):
        if not (0 < self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-9:
            raise ValueError("T must be an integer multiple of dt")
        if self.geometry not in ("step", "cavity"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.trilinear not in ("standard", "skew"):
            raise ValueError(f"unknown trilinear form {self.trilinear!r}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def inlet_profile(y, t, Ubar, smooth=False):
    """Parabolic inlet profile of the step channel, zero outside y in [2, 5].

    The steady variant peaks at Ubar (at y = 3.5); the smooth variant ramps
    with (1 - cos(2 pi t / 0.4)) / 2 until t = 0.4, then stays at full value.
    """
    if y <= 2.0 or y >= 5.0:
        return (0.0, 0.0)
    w = Ubar * (4.0 / 9.0) * (y - 2.0) * (5.0 - y)
    if smooth:
        w *= 0.5 * (1.0 - math.cos(2.0 * math.pi * t / 0.4)) if t <= 0.4 else 1.0
    return (w, 0.0)


def boundary_values(cfg: TransientConfig):
    """Dirichlet value callbacks per tag for the configured geometry."""
    zero = lambda x, y, t: (0.0, 0.0)
    if cfg.geometry == "step":
        return {
            TAG_INLET: lambda x, y, t: inlet_profile(y, t, cfg.Ubar, cfg.smooth_inlet),
            TAG_WALL: zero,
            TAG_LID: zero,
        }
    return {
        TAG_LID: lambda x, y, t: (cfg.Ubar, 0.0),
        TAG_WALL: zero,
        TAG_INLET: zero,
    }


@dataclass
class Trajectory:
    """Per-time-step velocity/pressure records; record 0 is the initial state."""

    times: np.ndarray
    u: np.ndarray  # (n_steps + 1, n_u)
    p: np.ndarray  # (n_steps + 1, n_p)
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.times) - 1


class ImplicitEulerStepper:
    """Newton solver for one domain's implicit Euler step.

    sign is the interface-load sign (+1 on subdomain 1, -1 on subdomain 2,
    irrelevant for the monolithic problem).  The factorization of the final
    Newton Jacobian is kept for adjoint (transpose) solves.
    """

    def __init__(self, space, forms, cfg, bc_values=None, sign=1, pin_pressure=False):
        self.space = space
        self.forms = forms
        self.cfg = cfg
        self.bc_values = boundary_values(cfg) if bc_values is None else bc_values
        self.sign = sign
        self.n_u = space.n_u
        self.n_p = space.n_p
        self.n = self.n_u + self.n_p

        self.constant_block = (forms.M / cfg.dt + forms.A).tocsr()
        self.saddle_const = sp.bmat(
            [[self.constant_block, forms.B.T], [forms.B, None]], format="csr"
        )
        dofs = list(space.dirichlet_dofs)
        if pin_pressure:
            dofs.append(self.n_u)  # first pressure dof
        self.constrained = np.array(sorted(dofs), dtype=np.int64)
        self.pin_pressure = pin_pressure
        # when set, the Jacobian is refactorized at the converged state so the
        # factorization can be reused (transposed) for a consistent adjoint
        self.keep_jacobian = False
        self.last_lu = None
        self.last_state = None

    def _dirichlet_vector(self, t):
        vals = self.space.dirichlet_values(self.bc_values, t)
        return vals

    def residual(self, u, p, prev_u, g, t):
        """Raw assembled residual (no Dirichlet masking): (r_u, r_p)."""
        skew = self.cfg.trilinear == "skew"
        c1, _ = assemble_convection(self.space, u, skew=skew)
        r_u = self.constant_block @ u + c1 @ u + self.forms.B.T @ p
        r_u -= self.forms.M @ prev_u / self.cfg.dt
        r_u -= self.forms.f
        if g is not None:
            r_u -= self.sign * (self.forms.T_int @ g)
        r_p = self.forms.B @ u
        return r_u, r_p

    def step(self, prev_u, g=None, t=0.0):
        """Solve one implicit Euler step from prev_u at time t.

        Returns (u, p, info); info records Newton residual history.  Raises
        NewtonError when newton_max iterations do not reach newton_tol.
        """
        prev = prev_u.values if isinstance(prev_u, FieldCoeffs) else np.asarray(prev_u, float)
        gvec = None
        if g is not None:
            gvec = g.values if isinstance(g, FieldCoeffs) else np.asarray(g, float)

        u = prev.copy()
        bc = self._dirichlet_vector(t)
        u[~self.space.free_velocity] = bc[~self.space.free_velocity]
        p = np.zeros(self.n_p)  # zero init keeps the solve a pure function of its arguments

        skew = self.cfg.trilinear == "skew"
        history = []
        free = np.ones(self.n, dtype=bool)
        free[self.constrained] = False

        for it in range(self.cfg.newton_max + 1):
            r_u, r_p = self.residual(u, p, prev, gvec, t)
            r = np.concatenate([r_u, r_p])
            rnorm = np.abs(r[free]).max() if free.any() else 0.0
            history.append(rnorm)
            if rnorm <= self.cfg.newton_tol:
                if self.keep_jacobian:
                    c1, c2 = assemble_convection(self.space, u, skew=skew)
                    jac_vel = self.constant_block + c1 + c2
                    jac = sp.bmat(
                        [[jac_vel, self.forms.B.T], [self.forms.B, None]], format="csr"
                    )
                    jac_e, _ = apply_dirichlet(
                        jac, np.zeros(self.n), self.constrained,
                        np.zeros(len(self.constrained)),
                    )
                    self.last_lu = linalg.sparse_lu(jac_e)
                info = {"iterations": it, "residuals": history}
                self.last_state = (u, p)
                return u.copy(), p.copy(), info
            if it == self.cfg.newton_max:
                raise NewtonError(
                    f"Newton stalled at residual {rnorm:.3e} after {it} iterations",
                    residual=rnorm,
                    history=history,
                )
            c1, c2 = assemble_convection(self.space, u, skew=skew)
            jac_vel = self.constant_block + c1 + c2
            jac = sp.bmat([[jac_vel, self.forms.B.T], [self.forms.B, None]], format="csr")
            jac_e, rhs = apply_dirichlet(jac, -r, self.constrained, np.zeros(len(self.constrained)))
            try:
                lu = linalg.sparse_lu(jac_e)
            except linalg.SingularMatrixError as exc:
                raise NewtonError(f"singular Jacobian: {exc}") from exc
            self.last_lu = lu
            delta = lu.solve(rhs)
            u += delta[: self.n_u]
            p += delta[self.n_u :]


def implicit_euler_step(prev, g, cfg, space, forms, t=0.0, sign=1, bc_values=None):
    """One-shot implicit Euler step (builds a fresh stepper)."""
    stepper = ImplicitEulerStepper(space, forms, cfg, bc_values=bc_values, sign=sign)
    u, p, info = stepper.step(prev, g, t)
    return (
        FieldCoeffs(u, "velocity", space),
        FieldCoeffs(p, "pressure", space),
        info,
    )


DEFAULT_DENSITY = {"step": 6.4, "cavity": 73}


def _monolithic_space(cfg, density):
    from . import mesh as meshmod
    from .fem import TaylorHoodSpace

    if cfg.geometry == "step":
        m = meshmod.build_step_monolithic(density)
    else:
        m = meshmod.build_cavity_monolithic(int(density))
    space = TaylorHoodSpace(m, interface_edges=np.empty((0, 2), dtype=np.int64))
    return space


def monolithic_solve(cfg, density=None, space=None, progress=None):
    """Full-domain reference trajectory.

    The enclosed cavity pressure is pinned at one dof during the solve and
    shifted to zero mean on output (the shift does not feed back into the
    dynamics because the velocity test space is fully constrained on the
    boundary).
    """
    if space is None:
        density = DEFAULT_DENSITY[cfg.geometry] if density is None else density
        space = _monolithic_space(cfg, density)
    forms = AssembledForms.build(space, cfg.nu, with_interface=False)
    pin = cfg.geometry == "cavity"
    stepper = ImplicitEulerStepper(space, forms, cfg, pin_pressure=pin)

    m = cfg.n_steps
    traj = Trajectory(
        times=cfg.times(),
        u=np.zeros((m + 1, space.n_u)),
        p=np.zeros((m + 1, space.n_p)),
        meta={"kind": "monolithic", "geometry": cfg.geometry},
    )
    area = space.mesh.total_area() if pin else None
    vol_weights = forms.Mp @ np.ones(space.n_p) if pin else None
    for n in range(1, m + 1):
        u, p, _ = stepper.step(traj.u[n - 1], None, t=cfg.dt * n)
        if pin:
            p = p - (vol_weights @ p) / area
        traj.u[n] = u
        traj.p[n] = p
        if progress:
            progress(n, m)
    return traj, space, forms


def lifting_solve(space, bc_values, t=0.0):
    """Stokes velocity matching the Dirichlet data, natural elsewhere.

    Solves the unit-viscosity Stokes problem with l = u_D on the Dirichlet
    boundary and homogeneous Neumann conditions on the rest; the result is
    discretely divergence-free.
    """
    if len(space.dirichlet_dofs) == 0:
        raise linalg.SingularMatrixError("pure-Neumann lifting problem")
    k = space._lifting_forms if hasattr(space, "_lifting_forms") else None
    if k is None:
        from .fem import assemble_divergence, assemble_stiffness

        k = (assemble_stiffness(space, 1.0), assemble_divergence(space))
        space._lifting_forms = k
    stiff, div = k
    n_u, n_p = space.n_u, space.n_p
    # pin the pressure when the velocity boundary is entirely Dirichlet
    boundary_tags = set(space.tag_nodes)
    pure_dirichlet = not (boundary_tags - set((TAG_INLET, TAG_WALL, TAG_LID)))
    saddle = sp.bmat([[stiff, div.T], [div, None]], format="csr")
    bc = space.dirichlet_values(bc_values, t)
    dofs = list(space.dirichlet_dofs)
    vals = list(bc[space.dirichlet_dofs])
    if pure_dirichlet:
        dofs.append(n_u)
        vals.append(0.0)
    mat, rhs = apply_dirichlet(saddle, np.zeros(n_u + n_p), np.array(dofs), np.array(vals))
    sol = linalg.sparse_lu(mat).solve(rhs)
    return FieldCoeffs(sol[:n_u], "velocity", space)


def supremiser_solve(space, p):
    """Velocity s with (grad v, grad s) = b(v, p) for all homogeneous v.

    The factorized velocity Laplacian is cached on the space, so repeated
    solves (one per pressure snapshot) only cost a triangular solve.
    """
    pvec = p.values if isinstance(p, FieldCoeffs) else np.asarray(p, float)
    if pvec.shape != (space.n_p,):
        raise ValueError(f"pressure has shape {pvec.shape}, expected ({space.n_p},)")
    cache = getattr(space, "_supremiser_cache", None)
    if cache is None:
        from .fem import assemble_divergence, assemble_stiffness

        stiff = assemble_stiffness(space, 1.0)
        div = assemble_divergence(space)
        ke, _ = apply_dirichlet(
            stiff, np.zeros(space.n_u), space.dirichlet_dofs, np.zeros(len(space.dirichlet_dofs))
        )
        cache = (linalg.sparse_lu(ke), div)
        space._supremiser_cache = cache
    lu, div = cache
    rhs = div.T @ pvec
    rhs[space.dirichlet_dofs] = 0.0
    return FieldCoeffs(lu.solve(rhs), "velocity", space)


def consistent_interface_flux(stepper, u, p, prev_u, t=0.0):
    """Discrete interface normal-stress representation of a restricted state.

    Given the monolithic solution restricted to one subdomain, returns the
    trace vector g such that the subdomain step with that interface load
    reproduces the restriction exactly (variationally consistent flux).
    """
    r_u, _ = stepper.residual(np.asarray(u, float), np.asarray(p, float),
                              np.asarray(prev_u, float), None, t)
    space = stepper.space
    r_iface = r_u[space.interface_dofs]
    # trace dofs shared with the Dirichlet boundary (interface endpoints) are
    # not test functions; solve the projection on the free rows only
    free = space.free_velocity[space.interface_dofs]
    mg = stepper.forms.Mgamma.toarray()
    g = np.zeros(space.trace_dim)
    g[free] = np.linalg.solve(mg[np.ix_(free, free)], r_iface[free])
    return g / stepper.sign
