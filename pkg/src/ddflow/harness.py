"""Benchmark configurations, restriction maps, error metrics and run
summaries tying the solver stages together."""

from __future__ import annotations

import configparser
import io as _io
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np

from .fem import TaylorHoodSpace, assemble_mass, assemble_pressure_mass, assemble_stiffness


@dataclass
class BenchmarkConfig:
    """Flat key=value configuration of one benchmark (Tables of the run)."""

    geometry: str = "cavity"
    nu_min: float = 1.0
    nu_max: float = 1.0
    Ubar_min: float = 0.5
    Ubar_max: float = 5.0
    nu: float = 1.0            # test-point viscosity
    Ubar: float = 3.0          # test-point magnitude
    T: float = 0.4
    dt: float = 0.01
    density: float = 73
    it_max: int = 300
    tol_opt: float = 1e-7
    rom_tol_opt: float = 1e-6
    gamma: float = 0.0
    K: int = 10
    sampling: str = "uniform"  # uniform | random
    N_max: int = 100
    energy_threshold: float = 1e-6
    modes_u1: int = 15
    modes_p1: int = 10
    modes_u2: int = 10
    modes_p2: int = 10
    modes_s1: int = 10
    modes_s2: int = 10
    modes_g: int = 5
    seed: int = 0
    trilinear: str = "standard"
    smooth_inlet: bool = False
    epochs: int = 5000
    loss_target: float = 1e-5
    arch: str = "base"  # base (40/60/100) | deep (16/64/128/128/128)

    def transient(self, nu=None, Ubar=None):
        from .solver import TransientConfig

        return TransientConfig(
            dt=self.dt,
            T=self.T,
            nu=self.nu if nu is None else nu,
            Ubar=self.Ubar if Ubar is None else Ubar,
            geometry=self.geometry,
            trilinear=self.trilinear,
            smooth_inlet=self.smooth_inlet,
            gamma=self.gamma,
        )

    def modes(self):
        return {
            "u1": self.modes_u1, "p1": self.modes_p1,
            "u2": self.modes_u2, "p2": self.modes_p2,
            "s1": self.modes_s1, "s2": self.modes_s2,
            "g": self.modes_g,
        }

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_file(cls, path_or_text, overrides=None):
        """Parse a flat key=value file (comments with #)."""
        if hasattr(path_or_text, "read"):
            text = path_or_text.read()
        else:
            try:
                with open(path_or_text) as f:
                    text = f.read()
            except (OSError, ValueError):
                text = path_or_text
        parser = configparser.ConfigParser()
        parser.read_string("[run]\n" + text)
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in parser["run"].items():
            if key not in types:
                raise KeyError(f"unknown config key {key!r}")
            t = types[key]
            if t in ("bool", bool):
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif t in ("int", int):
                kwargs[key] = int(raw)
            elif t in ("float", float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        cfg = cls(**kwargs)
        for key, val in (overrides or {}).items():
            if val is not None:
                setattr(cfg, key, val)
        return cfg


def load_preset(name):
    """Ship-time presets: 'bfs' or 'cavity'."""
    text = resources.files("ddflow.presets").joinpath(f"{name}.cfg").read_text()
    return BenchmarkConfig.from_file(_io.StringIO(text))


# ---------------------------------------------------------------------------
# restriction of monolithic fields to subdomains
# ---------------------------------------------------------------------------

def restriction_map(sub_space: TaylorHoodSpace, full_space: TaylorHoodSpace):
    """(velocity-dof map, pressure-dof map) from subdomain into full mesh.

    The meshes share grid coordinates bitwise, so nodes are matched by exact
    coordinate lookup.
    """
    table = {(x, y): i for i, (x, y) in enumerate(map(tuple, full_space.p2_coords))}
    try:
        nodes = np.array([table[(x, y)] for x, y in map(tuple, sub_space.p2_coords)])
    except KeyError as exc:
        raise ValueError("subdomain node not found in full mesh") from exc
    vt = {(x, y): i for i, (x, y) in enumerate(map(tuple, full_space.mesh.vertices))}
    verts = np.array([vt[(x, y)] for x, y in map(tuple, sub_space.mesh.vertices)])
    udofs = np.empty(sub_space.n_u, dtype=np.int64)
    udofs[0::2] = 2 * nodes
    udofs[1::2] = 2 * nodes + 1
    return udofs, verts


def restrict_trajectory(traj, sub_space, full_space):
    """Monolithic trajectory restricted to one subdomain's dof layout."""
    from .solver import Trajectory

    umap, pmap = restriction_map(sub_space, full_space)
    return Trajectory(
        traj.times.copy(),
        traj.u[:, umap].copy(),
        traj.p[:, pmap].copy(),
        meta=dict(traj.meta, restricted_to=sub_space.mesh.subdomain_id),
    )


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Relative errors per time step and component vs a reference."""

    times: np.ndarray
    errors: dict            # component -> (n_steps+1,) array
    flagged: dict           # component -> bool mask of near-zero reference norms
    summary: dict = field(default_factory=dict)

    def finalize(self):
        self.summary = {
            comp: {"mean": float(np.mean(e[1:])), "max": float(np.max(e[1:]))}
            for comp, e in self.errors.items()
        }
        return self


class SubdomainNorms:
    """H1 velocity and L2 pressure norm matrices of one subdomain."""

    def __init__(self, space):
        self.space = space
        self.Xu = (assemble_mass(space) + assemble_stiffness(space, 1.0)).tocsr()
        self.Mp = assemble_pressure_mass(space)
        self.volume = space.mesh.total_area()
        self._pint = self.Mp @ np.ones(space.n_p)

    def unorm(self, u):
        return float(np.sqrt(max(u @ (self.Xu @ u), 0.0)))

    def pnorm(self, p):
        return float(np.sqrt(max(p @ (self.Mp @ p), 0.0)))

    def pmean(self, p):
        return float(self._pint @ p) / self.volume


TINY_NORM = 1e-12


def relative_error_series(pairs, norms, pressure_gauge="none"):
    """Relative errors of trajectory a vs reference b per component.

    pairs: {"u1": (ua, ub), "p1": (pa, pb), ...} of (n_steps+1, dim) arrays;
    norms: {"1": SubdomainNorms, "2": SubdomainNorms}.  With
    pressure_gauge="global-mean" a single constant (the volume-averaged
    pressure difference over both subdomains) is removed from the pressure
    comparison: for an enclosed flow the pressure level is a gauge mode.
    Steps whose reference norm falls under 1e-12 report the absolute error
    and are flagged.
    """
    any_pair = next(iter(pairs.values()))
    n = any_pair[0].shape[0]
    for a, b in pairs.values():
        if a.shape[0] != n or b.shape[0] != n:
            raise ValueError("trajectories have misaligned time grids")
    times = np.arange(n, dtype=float)

    shifts = np.zeros(n)
    if pressure_gauge == "global-mean":
        vol = sum(norms[s].volume for s in ("1", "2") if s in norms)
        for s in ("1", "2"):
            key = f"p{s}"
            if key in pairs:
                pa, pb = pairs[key]
                nm = norms[s]
                shifts += np.array([nm.pmean(pa[k] - pb[k]) for k in range(n)]) * nm.volume
        shifts /= vol

    errors = {}
    flagged = {}
    for comp, (a, b) in pairs.items():
        sub = comp[-1]
        nm = norms[sub]
        err = np.zeros(n)
        flag = np.zeros(n, dtype=bool)
        for k in range(n):
            if comp.startswith("u"):
                diff = nm.unorm(a[k] - b[k])
                ref = nm.unorm(b[k])
            else:
                shift = shifts[k]
                diff = nm.pnorm(a[k] - b[k] - shift)
                ref = nm.pnorm(b[k])
            if ref < TINY_NORM:
                err[k] = diff
                flag[k] = diff >= TINY_NORM
            else:
                err[k] = diff / ref
        errors[comp] = err
        flagged[comp] = flag
    return ErrorReport(times, errors, flagged).finalize()


def iteration_summary(reports):
    """Per-step optimizer iteration counts and their mean."""
    if not reports:
        raise ValueError("no optimizer reports")
    counts = np.array([r.iterations for r in reports], dtype=int)
    return counts, float(counts.mean())
