"""Frequency-domain transmission problems for several fish and a small target.

Each fish ``k`` carries the unknown ``psi_k = du/dnu|+`` on its skin, the
target carries a single-layer density ``phi``.  Everywhere off the
boundaries the potential is

    u = H + sum_k (S_k - xi_k D_k)[psi_k] + S_D[phi],

with ``H`` the free-space potential of the active electric organ.  This
form satisfies the skin jump ``u|+ - u|- = xi du/dnu|+`` and, through the
boundary equations below, the insulating interior condition
``du/dnu|- = 0``.  Taking exterior normal derivatives gives, per fish,

    (I/2 - K*_k + xi_k dD_k/dnu) psi_k - sum_{i != k} d/dnu_k (field of i) = dH/dnu_k,

whose range is mean-free, so each fish row is augmented with the zero net
current condition ``int psi_k = 0``.  The target rows enforce
``du/dnu|+ = k du/dnu|-`` in the form

    ((k + 1)/2 - (k - 1) K*_D) phi = (k - 1) dF/dnu,

which stays regular at ``k = 1`` (then ``phi = 0``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import get_lapack_funcs

from . import potential as pt
from .geometry import BoundaryMesh, FishSpec, MediumParams, TargetSpec, make_ellipse_mesh

__all__ = [
    "Admittivity",
    "BoundaryField",
    "ForwardSolution",
    "Scene",
    "SingularSystemError",
    "default_panels",
    "solve_background_hatU1",
    "solve_two_fish",
    "solve_with_target",
    "source_potential",
]

TARGET_PANELS = 64
EVAL_CHUNK = 4096


def default_panels() -> int:
    """Panels per fish body; ``ELECTROFISH_PANELS`` overrides the default of 256."""
    return int(os.environ.get("ELECTROFISH_PANELS", "256"))


class SingularSystemError(np.linalg.LinAlgError):
    """The boundary integral system is numerically singular."""


@dataclass(frozen=True)
class Admittivity:
    """Target/background admittivity contrast at one angular frequency."""

    gamma_D: complex
    gamma_w: complex

    @classmethod
    def at(cls, target: TargetSpec, medium: MediumParams, omega: float) -> Admittivity:
        return cls(complex(target.sigma_D, omega * target.eps_D),
                   complex(medium.sigma_w, omega * medium.eps_w))

    @property
    def k(self) -> complex:
        return self.gamma_D / self.gamma_w

    @property
    def lam(self) -> complex:
        k = self.k
        if k == 1:
            raise ZeroDivisionError("contrast k = 1: lambda is undefined (target invisible)")
        return (k + 1) / (2 * (k - 1))


@dataclass(frozen=True)
class Scene:
    """Fish bodies, an optional target and the surrounding medium."""

    fish: tuple
    target: TargetSpec | None = None
    medium: MediumParams = field(default_factory=MediumParams)

    def __post_init__(self):
        object.__setattr__(self, "fish", tuple(self.fish))
        if not self.fish:
            raise ValueError("a scene needs at least one fish")

    def validate(self, gap: float = 0.0) -> None:
        """Reject overlapping bodies (or bodies closer than ``gap``)."""
        bodies = list(self.fish) + ([self.target] if self.target is not None else [])
        for i, bi in enumerate(bodies):
            pts_i = bi.mesh(128).midpoints
            for j, bj in enumerate(bodies):
                if i != j and np.any(bj.contains(pts_i, margin=gap)):
                    raise ValueError(f"bodies {i} and {j} overlap")

    def with_fish(self, index: int, fish: FishSpec) -> Scene:
        fishes = list(self.fish)
        fishes[index] = fish
        return replace(self, fish=tuple(fishes))

    def without_target(self) -> Scene:
        return replace(self, target=None)

    def only_fish(self, index: int) -> Scene:
        return Scene(fish=(self.fish[index],), target=self.target, medium=self.medium)


@dataclass(frozen=True)
class BoundaryField:
    """One-sided traces on one boundary."""

    u_plus: np.ndarray
    u_minus: np.ndarray
    dudn_plus: np.ndarray
    dudn_minus: np.ndarray


@lru_cache(maxsize=32)
def _self_operators(a: float, b: float, n: int) -> dict:
    # on-boundary operators depend only on the shape, not on the pose
    mesh = make_ellipse_mesh(a, b, (0.0, 0.0), 0.0, n)
    ops = {
        "S": pt.assemble_single_layer(mesh),
        "K": pt.assemble_K(mesh),
        "Kstar": pt.assemble_K_star(mesh),
        "T": pt.assemble_dDdnu(mesh),
    }
    for m in ops.values():
        m.flags.writeable = False
    return ops


@dataclass
class _Body:
    mesh: BoundaryMesh
    shape: tuple  # (a, b)
    xi: float = 0.0  # fish skin parameter; 0 for the target
    is_target: bool = False

    @property
    def ops(self) -> dict:
        return _self_operators(self.shape[0], self.shape[1], self.mesh.n)

    def value_matrix(self, pts) -> np.ndarray:
        m = pt.assemble_single_layer(self.mesh, pts)
        if self.xi:
            m = m - self.xi * pt.assemble_double_layer(self.mesh, pts)
        return m

    def normal_matrix(self, pts, normals) -> np.ndarray:
        m = pt.assemble_dSdn_off(self.mesh, pts, normals)
        if self.xi:
            m = m - self.xi * pt.assemble_dDdn_off(self.mesh, pts, normals)
        return m

    def gradient_matrix(self, pts) -> np.ndarray:
        g = pt.gradient_single_layer(self.mesh, pts)
        if self.xi:
            g = g - self.xi * pt.gradient_double_layer(self.mesh, pts)
        return g


def source_potential(points, poles, strengths) -> np.ndarray:
    """Free-space potential ``sum_j alpha_j Gamma(x - x_j)`` of point sources."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=np.result_type(np.asarray(strengths), float))
    for p, s in zip(np.atleast_2d(poles), strengths):
        out = out + s * pt.gamma(pts, p)
    return out


def _source_gradient(points, poles, strengths) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(pts.shape, dtype=np.result_type(np.asarray(strengths), float))
    for p, s in zip(np.atleast_2d(poles), strengths):
        r = pts - p
        r2 = (r**2).sum(axis=1)
        out = out + s * r / (2.0 * np.pi * r2[:, None])
    return out


@dataclass
class ForwardSolution:
    """Densities of one forward solve plus evaluators built on them.

    ``densities[i]`` is ``du/dnu|+`` on fish ``i``; for the target (last
    body, if present) it is the single-layer density.
    """

    bodies: list
    densities: list
    poles: np.ndarray
    strengths: np.ndarray
    active_index: int | None
    omega: float
    contrast: complex | None = None
    n_fish: int = 0

    @property
    def has_target(self) -> bool:
        return self.n_fish < len(self.bodies)

    def neumann(self, index: int) -> np.ndarray:
        """Exterior Neumann trace ``du/dnu|+`` on fish ``index``."""
        if index >= self.n_fish:
            raise IndexError("neumann() is defined on fish boundaries")
        return self.densities[index]

    def mesh(self, index: int) -> BoundaryMesh:
        return self.bodies[index].mesh

    def potential(self, points, bodies=None, include_source: bool = True) -> np.ndarray:
        """Potential at points off all boundaries.

        ``bodies`` restricts the layer contributions to the listed body
        indices; ``include_source`` toggles the organ term ``H``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = range(len(self.bodies)) if bodies is None else bodies
        out = np.zeros(len(pts), dtype=self._dtype)
        for start in range(0, len(pts), EVAL_CHUNK):
            p = pts[start:start + EVAL_CHUNK]
            acc = np.zeros(len(p), dtype=self._dtype)
            if include_source and len(self.strengths):
                acc += source_potential(p, self.poles, self.strengths)
            for i in idx:
                acc += self.bodies[i].value_matrix(p) @ self.densities[i]
            out[start:start + EVAL_CHUNK] = acc
        return out

    def gradient(self, points, bodies=None, include_source: bool = True) -> np.ndarray:
        """Gradient of the potential, shape (M, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = range(len(self.bodies)) if bodies is None else bodies
        out = np.zeros(pts.shape, dtype=self._dtype)
        for start in range(0, len(pts), EVAL_CHUNK):
            p = pts[start:start + EVAL_CHUNK]
            acc = np.zeros(p.shape, dtype=self._dtype)
            if include_source and len(self.strengths):
                acc += _source_gradient(p, self.poles, self.strengths)
            for i in idx:
                g = self.bodies[i].gradient_matrix(p)
                acc += np.column_stack([g[0] @ self.densities[i], g[1] @ self.densities[i]])
            out[start:start + EVAL_CHUNK] = acc
        return out

    @property
    def _dtype(self):
        return np.result_type(*self.densities, self.strengths, float)

    def _external(self, k: int):
        """Value and normal derivative on body ``k`` of everything except body ``k``'s own layer."""
        m = self.bodies[k].mesh
        val = np.zeros(m.n, dtype=self._dtype)
        dn = np.zeros(m.n, dtype=self._dtype)
        if len(self.strengths):
            val += source_potential(m.midpoints, self.poles, self.strengths)
            dn += (_source_gradient(m.midpoints, self.poles, self.strengths) * m.normals).sum(axis=1)
        for i, body in enumerate(self.bodies):
            if i != k:
                val += body.value_matrix(m.midpoints) @ self.densities[i]
                dn += body.normal_matrix(m.midpoints, m.normals) @ self.densities[i]
        return val, dn

    def traces(self, k: int) -> BoundaryField:
        """One-sided traces of ``u`` and ``du/dnu`` on body ``k``."""
        body = self.bodies[k]
        ops = body.ops
        d = self.densities[k]
        val, dn = self._external(k)
        eye_half = 0.5 * d
        single = ops["S"] @ d
        kd = ops["K"] @ d
        ksd = ops["Kstar"] @ d
        hyp = ops["T"] @ d if body.xi else 0.0
        return BoundaryField(
            u_plus=val + single - body.xi * (-eye_half + kd),
            u_minus=val + single - body.xi * (eye_half + kd),
            dudn_plus=dn + eye_half + ksd - body.xi * hyp,
            dudn_minus=dn - eye_half + ksd - body.xi * hyp,
        )

    def residuals(self) -> dict:
        """Max-norm residuals of every boundary condition."""
        out = {}
        for k, body in enumerate(self.bodies):
            tr = self.traces(k)
            if body.is_target:
                out["target_transmission"] = float(np.max(np.abs(tr.dudn_plus - self.contrast * tr.dudn_minus)))
            else:
                out[f"fish{k}_robin"] = float(np.max(np.abs(tr.u_plus - tr.u_minus - body.xi * tr.dudn_plus)))
                out[f"fish{k}_neumann_interior"] = float(np.max(np.abs(tr.dudn_minus)))
                out[f"fish{k}_neumann_exterior"] = float(np.max(np.abs(tr.dudn_plus - self.densities[k])))
                out[f"fish{k}_net_current"] = float(abs(self.bodies[k].mesh.weights @ self.densities[k]))
        return out


def _check_conditioning(lu, anorm: float) -> float:
    gecon, = get_lapack_funcs(("gecon",), (lu[0],))
    rcond, info = gecon(lu[0], anorm)
    if info != 0 or not np.isfinite(rcond) or rcond < 1e-14:
        raise SingularSystemError(f"boundary integral system is singular (rcond={rcond:.2e})")
    return rcond


def _solve_layers(bodies, poles, strengths, contrast) -> list:
    """Assemble and solve the block system; returns one density per body."""
    sizes = [b.mesh.n for b in bodies]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    dtype = np.result_type(strengths, float if contrast is None else complex)
    A = np.zeros((offs[-1], offs[-1]), dtype=dtype)
    rhs = np.zeros(offs[-1], dtype=dtype)

    for k, bk in enumerate(bodies):
        rows = slice(offs[k], offs[k + 1])
        m = bk.mesh
        ops = bk.ops
        eye = np.eye(m.n)
        if bk.is_target:
            A[rows, rows] = 0.5 * (contrast + 1) * eye - (contrast - 1) * ops["Kstar"]
            scale = contrast - 1
        else:
            A[rows, rows] = 0.5 * eye - ops["Kstar"] + bk.xi * ops["T"]
            # zero net current out of each fish
            A[rows, rows] += np.outer(np.full(m.n, 1.0 / m.perimeter), m.weights)
            scale = 1.0
        for i, bi in enumerate(bodies):
            if i != k:
                A[rows, offs[i]:offs[i + 1]] = -scale * bi.normal_matrix(m.midpoints, m.normals)
        if len(strengths):
            rhs[rows] = scale * (_source_gradient(m.midpoints, poles, strengths) * m.normals).sum(axis=1)

    lu = lu_factor(A, check_finite=True)
    _check_conditioning(lu, np.linalg.norm(A, 1))
    sol = lu_solve(lu, rhs)
    return [sol[offs[k]:offs[k + 1]] for k in range(len(bodies))]


def solve_two_fish(scene: Scene, active: int | None = 0, omega: float = 0.0,
                   n_panels: int | None = None, target_panels: int = TARGET_PANELS,
                   validate: bool = True) -> ForwardSolution:
    """Solve the transmission problem with fish ``active`` emitting.

    Any number of fish is accepted; all but ``active`` are electrically
    passive.  ``active=None`` switches every organ off.  When the scene
    has a target its admittivity contrast at ``omega`` enters the solve.

    Raises
    ------
    ValueError
        Overlapping bodies or a negative frequency.
    SingularSystemError
        Numerically singular block system.
    """
    if omega < 0:
        raise ValueError("frequency must be non-negative")
    if validate:
        scene.validate()
    n_panels = default_panels() if n_panels is None else n_panels
    bodies = [_Body(f.mesh(n_panels), (f.a, f.b), xi=f.xi) for f in scene.fish]
    contrast = None
    if scene.target is not None:
        tgt = scene.target
        bodies.append(_Body(tgt.mesh(target_panels), (tgt.radius, tgt.radius), is_target=True))
        contrast = Admittivity.at(tgt, scene.medium, omega).k

    if active is None:
        poles = np.zeros((0, 2))
        strengths = np.zeros(0)
    else:
        src = scene.fish[active]
        poles = src.organ_points()
        strengths = src.organ_strengths()

    densities = _solve_layers(bodies, poles, strengths, contrast)
    return ForwardSolution(
        bodies=bodies,
        densities=densities,
        poles=poles,
        strengths=strengths,
        active_index=active,
        omega=omega,
        contrast=contrast,
        n_fish=len(scene.fish),
    )


def solve_with_target(scene: Scene, active: int = 0, omega: float = 0.0, **kw) -> ForwardSolution:
    """Target branch of :func:`solve_two_fish`; the scene must contain a target."""
    if scene.target is None:
        raise ValueError("scene has no target")
    return solve_two_fish(scene, active, omega, **kw)


def solve_background_hatU1(fish: FishSpec, n_panels: int | None = None,
                           medium: MediumParams | None = None) -> ForwardSolution:
    """Fish-alone background potential (no conspecific, no target)."""
    scene = Scene(fish=(fish,), medium=medium or MediumParams())
    return solve_two_fish(scene, active=0, omega=0.0, n_panels=n_panels)
