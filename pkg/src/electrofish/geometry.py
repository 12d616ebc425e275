"""Fish bodies, targets, receptor arrays and search grids.

All boundaries in this package are ellipses (a disk is the special case
``a == b``).  A boundary is sampled at ``n`` points equi-spaced in the
angular parameter ``t``; each sample is the parametric midpoint of a panel
of width ``2*pi/n``, and the trapezoidal rule with the arclength Jacobian
gives the quadrature weights.  This is the sampling every Nystrom operator
in :mod:`electrofish.potential` assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ellipeinc

__all__ = [
    "BoundaryMesh",
    "ElectricOrgan",
    "EodSignal",
    "FishSpec",
    "MediumParams",
    "Receptors",
    "SearchGrid",
    "TargetSpec",
    "bump_pulse",
    "ellipse_arclength",
    "make_ellipse_mesh",
    "make_search_grid",
    "place_receptors",
    "points_in_ellipse",
    "refine_peak",
    "rotation",
    "trig_interp_matrix",
]


def rotation(angle: float) -> np.ndarray:
    """2x2 counterclockwise rotation matrix."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class BoundaryMesh:
    """Sampled closed curve.

    Attributes
    ----------
    midpoints : (N, 2) array
        Panel midpoints, counterclockwise.
    normals : (N, 2) array
        Outward unit normals.
    weights : (N,) array
        Arclength quadrature weights, ``speed * 2*pi/N``.
    speed : (N,) array
        ``|x'(t)|`` at the samples.
    curvature : (N,) array
        Signed curvature (positive for convex curves).
    t : (N,) array
        Parameter values ``2*pi*j/N``.
    """

    midpoints: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    speed: np.ndarray
    curvature: np.ndarray
    t: np.ndarray
    closed: bool = True

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def tangents(self) -> np.ndarray:
        # counterclockwise tangent: normal rotated by +90 degrees
        return np.column_stack([-self.normals[:, 1], self.normals[:, 0]])

    @property
    def perimeter(self) -> float:
        return float(self.weights.sum())


def make_ellipse_mesh(a: float, b: float, center=(0.0, 0.0), heading: float = 0.0,
                      n_panels: int = 256) -> BoundaryMesh:
    """Discretize the ellipse with semi-axes ``a`` (along ``heading``) and ``b``.

    Parameters
    ----------
    a, b : float
        Semi-axes; ``a`` lies along the heading direction.
    center : array_like, shape (2,)
    heading : float
        Angle of the major axis, radians.
    n_panels : int
        Number of samples, even and at least 16.
    """
    if a <= 0 or b <= 0:
        raise ValueError(f"semi-axes must be positive, got a={a}, b={b}")
    if n_panels < 16 or n_panels % 2:
        raise ValueError(f"n_panels must be even and >= 16, got {n_panels}")
    t = 2.0 * np.pi * np.arange(n_panels) / n_panels
    R = rotation(heading)
    c = np.asarray(center, dtype=float)
    cos_t, sin_t = np.cos(t), np.sin(t)
    body = np.column_stack([a * cos_t, b * sin_t])
    speed = np.sqrt((a * sin_t) ** 2 + (b * cos_t) ** 2)
    nrm = np.column_stack([b * cos_t, a * sin_t]) / speed[:, None]
    return BoundaryMesh(
        midpoints=body @ R.T + c,
        normals=nrm @ R.T,
        weights=speed * (2.0 * np.pi / n_panels),
        speed=speed,
        curvature=a * b / speed**3,
        t=t,
    )


def ellipse_arclength(a: float, b: float, t) -> np.ndarray:
    """Arclength of the ellipse parametrization from 0 to ``t`` (``t`` in [0, 2*pi])."""
    t = np.asarray(t, dtype=float)
    if np.isclose(a, b):
        return a * t
    # s(t) = int_0^t sqrt(b^2 + (a^2 - b^2) sin^2) = b E(t | -(a^2-b^2)/b^2)
    return b * ellipeinc(t, -(a * a - b * b) / (b * b))


def trig_interp_matrix(n: int, t_eval) -> np.ndarray:
    """Matrix of trigonometric interpolation from ``n`` equispaced samples to ``t_eval``.

    Uses the periodic sinc kernel for even ``n``; rows sum to one.
    """
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    tj = 2.0 * np.pi * np.arange(n) / n
    d = t_eval[:, None] - tj[None, :]
    half = 0.5 * d
    s = np.sin(half)
    exact = np.abs(s) < 1e-14
    s_safe = np.where(exact, 1.0, s)
    L = np.sin(0.5 * n * d) * np.cos(half) / (n * s_safe)
    # at a node the kernel is 1, and 0 at the other nodes
    return np.where(exact, 1.0, L)


@dataclass(frozen=True)
class ElectricOrgan:
    """Two-point charge-neutral dipole, positions given in the body frame.

    Body frame: first axis along the heading, second axis to the left.
    """

    points: tuple = ((0.7, 0.0), (-0.7, 0.0))
    strengths: tuple = (1.0, -1.0)

    def __post_init__(self):
        if len(self.points) != 2 or len(self.strengths) != 2:
            raise ValueError("an electric organ has exactly two poles")
        if self.strengths[0] + self.strengths[1] != 0:
            raise ValueError("organ strengths must satisfy charge neutrality a1 + a2 = 0")

    @classmethod
    def default(cls, a: float, strength: complex = 1.0) -> ElectricOrgan:
        """Poles at +-0.35 a along the body axis, positive pole forward."""
        return cls(points=((0.35 * a, 0.0), (-0.35 * a, 0.0)), strengths=(strength, -strength))

    def scaled(self, c: complex) -> ElectricOrgan:
        return replace(self, strengths=(c * self.strengths[0], c * self.strengths[1]))


def bump_pulse(s):
    """Standard pulse shape ``(1 - s^2)^2`` on [-1, 1], zero outside."""
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 2, 0.0)


@dataclass(frozen=True)
class EodSignal:
    """Time signature of an electric organ discharge.

    ``kind="wave"`` gives ``exp(i*omega*t)``; ``kind="pulse"`` gives
    ``shape(eta*t - shift)`` where ``shape`` vanishes outside ``[-1, 1]``.
    """

    kind: str = "wave"
    omega: float = 1.0
    eta: float = 1.0
    shift: float = 0.0
    shape: Callable = field(default=bump_pulse, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("wave", "pulse"):
            raise ValueError(f"unknown EOD kind {self.kind!r}")
        if self.kind == "wave" and self.omega == 0:
            raise ValueError("wave-type EOD needs a nonzero frequency")
        if self.kind == "pulse" and self.eta <= 0:
            raise ValueError("pulse scale eta must be positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "wave":
            return np.exp(1j * self.omega * t)
        return self.shape(self.eta * t - self.shift)

    def support(self) -> tuple[float, float]:
        """Time interval outside which a pulse vanishes."""
        if self.kind != "pulse":
            return (-np.inf, np.inf)
        return ((self.shift - 1.0) / self.eta, (self.shift + 1.0) / self.eta)

    @property
    def peak_time(self) -> float:
        return self.shift / self.eta


def points_in_ellipse(points, a: float, b: float, center=(0.0, 0.0),
                      heading: float = 0.0, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the ellipse, optionally inflated by ``margin``."""
    p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(center, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    u = p[:, 0] * c + p[:, 1] * s
    v = -p[:, 0] * s + p[:, 1] * c
    return (u / (a + margin)) ** 2 + (v / (b + margin)) ** 2 < 1.0


@dataclass(frozen=True)
class FishSpec:
    """Elliptic fish body with skin parameter ``xi`` and an electric organ.

    ``heading`` is the angle of the major axis; the organ and receptor
    parameters are stored in the body frame so that rigid motions act
    exactly on every derived quantity.
    """

    a: float = 2.0
    b: float = 0.3
    center: tuple = (0.0, 0.0)
    heading: float = 0.0
    xi: float = 0.1
    organ: ElectricOrgan | None = None
    eod: EodSignal = field(default_factory=EodSignal)
    n_receptors: int = 32

    def __post_init__(self):
        if not self.a > self.b > 0:
            raise ValueError(f"fish needs a > b > 0, got a={self.a}, b={self.b}")
        if self.xi <= 0:
            raise ValueError("skin parameter xi must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.organ is None:
            object.__setattr__(self, "organ", ElectricOrgan.default(self.a))
        pts = np.asarray(self.organ.points, dtype=float)
        if not np.all((pts[:, 0] / self.a) ** 2 + (pts[:, 1] / self.b) ** 2 < 1.0):
            raise ValueError("organ poles must lie strictly inside the body")

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading)])

    def to_world(self, body_points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(body_points, dtype=float))
        return p @ rotation(self.heading).T + np.asarray(self.center)

    def organ_points(self) -> np.ndarray:
        return self.to_world(self.organ.points)

    def organ_strengths(self) -> np.ndarray:
        return np.asarray(self.organ.strengths)

    def organ_center(self) -> np.ndarray:
        return self.organ_points().mean(axis=0)

    def mesh(self, n_panels: int) -> BoundaryMesh:
        return make_ellipse_mesh(self.a, self.b, self.center, self.heading, n_panels)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        return points_in_ellipse(points, self.a, self.b, self.center, self.heading, margin)

    def moved(self, center=None, heading=None) -> FishSpec:
        """Copy of the fish at a new pose."""
        return replace(
            self,
            center=self.center if center is None else tuple(np.asarray(center, dtype=float)),
            heading=self.heading if heading is None else float(heading),
        )


@dataclass(frozen=True)
class TargetSpec:
    """Small disk ``D = z + delta*B`` with conductivity and permittivity."""

    center: tuple = (0.0, 0.0)
    radius: float = 0.2
    sigma_D: float = 2.0
    eps_D: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("target radius must be positive")
        if self.sigma_D < 0 or self.eps_D < 0:
            raise ValueError("target material parameters must be non-negative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def mesh(self, n_panels: int) -> BoundaryMesh:
        return make_ellipse_mesh(self.radius, self.radius, self.center, 0.0, n_panels)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center)
        return np.hypot(p[:, 0], p[:, 1]) < self.radius + margin


@dataclass(frozen=True)
class MediumParams:
    sigma_w: float = 1.0
    eps_w: float = 0.0

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValueError("background conductivity must be positive")
        if self.eps_w < 0:
            raise ValueError("background permittivity must be non-negative")


@dataclass(frozen=True)
class Receptors:
    """Receptor array on a fish's skin, stored by curve parameter.

    ``t`` are parameter values of the body-frame ellipse, so the array is
    carried rigidly with the fish.  ``node_index`` is set when every
    receptor coincides with a mesh sample.
    """

    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    node_index: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.t)

    def sample(self, values: np.ndarray) -> np.ndarray:
        """Restrict nodal boundary values of the carrying mesh to the receptors."""
        values = np.asarray(values)
        if self.node_index is not None:
            return values[self.node_index]
        return trig_interp_matrix(len(values), self.t) @ values


def _receptor_params(a: float, b: float, n: int) -> np.ndarray:
    total = ellipse_arclength(a, b, 2.0 * np.pi)
    targets = total * np.arange(n) / n
    # invert the monotone arclength map on a fine table, then polish with Newton
    tt = np.linspace(0.0, 2.0 * np.pi, 4097)
    t = np.interp(targets, ellipse_arclength(a, b, tt), tt)
    for _ in range(4):
        speed = np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2)
        t = t - (ellipse_arclength(a, b, t) - targets) / speed
    return t


def place_receptors(fish_or_mesh, n: int | None = None, n_panels: int | None = None) -> Receptors:
    """Place ``n`` receptors equi-spaced in arclength on a fish.

    Parameters
    ----------
    fish_or_mesh : FishSpec or BoundaryMesh
        For a bare mesh, only ``n == mesh.n`` is supported and returns the
        mesh samples themselves.
    n : int, optional
        Defaults to ``fish.n_receptors``.
    n_panels : int, optional
        Panel count of the mesh the receptors will read from.  When it
        equals ``n`` the receptors are exactly the mesh samples.
    """
    if isinstance(fish_or_mesh, BoundaryMesh):
        mesh = fish_or_mesh
        n = mesh.n if n is None else n
        if n != mesh.n:
            raise ValueError("a bare mesh only supports one receptor per panel")
        return Receptors(t=mesh.t.copy(), points=mesh.midpoints.copy(),
                         normals=mesh.normals.copy(), node_index=np.arange(mesh.n))
    fish = fish_or_mesh
    n = fish.n_receptors if n is None else n
    if n < 1:
        raise ValueError("need at least one receptor")
    if n_panels is not None and n > n_panels:
        raise ValueError(f"{n} receptors exceed {n_panels} panels")
    if n_panels is not None and n == n_panels:
        t = 2.0 * np.pi * np.arange(n) / n
        node_index = np.arange(n)
    else:
        t = _receptor_params(fish.a, fish.b, n)
        node_index = None
    a, b = fish.a, fish.b
    body = np.column_stack([a * np.cos(t), b * np.sin(t)])
    nrm = np.column_stack([b * np.cos(t), a * np.sin(t)])
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    R = rotation(fish.heading)
    return Receptors(t=t, points=body @ R.T + np.asarray(fish.center), normals=nrm @ R.T,
                     node_index=node_index)


@dataclass(frozen=True)
class SearchGrid:
    """Uniform lattice with a mask of nodes excluded because they lie inside a body."""

    x: np.ndarray
    y: np.ndarray
    excluded: np.ndarray  # (ny, nx) bool

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.y), len(self.x))

    @property
    def resolution(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else float("nan")

    @property
    def points(self) -> np.ndarray:
        """All lattice nodes, row-major over (y, x)."""
        X, Y = np.meshgrid(self.x, self.y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def active_points(self) -> np.ndarray:
        return self.points[~self.excluded.ravel()]


def make_search_grid(bbox, resolution: float, bodies=()) -> SearchGrid:
    """Uniform lattice over ``bbox = (xmin, xmax, ymin, ymax)``.

    Nodes inside any of ``bodies`` (objects with a ``contains`` method) are
    flagged as excluded.
    """
    xmin, xmax, ymin, ymax = map(float, bbox)
    if resolution <= 0:
        raise ValueError("grid resolution must be positive")
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"empty bounding box {bbox}")
    nx = int(np.floor((xmax - xmin) / resolution + 1e-9)) + 1
    ny = int(np.floor((ymax - ymin) / resolution + 1e-9)) + 1
    x = xmin + resolution * np.arange(nx)
    y = ymin + resolution * np.arange(ny)
    X, Y = np.meshgrid(x, y)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    excluded = np.zeros(len(pts), dtype=bool)
    for body in bodies:
        excluded |= body.contains(pts)
    return SearchGrid(x=x, y=y, excluded=excluded.reshape(ny, nx))


def refine_peak(grid: SearchGrid, image: np.ndarray, iy: int, ix: int) -> np.ndarray:
    """Vertex of the 1D parabolas through the peak and its lattice neighbours.

    The fit is done on ``log(image)``, which is closer to quadratic near a
    sharp peak than the image itself.
    """
    with np.errstate(divide="ignore"):
        image = np.log(image)
    z = np.array([grid.x[ix], grid.y[iy]], dtype=float)
    h = grid.resolution
    for axis, (i, n) in enumerate(((ix, len(grid.x)), (iy, len(grid.y)))):
        if 0 < i < n - 1:
            if axis == 0:
                fm, f0, fp = image[iy, ix - 1], image[iy, ix], image[iy, ix + 1]
            else:
                fm, f0, fp = image[iy - 1, ix], image[iy, ix], image[iy + 1, ix]
            denom = fm - 2.0 * f0 + fp
            if denom < 0 and np.all(np.isfinite([fm, fp])):
                z[axis] += h * float(np.clip(0.5 * (fm - fp) / denom, -0.5, 0.5))
    return z
