"""Locating a conspecific from its field on the follower's skin.

The follower (fish 0 by default) records, at its receptors, the part of the
leader's field that does not come from its own skin layer,

    F(x) = u2(x) - H^{u2}(x),    H^{u2} = (S_1 - xi_1 D_1)[du2/dnu|+ on skin 1],

which is the field of the leader alone and is well approximated by a single
dipole ``A(z) p``.  Stacking measurements from several follower positions
gives the multi-static response (MSR) matrix; its leading left singular
vector spans the signal subspace and the localizer

    I2(z) = max_s 1 / lambda_min(A_s(z)^T P_N A_s(z), A_s(z)^T A_s(z))

peaks at the dipole.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .forward import ForwardSolution, Scene, default_panels, solve_two_fish
from .geometry import SearchGrid, place_receptors, refine_peak

__all__ = [
    "DipoleEstimate",
    "MSRMatrix",
    "build_msr",
    "compute_H_u2",
    "conspecific_field",
    "follower_track_scenes",
    "lead_field",
    "equivalent_dipole",
    "localizer_map",
    "music_localize",
    "noise_sigma",
    "signal_subspace",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MSRMatrix:
    """Real ``N_r x N_s`` response matrix and the receptor positions per column.

    ``clean`` holds the noiseless matrix, ``data`` the noisy one.
    """

    data: np.ndarray
    receptor_points: np.ndarray  # (N_s, N_r, 2)
    clean: np.ndarray
    sigma0: float = 0.0
    sigma_noise: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 3 or self.data.shape[1] < 1:
            raise ValueError("MSR needs at least 3 receptors and one position")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("MSR entries must be finite")
        if self.receptor_points.shape != (self.data.shape[1], self.data.shape[0], 2):
            raise ValueError("receptor positions do not match the MSR shape")

    @property
    def n_receptors(self) -> int:
        return self.data.shape[0]

    @property
    def n_positions(self) -> int:
        return self.data.shape[1]

    def scaled(self, c: float) -> MSRMatrix:
        return MSRMatrix(c * self.data, self.receptor_points, c * self.clean,
                         self.sigma0, c * self.sigma_noise, self.seed)

    def permuted(self, order) -> MSRMatrix:
        order = np.asarray(order)
        return MSRMatrix(self.data[:, order], self.receptor_points[order], self.clean[:, order],
                         self.sigma0, self.sigma_noise, self.seed)


@dataclass(frozen=True)
class DipoleEstimate:
    """Equivalent dipole of the conspecific.

    ``z_node`` is the best grid node, ``z_hat`` its sub-grid refinement.
    ``heading_hat`` is ``p_hat/|p_hat|``; with the organ's positive pole
    forward, the moment points tailward.
    """

    z_hat: np.ndarray
    p_hat: np.ndarray
    localizer_peak: float
    z_node: np.ndarray
    position_index: int = 0
    heading_hat: np.ndarray = field(init=False)

    def __post_init__(self):
        norm = np.linalg.norm(self.p_hat)
        object.__setattr__(self, "heading_hat", self.p_hat / norm if norm > 0 else np.zeros(2))


def compute_H_u2(solution: ForwardSolution, follower: int = 0):
    """Evaluator of the follower's own skin-layer field ``H^{u2}`` at exterior points."""
    def evaluate(points):
        return solution.potential(points, bodies=[follower], include_source=False)
    return evaluate


def conspecific_field(solution: ForwardSolution, follower: int = 0) -> np.ndarray:
    """Nodal values of ``u2 - H^{u2}`` on the follower's skin (exterior side).

    This is everything in the representation except the follower's own
    layer, i.e. the leader's organ and skin terms (plus any passive target).
    """
    value, _ = solution._external(follower)
    return value


def follower_track_scenes(scene: Scene, n_positions: int, span: float = 0.3,
                          follower: int = 0) -> list:
    """Scenes with the follower translated along its heading over ``span``."""
    if n_positions < 1:
        raise ValueError("need at least one position")
    fish = scene.fish[follower]
    offsets = np.linspace(0.0, span, n_positions) if n_positions > 1 else np.zeros(1)
    c0 = np.asarray(fish.center)
    return [scene.with_fish(follower, fish.moved(center=c0 + d * fish.direction)) for d in offsets]


def noise_sigma(clean: np.ndarray, sigma0: float) -> float:
    """Noise standard deviation ``(F_max - F_min) * sigma0``."""
    return float((clean.max() - clean.min()) * sigma0)


def build_msr(scenes, sigma0: float = 0.0, seed=None, follower: int = 0, leader: int = 1,
              n_panels: int | None = None, clean: np.ndarray | None = None) -> MSRMatrix:
    """Assemble the MSR matrix from one forward solve per position.

    Parameters
    ----------
    scenes : Scene or sequence of Scene
        One scene per measurement position.
    sigma0 : float
        Relative noise level.
    seed : int or numpy.random.SeedSequence, optional
        Seed of the noise generator.
    clean : ndarray, optional
        Reuse a previously computed noiseless matrix for the same scenes.
    """
    if isinstance(scenes, Scene):
        scenes = [scenes]
    if len(scenes) < 1:
        raise ValueError("need at least one position")
    if sigma0 < 0:
        raise ValueError("noise level must be non-negative")
    n_panels = default_panels() if n_panels is None else n_panels
    recs = [place_receptors(sc.fish[follower], n_panels=n_panels) for sc in scenes]
    if clean is None:
        cols = []
        for sc, rec in zip(scenes, recs):
            sol = solve_two_fish(sc, active=leader, omega=0.0, n_panels=n_panels)
            cols.append(np.real(rec.sample(conspecific_field(sol, follower))))
        clean = np.column_stack(cols)
    sig = noise_sigma(clean, sigma0)
    data = clean.copy()
    if sig > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, sig, size=clean.shape)
    pts = np.stack([r.points for r in recs])
    seed_val = seed if isinstance(seed, (int, np.integer)) or seed is None else None
    return MSRMatrix(data, pts, clean, float(sigma0), sig, seed_val)


def lead_field(z, receptors) -> np.ndarray:
    """Dipole lead field: row ``l`` is ``(x_l - z) / |x_l - z|^2``."""
    x = np.atleast_2d(np.asarray(receptors, dtype=float))
    d = x - np.asarray(z, dtype=float)
    r2 = (d**2).sum(axis=1)
    if np.any(r2 == 0):
        raise ValueError("source point coincides with a receptor")
    return d / r2[:, None]


def signal_subspace(data: np.ndarray, rank: int = 1) -> np.ndarray:
    """Leading ``rank`` left singular vectors, signs oriented along the data."""
    U, _, _ = np.linalg.svd(data, full_matrices=False)
    Phi = U[:, :rank].copy()
    for j in range(rank):
        if np.sum(Phi[:, j] @ data) < 0:
            Phi[:, j] = -Phi[:, j]
    return Phi


def _lambda_min(c00, c01, c11, w00, w01, w11) -> np.ndarray:
    """Smallest generalized eigenvalue of ``(C - W, C)`` for symmetric 2x2 stacks.

    The eigenvalues of ``C^{-1} W`` are real and lie in [0, 1]; the result
    is one minus the largest of them.
    """
    det_c = c00 * c11 - c01 * c01
    tr = (c11 * w00 - 2.0 * c01 * w01 + c00 * w11) / det_c
    det = (w00 * w11 - w01 * w01) / det_c
    return 1.0 - (0.5 * tr + np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0)))


def localizer_map(msr: MSRMatrix, points, rank: int = 1, chunk: int = 8192):
    """Evaluate ``I2`` at ``points``.

    Returns
    -------
    values : (G,) array
        Localizer, max over positions.
    best_position : (G,) int array
        Position index achieving the max.
    Phi : (N_r, rank) array
        Signal subspace used.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        raise ValueError("empty search grid")
    if msr.n_receptors <= rank:
        raise ValueError("noise subspace is empty: need more receptors than the signal rank")
    Phi = signal_subspace(msr.data, rank)
    values = np.zeros(len(pts))
    best = np.zeros(len(pts), dtype=int)
    for start in range(0, len(pts), chunk):
        z = pts[start:start + chunk]
        vmax = np.zeros(len(z))
        smax = np.zeros(len(z), dtype=int)
        for s in range(msr.n_positions):
            x = msr.receptor_points[s]
            dx = x[None, :, 0] - z[:, 0, None]
            dy = x[None, :, 1] - z[:, 1, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                r2 = dx * dx + dy * dy
                ax, ay = dx / r2, dy / r2  # lead field columns, (G, N_r)
                vx, vy = ax @ Phi, ay @ Phi
                lam = _lambda_min((ax * ax).sum(1), (ax * ay).sum(1), (ay * ay).sum(1),
                                  (vx * vx).sum(1), (vx * vy).sum(1), (vy * vy).sum(1))
            val = np.where(np.isfinite(lam), 1.0 / np.maximum(lam, 1e-16), 0.0)
            upd = val > vmax
            vmax[upd] = val[upd]
            smax[upd] = s
        values[start:start + chunk] = vmax
        best[start:start + chunk] = smax
    return values, best, Phi


def music_localize(msr: MSRMatrix, grid: SearchGrid, rank: int = 1):
    """Multi-position MUSIC dipole search.

    Returns
    -------
    estimate : DipoleEstimate
    image : (ny, nx) array
        Localizer ``I2`` on the grid; excluded nodes are 0.

    Raises
    ------
    ValueError
        Empty grid, too few receptors, or a rank-deficient lead field at the peak.
    """
    pts = grid.points
    active = ~grid.excluded.ravel()
    if not np.any(active):
        raise ValueError("search grid has no admissible nodes")
    vals, best, Phi = localizer_map(msr, pts[active], rank)
    flat = np.zeros(len(pts))
    flat[active] = vals
    image = flat.reshape(grid.shape)
    k_active = int(np.argmax(vals))
    k = int(np.flatnonzero(active)[k_active])
    iy, ix = np.unravel_index(k, grid.shape)
    s_star = int(best[k_active])
    z_node = pts[k].copy()
    z_hat = refine_peak(grid, image, iy, ix)
    A = lead_field(z_node, msr.receptor_points[s_star])
    if np.linalg.matrix_rank(A) < 2:
        raise ValueError("lead field is rank deficient at the peak")
    p_hat, *_ = np.linalg.lstsq(A, Phi[:, 0], rcond=None)
    est = DipoleEstimate(z_hat=z_hat, p_hat=p_hat, localizer_peak=float(vals[k_active]),
                         z_node=z_node, position_index=s_star)
    log.debug("MUSIC peak %.3g at %s (position %d)", est.localizer_peak, z_node, s_star)
    return est, image


def equivalent_dipole(msr: MSRMatrix, z0, use_clean: bool = True) -> tuple[np.ndarray, float]:
    """Location of the single dipole that best reproduces the MSR columns.

    Minimizes ``sum_s min_p |F_s - A_s(z) p|^2 / |F_s|^2`` over ``z``,
    starting from ``z0``.  This is the point a noiseless dipole search
    should recover; it differs from the organ center because the
    conspecific's own body reshapes its field.

    Returns
    -------
    z : (2,) array
    misfit : float
        Mean relative residual at the optimum.
    """
    F = msr.clean if use_clean else msr.data

    def misfit(z):
        total = 0.0
        for s in range(msr.n_positions):
            A = lead_field(z, msr.receptor_points[s])
            coef, *_ = np.linalg.lstsq(A, F[:, s], rcond=None)
            r = F[:, s] - A @ coef
            total += (r @ r) / (F[:, s] @ F[:, s])
        return total / msr.n_positions

    res = minimize(misfit, np.asarray(z0, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-14, "maxiter": 2000})
    return res.x, float(res.fun)
