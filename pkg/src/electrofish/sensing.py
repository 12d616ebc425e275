"""Multi-frequency MUSIC imaging of a small dielectric target.

The emitting fish records ``Im du/dnu|+`` on its skin at several
frequencies.  After applying the skin operator

    P = I/2 - K* + xi dD/dnu

to these data, the fish's own boundary drops out and the target appears
as a free-space dipole,

    P[Im psi](x) ~ delta^2 grad U1(z)^T Im M(lambda, B) grad_z dGamma/dnu_x (x, z),

with ``U1`` the fish-alone background potential.  For a disk ``M`` is a
multiple of the identity, so every frequency column is proportional to the
illumination vector ``g(z)`` and the localizer ``1/|(I - P_S) g(z)/|g(z)||``
peaks at the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import potential as pt
from .forward import Admittivity, ForwardSolution, Scene, _self_operators, default_panels, solve_two_fish
from .geometry import BoundaryMesh, FishSpec, MediumParams, SearchGrid, place_receptors

__all__ = [
    "PolarizationTensor",
    "SFRMatrix",
    "TargetEstimate",
    "build_sfr",
    "default_frequencies",
    "dipole_kernel_gradient",
    "fit_imag_polarization",
    "illumination_vector",
    "localizer_I1",
    "polarization_tensor",
    "postprocess_data",
    "postprocess_operator",
    "sense_target",
    "signal_rank",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolarizationTensor:
    M: np.ndarray
    lam: complex
    shape: str = "disk"

    @property
    def imag(self) -> np.ndarray:
        return self.M.imag


def polarization_tensor(lam: complex, mesh: BoundaryMesh, shape: str = "custom") -> PolarizationTensor:
    """First-order polarization tensor of the domain sampled by ``mesh``.

    Solves ``(lam I - K*) phi_j = nu_j`` and returns ``m_ij = int y_i phi_j``.

    Raises
    ------
    np.linalg.LinAlgError
        When ``lam`` is (numerically) in the spectrum of ``K*``.
    """
    Ks = pt.assemble_K_star(mesh)
    A = lam * np.eye(mesh.n) - Ks
    if np.linalg.cond(A) > 1e12:
        raise np.linalg.LinAlgError(f"lambda={lam} is in the spectrum of K*")
    phi = np.linalg.solve(A, mesh.normals.astype(A.dtype))
    M = (mesh.midpoints * mesh.weights[:, None]).T @ phi
    return PolarizationTensor(M=M, lam=complex(lam), shape=shape)


def postprocess_operator(fish: FishSpec, n_panels: int | None = None) -> np.ndarray:
    """Matrix of ``I/2 - K* + xi dD/dnu`` on the fish's skin."""
    n = default_panels() if n_panels is None else n_panels
    ops = _self_operators(fish.a, fish.b, n)
    return 0.5 * np.eye(n) - ops["Kstar"] + fish.xi * ops["T"]


def postprocess_data(data, fish: FishSpec, n_panels: int | None = None) -> np.ndarray:
    """Apply the skin operator to nodal Neumann data (vector or nodes x columns)."""
    data = np.asarray(data)
    n = data.shape[0] if n_panels is None else n_panels
    return postprocess_operator(fish, n) @ data


def dipole_kernel_gradient(points, normals, z) -> np.ndarray:
    """``grad_z dGamma/dnu_x (x, z)`` for many ``x`` and ``z``, shape (G, L, 2)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    nu = np.atleast_2d(np.asarray(normals, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    r = x[None, :, :] - z[:, None, :]
    r2 = (r**2).sum(axis=-1)
    if np.any(r2 == 0):
        raise ValueError("z coincides with a receptor")
    rn = (r * nu[None, :, :]).sum(axis=-1)
    g = -nu[None, :, :] / r2[..., None] + 2.0 * (rn / r2**2)[..., None] * r
    return g / (2.0 * np.pi)


def illumination_vector(z, hatU1: ForwardSolution, receptors) -> np.ndarray:
    """Illumination vectors ``g(z)_l = grad U1(z) . grad_z dGamma/dnu_x (x_l, z)``.

    ``z`` may be one point or an (G, 2) array; the result has shape
    (N_r,) or (G, N_r).
    """
    z_arr = np.atleast_2d(np.asarray(z, dtype=float))
    grad_u = hatU1.gradient(z_arr)
    kern = dipole_kernel_gradient(receptors.points, receptors.normals, z_arr)
    g = np.einsum("gi,gli->gl", grad_u, kern)
    return g[0] if np.ndim(z) == 1 else g


@dataclass(frozen=True)
class SFRMatrix:
    """Real ``N_r x N_f`` matrix of post-processed imaginary Neumann data."""

    data: np.ndarray
    frequencies: np.ndarray
    clean: np.ndarray
    receptor_points: np.ndarray
    receptor_normals: np.ndarray
    sigma0: float = 0.0
    sigma_noise: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise ValueError("SFR needs at least one frequency")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("SFR entries must be finite")

    def scaled(self, c: float) -> SFRMatrix:
        return SFRMatrix(c * self.data, self.frequencies, c * self.clean, self.receptor_points,
                         self.receptor_normals, self.sigma0, c * self.sigma_noise, self.seed)


def default_frequencies(n_freq: int, target_eps: float = 1.0, medium: MediumParams | None = None,
                        span=(0.1, 10.0)) -> np.ndarray:
    """Frequencies with ``omega * eps_D / sigma_w`` uniform over ``span``."""
    medium = medium or MediumParams()
    return np.linspace(span[0], span[1], n_freq) * medium.sigma_w / target_eps


def build_sfr(scene: Scene, frequencies, sigma0: float = 0.0, seed=None, fish: int = 0,
              n_panels: int | None = None, clean: np.ndarray | None = None,
              noise_reference: float | None = None) -> SFRMatrix:
    """Post-processed imaginary skin data across frequencies, plus noise.

    Every fish other than ``fish`` stays in the model as a passive body.
    The noise standard deviation is ``sigma0`` times the range of the
    clean matrix, or times ``noise_reference`` when given (useful for
    scenes without a target, whose clean data vanish).

    Raises
    ------
    ValueError
        If no frequency gives a complex contrast, or the SFR is all zero.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    n_panels = default_panels() if n_panels is None else n_panels
    f = scene.fish[fish]
    rec = place_receptors(f, n_panels=n_panels)
    if clean is None:
        if scene.target is not None:
            ks = [Admittivity.at(scene.target, scene.medium, w).k for w in freqs]
            if all(abs(np.imag(k)) < 1e-14 for k in ks):
                raise ValueError("all contrasts are real: no imaginary signature to image")
        P = postprocess_operator(f, n_panels)
        cols = []
        for w in freqs:
            sol = solve_two_fish(scene, active=fish, omega=float(w), n_panels=n_panels)
            cols.append(rec.sample(P @ np.imag(sol.neumann(fish))))
        clean = np.column_stack(cols)
    ref = np.ptp(clean) if noise_reference is None else noise_reference
    sig = float(ref * sigma0)
    data = clean.copy()
    if sig > 0:
        data = data + np.random.default_rng(seed).normal(0.0, sig, size=clean.shape)
    if not np.any(data):
        raise ValueError("degenerate SFR: all entries vanish")
    seed_val = seed if isinstance(seed, (int, np.integer)) or seed is None else None
    return SFRMatrix(data, freqs, clean, rec.points, rec.normals, float(sigma0), sig, seed_val)


def signal_rank(singular_values, rel: float = 0.1, max_rank: int = 2) -> int:
    """Number of singular values at least ``rel`` times the largest, capped at ``max_rank``."""
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(min(max_rank, np.count_nonzero(s >= rel * s[0])))


def localizer_I1(sfr: SFRMatrix, points, hatU1: ForwardSolution, receptors, rank: int | None = None,
                 chunk: int = 4096):
    """``I1(z) = 1/|(I - P) g(z)/|g(z)||`` at the given points.

    Returns the values and the signal-subspace rank used.
    """
    U, s, _ = np.linalg.svd(sfr.data, full_matrices=False)
    r = signal_rank(s) if rank is None else rank
    Us = U[:, :r]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts))
    for start in range(0, len(pts), chunk):
        g = illumination_vector(pts[start:start + chunk], hatU1, receptors)
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        resid = g - (g @ Us) @ Us.T
        out[start:start + chunk] = 1.0 / np.maximum(np.linalg.norm(resid, axis=1), 1e-16)
    return out, r


def fit_imag_polarization(sfr: SFRMatrix, z, hatU1: ForwardSolution, receptors,
                          delta: float | None = None, use_clean: bool = False,
                          isotropic: bool = True) -> np.ndarray:
    """Least-squares fit of ``Im M`` per frequency at ``z``.

    A single emitter only observes the vector ``M grad U1(z)``, so the
    three entries of a symmetric ``M`` are not jointly identifiable.  With
    ``isotropic=True`` (right for disks) ``M = m I`` is fitted; otherwise
    the minimum-norm symmetric solution is returned.

    Returns an (N_f, 2, 2) array holding ``delta^2 Im M``, or ``Im M``
    itself when ``delta`` is given.
    """
    grad_u = hatU1.gradient(np.atleast_2d(z))[0].real
    kern = dipole_kernel_gradient(receptors.points, receptors.normals, z)[0]  # (L, 2)
    data = sfr.clean if use_clean else sfr.data
    if isotropic:
        A = (kern @ grad_u)[:, None]
    else:
        # data_l = sum_ab du_a M_ab k_lb, unknowns (M00, M01, M11)
        A = np.column_stack([
            grad_u[0] * kern[:, 0],
            grad_u[0] * kern[:, 1] + grad_u[1] * kern[:, 0],
            grad_u[1] * kern[:, 1],
        ])
    if not np.any(A):
        raise np.linalg.LinAlgError("dipole model vanishes at z")
    coef, *_ = np.linalg.lstsq(A, data, rcond=None)
    M = np.zeros((data.shape[1], 2, 2))
    if isotropic:
        M[:, 0, 0] = M[:, 1, 1] = coef[0]
    else:
        M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1] = coef[0], coef[1], coef[1], coef[2]
    return M / delta**2 if delta else M


@dataclass(frozen=True)
class TargetEstimate:
    """Grid node maximizing ``I1``, the localizer image and the fitted ``Im M``."""

    z_hat: np.ndarray
    image: np.ndarray
    rank: int
    peak: float
    imag_M: np.ndarray | None = None


def sense_target(scene: Scene, frequencies, sigma0: float = 0.0, seed=None, grid: SearchGrid = None,
                 fish: int = 0, n_panels: int | None = None, sfr: SFRMatrix | None = None,
                 hatU1: ForwardSolution | None = None, delta: float | None = None) -> tuple:
    """Locate a small target from multi-frequency skin data of fish ``fish``.

    Returns
    -------
    estimate : TargetEstimate
    sfr : SFRMatrix
    """
    if grid is None:
        raise ValueError("a search grid is required")
    n_panels = default_panels() if n_panels is None else n_panels
    f = scene.fish[fish]
    if sfr is None:
        sfr = build_sfr(scene, frequencies, sigma0, seed, fish=fish, n_panels=n_panels)
    if hatU1 is None:
        hatU1 = solve_two_fish(Scene((f,), medium=scene.medium), active=0, n_panels=n_panels)
    rec = place_receptors(f, n_panels=n_panels)
    active = ~grid.excluded.ravel()
    if not np.any(active):
        raise ValueError("search grid has no admissible nodes")
    pts = grid.points
    vals, r = localizer_I1(sfr, pts[active], hatU1, rec)
    flat = np.zeros(len(pts))
    flat[active] = vals
    image = flat.reshape(grid.shape)
    k = int(np.flatnonzero(active)[np.argmax(vals)])
    z_hat = pts[k].copy()
    try:
        imag_M = fit_imag_polarization(sfr, z_hat, hatU1, rec, delta)
    except np.linalg.LinAlgError:
        imag_M = None
    log.debug("I1 peak %.3g at %s, rank %d", flat[k], z_hat, r)
    return TargetEstimate(z_hat, image, r, float(flat[k]), imag_M), sfr
