"""Nystrom discretizations of 2D Laplace layer potentials.

Conventions: ``Gamma(x - y) = log|x - y| / (2*pi)``, normals point out of
the body, and ``D[phi](x) = int dGamma/dnu_y (x, y) phi(y) ds_y``.  With
these, the traces are

    S[phi]|+ = S[phi]|-
    dS[phi]/dnu|+- = (+-1/2 I + K*)[phi]
    D[phi]|+- = (-+1/2 I + K)[phi]

Every ``assemble_*`` function returns a dense matrix acting on nodal
density values of a :class:`~electrofish.geometry.BoundaryMesh`; the
quadrature weights are folded in.  On-boundary matrices use Kress'
product quadrature for the logarithm and the smooth diagonal limit
``curvature/(4*pi)`` for ``K`` and ``K*``.
"""

from __future__ import annotations

import numpy as np

from .geometry import BoundaryMesh

__all__ = [
    "gamma",
    "assemble_single_layer",
    "assemble_double_layer",
    "assemble_K",
    "assemble_K_star",
    "assemble_dDdnu",
    "assemble_dSdn_off",
    "assemble_dDdn_off",
    "gradient_single_layer",
    "gradient_double_layer",
    "fourier_derivative_matrix",
    "kress_log_weights",
]

TWO_PI = 2.0 * np.pi


def gamma(x, y) -> np.ndarray:
    """Fundamental solution ``log|x - y| / (2*pi)``; broadcasts over leading axes."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r == 0):
        raise ValueError("Gamma is singular at coincident points")
    return np.log(r) / TWO_PI


def _diff(obs: np.ndarray, src: np.ndarray):
    r = obs[:, None, :] - src[None, :, :]
    r2 = r[..., 0] ** 2 + r[..., 1] ** 2
    if np.any(r2 == 0):
        raise ValueError("observation point coincides with a source node")
    return r, r2


def kress_log_weights(n: int) -> np.ndarray:
    """Weights ``R_k`` with ``int_0^{2pi} log(4 sin^2((t_i - s)/2)) f(s) ds ~ sum_j R_{i-j} f_j``.

    ``n`` must be even; the returned vector is indexed by ``(i - j) mod n``.
    """
    if n % 2:
        raise ValueError("Kress quadrature needs an even number of nodes")
    half = n // 2
    d = TWO_PI * np.arange(n) / n
    m = np.arange(1, half)
    R = -(2.0 * np.pi / half) * (np.cos(np.outer(d, m)) / m).sum(axis=1)
    R -= (np.pi / half**2) * np.cos(half * d)
    return R


def _circulant(vec: np.ndarray) -> np.ndarray:
    n = len(vec)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return vec[idx]


def assemble_single_layer(src: BoundaryMesh, obs=None) -> np.ndarray:
    """Single layer ``S`` from ``src`` densities to ``obs``.

    ``obs=None`` gives the on-boundary operator (log-singular diagonal via
    Kress' split); otherwise ``obs`` is an (M, 2) array of points off the
    boundary and the plain trapezoidal rule is used.
    """
    if obs is not None:
        _, r2 = _diff(np.atleast_2d(obs), src.midpoints)
        return np.log(r2) * (src.weights / (2.0 * TWO_PI))
    n = src.n
    x = src.midpoints
    r2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    dt = src.t[:, None] - src.t[None, :]
    sin2 = 4.0 * np.sin(0.5 * dt) ** 2
    np.fill_diagonal(sin2, 1.0)
    np.fill_diagonal(r2, 1.0)
    smooth = np.log(r2 / sin2)
    np.fill_diagonal(smooth, np.log(src.speed**2))
    # S_ij = (1/4pi) [R_{i-j} + (2pi/n) L_ij] |x'(t_j)|
    mat = _circulant(kress_log_weights(n)) + (TWO_PI / n) * smooth
    return mat * (src.speed / (2.0 * TWO_PI))


def assemble_K(src: BoundaryMesh) -> np.ndarray:
    """Neumann-Poincare operator ``K`` (on-boundary double layer, principal value)."""
    x, nu = src.midpoints, src.normals
    r = x[None, :, :] - x[:, None, :]  # y - x
    r2 = (r**2).sum(axis=-1)
    np.fill_diagonal(r2, 1.0)
    ker = (r * nu[None, :, :]).sum(axis=-1) / r2
    np.fill_diagonal(ker, 0.5 * src.curvature)
    return ker * (src.weights / TWO_PI)


def assemble_K_star(src: BoundaryMesh) -> np.ndarray:
    """Adjoint Neumann-Poincare operator ``K*``."""
    x, nu = src.midpoints, src.normals
    r = x[:, None, :] - x[None, :, :]  # x - y
    r2 = (r**2).sum(axis=-1)
    np.fill_diagonal(r2, 1.0)
    ker = (r * nu[:, None, :]).sum(axis=-1) / r2
    np.fill_diagonal(ker, 0.5 * src.curvature)
    return ker * (src.weights / TWO_PI)


def assemble_double_layer(src: BoundaryMesh, obs=None) -> np.ndarray:
    """Double layer ``D``.

    ``obs=None`` returns ``K``; the one-sided traces are then
    ``D|+ = -I/2 + K`` and ``D|- = I/2 + K``.
    """
    if obs is None:
        return assemble_K(src)
    r, r2 = _diff(np.atleast_2d(obs), src.midpoints)  # x - y
    ker = -(r * src.normals[None, :, :]).sum(axis=-1) / r2
    return ker * (src.weights / TWO_PI)


def fourier_derivative_matrix(n: int) -> np.ndarray:
    """Spectral d/dt on ``n`` equispaced periodic samples (``n`` even)."""
    if n % 2:
        raise ValueError("need an even number of samples")
    k = np.arange(n)
    d = (k[:, None] - k[None, :]) % n
    h = TWO_PI / n
    with np.errstate(divide="ignore"):
        D = 0.5 * (-1.0) ** d / np.tan(0.5 * d * h)
    D[d == 0] = 0.0
    return D


def assemble_dDdnu(src: BoundaryMesh) -> np.ndarray:
    """Hypersingular operator ``dD/dnu`` on the boundary (both sides agree).

    Uses the tangential-derivative identity ``dD[phi]/dnu = d/ds S[dphi/ds]``.
    """
    Dt = fourier_derivative_matrix(src.n)
    Ds = Dt / src.speed[:, None]
    return Ds @ assemble_single_layer(src) @ Ds


def assemble_dSdn_off(src: BoundaryMesh, obs, obs_normals) -> np.ndarray:
    """Normal derivative of ``S`` at points off the source boundary."""
    r, r2 = _diff(np.atleast_2d(obs), src.midpoints)
    ker = (r * np.atleast_2d(obs_normals)[:, None, :]).sum(axis=-1) / r2
    return ker * (src.weights / TWO_PI)


def assemble_dDdn_off(src: BoundaryMesh, obs, obs_normals) -> np.ndarray:
    """Normal derivative of ``D`` at points off the source boundary."""
    r, r2 = _diff(np.atleast_2d(obs), src.midpoints)
    n_x = np.atleast_2d(obs_normals)[:, None, :]
    nu_y = src.normals[None, :, :]
    rn_y = (r * nu_y).sum(axis=-1)
    rn_x = (r * n_x).sum(axis=-1)
    ker = -((nu_y * n_x).sum(axis=-1) / r2 - 2.0 * rn_y * rn_x / r2**2)
    return ker * (src.weights / TWO_PI)


def gradient_single_layer(src: BoundaryMesh, obs) -> np.ndarray:
    """Gradient of ``S`` at off-boundary points, shape (2, M, N)."""
    r, r2 = _diff(np.atleast_2d(obs), src.midpoints)
    return np.moveaxis(r / r2[..., None], -1, 0) * (src.weights / TWO_PI)


def gradient_double_layer(src: BoundaryMesh, obs) -> np.ndarray:
    """Gradient of ``D`` at off-boundary points, shape (2, M, N)."""
    r, r2 = _diff(np.atleast_2d(obs), src.midpoints)
    nu = src.normals[None, :, :]
    rn = (r * nu).sum(axis=-1)
    g = -(nu / r2[..., None] - 2.0 * (rn / r2**2)[..., None] * r)
    return np.moveaxis(g, -1, 0) * (src.weights / TWO_PI)
