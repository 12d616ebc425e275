"""Closed-loop fish-follows-fish simulation.

At every macro step the leader swims along a prescribed path while the
follower, holding still, records its field at ``M`` sub-times.  A
multi-position dipole search on these records estimates the leader, and
the follower then turns toward the estimate (by at most ``theta_max``) and
swims forward with a distance-dependent speed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .comm_music import MSRMatrix, conspecific_field, lead_field, music_localize, noise_sigma
from .forward import Scene, default_panels, solve_two_fish
from .geometry import FishSpec, make_search_grid, place_receptors

__all__ = [
    "LeaderPath",
    "SpeedParams",
    "TrackResult",
    "TrackState",
    "run_tracking",
    "signed_angle",
    "speed_schedule",
    "turning_update",
]

log = logging.getLogger(__name__)


def signed_angle(u, v) -> float:
    """Angle in (-pi, pi] rotating ``u`` onto ``v``."""
    ang = float(np.arctan2(u[0] * v[1] - u[1] * v[0], u[0] * v[0] + u[1] * v[1]))
    return np.pi if ang == -np.pi else ang


def turning_update(theta_prev: float, T, p, theta_max: float) -> float:
    """Turn from heading ``p`` toward ``T`` by at most ``theta_max``.

    A zero pointing vector leaves the heading unchanged.
    """
    if theta_max < 0:
        raise ValueError("theta_max must be non-negative")
    T = np.asarray(T, dtype=float)
    if not np.any(T):
        return theta_prev
    ang = signed_angle(p, T)
    return theta_prev + np.sign(ang) * min(theta_max, abs(ang))


@dataclass(frozen=True)
class SpeedParams:
    """Speed law ``clamp(gain * (dist - d_comfort), h_min, h_max)``."""

    d_comfort: float = 6.0
    gain: float = 0.5
    h_min: float = -0.2
    h_max: float = 0.8

    def __post_init__(self):
        if not self.h_min < 0 < self.h_max:
            raise ValueError("need h_min < 0 < h_max")

    @classmethod
    def for_body(cls, a: float) -> SpeedParams:
        return cls(d_comfort=3.0 * a, gain=0.5, h_min=-0.1 * a, h_max=0.4 * a)


def speed_schedule(dist: float, params: SpeedParams = SpeedParams()) -> float:
    """Forward speed for the current estimated distance (negative swims backwards)."""
    if dist < 0:
        raise ValueError("distance must be non-negative")
    return float(np.clip(params.gain * (dist - params.d_comfort), params.h_min, params.h_max))


@dataclass(frozen=True)
class LeaderPath:
    """Leader trajectory sampled on a uniform macro grid with ``substeps`` sub-times per interval.

    ``kind="line"``: straight swim from ``start`` at angle ``angle`` with
    ``speed`` per unit time.  ``kind="circle"``: clockwise swim on the circle
    of ``radius`` whose top point is ``start``.
    """

    kind: str = "line"
    start: tuple = (6.0, 1.5)
    angle: float = 0.0
    speed: float = 0.3
    radius: float = 10.0
    n_steps: int = 40
    dt: float = 1.0
    substeps: int = 5

    def __post_init__(self):
        if self.kind not in ("line", "circle"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.substeps < 1 or self.n_steps < 1 or self.dt <= 0:
            raise ValueError("need n_steps >= 1, substeps >= 1 and dt > 0")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def subtimes(self, n: int) -> np.ndarray:
        """Sub-grid ``s_1 < ... < s_M`` in ``(t_{n-1}, t_n]``."""
        return self.dt * (n - 1 + np.arange(1, self.substeps + 1) / self.substeps)

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.asarray(self.start, dtype=float)
        if self.kind == "line":
            d = np.array([np.cos(self.angle), np.sin(self.angle)])
            return s + (self.speed * t)[..., None] * d
        center = s - np.array([0.0, self.radius])
        phi = np.pi / 2 - self.speed * t / self.radius
        return center + self.radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    def heading(self, t, h: float | None = None) -> float:
        """Heading angle from the backward difference quotient over ``h``."""
        h = self.dt / self.substeps if h is None else h
        q = (self.position(t) - self.position(t - h)) / h
        return float(np.arctan2(q[1], q[0]))


@dataclass
class TrackState:
    X: np.ndarray
    theta: float
    Y_hat_history: list = field(default_factory=list)
    n: int = 0

    @property
    def p(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta)])


@dataclass
class TrackResult:
    """Per-step records of one closed-loop run."""

    leader: np.ndarray  # (n+1, 2) leader organ centre at t_n
    leader_heading: np.ndarray
    follower: np.ndarray  # (n+1, 2)
    follower_heading: np.ndarray
    estimates: np.ndarray  # (n, 2), nan on failure
    errors: np.ndarray  # (n,) |Y_hat - leader at the matched sub-time|
    speeds: np.ndarray
    collided: bool = False
    separated: bool = False
    failures: int = 0
    message: str = ""

    @property
    def mean_error(self) -> float:
        e = self.errors[np.isfinite(self.errors)]
        return float(e.mean()) if e.size else float("nan")

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.leader - self.follower, axis=1)


def run_tracking(follower: FishSpec, leader: FishSpec, path: LeaderPath, sigma0: float = 0.0,
                 seed=None, theta_max: float = 0.1, speed: SpeedParams | None = None,
                 n_panels: int | None = None, grid_res: float = 0.2, grid_half: float = 10.0,
                 min_gap: float = 0.1, separation_factor: float = 5.0) -> TrackResult:
    """Simulate the follower pursuing a leader that swims along ``path``.

    ``leader`` supplies the body, skin and organ; its pose is overwritten
    by the path.  Collisions (bodies closer than ``min_gap``) and
    separation beyond ``separation_factor`` times the initial distance stop
    the run early and are flagged in the result.
    """
    n_panels = default_panels() if n_panels is None else n_panels
    speed = speed or SpeedParams.for_body(follower.a)
    rng = np.random.default_rng(seed)
    M = path.substeps

    def leader_at(t):
        return leader.moved(center=path.position(t), heading=path.heading(t))

    state = TrackState(X=np.asarray(follower.center, dtype=float), theta=float(follower.heading))
    lead_pts = [path.position(0.0)]
    lead_head = [path.heading(0.0)]
    fol_pts = [state.X.copy()]
    fol_head = [state.theta]
    est, errs, speeds = [], [], []
    d0 = float(np.linalg.norm(lead_pts[0] - state.X))
    result_flags = {"collided": False, "separated": False, "message": ""}
    failures = 0

    for n in range(1, path.n_steps + 1):
        fish1 = follower.moved(center=state.X, heading=state.theta)
        rec = place_receptors(fish1, n_panels=n_panels)
        cols, lead_sub = [], []
        try:
            for s in path.subtimes(n):
                lf = leader_at(s)
                scene = Scene((fish1, lf))
                scene.validate(gap=min_gap)
                sol = solve_two_fish(scene, active=1, n_panels=n_panels, validate=False)
                cols.append(np.real(rec.sample(conspecific_field(sol, 0))))
                lead_sub.append(lf.organ_center())
        except ValueError as exc:
            result_flags.update(collided=True, message=f"step {n}: {exc}")
            log.info("collision at step %d", n)
            break
        clean = np.column_stack(cols)
        sig = noise_sigma(clean, sigma0)
        data = clean + rng.normal(0.0, 1.0, size=clean.shape) * sig
        msr = MSRMatrix(data, np.repeat(rec.points[None], M, axis=0), clean, sigma0, sig)

        c = state.X
        grid = make_search_grid((c[0] - grid_half, c[0] + grid_half, c[1] - grid_half, c[1] + grid_half),
                                grid_res, bodies=[_Inflated(fish1, grid_res)])
        y_hat = None
        try:
            e, _ = music_localize(msr, grid)
            on_edge = np.any(np.abs(e.z_node - c) >= grid_half - 1e-9)
            if np.isfinite(e.localizer_peak) and not on_edge:
                y_hat = e.z_hat
                lead_field(y_hat, rec.points)  # raises if on a receptor
        except ValueError:
            y_hat = None

        p_prev = state.p
        if y_hat is None:
            failures += 1
            h_n = speeds[-1] if speeds else 0.0
            est.append(np.full(2, np.nan))
            errs.append(np.nan)
        else:
            T = y_hat - state.X
            h_n = speed_schedule(float(np.linalg.norm(T)), speed)
            state.theta = turning_update(state.theta, T, p_prev, theta_max)
            est.append(y_hat)
            errs.append(float(np.min(np.linalg.norm(np.asarray(lead_sub) - y_hat, axis=1))))
        state.X = state.X + h_n * p_prev
        state.n = n
        state.Y_hat_history.append(est[-1])
        speeds.append(h_n)
        lead_pts.append(path.position(path.times[n]))
        lead_head.append(path.heading(path.times[n]))
        fol_pts.append(state.X.copy())
        fol_head.append(state.theta)

        lf = leader_at(path.times[n])
        try:
            Scene((follower.moved(center=state.X, heading=state.theta), lf)).validate(gap=min_gap)
        except ValueError as exc:
            result_flags.update(collided=True, message=f"step {n}: {exc}")
            break
        if np.linalg.norm(lead_pts[-1] - state.X) > separation_factor * d0:
            result_flags.update(separated=True, message=f"step {n}: separation")
            break

    return TrackResult(
        leader=np.array(lead_pts),
        leader_heading=np.array(lead_head),
        follower=np.array(fol_pts),
        follower_heading=np.array(fol_head),
        estimates=np.array(est).reshape(-1, 2),
        errors=np.array(errs),
        speeds=np.array(speeds),
        failures=failures,
        **result_flags,
    )


@dataclass(frozen=True)
class _Inflated:
    fish: FishSpec
    margin: float

    def contains(self, points):
        return self.fish.contains(points, margin=self.margin)
