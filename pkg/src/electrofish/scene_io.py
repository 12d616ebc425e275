"""Scene description files and CSV artifacts.

A scene file is JSON::

    {"fish": [{"a": 2.0, "b": 0.3, "center": [0, 0], "heading": 0.0, "xi": 0.1,
               "n_receptors": 32, "eod": {"kind": "wave", "omega": 1.0}}],
     "target": {"center": [0, 6.3], "radius": 0.2, "sigma_D": 2.0, "eps_D": 1.0},
     "medium": {"sigma_w": 1.0, "eps_w": 0.0}}

Optional fish keys: ``organ`` (``points`` in the body frame, ``strengths``)
and pulse parameters ``eta``/``shift`` inside ``eod``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .forward import ForwardSolution, Scene
from .geometry import ElectricOrgan, EodSignal, FishSpec, MediumParams, SearchGrid, TargetSpec

__all__ = [
    "field_on_grid",
    "fmt",
    "load_scene",
    "save_scene",
    "scene_from_dict",
    "scene_to_dict",
    "write_field_csv",
    "write_grid_csv",
    "write_rows_csv",
]

_FISH_KEYS = {"a", "b", "center", "heading", "xi", "n_receptors", "eod", "organ"}


def fmt(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def _fish_from_dict(d: dict) -> FishSpec:
    unknown = set(d) - _FISH_KEYS
    if unknown:
        raise ValueError(f"unknown fish keys: {sorted(unknown)}")
    kw = {k: d[k] for k in ("a", "b", "heading", "xi", "n_receptors") if k in d}
    if "center" in d:
        kw["center"] = tuple(d["center"])
    if "eod" in d:
        kw["eod"] = EodSignal(**d["eod"])
    if "organ" in d:
        o = d["organ"]
        kw["organ"] = ElectricOrgan(points=tuple(map(tuple, o["points"])), strengths=tuple(o["strengths"]))
    return FishSpec(**kw)


def _fish_to_dict(f: FishSpec) -> dict:
    eod = {"kind": f.eod.kind}
    if f.eod.kind == "wave":
        eod["omega"] = f.eod.omega
    else:
        eod.update(eta=f.eod.eta, shift=f.eod.shift)
    return {
        "a": f.a, "b": f.b, "center": list(f.center), "heading": f.heading, "xi": f.xi,
        "n_receptors": f.n_receptors, "eod": eod,
        "organ": {"points": [list(p) for p in f.organ.points],
                  "strengths": [float(np.real(s)) for s in f.organ.strengths]},
    }


def scene_from_dict(d: dict) -> Scene:
    """Build a scene from a parsed scene file; raises ``ValueError`` on bad content."""
    try:
        fish = tuple(_fish_from_dict(f) for f in d["fish"])
        target = None
        if d.get("target") is not None:
            t = dict(d["target"])
            t["center"] = tuple(t["center"])
            target = TargetSpec(**t)
        medium = MediumParams(**d.get("medium", {}))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scene: {exc}") from exc
    return Scene(fish=fish, target=target, medium=medium)


def scene_to_dict(scene: Scene) -> dict:
    out = {"fish": [_fish_to_dict(f) for f in scene.fish],
           "medium": {"sigma_w": scene.medium.sigma_w, "eps_w": scene.medium.eps_w}}
    if scene.target is not None:
        t = scene.target
        out["target"] = {"center": list(t.center), "radius": t.radius,
                         "sigma_D": t.sigma_D, "eps_D": t.eps_D}
    return out


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n")


def write_rows_csv(path, header, rows) -> None:
    """Write rows, formatting floats with :func:`fmt` so output is reproducible."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_grid_csv(path, grid: SearchGrid, values, name: str = "value") -> None:
    """One row per lattice node: ``x, y, excluded, value``."""
    pts = grid.points
    vals = np.asarray(values).ravel()
    exc = grid.excluded.ravel()
    write_rows_csv(path, ["x", "y", "excluded", name],
                   ((float(p[0]), float(p[1]), int(e), float(v)) for p, e, v in zip(pts, exc, vals)))


def field_on_grid(solution: ForwardSolution, grid: SearchGrid, bodies=()) -> np.ndarray:
    """Potential at the grid nodes outside ``bodies``; NaN inside."""
    pts = grid.points
    inside = np.zeros(len(pts), dtype=bool)
    for b in bodies:
        inside |= b.contains(pts, margin=1e-3)
    out = np.full(len(pts), np.nan, dtype=complex)
    out[~inside] = solution.potential(pts[~inside])
    return out


def write_field_csv(path, grid: SearchGrid, values) -> None:
    """Field snapshot with real and imaginary parts."""
    pts = grid.points
    vals = np.asarray(values, dtype=complex).ravel()
    write_rows_csv(path, ["x", "y", "re_u", "im_u"],
                   ((float(p[0]), float(p[1]), float(v.real), float(v.imag)) for p, v in zip(pts, vals)))
