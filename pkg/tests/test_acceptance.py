"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
Criteria 5 to 7 are Monte Carlo runs and take several minutes in total.
"""
import csv
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from test_potential import FINE, one_sided_limits  # noqa: E402
from test_sensing import dipole_prediction  # noqa: E402

from electrofish import cli  # noqa: E402
from electrofish import comm_music as cm  # noqa: E402
from electrofish import sensing as se  # noqa: E402
from electrofish.forward import Scene, solve_background_hatU1, solve_two_fish  # noqa: E402
from electrofish.geometry import (  # noqa: E402
    FishSpec,
    make_ellipse_mesh,
    make_search_grid,
    place_receptors,
)
from electrofish.potential import assemble_K, assemble_K_star, assemble_single_layer  # noqa: E402
from electrofish.signals import (  # noqa: E402
    JammingError,
    common_period,
    separate_pulse,
    separate_wave,
    synthesize_pulse,
    synthesize_wave,
)
from electrofish.geometry import EodSignal  # noqa: E402
from electrofish.tracker import SpeedParams  # noqa: E402

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)
        assert ok, detail
    return emit


def density(t, seed=3, degree=5):
    r = np.random.default_rng(seed)
    k = np.arange(degree + 1)
    return np.cos(np.outer(t, k)) @ r.normal(size=degree + 1) + np.sin(np.outer(t, k)) @ r.normal(size=degree + 1)


def test_criterion_1_jump_relations(report):
    n, worst, elapsed = 512, 0.0, 0.0
    for a, b in ((1.0, 1.0), (2.0, 0.3)):
        mesh = make_ellipse_mesh(a, b, n_panels=n)
        phi = density(mesh.t)
        start = time.perf_counter()
        S, Ks, K = (assemble_single_layer(mesh) @ phi, assemble_K_star(mesh) @ phi, assemble_K(mesh) @ phi)
        elapsed += time.perf_counter() - start
        fine = make_ellipse_mesh(a, b, n_panels=FINE)
        idx = np.arange(0, n, 64)
        ext = one_sided_limits(mesh, fine, density(fine.t), idx, +1)
        inn = one_sided_limits(mesh, fine, density(fine.t), idx, -1)
        p = phi[idx]
        residuals = [
            ext["S"] - inn["S"], ext["S"] - S[idx], inn["S"] - S[idx],
            ext["dS"] - inn["dS"] - p, ext["dS"] - (0.5 * p + Ks[idx]), inn["dS"] - (-0.5 * p + Ks[idx]),
            inn["D"] - ext["D"] - p, ext["D"] - (-0.5 * p + K[idx]), inn["D"] - (0.5 * p + K[idx]),
        ]
        worst = max(worst, max(np.max(np.abs(r)) for r in residuals))
    report(1, worst <= 1e-4 and elapsed < 5.0,
           f"max jump residual {worst:.2e} (tol 1e-4), assembly {elapsed:.2f} s (limit 5 s)")


def test_criterion_2_disk_polarization_tensor(report):
    mesh = make_ellipse_mesh(1.0, 1.0, n_panels=256)
    k = 2.0
    M = se.polarization_tensor((k + 1) / (2 * (k - 1)), mesh, "disk").M
    err = np.max(np.abs(M - 2 * np.pi / 3 * np.eye(2)))
    report(2, err <= 1e-4, f"|M - (2pi/3) I|_max = {err:.2e} (tol 1e-4)")


def test_criterion_3_forward_solver(report):
    scene = cli.default_comm_scene()
    res = max(max(solve_two_fish(scene, active=a, n_panels=512).residuals().values()) for a in (0, 1))
    u = {n: solve_two_fish(scene, active=1, n_panels=n).traces(0).u_plus for n in (64, 128, 256)}
    e1 = np.max(np.abs(u[64] - u[256][::4]))
    e2 = np.max(np.abs(u[128] - u[256][::2]))
    order = np.log2(e1 / e2)
    fish = FishSpec(center=(0.5, -1.0), heading=0.3)
    one = solve_two_fish(Scene((fish,)), active=0, n_panels=256)
    hat = solve_background_hatU1(fish, n_panels=256)
    x = np.array([[3.0, 1.0], [-2.0, 4.0], [0.0, 2.0]])
    match = max(np.max(np.abs(one.neumann(0) - hat.neumann(0))), np.max(np.abs(one.potential(x) - hat.potential(x))))
    ok = res <= 1e-6 and order >= 2 and match <= 1e-10
    report(3, ok, f"max residual {res:.2e} (tol 1e-6), observed order {order:.1f} (min 2), "
                  f"single-fish vs background {match:.1e} (tol 1e-10)")


def test_criterion_4_signal_separation(report):
    rng = np.random.default_rng(4)
    u1 = rng.normal(size=32) + 1j * rng.normal(size=32)
    u2 = rng.normal(size=32) + 1j * rng.normal(size=32)
    w1, w2 = 2.0, 3.0
    tr = synthesize_wave(u1, u2, w1, w2, common_period(w1, w2), 256, real=True)
    r1, r2 = separate_wave(tr, w1, w2)
    wave_err = max(np.max(np.abs(r1 - u1)) / np.max(np.abs(u1)), np.max(np.abs(r2 - u2)) / np.max(np.abs(u2)))
    try:
        separate_wave(synthesize_wave(u1, u2, w1, w1, 2 * np.pi, 64), w1, w1)
        refused = False
    except JammingError:
        refused = True
    p1, p2 = EodSignal("pulse", eta=2.0, shift=1.0), EodSignal("pulse", eta=2.0, shift=6.0)
    v1, v2 = rng.normal(size=32), rng.normal(size=32)
    q1, q2 = separate_pulse(synthesize_pulse(v1, v2, p1, p2, np.linspace(-1.0, 5.0, 601)), p1, p2)
    pulse_err = max(np.max(np.abs(q1 - v1)), np.max(np.abs(q2 - v2)))
    ok = wave_err <= 1e-10 and refused and pulse_err <= 1e-12
    report(4, ok, f"wave round trip {wave_err:.1e} (tol 1e-10), equal frequencies refused={refused}, "
                  f"pulse round trip {pulse_err:.1e}")


def comm_grid(scenes, res):
    f = scenes[0].fish[0]
    c = np.asarray(f.center)
    bodies = [cli._Margin(s.fish[0], res) for s in (scenes[0], scenes[-1])]
    return make_search_grid((c[0] - 6, c[0] + 6, c[1] - 6, c[1] + 6), res, bodies=bodies)


def test_criterion_5_conspecific_localization(report):
    start = time.perf_counter()
    scene = cli.default_comm_scene()
    h = 0.1
    scenes = cm.follower_track_scenes(scene, 150)
    clean = cm.build_msr(scenes, 0.0)
    z_eq, _ = cm.equivalent_dipole(clean, scene.fish[1].organ_center())
    grid = comm_grid(scenes, h)
    est0, _ = cm.music_localize(clean, grid)
    cell0 = np.max(np.abs(est0.z_hat - z_eq))
    errs = []
    for seed in range(10):
        msr = cm.build_msr(scenes, 0.1, seed=seed, clean=clean.clean)
        errs.append(np.linalg.norm(cm.music_localize(msr, grid)[0].z_hat - z_eq))
    med = float(np.median(errs))
    elapsed = time.perf_counter() - start
    ok = cell0 <= h + 1e-9 and med <= 0.3 and elapsed <= 300
    report(5, ok, f"equivalent dipole ({z_eq[0]:.3f}, {z_eq[1]:.3f}); noise-free offset {cell0:.3f} "
                  f"(one cell = {h}); noisy median error {med:.3f} (tol 0.3); runtime {elapsed:.0f} s (limit 300)")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_6_tracking(report, tmp_path):
    sigmas = ("0.01", "0.05", "0.2")
    d_comfort = SpeedParams.for_body(FishSpec().a).d_comfort
    lines, ok = [], True
    for kind in ("line", "circle"):
        out = tmp_path / kind
        code = cli.main(["track", "--path", kind, "--trials", "10", "--substeps", "5", "--theta-max", "0.1",
                         "--noise", *sigmas, "--panels", "128", "--out", str(out)])
        rows = read_rows(out / "summary.csv")
        coll = sum(int(r["collided"]) for r in rows)
        sep = sum(int(r["separated"]) for r in rows)
        means = [np.mean([float(r["mean_error"]) for r in rows if r["noise"] == repr(float(s))]) for s in sigmas]
        monotone = all(b >= a for a, b in zip(means, means[1:]))
        band = []
        for f in sorted(out.glob("trajectory_*.csv")):
            t = read_rows(f)[-1]
            d = np.hypot(float(t["leader_x"]) - float(t["follower_x"]), float(t["leader_y"]) - float(t["follower_y"]))
            band.append(0.5 * d_comfort <= d <= 2 * d_comfort)
        ok &= code == 0 and coll == 0 and sep == 0 and monotone
        lines.append(f"{kind}: collisions {coll}, separations {sep}, mean error by noise "
                     f"{', '.join(f'{m:.3f}' for m in means)}, final gap in comfort band {sum(band)}/{len(band)}")
    report(6, ok, "; ".join(lines))


def test_criterion_7_target_sensing(report):
    scene = cli.default_sense_scene()
    h, n = 0.2, 256
    f1 = scene.fish[0]
    freqs = se.default_frequencies(100, scene.target.eps_D, scene.medium)
    grid = make_search_grid((-10.0, 10.0, -10.0, 10.0), h, bodies=[cli._Margin(f1, h)])
    hatU1 = solve_background_hatU1(f1, n_panels=n)
    alone = Scene(scene.fish[:1], scene.target, scene.medium)
    clean = se.build_sfr(scene, freqs, n_panels=n).clean
    clean_alone = se.build_sfr(alone, freqs, n_panels=n).clean
    z = np.asarray(scene.target.center)
    hits, shifts = 0, []
    for seed in range(10):
        kw = dict(grid=grid, n_panels=n, hatU1=hatU1)
        a, _ = se.sense_target(scene, freqs, sfr=se.build_sfr(scene, freqs, 0.1, seed, n_panels=n, clean=clean), **kw)
        b, _ = se.sense_target(alone, freqs, sfr=se.build_sfr(alone, freqs, 0.1, seed, n_panels=n,
                                                               clean=clean_alone), **kw)
        hits += np.max(np.abs(a.z_hat - z)) <= h + 1e-9
        shifts.append(np.max(np.abs(a.z_hat - b.z_hat)))
    ok = hits >= 8 and max(shifts) <= h + 1e-9
    n_r = place_receptors(f1, n_panels=n).n
    report(7, ok, f"N_r={n_r}, N_f=100: {hits}/10 seeds within one cell (need 8); "
                  f"largest conspecific present/absent shift {max(shifts):.2f} (one cell = {h})")


def test_criterion_8_dipolar_expansion(report):
    fish = FishSpec()
    hatU1 = solve_background_hatU1(fish, n_panels=256)
    rec = place_receptors(fish, n_panels=256)
    errs = []
    for delta in (0.2, 0.1, 0.05):
        meas, pred = dipole_prediction(fish, hatU1, rec, (0.0, 4.0), delta, 2.0)
        errs.append(np.linalg.norm(meas - pred) / np.linalg.norm(pred))
    ratios = [errs[1] / errs[0], errs[2] / errs[1]]
    report(8, max(ratios) <= 0.7, "relative errors " + ", ".join(f"{e:.2e}" for e in errs)
           + "; halving ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (max 0.7)")


DETERMINISM = [
    ["jam-demo", "--grid-res", "0.5"],
    ["separate", "--noise", "0.05", "--seed", "7"],
    ["separate", "--pulse", "--noise", "0.05", "--seed", "7"],
    ["locate-fish", "--positions", "10", "--grid-res", "0.25", "--seed", "7"],
    ["track", "--trials", "2", "--steps", "3", "--substeps", "2", "--noise", "0.05", "0.2", "--seed", "7"],
    ["sense", "--nfreq", "10", "--grid-res", "0.5", "--seed", "7"],
]


def test_criterion_9_determinism(report, tmp_path):
    compared, mismatched = 0, []
    for i, args in enumerate(DETERMINISM):
        dirs = [tmp_path / f"{i}{tag}" for tag in "ab"]
        for d in dirs:
            assert cli.main([*args, "--panels", "128", "--out", str(d)]) == 0
        for f in sorted(dirs[0].glob("*.csv")):
            compared += 1
            other = dirs[1] / f.name
            if not other.exists() or other.read_bytes() != f.read_bytes():
                mismatched.append(f"{args[0]}/{f.name}")
    report(9, compared > 0 and not mismatched,
           f"{compared} CSV artifacts over {len(DETERMINISM)} scenarios, {len(mismatched)} differ {mismatched}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q", "-p", "no:cacheprovider"]))
