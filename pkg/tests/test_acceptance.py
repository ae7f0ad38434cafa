"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run under pytest (the lines appear in the terminal summary) or directly
with ``python tests/test_acceptance.py``.
"""
import filecmp
import math
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import qmc

sys.path.insert(0, str(Path(__file__).parent))

from drlogcon._quad import piecewise_integral  # noqa: E402
from drlogcon.cli import main as cli_main  # noqa: E402
from drlogcon.convexreg import convex_lse  # noqa: E402
from drlogcon.data import default_grid  # noqa: E402
from drlogcon.inference import (default_bandwidth, default_pivot_table, estimate_chi,  # noqa: E402
                                simulate_pivots)
from drlogcon.isotonic import pava  # noqa: E402
from drlogcon.logconcave import WeightedAtoms, cdf, density, logconcave_mle  # noqa: E402
from drlogcon.nuisance import true_propensity  # noqa: E402
from drlogcon.onestep import (crossfit_cdf, estimate_density, estimate_density_crossfit,  # noqa: E402
                              make_folds, onestep_cdf)
from drlogcon.sim import (CONTRAST_POINTS, SUPPORTS, case_factory, case_nuisances,  # noqa: E402
                          draw_dgp, ir4, run_coverage_experiment, run_l1_experiment,
                          true_density)
from oracles import (convex_projection, is_concave, lc_objective,  # noqa: E402
                     monotone_projection)

RESULTS: dict = {}
THREADS = int(os.environ.get("DRLOGCON_THREADS", "1"))


def record(num, ok, detail):
    RESULTS[num] = f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}"
    print(RESULTS[num])
    return ok


def fit_d1(f, g):
    """Wasserstein-1 distance between two fitted log-concave distributions."""
    lo = min(f.support[0], g.support[0])
    hi = max(f.support[1], g.support[1])
    breaks = np.concatenate(([lo, hi], f.knot_locations, g.knot_locations))
    return piecewise_integral(lambda s: np.abs(cdf(f, s) - cdf(g, s)), breaks, atol=1e-9)


# ---------------------------------------------------------------------------
# 1. kernel-oracle equivalence


def test_criterion_1_kernel_oracles():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    pava_err = conv_err = 0.0
    for _ in range(500):
        m = int(rng.integers(1, 11))
        y = rng.normal(size=m) * rng.choice([0.01, 1.0, 100.0])
        pava_err = max(pava_err, np.max(np.abs(pava(y) - monotone_projection(y))))
        m = int(rng.integers(3, 11))
        x = np.sort(rng.uniform(0, 1, size=m))
        while np.any(np.diff(x) < 1e-3):
            x = np.sort(rng.uniform(0, 1, size=m))
        y = rng.normal(size=m) + rng.choice([0.0, 5.0]) * (x - 0.5) ** 2
        conv_err = max(conv_err, np.max(np.abs(convex_lse(x, y).fitted - convex_projection(x, y))))

    beaten = 0
    worst_gain = -math.inf
    for _ in range(200):
        m = int(rng.integers(2, 7))
        t = np.sort(rng.uniform(-3, 3, size=m))
        while np.any(np.diff(t) < 1e-3):
            t = np.sort(rng.uniform(-3, 3, size=m))
        w = rng.dirichlet(np.ones(m))
        w = np.maximum(w, 1e-6)
        w /= w.sum()
        fit = logconcave_mle(WeightedAtoms(t, w))
        base = lc_objective(t, w, fit.phi)
        tried = 0
        while tried < 1000:
            k = int(rng.integers(1, 4))
            eta = np.min(rng.normal(size=k)[None, :] + rng.normal(size=k)[None, :] * t[:, None],
                         axis=1)
            cand = fit.phi + rng.choice([1e-3, -1e-3, 1e-1]) * eta
            if not is_concave(t, cand, 1e-12):
                continue
            tried += 1
            worst_gain = max(worst_gain, lc_objective(t, w, cand) - base)
        beaten += 1

    uni = logconcave_mle(WeightedAtoms(np.array([0.0, 1.0]), np.array([0.5, 0.5])))
    s = np.linspace(0.0, 1.0, 1001)
    uni_err = float(np.max(np.abs(density(uni, s) - 1.0)))
    elapsed = time.perf_counter() - start
    ok = (pava_err < 1e-7 and conv_err < 1e-7 and worst_gain <= 1e-12 and uni_err < 1e-6
          and elapsed < 120)
    assert record(1, ok, f"pava err {pava_err:.1e}, convex err {conv_err:.1e}, "
                         f"max perturbation gain {worst_gain:.1e} over {beaten}x1000, "
                         f"uniform sup err {uni_err:.1e}, {elapsed:.0f} s")


# ---------------------------------------------------------------------------
# 2. closed-form truth


def test_criterion_2_truth():
    checks = [ir4(2.0) == 2 / 3]
    details = [f"ir4(2)={ir4(2.0)!r}"]
    for arm in (0, 1):
        lo, hi = SUPPORTS[arm]
        pts = list(lo + 2.0 * np.arange(1, 4))
        mom = [integrate.quad(lambda y, j=j: y ** j * true_density(arm, y), lo, hi, points=pts,
                              limit=200, epsabs=1e-13, epsrel=1e-13)[0] for j in range(3)]
        var = mom[2] - mom[1] ** 2
        checks += [abs(mom[0] - 1) < 1e-6, abs(mom[1] - 6) < 1e-6, abs(var - 16 / 9) < 1e-5]
        details.append(f"arm {arm}: mass {mom[0]:.9f} mean {mom[1]:.9f} var {var:.9f}")
    assert record(2, all(checks), "; ".join(details))


# ---------------------------------------------------------------------------
# 3 and 4. consistency and double robustness (shared runs)


@pytest.fixture(scope="module")
def l1_rows():
    return run_l1_experiment((500, 1000, 2500), reps=200, cases=(1, 2, 3), arm=1, seed=2024,
                             threads=THREADS)


def _l1_means(rows, method, case):
    return [r["mean_l1"] for r in rows if r["method"] == method and r["case"] == case]


def test_criterion_3_consistency(l1_rows):
    one = _l1_means(l1_rows, "onestep", 1)
    naive = _l1_means(l1_rows, "naive", "")
    failures = sum(r["failures"] for r in l1_rows)
    ok_one = one[0] > one[1] > one[2] and one[2] < 0.15
    ok_naive = min(naive) > 0.05 and naive[0] <= naive[1] <= naive[2]
    assert record(3, ok_one and ok_naive and failures == 0,
                  f"case 1 mean L1 {', '.join(f'{v:.4f}' for v in one)}; naive "
                  f"{', '.join(f'{v:.4f}' for v in naive)} at n=500,1000,2500; "
                  f"{failures} failed replications")


def test_criterion_4_double_robustness(l1_rows):
    at = {c: _l1_means(l1_rows, "onestep", c)[2] for c in (1, 2, 3)}
    rel = {c: abs(at[c] - at[1]) / at[1] for c in (2, 3)}
    ok = all(v < 0.25 for v in rel.values())
    assert record(4, ok, "n=2500 mean L1 " + ", ".join(f"case {c} {v:.4f}" for c, v in at.items())
                  + f"; relative gaps {rel[2]:.1%}, {rel[3]:.1%}")


# ---------------------------------------------------------------------------
# 5. interval calibration


def test_criterion_5_calibration():
    pivots = default_pivot_table()
    pts = (5.5, 6.0, 6.5, 7.0)
    by_case = {c: run_coverage_experiment(2500, 300, c, 1, "density", pts, 0.05, seed=5,
                                          pivots=pivots, threads=THREADS) for c in (1, 2, 3)}
    cov1 = [r["coverage"] for r in by_case[1]]
    ok_pts = all(0.90 <= c <= 0.995 for c in cov1)
    avg_cov = {c: float(np.mean([r["coverage"] for r in rows])) for c, rows in by_case.items()}
    avg_w = {c: float(np.mean([r["mean_width"] for r in rows])) for c, rows in by_case.items()}
    stable = all(abs(avg_cov[c] - avg_cov[1]) <= 0.05 for c in (2, 3))
    widths = all(abs(avg_w[c] - avg_w[1]) / avg_w[1] < 0.10 for c in (2, 3))
    contrast = {}
    for kind in ("difference", "log_ratio"):
        rows = run_coverage_experiment(1000, 300, 1, 1, kind, CONTRAST_POINTS, 0.05, seed=6,
                                       pivots=pivots, threads=THREADS)
        contrast[kind] = float(np.nanmean([r["coverage"] for r in rows]))
    ok_contrast = all(v >= 0.95 for v in contrast.values())
    failures = sum(r["failures"] for rows in by_case.values() for r in rows)
    assert record(5, ok_pts and stable and widths and ok_contrast,
                  "case 1 coverage " + ", ".join(f"{c:.3f}" for c in cov1)
                  + "; average coverage by case "
                  + ", ".join(f"{v:.3f}" for v in avg_cov.values())
                  + "; average width by case " + ", ".join(f"{v:.4f}" for v in avg_w.values())
                  + f"; difference {contrast['difference']:.3f}, "
                    f"log-ratio {contrast['log_ratio']:.3f}; {failures} failed points")


# ---------------------------------------------------------------------------
# 6. bandwidth robustness of chi


def chi_oracle(s0=6.0, m=20):
    """``E[eta_1(s0 | X) / pi_1(X)]`` by scrambled Sobol integration over the unit cube.

    Given ``A = 1`` and ``X``, ``Y`` is uniform on ``[4, 4 + 2 S]`` with
    ``S = sum(X)``, so the conditional density at ``s0`` is ``1 / (2 S)``
    when ``4 + 2 S >= s0``.
    """
    x = qmc.Sobol(4, scramble=True, seed=0).random_base2(m)
    s = x.sum(axis=1)
    eta = np.where(4 + 2 * s >= s0, 1.0 / (2 * s), 0.0)
    return float(np.mean(eta / true_propensity(x)))


def test_criterion_6_chi_bandwidth():
    oracle = chi_oracle()
    bs = (1 / 25, 1 / 10, 1 / 5)
    reps = 20
    vals = {b: [] for b in bs}
    for r in range(reps):
        smp = draw_dgp(4000, (6, r)).sample
        nuis = case_nuisances(smp, 1, 1)
        for b in bs:
            vals[b].append(estimate_chi(smp, 1, nuis, 6.0, default_bandwidth(smp.n, b)).value)
    means = {b: float(np.mean(v)) for b, v in vals.items()}
    spread = (max(means.values()) - min(means.values())) / max(means.values())
    near = all(abs(v - oracle) / oracle < 0.20 for v in means.values())
    assert record(6, spread < 0.20 and near,
                  f"oracle chi {oracle:.4f}; mean over {reps} data sets "
                  + ", ".join(f"b=1/{round(1 / b)}: {v:.4f}" for b, v in means.items())
                  + f"; spread {spread:.1%}")


# ---------------------------------------------------------------------------
# 7. cross-fitting equivalence


def test_criterion_7_crossfit():
    smp = draw_dgp(2500, 7).sample
    fixed = case_nuisances(smp, 1, 1)
    grid = default_grid(smp, 1)
    pooled = onestep_cdf(smp, 1, fixed, grid)
    exact = all(np.array_equal(crossfit_cdf(smp, 1, lambda tr: fixed, make_folds(smp.n, k, k),
                                            grid).values, pooled.values) for k in (2, 5, 10))
    d1 = []
    for r in range(50):
        s = draw_dgp(2500, (7, r)).sample
        a = estimate_density(s, 1, case_nuisances(s, 1, 1))
        b = estimate_density_crossfit(s, 1, case_factory(1, 1), 5, seed=r)
        d1.append(fit_d1(a, b))
    mean_d1 = float(np.mean(d1))
    assert record(7, exact and mean_d1 < 0.05,
                  f"fold-independent factory bitwise equal: {exact}; "
                  f"mean d1(cross-fit, pooled) over 50 data sets {mean_d1:.4f}")


# ---------------------------------------------------------------------------
# 8. pivot self-consistency


def test_criterion_8_pivots():
    tabs = [simulate_pivots(2, 10_000, 4000, seed, THREADS) for seed in (101, 202)]
    c = [t.c_alpha(0.05) for t in tabs]
    rel = abs(c[0] - c[1]) / max(c)
    med_ok = []
    for t in tabs:
        iqr = float(np.subtract(*np.percentile(t.draws0, [75, 25])))
        med_ok.append(abs(float(np.median(t.draws0))) <= 3 * iqr / math.sqrt(t.B))
    assert record(8, rel < 0.05 and all(med_ok),
                  f"c_0.05 {c[0]:.4f} vs {c[1]:.4f} ({rel:.1%}); medians "
                  + ", ".join(f"{np.median(t.draws0):+.4f}" for t in tabs))


# ---------------------------------------------------------------------------
# 9. determinism across thread counts


def _write_data(path):
    smp = draw_dgp(300, 9).sample
    lines = ["X1,X2,X3,X4,A,Y"]
    for xi, ai, yi in zip(smp.x.tolist(), smp.a.tolist(), smp.y.tolist()):
        lines.append(",".join(repr(v) for v in xi) + f",{ai},{yi!r}")
    path.write_text("\n".join(lines) + "\n")


COMMANDS = [
    ["quantiles", "--nsim", "400", "--B", "120", "--seed", "3", "--out", "piv.csv"],
    ["estimate", "--data", "d.csv", "--arm", "1", "--out", "fit1.json"],
    ["estimate", "--data", "d.csv", "--arm", "0", "--crossfit", "3", "--out", "fit0.json"],
    ["ci", "--data", "d.csv", "--s0", "6,6.5", "--pivots", "piv.csv", "--out", "ci.csv"],
    ["ci", "--data", "d.csv", "--s0", "6", "--kind", "logratio", "--crossfit", "3",
     "--pivots", "piv.csv", "--out", "ratio.csv"],
    ["bands-input", "--fit", "fit1.json", "--n", "200", "--seed", "4", "--out", "bands.csv"],
    ["simulate", "--experiment", "l1", "--n-list", "200", "--reps", "3", "--out-dir", "l1"],
    ["simulate", "--experiment", "coverage", "--n-list", "300", "--reps", "3", "--points", "6",
     "--pivots", "piv.csv", "--out-dir", "cov"],
]


def test_criterion_9_determinism(tmp_path, monkeypatch):
    dirs = []
    codes = []
    for threads in ("1", "8"):
        d = tmp_path / f"threads{threads}"
        d.mkdir()
        _write_data(d / "d.csv")
        monkeypatch.chdir(d)
        codes += [cli_main(cmd + ["--threads", threads]) for cmd in COMMANDS]
        dirs.append(d)
    files = sorted(str(p.relative_to(dirs[0])) for p in dirs[0].rglob("*") if p.is_file())
    other = sorted(str(p.relative_to(dirs[1])) for p in dirs[1].rglob("*") if p.is_file())
    same = files == other and all(filecmp.cmp(dirs[0] / f, dirs[1] / f, shallow=False)
                                  for f in files)
    monkeypatch.chdir(tmp_path)
    shutil.rmtree(dirs[1])
    assert record(9, same and not any(codes),
                  f"{len(COMMANDS)} commands, exit codes {sorted(set(codes))}, "
                  f"{len(files)} output files byte-identical for --threads 1 and 8: {same}")


if __name__ == "__main__":
    # the conftest summary hook prints one line per criterion
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
