"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (run pytest with -s or check the
captured output). Criteria 3, 7 and 8 share the session-scoped synthetic
pipeline fixture; its wall time counts toward criterion 7's budget.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from rzones import cfe
from rzones import field as fld
from rzones import fpca as fp
from rzones import response as rsp
from rzones import zones as zn
from rzones.cli import RunConfig, run_pipeline, site_seed, write_demo_config
from rzones.surrogate import DenseNet, gradient_check

from conftest import ToyResponseRegressor, make_toy_problem, toy_problem_field


def report(criterion, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion}: {tag} {detail}".rstrip())
    assert ok, f"{criterion} failed: {detail}"


def test_c1_gradient_soundness():
    start = time.time()
    rng = np.random.default_rng(100)
    cases = [
        ([16, 8, 4], "tanh"),
        ([30, 20, 10, 5], "tanh"),
        ([12, 9], "identity"),
        ([25, 16, 25], "sigmoid"),
        ([40, 6, 6, 3], "sigmoid"),
        ([18, 12, 6], "identity"),
    ]
    worst = 0.0
    for i, (layers, act) in enumerate(cases):
        net = DenseNet(layer_sizes=layers, activation=act, seed=200 + i)
        x = rng.normal(size=layers[0])
        y = rng.normal(size=layers[-1])
        worst = max(worst, gradient_check(net, x, y, seed=i))
    elapsed = time.time() - start
    report("1 gradient-soundness",
           worst < 1e-4 and elapsed < 10.0,
           f"max_rel_err={worst:.2e} over {len(cases)} architectures, {elapsed:.1f}s")


def test_c2_fpca_oracle_equivalence():
    start = time.time()
    curves = np.random.default_rng(7).normal(size=(10, 16))
    model = fp.fit(curves, 1.0, 16)

    # dense brute-force oracle: explicit covariance, general eigensolver
    mean = curves.mean(axis=0)
    cov = np.zeros((16, 16))
    for a in range(16):
        for b in range(16):
            cov[a, b] = sum((curves[i, a] - mean[a]) * (curves[i, b] - mean[b])
                            for i in range(10)) / 9.0
    vals, vecs = np.linalg.eig(cov)
    order = np.argsort(vals.real)[::-1]
    vals = vals.real[order]
    eig_ok = bool(np.allclose(model.eigenvalues, vals[:model.k], atol=1e-8))

    score_ok = True
    for row in curves:
        got = fp.transform(model, row).scores
        expect = [float(np.dot(row - mean, model.components[k]))
                  for k in range(model.k)]
        score_ok &= bool(np.allclose(got, expect, atol=1e-8))

    parseval_ok = True
    for i in range(10):
        for j in range(i + 1, 10):
            d = fp.distance(model, curves[i], curves[j])
            l2 = float(np.sqrt(np.sum((curves[i] - curves[j]) ** 2)))
            parseval_ok &= abs(d - l2) < 1e-6

    elapsed = time.time() - start
    report("2 fpca-oracle-equivalence",
           eig_ok and score_ok and parseval_ok and elapsed < 5.0,
           f"eig={eig_ok} scores={score_ok} parseval={parseval_ok}, {elapsed:.1f}s")


def test_c3_variance_rule(e2e):
    start = time.time()
    model = fp.fit(e2e["curves"], 0.995, 3)
    cum = float(model.explained_ratio.sum())
    elapsed = time.time() - start
    report("3 variance-rule",
           cum >= 0.995 and model.k <= 3 and elapsed < 5.0,
           f"K={model.k} cumulative={cum:.5f}, {elapsed:.1f}s")


def test_c4_fuzzy_cmeans_properties():
    start = time.time()
    rng = np.random.default_rng(11)
    sd = 0.3
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [3.0, 6.0]])  # >= 10x blob sd apart
    pts, labels = [], []
    for k, ctr in enumerate(centers):
        pts.append(rng.normal(loc=ctr, scale=sd, size=(60, 2)))
        labels += [k] * 60
    x = np.vstack(pts)

    # membership normalization is asserted inside cluster() at every iteration
    model = zn.cluster(x, 3, 2.0, seed=5)
    rows_ok = bool(np.allclose(model.memberships.sum(axis=1), 1.0, atol=1e-9))
    hist = model.objective_history
    mono_ok = bool(np.all(np.diff(hist) <= 1e-9 * np.maximum(1.0, np.abs(hist[:-1]))))
    ari = adjusted_rand_score(labels, model.assignments)
    elapsed = time.time() - start
    report("4 fuzzy-cmeans-properties",
           rows_ok and mono_ok and ari == 1.0 and elapsed < 10.0,
           f"rows={rows_ok} monotone={mono_ok} ARI={ari:.3f}, {elapsed:.1f}s")


def test_c5_curve_pipeline_exactness():
    start = time.time()
    reg = ToyResponseRegressor()
    field = toy_problem_field(seed=42)
    grid = rsp.NGrid(0.0, 150.0, 51)
    curve = rsp.site_curve(reg, field, (2, 2), grid)
    swept = rsp.sweep_patch(reg, field.data, grid)
    exact = bool(np.array_equal(curve.values, swept[2, 2]))

    rng = np.random.default_rng(12)
    align_ok = True
    for _ in range(1000):
        raw = rsp.ResponseCurve(None, rng.normal(size=rng.integers(2, 40)))
        once = rsp.align(raw)
        twice = rsp.align(once)
        align_ok &= once.values.min() == 0.0
        align_ok &= bool(np.array_equal(once.values, twice.values))
    elapsed = time.time() - start
    report("5 curve-pipeline-exactness",
           exact and align_ok and elapsed < 5.0,
           f"single-patch-exact={exact} align-1000={align_ok}, {elapsed:.1f}s")


def test_c6_cfe_exhaustive_oracle(toy_stack):
    start = time.time()
    n_sites, needed = 50, 45
    matches = 0
    for k in range(n_sites):
        prob = make_toy_problem(toy_stack, seed=1000 + k)
        lo, hi = prob.bounds[0]
        gvals = np.linspace(lo, hi, 1000)
        best = (0, 0, 0.0)  # identity candidate
        for v in gvals:
            cand = cfe.Candidate(np.array([True]), np.array([v]))
            g1 = cfe.eval_g1(prob, cfe.apply_candidate(prob, cand))
            t = (g1, 1, cfe.eval_g3(prob, cand))
            if t < best:
                best = t
        sel = cfe.explain_site(prob, pop_size=50, generations=100,
                               seed=site_seed(9, 2 + k, 2))
        got = sel.objectives
        g3_tol = (gvals[1] - gvals[0]) / (hi - lo) / 2.0  # one grid step
        if got[0] == best[0] and got[1] == best[1] and got[2] <= best[2] + g3_tol:
            matches += 1
    elapsed = time.time() - start
    report("6 cfe-exhaustive-oracle",
           matches >= needed and elapsed < 180.0,
           f"lexicographic match {matches}/{n_sites}, {elapsed:.0f}s")


def test_c7_end_to_end_synthetic_recovery(e2e):
    spec = e2e["spec"]
    yld = e2e["yield"]
    yrange = yld.values.max() - yld.values.min()
    noise_ok = spec.noise_sd <= 0.05 * yrange

    truth = np.array([e2e["labels"][cv.site] for cv in e2e["curves"]])
    ari = adjusted_rand_score(truth, e2e["zones"].assignments)

    rel = cfe.global_relevance(e2e["results"], e2e["field"].feature_names)
    slope_top, rates_ok = True, True
    details = []
    for z, entry in rel.zones.items():
        rates_ok &= entry["success_rate"] >= 0.5
        if entry["relevance"]:
            best = max(entry["relevance"].values())
            slope_top &= entry["relevance"]["S"] == best
        else:
            slope_top = False
        details.append(f"z{z}:rate={entry['success_rate']:.2f}")
    elapsed = e2e["times"]["total"]
    report("7 end-to-end-synthetic-recovery",
           noise_ok and ari >= 0.8 and slope_top and rates_ok and elapsed < 900.0,
           f"ARI={ari:.3f} slope-top={slope_top} {' '.join(details)}, {elapsed:.0f}s")


def test_c8_epsilon_threshold_contract(e2e):
    successes = [r for r in e2e["results"] if r.success]
    membership_ok = all(r.new_membership > 0.8 for r in successes)
    roundtrip = 0
    for r in successes:
        prob = e2e["problems"][r.site]
        if cfe.eval_g1(prob, cfe.apply_candidate(prob, r.candidate)) == -1:
            roundtrip += 1
    roundtrip_ok = roundtrip == len(successes)
    report("8 epsilon-threshold-contract",
           bool(successes) and membership_ok and roundtrip_ok,
           f"{len(successes)} successes, memberships>0.8={membership_ok}, "
           f"roundtrip {roundtrip}/{len(successes)}")


def test_c9_full_run_determinism(tmp_path):
    start = time.time()
    cfgpath = write_demo_config(tmp_path / "demo")
    first = run_pipeline(RunConfig.from_json(cfgpath))
    # second run through the CLI in a fresh process
    proc = subprocess.run(
        [sys.executable, "-m", "rzones.cli", "run", "--config", str(cfgpath)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    manifest_path = tmp_path / "demo" / "artifacts" / "manifest.json"
    second = json.loads(manifest_path.read_text())
    same = first["stages"] == second["stages"]
    n_files = sum(len(s["files"]) for s in first["stages"])
    elapsed = time.time() - start
    report("9 full-run-determinism", same,
           f"{n_files} artifact hashes identical across processes, {elapsed:.0f}s")
