"""Shared fixtures: a fast analytic toy stack and the full synthetic pipeline."""

import time

import numpy as np
import pytest

from rzones import cfe
from rzones import field as fld
from rzones import fpca as fp
from rzones import response as rsp
from rzones import zones as zn
from rzones.cli import site_seed
from rzones.surrogate import DenseNet, PatchRegressor, TrainConfig, train


class ToyResponseRegressor(PatchRegressor):
    """Analytic per-cell response: base + amp * plateau * sigmoid(N), with the
    amplitude read from channel 1. Stands in for a trained network wherever the
    exact response is needed in closed form."""

    n_features = 2
    patch_size = 5

    def predict(self, cube):
        return self.predict_batch(np.asarray(cube, dtype=float)[None])[0]

    def predict_batch(self, cubes):
        cubes = np.asarray(cubes, dtype=float)
        return 10.0 + cubes[..., 1] * 50.0 / (1.0 + np.exp(-0.08 * (cubes[..., 0] - 75.0)))


def toy_problem_field(seed, amp_center=None):
    """5x5 two-channel field; the center cell's amplitude drives the curve."""
    rng = np.random.default_rng(seed)
    data = np.empty((5, 5, 2))
    data[:, :, 0] = rng.uniform(0.0, 150.0, (5, 5))
    data[:, :, 1] = rng.uniform(0.1, 0.9, (5, 5))
    if amp_center is not None:
        data[2, 2, 1] = amp_center
    return fld.FieldRaster.from_data(data, feature_names=("N", "amp"))


@pytest.fixture(scope="session")
def toy_stack():
    reg = ToyResponseRegressor()
    grid = rsp.NGrid(0.0, 150.0, 51)
    rng = np.random.default_rng(0)
    curves = []
    for i in range(60):
        amp = rng.uniform(0.15, 0.35) if i % 2 == 0 else rng.uniform(0.65, 0.85)
        f = toy_problem_field(seed=100 + i, amp_center=amp)
        curves.append(rsp.align(rsp.site_curve(reg, f, (2, 2), grid)))
    fmodel = fp.fit(curves, 0.995, 3)
    zmodel = zn.cluster([fp.transform(fmodel, cv) for cv in curves], 2, 2.0, seed=1)
    return {"regressor": reg, "grid": grid, "fpca": fmodel, "zones": zmodel,
            "curves": curves}


def make_toy_problem(stack, seed, epsilon=0.8, amp_center=None):
    f = toy_problem_field(seed, amp_center=amp_center)
    return cfe.make_problem(f, (2, 2), stack["regressor"], stack["grid"],
                            stack["fpca"], stack["zones"], epsilon=epsilon)


@pytest.fixture(scope="session")
def e2e():
    """Full pipeline on the 60x60 synthetic field with known classes."""
    times = {}
    t0 = time.time()
    spec = fld.SyntheticSpec(seed=7, height=60, width=60, noise_sd=3.0)
    field, yld, labels = fld.generate_synthetic(spec)
    patches = fld.extract_patches(field, yld)
    tr, va = fld.split_patches(patches, 0.9, seed=11)
    net = DenseNet(layer_sizes=[200, 128, 64, 25], n_features=8, seed=1,
                   feature_ranges=field.feature_ranges)
    report = train(net, tr, va,
                   TrainConfig(epochs=500, batch_size=16, learning_rate=0.2, seed=5))
    times["train"] = time.time() - t0

    t1 = time.time()
    grid = rsp.NGrid(0.0, 150.0, 31)
    curves, skipped = rsp.field_curves(net, field, grid)
    fmodel = fp.fit(curves, 0.995, 3)
    zmodel = zn.cluster([fp.transform(fmodel, cv) for cv in curves], 3, 2.0, seed=2)
    times["curves_cluster"] = time.time() - t1

    t2 = time.time()
    rng = np.random.default_rng(3)
    by_zone = {}
    for s, a in zip(zmodel.sites, zmodel.assignments):
        by_zone.setdefault(int(a), []).append(s)
    sample = []
    for z in sorted(by_zone):
        zone_sites = by_zone[z]
        idx = rng.choice(len(zone_sites), size=min(20, len(zone_sites)), replace=False)
        sample.extend(zone_sites[i] for i in idx)
    problems = {}
    results = []
    for site in sorted(sample):
        prob = cfe.make_problem(field, site, net, grid, fmodel, zmodel, epsilon=0.8)
        problems[site] = prob
        results.append(cfe.explain_site(prob, pop_size=16, generations=12,
                                        seed=site_seed(3, site[0], site[1])))
    times["cfe"] = time.time() - t2
    times["total"] = time.time() - t0

    return {
        "spec": spec, "field": field, "yield": yld, "labels": labels,
        "net": net, "train_report": report, "grid": grid,
        "curves": curves, "skipped": skipped, "fpca": fmodel, "zones": zmodel,
        "problems": problems, "results": results, "times": times,
    }
