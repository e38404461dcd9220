"""Pipeline orchestration and command line interface.

Subcommands mirror the pipeline stages (synth, train, curves, fpca, cluster,
explain, report) plus an all-in-one ``run`` driven by a single JSON config.
Every stage writes its artifact files and ``run`` records their content hashes
in a manifest, so identical configs reproduce identical manifests. Logging is
line-oriented key=value, tagged with the stage name. RZ_THREADS caps the
site-level parallelism of the explain stage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as _field
from pathlib import Path

import numpy as np

from . import field as fld
from . import fpca as fp
from . import response as rsp
from . import zones as zn
from . import cfe
from .surrogate import DenseNet, TrainConfig, train

log = logging.getLogger("rzones")

STAGES = ("synth", "train", "curves", "fpca", "cluster", "explain", "report")


def kv(stage: str, **pairs) -> str:
    body = " ".join(f"{k}={v}" for k, v in pairs.items())
    return f"stage={stage} {body}" if body else f"stage={stage}"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def site_seed(master: int, row: int, col: int) -> int:
    """Stable per-site seed so results do not depend on scheduling order."""
    return int(np.random.SeedSequence([master, row, col]).generate_state(1)[0])


def _workers() -> int:
    raw = os.environ.get("RZ_THREADS", "").strip()
    if raw:
        return max(1, int(raw))
    return min(4, os.cpu_count() or 1)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    outdir: str
    synthetic: dict | None = None
    field_path: str | None = None
    yield_path: str | None = None
    train: dict = _field(default_factory=dict)
    grid: dict = _field(default_factory=dict)
    fpca: dict = _field(default_factory=dict)
    zones: dict = _field(default_factory=dict)
    cfe: dict = _field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls(
            outdir=doc["outdir"],
            synthetic=doc.get("synthetic"),
            field_path=doc.get("field"),
            yield_path=doc.get("yield"),
            train=doc.get("train", {}),
            grid=doc.get("grid", {}),
            fpca=doc.get("fpca", {}),
            zones=doc.get("zones", {}),
            cfe=doc.get("cfe", {}),
        )
        cfg.validate()
        cfg._doc = doc
        return cfg

    def validate(self):
        if self.synthetic is None:
            if not self.field_path or not self.yield_path:
                raise ValueError("config needs either a synthetic block or field/yield paths")
            for p in (self.field_path, self.yield_path):
                if not Path(p).is_file():
                    raise ValueError(f"input path does not exist: {p}")
        self.ngrid()
        tc = self.train_config()
        if self.zone_count() is not None:
            zn.zone_counts_default("heterogeneous", self.zone_count())
        eps = float(self.cfe.get("epsilon", 0.8))
        if not 0.0 < eps < 1.0:
            raise ValueError("cfe.epsilon must lie in (0, 1)")
        pop = int(self.cfe.get("pop_size", 50))
        if pop < 4 or pop % 2:
            raise ValueError("cfe.pop_size must be even and >= 4")
        return tc

    def ngrid(self) -> rsp.NGrid:
        g = self.grid
        return rsp.NGrid(float(g.get("n_min", 0.0)), float(g.get("n_max", 150.0)),
                         int(g.get("steps", 151)))

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=int(t.get("epochs", 60)),
            batch_size=int(t.get("batch_size", 32)),
            learning_rate=float(t.get("learning_rate", 0.005)),
            seed=int(t.get("seed", 0)),
            l2_penalty=float(t.get("l2_penalty", 0.0)),
        )

    def zone_count(self) -> int | None:
        if "count" in self.zones:
            return int(self.zones["count"])
        if "profile" in self.zones:
            return zn.zone_counts_default(self.zones["profile"])
        return None


def write_demo_config(directory, seed: int = 7) -> Path:
    """Materialize the bundled 40x40 synthetic demo configuration."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "outdir": str(directory / "artifacts"),
        "synthetic": {"seed": seed, "height": 40, "width": 40, "noise_sd": 3.0},
        "train": {"epochs": 300, "batch_size": 16, "learning_rate": 0.2,
                  "seed": 1, "l2_penalty": 0.0,
                  "layer_sizes": [200, 128, 64, 25], "activation": "tanh",
                  "split_fraction": 0.9, "split_seed": 11},
        "grid": {"n_min": 0.0, "n_max": 150.0, "steps": 31},
        "fpca": {"variance_target": 0.995, "k_max": 3},
        "zones": {"count": 3, "seed": 2, "fuzzifier": 2.0},
        "cfe": {"pop_size": 16, "generations": 12, "epsilon": 0.8,
                "seed": 3, "sites_per_zone": 10},
    }
    path = directory / "config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _stage_synth(cfg: RunConfig, outdir: Path):
    if cfg.synthetic is None:
        # Ingest mode: the inputs themselves are the stage artifact.
        field = fld.load_field(cfg.field_path)
        yld = fld.load_yield(cfg.yield_path)
        log.info(kv("synth", mode="ingest", height=field.height, width=field.width))
        return field, yld, None, {"field": Path(cfg.field_path), "yield": Path(cfg.yield_path)}
    spec = fld.SyntheticSpec(**cfg.synthetic)
    field, yld, labels = fld.generate_synthetic(spec)
    fpath, ypath, tpath = outdir / "field.csv", outdir / "yield.csv", outdir / "truth.csv"
    fld.save_field(field, fpath)
    fld.save_yield(yld, ypath)
    tpath.write_text("\n".join(",".join(str(int(v)) for v in row) for row in labels) + "\n")
    log.info(kv("synth", mode="generate", height=field.height, width=field.width,
                seed=spec.seed))
    return field, yld, labels, {"field": fpath, "yield": ypath, "truth": tpath}


def _stage_train(cfg: RunConfig, field, yld, outdir: Path):
    tcfg = cfg.train_config()
    patches = fld.extract_patches(field, yld)
    train_set, val_set = fld.split_patches(patches,
                                           float(cfg.train.get("split_fraction", 0.9)),
                                           int(cfg.train.get("split_seed", 0)))
    net = DenseNet(
        layer_sizes=cfg.train.get("layer_sizes"),
        n_features=field.n_features,
        activation=cfg.train.get("activation", "tanh"),
        seed=tcfg.seed,
        feature_ranges=field.feature_ranges,
    )
    report = train(net, train_set, val_set, tcfg)
    path = outdir / "model.json"
    net.save(path)
    log.info(kv("train", patches=len(patches), train=len(train_set), val=len(val_set),
                train_rmse=f"{report.final_train_rmse:.4f}",
                val_rmse=f"{report.final_val_rmse:.4f}"))
    return net, {"model": path}


def _stage_curves(cfg: RunConfig, net, field, outdir: Path):
    grid = cfg.ngrid()
    curves, skipped = rsp.field_curves(net, field, grid)
    path = outdir / "curves.csv"
    rsp.write_curves(path, curves, grid)
    log.info(kv("curves", sites=len(curves), skipped=len(skipped), steps=grid.steps))
    return curves, grid, {"curves": path}


def _stage_fpca(cfg: RunConfig, curves, outdir: Path):
    model = fp.fit(curves, float(cfg.fpca.get("variance_target", 0.995)),
                   int(cfg.fpca.get("k_max", 3)))
    path = outdir / "fpca.json"
    fp.save_model(model, path)
    log.info(kv("fpca", k=model.k,
                explained=f"{float(model.explained_ratio.sum()):.6f}"))
    return model, {"fpca": path}


def _stage_cluster(cfg: RunConfig, fmodel, curves, field, outdir: Path):
    c = cfg.zone_count() or zn.zone_counts_default("homogeneous")
    scores = [fp.transform(fmodel, cv) for cv in curves]
    model = zn.cluster(scores, c, float(cfg.zones.get("fuzzifier", 2.0)),
                       seed=int(cfg.zones.get("seed", 0)))
    zpath = outdir / "zones.json"
    zn.save_zones(model, zpath)
    zmap = zn.zone_map(model, field)
    cpath, ppath = outdir / "zone_map.csv", outdir / "zone_map.pgm"
    zn.write_zone_map_csv(zmap, cpath)
    zn.write_zone_map_pgm(zmap, ppath)
    log.info(kv("cluster", zones=c, iterations=model.n_iter, converged=model.converged))
    return model, {"zones": zpath, "zone_map_csv": cpath, "zone_map_pgm": ppath}


def _select_sites(zmodel: zn.ZoneModel, per_zone: int | None, seed: int):
    sites = zmodel.sites
    if per_zone is None:
        return list(sites)
    rng = np.random.default_rng(seed)
    chosen = []
    for z in range(zmodel.c):
        zone_sites = [s for s, a in zip(sites, zmodel.assignments) if a == z]
        take = min(per_zone, len(zone_sites))
        idx = rng.choice(len(zone_sites), size=take, replace=False)
        chosen.extend(zone_sites[i] for i in idx)
    return sorted(chosen)


def explain_sites(field, net, grid, fmodel, zmodel, sites, pop_size, generations,
                  epsilon, master_seed) -> list[cfe.CfeResult]:
    """Run the counterfactual engine over sites, in parallel, reproducibly."""
    def run_one(site):
        problem = cfe.make_problem(field, site, net, grid, fmodel, zmodel, epsilon)
        return cfe.explain_site(problem, pop_size, generations,
                                seed=site_seed(master_seed, site[0], site[1]))

    workers = _workers()
    if workers == 1 or len(sites) <= 1:
        return [run_one(s) for s in sites]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, sites))


def _stage_explain(cfg: RunConfig, field, net, grid, fmodel, zmodel, outdir: Path):
    seed = int(cfg.cfe.get("seed", 0))
    sites = _select_sites(zmodel, cfg.cfe.get("sites_per_zone"), seed)
    results = explain_sites(field, net, grid, fmodel, zmodel, sites,
                            int(cfg.cfe.get("pop_size", 50)),
                            int(cfg.cfe.get("generations", 100)),
                            float(cfg.cfe.get("epsilon", 0.8)), seed)
    path = outdir / "cfe.jsonl"
    write_results(results, field.feature_names, path)
    n_succ = sum(r.success for r in results)
    log.info(kv("explain", sites=len(results), successes=n_succ, workers=_workers()))
    return results, {"cfe": path}


def write_results(results: list[cfe.CfeResult], feature_names, path):
    lines = []
    for r in results:
        lines.append(json.dumps({
            "site": list(r.site),
            "success": r.success,
            "alpha": [feature_names[s] for s in r.alpha],
            "objectives": [r.objectives[0], r.objectives[1], r.objectives[2]],
            "old_zone": r.old_zone,
            "new_zone": r.new_zone,
            "new_membership": r.new_membership,
            "mask": [bool(b) for b in r.candidate.mask],
            "values": [float(v) for v in r.candidate.values],
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def _stage_report(cfg: RunConfig, results, field, curves, grid, zmodel, outdir: Path):
    report = cfe.global_relevance(results, field.feature_names)
    rpath = outdir / "relevance.json"
    cfe.write_relevance_json(report, rpath)
    tpath = outdir / "relevance.csv"
    cfe.write_relevance_csv(report, tpath)
    files = {"relevance": rpath, "relevance_table": tpath}
    files.update(emit_plots(field, curves, grid, zmodel, report, outdir,
                            seed=int(cfg.cfe.get("seed", 0))))
    log.info(kv("report", zones=len(report.zones)))
    return report, files


def emit_plots(field, curves, grid, zmodel, report: cfe.RelevanceReport, outdir: Path,
               seed: int = 0, sample_size: int = 50):
    """Plot-ready exports: one curve-sample CSV per zone (sample_size seeded
    random curves, or all of a smaller zone with a note), the zone map as PGM,
    and one per-feature relevance CSV."""
    outdir = Path(outdir)
    files = {}
    by_site = {cv.site: cv for cv in curves}
    rng = np.random.default_rng(seed)
    for z in range(zmodel.c):
        zone_sites = [s for s, a in zip(zmodel.sites, zmodel.assignments) if a == z]
        take = min(sample_size, len(zone_sites))
        if take < sample_size:
            log.info(kv("report", note="small-zone-sample", zone=z, available=take))
        idx = rng.choice(len(zone_sites), size=take, replace=False)
        sample = sorted(zone_sites[i] for i in idx)
        path = outdir / f"zone{z}_curves.csv"
        rsp.write_curves(path, [by_site[s] for s in sample], grid)
        files[f"zone{z}_curves"] = path

    zmap = zn.zone_map(zmodel, field)
    pgm = outdir / "zone_map_plot.pgm"
    zn.write_zone_map_pgm(zmap, pgm)
    files["zone_map_plot"] = pgm

    bars = outdir / "relevance_bars.csv"
    lines = ["zone,feature,relevance"]
    for z, entry in report.zones.items():
        for name, val in entry["relevance"].items():
            lines.append(f"{z},{name},{val!r}")
    bars.write_text("\n".join(lines) + "\n")
    files["relevance_bars"] = bars
    return files


def run_pipeline(config: RunConfig) -> dict:
    """Execute all stages in order and return the manifest."""
    config.validate()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"config": getattr(config, "_doc", None), "stages": []}

    def record(stage: str, files: dict):
        manifest["stages"].append({
            "name": stage,
            "files": {name: _sha256(Path(p)) for name, p in sorted(files.items())},
        })

    stage = "synth"
    try:
        field, yld, _labels, files = _stage_synth(config, outdir)
        record(stage, files)
        stage = "train"
        net, files = _stage_train(config, field, yld, outdir)
        record(stage, files)
        stage = "curves"
        curves, grid, files = _stage_curves(config, net, field, outdir)
        record(stage, files)
        stage = "fpca"
        fmodel, files = _stage_fpca(config, curves, outdir)
        record(stage, files)
        stage = "cluster"
        zmodel, files = _stage_cluster(config, fmodel, curves, field, outdir)
        record(stage, files)
        stage = "explain"
        results, files = _stage_explain(config, field, net, grid, fmodel, zmodel, outdir)
        record(stage, files)
        stage = "report"
        _report, files = _stage_report(config, results, field, curves, grid, zmodel, outdir)
        record(stage, files)
    except Exception as exc:
        raise StageError(stage, exc) from exc

    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info(kv("run", stages=len(manifest["stages"]), outdir=str(outdir)))
    return manifest


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rzones",
                                 description="management zones from nitrogen response curves")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic field")
    p.add_argument("--spec", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--yield", dest="yield_path", required=True)
    p.add_argument("--truth", default=None)

    p = sub.add_parser("train", help="train the patch regressor")
    p.add_argument("--field", required=True)
    p.add_argument("--yield", dest="yield_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", default=None, help="comma-separated layer widths")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--split-fraction", type=float, default=0.9)
    p.add_argument("--split-seed", type=int, default=0)

    p = sub.add_parser("curves", help="sweep nitrogen into per-site curves")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--nmin", type=float, default=0.0)
    p.add_argument("--nmax", type=float, default=150.0)
    p.add_argument("--steps", type=int, default=151)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fpca", help="fit curve-shape components")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=float, default=0.995)
    p.add_argument("--kmax", type=int, default=3)

    p = sub.add_parser("cluster", help="fuzzy c-means zoning")
    p.add_argument("--fpca", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--zones", type=int, default=None)
    p.add_argument("--profile", default="homogeneous")
    p.add_argument("--fuzzifier", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--map", dest="map_path", default=None)
    p.add_argument("--field", default=None,
                   help="raster for the --map shape; inferred from sites if omitted")

    p = sub.add_parser("explain", help="counterfactual explanations per site")
    p.add_argument("--model", required=True)
    p.add_argument("--fpca", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--nmin", type=float, default=0.0)
    p.add_argument("--nmax", type=float, default=150.0)
    p.add_argument("--steps", type=int, default=151)
    p.add_argument("--pop", type=int, default=50)
    p.add_argument("--gens", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sites-per-zone", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("report", help="aggregate explanations and emit plot data")
    p.add_argument("--cfe", required=True)
    p.add_argument("--zones", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("demo", help="write (and optionally run) the demo config")
    p.add_argument("--out", required=True)
    p.add_argument("--run", action="store_true")
    return ap


def _load_results(path, feature_names) -> list[cfe.CfeResult]:
    """Rehydrate explain-stage output far enough for aggregation."""
    results = []
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        doc = json.loads(ln)
        alpha = tuple(feature_names.index(nm) for nm in doc["alpha"])
        mask = np.asarray(doc["mask"], dtype=bool)
        values = np.asarray(doc["values"], dtype=float)
        results.append(cfe.CfeResult(
            site=tuple(doc["site"]), success=doc["success"], alpha=alpha,
            objectives=tuple(doc["objectives"]), old_zone=doc["old_zone"],
            new_zone=doc["new_zone"], new_membership=doc["new_membership"],
            counterfactual_curve=None, candidate=cfe.Candidate(mask, values),
        ))
    return results


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    args = _build_parser().parse_args(argv)

    if args.command == "synth":
        spec = fld.SyntheticSpec.from_json(args.spec)
        field, yld, labels = fld.generate_synthetic(spec)
        fld.save_field(field, args.field)
        fld.save_yield(yld, args.yield_path)
        if args.truth:
            Path(args.truth).write_text(
                "\n".join(",".join(str(int(v)) for v in row) for row in labels) + "\n")
        log.info(kv("synth", field=args.field, height=field.height, width=field.width))
        return 0

    if args.command == "train":
        field = fld.load_field(args.field)
        yld = fld.load_yield(args.yield_path)
        patches = fld.extract_patches(field, yld)
        tr, va = fld.split_patches(patches, args.split_fraction, args.split_seed)
        layers = [int(t) for t in args.layers.split(",")] if args.layers else None
        net = DenseNet(layer_sizes=layers, n_features=field.n_features,
                       activation=args.activation, seed=args.seed,
                       feature_ranges=field.feature_ranges)
        report = train(net, tr, va, TrainConfig(args.epochs, args.batch_size,
                                                args.lr, args.seed, args.l2))
        net.save(args.out)
        log.info(kv("train", model=args.out, val_rmse=f"{report.final_val_rmse:.4f}"))
        return 0

    if args.command == "curves":
        net = DenseNet.load(args.model)
        field = fld.load_field(args.field)
        grid = rsp.NGrid(args.nmin, args.nmax, args.steps)
        curves, skipped = rsp.field_curves(net, field, grid)
        rsp.write_curves(args.out, curves, grid)
        log.info(kv("curves", out=args.out, sites=len(curves), skipped=len(skipped)))
        return 0

    if args.command == "fpca":
        curves, _grid = rsp.read_curves(args.curves)
        model = fp.fit(curves, args.target, args.kmax)
        fp.save_model(model, args.out)
        log.info(kv("fpca", out=args.out, k=model.k))
        return 0

    if args.command == "cluster":
        fmodel = fp.load_model(args.fpca)
        curves, _grid = rsp.read_curves(args.curves)
        c = zn.zone_counts_default(args.profile, args.zones)
        scores = [fp.transform(fmodel, cv) for cv in curves]
        model = zn.cluster(scores, c, args.fuzzifier, seed=args.seed)
        zn.save_zones(model, args.out)
        if args.map_path:
            if args.field:
                field = fld.load_field(args.field)
                shape = (field.height, field.width)
            else:
                # smallest raster covering every charted site
                shape = (max(s[0] for s in model.sites) + 1,
                         max(s[1] for s in model.sites) + 1)
            zn.write_zone_map_pgm(zn.zone_map_grid(model, shape), args.map_path)
        log.info(kv("cluster", out=args.out, zones=c))
        return 0

    if args.command == "explain":
        net = DenseNet.load(args.model)
        field = fld.load_field(args.field)
        fmodel = fp.load_model(args.fpca)
        zmodel = zn.load_zones(args.zones)
        grid = rsp.NGrid(args.nmin, args.nmax, args.steps)
        sites = _select_sites(zmodel, args.sites_per_zone, args.seed)
        results = explain_sites(field, net, grid, fmodel, zmodel, sites,
                                args.pop, args.gens, args.epsilon, args.seed)
        write_results(results, field.feature_names, args.out)
        if args.report:
            report = cfe.global_relevance(results, field.feature_names)
            cfe.write_relevance_json(report, args.report)
        log.info(kv("explain", out=args.out, sites=len(results),
                    successes=sum(r.success for r in results)))
        return 0

    if args.command == "report":
        field = fld.load_field(args.field)
        zmodel = zn.load_zones(args.zones)
        curves, grid = rsp.read_curves(args.curves)
        results = _load_results(args.cfe, list(field.feature_names))
        report = cfe.global_relevance(results, field.feature_names)
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        cfe.write_relevance_json(report, outdir / "relevance.json")
        cfe.write_relevance_csv(report, outdir / "relevance.csv")
        emit_plots(field, curves, grid, zmodel, report, outdir, seed=args.seed)
        log.info(kv("report", outdir=args.outdir))
        return 0

    if args.command == "run":
        config = RunConfig.from_json(args.config)
        try:
            run_pipeline(config)
        except StageError as exc:
            log.error(kv("run", failed_stage=exc.stage, error=repr(exc.cause)))
            return 1
        return 0

    if args.command == "demo":
        path = write_demo_config(args.out)
        log.info(kv("demo", config=str(path)))
        if args.run:
            run_pipeline(RunConfig.from_json(path))
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())
