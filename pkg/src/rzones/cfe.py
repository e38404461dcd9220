"""Counterfactual zone explanations via NSGA-II.

For one site, a candidate perturbs a subset of passive covariates (every
channel except nitrogen) uniformly across the site's window of valid patches.
Three objectives are minimized jointly:

  g1  -1 when the perturbed window's aligned response curve lands in a
      different zone with membership above the confidence threshold, else 0;
  g2  number of modified features (mask popcount);
  g3  mean absolute perturbation, range-normalized over all features.

NSGA-II evolves a mixed genome of mask bits and replacement values; the
reported explanation is the lexicographic (g1, g2, g3) minimum of the final
nondominated front. Aggregating changed-feature sets of successful
explanations over a zone gives per-feature relevance scores and the most
frequent feature combinations.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .field import FieldRaster, Patch, window9
from .fpca import FpcaModel, transform
from .response import NGrid, ResponseCurve, align, window_curve
from .surrogate import PatchRegressor
from .zones import ZoneModel, membership

Array = np.ndarray


@dataclass(frozen=True)
class CfeProblem:
    """One site's counterfactual search space and model handles.

    Passive features are channels 1..n-1; bounds come from the field's
    per-feature ranges. epsilon is the membership a flipped curve must exceed
    in its new zone and must be meaningful, i.e. inside (1/c, 1).
    """

    site: tuple[int, int]
    patches: list[Patch]
    site_values: Array
    feature_names: tuple[str, ...]
    bounds: Array
    epsilon: float
    original_zone: int
    regressor: PatchRegressor
    grid: NGrid
    fpca_model: FpcaModel
    zone_model: ZoneModel

    def __post_init__(self):
        c = self.zone_model.c
        if not 1.0 / c < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (1/{c}, 1)")
        if self.bounds.shape != (self.n_features - 1, 2):
            raise ValueError("need one (min, max) bound per passive feature")

    @property
    def n_features(self) -> int:
        return self.site_values.shape[0]

    @property
    def n_passive(self) -> int:
        return self.n_features - 1


@dataclass(frozen=True)
class Candidate:
    """Genome: mask[s] marks passive channel s+1 as modified, values[s] is its
    uniform replacement (ignored where the mask is off)."""

    mask: Array
    values: Array
    objectives: tuple | None = None

    def key(self) -> bytes:
        return self.mask.tobytes() + np.where(self.mask, self.values, 0.0).tobytes()

    def alpha(self) -> tuple[int, ...]:
        """Changed-feature set as raster channel indices."""
        return tuple(int(s) + 1 for s in np.nonzero(self.mask)[0])


@dataclass(frozen=True)
class CfeResult:
    site: tuple[int, int]
    success: bool
    alpha: tuple[int, ...]
    objectives: tuple
    old_zone: int
    new_zone: int
    new_membership: float
    counterfactual_curve: ResponseCurve
    candidate: Candidate


@dataclass(frozen=True)
class RelevanceReport:
    """Per-zone feature relevance, top feature combinations, success rates."""

    feature_names: tuple[str, ...]
    zones: dict


def make_problem(field: FieldRaster, site: tuple[int, int], regressor: PatchRegressor,
                 grid: NGrid, fpca_model: FpcaModel, zone_model: ZoneModel,
                 epsilon: float = 0.8) -> CfeProblem:
    """Assemble a problem for one masked-in site; the original zone comes from
    the site's own aligned curve through the fitted models."""
    patches = window9(field, site)
    curve = align(ResponseCurve(site, window_curve(regressor, patches, site, grid)))
    zone, _ = membership(zone_model, transform(fpca_model, curve))
    return CfeProblem(
        site=site,
        patches=patches,
        site_values=field.data[site[0], site[1], :].copy(),
        feature_names=field.feature_names,
        bounds=field.feature_ranges[1:].copy(),
        epsilon=epsilon,
        original_zone=zone,
        regressor=regressor,
        grid=grid,
        fpca_model=fpca_model,
        zone_model=zone_model,
    )


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def apply_candidate(problem: CfeProblem, candidate: Candidate) -> list[Patch]:
    """Perturbed window: each masked channel set uniformly across every cell of
    every patch; everything else untouched."""
    for s in np.nonzero(candidate.mask)[0]:
        lo, hi = problem.bounds[s]
        v = candidate.values[s]
        if not lo <= v <= hi:
            raise ValueError(f"value {v} for feature {problem.feature_names[s + 1]} "
                             f"outside bounds [{lo}, {hi}]")
    out = []
    for p in problem.patches:
        cube = p.cube.copy()
        for s in np.nonzero(candidate.mask)[0]:
            cube[:, :, s + 1] = candidate.values[s]
        out.append(Patch(origin=p.origin, cube=cube))
    return out


def assess_window(problem: CfeProblem, patches: list[Patch]):
    """(g1, zone, membership, aligned curve) for a (possibly perturbed) window."""
    curve = align(ResponseCurve(problem.site,
                                window_curve(problem.regressor, patches, problem.site, problem.grid)))
    zone, u = membership(problem.zone_model, transform(problem.fpca_model, curve))
    flipped = zone != problem.original_zone and u[zone] > problem.epsilon
    return (-1 if flipped else 0), zone, float(u[zone]), curve


def eval_g1(problem: CfeProblem, patches: list[Patch]) -> int:
    """-1 iff the window's curve moves to a different zone with membership
    above epsilon, else 0."""
    return assess_window(problem, patches)[0]


def eval_g2(candidate: Candidate) -> int:
    """Number of modified features."""
    return int(candidate.mask.sum())


def eval_g3(problem: CfeProblem, candidate: Candidate) -> float:
    """Range-normalized mean absolute perturbation over all n features; the
    unchanged features and nitrogen contribute zero."""
    total = 0.0
    for s in np.nonzero(candidate.mask)[0]:
        lo, hi = problem.bounds[s]
        span = hi - lo
        if span <= 0:
            warnings.warn(f"feature {problem.feature_names[s + 1]} has zero range; "
                          "it contributes 0 to g3", stacklevel=2)
            continue
        total += abs(problem.site_values[s + 1] - candidate.values[s]) / span
    return total / problem.n_features


def evaluate(problem: CfeProblem, candidate: Candidate) -> Candidate:
    g1 = eval_g1(problem, apply_candidate(problem, candidate))
    return replace(candidate, objectives=(g1, eval_g2(candidate), eval_g3(problem, candidate)))


# ---------------------------------------------------------------------------
# NSGA-II machinery
# ---------------------------------------------------------------------------

def _dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def fast_nondominated_sort(objectives: list[tuple]) -> list[list[int]]:
    """Fronts of indices, best first; the dominance matrix is vectorized."""
    objs = np.asarray(objectives, dtype=float)
    le = (objs[:, None, :] <= objs[None, :, :]).all(axis=2)
    lt = (objs[:, None, :] < objs[None, :, :]).any(axis=2)
    dom = le & lt
    dominated_by = dom.sum(axis=0)
    assigned = np.zeros(len(objs), dtype=bool)
    fronts: list[list[int]] = []
    while not assigned.all():
        current = np.nonzero((dominated_by == 0) & ~assigned)[0]
        fronts.append([int(i) for i in current])
        assigned[current] = True
        dominated_by = dominated_by - dom[current].sum(axis=0)
    return fronts


def crowding_distance(objectives: list[tuple], front: list[int]) -> dict:
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: np.inf for i in front}
    n_obj = len(objectives[front[0]])
    for o in range(n_obj):
        ordered = sorted(front, key=lambda i: objectives[i][o])
        lo_v = objectives[ordered[0]][o]
        hi_v = objectives[ordered[-1]][o]
        dist[ordered[0]] = dist[ordered[-1]] = np.inf
        if hi_v == lo_v:
            continue
        for a in range(1, len(ordered) - 1):
            gap = objectives[ordered[a + 1]][o] - objectives[ordered[a - 1]][o]
            dist[ordered[a]] += gap / (hi_v - lo_v)
    return dist


def _tournament(rng, ranks, crowd):
    i = int(rng.integers(len(ranks)))
    j = int(rng.integers(len(ranks)))
    if ranks[i] != ranks[j]:
        return i if ranks[i] < ranks[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return i


def _crossover(rng, p1: Candidate, p2: Candidate) -> tuple[Candidate, Candidate]:
    swap = rng.random(p1.mask.shape[0]) < 0.5
    m1 = np.where(swap, p2.mask, p1.mask)
    m2 = np.where(swap, p1.mask, p2.mask)
    blend = rng.random(p1.values.shape[0])
    v1 = blend * p1.values + (1.0 - blend) * p2.values
    v2 = blend * p2.values + (1.0 - blend) * p1.values
    return Candidate(m1, v1), Candidate(m2, v2)


def _mutate(rng, cand: Candidate, bounds: Array) -> Candidate:
    n = cand.mask.shape[0]
    rate = 1.0 / n
    mask = cand.mask ^ (rng.random(n) < rate)
    values = cand.values.copy()
    span = bounds[:, 1] - bounds[:, 0]
    hit = rng.random(n) < rate
    noise = rng.normal(0.0, 1.0, n)
    values = np.where(hit, values + noise * 0.1 * span, values)
    values = np.clip(values, bounds[:, 0], bounds[:, 1])
    return Candidate(mask, values)


def _initial_population(problem: CfeProblem, pop_size: int, rng) -> list[Candidate]:
    n = problem.n_passive
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    neutral = np.clip(problem.site_values[1:], lo, hi)
    pop = [Candidate(np.zeros(n, dtype=bool), neutral.copy())]
    while len(pop) < pop_size:
        mask = rng.random(n) < 0.3
        values = rng.uniform(lo, hi)
        pop.append(Candidate(mask, values))
    return pop


def nsga2(problem: CfeProblem, pop_size: int = 50, generations: int = 100,
          seed: int = 0) -> list[Candidate]:
    """Evolve candidates and return the final nondominated front.

    Standard loop: fast nondominated sorting, crowding distance, binary
    tournament, uniform mask crossover with value blending, bit-flip and
    bounded Gaussian mutation, elitist (mu + lambda) truncation. The initial
    population always contains the identity candidate, so a g2=0 anchor exists.
    Deterministic given the seed; duplicate genomes are evaluated once.
    """
    if pop_size < 4 or pop_size % 2:
        raise ValueError("population size must be even and >= 4")
    if generations < 0:
        raise ValueError("generations must be nonnegative")
    rng = np.random.default_rng(seed)
    cache: dict[bytes, tuple] = {}

    def eval_all(cands: list[Candidate]) -> list[Candidate]:
        out = []
        for cand in cands:
            key = cand.key()
            objs = cache.get(key)
            if objs is None:
                objs = evaluate(problem, cand).objectives
                cache[key] = objs
            out.append(replace(cand, objectives=objs))
        return out

    pop = eval_all(_initial_population(problem, pop_size, rng))
    for _ in range(generations):
        objs = [c.objectives for c in pop]
        fronts = fast_nondominated_sort(objs)
        ranks = [0] * len(pop)
        crowd = [0.0] * len(pop)
        for r, front in enumerate(fronts):
            cd = crowding_distance(objs, front)
            for i in front:
                ranks[i] = r
                crowd[i] = cd[i]

        offspring: list[Candidate] = []
        while len(offspring) < pop_size:
            a = pop[_tournament(rng, ranks, crowd)]
            b = pop[_tournament(rng, ranks, crowd)]
            if rng.random() < 0.9:
                c1, c2 = _crossover(rng, a, b)
            else:
                c1, c2 = Candidate(a.mask.copy(), a.values.copy()), Candidate(b.mask.copy(), b.values.copy())
            offspring.append(_mutate(rng, c1, problem.bounds))
            offspring.append(_mutate(rng, c2, problem.bounds))
        offspring = eval_all(offspring)

        union = pop + offspring
        objs = [c.objectives for c in union]
        fronts = fast_nondominated_sort(objs)
        nxt: list[Candidate] = []
        for front in fronts:
            if len(nxt) + len(front) <= pop_size:
                nxt.extend(union[i] for i in front)
            else:
                cd = crowding_distance(objs, front)
                ordered = sorted(front, key=lambda i: (-cd[i], i))
                nxt.extend(union[i] for i in ordered[:pop_size - len(nxt)])
                break
        pop = nxt

    final = fast_nondominated_sort([c.objectives for c in pop])[0]
    front_cands = []
    seen = set()
    for i in final:
        key = pop[i].key()
        if key not in seen:
            seen.add(key)
            front_cands.append(pop[i])
    return front_cands


def select(front: list[Candidate]) -> Candidate:
    """Lexicographic minimum over (g1, g2, g3); residual ties break on the
    lowest changed-feature index vector, then on the replacement values."""
    if not front:
        raise ValueError("empty front")
    return min(front, key=lambda c: (c.objectives[0], c.objectives[1], c.objectives[2],
                                     c.alpha(), tuple(c.values[c.mask])))


def explain_site(problem: CfeProblem, pop_size: int = 50, generations: int = 100,
                 seed: int = 0) -> CfeResult:
    """Full counterfactual run for one site: evolve, select, package."""
    chosen = select(nsga2(problem, pop_size, generations, seed))
    g1, zone, u, curve = assess_window(problem, apply_candidate(problem, chosen))
    return CfeResult(
        site=problem.site,
        success=g1 == -1,
        alpha=chosen.alpha(),
        objectives=chosen.objectives,
        old_zone=problem.original_zone,
        new_zone=zone,
        new_membership=u,
        counterfactual_curve=curve,
        candidate=chosen,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def write_relevance_json(report: RelevanceReport, path):
    doc = {
        "feature_names": list(report.feature_names),
        "zones": {str(z): {
            "n_sites": e["n_sites"],
            "n_success": e["n_success"],
            "success_rate": e["success_rate"],
            "relevance": e["relevance"],
            "top_combos": [[list(cb), pct] for cb, pct in e["top_combos"]],
        } for z, e in report.zones.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_relevance_csv(report: RelevanceReport, path):
    """Top-combination table, one rank per row with a combo/percent column pair
    per zone."""
    zones = sorted(report.zones)
    header = "rank," + ",".join(f"zone{z}_combo,zone{z}_percent" for z in zones)
    lines = [header]
    for rank in range(5):
        cells = [str(rank + 1)]
        for z in zones:
            combos = report.zones[z]["top_combos"]
            if rank < len(combos):
                combo, pct = combos[rank]
                cells.append("+".join(combo))
                cells.append(repr(pct))
            else:
                cells.extend(["", ""])
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def global_relevance(results: list[CfeResult], feature_names) -> RelevanceReport:
    """Per-zone relevance ratios and top-5 changed-feature combinations.

    Relevance of feature s in zone z is the share of successful explanations
    from zone z whose changed set includes s; combination percentages are over
    successful explanations. Zones without a single success carry only their
    success rate (with a warning).
    """
    names = tuple(feature_names)
    by_zone: dict[int, list[CfeResult]] = {}
    for r in results:
        by_zone.setdefault(r.old_zone, []).append(r)

    zones = {}
    for z in sorted(by_zone):
        group = by_zone[z]
        succ = [r for r in group if r.success]
        entry = {
            "n_sites": len(group),
            "n_success": len(succ),
            "success_rate": len(succ) / len(group),
            "relevance": {},
            "top_combos": [],
        }
        if not succ:
            warnings.warn(f"zone {z} has no successful counterfactuals; "
                          "relevance skipped", stacklevel=2)
        else:
            for s in range(1, len(names)):
                hits = sum(1 for r in succ if s in r.alpha)
                entry["relevance"][names[s]] = hits / len(succ)
            combos = Counter(tuple(names[s] for s in r.alpha) for r in succ)
            ranked = sorted(combos.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
            entry["top_combos"] = [(combo, 100.0 * cnt / len(succ)) for combo, cnt in ranked]
        zones[z] = entry
    return RelevanceReport(names, zones)
