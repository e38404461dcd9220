import numpy as np
import pytest

from rzones import cfe
from rzones import zones as zn
from rzones.cli import site_seed

from conftest import make_toy_problem


def candidate(problem, changes: dict):
    """Build a candidate from {passive_channel_index: value} (1-based channels)."""
    mask = np.zeros(problem.n_passive, dtype=bool)
    values = np.clip(problem.site_values[1:].copy(),
                     problem.bounds[:, 0], problem.bounds[:, 1])
    for chan, v in changes.items():
        mask[chan - 1] = True
        values[chan - 1] = v
    return cfe.Candidate(mask, values)


class TestApplyCandidate:
    def test_identity_exact(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=500)
        out = cfe.apply_candidate(prob, candidate(prob, {}))
        assert len(out) == len(prob.patches)
        for a, b in zip(out, prob.patches):
            assert a.origin == b.origin
            np.testing.assert_array_equal(a.cube, b.cube)

    def test_single_channel_edit(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=501)
        v = float(prob.bounds[0].mean())
        out = cfe.apply_candidate(prob, candidate(prob, {1: v}))
        for a, b in zip(out, prob.patches):
            assert np.all(a.cube[:, :, 1] == v)
            np.testing.assert_array_equal(a.cube[:, :, 0], b.cube[:, :, 0])

    def test_two_edits_equal_sequential(self, e2e):
        site = next(iter(e2e["problems"]))
        prob = e2e["problems"][site]
        v1 = float(prob.bounds[0].mean())
        v2 = float(prob.bounds[3].mean())
        both = cfe.apply_candidate(prob, candidate(prob, {1: v1, 4: v2}))
        one = cfe.apply_candidate(prob, candidate(prob, {1: v1}))
        inner = cfe.CfeProblem(**{**prob.__dict__, "patches": one})
        two = cfe.apply_candidate(inner, candidate(prob, {4: v2}))
        for a, b in zip(both, two):
            np.testing.assert_array_equal(a.cube, b.cube)

    def test_out_of_bounds_rejected(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=502)
        with pytest.raises(ValueError, match="bounds"):
            cfe.apply_candidate(prob, candidate(prob, {1: prob.bounds[0, 1] + 1.0}))


class TestObjectives:
    def test_g1_identity_zero(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=503)
        assert cfe.eval_g1(prob, prob.patches) == 0

    def test_g1_centroid_landing(self, toy_stack):
        # a curve sitting exactly on a foreign centroid flips with membership 1
        prob = make_toy_problem(toy_stack, seed=504, amp_center=0.25)
        other = 1 - prob.original_zone
        target_scores = prob.zone_model.centroids[other]
        g1, zone, u, curve = cfe.assess_window(prob, prob.patches)
        assert g1 == 0
        sv = target_scores
        zid, uu = zn.membership(prob.zone_model, sv)
        assert zid == other and uu[other] == 1.0

    def test_g1_grid_scan_oracle(self, toy_stack):
        # boundary site: scan 50 values of the driving feature for a flip
        prob = make_toy_problem(toy_stack, seed=505, amp_center=0.45)
        lo, hi = prob.bounds[0]
        flips = []
        for v in np.linspace(lo, hi, 50):
            g1 = cfe.eval_g1(prob, cfe.apply_candidate(prob, candidate(prob, {1: v})))
            if g1 == -1:
                flips.append(v)
        assert flips  # the scan finds at least one flipping value
        v = flips[len(flips) // 2]
        assert cfe.eval_g1(prob, cfe.apply_candidate(prob, candidate(prob, {1: v}))) == -1

    def test_g2_popcount(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=506)
        assert cfe.eval_g2(candidate(prob, {})) == 0
        assert cfe.eval_g2(candidate(prob, {1: 0.5})) == 1
        rng = np.random.default_rng(0)
        for _ in range(10):
            mask = rng.random(prob.n_passive) < 0.5
            cand = cfe.Candidate(mask, np.full(prob.n_passive, 0.5))
            assert cfe.eval_g2(cand) == sum(1 for b in mask if b)

    def test_g3_identity_zero(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=507)
        assert cfe.eval_g3(prob, candidate(prob, {})) == 0.0

    def test_g3_full_range_move(self, e2e):
        # one feature moved across its whole range with n=8 features -> 1/8
        site = next(iter(e2e["problems"]))
        prob = e2e["problems"][site]
        chan = 2
        lo, hi = prob.bounds[chan - 1]
        mask = np.zeros(prob.n_passive, dtype=bool)
        mask[chan - 1] = True
        values = np.clip(prob.site_values[1:].copy(), prob.bounds[:, 0], prob.bounds[:, 1])
        # value at the far end of the range from the site's own value
        site_v = prob.site_values[chan]
        far = lo if abs(site_v - hi) < abs(site_v - lo) else hi
        values[chan - 1] = far
        got = cfe.eval_g3(prob, cfe.Candidate(mask, values))
        expect = abs(site_v - far) / (hi - lo) / 8.0
        assert got == pytest.approx(expect, abs=1e-12)

    def test_g3_formula_oracle(self, e2e):
        site = next(iter(e2e["problems"]))
        prob = e2e["problems"][site]
        rng = np.random.default_rng(1)
        for _ in range(10):
            mask = rng.random(prob.n_passive) < 0.4
            values = rng.uniform(prob.bounds[:, 0], prob.bounds[:, 1])
            got = cfe.eval_g3(prob, cfe.Candidate(mask, values))
            expect = 0.0
            for s in range(prob.n_passive):
                if mask[s]:
                    span = prob.bounds[s, 1] - prob.bounds[s, 0]
                    expect += abs(prob.site_values[s + 1] - values[s]) / span
            expect /= prob.n_features
            assert got == pytest.approx(expect, abs=1e-12)


class TestSelect:
    def _front(self, objs):
        n = 1
        out = []
        for o in objs:
            c = cfe.Candidate(np.zeros(n, dtype=bool), np.zeros(n), o)
            out.append(c)
        return out

    def test_g1_first(self):
        front = self._front([(-1, 2, 0.1), (0, 0, 0.0)])
        assert cfe.select(front).objectives == (-1, 2, 0.1)

    def test_then_g2(self):
        front = self._front([(-1, 1, 0.3), (-1, 2, 0.1)])
        assert cfe.select(front).objectives == (-1, 1, 0.3)

    def test_then_g3(self):
        front = self._front([(-1, 1, 0.3), (-1, 1, 0.2)])
        assert cfe.select(front).objectives == (-1, 1, 0.2)

    def test_mask_index_tiebreak(self):
        a = cfe.Candidate(np.array([False, True]), np.zeros(2), (-1, 1, 0.2))
        b = cfe.Candidate(np.array([True, False]), np.zeros(2), (-1, 1, 0.2))
        assert cfe.select([a, b]) is b  # changed set {1} precedes {2}

    def test_empty_front(self):
        with pytest.raises(ValueError, match="empty"):
            cfe.select([])


class TestNsga2:
    def test_identity_in_front(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=508)
        front = cfe.nsga2(prob, pop_size=12, generations=5, seed=1)
        assert any(c.objectives == (0, 0, 0.0) for c in front)

    def test_front_dominance_soundness(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=509)
        front = cfe.nsga2(prob, pop_size=16, generations=10, seed=2)
        def dominates(a, b):
            return all(x <= y for x, y in zip(a, b)) and a != b
        for p in front:
            for q in front:
                if p is not q:
                    assert not dominates(p.objectives, q.objectives)

    def test_deterministic(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=510)
        a = cfe.nsga2(prob, pop_size=12, generations=8, seed=3)
        b = cfe.nsga2(prob, pop_size=12, generations=8, seed=3)
        assert [c.objectives for c in a] == [c.objectives for c in b]
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.mask, cb.mask)
            np.testing.assert_array_equal(ca.values, cb.values)

    def test_population_contract(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=511)
        for bad in (3, 7):
            with pytest.raises(ValueError):
                cfe.nsga2(prob, pop_size=bad, generations=1, seed=0)

    def test_budget_monotone_lexicographic(self, toy_stack):
        # a longer run never worsens the selected objectives on a fixed seed
        prob = make_toy_problem(toy_stack, seed=512)
        keys = []
        for gens in (10, 50, 100):
            sel = cfe.select(cfe.nsga2(prob, pop_size=20, generations=gens, seed=4))
            keys.append(sel.objectives)
        assert keys[0] >= keys[1] >= keys[2]


class TestExplainSite:
    def test_strict_epsilon_fails_gracefully(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=513, epsilon=0.999)
        res = cfe.explain_site(prob, pop_size=12, generations=6, seed=5)
        assert not res.success
        assert res.objectives[0] == 0

    def test_zero_generations_identity(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=514, epsilon=0.999)
        res = cfe.explain_site(prob, pop_size=12, generations=0, seed=6)
        assert not res.success
        assert res.alpha == ()
        assert res.objectives == (0, 0, 0.0)
        assert res.new_zone == prob.original_zone

    def test_toy_flip_changes_the_driving_feature(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=515, amp_center=0.2)
        res = cfe.explain_site(prob, pop_size=20, generations=30, seed=7)
        assert res.success
        assert res.alpha == (1,)
        assert res.new_zone != prob.original_zone
        assert res.new_membership > 0.8

    def test_alpha_matches_recomputed_changes(self, toy_stack):
        prob = make_toy_problem(toy_stack, seed=516)
        rng = np.random.default_rng(2)
        for _ in range(10):
            mask = rng.random(prob.n_passive) < 0.5
            values = rng.uniform(prob.bounds[:, 0], prob.bounds[:, 1])
            cand = cfe.Candidate(mask, values)
            perturbed = cfe.apply_candidate(prob, cand)
            changed = set()
            for a, b in zip(perturbed, prob.patches):
                for s in range(1, prob.n_features):
                    if not np.array_equal(a.cube[:, :, s], b.cube[:, :, s]):
                        changed.add(s)
            assert tuple(sorted(changed)) == cand.alpha()

    def test_roundtrip_reeval(self, toy_stack):
        hits = 0
        for k in range(6):
            prob = make_toy_problem(toy_stack, seed=520 + k)
            res = cfe.explain_site(prob, pop_size=20, generations=25,
                                   seed=site_seed(1, 2, k))
            if res.success:
                hits += 1
                again = cfe.eval_g1(prob, cfe.apply_candidate(prob, res.candidate))
                assert again == -1
        assert hits > 0


class TestGlobalRelevance:
    def _result(self, zone, alpha, success=True):
        n = 7
        mask = np.zeros(n, dtype=bool)
        for s in alpha:
            mask[s - 1] = True
        cand = cfe.Candidate(mask, np.zeros(n), (-1 if success else 0, len(alpha), 0.1))
        return cfe.CfeResult(site=(0, 0), success=success, alpha=alpha,
                             objectives=cand.objectives, old_zone=zone,
                             new_zone=zone + 1 if success else zone,
                             new_membership=0.9 if success else 0.3,
                             counterfactual_curve=None, candidate=cand)

    NAMES = ("N", "S", "E", "TPI", "A", "P", "VV", "VH")

    def test_hand_count(self):
        results = [
            self._result(0, (1,)), self._result(0, (1,)),
            self._result(0, (1, 4)), self._result(0, (4,)),
        ]
        report = cfe.global_relevance(results, self.NAMES)
        zone = report.zones[0]
        assert zone["relevance"]["S"] == 0.75
        assert zone["relevance"]["A"] == 0.5
        assert zone["top_combos"][0] == (("S",), 50.0)
        assert zone["success_rate"] == 1.0

    def test_single_result(self):
        report = cfe.global_relevance([self._result(2, (3,))], self.NAMES)
        zone = report.zones[2]
        assert zone["relevance"]["TPI"] == 1.0
        assert all(v == 0.0 for k, v in zone["relevance"].items() if k != "TPI")

    def test_failures_counted_in_rate_only(self):
        results = [self._result(1, (1,)), self._result(1, (), success=False)]
        report = cfe.global_relevance(results, self.NAMES)
        zone = report.zones[1]
        assert zone["success_rate"] == 0.5
        assert zone["relevance"]["S"] == 1.0

    def test_zero_success_zone_warned(self):
        results = [self._result(0, (), success=False)]
        with pytest.warns(UserWarning, match="zone 0"):
            report = cfe.global_relevance(results, self.NAMES)
        assert report.zones[0]["relevance"] == {}
        assert report.zones[0]["success_rate"] == 0.0

    def test_table_csv_shape(self, tmp_path):
        results = [self._result(0, (1,)), self._result(1, (2,)), self._result(1, (1, 2))]
        report = cfe.global_relevance(results, self.NAMES)
        cfe.write_relevance_csv(report, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "rank,zone0_combo,zone0_percent,zone1_combo,zone1_percent"
        assert len(lines) == 6  # header + five ranks
