import numpy as np
import pytest

from flimsod.evalsel import (
    SelectionSession,
    confusion,
    evaluate_set,
    f_beta,
    history_from_jsonl,
    history_to_jsonl,
    mae,
    replay_history,
    selection_init,
    selection_score,
    selection_step,
)

from oracles import brute_confusion


class TestConfusion:
    def test_identical(self):
        mask = np.random.default_rng(0).random((6, 6)) < 0.5
        assert confusion(mask, mask) == (int(mask.sum()), 0, 0)

    def test_disjoint(self):
        g = np.zeros((4, 4), dtype=bool)
        g[0, :3] = True
        b = np.zeros((4, 4), dtype=bool)
        b[2, :2] = True
        assert confusion(g, b) == (0, 2, 3)

    def test_hand_case_matches_oracle(self):
        g = np.array([[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [1, 0, 0, 0]], dtype=bool)
        b = np.array([[1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 0, 0]], dtype=bool)
        assert confusion(g, b) == brute_confusion(g, b)

    def test_domain_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


class TestFBeta:
    def test_perfect(self):
        for bsq in (0.09, 0.3, 1.0):
            assert f_beta(1.0, 1.0, bsq) == 1.0

    def test_direct_formula_values(self):
        # (1 + b2) P R / (b2 P + R)
        assert f_beta(1.0, 0.5, 0.3) == pytest.approx(0.65 / 0.8)
        assert f_beta(0.5, 1.0, 0.3) == pytest.approx(0.65 / 1.15)

    def test_zero_recall(self):
        assert f_beta(1.0, 0.0, 0.3) == 0.0

    def test_zero_denominator(self):
        assert f_beta(0.0, 0.0, 0.3) == 0.0

    def test_monotone_in_tp(self):
        # growing TP with FP, FN fixed never decreases F-beta
        rng = np.random.default_rng(1)
        for _ in range(200):
            fp, fn = rng.integers(0, 20, size=2)
            prev = -1.0
            for tp in range(0, 40, 3):
                p = tp / (tp + fp) if tp + fp else 0.0
                r = tp / (tp + fn) if tp + fn else 0.0
                val = f_beta(p, r, 0.3)
                assert val >= prev - 1e-12
                prev = val

    def test_bounds_fuzzed(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            p, r = rng.random(2)
            assert 0.0 <= f_beta(p, r, 0.3) <= 1.0


class TestMae:
    def test_identical(self):
        m = np.ones((3, 3), dtype=bool)
        assert mae(m, m) == 0.0

    def test_single_pixel_difference(self):
        g = np.zeros((2, 2), dtype=bool)
        b = g.copy()
        b[0, 0] = True
        assert mae(g, b) == 0.25

    def test_complementary(self):
        g = np.zeros((4, 4), dtype=bool)
        assert mae(g, ~g) == 1.0

    def test_bounds_fuzzed(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            g = rng.random((5, 5)) < 0.5
            b = rng.random((5, 5)) < 0.5
            assert 0.0 <= mae(g, b) <= 1.0


class TestEvaluateSet:
    def masks(self, rng, n):
        out = []
        for i in range(n):
            g = rng.random((8, 8)) < 0.4
            b = rng.random((8, 8)) < 0.4
            out.append((f"img{i}", g, b))
        return out

    def test_single_pair_aggregates(self):
        rng = np.random.default_rng(4)
        report = evaluate_set(self.masks(rng, 1))
        row = report.rows[0]
        assert report.mean["f_beta"] == row.f_beta
        assert report.std["f_beta"] == 0.0

    def test_hand_mean_std(self):
        g1 = np.ones((2, 2), dtype=bool)
        pairs = [("a", g1, g1)]  # F=1
        g2 = np.ones((2, 2), dtype=bool)
        b2 = np.array([[1, 1], [0, 0]], dtype=bool)  # P=1, R=0.5 -> F=.65/.8
        pairs.append(("b", g2, b2))
        report = evaluate_set(pairs, beta_sq=0.3)
        fb = 0.65 / 0.8
        assert report.mean["f_beta"] == pytest.approx((1.0 + fb) / 2)
        assert report.std["f_beta"] == pytest.approx((1.0 - fb) / 2)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        pairs = self.masks(rng, 4)
        r1 = evaluate_set(pairs)
        r2 = evaluate_set(list(reversed(pairs)))
        assert r1.mean == r2.mean and r1.std == r2.std

    def test_csv_shape(self):
        rng = np.random.default_rng(6)
        report = evaluate_set(self.masks(rng, 3))
        lines = report.to_csv().splitlines()
        assert lines[0] == "image_id,precision,recall,f_beta,mae"
        assert len(lines) == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate_set([])


class TestSelectionInit:
    def test_pool_of_one(self):
        s = selection_init(["only"], seed=0)
        assert s.training_set == ["only"] and s.pool == []

    def test_deterministic(self):
        pool = [f"i{k}" for k in range(10)]
        a = selection_init(pool, seed=42)
        b = selection_init(list(reversed(pool)), seed=42)
        assert a.training_set == b.training_set

    def test_pick_from_pool(self):
        pool = ["a", "b", "c"]
        s = selection_init(pool, seed=7)
        assert s.training_set[0] in pool
        assert s.x_prev == 0.0 and s.z_prev == s.training_set[0]


class TestSelectionScore:
    def test_mean_and_ranking(self):
        session = SelectionSession(training_set=["t"], pool=["a", "b", "c"],
                                   x_prev=0.0, z_prev="t")
        scores = {"a": 0.9, "b": 0.2, "c": 0.2}
        x, ranked = selection_score(session, lambda t: "model",
                                    lambda m, iid: scores[iid])
        assert x == pytest.approx(np.mean(list(scores.values())))
        assert ranked == [("b", 0.2), ("c", 0.2), ("a", 0.9)]  # id breaks ties

    def test_solved_pool(self):
        session = SelectionSession(training_set=["t"], pool=["a", "b"],
                                   x_prev=0.0, z_prev="t")
        x, ranked = selection_score(session, lambda t: None, lambda m, iid: 1.0)
        assert x == 1.0
        assert [r[0] for r in ranked] == ["a", "b"]


class TestSelectionStep:
    def fresh(self):
        return selection_init([f"i{k}" for k in range(8)], seed=1)

    def test_accept_grows_t(self):
        s = self.fresh()
        z = s.pool[0]
        selection_step(s, x=0.5, z=z)
        assert len(s.training_set) == 2 and z in s.training_set
        assert s.x_prev == 0.5 and s.z_prev == z

    def test_score_drop_reverts_previous_addition(self):
        s = self.fresh()
        z1, z2 = s.pool[0], s.pool[1]
        selection_step(s, x=0.6, z=z1)
        before = [i for i in s.training_set if i != z1]
        selection_step(s, x=0.4, z=z2)  # 0.4 < 0.6: z1 out, z2 on probation
        assert z1 not in s.training_set and z1 in s.pool
        assert z2 in s.training_set
        assert s.x_prev == 0.6
        assert sorted(s.training_set) == sorted(before + [z2])

    def test_three_accepts_reach_four(self):
        s = self.fresh()
        for x in (0.3, 0.5, 0.7):
            selection_step(s, x=x, z=s.pool[0])
        assert len(s.training_set) == 4

    def test_candidate_must_be_in_pool(self):
        s = self.fresh()
        with pytest.raises(ValueError):
            selection_step(s, x=0.5, z="nope")

    def test_disjointness_invariant(self):
        rng = np.random.default_rng(8)
        s = self.fresh()
        for _ in range(12):
            if not s.pool:
                break
            z = s.pool[int(rng.integers(len(s.pool)))]
            selection_step(s, x=float(rng.random()), z=z)
            assert not set(s.training_set) & set(s.pool)

    def test_forced_accept_flag(self):
        s = self.fresh()
        z1 = s.pool[0]
        selection_step(s, x=0.9, z=z1)
        z2 = s.pool[0]
        selection_step(s, x=0.95, z=z2, accept=False)  # user overrides
        assert z1 in s.pool and z2 in s.training_set
        assert s.x_prev == 0.9


class TestReplay:
    def test_replay_reproduces_state(self):
        rng = np.random.default_rng(9)
        s = selection_init([f"i{k}" for k in range(6)], seed=3)
        for _ in range(5):
            z = s.pool[int(rng.integers(len(s.pool)))]
            selection_step(s, x=float(rng.random()), z=z)
        replayed = replay_history(s.history)
        assert replayed.training_set == s.training_set
        assert replayed.pool == s.pool
        assert replayed.x_prev == s.x_prev and replayed.z_prev == s.z_prev

    def test_jsonl_round_trip(self):
        s = selection_init(["a", "b", "c"], seed=0)
        selection_step(s, x=0.5, z=s.pool[0])
        text = history_to_jsonl(s.history)
        entries = history_from_jsonl(text)
        assert entries == s.history
        replayed = replay_history(entries)
        assert replayed.to_dict() == s.to_dict()
