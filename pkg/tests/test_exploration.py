"""Exploration path geometry: heights, RMQ, distances."""

import numpy as np
import pytest

from crittree import OutOfRangeError, SimConfig, binary_model, simulate_tree, two_type_model
from crittree.exploration import (
    RMQIndex,
    explore,
    height_and_state,
    label_lex_meet,
    range_min_height,
    tree_distance,
    tree_distance_batch,
)
from crittree.genealogy import ParticleRecord, Tree


def hand_tree(a=1.0, b=2.0, c=3.0, state=0):
    """Root of lifetime a with two childless children of lifetimes b and c."""
    recs = [
        ParticleRecord(label=(), parent=-1, sibling_rank=0, birth=0.0,
                       death=a, birth_state=state, death_state=state,
                       skeleton=(), children_states=(state, state)),
        ParticleRecord(label=(1,), parent=0, sibling_rank=0, birth=a,
                       death=a + b, birth_state=state, death_state=state,
                       skeleton=(), children_states=()),
        ParticleRecord(label=(2,), parent=0, sibling_rank=1, birth=a,
                       death=a + c, birth_state=state, death_state=state,
                       skeleton=(), children_states=()),
    ]
    return Tree(records=recs, root_state=state, horizon=None,
                length_budget=None, horizon_censored=False,
                budget_censored=False, dropped_subtrees=0)


def single_particle_tree(ell=2.0, state=0):
    recs = [ParticleRecord(label=(), parent=-1, sibling_rank=0, birth=0.0,
                           death=ell, birth_state=state, death_state=state,
                           skeleton=(), children_states=())]
    return Tree(records=recs, root_state=state, horizon=None,
                length_budget=None, horizon_censored=False,
                budget_censored=False, dropped_subtrees=0)


class TestExplore:
    def test_single_particle(self):
        path = explore(single_particle_tree(2.5))
        assert path.total_length == 2.5
        assert path.n_segments == 1

    def test_hand_tree_sigma_tau(self):
        path = explore(hand_tree(1.0, 2.0, 3.0))
        assert path.seg_start == pytest.approx([0.0, 1.0, 3.0])
        assert path.total_length == pytest.approx(6.0)

    def test_forest_offsets(self):
        path = explore([single_particle_tree(1.5), single_particle_tree(2.5)])
        assert path.forest
        assert path.seg_start == pytest.approx([0.0, 1.5])
        assert path.total_length == pytest.approx(4.0)

    def test_length_equals_sum_of_lifetimes(self):
        tree = simulate_tree(binary_model(), 0, SimConfig(seed=8, length_budget=200.0))
        path = explore(tree)
        assert path.total_length == pytest.approx(
            sum(r.lifetime for r in tree.records), abs=1e-12)


class TestHeightAndState:
    def test_at_zero(self):
        path = explore(hand_tree())
        label, h, state = height_and_state(path, 0.0)
        assert label == () and h == 0.0 and state == 0

    def test_single_particle_identity(self):
        path = explore(single_particle_tree(2.0))
        for t in (0.0, 0.3, 1.9):
            _, h, _ = height_and_state(path, t)
            assert h == pytest.approx(t)

    def test_hand_tree_second_child(self):
        path = explore(hand_tree(1.0, 2.0, 3.0))
        eps = 0.25
        label, h, _ = height_and_state(path, 1.0 + 2.0 + eps)
        assert label == (2,)
        assert h == pytest.approx(1.0 + eps)

    def test_out_of_range(self):
        path = explore(single_particle_tree(1.0))
        with pytest.raises(OutOfRangeError):
            height_and_state(path, 1.0)
        with pytest.raises(OutOfRangeError):
            height_and_state(path, -0.1)

    def test_state_follows_skeleton(self):
        tree = simulate_tree(two_type_model(), 0,
                             SimConfig(seed=15, length_budget=100.0))
        path = explore(tree)
        # states read from exploration match the records' own skeletons
        rng = np.random.default_rng(0)
        for t in rng.uniform(0, path.total_length, 50):
            label, h, state = height_and_state(path, t)
            rec = tree.records[tree.index_of(label)]
            assert rec.state_at(h) == state


class TestTreeDistance:
    def test_same_point_zero(self):
        path = explore(hand_tree())
        d, _, _ = tree_distance(path, 2.0, 2.0)
        assert d == 0.0

    def test_single_particle_absolute_difference(self):
        path = explore(single_particle_tree(3.0))
        d, _, mrca = tree_distance(path, 0.5, 2.0)
        assert d == pytest.approx(1.5)
        assert mrca == (0, 0)

    def test_hand_tree_leaf_tips(self):
        a, b, c = 1.0, 2.0, 3.0
        path = explore(hand_tree(a, b, c))
        tip1 = a + b - 1e-9
        tip2 = a + b + c - 1e-9
        d, argmin, mrca = tree_distance(path, tip1, tip2)
        assert d == pytest.approx(b + c, abs=1e-6)
        assert mrca == (0, 0)  # the root
        assert argmin == pytest.approx(a + b)  # second child's segment start

    def test_mrca_matches_label_meet(self):
        tree = simulate_tree(binary_model(), 0,
                             SimConfig(seed=23, length_budget=400.0))
        path = explore(tree)
        rng = np.random.default_rng(5)
        for _ in range(300):
            s, t = rng.uniform(0, path.total_length, 2)
            _, _, mrca = tree_distance(path, s, t)
            la = height_and_state(path, s)[0]
            lb = height_and_state(path, t)[0]
            meet = label_lex_meet(la, lb)
            assert tree.records[mrca[1]].label == meet

    def test_forest_cross_tree_distance(self):
        path = explore([single_particle_tree(1.0), single_particle_tree(1.0)])
        d, _, mrca = tree_distance(path, 0.5, 1.5)
        assert d == pytest.approx(1.0)
        assert mrca is None

    def test_pseudometric_axioms_random_triples(self):
        tree = simulate_tree(binary_model(), 0,
                             SimConfig(seed=41, length_budget=500.0))
        path = explore(tree)
        rng = np.random.default_rng(7)
        n = 10_000
        s = rng.uniform(0, path.total_length, n)
        t = rng.uniform(0, path.total_length, n)
        u = rng.uniform(0, path.total_length, n)
        dst = tree_distance_batch(path, s, t)
        dts = tree_distance_batch(path, t, s)
        dtu = tree_distance_batch(path, t, u)
        dsu = tree_distance_batch(path, s, u)
        dss = tree_distance_batch(path, s, s)
        assert np.allclose(dst, dts)
        assert np.all(dss == 0.0)
        assert np.all(dsu <= dst + dtu + 1e-9)
        assert np.all(dst >= 0)

    def test_batch_matches_scalar(self):
        tree = simulate_tree(two_type_model(), 0,
                             SimConfig(seed=42, length_budget=150.0))
        path = explore(tree)
        rng = np.random.default_rng(8)
        s = rng.uniform(0, path.total_length, 200)
        t = rng.uniform(0, path.total_length, 200)
        batch = tree_distance_batch(path, s, t)
        scalar = np.array([tree_distance(path, a, b)[0] for a, b in zip(s, t)])
        assert np.allclose(batch, scalar)


class TestRMQ:
    def test_against_linear_scan(self):
        rng = np.random.default_rng(11)
        vals = rng.uniform(0, 1, 700)
        idx = RMQIndex(vals)
        for _ in range(1000):
            i, j = sorted(rng.integers(0, 700, 2))
            v, a = idx.query(int(i), int(j))
            expect = vals[i:j + 1].min()
            assert v == expect
            assert a == i + int(np.argmin(vals[i:j + 1]))

    def test_range_min_against_segment_scan(self):
        tree = simulate_tree(binary_model(), 0,
                             SimConfig(seed=51, length_budget=300.0))
        path = explore(tree)
        rng = np.random.default_rng(12)
        for _ in range(200):
            s, t = sorted(rng.uniform(0, path.total_length, 2))
            got, _, _, _ = range_min_height(path, s, t)
            # independent linear scan over segments overlapping [s, t]
            i, j = path.segment_of(s), path.segment_of(t)
            best = path.height_at(s)
            for k in range(i + 1, j + 1):
                best = min(best, path.birth_height[k])
            assert got == pytest.approx(best, abs=1e-12)

    def test_downward_jumps_only(self):
        tree = simulate_tree(binary_model(), 0,
                             SimConfig(seed=52, length_budget=300.0))
        path = explore(tree)
        seg_end_heights = path.birth_height + path.seg_len
        assert np.all(path.birth_height[1:] <= seg_end_heights[:-1] + 1e-12)


class TestHeightExport:
    def test_csv_roundtrip(self, tmp_path):
        path = explore(hand_tree())
        from crittree.exploration import export_height_csv
        f = tmp_path / "h.csv"
        with open(f, "w") as fh:
            export_height_csv(path, fh)
        lines = f.read_text().strip().split("\n")
        assert lines[0] == "t,height"
        assert len(lines) == 1 + 2 * path.n_segments
