"""Tests for matching, candidate bags, mutual criteria and rank weighting."""

import math

import numpy as np
import pytest

from assignment import (
    UNASSIGNED,
    AssignConfig,
    PredictionSnapshot,
    bag_temperatures,
    build_candidate_bags,
    match_gt,
    musu_assign,
    mutual_criteria,
    rank_to_weights,
)
from errors import ConfigError, InvalidInputError
from geometry import GroundTruth

GT_BOX = [0.0, 0.0, 10.0, 10.0]
# Predicted boxes with IoU 0.9, 0.6 and 0.95 against GT_BOX.
THREE_PREDS = [[0.0, 0.0, 10.0, 9.0], [0.0, 0.0, 10.0, 6.0], [0.0, 0.0, 10.0, 9.5]]
THREE_CENTERS = [[2.0, 5.0], [5.0, 5.0], [8.0, 5.0]]


def _three_anchor_case(p=(0.8, 0.5, 0.3)):
    snapshot = PredictionSnapshot(probabilities=np.array(p)[:, None], boxes=THREE_PREDS)
    gt = GroundTruth(boxes=[GT_BOX], categories=[0])
    return snapshot, gt, np.array(THREE_CENTERS)


def _py_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def reference_assign(centers, probs, boxes, gt_boxes, gt_categories, cfg):
    """Loop-by-loop reimplementation used as an oracle."""
    n, m = len(centers), len(gt_boxes)
    matched = [UNASSIGNED] * n
    for i in range(n):
        best = None
        for j in range(m):
            x1, y1, x2, y2 = gt_boxes[j]
            cx, cy = centers[i]
            if not (x1 < cx < x2 and y1 < cy < y2):
                continue
            key = (_py_iou(boxes[i], gt_boxes[j]), -(x2 - x1) * (y2 - y1), -j)
            if best is None or key > best[0]:
                best = (key, j)
        if best is not None:
            matched[i] = best[1]

    assigned = [UNASSIGNED] * n
    rank_cls = [UNASSIGNED] * n
    rank_reg = [UNASSIGNED] * n
    w_cls = [0.0] * n
    w_reg = [0.0] * n
    for j in range(m):
        members = [i for i in range(n) if matched[i] == j]
        if not members:
            continue
        c = int(gt_categories[j])
        p = {i: float(probs[i][c]) for i in members}
        raw = {i: _py_iou(boxes[i], gt_boxes[j]) for i in members}
        q = {i: raw[i] ** cfg.theta for i in members}
        joint = {i: p[i] * q[i] for i in members}
        peak = max(joint.values())
        if peak > 0:
            bag = [i for i in members if joint[i] >= cfg.bag_threshold * peak]
            if cfg.criteria == "classification":
                v_cls = v_reg = {i: p[i] for i in bag}
            elif cfg.criteria == "regression":
                v_cls = v_reg = {i: q[i] for i in bag}
            else:
                v_cls = {i: q[i] * p[i] ** cfg.alpha for i in bag}
                v_reg = {i: p[i] * q[i] ** cfg.alpha for i in bag}
        else:
            bag = members
            v_cls = dict(raw)
            v_reg = dict(raw)
        tau_c = cfg.fixed_tau if cfg.fixed_tau is not None else math.sqrt(len(bag))
        tau_r = cfg.tau_ratio * tau_c
        for i in bag:
            r_c = sum(1 for k in bag if v_cls[k] > v_cls[i] or (v_cls[k] == v_cls[i] and k < i))
            r_r = sum(1 for k in bag if v_reg[k] > v_reg[i] or (v_reg[k] == v_reg[i] and k < i))
            assigned[i] = j
            rank_cls[i] = r_c
            rank_reg[i] = r_r
            if cfg.hard_targets:
                w_cls[i] = 1.0 if r_c < tau_c else 0.0
                w_reg[i] = 1.0 if r_r < tau_r else 0.0
            else:
                w_cls[i] = math.exp(-r_c / tau_c)
                w_reg[i] = math.exp(-r_r / tau_r)
    return matched, assigned, rank_cls, rank_reg, w_cls, w_reg


def random_instance(rng, max_anchors=64, max_objects=3, num_categories=3):
    n = int(rng.integers(1, max_anchors + 1))
    m = int(rng.integers(0, max_objects + 1))
    centers = rng.uniform(0.0, 32.0, size=(n, 2))
    half = rng.uniform(1.0, 10.0, size=(n, 4))
    boxes = np.concatenate([centers - half[:, :2], centers + half[:, 2:]], axis=1)
    probs = rng.uniform(0.0, 1.0, size=(n, num_categories))
    if rng.random() < 0.1:
        probs[:] = 0.0
    corner = rng.uniform(0.0, 20.0, size=(m, 2))
    size = rng.uniform(4.0, 16.0, size=(m, 2))
    gt = GroundTruth(boxes=np.concatenate([corner, corner + size], axis=1),
                     categories=rng.integers(0, num_categories, size=m))
    return PredictionSnapshot(probabilities=probs, boxes=boxes), gt, centers


def random_config(rng):
    return AssignConfig(
        theta=float(rng.choice([1.0, 2.0, 4.0, 6.0])),
        bag_threshold=float(rng.uniform(0.05, 0.9)),
        alpha=float(rng.choice([0.0, 1.0 / 6.0, 1.0 / 3.0, 0.5, 1.0])),
        tau_ratio=float(rng.choice([0.5, 1.0, 2.0])),
        hard_targets=bool(rng.random() < 0.5),
        fixed_tau=None if rng.random() < 0.5 else float(rng.uniform(0.5, 3.0)),
        criteria=str(rng.choice(["mutual", "mutual", "classification", "regression"])),
    )


def _bag_sets(output):
    return [set(int(a) for a in bag.members) for bag in output.bags]


class TestAssignConfig:

    def test_defaults(self):
        cfg = AssignConfig()
        assert cfg.theta == 4.0
        assert cfg.bag_threshold == 0.1
        assert cfg.alpha == pytest.approx(1.0 / 3.0)
        assert cfg.tau_ratio == 0.5
        assert not cfg.hard_targets

    @pytest.mark.parametrize("kwargs, field", [
        ({"theta": 0.5}, "assign.theta"),
        ({"bag_threshold": 1.0}, "assign.bag_threshold"),
        ({"alpha": 1.5}, "assign.alpha"),
        ({"tau_ratio": 0.0}, "assign.tau_ratio"),
        ({"fixed_tau": -1.0}, "assign.fixed_tau"),
        ({"criteria": "joint"}, "assign.criteria"),
    ])
    def test_rejects_out_of_range(self, kwargs, field):
        with pytest.raises(ConfigError) as info:
            AssignConfig(**kwargs)
        assert info.value.field_path == field


class TestPredictionSnapshot:

    def test_is_a_frozen_copy(self):
        probs = np.full((2, 1), 0.5)
        snapshot = PredictionSnapshot(probabilities=probs, boxes=np.zeros((2, 4)))
        probs[0, 0] = 0.9
        assert snapshot.probabilities[0, 0] == 0.5
        with pytest.raises(ValueError):
            snapshot.probabilities[0, 0] = 0.1

    def test_rejects_nan(self):
        with pytest.raises(InvalidInputError):
            PredictionSnapshot(probabilities=[[np.nan]], boxes=[[0, 0, 1, 1]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            PredictionSnapshot(probabilities=np.full((3, 2), 0.5), boxes=np.zeros((2, 4)))


class TestMatchGt:

    def test_single_containing_box(self):
        matches = match_gt([[5.0, 5.0]], [[4.0, 4.0, 6.0, 6.0]], [GT_BOX, [20.0, 20.0, 30.0, 30.0]])
        assert matches.tolist() == [0]

    def test_highest_iou_wins(self):
        gts = [[0.0, 0.0, 20.0, 20.0], [2.0, 2.0, 12.0, 12.0]]
        pred = [[2.0, 2.0, 12.0, 12.0]]
        matches = match_gt([[6.0, 6.0]], pred, gts)
        assert matches.tolist() == [1]

    def test_outside_every_box(self):
        matches = match_gt([[50.0, 50.0]], [[49.0, 49.0, 51.0, 51.0]], [GT_BOX])
        assert matches.tolist() == [UNASSIGNED]

    def test_center_on_edge_is_outside(self):
        matches = match_gt([[10.0, 5.0]], [[9.0, 4.0, 11.0, 6.0]], [GT_BOX])
        assert matches.tolist() == [UNASSIGNED]

    def test_zero_iou_tie_prefers_smaller_box(self):
        gts = [[0.0, 0.0, 20.0, 20.0], [4.0, 4.0, 8.0, 8.0]]
        far_pred = [[100.0, 100.0, 101.0, 101.0]]
        assert match_gt([[6.0, 6.0]], far_pred, gts).tolist() == [1]

    def test_equal_area_tie_prefers_lower_index(self):
        gts = [[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]]
        assert match_gt([[5.0, 5.0]], [[50.0, 50.0, 51.0, 51.0]], gts).tolist() == [0]


class TestCandidateBags:

    def test_three_member_bag(self):
        snapshot, gt, centers = _three_anchor_case()
        matches = match_gt(centers, snapshot.boxes, gt.boxes)
        (bag,) = build_candidate_bags(snapshot, matches, gt, AssignConfig())
        np.testing.assert_allclose(bag.ious, [0.9, 0.6, 0.95], atol=1e-12)
        np.testing.assert_allclose(bag.joint_likelihoods, [0.52488, 0.06480, 0.244351875], atol=1e-9)
        assert bag.threshold_t == pytest.approx(0.052488, abs=1e-12)
        assert bag.members.tolist() == [0, 1, 2]
        assert not bag.fallback

    def test_low_joint_likelihood_excluded(self):
        snapshot = PredictionSnapshot(
            probabilities=[[0.9], [0.01]],
            boxes=[[0.0, 0.0, 10.0, 9.0], [0.0, 0.0, 10.0, 3.0]],
        )
        gt = GroundTruth(boxes=[GT_BOX], categories=[0])
        matches = match_gt([[3.0, 5.0], [7.0, 5.0]], snapshot.boxes, gt.boxes)
        (bag,) = build_candidate_bags(snapshot, matches, gt, AssignConfig())
        np.testing.assert_allclose(bag.joint_likelihoods, [0.59049], atol=1e-12)
        assert bag.threshold_t == pytest.approx(0.059049, abs=1e-12)
        assert bag.members.tolist() == [0]

    def test_single_anchor_always_in_bag(self):
        snapshot = PredictionSnapshot(probabilities=[[0.2]], boxes=[[1.0, 1.0, 4.0, 4.0]])
        gt = GroundTruth(boxes=[GT_BOX], categories=[0])
        for b in (0.01, 0.5, 0.99):
            bags = build_candidate_bags(snapshot, np.array([0]), gt, AssignConfig(bag_threshold=b))
            assert bags[0].members.tolist() == [0]

    def test_zero_likelihood_falls_back_to_all_matched(self):
        snapshot, gt, centers = _three_anchor_case(p=(0.0, 0.0, 0.0))
        matches = match_gt(centers, snapshot.boxes, gt.boxes)
        (bag,) = build_candidate_bags(snapshot, matches, gt, AssignConfig())
        assert bag.fallback
        assert bag.members.tolist() == [0, 1, 2]

    def test_object_without_anchor_is_ignored(self):
        snapshot = PredictionSnapshot(probabilities=[[0.5]], boxes=[[0.0, 0.0, 1.0, 1.0]])
        gt = GroundTruth(boxes=[[20.0, 20.0, 30.0, 30.0]], categories=[0])
        (bag,) = build_candidate_bags(snapshot, np.array([UNASSIGNED]), gt, AssignConfig())
        assert bag.ignored

    def test_category_out_of_range(self):
        snapshot, _, centers = _three_anchor_case()
        gt = GroundTruth(boxes=[GT_BOX], categories=[3])
        with pytest.raises(InvalidInputError):
            build_candidate_bags(snapshot, np.zeros(3, dtype=int), gt, AssignConfig())


class TestMutualCriteria:

    def test_cube_root_example(self):
        v_cls, v_reg = mutual_criteria(0.512, 0.729, 1.0 / 3.0)
        assert v_cls == pytest.approx(0.5832, abs=1e-6)
        assert v_reg == pytest.approx(0.4608, abs=1e-6)

    def test_alpha_one_is_joint_likelihood(self):
        v_cls, v_reg = mutual_criteria(0.3, 0.7, 1.0)
        assert v_cls == pytest.approx(0.21)
        assert v_reg == pytest.approx(0.21)

    def test_alpha_zero_swaps_heads(self):
        v_cls, v_reg = mutual_criteria(0.3, 0.7, 0.0)
        assert v_cls == pytest.approx(0.7)
        assert v_reg == pytest.approx(0.3)

    def test_zero_to_the_zero_is_one(self):
        v_cls, v_reg = mutual_criteria(0.0, 0.0, 0.0)
        assert (v_cls, v_reg) == (0.0, 0.0)
        v_cls, _ = mutual_criteria(0.0, 0.5, 0.0)
        assert v_cls == 0.5

    def test_vectorized(self):
        v_cls, v_reg = mutual_criteria(np.array([0.512, 1.0]), np.array([0.729, 0.5]), 1.0 / 3.0)
        np.testing.assert_allclose(v_cls, [0.5832, 0.5], atol=1e-6)
        np.testing.assert_allclose(v_reg, [0.4608, 0.5 ** (1.0 / 3.0)], atol=1e-6)


class TestRankToWeights:

    def test_top_rank_weight_is_one(self):
        for tau in (0.5, 1.0, 7.0):
            ranks, weights = rank_to_weights([0.2, 0.9, 0.1], tau)
            assert ranks.tolist() == [1, 0, 2]
            assert weights[1] == 1.0

    def test_exponential_decay(self):
        _, weights = rank_to_weights([4.0, 3.0, 2.0, 1.0], tau=3.0)
        assert weights[3] == pytest.approx(0.367879, abs=1e-6)

    def test_hard_indicator(self):
        ranks, weights = rank_to_weights([3.0, 2.0, 1.0], tau=1.5, hard=True)
        assert ranks.tolist() == [0, 1, 2]
        assert weights.tolist() == [1.0, 1.0, 0.0]

    def test_ties_broken_by_position(self):
        ranks, _ = rank_to_weights([0.5, 0.7, 0.5, 0.5], tau=1.0)
        assert ranks.tolist() == [1, 0, 2, 3]

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            rank_to_weights([1.0], tau=0.0)
        with pytest.raises(InvalidInputError):
            rank_to_weights([np.inf], tau=1.0)

    def test_larger_temperature_gives_larger_weight(self):
        for rank in range(1, 6):
            small = math.exp(-rank / bag_temperatures(4, AssignConfig())[0])
            large = math.exp(-rank / bag_temperatures(16, AssignConfig())[0])
            assert large > small


class TestMusuAssign:

    def test_three_anchor_fixture_matches_oracle(self):
        snapshot, gt, centers = _three_anchor_case()
        cfg = AssignConfig()
        out = musu_assign(snapshot, gt, centers, cfg)
        _, assigned, r_cls, r_reg, w_cls, w_reg = reference_assign(
            centers, snapshot.probabilities, snapshot.boxes, gt.boxes, gt.categories, cfg
        )
        assert out.assigned_object.tolist() == assigned == [0, 0, 0]
        assert out.rank_cls.tolist() == r_cls == [0, 2, 1]
        assert out.rank_reg.tolist() == r_reg == [0, 2, 1]
        np.testing.assert_allclose(out.weight_cls, w_cls, rtol=1e-12)
        np.testing.assert_allclose(out.weight_reg, w_reg, rtol=1e-12)
        assert out.tau_cls[0] == pytest.approx(math.sqrt(3))
        assert out.tau_reg[0] == pytest.approx(math.sqrt(3) / 2)

    def test_bag_of_nine_temperatures(self):
        xs = [5.0, 15.0, 25.0]
        centers = np.array([[x, y] for y in xs for x in xs])
        box = [0.0, 0.0, 30.0, 30.0]
        snapshot = PredictionSnapshot(probabilities=np.full((9, 1), 0.5), boxes=[box] * 9)
        gt = GroundTruth(boxes=[box], categories=[0])
        out = musu_assign(snapshot, gt, centers)
        assert out.bags[0].size == 9
        assert out.tau_cls[0] == 3.0
        assert out.tau_reg[0] == 1.5
        assert sorted(out.rank_cls.tolist()) == list(range(9))

    def test_single_member_gets_full_weight(self):
        snapshot = PredictionSnapshot(probabilities=[[0.3], [0.3]],
                                      boxes=[[1.0, 1.0, 6.0, 6.0], [40.0, 40.0, 44.0, 44.0]])
        gt = GroundTruth(boxes=[GT_BOX], categories=[0])
        out = musu_assign(snapshot, gt, [[3.0, 3.0], [42.0, 42.0]])
        assert out.weight_cls.tolist() == [1.0, 0.0]
        assert out.weight_reg.tolist() == [1.0, 0.0]
        assert out.assigned_object.tolist() == [0, UNASSIGNED]

    def test_no_objects_is_pure_background(self):
        snapshot, _, centers = _three_anchor_case()
        out = musu_assign(snapshot, GroundTruth(), centers)
        assert np.all(out.assigned_object == UNASSIGNED)
        assert np.all(out.weight_cls == 0.0) and np.all(out.weight_reg == 0.0)
        assert out.bags == []

    def test_anchor_count_mismatch(self):
        snapshot, gt, _ = _three_anchor_case()
        with pytest.raises(InvalidInputError):
            musu_assign(snapshot, gt, np.zeros((2, 2)))

    def test_fixed_temperature(self):
        snapshot, gt, centers = _three_anchor_case()
        out = musu_assign(snapshot, gt, centers, AssignConfig(fixed_tau=5.0))
        assert out.tau_cls[0] == 5.0
        assert out.tau_reg[0] == 2.5

    def test_single_head_criteria_modes(self):
        snapshot, gt, centers = _three_anchor_case()
        by_cls = musu_assign(snapshot, gt, centers, AssignConfig(criteria="classification"))
        assert by_cls.rank_cls.tolist() == [0, 1, 2]
        assert by_cls.rank_reg.tolist() == [0, 1, 2]
        by_reg = musu_assign(snapshot, gt, centers, AssignConfig(criteria="regression"))
        assert by_reg.rank_cls.tolist() == [1, 2, 0]
        assert by_reg.rank_reg.tolist() == [1, 2, 0]

    def test_hard_targets_are_binary(self):
        snapshot, gt, centers = _three_anchor_case()
        out = musu_assign(snapshot, gt, centers, AssignConfig(hard_targets=True))
        # tau_cls = sqrt(3) keeps ranks 0 and 1; tau_reg = sqrt(3)/2 keeps rank 0 only.
        assert out.weight_cls.tolist() == [1.0, 0.0, 1.0]
        assert out.weight_reg.tolist() == [1.0, 0.0, 0.0]

    def test_records_for_inspection(self):
        snapshot, gt, centers = _three_anchor_case()
        records = musu_assign(snapshot, gt, centers).to_records()
        assert [r["anchor"] for r in records] == [0, 1, 2]
        assert set(records[0]) == {"object", "anchor", "p", "q", "P", "v_cls", "v_reg",
                                   "R_cls", "R_reg", "w_cls", "w_reg"}
        assert records[0]["P"] == pytest.approx(0.52488)

    def test_oracle_equivalence_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            cfg = random_config(rng)
            snapshot, gt, centers = random_instance(rng)
            out = musu_assign(snapshot, gt, centers, cfg)
            matched, assigned, r_cls, r_reg, w_cls, w_reg = reference_assign(
                centers, snapshot.probabilities, snapshot.boxes, gt.boxes, gt.categories, cfg
            )
            assert out.matched_object.tolist() == matched
            assert out.assigned_object.tolist() == assigned
            assert out.rank_cls.tolist() == r_cls
            assert out.rank_reg.tolist() == r_reg
            np.testing.assert_allclose(out.weight_cls, w_cls, rtol=1e-9, atol=0)
            np.testing.assert_allclose(out.weight_reg, w_reg, rtol=1e-9, atol=0)


class TestAssignmentInvariants:
    """Each property on 200 seeded random instances."""

    @pytest.fixture
    def instances(self):
        rng = np.random.default_rng(7)
        return [random_instance(rng) for _ in range(200)]

    def test_bags_are_disjoint_and_inside_their_box(self, instances):
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers)
            seen = set()
            for bag in out.bags:
                members = set(int(a) for a in bag.members)
                assert not members & seen
                seen |= members
                x1, y1, x2, y2 = gt.boxes[bag.object_index]
                for a in members:
                    assert x1 < centers[a, 0] < x2 and y1 < centers[a, 1] < y2
            positive = set(np.flatnonzero(out.weight_cls > 0).tolist())
            assert positive <= seen

    def test_argmax_joint_likelihood_is_included(self, instances):
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers)
            for bag in out.bags:
                matched = np.flatnonzero(out.matched_object == bag.object_index)
                if matched.size == 0:
                    continue
                p = snapshot.probabilities[matched, bag.category]
                ious = np.array([_py_iou(snapshot.boxes[a], gt.boxes[bag.object_index]) for a in matched])
                assert matched[int(np.argmax(p * ious**4))] in bag.members

    def test_bag_shrinks_as_threshold_grows(self, instances):
        for snapshot, gt, centers in instances:
            loose = _bag_sets(musu_assign(snapshot, gt, centers, AssignConfig(bag_threshold=0.1)))
            tight = _bag_sets(musu_assign(snapshot, gt, centers, AssignConfig(bag_threshold=0.4)))
            for small, big in zip(tight, loose):
                assert small <= big

    def test_ranks_are_permutations_and_weights_monotone(self, instances):
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers)
            for bag, v_cls, v_reg in zip(out.bags, out.criteria_cls, out.criteria_reg):
                if bag.ignored:
                    continue
                for ranks, weights, values in (
                    (out.rank_cls, out.weight_cls, v_cls),
                    (out.rank_reg, out.weight_reg, v_reg),
                ):
                    r = ranks[bag.members]
                    w = weights[bag.members]
                    assert sorted(r.tolist()) == list(range(bag.size))
                    for i in range(bag.size):
                        for k in range(bag.size):
                            if values[i] > values[k]:
                                assert r[i] < r[k] and w[i] > w[k]

    def test_alpha_one_gives_identical_rankings(self, instances):
        cfg = AssignConfig(alpha=1.0)
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers, cfg)
            np.testing.assert_array_equal(out.rank_cls, out.rank_reg)

    @pytest.mark.parametrize("scale", [0.5, 0.9])
    def test_uniform_score_scaling_is_invariant(self, instances, scale):
        for snapshot, gt, centers in instances:
            base = musu_assign(snapshot, gt, centers)
            scaled_snapshot = PredictionSnapshot(probabilities=snapshot.probabilities * scale,
                                                 boxes=snapshot.boxes)
            scaled = musu_assign(scaled_snapshot, gt, centers)
            assert _bag_sets(scaled) == _bag_sets(base)
            np.testing.assert_array_equal(scaled.rank_cls, base.rank_cls)
            np.testing.assert_array_equal(scaled.rank_reg, base.rank_reg)
            np.testing.assert_allclose(scaled.weight_cls, base.weight_cls, rtol=1e-12)
            np.testing.assert_allclose(scaled.weight_reg, base.weight_reg, rtol=1e-12)

    def test_adaptive_temperatures_are_exact(self, instances):
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers)
            for bag in out.bags:
                if bag.ignored:
                    assert np.isnan(out.tau_cls[bag.object_index])
                    continue
                assert out.tau_cls[bag.object_index] == math.sqrt(bag.size)
                assert out.tau_reg[bag.object_index] == math.sqrt(bag.size) / 2

    def test_each_bag_has_one_top_ranked_member(self, instances):
        for snapshot, gt, centers in instances:
            out = musu_assign(snapshot, gt, centers)
            for bag in out.bags:
                if bag.ignored:
                    continue
                assert np.count_nonzero(out.rank_cls[bag.members] == 0) == 1
                assert np.count_nonzero(out.rank_reg[bag.members] == 0) == 1
