import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlusionbench.datamodel import Pose3D
from occlusionbench.errors import ValidationError
from occlusionbench.metrics import (
    ErrorRecord,
    GroupStats,
    aggregate,
    mpjpe,
    read_records_jsonl,
    root_align,
    write_aggregate_csv,
    write_records_jsonl,
)


def random_pose(rng, joints=17, depth=4000.0):
    j = rng.normal(0, 300, size=(joints, 3))
    j[:, 2] += depth
    return Pose3D(j)


class TestRootAlign:
    def test_root_becomes_origin(self):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        aligned = root_align(pose, 0)
        np.testing.assert_array_equal(aligned.joints_mm[0], [0.0, 0.0, 0.0])

    def test_already_rooted_unchanged(self):
        joints = np.random.default_rng(1).normal(size=(5, 3))
        joints[2] = 0.0
        pose = Pose3D(joints)
        np.testing.assert_array_equal(root_align(pose, 2).joints_mm, joints)

    def test_idempotent(self):
        pose = random_pose(np.random.default_rng(2))
        once = root_align(pose, 0)
        twice = root_align(once, 0)
        np.testing.assert_array_equal(once.joints_mm, twice.joints_mm)


class TestMPJPE:
    def test_identical_poses_zero(self):
        pose = random_pose(np.random.default_rng(3))
        assert mpjpe(pose, pose, 0) == 0.0

    def test_global_translation_invariance(self):
        # integer-valued coordinates keep the float additions exact,
        # so the invariance asserts to exactly zero
        rng = np.random.default_rng(4)
        joints = rng.integers(-500, 500, size=(17, 3)).astype(np.float64)
        joints[:, 2] += 4000
        gt = Pose3D(joints)
        shifted = Pose3D(joints + np.array([123.0, -45.0, 600.0]))
        assert mpjpe(shifted, gt, 0) == 0.0

    def test_global_translation_invariance_random_floats(self):
        rng = np.random.default_rng(4)
        gt = random_pose(rng)
        shifted = Pose3D(gt.joints_mm + np.array([123.0, -45.0, 600.0]))
        assert mpjpe(shifted, gt, 0) < 1e-9  # only float rounding remains

    def test_translation_of_one_side_alone(self):
        rng = np.random.default_rng(5)
        joints = rng.integers(-500, 500, size=(17, 3)).astype(np.float64)
        joints[:, 2] += 4000
        gt = Pose3D(joints)
        pred = Pose3D(joints + np.array([50.0, 0.0, 0.0]))
        assert mpjpe(pred, gt, 0) == 0.0  # root alignment removes it

    def test_one_joint_off_by_17mm(self):
        joints = np.zeros((17, 3))
        joints[:, 2] = 4000.0
        gt = Pose3D(joints)
        pred_joints = joints.copy()
        pred_joints[5, 0] += 17.0
        assert mpjpe(Pose3D(pred_joints), gt, 0, include_root=True) == pytest.approx(1.0, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a, b = random_pose(rng), random_pose(rng)
        assert mpjpe(a, b, 0) == pytest.approx(mpjpe(b, a, 0), abs=1e-12)

    def test_include_root_scaling_exact(self):
        rng = np.random.default_rng(7)
        pred, gt = random_pose(rng), random_pose(rng)
        with_root = mpjpe(pred, gt, 0, include_root=True)
        without_root = mpjpe(pred, gt, 0, include_root=False)
        assert with_root == without_root * 16 / 17

    def test_not_rotation_invariant(self):
        rng = np.random.default_rng(8)
        gt = random_pose(rng)
        aligned = root_align(gt, 0).joints_mm
        rotated = aligned @ np.diag([-1.0, -1.0, 1.0]).T  # 180 deg about camera z
        pred = Pose3D(rotated + gt.joints_mm[0])
        assert mpjpe(pred, gt, 0) > 1.0

    def test_joint_count_mismatch(self):
        with pytest.raises(ValidationError):
            mpjpe(Pose3D(np.zeros((4, 3))), Pose3D(np.zeros((5, 3))), 0)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_nonnegativity_property(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pose(rng, joints=7), random_pose(rng, joints=7)
        forward = mpjpe(a, b, 0)
        assert forward >= 0
        assert forward == pytest.approx(mpjpe(b, a, 0), rel=1e-12)


def _record(frame_id, action, kind, degree, errors):
    return ErrorRecord(
        frame_id=frame_id, action=action, occlusion_kind=kind, degree=degree,
        mpjpe_mm=float(np.mean(errors)), per_joint_mm=tuple(errors),
    )


class TestAggregate:
    def test_singleton_group(self):
        rows = aggregate([_record(0, "walk", "none", 0.0, [5.0, 7.0])], group_by=("action",))
        assert rows == [GroupStats(group=("walk",), mean_mm=6.0, std_mm=0.0, count=1)]

    def test_population_std(self):
        records = [_record(i, "walk", "none", 0.0, [v]) for i, v in enumerate([10.0, 20.0, 30.0])]
        rows = aggregate(records, group_by=("action",))
        assert rows[0].mean_mm == pytest.approx(20.0)
        assert rows[0].std_mm == pytest.approx(np.sqrt(200.0 / 3.0))

    def test_grouping_matches_brute_force(self):
        rng = np.random.default_rng(10)
        actions = ["walk", "wave", "turn"]
        kinds = ["circles", "bars"]
        records = []
        for i in range(200):
            records.append(
                _record(i, actions[rng.integers(3)], kinds[rng.integers(2)],
                        float(rng.integers(0, 3)) / 10, list(rng.uniform(0, 50, size=4)))
            )
        rows = aggregate(records, group_by=("occlusion_kind", "degree"))
        for row in rows:
            values = [r.mpjpe_mm for r in records
                      if (r.occlusion_kind, r.degree) == row.group]
            assert row.count == len(values)
            assert row.mean_mm == pytest.approx(float(np.mean(values)), rel=1e-12)
            assert row.std_mm == pytest.approx(float(np.std(values)), rel=1e-9, abs=1e-12)

    def test_deterministic_ordering(self):
        records = [
            _record(0, "b", "none", 0.0, [1.0]),
            _record(1, "a", "none", 0.0, [2.0]),
            _record(2, "c", "none", 0.0, [3.0]),
        ]
        rows = aggregate(records, group_by=("action",))
        assert [r.group for r in rows] == [("a",), ("b",), ("c",)]

    def test_empty_records_rejected(self):
        with pytest.raises(ValidationError):
            aggregate([])


class TestErrorRecord:
    def test_mean_invariant_enforced(self):
        with pytest.raises(ValidationError):
            ErrorRecord(0, "walk", "none", 0.0, mpjpe_mm=99.0, per_joint_mm=(1.0, 2.0))

    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        records = [
            _record(i, "walk", "circles", 0.3, list(rng.uniform(0, 30, size=3))) for i in range(5)
        ]
        path = tmp_path / "records.jsonl"
        write_records_jsonl(records, path)
        loaded = read_records_jsonl(path)
        assert loaded == records

    def test_csv_header(self, tmp_path):
        rows = aggregate([_record(0, "walk", "none", 0.0, [5.0])], group_by=("action",))
        path = tmp_path / "table.csv"
        write_aggregate_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "group,mean_mm,std_mm,count"
        assert lines[1].startswith("walk,")
