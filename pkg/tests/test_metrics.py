import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcsr.assignment import hungarian
from pcsr.metrics import (
    MetricReport,
    cd_metric,
    deviation,
    emd_details,
    emd_metric,
    estimate_surface_area,
    evaluate,
    fscore,
    uniformity_nuc,
)

from helpers import brute_force_emd, random_rotation_matrix


def planar_grid(nx, ny, x_extent=1.0, y_extent=1.0):
    xs = np.linspace(0.0, x_extent, nx)
    ys = np.linspace(0.0, y_extent, ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)])


class TestCd:
    def test_identical_zero(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert cd_metric(pts, pts.copy()) == 0.0

    def test_hand_case(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        assert cd_metric(a, b) == 2.0  # 1 + 1

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(15, 3))
        b = rng.normal(size=(9, 3))
        assert cd_metric(a, b) == cd_metric(b, a)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            cd_metric(np.zeros((0, 3)), np.zeros((1, 3)))


class TestEmd:
    def test_identical_zero(self):
        pts = np.random.default_rng(2).normal(size=(12, 3))
        assert emd_metric(pts, pts.copy()) == 0.0

    def test_hand_two_pair_case(self):
        a = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        assert emd_metric(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_matches_exhaustive_permutations(self):
        rng = np.random.default_rng(3)
        for trial in range(200):
            n = int(rng.integers(1, 7))
            a = rng.normal(size=(n, 3))
            b = rng.normal(size=(n, 3))
            assert emd_metric(a, b) == pytest.approx(brute_force_emd(a, b), rel=1e-10), (
                f"trial {trial}"
            )

    def test_size_mismatch_raises(self):
        with pytest.raises(ValueError):
            emd_metric(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_size_cap_raises(self):
        with pytest.raises(ValueError):
            emd_metric(np.zeros((4097, 3)), np.zeros((4097, 3)))

    def test_cost_invariant_to_point_order(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(10, 3))
        base = emd_metric(a, b)
        perm = rng.permutation(10)
        assert emd_metric(a[perm], b) == pytest.approx(base, rel=1e-12)
        assert emd_metric(a, b[perm]) == pytest.approx(base, rel=1e-12)

    def test_auction_route_close_to_exact(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(64, 3))
        b = rng.normal(size=(64, 3))
        value, eps, exact = emd_details(a, b, exact_limit=16)
        assert not exact and eps > 0
        reference = emd_metric(a, b)  # exact route
        assert value <= reference + eps
        assert value >= reference - 1e-12

    def test_at_least_one_sided_mean_distance(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(20, 3))
        b = rng.normal(size=(20, 3))
        lower = max(
            np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1).mean(),
            np.sqrt(((b[:, None, :] - a[None, :, :]) ** 2).sum(-1)).min(axis=1).mean(),
        )
        assert emd_metric(a, b) >= lower - 1e-12


class TestFscore:
    def test_identical_is_one(self):
        pts = np.random.default_rng(7).normal(size=(25, 3))
        assert fscore(pts, pts.copy(), tau=1e-6) == 1.0

    def test_hand_case(self):
        gt = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        pred = np.array([[0.0, 0.0, 0.0]])
        assert fscore(gt, pred, tau=0.5) == pytest.approx(2.0 / 3.0)

    def test_disjoint_far_clouds_zero(self):
        gt = np.zeros((4, 3))
        pred = np.zeros((4, 3)) + 100.0
        assert fscore(gt, pred, tau=0.5) == 0.0

    def test_bad_tau_raises(self):
        with pytest.raises(ValueError):
            fscore(np.zeros((1, 3)), np.zeros((1, 3)), tau=0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=0.01, max_value=1.0), st.floats(min_value=0.0, max_value=2.0))
    def test_monotone_in_tau(self, tau, delta):
        rng = np.random.default_rng(8)
        gt = rng.normal(size=(15, 3))
        pred = rng.normal(size=(12, 3))
        assert fscore(gt, pred, tau + delta + 1e-9) >= fscore(gt, pred, tau)


class TestUniformity:
    def test_area_estimate_on_unit_square(self):
        ref = planar_grid(100, 100)
        area = estimate_surface_area(ref)
        assert area == pytest.approx(1.0, rel=0.2)

    def test_uniform_grid_beats_collapsed_half(self):
        ref = planar_grid(100, 100)
        uniform = planar_grid(20, 20)
        collapsed = planar_grid(20, 20, x_extent=0.5)
        nuc_uniform = uniformity_nuc(uniform, ref, num_disks=16)
        nuc_collapsed = uniformity_nuc(collapsed, ref, num_disks=16)
        assert (nuc_uniform < nuc_collapsed).all()

    def test_single_location_is_most_dispersed(self):
        ref = planar_grid(100, 100)
        uniform = planar_grid(20, 20)
        collapsed = planar_grid(20, 20, x_extent=0.5)
        point_mass = np.tile(np.array([[0.5, 0.5, 0.0]]), (400, 1))
        nuc_point = uniformity_nuc(point_mass, ref, num_disks=16)
        assert (nuc_point > uniformity_nuc(uniform, ref, num_disks=16)).all()
        assert (nuc_point > uniformity_nuc(collapsed, ref, num_disks=16)).all()

    def test_duplication_leaves_values_unchanged(self):
        ref = planar_grid(100, 100)
        cloud = planar_grid(20, 20)
        doubled = np.vstack([cloud, cloud])
        base = uniformity_nuc(cloud, ref, num_disks=16)
        dup = uniformity_nuc(doubled, ref, num_disks=16)
        assert np.array_equal(base, dup)

    def test_sparse_reference_raises(self):
        with pytest.raises(ValueError):
            uniformity_nuc(planar_grid(20, 20), planar_grid(20, 20), num_disks=4)


class TestDeviation:
    def test_subset_gives_zero(self):
        rng = np.random.default_rng(9)
        ref = rng.normal(size=(50, 3))
        mean, std = deviation(ref[:10], ref)
        assert mean == 0.0 and std == 0.0

    def test_point_above_dense_grid(self):
        ref = planar_grid(101, 101)  # spacing 0.01
        cloud = np.array([[0.505, 0.505, 0.1]])
        mean, std = deviation(cloud, ref)
        assert 0.1 <= mean <= 0.1005
        assert std == 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(10)
        cloud = rng.normal(size=(8, 3))
        ref = rng.normal(size=(40, 3))
        t = np.array([5.0, -2.0, 1.0])
        assert deviation(cloud + t, ref + t)[0] == pytest.approx(deviation(cloud, ref)[0], abs=1e-10)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            deviation(np.zeros((0, 3)), np.zeros((2, 3)))


class TestRigidMotionInvariance:
    def test_all_metrics(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(18, 3))
        b = rng.normal(size=(18, 3))
        rot = random_rotation_matrix(rng)
        t = rng.normal(size=3)
        a2, b2 = a @ rot.T + t, b @ rot.T + t
        assert cd_metric(a2, b2) == pytest.approx(cd_metric(a, b), abs=1e-10)
        assert emd_metric(a2, b2) == pytest.approx(emd_metric(a, b), abs=1e-10)
        assert fscore(a2, b2, 0.5) == fscore(a, b, 0.5)
        assert deviation(a2, b2)[0] == pytest.approx(deviation(a, b)[0], abs=1e-10)


class TestEvaluate:
    def test_perfect_prediction(self):
        pts = np.random.default_rng(12).normal(size=(30, 3))
        report = evaluate(pts, pts.copy())
        assert report.cd == 0.0 and report.emd == 0.0 and report.fscore == 1.0

    def test_emd_absent_on_size_mismatch(self):
        rng = np.random.default_rng(13)
        report = evaluate(rng.normal(size=(10, 3)), rng.normal(size=(12, 3)))
        assert report.emd is None
        assert isinstance(report, MetricReport)

    def test_reference_fills_nuc_and_deviation(self):
        ref = planar_grid(100, 100)
        pred = planar_grid(20, 20)
        gt = planar_grid(21, 21)
        report = evaluate(pred, gt, ref, num_disks=12)
        assert len(report.nuc) == 5
        assert report.deviation_mean is not None


def test_hungarian_assignment_used_by_emd_is_optimal_vs_scipy():
    from scipy.optimize import linear_sum_assignment

    rng = np.random.default_rng(14)
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(40, 3))
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    rows, cols = linear_sum_assignment(d)
    assert emd_metric(a, b) == pytest.approx(d[rows, cols].mean(), rel=1e-12)
    col = hungarian(d)
    assert d[np.arange(40), col].mean() == pytest.approx(d[rows, cols].mean(), rel=1e-12)
