import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rotpsf.postproc import ClusterTolerance, Detection, centroid_cluster, \
    threshold_detections, voxel_detections

TOL = ClusterTolerance(lateral=2.0, axial=1.0)


def place(shape, entries):
    vol = np.zeros(shape)
    for (i, j, k), v in entries:
        vol[i, j, k] = v
    return vol


class TestCentroidCluster:
    def test_single_voxel(self):
        vol = place((8, 8, 4), [((3, 5, 2), 7.5)])
        dets = centroid_cluster(vol, TOL)
        assert len(dets) == 1
        assert (dets[0].x, dets[0].y, dets[0].z, dets[0].flux) == (3.0, 5.0, 2.0, 7.5)

    def test_two_equal_voxels_merge_to_midpoint(self):
        vol = place((8, 8, 4), [((1, 1, 1), 3.0), ((3, 1, 1), 3.0)])
        dets = centroid_cluster(vol, TOL)
        assert len(dets) == 1
        assert (dets[0].x, dets[0].y, dets[0].z) == (2.0, 1.0, 1.0)
        assert dets[0].flux == 6.0

    def test_distant_voxels_stay_separate(self):
        vol = place((12, 12, 4), [((1, 1, 1), 3.0), ((9, 1, 1), 2.0)])
        dets = centroid_cluster(vol, TOL)
        assert len(dets) == 2
        assert dets[0].flux == 3.0 and dets[1].flux == 2.0  # sorted by flux

    def test_axial_tolerance_is_separate(self):
        vol = place((8, 8, 8), [((4, 4, 1), 1.0), ((4, 4, 2), 1.0), ((4, 4, 5), 1.0)])
        dets = centroid_cluster(vol, TOL)
        assert len(dets) == 2

    def test_chained_absorption_is_transitive(self):
        vol = place((12, 8, 4), [((1, 1, 1), 5.0), ((3, 1, 1), 1.0), ((5, 1, 1), 1.0)])
        dets = centroid_cluster(vol, TOL)
        assert len(dets) == 1
        assert dets[0].flux == 7.0

    def test_weighted_centroid(self):
        vol = place((8, 8, 4), [((2, 2, 1), 1.0), ((4, 2, 1), 3.0)])
        dets = centroid_cluster(vol, TOL)
        assert dets[0].x == pytest.approx(3.5)
        assert dets[0].flux == 4.0

    def test_equal_maxima_deterministic(self):
        vol = place((16, 8, 4), [((1, 1, 1), 2.0), ((12, 1, 1), 2.0)])
        first = centroid_cluster(vol, TOL)
        second = centroid_cluster(vol.copy(), TOL)
        assert first == second
        assert len(first) == 2

    def test_rejects_negative_volume(self):
        with pytest.raises(ValueError):
            centroid_cluster(-np.ones((4, 4, 2)), TOL)

    def test_input_not_mutated(self):
        vol = place((8, 8, 4), [((3, 5, 2), 7.5)])
        before = vol.copy()
        centroid_cluster(vol, TOL)
        assert np.array_equal(vol, before)

    @given(hnp.arrays(np.float64, (9, 9, 5),
                      elements=st.floats(0, 100, allow_nan=False)))
    @settings(max_examples=60, deadline=None)
    def test_flux_conservation_and_partition(self, vol):
        dets = centroid_cluster(vol, TOL)
        total = sum(det.flux for det in dets)
        assert total == pytest.approx(vol.sum(), rel=1e-12, abs=1e-9)
        # Partition: cluster counts of voxels must cover every nonzero voxel once.
        n_nonzero = int(np.count_nonzero(vol))
        if n_nonzero:
            assert len(dets) >= 1
            assert len(dets) <= n_nonzero
        else:
            assert dets == []

    def test_fluxes_sorted_descending(self):
        vol = place((16, 16, 4), [((1, 1, 1), 2.0), ((8, 8, 2), 9.0), ((14, 2, 3), 4.0)])
        fluxes = [d.flux for d in centroid_cluster(vol, TOL)]
        assert fluxes == sorted(fluxes, reverse=True)


class TestThreshold:
    def test_five_percent_rule(self):
        dets = [Detection(0, 0, 0, 100.0), Detection(1, 1, 1, 60.0), Detection(2, 2, 2, 4.0)]
        kept = threshold_detections(dets, 0.05)
        assert [d.flux for d in kept] == [100.0, 60.0]

    def test_zero_fraction_is_identity(self):
        dets = [Detection(0, 0, 0, 10.0), Detection(1, 1, 1, 0.0)]
        assert threshold_detections(dets, 0.0) == dets

    def test_single_detection_always_kept(self):
        dets = [Detection(0, 0, 0, 1e-9)]
        assert threshold_detections(dets, 0.05) == dets

    def test_empty_input(self):
        assert threshold_detections([], 0.05) == []

    def test_boundary_kept(self):
        dets = [Detection(0, 0, 0, 100.0), Detection(1, 1, 1, 5.0)]
        assert len(threshold_detections(dets, 0.05)) == 2

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            threshold_detections([], 1.0)


class TestVoxelDetections:
    def test_lists_every_nonzero_voxel(self):
        vol = place((6, 6, 3), [((0, 0, 0), 1.0), ((5, 5, 2), 2.0)])
        dets = voxel_detections(vol)
        assert {(d.x, d.y, d.z, d.flux) for d in dets} == {(0, 0, 0, 1.0), (5, 5, 2, 2.0)}
