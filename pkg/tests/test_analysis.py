import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcable import analysis, pod
from flexcable.analysis import (
    PointCloudRecording, ReleaseExperiment, identification_residual, identify_params, metric_e1_e2, metric_em,
    metric_es, metric_et, metric_exp, metric_fe, pinned_equilibrium,
)
from flexcable.errors import DimensionMismatch, GridMismatch, InvalidRecording
from flexcable.fdm import FdmState
from flexcable.params import CableParams, experiment_cable
from flexcable.rom import RomModel


def _series(T=6, n=100, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(T, n + 1, 3))


class TestModelMetrics:
    def test_identical(self):
        fdm = _series()
        assert metric_em(fdm, fdm[:, ::10]) == 0.0
        assert metric_e1_e2(fdm[0], fdm[1], fdm[0, ::10], fdm[1, ::10]) == (0.0, 0.0)

    def test_constant_offset(self):
        fdm = _series()
        rom = fdm[:, ::10] + np.array([0.0, 0.001, 0.0])
        assert metric_em(fdm, rom) == pytest.approx(0.01, rel=1e-12)

    def test_velocity_only(self):
        fdm = _series(2)
        e1, e2 = metric_e1_e2(fdm[0], fdm[1], fdm[0, ::10], fdm[1, ::10] + 0.1)
        assert e1 == 0.0 and e2 > 0

    def test_grid_mismatch(self):
        fdm = _series(3, 100)
        with pytest.raises(GridMismatch):
            metric_em(fdm, np.zeros((3, 8, 3)))
        with pytest.raises(GridMismatch):
            metric_em(fdm, fdm[:, ::10], np.arange(3.0), np.arange(3.0) + 0.01)
        with pytest.raises(GridMismatch):
            analysis.grid_map(100, 7)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nonnegative_zero_iff_equal(self, seed):
        a = _series(4, 20, seed)
        b = _series(4, 20, seed + 1)[:, ::2]
        assert metric_em(a, b) > 0
        assert metric_em(a, a[:, ::2]) == 0


class TestStateMetrics:
    def test_examples(self):
        Q = np.array([1.0, 2.0, 7.0])
        assert metric_es(np.zeros(3), np.zeros(3), Q) == 0.0
        assert metric_es(np.zeros(3), [0, 0, 1.0], Q) == 7.0
        X = np.zeros((5, 3))
        R = np.tile([0, 1.0, 0], (5, 1))
        assert metric_et(X, R, Q) == 2.0
        assert metric_fe(X, R, Q) == 10.0

    def test_full_matrix(self):
        Q = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert metric_es([0, 0], [1.0, 1.0], Q) == 6.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            metric_es(np.zeros(3), np.zeros(4), np.ones(3))
        with pytest.raises(DimensionMismatch):
            metric_es(np.zeros(3), np.zeros(3), np.ones(4))
        with pytest.raises(DimensionMismatch):
            metric_et(np.zeros(3), np.zeros(3), np.ones(3))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_et_is_mean_of_es(self, seed):
        rng = np.random.default_rng(seed)
        X, R, Q = rng.normal(size=(9, 24)), rng.normal(size=(9, 24)), rng.random(24)
        es = [metric_es(x, r, Q) for x, r in zip(X, R)]
        assert abs(metric_et(X, R, Q) - np.mean(es)) < 1e-12
        assert min(es) >= 0

    def test_settle_time(self):
        t = np.arange(6.0)
        assert analysis.settle_time(t, [1, 0.5, 0.2, 0.05, 0.3, 0.01], 0.1) == 5.0
        assert analysis.settle_time(t, [0.01] * 6, 0.1) == 0.0
        assert analysis.settle_time(t, [1.0] * 6, 0.1) == np.inf


class TestRecording:
    def test_invalid(self):
        with pytest.raises(InvalidRecording):
            PointCloudRecording(np.zeros(0), np.zeros((0, 11, 3)), 0.1)
        with pytest.raises(InvalidRecording):
            PointCloudRecording([0, 0.01, 0.03], np.zeros((3, 11, 3)), 0.1)
        with pytest.raises(InvalidRecording):
            PointCloudRecording([0, 0.01], np.zeros((2, 1, 3)), 0.1)
        with pytest.raises(InvalidRecording):
            identify_params(PointCloudRecording([0.0], np.zeros((1, 11, 3)), 0.1), CableParams(), (0.01, 1e5))

    def test_grid(self):
        rec = PointCloudRecording([0, 0.01], np.zeros((2, 11, 3)), 0.1)
        assert np.array_equal(analysis.marker_nodes(rec, 1.0, 50), np.arange(11) * 5)
        with pytest.raises(GridMismatch):
            analysis.marker_nodes(rec, 1.0, 15)
        with pytest.raises(GridMismatch):
            analysis.match_frames(rec, np.array([0.0]))


@pytest.fixture(scope="module")
def release():
    exp = ReleaseExperiment(duration=2.0)
    times, pos = exp.rollout(CableParams())
    return exp, times, pos


class TestExperimentMetric:
    def test_self_is_zero(self, release):
        exp, times, pos = release
        rec = PointCloudRecording(times, pos[:, ::5], 0.1)
        assert np.all(metric_exp(rec, times, pos, 1.0) == 0)

    def test_noise_floor(self, release):
        exp, times, pos = release
        sigma = 0.005
        noisy = pos[:, ::5].copy()
        noisy[:, 1:] += np.random.default_rng(3).normal(0, sigma, noisy[:, 1:].shape)
        m = metric_exp(PointCloudRecording(times, noisy, 0.1), times, pos, 1.0)
        # mean of |N(0, sigma^2 I_3)| is sigma sqrt(8 / pi)
        assert np.mean(m) == pytest.approx(sigma * np.sqrt(8 / np.pi), rel=0.03)

    def test_rom_exceeds_fdm(self, release, bank, cable):
        exp, times, pos = release
        noisy = pos[:, ::5].copy()
        noisy[:, 1:] += np.random.default_rng(4).normal(0, 0.005, noisy[:, 1:].shape)
        rec = PointCloudRecording(times, noisy, 0.1)
        model = RomModel.build(bank, cable)
        x0 = pod.project(pos[0], np.zeros_like(pos[0]), bank).to_vector()
        xs = model.rollout(x0, np.zeros((len(times) - 1, 3)), times[1] - times[0])
        rom = np.array([pod.reconstruct(model.to_state(x), bank) for x in xs])
        fdm_m = metric_exp(rec, times, pos, 1.0)
        rom_m = metric_exp(rec, times, rom, 1.0)
        late = times >= 1.0
        assert np.mean(rom_m[late]) > np.mean(fdm_m[late])


class TestIdentification:
    def test_pinned_equilibrium(self):
        c = CableParams()
        p = pinned_equilibrium(c, 50, (0, 0, 0), (0.6, 0, -0.6))
        assert np.allclose(p[0], 0) and np.allclose(p[-1], [0.6, 0, -0.6])
        # interior nodes are in static balance
        from flexcable.fdm import interior_accelerations

        a = interior_accelerations(FdmState(p, np.zeros_like(p)), c)[:-1]
        assert np.max(np.abs(a)) < 1e-4 * 9.8 * 50

    def test_residual_minimal_at_truth(self):
        truth = experiment_cable().with_(drag_coeff=0.0014, young_modulus=1.2e6)
        exp = ReleaseExperiment(duration=1.0)
        rec = exp.recording(truth)
        r0 = identification_residual(rec, truth, exp)
        assert r0 < 1e-9
        for f_cd, f_e in [(1.2, 1.0), (1.0, 0.9), (0.8, 1.1)]:
            probe = truth.with_(drag_coeff=0.0014 * f_cd, young_modulus=1.2e6 * f_e)
            assert identification_residual(rec, probe, exp) > r0

    @pytest.mark.slow
    def test_self_identification(self):
        truth = experiment_cable().with_(drag_coeff=0.0014, young_modulus=1.2e6)
        exp = ReleaseExperiment()
        rec = exp.recording(truth)
        res = identify_params(rec, truth, (0.0014 * 1.3, 1.2e6 * 0.7), exp)
        assert abs(res.drag_coeff / 0.0014 - 1) < 0.05
        assert abs(res.young_modulus / 1.2e6 - 1) < 0.10
        assert res.residual <= res.initial_residual
        assert res.residual <= min(r[2] for r in res.trace)
