import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from nlosloc.builders import CoefficientMode
from nlosloc.errors import InvalidInputError
from nlosloc.estimator import EstimatorConfig, Formulation
from nlosloc.geometry import MeasurementKind, Point2
from nlosloc.simulate import (
    Connectivity,
    NoiseModel,
    ScenarioParams,
    mse,
    measure,
    nlos_range,
    paper_scenario,
    random_scenario,
    run_batch,
    trial_seeds,
)
from nlosloc.solver import SolverSettings


class TestPaperScenario:
    def test_anchor_count(self):
        assert len(paper_scenario(0).anchors) == 18

    def test_ninth_anchor_position(self):
        scn = paper_scenario(3)
        assert scn.anchors[8] == Point2(4.3416, -19.3696)

    def test_boundary_ring_completed(self):
        scn = paper_scenario(3)
        assert scn.anchors[7] == Point2(0.0, 20.0)

    def test_determinism(self):
        assert paper_scenario(7) == paper_scenario(7)
        assert paper_scenario(7) != paper_scenario(8)

    def test_sensor_count_and_field(self):
        scn = paper_scenario(1)
        assert scn.n_sensors == 80
        assert scn.field == (-20.0, -20.0, 20.0, 20.0)
        for p in scn.sensors_truth:
            assert -20 <= p.x <= 20 and -20 <= p.y <= 20

    def test_connectivity_modes(self):
        scn = random_scenario(0, 3, 2)
        assert len(scn.edges()) == 3 * 2 + 3
        sa_only = random_scenario(0, 3, 2, connectivity=Connectivity.SENSOR_ANCHOR_ONLY)
        assert len(sa_only.edges()) == 6
        limited = random_scenario(0, 3, 2, connectivity=Connectivity.RADIUS_LIMITED, radius=10.0)
        truth = limited.truth
        assert all(truth[i].distance_to(truth[j]) <= 10.0 for i, j in limited.edges())


class TestMeasure:
    def test_forced_draw_composition(self):
        assert nlos_range(10.0, 0.01, 0.3) == pytest.approx(10.31)

    def test_noiseless_limit(self):
        scn = random_scenario(4, 4, 3)
        ms = measure(scn, NoiseModel(sigma=1e-12, nlos_fraction=0.0), seed=1)
        truth = scn.truth
        for m in ms:
            assert m.distance == pytest.approx(truth[m.i].distance_to(truth[m.j]), abs=1e-9)

    def test_kind_is_always_unknown(self):
        scn = random_scenario(4, 3, 3)
        for m in measure(scn, NoiseModel(), seed=2):
            assert m.kind is MeasurementKind.UNKNOWN

    def test_determinism(self):
        scn = random_scenario(4, 4, 3)
        a = measure(scn, NoiseModel(), seed=5)
        b = measure(scn, NoiseModel(), seed=5)
        assert a == b

    def test_bias_distribution(self):
        # vanish the LOS noise so observed - true isolates the bias draws;
        # all nonnegative and KS-consistent with U[0, 0.5] at alpha = 0.01
        scn = random_scenario(11, 145, 18)
        ms = measure(scn, NoiseModel(sigma=1e-12, nlos_bias=(0.0, 0.5), nlos_fraction=1.0), seed=77)
        truth = scn.truth
        deltas = np.array([m.distance - truth[m.i].distance_to(truth[m.j]) for m in ms])
        assert len(deltas) >= 10_000
        assert deltas.min() >= -1e-9
        stat = scipy.stats.kstest(deltas, scipy.stats.uniform(0.0, 0.5).cdf)
        assert stat.pvalue > 0.01

    def test_floor_is_applied(self):
        scn = random_scenario(4, 2, 3, field=(-0.001, -0.001, 0.001, 0.001))
        ms = measure(scn, NoiseModel(sigma=0.5, nlos_fraction=0.0), seed=3)
        assert all(m.distance >= 1e-6 for m in ms)


class TestMse:
    def test_exact_match(self):
        pts = {1: Point2(1, 2), 2: Point2(3, 4)}
        assert mse(pts, dict(pts)) == 0.0

    def test_unit_offset(self):
        truth = {1: Point2(0, 0), 2: Point2(5, 5)}
        est = {k: Point2(p.x + 1, p.y) for k, p in truth.items()}
        assert mse(est, truth) == pytest.approx(1.0)

    def test_mixed_offsets(self):
        truth = {1: Point2(0, 0), 2: Point2(5, 5)}
        est = {1: Point2(1, 0), 2: Point2(5, 7)}
        assert mse(est, truth) == pytest.approx(2.5)

    def test_id_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            mse({1: Point2(0, 0)}, {2: Point2(0, 0)})

    @settings(max_examples=25, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_permutation_invariance(self, rnd):
        ids = list(range(1, 8))
        rng = np.random.default_rng(rnd.randint(0, 2**31))
        truth = {k: Point2(*rng.uniform(-5, 5, 2)) for k in ids}
        est = {k: Point2(*rng.uniform(-5, 5, 2)) for k in ids}
        rnd.shuffle(ids)
        shuffled_est = {k: est[k] for k in ids}
        assert mse(shuffled_est, truth) == pytest.approx(mse(est, truth))


class TestRunBatch:
    def small_params(self):
        return ScenarioParams(layout="random", n_sensors=3, n_anchors=4,
                              field=(-10, -10, 10, 10))

    def config(self):
        return EstimatorConfig(formulation=Formulation.ESDP,
                               solver=SolverSettings(gap_tol=1e-7, feas_tol=1e-7))

    def test_single_trial_mean_equals_trial_mse(self):
        batch = run_batch(self.small_params(), NoiseModel(), self.config(), trials=1, master_seed=4)
        assert batch.mse_mean == batch.trials[0].mse

    def test_same_master_seed_reproduces_report(self):
        a = run_batch(self.small_params(), NoiseModel(), self.config(), trials=2, master_seed=9)
        b = run_batch(self.small_params(), NoiseModel(), self.config(), trials=2, master_seed=9)
        assert a.to_json_dict() == b.to_json_dict()

    def test_trial_seeds_are_distinct(self):
        seeds = trial_seeds(123, 10)
        scenario_seeds = [s for s, _ in seeds]
        assert len(set(scenario_seeds)) == 10
        assert trial_seeds(123, 10) == seeds

    def test_trials_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            run_batch(self.small_params(), NoiseModel(), self.config(), trials=0, master_seed=1)
