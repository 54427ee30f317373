import numpy as np
import pytest

from tanmil.scenarios import ScenarioConfig, multi_anomaly_scenario


@pytest.fixture(scope="module")
def scenario():
    return multi_anomaly_scenario(ScenarioConfig(seed=3))


class TestScenario:
    def test_split_sizes(self, scenario):
        assert len(scenario.train) == 60 and len(scenario.test) == 40
        assert sum(b.positive for b in scenario.test) == 20

    def test_rows_unit_norm(self, scenario):
        for bag in scenario.train + scenario.test:
            assert bag.features.shape == (32, 64)
            np.testing.assert_allclose(np.linalg.norm(bag.features, axis=1), 1.0, atol=1e-5)

    def test_two_disjoint_runs_per_positive(self, scenario):
        for bag in scenario.train + scenario.test:
            labels = scenario.segment_labels[bag.video_id]
            if not bag.positive:
                assert not labels.any()
                continue
            assert set(labels.tolist()) == {0, 1, 2}
            for k in (1, 2):
                where = np.flatnonzero(labels == k)
                assert 3 <= len(where) <= 6 and np.all(np.diff(where) == 1)

    def test_truth_covers_test_frames(self, scenario):
        assert set(scenario.truth) == {b.video_id for b in scenario.test}
        for bag in scenario.test:
            mask = scenario.truth[bag.video_id]
            assert len(mask) == 128
            np.testing.assert_array_equal(mask[::4], scenario.segment_labels[bag.video_id] > 0)

    def test_weak_run_is_weaker(self, scenario):
        # distance from the bag's normal rows grows with strength
        gaps = {1: [], 2: []}
        for bag in scenario.train:
            labels = scenario.segment_labels[bag.video_id]
            if bag.positive:
                normal = bag.features[labels == 0].mean(axis=0)
                for k in gaps:
                    gaps[k].append(np.linalg.norm(bag.features[labels == k].mean(axis=0) - normal))
        assert np.mean(gaps[1]) > np.mean(gaps[2]) > 0

    def test_deterministic(self):
        a = multi_anomaly_scenario(ScenarioConfig(seed=5))
        b = multi_anomaly_scenario(ScenarioConfig(seed=5))
        assert all(x.features.tobytes() == y.features.tobytes() for x, y in zip(a.train, b.train))

    @pytest.mark.parametrize("kw", [{"frames": 100}, {"n_test_neg": 0}, {"run_length": (20, 20)}, {"dim": 1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ScenarioConfig(**kw).validate()
