import numpy as np
import pytest

from dbtune import synth
from dbtune.cluster import PrunedMetricSet
from dbtune.errors import DataError
from dbtune.mapping import (
    augment,
    map_and_augment,
    nearest_workload,
    score_workloads,
    WorkloadScore,
)
from dbtune.predict import fit_scaler

from conftest import identity_scaler, make_table


@pytest.fixture
def pruned(tiny_schema):
    return PrunedMetricSet(metric_names=tiny_schema.metric_names, cluster_of=(0, 1))


def simple_table(wid, schema, knob_rows, metric_rows, latency=None):
    n = len(knob_rows)
    return make_table(wid, knob_rows, metric_rows,
                      latency if latency is not None else [1.0] * n, schema)


class TestScoreWorkloads:
    def test_self_source_scores_zero(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema, [[1, 2], [3, 4]], [[5, 6], [7, 8]])
        scores = score_workloads(t, [t], pruned, identity_scaler(tiny_schema))
        assert scores[0].score == 0.0

    def test_hand_evaluation(self, tiny_schema):
        # single pruned metric, single row: target 3 vs paired source 0
        p = PrunedMetricSet(metric_names=("m0",), cluster_of=(0,))
        target = simple_table("t", tiny_schema, [[0, 0]], [[3.0, 9]])
        source = simple_table("s", tiny_schema, [[0, 0]], [[0.0, 9]])
        scores = score_workloads(target, [source], p, identity_scaler(tiny_schema))
        assert scores[0].per_metric_distance["m0"] == pytest.approx(3.0)
        assert scores[0].score == pytest.approx(3.0)

    def test_copy_beats_perturbed(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema, [[1, 2], [3, 4]], [[5, 6], [7, 8]])
        copy = simple_table("copy", tiny_schema, [[1, 2], [3, 4]], [[5, 6], [7, 8]])
        pert = simple_table("pert", tiny_schema, [[1, 2], [3, 4]], [[6, 7], [9, 8]])
        scores = score_workloads(t, [copy, pert], pruned,
                                 identity_scaler(tiny_schema))
        by_id = {s.source_workload_id: s.score for s in scores}
        assert by_id["copy"] < by_id["pert"]

    def test_score_is_mean_of_metric_distances(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema, [[0, 0]], [[1.0, 2.0]])
        s = simple_table("s", tiny_schema, [[0, 0]], [[4.0, 6.0]])
        scores = score_workloads(t, [s], pruned, identity_scaler(tiny_schema))
        d = scores[0].per_metric_distance
        assert scores[0].score == pytest.approx(np.mean(list(d.values())))

    def test_empty_pruned_rejected(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[0, 0]], [[1, 2]])
        with pytest.raises(DataError):
            score_workloads(t, [t], PrunedMetricSet((), ()),
                            identity_scaler(tiny_schema))

    def test_variants_run(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema, [[0, 0], [1, 1]], [[1, 2], [3, 4]])
        s = simple_table("s", tiny_schema, [[0, 0], [1, 1]], [[2, 2], [3, 5]])
        for variant in ("euclid", "mse", "mape"):
            scores = score_workloads(t, [s], pruned,
                                     identity_scaler(tiny_schema), variant)
            assert scores[0].score >= 0


class TestNearestWorkload:
    def test_argmin(self):
        scores = [WorkloadScore("A", {}, 2.0), WorkloadScore("B", {}, 1.0)]
        assert nearest_workload(scores) == "B"

    def test_tie_breaks_lexicographic(self):
        scores = [WorkloadScore("B", {}, 1.0), WorkloadScore("A", {}, 1.0)]
        assert nearest_workload(scores) == "A"

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            nearest_workload([])


class TestAugment:
    def test_disjoint_knobs(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[1, 1]], [[1, 1]])
        s = simple_table("s", tiny_schema, [[2, 2], [3, 3]], [[2, 2], [3, 3]])
        merged, dropped = augment(t, s)
        assert merged.n_rows == 3
        assert dropped == 0

    def test_exact_conflict_drops_source_row(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[1, 1]], [[9, 9]], [5.0])
        s = simple_table("s", tiny_schema, [[1, 1], [2, 2]], [[1, 1], [2, 2]], [7.0, 8.0])
        merged, dropped = augment(t, s)
        assert dropped == 1
        assert merged.n_rows == 2
        # target's row survives, with its own latency
        assert merged.latency[0] == 5.0

    def test_total_conflict(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[1, 1], [2, 2]], [[1, 1], [2, 2]])
        merged, dropped = augment(t, t)
        assert merged.n_rows == 2
        assert dropped == 2

    def test_idempotent_on_survivors(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[1, 1]], [[1, 1]])
        s = simple_table("s", tiny_schema, [[1, 1], [4, 4]], [[0, 0], [4, 4]])
        merged, _ = augment(t, s)
        again, dropped2 = augment(t, merged.take(range(t.n_rows, merged.n_rows)))
        assert dropped2 == 0

    def test_order_target_first(self, tiny_schema):
        t = simple_table("t", tiny_schema, [[1, 1]], [[1, 1]], [5.0])
        s = simple_table("s", tiny_schema, [[2, 2]], [[2, 2]], [6.0])
        merged, _ = augment(t, s)
        assert list(merged.latency) == [5.0, 6.0]


class TestMapAndAugment:
    def test_single_source_forced(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema, [[0, 0]], [[1, 2]])
        s = simple_table("only", tiny_schema, [[5, 5]], [[9, 9]])
        res = map_and_augment([s], t, pruned, identity_scaler(tiny_schema))
        assert res.chosen_source == "only"

    def test_row_arithmetic(self, tiny_schema, pruned):
        t = simple_table("t", tiny_schema,
                         [[i, i] for i in range(5)],
                         [[i, i] for i in range(5)])
        s = simple_table("s", tiny_schema,
                         [[10 + i, i] for i in range(12)],
                         [[i, i] for i in range(12)])
        res = map_and_augment([s], t, pruned, identity_scaler(tiny_schema))
        assert res.augmented.n_rows == 17
        assert res.conflicts_dropped == 0

    def test_source_order_invariance(self, tiny_schema, pruned):
        rng = np.random.default_rng(0)
        t = simple_table("t", tiny_schema, rng.normal(size=(3, 2)),
                         rng.normal(size=(3, 2)))
        sources = [simple_table(f"s{i}", tiny_schema, rng.normal(size=(3, 2)),
                                rng.normal(size=(3, 2))) for i in range(4)]
        scaler = identity_scaler(tiny_schema)
        a = map_and_augment(sources, t, pruned, scaler).chosen_source
        b = map_and_augment(sources[::-1], t, pruned, scaler).chosen_source
        assert a == b

    def test_far_source_never_chosen(self, tiny_schema, pruned):
        rng = np.random.default_rng(1)
        t = simple_table("t", tiny_schema, rng.normal(size=(3, 2)),
                         rng.normal(size=(3, 2)))
        near = simple_table("near", tiny_schema, t.knobs + 0.01,
                            t.metrics + 0.01)
        far = simple_table("zzz_far", tiny_schema, t.knobs,
                           t.metrics + 1e6)
        scaler = identity_scaler(tiny_schema)
        before = map_and_augment([near], t, pruned, scaler).chosen_source
        after = map_and_augment([near, far], t, pruned, scaler).chosen_source
        assert before == after == "near"

    def test_planted_neighbor_recovery(self):
        spec = synth.SynthSpec(n_offline=6, n_online=2, rows_per_workload=6,
                               n_latent=2, metrics_per_latent=2, noise_std=0.05,
                               seed=123, freq_scale=1.0, profile_scale=2.0)
        corpus, truth = synth.generate_corpus(spec)
        scaler = fit_scaler(list(corpus.offline), corpus.schema)
        p = PrunedMetricSet(
            metric_names=(corpus.schema.metric_names[0],
                          corpus.schema.metric_names[2]),
            cluster_of=(0, 1))
        for t in corpus.online_b:
            res = map_and_augment(list(corpus.offline), t, p, scaler)
            assert res.chosen_source == truth.nearest_source_of[t.workload_id]
