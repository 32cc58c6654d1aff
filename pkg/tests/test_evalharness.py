import numpy as np
import pytest

from enman import evalharness
from enman.baselines import oracle
from enman.envsim import DeviceConfig, cluster_profile
from enman.evalharness import (TraceSetMismatchError, compare, evaluate,
                               evaluate_oracle, evaluate_uniform,
                               heldout_traces, report_to_csv,
                               run_policy_episode)


@pytest.fixture(scope="module")
def traces():
    return {"cluster2": heldout_traces(cluster_profile(2), count=3, seed=0)}


def min_alloc_actor(obs):
    return -1.0  # below the idle floor; clips to min_alloc


class TestEvaluate:
    def test_oracle_normalized_is_exactly_one(self, traces):
        report = evaluate_oracle(DeviceConfig(), traces)
        for row in report.rows:
            assert row.normalized == 1.0
            assert not row.drained

    def test_min_alloc_policy_scores_zero_utility(self, traces):
        report = evaluate(min_alloc_actor, DeviceConfig(), traces)
        for row in report.rows:
            assert row.utility == pytest.approx(0.0, abs=1e-12)
        assert not any(e.drained for e in report.episodes)

    def test_rows_are_per_profile_and_init(self, traces):
        report = evaluate(min_alloc_actor, DeviceConfig(), traces)
        keys = {(r.profile, r.init_j) for r in report.rows}
        assert keys == {("cluster2", i) for i in (16.0, 48.0, 112.0, 144.0)}
        assert len(report.episodes) == 3 * 4

    def test_default_init_levels(self):
        assert evalharness.DEFAULT_INIT_LEVELS_J == (16.0, 48.0, 112.0, 144.0)

    def test_deterministic(self, traces):
        a = evaluate(min_alloc_actor, DeviceConfig(), traces)
        b = evaluate(min_alloc_actor, DeviceConfig(), traces)
        assert a.rows == b.rows
        assert a.fingerprint == b.fingerprint

    def test_utility_additive_over_hours(self):
        # Recompute the episode hour by hour with the same dynamics.
        from enman.envsim import Env, HarvestProfile, utility
        cfg = DeviceConfig()
        trace = heldout_traces(cluster_profile(2), count=1, seed=1)[0]
        total, dev, violations, drained = run_policy_episode(
            lambda obs: 3.0, cfg, trace, 48.0)
        profile = HarvestProfile("trace", trace, np.zeros(24), trace_j=trace)
        env = Env(cfg, profile)
        env.reset(48.0)
        manual = 0.0
        done = False
        while not done:
            out = env.step(3.0)
            manual += utility(out.info["alloc_applied_j"])
            done = out.done
        assert total == manual

    def test_violations_counted_per_hour_below_reservoir(self):
        # Allocate aggressively from a small battery with no harvest: the
        # battery sinks below the reservoir and stays there.
        cfg = DeviceConfig()
        trace = np.zeros(24)
        _, _, violations, drained = run_policy_episode(
            lambda obs: 1.0, cfg, trace, 16.0)
        assert drained
        assert violations == 10  # hours 7..16, battery 9..0


class TestUniformBaseline:
    def test_perfect_forecast_matches_oracle_on_flat_trace(self):
        cfg = DeviceConfig()
        flat = [np.full(24, 2.0)]
        uniform = evaluate_uniform(cfg, np.full(24, 2.0), flat,
                                   init_levels=(16.0,))
        ref = evaluate_oracle(cfg, flat, init_levels=(16.0,))
        assert uniform.rows[0].utility == pytest.approx(ref.rows[0].utility)

    def test_overconfident_forecast_misses_the_target(self, traces):
        # Planning on a 5x-inflated forecast overspends all day; the battery
        # lands far below the energy-neutral target (or drains outright).
        cfg = DeviceConfig()
        actual = traces["cluster2"]
        expected = 5.0 * np.mean(np.stack(actual), axis=0)
        report = evaluate_uniform(cfg, expected, {"cluster2": actual})
        calibrated = evaluate_uniform(cfg, expected / 5.0, {"cluster2": actual})
        for row, cal in zip(report.rows, calibrated.rows):
            assert row.terminal_dev_j >= cal.terminal_dev_j
        assert all(row.terminal_dev_j > 5.0 for row in report.rows)
        assert any(row.drained for row in report.rows)


class TestCompare:
    def test_single_method_table(self, traces):
        table = compare(evaluate_oracle(DeviceConfig(), traces))
        assert table.methods == ["oracle"]
        assert table.profiles == ["cluster2"]
        assert table.cells.shape == (1, 2)

    def test_oracle_dominates_feasible_methods(self, traces):
        cfg = DeviceConfig()
        means = np.mean(np.stack(traces["cluster2"]), axis=0)
        reports = [evaluate_oracle(cfg, traces),
                   evaluate(min_alloc_actor, cfg, traces),
                   evaluate_uniform(cfg, means, traces)]
        table = compare(*reports)
        oracle_row = table.cells[0]
        for other in table.cells[1:]:
            assert np.all(oracle_row >= other - 1e-9)

    def test_column_order_matches_input(self):
        cfg = DeviceConfig()
        tm = {"c1": heldout_traces(cluster_profile(1), 2, 0),
              "c3": heldout_traces(cluster_profile(3), 2, 0)}
        table = compare(evaluate_oracle(cfg, tm))
        assert table.profiles == ["c1", "c3"]

    def test_mismatched_trace_sets_rejected(self, traces):
        cfg = DeviceConfig()
        other = {"cluster2": heldout_traces(cluster_profile(2), count=3, seed=99)}
        with pytest.raises(TraceSetMismatchError):
            compare(evaluate_oracle(cfg, traces), evaluate_oracle(cfg, other))

    def test_render_text_is_aligned_table(self, traces):
        table = compare(evaluate_oracle(DeviceConfig(), traces))
        lines = table.render_text().splitlines()
        assert len(lines) == 2
        assert "method" in lines[0] and "avg" in lines[0]


class TestReportCsv:
    def test_columns_and_rows(self, tmp_path, traces):
        report = evaluate(min_alloc_actor, DeviceConfig(), traces)
        path = tmp_path / "report.csv"
        report_to_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ("profile,init_j,method,utility,normalized,"
                            "terminal_dev_j,violations,drained")
        assert len(lines) == 1 + len(report.rows)


class TestHeldoutTraces:
    def test_deterministic_and_disjoint_from_training_stream(self):
        prof = cluster_profile(2)
        a = heldout_traces(prof, count=4, seed=7)
        b = heldout_traces(prof, count=4, seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        # training episodes draw from spawn_key (0, episode); held-out uses
        # (3, i) - same root seed must still give different traces
        from enman.envsim import sample_profile
        train_rng = np.random.default_rng(np.random.SeedSequence(7, spawn_key=(0, 0)))
        train_trace = sample_profile(prof, train_rng)
        assert not np.array_equal(a[0], train_trace)
