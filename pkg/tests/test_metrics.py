import math
import random

import pytest

from overhang.model import (
    Action,
    BlockSpec,
    GeometryError,
    PlacedBlock,
    TowerGeometry,
    apply_action,
    make_task,
)
from overhang.metrics import (
    LOGLIK_CLAMP,
    LikelihoodReport,
    LikelihoodRow,
    ReplayError,
    StepRecord,
    TraceRecord,
    aggregate_log_likelihood,
    final_geometry,
    load_traces,
    order_dependency,
    relative_advantage,
    replay_trace,
    save_traces,
    summarize_runs,
    trace_log_likelihood,
)
from overhang.planners import PlannerConfig, run_episode
from overhang.predictors import PerturbationConfig, PredictorBinding

from oracles import brute_force_order_dependency


def tower(*blks):
    return TowerGeometry(tuple(PlacedBlock(BlockSpec(w), x, l) for w, x, l in blks))


COLUMN = tower((1.2, 0.0, 0), (1.2, 0.0, 1), (1.2, 0.0, 2), (1.2, 0.0, 3))
COUNTERWEIGHT = tower((1.8, 0.0, 0), (1.2, 0.75, 1), (0.6, 0.35, 2), (0.6, 1.25, 2))


def make_trace(widths, actions, reward=None, condition="model"):
    task = make_task("t", widths)
    st = task.initial_state()
    steps = []
    for a in actions:
        st = apply_action(st, a)
        steps.append(StepRecord(x=a.x, layer=a.layer, stable=True))
    from overhang.model import overhang

    return TraceRecord(
        task_id="t",
        sequence=widths,
        condition=condition,
        steps=tuple(steps),
        reward=overhang(st.geometry) if reward is None else reward,
    )


# fully centered stack: every carried COM sits at 0, all prefixes stable
STABLE_TRACE = make_trace(
    (1.2, 1.2, 0.6, 0.6, 1.2, 0.6),
    [Action(0.0, 1), Action(0.0, 2), Action(0.0, 3), Action(0.0, 4), Action(0.0, 5)],
)


class TestOrderDependency:
    def test_centered_column(self):
        res = order_dependency(COLUMN)
        assert res.valid_orders == 1 and res.stable_orders == 1 and res.gamma == 0.0

    def test_counterweight_tower(self):
        res = order_dependency(COUNTERWEIGHT)
        assert res.valid_orders == 2
        assert res.stable_orders == 1
        assert res.gamma == 0.5

    def test_invalid_final_geometry_errors(self):
        overlap = tower((1.2, 0.0, 0), (1.2, 0.5, 0))
        with pytest.raises(GeometryError):
            order_dependency(overlap)

    def test_agreement_with_brute_force(self):
        rng = random.Random(13)
        from test_stability import random_stack

        checked = 0
        while checked < 40:
            g = random_stack(rng, 2, 4, forest=False)
            dp = order_dependency(g)
            bv, bs, bg = brute_force_order_dependency(g)
            assert (dp.valid_orders, dp.stable_orders) == (bv, bs)
            checked += 1

    def test_gamma_zero_for_centered_builds(self):
        rng = random.Random(19)
        for _ in range(20):
            n = rng.randint(2, 5)
            g = tower(*[(1.2, 0.0, k) for k in range(n)])
            assert order_dependency(g).gamma == 0.0

    def test_gamma_in_unit_interval(self):
        rng = random.Random(23)
        from test_stability import random_stack

        for _ in range(50):
            g = random_stack(rng, 2, 4)
            res = order_dependency(g)
            assert 0.0 <= res.gamma <= 1.0
            assert res.stable_orders <= res.valid_orders
            assert res.valid_orders >= 1


class TestTraceReplay:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "traces.jsonl"
        save_traces([STABLE_TRACE], str(path))
        loaded = load_traces(str(path))
        assert loaded == [STABLE_TRACE]

    def test_divergent_trace_names_step(self):
        bad = TraceRecord(
            task_id="t",
            sequence=(1.2, 1.2, 0.6),
            condition="model",
            steps=(StepRecord(x=0.0, layer=1), StepRecord(x=0.0, layer=1)),
            reward=0.0,
        )
        with pytest.raises(ReplayError, match="step 2"):
            list(replay_trace(bad))


class TestTraceLogLikelihood:
    def test_veridical_on_truly_stable_trace(self):
        veridical = PredictorBinding("veridical")
        rows = trace_log_likelihood(STABLE_TRACE, veridical)
        assert len(rows) == 5
        for step, ll in rows:
            assert ll == pytest.approx(math.log(1 - LOGLIK_CLAMP))
            assert abs(ll) < 1e-3

    def test_constant_half_predictor(self):
        rows = trace_log_likelihood(STABLE_TRACE, lambda s, a: 0.5)
        for _, ll in rows:
            assert ll == pytest.approx(math.log(0.5))

    def test_step_index_is_post_action_block_count(self):
        rows = trace_log_likelihood(STABLE_TRACE, lambda s, a: 1.0)
        assert [step for step, _ in rows] == [2, 3, 4, 5, 6]

    def test_clamp_keeps_ll_finite(self):
        rows = trace_log_likelihood(STABLE_TRACE, lambda s, a: 0.0)
        for _, ll in rows:
            assert ll == pytest.approx(math.log(LOGLIK_CLAMP))


class TestRelativeAdvantage:
    def test_self_baseline_is_zero(self):
        veridical = PredictorBinding("veridical")
        report = aggregate_log_likelihood([STABLE_TRACE], {"veridical": veridical, "also": veridical})
        rows = relative_advantage(report)
        assert rows and all(adv == pytest.approx(0.0) for _, _, adv in rows)

    def test_missing_baseline_errors(self):
        report = LikelihoodReport((LikelihoodRow(2, "ipe", -0.5, 4),))
        with pytest.raises(ValueError):
            relative_advantage(report)

    def test_hybrid_rows_split_exactly(self, model50k):
        # structural identity: hybrid == ipe through the switch, heuristic after
        traces = []
        for seed in (1, 2, 3):
            cfg = PlannerConfig(kind="myopic", predictor="veridical", lattice=0.2, seed=seed)
            trace, _ = run_episode(make_task(f"t{seed}", (1.2, 1.8, 0.6, 0.6, 1.2, 0.6)), cfg)
            traces.append(trace)
        perturb = PerturbationConfig(k=30, sigma_pos=0.03, seed=7)
        n_switch = 3
        preds = {
            "veridical": PredictorBinding("veridical"),
            "ipe": PredictorBinding("ipe", perturb),
            "heuristic": PredictorBinding("heuristic", model=model50k),
            "hybrid": PredictorBinding("hybrid", perturb, model50k, n_switch),
        }
        report = aggregate_log_likelihood(traces, preds)
        rows = {(r.model, r.step): r.mean_ll for r in report.rows}
        for step in (2, 3, 4, 5, 6):
            source = "ipe" if step <= n_switch else "heuristic"
            assert rows[("hybrid", step)] == rows[(source, step)]


class TestSummaries:
    def test_single_trace(self):
        s = summarize_runs([STABLE_TRACE])
        assert s["n"] == 1 and s["n_is_one"]
        assert s["sem_reward"] == 0.0
        assert s["mean_reward"] == pytest.approx(STABLE_TRACE.reward)

    def test_mixed_outcomes(self):
        failed = make_trace((1.2, 1.2, 0.6, 0.6, 1.2, 0.6), [Action(0.3, 1)], reward=0.0)
        ok = make_trace(
            (1.2, 1.2, 0.6, 0.6, 1.2, 0.6),
            [Action(0.3, 1), Action(-0.3, 2), Action(0.0, 3), Action(0.1, 4), Action(0.0, 5)],
            reward=2.0,
        )
        s = summarize_runs([failed, ok])
        assert s["stable_proportion"] == 0.5
        assert s["avg_overhang_successes"] == pytest.approx(2.0)

    def test_ingestion_order_invariance(self):
        traces = [STABLE_TRACE, make_trace((1.2, 1.2, 0.6, 0.6, 1.2, 0.6), [Action(0.3, 1)], reward=0.0)]
        a = summarize_runs(traces)
        b = summarize_runs(traces[::-1])
        assert a == b

    def test_final_geometry_matches_reward(self):
        from overhang.model import overhang

        assert overhang(final_geometry(STABLE_TRACE)) == pytest.approx(STABLE_TRACE.reward)
