"""End-to-end acceptance suite.

Each numbered test prints one PASS/FAIL line (run with -s to stream them).
Heavy shared artifacts (the 50k classifier, the planner-comparison grid)
are session fixtures, built once.
"""
import json
import math
import random
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from overhang import predictors as pr
from overhang.experiment import (
    audit_results,
    derive_seed,
    frozen_tasks,
    model_recovery,
    run_grid,
    table2_grid_config,
)
from overhang.metrics import (
    aggregate_log_likelihood,
    load_traces,
    order_dependency,
    relative_advantage,
)
from overhang.model import (
    Action,
    BlockSpec,
    DecisionState,
    PlacedBlock,
    TowerGeometry,
    make_task,
)
from overhang.planners import PlannerConfig, run_episode
from overhang.predictors import PerturbationConfig, PredictorBinding
from overhang.service import STEP_TIME_LIMIT_S, SessionStore, create_app
from overhang.stability import com_margin, is_stable_static

from oracles import brute_force_best_reward, brute_force_order_dependency, brute_monte_carlo_stability
from test_stability import random_stack


def report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"\n[ACCEPTANCE {num:02d}] {'PASS' if ok else 'FAIL'} {name} {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="session")
def table2(model50k, tmp_path_factory):
    out = tmp_path_factory.mktemp("table2")
    config = table2_grid_config(str(out))
    results = run_grid(config, model=model50k)
    return config, {r.cell_id: r for r in results}, out


def tower(*blks):
    return TowerGeometry(tuple(PlacedBlock(BlockSpec(w), x, l) for w, x, l in blks))


class TestCriterion1:
    def test_oracle_equivalence(self):
        rng = random.Random(20250810)
        t0 = time.time()
        checked = skipped = 0
        disagreements = 0
        for _ in range(10_000):
            g = random_stack(rng, 2, 4, forest=True)
            margin = com_margin(g)
            if abs(margin) < 1e-6:
                skipped += 1
                continue
            static = is_stable_static(g, (0.0, -1.0), 0.0).stable
            if static != (margin > 0):
                disagreements += 1
            checked += 1
        elapsed = time.time() - t0
        ok = disagreements == 0 and elapsed < 60.0
        report(1, "oracle equivalence", ok,
               f"(n={checked}, marginal skipped={skipped}, disagreements={disagreements}, {elapsed:.1f}s)")


class TestCriterion2:
    def test_ipe_calibration(self):
        base = DecisionState(tower((1.2, 0.0, 0)), (BlockSpec(1.2),))
        cfg = PerturbationConfig(k=1000, sigma_pos=0.03, seed=11)
        sweep = {x: pr.predict_ipe(base, Action(x, 1), cfg) for x in (0.0, 0.2, 0.4, 0.55, 0.6, 0.65)}
        boundary_ok = 0.45 <= sweep[0.6] <= 0.55
        vals = [sweep[x] for x in (0.0, 0.2, 0.4, 0.55, 0.6, 0.65)]
        monotone_ok = all(b <= a + 0.02 for a, b in zip(vals, vals[1:]))
        # independent oracle: stdlib RNG + torque-chain rule
        ref = brute_monte_carlo_stability([(0.0, 1.2, 0), (0.6, 1.2, 1)], 0.03, 4000, seed=99)
        oracle_ok = abs(sweep[0.6] - ref) <= 0.05
        report(2, "IPE calibration", boundary_ok and monotone_ok and oracle_ok,
               f"(p_hat(0.60)={sweep[0.6]:.3f}, brute MC={ref:.3f}, sweep={[round(v, 3) for v in vals]})")


class TestCriterion3:
    def test_planner_ordering(self, table2):
        config, by_cell, out = table2
        myo = by_cell["myopic"].mean
        d2 = by_cell["lookahead_d2"].mean
        d3 = by_cell["lookahead_d3"].mean
        n = len(by_cell["myopic"].rewards)
        ordering_ok = myo < d2 < d3
        ratio = myo / d2
        ratio_ok = ratio <= 0.75
        agg = (out / "aggregate.csv").read_text()
        annotations_ok = "0.52" in agg and "0.912" in agg and "1.18" in agg
        checks = (
            f"ordering myopic<D2<D3: {'ok' if ordering_ok else 'VIOLATED'}; "
            f"myopic/D2={ratio:.4f} vs required <=0.75: {'ok' if ratio_ok else 'NOT MET'}; "
            f"reference annotations 0.52/0.912/1.180: {'ok' if annotations_ok else 'missing'}"
        )
        report(3, "planner ordering", ordering_ok and ratio_ok and annotations_ok,
               f"(myopic={myo:.4f}, D2={d2:.4f}, D3={d3:.4f}, n={n}/cell; {checks}; "
               f"the ratio gap is unattainable under the static-oracle substitution, "
               f"see the decisions ledger)")

    def test_monotone_horizon_property(self, table2):
        # suite means paired over the same tasks: non-decreasing in depth,
        # one adjacent inversion tolerated
        config, by_cell, _ = table2
        means = [by_cell[c].mean for c in ("myopic", "lookahead_d2", "lookahead_d3")]
        inversions = sum(1 for a, b in zip(means, means[1:]) if b < a)
        assert inversions <= 1


class TestCriterion4:
    def test_lookahead_matches_exhaustive_optimum(self):
        rng = random.Random(44)
        mismatches = []
        for i in range(50):
            widths = tuple(rng.choice((0.6, 1.2, 1.8)) for _ in range(3))
            task = make_task(f"small_{i}", widths)
            cfg = PlannerConfig(kind="lookahead", depth=5, beam=None, predictor="veridical", lattice=0.2)
            _, reward = run_episode(task, cfg)
            best = brute_force_best_reward(task, 0.2)
            if abs(reward - best) > 1e-9:
                mismatches.append((widths, reward, best))
        report(4, "small-scale lookahead optimality", not mismatches,
               f"(50 tasks, mismatches={mismatches[:3]})")


class TestCriterion5:
    def test_order_dependency(self):
        column = tower((1.2, 0.0, 0), (1.2, 0.0, 1), (1.2, 0.0, 2), (1.2, 0.0, 3))
        col = order_dependency(column)
        col_brute = brute_force_order_dependency(column)
        col_ok = (col.valid_orders, col.stable_orders, col.gamma) == (1, 1, 0.0) and col_brute == (1, 1, 0.0)

        counterweight = tower((1.8, 0.0, 0), (1.2, 0.75, 1), (0.6, 0.35, 2), (0.6, 1.25, 2))
        cw = order_dependency(counterweight)
        cw_brute = brute_force_order_dependency(counterweight)
        cw_ok = cw.gamma == 0.5 and cw.valid_orders == 2 and cw_brute == (2, 1, 0.5)

        rng = random.Random(55)
        agree = 0
        for _ in range(200):
            g = random_stack(rng, 2, 5 if rng.random() < 0.4 else 4, forest=False)
            dp = order_dependency(g)
            bv, bs, _ = brute_force_order_dependency(g)
            if (dp.valid_orders, dp.stable_orders) == (bv, bs):
                agree += 1
        report(5, "order dependency", col_ok and cw_ok and agree == 200,
               f"(column gamma={col.gamma}, counterweight gamma={cw.gamma}, enumerator agreement {agree}/200)")


class TestCriterion6:
    def test_classifier_accuracy(self, dataset50k, model50k):
        acc = model50k.metrics["val_accuracy"]
        acc_ok = acc >= 0.90
        rng = np.random.default_rng(5)
        shuffled = pr.LabeledDataset(dataset50k.features, rng.permutation(dataset50k.labels), dataset50k.val_mask)
        control = pr.train_classifier(shuffled, pr.TrainConfig())
        control_acc = control.metrics["val_accuracy"]
        control_ok = abs(control_acc - 0.5) <= 0.05
        report(6, "classifier accuracy", acc_ok and control_ok,
               f"(held-out accuracy={acc:.4f} [paper's 97.5% image-CNN figure is a "
               f"non-comparable reference], label-shuffle control={control_acc:.4f})")


class TestCriterion7:
    def test_model_recovery(self, model50k):
        res = model_recovery(model50k, n_episodes=100, seed=3, k=50)
        ok = res["ipe_win_rate"] >= 0.70 and res["heuristic_win_rate"] >= 0.70
        report(7, "model recovery", ok,
               f"(IPE episodes recovered {res['ipe_win_rate']:.2f}, "
               f"heuristic episodes recovered {res['heuristic_win_rate']:.2f}, n=100/side)")


class TestCriterion8:
    def test_grid_determinism(self, model50k, tmp_path):
        # byte-determinism is repetition-independent; two reps keep this quick
        cfg_a = table2_grid_config(str(tmp_path / "a"), repetitions=2)
        cfg_b = table2_grid_config(str(tmp_path / "b"), repetitions=2)
        run_grid(cfg_a, model=model50k)
        run_grid(cfg_b, model=model50k)
        same = all(
            (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("results.csv", "aggregate.csv")
        )
        audit_ok = audit_results(tmp_path / "a")
        report(8, "grid determinism", same and audit_ok,
               f"(byte-identical reports={same}, trace audit={audit_ok})")


class TestCriterion9:
    def test_relative_advantage_structure(self, model50k):
        traces = []
        for seed in range(4):
            cfg = PlannerConfig(kind="myopic", predictor="veridical", lattice=0.25, seed=seed)
            trace, _ = run_episode(frozen_tasks()[seed], cfg)
            traces.append(trace)
        n_switch = 3
        perturb = PerturbationConfig(k=40, sigma_pos=0.03, seed=17)
        preds = {
            "veridical": PredictorBinding("veridical"),
            "ipe": PredictorBinding("ipe", perturb),
            "heuristic": PredictorBinding("heuristic", model=model50k),
            "hybrid": PredictorBinding("hybrid", perturb, model50k, n_switch),
        }
        rep = aggregate_log_likelihood(traces, preds)
        adv = {(m, s): a for s, m, a in relative_advantage(rep)}
        ok = True
        for step in (2, 3, 4, 5, 6):
            source = "ipe" if step <= n_switch else "heuristic"
            if adv[("hybrid", step)] != adv[(source, step)]:
                ok = False
        report(9, "relative-advantage machinery", ok,
               f"(hybrid rows == IPE rows for steps <= {n_switch}, == heuristic rows after; "
               f"human crossover itself out of scope)")


class TestCriterion10:
    def test_end_to_end_session(self, tmp_path):
        clock = {"t": 1000.0}
        store = SessionStore(tmp_path / "svc", clock=lambda: clock["t"])
        client = TestClient(create_app(store))
        sid = client.post("/sessions", json={"condition": "time_constrained", "seed": 31}).json()["id"]
        # scripted participant: centered stacking, 1s per decision
        for _ in range(20 * 5 + 5):
            state = client.get(f"/sessions/{sid}/state").json()
            if state["status"] != "active":
                break
            layer = max(b["layer"] for b in state["geometry"]["blocks"]) + 1
            clock["t"] += 1.0
            client.post(f"/sessions/{sid}/place", json={"x": 0.0, "layer": layer, "client_ts": clock["t"]})
        final = client.post(f"/sessions/{sid}/finalize").json()
        traces = load_traces(final["traces_path"])
        from overhang.experiment import recompute_reward
        replay_ok = all(abs(recompute_reward(t) - t.reward) < 1e-12 for t in traces)
        complete_ok = final["n_trials"] == 20 and all(t.reward > 0 for t in traces)

        sid2 = client.post("/sessions", json={"condition": "time_constrained", "seed": 32}).json()["id"]
        clock["t"] += STEP_TIME_LIMIT_S + 0.1
        forged = client.post(
            f"/sessions/{sid2}/place",
            json={"x": 0.0, "layer": 1, "client_ts": clock["t"] - STEP_TIME_LIMIT_S},
        ).json()
        forged_ok = forged["outcome"] == "timed_out" and forged["state"]["trial_rewards"] == [0.0]
        report(10, "end-to-end session", replay_ok and complete_ok and forged_ok,
               f"(20 trials replayed with identical rewards={replay_ok}, forged late commit -> timed_out={forged_ok})")


class TestCriterion11:
    def test_preview_contract(self, tmp_path):
        store = SessionStore(tmp_path / "svc11")
        client = TestClient(create_app(store))
        sid = client.post("/sessions", json={"condition": "unconstrained", "seed": 77}).json()["id"]
        rng = random.Random(7)
        bad = 0
        verdicts = set()
        for _ in range(1000):
            body = client.post(
                f"/sessions/{sid}/preview",
                json={"x": rng.uniform(-4.5, 4.5), "layer": rng.randint(0, 7)},
            ).json()
            if set(body.keys()) != {"verdict"}:
                bad += 1
            verdicts.add(body["verdict"])
            if body["verdict"] not in ("valid", "penetrates", "unsupported", "out_of_bounds"):
                bad += 1
        report(11, "preview contract", bad == 0,
               f"(1000 previews, schema violations={bad}, verdicts seen={sorted(verdicts)})")
