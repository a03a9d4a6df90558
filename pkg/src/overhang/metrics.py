"""Trace records, order-dependency, and log-likelihood analytics.

Order dependency of a finished tower: the fraction of geometrically valid
construction orders that fail intermediate stability. Computed exactly by
dynamic programming over placement subsets (at 6 blocks, 2^6 subsets bound
720 permutations, so brute force stays exact).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .model import (
    FORMAT_TAG,
    PENETRATION_TOL,
    SUPPORT_MIN_OVERLAP,
    Action,
    GeometryError,
    TowerGeometry,
    PlacedBlock,
    apply_action,
    check_geometry,
    make_task,
    validate_action,
)
from .stability import is_stable_static

LOGLIK_CLAMP = 1e-4    # shared with predictors; keeps ln p finite


class ReplayError(ValueError):
    """A logged trace does not replay against its own task."""


@dataclass(frozen=True)
class StepRecord:
    x: float
    layer: int
    duration_s: float = 0.0
    previews: tuple[dict, ...] = ()
    stable: bool = True


@dataclass(frozen=True)
class TraceRecord:
    task_id: str
    sequence: tuple[float, ...]       # block widths, pre-positioned base first
    condition: str                    # model | time_constrained | unconstrained
    steps: tuple[StepRecord, ...]
    reward: float
    aborted: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "task_id": self.task_id,
            "sequence": list(self.sequence),
            "condition": self.condition,
            "steps": [
                {
                    "x": s.x,
                    "layer": s.layer,
                    "duration_s": s.duration_s,
                    "previews": list(s.previews),
                    "stable": s.stable,
                }
                for s in self.steps
            ],
            "reward": self.reward,
            "aborted": self.aborted,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceRecord":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported trace format: {d.get('format')!r}")
        return cls(
            task_id=d["task_id"],
            sequence=tuple(float(w) for w in d["sequence"]),
            condition=d["condition"],
            steps=tuple(
                StepRecord(
                    x=float(s["x"]),
                    layer=int(s["layer"]),
                    duration_s=float(s.get("duration_s", 0.0)),
                    previews=tuple(s.get("previews", ())),
                    stable=bool(s["stable"]),
                )
                for s in d["steps"]
            ),
            reward=float(d["reward"]),
            aborted=bool(d.get("aborted", False)),
            meta=dict(d.get("meta", {})),
        )

    def content_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


def save_traces(traces: Iterable[TraceRecord], path: str) -> None:
    with open(path, "w") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def load_traces(path: str) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(TraceRecord.from_dict(json.loads(line)))
    return out


def replay_trace(trace: TraceRecord):
    """Yield (pre-action state, action) pairs; raise ReplayError on divergence."""
    task = make_task(trace.task_id, trace.sequence)
    state = task.initial_state()
    for i, step in enumerate(trace.steps):
        action = Action(step.x, step.layer)
        verdict = validate_action(state, action)
        if verdict != "valid":
            raise ReplayError(f"step {i + 1} of trace {trace.task_id!r} does not replay ({verdict})")
        yield state, action
        state = apply_action(state, action)


def final_geometry(trace: TraceRecord) -> TowerGeometry:
    state = None
    task = make_task(trace.task_id, trace.sequence)
    state = task.initial_state()
    for pre, action in replay_trace(trace):
        state = apply_action(pre, action)
    return state.geometry


# ---------------------------------------------------------------------------
# order dependency

@dataclass(frozen=True)
class OrderDependencyResult:
    valid_orders: int
    stable_orders: int
    gamma: float


def _placeable(blocks: Sequence[PlacedBlock], b: PlacedBlock) -> bool:
    """Support + non-penetration of b against already-placed blocks."""
    for a in blocks:
        if a.layer == b.layer and min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo) > PENETRATION_TOL:
            return False
    if b.layer == 0:
        return True
    support = 0.0
    for a in blocks:
        if a.layer == b.layer - 1:
            ov = min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo)
            if ov > 0.0:
                support += ov
    return support >= SUPPORT_MIN_OVERLAP


def order_dependency(geometry: TowerGeometry) -> OrderDependencyResult:
    """Exhaustive enumeration of construction orders of a finished tower.

    An order is valid iff every prefix satisfies support and non-penetration;
    a valid order is stable iff every prefix passes the static oracle.
    Subset DP: both properties depend only on the placed set, not its order.
    """
    check_geometry(geometry, require_origin_base=False)
    blocks = geometry.blocks
    n = len(blocks)
    if n == 0:
        raise GeometryError("order dependency of an empty tower is undefined")
    full = (1 << n) - 1
    valid_count = [0] * (1 << n)
    stable_count = [0] * (1 << n)
    valid_count[0] = stable_count[0] = 1
    subset_stable = [False] * (1 << n)
    subset_stable[0] = True
    for mask in range(1, 1 << n):
        placed = [blocks[i] for i in range(n) if mask >> i & 1]
        v = s = 0
        for i in range(n):
            if not (mask >> i & 1):
                continue
            prev = mask ^ (1 << i)
            if valid_count[prev] == 0 and stable_count[prev] == 0:
                continue
            rest = [blocks[j] for j in range(n) if prev >> j & 1]
            if _placeable(rest, blocks[i]):
                v += valid_count[prev]
                s += stable_count[prev]
        valid_count[mask] = v
        if v > 0 or s > 0:
            subset_stable[mask] = is_stable_static(TowerGeometry(tuple(placed))).stable
        stable_count[mask] = s if subset_stable[mask] else 0
    valid = valid_count[full]
    if valid == 0:
        raise GeometryError("tower admits no valid construction order")
    stable = stable_count[full]
    return OrderDependencyResult(valid, stable, 1.0 - stable / valid)


# ---------------------------------------------------------------------------
# likelihood analytics

@dataclass(frozen=True)
class LikelihoodRow:
    step: int          # blocks placed after the action (2..6)
    model: str
    mean_ll: float
    n: int


@dataclass(frozen=True)
class LikelihoodReport:
    rows: tuple[LikelihoodRow, ...]

    def models(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("step,model,mean_ll,n\n")
            for r in self.rows:
                fh.write(f"{r.step},{r.model},{r.mean_ll!r},{r.n}\n")


def clamp_prob(p: float) -> float:
    return min(max(p, LOGLIK_CLAMP), 1.0 - LOGLIK_CLAMP)


def trace_log_likelihood(trace: TraceRecord, predictor: Callable) -> list[tuple[int, float]]:
    """Per executed action: (post-action block count, ln clamped p_stable).

    `predictor` is any callable or binding with signature (state, action) -> p.
    """
    prob = predictor.prob if hasattr(predictor, "prob") else predictor
    out = []
    for state, action in replay_trace(trace):
        p = clamp_prob(prob(state, action))
        out.append((len(state.geometry.blocks) + 1, math.log(p)))
    return out


def aggregate_log_likelihood(traces: Sequence[TraceRecord], predictors: dict[str, Callable]) -> LikelihoodReport:
    """Mean ln p per step index (post-action block count) for each predictor."""
    rows = []
    for name, predictor in predictors.items():
        acc: dict[int, list[float]] = {}
        for trace in traces:
            for step, ll in trace_log_likelihood(trace, predictor):
                acc.setdefault(step, []).append(ll)
        for step in sorted(acc):
            vals = acc[step]
            rows.append(LikelihoodRow(step, name, sum(vals) / len(vals), len(vals)))
    return LikelihoodReport(tuple(rows))


def relative_advantage(report: LikelihoodReport, baseline: str = "veridical") -> list[tuple[int, str, float]]:
    """Per-step (model mean_ll - baseline mean_ll) rows for every non-baseline model."""
    base = {r.step: r.mean_ll for r in report.rows if r.model == baseline}
    if not base:
        raise ValueError(f"report lacks the {baseline!r} baseline")
    out = []
    for r in report.rows:
        if r.model == baseline:
            continue
        if r.step not in base:
            raise ValueError(f"baseline {baseline!r} missing step {r.step}")
        out.append((r.step, r.model, r.mean_ll - base[r.step]))
    return out


def advantage_to_csv(rows: list[tuple[int, str, float]], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,model,advantage\n")
        for step, model, adv in rows:
            fh.write(f"{step},{model},{adv!r}\n")


# ---------------------------------------------------------------------------
# run summaries

def summarize_runs(traces: Sequence[TraceRecord]) -> dict:
    """Aggregate trial statistics; overhang and gamma over successful trials only."""
    if not traces:
        raise ValueError("need at least one trace")
    rewards = [t.reward for t in traces]
    n = len(rewards)
    mean = sum(rewards) / n
    if n > 1:
        var = sum((r - mean) ** 2 for r in rewards) / (n - 1)
        sem = math.sqrt(var / n)
    else:
        sem = 0.0
    successes = [t for t in traces if t.reward > 0.0]
    durations = [s.duration_s for t in traces for s in t.steps]
    gammas = []
    for t in successes:
        try:
            gammas.append(order_dependency(final_geometry(t)).gamma)
        except GeometryError:
            pass
    return {
        "n": n,
        "mean_reward": mean,
        "sem_reward": sem,
        "n_is_one": n == 1,
        "stable_proportion": len(successes) / n,
        "avg_overhang_successes": (sum(t.reward for t in successes) / len(successes)) if successes else 0.0,
        "mean_decision_time": (sum(durations) / len(durations)) if durations else 0.0,
        "mean_gamma": (sum(gammas) / len(gammas)) if gammas else 0.0,
    }
