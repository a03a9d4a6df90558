"""Action selection over the continuous placement space.

The continuous x-axis is reduced to a finite candidate set per state: exact
legal intervals (support, penetration, bounds) are computed analytically,
then sampled with a lattice plus snap points at face alignments and near
support edges, so high-overhang optima survive discretization. Selection is
myopic argmax of immediate expected value, or receding-horizon beam search
over depth-D action sequences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ARENA_HALF_WIDTH,
    MAX_LAYERS,
    SUPPORT_MIN_OVERLAP,
    VALID,
    Action,
    DecisionState,
    TaskSpec,
    apply_action,
    block_mass,
    overhang,
    validate_placement,
)
from .predictors import PerturbationConfig, PredictorBinding, ClassifierModel
from .stability import geometry_arrays, is_stable_static
from .metrics import StepRecord, TraceRecord

EDGE_SNAP_INSET = 0.01   # COM placed this far inside a support edge
DEDUP_TOL = 1e-6


class NoCandidateError(RuntimeError):
    """No legal action exists in this state."""


@dataclass(frozen=True)
class CandidateAction:
    action: Action
    p_stable: float     # predictor output
    value: float        # overhang after the placement


@dataclass(frozen=True)
class PlanNode:
    state: DecisionState
    path: tuple[Action, ...]
    survival: float     # product of p_stable along path
    value: float        # overhang of the reached geometry


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "myopic"            # myopic | lookahead
    depth: int = 1                  # lookahead horizon (myopic is depth 1)
    beam: int | None = 50           # None = full expansion
    lattice: float = 0.1
    p_min: float = 0.0              # risk floor on candidate p_stable
    seed: int = 0
    predictor: str = "veridical"    # veridical | ipe | heuristic | hybrid
    k: int = 50
    sigma_pos: float = 0.03
    sigma_grav: float = 0.0
    sigma_mu: float = 0.0
    n_switch: int = 3
    model_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("myopic", "lookahead"):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.kind == "myopic" and self.depth != 1:
            raise ValueError("myopic planning is depth 1 by definition")
        if self.depth < 1 or self.lattice <= 0 or (self.beam is not None and self.beam < 1):
            raise ValueError("bad planner configuration")

    def binding(self, model: ClassifierModel | None = None) -> PredictorBinding:
        if model is None and self.model_path:
            model = ClassifierModel.load(self.model_path)
        perturb = PerturbationConfig(
            k=self.k, sigma_pos=self.sigma_pos, sigma_grav=self.sigma_grav,
            sigma_mu=self.sigma_mu, seed=self.seed,
        )
        return PredictorBinding(self.predictor, perturb, model, self.n_switch)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "depth": self.depth, "beam": self.beam,
            "lattice": self.lattice, "p_min": self.p_min, "seed": self.seed,
            "predictor": self.predictor, "k": self.k, "sigma_pos": self.sigma_pos,
            "sigma_grav": self.sigma_grav, "sigma_mu": self.sigma_mu,
            "n_switch": self.n_switch, "model_path": self.model_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# candidate generation

def _subtract(intervals, cuts):
    """Remove open cut intervals from closed intervals (touching stays legal)."""
    segs = list(intervals)
    for clo, chi in cuts:
        out = []
        for lo, hi in segs:
            if chi <= lo or clo >= hi:
                out.append((lo, hi))
                continue
            if clo > lo:
                out.append((lo, clo))
            if chi < hi:
                out.append((chi, hi))
        segs = out
    return [(lo, hi) for lo, hi in segs if hi >= lo]


def _support_intervals(faces, half):
    """x-intervals of block centers whose summed overlap with `faces` >= the
    support threshold. Summed overlap is piecewise linear in x."""
    breakpoints = set()
    for lo, hi in faces:
        breakpoints.update((lo - half, lo + half, hi - half, hi + half))
    bps = sorted(breakpoints)

    def total(x):
        return sum(max(0.0, min(x + half, hi) - max(x - half, lo)) for lo, hi in faces)

    eps = SUPPORT_MIN_OVERLAP
    out = []
    for i in range(len(bps) - 1):
        a, b = bps[i], bps[i + 1]
        sa, sb = total(a), total(b)
        if sa >= eps and sb >= eps:
            seg = (a, b)
        elif sa < eps and sb < eps:
            continue
        else:
            x_cross = a + (eps - sa) * (b - a) / (sb - sa)
            seg = (a, x_cross) if sa >= eps else (x_cross, b)
        if out and abs(out[-1][1] - seg[0]) < 1e-12:
            out[-1] = (out[-1][0], seg[1])
        else:
            out.append(seg)
    return out


def legal_intervals(state: DecisionState, layer: int) -> list[tuple[float, float]]:
    """Closed x-intervals of legal centers for the next block at `layer`."""
    blocks = state.geometry.blocks
    w = state.remaining[0].width
    half = 0.5 * w
    bound = ARENA_HALF_WIDTH - half
    if layer == 0:
        segs = [] if blocks else [(-bound, bound)]   # ground carries only the first block
    else:
        faces = sorted((b.x_lo, b.x_hi) for b in blocks if b.layer == layer - 1)
        if not faces:
            return []
        segs = [
            (max(lo, -bound), min(hi, bound))
            for lo, hi in _support_intervals(faces, half)
            if min(hi, bound) >= max(lo, -bound)
        ]
    cuts = [
        (b.x - (half + 0.5 * b.spec.width), b.x + (half + 0.5 * b.spec.width))
        for b in blocks
        if b.layer == layer
    ]
    return _subtract(segs, cuts)


def generate_candidates(state: DecisionState, lattice_step: float = 0.1) -> list[Action]:
    """Deterministic finite reduction of the legal action set.

    Per reachable layer: interval endpoints, lattice multiples of the step
    inside the legal set, and snap points per supporting face (flush, center,
    COM just inside each edge). Everything is re-validated, deduplicated
    within 1e-6 and ordered (layer asc, x asc).
    """
    if not state.remaining:
        return []
    blocks = state.geometry.blocks
    w = state.remaining[0].width
    half = 0.5 * w
    present = {b.layer for b in blocks}
    layers = sorted(l + 1 for l in present if l + 1 < MAX_LAYERS) if blocks else [0]
    out: list[Action] = []
    for layer in layers:
        segs = legal_intervals(state, layer)
        if not segs:
            continue
        xs: list[float] = []
        for lo, hi in segs:
            xs.append(lo)
            xs.append(hi)
            k_lo = math.ceil((lo - 1e-12) / lattice_step)
            k_hi = math.floor((hi + 1e-12) / lattice_step)
            xs.extend(k * lattice_step for k in range(k_lo, k_hi + 1))
        if layer > 0:
            for b in blocks:
                if b.layer != layer - 1:
                    continue
                # face alignments plus critical offsets straddling each support
                # edge: the stability boundary lives there, and a coarse lattice
                # would miss both the high-overhang optima and the tempting
                # just-beyond-the-edge gambles
                xs.extend((
                    b.x,
                    b.x_lo + half,
                    b.x_hi - half,
                    b.x_lo,
                    b.x_hi,
                    b.x_lo + EDGE_SNAP_INSET,
                    b.x_hi - EDGE_SNAP_INSET,
                    b.x_lo - EDGE_SNAP_INSET,
                    b.x_hi + EDGE_SNAP_INSET,
                ))
        valid: list[float] = []
        for x in xs:
            if validate_placement(blocks, w, x, layer) == VALID:
                valid.append(x)
            else:
                for nudged in (x + 1e-9, x - 1e-9):   # roundoff at interval edges
                    if validate_placement(blocks, w, nudged, layer) == VALID:
                        valid.append(nudged)
                        break
        valid.sort()
        deduped: list[float] = []
        for x in valid:
            if not deduped or x - deduped[-1] > DEDUP_TOL:
                deduped.append(x)
        out.extend(Action(x, layer) for x in deduped)
    return out


# ---------------------------------------------------------------------------
# selection

def _selection_key(c: CandidateAction):
    """Total order: higher p*r, then higher p, smaller |x|, lower layer, smaller x."""
    return (
        -(c.p_stable * c.value),
        -c.p_stable,
        abs(c.action.x),
        c.action.layer,
        c.action.x,
    )


def _score_candidates(state: DecisionState, actions, predictor: PredictorBinding) -> list[CandidateAction]:
    xs, ws, layers, masses = geometry_arrays(state.geometry)
    spec = state.remaining[0]
    n = len(xs)
    xp = np.empty(n + 1)
    wp = np.empty(n + 1)
    lp = np.empty(n + 1, np.int64)
    mp = np.empty(n + 1)
    xp[:n], wp[:n], lp[:n], mp[:n] = xs, ws, layers, masses
    wp[n] = spec.width
    mp[n] = block_mass(spec)
    base_overhang = overhang(state.geometry) if state.geometry.blocks else 0.0
    scored = []
    for a in actions:
        xp[n] = a.x
        lp[n] = a.layer
        p = predictor.prob_arrays(xp, wp, lp, mp)
        r = max(base_overhang, abs(a.x) + 0.5 * spec.width)
        scored.append(CandidateAction(a, p, r))
    return scored


def myopic_select(state: DecisionState, predictor: PredictorBinding, config: PlannerConfig) -> Action:
    """Argmax of immediate expected value p_stable * overhang-after-placement."""
    actions = generate_candidates(state, config.lattice)
    if not actions:
        raise NoCandidateError("no legal action available")
    scored = _score_candidates(state, actions, predictor)
    pool = [c for c in scored if c.p_stable >= config.p_min] or scored
    return min(pool, key=_selection_key).action


def lookahead_select(state: DecisionState, predictor: PredictorBinding, config: PlannerConfig) -> Action:
    """Receding-horizon beam search to depth min(D, blocks remaining).

    Frontier nodes keep survival = product of predicted stability along the
    path; pruning and final choice rank by survival x overhang, with myopic
    tie-breaking on the path's first action.
    """
    action = _beam_search(state, predictor, config, config.p_min)
    if action is None and config.p_min > 0.0:
        action = _beam_search(state, predictor, config, 0.0)   # floor killed everything
    if action is None:
        raise NoCandidateError("no legal action available")
    return action


def _beam_search(state, predictor, config, p_min):
    depth = min(config.depth, len(state.remaining))
    root_overhang = overhang(state.geometry) if state.geometry.blocks else 0.0
    # node: (survival, value, state, first CandidateAction, path key)
    frontier = [(1.0, root_overhang, state, None, ())]
    terminals = []
    for _ in range(depth):
        children = []
        for surv, value, st, first, pkey in frontier:
            actions = generate_candidates(st, config.lattice)
            scored = _score_candidates(st, actions, predictor)
            scored = [c for c in scored if c.p_stable >= p_min]
            if not scored:
                if first is not None:
                    terminals.append((surv, value, st, first, pkey))
                continue
            for c in scored:
                children.append((
                    surv * c.p_stable,
                    c.value,
                    apply_action(st, c.action),
                    first if first is not None else c,
                    pkey + ((c.action.layer, c.action.x),),
                ))
        if not children:
            break
        children.sort(key=lambda n: (-(n[0] * n[1]), n[4]))
        if config.beam is not None and len(children) > config.beam:
            children = children[: config.beam]
        frontier = children
    terminals.extend(frontier)
    terminals = [t for t in terminals if t[3] is not None]
    if not terminals:
        return None
    best = min(
        terminals,
        key=lambda t: (
            -(t[0] * t[1]),
            -t[3].p_stable,
            abs(t[3].action.x),
            t[3].action.layer,
            t[3].action.x,
            t[4],
        ),
    )
    return best[3].action


def select_action(state: DecisionState, predictor: PredictorBinding, config: PlannerConfig) -> Action:
    if config.kind == "myopic":
        return myopic_select(state, predictor, config)
    return lookahead_select(state, predictor, config)


# ---------------------------------------------------------------------------
# episode rollout

def run_episode(
    task: TaskSpec,
    config: PlannerConfig,
    model: ClassifierModel | None = None,
    condition: str = "model",
) -> tuple[TraceRecord, float]:
    """Roll a full episode: the planner picks, the veridical oracle judges.

    True stability is checked after every placement regardless of the
    planner's internal predictor; a real collapse ends the episode with zero
    reward. Model traces carry zero durations so re-runs hash identically.
    """
    binding = config.binding(model).with_seed(config.seed)
    state = task.initial_state()
    steps: list[StepRecord] = []
    collapsed = False
    aborted = False
    while state.remaining:
        try:
            action = select_action(state, binding, config)
        except NoCandidateError:
            aborted = True
            break
        state = apply_action(state, action)
        stable = is_stable_static(state.geometry).stable
        steps.append(StepRecord(x=action.x, layer=action.layer, duration_s=0.0, stable=stable))
        if not stable:
            collapsed = True
            break
    complete = not (collapsed or aborted) and not state.remaining
    reward = overhang(state.geometry) if complete else 0.0
    trace = TraceRecord(
        task_id=task.id,
        sequence=tuple(b.width for b in task.sequence),
        condition=condition,
        steps=tuple(steps),
        reward=reward,
        aborted=aborted,
        meta={"planner": config.to_dict()},
    )
    return trace, reward
