"""Independent oracles used to cross-check the package implementations.

Everything here is deliberately written against different primitives than
the code under test: the permutation enumerator replays orders one by one
with its own interval arithmetic, and the Monte Carlo reference uses the
stdlib RNG plus the torque-chain rule instead of the solver pipeline.
"""
from __future__ import annotations

import itertools
import math
import random

from overhang.model import TowerGeometry
from overhang.stability import is_stable_static


def _intervals_overlap(alo, ahi, blo, bhi):
    return min(ahi, bhi) - max(alo, blo)


def brute_force_order_dependency(geometry: TowerGeometry) -> tuple[int, int, float]:
    """Plain permutation replay; no subset memoization, separate legality code."""
    blocks = [(b.x - 0.5 * b.spec.width, b.x + 0.5 * b.spec.width, b.layer) for b in geometry.blocks]
    n = len(blocks)
    valid = stable = 0
    for perm in itertools.permutations(range(n)):
        ok = True
        placed: list[int] = []
        for idx in perm:
            lo, hi, layer = blocks[idx]
            for j in placed:
                jlo, jhi, jlayer = blocks[j]
                if jlayer == layer and _intervals_overlap(lo, hi, jlo, jhi) > 1e-9:
                    ok = False
            if not ok:
                break
            if layer == 0:
                if placed:   # ground only carries the first block of an order
                    ok = False
                    break
            else:
                support = sum(
                    max(0.0, _intervals_overlap(lo, hi, blocks[j][0], blocks[j][1]))
                    for j in placed
                    if blocks[j][2] == layer - 1
                )
                if support < 0.05:
                    ok = False
                    break
            placed.append(idx)
        if not ok:
            continue
        valid += 1
        all_stable = True
        for k in range(1, n + 1):
            prefix = TowerGeometry(tuple(geometry.blocks[i] for i in perm[:k]))
            if not is_stable_static(prefix).stable:
                all_stable = False
                break
        if all_stable:
            stable += 1
    gamma = 1.0 - stable / valid if valid else float("nan")
    return valid, stable, gamma


def chain_stable(blocks: list[tuple[float, float, int]]) -> bool:
    """Torque-chain verdict for single-support stacks given (x, w, layer) triples."""
    n = len(blocks)
    parent = [None] * n
    interval = [None] * n
    for j, (x, w, layer) in enumerate(blocks):
        if layer == 0:
            interval[j] = (x - w / 2, x + w / 2)
            parent[j] = -1
            continue
        supporters = []
        for i, (xi, wi, li) in enumerate(blocks):
            if li == layer - 1:
                lo = max(x - w / 2, xi - wi / 2)
                hi = min(x + w / 2, xi + wi / 2)
                if hi - lo > 0:
                    supporters.append((i, lo, hi))
        if len(supporters) != 1:
            return None
        parent[j] = supporters[0][0]
        interval[j] = (supporters[0][1], supporters[0][2])
    mass = [w * 0.6 for (_, w, _) in blocks]
    carried_m = list(mass)
    carried_mx = [m * b[0] for m, b in zip(mass, blocks)]
    for j in sorted(range(n), key=lambda k: -blocks[k][2]):
        if parent[j] >= 0:
            carried_m[parent[j]] += carried_m[j]
            carried_mx[parent[j]] += carried_mx[j]
    for j in range(n):
        com = carried_mx[j] / carried_m[j]
        lo, hi = interval[j]
        if not (lo < com < hi):
            return False
    return True


def brute_monte_carlo_stability(blocks, sigma_pos, k, seed) -> float:
    """Reference IPE estimate: stdlib RNG + chain rule, no solver involved.

    Only valid for single-support stacks (where chain == equilibrium).
    """
    rng = random.Random(seed)
    stable = 0
    for _ in range(k):
        jittered = [(x + rng.gauss(0.0, sigma_pos), w, layer) for (x, w, layer) in blocks]
        if chain_stable(jittered):
            stable += 1
    return stable / k


def brute_force_best_reward(task, lattice_step: float) -> float:
    """Exhaustive rollout over the candidate lattice: best achievable episode
    reward with the true oracle (collapsed branches yield zero and are cut)."""
    from overhang.model import apply_action, overhang
    from overhang.planners import generate_candidates

    best = 0.0

    def rec(state):
        nonlocal best
        if not state.remaining:
            best = max(best, overhang(state.geometry))
            return
        for action in generate_candidates(state, lattice_step):
            nxt = apply_action(state, action)
            if is_stable_static(nxt.geometry).stable:
                rec(nxt)

    rec(task.initial_state())
    return best
