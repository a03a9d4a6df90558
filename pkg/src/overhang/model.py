"""Core rules of the overhang-tower environment.

Pure value-semantics data types (blocks, placements, geometries, decision
states) and the legality / reward arithmetic that everything else builds on.
No physics here: stability lives in `overhang.stability`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

ARENA_HALF_WIDTH = 4.0       # arena spans x in [-4, 4]
BLOCK_HEIGHT = 0.6
BLOCK_WIDTHS = (0.6, 1.2, 1.8)
MAX_LAYERS = 8               # layer k occupies z in [0.6k, 0.6(k+1)]
SUPPORT_MIN_OVERLAP = 0.05   # minimum summed face overlap to count as supported
PENETRATION_TOL = 1e-9       # interior overlap below this is "touching", not penetration
SEQUENCE_LENGTH = 6          # blocks per standard task
FORMAT_TAG = "overhang/v1"

# legality verdicts
VALID = "valid"
PENETRATES = "penetrates"
UNSUPPORTED = "unsupported"
OUT_OF_BOUNDS = "out_of_bounds"


class InvalidActionError(ValueError):
    """Raised when an operation requires a valid action but got an illegal one."""


class GeometryError(ValueError):
    """Raised for geometries that violate the environment invariants."""


@dataclass(frozen=True)
class BlockSpec:
    width: float
    height: float = BLOCK_HEIGHT

    def __post_init__(self):
        if self.width not in BLOCK_WIDTHS:
            raise ValueError(f"block width must be one of {BLOCK_WIDTHS}, got {self.width}")
        if self.height != BLOCK_HEIGHT:
            raise ValueError(f"block height is fixed at {BLOCK_HEIGHT}, got {self.height}")


@dataclass(frozen=True)
class PlacedBlock:
    spec: BlockSpec
    x: float      # horizontal center
    layer: int    # discrete height index, 0-based

    @property
    def x_lo(self) -> float:
        return self.x - 0.5 * self.spec.width

    @property
    def x_hi(self) -> float:
        return self.x + 0.5 * self.spec.width

    @property
    def z_lo(self) -> float:
        return BLOCK_HEIGHT * self.layer

    @property
    def z_hi(self) -> float:
        return BLOCK_HEIGHT * (self.layer + 1)


@dataclass(frozen=True)
class TowerGeometry:
    """Ordered sequence of placements; order is construction order."""
    blocks: tuple[PlacedBlock, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    def append(self, block: PlacedBlock) -> "TowerGeometry":
        return TowerGeometry(self.blocks + (block,))


@dataclass(frozen=True)
class Action:
    x: float
    layer: int


@dataclass(frozen=True)
class DecisionState:
    geometry: TowerGeometry
    remaining: tuple[BlockSpec, ...]


@dataclass(frozen=True)
class TaskSpec:
    id: str
    sequence: tuple[BlockSpec, ...]   # sequence[0] is the pre-positioned base

    def initial_state(self) -> DecisionState:
        """State after the base block is pre-placed at the ground center."""
        base = PlacedBlock(self.sequence[0], 0.0, 0)
        return DecisionState(TowerGeometry((base,)), self.sequence[1:])


def make_task(id: str, widths: Sequence[float]) -> TaskSpec:
    return TaskSpec(id, tuple(BlockSpec(w) for w in widths))


def validate_placement(blocks: Sequence[PlacedBlock], width: float, x: float, layer: int) -> str:
    """Legality of dropping a block of `width` at (x, layer) onto `blocks`.

    Returns one of VALID / PENETRATES / UNSUPPORTED / OUT_OF_BOUNDS.
    Pure and deterministic; illegality is a verdict, never an exception.
    A placed block must rest on an existing block; the ground only carries
    the first block of a construction, so layer-0 drops next to an existing
    tower are unsupported (otherwise parking blocks at the arena edge would
    trivialize the overhang objective).
    """
    half = 0.5 * width
    if layer < 0 or layer >= MAX_LAYERS:
        return OUT_OF_BOUNDS
    if abs(x) + half > ARENA_HALF_WIDTH + 1e-12:
        return OUT_OF_BOUNDS
    lo = x - half
    hi = x + half
    support = 0.0
    for b in blocks:
        if b.layer == layer:
            if min(hi, b.x_hi) - max(lo, b.x_lo) > PENETRATION_TOL:
                return PENETRATES
        elif b.layer == layer - 1:
            ov = min(hi, b.x_hi) - max(lo, b.x_lo)
            if ov > 0.0:
                support += ov
    if layer == 0:
        if blocks:
            return UNSUPPORTED
    elif support < SUPPORT_MIN_OVERLAP:
        return UNSUPPORTED
    return VALID


def validate_action(state: DecisionState, action: Action) -> str:
    if not state.remaining:
        raise ValueError("no blocks remaining in this state")
    return validate_placement(state.geometry.blocks, state.remaining[0].width, action.x, action.layer)


def apply_action(state: DecisionState, action: Action) -> DecisionState:
    """Place the head of the remaining sequence at the action's position.

    The input state is untouched (value semantics). Raises InvalidActionError
    if the action is not legal.
    """
    verdict = validate_action(state, action)
    if verdict != VALID:
        raise InvalidActionError(f"action ({action.x}, {action.layer}) is {verdict}")
    block = PlacedBlock(state.remaining[0], action.x, action.layer)
    return DecisionState(state.geometry.append(block), state.remaining[1:])


def overhang(geometry: TowerGeometry) -> float:
    """Maximum lateral extent of any block from the centerline: max |x| + w/2."""
    if not geometry.blocks:
        raise GeometryError("overhang of an empty geometry is undefined")
    return max(abs(b.x) + 0.5 * b.spec.width for b in geometry.blocks)


def episode_reward(prefix_stabilities: Sequence[bool], final_geometry: TowerGeometry) -> float:
    """Final overhang if every construction prefix was stable, else zero."""
    if len(prefix_stabilities) != len(final_geometry.blocks):
        raise ValueError("need one stability flag per placement")
    if not all(prefix_stabilities):
        return 0.0
    return overhang(final_geometry)


def block_mass(spec: BlockSpec) -> float:
    """Unit-density mass; only relative masses matter for equilibrium."""
    return spec.width * spec.height * 1.0


def check_geometry(geometry: TowerGeometry, require_origin_base: bool = True) -> None:
    """Raise GeometryError unless all structural invariants hold.

    Checks bounds, pairwise non-penetration and per-block support. The origin
    rule (first stored block centered at ground) only applies to geometries
    built as episodes, so it can be switched off for raw geometry input.
    """
    blocks = geometry.blocks
    for i, b in enumerate(blocks):
        if b.layer < 0 or b.layer >= MAX_LAYERS or abs(b.x) + 0.5 * b.spec.width > ARENA_HALF_WIDTH + 1e-12:
            raise GeometryError(f"block {i} out of bounds")
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            a, b = blocks[i], blocks[j]
            if a.layer == b.layer and min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo) > PENETRATION_TOL:
                raise GeometryError(f"blocks {i} and {j} penetrate")
    for j, b in enumerate(blocks):
        if b.layer == 0:
            continue
        support = 0.0
        for a in blocks:
            if a.layer == b.layer - 1:
                ov = min(a.x_hi, b.x_hi) - max(a.x_lo, b.x_lo)
                if ov > 0.0:
                    support += ov
        if support < SUPPORT_MIN_OVERLAP:
            raise GeometryError(f"block {j} lacks support (overlap {support:.4f})")
    if require_origin_base and blocks:
        if blocks[0].x != 0.0 or blocks[0].layer != 0:
            raise GeometryError("first block must sit at the ground center")


def mirror_geometry(geometry: TowerGeometry) -> TowerGeometry:
    return TowerGeometry(tuple(replace(b, x=-b.x) for b in geometry.blocks))


def mirror_state(state: DecisionState) -> DecisionState:
    return DecisionState(mirror_geometry(state.geometry), state.remaining)


def mirror_action(action: Action) -> Action:
    return Action(-action.x, action.layer)


# ---------------------------------------------------------------------------
# interchange formats (all tagged "overhang/v1")

def geometry_to_dict(geometry: TowerGeometry) -> dict:
    return {
        "format": FORMAT_TAG,
        "blocks": [
            {"w": b.spec.width, "h": b.spec.height, "x": b.x, "layer": b.layer}
            for b in geometry.blocks
        ],
    }


def geometry_from_dict(data: dict) -> TowerGeometry:
    if data.get("format") != FORMAT_TAG:
        raise GeometryError(f"unsupported geometry format: {data.get('format')!r}")
    blocks = tuple(
        PlacedBlock(BlockSpec(d["w"], d.get("h", BLOCK_HEIGHT)), float(d["x"]), int(d["layer"]))
        for d in data["blocks"]
    )
    return TowerGeometry(blocks)


def load_geometry(path: str) -> TowerGeometry:
    with open(path) as fh:
        return geometry_from_dict(json.load(fh))


def save_geometry(geometry: TowerGeometry, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(geometry_to_dict(geometry), fh, indent=2)


def tasks_to_dict(tasks: Iterable[TaskSpec]) -> dict:
    return {
        "format": FORMAT_TAG,
        "tasks": [{"id": t.id, "sequence": [b.width for b in t.sequence]} for t in tasks],
    }


def tasks_from_dict(data: dict) -> list[TaskSpec]:
    if data.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported task-file format: {data.get('format')!r}")
    return [make_task(t["id"], t["sequence"]) for t in data["tasks"]]


def load_tasks(path: str) -> list[TaskSpec]:
    with open(path) as fh:
        return tasks_from_dict(json.load(fh))


def save_tasks(tasks: Iterable[TaskSpec], path: str) -> None:
    with open(path, "w") as fh:
        json.dump(tasks_to_dict(tasks), fh, indent=2)
