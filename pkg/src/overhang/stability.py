"""Ground-truth stability for block towers.

Two independent routes:

* `is_stable_static` — static-equilibrium feasibility. Unilateral frictional
  point contacts at face-overlap endpoints; per block two force balances and
  one torque balance; a configuration is stable iff some nonnegative
  combination of friction-cone rays satisfies all balances. Solved by a small
  in-repo phase-1 simplex (Bland's rule), JIT-compiled because Monte Carlo
  prediction hammers it.
* `is_stable_chain` — recursive center-of-mass check for towers whose support
  graph is a forest (every block rests on exactly one block or the ground).
  Exact for frictionless stacks; used to cross-validate the solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import BLOCK_HEIGHT, TowerGeometry, GeometryError, block_mass

GRAVITY_DEFAULT = (0.0, -1.0)   # unit magnitude, straight down
FRICTION_DEFAULT = 0.5
FEASIBILITY_TOL = 1e-9          # constraint violation allowed to still count as feasible
MARGINAL_BAND = 1e-6            # |chain margin| below this is numerically marginal

GROUND = -1


class ChainNotApplicableError(ValueError):
    """Support graph is not a forest; use is_stable_static instead."""


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    margin: float | None    # chain-oracle support margin; None when the chain model does not apply


@dataclass(frozen=True)
class ContactInterface:
    lower: int            # supporting block index, or GROUND
    upper: int            # supported block index
    x_lo: float
    x_hi: float

    @property
    def points(self) -> tuple[float, float]:
        return (self.x_lo, self.x_hi)


@dataclass(frozen=True)
class EquilibriumSystem:
    """Equality system A f = b over nonnegative friction-cone ray magnitudes f.

    Rows: 3 per block (x-force, z-force, torque about the block COM).
    Columns: rays per contact point; ray directions recorded for inspection.
    """
    a: np.ndarray
    b: np.ndarray
    ray_points: np.ndarray      # (n_cols, 2) contact point of each column
    ray_dirs: np.ndarray        # (n_cols, 2) force direction of each column


def geometry_arrays(geometry: TowerGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(x, width, layer, mass) arrays for the solver kernels."""
    n = len(geometry.blocks)
    xs = np.empty(n)
    ws = np.empty(n)
    layers = np.empty(n, np.int64)
    masses = np.empty(n)
    for i, blk in enumerate(geometry.blocks):
        xs[i] = blk.x
        ws[i] = blk.spec.width
        layers[i] = blk.layer
        masses[i] = block_mass(blk.spec)
    return xs, ws, layers, masses


def build_contacts(geometry: TowerGeometry) -> list[ContactInterface]:
    """One interface per vertically adjacent pair with positive face overlap.

    Ground interfaces for layer-0 blocks. Raises GeometryError if a raised
    block has no interface below it (unreachable for validated geometry).
    """
    blocks = geometry.blocks
    contacts: list[ContactInterface] = []
    for j, b in enumerate(blocks):
        if b.layer == 0:
            contacts.append(ContactInterface(GROUND, j, b.x_lo, b.x_hi))
            continue
        found = False
        for i, a in enumerate(blocks):
            if a.layer == b.layer - 1:
                lo = max(a.x_lo, b.x_lo)
                hi = min(a.x_hi, b.x_hi)
                if hi - lo > 0.0:
                    contacts.append(ContactInterface(i, j, lo, hi))
                    found = True
        if not found:
            raise GeometryError(f"block {j} has no supporting contact")
    return contacts


def assemble_equilibrium(
    geometry: TowerGeometry,
    gravity: tuple[float, float] = GRAVITY_DEFAULT,
    mu: float = FRICTION_DEFAULT,
) -> EquilibriumSystem:
    """Reference (pure python) assembly of the equilibrium feasibility system."""
    xs, ws, layers, masses = geometry_arrays(geometry)
    contacts = build_contacts(geometry)
    n = len(geometry.blocks)
    n_rays = 1 if mu <= 0.0 else 2
    ncols = 2 * n_rays * len(contacts)
    a = np.zeros((3 * n, ncols))
    b = np.zeros(3 * n)
    pts = np.zeros((ncols, 2))
    dirs = np.zeros((ncols, 2))
    gx, gz = gravity
    for k in range(n):
        b[3 * k] = -masses[k] * gx
        b[3 * k + 1] = -masses[k] * gz
    col = 0
    for c in contacts:
        pz = BLOCK_HEIGHT * layers[c.upper]
        for px in c.points:
            for ray in range(n_rays):
                rx = 0.0 if n_rays == 1 else (mu if ray == 0 else -mu)
                rz = 1.0
                u = c.upper
                a[3 * u, col] += rx
                a[3 * u + 1, col] += rz
                a[3 * u + 2, col] += (px - xs[u]) * rz - (pz - (BLOCK_HEIGHT * layers[u] + 0.5 * BLOCK_HEIGHT)) * rx
                if c.lower != GROUND:
                    low = c.lower
                    a[3 * low, col] -= rx
                    a[3 * low + 1, col] -= rz
                    a[3 * low + 2, col] -= (px - xs[low]) * rz - (pz - (BLOCK_HEIGHT * layers[low] + 0.5 * BLOCK_HEIGHT)) * rx
                pts[col] = (px, pz)
                dirs[col] = (rx, rz)
                col += 1
    return EquilibriumSystem(a, b, pts, dirs)


@njit(cache=True)
def phase1_residual(a, b):
    """Phase-1 simplex for {x >= 0 : a x = b}; returns the residual optimum.

    The system is feasible iff the returned value is ~0. Bland's rule, so it
    terminates even on degenerate systems; artificials never re-enter.
    """
    m, n = a.shape
    width = n + m + 1
    t = np.zeros((m + 1, width))
    for i in range(m):
        s = -1.0 if b[i] < 0.0 else 1.0
        for j in range(n):
            t[i, j] = s * a[i, j]
        t[i, n + i] = 1.0
        t[i, n + m] = s * b[i]
    for j in range(n):
        acc = 0.0
        for i in range(m):
            acc += t[i, j]
        t[m, j] = -acc
    acc = 0.0
    for i in range(m):
        acc += t[i, n + m]
    t[m, n + m] = -acc
    basis = np.empty(m, np.int64)
    for i in range(m):
        basis[i] = n + i
    max_iter = 200 + 20 * (m + n)
    for _ in range(max_iter):
        enter = -1
        for j in range(n):   # Bland: first improving structural column
            if t[m, j] < -1e-12:
                enter = j
                break
        if enter < 0:
            break
        best = 1e300
        for i in range(m):
            aij = t[i, enter]
            if aij > 1e-12:
                r = t[i, n + m] / aij
                if r < best:
                    best = r
        if best >= 1e300:
            break
        leave = -1
        for i in range(m):   # Bland tie-break: smallest basis index at the min ratio
            aij = t[i, enter]
            if aij > 1e-12:
                r = t[i, n + m] / aij
                if r <= best + 1e-12 and (leave < 0 or basis[i] < basis[leave]):
                    leave = i
        piv = t[leave, enter]
        for j in range(width):
            t[leave, j] /= piv
        for i in range(m + 1):
            if i != leave:
                f = t[i, enter]
                if f != 0.0:
                    for j in range(width):
                        t[i, j] -= f * t[leave, j]
        basis[leave] = enter
    return -t[m, n + m]


@njit(cache=True)
def _tower_residual(xs, ws, layers, masses, gx, gz, mu):
    """Assemble contacts + equilibrium system from raw arrays and solve phase-1.

    Mirrors build_contacts/assemble_equilibrium (cross-checked in tests);
    kept separate so Monte Carlo prediction runs entirely in machine code.
    A raised block with no contact below makes the system trivially
    infeasible, so perturbed copies that lose support come out unstable.
    """
    n = xs.shape[0]
    cap = n * n + n
    cl = np.empty(cap, np.int64)
    cu = np.empty(cap, np.int64)
    clo = np.empty(cap)
    chi = np.empty(cap)
    nc = 0
    for j in range(n):
        if layers[j] == 0:
            cl[nc] = -1
            cu[nc] = j
            clo[nc] = xs[j] - 0.5 * ws[j]
            chi[nc] = xs[j] + 0.5 * ws[j]
            nc += 1
        else:
            found = False
            for i in range(n):
                if layers[i] == layers[j] - 1:
                    lo = max(xs[i] - 0.5 * ws[i], xs[j] - 0.5 * ws[j])
                    hi = min(xs[i] + 0.5 * ws[i], xs[j] + 0.5 * ws[j])
                    if hi - lo > 0.0:
                        cl[nc] = i
                        cu[nc] = j
                        clo[nc] = lo
                        chi[nc] = hi
                        nc += 1
                        found = True
            if not found:
                return 1.0  # floating block: weight cannot balance
    n_rays = 1 if mu <= 0.0 else 2
    ncols = 2 * n_rays * nc
    a = np.zeros((3 * n, ncols))
    b = np.zeros(3 * n)
    for k in range(n):
        b[3 * k] = -masses[k] * gx
        b[3 * k + 1] = -masses[k] * gz
    col = 0
    for c in range(nc):
        u = cu[c]
        low = cl[c]
        pz = BLOCK_HEIGHT * layers[u]
        zu = BLOCK_HEIGHT * layers[u] + 0.5 * BLOCK_HEIGHT
        for p in range(2):
            px = clo[c] if p == 0 else chi[c]
            for ray in range(n_rays):
                rx = 0.0 if n_rays == 1 else (mu if ray == 0 else -mu)
                rz = 1.0
                a[3 * u, col] += rx
                a[3 * u + 1, col] += rz
                a[3 * u + 2, col] += (px - xs[u]) * rz - (pz - zu) * rx
                if low >= 0:
                    zl = BLOCK_HEIGHT * layers[low] + 0.5 * BLOCK_HEIGHT
                    a[3 * low, col] -= rx
                    a[3 * low + 1, col] -= rz
                    a[3 * low + 2, col] -= (px - xs[low]) * rz - (pz - zl) * rx
                col += 1
    return phase1_residual(a, b)


def stability_residual_arrays(xs, ws, layers, masses, gravity=GRAVITY_DEFAULT, mu=FRICTION_DEFAULT) -> float:
    return _tower_residual(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ws, dtype=np.float64),
        np.ascontiguousarray(layers, dtype=np.int64),
        np.ascontiguousarray(masses, dtype=np.float64),
        float(gravity[0]), float(gravity[1]), float(mu),
    )


def is_stable_arrays(xs, ws, layers, masses, gravity=GRAVITY_DEFAULT, mu=FRICTION_DEFAULT) -> bool:
    return stability_residual_arrays(xs, ws, layers, masses, gravity, mu) <= FEASIBILITY_TOL


def is_stable_static(
    geometry: TowerGeometry,
    gravity: tuple[float, float] = GRAVITY_DEFAULT,
    mu: float = FRICTION_DEFAULT,
) -> StabilityVerdict:
    """Deterministic equilibrium-feasibility stability; order-independent.

    The margin field carries the chain-oracle margin when the support graph
    is a forest, else None; the boolean comes from the feasibility solve.
    """
    xs, ws, layers, masses = geometry_arrays(geometry)
    residual = _tower_residual(xs, ws, layers, masses, float(gravity[0]), float(gravity[1]), float(mu))
    margin = _chain_margin(geometry)
    return StabilityVerdict(bool(residual <= FEASIBILITY_TOL), margin)


def _chain_margin(geometry: TowerGeometry) -> float | None:
    """Minimum carried-COM distance to a support edge, or None if not a forest."""
    blocks = geometry.blocks
    n = len(blocks)
    if n == 0:
        return None
    parent = [GROUND] * n
    lo = [0.0] * n
    hi = [0.0] * n
    for j, b in enumerate(blocks):
        if b.layer == 0:
            lo[j], hi[j] = b.x_lo, b.x_hi   # ground supports the full footprint
            continue
        supporters = []
        for i, a in enumerate(blocks):
            if a.layer == b.layer - 1:
                olo = max(a.x_lo, b.x_lo)
                ohi = min(a.x_hi, b.x_hi)
                if ohi - olo > 0.0:
                    supporters.append((i, olo, ohi))
        if len(supporters) != 1:
            return None
        parent[j], lo[j], hi[j] = supporters[0]
    carried_m = [block_mass(b.spec) for b in blocks]
    carried_mx = [block_mass(b.spec) * b.x for b in blocks]
    for j in sorted(range(n), key=lambda k: -blocks[k].layer):
        if parent[j] != GROUND:
            carried_m[parent[j]] += carried_m[j]
            carried_mx[parent[j]] += carried_mx[j]
    margin = min(
        min(carried_mx[j] / carried_m[j] - lo[j], hi[j] - carried_mx[j] / carried_m[j])
        for j in range(n)
    )
    return margin


def com_margin(geometry: TowerGeometry) -> float:
    """Chain-model stability margin; negative when some carried COM is outside.

    Only defined for forest support graphs.
    """
    margin = _chain_margin(geometry)
    if margin is None:
        raise ChainNotApplicableError("support graph is not a forest")
    return margin


def is_stable_chain(geometry: TowerGeometry) -> StabilityVerdict:
    """Stable iff every carried-subassembly COM is strictly inside its support interval."""
    margin = com_margin(geometry)
    return StabilityVerdict(margin > 0.0, margin)


def gravity_from_angle(angle_rad: float) -> tuple[float, float]:
    """Unit gravity tilted by `angle_rad` from straight down (positive tilts +x)."""
    return (float(np.sin(angle_rad)), float(-np.cos(angle_rad)))
