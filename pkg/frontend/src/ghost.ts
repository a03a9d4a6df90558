// Pointer-to-ghost mapping. The cursor x is continuous; the target layer is
// the lowest open layer above whatever the cursor column hovers over.

import type { GeometryDto } from './api';

export const ARENA_HALF_WIDTH = 4.0;
export const BLOCK_HEIGHT = 0.6;
export const MAX_LAYERS = 8;

export interface GhostAction {
  x: number;
  layer: number;
}

export function clampToArena(x: number, width: number): number {
  const bound = ARENA_HALF_WIDTH - width / 2;
  return Math.min(bound, Math.max(-bound, x));
}

/** Lowest open layer above the blocks the ghost's footprint overlaps.
 * Off-tower columns fall back to layer 0 (the server will call it
 * unsupported, which is exactly the feedback the participant should see). */
export function ghostLayer(geometry: GeometryDto, x: number, width: number): number {
  let highest = -1;
  const lo = x - width / 2;
  const hi = x + width / 2;
  for (const b of geometry.blocks) {
    const blo = b.x - b.w / 2;
    const bhi = b.x + b.w / 2;
    if (Math.min(hi, bhi) - Math.max(lo, blo) > 0 && b.layer > highest) {
      highest = b.layer;
    }
  }
  return Math.min(highest + 1, MAX_LAYERS - 1);
}

export function pointerToGhost(
  pointerX: number,
  canvasWidth: number,
  geometry: GeometryDto,
  blockWidth: number,
): GhostAction {
  const worldX = (pointerX / canvasWidth) * 2 * ARENA_HALF_WIDTH - ARENA_HALF_WIDTH;
  const x = clampToArena(worldX, blockWidth);
  return { x, layer: ghostLayer(geometry, x, blockWidth) };
}
