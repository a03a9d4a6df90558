// Schematic 2D canvas drawing: arena grid, placed blocks, ghost preview,
// sequence panel, score and countdown. Collapse is shown symbolically (tint
// plus overlay), never animated physics.

import type { ViewState } from './state';
import { ARENA_HALF_WIDTH, BLOCK_HEIGHT, MAX_LAYERS } from './ghost';
import { formatCountdown } from './state';

const COLORS = {
  background: '#f7f4ee',
  grid: '#ddd6c8',
  block: '#8a6d4a',
  blockEdge: '#5d492f',
  ghostValid: 'rgba(70, 160, 90, 0.55)',
  ghostInvalid: 'rgba(200, 70, 60, 0.55)',
  ghostUnknown: 'rgba(120, 120, 120, 0.45)',
  text: '#2f2a24',
  overlay: 'rgba(40, 35, 30, 0.75)',
};

export interface CanvasRect {
  width: number;
  height: number;
}

function worldToPx(x: number, z: number, rect: CanvasRect): [number, number] {
  const px = ((x + ARENA_HALF_WIDTH) / (2 * ARENA_HALF_WIDTH)) * rect.width;
  const arenaHeight = MAX_LAYERS * BLOCK_HEIGHT;
  const py = rect.height - (z / arenaHeight) * rect.height;
  return [px, py];
}

export function drawView(ctx: CanvasRenderingContext2D, rect: CanvasRect, view: ViewState): void {
  ctx.clearRect(0, 0, rect.width, rect.height);
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, rect.width, rect.height);

  ctx.strokeStyle = COLORS.grid;
  ctx.lineWidth = 1;
  for (let layer = 0; layer <= MAX_LAYERS; layer++) {
    const [, y] = worldToPx(0, layer * BLOCK_HEIGHT, rect);
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(rect.width, y);
    ctx.stroke();
  }

  const geometry = view.server.geometry;
  if (geometry) {
    for (const b of geometry.blocks) {
      const [x0, y0] = worldToPx(b.x - b.w / 2, (b.layer + 1) * BLOCK_HEIGHT, rect);
      const [x1, y1] = worldToPx(b.x + b.w / 2, b.layer * BLOCK_HEIGHT, rect);
      ctx.fillStyle = COLORS.block;
      ctx.fillRect(x0, y0, x1 - x0, y1 - y0);
      ctx.strokeStyle = COLORS.blockEdge;
      ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    }
  }

  if (view.ghost && view.server.remaining && view.server.remaining.length > 0) {
    const w = view.server.remaining[0];
    const g = view.ghost;
    const [x0, y0] = worldToPx(g.x - w / 2, (g.layer + 1) * BLOCK_HEIGHT, rect);
    const [x1, y1] = worldToPx(g.x + w / 2, g.layer * BLOCK_HEIGHT, rect);
    ctx.fillStyle =
      view.ghostColor === 'valid'
        ? COLORS.ghostValid
        : view.ghostColor === 'invalid'
          ? COLORS.ghostInvalid
          : COLORS.ghostUnknown;
    ctx.fillRect(x0, y0, x1 - x0, y1 - y0);
  }

  ctx.fillStyle = COLORS.text;
  ctx.font = '14px sans-serif';
  const trial = `trial ${view.server.trial_index + 1}/${view.server.n_trials}`;
  const score = `score ${view.server.score.toFixed(2)}`;
  ctx.fillText(`${trial}   ${score}`, 10, 20);
  if (view.countdownSeconds !== null) {
    ctx.fillText(`time ${formatCountdown(view.countdownSeconds)}`, 10, 40);
  }
  if (view.server.remaining) {
    const seq = view.server.remaining.map((w) => w.toFixed(1)).join('  ');
    ctx.fillText(`next: ${seq}`, 10, rect.height - 10);
  }

  if (view.overlay !== 'none') {
    ctx.fillStyle = COLORS.overlay;
    ctx.fillRect(0, 0, rect.width, rect.height);
    ctx.fillStyle = '#fff';
    ctx.font = '22px sans-serif';
    const label =
      view.overlay === 'collapsed'
        ? 'Tower collapsed - no reward this trial'
        : view.overlay === 'timed_out'
          ? 'Out of time - no reward this trial'
          : view.overlay === 'trial_done'
            ? 'Trial complete!'
            : 'Session complete';
    ctx.fillText(label, rect.width / 2 - 150, rect.height / 2);
  }
}
