// Wiring: pointer tracking with debounced previews, click to confirm,
// countdown repaint, trial/session overlays. Everything stateful lives on
// the server; this file only shuttles inputs and repaints.

import { SessionClient, type ServerState, type Verdict } from './api';
import { debounce } from './debounce';
import { pointerToGhost, type GhostAction } from './ghost';
import { drawView, type CanvasRect } from './render';
import { makeViewState, type ViewState } from './state';

const PREVIEW_DEBOUNCE_MS = 50;

async function boot(): Promise<void> {
  const canvas = document.getElementById('arena') as HTMLCanvasElement;
  const ctx = canvas.getContext('2d')!;
  const rect: CanvasRect = { width: canvas.width, height: canvas.height };
  const client = new SessionClient('');

  const params = new URLSearchParams(window.location.search);
  const condition = params.get('condition') ?? 'unconstrained';
  const seed = Number(params.get('seed') ?? '0');

  const created = await client.createSession(condition, seed);
  const sessionId = created.id;
  let server: ServerState = created.state;
  let ghost: GhostAction | null = null;
  let verdict: Verdict | null = null;
  let overlay: ViewState['overlay'] = 'none';
  let hoverStarted = 0;

  function repaint(): void {
    drawView(ctx, rect, makeViewState(server, ghost, verdict, Date.now(), overlay));
  }

  const requestPreview = debounce(async (g: GhostAction) => {
    const dwell = Date.now() - hoverStarted;
    try {
      verdict = await client.preview(sessionId, g.x, g.layer, dwell);
    } catch {
      verdict = null;   // unknown color, commits disabled
    }
    repaint();
  }, PREVIEW_DEBOUNCE_MS);

  canvas.addEventListener('pointermove', (ev) => {
    if (server.status !== 'active' || !server.geometry || !server.remaining?.length) return;
    const bounds = canvas.getBoundingClientRect();
    const px = ((ev.clientX - bounds.left) / bounds.width) * rect.width;
    const next = pointerToGhost(px, rect.width, server.geometry, server.remaining[0]);
    if (!ghost || next.x !== ghost.x || next.layer !== ghost.layer) {
      hoverStarted = Date.now();
      ghost = next;
      verdict = null;
      requestPreview(next);
    }
    repaint();
  });

  canvas.addEventListener('pointerup', async () => {
    if (!ghost || verdict !== 'valid' || server.status !== 'active') return;
    const res = await client.place(sessionId, ghost.x, ghost.layer);
    server = res.state;
    ghost = null;
    verdict = null;
    if (res.outcome === 'collapsed') overlay = 'collapsed';
    else if (res.outcome === 'timed_out') overlay = 'timed_out';
    else if (res.outcome === 'rejected') {
      canvas.classList.add('shake');
      setTimeout(() => canvas.classList.remove('shake'), 300);
    } else if (res.trial_reward !== undefined) overlay = 'trial_done';
    repaint();
    if (overlay !== 'none' && server.status === 'active') {
      setTimeout(() => {
        overlay = 'none';
        repaint();
      }, 1500);
    }
    if (server.status === 'complete') {
      const summary = await client.finalize(sessionId);
      const el = document.getElementById('summary')!;
      el.textContent =
        `Done! total reward ${summary.total_reward.toFixed(2)} over ` +
        `${summary.n_trials} trials (stable ${(summary.stable_proportion * 100).toFixed(0)}%)`;
    }
  });

  setInterval(async () => {
    if (server.status !== 'active') return;
    if (server.deadline_ms !== undefined && Date.now() > server.deadline_ms) {
      server = await client.getState(sessionId);   // server adjudicates the timeout
      overlay = server.status === 'active' ? 'timed_out' : 'session_done';
      repaint();
      setTimeout(() => {
        overlay = 'none';
        repaint();
      }, 1500);
    } else {
      repaint();   // countdown tick
    }
  }, 100);

  repaint();
}

boot().catch((err) => {
  document.body.textContent = `failed to start session: ${err}`;
});
