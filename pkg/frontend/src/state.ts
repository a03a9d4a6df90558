// View state is a pure function of the last server state plus local ghost
// input; nothing in here mutates, so rendering is replayable.

import type { ServerState, Verdict } from './api';
import type { GhostAction } from './ghost';
import { assertNoStabilityFields } from './guard';

export type GhostColor = 'valid' | 'invalid' | 'unknown';

export interface ViewState {
  server: ServerState;
  ghost: GhostAction | null;
  ghostColor: GhostColor;
  countdownSeconds: number | null;
  overlay: 'none' | 'collapsed' | 'timed_out' | 'trial_done' | 'session_done';
  commitsEnabled: boolean;
}

export function colorForVerdict(verdict: Verdict | null): GhostColor {
  if (verdict === null) return 'unknown';      // network failure: disable commits
  return verdict === 'valid' ? 'valid' : 'invalid';
}

export function makeViewState(
  server: ServerState,
  ghost: GhostAction | null,
  verdict: Verdict | null,
  nowMs: number,
  overlay: ViewState['overlay'] = 'none',
): ViewState {
  assertNoStabilityFields({ server, ghost, verdict });
  const ghostColor = colorForVerdict(verdict);
  return {
    server,
    ghost,
    ghostColor,
    countdownSeconds: countdownFrom(server, nowMs),
    overlay: server.status !== 'active' ? 'session_done' : overlay,
    commitsEnabled: server.status === 'active' && ghost !== null && ghostColor === 'valid',
  };
}

/** Countdown derives from the server deadline alone; the client clock only
 * supplies "now". */
export function countdownFrom(server: ServerState, nowMs: number): number | null {
  if (server.deadline_ms === undefined) return null;
  return Math.max(0, (server.deadline_ms - nowMs) / 1000);
}

export function formatCountdown(seconds: number | null): string {
  if (seconds === null) return '';
  return seconds.toFixed(1) + 's';
}
