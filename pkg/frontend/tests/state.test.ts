import { describe, expect, it } from 'vitest';
import { colorForVerdict, countdownFrom, formatCountdown, makeViewState } from '../src/state';
import { assertNoStabilityFields } from '../src/guard';
import type { ServerState } from '../src/api';

const baseState: ServerState = {
  session_id: 's1',
  condition: 'time_constrained',
  status: 'active',
  trial_index: 0,
  n_trials: 20,
  score: 0,
  trial_rewards: [],
  step_index: 0,
  geometry: { format: 'overhang/v1', blocks: [{ w: 1.2, h: 0.6, x: 0, layer: 0 }] },
  remaining: [0.6, 1.2],
  deadline_ms: 10_000,
};

describe('ghost color', () => {
  it('derives solely from the legality verdict', () => {
    expect(colorForVerdict('valid')).toBe('valid');
    expect(colorForVerdict('penetrates')).toBe('invalid');
    expect(colorForVerdict('unsupported')).toBe('invalid');
    expect(colorForVerdict('out_of_bounds')).toBe('invalid');
    expect(colorForVerdict(null)).toBe('unknown');
  });
});

describe('countdown', () => {
  it('derives solely from the server deadline', () => {
    expect(countdownFrom(baseState, 7_500)).toBeCloseTo(2.5);
    expect(countdownFrom(baseState, 11_000)).toBe(0);
    expect(countdownFrom({ ...baseState, deadline_ms: undefined }, 7_500)).toBeNull();
  });

  it('formats for the timer readout', () => {
    expect(formatCountdown(2.51)).toBe('2.5s');
    expect(formatCountdown(null)).toBe('');
  });
});

describe('makeViewState', () => {
  it('is pure and enables commits only on a valid ghost', () => {
    const v1 = makeViewState(baseState, { x: 0, layer: 1 }, 'valid', 7_500);
    expect(v1.commitsEnabled).toBe(true);
    const v2 = makeViewState(baseState, { x: 0, layer: 1 }, 'penetrates', 7_500);
    expect(v2.commitsEnabled).toBe(false);
    const v3 = makeViewState(baseState, { x: 0, layer: 1 }, null, 7_500);
    expect(v3.commitsEnabled).toBe(false); // network failure: unknown + disabled
    expect(v3.ghostColor).toBe('unknown');
  });

  it('flips to the session-done overlay when the server says complete', () => {
    const done = makeViewState({ ...baseState, status: 'complete' }, null, null, 0);
    expect(done.overlay).toBe('session_done');
  });
});

describe('stability-leak guard', () => {
  it('accepts legitimate pre-commit payloads', () => {
    expect(() => assertNoStabilityFields(baseState)).not.toThrow();
  });

  it('rejects payloads with stability hints anywhere', () => {
    expect(() => assertNoStabilityFields({ ...baseState, margin: 0.2 })).toThrow(/leak/);
    expect(() =>
      assertNoStabilityFields({ nested: { deep: { probability: 0.9 } } }),
    ).toThrow(/leak/);
    expect(() => assertNoStabilityFields({ p_stable: 1.0 })).toThrow(/leak/);
  });

  it('guards every render input construction', () => {
    expect(() =>
      makeViewState({ ...baseState, stable: true } as unknown as ServerState, null, null, 0),
    ).toThrow(/leak/);
  });
});
