// The pre-commit render path must never see stability information. Anything
// the server could accidentally leak (a probability, a margin, a stability
// flag) is rejected here before it can reach a draw call.

const FORBIDDEN_KEYS = ['stable', 'stability', 'margin', 'probability', 'p_stable', 'prob'];

export function assertNoStabilityFields(payload: unknown, path = ''): void {
  if (payload === null || typeof payload !== 'object') return;
  for (const [key, value] of Object.entries(payload as Record<string, unknown>)) {
    const lower = key.toLowerCase();
    for (const banned of FORBIDDEN_KEYS) {
      if (lower === banned || lower.endsWith(`_${banned}`)) {
        throw new Error(`stability leak in pre-commit payload at ${path}${key}`);
      }
    }
    assertNoStabilityFields(value, `${path}${key}.`);
  }
}
