import { describe, expect, it, vi } from 'vitest';
import { SessionClient } from '../src/api';

function mockFetch(payload: unknown) {
  return vi.fn(async (_url: string, _init?: RequestInit) => ({
    ok: true,
    status: 200,
    json: async () => payload,
  })) as unknown as typeof fetch;
}

describe('SessionClient', () => {
  it('creates sessions at POST /sessions', async () => {
    const fetchImpl = mockFetch({ id: 'abc', state: { status: 'active' } });
    const client = new SessionClient('http://host', fetchImpl as never);
    const res = await client.createSession('unconstrained', 7);
    expect(res.id).toBe('abc');
    const [url, init] = (fetchImpl as never as ReturnType<typeof vi.fn>).mock.calls[0];
    expect(url).toBe('http://host/sessions');
    expect(JSON.parse((init as RequestInit).body as string)).toEqual({
      condition: 'unconstrained',
      seed: 7,
    });
  });

  it('sends previews with dwell and reads only the verdict', async () => {
    const fetchImpl = mockFetch({ verdict: 'unsupported' });
    const client = new SessionClient('', fetchImpl as never);
    const verdict = await client.preview('abc', 1.5, 2, 120);
    expect(verdict).toBe('unsupported');
    const [url, init] = (fetchImpl as never as ReturnType<typeof vi.fn>).mock.calls[0];
    expect(url).toBe('/sessions/abc/preview');
    expect(JSON.parse((init as RequestInit).body as string)).toEqual({
      x: 1.5,
      layer: 2,
      dwell_ms: 120,
    });
  });

  it('stamps placements with the client clock', async () => {
    const fetchImpl = mockFetch({ outcome: 'placed_stable', state: {} });
    const client = new SessionClient('', fetchImpl as never);
    await client.place('abc', 0.4, 1);
    const [, init] = (fetchImpl as never as ReturnType<typeof vi.fn>).mock.calls[0];
    const body = JSON.parse((init as RequestInit).body as string);
    expect(body.x).toBe(0.4);
    expect(typeof body.client_ts).toBe('number');
  });

  it('raises on http errors', async () => {
    const fetchImpl = vi.fn(async () => ({ ok: false, status: 404, json: async () => ({}) }));
    const client = new SessionClient('', fetchImpl as never);
    await expect(client.getState('missing')).rejects.toThrow(/404/);
  });
});
