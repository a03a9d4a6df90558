// Thin client for the session service. All mutation goes through these five
// endpoints; the UI never talks to anything else.

export interface BlockDto {
  w: number;
  h: number;
  x: number;
  layer: number;
}

export interface GeometryDto {
  format: string;
  blocks: BlockDto[];
}

export interface ServerState {
  session_id: string;
  condition: 'time_constrained' | 'unconstrained';
  status: 'active' | 'complete' | 'finalized';
  trial_index: number;
  n_trials: number;
  score: number;
  trial_rewards: number[];
  step_index?: number;
  geometry?: GeometryDto;
  remaining?: number[];
  deadline_ms?: number;
}

export type Verdict = 'valid' | 'penetrates' | 'unsupported' | 'out_of_bounds';

export interface PlaceResponse {
  outcome: 'placed_stable' | 'collapsed' | 'timed_out' | 'rejected';
  trial_reward?: number;
  verdict?: Verdict;
  state: ServerState;
}

export interface FinalizeResponse {
  traces_path: string;
  n_trials: number;
  total_reward: number;
  stable_proportion: number;
  mean_decision_time: number;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SessionClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch.bind(globalThis),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`${path} failed: ${res.status}`);
    return res.json() as Promise<T>;
  }

  async createSession(condition: string, seed: number): Promise<{ id: string; state: ServerState }> {
    return this.post('/sessions', { condition, seed });
  }

  async getState(id: string): Promise<ServerState> {
    const res = await this.fetchImpl(`${this.baseUrl}/sessions/${id}/state`);
    if (!res.ok) throw new Error(`state failed: ${res.status}`);
    return res.json() as Promise<ServerState>;
  }

  async preview(id: string, x: number, layer: number, dwellMs: number): Promise<Verdict> {
    const body = await this.post<{ verdict: Verdict }>(`/sessions/${id}/preview`, {
      x,
      layer,
      dwell_ms: dwellMs,
    });
    return body.verdict;
  }

  async place(id: string, x: number, layer: number): Promise<PlaceResponse> {
    return this.post(`/sessions/${id}/place`, { x, layer, client_ts: Date.now() / 1000 });
  }

  async finalize(id: string): Promise<FinalizeResponse> {
    return this.post(`/sessions/${id}/finalize`, {});
  }
}
