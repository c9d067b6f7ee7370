/** Typed client for the /v1 session API. */

export interface CreateSessionResponse {
  session_id: string;
  step: number;
  of: number;
  status: string;
}

export interface StimulusImage {
  image: number;
  features: number[];
}

export interface StimulusPayload {
  kind: string;
  left: StimulusImage;
  right: StimulusImage;
}

export interface NextResponse {
  step: number;
  of: number;
  stimulus: StimulusPayload;
  deadline_ms: number;
}

export interface SubmitResponse {
  accepted: boolean;
  step: number;
  entropy: number;
  complete: boolean;
}

export interface PosteriorResponse {
  scenario: string;
  step: number;
  of: number;
  status: string;
  entropy: number;
  entropy_history: number[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SessionApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        detail = body.detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  createSession(scenario: string, steps: number, strategy = "oed", seed?: number) {
    return this.request<CreateSessionResponse>("/v1/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ scenario, steps, strategy, seed }),
    });
  }

  nextStimulus(sessionId: string) {
    return this.request<NextResponse>(`/v1/sessions/${sessionId}/next`);
  }

  submitResponse(sessionId: string, step: number, value: number) {
    return this.request<SubmitResponse>(`/v1/sessions/${sessionId}/response`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ step, value }),
    });
  }

  posterior(sessionId: string) {
    return this.request<PosteriorResponse>(`/v1/sessions/${sessionId}/posterior`);
  }
}
