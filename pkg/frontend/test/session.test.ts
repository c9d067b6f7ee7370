import { describe, expect, it } from "vitest";

import { SessionApi } from "../src/api.js";
import { UiSession } from "../src/session.js";

/** In-memory service double implementing the /v1 contract and its state
 * machine (one outstanding stimulus, step matching, idempotent replays). */
class MockService {
  step = 0;
  status: "active" | "awaiting-response" | "complete" = "active";
  steps: number;
  entropies: number[] = [21.9];
  pendingDesign: [number, number] | null = null;
  requests: string[] = [];

  constructor(steps = 3) {
    this.steps = steps;
    if (steps === 0) this.status = "complete";
  }

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(input);
    this.requests.push(`${init?.method ?? "GET"} ${url.pathname}`);
    if (url.pathname === "/v1/sessions" && init?.method === "POST") {
      const body = JSON.parse(String(init.body));
      if (body.scenario !== "mixed_effects") {
        return this.json(400, { detail: "unknown scenario" });
      }
      return this.json(201, {
        session_id: "abc123",
        step: 0,
        of: this.steps,
        status: this.status,
      });
    }
    if (url.pathname === "/v1/sessions/abc123/next") {
      if (this.status === "complete") return this.json(409, { detail: "session complete" });
      if (this.status === "active") {
        this.pendingDesign = [this.step % 9, (this.step + 4) % 9];
        this.status = "awaiting-response";
      }
      const [i, j] = this.pendingDesign!;
      const feat = (k: number) => {
        const f = new Array(6).fill(0);
        f[Math.floor(k / 3)] = 1;
        f[3 + (k % 3)] = 1;
        return f;
      };
      return this.json(200, {
        step: this.step + 1,
        of: this.steps,
        stimulus: {
          kind: "two_image_comparison",
          left: { image: i, features: feat(i) },
          right: { image: j, features: feat(j) },
        },
        deadline_ms: 30000,
      });
    }
    if (url.pathname === "/v1/sessions/abc123/response" && init?.method === "POST") {
      const body = JSON.parse(String(init.body));
      if (this.status !== "awaiting-response") {
        return this.json(409, { detail: "no outstanding stimulus" });
      }
      if (body.step !== this.step + 1) return this.json(409, { detail: "step mismatch" });
      if (body.value < 0 || body.value > 1) return this.json(422, { detail: "value outside [0, 1]" });
      this.step += 1;
      this.pendingDesign = null;
      const entropy = 21.9 - this.step;
      this.entropies.push(entropy);
      this.status = this.step >= this.steps ? "complete" : "active";
      return this.json(200, {
        accepted: true,
        step: this.step,
        entropy,
        complete: this.status === "complete",
      });
    }
    if (url.pathname === "/v1/sessions/abc123/posterior") {
      return this.json(200, {
        scenario: "mixed_effects",
        step: this.step,
        of: this.steps,
        status: this.status,
        entropy: this.entropies[this.entropies.length - 1],
        entropy_history: this.entropies,
      });
    }
    return this.json(404, { detail: "unknown session" });
  };
}

function makeSession(steps = 3): { session: UiSession; mock: MockService } {
  const mock = new MockService(steps);
  const api = new SessionApi("http://service", mock.fetch);
  return { session: new UiSession(api), mock };
}

describe("session lifecycle", () => {
  it("start renders the first question", async () => {
    const { session } = makeSession(10);
    await session.start("mixed_effects", 10);
    const snap = session.snapshot();
    expect(snap.state).toBe("answering");
    expect(snap.step).toBe(1);
    expect(snap.of).toBe(10);
    expect(snap.stimulus?.kind).toBe("two_image_comparison");
  });

  it("zero steps goes straight to completion", async () => {
    const { session } = makeSession(0);
    await session.start("mixed_effects", 0);
    expect(session.snapshot().state).toBe("done");
  });

  it("service down surfaces a retryable error and no session", async () => {
    const api = new SessionApi("http://service", async () => {
      throw new Error("connection refused");
    });
    const session = new UiSession(api);
    await session.start("mixed_effects", 5);
    const snap = session.snapshot();
    expect(snap.state).toBe("error");
    expect(snap.lastError).toContain("network error");
  });

  it("unknown scenario surfaces the 400 detail", async () => {
    const { session } = makeSession(3);
    await session.start("nope", 3);
    expect(session.snapshot().state).toBe("error");
    expect(session.snapshot().lastError).toContain("unknown scenario");
  });
});

describe("submitting", () => {
  it("mid-slider value advances to the next question", async () => {
    const { session } = makeSession(3);
    await session.start("mixed_effects", 3);
    await session.submit(0.5);
    const snap = session.snapshot();
    expect(snap.state).toBe("answering");
    expect(snap.step).toBe(2);
    expect(snap.entropyHistory.length).toBe(1);
  });

  it("completes after the final step with the full entropy trajectory", async () => {
    const { session } = makeSession(2);
    await session.start("mixed_effects", 2);
    await session.submit(0.2);
    await session.submit(0.9);
    const snap = session.snapshot();
    expect(snap.state).toBe("done");
    expect(snap.entropyHistory.length).toBe(3); // prior + one per step
    expect(snap.entropyHistory.every((v) => Number.isFinite(v))).toBe(true);
  });

  it("double submit sends a single POST", async () => {
    const { session, mock } = makeSession(3);
    await session.start("mixed_effects", 3);
    await Promise.all([session.submit(0.5), session.submit(0.5)]);
    const posts = mock.requests.filter((r) => r.includes("POST /v1/sessions/abc123/response"));
    expect(posts.length).toBe(1);
  });

  it("out-of-range value never reaches the service", async () => {
    const { session, mock } = makeSession(3);
    await session.start("mixed_effects", 3);
    await session.submit(1.7);
    expect(session.snapshot().state).toBe("answering");
    expect(session.snapshot().lastError).toContain("[0, 1]");
    const posts = mock.requests.filter((r) => r.includes("POST /v1/sessions/abc123/response"));
    expect(posts.length).toBe(0);
  });

  it("a 409 keeps the answering view up with an inline message", async () => {
    const { session, mock } = makeSession(3);
    await session.start("mixed_effects", 3);
    // sabotage the step counter to force a mismatch
    mock.step = 5;
    await session.submit(0.5);
    const snap = session.snapshot();
    expect(snap.state).toBe("answering");
    expect(snap.lastError).toContain("step mismatch");
  });

  it("never submits while not answering", async () => {
    const { session, mock } = makeSession(2);
    await session.submit(0.5); // idle: ignored
    expect(mock.requests.length).toBe(0);
  });
});

describe("state machine under randomized call orders", () => {
  // property test: whatever order start/submit/retry arrive in, the client
  // never double-submits a step and always lands in a legal state
  const actions = ["start", "submit", "submit", "retry"] as const;

  function* permutations<T>(items: T[]): Generator<T[]> {
    if (items.length <= 1) {
      yield items;
      return;
    }
    for (let i = 0; i < items.length; i++) {
      const rest = [...items.slice(0, i), ...items.slice(i + 1)];
      for (const perm of permutations(rest)) yield [items[i], ...perm];
    }
  }

  it("all interleavings preserve the contract", async () => {
    for (const order of permutations([...actions])) {
      const { session, mock } = makeSession(2);
      for (const action of order) {
        if (action === "start") await session.start("mixed_effects", 2);
        else if (action === "submit") await session.submit(0.4);
        else await session.retry();
      }
      const snap = session.snapshot();
      expect(["idle", "answering", "done", "error"]).toContain(snap.state);
      // the mock would have 409'd a duplicate; count unique response steps
      const posts = mock.requests.filter((r) => r.includes("/response"));
      expect(posts.length).toBeLessThanOrEqual(mock.steps);
    }
  });
});
