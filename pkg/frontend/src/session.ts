/** UI session state machine: a faithful client of the service contract.
 *
 * States: idle -> loading -> answering -> submitting -> (answering | done),
 * with error as a retryable side state.  One outstanding request at a time;
 * a step can never be submitted twice (the submitting latch drops duplicate
 * calls, and step numbers come from the service).
 */

import { ApiError, SessionApi, StimulusPayload } from "./api.js";

export type UiState =
  | "idle"
  | "loading"
  | "answering"
  | "submitting"
  | "done"
  | "error";

export interface UiSnapshot {
  state: UiState;
  step: number;
  of: number;
  stimulus: StimulusPayload | null;
  entropyHistory: number[];
  lastError: string | null;
}

export class UiSession {
  private state: UiState = "idle";
  private sessionId: string | null = null;
  private step = 0;
  private of = 0;
  private stimulus: StimulusPayload | null = null;
  private entropyHistory: number[] = [];
  private lastError: string | null = null;
  private listeners: Array<(snap: UiSnapshot) => void> = [];

  constructor(private api: SessionApi) {}

  snapshot(): UiSnapshot {
    return {
      state: this.state,
      step: this.step,
      of: this.of,
      stimulus: this.stimulus,
      entropyHistory: [...this.entropyHistory],
      lastError: this.lastError,
    };
  }

  onChange(listener: (snap: UiSnapshot) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const fn of this.listeners) fn(snap);
  }

  private setState(state: UiState, error: string | null = null): void {
    this.state = state;
    this.lastError = error;
    this.emit();
  }

  /** Create the session and fetch the first stimulus. */
  async start(scenario: string, steps: number, seed?: number): Promise<void> {
    if (this.state !== "idle" && this.state !== "error") return;
    this.setState("loading");
    try {
      const created = await this.api.createSession(scenario, steps, "oed", seed);
      this.sessionId = created.session_id;
      this.of = created.of;
      if (created.status === "complete") {
        await this.finish();
        return;
      }
      await this.fetchNext();
    } catch (err) {
      this.setState("error", this.describe(err));
    }
  }

  private async fetchNext(): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    const next = await this.api.nextStimulus(this.sessionId);
    this.step = next.step;
    this.of = next.of;
    this.stimulus = next.stimulus;
    this.setState("answering");
  }

  /** Submit the slider value for the current step; advances or completes. */
  async submit(value: number): Promise<void> {
    if (this.state !== "answering") return; // debounce / no double submit
    if (!(value >= 0 && value <= 1)) {
      this.setState("answering", "value must lie in [0, 1]");
      return;
    }
    this.setState("submitting");
    try {
      const res = await this.api.submitResponse(this.sessionId!, this.step, value);
      this.entropyHistory.push(res.entropy);
      if (res.complete) {
        await this.finish();
      } else {
        await this.fetchNext();
      }
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 422)) {
        // inline message; the answering view (and slider) stays up
        this.setState("answering", err.detail);
        return;
      }
      this.setState("error", this.describe(err));
    }
  }

  /** Retry after a network-level failure. */
  async retry(): Promise<void> {
    if (this.state !== "error" || !this.sessionId) return;
    this.setState("loading");
    try {
      await this.fetchNext();
    } catch (err) {
      this.setState("error", this.describe(err));
    }
  }

  private async finish(): Promise<void> {
    try {
      const posterior = await this.api.posterior(this.sessionId!);
      this.entropyHistory = posterior.entropy_history;
    } catch {
      /* completion view falls back to locally collected entropies */
    }
    this.stimulus = null;
    this.setState("done");
  }

  private describe(err: unknown): string {
    return err instanceof Error ? err.message : String(err);
  }
}
