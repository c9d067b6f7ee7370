// @vitest-environment jsdom
/** End-to-end: the compiled console drives a live service through a full
 * 10-step session via scripted DOM interaction (set slider, click submit),
 * then the session event log is validated against the schema.
 *
 * The service (Python) is spawned as a subprocess; the test skips itself if
 * the package is not importable in this environment.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readdirSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { mount } from "../src/main.js";

const PORT = 8433;
const BASE = `http://127.0.0.1:${PORT}`;
const STEPS = 10;

function pythonReady(): boolean {
  const probe = spawnSync("python3", ["-c", "import veig.service"], { timeout: 30000 });
  return probe.status === 0;
}

async function waitForService(ms = 60000): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/v1/sessions/probe/posterior`);
      if (res.status === 404) return; // service is answering
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("service did not come up");
}

const available = pythonReady();
let service: ChildProcess | null = null;
let logDir = "";

beforeAll(async () => {
  if (!available) return;
  logDir = mkdtempSync(join(tmpdir(), "veig-e2e-"));
  service = spawn(
    "python3",
    [
      "-m", "veig.service",
      "--port", String(PORT),
      "--log-dir", logDir,
      "--vi-steps", "150",
      "--eig-n", "80",
      "--eig-k", "40",
    ],
    { stdio: "ignore" },
  );
  await waitForService();
}, 90000);

afterAll(() => {
  service?.kill();
});

async function waitFor(predicate: () => boolean, ms = 60000): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((r) => setTimeout(r, 50));
  }
  throw new Error("condition not reached");
}

describe.runIf(available)("full session through the console", () => {
  it(
    "completes 10 steps with accepted responses and a finite entropy trail",
    async () => {
      const root = document.createElement("div");
      document.body.appendChild(root);
      const session = mount(root, BASE, "mixed_effects", STEPS);

      for (let step = 1; step <= STEPS; step++) {
        await waitFor(
          () =>
            session.snapshot().state === "answering" &&
            session.snapshot().step === step,
        );
        // two rendered faces plus the slider are on screen
        expect(root.querySelectorAll("svg").length).toBeGreaterThanOrEqual(2);
        const slider = root.querySelector<HTMLInputElement>("#slider")!;
        const submit = root.querySelector<HTMLButtonElement>("#submit")!;
        slider.value = String(0.05 + 0.09 * step); // scripted participant
        submit.click();
      }
      await waitFor(() => session.snapshot().state === "done");
      const snap = session.snapshot();
      expect(snap.entropyHistory.length).toBe(STEPS + 1); // prior + each step
      expect(snap.entropyHistory.every((v) => Number.isFinite(v))).toBe(true);
      expect(root.innerHTML).toContain("all done");
      expect(root.innerHTML).toContain("polyline"); // entropy sparkline

      // validate the service's event log against the session schema
      const files = readdirSync(logDir).filter((f) => f.startsWith("session_"));
      expect(files.length).toBe(1);
      const events = readFileSync(join(logDir, files[0]), "utf-8")
        .trim()
        .split("\n")
        .map((line) => JSON.parse(line));
      expect(events[0]).toMatchObject({
        event: "created",
        scenario: "mixed_effects",
        steps: STEPS,
        v: 1,
      });
      const responses = events.filter((e) => e.event === "response");
      expect(responses.length).toBe(STEPS);
      for (const r of responses) {
        expect(typeof r.step).toBe("number");
        expect(Array.isArray(r.design)).toBe(true);
        expect(r.value).toBeGreaterThanOrEqual(0);
        expect(r.value).toBeLessThanOrEqual(1);
        expect(Number.isFinite(r.entropy)).toBe(true);
      }
    },
    300000,
  );
});

describe.runIf(!available)("service unavailable", () => {
  it.skip("end-to-end skipped: python service not importable", () => {});
});
