/** DOM wiring: two faces, a preference slider, progress, completion view. */

import { SessionApi, StimulusPayload } from "./api.js";
import { faceSvg } from "./faces.js";
import { UiSession, UiSnapshot } from "./session.js";

function sparkline(values: number[], width = 260, height = 60): string {
  if (values.length === 0) return "";
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const pts = values
    .map((v, i) => {
      const x = (i / Math.max(values.length - 1, 1)) * (width - 8) + 4;
      const y = height - 8 - ((v - lo) / span) * (height - 16);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  return (
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    `<polyline points="${pts}" fill="none" stroke="#3366cc" stroke-width="2"/>` +
    "</svg>"
  );
}

function stimulusView(stimulus: StimulusPayload): string {
  if (stimulus.kind !== "two_image_comparison") {
    return `<p class="error">unsupported stimulus kind: ${stimulus.kind}</p>`;
  }
  let left: string;
  let right: string;
  try {
    left = faceSvg(stimulus.left.features);
    right = faceSvg(stimulus.right.features);
  } catch (err) {
    return `<p class="error">malformed stimulus: ${String(err)}</p>`;
  }
  return (
    '<div class="faces">' +
    `<figure data-image="${stimulus.left.image}">${left}<figcaption>left</figcaption></figure>` +
    `<figure data-image="${stimulus.right.image}">${right}<figcaption>right</figcaption></figure>` +
    "</div>"
  );
}

export function render(root: HTMLElement, snap: UiSnapshot): void {
  const parts: string[] = ['<div class="console">'];
  if (snap.state === "idle" || snap.state === "loading") {
    parts.push("<p>preparing your first question…</p>");
  } else if (snap.state === "error") {
    parts.push(
      `<p class="banner error">${snap.lastError ?? "something went wrong"}</p>`,
      '<button id="retry">retry</button>',
    );
  } else if (snap.state === "done") {
    parts.push(
      "<h2>all done, thank you!</h2>",
      "<p>posterior entropy over the session:</p>",
      sparkline(snap.entropyHistory),
    );
  } else if (snap.stimulus) {
    parts.push(
      `<p class="progress">question ${snap.step} of ${snap.of}</p>`,
      stimulusView(snap.stimulus),
      snap.lastError ? `<p class="banner inline">${snap.lastError}</p>` : "",
      '<label>which do you prefer?',
      '<input id="slider" type="range" min="0" max="1" step="0.01" value="0.5"/>',
      "</label>",
      '<div class="slider-labels"><span>strongly prefer left</span><span>strongly prefer right</span></div>',
      `<button id="submit" ${snap.state === "submitting" ? "disabled" : ""}>submit</button>`,
    );
  }
  parts.push("</div>");
  root.innerHTML = parts.join("\n");
}

export function mount(root: HTMLElement, baseUrl: string, scenario = "mixed_effects", steps = 10): UiSession {
  const api = new SessionApi(baseUrl);
  const session = new UiSession(api);
  session.onChange((snap) => {
    render(root, snap);
    const submit = root.querySelector<HTMLButtonElement>("#submit");
    const slider = root.querySelector<HTMLInputElement>("#slider");
    if (submit && slider) {
      submit.addEventListener("click", () => {
        // slider reports left-preference at 0; the service's scale is
        // "probability of preferring right", so pass the value through
        void session.submit(parseFloat(slider.value));
      });
    }
    const retry = root.querySelector<HTMLButtonElement>("#retry");
    if (retry) retry.addEventListener("click", () => void session.retry());
  });
  void session.start(scenario, steps);
  return session;
}
