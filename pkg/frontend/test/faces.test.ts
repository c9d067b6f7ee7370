import { describe, expect, it } from "vitest";

import { decodeFeatures, faceSvg } from "../src/faces.js";

function oneHot(mouth: number, brow: number): number[] {
  const f = new Array(6).fill(0);
  f[mouth] = 1;
  f[3 + brow] = 1;
  return f;
}

describe("stimulus rendering", () => {
  it("decodes the one-hot pair", () => {
    expect(decodeFeatures(oneHot(2, 1))).toEqual({ mouth: 2, brow: 1 });
  });

  it("rejects malformed payloads", () => {
    expect(() => decodeFeatures([1, 0, 0])).toThrow("expected 6 features");
    expect(() => decodeFeatures([0, 0, 0, 0, 0, 0])).toThrow("malformed");
  });

  it("distinct feature pairs give visibly distinct faces", () => {
    const a = faceSvg(oneHot(0, 0)); // smile, flat brows
    const b = faceSvg(oneHot(1, 2)); // frown, angled brows
    expect(a).not.toEqual(b);
  });

  it("identical features give identical faces", () => {
    expect(faceSvg(oneHot(2, 2))).toEqual(faceSvg(oneHot(2, 2)));
  });

  it("all nine grid faces are unique and well-formed", () => {
    const seen = new Set<string>();
    for (let m = 0; m < 3; m++) {
      for (let b = 0; b < 3; b++) {
        const svg = faceSvg(oneHot(m, b));
        expect(svg).toContain("<svg");
        expect(svg).toContain("</svg>");
        seen.add(svg);
      }
    }
    expect(seen.size).toBe(9);
  });
});
