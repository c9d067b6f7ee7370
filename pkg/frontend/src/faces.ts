/** Inline vector faces for the 3x3 stimulus grid.
 *
 * A stimulus feature vector is a pair of one-hots: mouth level in the first
 * three coordinates, eyebrow level in the last three.  Rendering is a pure
 * function of the features, so the nine faces are deterministic and need no
 * image assets.
 */

export interface FaceFeatures {
  mouth: number; // 0 smile, 1 frown, 2 showing teeth
  brow: number; // 0 flat, 1 raised, 2 angled
}

export function decodeFeatures(features: number[]): FaceFeatures {
  if (features.length !== 6) {
    throw new Error(`expected 6 features, got ${features.length}`);
  }
  const mouth = features.slice(0, 3).findIndex((v) => v === 1);
  const brow = features.slice(3, 6).findIndex((v) => v === 1);
  if (mouth < 0 || brow < 0) {
    throw new Error("malformed stimulus: want one-hot mouth and brow levels");
  }
  return { mouth, brow };
}

const MOUTHS = [
  // smile
  '<path d="M30 62 Q50 78 70 62" fill="none" stroke="#222" stroke-width="3"/>',
  // frown
  '<path d="M30 70 Q50 54 70 70" fill="none" stroke="#222" stroke-width="3"/>',
  // showing teeth
  '<rect x="32" y="60" width="36" height="12" rx="3" fill="#fff" stroke="#222" stroke-width="2.5"/>' +
    '<line x1="41" y1="60" x2="41" y2="72" stroke="#222" stroke-width="1.5"/>' +
    '<line x1="50" y1="60" x2="50" y2="72" stroke="#222" stroke-width="1.5"/>' +
    '<line x1="59" y1="60" x2="59" y2="72" stroke="#222" stroke-width="1.5"/>',
];

const BROWS = [
  // flat
  '<line x1="28" y1="30" x2="44" y2="30" stroke="#222" stroke-width="3"/>' +
    '<line x1="56" y1="30" x2="72" y2="30" stroke="#222" stroke-width="3"/>',
  // raised
  '<path d="M28 32 Q36 24 44 32" fill="none" stroke="#222" stroke-width="3"/>' +
    '<path d="M56 32 Q64 24 72 32" fill="none" stroke="#222" stroke-width="3"/>',
  // angled
  '<line x1="28" y1="26" x2="44" y2="33" stroke="#222" stroke-width="3"/>' +
    '<line x1="56" y1="33" x2="72" y2="26" stroke="#222" stroke-width="3"/>',
];

export function faceSvg(features: number[]): string {
  const { mouth, brow } = decodeFeatures(features);
  return [
    '<svg viewBox="0 0 100 100" width="160" height="160" role="img">',
    '<circle cx="50" cy="50" r="44" fill="#ffe9a8" stroke="#222" stroke-width="3"/>',
    '<circle cx="36" cy="42" r="4.5" fill="#222"/>',
    '<circle cx="64" cy="42" r="4.5" fill="#222"/>',
    BROWS[brow],
    MOUTHS[mouth],
    "</svg>",
  ].join("");
}
