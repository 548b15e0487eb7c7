// Object colors. This is the same bit-interleaved palette the service uses
// for its indexed mask PNGs, so on-screen overlay colors match saved files
// and palette colors can be reverse-mapped to object ids exactly.

export type RGB = readonly [number, number, number];

function paletteEntry(index: number): RGB {
  let c = index;
  let r = 0;
  let g = 0;
  let b = 0;
  for (let j = 0; j < 8; j++) {
    r |= (c & 1) << (7 - j);
    g |= ((c >> 1) & 1) << (7 - j);
    b |= ((c >> 2) & 1) << (7 - j);
    c >>= 3;
  }
  return [r, g, b];
}

export const PALETTE: readonly RGB[] = Array.from({ length: 256 }, (_, i) =>
  paletteEntry(i),
);

const REVERSE = new Map<number, number>(
  PALETTE.map(([r, g, b], i) => [(r << 16) | (g << 8) | b, i]),
);

export function objectColor(objectId: number): RGB {
  return PALETTE[objectId & 0xff]!;
}

export function objectColorCss(objectId: number): string {
  const [r, g, b] = objectColor(objectId);
  return `rgb(${r}, ${g}, ${b})`;
}

/** Object id for an exact palette color, or 0 when unknown. */
export function labelForColor(r: number, g: number, b: number): number {
  return REVERSE.get((r << 16) | (g << 8) | b) ?? 0;
}

/**
 * Label map from decoded mask-PNG pixels (RGBA, palette colors applied by
 * the canvas). The server renders indexed PNGs; browsers expand them to
 * RGBA, so colors are reverse-mapped to ids pixel by pixel.
 */
export function labelsFromRgba(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
): Uint8Array {
  const labels = new Uint8Array(width * height);
  for (let p = 0; p < width * height; p++) {
    labels[p] = labelForColor(
      rgba[p * 4]!,
      rgba[p * 4 + 1]!,
      rgba[p * 4 + 2]!,
    );
  }
  return labels;
}

/** Translucent RGBA overlay for a label map (background stays transparent). */
export function overlayRgba(
  labels: Uint8Array,
  width: number,
  height: number,
  alpha = 130,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let p = 0; p < width * height; p++) {
    const id = labels[p]!;
    if (id === 0) continue;
    const [r, g, b] = PALETTE[id & 0xff]!;
    out[p * 4] = r;
    out[p * 4 + 1] = g;
    out[p * 4 + 2] = b;
    out[p * 4 + 3] = alpha;
  }
  return out;
}
