/** Client-side decoding of the service's run-length segment masks.
 *
 * A mask is `[start, length, start, length, ...]` over the row-major
 * flattened chip, with strictly ascending, non-overlapping starts.
 */

export function validateRuns(runs: number[], size: number): void {
  if (runs.length % 2 !== 0) {
    throw new Error(`RLE must have an even number of entries, got ${runs.length}`);
  }
  let prevEnd = 0;
  for (let i = 0; i < runs.length; i += 2) {
    const start = runs[i];
    const length = runs[i + 1];
    if (!Number.isInteger(start) || !Number.isInteger(length) || length < 1) {
      throw new Error(`invalid run (${start}, ${length})`);
    }
    if (start < prevEnd) {
      throw new Error(`runs overlap or are out of order at offset ${start}`);
    }
    prevEnd = start + length;
    if (prevEnd > size) {
      throw new Error(`run (${start}, ${length}) exceeds image size ${size}`);
    }
  }
}

/** Decode runs to a flat 0/1 mask of `size` pixels. */
export function decodeRle(runs: number[], size: number): Uint8Array {
  validateRuns(runs, size);
  const mask = new Uint8Array(size);
  for (let i = 0; i < runs.length; i += 2) {
    mask.fill(1, runs[i], runs[i] + runs[i + 1]);
  }
  return mask;
}

export function pixelCount(runs: number[]): number {
  let total = 0;
  for (let i = 1; i < runs.length; i += 2) total += runs[i];
  return total;
}

/** Union of several flat masks of equal size. */
export function maskUnion(masks: Uint8Array[], size: number): Uint8Array {
  const out = new Uint8Array(size);
  for (const mask of masks) {
    if (mask.length !== size) {
      throw new Error(`mask size ${mask.length} != ${size}`);
    }
    for (let i = 0; i < size; i++) if (mask[i]) out[i] = 1;
  }
  return out;
}
