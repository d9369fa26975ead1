/** Selection pane: thumbnails for brushed chips, overlays for segments.
 *
 * Chip level shows a paged grid of thumbnail <img> tags. Segment level
 * groups the selected "chip:segment" ids by chip and draws each chip's
 * thumbnail on a canvas with non-selected segments dimmed, using the
 * run-length masks from the segments endpoint.
 */

import type { ApiClient, ChipSegments } from "./api.js";
import { decodeRle, maskUnion } from "./rle.js";
import type { ViewState } from "./state.js";
import { pageCount, pageItems } from "./state.js";

/** "chip:segment" → [chipId, segmentId]; segment ids are integers. */
export function splitSegmentId(id: string): [string, number] {
  const at = id.lastIndexOf(":");
  if (at < 0) throw new Error(`not a segment id: ${id}`);
  return [id.slice(0, at), Number(id.slice(at + 1))];
}

export function groupByChip(segmentIds: readonly string[]): Map<string, number[]> {
  const groups = new Map<string, number[]>();
  for (const id of segmentIds) {
    const [chip, seg] = splitSegmentId(id);
    const entry = groups.get(chip);
    if (entry) entry.push(seg);
    else groups.set(chip, [seg]);
  }
  return groups;
}

/** Alpha mask (0..1 per pixel) dimming everything outside `segmentIds`. */
export function dimMask(meta: ChipSegments, segmentIds: readonly number[]): Uint8Array {
  const size = meta.height * meta.width;
  const keep = new Set(segmentIds);
  const masks: Uint8Array[] = [];
  for (const seg of meta.segments) {
    if (keep.has(seg.id)) masks.push(decodeRle(seg.rle, size));
  }
  const selected = maskUnion(masks, size);
  const dim = new Uint8Array(size);
  for (let i = 0; i < size; i++) dim[i] = selected[i] ? 0 : 1;
  return dim;
}

export class SelectionPane {
  private cache = new Map<string, ChipSegments>();

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {}

  async render(state: ViewState): Promise<void> {
    this.root.textContent = "";
    if (state.level === "chip") this.renderChips(state);
    else await this.renderSegments(state);
  }

  private renderChips(state: ViewState): void {
    for (const chipId of pageItems(state)) {
      const cell = document.createElement("figure");
      cell.className = "cell";
      const img = document.createElement("img");
      img.src = this.api.thumbnailUrl(chipId);
      img.alt = chipId;
      img.width = 96;
      img.height = 96;
      const caption = document.createElement("figcaption");
      caption.textContent = chipId;
      cell.append(img, caption);
      this.root.append(cell);
    }
  }

  private async segmentsFor(chipId: string): Promise<ChipSegments> {
    let meta = this.cache.get(chipId);
    if (!meta) {
      meta = await this.api.getSegments(chipId);
      this.cache.set(chipId, meta);
    }
    return meta;
  }

  private async renderSegments(state: ViewState): Promise<void> {
    const groups = groupByChip(pageItems(state));
    for (const [chipId, segIds] of groups) {
      const meta = await this.segmentsFor(chipId);
      const cell = document.createElement("figure");
      cell.className = "cell";
      const canvas = document.createElement("canvas");
      canvas.width = meta.width;
      canvas.height = meta.height;
      canvas.style.width = "96px";
      canvas.style.height = "96px";
      await drawDimmed(canvas, this.api.thumbnailUrl(chipId), meta, segIds);
      const caption = document.createElement("figcaption");
      caption.textContent = `${chipId} (${segIds.length} seg)`;
      cell.append(canvas, caption);
      this.root.append(cell);
    }
  }
}

async function drawDimmed(
  canvas: HTMLCanvasElement,
  thumbnailUrl: string,
  meta: ChipSegments,
  segIds: readonly number[],
): Promise<void> {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const img = new Image();
  img.src = thumbnailUrl;
  await img.decode();
  ctx.drawImage(img, 0, 0, meta.width, meta.height);
  const dim = dimMask(meta, segIds);
  const shade = ctx.createImageData(meta.width, meta.height);
  for (let i = 0; i < dim.length; i++) {
    if (!dim[i]) continue;
    shade.data[4 * i] = 20;
    shade.data[4 * i + 1] = 30;
    shade.data[4 * i + 2] = 60;
    shade.data[4 * i + 3] = 180;
  }
  const overlay = document.createElement("canvas");
  overlay.width = meta.width;
  overlay.height = meta.height;
  overlay.getContext("2d")!.putImageData(shade, 0, 0);
  ctx.drawImage(overlay, 0, 0);
}

export function renderPager(
  root: HTMLElement,
  state: ViewState,
  setPage: (page: number) => void,
): void {
  root.textContent = "";
  const pages = pageCount(state);
  const ids =
    state.level === "chip" ? state.chipSelection : state.segmentSelection;
  const label = document.createElement("span");
  label.textContent = `${ids.length} selected — page ${state.page + 1}/${pages}`;
  const prev = document.createElement("button");
  prev.textContent = "prev";
  prev.disabled = state.page === 0;
  prev.addEventListener("click", () => setPage(state.page - 1));
  const next = document.createElement("button");
  next.textContent = "next";
  next.disabled = state.page >= pages - 1;
  next.addEventListener("click", () => setPage(state.page + 1));
  root.append(prev, label, next);
}
