/** Canvas scatter plot with pan/zoom and a draggable, resizeable brush.
 *
 * The geometry helpers are pure so they can be unit-tested without a DOM:
 * screen = world * scale + t. The brush rectangle lives in world
 * coordinates, so it stays glued to the points while panning and zooming.
 *
 * Interactions: primary drag draws a new brush (or moves/resizes the
 * existing one when grabbing its interior/corners); wheel zooms about the
 * cursor; middle- or right-button drag pans. Rendering is a flat loop over
 * point rects, comfortable past 50k points.
 */

import type { ProjPoint } from "./api.js";

export interface Transform {
  scale: number;
  tx: number;
  ty: number;
}

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export type Handle = "nw" | "ne" | "sw" | "se" | "move";

export function worldToScreen(t: Transform, x: number, y: number): [number, number] {
  return [x * t.scale + t.tx, y * t.scale + t.ty];
}

export function screenToWorld(t: Transform, sx: number, sy: number): [number, number] {
  return [(sx - t.tx) / t.scale, (sy - t.ty) / t.scale];
}

/** Fit all points inside width x height with a margin, centred. */
export function fitTransform(
  points: readonly ProjPoint[],
  width: number,
  height: number,
  margin = 40,
): Transform {
  if (points.length === 0) return { scale: 1, tx: width / 2, ty: height / 2 };
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const p of points) {
    if (p.x < minX) minX = p.x;
    if (p.x > maxX) maxX = p.x;
    if (p.y < minY) minY = p.y;
    if (p.y > maxY) maxY = p.y;
  }
  const spanX = Math.max(maxX - minX, 1e-9);
  const spanY = Math.max(maxY - minY, 1e-9);
  const scale = Math.min(
    (width - 2 * margin) / spanX,
    (height - 2 * margin) / spanY,
  );
  const cx = (minX + maxX) / 2;
  const cy = (minY + maxY) / 2;
  return { scale, tx: width / 2 - cx * scale, ty: height / 2 - cy * scale };
}

export function panBy(t: Transform, dxScreen: number, dyScreen: number): Transform {
  return { ...t, tx: t.tx + dxScreen, ty: t.ty + dyScreen };
}

/** Zoom by `factor`, keeping the world point under (sx, sy) fixed. */
export function zoomAt(t: Transform, sx: number, sy: number, factor: number): Transform {
  const scale = t.scale * factor;
  return {
    scale,
    tx: sx - (sx - t.tx) * factor,
    ty: sy - (sy - t.ty) * factor,
  };
}

export function normalizeRect(r: Rect): Rect {
  return {
    x0: Math.min(r.x0, r.x1),
    y0: Math.min(r.y0, r.y1),
    x1: Math.max(r.x0, r.x1),
    y1: Math.max(r.y0, r.y1),
  };
}

/** Ids of points inside the (normalized) rect, in input order; edges count. */
export function pointsInRect(points: readonly ProjPoint[], rect: Rect): string[] {
  const r = normalizeRect(rect);
  const out: string[] = [];
  for (const p of points) {
    if (p.x >= r.x0 && p.x <= r.x1 && p.y >= r.y0 && p.y <= r.y1) out.push(p.id);
  }
  return out;
}

/** Which part of the brush is under the cursor (screen coords). */
export function hitHandle(
  rect: Rect,
  t: Transform,
  sx: number,
  sy: number,
  tolPx = 6,
): Handle | null {
  const r = normalizeRect(rect);
  const corners: Array<[Handle, number, number]> = [
    ["nw", r.x0, r.y0],
    ["ne", r.x1, r.y0],
    ["sw", r.x0, r.y1],
    ["se", r.x1, r.y1],
  ];
  for (const [handle, wx, wy] of corners) {
    const [cx, cy] = worldToScreen(t, wx, wy);
    if (Math.abs(sx - cx) <= tolPx && Math.abs(sy - cy) <= tolPx) return handle;
  }
  const [wx, wy] = screenToWorld(t, sx, sy);
  if (wx >= r.x0 && wx <= r.x1 && wy >= r.y0 && wy <= r.y1) return "move";
  return null;
}

/** Apply a drag (world-coordinate delta) to the rect via a handle. */
export function dragRect(rect: Rect, handle: Handle, dx: number, dy: number): Rect {
  const r = { ...normalizeRect(rect) };
  switch (handle) {
    case "move":
      return { x0: r.x0 + dx, y0: r.y0 + dy, x1: r.x1 + dx, y1: r.y1 + dy };
    case "nw":
      return { ...r, x0: r.x0 + dx, y0: r.y0 + dy };
    case "ne":
      return { ...r, x1: r.x1 + dx, y0: r.y0 + dy };
    case "sw":
      return { ...r, x0: r.x0 + dx, y1: r.y1 + dy };
    case "se":
      return { ...r, x1: r.x1 + dx, y1: r.y1 + dy };
  }
}

export interface ScatterOptions {
  /** Called with the ids inside the brush after every brush change. */
  onBrush: (ids: string[]) => void;
  pointRadius?: number;
}

const COLORS = {
  background: "#11151c",
  point: "#7d8da3",
  selected: "#ffb347",
  brushStroke: "#6fb7ff",
  brushFill: "rgba(111, 183, 255, 0.12)",
  handle: "#6fb7ff",
};

type DragMode =
  | { kind: "none" }
  | { kind: "pan"; lastX: number; lastY: number }
  | { kind: "draw"; startX: number; startY: number }
  | { kind: "brush"; handle: Handle; lastX: number; lastY: number };

export class ScatterView {
  private ctx: CanvasRenderingContext2D;
  private points: readonly ProjPoint[] = [];
  private selected = new Set<string>();
  private transform: Transform = { scale: 1, tx: 0, ty: 0 };
  private brush: Rect | null = null;
  private drag: DragMode = { kind: "none" };
  private frame = 0;

  constructor(
    private canvas: HTMLCanvasElement,
    private opts: ScatterOptions,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    canvas.addEventListener("pointerdown", this.onPointerDown);
    canvas.addEventListener("pointermove", this.onPointerMove);
    canvas.addEventListener("pointerup", this.onPointerUp);
    canvas.addEventListener("wheel", this.onWheel, { passive: false });
    canvas.addEventListener("contextmenu", (e) => e.preventDefault());
  }

  setPoints(points: readonly ProjPoint[]): void {
    this.points = points;
    this.transform = fitTransform(points, this.canvas.width, this.canvas.height);
    this.brush = null;
    this.requestDraw();
  }

  setSelected(ids: Iterable<string>): void {
    this.selected = new Set(ids);
    this.requestDraw();
  }

  getBrush(): Rect | null {
    return this.brush;
  }

  /** Programmatic brush (also used by tests); fires onBrush like a drag. */
  setBrush(rect: Rect | null): void {
    this.brush = rect ? normalizeRect(rect) : null;
    this.opts.onBrush(rect ? pointsInRect(this.points, rect) : []);
    this.requestDraw();
  }

  private cursorPos(e: PointerEvent | WheelEvent): [number, number] {
    const bounds = this.canvas.getBoundingClientRect();
    return [e.clientX - bounds.left, e.clientY - bounds.top];
  }

  private onPointerDown = (e: PointerEvent): void => {
    const [sx, sy] = this.cursorPos(e);
    this.canvas.setPointerCapture(e.pointerId);
    if (e.button === 1 || e.button === 2) {
      this.drag = { kind: "pan", lastX: sx, lastY: sy };
      return;
    }
    const handle = this.brush && hitHandle(this.brush, this.transform, sx, sy);
    if (this.brush && handle) {
      this.drag = { kind: "brush", handle, lastX: sx, lastY: sy };
    } else {
      this.drag = { kind: "draw", startX: sx, startY: sy };
      const [wx, wy] = screenToWorld(this.transform, sx, sy);
      this.brush = { x0: wx, y0: wy, x1: wx, y1: wy };
    }
  };

  private onPointerMove = (e: PointerEvent): void => {
    const [sx, sy] = this.cursorPos(e);
    switch (this.drag.kind) {
      case "none":
        return;
      case "pan": {
        this.transform = panBy(this.transform, sx - this.drag.lastX, sy - this.drag.lastY);
        this.drag = { ...this.drag, lastX: sx, lastY: sy };
        break;
      }
      case "draw": {
        const [wx, wy] = screenToWorld(this.transform, sx, sy);
        const [wx0, wy0] = screenToWorld(this.transform, this.drag.startX, this.drag.startY);
        this.brush = { x0: wx0, y0: wy0, x1: wx, y1: wy };
        this.opts.onBrush(pointsInRect(this.points, this.brush));
        break;
      }
      case "brush": {
        const [wx, wy] = screenToWorld(this.transform, sx, sy);
        const [lx, ly] = screenToWorld(this.transform, this.drag.lastX, this.drag.lastY);
        this.brush = dragRect(this.brush!, this.drag.handle, wx - lx, wy - ly);
        this.drag = { ...this.drag, lastX: sx, lastY: sy };
        this.opts.onBrush(pointsInRect(this.points, this.brush));
        break;
      }
    }
    this.requestDraw();
  };

  private onPointerUp = (e: PointerEvent): void => {
    this.canvas.releasePointerCapture(e.pointerId);
    if (this.drag.kind === "draw" && this.brush) {
      const r = normalizeRect(this.brush);
      const area = (r.x1 - r.x0) * (r.y1 - r.y0) * this.transform.scale ** 2;
      if (area < 9) {
        // a click, not a drag: clear the brush and the selection
        this.brush = null;
        this.opts.onBrush([]);
      }
    }
    this.drag = { kind: "none" };
    this.requestDraw();
  };

  private onWheel = (e: WheelEvent): void => {
    e.preventDefault();
    const [sx, sy] = this.cursorPos(e);
    const factor = Math.exp(-e.deltaY * 0.0015);
    this.transform = zoomAt(this.transform, sx, sy, factor);
    this.requestDraw();
  };

  private requestDraw(): void {
    if (this.frame) return;
    this.frame = requestAnimationFrame(() => {
      this.frame = 0;
      this.draw();
    });
  }

  draw(): void {
    const { ctx, canvas, transform } = this;
    ctx.fillStyle = COLORS.background;
    ctx.fillRect(0, 0, canvas.width, canvas.height);

    const r = this.opts.pointRadius ?? 2;
    const d = 2 * r;
    ctx.fillStyle = COLORS.point;
    for (const p of this.points) {
      if (this.selected.has(p.id)) continue;
      const sx = p.x * transform.scale + transform.tx;
      const sy = p.y * transform.scale + transform.ty;
      ctx.fillRect(sx - r, sy - r, d, d);
    }
    ctx.fillStyle = COLORS.selected;
    for (const p of this.points) {
      if (!this.selected.has(p.id)) continue;
      const sx = p.x * transform.scale + transform.tx;
      const sy = p.y * transform.scale + transform.ty;
      ctx.fillRect(sx - r - 1, sy - r - 1, d + 2, d + 2);
    }

    if (this.brush) {
      const b = normalizeRect(this.brush);
      const [x0, y0] = worldToScreen(transform, b.x0, b.y0);
      const [x1, y1] = worldToScreen(transform, b.x1, b.y1);
      ctx.fillStyle = COLORS.brushFill;
      ctx.fillRect(x0, y0, x1 - x0, y1 - y0);
      ctx.strokeStyle = COLORS.brushStroke;
      ctx.lineWidth = 1.5;
      ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
      ctx.fillStyle = COLORS.handle;
      for (const [hx, hy] of [[x0, y0], [x1, y0], [x0, y1], [x1, y1]]) {
        ctx.fillRect(hx - 4, hy - 4, 8, 8);
      }
    }
  }

  destroy(): void {
    if (this.frame) cancelAnimationFrame(this.frame);
  }
}
