import type { EditCommand, FieldInfo } from "./types.js";

export type ToolKind = "brush" | "clone" | "shuffle-clone" | "noise" | "interpolate" | "guidance";

export interface ToolState {
  active: ToolKind;
  brushCluster: number;
  brushSize: number; // cells per side
  noiseSigma: number;
  interpolateA: number;
  interpolateB: number;
  interpolateT: number;
  cloneAnchor: [number, number] | null; // source rect origin once picked
}

export function defaultTools(): ToolState {
  return {
    active: "brush",
    brushCluster: 0,
    brushSize: 1,
    noiseSigma: 0.1,
    interpolateA: 0,
    interpolateB: 1,
    interpolateT: 0.5,
    cloneAnchor: null,
  };
}

export interface Gesture {
  cell: [number, number];
  /** optional drag end, for clone destination */
  endCell?: [number, number];
}

/** A monotonically advancing seed so repeated gestures draw fresh samples. */
let seedCounter = 1;
export function nextSeed(): number {
  return seedCounter++;
}
export function resetSeedCounter(v = 1) {
  seedCounter = v;
}

function clampRect(field: FieldInfo, x0: number, y0: number, x1: number, y1: number):
    [number, number, number, number] | null {
  if (x0 < 0 || y0 < 0 || x1 > field.cells_x || y1 > field.cells_y || x1 <= x0 || y1 <= y0) {
    return null;
  }
  return [x0, y0, x1, y1];
}

/**
 * Map one gesture to one edit command, validating against field bounds.
 * Returns null when the gesture cannot produce a legal command; nothing is
 * sent in that case.
 */
export function gestureToCommand(tool: ToolState, field: FieldInfo, g: Gesture): EditCommand | null {
  const [cx, cy] = g.cell;
  switch (tool.active) {
    case "brush": {
      const rect = clampRect(field, cx, cy, cx + tool.brushSize, cy + tool.brushSize);
      if (!rect || tool.brushCluster < 0) return null;
      return { kind: "brush", rect, params: { cluster: tool.brushCluster }, seed: nextSeed() };
    }
    case "clone":
    case "shuffle-clone": {
      if (!tool.cloneAnchor || !g.endCell) return null;
      const [sx, sy] = tool.cloneAnchor;
      const w = Math.abs(cx - sx) + 1;
      const h = Math.abs(cy - sy) + 1;
      const src = clampRect(field, Math.min(sx, cx), Math.min(sy, cy),
                            Math.min(sx, cx) + w, Math.min(sy, cy) + h);
      const [dx, dy] = g.endCell;
      const dst = clampRect(field, dx, dy, dx + w, dy + h);
      if (!src || !dst) return null;
      return { kind: tool.active, rect: dst, params: { src }, seed: nextSeed() };
    }
    case "noise": {
      const rect = clampRect(field, cx, cy, cx + tool.brushSize, cy + tool.brushSize);
      if (!rect || tool.noiseSigma < 0) return null;
      return { kind: "noise", rect, params: { sigma: tool.noiseSigma }, seed: nextSeed() };
    }
    case "interpolate": {
      const rect = clampRect(field, cx, cy, cx + 1, cy + 1);
      if (!rect || tool.interpolateT < 0 || tool.interpolateT > 1) return null;
      return {
        kind: "interpolate",
        rect,
        params: { a: tool.interpolateA, b: tool.interpolateB, t: tool.interpolateT },
        seed: nextSeed(),
      };
    }
    case "guidance":
      return null; // guidance edits go through the side panel, not canvas gestures
  }
}
