import { describe, expect, it } from "vitest";
import { ViewportModel, canvasToCell, tileKey } from "../src/viewport.js";
import type { FieldInfo } from "../src/types.js";

function field(px = 1024, py = 1024, cells = 32): FieldInfo {
  return {
    id: "f1",
    level: 3,
    cell_size: 2,
    cells_x: cells,
    cells_y: cells,
    pixel_width: px,
    pixel_height: py,
    tile_size: 256,
    revision: 0,
    energy: null,
    refine: { running: false, steps: 0, reason: null },
  };
}

describe("visibleTiles", () => {
  it("covers the viewport exactly at zoom 0", () => {
    const m = new ViewportModel(field());
    m.setCanvasSize(600, 400);
    const tiles = m.visibleTiles();
    // every canvas point lies inside exactly one placed tile
    for (const [px, py] of [[0, 0], [1, 1], [299, 199], [599, 399], [599, 0], [0, 399]]) {
      const hits = tiles.filter(
        (t) => px >= t.dx && px < t.dx + t.dw && py >= t.dy && py < t.dy + t.dh,
      );
      expect(hits.length).toBe(1);
    }
    // and no duplicate tile coordinates are requested
    const keys = tiles.map(tileKey);
    expect(new Set(keys).size).toBe(keys.length);
  });

  it("clips ragged edge tiles to the field", () => {
    const m = new ViewportModel(field(300, 300));
    m.setCanvasSize(512, 512);
    const tiles = m.visibleTiles();
    const area = tiles.reduce((acc, t) => acc + t.dw * t.dh, 0);
    expect(area).toBeCloseTo(300 * 300, 5);
    expect(tiles.length).toBe(4); // 2x2 grid, outer ones partial
  });

  it("downsamples by powers of two with zoom", () => {
    const m = new ViewportModel(field(1024, 1024));
    m.setCanvasSize(512, 512);
    m.setZoom(1);
    const tiles = m.visibleTiles();
    // at zoom 1 the whole 1024px field is 512 css px = 2x2 tiles of 256
    expect(tiles.length).toBe(4);
    expect(Math.max(...tiles.map((t) => t.z))).toBe(1);
  });
});

describe("dirty tracking", () => {
  it("invalidates exactly the intersecting tiles", () => {
    const m = new ViewportModel(field(1024, 1024));
    m.setCanvasSize(1024, 1024);
    for (const t of m.visibleTiles()) m.markCached(t);
    expect(m.pendingFetches().length).toBe(0);

    m.applyDirty([10, 10, 40, 40], 1); // inside tile (0, 0) only
    const stale = m.pendingFetches();
    expect(stale.map(tileKey)).toEqual(["0/0/0"]);
  });

  it("keeps untouched tiles cached across a dirty revision bump", () => {
    const m = new ViewportModel(field(1024, 1024));
    m.setCanvasSize(1024, 1024);
    for (const t of m.visibleTiles()) m.markCached(t);
    m.applyDirty([600, 600, 700, 700], 3);
    expect(m.isFresh({ z: 0, tx: 0, ty: 0 })).toBe(true);
    expect(m.isFresh({ z: 0, tx: 2, ty: 2 })).toBe(false);
    expect(m.revision).toBe(3);
  });

  it("a dirty rect spanning tile borders hits every touched tile", () => {
    const m = new ViewportModel(field(1024, 1024));
    const hit = m.tilesIntersecting([250, 250, 260, 260], 0);
    expect(hit.map(tileKey).sort()).toEqual(["0/0/0", "0/0/1", "0/1/0", "0/1/1"]);
  });

  it("empty rects touch nothing", () => {
    const m = new ViewportModel(field());
    expect(m.tilesIntersecting([5, 5, 5, 9], 0)).toEqual([]);
  });
});

describe("zoom changes", () => {
  it("re-tiles without discarding cached tiles of other zoom levels", () => {
    const m = new ViewportModel(field(1024, 1024));
    m.setCanvasSize(512, 512);
    m.setZoom(1);
    for (const t of m.visibleTiles()) m.markCached(t);
    m.setZoom(0);
    // zoom-0 tiles are missing, but the zoom-1 tiles stay fresh
    expect(m.pendingFetches().length).toBeGreaterThan(0);
    expect(m.isFresh({ z: 1, tx: 0, ty: 0 })).toBe(true);
  });

  it("zoom clamps to the pyramid range", () => {
    const m = new ViewportModel(field(1024, 1024));
    m.setZoom(99);
    expect(m.zoom).toBe(m.maxZoom);
    m.setZoom(-3);
    expect(m.zoom).toBe(0);
  });
});

describe("canvasToCell", () => {
  it("maps canvas positions to cells", () => {
    const m = new ViewportModel(field(1024, 1024, 32));
    m.setCanvasSize(1024, 1024);
    expect(canvasToCell(m, 0, 0)).toEqual([0, 0]);
    expect(canvasToCell(m, 33, 65)).toEqual([1, 2]);
  });

  it("returns null outside the field", () => {
    const m = new ViewportModel(field(100, 100, 10));
    m.setCanvasSize(400, 400);
    expect(canvasToCell(m, 399, 399)).toBeNull();
  });
});
