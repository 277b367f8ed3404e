import type { FieldInfo, Rect } from "./types.js";

export interface TileCoord {
  z: number;
  tx: number;
  ty: number;
}

export interface PlacedTile extends TileCoord {
  /** Where the tile lands on the canvas, in CSS pixels. */
  dx: number;
  dy: number;
  dw: number;
  dh: number;
}

export const tileKey = (t: TileCoord) => `${t.z}/${t.tx}/${t.ty}`;

/**
 * Client-side viewport math and tile staleness tracking.
 *
 * The model never mutates texture state: tiles become stale only when a
 * server dirty rect intersects them, and a zoom or pan changes which tiles
 * are requested without touching cached ones.
 */
export class ViewportModel {
  centerX: number;
  centerY: number;
  zoom = 0;
  canvasW = 800;
  canvasH = 600;

  /** revision each cached tile was rendered from */
  private cached = new Map<string, number>();
  revision = 0;

  constructor(public field: FieldInfo) {
    this.centerX = field.pixel_width / 2;
    this.centerY = field.pixel_height / 2;
    this.revision = field.revision;
  }

  get maxZoom(): number {
    const longest = Math.max(this.field.pixel_width, this.field.pixel_height);
    let z = 0;
    while (longest >> z > this.field.tile_size) z += 1;
    return z;
  }

  setCanvasSize(w: number, h: number) {
    this.canvasW = w;
    this.canvasH = h;
  }

  setZoom(z: number) {
    this.zoom = Math.max(0, Math.min(this.maxZoom, z));
  }

  panBy(dxCss: number, dyCss: number) {
    const f = 2 ** this.zoom;
    this.centerX = clamp(this.centerX - dxCss * f, 0, this.field.pixel_width);
    this.centerY = clamp(this.centerY - dyCss * f, 0, this.field.pixel_height);
  }

  /** Native-pixel rect currently visible. */
  visibleNativeRect(): Rect {
    const f = 2 ** this.zoom;
    const w = this.canvasW * f;
    const h = this.canvasH * f;
    const x0 = clamp(this.centerX - w / 2, 0, Math.max(0, this.field.pixel_width - 1));
    const y0 = clamp(this.centerY - h / 2, 0, Math.max(0, this.field.pixel_height - 1));
    return {
      x0,
      y0,
      x1: Math.min(this.field.pixel_width, x0 + w),
      y1: Math.min(this.field.pixel_height, y0 + h),
    };
  }

  /** The tiles that exactly cover the viewport at the current zoom. */
  visibleTiles(): PlacedTile[] {
    const z = this.zoom;
    const f = 2 ** z;
    const ts = this.field.tile_size;
    const nativeTile = ts * f;
    const view = this.visibleNativeRect();
    const tx0 = Math.floor(view.x0 / nativeTile);
    const ty0 = Math.floor(view.y0 / nativeTile);
    const tx1 = Math.ceil(view.x1 / nativeTile);
    const ty1 = Math.ceil(view.y1 / nativeTile);
    const out: PlacedTile[] = [];
    for (let ty = ty0; ty < ty1; ty++) {
      for (let tx = tx0; tx < tx1; tx++) {
        const nx0 = tx * nativeTile;
        const ny0 = ty * nativeTile;
        const nx1 = Math.min(nx0 + nativeTile, this.field.pixel_width);
        const ny1 = Math.min(ny0 + nativeTile, this.field.pixel_height);
        if (nx1 <= nx0 || ny1 <= ny0) continue;
        out.push({
          z, tx, ty,
          dx: (nx0 - view.x0) / f,
          dy: (ny0 - view.y0) / f,
          dw: (nx1 - nx0) / f,
          dh: (ny1 - ny0) / f,
        });
      }
    }
    return out;
  }

  /** Tiles at zoom `z` whose native footprint intersects a dirty pixel rect. */
  tilesIntersecting(pixelRect: [number, number, number, number], z: number): TileCoord[] {
    const [x0, y0, x1, y1] = pixelRect;
    if (x1 <= x0 || y1 <= y0) return [];
    const nativeTile = this.field.tile_size * 2 ** z;
    const out: TileCoord[] = [];
    const tx0 = Math.floor(x0 / nativeTile);
    const ty0 = Math.floor(y0 / nativeTile);
    const tx1 = Math.ceil(x1 / nativeTile);
    const ty1 = Math.ceil(y1 / nativeTile);
    for (let ty = ty0; ty < ty1; ty++) {
      for (let tx = tx0; tx < tx1; tx++) out.push({ z, tx, ty });
    }
    return out;
  }

  /** Record that a tile at the current revision is cached. */
  markCached(t: TileCoord) {
    this.cached.set(tileKey(t), this.revision);
  }

  isFresh(t: TileCoord): boolean {
    return this.cached.get(tileKey(t)) === this.revision;
  }

  /**
   * Apply a server dirty rect: bump the revision and drop exactly the cached
   * tiles (at every zoom) whose footprint intersects it. Everything else
   * stays valid under the new revision.
   */
  applyDirty(pixelRect: [number, number, number, number], revision: number) {
    const stale = new Set<string>();
    for (let z = 0; z <= this.maxZoom; z++) {
      for (const t of this.tilesIntersecting(pixelRect, z)) stale.add(tileKey(t));
    }
    for (const key of stale) this.cached.delete(key);
    for (const [key, rev] of this.cached) this.cached.set(key, revision > rev ? revision : rev);
    this.revision = revision;
  }

  /** Visible tiles that are missing or stale and need a fetch. */
  pendingFetches(): PlacedTile[] {
    return this.visibleTiles().filter((t) => !this.isFresh(t));
  }
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}

/** Convert a canvas position to field cell coordinates, or null outside. */
export function canvasToCell(model: ViewportModel, cssX: number, cssY: number): [number, number] | null {
  const f = 2 ** model.zoom;
  const view = model.visibleNativeRect();
  const px = view.x0 + cssX * f;
  const py = view.y0 + cssY * f;
  const cellPx = (model.field.pixel_width / model.field.cells_x);
  const cellPy = (model.field.pixel_height / model.field.cells_y);
  const cx = Math.floor(px / cellPx);
  const cy = Math.floor(py / cellPy);
  if (cx < 0 || cy < 0 || cx >= model.field.cells_x || cy >= model.field.cells_y) return null;
  return [cx, cy];
}
