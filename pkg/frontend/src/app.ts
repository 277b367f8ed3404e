import { ApiClient, ApiError } from "./api.js";
import { openEventStream } from "./events.js";
import { gestureToCommand, defaultTools, type Gesture, type ToolState } from "./tools.js";
import { ViewportModel, tileKey, type PlacedTile } from "./viewport.js";
import type { CellProvenance, FieldInfo, ServerEvent } from "./types.js";

export interface RenderSurface {
  clear(): void;
  drawTile(bitmap: unknown, dx: number, dy: number, dw: number, dh: number): void;
  drawGrid(cellW: number, cellH: number, offX: number, offY: number): void;
  highlightCells(rects: { dx: number; dy: number; dw: number; dh: number }[]): void;
}

export type TileDecoder = (blob: Blob) => Promise<unknown>;

export interface AppHooks {
  onEnergy?(energy: number, step: number): void;
  onRefineStatus?(running: boolean, reason: string | null): void;
  onProvenance?(cells: CellProvenance[]): void;
  onToast?(message: string): void;
}

/**
 * The studio controller: one open field, its viewport, its tools.
 *
 * All texture changes originate from server dirty events; gestures only send
 * commands and draw an optimistic highlight until the matching dirty rect
 * arrives and the affected tiles are re-fetched.
 */
export class StudioApp {
  model: ViewportModel | null = null;
  tools: ToolState = defaultTools();
  tiles = new Map<string, unknown>();
  pendingHighlight: { dx: number; dy: number; dw: number; dh: number }[] = [];
  energyTrace: { step: number; energy: number }[] = [];
  refineRunning = false;
  private stopEvents: (() => void) | null = null;
  private fetching = new Set<string>();
  private renderQueued = false;
  private retryBackoff = new Map<string, number>();
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    public api: ApiClient,
    private surface: RenderSurface,
    private decode: TileDecoder,
    private hooks: AppHooks = {},
    private schedule: (fn: () => void) => void = (fn) =>
      typeof requestAnimationFrame === "function" ? requestAnimationFrame(() => fn()) : fn(),
  ) {}

  async openField(info: FieldInfo): Promise<void> {
    this.closeField();
    this.model = new ViewportModel(info);
    this.energyTrace = info.energy ? [{ step: 0, energy: info.energy.e }] : [];
    this.refineRunning = info.refine.running;
    this.stopEvents = openEventStream(
      (u) => this.api.rawFetch(u),
      this.api.eventsUrl(info.id),
      (ev) => this.onEvent(ev),
    );
    await this.refreshTiles();
  }

  closeField(): void {
    this.stopEvents?.();
    this.stopEvents = null;
    this.model = null;
    this.tiles.clear();
    this.fetching.clear();
    this.retryBackoff.clear();
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.pendingHighlight = [];
  }

  async createFromGuidance(pngBase64: string, cellsX: number, cellsY: number): Promise<FieldInfo> {
    const info = await this.api.createFieldFromGuidance(pngBase64, cellsX, cellsY);
    await this.openField(info);
    return info;
  }

  // -- events -------------------------------------------------------------

  onEvent(ev: ServerEvent): void {
    const m = this.model;
    if (!m) return;
    switch (ev.type) {
      case "hello":
        if (ev.revision !== m.revision) {
          // reconnected after missing events: everything may be stale
          m.applyDirty([0, 0, m.field.pixel_width, m.field.pixel_height], ev.revision);
          void this.refreshTiles();
        }
        this.refineRunning = ev.refine.running;
        this.hooks.onRefineStatus?.(ev.refine.running, null);
        break;
      case "dirty":
        m.applyDirty(ev.pixel_rect, ev.revision);
        this.pendingHighlight = [];
        void this.refreshTiles();
        break;
      case "energy":
        this.energyTrace.push({ step: ev.step, energy: ev.energy });
        this.hooks.onEnergy?.(ev.energy, ev.step);
        break;
      case "refine":
        this.refineRunning = ev.status === "running";
        this.hooks.onRefineStatus?.(this.refineRunning, ev.reason ?? null);
        break;
    }
  }

  // -- tiles ---------------------------------------------------------------

  /** Fetch every visible tile that is missing or stale, then redraw. */
  async refreshTiles(): Promise<void> {
    const m = this.model;
    if (!m) return;
    const wanted = m.pendingFetches();
    await Promise.all(wanted.map((t) => this.fetchOne(t)));
    this.requestRender();
  }

  private async fetchOne(t: PlacedTile): Promise<void> {
    const m = this.model;
    if (!m) return;
    const key = tileKey(t);
    if (this.fetching.has(key)) return;
    this.fetching.add(key);
    try {
      const blob = await this.api.fetchTile(m.field.id, t.z, t.tx, t.ty);
      this.tiles.set(key, await this.decode(blob));
      m.markCached(t);
      this.retryBackoff.delete(key);
    } catch (err) {
      // placeholder stays visible; retry with doubling backoff
      this.hooks.onToast?.(err instanceof Error ? err.message : String(err));
      const wait = this.retryBackoff.get(key) ?? 500;
      this.retryBackoff.set(key, Math.min(wait * 2, 10_000));
      if (this.retryTimer === null) {
        this.retryTimer = setTimeout(() => {
          this.retryTimer = null;
          void this.refreshTiles();
        }, wait);
      }
    } finally {
      this.fetching.delete(key);
    }
  }

  // -- rendering -----------------------------------------------------------

  requestRender(): void {
    if (this.renderQueued) return;
    this.renderQueued = true;
    this.schedule(() => {
      this.renderQueued = false;
      this.render();
    });
  }

  render(): void {
    const m = this.model;
    if (!m) return;
    this.surface.clear();
    for (const t of m.visibleTiles()) {
      const bitmap = this.tiles.get(tileKey(t));
      if (bitmap !== undefined) this.surface.drawTile(bitmap, t.dx, t.dy, t.dw, t.dh);
    }
    const f = 2 ** m.zoom;
    const view = m.visibleNativeRect();
    const cellW = m.field.pixel_width / m.field.cells_x / f;
    const cellH = m.field.pixel_height / m.field.cells_y / f;
    this.surface.drawGrid(cellW, cellH, (-view.x0 / f) % cellW, (-view.y0 / f) % cellH);
    if (this.pendingHighlight.length) this.surface.highlightCells(this.pendingHighlight);
  }

  // -- tool actions ----------------------------------------------------------

  /** Map a gesture through the active tool and submit the resulting command. */
  async submitToolAction(g: Gesture): Promise<CellProvenance[] | null> {
    const m = this.model;
    if (!m) return null;
    const cmd = gestureToCommand(this.tools, m.field, g);
    if (cmd === null) return null; // rejected client-side, nothing sent
    this.pendingHighlight = this.cellRectToCanvas(cmd.rect);
    this.requestRender();
    try {
      const result = await this.api.postEdit(m.field.id, cmd);
      this.hooks.onProvenance?.(result.cells);
      if (result.energy !== null) {
        this.energyTrace.push({ step: this.energyTrace.length, energy: result.energy });
      }
      return result.cells;
    } catch (err) {
      this.pendingHighlight = [];
      this.requestRender();
      if (err instanceof ApiError) this.hooks.onToast?.(err.message);
      else throw err;
      return null;
    }
  }

  private cellRectToCanvas(rect: [number, number, number, number]) {
    const m = this.model!;
    const f = 2 ** m.zoom;
    const view = m.visibleNativeRect();
    const cellW = m.field.pixel_width / m.field.cells_x;
    const cellH = m.field.pixel_height / m.field.cells_y;
    const [x0, y0, x1, y1] = rect;
    return [{
      dx: (x0 * cellW - view.x0) / f,
      dy: (y0 * cellH - view.y0) / f,
      dw: ((x1 - x0) * cellW) / f,
      dh: ((y1 - y0) * cellH) / f,
    }];
  }

  async startRefine(): Promise<void> {
    const m = this.model;
    if (!m) return;
    const st = await this.api.refine(m.field.id, "start");
    this.refineRunning = st.running;
    this.hooks.onRefineStatus?.(st.running, st.reason);
  }

  async stopRefine(): Promise<void> {
    const m = this.model;
    if (!m) return;
    const st = await this.api.refine(m.field.id, "stop");
    this.refineRunning = st.running;
    this.hooks.onRefineStatus?.(st.running, st.reason);
  }
}
