/**
 * Scripted round trip against a mock server implementing the documented API:
 * create a field, drag a cluster tile onto it, receive the dirty-rect event,
 * and verify that only the intersecting view tiles are re-fetched and that
 * the brushed cell's provenance matches the palette pick. Refinement
 * start/stop must be reflected within one event cycle.
 */

import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { StudioApp, type RenderSurface } from "../src/app.js";
import { resetSeedCounter } from "../src/tools.js";
import type { EditCommand, FieldInfo, ServerEvent } from "../src/types.js";

const SCALE = 16; // output pixels per latent unit
const CELL = 2;   // latent units per cell
const HALO = 2;   // latent halo

class MockServer {
  requests: string[] = [];
  revision = 0;
  refine = { running: false, steps: 0, reason: null as string | null };
  cells = new Map<string, { sample_id: number; cluster: number }>();
  private streams: ReadableStreamDefaultController<Uint8Array>[] = [];
  private fieldInfo: FieldInfo | null = null;

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    this.requests.push(`${init?.method ?? "GET"} ${url}`);
    const body = init?.body ? JSON.parse(init.body as string) : null;

    if (url === "/fields" && init?.method === "POST") {
      const [cx, cy] = (body.cells as string).split("x").map(Number);
      this.fieldInfo = {
        id: "fld1",
        level: 3,
        cell_size: CELL,
        cells_x: cx,
        cells_y: cy,
        pixel_width: cx * CELL * SCALE,
        pixel_height: cy * CELL * SCALE,
        tile_size: 256,
        revision: 0,
        energy: { e: 100, e_m: 60, e_n: 40, initial: 100, threshold: 85 },
        refine: { running: false, steps: 0, reason: null },
      };
      return json(this.fieldInfo, 201);
    }
    if (url === "/clusters") {
      return json([0, 1, 2, 3].map((c) => ({ cluster: c, size: 10, thumb_png_b64: "" })));
    }
    let m = url.match(/^\/fields\/(\w+)\/tiles\/(\d+)\/(\d+)\/(\d+)$/);
    if (m) {
      return new Response(new Blob([new Uint8Array([137, 80, 78, 71])]), {
        status: 200,
        headers: { "content-type": "image/png", etag: `"${this.revision}"` },
      });
    }
    if (url.match(/^\/fields\/\w+\/edits$/) && init?.method === "POST") {
      const cmd = body as EditCommand;
      const [x0, y0, x1, y1] = cmd.rect;
      const f = this.fieldInfo!;
      if (x1 > f.cells_x || y1 > f.cells_y) return json({ detail: "rect out of bounds" }, 400);
      this.revision += 1;
      const cells = [];
      for (let yy = y0; yy < y1; yy++) {
        for (let xx = x0; xx < x1; xx++) {
          const prov = { sample_id: 7, cluster: (cmd.params as { cluster: number }).cluster };
          this.cells.set(`${xx},${yy}`, prov);
          cells.push({ cell: [xx, yy], ...prov });
        }
      }
      const pixel_rect = [
        Math.max(0, (x0 * CELL - HALO)) * SCALE,
        Math.max(0, (y0 * CELL - HALO)) * SCALE,
        Math.min(f.cells_x * CELL, x1 * CELL + HALO) * SCALE,
        Math.min(f.cells_y * CELL, y1 * CELL + HALO) * SCALE,
      ] as [number, number, number, number];
      const result = {
        dirty: { cell_rect: cmd.rect, pixel_rect },
        revision: this.revision,
        cells,
        affected_cells: [],
        energy: 95,
      };
      this.push({ type: "dirty", cell_rect: cmd.rect, pixel_rect, revision: this.revision });
      return json(result);
    }
    if (url.match(/^\/fields\/\w+\/refine$/) && init?.method === "POST") {
      this.refine.running = body.action === "start";
      this.push({ type: "refine", status: this.refine.running ? "running" : "idle" });
      return json({ ...this.refine });
    }
    m = url.match(/^\/fields\/(\w+)\/events/);
    if (m) {
      const stream = new ReadableStream<Uint8Array>({
        start: (controller) => {
          this.streams.push(controller);
          controller.enqueue(encode({
            type: "hello",
            revision: this.revision,
            refine: { running: this.refine.running, steps: this.refine.steps },
          }));
        },
        cancel: () => {},
      });
      return new Response(stream, { status: 200, headers: { "content-type": "application/x-ndjson" } });
    }
    if (url.match(/^\/fields\/\w+$/)) {
      return json({ ...this.fieldInfo!, revision: this.revision, refine: { ...this.refine } });
    }
    return json({ detail: `no route for ${url}` }, 404);
  };

  push(ev: ServerEvent) {
    for (const c of this.streams) c.enqueue(encode(ev));
  }

  tileRequests(): string[] {
    return this.requests.filter((r) => r.includes("/tiles/"));
  }
}

function json(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function encode(ev: ServerEvent): Uint8Array {
  return new TextEncoder().encode(JSON.stringify(ev) + "\n");
}

function recordingSurface(): RenderSurface & { ops: string[] } {
  const ops: string[] = [];
  return {
    ops,
    clear: () => ops.push("clear"),
    drawTile: (_b, dx, dy) => ops.push(`tile@${dx},${dy}`),
    drawGrid: () => ops.push("grid"),
    highlightCells: (r) => ops.push(`highlight x${r.length}`),
  };
}

async function settle(ms = 30) {
  await new Promise((res) => setTimeout(res, ms));
}

describe("studio round trip", () => {
  let server: MockServer;
  let app: StudioApp;
  let surface: ReturnType<typeof recordingSurface>;
  let refineStatuses: boolean[];

  beforeEach(async () => {
    resetSeedCounter();
    server = new MockServer();
    surface = recordingSurface();
    refineStatuses = [];
    app = new StudioApp(
      new ApiClient("", server.fetch),
      surface,
      async (blob) => blob,
      { onRefineStatus: (running) => refineStatuses.push(running) },
      (fn) => fn(),
    );
    // a 16x16-cell field is 512px, i.e. a 2x2 grid of 256px view tiles
    const info = await app.createFromGuidance("cGxhY2Vob2xkZXI=", 16, 16);
    app.model!.setCanvasSize(info.pixel_width, info.pixel_height);
    await app.refreshTiles();
    await settle();
  });

  it("creates the field and covers the viewport with tiles", () => {
    expect(app.model!.field.pixel_width).toBe(512);
    const fetched = new Set(server.tileRequests());
    expect(fetched.size).toBe(4);
  });

  it("brushing a cell refetches only the intersecting tiles and reports provenance", async () => {
    server.requests.length = 0;

    // palette drag onto cell (0, 0): brush with cluster 2
    app.tools.active = "brush";
    app.tools.brushCluster = 2;
    const cells = await app.submitToolAction({ cell: [0, 0] });

    expect(cells).not.toBeNull();
    expect(cells![0].cell).toEqual([0, 0]);
    expect(cells![0].cluster).toBe(2);

    await settle(); // one event cycle: dirty arrives over the stream
    const tiles = server.tileRequests();
    // dirty rect = cell (0,0) footprint + halo = 96px: only tile 0/0/0 intersects
    expect(tiles).toEqual(["GET /fields/fld1/tiles/0/0/0"]);
    expect(app.model!.revision).toBe(1);
  });

  it("an edit near a tile border refetches both touched tiles, nothing else", async () => {
    server.requests.length = 0;
    app.tools.active = "brush";
    app.tools.brushCluster = 1;
    // cell (7,0): pixels 224..256 + halo -> spans the x border at 256
    await app.submitToolAction({ cell: [7, 0] });
    await settle();
    expect(new Set(server.tileRequests())).toEqual(new Set([
      "GET /fields/fld1/tiles/0/0/0",
      "GET /fields/fld1/tiles/0/1/0",
    ]));
  });

  it("out-of-bounds gestures are rejected client-side with no request", async () => {
    server.requests.length = 0;
    app.tools.active = "brush";
    app.tools.brushSize = 4;
    const result = await app.submitToolAction({ cell: [14, 14] });
    expect(result).toBeNull();
    expect(server.requests).toEqual([]);
  });

  it("refinement start/stop is reflected within one event cycle", async () => {
    await app.startRefine();
    await settle();
    expect(app.refineRunning).toBe(true);
    expect(refineStatuses).toContain(true);

    await app.stopRefine();
    await settle();
    expect(app.refineRunning).toBe(false);
    expect(refineStatuses[refineStatuses.length - 1]).toBe(false);
  });

  it("energy events append to the trace", async () => {
    const before = app.energyTrace.length;
    server.push({ type: "energy", energy: 91.5, step: 3 });
    await settle();
    expect(app.energyTrace.length).toBe(before + 1);
    expect(app.energyTrace[app.energyTrace.length - 1].energy).toBe(91.5);
  });

  it("renders tiles and grid onto the surface", async () => {
    surface.ops.length = 0;
    app.render();
    expect(surface.ops.filter((o) => o.startsWith("tile@")).length).toBe(4);
    expect(surface.ops).toContain("grid");
  });

  it("failed tile fetches retry with backoff", async () => {
    let failures = 0;
    const flaky: typeof server.fetch = async (url, init) => {
      if (url.includes("/tiles/") && failures < 1) {
        failures += 1;
        return new Response("boom", { status: 500 });
      }
      return server.fetch(url, init);
    };
    const app2 = new StudioApp(
      new ApiClient("", flaky), recordingSurface(), async (b) => b, {}, (fn) => fn(),
    );
    const info = await app2.createFromGuidance("cGxhY2Vob2xkZXI=", 4, 4);
    app2.model!.setCanvasSize(info.pixel_width, info.pixel_height);
    await app2.refreshTiles();
    expect(failures).toBe(1);
    await settle(700); // the backoff retry lands and succeeds
    expect(app2.model!.pendingFetches().length).toBe(0);
    app2.closeField();
  });
});
