import { ApiClient } from "./api.js";
import { StudioApp, type RenderSurface } from "./app.js";
import { buildPalette } from "./palette.js";
import { canvasToCell } from "./viewport.js";
import type { ToolKind } from "./tools.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function canvasSurface(canvas: HTMLCanvasElement): RenderSurface {
  const ctx = canvas.getContext("2d");
  return {
    clear() {
      if (!ctx) return;
      ctx.fillStyle = "#18191c";
      ctx.fillRect(0, 0, canvas.width, canvas.height);
    },
    drawTile(bitmap, dx, dy, dw, dh) {
      ctx?.drawImage(bitmap as CanvasImageSource, dx, dy, dw, dh);
    },
    drawGrid(cellW, cellH, offX, offY) {
      if (!ctx || cellW < 8) return;
      ctx.strokeStyle = "rgba(255,255,255,0.12)";
      ctx.lineWidth = 1;
      ctx.beginPath();
      for (let x = offX; x <= canvas.width; x += cellW) {
        ctx.moveTo(x, 0);
        ctx.lineTo(x, canvas.height);
      }
      for (let y = offY; y <= canvas.height; y += cellH) {
        ctx.moveTo(0, y);
        ctx.lineTo(canvas.width, y);
      }
      ctx.stroke();
    },
    highlightCells(rects) {
      if (!ctx) return;
      ctx.strokeStyle = "#ffb454";
      ctx.lineWidth = 2;
      for (const r of rects) ctx.strokeRect(r.dx, r.dy, r.dw, r.dh);
    },
  };
}

async function fileToBase64(file: File): Promise<string> {
  const buf = new Uint8Array(await file.arrayBuffer());
  let bin = "";
  for (const b of buf) bin += String.fromCharCode(b);
  return btoa(bin);
}

function boot() {
  const canvas = el<HTMLCanvasElement>("viewport");
  const api = new ApiClient("");
  const toast = el<HTMLDivElement>("toast");
  const energyReadout = el<HTMLSpanElement>("energy-readout");
  const refineButton = el<HTMLButtonElement>("refine-toggle");
  const trace = el<HTMLCanvasElement>("energy-trace");

  const app = new StudioApp(
    api,
    canvasSurface(canvas),
    (blob) => createImageBitmap(blob),
    {
      onToast(message) {
        toast.textContent = message;
        toast.classList.add("visible");
        setTimeout(() => toast.classList.remove("visible"), 4000);
      },
      onEnergy(energy) {
        energyReadout.textContent = energy.toFixed(2);
        drawTrace();
      },
      onRefineStatus(running) {
        refineButton.textContent = running ? "stop refinement" : "start refinement";
      },
      onProvenance(cells) {
        const last = cells[cells.length - 1];
        if (last) {
          el<HTMLSpanElement>("provenance-readout").textContent =
            `cell ${last.cell} <- sample ${last.sample_id} (cluster ${last.cluster})`;
        }
      },
    },
  );

  function drawTrace() {
    const ctx = trace.getContext("2d");
    if (!ctx || app.energyTrace.length < 2) return;
    const w = trace.width;
    const h = trace.height;
    ctx.clearRect(0, 0, w, h);
    const points = app.energyTrace.slice(-400);
    const max = Math.max(...points.map((p) => p.energy));
    const min = Math.min(...points.map((p) => p.energy));
    const span = Math.max(max - min, 1e-9);
    ctx.strokeStyle = "#6bb0ff";
    ctx.beginPath();
    points.forEach((p, i) => {
      const x = (i / (points.length - 1)) * w;
      const y = h - ((p.energy - min) / span) * (h - 4) - 2;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  // field creation from a guidance upload
  el<HTMLButtonElement>("create-field").addEventListener("click", async () => {
    const file = el<HTMLInputElement>("guidance-file").files?.[0];
    const cells = el<HTMLInputElement>("cells-input").value || "8x8";
    if (!file) return;
    const [cx, cy] = cells.split("x").map(Number);
    const info = await app.createFromGuidance(await fileToBase64(file), cx, cy);
    el<HTMLSpanElement>("field-readout").textContent =
      `${info.id} (${info.pixel_width}x${info.pixel_height}px)`;
    await buildPalette(api, el("palette"), (cluster) => {
      app.tools.active = "brush";
      app.tools.brushCluster = cluster;
    });
  });

  // toolbar
  for (const kind of ["brush", "clone", "shuffle-clone", "noise", "interpolate"] as ToolKind[]) {
    el<HTMLButtonElement>(`tool-${kind}`).addEventListener("click", () => {
      app.tools.active = kind;
      app.tools.cloneAnchor = null;
      document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
      el(`tool-${kind}`).classList.add("active");
    });
  }

  refineButton.addEventListener("click", () => {
    void (app.refineRunning ? app.stopRefine() : app.startRefine());
  });

  // canvas interactions: click applies the tool, drag pans, wheel zooms
  let dragStart: [number, number] | null = null;
  let dragged = false;
  canvas.addEventListener("mousedown", (ev) => {
    dragStart = [ev.offsetX, ev.offsetY];
    dragged = false;
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!dragStart || !app.model) return;
    const dx = ev.offsetX - dragStart[0];
    const dy = ev.offsetY - dragStart[1];
    if (Math.abs(dx) + Math.abs(dy) > 3) dragged = true;
    if (dragged) {
      app.model.panBy(dx, dy);
      dragStart = [ev.offsetX, ev.offsetY];
      void app.refreshTiles();
    }
  });
  canvas.addEventListener("mouseup", (ev) => {
    const wasDrag = dragged;
    dragStart = null;
    if (wasDrag || !app.model) return;
    const cell = canvasToCell(app.model, ev.offsetX, ev.offsetY);
    if (!cell) return;
    if ((app.tools.active === "clone" || app.tools.active === "shuffle-clone")
        && app.tools.cloneAnchor === null) {
      app.tools.cloneAnchor = cell;
      return;
    }
    const gesture = app.tools.active.includes("clone")
      ? { cell: app.tools.cloneAnchor!, endCell: cell }
      : { cell };
    void app.submitToolAction(gesture);
    if (app.tools.active.includes("clone")) app.tools.cloneAnchor = null;
  });
  canvas.addEventListener("wheel", (ev) => {
    if (!app.model) return;
    ev.preventDefault();
    app.model.setZoom(app.model.zoom + (ev.deltaY > 0 ? 1 : -1));
    void app.refreshTiles();
  });

  const resize = () => {
    canvas.width = canvas.clientWidth;
    canvas.height = canvas.clientHeight;
    app.model?.setCanvasSize(canvas.width, canvas.height);
    void app.refreshTiles();
  };
  window.addEventListener("resize", resize);
  resize();
}

document.addEventListener("DOMContentLoaded", boot);
