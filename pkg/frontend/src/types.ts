/** Wire types for the tilegan service API (see API.md in the repo root). */

export interface FieldInfo {
  id: string;
  level: number;
  cell_size: number;
  cells_x: number;
  cells_y: number;
  pixel_width: number;
  pixel_height: number;
  tile_size: number;
  revision: number;
  energy: EnergyInfo | null;
  refine: RefineStatus;
}

export interface EnergyInfo {
  e: number;
  e_m: number;
  e_n: number;
  initial: number | null;
  threshold: number | null;
}

export interface RefineStatus {
  running: boolean;
  steps: number;
  reason: string | null;
}

export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface EditCommand {
  kind: "brush" | "clone" | "shuffle-clone" | "noise" | "interpolate" | "guidance-update";
  rect: [number, number, number, number];
  params: Record<string, unknown>;
  seed: number;
}

export interface CellProvenance {
  cell: [number, number];
  sample_id: number;
  cluster: number;
}

export interface EditResult {
  dirty: { cell_rect: [number, number, number, number]; pixel_rect: [number, number, number, number] };
  revision: number;
  cells: CellProvenance[];
  affected_cells: [number, number][];
  energy: number | null;
}

export interface ClusterInfo {
  cluster: number;
  size: number;
  thumb_png_b64: string;
}

export type ServerEvent =
  | { type: "hello"; revision: number; refine: { running: boolean; steps: number } }
  | { type: "dirty"; cell_rect: [number, number, number, number]; pixel_rect: [number, number, number, number]; revision: number }
  | { type: "energy"; energy: number; step: number }
  | { type: "refine"; status: "running" | "idle"; reason?: string };
