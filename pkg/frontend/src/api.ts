import type { ClusterInfo, EditCommand, EditResult, FieldInfo, RefineStatus } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

/** Thin typed client over the service HTTP API. */
export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async json<T>(url: string, init?: RequestInit): Promise<T> {
    const r = await this.fetchFn(this.baseUrl + url, init);
    if (!r.ok) {
      let detail = r.statusText;
      try {
        detail = ((await r.json()) as { detail?: string }).detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(r.status, detail);
    }
    return (await r.json()) as T;
  }

  createFieldFromGuidance(pngBase64: string, cellsX: number, cellsY: number,
                          theta: number | null = 0.85): Promise<FieldInfo> {
    return this.json<FieldInfo>("/fields", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        guidance_png_b64: pngBase64,
        cells: `${cellsX}x${cellsY}`,
        theta,
      }),
    });
  }

  getField(id: string): Promise<FieldInfo> {
    return this.json<FieldInfo>(`/fields/${id}`);
  }

  postEdit(id: string, cmd: EditCommand): Promise<EditResult> {
    return this.json<EditResult>(`/fields/${id}/edits`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(cmd),
    });
  }

  refine(id: string, action: "start" | "stop"): Promise<RefineStatus> {
    return this.json<RefineStatus>(`/fields/${id}/refine`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ action }),
    });
  }

  clusters(): Promise<ClusterInfo[]> {
    return this.json<ClusterInfo[]>("/clusters");
  }

  tileUrl(id: string, z: number, tx: number, ty: number): string {
    return `${this.baseUrl}/fields/${id}/tiles/${z}/${tx}/${ty}`;
  }

  async fetchTile(id: string, z: number, tx: number, ty: number): Promise<Blob> {
    const r = await this.fetchFn(this.tileUrl(id, z, tx, ty));
    if (!r.ok) throw new ApiError(r.status, `tile ${z}/${tx}/${ty} unavailable`);
    return await r.blob();
  }

  eventsUrl(id: string): string {
    return `${this.baseUrl}/fields/${id}/events`;
  }

  rawFetch(url: string, init?: RequestInit): Promise<Response> {
    return this.fetchFn(this.baseUrl + url, init);
  }
}
