import type { ApiClient } from "./api.js";
import type { ClusterInfo } from "./types.js";

/**
 * The cluster palette strip: one draggable thumbnail per cluster center.
 * Dropping (or clicking) a thumbnail arms the brush with that cluster.
 */
export async function buildPalette(
  api: ApiClient,
  container: HTMLElement,
  onPick: (cluster: number) => void,
): Promise<ClusterInfo[]> {
  const clusters = await api.clusters();
  container.innerHTML = "";
  for (const c of clusters) {
    const item = document.createElement("div");
    item.className = "palette-item";
    item.draggable = true;
    item.title = `cluster ${c.cluster} (${c.size} tiles)`;
    item.dataset.cluster = String(c.cluster);
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${c.thumb_png_b64}`;
    img.alt = `cluster ${c.cluster}`;
    const label = document.createElement("span");
    label.textContent = String(c.cluster);
    item.append(img, label);
    item.addEventListener("click", () => onPick(c.cluster));
    item.addEventListener("dragstart", (ev) => {
      ev.dataTransfer?.setData("text/x-cluster", String(c.cluster));
      onPick(c.cluster);
    });
    container.appendChild(item);
  }
  return clusters;
}
