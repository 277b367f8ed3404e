import type { ServerEvent } from "./types.js";

/**
 * Consume the line-delimited JSON event stream of one field.
 *
 * Returns a disposer that cancels the underlying reader. Reconnects with
 * exponential backoff when the stream drops; the server greets every new
 * connection with a `hello` event carrying the current revision, which lets
 * the viewer resynchronize after a gap.
 */
export function openEventStream(
  fetchFn: (url: string) => Promise<Response>,
  url: string,
  onEvent: (ev: ServerEvent) => void,
  onError: (err: unknown) => void = () => {},
): () => void {
  let cancelled = false;
  let reader: ReadableStreamDefaultReader<Uint8Array> | null = null;
  let backoff = 500;

  const pump = async () => {
    while (!cancelled) {
      try {
        const resp = await fetchFn(url);
        if (!resp.ok || !resp.body) throw new Error(`event stream HTTP ${resp.status}`);
        reader = resp.body.getReader();
        backoff = 500;
        const decoder = new TextDecoder();
        let buffered = "";
        for (;;) {
          const { done, value } = await reader.read();
          if (done || cancelled) break;
          buffered += decoder.decode(value, { stream: true });
          let nl;
          while ((nl = buffered.indexOf("\n")) >= 0) {
            const line = buffered.slice(0, nl).trim();
            buffered = buffered.slice(nl + 1);
            if (line) onEvent(JSON.parse(line) as ServerEvent);
          }
        }
        if (cancelled) return;
      } catch (err) {
        if (cancelled) return;
        onError(err);
      }
      await new Promise((res) => setTimeout(res, backoff));
      backoff = Math.min(backoff * 2, 15_000);
    }
  };

  void pump();
  return () => {
    cancelled = true;
    reader?.cancel().catch(() => {});
  };
}
