import type { ApiClient, StatusEventWire } from "./api.js";
import { ApiError } from "./api.js";

// Incremental text/event-stream decoder. Network chunks can split a frame
// anywhere, so state lives across push() calls.
export class SSEDecoder {
  private buf = "";

  // feed one chunk; returns the data payloads of every completed frame
  push(chunk: string): string[] {
    this.buf += chunk;
    const out: string[] = [];
    let idx: number;
    while ((idx = this.buf.indexOf("\n\n")) >= 0) {
      const frame = this.buf.slice(0, idx);
      this.buf = this.buf.slice(idx + 2);
      const data = frame
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).replace(/^ /, ""));
      if (data.length > 0) out.push(data.join("\n"));
    }
    return out;
  }
}

export async function readEventStream(
  res: Response,
  onPayload: (payload: string) => void,
): Promise<void> {
  if (res.body === null) throw new Error("event stream response has no body");
  const reader = res.body.getReader();
  const decoder = new TextDecoder();
  const sse = new SSEDecoder();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    for (const payload of sse.push(decoder.decode(value, { stream: true }))) {
      onPayload(payload);
    }
  }
}

// Subscribe to a session's status events. Resolves when the stream ends
// (follow=false after history, follow=true on abort/disconnect).
export async function subscribeEvents(
  api: ApiClient,
  sessionId: string,
  onEvent: (event: StatusEventWire) => void,
  opts: { follow?: boolean; signal?: AbortSignal } = {},
): Promise<void> {
  const res = await api.eventsResponse(sessionId, opts.follow ?? true, opts.signal);
  if (!res.ok) throw new ApiError(res.status, `${res.status} ${res.statusText}`);
  await readEventStream(res, (payload) => {
    onEvent(JSON.parse(payload) as StatusEventWire);
  });
}
