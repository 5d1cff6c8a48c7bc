// Typed client for the tracking service. Every number the console shows
// comes out of one of these calls; nothing is computed client-side.

export type SessionState =
  | "created" | "running" | "cached" | "counting" | "done" | "failed";

export interface SessionDescription {
  session_id: string;
  state: SessionState;
  error: string | null;
  frames_done: number;
  frames_total: number;
  has_cache: boolean;
  pixel_capable: boolean;
  tracker: Record<string, number | boolean>;
  detector: Record<string, unknown>;
  mask_polygons: number;
  zones: ZonesWire;
  ledger_count: number;
  has_report: boolean;
}

export interface PolygonWire {
  vertices: [number, number][];
}

export interface FinishLineWire {
  region: PolygonWire;
  dwell: number;
}

export interface MotionVectorWire {
  anchor: [number, number];
  direction_deg: number;
  distance: number;
  width: number;
}

export interface ZonesWire {
  finish_line?: FinishLineWire;
  motion_vector?: MotionVectorWire;
}

export type CountMethod = "finish_line" | "motion_vector";

export interface CountEventWire {
  track_id: number;
  class: string;
  frame: number;
  method: string;
}

export interface LedgerSnapshot {
  totals: Record<string, number>;
  total: number;
  events: CountEventWire[];
}

export interface LedgerEntry {
  seq: number;
  mode: string;
  config: unknown;
  ledger: LedgerSnapshot;
}

export interface StatusEventWire {
  session_id: string;
  timestamp: number;
  level: string;
  message: string;
  frame?: number;
  fps?: number;
}

export interface GalleryTemplateWire {
  template_id: string;
  track_id: number;
  class: string;
  score: number;
  has_crop: boolean;
}

export interface CreateSessionBody {
  dets_path?: string;
  source_path?: string;
  tracker?: Record<string, number | boolean>;
  detector?: Record<string, unknown>;
  gallery?: boolean;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

// window.fetch throws "illegal invocation" when called detached, so the
// default wrapper keeps the global receiver
const defaultFetch: typeof fetch = (input, init) => fetch(input, init);

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = defaultFetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchFn(this.base + path, init);
    if (!res.ok) {
      let detail = `${res.status} ${res.statusText}`;
      try {
        const obj = await res.json();
        if (obj && typeof obj.detail === "string") detail = obj.detail;
        else if (obj) detail = JSON.stringify(obj);
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  createSession(body: CreateSessionBody): Promise<{ session_id: string }> {
    return this.request("POST", "/api/sessions", body);
  }

  listSessions(): Promise<{ sessions: string[] }> {
    return this.request("GET", "/api/sessions");
  }

  describe(id: string): Promise<SessionDescription> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(id)}`);
  }

  putMask(id: string, polygons: PolygonWire[]): Promise<{ polygons: number }> {
    return this.request("PUT", `/api/sessions/${encodeURIComponent(id)}/mask`, polygons);
  }

  getMask(id: string): Promise<{ polygons: PolygonWire[] }> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(id)}/mask`);
  }

  putZones(id: string, zones: ZonesWire): Promise<{ zones: string[] }> {
    return this.request("PUT", `/api/sessions/${encodeURIComponent(id)}/zones`, zones);
  }

  getZones(id: string): Promise<ZonesWire> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(id)}/zones`);
  }

  startRun(id: string): Promise<{ accepted: boolean; session_id: string }> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(id)}/run`);
  }

  count(id: string, method: CountMethod, mode: "quick" | "full",
        config?: ZonesWire): Promise<LedgerSnapshot> {
    const body: Record<string, unknown> = { method, mode };
    if (config !== undefined) body.config = config;
    return this.request("POST", `/api/sessions/${encodeURIComponent(id)}/count`, body);
  }

  latestCount(id: string): Promise<LedgerEntry> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(id)}/counts`);
  }

  evaluate(id: string, gtPath: string): Promise<Record<string, unknown>> {
    return this.request("POST", `/api/sessions/${encodeURIComponent(id)}/eval`,
                        { gt_path: gtPath });
  }

  gallery(id: string): Promise<{ templates: GalleryTemplateWire[] }> {
    return this.request("GET", `/api/sessions/${encodeURIComponent(id)}/gallery`);
  }

  frameUrl(id: string, index: number): string {
    return `${this.base}/api/sessions/${encodeURIComponent(id)}/frame/${index}`;
  }

  eventsResponse(id: string, follow: boolean, signal?: AbortSignal): Promise<Response> {
    const url = `${this.base}/api/sessions/${encodeURIComponent(id)}/events?follow=${follow}`;
    return this.fetchFn(url, signal ? { signal } : {});
  }
}
