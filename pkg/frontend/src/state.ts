// View state for the operator console. The rule that matters: totals and
// per-event rows are stored exactly as the server sent them. No count is
// ever derived locally, not even a sum.

import type {
  CountMethod,
  LedgerSnapshot,
  SessionDescription,
} from "./api.js";

export interface CountRun {
  seq: number;
  method: CountMethod;
  snapshot: LedgerSnapshot;
}

const MAX_STATUS_LINES = 500;

export class ViewState {
  sessionId: string | null = null;
  frame = 0;
  zoom = 1;
  panX = 0;
  panY = 0;
  method: CountMethod = "finish_line";
  current: CountRun | null = null;
  history: CountRun[] = [];
  statusLines: string[] = [];
  galleryPage = 0;
  private nextSeq = 0;

  // the panel swaps to the new result; the old one moves to the history strip
  applyCount(method: CountMethod, snapshot: LedgerSnapshot): CountRun {
    if (this.current !== null) this.history.unshift(this.current);
    this.current = { seq: this.nextSeq++, method, snapshot };
    return this.current;
  }

  get totals(): Record<string, number> | null {
    return this.current === null ? null : this.current.snapshot.totals;
  }

  get total(): number | null {
    return this.current === null ? null : this.current.snapshot.total;
  }

  pushStatus(line: string): void {
    this.statusLines.push(line);
    if (this.statusLines.length > MAX_STATUS_LINES) {
      this.statusLines.splice(0, this.statusLines.length - MAX_STATUS_LINES);
    }
  }

  setFrame(index: number, frameCount: number): void {
    if (frameCount <= 0) {
      this.frame = 0;
      return;
    }
    this.frame = Math.min(Math.max(0, Math.trunc(index)), frameCount - 1);
  }
}

// Quick Count gating: null means enabled, otherwise the tooltip text.
export function quickCountDisabledReason(desc: SessionDescription | null): string | null {
  if (desc === null) return "select a session first";
  if (!desc.has_cache) return "run the pipeline first to build a cache";
  if (desc.state === "running") return "a run is in progress";
  return null;
}

// session id and frame index live in the URL so a reload resumes the view
export function toUrlParams(state: ViewState): URLSearchParams {
  const params = new URLSearchParams();
  if (state.sessionId !== null) params.set("session", state.sessionId);
  if (state.frame > 0) params.set("frame", String(state.frame));
  return params;
}

export function fromUrlParams(params: URLSearchParams): Pick<ViewState, "sessionId" | "frame"> {
  const frame = Number(params.get("frame") ?? "0");
  return {
    sessionId: params.get("session"),
    frame: Number.isFinite(frame) && frame > 0 ? Math.trunc(frame) : 0,
  };
}
