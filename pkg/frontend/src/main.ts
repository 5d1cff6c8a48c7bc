// Operator console wiring. Layout: left column holds the frame stage and
// the run form, right column the counts, gallery, and status console.
// Server responses are the only source of displayed numbers.

import { ApiClient, ApiError } from "./api.js";
import type {
  CountMethod,
  FinishLineWire,
  LedgerSnapshot,
  MotionVectorWire,
  SessionDescription,
  ZonesWire,
} from "./api.js";
import {
  AnnotationError,
  arrowFromGesture,
  arrowToGeometry,
  commitFinishZone,
  commitMaskPolygon,
  finishZoneFromWire,
  maskFromWire,
  rectVertices,
  screenToFrame,
  type CanvasAnnotation,
  type Point,
  type Viewport,
} from "./annotations.js";
import { defaultRunForm, trackerPayload, validateRunForm, type RunForm } from "./form.js";
import { drawAll } from "./render.js";
import { subscribeEvents } from "./sse.js";
import { ViewState, fromUrlParams, quickCountDisabledReason, toUrlParams } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const api = new ApiClient("");
const state = new ViewState();
const view: Viewport = { zoom: 1, panX: 0, panY: 0 };

let described: SessionDescription | null = null;
let zones: ZonesWire = {};
let maskVertices: Point[][] = [];
let draftClicks: Point[] = [];
let dragStart: Point | null = null;
let draftZone: Point[] | null = null;
let draftArrow: MotionVectorWire | null = null;
let followAbort: AbortController | null = null;

const sessionSelect = el<HTMLSelectElement>("session-select");
const stateBadge = el<HTMLSpanElement>("state-badge");
const frameImage = el<HTMLImageElement>("frame-image");
const overlay = el<HTMLCanvasElement>("overlay");
const frameIndex = el<HTMLInputElement>("frame-index");
const frameTotal = el<HTMLSpanElement>("frame-total");
const hint = el<HTMLSpanElement>("annotation-hint");
const runForm = el<HTMLFormElement>("run-form");
const formErrors = el<HTMLDivElement>("form-errors");
const runProgress = el<HTMLProgressElement>("run-progress");
const runFps = el<HTMLSpanElement>("run-fps");
const methodSelect = el<HTMLSelectElement>("count-method");
const quickButton = el<HTMLButtonElement>("quick-count");
const fullButton = el<HTMLButtonElement>("full-count");
const statusConsole = el<HTMLPreElement>("status-console");

function status(line: string): void {
  state.pushStatus(line);
  statusConsole.textContent = state.statusLines.join("\n");
  statusConsole.scrollTop = statusConsole.scrollHeight;
}

function fail(context: string, err: unknown): void {
  const msg = err instanceof Error ? err.message : String(err);
  status(`[error] ${context}: ${msg}`);
}

function currentTool(): string {
  const checked = document.querySelector<HTMLInputElement>("input[name=tool]:checked");
  return checked === null ? "none" : checked.value;
}

function syncUrl(): void {
  const params = toUrlParams(state);
  const query = params.toString();
  history.replaceState(null, "", query === "" ? location.pathname : `?${query}`);
}

// ---- overlay rendering ----

function annotations(): CanvasAnnotation[] {
  const out: CanvasAnnotation[] = [];
  for (const vertices of maskVertices) {
    out.push({ kind: "mask", vertices, draft: false });
  }
  if (zones.finish_line !== undefined) {
    const z = finishZoneFromWire(zones.finish_line);
    out.push({ kind: "finish_zone", vertices: z.vertices, dwell: z.dwell, draft: false });
  }
  if (zones.motion_vector !== undefined) {
    const g = arrowToGeometry(zones.motion_vector);
    out.push({ kind: "motion_arrow", ...g, draft: false });
  }
  if (draftClicks.length > 0) {
    out.push({ kind: "mask", vertices: draftClicks, draft: true });
  }
  if (draftZone !== null) {
    out.push({ kind: "finish_zone", vertices: draftZone, dwell: dwellField(), draft: true });
  }
  if (draftArrow !== null) {
    out.push({ kind: "motion_arrow", ...arrowToGeometry(draftArrow), draft: true });
  }
  return out;
}

function redraw(): void {
  const ctx = overlay.getContext("2d");
  if (ctx === null) return;
  overlay.width = overlay.clientWidth;
  overlay.height = overlay.clientHeight;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  drawAll(ctx, annotations(), view);
}

// ---- sessions ----

async function refreshSessions(): Promise<void> {
  try {
    const { sessions } = await api.listSessions();
    sessionSelect.replaceChildren(
      ...sessions.map((id) => new Option(id, id, false, id === state.sessionId)),
    );
  } catch (err) {
    fail("listing sessions", err);
  }
}

async function selectSession(id: string | null): Promise<void> {
  state.sessionId = id;
  syncUrl();
  followAbort?.abort();
  followAbort = null;
  described = null;
  zones = {};
  maskVertices = [];
  if (id !== null) {
    try {
      described = await api.describe(id);
      zones = await api.getZones(id);
      const mask = await api.getMask(id);
      maskVertices = mask.polygons.map(maskFromWire);
      await replayHistory(id);
    } catch (err) {
      fail(`loading session ${id}`, err);
    }
  }
  renderSession();
}

async function replayHistory(id: string): Promise<void> {
  try {
    await subscribeEvents(api, id, (e) => {
      status(`[${e.level}] ${e.message}`);
    }, { follow: false });
  } catch {
    // no history yet is fine
  }
}

function renderSession(): void {
  const desc = described;
  stateBadge.textContent = desc === null ? "no session" : desc.state;
  stateBadge.className = `badge ${desc === null ? "" : desc.state}`;
  const frames = desc === null ? 0 : desc.frames_total;
  frameTotal.textContent = frames > 0 ? `of ${frames}` : "";
  state.setFrame(state.frame, Math.max(frames, 1));
  frameIndex.value = String(state.frame);
  if (desc !== null && desc.pixel_capable && desc.session_id !== null) {
    frameImage.src = api.frameUrl(desc.session_id, state.frame);
    frameImage.hidden = false;
  } else {
    frameImage.removeAttribute("src");
    frameImage.hidden = true;
  }
  const reason = quickCountDisabledReason(desc);
  quickButton.disabled = reason !== null;
  quickButton.title = reason ?? "";
  fullButton.disabled = desc === null;
  redraw();
}

// ---- frame navigation ----

function gotoFrame(index: number): void {
  const frames = described === null ? 0 : described.frames_total;
  state.setFrame(index, Math.max(frames, 1));
  frameIndex.value = String(state.frame);
  syncUrl();
  if (described !== null && described.pixel_capable && state.sessionId !== null) {
    frameImage.src = api.frameUrl(state.sessionId, state.frame);
  }
}

el<HTMLButtonElement>("frame-prev").addEventListener("click", () => gotoFrame(state.frame - 1));
el<HTMLButtonElement>("frame-next").addEventListener("click", () => gotoFrame(state.frame + 1));
frameIndex.addEventListener("change", () => gotoFrame(Number(frameIndex.value)));

// ---- annotation tools ----

function canvasPoint(ev: MouseEvent): Point {
  const rect = overlay.getBoundingClientRect();
  return screenToFrame({ x: ev.clientX - rect.left, y: ev.clientY - rect.top }, view);
}

function dwellField(): number {
  const input = runForm.elements.namedItem("dwell") as HTMLInputElement;
  return Number(input.value);
}

overlay.addEventListener("click", (ev) => {
  if (currentTool() !== "mask") return;
  draftClicks.push(canvasPoint(ev));
  hint.textContent = `${draftClicks.length} point(s)`;
  redraw();
});

overlay.addEventListener("mousedown", (ev) => {
  const tool = currentTool();
  if (tool === "finish_zone" || tool === "motion_arrow") {
    dragStart = canvasPoint(ev);
  }
});

overlay.addEventListener("mousemove", (ev) => {
  if (dragStart === null) return;
  const here = canvasPoint(ev);
  if (currentTool() === "finish_zone") {
    draftZone = rectVertices(dragStart, here);
  } else if (currentTool() === "motion_arrow") {
    try {
      draftArrow = arrowFromGesture(dragStart, here, arrowWidth());
    } catch {
      draftArrow = null;
    }
  }
  redraw();
});

overlay.addEventListener("mouseup", () => {
  dragStart = null;
});

// width handle: wheel over the canvas while an arrow draft exists
function arrowWidth(): number {
  return draftArrow === null ? 20 : draftArrow.width;
}

overlay.addEventListener("wheel", (ev) => {
  if (currentTool() === "motion_arrow" && draftArrow !== null) {
    ev.preventDefault();
    const width = Math.max(2, draftArrow.width + (ev.deltaY < 0 ? 2 : -2));
    draftArrow = { ...draftArrow, width };
    redraw();
  }
});

el<HTMLButtonElement>("annotation-clear").addEventListener("click", () => {
  draftClicks = [];
  draftZone = null;
  draftArrow = null;
  hint.textContent = "";
  redraw();
});

el<HTMLButtonElement>("annotation-commit").addEventListener("click", () => {
  void commitAnnotation();
});

async function commitAnnotation(): Promise<void> {
  const id = state.sessionId;
  if (id === null) {
    hint.textContent = "select a session first";
    return;
  }
  const tool = currentTool();
  try {
    if (tool === "mask") {
      // validation happens before any request leaves the page
      const polygon = commitMaskPolygon(draftClicks);
      const existing = maskVertices.map((vs) => ({
        vertices: vs.map((p): [number, number] => [p.x, p.y]),
      }));
      await api.putMask(id, [...existing, polygon]);
      // the server copy is the source of truth for what is drawn
      const mask = await api.getMask(id);
      maskVertices = mask.polygons.map(maskFromWire);
      draftClicks = [];
      hint.textContent = "";
      status(`[info] mask saved (${maskVertices.length} polygon(s))`);
    } else if (tool === "finish_zone") {
      if (draftZone === null) {
        hint.textContent = "drag a region first";
        return;
      }
      const zone: FinishLineWire = commitFinishZone(draftZone, dwellField());
      await putZonesMerged({ finish_line: zone });
      draftZone = null;
      status("[info] finish zone saved");
    } else if (tool === "motion_arrow") {
      if (draftArrow === null) {
        hint.textContent = "drag an arrow first";
        return;
      }
      await putZonesMerged({ motion_vector: draftArrow });
      draftArrow = null;
      status("[info] motion vector saved");
    }
    redraw();
  } catch (err) {
    if (err instanceof AnnotationError) {
      hint.textContent = err.message;
    } else {
      fail("committing annotation", err);
    }
  }
}

async function putZonesMerged(update: ZonesWire): Promise<void> {
  const id = state.sessionId;
  if (id === null) return;
  const merged: ZonesWire = { ...zones, ...update };
  await api.putZones(id, merged);
  zones = await api.getZones(id);
  redraw();
}

// ---- run form ----

function loadForm(defaults: RunForm): void {
  for (const [key, value] of Object.entries(defaults)) {
    const input = runForm.elements.namedItem(key);
    if (input instanceof HTMLInputElement) {
      if (input.type === "checkbox") input.checked = value === true;
      else input.value = String(value);
    }
  }
}

function readForm(): RunForm {
  const f = defaultRunForm();
  for (const key of Object.keys(f) as (keyof RunForm)[]) {
    const input = runForm.elements.namedItem(key);
    if (!(input instanceof HTMLInputElement)) continue;
    if (key === "appearance") f.appearance = input.checked;
    else f[key] = Number(input.value);
  }
  return f;
}

runForm.addEventListener("submit", (ev) => {
  ev.preventDefault();
  void startRun();
});

async function startRun(): Promise<void> {
  const id = state.sessionId;
  if (id === null) {
    formErrors.textContent = "select a session first";
    return;
  }
  const form = readForm();
  const errors = validateRunForm(form);
  if (Object.keys(errors).length > 0) {
    // field-level problems stop the submit; nothing is sent
    formErrors.textContent = Object.entries(errors)
      .map(([field, message]) => `${field}: ${message}`)
      .join("; ");
    return;
  }
  formErrors.textContent = "";
  void trackerPayload(form); // params bind at session creation; kept for that path
  try {
    await api.startRun(id);
    status("[info] run accepted");
    watchRun(id);
  } catch (err) {
    // e.g. a concurrent run: the rejection is surfaced verbatim
    fail("starting run", err);
  }
}

function watchRun(id: string): void {
  followAbort?.abort();
  followAbort = new AbortController();
  runProgress.value = 0;
  subscribeEvents(api, id, (e) => {
    status(`[${e.level}] ${e.message}`);
    if (e.frame !== undefined && described !== null && described.frames_total > 0) {
      runProgress.value = Math.round((100 * (e.frame + 1)) / described.frames_total);
    }
    if (e.fps !== undefined) runFps.textContent = `${e.fps.toFixed(1)} fps`;
    if (e.message === "run complete" || e.level === "error") {
      void refreshDescribe();
    }
  }, { follow: true, signal: followAbort.signal }).catch((err) => {
    if (!(err instanceof DOMException && err.name === "AbortError")) {
      fail("event stream", err);
    }
  });
}

async function refreshDescribe(): Promise<void> {
  if (state.sessionId === null) return;
  try {
    described = await api.describe(state.sessionId);
    if (described.state === "cached" || described.state === "done") {
      runProgress.value = 100;
    }
    renderSession();
  } catch (err) {
    fail("refreshing session", err);
  }
}

// ---- counting ----

quickButton.addEventListener("click", () => void runCount("quick"));
fullButton.addEventListener("click", () => void runCount("full"));

async function runCount(mode: "quick" | "full"): Promise<void> {
  const id = state.sessionId;
  if (id === null) return;
  const method = methodSelect.value as CountMethod;
  try {
    const snapshot = await api.count(id, method, mode);
    state.applyCount(method, snapshot);
    renderCounts();
    status(`[info] ${mode} count done: ${snapshot.total} total`);
    void refreshDescribe();
  } catch (err) {
    fail(`${mode} count`, err);
  }
}

function renderCounts(): void {
  const totalsTable = el<HTMLTableElement>("totals-table");
  const totalsBody = totalsTable.tBodies[0] ?? totalsTable.createTBody();
  const eventsTable = el<HTMLTableElement>("events-table");
  const eventsBody = eventsTable.tBodies[0] ?? eventsTable.createTBody();
  const empty = el<HTMLDivElement>("count-empty");
  totalsBody.replaceChildren();
  eventsBody.replaceChildren();
  const current = state.current;
  if (current === null) {
    empty.textContent = "no count yet";
    return;
  }
  const snap: LedgerSnapshot = current.snapshot;
  // rows come straight from the response; nothing is summed here
  for (const [label, n] of Object.entries(snap.totals)) {
    const row = totalsBody.insertRow();
    row.insertCell().textContent = label;
    row.insertCell().textContent = String(n);
  }
  const totalRow = totalsBody.insertRow();
  totalRow.insertCell().textContent = "Total";
  totalRow.insertCell().textContent = String(snap.total);
  empty.textContent = snap.total === 0 ? "no vehicles counted" : "";
  for (const e of snap.events) {
    const row = eventsBody.insertRow();
    row.insertCell().textContent = String(e.track_id);
    row.insertCell().textContent = e.class;
    row.insertCell().textContent = String(e.frame);
    row.insertCell().textContent = e.method;
  }
  const history = el<HTMLOListElement>("count-history");
  history.replaceChildren(...state.history.map((run) => {
    const item = document.createElement("li");
    item.textContent = `#${run.seq} ${run.method}: ${run.snapshot.total}`;
    item.addEventListener("click", () => {
      state.applyCount(run.method, run.snapshot);
      renderCounts();
    });
    return item;
  }));
}

// ---- gallery ----

async function refreshGallery(): Promise<void> {
  const id = state.sessionId;
  if (id === null) return;
  try {
    const { templates } = await api.gallery(id);
    const grid = el<HTMLDivElement>("gallery-grid");
    grid.replaceChildren(...templates.map((t) => {
      const fig = document.createElement("figure");
      const cap = document.createElement("figcaption");
      cap.textContent = `${t.class} #${t.track_id} (${t.score.toFixed(2)})`;
      fig.append(cap);
      return fig;
    }));
  } catch (err) {
    fail("loading gallery", err);
  }
}

// ---- boot ----

el<HTMLButtonElement>("session-refresh").addEventListener("click", () => {
  void refreshSessions().then(refreshGallery);
});

sessionSelect.addEventListener("change", () => {
  void selectSession(sessionSelect.value === "" ? null : sessionSelect.value);
});

async function boot(): Promise<void> {
  loadForm(defaultRunForm());
  const resume = fromUrlParams(new URLSearchParams(location.search));
  state.frame = resume.frame;
  await refreshSessions();
  if (resume.sessionId !== null) {
    sessionSelect.value = resume.sessionId;
    await selectSession(resume.sessionId);
  }
  await refreshGallery();
  renderCounts();
}

void boot();
