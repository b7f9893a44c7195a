/**
 * Browser app: draw foreground/background markers on images, save them to
 * the service, view per-decoder/per-block saliency overlays, train, and
 * drive the selection loop from the dashboard.
 */

import { ApiClient, ApiError } from './api.js';
import { SelectionDashboard } from './dashboard.js';
import {
  parseMarkerText,
  rasterizeStrokes,
  strokesToMarkers,
  type Stroke,
} from './markers.js';
import { compositeOverlay, SaliencyCache, type RgbaBuffer } from './overlay.js';
import { clampOpacity, defaultViewState, DECODERS, type ImageInfo, type MarkerLabel, type ViewState } from './types.js';

const FOREGROUND_COLOR = 'rgba(220, 40, 40, 0.9)'; // object strokes in red
const BACKGROUND_COLOR = 'rgba(245, 245, 245, 0.9)'; // background strokes in white

// `?api=http://host:port` points the client at a service on another origin
const api = new ApiClient(new URLSearchParams(window.location.search).get('api') ?? '');
const view: ViewState = defaultViewState();

let images: ImageInfo[] = [];
let current: ImageInfo | null = null;
let strokes: Stroke[] = [];
let activeStroke: Stroke | null = null;
let brushLabel: MarkerLabel = 1;
let brushRadius = 3;
let baseBitmap: ImageBitmap | null = null;
let saliencyBitmap: ImageBitmap | null = null;

const saliencyCache = new SaliencyCache((id, dec, blk) => api.inferSaliency(id, dec, blk));

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLDivElement>('status');
  bar.textContent = text;
  bar.classList.toggle('error', isError);
}

function canvas(): HTMLCanvasElement {
  return el<HTMLCanvasElement>('canvas');
}

function ctx2d(c: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = c.getContext('2d');
  if (!ctx) throw new Error('no 2d context');
  return ctx;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

function bufferFrom(bitmap: ImageBitmap, w: number, h: number): RgbaBuffer {
  const off = document.createElement('canvas');
  off.width = w;
  off.height = h;
  const ctx = ctx2d(off);
  ctx.drawImage(bitmap, 0, 0, w, h);
  return { width: w, height: h, data: ctx.getImageData(0, 0, w, h).data };
}

function redraw(): void {
  if (!current || !baseBitmap) return;
  const c = canvas();
  c.width = current.width;
  c.height = current.height;
  const ctx = ctx2d(c);
  if (view.overlay === 'saliency' && saliencyBitmap) {
    const base = bufferFrom(baseBitmap, c.width, c.height);
    const over = bufferFrom(saliencyBitmap, c.width, c.height);
    const blend = compositeOverlay(base, over, view.opacity);
    const pixels = new Uint8ClampedArray(blend.data.length);
    pixels.set(blend.data);
    ctx.putImageData(new ImageData(pixels, blend.width, blend.height), 0, 0);
  } else {
    ctx.drawImage(baseBitmap, 0, 0, c.width, c.height);
  }
  drawStrokes(ctx);
}

function drawStrokes(ctx: CanvasRenderingContext2D): void {
  const all = activeStroke ? [...strokes, activeStroke] : strokes;
  if (!current || all.length === 0) return;
  for (const marker of strokesToMarkersSafe(all)) {
    ctx.fillStyle = marker.label === 1 ? FOREGROUND_COLOR : BACKGROUND_COLOR;
    for (const p of marker.pixels) ctx.fillRect(p.x, p.y, 1, 1);
  }
}

function strokesToMarkersSafe(list: Stroke[]) {
  if (!current) return [];
  try {
    return strokesToMarkers(list, current.width, current.height);
  } catch {
    return [];
  }
}

// ---------------------------------------------------------------------------
// Stroke capture
// ---------------------------------------------------------------------------

function canvasPoint(event: PointerEvent): { x: number; y: number } {
  const c = canvas();
  const rect = c.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * c.width,
    y: ((event.clientY - rect.top) / rect.height) * c.height,
  };
}

function bindCanvas(): void {
  const c = canvas();
  c.addEventListener('pointerdown', (ev) => {
    if (!current) return;
    c.setPointerCapture(ev.pointerId);
    activeStroke = { label: brushLabel, radius: brushRadius, points: [canvasPoint(ev)] };
    redraw();
  });
  c.addEventListener('pointermove', (ev) => {
    if (!activeStroke) return;
    activeStroke.points.push(canvasPoint(ev));
    redraw();
  });
  const finish = () => {
    if (activeStroke) {
      strokes.push(activeStroke);
      activeStroke = null;
      redraw();
    }
  };
  c.addEventListener('pointerup', finish);
  c.addEventListener('pointercancel', finish);
}

// ---------------------------------------------------------------------------
// Image + marker loading
// ---------------------------------------------------------------------------

async function selectImage(info: ImageInfo): Promise<void> {
  current = info;
  view.imageId = info.id;
  strokes = [];
  saliencyBitmap = null;
  const resp = await fetch(api.imageUrl(info.id));
  baseBitmap = await createImageBitmap(await resp.blob());
  const text = await api.getMarkers(info.id);
  if (text !== null) {
    // saved markers become one synthetic radius-1 stroke per marker so they
    // render and can be extended; the canonical pixels are what get saved
    const parsed = parseMarkerText(text);
    strokes = parsed.markers.map((m) => ({
      label: m.label,
      radius: 1,
      points: m.pixels.map((p) => ({ x: p.x, y: p.y })),
    }));
    setStatus(`loaded ${parsed.markers.length} saved marker(s) for ${info.id}`);
  } else {
    setStatus(`no markers yet for ${info.id}`);
  }
  if (view.overlay === 'saliency') await loadSaliency();
  redraw();
  highlightImageList();
}

function highlightImageList(): void {
  for (const item of el<HTMLUListElement>('image-list').querySelectorAll('li')) {
    item.classList.toggle('selected', item.dataset.imageId === view.imageId);
  }
}

async function populateImages(): Promise<void> {
  images = await api.listImages();
  const list = el<HTMLUListElement>('image-list');
  list.textContent = '';
  for (const info of images) {
    const item = document.createElement('li');
    item.dataset.imageId = info.id;
    const thumb = document.createElement('img');
    thumb.src = api.imageUrl(info.id);
    thumb.alt = info.id;
    thumb.width = 48;
    const label = document.createElement('span');
    label.textContent = ` ${info.id} (${info.width}×${info.height})`;
    item.append(thumb, label);
    item.addEventListener('click', () => void selectImage(info).catch(showError));
    list.appendChild(item);
  }
  if (images.length > 0) await selectImage(images[0]);
}

// ---------------------------------------------------------------------------
// Saving, training, overlays
// ---------------------------------------------------------------------------

function showError(err: unknown): void {
  const message = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
  setStatus(message, true);
}

async function saveMarkers(): Promise<void> {
  if (!current) return;
  if (strokes.length === 0) {
    setStatus('nothing to save: draw at least one stroke', true);
    return;
  }
  const text = rasterizeStrokes(strokes, current.id, current.width, current.height);
  const echo = await api.putMarkers(current.id, text);
  setStatus(echo === text
    ? `markers saved for ${current.id} (round-trip verified)`
    : `markers saved for ${current.id} but the echo differed`, echo !== text);
}

async function trainNow(): Promise<void> {
  setStatus('training started…');
  const job = await api.startTraining();
  const poll = async (): Promise<void> => {
    const state = await api.getJob(job.id);
    if (state.phase === 'done') {
      saliencyCache.invalidate();
      setStatus('training finished; overlays use the new model');
    } else if (state.phase === 'failed') {
      setStatus(`training failed: ${state.error ?? 'unknown error'}`, true);
    } else {
      setStatus(`training… ${(state.progress * 100).toFixed(0)}%`);
      window.setTimeout(() => void poll().catch(showError), 500);
    }
  };
  await poll();
}

async function loadSaliency(): Promise<void> {
  if (!current) return;
  try {
    const blob = await saliencyCache.get(current.id, view.decoder, view.block);
    saliencyBitmap = await createImageBitmap(blob);
  } catch (err) {
    saliencyBitmap = null;
    showError(err);
  }
}

function bindControls(): void {
  const labelSel = el<HTMLSelectElement>('brush-label');
  labelSel.addEventListener('change', () => {
    brushLabel = labelSel.value === '2' ? 2 : 1;
  });
  const radius = el<HTMLInputElement>('brush-radius');
  radius.addEventListener('change', () => {
    brushRadius = Math.max(1, Number(radius.value) || 1);
  });
  el<HTMLButtonElement>('undo').addEventListener('click', () => {
    strokes.pop();
    redraw();
  });
  el<HTMLButtonElement>('clear').addEventListener('click', () => {
    strokes = [];
    redraw();
  });
  el<HTMLButtonElement>('save').addEventListener('click', () => void saveMarkers().catch(showError));
  el<HTMLButtonElement>('train').addEventListener('click', () => void trainNow().catch(showError));

  const overlaySel = el<HTMLSelectElement>('overlay-mode');
  overlaySel.addEventListener('change', () => {
    view.overlay = overlaySel.value === 'saliency' ? 'saliency' : 'none';
    void (view.overlay === 'saliency' ? loadSaliency() : Promise.resolve())
      .then(redraw)
      .catch(showError);
  });
  const opacity = el<HTMLInputElement>('overlay-opacity');
  opacity.addEventListener('input', () => {
    view.opacity = clampOpacity(Number(opacity.value));
    redraw(); // opacity changes re-render without refetching
  });
  const decoderSel = el<HTMLSelectElement>('decoder');
  for (const d of DECODERS) {
    const opt = document.createElement('option');
    opt.value = d;
    opt.textContent = d;
    if (d === view.decoder) opt.selected = true;
    decoderSel.appendChild(opt);
  }
  decoderSel.addEventListener('change', () => {
    view.decoder = decoderSel.value as ViewState['decoder'];
    if (view.overlay === 'saliency') void loadSaliency().then(redraw).catch(showError);
  });
  const blockInput = el<HTMLInputElement>('block');
  blockInput.addEventListener('change', () => {
    view.block = Math.max(1, Number(blockInput.value) || 1);
    if (view.overlay === 'saliency') void loadSaliency().then(redraw).catch(showError);
  });
}

// ---------------------------------------------------------------------------

async function start(): Promise<void> {
  bindCanvas();
  bindControls();
  const dashboard = new SelectionDashboard(el<HTMLDivElement>('dashboard'), api, () =>
    setStatus('selection session stopped'),
  );
  el<HTMLButtonElement>('dashboard-refresh').addEventListener('click', () =>
    void dashboard.refresh().catch(showError),
  );
  await populateImages();
}

void start().catch(showError);
