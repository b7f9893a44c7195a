/**
 * Stroke rasterization and the canonical marker text format.
 *
 * A stroke is rasterized by stamping a Euclidean disc (dx^2 + dy^2 <= r^2)
 * at every integer pixel of the Bresenham line between consecutive path
 * points. The canonical text form orders markers by id and pixels by
 * (y, x); the backend stores saves verbatim, so emitting exactly this form
 * makes PUT/GET round-trips byte-identical.
 */

import type { MarkerLabel } from './types.js';

export interface Stroke {
  label: MarkerLabel;
  radius: number; // brush radius in pixels, >= 1
  points: Array<{ x: number; y: number }>; // ordered path in image coordinates
}

export interface Marker {
  id: number;
  label: MarkerLabel;
  pixels: Array<{ x: number; y: number }>; // deduplicated, canonical order
}

export interface MarkerFile {
  imageId: string;
  width: number;
  height: number;
  markers: Marker[];
}

export function discOffsets(radius: number): Array<[number, number]> {
  const r = Math.max(1, Math.floor(radius));
  const out: Array<[number, number]> = [];
  for (let dy = -r; dy <= r; dy++) {
    for (let dx = -r; dx <= r; dx++) {
      if (dx * dx + dy * dy <= r * r) out.push([dx, dy]);
    }
  }
  return out;
}

export function bresenham(x0: number, y0: number, x1: number, y1: number): Array<[number, number]> {
  const points: Array<[number, number]> = [];
  let x = Math.round(x0);
  let y = Math.round(y0);
  const xe = Math.round(x1);
  const ye = Math.round(y1);
  const dx = Math.abs(xe - x);
  const dy = -Math.abs(ye - y);
  const sx = x < xe ? 1 : -1;
  const sy = y < ye ? 1 : -1;
  let err = dx + dy;
  for (;;) {
    points.push([x, y]);
    if (x === xe && y === ye) break;
    const e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
  return points;
}

/** Pixels covered by one stroke, clipped to the canvas, as y*width+x keys. */
export function rasterizeStroke(stroke: Stroke, width: number, height: number): Set<number> {
  if (stroke.points.length < 1) throw new Error('stroke has no points');
  if (stroke.radius < 1) throw new Error('brush radius must be >= 1');
  const offsets = discOffsets(stroke.radius);
  const keys = new Set<number>();
  const stamp = (cx: number, cy: number) => {
    for (const [dx, dy] of offsets) {
      const x = cx + dx;
      const y = cy + dy;
      if (x >= 0 && x < width && y >= 0 && y < height) keys.add(y * width + x);
    }
  };
  const pts = stroke.points;
  if (pts.length === 1) {
    stamp(Math.round(pts[0].x), Math.round(pts[0].y));
  } else {
    for (let i = 0; i + 1 < pts.length; i++) {
      for (const [x, y] of bresenham(pts[i].x, pts[i].y, pts[i + 1].x, pts[i + 1].y)) {
        stamp(x, y);
      }
    }
  }
  return keys;
}

function canonicalPixels(keys: Set<number>, width: number): Array<{ x: number; y: number }> {
  return [...keys]
    .sort((a, b) => a - b) // y*width+x sorts exactly by (y, x)
    .map((k) => ({ x: k % width, y: Math.floor(k / width) }));
}

/** Rasterize strokes into markers: one marker id per stroke, in order. */
export function strokesToMarkers(strokes: Stroke[], width: number, height: number): Marker[] {
  if (strokes.length === 0) throw new Error('no strokes to rasterize');
  return strokes.map((stroke, i) => {
    const keys = rasterizeStroke(stroke, width, height);
    if (keys.size === 0) throw new Error(`stroke ${i + 1} lies entirely outside the canvas`);
    return { id: i + 1, label: stroke.label, pixels: canonicalPixels(keys, width) };
  });
}

export function serializeMarkers(file: MarkerFile): string {
  const lines = ['FLIM-MARKERS 1', `${file.imageId} ${file.width} ${file.height}`];
  const markers = [...file.markers].sort((a, b) => a.id - b.id);
  for (const marker of markers) {
    const pixels = [...marker.pixels].sort((a, b) => a.y - b.y || a.x - b.x);
    for (const p of pixels) lines.push(`${p.x} ${p.y} ${marker.id} ${marker.label}`);
  }
  return lines.join('\n') + '\n';
}

/** Strokes straight to canonical marker text (the PUT body). */
export function rasterizeStrokes(
  strokes: Stroke[],
  imageId: string,
  width: number,
  height: number,
): string {
  return serializeMarkers({ imageId, width, height, markers: strokesToMarkers(strokes, width, height) });
}

export function parseMarkerText(text: string): MarkerFile {
  let header = false;
  let imageLine: { imageId: string; width: number; height: number } | null = null;
  const byId = new Map<number, { label: MarkerLabel; keys: Set<number> }>();
  let width = 0;
  const lines = text.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].split('#')[0].trim();
    if (!line) continue;
    if (!header) {
      if (line !== 'FLIM-MARKERS 1') throw new Error(`line ${i + 1}: bad header ${line}`);
      header = true;
      continue;
    }
    const parts = line.split(/\s+/);
    if (imageLine === null) {
      if (parts.length !== 3) throw new Error(`line ${i + 1}: expected image line`);
      imageLine = { imageId: parts[0], width: Number(parts[1]), height: Number(parts[2]) };
      width = imageLine.width;
      if (!Number.isInteger(width) || width < 1 || !Number.isInteger(imageLine.height) || imageLine.height < 1) {
        throw new Error(`line ${i + 1}: bad dimensions`);
      }
      continue;
    }
    if (parts.length !== 4) throw new Error(`line ${i + 1}: expected 'x y id label'`);
    const [x, y, id, label] = parts.map(Number);
    if (![x, y, id, label].every(Number.isInteger)) throw new Error(`line ${i + 1}: non-integer field`);
    if (label !== 1 && label !== 2) throw new Error(`line ${i + 1}: label must be 1 or 2`);
    if (x < 0 || x >= imageLine.width || y < 0 || y >= imageLine.height) {
      throw new Error(`line ${i + 1}: pixel (${x},${y}) outside ${imageLine.width}x${imageLine.height}`);
    }
    const entry = byId.get(id);
    if (entry) {
      if (entry.label !== label) throw new Error(`line ${i + 1}: duplicate marker id ${id} with conflicting labels`);
      entry.keys.add(y * width + x);
    } else {
      byId.set(id, { label: label as MarkerLabel, keys: new Set([y * width + x]) });
    }
  }
  if (!header) throw new Error('empty marker file');
  if (imageLine === null) throw new Error('missing image line');
  const markers = [...byId.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([id, { label, keys }]) => ({ id, label, pixels: canonicalPixels(keys, width) }));
  return { ...imageLine, markers };
}

/** Pixel-set equality between two marker files (order-insensitive). */
export function markersEqual(a: MarkerFile, b: MarkerFile): boolean {
  if (a.imageId !== b.imageId || a.width !== b.width || a.height !== b.height) return false;
  if (a.markers.length !== b.markers.length) return false;
  for (let i = 0; i < a.markers.length; i++) {
    const ma = a.markers[i];
    const mb = b.markers[i];
    if (ma.id !== mb.id || ma.label !== mb.label || ma.pixels.length !== mb.pixels.length) return false;
    for (let j = 0; j < ma.pixels.length; j++) {
      if (ma.pixels[j].x !== mb.pixels[j].x || ma.pixels[j].y !== mb.pixels[j].y) return false;
    }
  }
  return true;
}
