/** Pixel math for compositing saliency/mask overlays onto the image. */

import { clampOpacity } from './types.js';

export interface RgbaBuffer {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, length = width * height * 4
}

/**
 * Alpha-composite `over` onto `base` with a global opacity.
 * opacity 0 returns the base bytes unchanged, 1 the overlay bytes.
 */
export function compositeOverlay(base: RgbaBuffer, over: RgbaBuffer, opacity: number): RgbaBuffer {
  if (base.width !== over.width || base.height !== over.height) {
    throw new Error(
      `overlay ${over.width}x${over.height} does not match image ${base.width}x${base.height}`,
    );
  }
  const o = clampOpacity(opacity);
  const out = new Uint8ClampedArray(base.data.length);
  if (o === 0) {
    out.set(base.data);
    return { width: base.width, height: base.height, data: out };
  }
  if (o === 1) {
    out.set(over.data);
    return { width: base.width, height: base.height, data: out };
  }
  for (let i = 0; i < out.length; i += 4) {
    out[i] = base.data[i] * (1 - o) + over.data[i] * o;
    out[i + 1] = base.data[i + 1] * (1 - o) + over.data[i + 1] * o;
    out[i + 2] = base.data[i + 2] * (1 - o) + over.data[i + 2] * o;
    out[i + 3] = 255;
  }
  return { width: base.width, height: base.height, data: out };
}

/** Key identifying one saliency fetch; switching decoder/block/image makes a new key. */
export function saliencyCacheKey(imageId: string, decoder: string, block: number): string {
  return `${imageId}|${decoder}|${block}`;
}

/**
 * Small cache so toggling opacity or re-rendering never re-fetches; only a
 * decoder/block/image switch triggers exactly one API call.
 */
export class SaliencyCache {
  private entries = new Map<string, Blob>();

  constructor(private fetchSaliency: (imageId: string, decoder: string, block: number) => Promise<Blob>) {}

  async get(imageId: string, decoder: string, block: number): Promise<Blob> {
    const key = saliencyCacheKey(imageId, decoder, block);
    const hit = this.entries.get(key);
    if (hit) return hit;
    const blob = await this.fetchSaliency(imageId, decoder, block);
    this.entries.set(key, blob);
    return blob;
  }

  invalidate(): void {
    this.entries.clear();
  }
}
