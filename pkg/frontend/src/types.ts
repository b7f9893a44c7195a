export type MarkerLabel = 1 | 2; // 1 = foreground/object, 2 = background

export const DECODERS = ['ts', 'at', 'lt', 'pb', 'mb', 'lm', 'bp'] as const;
export type DecoderId = (typeof DECODERS)[number];

export type OverlayMode = 'none' | 'saliency' | 'mask';

export interface ViewState {
  imageId: string | null;
  overlay: OverlayMode;
  opacity: number; // [0, 1]
  decoder: DecoderId;
  block: number;
}

export function defaultViewState(): ViewState {
  return { imageId: null, overlay: 'none', opacity: 0.5, decoder: 'lm', block: 1 };
}

export function clampOpacity(value: number): number {
  return Math.min(1, Math.max(0, value));
}

export interface ImageInfo {
  id: string;
  width: number;
  height: number;
}

export interface JobState {
  id: string;
  phase: 'queued' | 'training' | 'done' | 'failed';
  progress: number;
  error: string | null;
}

export interface RankedImage {
  image_id: string;
  f_beta: number;
}

export interface SelectionState {
  training_set: string[];
  pool: string[];
  x_prev: number;
  z_prev: string | null;
  steps: number;
  x: number;
  ranked_worst: RankedImage[];
}
