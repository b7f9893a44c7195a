/** Typed client for the annotation service HTTP API. */

import type { ImageInfo, JobState, SelectionState } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function raise(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(
    private base: string = '',
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async listImages(): Promise<ImageInfo[]> {
    const resp = await this.fetchFn(this.url('/api/images'));
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  imageUrl(id: string): string {
    return this.url(`/api/images/${encodeURIComponent(id)}.png`);
  }

  /** Canonical marker text, or null when the image has no markers yet. */
  async getMarkers(id: string): Promise<string | null> {
    const resp = await this.fetchFn(this.url(`/api/markers/${encodeURIComponent(id)}`));
    if (resp.status === 404) return null;
    if (!resp.ok) await raise(resp);
    return resp.text();
  }

  /** PUT canonical marker text; resolves to the server's byte-identical echo. */
  async putMarkers(id: string, text: string): Promise<string> {
    const resp = await this.fetchFn(this.url(`/api/markers/${encodeURIComponent(id)}`), {
      method: 'PUT',
      headers: { 'content-type': 'text/plain; charset=utf-8' },
      body: text,
    });
    if (!resp.ok) await raise(resp);
    return resp.text();
  }

  async startTraining(): Promise<JobState> {
    const resp = await this.fetchFn(this.url('/api/train'), { method: 'POST' });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async getJob(id: string): Promise<JobState> {
    const resp = await this.fetchFn(this.url(`/api/jobs/${encodeURIComponent(id)}`));
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async inferSaliency(id: string, decoder: string, block: number): Promise<Blob> {
    const resp = await this.fetchFn(
      this.url(`/api/infer/${encodeURIComponent(id)}?decoder=${decoder}&block=${block}`),
      { method: 'POST' },
    );
    if (!resp.ok) await raise(resp);
    return resp.blob();
  }

  async getSelection(): Promise<SelectionState> {
    const resp = await this.fetchFn(this.url('/api/selection'));
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async selectionStep(accept: boolean, candidate: string): Promise<SelectionState> {
    const resp = await this.fetchFn(this.url('/api/selection/step'), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ accept, candidate }),
    });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }
}
