/**
 * Selection dashboard: shows the session score, training set size, and the
 * ranked worst pool images; Accept/Reject post one selection step each.
 *
 * The dashboard never updates optimistically: every step POSTs, then
 * re-fetches GET /api/selection and re-renders from the response alone, so
 * the view always mirrors server state.
 */

import type { ApiClient } from './api.js';
import type { SelectionState } from './types.js';

export class SelectionDashboard {
  private state: SelectionState | null = null;
  private candidate: string | null = null;
  private stopped = false;
  private busy = false;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private onStop: () => void = () => {},
  ) {}

  getState(): SelectionState | null {
    return this.state;
  }

  selectedCandidate(): string | null {
    return this.candidate;
  }

  async refresh(): Promise<void> {
    this.state = await this.api.getSelection();
    if (
      this.candidate === null ||
      !this.state.ranked_worst.some((r) => r.image_id === this.candidate)
    ) {
      this.candidate = this.state.ranked_worst.length ? this.state.ranked_worst[0].image_id : null;
    }
    this.render();
  }

  /** POST one step for the selected candidate, then re-render from GET. */
  async step(accept: boolean): Promise<void> {
    if (this.stopped || this.busy || this.state === null || this.candidate === null) return;
    this.busy = true;
    try {
      await this.api.selectionStep(accept, this.candidate);
      this.candidate = null;
      await this.refresh(); // authoritative state only
    } finally {
      this.busy = false;
    }
  }

  /** The "user is satisfied" button: freezes the session view. */
  stop(): void {
    this.stopped = true;
    this.render();
    this.onStop();
  }

  isStopped(): boolean {
    return this.stopped;
  }

  render(): void {
    const root = this.root;
    root.textContent = '';
    if (this.state === null) {
      const note = document.createElement('p');
      note.dataset.testid = 'dashboard-empty';
      note.textContent = 'No selection session loaded.';
      root.appendChild(note);
      return;
    }
    const header = document.createElement('div');
    header.className = 'dash-header';
    header.dataset.testid = 'dashboard-header';
    header.textContent =
      `score x̄ = ${this.state.x.toFixed(4)} (previous ${this.state.x_prev.toFixed(4)})` +
      ` | training set: ${this.state.training_set.length} image(s)` +
      (this.stopped ? ' | session stopped' : '');
    root.appendChild(header);

    const tset = document.createElement('div');
    tset.dataset.testid = 'training-set';
    tset.textContent = `T = {${this.state.training_set.join(', ')}}`;
    root.appendChild(tset);

    const list = document.createElement('ol');
    list.dataset.testid = 'ranked-list';
    for (const row of this.state.ranked_worst) {
      const item = document.createElement('li');
      item.dataset.imageId = row.image_id;
      const thumb = document.createElement('img');
      thumb.src = this.api.imageUrl(row.image_id);
      thumb.alt = row.image_id;
      thumb.width = 64;
      const label = document.createElement('span');
      label.textContent = ` ${row.image_id}: F=${row.f_beta.toFixed(3)}`;
      const pick = document.createElement('input');
      pick.type = 'radio';
      pick.name = 'candidate';
      pick.value = row.image_id;
      pick.checked = row.image_id === this.candidate;
      pick.addEventListener('change', () => {
        this.candidate = row.image_id;
      });
      item.append(pick, thumb, label);
      list.appendChild(item);
    }
    root.appendChild(list);

    const controls = document.createElement('div');
    const acceptBtn = document.createElement('button');
    acceptBtn.dataset.testid = 'accept';
    acceptBtn.textContent = 'Accept candidate';
    acceptBtn.disabled = this.stopped || this.candidate === null;
    acceptBtn.addEventListener('click', () => void this.step(true));
    const rejectBtn = document.createElement('button');
    rejectBtn.dataset.testid = 'reject';
    rejectBtn.textContent = 'Reject last, try candidate';
    rejectBtn.disabled = this.stopped || this.candidate === null;
    rejectBtn.addEventListener('click', () => void this.step(false));
    const stopBtn = document.createElement('button');
    stopBtn.dataset.testid = 'stop';
    stopBtn.textContent = 'Stop session';
    stopBtn.disabled = this.stopped;
    stopBtn.addEventListener('click', () => this.stop());
    controls.append(acceptBtn, rejectBtn, stopBtn);
    root.appendChild(controls);
  }
}
