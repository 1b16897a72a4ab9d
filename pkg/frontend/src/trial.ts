// One triplet question, from asset decode to a submittable response draft.

import type { Choice, Question, ResponseDraft } from './types.js';

/** Submission refused; the UI should surface `message` as a prompt. */
export class SubmitBlocked extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'SubmitBlocked';
  }
}

export interface TrialAssets {
  left: Promise<unknown>;
  pivot: Promise<unknown>;
  right: Promise<unknown>;
}

export type StartResult =
  | { ready: true }
  | { ready: false; draft: ResponseDraft; error: string };

export interface TrialClock {
  /** Monotonic milliseconds; response times. Defaults to performance.now. */
  now?: () => number;
  /** Epoch seconds; the submitted_at stamp. Defaults to Date.now / 1000. */
  wallNow?: () => number;
}

export class TrialController {
  private toggles = 0;
  private startedAt: number | null = null;
  private readonly now: () => number;
  private readonly wallNow: () => number;

  constructor(
    readonly question: Question,
    readonly batchId: string,
    clock: TrialClock = {},
  ) {
    this.now = clock.now ?? (() => performance.now());
    this.wallNow = clock.wallNow ?? (() => Date.now() / 1000);
  }

  /**
   * Decode gate: the trial only becomes visible (and the response clock
   * only starts) once all three images are fully decoded, so a trial never
   * flickers a half-loaded image. A failed decode skips the question and
   * reports the failure instead of presenting a broken comparison.
   */
  async start(assets: TrialAssets): Promise<StartResult> {
    try {
      await Promise.all([assets.left, assets.pivot, assets.right]);
    } catch (err) {
      const error = err instanceof Error ? err.message : String(err);
      return { ready: false, error, draft: this.draft('skip', 0) };
    }
    this.startedAt = this.now();
    return { ready: true };
  }

  get started(): boolean {
    return this.startedAt !== null;
  }

  get toggleCount(): number {
    return this.toggles;
  }

  /** One in-place swap between a test image and the pivot (PTC viewing). */
  toggle(): void {
    if (this.startedAt === null) throw new Error('trial not started');
    this.toggles += 1;
  }

  /** Drives the submit buttons' disabled state. */
  canSubmit(choice: Choice): boolean {
    if (this.startedAt === null) return false;
    if (this.question.toggle_required && choice !== 'skip' && this.toggles < 1) {
      return false;
    }
    return true;
  }

  /**
   * Keyboard shortcuts and buttons both land here, so the records they
   * produce are identical by construction. Toggle-view questions refuse
   * any verdict (including "not sure") before the first toggle; skip is
   * always allowed.
   */
  submit(choice: Choice): ResponseDraft {
    if (this.startedAt === null) {
      throw new SubmitBlocked('trial has not started');
    }
    if (!this.canSubmit(choice)) {
      throw new SubmitBlocked('toggle each test image against the source at least once');
    }
    return this.draft(choice, this.now() - this.startedAt);
  }

  private draft(choice: Choice, responseTimeMs: number): ResponseDraft {
    return {
      triplet_id: this.question.triplet_id,
      batch_id: this.batchId,
      choice,
      response_time_ms: responseTimeMs,
      toggle_count: this.question.toggle_required ? this.toggles : null,
      submitted_at: this.wallNow(),
    };
  }
}
