// Batch flow: questions presented in served order, responses handed to the
// submission queue before advancing, and the mandatory rest between two
// batch sittings.

import type { SubmissionQueue } from './queue.js';
import type { BatchPayload, Question, ResponseDraft } from './types.js';

export const INTER_BATCH_BREAK_MS = 3 * 60 * 1000;

export class OrderError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'OrderError';
  }
}

export interface Progress {
  answered: number;
  synced: number;
  total: number;
}

export class BatchSession {
  private index = 0;

  constructor(
    readonly batch: BatchPayload,
    private readonly queue: SubmissionQueue,
  ) {}

  get complete(): boolean {
    return this.index >= this.batch.questions.length;
  }

  /** The question currently on screen; null once the batch is done. */
  current(): Question | null {
    return this.complete ? null : this.batch.questions[this.index];
  }

  get progress(): Progress {
    return {
      answered: this.index,
      synced: this.queue.acked,
      total: this.batch.questions.length,
    };
  }

  /**
   * Commit the current question's draft and advance. Only the current
   * question is accepted: the client never re-orders questions relative
   * to the served batch, and the FIFO queue preserves that order on the
   * wire as well.
   */
  record(draft: ResponseDraft): void {
    const question = this.current();
    if (question === null) {
      throw new OrderError('batch already complete');
    }
    if (draft.triplet_id !== question.triplet_id) {
      throw new OrderError(
        `expected a response for ${question.triplet_id}, got ${draft.triplet_id}`,
      );
    }
    this.queue.enqueue(draft);
    this.index += 1;
  }
}

/** Enforces the rest period before a participant starts another batch. */
export class BreakTimer {
  private lastCompletedAt: number | null = null;

  constructor(
    private readonly breakMs: number = INTER_BATCH_BREAK_MS,
    private readonly now: () => number = Date.now,
  ) {}

  batchCompleted(): void {
    this.lastCompletedAt = this.now();
  }

  remainingMs(): number {
    if (this.lastCompletedAt === null) return 0;
    return Math.max(0, this.lastCompletedAt + this.breakMs - this.now());
  }

  get canStartNext(): boolean {
    return this.remainingMs() === 0;
  }
}
