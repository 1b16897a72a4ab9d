/**
 * Ordered submission queue with offline retry.
 *
 * One request is in flight at a time and a draft stays at the head of the
 * queue until the server acknowledges it, so responses arrive in the order
 * they were answered. Retries resend the identical draft: a response the
 * server recorded but whose acknowledgement was lost in transit comes back
 * as {accepted: true, duplicate: true} instead of a second row, which makes
 * replay after a network drop loss-free and duplicate-free.
 *
 * There is deliberately no retry cap. Dropping a draft would lose a
 * response; the UI surfaces the sync backlog (`size`) instead and keeps
 * trying. Only a definitive server refusal (4xx) removes a draft without
 * an acknowledgement, since resending the same body can never succeed.
 */

import { ApiError } from './api.js';
import type { ResponseAck, ResponseDraft } from './types.js';

export interface QueueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export interface QueueEvents {
  onAck?: (draft: ResponseDraft, ack: ResponseAck) => void;
  onReject?: (draft: ResponseDraft, error: ApiError) => void;
  onRetry?: (draft: ResponseDraft, error: unknown) => void;
}

const STORAGE_KEY = 'study_submission_queue';

export class SubmissionQueue {
  retryDelayMs = 2000;

  private queue: ResponseDraft[] = [];
  private ackedCount = 0;
  private draining: Promise<void> | null = null;

  constructor(
    private readonly post: (draft: ResponseDraft) => Promise<ResponseAck>,
    private readonly events: QueueEvents = {},
    private readonly storage?: QueueStorage,
    private readonly delay: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {
    if (storage) this.restore();
  }

  /** Drafts still waiting for an acknowledgement. */
  get size(): number {
    return this.queue.length;
  }

  get acked(): number {
    return this.ackedCount;
  }

  enqueue(draft: ResponseDraft): void {
    this.queue.push(draft);
    this.persist();
    void this.flush();
  }

  /** Resolves once every queued draft is acknowledged or rejected. */
  flush(): Promise<void> {
    if (this.draining === null) {
      this.draining = this.drain().finally(() => {
        this.draining = null;
      });
    }
    return this.draining;
  }

  private async drain(): Promise<void> {
    while (this.queue.length > 0) {
      const head = this.queue[0];
      try {
        const ack = await this.post(head);
        this.queue.shift();
        this.persist();
        this.ackedCount += 1;
        this.events.onAck?.(head, ack);
      } catch (err) {
        if (err instanceof ApiError && err.status >= 400 && err.status < 500) {
          this.queue.shift();
          this.persist();
          this.events.onReject?.(head, err);
          continue;
        }
        this.events.onRetry?.(head, err);
        await this.delay(this.retryDelayMs);
      }
    }
  }

  private persist(): void {
    if (!this.storage) return;
    try {
      this.storage.setItem(STORAGE_KEY, JSON.stringify(this.queue));
    } catch {
      // storage full or unavailable; the in-memory queue still drains
    }
  }

  private restore(): void {
    if (!this.storage) return;
    try {
      const stored = this.storage.getItem(STORAGE_KEY);
      if (stored) this.queue = JSON.parse(stored) as ResponseDraft[];
    } catch {
      this.queue = [];
    }
  }
}
