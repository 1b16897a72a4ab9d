// Shared factories for the test suites.

import type { BatchPayload, Question, ResponseDraft } from '../src/types.js';

export function btcQuestion(overrides: Partial<Question> = {}): Question {
  return {
    triplet_id: 'btc~s01~c1.1~c1.3',
    source_id: 's01',
    kind: 'same_codec',
    left_url: '/assets/s01/c1-1.png',
    pivot_url: '/assets/s01/src.png',
    right_url: '/assets/s01/c1-3.png',
    zoom_factor: 2,
    flicker_hz: 10,
    toggle_required: false,
    ...overrides,
  };
}

export function ptcQuestion(overrides: Partial<Question> = {}): Question {
  return btcQuestion({
    triplet_id: 'ptc~s01~c1.1~c1.3',
    zoom_factor: 1,
    flicker_hz: 0,
    toggle_required: true,
    ...overrides,
  });
}

export function batchOf(questions: Question[], batchId = 'b1'): BatchPayload {
  return { batch_id: batchId, method: 'ptc', questions };
}

export function draft(overrides: Partial<ResponseDraft> = {}): ResponseDraft {
  return {
    triplet_id: 'ptc~s01~c1.1~c1.3',
    batch_id: 'b1',
    choice: 'left',
    response_time_ms: 900,
    toggle_count: 1,
    submitted_at: 1_700_000_000,
    ...overrides,
  };
}

/** Deterministic monotonic clock for response-time assertions. */
export function fakeClock(start = 0): { now: () => number; advance: (ms: number) => void } {
  let t = start;
  return {
    now: () => t,
    advance: (ms: number) => {
      t += ms;
    },
  };
}

export const decoded = Promise.resolve();

export function allDecoded() {
  return { left: decoded, pivot: decoded, right: decoded };
}
