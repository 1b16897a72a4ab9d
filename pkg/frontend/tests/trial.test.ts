import { describe, expect, it } from 'vitest';

import { SubmitBlocked, TrialController } from '../src/trial.js';
import { allDecoded, btcQuestion, fakeClock, ptcQuestion } from './helpers.js';

describe('decode gate', () => {
  it('does not start until every image is decoded', async () => {
    let releaseRight = () => {};
    const right = new Promise<void>((resolve) => {
      releaseRight = resolve;
    });
    const trial = new TrialController(btcQuestion(), 'b1');
    const started = trial.start({ left: Promise.resolve(), pivot: Promise.resolve(), right });

    await Promise.resolve();
    expect(trial.started).toBe(false);

    releaseRight();
    expect((await started).ready).toBe(true);
    expect(trial.started).toBe(true);
  });

  it('skips the question when an asset fails to decode', async () => {
    const trial = new TrialController(ptcQuestion(), 'b1');
    const result = await trial.start({
      left: Promise.resolve(),
      pivot: Promise.reject(new Error('decode failed: pivot.png')),
      right: Promise.resolve(),
    });

    expect(result.ready).toBe(false);
    if (!result.ready) {
      expect(result.error).toContain('decode failed');
      expect(result.draft.choice).toBe('skip');
      expect(result.draft.triplet_id).toBe(ptcQuestion().triplet_id);
    }
  });
});

describe('response drafts', () => {
  it('measures response time from the moment the trial became visible', async () => {
    const clock = fakeClock(5_000);
    const trial = new TrialController(btcQuestion(), 'b1', { now: clock.now, wallNow: () => 1 });
    await trial.start(allDecoded());
    clock.advance(1_234);
    expect(trial.submit('right').response_time_ms).toBe(1_234);
  });

  it('leaves toggle_count null on flicker questions', async () => {
    const trial = new TrialController(btcQuestion(), 'b1', { now: () => 0, wallNow: () => 1 });
    await trial.start(allDecoded());
    expect(trial.submit('left').toggle_count).toBeNull();
  });

  it('produces identical records for button and keyboard paths', async () => {
    // both input paths call submit(); the records can differ only if the
    // clock moved, so pin it
    const drafts = [];
    for (const path of ['button', 'keyboard']) {
      void path;
      const trial = new TrialController(ptcQuestion(), 'b1', { now: () => 0, wallNow: () => 9 });
      await trial.start(allDecoded());
      trial.toggle();
      drafts.push(trial.submit('not_sure'));
    }
    expect(drafts[0]).toEqual(drafts[1]);
  });
});

describe('toggle gating', () => {
  it('blocks every verdict, including not-sure, before the first toggle', async () => {
    const trial = new TrialController(ptcQuestion(), 'b1', { now: () => 0, wallNow: () => 1 });
    await trial.start(allDecoded());

    for (const choice of ['left', 'not_sure', 'right'] as const) {
      expect(trial.canSubmit(choice)).toBe(false);
      expect(() => trial.submit(choice)).toThrow(SubmitBlocked);
    }
    expect(trial.toggleCount).toBe(0);
  });

  it('always allows skip', async () => {
    const trial = new TrialController(ptcQuestion(), 'b1', { now: () => 0, wallNow: () => 1 });
    await trial.start(allDecoded());
    expect(trial.canSubmit('skip')).toBe(true);
    expect(trial.submit('skip').toggle_count).toBe(0);
  });

  it('counts toggles and unblocks after the first one', async () => {
    const trial = new TrialController(ptcQuestion(), 'b1', { now: () => 0, wallNow: () => 1 });
    await trial.start(allDecoded());
    trial.toggle();
    trial.toggle();
    trial.toggle();
    expect(trial.submit('right').toggle_count).toBe(3);
  });

  it('never applies to flicker questions', async () => {
    const trial = new TrialController(btcQuestion(), 'b1', { now: () => 0, wallNow: () => 1 });
    await trial.start(allDecoded());
    expect(trial.canSubmit('left')).toBe(true);
  });
});

describe('lifecycle errors', () => {
  it('refuses to submit before start', () => {
    const trial = new TrialController(btcQuestion(), 'b1');
    expect(() => trial.submit('left')).toThrow(SubmitBlocked);
  });

  it('refuses to toggle before start', () => {
    const trial = new TrialController(ptcQuestion(), 'b1');
    expect(() => trial.toggle()).toThrow('trial not started');
  });
});
