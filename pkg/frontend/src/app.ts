// Browser entry point. Wires the study flow to the DOM: enrollment from
// launch parameters, asset preloading, BTC flicker via requestAnimationFrame,
// PTC in-place toggling, response buttons with keyboard equivalents, and the
// sync indicator for the offline queue.
//
// Launch parameters (query string):
//   server  service base URL (default: page origin)
//   method  btc | ptc, used when no token is given (default: btc)
//   token   resume an existing enrollment instead of enrolling

import { ApiError, StudyClient } from './api.js';
import { FlickerScheduler, measureRefreshHz } from './flicker.js';
import { SubmissionQueue } from './queue.js';
import { BatchSession, BreakTimer } from './session.js';
import { SubmitBlocked, TrialController } from './trial.js';
import type { Choice, Method, Question } from './types.js';

const REFRESH_PROBE_FRAMES = 30;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function preload(url: string): { img: HTMLImageElement; decoded: Promise<unknown> } {
  const img = new Image();
  img.src = url;
  return { img, decoded: img.decode() };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Median requestAnimationFrame cadence, measured before the first trial. */
function probeRefreshHz(): Promise<number> {
  return new Promise((resolve) => {
    const stamps: number[] = [];
    const tick = (t: number) => {
      stamps.push(t);
      if (stamps.length < REFRESH_PROBE_FRAMES) requestAnimationFrame(tick);
      else resolve(measureRefreshHz(stamps));
    };
    requestAnimationFrame(tick);
  });
}

interface PaneElements {
  test: HTMLImageElement;
  pivot: HTMLImageElement;
}

function showImage(pane: PaneElements, which: 'test' | 'pivot'): void {
  pane.test.style.visibility = which === 'test' ? 'visible' : 'hidden';
  pane.pivot.style.visibility = which === 'pivot' ? 'visible' : 'hidden';
}

function mountPane(host: HTMLElement, test: HTMLImageElement, pivot: HTMLImageElement,
                   zoom: number): PaneElements {
  host.replaceChildren(test, pivot);
  for (const img of [test, pivot]) {
    img.style.transform = `scale(${zoom})`;
    img.style.transformOrigin = 'center';
  }
  const pane = { test, pivot };
  showImage(pane, 'test');
  return pane;
}

async function runTrial(session: BatchSession, question: Question,
                        client: StudyClient, refreshHz: number): Promise<void> {
  const prompt = el('prompt');
  const left = preload(client.assetUrl(question.left_url));
  const pivot = preload(client.assetUrl(question.pivot_url));
  const pivotCopy = preload(client.assetUrl(question.pivot_url));
  const right = preload(client.assetUrl(question.right_url));

  const trial = new TrialController(question, session.batch.batch_id);
  const start = await trial.start({
    left: left.decoded,
    pivot: Promise.all([pivot.decoded, pivotCopy.decoded]),
    right: right.decoded,
  });
  if (!start.ready) {
    console.warn(`asset failure for ${question.triplet_id}: ${start.error}`);
    session.record(start.draft);
    return;
  }

  const leftPane = mountPane(el('pane-left'), left.img, pivot.img, question.zoom_factor);
  const rightPane = mountPane(el('pane-right'), right.img, pivotCopy.img, question.zoom_factor);
  el('pane-pivot').replaceChildren(Object.assign(new Image(), { src: pivot.img.src }));

  let stopped = false;
  if (question.flicker_hz > 0) {
    // both test panes swap against the pivot in phase, frame-counted
    const scheduler = new FlickerScheduler(refreshHz, question.flicker_hz);
    const tick = (t: number) => {
      if (stopped) return;
      const image = scheduler.onFrame(t);
      showImage(leftPane, image);
      showImage(rightPane, image);
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);
  }

  const toggle = (pane: PaneElements, showing: { test: boolean }) => {
    showing.test = !showing.test;
    showImage(pane, showing.test ? 'test' : 'pivot');
    trial.toggle();
    syncButtons();
  };
  const leftShowing = { test: true };
  const rightShowing = { test: true };

  const buttons: Record<Choice, HTMLButtonElement> = {
    left: el('choose-left'),
    not_sure: el('choose-not-sure'),
    right: el('choose-right'),
    skip: el('choose-skip'),
  };
  const syncButtons = () => {
    for (const [choice, button] of Object.entries(buttons)) {
      button.disabled = !trial.canSubmit(choice as Choice);
    }
  };
  syncButtons();

  const choice = await new Promise<Choice>((resolve) => {
    const submit = (c: Choice) => {
      try {
        const draft = trial.submit(c);
        cleanup();
        session.record(draft);
        resolve(c);
      } catch (err) {
        if (err instanceof SubmitBlocked) prompt.textContent = err.message;
        else throw err;
      }
    };
    const onKey = (ev: KeyboardEvent) => {
      if (ev.key === 'ArrowLeft') submit('left');
      else if (ev.key === 'ArrowDown') submit('not_sure');
      else if (ev.key === 'ArrowRight') submit('right');
      else if (ev.key === 's') submit('skip');
      else if (question.toggle_required && ev.key === 'q') toggle(leftPane, leftShowing);
      else if (question.toggle_required && ev.key === 'p') toggle(rightPane, rightShowing);
    };
    const onClick = (c: Choice) => () => submit(c);
    const handlers = (Object.entries(buttons) as [Choice, HTMLButtonElement][]).map(
      ([c, button]): [HTMLButtonElement, () => void] => [button, onClick(c)],
    );
    const cleanup = () => {
      stopped = true;
      prompt.textContent = '';
      document.removeEventListener('keydown', onKey);
      for (const [button, handler] of handlers) button.removeEventListener('click', handler);
    };
    document.addEventListener('keydown', onKey);
    for (const [button, handler] of handlers) button.addEventListener('click', handler);
  });
  void choice;
}

async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const client = new StudyClient(params.get('server') ?? window.location.origin);
  const status = el('status');

  const queue = new SubmissionQueue(
    (draft) => client.postResponse(draft),
    {
      onRetry: () => {
        status.textContent = `offline, ${queue.size} responses queued`;
      },
      onReject: (draft, err) => console.error(`response refused: ${err.message}`, draft),
    },
    window.localStorage,
  );
  window.addEventListener('online', () => void queue.flush());

  const token = params.get('token');
  if (token !== null) {
    client.token = token;
  } else {
    const method = (params.get('method') ?? 'btc') as Method;
    const enrollment = await client.enroll(method);
    status.textContent = `enrolled as ${enrollment.participant_id}`;
  }

  const refreshHz = await probeRefreshHz();
  const breaks = new BreakTimer();

  for (;;) {
    while (!breaks.canStartNext) {
      status.textContent = `break: ${Math.ceil(breaks.remainingMs() / 1000)} s before the next batch`;
      await sleep(1000);
    }
    let session: BatchSession;
    try {
      session = new BatchSession(await client.nextBatch(), queue);
    } catch (err) {
      if (err instanceof ApiError && (err.status === 403 || err.status === 409)) {
        status.textContent = `no more batches: ${err.detail}`;
        break;
      }
      throw err;
    }
    let question = session.current();
    while (question !== null) {
      const p = session.progress;
      status.textContent = `question ${p.answered + 1} / ${p.total} (${p.synced} synced)`;
      await runTrial(session, question, client, refreshHz);
      question = session.current();
    }
    breaks.batchCompleted();
  }
  await queue.flush();
  status.textContent += ' — all responses synced, thank you';
}

main().catch((err) => {
  el('status').textContent = `error: ${err instanceof Error ? err.message : String(err)}`;
  throw err;
});
