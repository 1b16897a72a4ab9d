// BTC flicker scheduling.
//
// The test/pivot alternation is driven by counting display frames against
// the measured refresh rate, never by wall-clock timers: a setInterval at
// 100 ms drifts against the paint clock and beats against vsync, while a
// swap every N frames stays phase-locked for the whole trial.

export type FlickerImage = 'test' | 'pivot';

export interface FrameLogEntry {
  frame: number;
  time: number;
  image: FlickerImage;
}

/**
 * Frames each image is held for. One full alternation cycle shows the test
 * image and then the pivot, i.e. two swaps, so a 60 Hz display at the
 * standard 10 Hz alternation holds each image for 3 frames.
 */
export function framesPerHalfCycle(refreshHz: number, flickerHz: number): number {
  return Math.max(1, Math.round(refreshHz / (2 * flickerHz)));
}

export class FlickerScheduler {
  readonly framesPerHalf: number;
  readonly log: FrameLogEntry[] = [];

  private frame = -1;

  constructor(refreshHz: number, flickerHz = 10) {
    this.framesPerHalf = framesPerHalfCycle(refreshHz, flickerHz);
  }

  /**
   * Advance one display frame (one requestAnimationFrame tick) and return
   * which image both test panes show for it. The timestamp is recorded for
   * offline verification only; it never influences the phase.
   */
  onFrame(timestamp: number): FlickerImage {
    this.frame += 1;
    const image: FlickerImage =
      Math.floor(this.frame / this.framesPerHalf) % 2 === 0 ? 'test' : 'pivot';
    this.log.push({ frame: this.frame, time: timestamp, image });
    return image;
  }
}

/**
 * Refresh rate from a run of requestAnimationFrame timestamps. The median
 * inter-frame delta is robust against the occasional dropped frame.
 */
export function measureRefreshHz(timestamps: number[]): number {
  if (timestamps.length < 2) return 0;
  const deltas: number[] = [];
  for (let i = 1; i < timestamps.length; i++) {
    deltas.push(timestamps[i] - timestamps[i - 1]);
  }
  deltas.sort((a, b) => a - b);
  const mid = Math.floor(deltas.length / 2);
  const median =
    deltas.length % 2 === 1 ? deltas[mid] : (deltas[mid - 1] + deltas[mid]) / 2;
  return median > 0 ? 1000 / median : 0;
}

/** Achieved alternation frequency (full cycles per second) of a frame log. */
export function measuredAlternationHz(log: FrameLogEntry[]): number {
  if (log.length < 2) return 0;
  let swaps = 0;
  for (let i = 1; i < log.length; i++) {
    if (log[i].image !== log[i - 1].image) swaps += 1;
  }
  const seconds = (log[log.length - 1].time - log[0].time) / 1000;
  return seconds > 0 ? swaps / 2 / seconds : 0;
}
