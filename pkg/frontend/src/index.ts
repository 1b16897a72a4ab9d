export { ApiError, StudyClient } from './api.js';
export type { FetchLike } from './api.js';
export {
  FlickerScheduler,
  framesPerHalfCycle,
  measureRefreshHz,
  measuredAlternationHz,
} from './flicker.js';
export type { FlickerImage, FrameLogEntry } from './flicker.js';
export { SubmissionQueue } from './queue.js';
export type { QueueEvents, QueueStorage } from './queue.js';
export { BatchSession, BreakTimer, INTER_BATCH_BREAK_MS, OrderError } from './session.js';
export type { Progress } from './session.js';
export { SubmitBlocked, TrialController } from './trial.js';
export type { StartResult, TrialAssets, TrialClock } from './trial.js';
export type {
  BatchPayload,
  Choice,
  Enrollment,
  Method,
  Question,
  ResponseAck,
  ResponseDraft,
  StudyMeta,
  TripletKind,
} from './types.js';
