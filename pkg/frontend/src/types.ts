// Wire types for the study service API. Field names mirror the JSON
// payloads exactly (snake_case), so these interfaces double as protocol
// documentation.

export type Method = 'btc' | 'ptc';

export type Choice = 'left' | 'not_sure' | 'right' | 'skip';

export type TripletKind = 'same_codec' | 'cross_codec';

export interface StudyMeta {
  methods: Method[];
  target_coverage: number;
  max_batches_per_participant: number;
  batch_sizes: Record<string, number>;
}

export interface Enrollment {
  participant_id: string;
  token: string;
  method: Method;
  max_batches: number;
}

export interface Question {
  triplet_id: string;
  source_id: string;
  kind: TripletKind;
  left_url: string;
  pivot_url: string;
  right_url: string;
  zoom_factor: number;
  flicker_hz: number;
  toggle_required: boolean;
}

export interface BatchPayload {
  batch_id: string;
  method: Method;
  questions: Question[];
}

export interface ResponseDraft {
  triplet_id: string;
  batch_id: string;
  choice: Choice;
  response_time_ms: number;
  toggle_count: number | null;
  submitted_at: number;
}

export interface ResponseAck {
  accepted: boolean;
  duplicate: boolean;
}
