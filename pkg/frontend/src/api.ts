// HTTP client for the study service. Everything the browser knows about
// the study arrives through these endpoints; there is no other channel.

import type {
  BatchPayload,
  Enrollment,
  Method,
  Question,
  ResponseAck,
  ResponseDraft,
  StudyMeta,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class StudyClient {
  token: string | null = null;

  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
    // wrap the global so the call is not `this`-bound to the client
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private headers(hasBody: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (hasBody) h['Content-Type'] = 'application/json';
    if (this.token !== null) h['Authorization'] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, {
      ...init,
      headers: this.headers(init.body !== undefined),
    });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  studyMeta(): Promise<StudyMeta> {
    return this.request('/api/study');
  }

  async enroll(method: Method): Promise<Enrollment> {
    const enrollment = await this.request<Enrollment>('/api/enroll', {
      method: 'POST',
      body: JSON.stringify({ method }),
    });
    this.token = enrollment.token;
    return enrollment;
  }

  nextBatch(): Promise<BatchPayload> {
    return this.request('/api/batch/next', { method: 'POST' });
  }

  tripletAssets(tripletId: string): Promise<Question> {
    return this.request(`/api/triplet/${encodeURIComponent(tripletId)}/assets`);
  }

  /**
   * Post one response. A retry must resend the identical draft: the server
   * deduplicates on (participant, triplet, batch) and acknowledges a repeat
   * with {accepted: true, duplicate: true} only when choice and toggle
   * count are unchanged.
   */
  postResponse(draft: ResponseDraft): Promise<ResponseAck> {
    const body = {
      triplet_id: draft.triplet_id,
      batch_id: draft.batch_id,
      choice: draft.choice,
      response_time_ms: draft.response_time_ms,
      toggle_count: draft.toggle_count,
      submitted_at: draft.submitted_at,
    };
    return this.request('/api/response', {
      method: 'POST',
      body: JSON.stringify(body),
    });
  }

  /** Admin CSV export; the token goes in the query string, not a header. */
  async exportCsv(adminToken?: string, method?: Method): Promise<string> {
    const params = new URLSearchParams();
    if (method !== undefined) params.set('method', method);
    if (adminToken !== undefined) params.set('token', adminToken);
    const query = params.size > 0 ? `?${params.toString()}` : '';
    const res = await this.fetchImpl(`${this.baseUrl}/api/export${query}`);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return res.text();
  }

  /** Absolute URL for an asset path served by the study service. */
  assetUrl(path: string): string {
    return path.startsWith('/') ? this.baseUrl + path : `${this.baseUrl}/${path}`;
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === 'string') return body.detail;
  } catch {
    // non-JSON error body; fall through to the status text
  }
  return res.statusText || `status ${res.status}`;
}
