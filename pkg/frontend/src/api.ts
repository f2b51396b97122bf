/** Typed wrappers over the feedback service's /api endpoints. */

export interface SaliencyPayload {
  values: number[][];
  target_labels: number[];
  smoothing_window: number;
  normalization: string;
  L: number;
  T: number;
}

export interface ExampleSummary {
  id: string;
  split: string;
  predicted_labels: string[];
  scores: number[];
  has_feedback: boolean;
  revision: number;
}

export interface ExampleDetail {
  id: string;
  signal: number[][];
  sample_rate_hz: number;
  L: number;
  T: number;
  label_names: string[];
  labels: number[];
  split: string;
  predicted_labels: string[];
  scores: number[];
  saliency: SaliencyPayload | null;
  feedback_revisions: FeedbackRecord[];
}

export interface FeedbackRecord {
  example_id: string;
  annotator_id: string;
  intervals: [number, number, number][];
  label_decisions: Record<string, string>;
  note: string;
  revision: number;
  submitted_at: number;
}

export interface FeedbackBody {
  annotator_id: string;
  intervals: [number, number, number][];
  label_decisions: Record<string, string>;
  note: string;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

async function unwrap<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

export class ApiClient {
  constructor(private base: string = "") {}

  listExamples(status = "pending", limit = 50): Promise<{
    examples: ExampleSummary[];
    n_pending: number;
    n_completed: number;
  }> {
    return fetch(`${this.base}/api/examples?status=${status}&limit=${limit}`).then(
      (r) => unwrap(r),
    );
  }

  getExample(id: string): Promise<ExampleDetail> {
    return fetch(`${this.base}/api/examples/${id}`).then((r) => unwrap(r));
  }

  submitFeedback(id: string, body: FeedbackBody): Promise<FeedbackRecord> {
    return fetch(`${this.base}/api/examples/${id}/feedback`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => unwrap(r));
  }
}
