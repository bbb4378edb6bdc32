// Thin fetch client for the prediction service. The fetch function is
// injectable so contract tests can replay recorded fixtures offline.

import {
  ApiError,
  ApiErrorBody,
  ConceptsResponse,
  InterveneResponse,
  PredictResponse,
  ReportResponse,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  const body = await response.json();
  if (!response.ok) {
    const err = body as ApiErrorBody;
    throw new ApiError(
      response.status,
      err.detail?.error ?? "unknown_error",
      err.detail?.message ?? response.statusText,
    );
  }
  return body as T;
}

export class ConsoleApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    }).then((r) => parseOrThrow<T>(r));
  }

  predictPatient(patientId: string): Promise<PredictResponse> {
    return this.post("/predict", { patient_id: patientId });
  }

  intervene(
    sessionId: string,
    conceptId: string,
    value: number,
  ): Promise<InterveneResponse> {
    return this.post(`/sessions/${sessionId}/intervene`, {
      concept_id: conceptId,
      value,
    });
  }

  concepts(): Promise<ConceptsResponse> {
    return this.fetchFn(`${this.baseUrl}/concepts`).then((r) =>
      parseOrThrow<ConceptsResponse>(r),
    );
  }

  submitEdit(edit: Record<string, unknown>, token: string): Promise<unknown> {
    return this.fetchFn(`${this.baseUrl}/concepts/edits`, {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        Authorization: `Bearer ${token}`,
      },
      body: JSON.stringify(edit),
    }).then((r) => parseOrThrow(r));
  }

  report(sessionId: string, context = ""): Promise<ReportResponse> {
    return this.post("/report", { session_id: sessionId, context });
  }
}
