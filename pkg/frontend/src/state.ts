// View state and the intervention flow. The server is the single source of
// truth: every number the UI displays comes from the last acknowledged
// response; slider moves only issue requests, never local re-computation.

import { ConsoleApi } from "./api.js";
import { ApiError, InterveneResponse, PredictResponse } from "./types.js";

// Exact linear bijection between slider positions [0, 100] and scores [-1, 1].
export function scoreToPosition(score: number): number {
  return 50 * (score + 1);
}

export function positionToScore(position: number): number {
  return position / 50 - 1;
}

export interface EditEntry {
  concept_id: string;
  old: number;
  next: number;
}

export type ReportPane =
  | { status: "empty" }
  | { status: "ready"; text: string }
  | { status: "unavailable" };

export class ViewState {
  currentCase: string | null = null;
  prediction: PredictResponse | null = null;
  sliders = new Map<string, number>();
  editHistory: EditEntry[] = [];
  report: ReportPane = { status: "empty" };
  sessionExpired = false;
  error: string | null = null;
  disabled = new Map<string, string>(); // concept_id -> explanation

  applyPrediction(response: PredictResponse, caseId?: string): void {
    this.prediction = response;
    if (caseId !== undefined) this.currentCase = caseId;
    this.sessionExpired = false;
    this.error = null;
    this.sliders = new Map(
      response.top_k.map((rc) => [rc.concept_id, scoreToPosition(rc.score)]),
    );
  }

  applyIntervention(response: InterveneResponse): void {
    this.editHistory.push({
      concept_id: response.edited.concept_id,
      old: response.edited.old,
      next: response.edited.new,
    });
    this.applyPrediction(response);
  }

  isEditable(conceptId: string): boolean {
    return (
      !this.sessionExpired &&
      this.prediction !== null &&
      this.prediction.masked_in.includes(conceptId) &&
      !this.disabled.has(conceptId)
    );
  }
}

// Trailing debounce with single-flight serialization: while one request is on
// the wire further slider moves collapse into at most one queued send.
export class DebouncedSender {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private queued: (() => Promise<void>) | null = null;
  inFlightCount = 0;
  maxObservedInFlight = 0;

  constructor(private delayMs = 250) {}

  schedule(send: () => Promise<void>): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.dispatch(send);
    }, this.delayMs);
  }

  private async dispatch(send: () => Promise<void>): Promise<void> {
    if (this.inFlight) {
      this.queued = send;
      return;
    }
    this.inFlight = true;
    this.inFlightCount += 1;
    this.maxObservedInFlight = Math.max(this.maxObservedInFlight, this.inFlightCount);
    try {
      await send();
    } finally {
      this.inFlightCount -= 1;
      this.inFlight = false;
      const next = this.queued;
      this.queued = null;
      if (next) void this.dispatch(next);
    }
  }
}

export class InterventionController {
  readonly sender: DebouncedSender;

  constructor(
    private api: ConsoleApi,
    readonly state: ViewState,
    private onChange: () => void,
    debounceMs = 250,
  ) {
    this.sender = new DebouncedSender(debounceMs);
  }

  async predict(patientId: string): Promise<void> {
    try {
      const response = await this.api.predictPatient(patientId);
      this.state.disabled.clear();
      this.state.editHistory = [];
      this.state.applyPrediction(response, patientId);
    } catch (err) {
      this.state.error = err instanceof Error ? err.message : String(err);
    }
    this.onChange();
  }

  onSliderChange(conceptId: string, position: number): void {
    const state = this.state;
    if (!state.prediction || state.sessionExpired) return;
    if (!state.isEditable(conceptId)) return;
    state.sliders.set(conceptId, position);
    const sessionId = state.prediction.session_id;
    this.sender.schedule(async () => {
      try {
        const response = await this.api.intervene(
          sessionId,
          conceptId,
          positionToScore(position),
        );
        state.applyIntervention(response);
      } catch (err) {
        if (err instanceof ApiError && err.code === "masked_out_concept") {
          state.disabled.set(conceptId, err.message);
        } else if (err instanceof ApiError && err.code === "session_expired") {
          state.sessionExpired = true;
        } else {
          state.error = err instanceof Error ? err.message : String(err);
        }
      }
      this.onChange();
    });
  }

  async fetchReport(context = ""): Promise<void> {
    if (!this.state.prediction) return;
    try {
      const response = await this.api.report(
        this.state.prediction.session_id,
        context,
      );
      this.state.report = { status: "ready", text: response.report };
    } catch {
      this.state.report = { status: "unavailable" };
    }
    this.onChange();
  }
}
