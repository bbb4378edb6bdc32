// API contract types, mirroring the JSON schemas shipped with the service.

export type Label = "hemangioma" | "metastatic_carcinoma" | "melanoma";
export type Modality = "FA" | "ICGA" | "US";

export interface RankedConcept {
  concept_id: string;
  modality: Modality;
  attention: number;
  rank: number;
  score: number;
}

export interface PredictResponse {
  session_id: string;
  label: Label;
  labels: Label[];
  logits: number[];
  probabilities: number[];
  k: number;
  top_k: RankedConcept[];
  masked_in: string[];
}

export interface InterveneResponse extends PredictResponse {
  logit_deltas: number[];
  edited: { concept_id: string; old: number; new: number };
}

export interface ConceptRow {
  id: string;
  modality: Modality;
  text: string;
  provenance: "report_extracted" | "expert_added";
  status: "active" | "expert_removed";
  train_accuracy: number | null;
  test_accuracy: number | null;
}

export interface ConceptsResponse {
  concepts: ConceptRow[];
  count: number;
}

export interface ReportResponse {
  report: string;
  available: true;
  inputs: { label: Label; concepts: string[]; context: string; prompt_version: number };
}

export interface ApiErrorBody {
  detail: { error: string; message: string };
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}
