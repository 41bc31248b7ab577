/** Typed bindings for every /api/v1 payload (see docs/api.md). */

export type LabelName =
  | "Dosage"
  | "Drug"
  | "Duration"
  | "Form"
  | "Frequency"
  | "Route"
  | "Strength";

/** Report order; hotkeys 1-7 map onto this. */
export const LABELS: readonly LabelName[] = [
  "Dosage",
  "Drug",
  "Duration",
  "Form",
  "Frequency",
  "Route",
  "Strength",
];

export type DispositionKind = "accepted" | "corrected" | "added" | "rejected";

export interface Span {
  start: number;
  end: number;
  label: LabelName;
}

export interface SuggestedSpan extends Span {
  confidence: number;
}

export interface Disposition extends Span {
  disposition: DispositionKind;
}

export interface TokenBounds {
  start: number;
  end: number;
}

export interface TaskDocument {
  id: string;
  text: string;
  meta: Record<string, string>;
  tokens: TokenBounds[];
}

export interface Suggestion {
  doc_id: string;
  spans: SuggestedSpan[];
  model_version: string;
  uncertainty: number;
}

export interface SessionResponse {
  session_id: string;
  annotator_id: string;
  project_id: string;
}

export interface NextResponse {
  done: boolean;
  document?: TaskDocument;
  suggestion?: Suggestion;
}

export interface DecisionRequest {
  doc_id: string;
  spans: Span[];
  dispositions: Disposition[];
  annotator_id?: string;
}

export interface DecisionAck {
  decision_id: string;
  stored: boolean;
  replayed: boolean;
}

export interface RetrainRequest {
  epochs?: number;
  min_new_decisions?: number;
  regression_tolerance?: number;
  seed?: number;
}

export interface RetrainResponse {
  swapped: boolean;
  model_version: string;
  candidate_version: string;
  dev_f1_before: number;
  dev_f1_after: number;
  reason: string | null;
  epochs_run: number;
}

export interface PairwiseIaa {
  annotator_a: string;
  annotator_b: string;
  documents: number;
  lenient_micro_f1: number;
  lenient_macro_f1: number;
  per_label_f1: Record<LabelName, number>;
}

export interface StatsResponse {
  project_id: string;
  documents: number;
  decisions: number;
  decisions_since_retrain: number;
  model_version: string | null;
  spans_per_provenance: Record<string, number>;
  labels_per_provenance: Record<string, Record<string, number>>;
  pairwise_iaa: PairwiseIaa[];
  iaa_note: string | null;
}

export interface HealthResponse {
  status: string;
  model_version: string | null;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}
