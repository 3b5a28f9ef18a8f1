/** Wire types for the intervention service's JSON API. */

export interface ModelMeta {
  config: {
    d: number;
    d_k: number;
    d_u: number;
    n_k: number;
    n_u: number;
    n_c: number;
    heads: number;
    concept_task: "classification" | "regression";
  };
  concept_names: string[];
  unknown_names: string[];
  class_names: string[];
  n_samples: number;
}

export interface SampleSummary {
  id: string;
  label: number;
  label_name: string;
}

export interface ConceptRow {
  name: string;
  kind: "known" | "unknown";
  raw_score: number;
  display_score: number;
  contribution: number;
  logit_contribution: number;
  decision_weight: number;
}

export interface Explanation {
  sample_id: string;
  predicted_class: number;
  predicted_class_name: string;
  probs: number[];
  class_names: string[];
  concepts: ConceptRow[];
  true_label: number | null;
  concept_truth?: number[];
}

export interface Contribution {
  name: string;
  contribution: number;
}

export interface InterventionSide {
  probs: number[];
  logits: number[];
  predicted_class: number;
  predicted_class_name: string;
  contributions: Contribution[];
  scores?: number[];
}

export interface InterventionResult {
  sample_id: string;
  original: InterventionSide;
  intervened: InterventionSide;
}

export interface DecisionLayerExport {
  decision_weights: number[][]; // (n_k + n_u) rows by n_c columns
  decision_bias: number[];
  concept_names: string[];
  unknown_names: string[];
  class_names: string[];
  score_scale: { decision_input: string; display: string };
  concept_task: string;
}
