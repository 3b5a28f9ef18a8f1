/** Session state for one loaded sample: slider values, pending
 * intervention round trips, and derived display rows.
 *
 * The server is authoritative. Every slider change posts the full
 * override map; responses arriving out of order are discarded by
 * sequence number so the view never shows a stale intervention.
 */

import type { ApiClient } from "./api.js";
import type {
  ConceptRow,
  Explanation,
  InterventionResult,
  ModelMeta,
} from "./types.js";

export interface ConceptView {
  name: string;
  kind: "known" | "unknown";
  /** server baseline on the display scale */
  baseline: number;
  /** current slider value, display scale */
  value: number;
  overridden: boolean;
  /** ground truth if the dataset carries it */
  truth: number | null;
  /** baseline prediction disagrees with truth (known concepts only) */
  flagged: boolean;
  contribution: number;
  decisionWeight: number;
}

export interface SessionView {
  sampleId: string;
  classNames: string[];
  trueLabel: number | null;
  concepts: ConceptView[];
  originalProbs: number[];
  currentProbs: number[];
  originalPredicted: number;
  currentPredicted: number;
  /** currentProbs - originalProbs per class */
  probDeltas: number[];
  contributions: Record<string, number>;
  dirty: boolean;
}

function conceptViews(
  explanation: Explanation,
  conceptNames: string[],
): ConceptView[] {
  const truth = explanation.concept_truth;
  // concept_truth is indexed by bank order; explanation rows are sorted
  // by |contribution|, so map truth by name
  return explanation.concepts.map((row: ConceptRow) => {
    const bankIndex = conceptNames.indexOf(row.name);
    const t =
      row.kind === "known" && truth && bankIndex >= 0
        ? truth[bankIndex]
        : null;
    return {
      name: row.name,
      kind: row.kind,
      baseline: row.display_score,
      value: row.display_score,
      overridden: false,
      truth: t,
      flagged: t !== null && Math.round(row.display_score) !== t,
      contribution: row.contribution,
      decisionWeight: row.decision_weight,
    };
  });
}

export class Session {
  private explanation: Explanation | null = null;
  private concepts: ConceptView[] = [];
  private lastResult: InterventionResult | null = null;
  private seq = 0;
  private applied = 0;
  private listeners: Array<(view: SessionView) => void> = [];

  constructor(
    private readonly api: ApiClient,
    readonly meta: ModelMeta,
    public includeUnknown = false,
  ) {}

  onChange(fn: (view: SessionView) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    const view = this.view();
    for (const fn of this.listeners) fn(view);
  }

  async load(sampleId: string): Promise<SessionView> {
    const explanation = await this.api.explain(sampleId);
    this.explanation = explanation;
    this.concepts = conceptViews(explanation, this.meta.concept_names);
    this.lastResult = null;
    this.seq += 1; // invalidate any in-flight intervention
    this.applied = this.seq;
    this.emit();
    return this.view();
  }

  overrides(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const c of this.concepts) {
      if (c.overridden) out[c.name] = c.value;
    }
    return out;
  }

  /** Set one slider and post the full override map. */
  async setConcept(name: string, value: number): Promise<SessionView> {
    const c = this.concepts.find((x) => x.name === name);
    if (!c) throw new Error(`unknown concept ${name}`);
    if (c.kind === "unknown" && !this.includeUnknown) {
      throw new Error(`unknown concepts are read-only unless enabled`);
    }
    c.value = value;
    c.overridden = value !== c.baseline;
    return this.push();
  }

  /** Set every editable concept to zero. */
  async zeroAll(): Promise<SessionView> {
    for (const c of this.concepts) {
      if (c.kind === "known" || this.includeUnknown) {
        c.value = 0;
        c.overridden = c.baseline !== 0;
      }
    }
    return this.push();
  }

  async reset(): Promise<SessionView> {
    for (const c of this.concepts) {
      c.value = c.baseline;
      c.overridden = false;
    }
    return this.push();
  }

  private async push(): Promise<SessionView> {
    if (!this.explanation) throw new Error("no sample loaded");
    const ticket = ++this.seq;
    const result = await this.api.intervene(
      this.explanation.sample_id,
      this.overrides(),
      this.includeUnknown,
    );
    if (ticket < this.applied) {
      return this.view(); // a newer response already landed
    }
    this.applied = ticket;
    this.lastResult = result;
    this.emit();
    return this.view();
  }

  view(): SessionView {
    if (!this.explanation) throw new Error("no sample loaded");
    const ex = this.explanation;
    const current = this.lastResult
      ? this.lastResult.intervened
      : {
          probs: ex.probs,
          predicted_class: ex.predicted_class,
          contributions: ex.concepts.map((r) => ({
            name: r.name,
            contribution: r.contribution,
          })),
        };
    const contributions: Record<string, number> = {};
    for (const c of current.contributions) {
      contributions[c.name] = c.contribution;
    }
    return {
      sampleId: ex.sample_id,
      classNames: ex.class_names,
      trueLabel: ex.true_label,
      concepts: this.concepts.map((c) => ({ ...c })),
      originalProbs: [...ex.probs],
      currentProbs: [...current.probs],
      originalPredicted: ex.predicted_class,
      currentPredicted: current.predicted_class,
      probDeltas: current.probs.map((p, i) => p - ex.probs[i]),
      contributions,
      dirty: this.concepts.some((c) => c.overridden),
    };
  }
}
