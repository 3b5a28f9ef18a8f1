/** DOM rendering: sample picker, concept sliders, probability bars, and
 * signed contribution bars. All numbers shown come from the service
 * response unchanged. */

import type { SampleSummary } from "./types.js";
import type { ConceptView, Session, SessionView } from "./state.js";

const PROB_DIGITS = 3;

export function formatProb(p: number): string {
  return p.toFixed(PROB_DIGITS);
}

export function renderSamplePicker(
  root: HTMLElement,
  samples: SampleSummary[],
  onPick: (id: string) => void,
): void {
  const select = document.createElement("select");
  select.className = "sample-picker";
  for (const s of samples) {
    const opt = document.createElement("option");
    opt.value = s.id;
    opt.textContent = `${s.id} (${s.label_name})`;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => onPick(select.value));
  root.appendChild(select);
  if (samples.length > 0) onPick(samples[0].id);
}

function sliderRow(
  concept: ConceptView,
  session: Session,
  editable: boolean,
): HTMLElement {
  const row = document.createElement("div");
  row.className = `concept-row ${concept.kind}`;
  row.dataset.concept = concept.name;

  const label = document.createElement("span");
  label.className = "concept-name";
  label.textContent = concept.name;
  if (concept.flagged) {
    label.classList.add("flagged");
    label.title = "model's concept prediction disagrees with ground truth";
    label.textContent += " !";
  }
  row.appendChild(label);

  const slider = document.createElement("input");
  slider.type = "range";
  if (concept.kind === "known") {
    slider.min = "0";
    slider.max = "1";
  } else {
    // unknown scores are raw logits; give them a symmetric range wide
    // enough to hold the current value
    const bound = Math.max(2, Math.abs(concept.value));
    slider.min = String(-bound);
    slider.max = String(bound);
  }
  slider.step = "0.01";
  slider.value = String(concept.value);
  slider.disabled = !editable;
  slider.addEventListener("change", () => {
    void session.setConcept(concept.name, Number(slider.value));
  });
  row.appendChild(slider);

  const value = document.createElement("span");
  value.className = "concept-value";
  value.textContent = formatProb(concept.value);
  if (concept.overridden) value.classList.add("overridden");
  row.appendChild(value);

  if (concept.truth !== null) {
    const truth = document.createElement("span");
    truth.className = "concept-truth";
    truth.textContent = `truth: ${concept.truth}`;
    row.appendChild(truth);
  }
  return row;
}

function probBars(view: SessionView): HTMLElement {
  const box = document.createElement("div");
  box.className = "prob-bars";
  view.classNames.forEach((name, c) => {
    const row = document.createElement("div");
    row.className = "prob-row";
    row.dataset.class = name;
    if (c === view.currentPredicted) row.classList.add("predicted");
    if (view.trueLabel !== null && c === view.trueLabel) {
      row.classList.add("true-label");
    }

    const label = document.createElement("span");
    label.className = "prob-label";
    label.textContent = name;
    row.appendChild(label);

    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.width = `${(view.currentProbs[c] * 100).toFixed(1)}%`;
    row.appendChild(bar);

    const value = document.createElement("span");
    value.className = "prob-value";
    value.textContent = formatProb(view.currentProbs[c]);
    row.appendChild(value);

    const delta = view.probDeltas[c];
    const deltaEl = document.createElement("span");
    deltaEl.className = "prob-delta";
    if (view.dirty && Math.abs(delta) >= 5e-4) {
      deltaEl.textContent = `${delta > 0 ? "+" : ""}${delta.toFixed(3)}`;
      deltaEl.classList.add(delta > 0 ? "up" : "down");
    }
    row.appendChild(deltaEl);
    box.appendChild(row);
  });
  return box;
}

function contributionBars(view: SessionView): HTMLElement {
  const box = document.createElement("div");
  box.className = "contribution-bars";
  const maxAbs = Math.max(
    1e-12,
    ...Object.values(view.contributions).map(Math.abs),
  );
  for (const c of view.concepts) {
    const v = view.contributions[c.name] ?? 0;
    const row = document.createElement("div");
    row.className = "contribution-row";
    row.dataset.concept = c.name;

    const label = document.createElement("span");
    label.textContent = c.name;
    row.appendChild(label);

    const bar = document.createElement("div");
    bar.className = `bar ${v >= 0 ? "positive" : "negative"}`;
    bar.style.width = `${((Math.abs(v) / maxAbs) * 100).toFixed(1)}%`;
    row.appendChild(bar);

    const value = document.createElement("span");
    value.className = "contribution-value";
    value.textContent = v.toFixed(4);
    row.appendChild(value);
    box.appendChild(row);
  }
  return box;
}

export function renderSession(
  root: HTMLElement,
  view: SessionView,
  session: Session,
): void {
  root.textContent = "";

  const header = document.createElement("h2");
  header.textContent = `sample ${view.sampleId}`;
  if (view.trueLabel !== null) {
    header.textContent += ` — true class: ${view.classNames[view.trueLabel]}`;
  }
  root.appendChild(header);

  const controls = document.createElement("div");
  controls.className = "controls";
  const zero = document.createElement("button");
  zero.className = "zero-all";
  zero.textContent = "zero all concepts";
  zero.addEventListener("click", () => void session.zeroAll());
  controls.appendChild(zero);
  const reset = document.createElement("button");
  reset.className = "reset";
  reset.textContent = "reset";
  reset.disabled = !view.dirty;
  reset.addEventListener("click", () => void session.reset());
  controls.appendChild(reset);
  root.appendChild(controls);

  const sliders = document.createElement("div");
  sliders.className = "sliders";
  for (const c of view.concepts) {
    const editable = c.kind === "known" || session.includeUnknown;
    sliders.appendChild(sliderRow(c, session, editable));
  }
  root.appendChild(sliders);

  root.appendChild(probBars(view));
  root.appendChild(contributionBars(view));
}
