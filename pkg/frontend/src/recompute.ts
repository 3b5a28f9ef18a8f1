/** Client-side decision layer: logits and probabilities from a score
 * vector plus an exported decision layer. Useful for instant slider
 * feedback between server round trips; the server response stays
 * authoritative. */

import type { DecisionLayerExport } from "./types.js";

export function decisionLogits(
  scores: number[],
  layer: DecisionLayerExport,
): number[] {
  const rows = layer.decision_weights.length;
  if (scores.length !== rows) {
    throw new Error(
      `score vector has ${scores.length} entries, decision layer expects ${rows}`,
    );
  }
  const logits = [...layer.decision_bias];
  for (let i = 0; i < rows; i++) {
    const w = layer.decision_weights[i];
    for (let c = 0; c < logits.length; c++) {
      logits[c] += scores[i] * w[c];
    }
  }
  return logits;
}

export function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const z = exps.reduce((a, b) => a + b, 0);
  return exps.map((e) => e / z);
}

export function decisionProbs(
  scores: number[],
  layer: DecisionLayerExport,
): number[] {
  return softmax(decisionLogits(scores, layer));
}
