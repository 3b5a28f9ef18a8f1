/** Thin typed client over the intervention service. */

import type {
  Explanation,
  InterventionResult,
  ModelMeta,
  SampleSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) =>
      fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  meta(): Promise<ModelMeta> {
    return this.request<ModelMeta>("/model/meta");
  }

  async samples(limit = 50): Promise<SampleSummary[]> {
    const out = await this.request<{ samples: SampleSummary[] }>(
      `/samples?limit=${limit}`,
    );
    return out.samples;
  }

  explain(sampleId: string): Promise<Explanation> {
    return this.request<Explanation>(
      `/explain/${encodeURIComponent(sampleId)}`,
    );
  }

  intervene(
    sampleId: string,
    overrides: Record<string, number>,
    includeUnknown = false,
  ): Promise<InterventionResult> {
    return this.request<InterventionResult>("/intervene", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        sample_id: sampleId,
        overrides,
        include_unknown: includeUnknown,
      }),
    });
  }
}
