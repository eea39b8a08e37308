// HTTP client for the risk service. The UI never computes risk itself:
// every displayed number comes from one of these responses.

export interface InputDescriptor {
  name: string;
  expression: string;
  convert: string;
  encoding: Record<string, number> | null;
  unit: string | null;
  guard_range: [number, number] | null;
  median: number;
  missing_as?: number | null;
}

export interface ModelMetadata {
  name: string;
  version: string;
  architecture: number[];
  horizon_years: number;
  inputs: InputDescriptor[];
}

export interface RiskResponse {
  baseline_risk: number;
  scenario_risk: number | null;
  eta: number;
  imputed_inputs: string[];
  model_version: string;
}

export type Overrides = Record<string, number | string>;

export class ServiceError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class RiskServiceClient {
  private inflight: AbortController | null = null;

  constructor(readonly baseUrl: string) {}

  async loadMetadata(): Promise<ModelMetadata> {
    const response = await fetch(`${this.baseUrl}/model/metadata`);
    if (!response.ok) {
      throw new ServiceError(`metadata request failed (${response.status})`, response.status);
    }
    return (await response.json()) as ModelMetadata;
  }

  // Latest-wins: a new prediction aborts any in-flight one.
  async predict(bundle: unknown, overrides: Overrides): Promise<RiskResponse> {
    if (this.inflight) {
      this.inflight.abort();
    }
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const response = await fetch(`${this.baseUrl}/predict`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ bundle, overrides }),
        signal: controller.signal,
      });
      const body = await response.json();
      if (!response.ok) {
        throw new ServiceError(body.error ?? `predict failed (${response.status})`, response.status);
      }
      return body as RiskResponse;
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
      }
    }
  }
}
