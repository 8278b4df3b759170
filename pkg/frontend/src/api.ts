// Thin typed wrapper over fetch. The fetch function is injected so the
// contract tests can swap in a recorded-fixture mock server.

import {
  CounterfactualResponse,
  ErrorBody,
  HealthResponse,
  PatientRecordDoc,
  PatientState,
  PredictResponse,
  RetrievalOverrides,
  VocabResponse,
} from "./types.js";

export interface HttpResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class ApiFailure extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody | null,
  ) {
    super(body?.error ?? `request failed with status ${status}`);
    this.name = "ApiFailure";
  }
}

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike,
    private readonly base: string = "",
  ) {}

  private async request<T>(method: string, path: string, payload?: unknown): Promise<T> {
    const init: Parameters<FetchLike>[1] = { method };
    if (payload !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(payload);
    }
    const resp = await this.fetchFn(this.base + path, init);
    if (resp.status >= 200 && resp.status < 300) {
      return (await resp.json()) as T;
    }
    let body: ErrorBody | null = null;
    try {
      body = (await resp.json()) as ErrorBody;
    } catch {
      body = null;
    }
    throw new ApiFailure(resp.status, body);
  }

  vocab(): Promise<VocabResponse> {
    return this.request("GET", "/api/vocab");
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/api/health");
  }

  patient(eventId: number): Promise<PatientRecordDoc> {
    return this.request("GET", `/api/patients/${eventId}`);
  }

  predict(state: PatientState): Promise<PredictResponse> {
    return this.request("POST", "/api/predict", state);
  }

  counterfactual(
    state: PatientState,
    medications: number[],
    overrides: RetrievalOverrides = {},
  ): Promise<CounterfactualResponse> {
    const payload: Record<string, unknown> = { state, medications };
    if (overrides.k !== undefined) payload.k = overrides.k;
    if (overrides.phi !== undefined) payload.phi = overrides.phi;
    if (overrides.age_window !== undefined) payload.age_window = overrides.age_window;
    return this.request("POST", "/api/counterfactual", payload);
  }
}
