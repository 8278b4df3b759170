// Session state transitions plus the debounced counterfactual scheduler.
//
// Concurrency contract: at most one counterfactual request is in flight;
// edits made while a request is pending supersede it, and the superseded
// response is discarded by sequence number rather than applied late.

import { ApiClient, ApiFailure } from "./api.js";
import {
  PatientRecordDoc,
  PatientState,
  SessionState,
  VocabResponse,
} from "./types.js";

export const EMPTY_POOL_BANNER = "no comparable patients";

export function initSession(vocab: VocabResponse): SessionState {
  return {
    patient: null,
    meds: new Array<boolean>(vocab.medications.length).fill(false),
    lastPrediction: null,
    recordedCounterfactual: null,
    modelCounterfactual: null,
    lastCounterfactual: null,
    overrides: {},
    banner: null,
  };
}

export function loadPatient(session: SessionState, doc: PatientRecordDoc): SessionState {
  const state: PatientState = {
    diagnoses: doc.diagnoses,
    procedures: doc.procedures,
    labs: doc.labs,
    demographics: doc.demographics,
    medications: doc.medications,
    los: doc.los,
  };
  session.patient = state;
  session.meds = session.meds.map((_, i) => doc.medications.includes(i));
  session.lastPrediction = null;
  session.recordedCounterfactual = null;
  session.modelCounterfactual = null;
  session.lastCounterfactual = null;
  session.banner = null;
  return session;
}

export function toggleMed(session: SessionState, index: number): SessionState {
  if (index < 0 || index >= session.meds.length) {
    throw new RangeError(`medication index ${index} out of range`);
  }
  session.meds[index] = !session.meds[index];
  return session;
}

export function medsToIndices(meds: boolean[]): number[] {
  const out: number[] = [];
  meds.forEach((on, i) => {
    if (on) out.push(i);
  });
  return out;
}

function describeFailure(err: unknown): string {
  if (err instanceof ApiFailure) {
    return `request failed (${err.status}): ${err.body?.error ?? "unknown error"}`;
  }
  return `request failed: ${err instanceof Error ? err.message : String(err)}`;
}

export class CounterfactualScheduler {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private editSeq = 0;
  private appliedSeq = 0;
  private inFlight = false;
  private pendingSession: SessionState | null = null;
  // observability for tests and debugging
  issuedCount = 0;
  maxConcurrent = 0;
  private concurrent = 0;

  constructor(
    private readonly client: ApiClient,
    private readonly debounceMs: number = 250,
    private readonly onChange: (session: SessionState) => void = () => {},
  ) {}

  /** Debounced entry point: rapid successive edits collapse into one call. */
  schedule(session: SessionState): void {
    this.editSeq += 1;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.fire(session);
    }, this.debounceMs);
  }

  private fire(session: SessionState): void {
    if (this.inFlight) {
      this.pendingSession = session;
      return;
    }
    void this.issue(session);
  }

  private async issue(session: SessionState): Promise<void> {
    if (session.patient === null) return;
    const seq = this.editSeq;
    this.inFlight = true;
    this.issuedCount += 1;
    this.concurrent += 1;
    this.maxConcurrent = Math.max(this.maxConcurrent, this.concurrent);
    try {
      const resp = await this.client.counterfactual(
        session.patient,
        medsToIndices(session.meds),
        session.overrides,
      );
      if (seq === this.editSeq && seq > this.appliedSeq) {
        this.appliedSeq = seq;
        session.lastCounterfactual = resp;
        session.banner = null;
        this.onChange(session);
      }
    } catch (err) {
      if (seq === this.editSeq && seq > this.appliedSeq) {
        this.appliedSeq = seq;
        if (err instanceof ApiFailure && err.status === 404) {
          // empty retrieval pool: never show a stale ELOS next to the banner
          session.lastCounterfactual = null;
          session.banner = EMPTY_POOL_BANNER;
        } else {
          session.banner = describeFailure(err);
        }
        this.onChange(session);
      }
    } finally {
      this.concurrent -= 1;
      this.inFlight = false;
      if (this.pendingSession !== null) {
        const next = this.pendingSession;
        this.pendingSession = null;
        void this.issue(next);
      }
    }
  }
}

/** Convenience wrapper: one call per edit, debounce handles the rest. */
export function refreshCounterfactual(
  scheduler: CounterfactualScheduler,
  session: SessionState,
): SessionState {
  scheduler.schedule(session);
  return session;
}
