import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import {
  CounterfactualScheduler,
  EMPTY_POOL_BANNER,
  initSession,
  loadPatient,
  medsToIndices,
  refreshCounterfactual,
  toggleMed,
} from "../src/session.js";
import {
  CounterfactualResponse,
  PatientRecordDoc,
  PatientState,
  SessionState,
  VocabResponse,
} from "../src/types.js";
import { MockServer, failingFetch, fixture } from "./mock.js";

const vocab = fixture("vocab").body as VocabResponse;
const patientDoc = fixture("patient").body as PatientRecordDoc;
const cfRecorded = fixture("cf_recorded").body as CounterfactualResponse;

function setMeds(session: SessionState, indices: number[]): void {
  session.meds = session.meds.map((_, i) => indices.includes(i));
}

describe("session state", () => {
  it("sizes the medication bitset from the vocabulary", () => {
    const session = initSession(vocab);
    expect(session.meds.length).toBe(vocab.medications.length);
    expect(session.meds.every((on) => on === false)).toBe(true);
  });

  it("loads the recorded medications into the bitset", () => {
    const session = initSession(vocab);
    loadPatient(session, patientDoc);
    expect(medsToIndices(session.meds)).toEqual([...patientDoc.medications].sort((a, b) => a - b));
  });

  it("toggle then un-toggle is an identity", () => {
    const session = initSession(vocab);
    loadPatient(session, patientDoc);
    const before = [...session.meds];
    toggleMed(session, 2);
    toggleMed(session, 2);
    expect(session.meds).toEqual(before);
  });

  it("rejects out-of-range toggles", () => {
    const session = initSession(vocab);
    expect(() => toggleMed(session, vocab.medications.length)).toThrow(RangeError);
  });
});

describe("scheduler", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("collapses rapid toggles into a single request", async () => {
    const mock = new MockServer();
    const session = initSession(vocab);
    loadPatient(session, patientDoc);
    session.overrides = { k: 3 };
    const scheduler = new CounterfactualScheduler(new ApiClient(mock.fetch), 250);

    // three quick edits ending on the recorded set
    toggleMed(session, patientDoc.medications[0]);
    refreshCounterfactual(scheduler, session);
    vi.advanceTimersByTime(100);
    toggleMed(session, patientDoc.medications[0]);
    refreshCounterfactual(scheduler, session);
    vi.advanceTimersByTime(100);
    refreshCounterfactual(scheduler, session);

    await vi.advanceTimersByTimeAsync(250);
    expect(mock.countCalls("/api/counterfactual")).toBe(1);
    expect(session.lastCounterfactual).toEqual(cfRecorded);
    expect(session.banner).toBeNull();
  });

  it("maps an empty retrieval pool onto the banner and clears the ELOS", async () => {
    const mock = new MockServer();
    const emptyReq = fixture("cf_empty").request as {
      state: PatientState;
      medications: number[];
    };
    const session = initSession(vocab);
    session.patient = emptyReq.state;
    setMeds(session, emptyReq.medications);
    session.overrides = { k: 3 };
    session.lastCounterfactual = cfRecorded; // would be stale
    const scheduler = new CounterfactualScheduler(new ApiClient(mock.fetch), 250);

    refreshCounterfactual(scheduler, session);
    await vi.advanceTimersByTimeAsync(250);

    expect(session.banner).toBe(EMPTY_POOL_BANNER);
    expect(session.lastCounterfactual).toBeNull();
  });

  it("keeps state and shows a banner on other failures", async () => {
    const session = initSession(vocab);
    loadPatient(session, patientDoc);
    session.lastCounterfactual = cfRecorded;
    const scheduler = new CounterfactualScheduler(
      new ApiClient(failingFetch(500, "index exploded")),
      250,
    );

    refreshCounterfactual(scheduler, session);
    await vi.advanceTimersByTimeAsync(250);

    expect(session.banner).toContain("500");
    expect(session.banner).toContain("index exploded");
    expect(session.lastCounterfactual).toEqual(cfRecorded);
  });
});
