// Contract tests against the recorded-fixture mock server: what the UI
// renders must equal what the service actually said, and superseded
// responses must never reach the screen.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderCompareView, renderCounterfactualPanel } from "../src/render.js";
import {
  CounterfactualScheduler,
  initSession,
  loadPatient,
  refreshCounterfactual,
} from "../src/session.js";
import {
  CounterfactualResponse,
  PatientRecordDoc,
  PredictResponse,
  SessionState,
  VocabResponse,
} from "../src/types.js";
import { MockServer, fixture } from "./mock.js";

const vocab = fixture("vocab").body as VocabResponse;
const patientDoc = fixture("patient").body as PatientRecordDoc;
const cfRecorded = fixture("cf_recorded").body as CounterfactualResponse;
const cfModel = fixture("cf_model").body as CounterfactualResponse;
const cfEdited = fixture("cf_edited").body as CounterfactualResponse;
const editedSet = (fixture("cf_edited").request as { medications: number[] }).medications;

const tick = () => new Promise<void>((resolve) => setTimeout(resolve, 0));

function setMeds(session: SessionState, indices: number[]): void {
  session.meds = session.meds.map((_, i) => indices.includes(i));
}

describe("whole-session contract", () => {
  it("renders exactly the recorded service values", async () => {
    const mock = new MockServer();
    const client = new ApiClient(mock.fetch);

    const session = initSession(await client.vocab());
    loadPatient(session, await client.patient(patientDoc.event_id));
    session.overrides = { k: 3 };

    session.lastPrediction = await client.predict(session.patient!);
    expect(session.lastPrediction).toEqual(fixture("predict").body as PredictResponse);

    session.recordedCounterfactual = await client.counterfactual(
      session.patient!,
      session.patient!.medications,
      session.overrides,
    );
    session.modelCounterfactual = await client.counterfactual(
      session.patient!,
      session.lastPrediction.predicted,
      session.overrides,
    );

    const scheduler = new CounterfactualScheduler(client, 0);
    setMeds(session, editedSet);
    refreshCounterfactual(scheduler, session);
    await tick();
    await tick();

    const panel = renderCounterfactualPanel(session);
    expect(panel.match(/<span class="elos-value">([^<]*)<\/span>/)?.[1]).toBe(
      String(cfEdited.elos),
    );
    expect((panel.match(/class="neighbor-row"/g) ?? []).length).toBe(
      cfEdited.neighbors.length,
    );

    const compare = renderCompareView(session, vocab);
    const cells = [...compare.matchAll(/<td class="elos-cell">([^<]*)<\/td>/g)].map(
      (m) => m[1],
    );
    expect(cells).toEqual([String(cfRecorded.elos), String(cfModel.elos), String(cfEdited.elos)]);
    expect((compare.match(/class="diff-row"/g) ?? []).length).toBe(1);
  });

  it("discards the superseded response when replies arrive out of order", async () => {
    const mock = new MockServer();
    const client = new ApiClient(mock.fetch);
    const session = initSession(vocab);
    loadPatient(session, patientDoc);
    session.overrides = { k: 3 };

    const applied: number[] = [];
    const scheduler = new CounterfactualScheduler(client, 0, (s) => {
      if (s.lastCounterfactual !== null) applied.push(s.lastCounterfactual.elos);
    });

    // first edit: recorded set; its reply is held back by the mock
    mock.hold("cf_recorded");
    setMeds(session, [...patientDoc.medications]);
    refreshCounterfactual(scheduler, session);
    await tick();

    // second edit supersedes the first while it is still in flight
    setMeds(session, editedSet);
    refreshCounterfactual(scheduler, session);
    await tick();

    // the stale reply lands only now, after the newer edit
    mock.release("cf_recorded");
    await tick();
    await tick();
    await tick();

    expect(session.lastCounterfactual).toEqual(cfEdited);
    expect(applied).toEqual([cfEdited.elos]);
    expect(mock.countCalls("/api/counterfactual")).toBe(2);
    expect(scheduler.maxConcurrent).toBe(1);
    expect(session.banner).toBeNull();
  });
});
