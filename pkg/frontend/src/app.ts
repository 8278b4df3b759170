// Browser bootstrap: wires DOM events to the session, scheduler, and
// renderers. Everything testable lives in the imported modules; this file
// stays a thin shell.

import { ApiClient, ApiFailure } from "./api.js";
import {
  CounterfactualScheduler,
  initSession,
  loadPatient,
  medsToIndices,
  refreshCounterfactual,
  toggleMed,
} from "./session.js";
import {
  renderBanner,
  renderCompareView,
  renderCounterfactualPanel,
  renderHealthLine,
} from "./render.js";
import { SessionState, VocabResponse } from "./types.js";

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el;
};

async function boot(): Promise<void> {
  const client = new ApiClient((url, init) => fetch(url, init));
  let vocab: VocabResponse;
  try {
    vocab = await client.vocab();
    const health = await client.health();
    $("health").innerHTML = renderHealthLine(health.version, health.checkpoint_digest);
  } catch (err) {
    $("banner-slot").innerHTML = renderBanner(
      `service unavailable: ${err instanceof Error ? err.message : String(err)}`,
    );
    return;
  }

  const session = initSession(vocab);
  const redraw = (s: SessionState): void => {
    $("counterfactual").innerHTML = renderCounterfactualPanel(s);
    $("compare").innerHTML = renderCompareView(s, vocab);
  };
  const scheduler = new CounterfactualScheduler(client, 250, redraw);

  const drawMedGrid = (): void => {
    const grid = $("med-grid");
    grid.innerHTML = vocab.medications
      .map(
        (label, i) =>
          `<label class="med-toggle"><input type="checkbox" data-med="${i}"` +
          `${session.meds[i] ? " checked" : ""}> ${label}</label>`,
      )
      .join("");
    grid.querySelectorAll("input[data-med]").forEach((box) => {
      box.addEventListener("change", () => {
        toggleMed(session, Number((box as HTMLInputElement).dataset.med));
        refreshCounterfactual(scheduler, session);
        redraw(session);
      });
    });
  };

  const readOverrides = (): void => {
    const k = (($("opt-k") as HTMLInputElement).value || "").trim();
    const phi = (($("opt-phi") as HTMLInputElement).value || "").trim();
    const w = (($("opt-window") as HTMLInputElement).value || "").trim();
    session.overrides = {};
    if (k !== "") session.overrides.k = Number(k);
    if (phi !== "") session.overrides.phi = Number(phi);
    if (w !== "") session.overrides.age_window = Number(w);
  };

  ["opt-k", "opt-phi", "opt-window"].forEach((id) => {
    $(id).addEventListener("change", () => {
      readOverrides();
      refreshCounterfactual(scheduler, session);
    });
  });

  $("load-btn").addEventListener("click", async () => {
    const eventId = Number(($("patient-id") as HTMLInputElement).value);
    $("banner-slot").innerHTML = "";
    try {
      const doc = await client.patient(eventId);
      loadPatient(session, doc);
      drawMedGrid();

      session.lastPrediction = await client.predict(session.patient!);
      session.recordedCounterfactual = await client.counterfactual(
        session.patient!, session.patient!.medications, session.overrides);
      session.modelCounterfactual = await client.counterfactual(
        session.patient!, session.lastPrediction.predicted, session.overrides);
      // the edit starts at the recorded set
      void medsToIndices(session.meds);
      refreshCounterfactual(scheduler, session);
      redraw(session);
    } catch (err) {
      const msg =
        err instanceof ApiFailure && err.status === 404
          ? `no patient with event id ${eventId}`
          : `load failed: ${err instanceof Error ? err.message : String(err)}`;
      $("banner-slot").innerHTML = renderBanner(msg);
    }
  });
}

void boot();
