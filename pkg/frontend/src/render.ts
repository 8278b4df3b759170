// Pure render-to-string views. Everything shown comes straight from API
// responses; the only client-side arithmetic is differences of returned
// ELOS numbers.

import { medsToIndices } from "./session.js";
import { CounterfactualResponse, SessionState, VocabResponse } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// String(x) round-trips the JSON number literal, so rendered values stay
// byte-equal to what the service sent
function num(x: number | null): string {
  return x === null ? "—" : String(x);
}

function signed(x: number): string {
  const s = x.toFixed(3);
  return x > 0 ? `+${s}` : s;
}

export function renderBanner(text: string): string {
  return `<div class="banner" role="alert">${escapeHtml(text)}</div>`;
}

export function renderNeighborTable(cf: CounterfactualResponse): string {
  const rows = cf.neighbors
    .map(
      (n) =>
        `<tr class="neighbor-row"><td>${n.event_id}</td>` +
        `<td>${num(n.similarity)}</td><td>${num(n.los)}</td></tr>`,
    )
    .join("");
  return (
    `<table class="neighbors"><thead><tr>` +
    `<th>event</th><th>similarity</th><th>los</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

/** ELOS headline, delta against the model recommendation, neighbor table. */
export function renderCounterfactualPanel(session: SessionState): string {
  const parts: string[] = [];
  if (session.banner !== null) {
    parts.push(renderBanner(session.banner));
  }
  const cf = session.lastCounterfactual;
  if (cf !== null) {
    parts.push(`<div class="elos-line">ELOS <span class="elos-value">${num(cf.elos)}</span> days</div>`);
    if (session.modelCounterfactual !== null) {
      const delta = cf.elos - session.modelCounterfactual.elos;
      parts.push(`<div class="elos-delta">vs model recommendation: <span class="delta-value">${signed(delta)}</span></div>`);
    }
    if (cf.reward_vs_recorded !== null) {
      parts.push(`<div class="elos-reward">vs recorded stay: <span class="reward-value">${num(cf.reward_vs_recorded)}</span></div>`);
    }
    parts.push(renderNeighborTable(cf));
  }
  return `<section class="counterfactual-panel">${parts.join("")}</section>`;
}

/** Three-column diff: recorded vs model recommendation vs current edit. */
export function renderCompareView(session: SessionState, vocab: VocabResponse): string {
  if (session.patient === null || session.lastPrediction === null) {
    return `<section class="compare-view compare-empty">load a patient and run a prediction first</section>`;
  }
  const recorded = new Set(session.patient.medications);
  const model = new Set(session.lastPrediction.predicted);
  const edited = new Set(medsToIndices(session.meds));
  const union = [...new Set([...recorded, ...model, ...edited])].sort((a, b) => a - b);

  const mark = (on: boolean) => (on ? `<td class="on">●</td>` : `<td class="off">·</td>`);
  const rows = union
    .map((m) => {
      const diff = model.has(m) !== edited.has(m);
      const cls = diff ? ` class="diff-row"` : "";
      return (
        `<tr${cls}><th scope="row">${escapeHtml(vocab.medications[m] ?? String(m))}</th>` +
        mark(recorded.has(m)) +
        mark(model.has(m)) +
        mark(edited.has(m)) +
        `</tr>`
      );
    })
    .join("");

  const elosCell = (cf: CounterfactualResponse | null) =>
    `<td class="elos-cell">${cf === null ? "—" : num(cf.elos)}</td>`;
  const footer =
    `<tr class="elos-footer"><th scope="row">ELOS</th>` +
    elosCell(session.recordedCounterfactual) +
    elosCell(session.modelCounterfactual) +
    elosCell(session.lastCounterfactual) +
    `</tr>`;

  return (
    `<section class="compare-view"><table>` +
    `<thead><tr><th>drug</th><th>recorded</th><th>model</th><th>edited</th></tr></thead>` +
    `<tbody>${rows}${footer}</tbody>` +
    `</table></section>`
  );
}

export function renderHealthLine(version: string, digest: string): string {
  return `<span class="health">medrec ${escapeHtml(version)} · checkpoint ${escapeHtml(digest.slice(0, 12))}</span>`;
}
