// DOM construction. Everything rendered is read off the ViewState, which in
// turn mirrors the last server response verbatim.

import { ViewState } from "./state.js";
import { ConceptRow, ConceptsResponse, Modality } from "./types.js";

const MODALITY_ORDER: Modality[] = ["FA", "ICGA", "US"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderPrediction(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  if (state.error) {
    root.append(el("div", "error-banner", `Request failed: ${state.error}`));
    return;
  }
  const prediction = state.prediction;
  if (!prediction) {
    root.append(el("div", "empty-state", "Select a case to run a prediction."));
    return;
  }
  if (state.sessionExpired) {
    root.append(
      el("div", "expired-banner", "Session expired - run the prediction again."),
    );
  }

  const probs = el("section", "probabilities");
  probs.append(el("h2", undefined, `Prediction: ${prediction.label}`));
  prediction.labels.forEach((label, i) => {
    const row = el("div", "prob-row");
    row.dataset.label = label;
    const bar = el("span", "prob-bar");
    bar.style.width = `${(prediction.probabilities[i] * 100).toFixed(1)}%`;
    row.append(
      el("span", "prob-label", label),
      bar,
      el("span", "prob-value", prediction.probabilities[i].toFixed(4)),
    );
    probs.append(row);
  });
  root.append(probs);

  const concepts = el("section", "top-concepts");
  concepts.append(el("h2", undefined, `Top ${prediction.top_k.length} concepts`));
  if (prediction.top_k.length === 0) {
    concepts.append(el("div", "empty-state", "No concepts to display."));
    root.append(concepts);
    return;
  }
  const maxAttention = Math.max(
    ...prediction.top_k.map((rc) => Math.abs(rc.attention)),
    1e-12,
  );
  const list = el("ol", "concept-list");
  for (const rc of prediction.top_k) {
    const item = el("li", "concept-row");
    item.dataset.conceptId = rc.concept_id;
    const badge = el("span", `modality-badge modality-${rc.modality}`, rc.modality);
    const bar = el("span", "attention-bar");
    bar.style.width = `${((Math.abs(rc.attention) / maxAttention) * 100).toFixed(1)}%`;
    const slider = el("input", "score-slider") as HTMLInputElement;
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(state.sliders.get(rc.concept_id) ?? 50);
    slider.dataset.conceptId = rc.concept_id;
    const editable = state.isEditable(rc.concept_id);
    slider.disabled = !editable;
    item.append(
      el("span", "concept-rank", String(rc.rank)),
      el("span", "concept-name", rc.concept_id),
      badge,
      bar,
      el("span", "attention-value", rc.attention.toFixed(4)),
      slider,
    );
    const explanation = state.disabled.get(rc.concept_id);
    if (explanation) {
      item.append(el("span", "slider-disabled-note", explanation));
    }
    list.append(item);
  }
  concepts.append(list);
  root.append(concepts);
}

export function renderConceptTable(
  root: HTMLElement,
  response: ConceptsResponse,
  options: { readOnly?: boolean } = {},
): void {
  root.replaceChildren();
  if (options.readOnly) {
    root.append(
      el("div", "readonly-banner", "Server unreachable - verification is read-only."),
    );
  }
  root.append(el("p", "concept-count", `${response.count} concepts`));
  for (const modality of MODALITY_ORDER) {
    const rows = response.concepts.filter((c) => c.modality === modality);
    if (rows.length === 0) continue;
    const section = el("section", "modality-group");
    section.dataset.modality = modality;
    section.append(el("h3", undefined, `${modality} (${rows.length})`));
    const table = el("table", "concept-table");
    const body = el("tbody");
    for (const concept of rows) {
      body.append(conceptEntry(concept, options.readOnly ?? false));
    }
    table.append(body);
    section.append(table);
    root.append(section);
  }
  const conflict = el("div", "edit-conflict");
  conflict.hidden = true;
  root.append(conflict);
}

function conceptEntry(concept: ConceptRow, readOnly: boolean): HTMLTableRowElement {
  const row = document.createElement("tr");
  row.className = "concept-entry";
  row.dataset.conceptId = concept.id;
  row.dataset.status = concept.status;
  const accuracy = (v: number | null) => (v === null ? "-" : v.toFixed(3));
  const removeButton = el("button", "remove-concept", "remove") as HTMLButtonElement;
  removeButton.disabled = readOnly || concept.status === "expert_removed";
  const cells: (string | HTMLElement)[] = [
    concept.id,
    concept.text,
    concept.provenance,
    concept.status,
    accuracy(concept.train_accuracy),
    accuracy(concept.test_accuracy),
    removeButton,
  ];
  for (const value of cells) {
    const cell = document.createElement("td");
    if (typeof value === "string") cell.textContent = value;
    else cell.append(value);
    row.append(cell);
  }
  return row;
}

export function renderReport(root: HTMLElement, state: ViewState): void {
  root.replaceChildren();
  switch (state.report.status) {
    case "empty":
      root.append(el("div", "empty-state", "No report generated yet."));
      return;
    case "unavailable":
      root.append(
        el("div", "report-unavailable",
           "Report provider unavailable; the prediction above is unaffected."),
      );
      return;
    case "ready":
      root.append(el("pre", "report-text", state.report.text));
  }
}

export function showEditConflict(root: HTMLElement, message: string): void {
  const node = root.querySelector<HTMLElement>(".edit-conflict");
  if (node) {
    node.hidden = false;
    node.textContent = message;
  }
}
