// Rendering contract against recorded API fixtures.

import { beforeEach, describe, expect, it } from "vitest";

import { renderConceptTable, renderPrediction, renderReport } from "../src/render.js";
import { ViewState } from "../src/state.js";
import { ConceptsResponse, PredictResponse } from "../src/types.js";
import { fixture } from "./helpers.js";

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="root"></div>';
  root = document.getElementById("root")!;
});

describe("prediction pane", () => {
  it("renders top-k rows in exactly the response order", () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const state = new ViewState();
    state.applyPrediction(predicted, "case-1");
    renderPrediction(root, state);

    const rows = [...root.querySelectorAll<HTMLElement>(".concept-row")];
    expect(rows.map((r) => r.dataset.conceptId)).toEqual(
      predicted.top_k.map((rc) => rc.concept_id),
    );
    expect(rows).toHaveLength(predicted.top_k.length);
  });

  it("shows strictly non-increasing attention and 1-based ranks", () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const state = new ViewState();
    state.applyPrediction(predicted);
    renderPrediction(root, state);
    const values = [...root.querySelectorAll(".attention-value")].map((n) =>
      Number(n.textContent),
    );
    const sorted = [...values].sort((a, b) => b - a);
    expect(values).toEqual(sorted);
    const ranks = [...root.querySelectorAll(".concept-rank")].map((n) =>
      Number(n.textContent),
    );
    expect(ranks).toEqual(values.map((_, i) => i + 1));
  });

  it("renders every number from the server response verbatim", () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const state = new ViewState();
    state.applyPrediction(predicted);
    renderPrediction(root, state);
    const probValues = [...root.querySelectorAll(".prob-value")].map(
      (n) => n.textContent,
    );
    expect(probValues).toEqual(predicted.probabilities.map((p) => p.toFixed(4)));
    const heading = root.querySelector(".probabilities h2")!.textContent;
    expect(heading).toContain(predicted.label);
  });

  it("renders an empty state for an empty top-k", () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const state = new ViewState();
    state.applyPrediction({ ...predicted, top_k: [] });
    renderPrediction(root, state);
    expect(root.querySelector(".top-concepts .empty-state")).not.toBeNull();
  });

  it("shows an error banner instead of stale numbers on failure", () => {
    const state = new ViewState();
    state.error = "boom";
    renderPrediction(root, state);
    expect(root.querySelector(".error-banner")?.textContent).toContain("boom");
    expect(root.querySelector(".concept-row")).toBeNull();
  });
});

describe("verification table", () => {
  it("renders the 103-concept bank grouped by modality", () => {
    const concepts = fixture<ConceptsResponse>("concepts_103");
    renderConceptTable(root, concepts);

    expect(concepts.count).toBe(103);
    const groups = [...root.querySelectorAll<HTMLElement>(".modality-group")];
    expect(groups.map((g) => g.dataset.modality)).toEqual(["FA", "ICGA", "US"]);
    const sizes = groups.map((g) => g.querySelectorAll(".concept-entry").length);
    expect(sizes).toEqual([47, 30, 26]);
    expect(sizes.reduce((a, b) => a + b, 0)).toBe(103);
    expect(root.querySelector(".concept-count")?.textContent).toContain("103");
  });

  it("shows provenance and accuracies per concept", () => {
    const concepts = fixture<ConceptsResponse>("concepts_103");
    renderConceptTable(root, concepts);
    const first = root.querySelector(".concept-entry")!;
    const cells = [...first.querySelectorAll("td")].map((c) => c.textContent);
    expect(cells).toContain("report_extracted");
    const sample = concepts.concepts[0];
    expect(cells[0]).toBe(sample.id);
    expect(cells[5]).toBe(sample.test_accuracy!.toFixed(3));
  });

  it("read-only mode shows a banner and disables actions", () => {
    const concepts = fixture<ConceptsResponse>("concepts_103");
    renderConceptTable(root, concepts, { readOnly: true });
    expect(root.querySelector(".readonly-banner")).not.toBeNull();
    const buttons = [...root.querySelectorAll<HTMLButtonElement>(".remove-concept")];
    expect(buttons.length).toBeGreaterThan(0);
    expect(buttons.every((b) => b.disabled)).toBe(true);
  });
});

describe("report pane", () => {
  it("renders the generated report text", () => {
    const state = new ViewState();
    state.report = { status: "ready", text: "Structured report body" };
    renderReport(root, state);
    expect(root.querySelector(".report-text")?.textContent).toBe(
      "Structured report body",
    );
  });

  it("marks the report unavailable without touching the prediction", () => {
    const state = new ViewState();
    state.report = { status: "unavailable" };
    renderReport(root, state);
    expect(root.querySelector(".report-unavailable")).not.toBeNull();
  });
});
