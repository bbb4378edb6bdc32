// Page wiring: case picker, prediction pane with live sliders, concept
// verification table, report pane.

import { ConsoleApi } from "./api.js";
import { renderConceptTable, renderPrediction, renderReport, showEditConflict } from "./render.js";
import { InterventionController, ViewState } from "./state.js";
import { ApiError } from "./types.js";

function requireElement(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

export function bootstrap(api = new ConsoleApi()): void {
  const predictionPane = requireElement("prediction");
  const verificationPane = requireElement("verification");
  const reportPane = requireElement("report");
  const caseInput = requireElement("case-id") as HTMLInputElement;
  const predictButton = requireElement("run-predict") as HTMLButtonElement;
  const reportButton = requireElement("run-report") as HTMLButtonElement;

  const state = new ViewState();
  const controller = new InterventionController(api, state, () => {
    renderPrediction(predictionPane, state);
    renderReport(reportPane, state);
  });

  predictionPane.addEventListener("input", (event) => {
    const target = event.target as HTMLInputElement;
    if (target.classList.contains("score-slider") && target.dataset.conceptId) {
      controller.onSliderChange(target.dataset.conceptId, Number(target.value));
    }
  });

  predictButton.addEventListener("click", () => {
    const caseId = caseInput.value.trim();
    if (caseId) void controller.predict(caseId);
  });
  reportButton.addEventListener("click", () => void controller.fetchReport());

  const refreshConcepts = async () => {
    try {
      const concepts = await api.concepts();
      renderConceptTable(verificationPane, concepts, { readOnly: false });
    } catch {
      renderConceptTable(verificationPane, { concepts: [], count: 0 }, { readOnly: true });
    }
  };
  verificationPane.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (!target.classList.contains("remove-concept")) return;
    const row = target.closest<HTMLElement>(".concept-entry");
    if (!row?.dataset.conceptId) return;
    const token = window.sessionStorage.getItem("edit-token") ?? "";
    const modality = row.closest<HTMLElement>(".modality-group")?.dataset.modality;
    void api
      .submitEdit(
        {
          kind: "remove",
          concept_id: row.dataset.conceptId,
          modality,
          editor: "console-user",
        },
        token,
      )
      .then(refreshConcepts)
      .catch((err: unknown) => {
        const message = err instanceof ApiError ? err.message : String(err);
        showEditConflict(verificationPane, message);
      });
  });

  renderPrediction(predictionPane, state);
  renderReport(reportPane, state);
  void refreshConcepts();
}

if (typeof document !== "undefined" && document.getElementById("prediction")) {
  bootstrap();
}
