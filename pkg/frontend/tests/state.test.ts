// Intervention flow: slider mapping, debounce protocol, no-op round trip.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ConsoleApi } from "../src/api.js";
import { renderPrediction } from "../src/render.js";
import {
  DebouncedSender,
  InterventionController,
  ViewState,
  positionToScore,
  scoreToPosition,
} from "../src/state.js";
import { InterveneResponse, PredictResponse } from "../src/types.js";
import { fakeFetch, fixture, requestBody } from "./helpers.js";

describe("slider mapping", () => {
  it("is the exact linear bijection position = 50*(score+1)", () => {
    expect(scoreToPosition(-1)).toBe(0);
    expect(scoreToPosition(0)).toBe(50);
    expect(scoreToPosition(1)).toBe(100);
    expect(positionToScore(0)).toBe(-1);
    expect(positionToScore(50)).toBe(0);
    expect(positionToScore(100)).toBe(1);
    for (let position = 0; position <= 100; position++) {
      expect(scoreToPosition(positionToScore(position))).toBeCloseTo(position, 12);
    }
  });
});

describe("DebouncedSender", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("collapses rapid schedules into one trailing send", async () => {
    const sender = new DebouncedSender(250);
    const sent: number[] = [];
    for (let i = 0; i < 10; i++) {
      sender.schedule(async () => {
        sent.push(i);
      });
      await vi.advanceTimersByTimeAsync(50);
    }
    await vi.advanceTimersByTimeAsync(300);
    expect(sent).toEqual([9]);
  });

  it("keeps at most one request in flight", async () => {
    const sender = new DebouncedSender(10);
    let release: (() => void) | null = null;
    const first = new Promise<void>((resolve) => (release = resolve));
    sender.schedule(() => first);
    await vi.advanceTimersByTimeAsync(20);
    // while the first hangs, schedule two more; they must queue, not fire
    sender.schedule(async () => {});
    await vi.advanceTimersByTimeAsync(20);
    sender.schedule(async () => {});
    await vi.advanceTimersByTimeAsync(20);
    expect(sender.maxObservedInFlight).toBe(1);
    release!();
    await vi.advanceTimersByTimeAsync(20);
    expect(sender.maxObservedInFlight).toBe(1);
  });
});

function controllerWith(fetchFn: ReturnType<typeof fakeFetch>, debounceMs = 0) {
  const api = new ConsoleApi("", fetchFn);
  const state = new ViewState();
  let renders = 0;
  const controller = new InterventionController(
    api,
    state,
    () => {
      renders += 1;
    },
    debounceMs,
  );
  return { controller, state, renderCount: () => renders };
}

describe("InterventionController", () => {
  beforeEach(() => {
    vi.useFakeTimers();
    document.body.innerHTML = '<div id="root"></div>';
  });
  afterEach(() => vi.useRealTimers());

  it("slider no-op round trip restores the original display", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const edit = fixture<InterveneResponse>("intervene_edit");
    const restore = fixture<InterveneResponse>("intervene_restore");
    const top = predicted.top_k[0];
    const fetchFn = fakeFetch(({ url, init }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url.endsWith("/intervene")) {
        const value = requestBody({ url, init }).value as number;
        return Math.abs(value - top.score) < 1e-9
          ? { status: 200, body: restore }
          : { status: 200, body: edit };
      }
      return undefined;
    });
    const { controller, state } = controllerWith(fetchFn);
    await controller.predict("case-1");

    const root = document.getElementById("root")!;
    renderPrediction(root, state);
    const original = root.innerHTML;

    // drag to zero, then back to the original position
    controller.onSliderChange(top.concept_id, scoreToPosition(0));
    await vi.advanceTimersByTimeAsync(10);
    renderPrediction(root, state);
    expect(root.innerHTML).not.toBe(original);

    controller.onSliderChange(top.concept_id, scoreToPosition(top.score));
    await vi.advanceTimersByTimeAsync(10);
    renderPrediction(root, state);
    expect(root.innerHTML).toBe(original);
    expect(state.prediction!.logits).toEqual(predicted.logits);
  });

  it("prediction pane updates only from server responses", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const edit = fixture<InterveneResponse>("intervene_edit");
    const top = predicted.top_k[0];
    const fetchFn = fakeFetch(({ url }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url.endsWith("/intervene")) return { status: 200, body: edit };
      return undefined;
    });
    const { controller, state } = controllerWith(fetchFn, 250);
    await controller.predict("case-1");

    controller.onSliderChange(top.concept_id, 10);
    // before the debounce fires, displayed numbers are still the originals
    expect(state.prediction!.logits).toEqual(predicted.logits);
    await vi.advanceTimersByTimeAsync(260);
    expect(state.prediction!.logits).toEqual(edit.logits);
    expect(state.editHistory).toHaveLength(1);
    expect(state.editHistory[0].concept_id).toBe(edit.edited.concept_id);
  });

  it("debounces a rapid drag into a single request", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const edit = fixture<InterveneResponse>("intervene_edit");
    const top = predicted.top_k[0];
    const fetchFn = fakeFetch(({ url }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url.endsWith("/intervene")) return { status: 200, body: edit };
      return undefined;
    });
    const { controller } = controllerWith(fetchFn, 250);
    await controller.predict("case-1");
    for (let position = 0; position <= 40; position += 10) {
      controller.onSliderChange(top.concept_id, position);
      await vi.advanceTimersByTimeAsync(30);
    }
    await vi.advanceTimersByTimeAsync(300);
    const interventions = fetchFn.calls.filter((c) => c.url.includes("/intervene"));
    expect(interventions).toHaveLength(1);
    expect(requestBody(interventions[0]).value).toBe(positionToScore(40));
  });

  it("masked-out concepts are not editable and never hit the server", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const maskedOut = "definitely_not_masked_in";
    expect(predicted.masked_in).not.toContain(maskedOut);
    const fetchFn = fakeFetch(({ url }) =>
      url === "/predict" ? { status: 200, body: predicted } : undefined,
    );
    const { controller, state } = controllerWith(fetchFn);
    await controller.predict("case-1");
    expect(state.isEditable(maskedOut)).toBe(false);
    controller.onSliderChange(maskedOut, 80);
    await vi.advanceTimersByTimeAsync(50);
    expect(fetchFn.calls.filter((c) => c.url.includes("/intervene"))).toHaveLength(0);
  });

  it("server 409 disables the slider with an explanation", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const top = predicted.top_k[0];
    const fetchFn = fakeFetch(({ url }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url.endsWith("/intervene"))
        return {
          status: 409,
          body: { detail: { error: "masked_out_concept", message: "modality absent" } },
        };
      return undefined;
    });
    const { controller, state } = controllerWith(fetchFn);
    await controller.predict("case-1");
    controller.onSliderChange(top.concept_id, 75);
    await vi.advanceTimersByTimeAsync(10);
    expect(state.disabled.get(top.concept_id)).toBe("modality absent");

    const root = document.getElementById("root")!;
    renderPrediction(root, state);
    const slider = root.querySelector<HTMLInputElement>(
      `.score-slider[data-concept-id="${top.concept_id}"]`,
    )!;
    expect(slider.disabled).toBe(true);
    expect(root.querySelector(".slider-disabled-note")?.textContent).toBe(
      "modality absent",
    );
  });

  it("an expired session prompts the re-predict flow", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const top = predicted.top_k[0];
    const fetchFn = fakeFetch(({ url }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url.endsWith("/intervene"))
        return {
          status: 404,
          body: { detail: { error: "session_expired", message: "session expired" } },
        };
      return undefined;
    });
    const { controller, state } = controllerWith(fetchFn);
    await controller.predict("case-1");
    controller.onSliderChange(top.concept_id, 20);
    await vi.advanceTimersByTimeAsync(10);
    expect(state.sessionExpired).toBe(true);

    const root = document.getElementById("root")!;
    renderPrediction(root, state);
    expect(root.querySelector(".expired-banner")).not.toBeNull();
    // further edits are refused until a fresh prediction arrives
    controller.onSliderChange(top.concept_id, 60);
    await vi.advanceTimersByTimeAsync(10);
    expect(fetchFn.calls.filter((c) => c.url.includes("/intervene"))).toHaveLength(1);
  });

  it("report failure degrades without touching the prediction", async () => {
    const predicted = fixture<PredictResponse>("predict_response");
    const fetchFn = fakeFetch(({ url }) => {
      if (url === "/predict") return { status: 200, body: predicted };
      if (url === "/report")
        return {
          status: 503,
          body: { detail: { error: "provider_unavailable", message: "down" } },
        };
      return undefined;
    });
    const { controller, state } = controllerWith(fetchFn);
    await controller.predict("case-1");
    await controller.fetchReport();
    expect(state.report).toEqual({ status: "unavailable" });
    expect(state.prediction!.logits).toEqual(predicted.logits);
  });
});
