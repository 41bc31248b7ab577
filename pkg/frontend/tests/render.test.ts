import { describe, expect, it } from "vitest";

import { renderDocument, renderShell, renderSpanList } from "../src/render.js";
import { initState } from "../src/state.js";
import type { Suggestion, TaskDocument } from "../src/types.js";

const DOC: TaskDocument = {
  id: "d1",
  text: "Started warfarin 5 mg daily .",
  meta: {},
  tokens: [
    { start: 0, end: 7 },
    { start: 8, end: 16 },
    { start: 17, end: 18 },
    { start: 19, end: 21 },
    { start: 22, end: 27 },
    { start: 28, end: 29 },
  ],
};

const SUGGESTION: Suggestion = {
  doc_id: "d1",
  model_version: "v1",
  uncertainty: 0.1,
  spans: [
    { start: 8, end: 16, label: "Drug", confidence: 0.97 },
    { start: 17, end: 21, label: "Strength", confidence: 0.9 },
    { start: 22, end: 27, label: "Frequency", confidence: 0.8 },
  ],
};

describe("rendering", () => {
  it("renders one highlight with a badge per suggested span", () => {
    const root = document.createElement("div");
    const handles = renderShell(root);
    const state = initState(DOC, SUGGESTION);
    renderDocument(handles.docBox, state, null);
    const highlighted = handles.docBox.querySelectorAll(".hl");
    expect(highlighted.length).toBe(4); // warfarin + "5" + "mg" + daily
    const badges = handles.docBox.querySelectorAll(".badge");
    expect(badges.length).toBe(3);
    expect(badges[0]!.textContent).toBe("Drug 97%");
    // with badges removed, the rendered text reconstructs the document
    badges.forEach((b) => b.remove());
    expect(handles.docBox.textContent).toBe(DOC.text);
  });

  it("hides confidence when the toggle is off", () => {
    const root = document.createElement("div");
    const handles = renderShell(root);
    const state = { ...initState(DOC, SUGGESTION), showConfidence: false };
    renderDocument(handles.docBox, state, null);
    expect(handles.docBox.querySelector(".badge")!.textContent).toBe("Drug");
  });

  it("renders plain tokens for a zero-span suggestion (draw enabled)", () => {
    const root = document.createElement("div");
    const handles = renderShell(root);
    const state = initState(DOC, { ...SUGGESTION, spans: [] });
    renderDocument(handles.docBox, state, null);
    expect(handles.docBox.querySelectorAll(".hl").length).toBe(0);
    expect(handles.docBox.querySelectorAll("[data-token]").length).toBe(DOC.tokens.length);
  });

  it("marks the anchor token during drawing", () => {
    const root = document.createElement("div");
    const handles = renderShell(root);
    const state = initState(DOC, { ...SUGGESTION, spans: [] });
    renderDocument(handles.docBox, state, 2);
    expect(handles.docBox.querySelector(".anchor")!.textContent).toBe("5");
  });

  it("lists chips with delete buttons", () => {
    const root = document.createElement("div");
    const handles = renderShell(root);
    const state = initState(DOC, SUGGESTION);
    renderSpanList(handles.spanList, state);
    const chips = handles.spanList.querySelectorAll(".chip");
    expect(chips.length).toBe(3);
    expect(chips[0]!.textContent).toContain("warfarin [Drug]");
    expect(handles.spanList.querySelectorAll("[data-delete]").length).toBe(3);
  });

  it("renders the seven label buttons with hotkey numbers", () => {
    const root = document.createElement("div");
    renderShell(root);
    const buttons = root.querySelectorAll(".label-btn");
    expect(buttons.length).toBe(7);
    expect(buttons[0]!.textContent).toBe("1 Dosage");
    expect(buttons[6]!.textContent).toBe("7 Strength");
  });
});
