/**
 * DOM rendering for one task view. Re-renders the whole container from
 * the current state; interaction wiring stays in app.ts.
 *
 * The document is rendered token by token so spans can be drawn by
 * clicking a start token and then an end token; highlights carry their
 * label (and confidence, when the toggle is on) as a badge on the first
 * token. Highlights never overlap because the underlying buffer never
 * does.
 */
import type { ViewState } from "./state.js";
import type { LabelName, SuggestedSpan } from "./types.js";
import { LABELS } from "./types.js";

export interface RenderHandles {
  docBox: HTMLElement;
  spanList: HTMLElement;
  notice: HTMLElement;
  statsBox: HTMLElement;
}

export function renderShell(root: HTMLElement): RenderHandles {
  root.innerHTML = `
    <div class="toolbar">
      <span data-testid="progress"></span>
      <span data-testid="model-version"></span>
      <span data-testid="label-palette"></span>
      <button data-testid="accept-all" title="hotkey: a">accept all</button>
      <button data-testid="submit" title="hotkey: Enter">submit</button>
      <button data-testid="retrain">retrain</button>
      <button data-testid="stats">stats</button>
      <label><input type="checkbox" data-testid="confidence-toggle" checked> confidence</label>
    </div>
    <div class="doc" data-testid="doc"></div>
    <div class="span-list" data-testid="span-list"></div>
    <div class="notice" data-testid="notice" role="alert"></div>
    <div class="stats-box" data-testid="stats-box"></div>
  `;
  const palette = root.querySelector('[data-testid="label-palette"]') as HTMLElement;
  palette.innerHTML = LABELS.map(
    (label, i) =>
      `<button class="label-btn" data-label="${label}" title="hotkey: ${i + 1}">${i + 1} ${label}</button>`,
  ).join(" ");
  return {
    docBox: root.querySelector('[data-testid="doc"]') as HTMLElement,
    spanList: root.querySelector('[data-testid="span-list"]') as HTMLElement,
    notice: root.querySelector('[data-testid="notice"]') as HTMLElement,
    statsBox: root.querySelector('[data-testid="stats-box"]') as HTMLElement,
  };
}

function confidenceOf(state: ViewState, start: number, end: number): number | null {
  const hit = state.suggestion.spans.find(
    (s: SuggestedSpan) => s.start === start && s.end === end,
  );
  return hit ? hit.confidence : null;
}

/** Render the document tokens with non-overlapping highlights. */
export function renderDocument(
  box: HTMLElement,
  state: ViewState,
  anchorToken: number | null,
): void {
  box.replaceChildren();
  const text = state.doc.text;
  let cursor = 0;
  state.doc.tokens.forEach((tok, index) => {
    if (tok.start > cursor) {
      box.appendChild(document.createTextNode(text.slice(cursor, tok.start)));
    }
    const el = document.createElement("span");
    el.className = "tok";
    el.dataset.token = String(index);
    el.textContent = text.slice(tok.start, tok.end);
    const spanIndex = state.buffer.findIndex(
      (s) => s.start <= tok.start && tok.end <= s.end,
    );
    if (spanIndex >= 0) {
      const span = state.buffer[spanIndex]!;
      el.classList.add("hl", `label-${span.label}`);
      el.dataset.span = String(spanIndex);
      if (span.start === tok.start) {
        const badge = document.createElement("sup");
        badge.className = "badge";
        const conf = confidenceOf(state, span.start, span.end);
        badge.textContent =
          state.showConfidence && conf !== null
            ? `${span.label} ${(conf * 100).toFixed(0)}%`
            : span.label;
        el.appendChild(badge);
      }
    }
    if (anchorToken === index) {
      el.classList.add("anchor");
    }
    box.appendChild(el);
    cursor = tok.end;
  });
  if (cursor < text.length) {
    box.appendChild(document.createTextNode(text.slice(cursor)));
  }
}

/** Chip list of current spans with delete buttons. */
export function renderSpanList(list: HTMLElement, state: ViewState): void {
  list.replaceChildren();
  state.buffer.forEach((span, index) => {
    const chip = document.createElement("span");
    chip.className = `chip label-${span.label}`;
    chip.dataset.chip = String(index);
    chip.textContent = `${span.surface} [${span.label}] `;
    const del = document.createElement("button");
    del.dataset.delete = String(index);
    del.textContent = "x";
    chip.appendChild(del);
    list.appendChild(chip);
  });
}

export function renderPalette(root: HTMLElement, selected: LabelName): void {
  root.querySelectorAll<HTMLButtonElement>(".label-btn").forEach((btn) => {
    btn.classList.toggle("selected", btn.dataset.label === selected);
  });
}

export function renderNotice(box: HTMLElement, message: string, isError = false): void {
  box.textContent = message;
  box.classList.toggle("error", isError);
}
