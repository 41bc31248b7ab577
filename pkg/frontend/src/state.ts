/**
 * Pure view-state logic for one annotation task: an edit buffer of
 * non-overlapping spans over the document, snapping to the token
 * boundaries the server shipped, plus the disposition diff against the
 * model suggestion. No DOM in here; everything is unit-testable.
 */
import type {
  DecisionRequest,
  Disposition,
  LabelName,
  Span,
  Suggestion,
  TaskDocument,
  TokenBounds,
} from "./types.js";
import { LABELS } from "./types.js";

export class PayloadError extends Error {}
export class EditError extends Error {}

/** One span in the edit buffer plus its captured surface string. */
export interface BufferSpan extends Span {
  /** Document slice captured when the span entered the buffer; re-checked
   * before submit so offsets can never drift from what was highlighted. */
  surface: string;
}

export interface ViewState {
  doc: TaskDocument;
  suggestion: Suggestion;
  buffer: BufferSpan[];
  selectedLabel: LabelName;
  showConfidence: boolean;
  progress: { done: number };
}

function overlaps(a: { start: number; end: number }, b: { start: number; end: number }): boolean {
  return a.start < b.end && b.start < a.end;
}

function sortSpans<T extends Span>(spans: T[]): T[] {
  return [...spans].sort((a, b) => a.start - b.start || a.end - b.end);
}

function assertNoOverlap(spans: Span[], what: string): void {
  const ordered = sortSpans(spans);
  for (let i = 1; i < ordered.length; i++) {
    const prev = ordered[i - 1]!;
    const cur = ordered[i]!;
    if (overlaps(prev, cur)) {
      throw new PayloadError(
        `${what} contains overlapping spans (${prev.start},${prev.end}) / (${cur.start},${cur.end})`,
      );
    }
  }
}

function toBufferSpan(doc: TaskDocument, span: Span): BufferSpan {
  if (span.start < 0 || span.end > doc.text.length || span.start >= span.end) {
    throw new PayloadError(`span (${span.start},${span.end}) out of bounds`);
  }
  return { ...span, surface: doc.text.slice(span.start, span.end) };
}

/** Validate a task payload and open it for editing. The buffer starts as
 * a copy of the suggestion; a malformed payload (overlapping or
 * out-of-bounds spans) is rejected so overlaps are never rendered. */
export function initState(doc: TaskDocument, suggestion: Suggestion): ViewState {
  assertNoOverlap(suggestion.spans, "suggestion");
  return {
    doc,
    suggestion,
    buffer: sortSpans(suggestion.spans.map((s) => toBufferSpan(doc, s))),
    selectedLabel: "Drug",
    showConfidence: true,
    progress: { done: 0 },
  };
}

/** Snap a raw highlight to token boundaries (outward). Returns null when
 * the range covers no token, e.g. a selection inside whitespace. */
export function snapToTokens(
  tokens: TokenBounds[],
  start: number,
  end: number,
): { start: number; end: number } | null {
  if (end <= start) return null;
  let first: TokenBounds | null = null;
  let last: TokenBounds | null = null;
  for (const tok of tokens) {
    if (tok.end > start && first === null) first = tok;
    if (tok.start < end) last = tok;
  }
  if (first === null || last === null || first.start >= last.end) return null;
  return { start: first.start, end: last.end };
}

/** Draw a new span: snap, bounds-check, and reject overlaps. */
export function addSpan(
  state: ViewState,
  start: number,
  end: number,
  label: LabelName,
): ViewState {
  const snapped = snapToTokens(state.doc.tokens, start, end);
  if (snapped === null) {
    throw new EditError("selection covers no token");
  }
  for (const existing of state.buffer) {
    if (overlaps(snapped, existing)) {
      throw new EditError(
        `overlaps existing ${existing.label} span (${existing.start},${existing.end})`,
      );
    }
  }
  const span = toBufferSpan(state.doc, { ...snapped, label });
  return { ...state, buffer: sortSpans([...state.buffer, span]) };
}

export function deleteSpan(state: ViewState, index: number): ViewState {
  if (index < 0 || index >= state.buffer.length) throw new EditError("no such span");
  const buffer = state.buffer.filter((_s, i) => i !== index);
  return { ...state, buffer };
}

export function relabelSpan(state: ViewState, index: number, label: LabelName): ViewState {
  const span = state.buffer[index];
  if (span === undefined) throw new EditError("no such span");
  const buffer = [...state.buffer];
  buffer[index] = { ...span, label };
  return { ...state, buffer };
}

/** Reset the buffer to exactly the model suggestion. */
export function acceptAll(state: ViewState): ViewState {
  return {
    ...state,
    buffer: sortSpans(state.suggestion.spans.map((s) => toBufferSpan(state.doc, s))),
  };
}

export function selectLabel(state: ViewState, label: LabelName): ViewState {
  return { ...state, selectedLabel: label };
}

/** Label hotkeys: "1".."7" in report order. */
export function labelForHotkey(key: string): LabelName | null {
  const index = Number.parseInt(key, 10) - 1;
  if (Number.isInteger(index) && index >= 0 && index < LABELS.length) {
    return LABELS[index]!;
  }
  return null;
}

/** Diff the buffer against the suggestion: every suggested span gets a
 * disposition (accepted, corrected when only the label changed, else
 * rejected); buffer spans that were never suggested are added.
 *
 * A disposition row identifies the MODEL span it disposes of, so it
 * always carries the suggested label; for corrected spans the new label
 * is read from the final `spans` at the same boundaries. */
export function dispositionsFor(suggestion: Suggestion, buffer: BufferSpan[]): Disposition[] {
  const out: Disposition[] = [];
  const byBounds = new Map<string, BufferSpan>();
  for (const span of buffer) byBounds.set(`${span.start}:${span.end}`, span);
  const suggestedBounds = new Set<string>();
  for (const sug of suggestion.spans) {
    const key = `${sug.start}:${sug.end}`;
    suggestedBounds.add(key);
    const kept = byBounds.get(key);
    if (kept === undefined) {
      out.push({ start: sug.start, end: sug.end, label: sug.label, disposition: "rejected" });
    } else if (kept.label === sug.label) {
      out.push({ start: sug.start, end: sug.end, label: sug.label, disposition: "accepted" });
    } else {
      out.push({ start: sug.start, end: sug.end, label: sug.label, disposition: "corrected" });
    }
  }
  for (const span of buffer) {
    if (!suggestedBounds.has(`${span.start}:${span.end}`)) {
      out.push({ start: span.start, end: span.end, label: span.label, disposition: "added" });
    }
  }
  return out;
}

/** Build the decision payload, re-asserting that every span's surface
 * still equals the document slice it was drawn over. */
export function decisionFor(state: ViewState): DecisionRequest {
  for (const span of state.buffer) {
    const slice = state.doc.text.slice(span.start, span.end);
    if (slice !== span.surface) {
      throw new EditError(
        `span (${span.start},${span.end}) surface drifted: ${JSON.stringify(slice)}`,
      );
    }
  }
  return {
    doc_id: state.doc.id,
    spans: state.buffer.map(({ start, end, label }) => ({ start, end, label })),
    dispositions: dispositionsFor(state.suggestion, state.buffer),
  };
}
