/**
 * The annotation loop controller: fetch next task, let the annotator
 * accept / correct / draw spans, submit the decision, advance.
 *
 * Interactions: click a token to anchor a new span, click a second
 * token to complete it with the selected label; click a highlighted
 * token to relabel its span; chips below the text delete spans.
 * Hotkeys: 1-7 select a label, "a" accepts the whole suggestion, Enter
 * submits. A failed submit preserves the edit buffer; an expired lease
 * shows a re-fetch prompt. Malformed payloads (overlapping spans) are
 * reported and never rendered.
 */
import { ApiClient, ApiRequestError } from "./client.js";
import {
  EditError,
  PayloadError,
  ViewState,
  acceptAll,
  addSpan,
  decisionFor,
  deleteSpan,
  initState,
  labelForHotkey,
  relabelSpan,
  selectLabel,
} from "./state.js";
import {
  RenderHandles,
  renderDocument,
  renderNotice,
  renderPalette,
  renderShell,
  renderSpanList,
} from "./render.js";
import type { LabelName, RetrainRequest } from "./types.js";

export class AnnotationApp {
  private handles: RenderHandles;
  private sessionId: string | null = null;
  private view: ViewState | null = null;
  private anchorToken: number | null = null;
  private submitted = 0;
  done = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    private readonly annotatorId: string,
    private readonly projectId = "default",
    private readonly retrainRequest: RetrainRequest = {},
  ) {
    this.handles = renderShell(root);
    this.wireEvents();
  }

  async start(): Promise<void> {
    const session = await this.client.createSession(this.annotatorId);
    this.sessionId = session.session_id;
    await this.loadNext();
  }

  get state(): ViewState | null {
    return this.view;
  }

  get element(): HTMLElement {
    return this.root;
  }

  get submittedCount(): number {
    return this.submitted;
  }

  async loadNext(): Promise<void> {
    if (this.sessionId === null) throw new Error("start() first");
    const next = await this.client.nextTask(this.sessionId);
    if (next.done) {
      this.view = null;
      this.done = true;
      this.handles.docBox.replaceChildren();
      this.handles.spanList.replaceChildren();
      renderNotice(this.handles.notice, "queue exhausted - all documents decided");
      this.refreshToolbar();
      return;
    }
    try {
      this.view = initState(next.document!, next.suggestion!);
    } catch (err) {
      // never render overlapping highlights; report and offer a refetch
      this.view = null;
      renderNotice(
        this.handles.notice,
        `rejected malformed task payload: ${(err as Error).message}`,
        true,
      );
      this.refreshToolbar();
      return;
    }
    this.anchorToken = null;
    renderNotice(this.handles.notice, "");
    this.refresh();
  }

  async submit(): Promise<void> {
    if (this.view === null || this.sessionId === null) return;
    let decision;
    try {
      decision = decisionFor(this.view);
    } catch (err) {
      renderNotice(this.handles.notice, (err as Error).message, true);
      return;
    }
    try {
      await this.client.submitDecision(this.sessionId, decision);
    } catch (err) {
      if (err instanceof ApiRequestError && err.code === "lease_expired") {
        renderNotice(
          this.handles.notice,
          "lease expired - press next to re-fetch this document",
          true,
        );
      } else {
        // keep the edit buffer so nothing the annotator did is lost
        renderNotice(this.handles.notice, `submit failed: ${(err as Error).message}`, true);
      }
      return;
    }
    this.submitted += 1;
    await this.loadNext();
  }

  async retrain(): Promise<void> {
    try {
      const result = await this.client.retrain(this.projectId, this.retrainRequest);
      renderNotice(
        this.handles.notice,
        result.swapped
          ? `model swapped to ${result.model_version} ` +
              `(dev F1 ${result.dev_f1_before.toFixed(3)} -> ${result.dev_f1_after.toFixed(3)})`
          : `swap refused: ${result.reason}`,
        !result.swapped,
      );
    } catch (err) {
      renderNotice(this.handles.notice, `retrain failed: ${(err as Error).message}`, true);
    }
  }

  async showStats(): Promise<void> {
    const stats = await this.client.stats(this.projectId);
    const box = this.handles.statsBox;
    box.replaceChildren();
    const heading = document.createElement("div");
    heading.textContent =
      `decisions: ${stats.decisions} | model: ${stats.model_version ?? "none"}`;
    heading.dataset.testid = "stats-summary";
    box.appendChild(heading);
    if (stats.pairwise_iaa.length === 0) {
      const note = document.createElement("div");
      note.dataset.testid = "iaa-note";
      note.textContent = stats.iaa_note ?? "";
      box.appendChild(note);
      return;
    }
    for (const pair of stats.pairwise_iaa) {
      const row = document.createElement("div");
      row.className = "iaa-row";
      row.dataset.testid = "iaa-row";
      row.textContent =
        `${pair.annotator_a} vs ${pair.annotator_b}: ` +
        `F1 ${pair.lenient_micro_f1.toFixed(3)} over ${pair.documents} docs`;
      box.appendChild(row);
    }
  }

  // -- interactions ----------------------------------------------------

  private wireEvents(): void {
    this.root.addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      if (target.closest('[data-testid="accept-all"]')) {
        this.onAcceptAll();
      } else if (target.closest('[data-testid="submit"]')) {
        void this.submit();
      } else if (target.closest('[data-testid="retrain"]')) {
        void this.retrain();
      } else if (target.closest('[data-testid="stats"]')) {
        void this.showStats();
      } else if (target.dataset.label) {
        this.onSelectLabel(target.dataset.label as LabelName);
      } else if (target.dataset.delete !== undefined) {
        this.onDelete(Number(target.dataset.delete));
      } else {
        const tok = target.closest<HTMLElement>("[data-token]");
        if (tok) this.onTokenClick(tok);
      }
    });
    this.root.addEventListener("change", (event) => {
      const target = event.target as HTMLInputElement;
      if (target.dataset.testid === "confidence-toggle" && this.view) {
        this.view = { ...this.view, showConfidence: target.checked };
        this.refresh();
      }
    });
    this.root.addEventListener("keydown", (event) => {
      const key = (event as KeyboardEvent).key;
      const label = labelForHotkey(key);
      if (label) {
        this.onSelectLabel(label);
      } else if (key === "a") {
        this.onAcceptAll();
      } else if (key === "Enter") {
        void this.submit();
      }
    });
  }

  private onSelectLabel(label: LabelName): void {
    if (this.view === null) return;
    this.view = selectLabel(this.view, label);
    this.refresh();
  }

  private onAcceptAll(): void {
    if (this.view === null) return;
    this.view = acceptAll(this.view);
    this.anchorToken = null;
    this.refresh();
  }

  private onDelete(index: number): void {
    if (this.view === null) return;
    try {
      this.view = deleteSpan(this.view, index);
      this.refresh();
    } catch (err) {
      renderNotice(this.handles.notice, (err as Error).message, true);
    }
  }

  private onTokenClick(el: HTMLElement): void {
    if (this.view === null) return;
    const index = Number(el.dataset.token);
    const spanIndex = el.dataset.span;
    if (spanIndex !== undefined) {
      // clicking a highlighted token relabels its span
      this.view = relabelSpan(this.view, Number(spanIndex), this.view.selectedLabel);
      this.anchorToken = null;
      this.refresh();
      return;
    }
    if (this.anchorToken === null) {
      this.anchorToken = index;
      this.refresh();
      return;
    }
    const tokens = this.view.doc.tokens;
    const a = tokens[Math.min(this.anchorToken, index)]!;
    const b = tokens[Math.max(this.anchorToken, index)]!;
    try {
      this.view = addSpan(this.view, a.start, b.end, this.view.selectedLabel);
      renderNotice(this.handles.notice, "");
    } catch (err) {
      if (err instanceof EditError || err instanceof PayloadError) {
        renderNotice(this.handles.notice, err.message, true);
      } else {
        throw err;
      }
    }
    this.anchorToken = null;
    this.refresh();
  }

  // -- rendering --------------------------------------------------------

  private refreshToolbar(): void {
    const progress = this.root.querySelector('[data-testid="progress"]') as HTMLElement;
    progress.textContent = `${this.submitted} submitted`;
    const version = this.root.querySelector('[data-testid="model-version"]') as HTMLElement;
    version.textContent = this.view ? `model ${this.view.suggestion.model_version}` : "";
  }

  private refresh(): void {
    if (this.view === null) return;
    renderDocument(this.handles.docBox, this.view, this.anchorToken);
    renderSpanList(this.handles.spanList, this.view);
    renderPalette(this.root, this.view.selectedLabel);
    this.refreshToolbar();
  }
}

/** Browser entry point: mount on #app using same-origin API. */
export function mount(root: HTMLElement | null = document.getElementById("app")): AnnotationApp {
  if (!root) throw new Error("no #app element");
  const params = new URLSearchParams(window.location.search);
  const client = new ApiClient(window.location.origin, {
    token: params.get("token") ?? undefined,
  });
  const app = new AnnotationApp(root, client, params.get("annotator") ?? "annotator");
  void app.start();
  return app;
}
