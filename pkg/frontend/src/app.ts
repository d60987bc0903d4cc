/**
 * The labeling view. One coder, one round, one post at a time.
 *
 * Every render rebuilds the view from the session state; the DOM holds
 * no data of its own. Labels are write-through: a click or key press
 * POSTs immediately, and only the server's acknowledgment advances the
 * task. Digits 1..n label without touching the mouse.
 */

import {
  AnnotationApi,
  ServerRejection,
  ServerUnreachable,
} from "./api.js";
import {
  applyCodebook,
  applyDisagreements,
  applyKappa,
  applyKappaUnavailable,
  applyNext,
  applyOffline,
  applyRejection,
  applySubmitOk,
  beginSubmit,
  canSubmit,
  formatKappa,
  initialState,
  type SessionState,
} from "./state.js";

export class AnnotationApp {
  state: SessionState;

  private readonly root: HTMLElement;
  private readonly api: AnnotationApi;
  private readonly keyHandler: (event: KeyboardEvent) => void;
  private inflight: Promise<void> = Promise.resolve();

  constructor(root: HTMLElement, api: AnnotationApi, round: string, coder: string) {
    this.root = root;
    this.api = api;
    this.state = initialState(round, coder);
    this.keyHandler = (event) => this.onKey(event);
    root.ownerDocument.addEventListener("keydown", this.keyHandler);
  }

  /** Load the codebook and the first task, then keep rendering. */
  async start(): Promise<void> {
    try {
      const codebook = await this.api.codebook(this.state.round);
      this.state = applyCodebook(this.state, codebook);
      await this.loadNext();
      await this.refreshKappa();
    } catch (err) {
      this.absorb(err);
    }
    this.render();
  }

  dispose(): void {
    this.root.ownerDocument.removeEventListener("keydown", this.keyHandler);
  }

  /** Resolves once every submission started so far has settled. */
  settled(): Promise<void> {
    return this.inflight;
  }

  /** Submit a label for the current task. No-op while blocked. */
  choose(category: string): Promise<void> {
    if (!canSubmit(this.state)) {
      return this.inflight;
    }
    const task = this.state.task!;
    this.state = beginSubmit(this.state);
    this.render();
    this.inflight = this.inflight.then(async () => {
      try {
        await this.api.submitLabel(
          this.state.round,
          this.state.coder,
          task.postId,
          category,
        );
        this.state = applySubmitOk(this.state);
        await this.loadNext();
        await this.refreshKappa();
      } catch (err) {
        this.absorb(err);
      }
      this.render();
    });
    return this.inflight;
  }

  /** Re-ask the server for the next task; clears the offline state on success. */
  async retry(): Promise<void> {
    this.state = { ...this.state, submitting: false };
    try {
      await this.loadNext();
      await this.refreshKappa();
    } catch (err) {
      this.absorb(err);
    }
    this.render();
  }

  async refreshKappa(): Promise<void> {
    try {
      const response = await this.api.kappa(this.state.round);
      this.state = applyKappa(this.state, response);
    } catch (err) {
      // a 409 simply means no overlapping labels yet
      if (err instanceof ServerRejection) {
        this.state = applyKappaUnavailable(this.state, err.detail);
      } else {
        throw err;
      }
    }
  }

  async showDisagreements(): Promise<void> {
    try {
      const rows = await this.api.disagreements(this.state.round);
      this.state = applyDisagreements(this.state, rows);
    } catch (err) {
      this.absorb(err);
    }
    this.render();
  }

  private async loadNext(): Promise<void> {
    const response = await this.api.nextTask(this.state.round, this.state.coder);
    this.state = applyNext(this.state, response);
  }

  private absorb(err: unknown): void {
    if (err instanceof ServerUnreachable) {
      this.state = applyOffline(this.state);
    } else if (err instanceof ServerRejection) {
      this.state = applyRejection(this.state, err.detail);
    } else {
      throw err;
    }
  }

  private onKey(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
      return;
    }
    const choice = this.state.choices.find((c) => c.key === event.key);
    if (choice) {
      event.preventDefault();
      void this.choose(choice.category);
    }
  }

  // ---- rendering ----------------------------------------------------

  render(): void {
    const doc = this.root.ownerDocument;
    this.root.textContent = "";

    const header = doc.createElement("header");
    const title = doc.createElement("h1");
    title.textContent = `round ${this.state.round}`;
    const who = doc.createElement("span");
    who.dataset.role = "coder";
    who.textContent = this.state.coder;
    const progress = doc.createElement("span");
    progress.dataset.role = "progress";
    progress.textContent = `${this.state.progress.done} / ${this.state.progress.total} labeled`;
    header.append(title, who, progress);
    this.root.append(header);

    if (this.state.offline) {
      const banner = doc.createElement("div");
      banner.dataset.role = "offline";
      banner.className = "banner";
      banner.textContent = "server unreachable; labeling is paused. ";
      const retry = doc.createElement("button");
      retry.dataset.role = "retry";
      retry.textContent = "retry";
      retry.addEventListener("click", () => void this.retry());
      banner.append(retry);
      this.root.append(banner);
    }

    if (this.state.error !== null) {
      const banner = doc.createElement("div");
      banner.dataset.role = "error";
      banner.className = "banner";
      banner.textContent = this.state.error;
      this.root.append(banner);
    }

    this.root.append(this.renderTaskCard(doc));
    this.root.append(this.renderKappa(doc));
    if (this.state.disagreements !== null) {
      this.root.append(this.renderDisagreements(doc));
    }
  }

  private renderTaskCard(doc: Document): HTMLElement {
    const card = doc.createElement("section");
    card.className = "task";
    if (this.state.done) {
      const note = doc.createElement("p");
      note.dataset.role = "done";
      note.textContent = "round complete: every post is labeled.";
      card.append(note);
      return card;
    }
    if (this.state.task === null) {
      return card;
    }

    // the post text is shown verbatim; textContent cannot inject markup
    const text = doc.createElement("blockquote");
    text.dataset.role = "post-text";
    text.textContent = this.state.task.text;
    card.append(text);

    const buttons = doc.createElement("div");
    buttons.className = "choices";
    for (const choice of this.state.choices) {
      const button = doc.createElement("button");
      button.dataset.category = choice.category;
      button.textContent = `${choice.key} · ${choice.title}`;
      button.title = choice.rules.join("\n");
      button.disabled = !canSubmit(this.state);
      button.addEventListener("click", () => void this.choose(choice.category));
      buttons.append(button);
    }
    card.append(buttons);
    return card;
  }

  private renderKappa(doc: Document): HTMLElement {
    const panel = doc.createElement("section");
    panel.className = "kappa";
    const value = doc.createElement("span");
    value.dataset.role = "kappa";
    const view = this.state.kappa;
    if (view === null) {
      value.textContent = "agreement not loaded";
    } else if (view.kind === "value") {
      const flag = view.degenerate ? ", degenerate marginals" : "";
      value.textContent = `κ = ${formatKappa(view.kappa)} (n=${view.nItems}${flag})`;
    } else {
      value.textContent = view.reason;
    }
    panel.append(value);

    const show = doc.createElement("button");
    show.dataset.role = "show-disagreements";
    show.textContent = "review disagreements";
    show.addEventListener("click", () => void this.showDisagreements());
    panel.append(show);
    return panel;
  }

  private renderDisagreements(doc: Document): HTMLElement {
    const section = doc.createElement("section");
    section.dataset.role = "disagreements";
    const heading = doc.createElement("h2");
    const rows = this.state.disagreements ?? [];
    heading.textContent = `disagreements (${rows.length})`;
    section.append(heading);

    for (const row of rows) {
      const item = doc.createElement("article");
      item.dataset.postId = row.post_id;

      const text = doc.createElement("blockquote");
      text.textContent = row.text;
      item.append(text);

      for (const [coder, label] of Object.entries(row.labels)) {
        const cell = doc.createElement("span");
        cell.dataset.coder = coder;
        cell.textContent = `${coder}: ${label}`;
        item.append(cell);
      }

      // disagreements harmonize conservatively unless resolved
      const note = doc.createElement("span");
      note.dataset.role = "gold-note";
      note.textContent = "gold defaults to non_racist";
      item.append(note);

      section.append(item);
    }
    return section;
  }
}
