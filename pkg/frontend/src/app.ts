// Application wiring: one conversation, one in-flight query at a time.

import { ApiClient, ApiError } from "./api.js";
import { ConversationStore } from "./state.js";
import {
  renderAttributionChart,
  renderProvenance,
  renderRefinement,
  renderTurn,
} from "./render.js";

export interface AppElements {
  form: HTMLFormElement;
  input: HTMLInputElement;
  submit: HTMLButtonElement;
  conversation: HTMLElement;
  sidebar: HTMLElement;
  banner: HTMLElement;
}

export class App {
  readonly store: ConversationStore;
  private readonly client: ApiClient;
  private readonly elements: AppElements;
  private pending = false;
  private lastFailedQuery: string | null = null;

  constructor(client: ApiClient, elements: AppElements, store = new ConversationStore()) {
    this.client = client;
    this.elements = elements;
    this.store = store;
    elements.form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit(elements.input.value);
    });
    elements.input.addEventListener("input", () => this.syncControls());
    this.syncControls();
  }

  get isPending(): boolean {
    return this.pending;
  }

  async submit(text: string): Promise<void> {
    const query = text.trim();
    if (!query || this.pending) {
      return;
    }
    this.pending = true;
    this.clearBanner();
    this.syncControls();
    try {
      const envelope = await this.client.submitQuery(query);
      const turn = this.store.addTurn(query, envelope);
      const node = renderTurn(turn);
      node.append(renderRefinement(envelope.refined));
      this.elements.conversation.append(node);
      this.renderSidebar();
      this.elements.input.value = "";
      this.lastFailedQuery = null;
    } catch (err) {
      if (err instanceof ApiError && err.kind === "validation") {
        this.showBanner(`Invalid query: ${err.message}`, false);
      } else {
        const message = err instanceof Error ? err.message : String(err);
        this.lastFailedQuery = query;
        this.showBanner(`Request failed: ${message}`, true);
      }
    } finally {
      this.pending = false;
      this.syncControls();
    }
  }

  /** Re-issue the last failed query (error banner's retry button). */
  async retry(): Promise<void> {
    if (this.lastFailedQuery !== null) {
      await this.submit(this.lastFailedQuery);
    }
  }

  private renderSidebar(): void {
    const { sidebar } = this.elements;
    sidebar.replaceChildren();
    const turns = this.store.turns;
    const latest = turns[turns.length - 1];
    if (latest) {
      sidebar.append(renderProvenance(latest.envelope));
    }
    sidebar.append(renderAttributionChart(this.store.cumulativeAttribution()));
  }

  private showBanner(message: string, retryable: boolean): void {
    const { banner } = this.elements;
    banner.replaceChildren();
    banner.classList.add("visible");
    const text = document.createElement("span");
    text.className = "banner-text";
    text.textContent = message;
    banner.append(text);
    if (retryable) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = "banner-retry";
      button.textContent = "Retry";
      button.addEventListener("click", () => void this.retry());
      banner.append(button);
    }
  }

  private clearBanner(): void {
    this.elements.banner.replaceChildren();
    this.elements.banner.classList.remove("visible");
  }

  private syncControls(): void {
    const empty = this.elements.input.value.trim().length === 0;
    this.elements.submit.disabled = empty || this.pending;
  }
}
