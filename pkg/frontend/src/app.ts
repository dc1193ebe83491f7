/**
 * DOM shell around the rating form state machine.
 *
 * All behavior lives in state.ts and api.ts; this file renders the current
 * state and translates clicks into transitions. One submission is in flight
 * at a time: beginSubmit returns the state unchanged while submitting, so a
 * double click cannot produce a second POST.
 */

import { ApiError, RatingApi } from "./api.js";
import {
  RatingFormState,
  SCORE_ANCHORS,
  beginSubmit,
  canSubmit,
  initialState,
  loadFailed,
  noMoreTasks,
  retrying,
  selectScore,
  setCatastrophic,
  submitFailed,
  submitSucceeded,
  taskLoaded,
} from "./state.js";

export interface AppOptions {
  raterId: string;
  language: string;
  client: RatingApi;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function errorMessage(error: unknown): string {
  if (error instanceof ApiError) {
    return error.message;
  }
  if (error instanceof Error) {
    return `network error: ${error.message}`;
  }
  return String(error);
}

const anchorsHtml = `
  <ul class="anchors" aria-label="score anchors">
    ${SCORE_ANCHORS.map(
      (anchor) =>
        `<li><strong>${anchor.score}</strong> means “${escapeHtml(anchor.meaning)}”</li>`,
    ).join("\n    ")}
  </ul>`;

export class RaterApp {
  state: RatingFormState = initialState;

  constructor(
    private readonly root: HTMLElement,
    private readonly options: AppOptions,
  ) {}

  async start(): Promise<void> {
    this.render();
    await this.loadNext();
  }

  private setState(state: RatingFormState): void {
    this.state = state;
    this.render();
  }

  private async loadNext(): Promise<void> {
    try {
      const task = await this.options.client.fetchNextTask(
        this.options.raterId,
        this.options.language,
      );
      this.setState(task === null ? noMoreTasks(this.state) : taskLoaded(this.state, task));
    } catch (error) {
      this.setState(loadFailed(this.state, errorMessage(error)));
    }
  }

  private async retry(): Promise<void> {
    this.setState(retrying(this.state));
    await this.loadNext();
  }

  private async submit(): Promise<void> {
    const before = this.state;
    const inFlight = beginSubmit(this.state);
    if (inFlight === before) {
      return; // no score yet, or a submission is already in flight
    }
    this.setState(inFlight);
    const task = inFlight.task;
    const score = inFlight.score;
    if (task === null || score === null) {
      return; // unreachable: beginSubmit only advances with both set
    }
    try {
      await this.options.client.submitRating({
        task_id: task.task_id,
        rater_id: this.options.raterId,
        score,
        catastrophic: inFlight.catastrophic,
      });
      this.setState(submitSucceeded(this.state));
      await this.loadNext();
    } catch (error) {
      this.setState(submitFailed(this.state, errorMessage(error)));
    }
  }

  private render(): void {
    this.root.innerHTML = this.html();
    this.bind();
  }

  private html(): string {
    const state = this.state;
    const banner = state.error
      ? `<div class="error-banner" role="alert">${escapeHtml(state.error)}</div>`
      : "";
    switch (state.phase) {
      case "loading":
        return `${banner}<p class="status">Loading the next caption…</p>`;
      case "complete":
        return `
          <div class="complete-screen">
            <h2>All done</h2>
            <p>No more tasks for you in this language. Thank you!</p>
            <p class="status">Submitted this session: ${state.submitted}</p>
          </div>`;
      case "failed":
        return `
          ${banner}
          <button type="button" id="retry">Try again</button>`;
      case "rating":
      case "submitting": {
        const task = state.task;
        if (task === null) {
          return banner;
        }
        const buttons = Array.from({ length: 10 }, (_, i) => i + 1)
          .map((value) => {
            const pressed = state.score === value;
            return `<button type="button" class="score-button${pressed ? " selected" : ""}"
              data-score="${value}" aria-pressed="${pressed}">${value}</button>`;
          })
          .join("\n");
        const submitting = state.phase === "submitting";
        const disabled = submitting || !canSubmit(state);
        return `
          ${banner}
          <section class="task" data-task-id="${escapeHtml(task.task_id)}">
            <h2>Rate this translation (${escapeHtml(task.language)})</h2>
            <p class="english-caption" lang="en">${escapeHtml(task.english_caption)}</p>
            <p class="translated-caption">${escapeHtml(task.translated_caption)}</p>
            <div class="score-scale" role="group" aria-label="adequacy score">
              ${buttons}
            </div>
            ${anchorsHtml}
            <label class="catastrophic-label">
              <input type="checkbox" id="catastrophic" ${state.catastrophic ? "checked" : ""}>
              Flag a catastrophic error (the translation says something entirely different)
            </label>
            <button type="button" id="submit" ${disabled ? "disabled" : ""}>
              ${submitting ? "Submitting…" : "Submit rating"}
            </button>
          </section>`;
      }
    }
  }

  private bind(): void {
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".score-button")) {
      button.addEventListener("click", () => {
        this.setState(selectScore(this.state, Number(button.dataset.score)));
      });
    }
    const checkbox = this.root.querySelector<HTMLInputElement>("#catastrophic");
    checkbox?.addEventListener("change", () => {
      this.setState(setCatastrophic(this.state, checkbox.checked));
    });
    const submit = this.root.querySelector<HTMLButtonElement>("#submit");
    submit?.addEventListener("click", () => {
      void this.submit();
    });
    const retry = this.root.querySelector<HTMLButtonElement>("#retry");
    retry?.addEventListener("click", () => {
      void this.retry();
    });
  }
}
