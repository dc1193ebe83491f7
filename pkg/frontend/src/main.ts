/**
 * Page bootstrap: read rater id and language from the query string, or show
 * a small start form (languages come from the API) that reloads with them.
 */

import { ApiClient } from "./api.js";
import { RaterApp } from "./app.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export async function bootstrap(root: HTMLElement, client: ApiClient): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const raterId = params.get("rater_id");
  const language = params.get("language");
  if (raterId && language) {
    const app = new RaterApp(root, { raterId, language, client });
    await app.start();
    return;
  }
  let options: string;
  try {
    const info = await client.fetchLanguages();
    const choices = info.available.length > 0 ? info.available : info.targets;
    options = choices
      .map((code) => `<option value="${escapeHtml(code)}">${escapeHtml(code)}</option>`)
      .join("");
  } catch (error) {
    root.innerHTML = `<div class="error-banner" role="alert">${escapeHtml(String(error))}</div>`;
    return;
  }
  root.innerHTML = `
    <form id="start-form">
      <h2>Start rating</h2>
      <label>Your rater id <input type="text" id="rater-id" required></label>
      <label>Language <select id="language">${options}</select></label>
      <button type="submit">Start</button>
    </form>`;
  const form = root.querySelector<HTMLFormElement>("#start-form");
  form?.addEventListener("submit", (event) => {
    event.preventDefault();
    const rater = root.querySelector<HTMLInputElement>("#rater-id")?.value.trim() ?? "";
    const lang = root.querySelector<HTMLSelectElement>("#language")?.value ?? "";
    if (!rater || !lang) {
      return;
    }
    const next = new URLSearchParams({ rater_id: rater, language: lang });
    window.location.search = next.toString();
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void bootstrap(document.getElementById("app") as HTMLElement, new ApiClient(""));
}
