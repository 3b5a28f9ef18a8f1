/** Entry point: wire the API client, session, and DOM together. */

import { ApiClient } from "./api.js";
import { Session } from "./state.js";
import { renderSamplePicker, renderSession } from "./ui.js";

const DEFAULT_BASE = "http://127.0.0.1:8100";

export async function boot(root: HTMLElement, baseUrl?: string): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(baseUrl ?? params.get("api") ?? DEFAULT_BASE);

  const meta = await api.meta();
  const session = new Session(api, meta);

  const pickerBox = document.createElement("div");
  pickerBox.className = "picker-box";
  root.appendChild(pickerBox);
  const sessionBox = document.createElement("div");
  sessionBox.className = "session-box";
  root.appendChild(sessionBox);

  session.onChange((view) => renderSession(sessionBox, view, session));

  const samples = await api.samples(100);
  renderSamplePicker(pickerBox, samples, (id) => void session.load(id));
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app") as HTMLElement);
}
