import {
  CompletionController,
  CompletionRequestBody,
  CompletionResponseBody,
  Scheduler,
  Transport,
} from "./controller.js";
import { EditorView } from "./editor.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ??
  "http://127.0.0.1:8732";

class FetchTransport implements Transport {
  async complete(
    body: CompletionRequestBody,
    signal: AbortSignal,
  ): Promise<CompletionResponseBody> {
    const response = await fetch(`${SERVICE_URL}/v1/completions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) {
      throw new Error(`completion request failed: ${response.status}`);
    }
    return (await response.json()) as CompletionResponseBody;
  }
}

const browserScheduler: Scheduler = {
  schedule: (fn, ms) => window.setTimeout(fn, ms),
  cancel: (handle) => window.clearTimeout(handle),
};

function start(): void {
  const pane = document.getElementById("editor");
  const status = document.getElementById("status");
  if (!pane || !status) throw new Error("missing #editor / #status elements");
  let view: EditorView | null = null;
  const controller = new CompletionController(
    new FetchTransport(),
    browserScheduler,
    { onChange: () => view?.render() },
  );
  view = new EditorView(controller, pane, status);
  pane.focus();
}

start();
