/**
 * Minimal DOM binding: a <pre> pane rendered from the controller's document
 * model (text + caret + selection), ghost text drawn inline after the
 * caret, and a status bar with the session counters.
 *
 * The pane listens for keydown events; printable characters, Enter, Tab and
 * Backspace are routed into the controller. All completion logic lives in
 * controller.ts and is covered headlessly by the test suite.
 */

import { CompletionController } from "./controller.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

export class EditorView {
  constructor(
    private controller: CompletionController,
    private pane: HTMLElement,
    private statusBar: HTMLElement,
  ) {
    pane.tabIndex = 0;
    pane.addEventListener("keydown", (event) => this.onKeyDown(event));
    this.render();
  }

  onKeyDown(event: KeyboardEvent): void {
    const { key } = event;
    if (key === "Tab") {
      event.preventDefault();
      this.controller.tab();
    } else if (key === "Backspace") {
      event.preventDefault();
      this.controller.backspace();
    } else if (key === "Enter") {
      event.preventDefault();
      this.controller.typeChar("\n");
    } else if (key.length === 1 && !event.ctrlKey && !event.metaKey) {
      event.preventDefault();
      this.controller.typeChar(key);
    }
    this.render();
  }

  render(): void {
    const { doc } = this.controller;
    const ghost = this.controller.ghostText();
    const before = escapeHtml(doc.text.slice(0, doc.caret));
    const selected = escapeHtml(doc.text.slice(doc.caret, doc.selectionEnd));
    const after = escapeHtml(doc.text.slice(doc.selectionEnd));
    const caretHtml = selected
      ? `<span class="selection">${selected}</span>`
      : `<span class="caret"></span>`;
    const ghostHtml = ghost ? `<span class="ghost">${escapeHtml(ghost)}</span>` : "";
    this.pane.innerHTML = `${before}${caretHtml}${ghostHtml}${after}\n`;

    const stats = this.controller.stats;
    const latency =
      this.controller.lastLatencyMs === null
        ? "-"
        : `${this.controller.lastLatencyMs.toFixed(1)}ms`;
    this.statusBar.textContent =
      `keystrokes ${stats.keystrokes} | shown ${stats.shownCount} | ` +
      `accepted ${stats.acceptedCount} | SR ${(stats.surfacingRate * 100).toFixed(1)}% | ` +
      `CTR ${(stats.clickThroughRate * 100).toFixed(1)}% | ` +
      `cache hits ${this.controller.cacheHits} | misses ${this.controller.missCount} | ` +
      `latency ${latency}`;
  }
}
