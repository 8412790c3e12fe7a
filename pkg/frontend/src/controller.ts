/**
 * The interactive completion loop.
 *
 * Alphanumeric keystrokes never touch the network: they prune the active
 * trie character-wise (a miss clears the ghost). Any non-alphanumeric
 * keystroke queries the server for the code preceding the caret, unless the
 * trie cache already holds that context. Requests are debounced (75 ms) and
 * at most one is in flight; newer requests abort older ones. Network
 * failures clear the ghost and retry silently with exponential backoff.
 *
 * Ghost text is always the greedy traversal of the active trie with the
 * session's alpha and kappa. TAB accepts the ghost (inserting the
 * post-processed text and parking the caret on the first placeholder),
 * cycles placeholders while a placeholder session is active, and falls back
 * to a literal tab character otherwise.
 */

import { TrieCache } from "./cache.js";
import { postprocessChunks, PlaceholderSpan } from "./postprocess.js";
import { SessionStats } from "./stats.js";
import { ClientTrie, DEFAULT_ALPHA, DEFAULT_KAPPA, WireTrie } from "./trie.js";

export interface CompletionRequestBody {
  context: string;
  language: string;
  beam_width: number;
  max_len: number;
  alpha: number;
  kappa: number;
}

export interface CompletionResponseBody {
  schema: string;
  trie: WireTrie;
  latency_ms?: number;
  truncated_context?: boolean;
}

export interface Transport {
  complete(
    body: CompletionRequestBody,
    signal: AbortSignal,
  ): Promise<CompletionResponseBody>;
}

export interface Scheduler {
  schedule(fn: () => void, ms: number): number;
  cancel(handle: number): void;
}

export interface ControllerOptions {
  language?: string;
  alpha?: number;
  kappa?: number;
  beamWidth?: number;
  maxLen?: number;
  debounceMs?: number;
  retryBaseMs?: number;
  maxRetries?: number;
  onChange?: () => void;
}

export interface EditorDocument {
  text: string;
  caret: number;
  selectionEnd: number;
}

const ALPHANUMERIC = /^[A-Za-z0-9]$/;

export class CompletionController {
  readonly doc: EditorDocument = { text: "", caret: 0, selectionEnd: 0 };
  readonly stats = new SessionStats();
  readonly cache = new TrieCache();

  missCount = 0;
  cacheHits = 0;
  lastLatencyMs: number | null = null;

  private activeTrie: ClientTrie | null = null;
  private placeholders: PlaceholderSpan[] = [];
  private placeholderIndex = -1;

  private seq = 0;
  private debounceHandle: number | null = null;
  private inflight: AbortController | null = null;

  private readonly language: string;
  private readonly alpha: number;
  private readonly kappa: number;
  private readonly beamWidth: number;
  private readonly maxLen: number;
  private readonly debounceMs: number;
  private readonly retryBaseMs: number;
  private readonly maxRetries: number;
  private readonly onChange: () => void;

  constructor(
    private transport: Transport,
    private scheduler: Scheduler,
    options: ControllerOptions = {},
  ) {
    this.language = options.language ?? "toy-py";
    this.alpha = options.alpha ?? DEFAULT_ALPHA;
    this.kappa = options.kappa ?? DEFAULT_KAPPA;
    this.beamWidth = options.beamWidth ?? 3;
    this.maxLen = options.maxLen ?? 24;
    this.debounceMs = options.debounceMs ?? 75;
    this.retryBaseMs = options.retryBaseMs ?? 250;
    this.maxRetries = options.maxRetries ?? 3;
    this.onChange = options.onChange ?? (() => {});
  }

  /** Ghost text: the greedy traversal of the active trie, verbatim. */
  ghostChunks(): string[] {
    if (this.activeTrie === null) return [];
    return this.activeTrie.traverseGreedy(this.alpha, this.kappa);
  }

  ghostText(): string {
    return this.ghostChunks().join("");
  }

  hasPlaceholderSession(): boolean {
    return this.placeholderIndex >= 0 && this.placeholders.length > 0;
  }

  /** One printable character typed at the caret. */
  typeChar(ch: string): void {
    if (ch.length !== 1) throw new Error("typeChar takes single characters");
    const opportunity = this.stats.recordKeystroke();
    this.endPlaceholderSession();
    this.insertAtCaret(ch);

    if (ALPHANUMERIC.test(ch)) {
      // Request discipline: alphanumeric keystrokes are served locally.
      if (this.activeTrie !== null) {
        const pruned = this.activeTrie.pruneOnKeystroke(ch);
        if (pruned === null) {
          this.missCount += 1;
          this.activeTrie = null;
        } else {
          this.activeTrie = pruned;
        }
      }
      this.markShownIfVisible(opportunity);
      this.onChange();
      return;
    }

    // Non-alphanumeric: consult the cache, otherwise query the server.
    this.activeTrie = null;
    const context = this.precedingCode();
    const cached = this.cache.lookup(context);
    if (cached !== null && !cached.isEmpty()) {
      this.cacheHits += 1;
      this.activeTrie = cached;
      this.markShownIfVisible(opportunity);
      this.onChange();
      return;
    }
    this.scheduleRequest(context, opportunity);
    this.onChange();
  }

  backspace(): void {
    this.endPlaceholderSession();
    const { doc } = this;
    if (doc.selectionEnd > doc.caret) {
      doc.text = doc.text.slice(0, doc.caret) + doc.text.slice(doc.selectionEnd);
      doc.selectionEnd = doc.caret;
    } else if (doc.caret > 0) {
      doc.text = doc.text.slice(0, doc.caret - 1) + doc.text.slice(doc.caret);
      doc.caret -= 1;
      doc.selectionEnd = doc.caret;
    }
    this.activeTrie = null;
    this.cancelPending();
    this.onChange();
  }

  /** TAB: cycle placeholders, else accept the ghost, else a literal tab. */
  tab(): void {
    if (this.hasPlaceholderSession()) {
      this.placeholderIndex = (this.placeholderIndex + 1) % this.placeholders.length;
      const span = this.placeholders[this.placeholderIndex];
      this.doc.caret = span.start;
      this.doc.selectionEnd = span.end;
      this.onChange();
      return;
    }
    const chunks = this.ghostChunks();
    if (chunks.length > 0) {
      this.acceptSuggestion(chunks);
      return;
    }
    this.typeChar("\t");
  }

  private acceptSuggestion(chunks: string[]): void {
    const processed = postprocessChunks(chunks);
    const insertAt = this.doc.caret;
    this.insertAtCaret(processed.text);
    this.stats.recordAccepted();
    this.activeTrie = null;
    this.cancelPending();
    if (processed.placeholders.length > 0) {
      this.placeholders = processed.placeholders.map((span) => ({
        ...span,
        start: insertAt + span.start,
        end: insertAt + span.end,
      }));
      this.placeholderIndex = 0;
      const first = this.placeholders[0];
      this.doc.caret = first.start;
      this.doc.selectionEnd = first.end;
    }
    this.onChange();
  }

  precedingCode(): string {
    return this.doc.text.slice(0, this.doc.caret);
  }

  private insertAtCaret(text: string): void {
    const { doc } = this;
    doc.text = doc.text.slice(0, doc.caret) + text + doc.text.slice(doc.selectionEnd);
    doc.caret += text.length;
    doc.selectionEnd = doc.caret;
  }

  private endPlaceholderSession(): void {
    this.placeholders = [];
    this.placeholderIndex = -1;
  }

  private markShownIfVisible(opportunity: number): void {
    if (this.ghostText().length > 0) {
      this.stats.recordShown(opportunity);
    }
  }

  private cancelPending(): void {
    if (this.debounceHandle !== null) {
      this.scheduler.cancel(this.debounceHandle);
      this.debounceHandle = null;
    }
    if (this.inflight !== null) {
      this.inflight.abort();
      this.inflight = null;
    }
    this.seq += 1; // orphan any response still in the pipe
  }

  private scheduleRequest(context: string, opportunity: number): void {
    if (this.debounceHandle !== null) {
      this.scheduler.cancel(this.debounceHandle);
    }
    this.debounceHandle = this.scheduler.schedule(() => {
      this.debounceHandle = null;
      this.issueRequest(context, opportunity, 0);
    }, this.debounceMs);
  }

  private issueRequest(context: string, opportunity: number, attempt: number): void {
    if (this.inflight !== null) {
      this.inflight.abort();
    }
    const controller = new AbortController();
    this.inflight = controller;
    this.seq += 1;
    const mySeq = this.seq;
    const body: CompletionRequestBody = {
      context,
      language: this.language,
      beam_width: this.beamWidth,
      max_len: this.maxLen,
      alpha: this.alpha,
      kappa: this.kappa,
    };
    this.transport.complete(body, controller.signal).then(
      (response) => {
        if (mySeq !== this.seq) return; // superseded
        this.inflight = null;
        this.lastLatencyMs = response.latency_ms ?? null;
        const trie = ClientTrie.fromWire(response.trie);
        this.cache.store(context, trie);
        if (this.precedingCode() === context) {
          this.activeTrie = trie;
          this.markShownIfVisible(opportunity);
        }
        this.onChange();
      },
      () => {
        if (mySeq !== this.seq) return;
        this.inflight = null;
        this.activeTrie = null; // failure clears the ghost
        if (attempt < this.maxRetries) {
          const backoff = this.retryBaseMs * 2 ** attempt;
          this.scheduler.schedule(() => {
            if (mySeq === this.seq && this.precedingCode() === context) {
              this.issueRequest(context, opportunity, attempt + 1);
            }
          }, backoff);
        }
        this.onChange();
      },
    );
  }
}
