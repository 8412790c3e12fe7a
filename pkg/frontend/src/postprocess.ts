/**
 * Turns traversed display chunks into insertable text plus placeholder
 * spans: structural markers drop, the suggestion truncates at <EOL>,
 * <STR_LIT> becomes an empty string literal, <NUM_LIT> the digit 0, kept
 * literals keep their raw image (as a replaceable span).
 *
 * Chunks arrive with their canonical separators already attached (that is
 * what the trie stores), so any leading space is preserved when a sentinel
 * chunk is substituted.
 */

export interface PlaceholderSpan {
  start: number;
  end: number;
  kind: string;
  defaultText: string;
}

export interface ProcessedSuggestion {
  text: string;
  placeholders: PlaceholderSpan[];
  truncatedAtEol: boolean;
}

const STRUCTURAL = new Set(["<BOF>", "<EOF>", "<INDENT>", "<DEDENT>"]);

export function postprocessChunks(chunks: string[]): ProcessedSuggestion {
  let text = "";
  const placeholders: PlaceholderSpan[] = [];
  let truncated = false;

  for (const chunk of chunks) {
    const sep = chunk.startsWith(" ") ? " " : "";
    const body = sep ? chunk.slice(1) : chunk;
    if (STRUCTURAL.has(body)) continue;
    if (body === "<EOL>") {
      truncated = true;
      break;
    }
    if (body === "<STR_LIT>") {
      text += sep + '""';
      const inside = text.length - 1;
      placeholders.push({ start: inside, end: inside, kind: "str-lit", defaultText: "" });
      continue;
    }
    if (body === "<NUM_LIT>") {
      text += sep;
      placeholders.push({ start: text.length, end: text.length + 1, kind: "num-lit", defaultText: "0" });
      text += "0";
      continue;
    }
    if (body.startsWith("<STR_LIT:") && body.endsWith(">")) {
      const lit = body.slice("<STR_LIT:".length, -1);
      text += sep + '"';
      placeholders.push({
        start: text.length,
        end: text.length + lit.length,
        kind: "kept-str",
        defaultText: lit,
      });
      text += lit + '"';
      continue;
    }
    if (body.startsWith("<NUM_LIT:") && body.endsWith(">")) {
      const lit = body.slice("<NUM_LIT:".length, -1);
      text += sep;
      placeholders.push({
        start: text.length,
        end: text.length + lit.length,
        kind: "kept-num",
        defaultText: lit,
      });
      text += lit;
      continue;
    }
    if (body === "<COMMENT>") {
      text += sep;
      placeholders.push({
        start: text.length,
        end: text.length + body.length,
        kind: "comment",
        defaultText: body,
      });
      text += body;
      continue;
    }
    text += chunk;
  }
  return { text, placeholders, truncatedAtEol: truncated };
}
