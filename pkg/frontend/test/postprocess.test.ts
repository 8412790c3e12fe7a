import { describe, expect, it } from "vitest";

import { postprocessChunks } from "../src/postprocess.js";

describe("postprocessChunks", () => {
  it("drops structural markers and truncates at <EOL>", () => {
    const out = postprocessChunks(["print", "(", "<STR_LIT>", ")", "<EOL>", "x"]);
    expect(out.text).toBe('print("")');
    expect(out.truncatedAtEol).toBe(true);
    expect(out.placeholders).toHaveLength(1);
    const span = out.placeholders[0];
    expect(span.start).toBe(span.end);
    expect(out.text.slice(0, span.start).endsWith('"')).toBe(true);
  });

  it("ignores <BOF>", () => {
    expect(postprocessChunks(["<BOF>", "a"]).text).toBe("a");
  });

  it("keeps raw images for kept literals", () => {
    const out = postprocessChunks(["<STR_LIT:__main__>"]);
    expect(out.text).toBe('"__main__"');
    expect(out.text.slice(out.placeholders[0].start, out.placeholders[0].end)).toBe(
      "__main__",
    );
  });

  it("substitutes 0 for numeric sentinels, preserving the separator", () => {
    const out = postprocessChunks(["x", " =", " <NUM_LIT>"]);
    expect(out.text).toBe("x = 0");
    const span = out.placeholders[0];
    expect(out.text.slice(span.start, span.end)).toBe("0");
  });

  it("keeps kept-number images", () => {
    const out = postprocessChunks(["n", " =", " <NUM_LIT:42>"]);
    expect(out.text).toBe("n = 42");
    expect(out.placeholders[0].defaultText).toBe("42");
  });

  it("passes ordinary chunks through verbatim", () => {
    const out = postprocessChunks(["total", " =", " count", "(", "data", ")"]);
    expect(out.text).toBe("total = count(data)");
    expect(out.placeholders).toHaveLength(0);
    expect(out.truncatedAtEol).toBe(false);
  });
});
