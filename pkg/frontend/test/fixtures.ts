/**
 * Cross-language fixture: a wire trie exactly as the Python service emits
 * it, together with the traversal the server-side greedy walk produces for
 * it (alpha=0.8, kappa=10). The client must reproduce that traversal.
 */

import { WireTrie } from "../src/trie.js";

export const SERVER_TRIE: WireTrie = {
  version: "v1",
  root_position: 8,
  root: {
    subtoken: "",
    score: 1.0,
    children: [
      {
        subtoken: "text",
        score: 0.04000000000000001,
        children: [
          {
            subtoken: " =",
            score: 0.036000000000000004,
            children: [
              {
                subtoken: " <STR_LIT>",
                score: 0.028800000000000006,
                children: [
                  { subtoken: "<EOL>", score: 0.025920000000000006, children: [] },
                ],
              },
            ],
          },
        ],
      },
      {
        subtoken: "total",
        score: 0.95,
        children: [
          {
            subtoken: " =",
            score: 0.855,
            children: [
              {
                subtoken: " count",
                score: 0.684,
                children: [
                  {
                    subtoken: "(",
                    score: 0.6156,
                    children: [
                      {
                        subtoken: "buf",
                        score: 0.12312000000000003,
                        children: [
                          {
                            subtoken: ")",
                            score: 0.11080800000000002,
                            children: [
                              {
                                subtoken: "<EOL>",
                                score: 0.10526760000000002,
                                children: [],
                              },
                            ],
                          },
                        ],
                      },
                      {
                        subtoken: "data",
                        score: 0.43091999999999997,
                        children: [
                          {
                            subtoken: ")",
                            score: 0.387828,
                            children: [
                              {
                                subtoken: "<EOL>",
                                score: 0.3684366,
                                children: [],
                              },
                            ],
                          },
                        ],
                      },
                    ],
                  },
                ],
              },
              {
                subtoken: " sum",
                score: 0.12824999999999998,
                children: [
                  {
                    subtoken: "(",
                    score: 0.11542499999999999,
                    children: [
                      {
                        subtoken: "data",
                        score: 0.08079749999999998,
                        children: [
                          {
                            subtoken: ")",
                            score: 0.07271774999999998,
                            children: [
                              {
                                subtoken: "<EOL>",
                                score: 0.06908186249999998,
                                children: [],
                              },
                            ],
                          },
                        ],
                      },
                    ],
                  },
                ],
              },
            ],
          },
        ],
      },
    ],
  },
};

/** traverse_greedy(SERVER_TRIE, alpha=0.8, kappa=10) on the server side. */
export const SERVER_GOLDEN_TRAVERSAL = [
  "total",
  " =",
  " count",
  "(",
  "data",
  ")",
  "<EOL>",
];

/** Single-chain wire trie from per-step conditional probabilities. */
export function simpleWireTrie(
  chunks: string[],
  conditionals: number[],
  rootPosition = 0,
): WireTrie {
  const root: WireTrie["root"] = { subtoken: "", score: 1.0, children: [] };
  let parent = root;
  let score = 1.0;
  for (let i = 0; i < chunks.length; i += 1) {
    score *= conditionals[i];
    const node: WireTrie["root"] = { subtoken: chunks[i], score, children: [] };
    parent.children.push(node);
    parent = node;
  }
  return { version: "v1", root_position: rootPosition, root };
}
