/**
 * Client-side completion trie, mirroring the server's wire format.
 *
 * Node scores are cumulative probabilities in (0, 1]; each edge's
 * child/parent ratio is the conditional probability of that continuation.
 * Greedy traversal follows the best child until none clears the logistic
 * early-stop threshold R = alpha / (1 + exp(-L / kappa)), where L is the
 * character offset of the query point within its line (root_position).
 *
 * Pruning consumes one typed character: exact single-character child images
 * are consumed (their children surface and the root adopts their score, so
 * every ratio test matches the unpruned tree), longer images are split
 * character-wise. A character matching no child is a miss and the caller
 * must re-query.
 */

export interface WireTrieNode {
  subtoken: string;
  score: number;
  children: WireTrieNode[];
}

export interface WireTrie {
  version: string;
  root_position: number;
  root: WireTrieNode;
}

export interface TrieNode {
  image: string;
  score: number;
  children: Map<string, TrieNode>;
}

export const DEFAULT_ALPHA = 0.8;
export const DEFAULT_KAPPA = 10.0;

export function earlyStopRatio(
  position: number,
  alpha: number = DEFAULT_ALPHA,
  kappa: number = DEFAULT_KAPPA,
): number {
  if (!(alpha > 0 && alpha <= 1)) throw new Error(`alpha out of range: ${alpha}`);
  if (!(kappa > 0)) throw new Error(`kappa out of range: ${kappa}`);
  if (position < 0) throw new Error(`position out of range: ${position}`);
  return alpha / (1 + Math.exp(-position / kappa));
}

function nodeFromWire(record: WireTrieNode): TrieNode {
  const node: TrieNode = {
    image: record.subtoken,
    score: record.score,
    children: new Map(),
  };
  for (const child of record.children ?? []) {
    node.children.set(child.subtoken, nodeFromWire(child));
  }
  return node;
}

function mergeNodes(a: TrieNode, b: TrieNode): TrieNode {
  const merged: TrieNode = {
    image: a.image,
    score: Math.max(a.score, b.score),
    children: new Map(a.children),
  };
  for (const [key, child] of b.children) {
    const existing = merged.children.get(key);
    merged.children.set(key, existing ? mergeNodes(existing, child) : child);
  }
  return merged;
}

export class ClientTrie {
  constructor(
    readonly root: TrieNode,
    readonly rootPosition: number,
  ) {}

  static fromWire(payload: WireTrie): ClientTrie {
    return new ClientTrie(nodeFromWire(payload.root), payload.root_position);
  }

  isEmpty(): boolean {
    return this.root.children.size === 0;
  }

  /** Best-scored child per step (ties: lexicographically smallest image),
   *  stopping when the best child falls below R * parent score. */
  traverseGreedy(alpha = DEFAULT_ALPHA, kappa = DEFAULT_KAPPA): string[] {
    const ratio = earlyStopRatio(this.rootPosition, alpha, kappa);
    const out: string[] = [];
    let node = this.root;
    while (node.children.size > 0) {
      let best: TrieNode | null = null;
      for (const child of node.children.values()) {
        if (
          best === null ||
          child.score > best.score ||
          (child.score === best.score && child.image < best.image)
        ) {
          best = child;
        }
      }
      if (best === null || best.score < ratio * node.score) break;
      out.push(best.image);
      node = best;
    }
    return out;
  }

  /** One keystroke of character-level pruning; null on a miss. */
  pruneOnKeystroke(typedChar: string): ClientTrie | null {
    if (typedChar.length !== 1) {
      throw new Error("prune consumes exactly one character per keystroke");
    }
    let consumedScore: number | null = null;
    const newChildren = new Map<string, TrieNode>();
    const add = (node: TrieNode) => {
      const existing = newChildren.get(node.image);
      newChildren.set(node.image, existing ? mergeNodes(existing, node) : node);
    };
    for (const child of this.root.children.values()) {
      if (!child.image.startsWith(typedChar)) continue;
      if (child.image.length === 1) {
        consumedScore = child.score;
        for (const grandchild of child.children.values()) add(grandchild);
      } else {
        add({ image: child.image.slice(1), score: child.score, children: child.children });
      }
    }
    if (newChildren.size === 0 && consumedScore === null) return null;
    const rootScore = consumedScore ?? this.root.score;
    return new ClientTrie(
      { image: "", score: rootScore, children: newChildren },
      this.rootPosition,
    );
  }
}
