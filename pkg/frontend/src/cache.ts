/** LRU cache of completion tries keyed by the code preceding the query
 *  point (last 200 characters, exact match). */

import { ClientTrie } from "./trie.js";

export const CACHE_CAPACITY = 64;
export const CACHE_KEY_CHARS = 200;

export class TrieCache {
  private entries = new Map<string, ClientTrie>();

  constructor(
    private capacity: number = CACHE_CAPACITY,
    private keyChars: number = CACHE_KEY_CHARS,
  ) {}

  private key(precedingCode: string): string {
    return precedingCode.slice(-this.keyChars);
  }

  lookup(precedingCode: string): ClientTrie | null {
    const key = this.key(precedingCode);
    const trie = this.entries.get(key);
    if (trie === undefined) return null;
    this.entries.delete(key);
    this.entries.set(key, trie); // refresh LRU order
    return trie;
  }

  store(precedingCode: string, trie: ClientTrie): void {
    const key = this.key(precedingCode);
    this.entries.delete(key);
    this.entries.set(key, trie);
    while (this.entries.size > this.capacity) {
      const oldest = this.entries.keys().next().value as string;
      this.entries.delete(oldest);
    }
  }

  get size(): number {
    return this.entries.size;
  }
}
