"""Synthetic toy-language corpora for the acceptance suite.

Identifiers are composed from small fragment pools so the corpus carries
enough repeated character n-grams to support a large BPE vocabulary, and so
short n-gram contexts are ambiguous while longer contexts disambiguate.
The two language generators use disjoint fragment pools, which makes
language purity and classification measurable.
"""

from __future__ import annotations

import random

PY_FRAGS = [
    "load", "store", "read", "write", "parse", "count", "merge", "split",
    "cfg", "data", "item", "node", "user", "key", "val", "oldest", "cache",
    "list", "map", "str", "num", "buf", "ctx", "arg", "fmt", "pos", "size",
    "total", "index", "entry", "queue", "stack", "token", "line", "source",
]

C_FRAGS = [
    "alloc", "free", "init", "destroy", "push", "pop", "emit", "flush",
    "ptr", "vec", "mat", "reg", "addr", "word", "byte", "chan", "sock",
    "frame", "slot", "bank", "mask", "bits", "tail", "head", "ring", "heap",
    "pool", "page", "seg", "blk", "dev", "irq", "dma", "bus", "port", "pin",
]

SECRET_STRINGS = ["hunter2_api_key_zzqx", "s3cr3t_t0ken_qqvv", "passwd_8f8e7d_xk"]
SECRET_NUMBERS = ["8675309", "42424242", "31337007"]


def _name(rng: random.Random, frags: list[str], parts: int | None = None) -> str:
    parts = parts or rng.randint(2, 3)
    return "_".join(rng.choice(frags) for _ in range(parts))


def toy_py_file(rng: random.Random, with_literals: bool = True) -> str:
    f = lambda: _name(rng, PY_FRAGS)
    fn, arg, v1, v2, top = f(), f(), f(), f(), f()
    g1, g2 = f(), f()
    lines = [
        f"def {fn}({arg}):",
        f"    {v1} = {g1}({arg}, {rng.randint(0, 99)})" if with_literals
        else f"    {v1} = {g1}({arg}, {f()})",
        f"    {v2} = {g2}({v1})",
        f"    return {v2}",
    ]
    if with_literals:
        secret = rng.choice(SECRET_STRINGS)
        number = rng.choice(SECRET_NUMBERS)
        lines.append(f'{top} = {fn}("{secret}")')
        lines.append(f"{f()} = {top} + {number}")
    else:
        lines.append(f"{top} = {fn}({f()})")
        lines.append(f"{f()} = {top} + {f()}")
    lines.append(f"print({top})")
    return "\n".join(lines) + "\n"


def toy_c_file(rng: random.Random) -> str:
    f = lambda: _name(rng, C_FRAGS)
    fn, arg, v1, v2, top = f(), f(), f(), f(), f()
    g1, g2 = f(), f()
    return (
        f"def {fn}({arg}) {{\n"
        f"    var {v1} = {g1}({arg}, {rng.randint(0, 99)});\n"
        f"    var {v2} = {g2}({v1});\n"
        f"    return {v2};\n"
        f"}}\n"
        f"var {top} = {fn}({f()});\n"
    )


def toy_py_corpus(n_files: int, seed: int, with_literals: bool = True) -> list[str]:
    rng = random.Random(seed)
    return [toy_py_file(rng, with_literals=with_literals) for _ in range(n_files)]


def toy_c_corpus(n_files: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    return [toy_c_file(rng) for _ in range(n_files)]


def toy_py_walk_corpus(
    n_files: int,
    seed: int,
    pool_seed: int = 999,
    pool_size: int = 300,
    branch: int = 3,
) -> list[str]:
    """Files as random walks over a fixed line pool with a fixed successor
    graph, so the language has learnable sequential structure: held-out
    walks (different `seed`, same `pool_seed`) are predictable from training
    walks up to the branch entropy. Used by the distillation comparison,
    which needs generalization to be measurable."""
    prng = random.Random(pool_seed)
    pool = []
    for _ in range(pool_size):
        a, b, c = (_name(prng, PY_FRAGS, parts=2) for _ in range(3))
        kind = prng.randrange(3)
        if kind == 0:
            pool.append(f"{a} = {b}({c}, {prng.randint(0, 99)})")
        elif kind == 1:
            pool.append(f"{a} = {b} + {c}")
        else:
            pool.append(f"print({a})")
    successors = {
        i: [prng.randrange(pool_size) for _ in range(branch)] for i in range(pool_size)
    }
    rng = random.Random(seed)
    files = []
    for _ in range(n_files):
        i = rng.randrange(pool_size)
        lines = [pool[i]]
        for _ in range(rng.randint(4, 7)):
            i = rng.choice(successors[i])
            lines.append(pool[i])
        files.append("\n".join(lines) + "\n")
    return files
