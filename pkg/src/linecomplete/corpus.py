"""Corpus ingestion, content deduplication and repo-level dataset splits.

Files are discovered under one or more root directories, deduplicated by a
64-bit FNV-1a digest of their raw bytes, and split into train/validation/test
at the repository level so that no repo straddles the dev/test boundary.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEV_FRACTION = 0.7
TRAIN_FRACTION = 0.8


class CorpusError(Exception):
    """Base class for corpus-layer failures."""


class IngestError(CorpusError):
    """A root directory could not be read."""


class EmptyCorpusError(CorpusError):
    """No files matched any registered extension."""


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes; cheap and stable across platforms."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class CorpusEntry:
    repo_id: str
    file_path: str
    language: str
    content_hash: int


@dataclass(frozen=True)
class CorpusIndex:
    entries: tuple[CorpusEntry, ...]
    languages: frozenset[str]

    def __len__(self) -> int:
        return len(self.entries)

    def repo_ids(self) -> list[str]:
        return sorted({e.repo_id for e in self.entries})


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[CorpusEntry, ...]
    validation: tuple[CorpusEntry, ...]
    test: tuple[CorpusEntry, ...]
    seed: int
    ratios: tuple[float, float]
    warnings: tuple[str, ...] = field(default=())

    def all_entries(self) -> tuple[CorpusEntry, ...]:
        return self.train + self.validation + self.test


def _repo_id_for(path: Path, root: Path) -> str:
    # First path component under the ingest root, mirroring a flat checkout
    # of many repositories side by side. A file sitting directly in the root
    # is its own single-file "repo".
    rel = path.relative_to(root)
    return rel.parts[0]


def ingest(
    root_dirs: Iterable[str | Path],
    language_config: Mapping[str, str],
) -> CorpusIndex:
    """Walk the roots, hash every file with a registered extension, dedupe.

    `language_config` maps filename extensions (with leading dot) to
    language ids. Files whose bytes hash identically appear once, first
    occurrence in sorted walk order wins.
    """
    if not language_config:
        raise IngestError("no extensions registered in language_config")

    roots = [Path(r) for r in root_dirs]
    for root in roots:
        if not root.is_dir():
            raise IngestError(f"unreadable root directory: {root}")

    entries: list[CorpusEntry] = []
    seen_hashes: set[int] = set()
    for root in roots:
        for path in sorted(root.rglob("*")):
            if not path.is_file():
                continue
            language = language_config.get(path.suffix)
            if language is None:
                continue
            try:
                digest = fnv1a_64(path.read_bytes())
            except OSError as exc:
                raise IngestError(f"unreadable file: {path}") from exc
            if digest in seen_hashes:
                continue
            seen_hashes.add(digest)
            entries.append(
                CorpusEntry(
                    repo_id=_repo_id_for(path, root),
                    file_path=str(path),
                    language=language,
                    content_hash=digest,
                )
            )

    if not entries:
        raise EmptyCorpusError(f"no files matching {sorted(language_config)} under {roots}")

    entries.sort(key=lambda e: (e.repo_id, e.file_path))
    return CorpusIndex(
        entries=tuple(entries),
        languages=frozenset(e.language for e in entries),
    )


def split(
    index: CorpusIndex,
    seed: int,
    dev_fraction: float = DEV_FRACTION,
    train_fraction: float = TRAIN_FRACTION,
) -> SplitManifest:
    """Repo-level dev/test split, then file-level train/validation within dev.

    Repos are shuffled by a PRNG seeded with `seed`; floor(dev_fraction * R)
    of them (at least 1 when R >= 2) form the dev side, the rest the test
    side. Dev files are then shuffled and floor((1 - train_fraction) * F)
    become validation. Deterministic for a fixed (index, seed).
    """
    if not index.entries:
        raise EmptyCorpusError("cannot split an empty index")

    rng = random.Random(seed)
    repos = index.repo_ids()
    by_repo: dict[str, list[CorpusEntry]] = {}
    for entry in index.entries:
        by_repo.setdefault(entry.repo_id, []).append(entry)

    warnings: tuple[str, ...] = ()
    if len(repos) == 1:
        warnings = (
            f"degenerate split: single repo {repos[0]!r}, all files placed in train",
        )
        return SplitManifest(
            train=index.entries,
            validation=(),
            test=(),
            seed=seed,
            ratios=(dev_fraction, train_fraction),
            warnings=warnings,
        )

    rng.shuffle(repos)
    dev_count = max(1, int(dev_fraction * len(repos)))
    dev_repos = set(repos[:dev_count])
    test_repos = repos[dev_count:]

    dev_files: list[CorpusEntry] = []
    for repo in sorted(dev_repos):
        dev_files.extend(by_repo[repo])
    rng.shuffle(dev_files)
    val_count = len(dev_files) - int(train_fraction * len(dev_files))
    validation = sorted(dev_files[:val_count], key=lambda e: (e.repo_id, e.file_path))
    train = sorted(dev_files[val_count:], key=lambda e: (e.repo_id, e.file_path))

    test: list[CorpusEntry] = []
    for repo in sorted(test_repos):
        test.extend(by_repo[repo])

    return SplitManifest(
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        seed=seed,
        ratios=(dev_fraction, train_fraction),
        warnings=warnings,
    )


def manifest_bytes(manifest: SplitManifest) -> bytes:
    """Line-delimited form: `split \\t repo_id \\t path \\t language \\t hash-hex`."""
    lines = []
    for name, entries in (
        ("train", manifest.train),
        ("validation", manifest.validation),
        ("test", manifest.test),
    ):
        for e in entries:
            lines.append(
                f"{name}\t{e.repo_id}\t{e.file_path}\t{e.language}\t{e.content_hash:016x}\n"
            )
    return "".join(lines).encode("utf-8")


def write_manifest(manifest: SplitManifest, path: str | Path) -> None:
    Path(path).write_bytes(manifest_bytes(manifest))


def read_manifest(path: str | Path) -> SplitManifest:
    """Load a persisted manifest. The file format carries no seed; the loaded
    manifest reports seed=-1."""
    splits: dict[str, list[CorpusEntry]] = {"train": [], "validation": [], "test": []}
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        name, repo_id, file_path, language, hash_hex = line.split("\t")
        splits[name].append(
            CorpusEntry(
                repo_id=repo_id,
                file_path=file_path,
                language=language,
                content_hash=int(hash_hex, 16),
            )
        )
    return SplitManifest(
        train=tuple(splits["train"]),
        validation=tuple(splits["validation"]),
        test=tuple(splits["test"]),
        seed=-1,
        ratios=(DEV_FRACTION, TRAIN_FRACTION),
    )
