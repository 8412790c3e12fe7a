"""Command-line driver for the whole pipeline.

Subcommands: ingest, split, lex, train-vocab, train-ngram, train-gptc,
distill, eval, complete, serve, bench.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import corpus, evalkit, lexnorm, ngram, suggest, vocab as vocab_mod
from .decoder import (
    DecodeRequest,
    MarkovTableModel,
    NGramAdapter,
    TransformerAdapter,
    mode_equivalence_check,
)
from .model import (
    ModelConfig,
    distill_init,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .service import CompletionEngine, state_digest
from .training import TrainSchedule, train

DEFAULT_EXTENSIONS = {".toy": lexnorm.TOY_PY, ".toypy": lexnorm.TOY_PY, ".toyc": lexnorm.TOY_C}


@click.group()
def main() -> None:
    """Whole-line code completion engine for the toy languages."""


def _parse_ext_option(values: tuple[str, ...]) -> dict[str, str]:
    if not values:
        return dict(DEFAULT_EXTENSIONS)
    mapping = {}
    for value in values:
        ext, _, lang = value.partition("=")
        mapping[ext if ext.startswith(".") else "." + ext] = lang
    return mapping


def _write_index(index: corpus.CorpusIndex, path: Path) -> None:
    lines = [
        f"{e.repo_id}\t{e.file_path}\t{e.language}\t{e.content_hash:016x}"
        for e in index.entries
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_index(path: Path) -> corpus.CorpusIndex:
    entries = []
    for line in path.read_text(encoding="utf-8").split("\n"):
        if not line.strip():
            continue
        repo_id, file_path, language, hash_hex = line.split("\t")
        entries.append(
            corpus.CorpusEntry(repo_id, file_path, language, int(hash_hex, 16))
        )
    return corpus.CorpusIndex(
        entries=tuple(entries), languages=frozenset(e.language for e in entries)
    )


@main.command()
@click.option("--root", "roots", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--ext", "exts", multiple=True, help="extension=language, e.g. .toy=toy-py")
@click.option("--out", type=click.Path(), required=True)
def ingest(roots, exts, out):
    """Index source files under the roots, deduplicated by content."""
    index = corpus.ingest(roots, _parse_ext_option(exts))
    _write_index(index, Path(out))
    click.echo(f"indexed {len(index)} files from {len(index.repo_ids())} repos -> {out}")


@main.command()
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def split(index_path, seed, out):
    """Repo-level train/validation/test split of an ingested index."""
    index = _read_index(Path(index_path))
    manifest = corpus.split(index, seed)
    corpus.write_manifest(manifest, out)
    for warning in manifest.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(
        f"train={len(manifest.train)} validation={len(manifest.validation)} "
        f"test={len(manifest.test)} -> {out}"
    )


@main.command()
@click.option("--language", type=click.Choice(lexnorm.LANGUAGES), default=lexnorm.TOY_PY)
@click.option("--table", "table_path", type=click.Path(exists=True), default=None,
              help="literal table; defaults to empty (all literals masked)")
@click.option("--tokens", "show_tokens", is_flag=True, help="dump tokens instead of text")
@click.argument("source", type=click.Path(exists=True), required=False)
def lex(language, table_path, show_tokens, source):
    """Lex + normalize a file (or stdin) and print the canonical rendering."""
    text = Path(source).read_text(encoding="utf-8") if source else sys.stdin.read()
    table = (
        lexnorm.read_literal_table(table_path)
        if table_path
        else lexnorm.EMPTY_LITERAL_TABLE
    )
    stream = lexnorm.normalize(lexnorm.lex(text, language), table)
    for error in stream.errors:
        click.echo(f"warning: {error}", err=True)
    if show_tokens:
        for token in stream.tokens:
            click.echo(f"{token.kind.value}\t{token.text}")
    else:
        click.echo(lexnorm.render(stream), nl=False)


def _streams_for(entries, table=None):
    streams = []
    for entry in entries:
        text = Path(entry.file_path).read_text(encoding="utf-8")
        stream = lexnorm.lex(text, entry.language)
        if table is not None:
            stream = lexnorm.normalize(stream, table)
        streams.append(stream)
    return streams


@main.command("train-vocab")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--size", type=int, default=vocab_mod.DEFAULT_TARGET_SIZE, show_default=True)
@click.option("--keep-strings", type=int, default=20, show_default=True)
@click.option("--keep-numbers", type=int, default=5, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--table-out", type=click.Path(), required=True)
def train_vocab(manifest_path, size, keep_strings, keep_numbers, out, table_out):
    """Build the literal table and BPE vocabulary from the train split."""
    manifest = corpus.read_manifest(manifest_path)
    raw_streams = _streams_for(manifest.train)
    table = lexnorm.build_literal_table(
        raw_streams, {"string": keep_strings, "number": keep_numbers}
    )
    lexnorm.write_literal_table(table, table_out)
    normalized = [lexnorm.normalize(s, table) for s in raw_streams]
    vocabulary = vocab_mod.train_bpe(normalized, size, literal_table=table)
    for warning in vocabulary.warnings:
        click.echo(f"warning: {warning}", err=True)
    vocab_mod.write_vocabulary(vocabulary, out)
    click.echo(f"vocabulary size {vocabulary.size}, {len(vocabulary.merges)} merges -> {out}")


@main.command("train-ngram")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--table", "table_path", type=click.Path(exists=True), required=True)
@click.option("-n", "--order", type=int, default=5, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_ngram_cmd(manifest_path, vocab_path, table_path, order, out):
    """Count-based n-gram baseline over the encoded train split."""
    manifest = corpus.read_manifest(manifest_path)
    vocabulary = vocab_mod.read_vocabulary(vocab_path)
    table = lexnorm.read_literal_table(table_path)
    sequences = [
        vocab_mod.encode(stream, vocabulary)
        for stream in _streams_for(manifest.train, table)
    ]
    model = ngram.train_ngram(sequences, order, vocabulary.size)
    ngram.write_ngram(model, out)
    click.echo(
        f"{order}-gram over {len(sequences)} files "
        f"({model.skipped_sequences} skipped) -> {out}"
    )


@main.command("train-gptc")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--table", "table_path", type=click.Path(exists=True), required=True)
@click.option("--layers", type=int, default=4, show_default=True)
@click.option("--d-model", type=int, default=128, show_default=True)
@click.option("--heads", type=int, default=4, show_default=True)
@click.option("--ctx", type=int, default=128, show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--lr", type=float, default=6.25e-5, show_default=True)
@click.option("--warmup-epochs", type=int, default=1, show_default=True)
@click.option("--decay", type=float, default=0.98, show_default=True)
@click.option("--cosine", is_flag=True, help="cosine decay instead of per-epoch 0.98")
@click.option("--lang-mode", type=click.Choice(("none", "embedding", "control_codes", "double_heads")), default="none")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--init-from", type=click.Path(exists=True), default=None,
              help="start from an existing checkpoint (e.g. a distilled student)")
@click.option("--out", type=click.Path(), required=True)
def train_gptc(manifest_path, vocab_path, table_path, layers, d_model, heads, ctx,
               epochs, batch_size, lr, warmup_epochs, decay, cosine, lang_mode,
               seed, init_from, out):
    """Train the generative transformer on the encoded train split."""
    from . import training as training_mod

    manifest = corpus.read_manifest(manifest_path)
    vocabulary = vocab_mod.read_vocabulary(vocab_path)
    table = lexnorm.read_literal_table(table_path)
    lang_index = {lang: i for i, lang in enumerate(lexnorm.LANGUAGES)}
    samples = []
    for entry, stream in zip(manifest.train, _streams_for(manifest.train, table)):
        ids = vocab_mod.encode(stream, vocabulary)
        if lang_mode == "control_codes":
            from .model import prepend_control_code

            ids = prepend_control_code(ids, entry.language, vocabulary)
        samples.append((ids, lang_index[entry.language]))

    if init_from:
        model = load_checkpoint(init_from)
    else:
        config = ModelConfig(
            n_layers=layers,
            d_model=d_model,
            d_x=d_model,
            n_heads=heads,
            n_ctx=ctx,
            vocab_size=vocabulary.size,
            lang_mode=lang_mode,
            n_langs=len(lexnorm.LANGUAGES) if lang_mode in ("embedding", "double_heads") else 0,
        )
        model = init_model(config, seed)
    schedule = TrainSchedule(
        epochs=epochs,
        batch_size=batch_size,
        base_lr=lr,
        warmup_epochs=warmup_epochs,
        decay=decay,
        decay_kind=training_mod.DECAY_COSINE if cosine else training_mod.DECAY_MULTIPLICATIVE,
    )
    result = train(model, samples, schedule, seed=seed)
    if result.diverged:
        click.echo("training diverged; kept last good checkpoint", err=True)
    save_checkpoint(result.model, out)
    click.echo(
        f"{result.steps} steps, final loss {result.final_loss:.4f} -> {out}"
    )


@main.command()
@click.option("--teacher", type=click.Path(exists=True), required=True)
@click.option("--layers", type=int, required=True, help="student block count")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def distill(teacher, layers, seed, out):
    """Initialize a shallower student from a teacher checkpoint."""
    teacher_model = load_checkpoint(teacher)
    student = distill_init(teacher_model, layers, seed=seed)
    save_checkpoint(student, out)
    click.echo(
        f"student with {layers} of {teacher_model.config.n_layers} blocks -> {out}"
    )


def _load_adapter(ckpt, ngram_path, ngram_mode, vocab_size=None):
    if ckpt and ngram_path:
        raise click.UsageError("pass either --ckpt or --ngram, not both")
    if ckpt:
        model = load_checkpoint(ckpt)
        if vocab_size is not None and model.config.vocab_size < vocab_size:
            raise click.UsageError(
                f"checkpoint vocab {model.config.vocab_size} smaller than "
                f"vocabulary {vocab_size}"
            )
        return TransformerAdapter(model, valid_vocab=vocab_size)
    if ngram_path:
        return NGramAdapter(ngram.read_ngram(ngram_path), mode=ngram_mode)
    raise click.UsageError("one of --ckpt or --ngram is required")


@main.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--table", "table_path", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--ngram", "ngram_path", type=click.Path(exists=True), default=None)
@click.option("--ngram-mode", type=click.Choice((ngram.BACKOFF, ngram.STRICT)), default=ngram.BACKOFF)
@click.option("--split", "split_name", type=click.Choice(("test", "validation", "train")), default="test")
@click.option("--beam", type=int, default=3, show_default=True)
@click.option("--max-len", type=int, default=24, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def eval_cmd(manifest_path, vocab_path, table_path, ckpt, ngram_path, ngram_mode,
             split_name, beam, max_len, seed, out):
    """Run the offline metric suite on a manifest split."""
    manifest = corpus.read_manifest(manifest_path)
    vocabulary = vocab_mod.read_vocabulary(vocab_path)
    table = lexnorm.read_literal_table(table_path)
    adapter = _load_adapter(ckpt, ngram_path, ngram_mode, vocab_size=vocabulary.size)
    entries = getattr(manifest, split_name)
    config = evalkit.EvalConfig(
        beam_width=beam,
        max_len=max_len,
        seed=seed,
        model_id=Path(ckpt or ngram_path).name,
        corpus_id=Path(manifest_path).name,
    )
    report = evalkit.evaluate(adapter, entries, vocabulary, table, config)
    evalkit.write_report(report, out)
    click.echo(report.as_text(), nl=False)
    click.echo(
        f"\n{'model':<24}{'PPL':>8}{'ROUGE-P':>10}{'ROUGE-R':>10}{'EditSim%':>10}{'Syntax%':>10}"
    )
    click.echo(
        f"{report.model_id:<24}{report.perplexity:>8.3f}{report.rouge_precision:>10.3f}"
        f"{report.rouge_recall:>10.3f}{report.edit_similarity_pct:>10.2f}"
        f"{report.syntax_valid_pct:>10.2f}"
    )


@main.command()
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--table", "table_path", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--ngram", "ngram_path", type=click.Path(exists=True), default=None)
@click.option("--ngram-mode", type=click.Choice((ngram.BACKOFF, ngram.STRICT)), default=ngram.BACKOFF)
@click.option("--language", type=click.Choice(lexnorm.LANGUAGES), default=lexnorm.TOY_PY)
@click.option("--beam", type=int, default=3, show_default=True)
@click.option("--max-len", type=int, default=24, show_default=True)
@click.option("--alpha", type=float, default=suggest.DEFAULT_ALPHA, show_default=True)
@click.option("--kappa", type=float, default=suggest.DEFAULT_KAPPA, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="emit the full wire response")
def complete(vocab_path, table_path, ckpt, ngram_path, ngram_mode, language,
             beam, max_len, alpha, kappa, as_json):
    """One-shot completion: context on stdin, suggestion on stdout."""
    from .service import result_to_wire

    context = sys.stdin.read()
    vocabulary = vocab_mod.read_vocabulary(vocab_path)
    table = lexnorm.read_literal_table(table_path)
    adapter = _load_adapter(ckpt, ngram_path, ngram_mode, vocab_size=vocabulary.size)
    engine = CompletionEngine(adapter, vocabulary, table)
    result = engine.complete(
        context, language=language, beam_width=beam, max_len=max_len,
        alpha=alpha, kappa=kappa,
    )
    if as_json:
        click.echo(json.dumps(result_to_wire(result), sort_keys=True))
    elif result.suggestions:
        ghost = suggest.traverse_greedy(result.trie, alpha=alpha, kappa=kappa)
        click.echo("".join(ghost))
    else:
        click.echo("")


@main.command()
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--table", "table_path", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8732, show_default=True)
def serve(vocab_path, table_path, ckpt, host, port):
    """Run the completion web service."""
    from .service import serve as run_service

    vocabulary = vocab_mod.read_vocabulary(vocab_path)
    table = lexnorm.read_literal_table(table_path)
    model = load_checkpoint(ckpt)
    if model.config.vocab_size < vocabulary.size:
        raise click.UsageError(
            f"checkpoint vocab {model.config.vocab_size} smaller than vocabulary {vocabulary.size}"
        )
    engine = CompletionEngine(
        TransformerAdapter(model, valid_vocab=vocabulary.size),
        vocabulary,
        table,
        model_digest=state_digest(Path(ckpt).read_bytes()),
    )
    click.echo(f"serving on http://{host}:{port}")
    run_service(engine, host=host, port=port)


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), default=None,
              help="benchmark a trained checkpoint instead of the builtin table model")
@click.option("--vocab-size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--scenario", "scenarios", multiple=True,
              help="L,k pairs; defaults to 10,1 10,10 25,15")
def bench(ckpt, vocab_size, seed, scenarios):
    """Check decode-mode equivalence and print the call-count table."""
    if ckpt:
        adapter = TransformerAdapter(load_checkpoint(ckpt))
        vocab_size = adapter.vocab_size
    else:
        adapter = MarkovTableModel(vocab_size, seed=seed)
    pairs = [tuple(int(x) for x in s.split(",")) for s in scenarios] or [
        (10, 1),
        (10, 10),
        (25, 15),
    ]
    click.echo(f"{'L':>4}{'k':>4}{'sequential':>12}{'parallel':>10}{'cached':>8}")
    for length, width in pairs:
        request = DecodeRequest(
            context_ids=(1,), beam_width=width, max_len=length, break_ids=frozenset()
        )
        report = mode_equivalence_check(adapter, request)
        calls = {mode: stats.model_calls for mode, stats in report.stats.items()}
        click.echo(
            f"{length:>4}{width:>4}{calls['sequential']:>12}"
            f"{calls['parallel']:>10}{calls['parallel+cached']:>8}"
        )
    click.echo("all modes returned identical sequences and scores")


if __name__ == "__main__":
    main()
