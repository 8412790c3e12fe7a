import math
from collections import Counter

import numpy as np
import pytest
import torch

from linecomplete import lexnorm, training
from linecomplete.lexnorm import EMPTY_LITERAL_TABLE, lex, normalize
from linecomplete.model import (
    CapabilityError,
    ContextOverflowError,
    ModelConfig,
    ModelError,
    TransformerLM,
    brute_force_param_count,
    classify_language,
    compute_loss,
    count_params,
    distill_init,
    init_model,
    load_checkpoint,
    loss_and_grads,
    prepend_control_code,
    save_checkpoint,
    selected_teacher_blocks,
)
from linecomplete.training import TrainSchedule, epoch_lr, step_lr, train
from linecomplete.vocab import train_bpe, encode

MICRO = ModelConfig(n_layers=1, d_model=8, d_x=8, n_heads=2, n_ctx=16, vocab_size=11)
SMALL = ModelConfig(n_layers=2, d_model=32, d_x=32, n_heads=4, n_ctx=48, vocab_size=40)


def random_ids(rng, config, length):
    return [int(x) for x in rng.integers(0, config.vocab_size, size=length)]


# --- init / parameter accounting ----------------------------------------------

def test_init_deterministic_per_seed():
    a = init_model(SMALL, seed=9)
    b = init_model(SMALL, seed=9)
    for (name_a, pa), (name_b, pb) in zip(
        sorted(a.named_parameters()), sorted(b.named_parameters())
    ):
        assert name_a == name_b
        assert torch.equal(pa, pb)
    c = init_model(SMALL, seed=10)
    assert any(
        not torch.equal(pa, pc)
        for (_, pa), (_, pc) in zip(sorted(a.named_parameters()), sorted(c.named_parameters()))
    )


def test_init_all_finite():
    model = init_model(SMALL, seed=0)
    for param in model.parameters():
        assert torch.isfinite(param).all()


@pytest.mark.parametrize(
    "config",
    [
        MICRO,
        SMALL,
        ModelConfig(n_layers=3, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13,
                    lang_mode="embedding", n_langs=2),
        ModelConfig(n_layers=1, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13,
                    lang_mode="double_heads", n_langs=3),
    ],
)
def test_count_params_matches_brute_force(config):
    model = TransformerLM(config)
    assert count_params(config) == brute_force_param_count(model)


def test_count_params_degenerate_no_blocks():
    config = ModelConfig(n_layers=0, d_model=8, d_x=8, n_heads=2, n_ctx=4, vocab_size=7)
    expected = 8 * (7 + 4) + 8 * 8 + 7  # d_x*(|V|+N_ctx) + d_model*d_x + |V|
    assert count_params(config) == expected
    assert brute_force_param_count(TransformerLM(config)) == expected


def test_count_params_block_term_linear_in_depth():
    base = ModelConfig(n_layers=2, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13)
    double = ModelConfig(n_layers=4, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13)
    per_block = 12 * 16 * 16 + 13 * 16
    assert count_params(double) - count_params(base) == 2 * per_block


def test_weight_tying_savings_exact():
    # Untied control carries a |V| x d_model output matrix instead of A.
    config = ModelConfig(n_layers=4, d_model=128, d_x=128, n_heads=4, n_ctx=128, vocab_size=2000)
    savings = count_params(config, tied_output=False) - count_params(config)
    assert savings == 2000 * 128 - 128 * 128 == 239616


def test_weight_tying_structural():
    # No separate output vocabulary tensor: exactly one |V| x d_x matrix.
    model = init_model(SMALL, seed=0)
    shape = (SMALL.vocab_size, SMALL.d_x)
    owners = [name for name, p in model.named_parameters() if tuple(p.shape) == shape]
    assert owners == ["token_embedding"]
    # Logits respond to the embedding matrix: tying is live, not a copy.
    ids = [1, 2, 3]
    before, _ = model.forward(ids)
    with torch.no_grad():
        model.token_embedding[5] += 1.0
    after, _ = model.forward(ids)
    assert not torch.equal(before, after)


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ModelError):
        ModelConfig(d_model=16, d_x=8, n_heads=2)
    with pytest.raises(ModelError):
        ModelConfig(n_ctx=1)
    with pytest.raises(ModelError):
        ModelConfig(lang_mode="embedding", n_langs=0)
    with pytest.raises(ModelError):
        ModelConfig(lang_mode="nope")


# --- forward ---------------------------------------------------------------------

def test_softmax_rows_normalized():
    model = init_model(SMALL, seed=1)
    model.eval()
    rng = np.random.default_rng(0)
    logits, _ = model.forward(random_ids(rng, SMALL, 12))
    probs = torch.softmax(logits, dim=-1)
    assert torch.allclose(probs.sum(dim=-1), torch.ones(12), atol=1e-6)


def test_causal_masking_bit_identical():
    model = init_model(SMALL, seed=2)
    model.eval()
    rng = np.random.default_rng(1)
    ids = random_ids(rng, SMALL, 10)
    with torch.no_grad():
        base, _ = model.forward(ids)
    for t in (0, 4, 8):
        perturbed = list(ids)
        perturbed[t + 1] = (perturbed[t + 1] + 3) % SMALL.vocab_size
        with torch.no_grad():
            out, _ = model.forward(perturbed)
        assert torch.equal(out[: t + 1], base[: t + 1])


def test_kv_cache_equivalence_incremental():
    model = init_model(SMALL, seed=3)
    model.eval()
    rng = np.random.default_rng(7)
    for _ in range(10):
        ids = random_ids(rng, SMALL, int(rng.integers(2, SMALL.n_ctx)))
        with torch.no_grad():
            full, _ = model.forward(ids)
            cache = None
            last = None
            for token in ids:
                last, cache = model.forward([token], cache=cache)
        diff = (last[-1] - full[-1]).abs().max().item()
        assert diff < 1e-5


def test_kv_cache_equivalence_float64():
    model = init_model(SMALL, seed=3).double()
    model.eval()
    rng = np.random.default_rng(8)
    for _ in range(5):
        ids = random_ids(rng, SMALL, 20)
        with torch.no_grad():
            full, _ = model.forward(ids)
            cache = None
            for token in ids:
                last, cache = model.forward([token], cache=cache)
        assert float((last[-1] - full[-1]).abs().max()) < 1e-10


def test_kv_cache_batched_selection():
    model = init_model(SMALL, seed=4)
    model.eval()
    with torch.no_grad():
        _, cache = model.forward(torch.tensor([[1, 2, 3], [4, 5, 6]]))
        picked = cache.select([1, 1, 0])
        assert picked.keys[0].shape[0] == 3
        assert torch.equal(picked.keys[0][0], cache.keys[0][1])
        assert torch.equal(picked.keys[0][2], cache.keys[0][0])


def test_context_overflow_raises():
    model = init_model(MICRO, seed=0)
    with pytest.raises(ContextOverflowError):
        model.forward(list(range(MICRO.n_ctx + 1)))
    with torch.no_grad():
        _, cache = model.forward([1] * MICRO.n_ctx)
    with pytest.raises(ContextOverflowError):
        model.forward([1], cache=cache)


# --- loss / gradients -------------------------------------------------------------

def test_uniform_logits_loss_is_log_vocab():
    model = init_model(MICRO, seed=0)
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    loss = compute_loss(model, [([3, 5], None)])
    assert float(loss.detach()) == pytest.approx(math.log(MICRO.vocab_size), abs=1e-6)


def test_empty_batch_rejected():
    model = init_model(MICRO, seed=0)
    with pytest.raises(ModelError):
        compute_loss(model, [])


def test_double_heads_lambda_zero_matches_plain_lm():
    plain = init_model(MICRO, seed=5)
    dh_config = ModelConfig(
        n_layers=1, d_model=8, d_x=8, n_heads=2, n_ctx=16, vocab_size=11,
        lang_mode="double_heads", n_langs=2, lambda_classify=0.0,
    )
    dh = init_model(dh_config, seed=5)
    with torch.no_grad():
        for name, param in plain.named_parameters():
            dict(dh.named_parameters())[name].copy_(param)
    plain.eval()
    dh.eval()
    batch_plain = [([1, 2, 3, 4], None), ([5, 6], None)]
    batch_dh = [([1, 2, 3, 4], 0), ([5, 6], 1)]
    a = float(compute_loss(plain, batch_plain).detach())
    b = float(compute_loss(dh, batch_dh).detach())
    assert abs(a - b) < 1e-9


def finite_difference_check(config, batch, h=1e-3):
    """Central-difference oracle vs autograd, per tensor, in float64."""
    model = init_model(config, seed=12).double()
    model.eval()  # keep the loss deterministic under perturbation
    _, grads = loss_and_grads(model, batch)
    worst = {}
    for name, param in model.named_parameters():
        analytic = grads[name]
        fd = torch.zeros_like(param)
        flat = param.data.view(-1)
        fd_flat = fd.view(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            flat[idx] = original + h
            up = float(compute_loss(model, batch).detach())
            flat[idx] = original - h
            down = float(compute_loss(model, batch).detach())
            flat[idx] = original
            fd_flat[idx] = (up - down) / (2 * h)
        num = (fd - analytic).norm().item()
        den = max(fd.norm().item(), analytic.norm().item(), 1e-12)
        worst[name] = num / den
    return worst


@pytest.mark.slow
def test_gradients_match_finite_differences_micro():
    batch = [([1, 4, 7, 2], None), ([9, 0, 3], None)]
    worst = finite_difference_check(MICRO, batch)
    for name, rel in worst.items():
        assert rel < 1e-3, f"{name}: rel error {rel}"


@pytest.mark.slow
def test_gradients_match_finite_differences_double_heads():
    config = ModelConfig(
        n_layers=1, d_model=8, d_x=8, n_heads=2, n_ctx=16, vocab_size=11,
        lang_mode="double_heads", n_langs=2, lambda_classify=0.5,
    )
    batch = [([1, 4, 7, 2], 0), ([9, 0, 3], 1)]
    worst = finite_difference_check(config, batch)
    for name, rel in worst.items():
        assert rel < 1e-3, f"{name}: rel error {rel}"


@pytest.mark.slow
def test_gradients_match_finite_differences_lang_embedding():
    config = ModelConfig(
        n_layers=1, d_model=8, d_x=8, n_heads=2, n_ctx=16, vocab_size=11,
        lang_mode="embedding", n_langs=2,
    )
    batch = [([1, 4, 7, 2], 0), ([9, 0, 3], 1)]
    worst = finite_difference_check(config, batch)
    for name, rel in worst.items():
        assert rel < 1e-3, f"{name}: rel error {rel}"


# --- control codes / classification ------------------------------------------------

def build_tiny_vocab():
    stream = normalize(lex("x = 1\n", "toy-py"), EMPTY_LITERAL_TABLE)
    return train_bpe([stream], 300)


def test_prepend_control_code():
    voc = build_tiny_vocab()
    bof = voc.special_id("<BOF>")
    ids = [bof, 270, 271]
    out = prepend_control_code(ids, "toy-py", voc)
    assert out[:3] == [bof, voc.special_id("<LANG:toy-py>"), voc.special_id("<SEP>")]
    assert out[3:] == [270, 271]
    with pytest.raises(ModelError):
        prepend_control_code(out, "toy-py", voc)  # double application rejected


def test_prepend_control_code_identity_other_modes():
    voc = build_tiny_vocab()
    ids = [voc.special_id("<BOF>"), 270]
    assert prepend_control_code(ids, "toy-py", voc, lang_mode="none") == ids


def test_prepend_control_code_unregistered_language():
    voc = build_tiny_vocab()
    with pytest.raises(ModelError):
        prepend_control_code([voc.special_id("<BOF>")], "cobol", voc)


def test_classify_language_probabilities():
    config = ModelConfig(
        n_layers=1, d_model=16, d_x=16, n_heads=2, n_ctx=16, vocab_size=20,
        lang_mode="double_heads", n_langs=2,
    )
    model = init_model(config, seed=0)
    lang, probs = classify_language(model, [1, 2, 3])
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    assert lang in (0, 1)


def test_classify_requires_double_heads():
    model = init_model(MICRO, seed=0)
    with pytest.raises(CapabilityError):
        model.classify_logits(torch.tensor([1, 2]))


def test_untrained_classifier_near_chance():
    # Balanced random set of >= 200 samples: accuracy 0.5 +- 0.15.
    config = ModelConfig(
        n_layers=1, d_model=16, d_x=16, n_heads=2, n_ctx=16, vocab_size=20,
        lang_mode="double_heads", n_langs=2, dropout_keep=1.0,
    )
    model = init_model(config, seed=4)
    rng = np.random.default_rng(0)
    correct = 0
    total = 200
    for i in range(total):
        ids = random_ids(rng, config, int(rng.integers(3, config.n_ctx)))
        label = i % 2
        if classify_language(model, ids)[0] == label:
            correct += 1
    assert 0.35 <= correct / total <= 0.65


# --- distillation -----------------------------------------------------------------

def test_distill_takes_evenly_strided_blocks():
    assert selected_teacher_blocks(4, 2) == [0, 2]
    assert selected_teacher_blocks(6, 3) == [0, 2, 4]
    assert selected_teacher_blocks(5, 2) == [0, 2]

    teacher_config = ModelConfig(n_layers=4, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13)
    teacher = init_model(teacher_config, seed=1)
    with torch.no_grad():
        for i, block in enumerate(teacher.blocks):
            block.attn_qkv.weight.fill_(float(i))
    student = distill_init(teacher, 2)
    assert torch.all(student.blocks[0].attn_qkv.weight == 0.0)
    assert torch.all(student.blocks[1].attn_qkv.weight == 2.0)
    assert torch.equal(student.token_embedding, teacher.token_embedding)
    assert torch.equal(student.output_projection, teacher.output_projection)
    assert torch.equal(student.output_bias, teacher.output_bias)


def test_distill_rejects_equal_or_deeper_student():
    teacher = init_model(
        ModelConfig(n_layers=2, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13), seed=0
    )
    with pytest.raises(ModelError):
        distill_init(teacher, 2)
    with pytest.raises(ModelError):
        distill_init(teacher, 3)


def test_distilled_student_forward_normalized():
    teacher = init_model(
        ModelConfig(n_layers=3, d_model=16, d_x=16, n_heads=2, n_ctx=8, vocab_size=13), seed=0
    )
    student = distill_init(teacher, 1)
    student.eval()
    logits, _ = student.forward([1, 2, 3])
    assert torch.isfinite(logits).all()
    probs = torch.softmax(logits, dim=-1)
    assert torch.allclose(probs.sum(dim=-1), torch.ones(3), atol=1e-6)


# --- checkpoints --------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = init_model(SMALL, seed=8)
    model.eval()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    assert path.read_bytes().startswith(b"gptc-ckpt v1\n")
    loaded = load_checkpoint(path)
    assert loaded.config == SMALL
    ids = [1, 2, 3, 4]
    with torch.no_grad():
        a, _ = model.forward(ids)
        b, _ = loaded.forward(ids)
    assert torch.equal(a, b)


# --- training -----------------------------------------------------------------------

def test_schedule_arithmetic():
    schedule = TrainSchedule(epochs=5, warmup_epochs=1, decay=0.98, base_lr=1.0)
    # Epoch 3 (index 2) starts at base * 0.98^2.
    assert epoch_lr(schedule, 2) == pytest.approx(0.98**2)
    assert epoch_lr(schedule, 1) == pytest.approx(0.98)
    # Warm-up ramps linearly within the first epoch.
    assert step_lr(schedule, 0, 0, steps_per_epoch=10) == pytest.approx(0.1)
    assert step_lr(schedule, 0, 9, steps_per_epoch=10) == pytest.approx(1.0)
    assert step_lr(schedule, 2, 25, steps_per_epoch=10) == pytest.approx(0.98**2)


def test_zero_epochs_leaves_params_unchanged():
    model = init_model(MICRO, seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    result = train(model, [([1, 2, 3], None)], TrainSchedule(epochs=0), seed=0)
    assert result.steps == 0
    for key, value in model.state_dict().items():
        assert torch.equal(before[key], value)


@pytest.mark.slow
def test_micro_model_overfits_repeated_lines():
    rng = np.random.default_rng(0)
    line = [1, 4, 2, 8, 3, 9, 5]
    samples = [(list(line), None) for _ in range(20)]
    model = init_model(
        ModelConfig(n_layers=1, d_model=32, d_x=32, n_heads=4, n_ctx=16, vocab_size=11,
                    dropout_keep=1.0),
        seed=0,
    )
    schedule = TrainSchedule(
        epochs=1000, batch_size=5, base_lr=3e-3, warmup_epochs=0, decay=1.0,
        max_steps=200,
    )
    result = train(model, samples, schedule, seed=0)
    assert result.steps == 200
    assert result.loss_history[-1] < 0.1 * result.loss_history[0]


def test_divergence_restores_snapshot(monkeypatch):
    # Loss goes NaN in epoch 2; the model must come back as the end-of-epoch-1
    # snapshot, which a clean one-epoch run reproduces exactly.
    schedule = TrainSchedule(epochs=50, batch_size=2, base_lr=1e-3, warmup_epochs=0)
    samples = [([1, 2, 3, 4], None)] * 4

    reference = init_model(MICRO, seed=0)
    clean = train(reference, samples, TrainSchedule(
        epochs=1, batch_size=2, base_lr=1e-3, warmup_epochs=0), seed=0)

    model = init_model(MICRO, seed=0)
    calls = {"n": 0}
    real = compute_loss

    def poisoned(m, batch):
        calls["n"] += 1
        if calls["n"] >= 3:
            return torch.tensor(float("nan"), requires_grad=True)
        return real(m, batch)

    monkeypatch.setattr(training, "compute_loss", poisoned)
    result = train(model, samples, schedule, seed=0)
    assert result.diverged
    for key, value in model.state_dict().items():
        assert torch.equal(clean.model.state_dict()[key], value)


def test_loss_history_recorded_per_step():
    model = init_model(MICRO, seed=0)
    schedule = TrainSchedule(epochs=2, batch_size=2, warmup_epochs=0)
    result = train(model, [([1, 2, 3], None)] * 4, schedule, seed=0)
    assert len(result.loss_history) == result.steps > 0
