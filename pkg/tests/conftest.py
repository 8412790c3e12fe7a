import pytest

from linecomplete.decoder import TransformerAdapter
from linecomplete.lexnorm import EMPTY_LITERAL_TABLE, lex, normalize
from linecomplete.model import ModelConfig, init_model
from linecomplete.service import CompletionEngine
from linecomplete.training import TrainSchedule, train
from linecomplete.vocab import encode, train_bpe

MICRO_LINES = [
    "def load(name):",
    "    data = read(name)",
    "    total = count(data)",
    "    return total",
    'value = load("config")',
    "print(value)",
]
MICRO_SOURCE = "\n".join(MICRO_LINES) + "\n"


@pytest.fixture(scope="session")
def trained_setup():
    """A micro transformer memorizing a six-line toy-py file, plus its
    vocabulary; shared by service/CLI tests to keep the suite fast."""
    stream = normalize(lex(MICRO_SOURCE, "toy-py"), EMPTY_LITERAL_TABLE)
    vocabulary = train_bpe([stream], 320)
    ids = encode(stream, vocabulary)
    config = ModelConfig(
        n_layers=2, d_model=64, d_x=64, n_heads=4, n_ctx=96,
        vocab_size=vocabulary.size, dropout_keep=1.0,
    )
    model = init_model(config, seed=0)
    schedule = TrainSchedule(
        epochs=100_000, batch_size=4, base_lr=3e-3, warmup_epochs=0,
        decay=1.0, max_steps=400, target_loss=0.03,
    )
    result = train(model, [(ids, None)] * 8, schedule, seed=0)
    assert result.final_loss < 0.1, "fixture model failed to memorize"
    return {
        "source": MICRO_SOURCE,
        "stream": stream,
        "vocabulary": vocabulary,
        "model": result.model,
        "ids": ids,
    }


@pytest.fixture(scope="session")
def trained_engine(trained_setup):
    return CompletionEngine(
        TransformerAdapter(trained_setup["model"]),
        trained_setup["vocabulary"],
        EMPTY_LITERAL_TABLE,
        model_digest="fixture-micro",
    )
