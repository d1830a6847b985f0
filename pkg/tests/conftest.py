import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from interpnet.dataset import SyntheticSpec, generate_synthetic, split  # noqa: E402
from interpnet.explainer import ExplainerConfig, Vocabulary, init_explainer  # noqa: E402
from interpnet.training import train_full  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_records():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def toy_splits(toy_records):
    return split(toy_records, (0.7, 0.15, 0.15), seed=0)


@pytest.fixture(scope="session")
def toy_net(toy_splits):
    """interpnet1 trained on the default synthetic dataset (about 10 s)."""
    train, val, _ = toy_splits
    net, log = train_full(train, val, "interpnet1")
    return net, log


def small_vocab(words=("a", "b")) -> Vocabulary:
    return Vocabulary(["<s>", "<unk>", ".", *words], start_index=0, end_index=2, unk_index=1)


@pytest.fixture
def micro_explainer():
    vocab = small_vocab(("a", "b"))
    cfg = ExplainerConfig(vocab_size=len(vocab), r_dim=2, embed_dim=3, hidden_dim=4, max_decode_len=6)
    return init_explainer(cfg, vocab, seed=3)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
