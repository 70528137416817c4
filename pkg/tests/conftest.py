import numpy as np
import pytest

from mtbert.data import synthetic_corpus
from mtbert.encoder import EncoderConfig, Vocab
from mtbert.heads import HeadConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthetic_corpus(40, seed=3, vocab_size=30)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    texts = []
    for splits in tiny_corpus.values():
        for e in splits["train"]:
            texts.append(e.text_a)
            if e.text_b:
                texts.append(e.text_b)
    return Vocab.build(texts)


@pytest.fixture
def tiny_enc_cfg(tiny_vocab):
    return EncoderConfig(vocab_size=len(tiny_vocab), hidden_dim=8, layers=2, heads=2, max_seq_len=16,
                         ff_dim=16, dropout_p=0.0)


@pytest.fixture
def tiny_head_cfg():
    return HeadConfig(hidden_dim=8, shared_dim=8, dense_dim=8, dropout_p=0.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        RESULTS = module.RESULTS
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
