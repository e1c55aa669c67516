import numpy as np
import pytest

from scnn import corpus, embeddings, synth
from scnn.model import HyperParams
from scnn.rng import Rng

TOY_HP = HyperParams(
    adam_b2=0.999,
    n_dense_output=16,
    keep_prob=0.9,
    batch_size=10,
    learning_rate=0.01,
    word_embedding="godin",
    n_filters=8,
    filter_sizes=(1, 2, 2, 2, 3),
)


def toy_hp(**overrides) -> HyperParams:
    from dataclasses import replace

    return replace(TOY_HP, **overrides)


def synth_arrays(seed: int, n_train: int, n_test: int = 0, dim: int = 16):
    """Embedded synthetic corpus: (train_ex, docs, labels[, test...])."""
    rng = Rng(seed)
    table = synth.make_embedding_table(rng, dim=dim)
    train_ex = synth.make_examples(rng.substream("train"), n_train, "tr")
    docs = embeddings.lookup_docs(table, corpus.to_token_seqs(train_ex))
    labels = np.asarray([ex.label for ex in train_ex], dtype=np.int64)
    if not n_test:
        return train_ex, docs, labels
    test_ex = synth.make_examples(rng.substream("test"), n_test, "te")
    test_docs = embeddings.lookup_docs(table, corpus.to_token_seqs(test_ex))
    test_labels = np.asarray([ex.label for ex in test_ex], dtype=np.int64)
    return train_ex, docs, labels, test_ex, test_docs, test_labels


@pytest.fixture(scope="session")
def toy_corpus():
    return synth_arrays(1234, 60)
