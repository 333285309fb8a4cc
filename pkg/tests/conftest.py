import numpy as np
import pytest

from convnlu.data import EncodedSplit, LabelMaps, Vocabulary, build_label_maps, build_vocab, encode_split, \
    load_word_vectors
from convnlu.model import ModelConfig, init_model
from convnlu.tensor import IGNORE_INDEX
from convnlu.synthetic import make_corpus, write_corpus, write_vectors


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(240, 60, 80, seed=0)


@pytest.fixture(scope="session")
def encoded(corpus):
    """(vocab, labels, embeddings, {split: EncodedSplit}) for the small synthetic corpus."""
    vocab = build_vocab(corpus["train"])
    labels = build_label_maps(*corpus.values())
    emb, _ = load_word_vectors(None, vocab, 16, seed=0)
    splits = {name: encode_split(ex, vocab, labels, 30) for name, ex in corpus.items()}
    return vocab, labels, emb, splits


@pytest.fixture
def small_model(encoded):
    vocab, labels, emb, _ = encoded

    def make(num_filters=12, task="joint", seed=0, **kw):
        cfg = ModelConfig(embed_dim=16, num_filters=num_filters, kernel_size=3, max_seq_len=30, task=task, **kw)
        return init_model(cfg, emb, labels, vocab, seed)

    return make


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root / "data", corpus)
    tokens = dict.fromkeys(t for ex in corpus["train"] for t in ex.tokens)
    write_vectors(root / "vectors.txt", tokens, 16, seed=0)
    return root


def random_model(rng, C=None, task="joint", d=None, k=None, V=None, I=None, S=None):
    """A JointModel with random weights and a placeholder vocabulary, for algebraic checks."""
    C = C or int(rng.integers(2, 9))
    d = d or int(rng.integers(1, 6))
    k = k or int(rng.choice([1, 3, 5]))
    V = V or int(rng.integers(3, 12))
    I = I or int(rng.integers(2, 6))
    S = S or int(rng.integers(2, 7))
    emb = rng.normal(size=(V, d)).astype(np.float32)
    emb[0] = 0.0
    labels = LabelMaps([f"i{j}" for j in range(I)], ["O"] + [f"B-s{j}" for j in range(S - 1)])
    cfg = ModelConfig(embed_dim=d, num_filters=C, kernel_size=k, max_seq_len=12, task=task)
    vocab = Vocabulary(f"w{j}" for j in range(V - 2))
    model = init_model(cfg, emb, labels, vocab, int(rng.integers(1 << 30)))
    for p in model.parameters().values():
        p.data = rng.normal(size=p.shape).astype(np.float32)
    return model


def atis_shaped_model_and_split(n_test=893, vocab_size=900, seed=0):
    """C=300, k=5, d=100 with 21 intents and 120 slot tags, test lengths drawn from 3..25 tokens."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(f"w{i}" for i in range(vocab_size))
    labels = LabelMaps([f"intent{i}" for i in range(21)], ["O"] + [f"B-s{i}" for i in range(119)])
    emb, _ = load_word_vectors(None, vocab, 100, seed)
    cfg = ModelConfig(embed_dim=100, num_filters=300, kernel_size=5, max_seq_len=50)
    model = init_model(cfg, emb, labels, vocab, seed)
    lens = rng.integers(3, 26, size=n_test)
    tok = np.zeros((n_test, 50), dtype=np.int64)
    slots = np.full((n_test, 50), IGNORE_INDEX, dtype=np.int64)
    for i, n in enumerate(lens):
        tok[i, :n] = rng.integers(2, len(vocab), size=n)
        slots[i, :n] = 0
    return model, EncodedSplit(tok, lens, slots, np.zeros(n_test, dtype=np.int64))
