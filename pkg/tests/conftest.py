import numpy as np
import pytest

from hrkd.config import ModelShape, RunConfig
from hrkd.data import Vocabulary, encode_split, generate_synthetic_corpus


def tiny_config(**overrides) -> RunConfig:
    """A configuration that trains in seconds; used by the integration tests."""
    base = dict(
        teacher=ModelShape(2, 16),
        student=ModelShape(1, 8),
        max_len=12,
        teacher_epochs=2,
        student_epochs=2,
        batch_size=8,
        teacher_lr=3e-3,
        student_lr=3e-3,
        num_domains=2,
        n_train=48,
        n_dev=16,
        n_test=16,
        vocab_budget=256,
    )
    base.update(overrides)
    return RunConfig(**base)


def tiny_corpus(cfg: RunConfig):
    return generate_synthetic_corpus(
        num_domains=cfg.num_domains, classes=cfg.classes, vocab_size=cfg.vocab_budget, sharing=cfg.sharing,
        seed=cfg.seed, n_train=cfg.n_train, n_dev=cfg.n_dev, n_test=cfg.n_test,
        min_tokens=6, max_tokens=10,
    )


@pytest.fixture(scope="session")
def tiny():
    cfg = tiny_config()
    corpus = tiny_corpus(cfg)
    vocab = Vocabulary.from_corpus(corpus, cfg.min_freq)
    X, y, d = encode_split(corpus, vocab, "train", cfg.max_len)
    return cfg, corpus, vocab, (X, y, d)


@pytest.fixture(scope="session")
def fitted_teacher(tiny):
    from hrkd.estimators import MultiDomainTeacher

    cfg, corpus, vocab, (X, y, d) = tiny
    teacher = MultiDomainTeacher(num_layers=2, hidden=16, max_len=cfg.max_len, vocab_size=len(vocab),
                                 learning_rate=3e-3, epochs=2, batch_size=8)
    return teacher.fit(X, y, d, classes_per_domain=corpus.classes_per_domain)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
