"""Corpora: synthetic generation, TSV ingestion, subsampling and tokenisation."""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, DomainError, FormatError

SPLITS = ("train", "dev", "test")
PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
SPECIALS = (PAD, UNK, CLS)
PAD_ID, UNK_ID, CLS_ID = 0, 1, 2

Sample = Tuple[str, int]


@dataclass
class DomainData:
    name: str
    num_classes: int
    train: List[Sample] = field(default_factory=list)
    dev: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)

    def split(self, name: str) -> List[Sample]:
        if name not in SPLITS:
            raise DomainError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass
class Corpus:
    domains: List[DomainData]

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.domains]

    @property
    def classes_per_domain(self) -> List[int]:
        return [d.num_classes for d in self.domains]

    def __len__(self) -> int:
        return len(self.domains)

    def size(self, split: str = "train") -> int:
        return sum(len(d.split(split)) for d in self.domains)

    def to_tsv(self, split: str) -> str:
        buf = io.StringIO()
        for dom in self.domains:
            for text, label in dom.split(split):
                buf.write(f"{dom.name}\t{label}\t{text}\n")
        return buf.getvalue()

    def write_tsv(self, directory) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for split in SPLITS:
            path = directory / f"{split}.tsv"
            path.write_bytes(self.to_tsv(split).encode("utf-8"))
            paths[split] = path
        return paths


# -- synthetic data ----------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Token inventory behind a generated corpus; kept for inspection and tests."""

    patterns: List[List[List[str]]]
    fillers: List[List[str]]


def generate_synthetic_corpus(
    num_domains: int = 3,
    classes: int | Sequence[int] = 2,
    vocab_size: int = 1024,
    sharing: float = 0.5,
    seed: int = 0,
    n_train: int = 2000,
    n_dev: int = 300,
    n_test: int = 300,
    patterns_per_class: int = 4,
    fillers_per_domain: int = 40,
    min_tokens: int = 6,
    max_tokens: int = 24,
    planted: Tuple[int, int] = (2, 3),
    return_spec: bool = False,
):
    """Generate a multi-domain classification corpus with planted label patterns.

    Every sample of class ``c`` contains between ``planted[0]`` and
    ``planted[1]`` tokens drawn from class ``c``'s pattern set and nothing from
    any other class's set, so labels are a deterministic function of the
    text. ``sharing`` is the fraction of each pattern set (and filler pool)
    that is common to all domains; ``sharing=0`` gives disjoint domain
    vocabularies.
    """
    if num_domains < 1:
        raise ConfigurationError("need at least one domain")
    if not 0.0 <= sharing <= 1.0:
        raise ConfigurationError(f"sharing must lie in [0, 1], got {sharing}")
    classes = [classes] * num_domains if isinstance(classes, int) else list(classes)
    if len(classes) != num_domains or min(classes) < 2:
        raise ConfigurationError("need one class count >= 2 per domain")
    lo, hi = planted
    if not 1 <= lo <= hi <= min_tokens <= max_tokens:
        raise ConfigurationError("planted counts must fit inside the shortest sample")

    n_shared_pat = int(round(sharing * patterns_per_class))
    n_shared_fill = int(round(sharing * fillers_per_domain))
    shared_pat = [[f"p{c}x{j}" for j in range(n_shared_pat)] for c in range(max(classes))]
    shared_fill = [f"w{j}" for j in range(n_shared_fill)]
    patterns, fillers = [], []
    for d, n_cls in enumerate(classes):
        patterns.append(
            [shared_pat[c] + [f"d{d}p{c}x{j}" for j in range(n_shared_pat, patterns_per_class)] for c in range(n_cls)]
        )
        fillers.append(shared_fill + [f"d{d}w{j}" for j in range(n_shared_fill, fillers_per_domain)])

    inventory = {tok for dom in patterns for cls in dom for tok in cls} | {tok for f in fillers for tok in f}
    if len(inventory) + len(SPECIALS) > vocab_size:
        raise ConfigurationError(
            f"vocab_size {vocab_size} too small for {len(inventory)} generated words plus {len(SPECIALS)} specials"
        )

    rng = np.random.default_rng(seed)
    sizes = {"train": n_train, "dev": n_dev, "test": n_test}
    domains = []
    for d, n_cls in enumerate(classes):
        seen = set()
        dom = DomainData(f"domain{d}", n_cls)
        for split in SPLITS:
            rows = dom.split(split)
            while len(rows) < sizes[split]:
                label = int(rng.integers(n_cls))
                length = int(rng.integers(min_tokens, max_tokens + 1))
                k = int(rng.integers(lo, hi + 1))
                words = list(rng.choice(fillers[d], size=length - k))
                for tok in rng.choice(patterns[d][label], size=k):
                    words.insert(int(rng.integers(len(words) + 1)), str(tok))
                text = " ".join(str(w) for w in words)
                if text in seen:
                    continue
                seen.add(text)
                rows.append((text, label))
        domains.append(dom)
    corpus = Corpus(domains)
    if return_spec:
        return corpus, SyntheticSpec(patterns, fillers)
    return corpus


# -- ingestion ---------------------------------------------------------------------

def _read_tsv(path) -> List[Tuple[str, int, str, int]]:
    text = Path(path).read_bytes().decode("utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3 or not parts[0]:
            raise FormatError(f"{path}:{lineno}: expected 'domain<TAB>label<TAB>text'")
        try:
            label = int(parts[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
        if label < 0:
            raise FormatError(f"{path}:{lineno}: negative label {label}")
        rows.append((parts[0], label, parts[2], lineno))
    return rows


def ingest_tsv(train, dev=None, test=None) -> Corpus:
    """Read ``domain<TAB>label<TAB>text`` files into a corpus.

    Domains are ordered by first appearance in the training file; dev and
    test may only mention those domains.
    """
    train_rows = _read_tsv(train)
    if not train_rows:
        raise FormatError(f"{train}: no samples")
    domains: Dict[str, DomainData] = {}
    for name, label, text, _ in train_rows:
        dom = domains.setdefault(name, DomainData(name, 0))
        dom.train.append((text, label))
    for split, path in (("dev", dev), ("test", test)):
        if path is None:
            continue
        for name, label, text, lineno in _read_tsv(path):
            if name not in domains:
                raise FormatError(f"{path}:{lineno}: domain {name!r} does not occur in the training split")
            domains[name].split(split).append((text, label))
    for dom in domains.values():
        dom.num_classes = max(max(label for _, label in dom.split(s)) for s in SPLITS if dom.split(s)) + 1
        dom.num_classes = max(dom.num_classes, 2)
    return Corpus(list(domains.values()))


def ingest_dir(directory) -> Corpus:
    directory = Path(directory)
    paths = {s: directory / f"{s}.tsv" for s in SPLITS}
    return ingest_tsv(
        paths["train"],
        paths["dev"] if paths["dev"].exists() else None,
        paths["test"] if paths["test"].exists() else None,
    )


def subsample(corpus: Corpus, rate: float) -> Corpus:
    """Keep the first ``ceil(rate * n)`` training samples of every domain."""
    if not 0.0 < rate <= 1.0:
        raise DomainError(f"sample rate must lie in (0, 1], got {rate}")
    out = []
    for dom in corpus.domains:
        keep = math.ceil(round(rate * len(dom.train), 9))
        out.append(DomainData(dom.name, dom.num_classes, dom.train[:keep], list(dom.dev), list(dom.test)))
    return Corpus(out)


# -- vocabulary and encoding ----------------------------------------------------

class Vocabulary:
    """Whitespace vocabulary: specials first, then words by descending frequency, ties lexicographic."""

    def __init__(self, words: Sequence[str]):
        self.itos = list(words)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if self.itos[: len(SPECIALS)] != list(SPECIALS):
            raise FormatError("vocabulary must start with the special tokens")

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2) -> Vocabulary:
        counts = Counter(tok for text in texts for tok in text.split())
        kept = sorted((w for w, c in counts.items() if c >= min_freq and w not in SPECIALS), key=lambda w: (-counts[w], w))
        return cls(list(SPECIALS) + kept)

    @classmethod
    def from_corpus(cls, corpus: Corpus, min_freq: int = 2) -> Vocabulary:
        return cls.build((text for dom in corpus.domains for text, _ in dom.train), min_freq)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, texts: Sequence[str], max_len: int) -> np.ndarray:
        """``[CLS]`` plus up to ``max_len - 1`` word ids, right-padded with ``[PAD]``."""
        ids = np.full((len(texts), max_len), PAD_ID, dtype=np.int64)
        for i, text in enumerate(texts):
            toks = [CLS_ID] + [self.stoi.get(w, UNK_ID) for w in text.split()][: max_len - 1]
            ids[i, : len(toks)] = toks
        return ids


def attention_mask(token_ids: np.ndarray) -> np.ndarray:
    return np.asarray(token_ids) != PAD_ID


def encode_split(corpus: Corpus, vocab: Vocabulary, split: str, max_len: int):
    """Stack one split of every domain into ``(X, y, domains)`` arrays."""
    X, y, dom = [], [], []
    for d, data in enumerate(corpus.domains):
        rows = data.split(split)
        if not rows:
            continue
        X.append(vocab.encode([t for t, _ in rows], max_len))
        y.append(np.array([label for _, label in rows], dtype=np.int64))
        dom.append(np.full(len(rows), d, dtype=np.int64))
    if not X:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(X), np.concatenate(y), np.concatenate(dom)
