"""Synthetic algorithmic tasks, tokenisation and batching.

Every sample is a pure function of ``(task, seed, split, index)``: the
generator for sample ``i`` is seeded from those four values alone, so any
index range can be produced independently and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, LengthError, VocabularyError
from .tensor import Rng

PAD, BOS, EOS = 0, 1, 2
SYMBOLS = ["<pad>", "<bos>", "<eos>"] + [str(i) for i in range(10)] + ["+"]
TOKEN_ID = {s: i for i, s in enumerate(SYMBOLS)}
VOCAB_SIZE = len(SYMBOLS)

TASKS = ("copy", "reverse", "addition", "double")
SPLITS = ("train", "in", "out")


def tokenize(text: str) -> list:
    try:
        return [TOKEN_ID[ch] for ch in text]
    except KeyError as exc:
        raise VocabularyError(f"character {exc.args[0]!r} is not in the vocabulary") from None


def detokenize(ids: Sequence[int]) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        if not 0 <= i < VOCAB_SIZE:
            raise VocabularyError(f"token id {i} outside vocabulary of size {VOCAB_SIZE}")
        out.append(SYMBOLS[i])
    return "".join(out)


@dataclass
class TaskSample:
    src: list
    tgt: list  # ends with EOS
    offset: int = 0

    @property
    def src_text(self) -> str:
        return detokenize(self.src)

    @property
    def tgt_text(self) -> str:
        return detokenize(self.tgt)


def _sample(src: str, tgt: str) -> TaskSample:
    return TaskSample(tokenize(src), tokenize(tgt) + [EOS])


def _digits(rng: Rng, n: int) -> str:
    return "".join(str(d) for d in rng.integers(0, 10, n))


def _number(rng: Rng, n_digits: int) -> str:
    """Uniform number with exactly ``n_digits`` digits (no leading zero; '0' allowed for one digit)."""
    if n_digits == 1:
        return str(int(rng.integers(0, 10)))
    return str(int(rng.integers(1, 10))) + _digits(rng, n_digits - 1)


def _check_len(length: int) -> None:
    if length < 1:
        raise LengthError(f"sequence length must be >= 1, got {length}")


def gen_copy(length: int, rng: Rng) -> TaskSample:
    _check_len(length)
    s = _digits(rng, length)
    return _sample(s, s)


def gen_reverse(length: int, rng: Rng) -> TaskSample:
    _check_len(length)
    s = _digits(rng, length)
    return _sample(s, s[::-1])


def gen_addition(length: int, rng: Rng) -> TaskSample:
    """a+b with each operand's digit count uniform in [1, length], then value-uniform."""
    _check_len(length)
    a = _number(rng, int(rng.integers(1, length + 1)))
    b = _number(rng, int(rng.integers(1, length + 1)))
    return _sample(f"{a}+{b}", str(int(a) + int(b)))


def gen_double(length: int, rng: Rng) -> TaskSample:
    _check_len(length)
    s = _number(rng, length)
    return _sample(s, str(2 * int(s)))


GENERATORS = {"copy": gen_copy, "reverse": gen_reverse, "addition": gen_addition,
              "double": gen_double}


def sample_offset(rng: Rng, max_offset: int) -> int:
    if max_offset < 0:
        raise ConfigError(f"max_offset must be >= 0, got {max_offset}")
    return int(rng.integers(0, max_offset + 1))


@dataclass
class SplitSpec:
    """Length protocol for a task.

    ``train`` and ``in`` draw lengths uniformly from [min_len, train_len];
    ``out`` uses exactly ``eval_len`` unless ``eval_min_len`` is set, in which
    case lengths are uniform in [eval_min_len, eval_len].
    """

    train_len: int = 12
    eval_len: int = 24
    min_len: int = 1
    eval_min_len: Optional[int] = None
    max_offset: Optional[int] = None  # None -> eval_len - train_len

    def problems(self) -> list:
        out = []
        if self.min_len < 1:
            out.append(f"min_len must be >= 1, got {self.min_len}")
        if self.train_len < self.min_len:
            out.append(f"train_len ({self.train_len}) must be >= min_len ({self.min_len})")
        lo = self.eval_len if self.eval_min_len is None else self.eval_min_len
        if lo <= self.train_len:
            out.append(f"extrapolation lengths (from {lo}) must exceed train_len "
                       f"({self.train_len})")
        if self.eval_min_len is not None and self.eval_min_len > self.eval_len:
            out.append("eval_min_len must be <= eval_len")
        if self.max_offset is not None and self.max_offset < 0:
            out.append(f"max_offset must be >= 0, got {self.max_offset}")
        return out

    def validate(self) -> "SplitSpec":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def offset_limit(self) -> int:
        return self.eval_len - self.train_len if self.max_offset is None else self.max_offset

    def length_range(self, split: str) -> tuple:
        if split in ("train", "in"):
            return self.min_len, self.train_len
        if split == "out":
            return (self.eval_len if self.eval_min_len is None else self.eval_min_len,
                    self.eval_len)
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")


def sample_at(task: str, spec: SplitSpec, seed: int, split: str, index: int) -> TaskSample:
    """The ``index``-th sample of a (task, seed, split) stream."""
    if task not in GENERATORS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    lo, hi = spec.length_range(split)
    rng = Rng(seed, TASKS.index(task), SPLITS.index(split), index)
    length = int(rng.integers(lo, hi + 1))
    sample = GENERATORS[task](length, rng)
    if split == "train":
        sample.offset = sample_offset(rng, spec.offset_limit)
    return sample


def dataset(task: str, spec: SplitSpec, seed: int, split: str = "train",
            start: int = 0) -> Iterator[TaskSample]:
    """Endless reproducible stream of samples. Evaluation splits use offset 0."""
    spec.validate()
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    i = start
    while True:
        yield sample_at(task, spec, seed, split, i)
        i += 1


def take(task: str, spec: SplitSpec, seed: int, split: str, n: int, start: int = 0) -> list:
    return [sample_at(task, spec, seed, split, i) for i in range(start, start + n)]


@dataclass
class Batch:
    src: np.ndarray  # (B, Ls) int64, PAD-filled
    tgt_in: np.ndarray  # (B, Lt)
    tgt_out: np.ndarray  # (B, Lt)
    src_mask: np.ndarray  # (B, Ls) bool, True on real tokens
    tgt_mask: np.ndarray  # (B, Lt)
    offsets: np.ndarray  # (B,)

    def __len__(self) -> int:
        return self.src.shape[0]


def make_batch(samples: Sequence[TaskSample], src_len: Optional[int] = None,
               tgt_len: Optional[int] = None) -> Batch:
    """Pad samples into matrices; decoder inputs are targets shifted right behind BOS."""
    if not samples:
        raise LengthError("make_batch needs at least one sample")
    Ls = max(len(s.src) for s in samples) if src_len is None else src_len
    Lt = max(len(s.tgt) for s in samples) if tgt_len is None else tgt_len
    B = len(samples)
    src = np.full((B, Ls), PAD, dtype=np.int64)
    tgt_out = np.full((B, Lt), PAD, dtype=np.int64)
    tgt_in = np.full((B, Lt), PAD, dtype=np.int64)
    for b, s in enumerate(samples):
        if len(s.src) > Ls or len(s.tgt) > Lt:
            raise LengthError(f"sample {b} (src {len(s.src)}, tgt {len(s.tgt)}) exceeds "
                              f"batch lengths ({Ls}, {Lt})")
        src[b, :len(s.src)] = s.src
        tgt_out[b, :len(s.tgt)] = s.tgt
        tgt_in[b, 0] = BOS
        tgt_in[b, 1:len(s.tgt)] = s.tgt[:-1]
    offsets = np.array([s.offset for s in samples], dtype=np.int64)
    return Batch(src, tgt_in, tgt_out, src != PAD, tgt_out != PAD, offsets)


def write_tsv(samples: Sequence[TaskSample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(f"{s.src_text}\t{s.tgt_text}\n")


def read_tsv(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            src, tgt = line.rstrip("\n").split("\t")
            out.append(_sample(src, tgt))
    return out
