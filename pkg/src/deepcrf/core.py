"""Domain types shared across the package: label alphabets, labeled
sequences, datasets and fold assignments.

All types are frozen after construction. Arrays are stored read-only so a
``Dataset`` can be shared between workers without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class LabelAlphabet:
    """Ordered set of label names with a bijective name <-> index map."""

    labels: tuple[str, ...]
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        if len(labels) < 2:
            raise ValueError("a label alphabet needs at least 2 labels, got %d" % len(labels))
        if len(set(labels)) != len(labels):
            raise ValueError("label names must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(labels)})

    @property
    def K(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError("label %r is not in the alphabet" % (name,)) from None

    def name(self, index: int) -> str:
        if not 0 <= index < self.K:
            raise IndexError("label index %d out of range for K=%d" % (index, self.K))
        return self.labels[index]

    def encode(self, names: Iterable[str]) -> np.ndarray:
        return np.array([self.index(n) for n in names], dtype=np.int64)

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.name(int(i)) for i in indices]

    @classmethod
    def from_observed(cls, label_lists: Iterable[Iterable[str]]) -> "LabelAlphabet":
        """Build an alphabet from labels in first-seen order."""
        seen: dict[str, None] = {}
        for labels in label_lists:
            for name in labels:
                seen.setdefault(name, None)
        return cls(tuple(seen))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    """One time series: ``frames`` is ``[T, d]``, ``labels`` holds ``T`` label indices."""

    frames: np.ndarray
    labels: np.ndarray
    id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("frames must be a 2-d array [T, d], got shape %s" % (frames.shape,))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if frames.shape[0] < 1:
            raise ValueError("sequence %r is empty" % self.id)
        if labels.shape[0] != frames.shape[0]:
            raise ValueError("sequence %r has %d frames but %d labels"
                             % (self.id, frames.shape[0], labels.shape[0]))
        if np.any(labels < 0):
            raise ValueError("negative label index in sequence %r" % self.id)
        object.__setattr__(self, "frames", _readonly(frames))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "id", str(self.id))

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.T


@dataclass(frozen=True, eq=False)
class Dataset:
    sequences: tuple[LabeledSequence, ...]
    alphabet: LabelAlphabet
    d: int

    def __post_init__(self):
        seqs = tuple(self.sequences)
        K = self.alphabet.K
        for s in seqs:
            if s.d != self.d:
                raise ValueError("sequence %r has frame dimension %d, dataset has d=%d"
                                 % (s.id, s.d, self.d))
            if s.labels.max() >= K:
                raise ValueError("sequence %r references label index %d outside K=%d"
                                 % (s.id, int(s.labels.max()), K))
        ids = [s.id for s in seqs]
        if len(set(ids)) != len(ids):
            raise ValueError("sequence ids must be unique")
        object.__setattr__(self, "sequences", seqs)

    @property
    def N(self) -> int:
        return len(self.sequences)

    @property
    def K(self) -> int:
        return self.alphabet.K

    @property
    def n_frames(self) -> int:
        return sum(s.T for s in self.sequences)

    def __len__(self):
        return self.N

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.sequences[i] for i in indices), self.alphabet, self.d)

    def all_frames(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros((0, self.d))
        return np.concatenate([s.frames for s in self.sequences], axis=0)

    def all_labels(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([s.labels for s in self.sequences])


@dataclass(frozen=True)
class FoldAssignment:
    """Mapping from sequence id to fold index in ``range(k)``."""

    k: int
    assignment: Mapping[str, int]
    seed: int | None = None

    def fold_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts

    def train_test(self, dataset: Dataset, fold: int) -> tuple[Dataset, Dataset]:
        """Split ``dataset`` into (all other folds, held-out ``fold``)."""
        train = [i for i, s in enumerate(dataset) if self.assignment[s.id] != fold]
        test = [i for i, s in enumerate(dataset) if self.assignment[s.id] == fold]
        return dataset.subset(train), dataset.subset(test)


def encode_onehot(label_index: int, K: int) -> np.ndarray:
    if K < 1 or not 0 <= label_index < K:
        raise ValueError("label index %r out of range for K=%r" % (label_index, K))
    out = np.zeros(K)
    out[label_index] = 1.0
    return out


def onehot_rows(labels: Sequence[int] | np.ndarray, K: int) -> np.ndarray:
    """Stack one-hot rows for a label sequence, shape ``[T, K]``."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], K))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def split_folds(dataset: Dataset, k: int, seed: int) -> FoldAssignment:
    """Assign whole sequences to ``k`` folds of near-equal size.

    The sequence order is permuted with ``seed`` and dealt round-robin, so
    fold sizes differ by at most one.
    """
    if k < 2:
        raise ValueError("need at least 2 folds, got k=%d" % k)
    if k > dataset.N:
        raise ValueError("cannot split %d sequences into %d folds" % (dataset.N, k))
    order = np.random.default_rng(seed).permutation(dataset.N)
    assignment = {}
    for rank, i in enumerate(order):
        assignment[dataset.sequences[int(i)].id] = rank % k
    # keep dataset order in the mapping for stable iteration
    assignment = {s.id: assignment[s.id] for s in dataset}
    return FoldAssignment(k=k, assignment=assignment, seed=seed)
