"""Dataset loaders, the synthetic Markov-chain generator, and model files.

Model file layout (all integers and reals little-endian)::

    b"DSEQ1"                       magic
    u32                            format version
    u32 n, then n strings          label alphabet
    u32 n, then n u32              layer sizes
    arrays                         encoder layers, W, c, A, b, pi, tau
    string                         config snapshot (key=value text)
    u64                            checksum of every preceding byte

A string is a u32 byte length followed by UTF-8 bytes. An array is a u32
rank, one u64 per dimension, then float64 values in row-major order. The
checksum is an 8-byte BLAKE2b digest.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_config_text
from .core import Dataset, FoldAssignment, LabelAlphabet, LabeledSequence
from .crf import CrfParams
from .nn import EncoderWeights, TopLayer

OCR_LETTERS = tuple("abcdefghijklmnopqrstuvwxyz")
OCR_PIXELS = 128

MAGIC = b"DSEQ1"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed dataset file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)


class ModelFormatError(ValueError):
    pass


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


# -- OCR letters -------------------------------------------------------------

@dataclass
class _OcrRow:
    line: int
    letter_id: int
    letter: str
    next_id: int
    word_id: int
    position: int
    fold: int
    pixels: np.ndarray


def _parse_ocr_line(text, lineno):
    fields = text.rstrip("\r\n").rstrip("\t").split("\t")
    if len(fields) != 6 + OCR_PIXELS:
        raise DataFormatError("expected %d tab-separated fields, found %d"
                              % (6 + OCR_PIXELS, len(fields)), lineno)
    try:
        letter_id, next_id, word_id, position, fold = (int(fields[i]) for i in (0, 2, 3, 4, 5))
        pixels = np.array([int(p) for p in fields[6:]], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError("non-integer field (%s)" % exc, lineno) from None
    letter = fields[1]
    if letter not in OCR_LETTERS:
        raise DataFormatError("letter %r is not in a-z" % letter, lineno)
    bad = np.flatnonzero((pixels != 0) & (pixels != 1))
    if bad.size:
        raise DataFormatError("pixel %d has value %g, expected 0 or 1"
                              % (bad[0] + 1, pixels[bad[0]]), lineno)
    return _OcrRow(lineno, letter_id, letter, next_id, word_id, position, fold, pixels)


def read_ocr(path) -> tuple[Dataset, FoldAssignment]:
    """Load the OCR letter file and its own fold column.

    Words are assembled by following ``next_id`` links from each chain head
    (a letter no other letter points to) until ``next_id == -1``.
    """
    rows = {}
    with _open_text(path) as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            row = _parse_ocr_line(text, lineno)
            if row.letter_id in rows:
                raise DataFormatError("duplicate letter id %d" % row.letter_id, lineno)
            rows[row.letter_id] = row
    if not rows:
        raise DataFormatError("no letters in %s" % path)

    pointed = set()
    for row in rows.values():
        if row.next_id != -1:
            if row.next_id not in rows:
                raise DataFormatError("next_id %d points to a missing letter" % row.next_id, row.line)
            if row.next_id in pointed:
                raise DataFormatError("letter %d is linked from two letters" % row.next_id, row.line)
            pointed.add(row.next_id)

    alphabet = LabelAlphabet(OCR_LETTERS)
    heads = sorted((r for r in rows.values() if r.letter_id not in pointed), key=lambda r: r.line)
    sequences, folds, visited = [], {}, 0
    for head in heads:
        chain, row = [], head
        while True:
            chain.append(row)
            if row.next_id == -1:
                break
            row = rows[row.next_id]
        visited += len(chain)
        sid = str(head.word_id)
        if sid in folds:
            sid = "%d.%d" % (head.word_id, head.letter_id)
        frames = np.stack([r.pixels for r in chain])
        labels = [alphabet.index(r.letter) for r in chain]
        sequences.append(LabeledSequence(frames, labels, sid))
        folds[sid] = head.fold
    if visited != len(rows):
        line = min(r.line for r in rows.values())
        raise DataFormatError("next_id links form a cycle; %d letters unreachable"
                              % (len(rows) - visited), line)
    k = max(folds.values()) + 1
    if min(folds.values()) < 0:
        raise DataFormatError("negative fold index")
    return Dataset(tuple(sequences), alphabet, OCR_PIXELS), FoldAssignment(k, folds, None)


def load_ocr(path) -> Dataset:
    return read_ocr(path)[0]


def write_ocr(dataset: Dataset, path, folds: FoldAssignment | None = None, first_id: int = 1):
    """Write a dataset of 128-pixel binary frames in the OCR letter format."""
    lines = []
    next_letter = first_id
    for word_no, seq in enumerate(dataset, 1):
        fold = folds.assignment[seq.id] if folds else 0
        ids = list(range(next_letter, next_letter + seq.T))
        next_letter += seq.T
        for pos, (lid, frame, lab) in enumerate(zip(ids, seq.frames, seq.labels), 1):
            nxt = ids[pos] if pos < seq.T else -1
            pix = "\t".join(str(int(p)) for p in frame)
            lines.append("%d\t%s\t%d\t%d\t%d\t%d\t%s\n"
                         % (lid, dataset.alphabet.name(int(lab)), nxt, word_no, pos, fold, pix))
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8") as fh:
        fh.writelines(lines)


# -- generic line-delimited records --------------------------------------------

def read_generic_records(path) -> list[dict]:
    """Parse and validate records; ``labels`` may be absent (unlabeled data)."""
    records = []
    width = None
    with _open_text(path) as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DataFormatError("invalid record (%s)" % exc.msg, lineno) from None
            if not isinstance(rec, dict) or "frames" not in rec:
                raise DataFormatError("record must be an object with 'frames'", lineno)
            frames = rec["frames"]
            if not isinstance(frames, list) or not frames:
                raise DataFormatError("'frames' must be a non-empty list", lineno)
            try:
                arr = np.array(frames, dtype=np.float64)
            except (ValueError, TypeError):
                raise DataFormatError("ragged or non-numeric frames", lineno) from None
            if arr.ndim != 2:
                raise DataFormatError("ragged frames", lineno)
            if not np.all(np.isfinite(arr)):
                raise DataFormatError("non-finite frame value", lineno)
            if width is None:
                width = arr.shape[1]
            elif arr.shape[1] != width:
                raise DataFormatError("frame width %d differs from %d" % (arr.shape[1], width), lineno)
            labels = rec.get("labels")
            if labels is not None:
                if not isinstance(labels, list) or len(labels) != arr.shape[0]:
                    raise DataFormatError("%s labels for %d frames"
                                          % (len(labels) if isinstance(labels, list) else "invalid",
                                             arr.shape[0]), lineno)
                labels = [str(l) for l in labels]
            rid = str(rec.get("id", "seq%d" % (len(records) + 1)))
            records.append({"id": rid, "labels": labels, "frames": arr, "line": lineno})
    if not records:
        raise DataFormatError("no records in %s" % path)
    return records


def load_generic(path, alphabet: LabelAlphabet | None = None) -> Dataset:
    """Load labeled records. Without ``alphabet``, one is built from labels in
    first-seen order; with it, unknown labels are an error."""
    records = read_generic_records(path)
    for rec in records:
        if rec["labels"] is None:
            raise DataFormatError("record %r has no labels" % rec["id"], rec["line"])
    if alphabet is None:
        try:
            alphabet = LabelAlphabet.from_observed(r["labels"] for r in records)
        except ValueError as exc:
            raise DataFormatError(str(exc)) from None
    seqs = []
    for rec in records:
        try:
            y = alphabet.encode(rec["labels"])
        except KeyError as exc:
            raise DataFormatError(str(exc.args[0]), rec["line"]) from None
        seqs.append(LabeledSequence(rec["frames"], y, rec["id"]))
    try:
        return Dataset(tuple(seqs), alphabet, records[0]["frames"].shape[1])
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def dump_generic(dataset: Dataset) -> str:
    out = io.StringIO()
    for seq in dataset:
        rec = {"id": seq.id, "labels": dataset.alphabet.decode(seq.labels),
               "frames": seq.frames.tolist()}
        out.write(json.dumps(rec) + "\n")
    return out.getvalue()


def save_generic(dataset: Dataset, path):
    _atomic_write(path, dump_generic(dataset).encode("utf-8"))


# -- synthetic generator -------------------------------------------------------

@dataclass(frozen=True)
class SyntheticHmmSpec:
    K: int = 3
    d: int = 6
    transition_strength: float = 0.9
    emission_noise: float = 1.0
    N: int = 200
    T_range: tuple[int, int] = (8, 16)
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.transition_strength <= 1.0:
            raise ValueError("transition_strength must lie in [0, 1]")
        if self.emission_noise < 0:
            raise ValueError("emission_noise must be >= 0")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        lo, hi = self.T_range
        if lo < 1 or hi < lo:
            raise ValueError("T_range must satisfy 1 <= min <= max")


@dataclass
class SyntheticParams:
    """The generating process: initial distribution, transition matrix,
    per-state emission means and the Gaussian noise scale."""

    initial: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    noise: float


def synthetic_params(spec: SyntheticHmmSpec) -> SyntheticParams:
    K = spec.K
    s = spec.transition_strength
    P = np.full((K, K), (1.0 - s) / (K - 1))
    for k in range(K):
        P[k, (k + 1) % K] = s
    means = np.zeros((K, spec.d))
    for k in range(K):
        means[k, np.arange(spec.d) % K == k] = 1.0
    return SyntheticParams(np.full(K, 1.0 / K), P, means, spec.emission_noise)


def gen_synthetic(spec: SyntheticHmmSpec) -> tuple[Dataset, SyntheticParams]:
    """Sample ``N`` labeled sequences from a Markov chain with Gaussian emissions.

    Each state moves to ``(k + 1) mod K`` with probability
    ``transition_strength`` and to each other state uniformly otherwise.
    State ``k`` emits around a mean with ones on dimensions ``j`` where
    ``j mod K == k``.
    """
    params = synthetic_params(spec)
    rng = np.random.default_rng(spec.seed)
    K = spec.K
    lo, hi = spec.T_range
    alphabet = LabelAlphabet(tuple("s%d" % k for k in range(K)))
    seqs = []
    for i in range(spec.N):
        T = int(rng.integers(lo, hi + 1))
        y = np.empty(T, dtype=np.int64)
        y[0] = rng.choice(K, p=params.initial)
        for t in range(1, T):
            y[t] = rng.choice(K, p=params.transition[y[t - 1]])
        x = params.means[y] + spec.emission_noise * rng.standard_normal((T, spec.d))
        seqs.append(LabeledSequence(x, y, "seq%d" % i))
    return Dataset(tuple(seqs), alphabet, spec.d), params


# -- model files -------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    head = struct.pack("<I", a.ndim) + struct.pack("<%dQ" % a.ndim, *a.shape)
    return head + a.tobytes(order="C")


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def model_to_bytes(model) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", model.alphabet.K))
    parts.extend(_pack_str(name) for name in model.alphabet.labels)
    sizes = model.omega.layer_sizes
    parts.append(struct.pack("<I", len(sizes)) + struct.pack("<%dI" % len(sizes), *sizes))
    th = model.theta
    for arr in [*model.omega.layers, th.W, th.c, th.A, th.b, th.pi, th.tau]:
        parts.append(_pack_array(arr))
    parts.append(_pack_str(model.config.to_text()))
    payload = b"".join(parts)
    return payload + _checksum(payload)


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data, self.pos = data, pos

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError("invalid UTF-8 string") from None

    def array(self, shape):
        ndim = self.u32()
        dims = struct.unpack("<%dQ" % ndim, self.take(8 * ndim))
        if tuple(dims) != tuple(shape):
            raise ModelFormatError("array shape %s does not match declared %s" % (dims, tuple(shape)))
        n = int(np.prod(dims)) if dims else 1
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)


def model_from_bytes(data: bytes):
    from .trainer import ModelState

    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(data) < len(MAGIC) + 12:
        raise ModelFormatError("model file truncated")
    payload, stored = data[:-8], data[-8:]
    if _checksum(payload) != stored:
        raise ModelFormatError("checksum mismatch")
    r = _Reader(payload, len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ModelFormatError("unsupported format version %d" % version)
    K = r.u32()
    labels = tuple(r.string() for _ in range(K))
    n_sizes = r.u32()
    sizes = struct.unpack("<%dI" % n_sizes, r.take(4 * n_sizes))
    if n_sizes < 2:
        raise ModelFormatError("need at least two layer sizes")
    layers = [r.array((a + 1, b)) for a, b in zip(sizes, sizes[1:])]
    H = sizes[-1]
    W, c = r.array((H, K)), r.array((K,))
    A, b = r.array((K, K)), r.array((K,))
    pi, tau = r.array((K,)), r.array((K,))
    cfg_text = r.string()
    if r.pos != len(payload):
        raise ModelFormatError("trailing bytes after config")
    try:
        config = TrainConfig.from_mapping(parse_config_text(cfg_text))
        return ModelState(EncoderWeights(layers), CrfParams(A, b, pi, tau, TopLayer(W, c)),
                          LabelAlphabet(labels), config)
    except ValueError as exc:
        raise ModelFormatError("inconsistent model: %s" % exc) from None


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model, path):
    _atomic_write(path, model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
