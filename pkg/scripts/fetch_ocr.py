"""Build ``data/letter.data.gz`` in the OCR letter format.

The original letter file host is often unreachable, so this pulls the copy
bundled in the pystruct 0.3.2 wheel on PyPI (pinned by sha256) and rewrites
it as tab-separated letter rows: 6,877 words, 52,152 letters, 10 folds.
Letter ids are renumbered; word order, labels, pixels and the fold column
are preserved.

Usage::

    python scripts/fetch_ocr.py [--out data/letter.data.gz] [--wheel path/to.whl]
"""

import argparse
import hashlib
import io
import pickle
import sys
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

from deepcrf.core import Dataset, FoldAssignment, LabelAlphabet, LabeledSequence
from deepcrf.dataio import OCR_LETTERS, write_ocr

WHEEL_URL = ("https://pypi.org/packages/f2/15/f7f8bc0dea0e25c9026947a13ea0c75942d75b1bbfc1f582e60d7721e386/"
             "pystruct-0.3.2-cp27-cp27m-win_amd64.whl")
WHEEL_SHA256 = "5c762e7260a17396ab3bc3dccddf5e462dc92ee10719ef197380895352e8220f"


def fetch_wheel(path=None) -> bytes:
    if path:
        data = Path(path).read_bytes()
    else:
        with urllib.request.urlopen(WHEEL_URL, timeout=120) as resp:
            data = resp.read()
    digest = hashlib.sha256(data).hexdigest()
    if digest != WHEEL_SHA256:
        sys.exit("wheel sha256 mismatch: %s" % digest)
    return data


def convert(wheel: bytes, out: Path):
    with zipfile.ZipFile(io.BytesIO(wheel)) as zf:
        raw = pickle.loads(zf.read("pystruct/datasets/letters.pickle"), encoding="latin1")
    alphabet = LabelAlphabet(OCR_LETTERS)
    seqs, folds = [], {}
    for i, (frames, labels) in enumerate(zip(raw["data"], raw["labels"])):
        sid = str(i + 1)
        seqs.append(LabeledSequence(np.asarray(frames, dtype=np.float64), np.asarray(labels), sid))
        folds[sid] = int(raw["folds"][i])
    dataset = Dataset(tuple(seqs), alphabet, 128)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ocr(dataset, out, FoldAssignment(max(folds.values()) + 1, folds))
    print("wrote %s: %d words, %d letters" % (out, dataset.N, dataset.n_frames))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="data/letter.data.gz", type=Path)
    p.add_argument("--wheel", help="use a local copy of the pinned wheel")
    args = p.parse_args()
    convert(fetch_wheel(args.wheel), args.out)


if __name__ == "__main__":
    main()
