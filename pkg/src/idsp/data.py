"""Dataset CSV I/O and synthetic PDA/UDA task generation.

CSV schema, one row per sample, header required::

    id,domain,label,f0,f1,...,f{d-1}

``domain`` is ``s`` or ``t``; ``label`` is ``-1`` for an unlabelled target
row. Loaded datasets are reordered source-first (stable within each
domain); ``ids`` keeps the original identifiers in the new order.
"""

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    is_target: np.ndarray
    source_labels: np.ndarray
    class_count: int
    target_truth: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(np.count_nonzero(~self.is_target))
        if self.is_target[:n].any():
            raise InputError("dataset must be ordered source block first")
        if self.source_labels.size != n:
            raise InputError("source label count does not match source samples")
        if self.ids is None:
            object.__setattr__(self, "ids", np.array([str(i) for i in range(self.X.shape[0])]))

    @property
    def n(self):
        return self.source_labels.size

    @property
    def m(self):
        return self.X.shape[0] - self.n

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def domains(self):
        return np.where(self.is_target, "t", "s")

    @property
    def is_pda(self):
        """True when target labels form a strict subset of source labels (needs truth)."""
        if self.target_truth is None:
            return None
        return set(np.unique(self.target_truth)) < set(np.unique(self.source_labels))


@dataclass(frozen=True)
class SynthTaskSpec:
    class_count: int = 4
    private_source_classes: int = 2
    samples_per_class: int = 60
    dim: int = 10
    separation: float = 4.0
    shift: float = 1.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 1 or self.samples_per_class < 1 or self.dim < 1:
            raise InputError("class_count, samples_per_class and dim must all be >= 1")
        if not 0 <= self.private_source_classes < self.class_count:
            raise InputError("private_source_classes must lie in [0, class_count)")
        if self.noise < 0 or self.separation < 0 or self.shift < 0:
            raise InputError("separation, shift and noise must be nonnegative")


def _parse_label(text, lineno):
    try:
        value = int(text)
    except ValueError:
        raise InputError(f"line {lineno}: label {text!r} is not an integer") from None
    if value < -1:
        raise InputError(f"line {lineno}: label {value} must be >= -1")
    return value


def read_dataset(stream, class_count=None, target_truth=None, name="<stream>"):
    """Parse the dataset CSV from a text stream.

    ``target_truth``: None infers from the file (all target rows labelled or
    none), False declares labels absent, True requires them.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{name}: empty file") from None
    header = [h.strip() for h in header]
    if header[:3] != ["id", "domain", "label"]:
        raise InputError(f"{name} line 1: header must start with id,domain,label")
    feats = header[3:]
    if not feats or feats != [f"f{k}" for k in range(len(feats))]:
        raise InputError(f"{name} line 1: feature columns must be f0..f{{d-1}}")
    d = len(feats)

    ids, tags, labels, rows, lines = [], [], [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != d + 3:
            raise InputError(f"{name} line {lineno}: expected {d + 3} fields, got {len(rec)}")
        tag = rec[1].strip()
        if tag not in ("s", "t"):
            raise InputError(f"{name} line {lineno}: unknown domain tag {tag!r}")
        label = _parse_label(rec[2].strip(), lineno)
        if tag == "s" and label < 0:
            raise InputError(f"{name} line {lineno}: source row without a label")
        try:
            x = [float(f) for f in rec[3:]]
        except ValueError:
            raise InputError(f"{name} line {lineno}: non-numeric feature value") from None
        if not all(np.isfinite(x)):
            raise InputError(f"{name} line {lineno}: non-finite feature value")
        ids.append(rec[0].strip())
        tags.append(tag)
        labels.append(label)
        rows.append(x)
        lines.append(lineno)
    if not rows:
        raise InputError(f"{name}: no samples")

    tags = np.array(tags)
    labels = np.array(labels, dtype=np.int64)
    lines = np.array(lines)
    tgt = tags == "t"
    if not (~tgt).any():
        raise InputError(f"{name}: no source samples")

    t_lab = labels[tgt]
    t_lines = lines[tgt]
    if target_truth is None:
        target_truth = bool(t_lab.size) and bool((t_lab >= 0).all())
        if not target_truth and (t_lab >= 0).any():
            bad = t_lines[t_lab >= 0][0]
            raise InputError(f"{name} line {bad}: target row has a label but other target rows do not")
    elif target_truth:
        if (t_lab < 0).any():
            raise InputError(f"{name} line {t_lines[t_lab < 0][0]}: target row missing its label")
    elif (t_lab >= 0).any():
        raise InputError(
            f"{name} line {t_lines[t_lab >= 0][0]}: target row has a label but labels are declared absent")

    order = np.concatenate([np.flatnonzero(~tgt), np.flatnonzero(tgt)])
    X = np.array(rows, dtype=np.float64)[order]
    seen = labels[~tgt] if not target_truth else labels[labels >= 0]
    C = int(seen.max()) + 1 if class_count is None else int(class_count)
    over = (labels >= C) & ((~tgt) | bool(target_truth))
    if over.any():
        raise InputError(f"{name} line {lines[over][0]}: label {labels[over][0]} >= class count {C}")
    return Dataset(
        X=X,
        is_target=tgt[order],
        source_labels=labels[~tgt],
        class_count=C,
        target_truth=t_lab.copy() if target_truth else None,
        ids=np.array(ids)[order],
    )


def load_dataset(path, class_count=None, target_truth=None):
    with open(path, newline="", encoding="utf-8") as fh:
        return read_dataset(fh, class_count, target_truth, name=os.fspath(path))


def _atomic_write(path, text):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_dataset(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "domain", "label"] + [f"f{k}" for k in range(ds.d)])
    labels = np.full(ds.X.shape[0], -1, dtype=np.int64)
    labels[: ds.n] = ds.source_labels
    if ds.target_truth is not None:
        labels[ds.n:] = ds.target_truth
    for i in range(ds.X.shape[0]):
        # repr round-trips float64 exactly
        w.writerow([ds.ids[i], "t" if ds.is_target[i] else "s", int(labels[i])]
                   + [repr(float(v)) for v in ds.X[i]])
    return buf.getvalue()


def save_dataset(ds, path):
    _atomic_write(path, format_dataset(ds))


def save_predictions(path, ids, preds):
    lines = ["id,pred"] + [f"{i},{int(p)}" for i, p in zip(ids, preds)]
    _atomic_write(path, "\n".join(lines) + "\n")


def _class_means(rng, C, d, separation):
    # orthonormal directions scaled so every pair of means is `separation` apart
    if C <= d:
        Q, _ = np.linalg.qr(rng.standard_normal((d, C)))
        dirs = Q.T
    else:
        dirs = rng.standard_normal((C, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation / np.sqrt(2.0) * dirs


def generate_synth(spec):
    """Gaussian blobs; the last ``private_source_classes`` classes are source-only.

    Target blobs reuse the class means plus one shared shift vector of
    length ``spec.shift``.
    """
    rng = np.random.default_rng(spec.seed)
    C, d, k = spec.class_count, spec.dim, spec.samples_per_class
    means = _class_means(rng, C, d, spec.separation)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    offset = spec.shift * direction

    ys = np.repeat(np.arange(C), k)
    Xs = means[ys] + spec.noise * rng.standard_normal((ys.size, d))
    yt = np.repeat(np.arange(C - spec.private_source_classes), k)
    Xt = means[yt] + offset + spec.noise * rng.standard_normal((yt.size, d))

    X = np.vstack([Xs, Xt])
    is_t = np.concatenate([np.zeros(ys.size, bool), np.ones(yt.size, bool)])
    ids = np.array([f"s{i}" for i in range(ys.size)] + [f"t{i}" for i in range(yt.size)])
    return Dataset(X, is_t, ys, C, yt, ids)


@dataclass(frozen=True)
class SplitSummary:
    n: int
    m: int
    class_count: int
    source_counts: tuple
    target_counts: Optional[tuple]
    pda: Optional[bool]


def split_counts(ds):
    C = ds.class_count
    src = tuple(int(c) for c in np.bincount(ds.source_labels, minlength=C)[:C])
    tgt = None
    if ds.target_truth is not None:
        tgt = tuple(int(c) for c in np.bincount(ds.target_truth, minlength=C)[:C])
    return SplitSummary(ds.n, ds.m, C, src, tgt, ds.is_pda)
