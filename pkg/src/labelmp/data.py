"""Dataset parsing, schemas, splits, and padded batch iteration.

Canonical text format, one sample per line:

    <label,label,...><TAB><payload>

The payload is `id:value` pairs for tabular data, whitespace-separated
token ids for sequences, or comma-separated reals for dense vectors. An
empty label field means no positive labels. The schema file is key=value
text declaring `L`, `delta`, `input_kind`, and optionally `max_len`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

INPUT_KINDS = ("tabular", "sequence", "dense_vector")


class ParseError(ValueError):
    """Malformed input text; message carries the 1-based line number."""


class DataError(ValueError):
    """Well-formed input that violates the schema (id out of range, ...)."""


@dataclass
class Schema:
    labels: int
    features: int
    input_kind: str = "tabular"
    max_len: int = 500

    def __post_init__(self):
        if self.input_kind not in INPUT_KINDS:
            raise DataError(f"unknown input_kind {self.input_kind!r}")
        if self.labels < 1 or self.features < 1:
            raise DataError("schema needs L >= 1 and delta >= 1")


def load_schema(path) -> Schema:
    fields = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            fields[key] = value
    try:
        return Schema(labels=int(fields["L"]), features=int(fields["delta"]),
                      input_kind=fields.get("input_kind", "tabular"),
                      max_len=int(fields.get("max_len", 500)))
    except KeyError as missing:
        raise ParseError(f"{path}: schema missing required key {missing}") from None


@dataclass
class Sample:
    labels: frozenset
    ids: np.ndarray | None = None      # feature/token ids (tabular, sequence)
    values: np.ndarray | None = None   # feature values (tabular; ones for sequence)
    vector: np.ndarray | None = None   # raw input (dense_vector)


@dataclass
class Dataset:
    samples: list
    schema: Schema

    def __len__(self):
        return len(self.samples)

    def label_sets(self):
        return [s.labels for s in self.samples]

    def mean_labels_per_sample(self) -> float:
        return float(np.mean([len(s.labels) for s in self.samples]))

    def target_matrix(self) -> np.ndarray:
        out = np.zeros((len(self.samples), self.schema.labels), dtype=np.float64)
        for i, s in enumerate(self.samples):
            out[i, sorted(s.labels)] = 1.0
        return out


def _parse_labels(text, labels, path, lineno):
    if not text.strip():
        return frozenset()
    try:
        ids = frozenset(int(tok) for tok in text.split(","))
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad label field {text!r}") from None
    if any(i < 0 or i >= labels for i in ids):
        raise DataError(f"{path}:{lineno}: label id out of range [0, {labels})")
    return ids


def parse_dataset(path, schema: Schema) -> Dataset:
    samples = []
    truncated = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: missing TAB between labels and payload")
            label_text, payload = line.split("\t", 1)
            labels = _parse_labels(label_text, schema.labels, path, lineno)
            if not payload.strip():
                raise ParseError(f"{path}:{lineno}: empty payload")

            if schema.input_kind == "tabular":
                ids, values, seen = [], [], set()
                for tok in payload.split():
                    if ":" not in tok:
                        raise ParseError(f"{path}:{lineno}: expected id:value, got {tok!r}")
                    id_text, val_text = tok.split(":", 1)
                    try:
                        fid, val = int(id_text), float(val_text)
                    except ValueError:
                        raise ParseError(f"{path}:{lineno}: bad pair {tok!r}") from None
                    if fid in seen:
                        raise DataError(f"{path}:{lineno}: duplicate feature id {fid}")
                    seen.add(fid)
                    if fid < 0 or fid >= schema.features:
                        raise DataError(f"{path}:{lineno}: feature id {fid} out of range")
                    if val == 0.0:  # explicit zeros carry no signal
                        continue
                    ids.append(fid)
                    values.append(val)
                if not ids:
                    raise ParseError(f"{path}:{lineno}: sample has no nonzero features")
                samples.append(Sample(labels, ids=np.asarray(ids, dtype=np.int64),
                                      values=np.asarray(values, dtype=np.float64)))

            elif schema.input_kind == "sequence":
                try:
                    toks = [int(tok) for tok in payload.split()]
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-integer token") from None
                if any(t < 0 or t >= schema.features for t in toks):
                    raise DataError(f"{path}:{lineno}: token id out of range")
                if len(toks) > schema.max_len:
                    toks = toks[:schema.max_len]
                    truncated += 1
                if not toks:
                    raise ParseError(f"{path}:{lineno}: empty token sequence")
                ids = np.asarray(toks, dtype=np.int64)
                samples.append(Sample(labels, ids=ids,
                                      values=np.ones(len(ids), dtype=np.float64)))

            else:  # dense_vector
                try:
                    vec = np.asarray([float(tok) for tok in payload.split(",")],
                                     dtype=np.float64)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric vector entry") from None
                if vec.shape[0] != schema.features:
                    raise DataError(f"{path}:{lineno}: vector width {vec.shape[0]} "
                                    f"!= delta {schema.features}")
                samples.append(Sample(labels, vector=vec))

    if truncated:
        log.warning("%s: truncated %d sequences to max_len=%d", path, truncated, schema.max_len)
    return Dataset(samples, schema)


def _format_value(v: float) -> str:
    return f"{int(v)}" if v == int(v) else repr(float(v))


def serialize_dataset(dataset: Dataset, path):
    """Write the canonical form: sorted label ids; sorted feature ids for
    tabular samples; sequences and vectors kept in order."""
    with open(path, "w") as fh:
        for s in dataset.samples:
            labels = ",".join(str(i) for i in sorted(s.labels))
            if dataset.schema.input_kind == "tabular":
                order = np.argsort(s.ids)
                payload = " ".join(f"{s.ids[i]}:{_format_value(s.values[i])}" for i in order)
            elif dataset.schema.input_kind == "sequence":
                payload = " ".join(str(t) for t in s.ids)
            else:
                payload = ",".join(repr(float(x)) for x in s.vector)
            fh.write(f"{labels}\t{payload}\n")


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic shuffled split into (train, val, test)."""
    if any(f < 0 for f in fractions):
        raise ValueError("split fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(dataset.samples)
    order = np.random.Generator(np.random.Philox(seed)).permutation(n)
    c1 = round(n * fractions[0])
    c2 = round(n * (fractions[0] + fractions[1]))
    parts = (order[:c1], order[c1:c2], order[c2:])
    return tuple(Dataset([dataset.samples[i] for i in idx], dataset.schema)
                 for idx in parts)


@dataclass
class Batch:
    """Padded minibatch. `mask` is False at padding slots; `indices` are the
    positions of the samples in the source dataset."""
    ids: np.ndarray            # B x S int
    values: np.ndarray         # B x S float
    mask: np.ndarray           # B x S bool
    targets: np.ndarray        # B x L float 0/1
    indices: list
    vectors: np.ndarray | None = None  # B x delta (dense_vector only)

    @property
    def size(self):
        return self.targets.shape[0]


def make_batch(dataset: Dataset, indices) -> Batch:
    schema = dataset.schema
    chosen = [dataset.samples[i] for i in indices]
    targets = np.zeros((len(chosen), schema.labels), dtype=np.float64)
    for row, s in enumerate(chosen):
        targets[row, sorted(s.labels)] = 1.0

    if schema.input_kind == "dense_vector":
        vectors = np.stack([s.vector for s in chosen])
        ones = np.ones((len(chosen), 1))
        return Batch(ids=np.zeros((len(chosen), 1), dtype=np.int64),
                     values=ones.copy(), mask=ones.astype(bool),
                     targets=targets, indices=list(indices), vectors=vectors)

    width = max(len(s.ids) for s in chosen)
    ids = np.zeros((len(chosen), width), dtype=np.int64)
    values = np.zeros((len(chosen), width), dtype=np.float64)
    mask = np.zeros((len(chosen), width), dtype=bool)
    for row, s in enumerate(chosen):
        k = len(s.ids)
        ids[row, :k] = s.ids
        values[row, :k] = s.values
        mask[row, :k] = True
    return Batch(ids=ids, values=values, mask=mask, targets=targets,
                 indices=list(indices))


def batch_iter(dataset: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0):
    """Yield padded batches covering the dataset once; the final batch may
    be smaller."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(dataset.samples))
    if shuffle:
        order = np.random.Generator(np.random.Philox(seed)).permutation(order)
    for start in range(0, len(order), batch_size):
        yield make_batch(dataset, order[start:start + batch_size])
