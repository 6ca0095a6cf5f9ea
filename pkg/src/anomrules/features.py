"""Binary feature construction: equal-width bins, one-hot categories, n-grams.

Continuous measurements are cut into equal-width bins learned from training
data, and the bin assignment is one-hot encoded.  Categorical fields one-hot
encode their training vocabulary.  Free text contributes character n-gram
presence columns.  Columns that would be all-zero on the training data carry
no information and are dropped from the layout.  The fitted schema is a
persistable artifact so that later runs binarize new data exactly the way
the training run did.
"""
from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._textio import escape_token, split_lines, unescape_token
from .ingest import Dataset, Record

log = logging.getLogger(__name__)


class FeatureError(Exception):
    """Feature-space construction or application failed."""


def column_fingerprint(names: Sequence[str]) -> str:
    """Hex digest over a column layout; rulesets pin this to their schema."""
    h = hashlib.sha256()
    for name in names:
        b = name.encode("utf-8")
        h.update(len(b).to_bytes(4, "big"))
        h.update(b)
    return h.hexdigest()


class SchemaFormatError(FeatureError):
    """A persisted schema file is malformed."""


@dataclass(frozen=True)
class ContinuousSpec:
    """Equal-width binning of one continuous field over [vmin, vmax].

    Bins are 1-based and left-inclusive; values at or below ``vmin`` land in
    bin 1, values at or above ``vmax`` in bin ``n_bins``.  A constant field
    degenerates to a single bin.
    """

    name: str
    vmin: float
    vmax: float
    n_bins: int

    @property
    def edges(self) -> tuple[float, ...]:
        span = self.vmax - self.vmin
        inner = [self.vmin + k * span / self.n_bins for k in range(1, self.n_bins)]
        return (self.vmin, *inner, self.vmax)

    def column_names(self) -> list[str]:
        return [f"{self.name}:bin{k}" for k in range(1, self.n_bins + 1)]


@dataclass(frozen=True)
class CategoricalSpec:
    name: str
    vocabulary: tuple[str, ...]

    def column_names(self) -> list[str]:
        return [f"{self.name}={tok}" for tok in self.vocabulary]


@dataclass(frozen=True)
class NgramSpec:
    n: int
    vocabulary: tuple[str, ...]

    def column_names(self) -> list[str]:
        return [f"ngram:{g}" for g in self.vocabulary]


def bin_indices(spec: ContinuousSpec, values: np.ndarray) -> np.ndarray:
    """Vectorized 1-based bin assignment with clamping at both ends."""
    v = np.asarray(values, dtype=float)
    if spec.vmax == spec.vmin:
        return np.ones(v.shape, dtype=np.int64)
    width = (spec.vmax - spec.vmin) / spec.n_bins
    k = np.floor((v - spec.vmin) / width).astype(np.int64) + 1
    return np.clip(k, 1, spec.n_bins)


def bin_index(spec: ContinuousSpec, value: float) -> int:
    return int(bin_indices(spec, np.asarray([value]))[0])


@dataclass(frozen=True)
class FeatureSchema:
    continuous: tuple[ContinuousSpec, ...]
    categorical: tuple[CategoricalSpec, ...]
    ngram: NgramSpec | None
    dropped_columns: tuple[str, ...]

    def _full_layout(self) -> list[str]:
        out: list[str] = []
        for c in self.continuous:
            out.extend(c.column_names())
        for c in self.categorical:
            out.extend(c.column_names())
        if self.ngram is not None:
            out.extend(self.ngram.column_names())
        return out

    @cached_property
    def column_names(self) -> tuple[str, ...]:
        dropped = set(self.dropped_columns)
        return tuple(c for c in self._full_layout() if c not in dropped)

    @cached_property
    def column_index(self) -> dict[str, int]:
        return {name: j for j, name in enumerate(self.column_names)}

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    @cached_property
    def fingerprint(self) -> str:
        return column_fingerprint(self.column_names)


@dataclass
class BinaryFeatureMatrix:
    """One {0,1} row per record, columns per ``schema.column_names``."""

    bits: np.ndarray  # (N, m) uint8
    schema: FeatureSchema

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape  # type: ignore[return-value]


def _iter_ngrams(text: str, n: int) -> Iterator[str]:
    for i in range(len(text) - n + 1):
        yield text[i : i + n]


def fit_schema(data: Dataset, *, n_bins: int = 10, ngram_n: int = 2) -> FeatureSchema:
    """Learn bin edges, category vocabularies and the n-gram vocabulary.

    All-zero columns (bins no training value falls into, the lone bin of a
    constant field) are recorded in ``dropped_columns`` and omitted from the
    retained layout.
    """
    if n_bins < 2:
        raise FeatureError("n_bins must be at least 2")
    if ngram_n < 1:
        raise FeatureError("ngram_n must be at least 1")
    records = data.records
    if not records:
        raise FeatureError("cannot fit a schema on an empty dataset")

    cont_specs: list[ContinuousSpec] = []
    dropped: list[str] = []
    if data.continuous_names:
        vals = np.asarray([r.continuous for r in records], dtype=float)
        for fi, name in enumerate(data.continuous_names):
            col = vals[:, fi]
            vmin, vmax = float(col.min()), float(col.max())
            if vmin == vmax:
                spec = ContinuousSpec(name, vmin, vmax, 1)
                dropped.append(f"{name}:bin1")
                log.warning("field %r is constant; dropping its lone bin column", name)
            else:
                spec = ContinuousSpec(name, vmin, vmax, n_bins)
                seen = set(np.unique(bin_indices(spec, col)).tolist())
                dropped.extend(
                    f"{name}:bin{k}" for k in range(1, n_bins + 1) if k not in seen
                )
            cont_specs.append(spec)

    # Vocabularies keep first-appearance order so the column layout is a
    # deterministic function of the training stream, not of token collation.
    cat_specs = []
    for fi, name in enumerate(data.categorical_names):
        vocab = dict.fromkeys(r.categorical[fi] for r in records)
        cat_specs.append(CategoricalSpec(name, tuple(vocab)))

    ngram_spec = None
    if data.has_text:
        grams: dict[str, None] = {}
        for r in records:
            for g in _iter_ngrams(r.text or "", ngram_n):
                grams.setdefault(g)
        if grams:
            ngram_spec = NgramSpec(ngram_n, tuple(grams))
        else:
            log.warning("all texts are shorter than %d; no n-gram columns", ngram_n)

    schema = FeatureSchema(tuple(cont_specs), tuple(cat_specs), ngram_spec, tuple(dropped))
    names = schema.column_names
    if not names:
        raise FeatureError("schema has zero retained columns")
    if len(set(names)) != len(names):
        raise FeatureError("feature column names collide; rename input fields")
    log.info(
        "fitted schema: %d columns retained, %d dropped as uninformative",
        len(names),
        len(dropped),
    )
    return schema


def binarize(data: Dataset | Sequence[Record], schema: FeatureSchema) -> BinaryFeatureMatrix:
    """Map records onto the schema's retained {0,1} columns.

    Unseen categorical values and values landing in dropped bins leave their
    field's columns all-zero; both are reported once per field via the
    logger, never fatally.
    """
    if isinstance(data, Dataset):
        if data.continuous_names != tuple(s.name for s in schema.continuous) or (
            data.categorical_names != tuple(s.name for s in schema.categorical)
        ):
            raise FeatureError("dataset fields do not match the schema")
        records: Sequence[Record] = data.records
    else:
        records = list(data)

    nc, nk = len(schema.continuous), len(schema.categorical)
    for i, r in enumerate(records):
        if len(r.continuous) != nc or len(r.categorical) != nk:
            raise FeatureError(f"record {i + 1}: field arity does not match the schema")
        if schema.ngram is not None and r.text is None:
            raise FeatureError(f"record {i + 1}: schema expects text but record has none")

    n = len(records)
    cont = np.asarray([r.continuous for r in records], dtype=float) if nc and n else None
    cats = [[r.categorical[fi] for r in records] for fi in range(nk)]
    texts = [r.text or "" for r in records] if schema.ngram is not None else None
    return binarize_columns(cont, cats, texts, schema, n_rows=n)


def binarize_columns(
    continuous: np.ndarray | None,
    categorical: Sequence[Sequence[str]] | None,
    texts: Sequence[str] | None,
    schema: FeatureSchema,
    *,
    n_rows: int | None = None,
) -> BinaryFeatureMatrix:
    """Binarize pre-split columns; row-for-row identical to :func:`binarize`.

    ``continuous`` is an ``(n, len(schema.continuous))`` float block,
    ``categorical`` one token sequence per categorical field, ``texts`` one
    string per row when the schema carries an n-gram vocabulary.  Streaming
    callers that already hold column arrays use this to skip building
    per-row :class:`~anomrules.ingest.Record` objects.
    """
    nc, nk = len(schema.continuous), len(schema.categorical)
    sizes = set()
    if continuous is not None:
        continuous = np.asarray(continuous, dtype=float)
        if continuous.ndim != 2 or continuous.shape[1] != nc:
            raise FeatureError(f"continuous block must have {nc} column(s)")
        sizes.add(len(continuous))
    elif nc and (n_rows is None or n_rows):
        raise FeatureError(f"schema has {nc} continuous field(s) but no continuous block")
    if categorical is None:
        categorical = []
    if len(categorical) != nk:
        raise FeatureError(f"expected {nk} categorical column(s), got {len(categorical)}")
    sizes.update(len(c) for c in categorical)
    if schema.ngram is not None:
        if texts is None:
            raise FeatureError("schema expects text but no text column was given")
        sizes.add(len(texts))
    if n_rows is not None:
        sizes.add(n_rows)
    if len(sizes) > 1:
        raise FeatureError(f"column blocks disagree on row count: {sorted(sizes)}")
    n = sizes.pop() if sizes else 0

    bits = np.zeros((n, schema.n_columns), dtype=np.uint8)
    col_of = schema.column_index

    if continuous is not None and n:
        for fi, spec in enumerate(schema.continuous):
            b = bin_indices(spec, continuous[:, fi])
            lut = np.full(spec.n_bins + 1, -1, dtype=np.int64)
            for k in range(1, spec.n_bins + 1):
                lut[k] = col_of.get(f"{spec.name}:bin{k}", -1)
            cj = lut[b]
            hit = cj >= 0
            bits[np.nonzero(hit)[0], cj[hit]] = 1
            miss = int((~hit).sum())
            # A fully-dropped field (constant at fit time) misses by
            # construction; only partially-dropped fields signal drift.
            if miss and bool((lut[1:] >= 0).any()):
                log.warning(
                    "field %r: %d value(s) fall in bins dropped at fit time", spec.name, miss
                )

    for fi, spec in enumerate(schema.categorical):
        lut: dict[str, int] = {}
        for tok in spec.vocabulary:
            j = col_of.get(f"{spec.name}={tok}")
            if j is not None:
                lut[tok] = j
        vocab = set(spec.vocabulary)
        unseen: set[str] = set()
        for i, tok in enumerate(categorical[fi]):
            j = lut.get(tok)
            if j is not None:
                bits[i, j] = 1
            elif tok not in vocab:
                unseen.add(tok)
        if unseen:
            log.warning(
                "field %r: %d unseen categorical value(s) left all-zero", spec.name, len(unseen)
            )

    if schema.ngram is not None:
        gspec = schema.ngram
        lut = {}
        for g in gspec.vocabulary:
            j = col_of.get(f"ngram:{g}")
            if j is not None:
                lut[g] = j
        for i, text in enumerate(texts or ()):
            for p in range(len(text) - gspec.n + 1):
                j = lut.get(text[p : p + gspec.n])
                if j is not None:
                    bits[i, j] = 1

    return BinaryFeatureMatrix(bits, schema)


def extract_ngrams(
    text: str, n: int, vocabulary: Sequence[str], *, counts: bool = False
) -> np.ndarray:
    """Presence (or count) vector of ``text``'s character n-grams over a vocabulary."""
    idx = {g: j for j, g in enumerate(vocabulary)}
    vec = np.zeros(len(vocabulary), dtype=float if counts else np.uint8)
    for i in range(len(text) - n + 1):
        j = idx.get(text[i : i + n])
        if j is not None:
            if counts:
                vec[j] += 1.0
            else:
                vec[j] = 1
    return vec


def ngram_count_matrix(data: Dataset | Sequence[Record], schema: FeatureSchema) -> np.ndarray:
    """Count matrix over the schema's n-gram vocabulary (embedding-side option)."""
    if schema.ngram is None:
        raise FeatureError("schema has no n-gram section")
    records = data.records if isinstance(data, Dataset) else list(data)
    out = np.zeros((len(records), len(schema.ngram.vocabulary)), dtype=float)
    for i, r in enumerate(records):
        if r.text is None:
            raise FeatureError(f"record {i + 1}: schema expects text but record has none")
        out[i] = extract_ngrams(r.text, schema.ngram.n, schema.ngram.vocabulary, counts=True)
    return out


# --------------------------------------------------------------------------
# Schema persistence
# --------------------------------------------------------------------------


def serialize_schema(schema: FeatureSchema) -> str:
    lines = ["SCHEMA v1", f"continuous {len(schema.continuous)}"]
    for s in schema.continuous:
        lines.append(f"field {escape_token(s.name)} {s.n_bins} {s.vmin!r} {s.vmax!r}")
    lines.append(f"categorical {len(schema.categorical)}")
    for c in schema.categorical:
        lines.append(f"field {escape_token(c.name)} {len(c.vocabulary)}")
        lines.extend(f"value {escape_token(tok)}" for tok in c.vocabulary)
    if schema.ngram is None:
        lines.append("ngram none")
    else:
        lines.append(f"ngram {schema.ngram.n} {len(schema.ngram.vocabulary)}")
        lines.extend(f"value {escape_token(g)}" for g in schema.ngram.vocabulary)
    lines.append(f"dropped {len(schema.dropped_columns)}")
    lines.extend(f"column {escape_token(c)}" for c in schema.dropped_columns)
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Cursor:
    def __init__(self, text: str):
        self.lines = split_lines(text)
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise SchemaFormatError(f"line {self.pos + 1}: expected {what}, file ended")
        self.pos += 1
        return self.lines[self.pos - 1]

    def fail(self, msg: str):
        raise SchemaFormatError(f"line {self.pos}: {msg}")


def _split_exact(cur: _Cursor, line: str, keyword: str, n_parts: int) -> list[str]:
    parts = line.split(" ")
    if parts[0] != keyword or len(parts) != n_parts:
        cur.fail(f"expected '{keyword}' line with {n_parts - 1} argument(s), got {line!r}")
    return parts[1:]


def _parse_int(cur: _Cursor, tok: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        cur.fail(f"{what} is not an integer: {tok!r}")
        raise AssertionError  # unreachable


def parse_schema(text: str) -> FeatureSchema:
    cur = _Cursor(text)
    if cur.next("header") != "SCHEMA v1":
        cur.fail("expected 'SCHEMA v1' header")

    (n_str,) = _split_exact(cur, cur.next("continuous section"), "continuous", 2)
    cont: list[ContinuousSpec] = []
    for _ in range(_parse_int(cur, n_str, "continuous field count")):
        name_s, bins_s, lo_s, hi_s = _split_exact(cur, cur.next("field line"), "field", 5)
        try:
            lo, hi = float(lo_s), float(hi_s)
        except ValueError:
            cur.fail(f"bad bin range {lo_s!r}..{hi_s!r}")
        n_bins = _parse_int(cur, bins_s, "bin count")
        if n_bins < 1 or hi < lo or (n_bins > 1 and hi == lo):
            cur.fail("inconsistent bin range")
        cont.append(ContinuousSpec(unescape_token(name_s), lo, hi, n_bins))

    (n_str,) = _split_exact(cur, cur.next("categorical section"), "categorical", 2)
    cats: list[CategoricalSpec] = []
    for _ in range(_parse_int(cur, n_str, "categorical field count")):
        name_s, len_s = _split_exact(cur, cur.next("field line"), "field", 3)
        vocab = tuple(
            unescape_token(_split_exact(cur, cur.next("value line"), "value", 2)[0])
            for _ in range(_parse_int(cur, len_s, "vocabulary size"))
        )
        cats.append(CategoricalSpec(unescape_token(name_s), vocab))

    line = cur.next("ngram section")
    ngram: NgramSpec | None = None
    if line != "ngram none":
        n_s, len_s = _split_exact(cur, line, "ngram", 3)
        vocab = tuple(
            unescape_token(_split_exact(cur, cur.next("value line"), "value", 2)[0])
            for _ in range(_parse_int(cur, len_s, "vocabulary size"))
        )
        ngram = NgramSpec(_parse_int(cur, n_s, "ngram size"), vocab)

    (n_str,) = _split_exact(cur, cur.next("dropped section"), "dropped", 2)
    dropped = tuple(
        unescape_token(_split_exact(cur, cur.next("column line"), "column", 2)[0])
        for _ in range(_parse_int(cur, n_str, "dropped column count"))
    )

    if cur.next("end marker") != "end":
        cur.fail("expected 'end'")
    if any(l.strip() for l in cur.lines[cur.pos :]):
        cur.fail("unexpected content after 'end'")

    schema = FeatureSchema(tuple(cont), tuple(cats), ngram, dropped)
    names = schema.column_names
    if not names:
        raise SchemaFormatError("schema has zero retained columns")
    if len(set(names)) != len(names):
        raise SchemaFormatError("schema column names collide")
    return schema


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    Path(path).write_text(serialize_schema(schema), encoding="utf-8")


def load_schema(path: str | Path) -> FeatureSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))
