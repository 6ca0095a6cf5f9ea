"""Readers that turn raw capture exports and server logs into uniform records.

Three input styles are supported:

* ``kdd`` -- the 41-field comma-separated connection-summary format used by
  the classic intrusion-detection corpora, with an optional trailing label
  token ending in a period.
* ``apache`` -- combined-format web access logs; the request line (optionally
  extended with the user agent) becomes the record text.
* ``csv`` -- generic delimited tables.  Column types are sniffed from the
  data: a column is continuous when every body cell parses as a finite
  number, otherwise categorical.  A trailing non-numeric column is treated
  as the label.

Every reader yields :class:`Record` values collected into a
:class:`Dataset`, the common currency for the rest of the pipeline.  Labels
never feed the learning stages; they exist so evaluation can score a model
afterwards.
"""
from __future__ import annotations

import csv as _csv
import gzip
import logging
import math
import random
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._textio import escape_token, unescape_token

log = logging.getLogger(__name__)


class IngestError(Exception):
    """Input could not be turned into records."""


class ParseError(IngestError):
    """A single line violated the declared input format."""

    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class SourceFormat(str, Enum):
    KDD = "kdd"
    APACHE = "apache"
    CSV = "csv"


@dataclass(frozen=True, slots=True)
class Record:
    """One observation: raw continuous/categorical values plus optional text.

    ``label`` is carried through untouched for later evaluation; ``None``
    means the source row was unlabeled.
    """

    continuous: tuple[float, ...]
    categorical: tuple[str, ...]
    text: str | None = None
    label: str | None = None


@dataclass(frozen=True)
class CsvLayout:
    """Column order and typing of a delimited source, kept so a model can
    re-parse new files exactly the way the training file was parsed."""

    fields: tuple[tuple[str, str], ...]  # (name, kind) with kind num|cat|label
    has_header: bool

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.fields)

    @property
    def has_label(self) -> bool:
        return any(k == "label" for _, k in self.fields)


@dataclass
class Dataset:
    records: list[Record]
    source_format: SourceFormat
    continuous_names: tuple[str, ...]
    categorical_names: tuple[str, ...]
    skipped: int = 0
    csv_layout: CsvLayout | None = None

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def has_text(self) -> bool:
        return bool(self.records) and self.records[0].text is not None

    def labels(self) -> list[str | None]:
        return [r.label for r in self.records]


# --------------------------------------------------------------------------
# KDD connection-summary format
# --------------------------------------------------------------------------

_INT = "int"
_RATE = "rate"  # rendered with two decimals in the source corpora
_CAT = "cat"

KDD_FIELDS: tuple[tuple[str, str], ...] = (
    ("duration", _INT),
    ("protocol_type", _CAT),
    ("service", _CAT),
    ("flag", _CAT),
    ("src_bytes", _INT),
    ("dst_bytes", _INT),
    ("land", _CAT),
    ("wrong_fragment", _INT),
    ("urgent", _INT),
    ("hot", _INT),
    ("num_failed_logins", _INT),
    ("logged_in", _CAT),
    ("num_compromised", _INT),
    ("root_shell", _INT),
    ("su_attempted", _INT),
    ("num_root", _INT),
    ("num_file_creations", _INT),
    ("num_shells", _INT),
    ("num_access_files", _INT),
    ("num_outbound_cmds", _INT),
    ("is_host_login", _CAT),
    ("is_guest_login", _CAT),
    ("count", _INT),
    ("srv_count", _INT),
    ("serror_rate", _RATE),
    ("srv_serror_rate", _RATE),
    ("rerror_rate", _RATE),
    ("srv_rerror_rate", _RATE),
    ("same_srv_rate", _RATE),
    ("diff_srv_rate", _RATE),
    ("srv_diff_host_rate", _RATE),
    ("dst_host_count", _INT),
    ("dst_host_srv_count", _INT),
    ("dst_host_same_srv_rate", _RATE),
    ("dst_host_diff_srv_rate", _RATE),
    ("dst_host_same_src_port_rate", _RATE),
    ("dst_host_srv_diff_host_rate", _RATE),
    ("dst_host_serror_rate", _RATE),
    ("dst_host_srv_serror_rate", _RATE),
    ("dst_host_rerror_rate", _RATE),
    ("dst_host_srv_rerror_rate", _RATE),
)

KDD_CONTINUOUS_NAMES: tuple[str, ...] = tuple(n for n, k in KDD_FIELDS if k != _CAT)
KDD_CATEGORICAL_NAMES: tuple[str, ...] = tuple(n for n, k in KDD_FIELDS if k == _CAT)


def parse_kdd_record(line: str, lineno: int | None = None) -> Record:
    """Parse one 41-field connection record, with or without trailing label."""
    parts = line.strip().split(",")
    if len(parts) == len(KDD_FIELDS) + 1:
        tok = parts.pop()
        label = tok[:-1] if tok.endswith(".") else tok
        if not label:
            raise ParseError("empty label token", lineno)
    elif len(parts) == len(KDD_FIELDS):
        label = None
    else:
        raise ParseError(
            f"expected {len(KDD_FIELDS)} or {len(KDD_FIELDS) + 1} "
            f"comma-separated fields, got {len(parts)}",
            lineno,
        )
    cont: list[float] = []
    cat: list[str] = []
    for (name, kind), tok in zip(KDD_FIELDS, parts):
        if kind == _CAT:
            cat.append(tok)
            continue
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"field {name!r}: not a number: {tok!r}", lineno) from None
        if not math.isfinite(v):
            raise ParseError(f"field {name!r}: non-finite value {tok!r}", lineno)
        cont.append(v)
    return Record(tuple(cont), tuple(cat), None, label)


def kdd_record_to_line(record: Record) -> str:
    """Inverse of :func:`parse_kdd_record`; byte-exact on corpus records."""
    cont = iter(record.continuous)
    cat = iter(record.categorical)
    out: list[str] = []
    for _, kind in KDD_FIELDS:
        if kind == _CAT:
            out.append(next(cat))
        else:
            v = next(cont)
            if kind == _INT and float(v).is_integer():
                out.append(str(int(v)))
            elif kind == _RATE and round(v, 2) == v:
                out.append(f"{v:.2f}")
            else:
                out.append(repr(v))
    if record.label is not None:
        out.append(record.label + ".")
    return ",".join(out)


_KDD_CONT_IDX = tuple(i for i, (_, k) in enumerate(KDD_FIELDS) if k != _CAT)
_KDD_CAT_IDX = tuple(i for i, (_, k) in enumerate(KDD_FIELDS) if k == _CAT)


def _kdd_block_dtype(labeled: bool) -> np.dtype:
    fields = [
        (f"f{i}", object if k == _CAT else np.float64)
        for i, (_, k) in enumerate(KDD_FIELDS)
    ]
    if labeled:
        fields.append(("label", object))
    return np.dtype(fields)


_KDD_BLOCK_DTYPES = (_kdd_block_dtype(False), _kdd_block_dtype(True))


@dataclass(frozen=True)
class RecordBlock:
    """A slab of records held as column arrays instead of Record objects."""

    continuous: np.ndarray  # (n, n_continuous) float64, all finite
    categorical: tuple[np.ndarray, ...]  # one object array per categorical field
    labels: tuple[str | None, ...]

    @property
    def n(self) -> int:
        return len(self.labels)


def _block_from_records(recs: Sequence[Record]) -> RecordBlock:
    cont = np.asarray([r.continuous for r in recs], dtype=float)
    cats = tuple(
        np.array([r.categorical[fi] for r in recs], dtype=object)
        for fi in range(len(KDD_CATEGORICAL_NAMES))
    )
    return RecordBlock(cont, cats, tuple(r.label for r in recs))


def _parse_kdd_block(nos: list[int], lines: list[str]) -> RecordBlock:
    nf = len(KDD_FIELDS)
    width = lines[0].count(",") + 1
    # The bulk tokenizer must reproduce the per-line parser exactly; lines
    # with stray whitespace keep their tokens verbatim only on the slow path.
    plain = width in (nf, nf + 1) and not any(" " in l or "\t" in l for l in lines)
    if plain:
        try:
            arr = np.loadtxt(
                lines,
                delimiter=",",
                dtype=_KDD_BLOCK_DTYPES[width == nf + 1],
                comments=None,
                ndmin=1,
            )
        except ValueError:
            arr = None  # ragged widths or a bad number; reparse line by line
        if arr is not None:
            cont = np.empty((len(arr), len(_KDD_CONT_IDX)))
            for j, i in enumerate(_KDD_CONT_IDX):
                cont[:, j] = arr[f"f{i}"]
            if np.isfinite(cont).all():
                cats = tuple(arr[f"f{i}"] for i in _KDD_CAT_IDX)
                if width == nf:
                    return RecordBlock(cont, cats, (None,) * len(arr))
                labels = tuple(
                    t[:-1] if t.endswith(".") else t for t in arr["label"].tolist()
                )
                if all(labels):  # an empty label is a per-line error; report it below
                    return RecordBlock(cont, cats, labels)
    return _block_from_records([parse_kdd_record(l, no) for no, l in zip(nos, lines)])


def iter_kdd_blocks(path: str | Path, *, block_rows: int = 8192) -> Iterator[RecordBlock]:
    """Stream a connection-record file as column slabs.

    Chunk-for-chunk equivalent to :func:`iter_records` with format ``kdd``,
    but regular slabs are tokenized by numpy in one C pass, which is what
    lets classification keep up with capture-sized files.  Any slab the bulk
    tokenizer cannot reproduce exactly (stray whitespace, ragged field
    counts, unparsable or non-finite numbers, empty labels) is re-parsed
    line by line so errors carry the offending line number.
    """
    nos: list[int] = []
    lines: list[str] = []
    with _open_text(Path(path)) as fh:
        for i, line in enumerate(fh, start=1):
            if line.isspace():
                continue
            nos.append(i)
            lines.append(line)
            if len(lines) >= block_rows:
                yield _parse_kdd_block(nos, lines)
                nos, lines = [], []
        if lines:
            yield _parse_kdd_block(nos, lines)


# --------------------------------------------------------------------------
# Apache combined log format
# --------------------------------------------------------------------------

_QUOTED = r'(?:[^"\\]|\\.)*'
_APACHE_RE = re.compile(
    r"^(?P<host>\S+)\s+(?P<ident>\S+)\s+(?P<user>\S+)\s+"
    r"\[(?P<time>[^\]]*)\]\s+"
    rf'"(?P<request>{_QUOTED})"\s+'
    r"(?P<status>\d{3}|-)\s+(?P<size>\d+|-)"
    rf'(?:\s+"(?P<referer>{_QUOTED})"\s+"(?P<agent>{_QUOTED})")?\s*$'
)


def parse_apache_line(
    line: str, include_user_agent: bool = False, lineno: int | None = None
) -> Record:
    """Parse one combined-format access-log line into a text record.

    The record text is the quoted request; with ``include_user_agent`` the
    user-agent string is appended after a single space.  Referer/agent may be
    absent entirely (plain common log format), but a line without the quoted
    request does not parse.
    """
    m = _APACHE_RE.match(line.rstrip("\r\n"))
    if m is None:
        raise ParseError("does not match combined log format", lineno)
    text = m.group("request")
    if include_user_agent and m.group("agent") is not None:
        text = text + " " + m.group("agent")
    return Record((), (), text, None)


# --------------------------------------------------------------------------
# Generic delimited tables
# --------------------------------------------------------------------------


def _try_float(tok: str) -> float | None:
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def parse_csv_dataset(lines: Iterable[str], has_header: bool | None = None) -> Dataset:
    """Parse a delimited table, sniffing header presence and column types.

    ``has_header=None`` sniffs: the first row is a header when none of its
    cells parse as numbers but some cell of the next row does.  A trailing
    column whose body cells are not all numeric becomes the label column.
    """
    rows: list[list[str]] = []
    linenos: list[int] = []
    for i, row in enumerate(_csv.reader(lines), start=1):
        if not row or all(c.strip() == "" for c in row):
            continue
        rows.append([c.strip() for c in row])
        linenos.append(i)
    if not rows:
        raise IngestError("no rows in delimited input")
    width = len(rows[0])
    for r, ln in zip(rows, linenos):
        if len(r) != width:
            raise ParseError(f"expected {width} columns, got {len(r)}", ln)

    if has_header is None:
        first_numeric = any(_try_float(c) is not None for c in rows[0])
        has_header = (
            not first_numeric
            and len(rows) > 1
            and any(_try_float(c) is not None for c in rows[1])
        )
    if has_header:
        names = tuple(rows[0])
        body = rows[1:]
        if len(set(names)) != width or any(n == "" for n in names):
            raise ParseError("header names must be unique and non-empty", linenos[0])
        body_linenos = linenos[1:]
    else:
        names = tuple(f"col{j + 1}" for j in range(width))
        body = rows
        body_linenos = linenos
    if not body:
        raise IngestError("delimited input has a header but no data rows")

    numeric = [all(_try_float(r[j]) is not None for r in body) for j in range(width)]
    label_col = width - 1 if (width > 0 and not numeric[width - 1]) else None

    kinds = []
    for j in range(width):
        if j == label_col:
            kinds.append("label")
        elif numeric[j]:
            kinds.append("num")
        else:
            kinds.append("cat")
    layout = CsvLayout(tuple(zip(names, kinds)), bool(has_header))

    records = [_csv_row_to_record(r, layout, ln) for r, ln in zip(body, body_linenos)]
    return Dataset(
        records=records,
        source_format=SourceFormat.CSV,
        continuous_names=tuple(n for n, k in layout.fields if k == "num"),
        categorical_names=tuple(n for n, k in layout.fields if k == "cat"),
        csv_layout=layout,
    )


def _csv_row_to_record(cells: Sequence[str], layout: CsvLayout, lineno: int | None) -> Record:
    n_full = len(layout.fields)
    n_bare = n_full - (1 if layout.has_label else 0)
    if len(cells) == n_full:
        padded = list(cells)
    elif len(cells) == n_bare:
        padded = list(cells) + [None] * (n_full - n_bare)  # type: ignore[list-item]
    else:
        raise ParseError(f"expected {n_full} or {n_bare} columns, got {len(cells)}", lineno)
    cont: list[float] = []
    cat: list[str] = []
    label: str | None = None
    for (name, kind), tok in zip(layout.fields, padded):
        if kind == "label":
            label = tok if tok else None  # an empty cell is an unlabeled row
        elif kind == "num":
            v = _try_float(tok) if tok is not None else None
            if v is None:
                raise ParseError(f"column {name!r}: not a number: {tok!r}", lineno)
            cont.append(v)
        else:
            cat.append(tok if tok is not None else "")
    return Record(tuple(cont), tuple(cat), None, label)


def parse_csv_record(line: str, layout: CsvLayout, lineno: int | None = None) -> Record:
    """Parse one delimited row under a previously learned layout."""
    cells = [c.strip() for c in next(_csv.reader([line]))]
    return _csv_row_to_record(cells, layout, lineno)


def serialize_csv_layout(layout: CsvLayout) -> str:
    head = "header" if layout.has_header else "noheader"
    cols = " ".join(f"{escape_token(n)}:{k}" for n, k in layout.fields)
    return f"{head};{cols}"


def parse_csv_layout(text: str) -> CsvLayout:
    try:
        head, cols = text.split(";", 1)
        fields = []
        for part in cols.split(" "):
            name, kind = part.rsplit(":", 1)
            if kind not in ("num", "cat", "label"):
                raise ValueError(f"bad column kind {kind!r}")
            fields.append((unescape_token(name), kind))
    except ValueError as exc:
        raise IngestError(f"malformed layout descriptor: {exc}") from None
    if head not in ("header", "noheader"):
        raise IngestError(f"malformed layout descriptor: bad prefix {head!r}")
    return CsvLayout(tuple(fields), head == "header")


# --------------------------------------------------------------------------
# File-level loading
# --------------------------------------------------------------------------


def _open_text(path: Path):
    try:
        if path.suffix == ".gz":
            fh = gzip.open(path, "rt", encoding="utf-8", errors="replace")
            try:
                fh.buffer.peek(1)  # surface a bad gzip header here, not mid-stream
            except (OSError, EOFError):
                fh.close()
                raise
            return fh
        return open(path, "r", encoding="utf-8", errors="replace")
    except (OSError, EOFError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None


def _reservoir(
    records: Iterator[Record], limit: int, seed: int
) -> list[Record]:
    """Uniform order-preserving sample of at most ``limit`` records."""
    rng = random.Random(seed)
    kept: list[tuple[int, Record]] = []
    for i, rec in enumerate(records):
        if len(kept) < limit:
            kept.append((i, rec))
        else:
            j = rng.randrange(i + 1)
            if j < limit:
                kept[j] = (i, rec)
    kept.sort(key=lambda t: t[0])
    return [r for _, r in kept]


def iter_records(
    path: str | Path,
    source_format: SourceFormat | str,
    *,
    include_user_agent: bool = False,
    csv_layout: CsvLayout | None = None,
    skip_counter: list[int] | None = None,
) -> Iterator[Record]:
    """Stream records from a file without materializing them.

    Apache lines that fail to parse are skipped (counted into
    ``skip_counter[0]`` when given); parse failures in the strict formats
    raise :class:`ParseError` with the line number.  For ``csv`` a
    :class:`CsvLayout` is required; a leading line matching the layout's
    names is treated as the header and skipped.
    """
    fmt = SourceFormat(source_format)
    with _open_text(Path(path)) as fh:
        if fmt is SourceFormat.KDD:
            for i, line in enumerate(fh, start=1):
                if line.strip():
                    yield parse_kdd_record(line, i)
        elif fmt is SourceFormat.APACHE:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield parse_apache_line(line, include_user_agent, i)
                except ParseError:
                    if skip_counter is not None:
                        skip_counter[0] += 1
                    log.debug("skipping malformed log line %d", i)
        else:
            if csv_layout is None:
                raise IngestError("streaming csv input requires a stored column layout")
            first = True
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                if first:
                    first = False
                    cells = [c.strip() for c in next(_csv.reader([line]))]
                    names = csv_layout.names
                    if tuple(cells) == names or tuple(cells) == names[:-1]:
                        continue
                yield parse_csv_record(line, csv_layout, i)


def load_dataset(
    path: str | Path,
    source_format: SourceFormat | str,
    *,
    limit: int | None = None,
    seed: int = 0,
    include_user_agent: bool = False,
    csv_header: bool | None = None,
) -> Dataset:
    """Load a whole file into a :class:`Dataset`.

    With ``limit`` set, a seeded uniform subsample of that size is kept, in
    original file order (reservoir sampling for the streaming formats, so
    arbitrarily large inputs stay cheap).
    """
    fmt = SourceFormat(source_format)
    path = Path(path)
    if fmt is SourceFormat.CSV:
        with _open_text(path) as fh:
            ds = parse_csv_dataset(fh, has_header=csv_header)
        if limit is not None and ds.n > limit:
            idx = sorted(random.Random(seed).sample(range(ds.n), limit))
            ds.records = [ds.records[i] for i in idx]
    else:
        skip = [0]
        stream = iter_records(
            path, fmt, include_user_agent=include_user_agent, skip_counter=skip
        )
        if limit is not None:
            records = _reservoir(stream, limit, seed)
        else:
            records = list(stream)
        if fmt is SourceFormat.KDD:
            cont, cat = KDD_CONTINUOUS_NAMES, KDD_CATEGORICAL_NAMES
        else:
            cont, cat = (), ()
        ds = Dataset(records, fmt, cont, cat, skipped=skip[0])
        if skip[0]:
            log.warning("skipped %d malformed line(s) in %s", skip[0], path)
    if not ds.records:
        raise IngestError(f"no records parsed from {path}")
    log.info("loaded %d record(s) from %s", ds.n, path)
    return ds
