"""Conjunctive rule extraction and first-match classification.

A rule is a {-1, 0, +1} mask over the binary feature columns: +1 columns
must be set, -1 columns must be clear, 0 columns are ignored.  Rules are
grown one at a time from the training rows: pick an uncovered observation,
seed a maximally specific rule from it (every column constrained), then
greedily blank out symbols (in ascending column order) whose removal does
not let any wrong-class row slip under the rule.  When the matrix carries a
schema, a finished mask that forbids every alternative column of a one-hot
field is rewritten to require the remaining one, so the condition reads as
the single informative positive symbol instead of a pile of negations.
Extraction repeats until every training row is covered, so the finished set
classifies its own training data exactly.

Classification scans rules in extraction order and stops at the first hit;
rows matching no rule are UNKNOWN.  The multi-match count (how many rules
matched in total) is kept as an ambiguity diagnostic.
"""
from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._textio import escape_token, split_lines, unescape_token
from .features import BinaryFeatureMatrix, column_fingerprint

log = logging.getLogger(__name__)

UNKNOWN = "UNKNOWN"


class RuleError(Exception):
    """Rule construction or application failed."""


class RulesetFormatError(RuleError):
    """A persisted ruleset file is malformed."""


class ContradictoryLabelsError(RuleError):
    """Identical feature rows carry different class labels."""


@dataclass(frozen=True, eq=False)
class ConjunctiveRule:
    class_token: str
    mask: np.ndarray  # (m,) int8 in {-1, 0, +1}
    origin: int | None = None  # training row that seeded the rule

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ConjunctiveRule)
            and self.class_token == other.class_token
            and np.array_equal(self.mask, other.mask)
        )

    @property
    def required(self) -> np.ndarray:
        return np.flatnonzero(self.mask == 1)

    @property
    def forbidden(self) -> np.ndarray:
        return np.flatnonzero(self.mask == -1)

    @property
    def n_terms(self) -> int:
        return int((self.mask != 0).sum())


@dataclass
class RuleSet:
    rules: tuple[ConjunctiveRule, ...]
    classes: tuple[str, ...]  # first-appearance order
    column_names: tuple[str, ...]
    fingerprint: str  # of the feature schema the columns came from
    seed: int | None = None  # extraction seed; None when loaded from a file

    @property
    def n_columns(self) -> int:
        return len(self.column_names)


@dataclass(frozen=True)
class ClassDecision:
    class_token: str  # a ruleset class, or UNKNOWN
    rule_index: int | None  # 0-based first-matching rule, None when unknown
    multi_match: int

    @property
    def unknown(self) -> bool:
        return self.rule_index is None


def matches(rule: ConjunctiveRule, x: np.ndarray) -> bool:
    xv = np.asarray(x)
    if xv.shape != rule.mask.shape:
        raise RuleError(f"feature width {xv.shape} does not match rule width {rule.mask.shape}")
    xb = xv.astype(bool)
    return bool(xb[rule.mask == 1].all() and not xb[rule.mask == -1].any())


def _unpack_matrix(matrix: BinaryFeatureMatrix | np.ndarray):
    if isinstance(matrix, BinaryFeatureMatrix):
        schema = matrix.schema
        names = schema.column_names
        index = schema.column_index
        groups: list[tuple[int, ...]] = []
        for spec in (*schema.continuous, *schema.categorical):
            cols = tuple(index[nm] for nm in spec.column_names() if nm in index)
            if len(cols) >= 2:
                groups.append(cols)
        return matrix.bits, names, schema.fingerprint, tuple(groups)
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise RuleError("expected a 2-d binary matrix")
    if a.size and not np.isin(a, (0, 1)).all():
        raise RuleError("matrix entries must be 0/1")
    names = tuple(f"col{j}" for j in range(a.shape[1]))
    return a.astype(np.uint8), names, column_fingerprint(names), ()


def extract_rules(
    matrix: BinaryFeatureMatrix | np.ndarray, labels: Sequence[str], *, seed: int = 0
) -> RuleSet:
    """Distill a labeled binary matrix into an ordered conjunctive ruleset.

    Each uncovered observation (visited in seeded-shuffled order) seeds a
    fully specific rule, which is then relaxed one symbol at a time in
    ascending column order; a symbol is dropped whenever every training row
    the relaxed rule covers still carries the seed's label.

    When the matrix carries a schema, each finished mask is normalized over
    the schema's one-hot column groups: a mask that forbids every alternative
    column of a group is rewritten to require the remaining one.  On rows with
    exactly one set bit per group both forms match identically, so training
    behaviour is unchanged, but the required form reads the way people write
    such conditions ("the field is X", not "neither Y nor Z") and refuses rows
    where the group matches nothing at all — e.g. a category never seen in
    training — instead of waving them through.

    Deterministic for a fixed seed: the seed drives only the order in which
    uncovered observations are visited.  Raises
    :class:`ContradictoryLabelsError` when identical rows disagree on their
    label, since no conjunctive ruleset can then be consistent.
    """
    bits, column_names, fingerprint, groups = _unpack_matrix(matrix)
    X = bits.astype(bool)
    n, m = X.shape
    labs = [str(l) for l in labels]
    if len(labs) != n:
        raise RuleError(f"{n} rows but {len(labs)} labels")
    if n == 0 or m == 0:
        raise RuleError("cannot extract rules from an empty matrix")

    seen: dict[bytes, int] = {}
    for i in range(n):
        j = seen.setdefault(X[i].tobytes(), i)
        if labs[j] != labs[i]:
            raise ContradictoryLabelsError(
                f"rows {j + 1} and {i + 1} are identical but labeled "
                f"{labs[j]!r} vs {labs[i]!r}"
            )

    codes = np.unique(np.asarray(labs, dtype=object), return_inverse=True)[1]
    order = np.random.default_rng(seed).permutation(n)
    covered = np.zeros(n, dtype=bool)
    rules: list[ConjunctiveRule] = []
    for i in order:
        if covered[i]:
            continue
        x = X[i]
        diff = X != x[None, :]  # (n, m): rows' disagreements with the seed
        viol = diff.sum(axis=1, dtype=np.int64)  # disagreements at held symbols
        wrong = codes != codes[i]
        mask = np.where(x, 1, -1).astype(np.int8)
        for j in range(m):
            dj = diff[:, j]
            # rows the relaxed rule would newly cover: one violation, at j
            newly = dj & (viol == 1)
            if not bool((newly & wrong).any()):
                viol -= dj
                mask[j] = 0
        for cols in groups:
            sub = mask[list(cols)]
            if np.count_nonzero(sub == -1) == len(cols) - 1 and np.count_nonzero(sub == 0) == 1:
                keep = cols[int(np.flatnonzero(sub == 0)[0])]
                for c in cols:
                    mask[c] = 0
                mask[keep] = 1
        covered |= viol == 0
        rules.append(ConjunctiveRule(labs[i], mask, int(i)))

    classes = tuple(dict.fromkeys(r.class_token for r in rules))
    log.info("extracted %d rule(s) over %d class(es) from %d rows", len(rules), len(classes), n)
    return RuleSet(tuple(rules), classes, tuple(column_names), fingerprint, seed)


def match_matrix(ruleset: RuleSet, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-matching rule index per row (-1 for none) and total match counts.

    Rules constrain few columns after generalization, so each one is tested
    with slices over just its active columns; this is the batch path the
    command-line classifier rides.
    """
    Xb = np.asarray(X)
    if Xb.ndim != 2:
        raise RuleError("expected a 2-d binary matrix")
    if Xb.shape[1] != ruleset.n_columns:
        raise RuleError(
            f"feature width {Xb.shape[1]} does not match ruleset width {ruleset.n_columns}"
        )
    Xb = Xb.astype(bool, copy=False)
    n = len(Xb)
    first = np.full(n, -1, dtype=np.int64)
    multi = np.zeros(n, dtype=np.int64)
    for r, rule in enumerate(ruleset.rules):
        req = rule.required
        forb = rule.forbidden
        sat = np.ones(n, dtype=bool)
        if req.size:
            sat &= Xb[:, req].all(axis=1)
        if forb.size:
            sat &= ~Xb[:, forb].any(axis=1)
        multi += sat
        first[sat & (first < 0)] = r
    return first, multi


def classify(ruleset: RuleSet, x: np.ndarray) -> ClassDecision:
    """Classify one feature row; UNKNOWN when no rule matches."""
    xv = np.asarray(x)
    if xv.ndim != 1:
        raise RuleError("classify takes a single feature row; see match_matrix for batches")
    first, multi = match_matrix(ruleset, xv[None, :])
    if first[0] < 0:
        return ClassDecision(UNKNOWN, None, int(multi[0]))
    return ClassDecision(ruleset.rules[first[0]].class_token, int(first[0]), int(multi[0]))


# --------------------------------------------------------------------------
# Ruleset persistence
# --------------------------------------------------------------------------

_SCHEMA_LINE = re.compile(r"schema ([0-9a-f]+)")
_COLUMNS_LINE = re.compile(r"columns (\d+)")
_TERM = re.compile(r"([+-])(\d+)")


def serialize_ruleset(ruleset: RuleSet) -> str:
    lines = [
        "RULESET v1",
        f"schema {ruleset.fingerprint}",
        f"columns {ruleset.n_columns}",
    ]
    lines.extend(
        f"col {j} {escape_token(name)}" for j, name in enumerate(ruleset.column_names)
    )
    for rule in ruleset.rules:
        terms = " ".join(
            ("+" if rule.mask[j] > 0 else "-") + str(j) for j in np.flatnonzero(rule.mask)
        )
        lines.append(f"{escape_token(rule.class_token)}\t{terms}")
    return "\n".join(lines) + "\n"


def parse_ruleset(text: str) -> RuleSet:
    lines = split_lines(text)

    def bad(lineno: int, msg: str):
        raise RulesetFormatError(f"line {lineno}: {msg}")

    if not lines or lines[0] != "RULESET v1":
        bad(1, "expected 'RULESET v1' header")
    if len(lines) < 3:
        bad(len(lines) + 1, "truncated ruleset file")
    m_schema = _SCHEMA_LINE.fullmatch(lines[1])
    if not m_schema:
        bad(2, "expected 'schema <hex fingerprint>'")
    m_cols = _COLUMNS_LINE.fullmatch(lines[2])
    if not m_cols:
        bad(3, "expected 'columns <count>'")
    m = int(m_cols.group(1))
    if m < 1:
        bad(3, "column count must be positive")

    names: list[str] = []
    for j in range(m):
        lineno = 4 + j
        if 3 + j >= len(lines):
            bad(len(lines) + 1, f"expected {m} col lines, file ended after {j}")
        parts = lines[3 + j].split(" ")
        if len(parts) != 3 or parts[0] != "col":
            bad(lineno, "expected 'col <ordinal> <name>'")
        if parts[1] != str(j):
            bad(lineno, f"column ordinal {parts[1]!r} out of order (expected {j})")
        try:
            names.append(unescape_token(parts[2]))
        except ValueError as exc:
            bad(lineno, str(exc))

    rules: list[ConjunctiveRule] = []
    for off, line in enumerate(lines[3 + m :]):
        lineno = 4 + m + off
        if "\t" not in line:
            bad(lineno, "rule line needs a tab between class token and terms")
        cls_s, terms_s = line.split("\t", 1)
        try:
            cls = unescape_token(cls_s)
        except ValueError as exc:
            bad(lineno, str(exc))
        mask = np.zeros(m, dtype=np.int8)
        prev = -1
        if terms_s:
            for tok in terms_s.split(" "):
                tm = _TERM.fullmatch(tok)
                if not tm:
                    bad(lineno, f"malformed term {tok!r}")
                j = int(tm.group(2))
                if j >= m:
                    bad(lineno, f"term index {j} out of range ({m} columns)")
                if j <= prev:
                    bad(lineno, "term indices must be strictly ascending")
                prev = j
                mask[j] = 1 if tm.group(1) == "+" else -1
        rules.append(ConjunctiveRule(cls, mask, None))
    if not rules:
        bad(len(lines) + 1, "ruleset file contains no rules")

    classes = tuple(dict.fromkeys(r.class_token for r in rules))
    return RuleSet(tuple(rules), classes, tuple(names), m_schema.group(1), None)


def save_ruleset(ruleset: RuleSet, path: str | Path) -> None:
    Path(path).write_text(serialize_ruleset(ruleset), encoding="utf-8")


def load_ruleset(path: str | Path) -> RuleSet:
    return parse_ruleset(Path(path).read_text(encoding="utf-8"))
