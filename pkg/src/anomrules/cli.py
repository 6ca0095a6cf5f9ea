"""Command-line workflow: train a rule model, classify, evaluate, inspect.

    anomrules train --format kdd --model-dir model traffic.gz
    anomrules classify --model-dir model fresh.gz > decisions.tsv
    anomrules eval --model-dir model labeled.gz
    anomrules inspect --model-dir model --grid

A model directory is plain text: ``schema.txt`` (the feature space),
``rules.txt`` (the ordered ruleset), ``config.txt`` (the resolved run
configuration) and ``diag/`` with TSV diagnostics plus PNG figures.

Exit codes: 0 success, 2 usage, 3 unusable input data, 4 a pipeline stage
failed, 5 model directory missing/corrupt/mismatched.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from pathlib import Path

import numpy as np

from . import __version__
from ._textio import split_lines
from .clustering import (
    ClusteringError,
    KSelection,
    kmeans,
    label_clusters,
    select_k,
    silhouette,
)
from .embedding import DiffusionConfig, EmbeddingError, embed
from .features import (
    BinaryFeatureMatrix,
    FeatureError,
    FeatureSchema,
    SchemaFormatError,
    binarize,
    binarize_columns,
    fit_schema,
    load_schema,
    ngram_count_matrix,
    save_schema,
)
from .ingest import (
    CsvLayout,
    Dataset,
    IngestError,
    SourceFormat,
    iter_kdd_blocks,
    iter_records,
    load_dataset,
    parse_csv_layout,
    serialize_csv_layout,
)
from .metrics import (
    ATTACK,
    NORMAL,
    ConfusionMatrix,
    MetricsError,
    MulticlassTable,
    compute_metrics,
    format_confusion,
    format_metrics,
    format_multiclass,
    metrics_tsv,
)
from .rules import (
    UNKNOWN,
    RuleError,
    RuleSet,
    RulesetFormatError,
    extract_rules,
    load_ruleset,
    match_matrix,
    save_ruleset,
)
from . import report

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_STAGE = 4
EXIT_MODEL = 5

_CHUNK = 8192


class StageError(Exception):
    """A pipeline stage could not run as configured."""


class ModelMismatchError(Exception):
    """The model directory is incomplete, corrupt, or internally inconsistent."""


# --------------------------------------------------------------------------
# Model directory
# --------------------------------------------------------------------------


def write_config(path: Path, pairs: list[tuple[str, object]]) -> None:
    lines = ["CONFIG v1"] + [f"{k} {v}" for k, v in pairs]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path: Path) -> dict[str, str]:
    lines = split_lines(path.read_text(encoding="utf-8"))
    if not lines or lines[0] != "CONFIG v1":
        raise ModelMismatchError(f"{path}: expected 'CONFIG v1' header")
    out: dict[str, str] = {}
    for line in lines[1:]:
        if line.strip():
            key, _, value = line.partition(" ")
            out[key] = value
    return out


def load_model(model_dir: str | Path) -> tuple[FeatureSchema, RuleSet, dict[str, str]]:
    model_dir = Path(model_dir)
    paths = {name: model_dir / name for name in ("schema.txt", "rules.txt", "config.txt")}
    for p in paths.values():
        if not p.is_file():
            raise ModelMismatchError(f"model directory {model_dir} is missing {p.name}")
    schema = load_schema(paths["schema.txt"])
    ruleset = load_ruleset(paths["rules.txt"])
    config = load_config(paths["config.txt"])
    if ruleset.fingerprint != schema.fingerprint:
        raise ModelMismatchError("rules.txt was built against a different schema than schema.txt")
    if ruleset.column_names != schema.column_names:
        raise ModelMismatchError("ruleset columns disagree with the schema")
    return schema, ruleset, config


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _record_preview(ds: Dataset, idx: int) -> str:
    r = ds.records[idx]
    if r.text is not None:
        return r.text[:57] + "..." if len(r.text) > 60 else r.text
    parts = [f"{n}={v}" for n, v in list(zip(ds.categorical_names, r.categorical))[:3]]
    parts += [f"{n}={v:g}" for n, v in list(zip(ds.continuous_names, r.continuous))[:3]]
    return " ".join(parts) if parts else "(empty)"


def _prompt_manual(ds: Dataset, model) -> str:
    sizes = np.bincount(model.assignment, minlength=model.k)
    print("clusters found:")
    for c in range(model.k):
        members = np.flatnonzero(model.assignment == c)
        preview = _record_preview(ds, int(members[0])) if members.size else "(empty)"
        print(f"  {c + 1}: {int(sizes[c])} row(s)   e.g. {preview}")
    try:
        reply = input("normal cluster id(s), comma-separated: ")
    except EOFError:
        raise ClusteringError(
            "manual labeling needs an interactive answer; pass manual:<ids> when not on a tty"
        ) from None
    return "manual:" + reply.strip()


def _consensus_assignment(bits: np.ndarray, assignment: np.ndarray) -> tuple[np.ndarray, int]:
    """Give identical binary rows one cluster: the most common, ties downward."""
    by_pattern: dict[bytes, list[int]] = {}
    for i, row in enumerate(bits):
        by_pattern.setdefault(row.tobytes(), []).append(i)
    out = np.asarray(assignment).copy()
    moved = 0
    for rows in by_pattern.values():
        votes = Counter(int(out[i]) for i in rows)
        if len(votes) == 1:
            continue
        top = max(votes.values())
        winner = min(c for c, n in votes.items() if n == top)
        for i in rows:
            if out[i] != winner:
                out[i] = winner
                moved += 1
    return out, moved


def cmd_train(args: argparse.Namespace) -> int:
    csv_header = {"auto": None, "yes": True, "no": False}[args.csv_header]
    ds = load_dataset(
        args.data,
        args.format,
        limit=args.limit,
        seed=args.seed,
        include_user_agent=args.include_user_agent,
        csv_header=csv_header,
    )
    if ds.n > args.train_cap:
        raise StageError(
            f"training set has {ds.n} rows, above the cap of {args.train_cap}; "
            f"subsample with --limit or raise --train-cap"
        )

    schema = fit_schema(ds, n_bins=args.bins, ngram_n=args.ngram)
    matrix = binarize(ds, schema)

    scan = decomp = None
    coords = None
    if args.skip_embedding:
        if args.epsilon is not None or args.dims is not None:
            log.warning("--epsilon/--dims are ignored with --skip-embedding")
        if ds.continuous_names and not ds.categorical_names and not ds.has_text:
            # Purely numeric data is clustered as-is; binning is only the
            # encoding the rules need, and it coarsens distances enough to
            # merge close groups that the raw measurements still separate.
            points = np.array([r.continuous for r in ds.records], dtype=float)
            cluster_space = "raw"
        else:
            points = matrix.bits.astype(float)
            cluster_space = "binary"
        epsilon = dims = None
    else:
        emb_input: BinaryFeatureMatrix | np.ndarray = matrix
        if args.ngram_counts:
            if schema.ngram is not None:
                emb_input = ngram_count_matrix(ds, schema)
            else:
                log.warning("--ngram-counts ignored: schema has no n-gram section")
        result = embed(
            emb_input,
            DiffusionConfig(epsilon=args.epsilon, dims=args.dims, seed=args.seed),
        )
        points = result.embedding.coords
        scan, decomp = result.scan, result.decomposition
        epsilon, dims = result.embedding.epsilon, result.embedding.dims
        coords = points
        cluster_space = "embedded"

    if args.k is not None:
        model = kmeans(points, args.k, seed=args.seed, restarts=args.restarts)
        curve = ((args.k, silhouette(points, model.assignment).mean),)
    else:
        sel: KSelection = select_k(
            points, k_range=tuple(args.k_range), seed=args.seed, restarts=args.restarts
        )
        model, curve = sel.model, sel.curve

    relabeled, moved = _consensus_assignment(matrix.bits, model.assignment)
    if moved:
        # Clustering saw more detail than the binary encoding keeps, so rows
        # with identical encodings can land in different clusters; the rules
        # cannot tell such rows apart, and extraction rejects the conflict.
        # Give every group of identical rows its majority cluster.
        log.info("reassigned %d row(s) whose identical encodings straddled clusters", moved)
        model = dataclasses.replace(model, assignment=relabeled)

    strategy = args.labeling
    if strategy == "manual":
        strategy = _prompt_manual(ds, model)
    labeling = label_clusters(model, strategy)
    ruleset = extract_rules(matrix, labeling.of(model.assignment), seed=args.seed)

    model_dir = Path(args.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    save_schema(schema, model_dir / "schema.txt")
    save_ruleset(ruleset, model_dir / "rules.txt")
    pairs: list[tuple[str, object]] = [
        ("format", args.format),
        ("bins", args.bins),
        ("ngram", args.ngram),
        ("ngram_counts", str(args.ngram_counts).lower()),
        ("include_user_agent", str(args.include_user_agent).lower()),
        ("skip_embedding", str(args.skip_embedding).lower()),
        ("cluster_space", cluster_space),
        ("epsilon", repr(float(epsilon)) if epsilon is not None else "none"),
        ("dims", dims if dims is not None else "none"),
        ("k", model.k),
        ("k_range", f"{args.k_range[0]}:{args.k_range[1]}"),
        ("restarts", args.restarts),
        ("seed", args.seed),
        ("limit", args.limit if args.limit is not None else "none"),
        ("train_cap", args.train_cap),
        ("labeling", labeling.strategy),
    ]
    if ds.csv_layout is not None:
        pairs.append(("csv_layout", serialize_csv_layout(ds.csv_layout)))
    write_config(model_dir / "config.txt", pairs)
    report.write_diagnostics(
        model_dir,
        scan=scan,
        decomposition=decomp,
        curve=curve,
        coords=coords,
        model=model,
        cluster_classes=labeling.cluster_classes,
        ruleset=ruleset,
        figures=not args.no_figures,
    )

    sizes = np.bincount(model.assignment, minlength=model.k)
    per_class = Counter(r.class_token for r in ruleset.rules)
    print(f"rows: {ds.n}")
    print(f"feature columns: {schema.n_columns}")
    if args.skip_embedding:
        print(f"embedding: skipped (clustered {cluster_space} feature rows)")
    else:
        print(f"embedding: epsilon={epsilon:.6g} dims={dims}")
    print(f"clusters: k={model.k} sizes={[int(s) for s in sizes]}")
    print(f"labeling: {labeling.strategy}")
    print(
        "rules: "
        + f"{len(ruleset.rules)} total ("
        + ", ".join(f"{c}: {per_class[c]}" for c in ruleset.classes)
        + ")"
    )
    print(f"model written to {model_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# classify / eval
# --------------------------------------------------------------------------


def _chunked(items: Iterable, size: int) -> Iterator[list]:
    chunk: list = []
    for item in items:
        chunk.append(item)
        if len(chunk) >= size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def _resolve_input_format(args, config: dict[str, str]) -> tuple[str, CsvLayout | None, bool]:
    fmt = args.format or config.get("format")
    if fmt is None:
        raise ModelMismatchError("config.txt does not record the input format")
    if args.format is not None and args.format != config.get("format"):
        log.warning(
            "input format %r overrides the trained format %r", args.format, config.get("format")
        )
    layout: CsvLayout | None = None
    if fmt == SourceFormat.CSV.value:
        if "csv_layout" not in config:
            raise IngestError(
                "model was not trained on csv input; cannot parse csv without a stored layout"
            )
        layout = parse_csv_layout(config["csv_layout"])
    include_ua = config.get("include_user_agent") == "true"
    return fmt, layout, include_ua


def _binarize_for_model(records, schema: FeatureSchema) -> BinaryFeatureMatrix:
    try:
        return binarize(records, schema)
    except FeatureError as exc:
        raise ModelMismatchError(f"input does not fit the model's schema: {exc}") from None


def _iter_model_blocks(args, config: dict[str, str], schema: FeatureSchema):
    """Yield (bits, labels) slabs of the input file in order.

    Connection-record input goes through the columnar reader, skipping
    Record construction entirely; the other formats chunk the plain record
    stream.  Returns the generator plus the malformed-line counter.
    """
    fmt, layout, include_ua = _resolve_input_format(args, config)
    skip = [0]

    def blocks() -> Iterator[tuple[np.ndarray, Sequence[str | None]]]:
        if fmt == SourceFormat.KDD.value:
            for blk in iter_kdd_blocks(args.data):
                try:
                    bits = binarize_columns(blk.continuous, blk.categorical, None, schema)
                except FeatureError as exc:
                    raise ModelMismatchError(
                        f"input does not fit the model's schema: {exc}"
                    ) from None
                yield bits.bits, blk.labels
        else:
            stream = iter_records(
                args.data, fmt, include_user_agent=include_ua,
                csv_layout=layout, skip_counter=skip,
            )
            for chunk in _chunked(stream, _CHUNK):
                yield _binarize_for_model(chunk, schema).bits, [r.label for r in chunk]

    return blocks(), skip


def cmd_classify(args: argparse.Namespace) -> int:
    schema, ruleset, config = load_model(args.model_dir)
    blocks, skip = _iter_model_blocks(args, config, schema)
    tokens = [r.class_token for r in ruleset.rules]
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    rows = unknown = 0
    try:
        for bits, _labels in blocks:
            first, multi = match_matrix(ruleset, bits)
            lines = []
            for f, m in zip(first.tolist(), multi.tolist()):
                rows += 1
                if f < 0:
                    unknown += 1
                    lines.append(f"{rows}\t{UNKNOWN}\t{UNKNOWN}\t{m}")
                else:
                    lines.append(f"{rows}\t{tokens[f]}\t{f + 1}\t{m}")
            print("\n".join(lines), file=out)
    finally:
        if args.output:
            out.close()
    if rows == 0:
        raise IngestError(f"no records parsed from {args.data}")
    log.info("classified %d row(s); %d unknown; %d malformed line(s) skipped", rows, unknown, skip[0])
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    schema, ruleset, config = load_model(args.model_dir)
    blocks, skip = _iter_model_blocks(args, config, schema)
    binary = set(ruleset.classes) == {NORMAL, ATTACK}
    pair_counts: Counter[tuple[str, str]] = Counter()  # (truth, predicted)
    rows = unknown = 0
    for bits, labels in blocks:
        first, multi = match_matrix(ruleset, bits)
        for f, label in zip(first.tolist(), labels):
            rows += 1
            if label is None:
                raise MetricsError(f"row {rows} has no label; eval needs labeled data")
            pred = UNKNOWN if f < 0 else ruleset.rules[f].class_token
            unknown += int(f < 0)
            truth = (NORMAL if label == NORMAL else ATTACK) if binary else label
            pair_counts[(truth, pred)] += 1
    if rows == 0:
        raise IngestError(f"no records parsed from {args.data}")

    print(f"rows: {rows}   unknown: {unknown}   skipped: {skip[0]}")
    if binary:
        tp = fp = tn = fn = excluded = 0
        for (truth, pred), c in pair_counts.items():
            if pred == UNKNOWN:
                if args.unknown_policy == "exclude":
                    excluded += c
                    continue
                pred = ATTACK
            if pred == ATTACK:
                if truth == ATTACK:
                    tp += c
                else:
                    fp += c
            else:
                if truth == ATTACK:
                    fn += c
                else:
                    tn += c
        cm = ConfusionMatrix(tp, fp, tn, fn, excluded)
        rep = compute_metrics(cm)
        print(format_confusion(cm))
        print(format_metrics(rep))
        if args.tsv:
            print(metrics_tsv(rep))
    else:
        truth_classes = tuple(sorted({t for t, _ in pair_counts}))
        preds = {p for _, p in pair_counts}
        pred_classes = tuple(sorted(preds - {UNKNOWN}) + ([UNKNOWN] if UNKNOWN in preds else []))
        counts = np.zeros((len(truth_classes), len(pred_classes)), dtype=np.int64)
        ti = {c: i for i, c in enumerate(truth_classes)}
        pi = {c: i for i, c in enumerate(pred_classes)}
        for (t, p), c in pair_counts.items():
            counts[ti[t], pi[p]] += c
        table = MulticlassTable(truth_classes, pred_classes, counts)
        print(format_multiclass(table))
        if args.tsv:
            for i, t in enumerate(truth_classes):
                for j, p in enumerate(pred_classes):
                    print(f"count\t{t}\t{p}\t{int(counts[i, j])}")
    return EXIT_OK


# --------------------------------------------------------------------------
# inspect
# --------------------------------------------------------------------------


def _column_renderers(schema: FeatureSchema) -> dict[str, tuple[str, str]]:
    out: dict[str, tuple[str, str]] = {}
    for spec in schema.continuous:
        edges = spec.edges
        for k in range(1, spec.n_bins + 1):
            closer = "]" if k == spec.n_bins else ")"
            span = f"bin{k} [{edges[k - 1]:g}, {edges[k]:g}{closer}"
            out[f"{spec.name}:bin{k}"] = (
                f"{spec.name} in {span}",
                f"{spec.name} not in {span}",
            )
    for cspec in schema.categorical:
        for tok in cspec.vocabulary:
            out[f"{cspec.name}={tok}"] = (
                f"{cspec.name} = {tok!r}",
                f"{cspec.name} != {tok!r}",
            )
    if schema.ngram is not None:
        for g in schema.ngram.vocabulary:
            out[f"ngram:{g}"] = (f"text contains {g!r}", f"text lacks {g!r}")
    return out


def render_rule(schema: FeatureSchema, ruleset: RuleSet, index: int) -> str:
    rule = ruleset.rules[index]
    renderers = _column_renderers(schema)
    conds = []
    for j in np.flatnonzero(rule.mask):
        name = ruleset.column_names[j]
        pos, neg = renderers.get(name, (name, f"not {name}"))
        conds.append(pos if rule.mask[j] > 0 else neg)
    body = " AND ".join(conds) if conds else "(always)"
    return f"rule {index + 1} [{rule.class_token}] {body}"


def cmd_inspect(args: argparse.Namespace) -> int:
    schema, ruleset, config = load_model(args.model_dir)
    print(f"model: {args.model_dir}")
    print(f"format: {config.get('format', '?')}")
    print(f"feature columns: {schema.n_columns} (fingerprint {schema.fingerprint[:12]})")
    print(f"classes: {', '.join(ruleset.classes)}")
    print(f"rules: {len(ruleset.rules)}")
    for i in range(len(ruleset.rules)):
        print(render_rule(schema, ruleset, i))
    if args.grid:
        print()
        for i, rule in enumerate(ruleset.rules):
            marks = "".join("+" if v > 0 else "-" if v < 0 else "." for v in rule.mask)
            print(f"{i + 1}\t{rule.class_token}\t{marks}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomrules",
        description="Learn traffic classes from unlabeled data and classify with conjunctive rules.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging"
    )
    common.add_argument("--model-dir", required=True, type=Path, help="model directory")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="learn a rule model from traffic data")
    t.add_argument("data", type=Path, help="input file (.gz accepted)")
    t.add_argument("--format", required=True, choices=["kdd", "apache", "csv"])
    t.add_argument("--bins", type=int, default=10, help="equal-width bins per continuous field (default 10)")
    t.add_argument("--ngram", type=int, default=2, help="character n-gram size for text inputs (default 2)")
    t.add_argument("--ngram-counts", action="store_true", help="embed n-gram counts instead of presence bits")
    t.add_argument("--include-user-agent", action="store_true", help="append the user agent to log request text")
    t.add_argument("--csv-header", choices=["auto", "yes", "no"], default="auto")
    t.add_argument("--epsilon", type=float, default=None, help="kernel bandwidth (default: automatic scan)")
    t.add_argument("--dims", type=int, default=None, help="embedding width (default: largest eigengap)")
    t.add_argument("--skip-embedding", action="store_true", help="cluster raw binary rows directly")
    t.add_argument("--k", type=int, default=None, help="cluster count (default: silhouette scan over --k-range)")
    t.add_argument("--k-range", type=int, nargs=2, default=[2, 20], metavar=("MIN", "MAX"))
    t.add_argument("--restarts", type=int, default=10, help="k-means restarts (default 10)")
    t.add_argument("--seed", type=int, default=0, help="seed for every stochastic stage (default 0)")
    t.add_argument("--limit", type=int, default=None, help="seeded uniform subsample of the input")
    t.add_argument("--train-cap", type=int, default=25000, help="refuse larger training sets (default 25000)")
    t.add_argument(
        "--labeling",
        default="largest-is-normal",
        help="largest-is-normal | manual[:ids] | per-cluster-classes (default largest-is-normal)",
    )
    t.add_argument("--no-figures", action="store_true", help="skip PNG rendering of diagnostics")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("classify", parents=[common], help="classify rows with a trained model")
    c.add_argument("data", type=Path)
    c.add_argument("--format", choices=["kdd", "apache", "csv"], default=None,
                   help="override the trained input format")
    c.add_argument("--output", type=Path, default=None, help="write decisions here instead of stdout")
    c.set_defaults(func=cmd_classify)

    e = sub.add_parser("eval", parents=[common], help="score a trained model on labeled rows")
    e.add_argument("data", type=Path)
    e.add_argument("--format", choices=["kdd", "apache", "csv"], default=None)
    e.add_argument("--unknown-policy", choices=["as-attack", "exclude"], default="as-attack",
                   help="how UNKNOWN rows are scored (default as-attack)")
    e.add_argument("--tsv", action="store_true", help="append machine-readable key/value lines")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", parents=[common], help="print a model's rules in readable form")
    i.add_argument("--grid", action="store_true", help="also print the +/-/. rule grid")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )
    try:
        return args.func(args)
    except (ModelMismatchError, SchemaFormatError, RulesetFormatError) as exc:
        log.error("%s", exc)
        return EXIT_MODEL
    except (IngestError, MetricsError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (StageError, FeatureError, EmbeddingError, ClusteringError, RuleError) as exc:
        log.error("%s", exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
