"""Batch anomaly detection that explains itself.

Traffic classes are learned from unlabeled data in three steps -- binary
feature encoding, diffusion-map embedding, k-means clustering -- and then
distilled into an ordered set of conjunctive rules over the binary columns.
New traffic is classified by first-match rule scanning, so the model is
both fast to apply and readable by a person.
"""

__version__ = "0.1.0"

from .clustering import (
    ClassLabeling,
    ClusteringError,
    ClusterModel,
    KSelection,
    SilhouetteReport,
    kmeans,
    label_clusters,
    select_k,
    silhouette,
)
from .embedding import (
    DegenerateDataError,
    DiffusionConfig,
    EmbedResult,
    Embedding,
    EmbeddingError,
    EpsilonScan,
    SpectralDecomposition,
    compute_affinity,
    diffusion_coordinates,
    embed,
    pairwise_sq_dists,
    scan_epsilon,
    select_dimension,
    spectral_decompose,
)
from .features import (
    BinaryFeatureMatrix,
    CategoricalSpec,
    ContinuousSpec,
    FeatureError,
    FeatureSchema,
    NgramSpec,
    SchemaFormatError,
    bin_index,
    bin_indices,
    binarize,
    column_fingerprint,
    extract_ngrams,
    fit_schema,
    load_schema,
    ngram_count_matrix,
    parse_schema,
    save_schema,
    serialize_schema,
)
from .ingest import (
    CsvLayout,
    Dataset,
    IngestError,
    ParseError,
    Record,
    SourceFormat,
    iter_records,
    load_dataset,
    parse_apache_line,
    parse_csv_dataset,
    parse_kdd_record,
)
from .metrics import (
    ATTACK,
    NORMAL,
    ConfusionMatrix,
    MetricsError,
    MetricsReport,
    MulticlassTable,
    binarize_truth,
    compute_metrics,
    confusion,
    multiclass_table,
)
from .rules import (
    UNKNOWN,
    ClassDecision,
    ConjunctiveRule,
    ContradictoryLabelsError,
    RuleError,
    RuleSet,
    RulesetFormatError,
    classify,
    extract_rules,
    load_ruleset,
    match_matrix,
    matches,
    parse_ruleset,
    save_ruleset,
    serialize_ruleset,
)
