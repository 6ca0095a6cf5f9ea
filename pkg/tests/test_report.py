"""Diagnostic TSV/PNG dumps left behind by a training run."""
import numpy as np

from anomrules.clustering import ClusterModel
from anomrules.embedding import EpsilonScan, SpectralDecomposition
from anomrules.report import write_diagnostics
from anomrules.rules import extract_rules

PNGS = {"epsilon_scan.png", "eigenvalues.png", "silhouette.png", "embedding.png", "rule_grid.png"}
TSVS = {
    "epsilon_scan.tsv",
    "eigenvalues.tsv",
    "silhouette.tsv",
    "embedding.tsv",
    "clusters.tsv",
    "rules_summary.tsv",
}


def full_inputs():
    scan = EpsilonScan(
        epsilons=np.logspace(-2, 2, 9),
        kernel_sums=np.linspace(10.0, 90.0, 9),
        chosen=1.0,
        sample_indices=np.arange(5),
    )
    decomp = SpectralDecomposition(
        eigenvalues=np.array([1.0, 0.8, 0.3]),
        eigenvectors=np.ones((6, 3)),
        degrees=np.ones(6),
    )
    curve = ((2, 0.81), (3, 0.52), (4, 0.4))
    coords = np.random.default_rng(0).normal(size=(6, 2))
    model = ClusterModel(
        k=2,
        centroids=np.zeros((2, 2)),
        assignment=np.array([0, 0, 0, 0, 1, 1]),
        inertia=1.0,
        seed=0,
        inertia_history=(2.0, 1.0),
    )
    X = np.array([[1, 0], [1, 0], [1, 1], [1, 1], [0, 1], [0, 0]], dtype=np.uint8)
    ruleset = extract_rules(X, ["normal"] * 4 + ["attack"] * 2, seed=0)
    return dict(
        scan=scan,
        decomposition=decomp,
        curve=curve,
        coords=coords,
        model=model,
        cluster_classes=("normal", "attack"),
        ruleset=ruleset,
    )


def read_tsv(path):
    lines = path.read_text(encoding="utf-8").rstrip("\n").split("\n")
    header = lines[0].split("\t")
    return header, [line.split("\t") for line in lines[1:]]


def test_full_run_leaves_all_artifacts(tmp_path):
    diag = write_diagnostics(tmp_path / "model", **full_inputs())
    assert diag == tmp_path / "model" / "diag"
    names = {p.name for p in diag.iterdir()}
    assert names == PNGS | TSVS
    for p in diag.iterdir():
        assert p.stat().st_size > 0, p.name


def test_figures_can_be_disabled(tmp_path):
    diag = write_diagnostics(tmp_path / "model", figures=False, **full_inputs())
    assert {p.name for p in diag.iterdir()} == TSVS


def test_tables_carry_the_numbers(tmp_path):
    inputs = full_inputs()
    diag = write_diagnostics(tmp_path / "model", figures=False, **inputs)

    header, rows = read_tsv(diag / "epsilon_scan.tsv")
    assert header == ["epsilon", "kernel_sum"]
    got = np.array([[float(a), float(b)] for a, b in rows])
    np.testing.assert_array_equal(got[:, 0], inputs["scan"].epsilons)
    np.testing.assert_array_equal(got[:, 1], inputs["scan"].kernel_sums)

    header, rows = read_tsv(diag / "eigenvalues.tsv")
    assert header == ["index", "eigenvalue"]
    assert [int(i) for i, _ in rows] == [0, 1, 2]
    np.testing.assert_array_equal(
        [float(v) for _, v in rows], inputs["decomposition"].eigenvalues
    )

    header, rows = read_tsv(diag / "silhouette.tsv")
    assert [(int(k), float(s)) for k, s in rows] == list(inputs["curve"])

    header, rows = read_tsv(diag / "embedding.tsv")
    assert header == ["row", "c1", "c2", "cluster"]
    assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5, 6]
    assert [int(r[-1]) for r in rows] == [1, 1, 1, 1, 2, 2]  # 1-based ids
    np.testing.assert_allclose(
        np.array([[float(r[1]), float(r[2])] for r in rows]), inputs["coords"]
    )

    header, rows = read_tsv(diag / "clusters.tsv")
    assert header == ["cluster", "size", "class"]
    assert rows == [["1", "4", "normal"], ["2", "2", "attack"]]

    header, rows = read_tsv(diag / "rules_summary.tsv")
    assert header == ["rule", "class", "required", "forbidden"]
    assert len(rows) == len(inputs["ruleset"].rules)
    for (num, cls, req, forb), rule in zip(rows, inputs["ruleset"].rules):
        assert int(num) >= 1 and cls == rule.class_token
        assert int(req) == int((rule.mask == 1).sum())
        assert int(forb) == int((rule.mask == -1).sum())


def test_partial_inputs_write_partial_diagnostics(tmp_path):
    inputs = full_inputs()
    diag = write_diagnostics(tmp_path / "m1", scan=inputs["scan"], figures=False)
    assert {p.name for p in diag.iterdir()} == {"epsilon_scan.tsv"}
    diag = write_diagnostics(tmp_path / "m2")
    assert list(diag.iterdir()) == []


def test_one_dimensional_embedding_still_plots(tmp_path):
    inputs = full_inputs()
    diag = write_diagnostics(
        tmp_path / "model", coords=inputs["coords"][:, :1], model=inputs["model"]
    )
    header, rows = read_tsv(diag / "embedding.tsv")
    assert header == ["row", "c1", "cluster"]
    assert (diag / "embedding.png").stat().st_size > 0
