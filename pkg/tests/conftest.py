"""Shared test data: the IRIS table, blob clouds, synthetic traffic files.

Real KDD Cup 99 data is not bundled.  Tests that need it look for the file
via ``ANOMRULES_KDD_PATH`` or ``data/kddcup.data_10_percent[.gz]`` under the
repository root and skip with a pointer when it is absent.
"""
from __future__ import annotations

import csv
import os
import random
from pathlib import Path

import numpy as np
import pytest
from sklearn.datasets import load_iris

IRIS_COLUMNS = ("sepal_length", "sepal_width", "petal_length", "petal_width")

REPO_ROOT = Path(__file__).resolve().parent.parent


def find_kdd_file() -> Path | None:
    env = os.environ.get("ANOMRULES_KDD_PATH")
    if env:
        p = Path(env)
        if p.is_file():
            return p
    for name in ("kddcup.data_10_percent", "kddcup.data_10_percent.gz"):
        p = REPO_ROOT / "data" / name
        if p.is_file():
            return p
    return None


requires_kdd = pytest.mark.skipif(
    find_kdd_file() is None,
    reason="KDD Cup 99 10% file not found; set ANOMRULES_KDD_PATH or place "
    "kddcup.data_10_percent[.gz] under data/",
)


@pytest.fixture(scope="session")
def iris_arrays():
    data = load_iris()
    species = [str(data.target_names[t]) for t in data.target]
    return np.asarray(data.data, dtype=float), species


@pytest.fixture(scope="session")
def iris_csv(tmp_path_factory, iris_arrays) -> Path:
    X, species = iris_arrays
    path = tmp_path_factory.mktemp("irisdata") / "iris.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IRIS_COLUMNS + ("species",))
        for row, label in zip(X, species):
            w.writerow([f"{v:g}" for v in row] + [label])
    return path


def make_two_blobs(n: int = 100, seed: int = 0, d: int = 3, separation: float = 8.0,
                   std: float = 0.05):
    """Two tight Gaussian clouds with known membership, rows shuffled."""
    rng = np.random.default_rng(seed)
    half = n // 2
    a = rng.normal(0.0, std, size=(half, d))
    b = rng.normal(separation, std, size=(n - half, d))
    pts = np.vstack([a, b])
    member = np.array([0] * half + [1] * (n - half))
    perm = rng.permutation(n)
    return pts[perm], member[perm]


# ---------------------------------------------------------------------------
# Synthetic KDD-format traffic.  Two crude profiles: chatty http sessions vs
# a flood-ish attacker.  Enough structure for clustering to find both.
# ---------------------------------------------------------------------------

_KDD_KINDS = (
    [("duration", "int"), ("protocol_type", "cat"), ("service", "cat"), ("flag", "cat"),
     ("src_bytes", "int"), ("dst_bytes", "int"), ("land", "cat"), ("wrong_fragment", "int"),
     ("urgent", "int"), ("hot", "int"), ("num_failed_logins", "int"), ("logged_in", "cat"),
     ("num_compromised", "int"), ("root_shell", "int"), ("su_attempted", "int"),
     ("num_root", "int"), ("num_file_creations", "int"), ("num_shells", "int"),
     ("num_access_files", "int"), ("num_outbound_cmds", "int"), ("is_host_login", "cat"),
     ("is_guest_login", "cat"), ("count", "int"), ("srv_count", "int")]
    + [(f"rate{i}", "rate") for i in range(7)]
    + [("dst_host_count", "int"), ("dst_host_srv_count", "int")]
    + [(f"host_rate{i}", "rate") for i in range(8)]
)
assert len(_KDD_KINDS) == 41


def synth_kdd_line(rng: random.Random, attack: bool, labeled: bool = True) -> str:
    vals = []
    for name, kind in _KDD_KINDS:
        if kind == "cat":
            if name == "protocol_type":
                vals.append("tcp" if not attack else rng.choice(["tcp", "icmp"]))
            elif name == "service":
                vals.append(rng.choice(["http", "smtp"]) if not attack else "ecr_i")
            elif name == "flag":
                vals.append("SF" if not attack else rng.choice(["S0", "REJ"]))
            elif name == "logged_in":
                vals.append("1" if not attack else "0")
            else:
                vals.append("0")
        elif kind == "int":
            if name == "src_bytes":
                vals.append(str(rng.randint(100, 2000) if not attack else rng.randint(0, 5)))
            elif name == "count":
                vals.append(str(rng.randint(1, 20) if not attack else rng.randint(200, 511)))
            elif name == "dst_host_count":
                vals.append(str(rng.randint(1, 40) if not attack else 255))
            else:
                vals.append("0")
        else:
            lo, hi = (0.0, 0.05) if not attack else (0.9, 1.0)
            vals.append(f"{rng.uniform(lo, hi):.2f}")
    if labeled:
        vals.append("normal." if not attack else "neptune.")
    return ",".join(vals)


def write_synth_kdd(path: Path, n_normal: int, n_attack: int, seed: int = 0,
                    labeled: bool = True) -> list[str]:
    """Write a shuffled synthetic capture; returns the truth labels in file order."""
    rng = random.Random(seed)
    rows = [(synth_kdd_line(rng, False, labeled), "normal") for _ in range(n_normal)]
    rows += [(synth_kdd_line(rng, True, labeled), "attack") for _ in range(n_attack)]
    rng.shuffle(rows)
    path.write_text("\n".join(line for line, _ in rows) + "\n", encoding="utf-8")
    return [truth for _, truth in rows]


@pytest.fixture(scope="session")
def synth_kdd_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("kdddata") / "synth_kdd.txt"
    write_synth_kdd(path, 300, 100, seed=7)
    return path


APACHE_PATHS = ["/index.html", "/about", "/api/items", "/static/app.js", "/img/logo.png"]
APACHE_PROBES = ["/admin.php?cmd=../../etc/passwd", "/login.jsp%00", "/cgi-bin/test?x=<script>"]


def write_synth_apache(path: Path, n_normal: int = 240, n_probe: int = 60, seed: int = 11) -> None:
    rng = random.Random(seed)
    lines = []
    for i in range(n_normal):
        p = rng.choice(APACHE_PATHS)
        size = rng.randint(500, 4000)
        lines.append(
            f'10.0.0.{rng.randint(1, 50)} - - [12/Aug/2026:10:{i % 60:02d}:00 +0000] '
            f'"GET {p} HTTP/1.1" 200 {size} "-" "Mozilla/5.0"'
        )
    for i in range(n_probe):
        p = rng.choice(APACHE_PROBES)
        lines.append(
            f'172.16.9.{rng.randint(1, 9)} - - [12/Aug/2026:11:{i % 60:02d}:00 +0000] '
            f'"GET {p} HTTP/1.1" 404 {rng.randint(100, 300)} "-" "sqlmap/1.5"'
        )
    rng.shuffle(lines)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def synth_apache_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("apachedata") / "access.log"
    write_synth_apache(path)
    return path
