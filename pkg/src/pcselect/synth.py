"""Synthetic SPD corpora with planted structure.

Two families whose best preconditioners differ systematically:

  diagdom - scattered sparsity with a strongly dominant diagonal; cheap
            diagonal scaling already wins, factorization setup cost does not
            pay off.
  band    - narrow-band chains with a barely dominant diagonal; plain CG
            crawls, while incomplete factorizations are exact (no fill
            outside a tridiagonal pattern) and triangular-sweep methods
            converge quickly.

Used by the desk-scale end-to-end experiment and the corpus scripts.
"""

import hashlib
from pathlib import Path

import numpy as np

from .matio import (
    ManifestEntry,
    MatrixManifest,
    SparseMatrix,
    from_coo,
    write_matrix_market,
    _sha256_file,
)

FAMILIES = ("diagdom", "band")


def _family_seed(base_seed, family, index):
    digest = hashlib.sha256(f"{base_seed}:{family}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def diagdom_matrix(seed, n_range=(1800, 2600), row_degree=8) -> SparseMatrix:
    """Scattered symmetric pattern, diagonal 2-4x the off-diagonal row sum.

    Sized so that matrix-vector flops dominate solver bookkeeping: diagonal
    scaling converges in a handful of iterations while factorization-based
    kinds pay setup and triangular sweeps without an iteration payoff.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(*n_range))
    k = row_degree * n
    i = rng.integers(0, n, size=k)
    j = rng.integers(0, n, size=k)
    off = i != j
    i, j = i[off], j[off]
    v = rng.uniform(-1.0, 1.0, size=i.size)
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([v, v])
    # off-diagonal absolute row sums (duplicates may still exist; they sum)
    absrow = np.bincount(rows, weights=np.abs(vals), minlength=n)
    diag = absrow * rng.uniform(2.0, 4.0, size=n) + rng.uniform(0.5, 1.0, size=n)
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, diag])
    return from_coo(n, n, rows, cols, vals)


def band_matrix(seed, n_range=(1200, 2000), slack=0.02) -> SparseMatrix:
    """Symmetric tridiagonal chain, barely diagonally dominant."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(*n_range))
    off = -(0.8 + 0.4 * rng.random(n - 1))
    diag = np.zeros(n)
    diag[:-1] += np.abs(off)
    diag[1:] += np.abs(off)
    diag += slack * (0.5 + rng.random(n))
    idx = np.arange(n - 1)
    rows = np.concatenate([np.arange(n), idx, idx + 1])
    cols = np.concatenate([np.arange(n), idx + 1, idx])
    vals = np.concatenate([diag, off, off])
    return from_coo(n, n, rows, cols, vals)


_GENERATORS = {"diagdom": diagdom_matrix, "band": band_matrix}


def generate_matrix(family, seed) -> SparseMatrix:
    return _GENERATORS[family](seed)


def generate_corpus(out_dir, count=60, seed=0, families=FAMILIES):
    """Write `count` matrices (split evenly over the families) as Matrix
    Market files plus a manifest. Returns the list of (matrix_id, path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = MatrixManifest()
    written = []
    per_family = count // len(families)
    leftover = count - per_family * len(families)
    for fi, family in enumerate(families):
        n_here = per_family + (1 if fi < leftover else 0)
        for index in range(n_here):
            matrix_id = f"{family}_{index:03d}"
            A = generate_matrix(family, _family_seed(seed, family, index))
            path = out_dir / f"{matrix_id}.mtx"
            write_matrix_market(A, path)
            manifest.upsert(
                ManifestEntry(
                    matrix_id=matrix_id,
                    source=f"synth:{family}",
                    n=A.n,
                    nnz=A.nnz,
                    checksum=_sha256_file(path),
                )
            )
            written.append((matrix_id, path))
    manifest.save(out_dir / "manifest.csv")
    return written
