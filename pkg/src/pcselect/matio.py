"""Matrix Market I/O, CSR assembly, and the SuiteSparse collection client.

Matrices are square, real, and stored fully expanded: symmetric-tagged
files get their mirror entries materialized at assembly time so row scans
(features, incomplete factorizations) see every off-diagonal entry.
"""

import csv
import fcntl
import hashlib
import io
import os
import re
import tarfile
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import AssemblyError, FetchError, MatrixFormatError

COLLECTION_URL = "https://suitesparse-collection-website.herokuapp.com/MM"
CACHE_ENV_VAR = "PCSELECT_CACHE"
COLLECTION_URL_ENV_VAR = "PCSELECT_COLLECTION_URL"

MANIFEST_HEADER = ["matrix_id", "source", "n", "nnz", "checksum"]

_BANNER_RE = re.compile(
    r"^%%MatrixMarket\s+(\S+)\s+(\S+)\s+(\S+)\s+(\S+)\s*$", re.IGNORECASE
)


@dataclass
class CooEntries:
    """Raw coordinate entries parsed from a Matrix Market file (0-based)."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    symmetry: str  # "general" or "symmetric"

    @property
    def nnz(self):
        return self.rows.size


@dataclass(eq=False)
class SparseMatrix:
    """Square real matrix in CSR form with sorted, duplicate-free rows."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self):
        return self.col_idx.size

    def matvec(self, x):
        return _kernels.csr_matvec(self.n, self.row_ptr, self.col_idx,
                                   self.values, np.ascontiguousarray(x, dtype=np.float64))

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self):
        """Diagonal entries, 0.0 where no diagonal is stored."""
        d = np.zeros(self.n)
        rows = self.expanded_rows()
        on_diag = self.col_idx == rows
        d[self.col_idx[on_diag]] = self.values[on_diag]
        return d

    def row_counts(self):
        return np.diff(self.row_ptr)

    def expanded_rows(self):
        """Row index of every stored entry (same length as col_idx)."""
        return np.repeat(np.arange(self.n, dtype=self.col_idx.dtype),
                         self.row_counts())

    def to_dense(self):
        dense = np.zeros((self.n, self.n))
        dense[self.expanded_rows(), self.col_idx] = self.values
        return dense

    def is_symmetric(self):
        """True iff for every stored (i, j, v) the entry (j, i, v) is stored."""
        t = transpose(self)
        return (
            np.array_equal(t.row_ptr, self.row_ptr)
            and np.array_equal(t.col_idx, self.col_idx)
            and np.array_equal(t.values, self.values)
        )


def from_coo(n_rows, n_cols, rows, cols, values, symmetry="general"):
    """Convenience constructor used throughout tests and generators."""
    coo = CooEntries(
        n_rows=n_rows,
        n_cols=n_cols,
        rows=np.asarray(rows, dtype=np.int64),
        cols=np.asarray(cols, dtype=np.int64),
        values=np.asarray(values, dtype=np.float64),
        symmetry=symmetry,
    )
    return assemble_csr(coo)


def from_dense(dense):
    dense = np.asarray(dense, dtype=np.float64)
    r, c = np.nonzero(dense)
    return from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c])


def parse_matrix_market(stream) -> CooEntries:
    """Parse a coordinate real Matrix Market stream into CooEntries.

    Accepts a file-like object or a string; indices become 0-based.
    Only `matrix coordinate real general|symmetric` banners are supported.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    banner = stream.readline()
    m = _BANNER_RE.match(banner.strip())
    if not m:
        raise MatrixFormatError(f"malformed Matrix Market banner: {banner!r}")
    obj, fmt, fieldq, sym = (g.lower() for g in m.groups())
    if obj != "matrix":
        raise MatrixFormatError(f"unsupported object type {obj!r}")
    if fmt != "coordinate":
        raise MatrixFormatError(f"unsupported format {fmt!r} (only coordinate)")
    if fieldq != "real":
        raise MatrixFormatError(f"unsupported field qualifier {fieldq!r} (only real)")
    if sym not in ("general", "symmetric"):
        raise MatrixFormatError(f"unsupported symmetry {sym!r}")

    size_line = None
    for line in stream:
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        size_line = line
        break
    if size_line is None:
        raise MatrixFormatError("missing size line")
    parts = size_line.split()
    if len(parts) != 3:
        raise MatrixFormatError(f"malformed size line: {size_line!r}")
    try:
        n_rows, n_cols, nnz = (int(p) for p in parts)
    except ValueError as exc:
        raise MatrixFormatError(f"malformed size line: {size_line!r}") from exc
    if n_rows <= 0 or n_cols <= 0 or nnz < 0:
        raise MatrixFormatError(f"invalid dimensions in size line: {size_line!r}")

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    count = 0
    for line in stream:
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MatrixFormatError(f"malformed entry line: {line!r}")
        if count >= nnz:
            raise MatrixFormatError(
                f"entry count mismatch: header declares {nnz}, found more"
            )
        try:
            i = int(parts[0]) - 1
            j = int(parts[1]) - 1
            v = float(parts[2])
        except ValueError as exc:
            raise MatrixFormatError(f"malformed entry line: {line!r}") from exc
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            raise MatrixFormatError(
                f"index ({i + 1}, {j + 1}) outside declared {n_rows}x{n_cols} bounds"
            )
        rows[count] = i
        cols[count] = j
        vals[count] = v
        count += 1
    if count != nnz:
        raise MatrixFormatError(
            f"entry count mismatch: header declares {nnz}, found {count}"
        )
    return CooEntries(n_rows, n_cols, rows, cols, vals, sym)


def assemble_csr(coo: CooEntries) -> SparseMatrix:
    """Assemble COO entries into CSR, applying the Matrix Market conventions.

    Symmetric-tagged input has mirror entries materialized (diagonal not
    duplicated), duplicate coordinates are summed, and explicitly stored
    zeros are dropped after summation.
    """
    if coo.n_rows != coo.n_cols:
        raise AssemblyError(f"matrix must be square, got {coo.n_rows}x{coo.n_cols}")
    n = coo.n_rows
    if n == 0:
        raise AssemblyError("empty matrix")
    rows, cols, vals = coo.rows, coo.cols, coo.values
    if coo.symmetry == "symmetric":
        off = rows != cols
        rows = np.concatenate([rows, cols[off]])
        cols = np.concatenate([cols, coo.rows[off]])
        vals = np.concatenate([vals, vals[off]])

    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        # sum duplicates: group consecutive identical (row, col) pairs
        new_group = np.empty(rows.size, dtype=bool)
        new_group[0] = True
        new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        group_id = np.cumsum(new_group) - 1
        summed = np.bincount(group_id, weights=vals)
        rows = rows[new_group]
        cols = cols[new_group]
        vals = summed
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]

    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return SparseMatrix(
        n=n,
        row_ptr=row_ptr,
        col_idx=cols.astype(np.int64, copy=False),
        values=np.asarray(vals, dtype=np.float64),
    )


def transpose(A: SparseMatrix) -> SparseMatrix:
    rows = A.expanded_rows()
    order = np.lexsort((rows, A.col_idx))
    row_ptr = np.zeros(A.n + 1, dtype=np.int64)
    np.add.at(row_ptr, A.col_idx + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return SparseMatrix(
        n=A.n,
        row_ptr=row_ptr,
        col_idx=rows[order].astype(np.int64, copy=False),
        values=A.values[order],
    )


def write_matrix_market(A: SparseMatrix, target):
    """Serialize as coordinate real general with 1-based indices.

    Values are written with enough digits to round-trip float64 exactly.
    """
    if isinstance(target, (str, Path)):
        with open(target, "w") as fh:
            write_matrix_market(A, fh)
        return
    target.write("%%MatrixMarket matrix coordinate real general\n")
    target.write(f"{A.n} {A.n} {A.nnz}\n")
    rows = A.expanded_rows()
    for i, j, v in zip(rows, A.col_idx, A.values):
        target.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def read_matrix_market(path) -> SparseMatrix:
    with open(path) as fh:
        return assemble_csr(parse_matrix_market(fh))


# ---------------------------------------------------------------------------
# SuiteSparse collection client


@dataclass
class ManifestEntry:
    matrix_id: str
    source: str
    n: int
    nnz: int
    checksum: str


@dataclass
class MatrixManifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        ids = [e.matrix_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise AssemblyError("duplicate matrix_id in manifest")

    def upsert(self, entry: ManifestEntry):
        self.entries = [e for e in self.entries if e.matrix_id != entry.matrix_id]
        self.entries.append(entry)

    def get(self, matrix_id):
        for e in self.entries:
            if e.matrix_id == matrix_id:
                return e
        return None

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for e in self.entries:
                writer.writerow([e.matrix_id, e.source, e.n, e.nnz, e.checksum])

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            return cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise MatrixFormatError(f"bad manifest header in {path}: {header}")
            entries = [
                ManifestEntry(r[0], r[1], int(r[2]), int(r[3]), r[4]) for r in reader
            ]
        return cls(entries)


def default_cache_dir():
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "pcselect"


def sanitize_matrix_id(collection_name):
    return collection_name.replace("/", "_")


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _mtx_header_counts(path):
    with open(path) as fh:
        coo_banner = fh.readline()
        if not _BANNER_RE.match(coo_banner.strip()):
            raise FetchError(f"extracted file is not Matrix Market: {path}")
        for line in fh:
            line = line.strip()
            if line and not line.startswith("%"):
                n, _, nnz = (int(p) for p in line.split()[:3])
                return n, nnz
    raise FetchError(f"no size line in {path}")


class _CacheLock:
    """Advisory per-name lock so concurrent fetchers of the same matrix
    serialize; distinct names proceed independently."""

    def __init__(self, path):
        self.path = path
        self.fh = None

    def __enter__(self):
        self.fh = open(self.path, "w")
        fcntl.flock(self.fh, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fh, fcntl.LOCK_UN)
        self.fh.close()


def fetch_matrix(collection_name, cache_dir=None, base_url=None):
    """Download a matrix from the collection into the cache, returning the
    local .mtx path. A warm cache with a matching checksum is a no-op.
    """
    if "/" not in collection_name:
        raise FetchError(f"collection name must be Group/Name, got {collection_name!r}")
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    cache_dir.mkdir(parents=True, exist_ok=True)
    base_url = base_url or os.environ.get(COLLECTION_URL_ENV_VAR) or COLLECTION_URL

    matrix_id = sanitize_matrix_id(collection_name)
    mtx_path = cache_dir / f"{matrix_id}.mtx"
    sidecar = cache_dir / f"{matrix_id}.mtx.sha256"
    manifest_path = cache_dir / "manifest.csv"

    with _CacheLock(cache_dir / f"{matrix_id}.lock"):
        if mtx_path.exists() and sidecar.exists():
            if _sha256_file(mtx_path) == sidecar.read_text().strip():
                return mtx_path

        url = f"{base_url}/{collection_name}.tar.gz"
        try:
            with urllib.request.urlopen(url) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise FetchError(f"matrix {collection_name!r} not found") from exc
            raise FetchError(f"HTTP failure fetching {url}: {exc}") from exc
        except urllib.error.URLError as exc:
            raise FetchError(f"network failure fetching {url}: {exc}") from exc

        name = collection_name.split("/")[1]
        try:
            with tarfile.open(fileobj=io.BytesIO(payload), mode="r:gz") as tar:
                member = None
                for cand in tar.getmembers():
                    base = os.path.basename(cand.name)
                    if base == f"{name}.mtx":
                        member = cand
                        break
                if member is None:
                    raise FetchError(
                        f"archive for {collection_name!r} contains no {name}.mtx"
                    )
                extracted = tar.extractfile(member)
                if extracted is None:
                    raise FetchError(f"cannot extract {member.name}")
                with tempfile.NamedTemporaryFile(
                    dir=cache_dir, delete=False, suffix=".part"
                ) as tmp:
                    tmp.write(extracted.read())
                os.replace(tmp.name, mtx_path)
        except tarfile.TarError as exc:
            raise FetchError(f"archive extraction failed for {url}: {exc}") from exc

        checksum = _sha256_file(mtx_path)
        sidecar.write_text(checksum + "\n")
        n, nnz = _mtx_header_counts(mtx_path)
        manifest = MatrixManifest.load(manifest_path)
        manifest.upsert(ManifestEntry(matrix_id, collection_name, n, nnz, checksum))
        manifest.save(manifest_path)
    return mtx_path
