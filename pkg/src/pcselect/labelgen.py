"""Ground-truth label generation: which preconditioners are "optimal" for a
matrix, decided by timing a preconditioned CG solver.

For each matrix, ten random systems are generated (standard-normal solution
vectors, right-hand sides computed as b = A x*). Each (matrix, kind) pair is
timed by running setup+solve `reps` times per system and summing the ten
per-system median wall times. A pair is feasible when the worst relative
residual stays below 1e-2, the worst relative error below 1e-1, and the
total time below the time limit. The optimal set of a matrix contains every
feasible kind within 10% of the fastest feasible total time.

All timed runs are serialized through a module-level lock: concurrent timed
measurements would contaminate each other and invalidate the dataset.
"""

import json
import math
import threading
import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .errors import (
    NoFeasiblePreconditionerError,
    PreconditionerSetupError,
    PreconditionerUnavailableError,
)
from .krylov import (
    LABELED_KINDS,
    PrecondKind,
    build_preconditioner,
    pcg_solve,
    relative_error,
    relative_residual,
)
from .matio import SparseMatrix

RESIDUAL_THRESHOLD = 1e-2
ERROR_THRESHOLD = 1e-1
OPTIMALITY_BAND = 1.1
DEFAULT_TIME_LIMIT = 60.0
DEFAULT_REPS = 5
SYSTEMS_PER_MATRIX = 10

_measurement_lock = threading.Lock()


@dataclass
class RhsSuite:
    matrix_id: str
    systems: list  # list of (x_star, b) pairs
    seed: int


@dataclass
class PairTiming:
    matrix_id: str
    kind: PrecondKind
    per_system_median: list
    total_time: float
    worst_rel_residual: float
    worst_rel_error: float
    feasible: bool
    failure: str | None = None


@dataclass
class LabelRecord:
    matrix_id: str
    optimal_set: frozenset  # of PrecondKind, nonempty
    t_star: float
    timings: dict = field(default_factory=dict)  # kind -> PairTiming


def suite_seed(base_seed, matrix_id):
    """Per-matrix RHS seed, stable under corpus reordering."""
    import hashlib

    digest = hashlib.sha256(f"{base_seed}:{matrix_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def generate_rhs_suite(A: SparseMatrix, seed, matrix_id="", count=SYSTEMS_PER_MATRIX):
    rng = np.random.default_rng(seed)
    systems = []
    for _ in range(count):
        x_star = rng.standard_normal(A.n)
        systems.append((x_star, A.matvec(x_star)))
    return RhsSuite(matrix_id=matrix_id, systems=systems, seed=seed)


def time_pair(
    A: SparseMatrix,
    kind: PrecondKind,
    suite: RhsSuite,
    reps=DEFAULT_REPS,
    rtol=1e-8,
    max_iter=None,
    time_limit=DEFAULT_TIME_LIMIT,
    pc_opts=None,
) -> PairTiming:
    """Median-of-reps timing across the suite's systems for one kind.

    Each timed run covers preconditioner setup plus the solve (using a
    preconditioner means paying for its construction). One untimed warm-up
    run precedes measurement. Setup failure, non-convergence, a threshold
    breach, or exceeding the time limit marks the pair infeasible with
    total_time = +inf; medians measured before the abort are kept.
    """
    pc_opts = pc_opts or {}

    def run(b):
        t0 = time.perf_counter()
        M = build_preconditioner(A, kind, **pc_opts)
        res = pcg_solve(A, b, M, rtol=rtol, max_iter=max_iter, time_limit=time_limit)
        return time.perf_counter() - t0, res

    def infeasible(medians, worst_r, worst_e, why):
        return PairTiming(
            matrix_id=suite.matrix_id,
            kind=kind,
            per_system_median=medians,
            total_time=math.inf,
            worst_rel_residual=worst_r,
            worst_rel_error=worst_e,
            feasible=False,
            failure=why,
        )

    medians = []
    worst_r = 0.0
    worst_e = 0.0
    with _measurement_lock:
        try:
            run(suite.systems[0][1])  # warm-up: jit caches, memory, branch state
        except (PreconditionerSetupError, PreconditionerUnavailableError) as exc:
            return infeasible([], worst_r, worst_e, f"setup: {exc}")

        for x_star, b in suite.systems:
            times = []
            last = None
            for _ in range(reps):
                try:
                    elapsed, last = run(b)
                except (PreconditionerSetupError, PreconditionerUnavailableError) as exc:
                    return infeasible(medians, worst_r, worst_e, f"setup: {exc}")
                times.append(elapsed)
            med = median(times)
            medians.append(med)
            if not last.converged:
                why = (
                    "time limit breached"
                    if last.wall_time >= time_limit
                    else "solver did not converge"
                )
                return infeasible(medians, worst_r, worst_e, why)
            worst_r = max(worst_r, relative_residual(A, last.x, b))
            worst_e = max(worst_e, relative_error(last.x, x_star))
            if worst_r >= RESIDUAL_THRESHOLD or worst_e >= ERROR_THRESHOLD:
                return infeasible(medians, worst_r, worst_e, "accuracy threshold breached")
            if sum(medians) >= time_limit:
                return infeasible(medians, worst_r, worst_e, "time limit breached")

    total = sum(medians)
    feasible = (
        worst_r < RESIDUAL_THRESHOLD
        and worst_e < ERROR_THRESHOLD
        and total < time_limit
    )
    return PairTiming(
        matrix_id=suite.matrix_id,
        kind=kind,
        per_system_median=medians,
        total_time=total if feasible else math.inf,
        worst_rel_residual=worst_r,
        worst_rel_error=worst_e,
        feasible=feasible,
        failure=None if feasible else "time limit breached",
    )


def with_time_limit(timing: PairTiming, time_limit) -> PairTiming:
    """Re-evaluate a pair's feasibility under a different time limit.

    Only meaningful for pairs with complete measurements; a pair that
    failed for accuracy or setup reasons stays infeasible at any limit.
    """
    complete = len(timing.per_system_median) == SYSTEMS_PER_MATRIX
    accurate = (
        timing.worst_rel_residual < RESIDUAL_THRESHOLD
        and timing.worst_rel_error < ERROR_THRESHOLD
    )
    total = sum(timing.per_system_median)
    feasible = complete and accurate and timing.failure in (None, "time limit breached") \
        and total < time_limit
    return PairTiming(
        matrix_id=timing.matrix_id,
        kind=timing.kind,
        per_system_median=list(timing.per_system_median),
        total_time=total if feasible else math.inf,
        worst_rel_residual=timing.worst_rel_residual,
        worst_rel_error=timing.worst_rel_error,
        feasible=feasible,
        failure=None if feasible else (timing.failure or "time limit breached"),
    )


def optimal_set(timings) -> LabelRecord:
    """Feasible kinds within the 10% band of the fastest feasible total."""
    timings = list(timings)
    feasible = [t for t in timings if t.feasible]
    if not feasible:
        raise NoFeasiblePreconditionerError(
            f"no feasible preconditioner for {timings[0].matrix_id if timings else '?'}"
        )
    t_star = min(t.total_time for t in feasible)
    optimal = frozenset(
        t.kind for t in feasible if t.total_time <= OPTIMALITY_BAND * t_star
    )
    return LabelRecord(
        matrix_id=timings[0].matrix_id,
        optimal_set=optimal,
        t_star=t_star,
        timings={t.kind: t for t in timings},
    )


@dataclass
class LabelDatasetStats:
    n_matrices: int
    n_labeled: int
    unlabelable: list
    size_distribution: dict  # |optimal set| -> fraction of labeled matrices
    mean_optima: float
    kind_frequency: dict  # kind name -> fraction of labeled matrices

    def as_dict(self):
        return {
            "n_matrices": self.n_matrices,
            "n_labeled": self.n_labeled,
            "unlabelable": list(self.unlabelable),
            "size_distribution": {str(k): v for k, v in self.size_distribution.items()},
            "mean_optima": self.mean_optima,
            "kind_frequency": dict(self.kind_frequency),
        }


def dataset_stats(records, kinds=LABELED_KINDS, unlabelable=()):
    sizes = [len(r.optimal_set) for r in records]
    n = len(records)
    dist = {}
    for s in sorted(set(sizes)):
        dist[s] = sizes.count(s) / n if n else 0.0
    freq = {}
    for kind in kinds:
        freq[kind.value] = (
            sum(1 for r in records if kind in r.optimal_set) / n if n else 0.0
        )
    return LabelDatasetStats(
        n_matrices=n + len(unlabelable),
        n_labeled=n,
        unlabelable=list(unlabelable),
        size_distribution=dist,
        mean_optima=float(np.mean(sizes)) if sizes else 0.0,
        kind_frequency=freq,
    )


def build_label_dataset(
    matrices,
    kinds=LABELED_KINDS,
    seed=0,
    time_limit=DEFAULT_TIME_LIMIT,
    reps=DEFAULT_REPS,
    rtol=1e-8,
    max_iter=None,
    progress=None,
):
    """Label every (matrix_id, SparseMatrix) pair in `matrices`.

    Returns (records, stats). Matrices with no feasible kind are excluded
    from the records and listed in the stats.
    """
    records = []
    unlabelable = []
    for matrix_id, A in matrices:
        suite = generate_rhs_suite(A, suite_seed(seed, matrix_id), matrix_id)
        timings = [
            time_pair(
                A, kind, suite, reps=reps, rtol=rtol, max_iter=max_iter,
                time_limit=time_limit,
            )
            for kind in kinds
        ]
        try:
            record = optimal_set(timings)
        except NoFeasiblePreconditionerError:
            unlabelable.append(matrix_id)
            if progress:
                progress(matrix_id, None)
            continue
        records.append(record)
        if progress:
            progress(matrix_id, record)
    return records, dataset_stats(records, kinds, unlabelable)


# ---------------------------------------------------------------------------
# JSON lines persistence


def _total_for_json(t):
    return "inf" if math.isinf(t) else t


def save_label_dataset(records, path):
    with open(path, "w") as fh:
        for r in records:
            obj = {
                "matrix_id": r.matrix_id,
                "t_star": r.t_star,
                "optimal": sorted(k.value for k in r.optimal_set),
                "timings": {
                    k.value: {
                        "total_time": _total_for_json(t.total_time),
                        "feasible": t.feasible,
                    }
                    for k, t in r.timings.items()
                },
            }
            fh.write(json.dumps(obj) + "\n")


def load_label_dataset(path):
    """Load JSONL records as (matrix_id, optimal set, t_star, totals) tuples,
    where totals maps PrecondKind -> (total_time, feasible)."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            totals = {}
            for name, t in obj.get("timings", {}).items():
                total = t["total_time"]
                totals[PrecondKind(name)] = (
                    math.inf if total == "inf" else float(total),
                    bool(t["feasible"]),
                )
            out.append(
                (
                    obj["matrix_id"],
                    frozenset(PrecondKind(k) for k in obj["optimal"]),
                    float(obj["t_star"]),
                    totals,
                )
            )
    return out
