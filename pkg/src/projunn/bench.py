"""Wall-clock scaling of the rank-k updates against a dense polar projection."""
import csv
import io
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import InvalidArgumentError
from .lowrank import LowRankFactor
from .manifold import UnitaryParameter, haar_matrix, update_direct, update_tangent
from .numerics import polar_project_dense

OPS = ("update_d", "update_t", "polar_dense")
BENCH_COLUMNS = ("op", "n", "k", "median_ms", "ratio_to_prev_size")


def _case(op, n, k, field, rng):
    u = haar_matrix(n, field, rng)
    if op == "polar_dense":
        a = u + 1e-3 * rng.standard_normal((n, n))
        return lambda: polar_project_dense(a)
    g = LowRankFactor(rng.standard_normal((n, k)) / np.sqrt(n), rng.standard_normal((n, k)) / np.sqrt(n))
    param = UnitaryParameter(u, reprojection_interval=None)
    fn = update_direct if op == "update_d" else update_tangent
    return lambda: fn(param, g, 0.1)


def time_op(op, n, k=1, reps=5, field="real", rng=None):
    """Median wall time in milliseconds over ``reps`` calls (after one warm-up)."""
    if op not in OPS:
        raise InvalidArgumentError(f"unknown op {op!r}; choose from {OPS}")
    gen = np.random.default_rng(rng)
    call = _case(op, n, k, field, gen)
    call()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        call()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def bench(op, sizes, k=1, reps=5, field="real", seed=0, threads=1):
    """Timing rows for one op over ascending ``sizes``.

    Runs with BLAS limited to ``threads`` so the scaling reflects the
    algorithm rather than the machine's core count.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise InvalidArgumentError("sizes must be sorted ascending")
    if reps < 1 or k < 1:
        raise InvalidArgumentError("reps and k must be >= 1")
    rows = []
    prev = None
    with threadpool_limits(limits=threads):
        for n in sizes:
            ms = time_op(op, n, k, reps, field, rng=seed + n)
            rows.append({"op": op, "n": n, "k": k, "median_ms": ms, "ratio_to_prev_size": ms / prev if prev else None})
            prev = ms
    return rows


def bench_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["median_ms"] = f"{row['median_ms']:.4f}"
        ratio = row["ratio_to_prev_size"]
        out["ratio_to_prev_size"] = "" if ratio is None else f"{ratio:.3f}"
        writer.writerow(out)
    return buf.getvalue()
