"""Release gate: oracle-equivalence and invariant checks with JSON verdicts.

Every check returns a ``CheckResult`` whose ``value`` is the worst measured
quantity and ``threshold`` the bound it is held to. ``scale="quick"`` trims
trial counts for smoke tests; ``"full"`` runs each oracle at its stated scale.
"""
import json
import tempfile
import time
import traceback
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .gradcheck import random_rnn_case, random_uconv_case, rnn_gradcheck, uconv_gradcheck
from .lowrank import LowRankFactor, column_sample, lsi_sample, rank_profile, rel_error, truncated_svd_oracle
from .manifold import (
    UnitaryParameter,
    direct_oracle,
    first_order_gap,
    haar_matrix,
    init_parameter,
    load_parameter,
    save_parameter,
    tangent_oracle,
    update_direct,
    update_tangent,
)
from .numerics import expm_dense, gram_schmidt, polar_project_dense, unitarity_error
from .rnn import init_cell, rnn_backward, rnn_forward, with_params
from .tasks import gen_copy
from .uconv import (
    cyclic_conv_oracle,
    filter_to_spatial,
    init_uconv,
    load_uconv,
    save_uconv,
    uconv_backward,
    uconv_forward,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0


def _complex_or_real(rng, shape, field):
    if field == "complex":
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return rng.standard_normal(shape)


def _factor(rng, n, k, field):
    return LowRankFactor(_complex_or_real(rng, (n, k), field) / np.sqrt(n), _complex_or_real(rng, (n, k), field))


def _trials(scale, full, quick):
    return full if scale == "full" else quick


# -- manifold ----------------------------------------------------------------------


def check_update_oracle(mode, seed=0, scale="full", tol=1e-8):
    """Worst Frobenius gap to the dense oracle over the (n, k, field) grid."""
    trials = _trials(scale, 100, 5)
    worst = 0.0
    for n in (8, 16, 32, 64):
        for k in (1, 2, 4, 8):
            for field in ("real", "complex"):
                rng = np.random.default_rng([seed, n, k, field == "complex"])
                for _ in range(trials):
                    u = haar_matrix(n, field, rng)
                    g = _factor(rng, n, k, field)
                    p = UnitaryParameter(u, reprojection_interval=None)
                    if mode == "direct":
                        gap = np.linalg.norm(update_direct(p, g, 0.1).matrix - direct_oracle(u, g.dense(), 0.1))
                    else:
                        gap = np.linalg.norm(update_tangent(p, g, 0.1).matrix - tangent_oracle(u, g.dense(), 0.1))
                    worst = max(worst, gap)
    return CheckResult(f"{mode}_oracle_equivalence", worst < tol, worst, tol, f"{trials} trials per grid cell")


def first_order_slopes(seed=0, pairs=20, n=32):
    etas = np.logspace(-4, -1, 10)
    slopes = []
    for i in range(pairs):
        rng = np.random.default_rng([seed, i])
        p = init_parameter(n, "haar", "complex", rng)
        g = _factor(rng, n, 2, "complex")
        gaps = [first_order_gap(p, g, eta) for eta in etas]
        slopes.append(np.polyfit(np.log(etas), np.log(gaps), 1)[0])
    return np.array(slopes)


def check_first_order(seed=0, scale="full"):
    slopes = first_order_slopes(seed, _trials(scale, 20, 3))
    dev = float(np.max(np.abs(slopes - 2.0)))
    return CheckResult("first_order_slope", dev <= 0.1, dev, 0.1, f"slopes in [{slopes.min():.3f}, {slopes.max():.3f}]")


def tangent_drift(steps, n=64, seed=0):
    """Max unitarity error along ``steps`` rank-1 Tangent updates, no re-projection."""
    rng = np.random.default_rng(seed)
    p = init_parameter(n, "haar", "real", rng, reprojection_interval=None)
    worst = 0.0
    for i in range(steps):
        p = update_tangent(p, _factor(rng, n, 1, "real"), 0.05)
        if i % 100 == 99 or i == steps - 1:
            worst = max(worst, unitarity_error(p.matrix))
    return worst, p.reprojections


def direct_drift(steps, n=64, seed=0):
    """Max unitarity error at every step of Direct updates with interval-n re-projection."""
    rng = np.random.default_rng(seed)
    p = init_parameter(n, "haar", "real", rng, mode="direct")
    worst = 0.0
    for _ in range(steps):
        p = update_direct(p, _factor(rng, n, 1, "real"), 0.05)
        worst = max(worst, unitarity_error(p.matrix))
    return worst, p.reprojections


def check_unitarity_stability(seed=0, scale="full", tol=1e-6):
    steps = _trials(scale, 10_000, 500)
    t_err, t_rep = tangent_drift(steps, seed=seed)
    d_err, d_rep = direct_drift(steps, seed=seed)
    worst = max(t_err, d_err)
    ok = worst < tol and t_rep == 0
    return CheckResult("unitarity_stability", ok, worst, tol,
                       f"{steps} steps; tangent {t_err:.2e} ({t_rep} reprojections), direct {d_err:.2e}")


def check_descent(seed=0, scale="full"):
    trials = _trials(scale, 1000, 50)
    rng = np.random.default_rng(seed)
    n, b, down = 32, 4, 0
    for _ in range(trials):
        u = haar_matrix(n, "complex", rng)
        x = _complex_or_real(rng, (n, b), "complex")
        y = haar_matrix(n, "complex", rng) @ x
        grad = LowRankFactor(2 * (u @ x - y) / b, x)
        new = update_tangent(UnitaryParameter(u, reprojection_interval=None), grad, 1e-3).matrix
        down += np.sum(np.abs(new @ x - y) ** 2) < np.sum(np.abs(u @ x - y) ** 2)
    frac = down / trials
    return CheckResult("tangent_descent", frac >= 0.99, frac, 0.99, f"{down}/{trials} steps decreased the loss")


# -- numerics and samplers ---------------------------------------------------------


def check_primitives(seed=0, scale="full"):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(_trials(scale, 200, 20)):
        n = int(rng.integers(1, 65))
        p = int(rng.integers(1, 21))
        basis, r = gram_schmidt(_complex_or_real(rng, (n, p), "complex"))
        worst = max(worst, np.linalg.norm(basis.conj().T @ basis - np.eye(r)))
        a = _complex_or_real(rng, (8, 8), "complex")
        s = a - a.conj().T
        worst = max(worst, np.linalg.norm(expm_dense(s) @ expm_dense(-s) - np.eye(8)) / 10)
        u = polar_project_dense(a)
        worst = max(worst, np.linalg.norm(polar_project_dense(u) - u))
    return CheckResult("dense_primitives", worst < 1e-10, worst, 1e-10, "Gram-Schmidt, expm inverse, polar idempotence")


def decaying_matrix(seed, n=64):
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (u * 2.0 ** -np.arange(1, n + 1)) @ v.T


def sampler_quality(seed=0, seeds=50, k=4):
    """Mean relative error of each sampler divided by the truncated-SVD optimum."""
    col, lsi, opt = [], [], []
    for s in range(seeds):
        a = decaying_matrix([seed, s])
        col.append(rel_error(a, column_sample(a, k, 4 * k, rng=[seed, s])))
        lsi.append(rel_error(a, lsi_sample(a, k, 5, rng=[seed, s])))
        opt.append(rel_error(a, truncated_svd_oracle(a, k)))
    return np.mean(col) / np.mean(opt), np.mean(lsi) / np.mean(opt)


def check_sampler_quality(seed=0, scale="full"):
    col, lsi = sampler_quality(seed, _trials(scale, 50, 10))
    ok = col <= 2.0 and lsi <= 1.5
    return CheckResult("sampler_quality", ok, max(col / 2.0, lsi / 1.5), 1.0,
                       f"column {col:.3f}x optimum (<= 2), LSI {lsi:.3f}x optimum (<= 1.5)")


# -- gradients, convolution, rank bounds --------------------------------------------


def rnn_gradient_errors(seed=0, seeds=50):
    worst = {}
    for task in ("adding", "copy", "random_unitary"):
        for field in ("real", "complex"):
            for s in range(seeds):
                rng = np.random.default_rng([seed, s])
                cell, batch = random_rnn_case(task, field, rng)
                errs = rnn_gradcheck(cell, batch, n_coords=20, rng=[seed, s])
                key = f"{task}/{field}"
                worst[key] = max(worst.get(key, 0.0), max(errs.values()))
    return worst


def uconv_gradient_errors(seed=0, seeds=50):
    worst = {}
    for realness in (True, False):
        for s in range(seeds):
            rng = np.random.default_rng([seed, s, realness])
            flt, X = random_uconv_case(realness, rng)
            errs = uconv_gradcheck(flt, X, n_coords=20, rng=[seed, s])
            key = "real" if realness else "complex"
            worst[key] = max(worst.get(key, 0.0), max(errs.values()))
    return worst


def check_gradients(seed=0, scale="full", tol=1e-4):
    seeds = _trials(scale, 50, 3)
    rnn = rnn_gradient_errors(seed, seeds)
    conv = uconv_gradient_errors(seed, seeds)
    worst = max(max(rnn.values()), max(conv.values()))
    detail = ", ".join(f"{k} {v:.1e}" for k, v in {**rnn, **{f"uconv/{k}": v for k, v in conv.items()}}.items())
    return CheckResult("finite_difference_gradients", worst < tol, worst, tol, detail)


def conv_theorem_errors(seed=0, seeds=20):
    worst_gap, worst_norm = 0.0, 0.0
    for M, N, C in ((4, 4, 2), (8, 8, 4), (6, 10, 3)):
        for realness in (True, False):
            for s in range(seeds):
                rng = np.random.default_rng([seed, s, M, N, C, realness])
                flt = init_uconv(M, N, C, "haar", realness, rng)
                X = _complex_or_real(rng, (2, M, N, C), "real" if realness else "complex")
                Y = uconv_forward(flt, X)
                worst_gap = max(worst_gap, np.abs(Y - cyclic_conv_oracle(filter_to_spatial(flt), X)).max())
                worst_norm = max(worst_norm, abs(np.linalg.norm(Y) - np.linalg.norm(X)) / np.linalg.norm(X))
    return worst_gap, worst_norm


def check_conv_theorem(seed=0, scale="full", tol=1e-8):
    gap, norm = conv_theorem_errors(seed, _trials(scale, 20, 2))
    return CheckResult("convolution_theorem", max(gap, norm) < tol, max(gap, norm), tol,
                       f"FFT vs brute force {gap:.1e}, norm drift {norm:.1e}")


def rank_bound_errors(seed=0, seeds=10):
    """E_rel at the bound rank for RNN (b*T) and per-frequency conv (b) gradients."""
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng([seed, s])
        b, T, n = 2, 5, 32
        cell = init_cell(n, 10, 10, "haar", "real" if s % 2 else "complex", rng)
        cell = with_params(cell, bias=rng.uniform(-0.1, 0.1, n))
        batch = gen_copy(1, 2, 8, b, rng)
        trace, outputs, _ = rnn_forward(cell, batch)
        dW = rnn_backward(cell, batch, trace, outputs).dW
        worst = max(worst, rank_profile(dW, b * T).rel_error_curve[b * T - 1])
        flt = init_uconv(4, 4, 6, "haar", bool(s % 2), rng)
        X = _complex_or_real(rng, (3, 4, 4, 6), "real" if s % 2 else "complex")
        grads, _ = uconv_backward(flt, X, _complex_or_real(rng, X.shape, "real" if s % 2 else "complex"))
        worst = max(worst, max(rank_profile(g, 3).rel_error_curve[2] for g in grads))
    return worst


def check_rank_bounds(seed=0, scale="full", tol=1e-8):
    worst = rank_bound_errors(seed, _trials(scale, 10, 2))
    return CheckResult("gradient_rank_bounds", worst < tol, worst, tol, "RNN rank <= bT, conv block rank <= b")


# -- persistence --------------------------------------------------------------------


def check_parameter_file(seed=0, scale="full", path=None):
    """Load ``path`` if given, else round-trip a fresh parameter through a temp file."""
    try:
        if path is not None:
            p = load_parameter(path)
            err = p.unitarity_error()
            return CheckResult("parameter_file", True, err, 1e-6, f"loaded {path}")
        with tempfile.TemporaryDirectory() as tmp:
            p = init_parameter(16, "haar", "complex", np.random.default_rng(seed))
            save_parameter(p, Path(tmp) / "w.punn")
            back = load_parameter(Path(tmp) / "w.punn")
            flt = init_uconv(4, 4, 2, "haar", True, np.random.default_rng(seed))
            save_uconv(flt, Path(tmp) / "f.pucv")
            flt2 = load_uconv(Path(tmp) / "f.pucv")
        gap = max(np.abs(back.matrix - p.matrix).max(),
                  max(np.abs(a.matrix - b.matrix).max() for a, b in zip(flt.blocks, flt2.blocks)))
        return CheckResult("parameter_file", gap == 0, gap, 0.0, "PUNN and PUCV round trip")
    except Exception as exc:  # failures are data here
        return CheckResult("parameter_file", False, float("nan"), 0.0, f"{type(exc).__name__}: {exc}")


CHECKS = (
    check_primitives,
    lambda seed, scale: check_update_oracle("direct", seed, scale),
    lambda seed, scale: check_update_oracle("tangent", seed, scale),
    check_first_order,
    check_unitarity_stability,
    check_descent,
    check_sampler_quality,
    check_gradients,
    check_conv_theorem,
    check_rank_bounds,
)


def verify(seed=0, scale="full", param_file=None, progress=None):
    """Run every check; returns ``{"passed": bool, "checks": [...]}``."""
    results = []
    for check in CHECKS + (lambda seed, scale: check_parameter_file(seed, scale, param_file),):
        t0 = time.perf_counter()
        try:
            res = check(seed=seed, scale=scale)
        except Exception as exc:
            res = CheckResult(getattr(check, "__name__", "check"), False, float("nan"), float("nan"),
                              "".join(traceback.format_exception_only(type(exc), exc)).strip())
        res.seconds = round(time.perf_counter() - t0, 3)
        res.value = float(res.value)
        res.passed = bool(res.passed)
        res.threshold = float(res.threshold)
        results.append(res)
        if progress:
            progress(res)
    return {"seed": seed, "scale": scale, "passed": all(r.passed for r in results),
            "checks": [asdict(r) for r in results]}


def verify_json(report):
    return json.dumps(report, indent=2, allow_nan=True)
