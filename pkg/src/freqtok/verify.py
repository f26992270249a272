"""Numerical certification of the method's provable claims.

Each check asserts an inequality that holds exactly in real arithmetic;
margins are reported as RHS - LHS and a violation is any margin below
``-tolerance`` (1e-12 for exact inequalities, which absorbs float
accumulation only).  Checks:

* subset sum chain: for any row subset S with subset mean m' and full mean
  m, ``sum_S |x - m'|^2 <= sum_S |x - m|^2 <= sum_all |x - m|^2``.  (The
  often-quoted variance form of this statement is false in general; the
  sum form is what selection-based reduction actually guarantees.)
* convex combination: row-stochastic M with n' <= n rows contracts the
  total squared deviation of the rows about their mean.
* row-stochastic contraction: ``|H_f[A X]|_F <= |H_f[X]|_F`` for any
  row-stochastic A (the n' = n case of the above).
* Jensen DC scores: at the unnormalized score level,
  ``exp(q . mean(k)) <= sum_i exp(q . k_i)`` -- an aggregated DC token can
  only lose attention mass relative to its members.  (The softmax-
  normalized version depends on the denominator and is only reported.)
* fused reweighting identity: the single-pass reweighted product equals
  the materialized one to 1e-10 relative.

End-to-end reduction (re-running attention on the reduced token set)
compares norms across *different* attention maps; that statistic is
reported with violation counts but never asserted, since only the
pre-attention contraction is certified.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .layout import DC, IMAGE, TokenLayout
from .ndops import frobenius_norm, row_softmax
from .reduction import fused_reweighted_apply, reweight_attention
from .rng import SeededRng
from .spectral import high_pass_center

EXACT_TOL = 1e-12
FUSED_TOL = 1e-10


def _sq_deviations(x, mean) -> float:
    d = x - mean
    return float(np.sum(d * d))


def check_subset_variance(x, subset) -> float:
    """Minimum margin of the two-step sum-of-squared-deviations chain."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(subset, dtype=np.int64)
    if s.size == 0:
        raise ValueError("subset must be nonempty")
    mu = x.mean(axis=0)
    mu_sub = x[s].mean(axis=0)
    a = _sq_deviations(x[s], mu_sub)
    b = _sq_deviations(x[s], mu)
    c = _sq_deviations(x, mu)
    return min(b - a, c - b)


def check_convex_combination(x, m) -> float:
    """Margin of sum_j |x'_j - mu'|^2 <= sum_i |x_i - mu|^2 for X' = MX."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0.0):
        raise ValueError("M must be entrywise nonnegative")
    if m.shape[0] > m.shape[1]:
        raise ValueError("M must not increase the token count")
    if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("M rows must sum to 1")
    y = m @ x
    lhs = _sq_deviations(y, y.mean(axis=0))
    rhs = _sq_deviations(x, x.mean(axis=0))
    return rhs - lhs


def check_row_stochastic_contraction(a, x) -> float:
    """Margin of |H_f[A X]|_F <= |H_f[X]|_F for row-stochastic A."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    lhs = frobenius_norm(high_pass_center(a @ x))
    rhs = frobenius_norm(high_pass_center(x))
    return rhs - lhs


def check_jensen_dc(q, keys, scale: float) -> float:
    """Margin of exp(q . mean(k) / scale) <= sum_i exp(q . k_i / scale)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if k.shape[0] < 1:
        raise ValueError("need at least one key")
    scores = k @ q / scale
    lhs = math.exp(float(np.mean(scores)))
    rhs = float(np.sum(np.exp(scores)))
    return rhs - lhs


def check_flash_identity(a, v, layout: TokenLayout, omega1, omega2) -> float:
    """Max relative error between the fused and materialized reweighted
    products (relative to the largest-magnitude entry of the direct path)."""
    direct = reweight_attention(a, layout, omega1, omega2) @ np.asarray(v, dtype=np.float64)
    fused = fused_reweighted_apply(a, v, layout, omega1, omega2)
    scale = max(float(np.max(np.abs(direct))), 1e-30)
    return float(np.max(np.abs(fused - direct))) / scale


def _single_head_sa(x, wq, wk, wv) -> np.ndarray:
    dk = wq.shape[1]
    logits = (x @ wq) @ (x @ wk).T / math.sqrt(dk)
    return row_softmax(logits) @ (x @ wv)


def check_prop1(x, m, sa_weights, attention: str = "softmax") -> tuple[float, float]:
    """(reduction margin, end-to-end margin) for one reduction matrix.

    The reduction margin ``|H_f[X]|_F - |H_f[MX]|_F`` is certified.  The
    end-to-end margin ``|H_f[SA(X)]|_F - |H_f[SA(MX)]|_F`` recomputes
    attention on the reduced tokens, so it is an empirical statistic --
    except under ``attention="identity"`` or ``"uniform"`` where both
    sides share the same effective map and the margin is certified too.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    wq, wk, wv = (np.asarray(w, dtype=np.float64) for w in sa_weights)
    xr = m @ x
    pre = frobenius_norm(high_pass_center(x)) - frobenius_norm(high_pass_center(xr))
    if attention == "softmax":
        full, red = _single_head_sa(x, wq, wk, wv), _single_head_sa(xr, wq, wk, wv)
    elif attention == "identity":
        full, red = x @ wv, xr @ wv
    elif attention == "uniform":
        full = np.tile((x @ wv).mean(axis=0), (x.shape[0], 1))
        red = np.tile((xr @ wv).mean(axis=0), (xr.shape[0], 1))
    else:
        raise ValueError(f"unknown attention regime {attention!r}")
    e2e = frobenius_norm(high_pass_center(full)) - frobenius_norm(high_pass_center(red))
    return pre, e2e


# ---------------------------------------------------------------------------
# the suite


@dataclass(frozen=True)
class CheckResult:
    name: str
    trials: int
    violations: int
    worst_margin: float
    tolerance: float
    asserted: bool


@dataclass(frozen=True)
class VerificationReport:
    seed: int
    trials: int
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.violations == 0 for c in self.checks if c.asserted)

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "trials": self.trials,
            "ok": self.ok,
            "checks": [
                {
                    "name": c.name,
                    "trials": c.trials,
                    "violations": c.violations,
                    "worst_margin": c.worst_margin,
                    "tolerance": c.tolerance,
                    "asserted": c.asserted,
                }
                for c in self.checks
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        payload = json.loads(text)
        checks = tuple(
            CheckResult(
                c["name"], c["trials"], c["violations"], c["worst_margin"],
                c["tolerance"], c["asserted"],
            )
            for c in payload["checks"]
        )
        return cls(payload["seed"], payload["trials"], checks)


def _random_row_stochastic(gen, rows, cols):
    m = gen.uniform(0.01, 1.0, (rows, cols))
    return m / m.sum(axis=1, keepdims=True)


def _dc_layout(n: int, dc_indices) -> TokenLayout:
    roles = np.full(n, IMAGE)
    rows = np.arange(n)
    cols = np.zeros(n, dtype=np.int64)
    groups = np.full(n, -1)
    for g, i in enumerate(dc_indices):
        roles[i] = DC
        rows[i] = -1
        cols[i] = -1
        groups[i] = g
    return TokenLayout(roles, rows, cols, groups, grid_side=n)


def _trial_subset(rng: SeededRng) -> float:
    gen = rng.generator()
    n, d = int(gen.integers(2, 13)), int(gen.integers(1, 9))
    x = gen.standard_normal((n, d))
    size = int(gen.integers(1, n + 1))
    subset = gen.choice(n, size=size, replace=False)
    return check_subset_variance(x, subset)


def _trial_convex(rng: SeededRng) -> float:
    gen = rng.generator()
    n, d = int(gen.integers(2, 13)), int(gen.integers(1, 9))
    n_out = int(gen.integers(1, n + 1))
    x = gen.standard_normal((n, d))
    return check_convex_combination(x, _random_row_stochastic(gen, n_out, n))


def _trial_contraction(rng: SeededRng) -> float:
    gen = rng.generator()
    n, d = int(gen.integers(2, 13)), int(gen.integers(1, 9))
    a = row_softmax(gen.standard_normal((n, n)) * 2.0)
    x = gen.standard_normal((n, d))
    return check_row_stochastic_contraction(a, x)


def _trial_jensen(rng: SeededRng) -> float:
    gen = rng.generator()
    dk = int(gen.integers(1, 17))
    m = int(gen.integers(1, 33))
    q = gen.standard_normal(dk)
    keys = gen.standard_normal((m, dk))
    return check_jensen_dc(q, keys, math.sqrt(dk))


def _trial_fused(rng: SeededRng) -> float:
    gen = rng.generator()
    n = int(gen.integers(4, 33))
    h = int(gen.integers(1, 9))
    dv = int(gen.integers(1, 9))
    a = np.stack([_random_row_stochastic(gen, n, n) for _ in range(h)])
    v = gen.standard_normal((h, n, dv))
    n_dc = int(gen.integers(0, n // 3 + 1))
    dc = gen.choice(n, size=n_dc, replace=False) if n_dc else []
    layout = _dc_layout(n, sorted(int(i) for i in np.asarray(dc)))
    w1 = gen.uniform(-2.0, 2.0, h)
    w2 = gen.uniform(-2.0, 2.0, h)
    return -check_flash_identity(a, v, layout, w1, w2)


def _trial_prop1(rng: SeededRng) -> tuple[float, float]:
    gen = rng.generator()
    n, d = int(gen.integers(4, 13)), int(gen.integers(2, 9))
    n_out = int(gen.integers(1, n))
    x = gen.standard_normal((n, d))
    if gen.uniform() < 0.5:
        rows = np.sort(gen.choice(n, size=n_out, replace=False))
        m = np.zeros((n_out, n))
        m[np.arange(n_out), rows] = 1.0
    else:
        m = _random_row_stochastic(gen, n_out, n)
    dk = max(2, d // 2)
    sa = tuple(gen.standard_normal((d, dk)) / math.sqrt(d) for _ in range(3))
    return check_prop1(x, m, sa)


_CHECK_IDS = {
    "subset_sum_chain": 1,
    "convex_combination": 2,
    "row_stochastic_contraction": 3,
    "jensen_dc_scores": 4,
    "fused_reweight_identity": 5,
    "prop1_reduction": 6,
}


def run_suite(seed: int, trials: int = 1000) -> VerificationReport:
    """Run every check ``trials`` times with independent streams.

    Trials are independent and aggregation is order-free (min / count), so
    the report is deterministic for a given (seed, trials).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    root = SeededRng(seed)
    singles = [
        ("subset_sum_chain", _trial_subset, EXACT_TOL, True),
        ("convex_combination", _trial_convex, EXACT_TOL, True),
        ("row_stochastic_contraction", _trial_contraction, EXACT_TOL, True),
        ("jensen_dc_scores", _trial_jensen, EXACT_TOL, True),
        ("fused_reweight_identity", _trial_fused, FUSED_TOL, True),
    ]
    results = []
    for name, fn, tol, asserted in singles:
        cid = _CHECK_IDS[name]
        margins = [fn(root.split(cid, t)) for t in range(trials)]
        worst = min(margins)
        violations = sum(1 for m in margins if m < -tol)
        results.append(CheckResult(name, trials, violations, worst, tol, asserted))

    cid = _CHECK_IDS["prop1_reduction"]
    pairs = [_trial_prop1(root.split(cid, t)) for t in range(trials)]
    pre = [p for p, _ in pairs]
    e2e = [e for _, e in pairs]
    results.append(
        CheckResult(
            "prop1_reduction", trials,
            sum(1 for m in pre if m < -EXACT_TOL), min(pre), EXACT_TOL, True,
        )
    )
    results.append(
        CheckResult(
            "prop1_end_to_end", trials,
            sum(1 for m in e2e if m < -EXACT_TOL), min(e2e), EXACT_TOL, False,
        )
    )
    return VerificationReport(seed, trials, tuple(results))
