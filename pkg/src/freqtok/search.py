"""Grid search over reduction schedules with a pluggable evaluator.

The space picks one reduction layer per layer group, a removal ratio, and
a window size; combinations violating schedule invariants (window growing
across steps, window not dividing the grid) are skipped and counted.
Candidates are ranked by the Pareto score against the unreduced baseline,
with deterministic tie-breaking, so the output is byte-stable across runs
and worker counts.

The bundled evaluator scores a schedule by the mean centered-kernel
alignment between the reduced and unreduced model's final image-token
features (grids mean-filled for alignment) -- a desk-scale stand-in for
task accuracy, swappable for a real classifier evaluator.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cost import mac_count, pareto_score
from .model import ModelConfig, Weights, forward
from .reduction import EMPTY_SCHEDULE, ReductionSchedule, ReductionStep
from .rng import SeededRng
from .spectral import fill_token_grid, linear_cka


@dataclass(frozen=True)
class SearchSpace:
    """One (layer, ratio, window) choice per layer group."""

    groups: tuple[tuple[int, ...], ...]
    ratios: tuple[float, ...]
    windows: tuple[int, ...]

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls(
            groups=((2, 3, 4), (5, 6, 7), (8, 9, 10, 11)),
            ratios=tuple(round(0.1 * k, 1) for k in range(1, 10)),
            windows=(1, 2, 4),
        )

    @property
    def size(self) -> int:
        """Raw enumeration size, before invariant filtering."""
        n = 1
        for g in self.groups:
            n *= len(g) * len(self.ratios) * len(self.windows)
        return n

    def decode(self, index: int) -> ReductionSchedule:
        """Mixed-radix decode of a raw index into a schedule.

        Raises ValueError when the combination violates schedule
        invariants (callers treat that as "skip").
        """
        steps = []
        rem = index
        for g in self.groups:
            per = len(g) * len(self.ratios) * len(self.windows)
            local, rem = rem % per, rem // per
            li, local = local % len(g), local // len(g)
            ri, wi = local % len(self.ratios), local // len(self.ratios)
            steps.append(ReductionStep(g[li], self.ratios[ri], self.windows[wi]))
        return ReductionSchedule(tuple(steps))


@dataclass(frozen=True)
class Candidate:
    layers: tuple[int, ...]
    ratios: tuple[float, ...]
    windows: tuple[int, ...]
    mac_total: float
    proxy_acc: float
    score: float
    on_front: bool = False

    @property
    def schedule(self) -> ReductionSchedule:
        return ReductionSchedule(
            tuple(ReductionStep(l, r, w) for l, r, w in zip(self.layers, self.ratios, self.windows))
        )


@dataclass(frozen=True)
class SearchResult:
    candidates: tuple[Candidate, ...]
    mac_base: float
    acc_base: float
    n_enumerated: int
    n_skipped: int

    def front(self) -> tuple[Candidate, ...]:
        return tuple(c for c in self.candidates if c.on_front)


def make_cka_evaluator(config: ModelConfig, weights: Weights, batch):
    """Evaluator closure: schedule -> mean CKA to the unreduced model.

    ``batch`` is a sequence of images (or token matrices).  The unreduced
    final features are computed once; an empty schedule scores exactly 1.
    """
    batch = [np.asarray(b, dtype=np.float64) for b in batch]
    if not batch:
        raise ValueError("batch must be nonempty")
    base = []
    for item in batch:
        res = forward(config, weights, item, collect_trace=False)
        g = fill_token_grid(res.tokens, res.layout)
        base.append(g.reshape(-1, g.shape[-1]))

    def evaluate(schedule: ReductionSchedule) -> float:
        total = 0.0
        for item, ref in zip(batch, base):
            res = forward(config, weights, item, schedule=schedule, collect_trace=False)
            g = fill_token_grid(res.tokens, res.layout)
            total += linear_cka(g.reshape(-1, g.shape[-1]), ref)
        return total / len(batch)

    return evaluate


def _mark_front(candidates: list[Candidate]) -> list[Candidate]:
    """Flag the (mac minimized, proxy_acc maximized) non-dominated set."""
    order = sorted(range(len(candidates)), key=lambda i: (candidates[i].mac_total, -candidates[i].proxy_acc))
    on_front = [False] * len(candidates)
    best_acc = -np.inf
    i = 0
    while i < len(order):
        j = i
        mac = candidates[order[i]].mac_total
        while j < len(order) and candidates[order[j]].mac_total == mac:
            j += 1
        group = order[i:j]
        group_max = max(candidates[k].proxy_acc for k in group)
        if group_max > best_acc:
            for k in group:
                if candidates[k].proxy_acc == group_max:
                    on_front[k] = True
            best_acc = group_max
        i = j
    return [
        Candidate(c.layers, c.ratios, c.windows, c.mac_total, c.proxy_acc, c.score, f)
        for c, f in zip(candidates, on_front)
    ]


def grid_search(
    space: SearchSpace,
    evaluator,
    config: ModelConfig,
    budget: int | None = None,
    workers: int = 1,
    rng: SeededRng | None = None,
) -> SearchResult:
    """Enumerate (or sample up to ``budget``) the space and rank candidates.

    Returns candidates sorted by score (descending), ties broken by the
    lexicographic (layers, ratios, windows) key, with the Pareto front
    marked.  Evaluations are independent; ``workers`` only parallelizes
    them and never changes the output.
    """
    if space.size == 0:
        raise ValueError("search space is empty")
    if budget is not None and budget < 1:
        raise ValueError("budget must be >= 1 when given")

    if budget is None:
        index_order = range(space.size)
    else:
        gen = (rng or SeededRng(0)).split(777).generator()
        index_order = gen.permutation(space.size)

    schedules: list[ReductionSchedule] = []
    n_skipped = 0
    for idx in index_order:
        try:
            sched = space.decode(int(idx))
            sched.validate_grid(config.grid_side, config.depth)
        except ValueError:
            n_skipped += 1
            continue
        schedules.append(sched)
        if budget is not None and len(schedules) >= budget:
            break

    mac_base = float(mac_count(config).total)
    acc_base = float(evaluator(EMPTY_SCHEDULE))

    def evaluate(sched: ReductionSchedule) -> Candidate:
        mac = float(mac_count(config, sched).total)
        acc = float(evaluator(sched))
        return Candidate(
            layers=tuple(s.layer for s in sched.steps),
            ratios=tuple(s.rho for s in sched.steps),
            windows=tuple(s.window for s in sched.steps),
            mac_total=mac,
            proxy_acc=acc,
            score=pareto_score(mac, mac_base, acc, acc_base),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evaluated = list(pool.map(evaluate, schedules))
    else:
        evaluated = [evaluate(s) for s in schedules]

    evaluated.sort(key=lambda c: (-c.score, c.layers, c.ratios, c.windows))
    evaluated = _mark_front(evaluated)
    return SearchResult(
        tuple(evaluated), mac_base, acc_base,
        n_enumerated=len(schedules) + n_skipped, n_skipped=n_skipped,
    )
