"""Hidden-state deviation analysis via exact radius-neighbor counting.

The measure for a query state is the number of support states (drawn from
real passages, same layer, time step within +/- time_window) whose Euclidean
distance is strictly below the radius. Counting is exact: the index buckets
support states by time step and prunes candidates inside a bucket by vector
norm (triangle inequality), then checks true distances. Distances accumulate
in float64 over float32 inputs so counts reproduce across platforms.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .seeding import derive_seed, make_rng
from .trace import CorpusEntry, Passage, StateTrace, TensorFormatError

DEFAULT_RADIUS = 1024.0  # calibrated for GPT-2-scale states (D=1536)
DEFAULT_LAYER = 7
DEFAULT_TIME_WINDOW = 5

# Offsets relative to the verbatim-repetition onset at which aligned curves
# are evaluated.
RELATIVE_OFFSETS = (-32, -16, -10, -8, -6, -4, -2, 0, 2, 4, 6, 8, 10, 16, 32, 64, 128)

ABSOLUTE_STEP_COUNT = 20

_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class NeighborQuery:
    layer: int
    t: int
    radius: float
    time_window: int = DEFAULT_TIME_WINDOW

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.time_window < 0:
            raise ValueError("time_window must be non-negative")


class _Bucket:
    """Support vectors for one time step, ordered by norm for pruning."""

    __slots__ = ("vectors", "norms")

    def __init__(self, vectors: np.ndarray):
        norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors, dtype=np.float64))
        order = np.argsort(norms, kind="stable")
        self.vectors = np.ascontiguousarray(vectors[order])
        self.norms = norms[order]


class SupportIndex:
    """Immutable, exact radius-count index over (time step, state) pairs."""

    def __init__(self, layer: int, dim: int, buckets: Mapping[int, _Bucket], n_entries: int):
        self.layer = layer
        self.dim = dim
        self._buckets = dict(buckets)
        self.n_entries = n_entries

    def count(self, state: np.ndarray, t: int, radius: float, time_window: int) -> int:
        q = np.asarray(state, dtype=np.float64).ravel()
        if q.size != self.dim:
            raise ValueError(f"query dim {q.size} != index dim {self.dim}")
        if radius <= 0:
            raise ValueError("radius must be positive")
        qn = math.sqrt(float(q @ q))
        r2 = float(radius) * float(radius)
        # Slack keeps norm pruning conservative against float rounding; the
        # strict distance check below decides membership.
        pad = 1e-9 * (1.0 + qn + radius)
        total = 0
        for tau in range(t - time_window, t + time_window + 1):
            bucket = self._buckets.get(tau)
            if bucket is None:
                continue
            lo = int(np.searchsorted(bucket.norms, qn - radius - pad, side="left"))
            hi = int(np.searchsorted(bucket.norms, qn + radius + pad, side="right"))
            for start in range(lo, hi, _CHUNK_ROWS):
                block = bucket.vectors[start : min(start + _CHUNK_ROWS, hi)]
                diff = block.astype(np.float64) - q
                d2 = np.einsum("ij,ij->i", diff, diff)
                total += int(np.count_nonzero(d2 < r2))
        return total


def build_support(traces: Sequence[StateTrace], layer: int) -> SupportIndex:
    """Index all (time step, state) pairs of one layer across the given traces."""
    if not traces:
        raise ValueError("build_support requires at least one trace")
    dim = traces[0].dim
    per_step: dict[int, list[np.ndarray]] = {}
    n = 0
    for tr in traces:
        if tr.dim != dim:
            raise TensorFormatError(
                f"trace {tr.passage_id!r} has dim {tr.dim}, expected {dim}"
            )
        if not (0 <= layer < tr.num_layers):
            raise ValueError(
                f"layer {layer} out of range for trace {tr.passage_id!r} "
                f"with {tr.num_layers} layers"
            )
        layer_states = tr.states[layer]
        for tau in range(tr.num_steps):
            per_step.setdefault(tau, []).append(layer_states[tau])
        n += tr.num_steps
    buckets = {tau: _Bucket(np.stack(vecs)) for tau, vecs in per_step.items()}
    return SupportIndex(layer=layer, dim=dim, buckets=buckets, n_entries=n)


def count_neighbors(index: SupportIndex, state: np.ndarray, query: NeighborQuery) -> int:
    """Number of support entries within the query's time window whose distance
    to the state is strictly below the radius."""
    if query.layer != index.layer:
        raise ValueError(f"query layer {query.layer} != index layer {index.layer}")
    return index.count(state, query.t, query.radius, query.time_window)


@dataclass(frozen=True)
class DeviationCurve:
    """Mean/std/n of neighbor counts per evaluated step."""

    axis: str  # "absolute_time" or "relative_to_loop_start"
    steps: tuple[int, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        if self.axis not in ("absolute_time", "relative_to_loop_start"):
            raise ValueError(f"unknown axis {self.axis!r}")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be strictly increasing")
        lengths = {len(self.steps), len(self.mean), len(self.std), len(self.n)}
        if len(lengths) != 1:
            raise ValueError("steps/mean/std/n must have equal length")

    @property
    def points(self) -> list[tuple[int, float, float, int]]:
        return list(zip(self.steps, self.mean, self.std, self.n))

    def difference(self, other: "DeviationCurve") -> "DeviationCurve":
        """Pointwise mean difference (self - other) on the common steps."""
        common = sorted(set(self.steps) & set(other.steps))
        a = {s: i for i, s in enumerate(self.steps)}
        b = {s: i for i, s in enumerate(other.steps)}
        return DeviationCurve(
            axis=self.axis,
            steps=tuple(common),
            mean=tuple(self.mean[a[s]] - other.mean[b[s]] for s in common),
            std=tuple(
                math.hypot(self.std[a[s]], other.std[b[s]]) for s in common
            ),
            n=tuple(min(self.n[a[s]], other.n[b[s]]) for s in common),
        )


def _aggregate(samples: dict[int, list[int]], axis: str) -> DeviationCurve:
    steps = sorted(s for s, vals in samples.items() if vals)
    means, stds, ns = [], [], []
    for s in steps:
        vals = np.asarray(samples[s], dtype=np.float64)
        means.append(float(vals.mean()))
        stds.append(float(vals.std()))
        ns.append(len(vals))
    return DeviationCurve(
        axis=axis, steps=tuple(steps), mean=tuple(means), std=tuple(stds), n=tuple(ns)
    )


def absolute_steps(num_steps: int, count: int = ABSOLUTE_STEP_COUNT) -> list[int]:
    """``count`` evenly spaced step indices across a trace of ``num_steps``."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    pts = np.linspace(0, num_steps - 1, min(count, num_steps))
    return sorted({int(round(p)) for p in pts})


def deviation_curve(
    index: SupportIndex,
    traces: Sequence[StateTrace],
    layer: int,
    radius: float,
    time_window: int = DEFAULT_TIME_WINDOW,
    axis: str = "absolute_time",
    loop_specs: Optional[Sequence] = None,
    steps: Optional[Sequence[int]] = None,
    offsets: Sequence[int] = RELATIVE_OFFSETS,
    workers: int = 1,
) -> DeviationCurve:
    """Neighbor-count curve over a set of traces.

    absolute_time evaluates at ``steps`` (default: 20 evenly spaced indices
    over the longest trace). relative_to_loop_start evaluates at ``offsets``
    from each trace's verbatim-repetition onset and needs one loop spec per
    trace. Steps that fall outside a trace skip that trace; n records how many
    traces contributed at each step.
    """
    if not traces:
        raise ValueError("deviation_curve requires at least one trace")
    if axis == "relative_to_loop_start":
        if loop_specs is None or len(loop_specs) != len(traces):
            raise ValueError("relative alignment requires one loop spec per trace")
    elif axis != "absolute_time":
        raise ValueError(f"unknown axis {axis!r}")

    if axis == "absolute_time" and steps is None:
        steps = absolute_steps(max(tr.num_steps for tr in traces))

    def eval_trace(item):
        i, tr = item
        if axis == "absolute_time":
            wanted = [(s, s) for s in steps]
        else:
            anchor = loop_specs[i].repeat_onset
            wanted = [(off, anchor + off) for off in offsets]
        out = []
        for key, t in wanted:
            if not (0 <= t < tr.num_steps):
                continue
            c = index.count(tr.states[layer, t], t, radius, time_window)
            out.append((key, c))
        return out

    items = list(enumerate(traces))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trace = list(pool.map(eval_trace, items))
    else:
        per_trace = [eval_trace(it) for it in items]

    samples: dict[int, list[int]] = {}
    for rows in per_trace:  # merge in submission order: deterministic
        for key, c in rows:
            samples.setdefault(key, []).append(c)
    return _aggregate(samples, axis)


@dataclass(frozen=True)
class NeighborhoodConfig:
    layer: int = DEFAULT_LAYER
    radius: float = DEFAULT_RADIUS
    time_window: int = DEFAULT_TIME_WINDOW
    n_steps: int = ABSOLUTE_STEP_COUNT
    unseen_subsets: int = 10
    unseen_repeats: int = 3
    seed: int = 0
    workers: int = 1


def _strategy_of(p: Passage) -> str:
    if "strategy" in p.meta:
        return str(p.meta["strategy"])
    return "real" if p.origin == "real" else "generated"


def _is_plain_real(e: CorpusEntry) -> bool:
    return e.passage.origin == "real" and "strategy" not in e.passage.meta


def compare_protocol(
    entries: Sequence[CorpusEntry],
    mode: str,
    config: NeighborhoodConfig,
) -> dict[str, DeviationCurve]:
    """Absolute-time deviation curves per strategy under one support regime.

    compare_seen builds the support from real train-split states and evaluates
    everything labeled valid/test. compare_unseen partitions the real
    valid+test passages into ``unseen_subsets`` equal groups, uses one group
    for evaluation and the rest as support, and pools counts over
    ``unseen_repeats`` repetitions (distinct evaluation groups, seeded
    partition). Evaluation entries are grouped by their ``strategy`` metadata;
    plain real passages form the "real" control group.
    """
    if mode not in ("compare_seen", "compare_unseen"):
        raise ValueError(f"unknown mode {mode!r}")
    with_states = [e for e in entries if e.states is not None]
    if not with_states:
        raise ValueError("compare_protocol requires entries with state traces")

    eval_split = {"valid", "test"}
    support_pool = [e for e in with_states if _is_plain_real(e)]
    eval_entries = [e for e in with_states if e.passage.split in eval_split]

    # Counts are pooled raw (not averaged per repetition), so n is honest.
    def collect(index: SupportIndex, group: Sequence[CorpusEntry], pooled):
        by_strategy: dict[str, list[CorpusEntry]] = {}
        for e in group:
            by_strategy.setdefault(_strategy_of(e.passage), []).append(e)
        for strat, es in by_strategy.items():
            traces = [e.states for e in es]
            for tr in traces:
                for s in steps:
                    if not (0 <= s < tr.num_steps):
                        continue
                    c = index.count(
                        tr.states[config.layer, s], s, config.radius, config.time_window
                    )
                    pooled.setdefault(strat, {}).setdefault(s, []).append(c)

    max_T = max(e.states.num_steps for e in with_states)
    steps = absolute_steps(max_T, config.n_steps)

    pooled: dict[str, dict[int, list[int]]] = {}
    if mode == "compare_seen":
        support = [e for e in support_pool if e.passage.split == "train"]
        if not support:
            raise ValueError("compare_seen requires real train-split entries with states")
        if not eval_entries:
            raise ValueError("no valid/test entries to evaluate")
        index = build_support([e.states for e in support], config.layer)
        collect(index, eval_entries, pooled)
    else:
        pool = [e for e in support_pool if e.passage.split in eval_split]
        if len(pool) < config.unseen_subsets:
            raise ValueError(
                f"compare_unseen needs >= {config.unseen_subsets} real valid/test passages"
            )
        gen_without_link = [
            e
            for e in eval_entries
            if not _is_plain_real(e) and "condition_id" not in e.passage.meta
        ]
        if gen_without_link:
            raise ValueError(
                "compare_unseen requires condition_id metadata on generated "
                f"entries (missing on {gen_without_link[0].passage.passage_id!r})"
            )
        rng = make_rng(derive_seed(config.seed, "compare-unseen-partition"))
        order = rng.permutation(len(pool))
        groups = [set(int(i) for i in g) for g in np.array_split(order, config.unseen_subsets)]
        repeats = min(config.unseen_repeats, len(groups))
        for rep in range(repeats):
            eval_ids = {pool[i].passage.passage_id for i in groups[rep]}
            support = [p for j, p in enumerate(pool) if j not in groups[rep]]
            index = build_support([e.states for e in support], config.layer)
            rep_eval = [
                e
                for e in eval_entries
                if (
                    e.passage.passage_id in eval_ids
                    if _is_plain_real(e)
                    else e.passage.meta.get("condition_id") in eval_ids
                )
            ]
            collect(index, rep_eval, pooled)

    return {
        strat: _aggregate(samples, "absolute_time") for strat, samples in pooled.items()
    }


def shuffle_control(passages: Sequence[Passage], seed: int = 0) -> list[Passage]:
    """Uniformly permute each passage's tokens (condition region included).

    Permutations are keyed by passage id, so results do not depend on
    collection order; token multisets and lengths are preserved.
    """
    if not passages:
        raise ValueError("shuffle_control requires a non-empty collection")
    out = []
    for p in passages:
        rng = make_rng(derive_seed(seed, f"shuffle:{p.passage_id}"))
        perm = rng.permutation(len(p.tokens))
        meta = dict(p.meta)
        meta.update({"strategy": "shuffled", "shuffled_from": p.passage_id})
        out.append(
            Passage(
                tokens=tuple(int(p.tokens[i]) for i in perm),
                passage_id=f"{p.passage_id}__shuffled",
                text=None,
                origin=p.origin,
                condition_len=p.condition_len,
                split=p.split,
                meta=meta,
            )
        )
    return out


@dataclass(frozen=True)
class PCAProjection:
    points: np.ndarray  # (n, components)
    explained_variance_ratio: np.ndarray  # (components,), non-increasing
    directions: np.ndarray  # (components, dim), orthonormal rows


def pca_project(states: Sequence[np.ndarray], components: int = 2) -> PCAProjection:
    """Mean-centered projection onto the top principal directions.

    Ratios are fractions of total variance; directions beyond the data rank
    get zero ratio but remain orthonormal.
    """
    X = np.asarray(states, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca_project requires >= 2 vectors of equal dimension")
    dim = X.shape[1]
    if not (1 <= components <= dim):
        raise ValueError(f"components must be in [1, {dim}]")
    Xc = X - X.mean(axis=0)
    _, svals, Vt = np.linalg.svd(Xc, full_matrices=True)
    var = np.zeros(dim)
    var[: svals.size] = svals**2
    total = var.sum()
    ratios = var / total if total > 0 else var
    directions = Vt[:components]
    return PCAProjection(
        points=Xc @ directions.T,
        explained_variance_ratio=ratios[:components],
        directions=directions,
    )
