"""Time-lagged constraint-based causal discovery over residual series.

The variable set unrolls each channel over lags 0..tau_max. Candidate
edges connect a present-time (lag 0) variable with any other variable,
including its own lagged copies, so discovered structure is always
expressible as "cause at lag L -> effect now". The skeleton phase is the
stable variant of the PC algorithm: for conditioning-set sizes 0, 1, ...,
max_cond every surviving edge is tested against subsets drawn from the
current adjacencies of both endpoints (enumerated in lexicographic order),
and removals are applied only after the full sweep so the result does not
depend on edge visiting order.

Conditional independence uses the partial correlation of the two variables
given the conditioning set, mapped through the Fisher z transform:

    z = sqrt(n_eff - |S| - 3) * atanh(rho)

and declared independent when |z| <= Phi^-1(1 - alpha/2). A custom test
can be injected (``ci_fn``) to drive the skeleton from an exact

independence oracle instead of finite samples.

Orientation: lagged edges point forward in time. Contemporaneous edges are
oriented by the collider rule: for an unshielded triple a - w - b with
w at lag 0 and w outside the separating set of (a, b), both edges get an
arrowhead at w. Contemporaneous edges with exactly one arrowhead become
directed; edges with both or neither stay bidirected (the Markov
equivalence residue).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import norm

from .errors import DegenerateChannel, InsufficientData, MalformedInput

GRAPH_FORMAT_VERSION = 1


class LaggedVariable(NamedTuple):
    channel: int
    lag: int


@dataclass(frozen=True)
class CausalDiscoveryConfig:
    tau_max: int = 5
    alpha: float = 0.05
    max_cond: int = 3

    def to_json(self) -> dict:
        return {"tau_max": self.tau_max, "alpha": self.alpha,
                "max_cond": self.max_cond}

    @classmethod
    def from_json(cls, obj: dict) -> "CausalDiscoveryConfig":
        return cls(tau_max=int(obj["tau_max"]), alpha=float(obj["alpha"]),
                   max_cond=int(obj["max_cond"]))


# ---------------------------------------------------------------------------
# Partial correlation and the Fisher z test
# ---------------------------------------------------------------------------


def partial_correlation(data: np.ndarray, i: int, j: int,
                        cond: Sequence[int] = ()) -> float:
    """Correlation of columns i and j after linearly regressing out the
    conditioning columns (with intercept) from both.

    ``data`` is a (samples, variables) matrix. A zero-variance column among
    i, j raises DegenerateChannel. Rank-deficient conditioning designs fall
    back to a small ridge (1e-8) on the normal equations.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise MalformedInput("data must be a (samples, variables) matrix")
    n = data.shape[0]
    cond = tuple(int(c) for c in cond)
    if len(set((i, j) + cond)) != 2 + len(cond):
        raise ValueError("variable indices i, j and cond must be distinct")
    if n < len(cond) + 2:
        raise InsufficientData(
            f"{n} samples cannot support {len(cond)} conditioning variables"
        )
    xi = data[:, i] - data[:, i].mean()
    xj = data[:, j] - data[:, j].mean()
    if not xi.any() or not xj.any():
        raise DegenerateChannel("constant column in partial correlation")
    if cond:
        z = data[:, cond] - data[:, cond].mean(axis=0)
        gram = z.T @ z
        try:
            coef = np.linalg.solve(gram, z.T @ np.column_stack([xi, xj]))
        except np.linalg.LinAlgError:
            gram = gram + 1e-8 * np.eye(gram.shape[0])
            coef = np.linalg.solve(gram, z.T @ np.column_stack([xi, xj]))
        resid = np.column_stack([xi, xj]) - z @ coef
        xi, xj = resid[:, 0], resid[:, 1]
    denom = math.sqrt(float(xi @ xi) * float(xj @ xj))
    if denom == 0.0:
        return 0.0
    rho = float(xi @ xj) / denom
    return min(1.0, max(-1.0, rho))


def fisher_z(rho: float, n_samples: int, cond_size: int) -> float:
    """Fisher z statistic; infinite when |rho| is 1."""
    dof = n_samples - cond_size - 3
    if dof <= 0:
        raise InsufficientData(
            f"need more than {cond_size + 3} samples, got {n_samples}"
        )
    if abs(rho) >= 1.0:
        return math.inf
    return math.sqrt(dof) * math.atanh(rho)


def ci_test(rho: float, n_samples: int, cond_size: int,
            alpha: float = 0.05) -> bool:
    """True when the correlation is statistically indistinguishable from
    zero at level alpha (two-sided). |rho| = 1 is always dependent."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    z = fisher_z(rho, n_samples, cond_size)
    crit = float(norm.ppf(1.0 - alpha / 2.0))
    return abs(z) <= crit


# ---------------------------------------------------------------------------
# Lagged design and skeleton search
# ---------------------------------------------------------------------------


def build_lagged_matrix(series: np.ndarray, tau_max: int
                        ) -> tuple[np.ndarray, list[LaggedVariable]]:
    """Unroll (n, C) series into (n - tau_max, C*(tau_max+1)) columns.

    Column order is lag-major: all lag-0 channels first, then lag 1, and
    so on, each block in channel order. Row t of the output corresponds to
    original time t + tau_max.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise MalformedInput("series must be a (samples, channels) matrix")
    n, c = series.shape
    if tau_max < 0:
        raise ValueError("tau_max must be >= 0")
    if n - tau_max < 2:
        raise InsufficientData(
            f"{n} samples leave fewer than 2 rows at tau_max={tau_max}"
        )
    variables = [LaggedVariable(ch, lag)
                 for lag in range(tau_max + 1) for ch in range(c)]
    out = np.empty((n - tau_max, len(variables)))
    for v, (ch, lag) in enumerate(variables):
        out[:, v] = series[tau_max - lag: n - lag, ch]
    return out, variables


@dataclass(frozen=True)
class PcSkeleton:
    variables: tuple[LaggedVariable, ...]
    channels: tuple[int, ...]
    adjacency: dict[int, frozenset[int]]
    sepsets: dict[tuple[int, int], tuple[int, ...]]
    tau_max: int
    alpha: float
    max_cond: int
    n_samples_effective: int
    n_tests: int

    def edge_list(self) -> list[tuple[int, int]]:
        pairs = set()
        for u, nbrs in self.adjacency.items():
            for v in nbrs:
                pairs.add((min(u, v), max(u, v)))
        return sorted(pairs)


CiFn = Callable[[int, int, tuple[int, ...]], bool]


def _cov_ci_fn(data: np.ndarray, alpha: float) -> tuple[CiFn, int]:
    """Default finite-sample test closed over the column covariance.

    The partial correlation given S comes from inverting the covariance
    submatrix over {i, j} | S, which equals the regress-out definition but
    costs one small solve per test instead of a full regression.
    """
    n = data.shape[0]
    centered = data - data.mean(axis=0)
    cov = (centered.T @ centered) / n
    var = np.diag(cov).copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.sqrt(np.outer(var, var))
        corr = np.divide(cov, scale, out=np.zeros_like(cov), where=scale > 0)
    crit = float(norm.ppf(1.0 - alpha / 2.0))

    def indep(i: int, j: int, cond: tuple[int, ...]) -> bool:
        if var[i] == 0.0 or var[j] == 0.0 or any(var[k] == 0.0 for k in cond):
            return True  # a flat series carries no dependence information
        if not cond:
            rho = corr[i, j]
        else:
            idx = (i, j) + cond
            sub = cov[np.ix_(idx, idx)]
            try:
                prec = np.linalg.inv(sub)
            except np.linalg.LinAlgError:
                prec = np.linalg.inv(sub + 1e-8 * np.eye(len(idx)))
            denom = prec[0, 0] * prec[1, 1]
            if denom <= 0.0:
                return True
            rho = -prec[0, 1] / math.sqrt(denom)
        rho = min(1.0, max(-1.0, float(rho)))
        dof = n - len(cond) - 3
        if dof <= 0:
            raise InsufficientData(
                f"{n} effective samples cannot condition on {len(cond)} variables"
            )
        if abs(rho) >= 1.0:
            return False
        return abs(math.sqrt(dof) * math.atanh(rho)) <= crit

    return indep, n


def pc_skeleton(series: np.ndarray, tau_max: int = 5, alpha: float = 0.05,
                max_cond: int = 3, channels: Sequence[int] | None = None,
                ci_fn: CiFn | None = None) -> PcSkeleton:
    """Stable-PC skeleton over the lagged variable set.

    ``channels`` optionally relabels columns (defaults to 0..C-1); labels
    are carried through to the oriented graph. When ``ci_fn`` is given it
    replaces the finite-sample test entirely: it receives variable indices
    into the lag-major layout and must return True for independence.
    """
    series = np.asarray(series, dtype=np.float64)
    data, variables = build_lagged_matrix(series, tau_max)
    n_channels = series.shape[1]
    if channels is None:
        channels = tuple(range(n_channels))
    else:
        channels = tuple(int(c) for c in channels)
        if len(channels) != n_channels:
            raise MalformedInput(
                f"{len(channels)} channel labels for {n_channels} columns"
            )
    if ci_fn is None:
        ci_fn, n_eff = _cov_ci_fn(data, alpha)
    else:
        n_eff = data.shape[0]

    n_vars = len(variables)
    present = range(n_channels)  # lag-0 variables occupy the first block
    adj: dict[int, set[int]] = {v: set() for v in range(n_vars)}
    for v in present:
        for u in range(n_vars):
            if u == v:
                continue
            adj[v].add(u)
            adj[u].add(v)

    sepsets: dict[tuple[int, int], tuple[int, ...]] = {}
    n_tests = 0

    for size in range(max_cond + 1):
        pairs = sorted({(min(u, v), max(u, v))
                        for v in present for u in adj[v]})
        to_remove: list[tuple[int, int]] = []
        for u, v in pairs:
            adj_u = sorted(adj[u] - {v})
            adj_v = sorted(adj[v] - {u})
            found = None
            if len(adj_u) >= size:
                for cond in combinations(adj_u, size):
                    n_tests += 1
                    if ci_fn(u, v, cond):
                        found = cond
                        break
            if found is None and len(adj_v) >= size:
                adj_u_set = set(adj_u)
                for cond in combinations(adj_v, size):
                    if size and set(cond) <= adj_u_set:
                        continue  # already tested from the u side
                    n_tests += 1
                    if ci_fn(u, v, cond):
                        found = cond
                        break
            if found is not None:
                sepsets[(u, v)] = found
                to_remove.append((u, v))
        for u, v in to_remove:
            adj[u].discard(v)
            adj[v].discard(u)
        if not any(adj[v] for v in present):
            break

    return PcSkeleton(
        variables=tuple(variables),
        channels=channels,
        adjacency={v: frozenset(nbrs) for v, nbrs in adj.items()},
        sepsets=sepsets,
        tau_max=tau_max,
        alpha=alpha,
        max_cond=max_cond,
        n_samples_effective=n_eff,
        n_tests=n_tests,
    )


# ---------------------------------------------------------------------------
# Orientation and the channel-level graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CausalEdge:
    cause_channel: int
    cause_lag: int
    effect_channel: int

    def to_json(self) -> dict:
        return {"cause_channel": self.cause_channel,
                "cause_lag": self.cause_lag,
                "effect_channel": self.effect_channel}


@dataclass(frozen=True)
class CausalGraph:
    """Oriented discovery result, labeled with original channel ids."""

    channels: tuple[int, ...]
    directed: tuple[CausalEdge, ...]
    bidirected: tuple[tuple[int, int], ...]
    tau_max: int
    alpha: float
    max_cond: int
    n_tests: int = 0
    n_samples_effective: int = 0
    metadata: dict = field(default_factory=dict)

    def channel_children(self) -> dict[int, set[int]]:
        """Channel-level successor map from directed edges, self-lags
        dropped (a channel is not its own descendant)."""
        children: dict[int, set[int]] = {c: set() for c in self.channels}
        for e in self.directed:
            if e.cause_channel != e.effect_channel:
                children[e.cause_channel].add(e.effect_channel)
        return children

    def descendants(self, channel: int) -> set[int]:
        children = self.channel_children()
        seen: set[int] = set()
        stack = [channel]
        while stack:
            node = stack.pop()
            for nxt in children.get(node, ()):
                if nxt not in seen and nxt != channel:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def source_channels(self) -> tuple[int, ...]:
        """Channels with no incoming directed edge from another channel."""
        has_parent: set[int] = set()
        for e in self.directed:
            if e.cause_channel != e.effect_channel:
                has_parent.add(e.effect_channel)
        return tuple(c for c in self.channels if c not in has_parent)


def orient(skeleton: PcSkeleton) -> CausalGraph:
    """Turn a skeleton into directed / bidirected channel-labeled edges."""
    variables = skeleton.variables
    n_channels = len(skeleton.channels)
    label = skeleton.channels

    directed: list[CausalEdge] = []
    contemporaneous: list[tuple[int, int]] = []
    for u, v in skeleton.edge_list():
        var_u, var_v = variables[u], variables[v]
        if var_u.lag == 0 and var_v.lag == 0:
            contemporaneous.append((u, v))
        else:
            lagged, pres = (u, v) if var_u.lag > 0 else (v, u)
            directed.append(CausalEdge(
                cause_channel=label[variables[lagged].channel],
                cause_lag=variables[lagged].lag,
                effect_channel=label[variables[pres].channel],
            ))

    # Collider marks: arrowheads landing on present-time endpoints of
    # contemporaneous edges.
    heads: set[tuple[int, int]] = set()  # (edge endpoint w, other endpoint)
    contemp_set = {frozenset(e) for e in contemporaneous}
    for w in range(n_channels):  # lag-0 variables
        nbrs = sorted(skeleton.adjacency[w])
        for a, b in combinations(nbrs, 2):
            if b in skeleton.adjacency[a]:
                continue  # shielded
            key = (min(a, b), max(a, b))
            sep = skeleton.sepsets.get(key, ())
            if w in sep:
                continue
            if frozenset((a, w)) in contemp_set:
                heads.add((w, a))
            if frozenset((b, w)) in contemp_set:
                heads.add((w, b))

    bidirected: list[tuple[int, int]] = []
    for u, v in contemporaneous:
        head_u = (u, v) in heads
        head_v = (v, u) in heads
        cu, cv = label[variables[u].channel], label[variables[v].channel]
        if head_v and not head_u:
            directed.append(CausalEdge(cu, 0, cv))
        elif head_u and not head_v:
            directed.append(CausalEdge(cv, 0, cu))
        else:
            bidirected.append((min(cu, cv), max(cu, cv)))

    directed.sort(key=lambda e: (e.effect_channel, e.cause_channel, e.cause_lag))
    return CausalGraph(
        channels=skeleton.channels,
        directed=tuple(directed),
        bidirected=tuple(sorted(bidirected)),
        tau_max=skeleton.tau_max,
        alpha=skeleton.alpha,
        max_cond=skeleton.max_cond,
        n_tests=skeleton.n_tests,
        n_samples_effective=skeleton.n_samples_effective,
    )


def discover(series: np.ndarray, config: CausalDiscoveryConfig | None = None,
             channels: Sequence[int] | None = None,
             ci_fn: CiFn | None = None) -> CausalGraph:
    """Skeleton plus orientation in one call."""
    if config is None:
        config = CausalDiscoveryConfig()
    skel = pc_skeleton(series, tau_max=config.tau_max, alpha=config.alpha,
                       max_cond=config.max_cond, channels=channels,
                       ci_fn=ci_fn)
    return orient(skel)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def causal_graph_to_json(graph: CausalGraph) -> dict:
    return {
        "format_version": GRAPH_FORMAT_VERSION,
        "channels": list(graph.channels),
        "directed": [e.to_json() for e in graph.directed],
        "bidirected": [list(p) for p in graph.bidirected],
        "tau_max": graph.tau_max,
        "alpha": graph.alpha,
        "max_cond": graph.max_cond,
        "n_tests": graph.n_tests,
        "n_samples_effective": graph.n_samples_effective,
    }


def causal_graph_from_json(obj: dict) -> CausalGraph:
    from .errors import FormatVersionError

    version = obj.get("format_version")
    if version != GRAPH_FORMAT_VERSION:
        raise FormatVersionError(
            f"causal graph format version {version!r}, "
            f"expected {GRAPH_FORMAT_VERSION}"
        )
    return CausalGraph(
        channels=tuple(int(c) for c in obj["channels"]),
        directed=tuple(CausalEdge(int(e["cause_channel"]), int(e["cause_lag"]),
                                  int(e["effect_channel"]))
                       for e in obj["directed"]),
        bidirected=tuple((int(a), int(b)) for a, b in obj["bidirected"]),
        tau_max=int(obj["tau_max"]),
        alpha=float(obj["alpha"]),
        max_cond=int(obj["max_cond"]),
        n_tests=int(obj.get("n_tests", 0)),
        n_samples_effective=int(obj.get("n_samples_effective", 0)),
    )


def causal_graph_to_dot(graph: CausalGraph,
                        names: Sequence[str] | None = None) -> str:
    """Graphviz digraph; lagged influences carry a lag label and
    bidirected leftovers are drawn with arrowheads on both ends."""
    def name(c: int) -> str:
        return names[c] if names is not None else f"ch{c}"

    lines = ["digraph causal {", "  rankdir=LR;"]
    for c in graph.channels:
        lines.append(f'  "{name(c)}";')
    for e in graph.directed:
        attrs = f' [label="lag {e.cause_lag}"]' if e.cause_lag else ""
        lines.append(f'  "{name(e.cause_channel)}" -> '
                     f'"{name(e.effect_channel)}"{attrs};')
    for a, b in graph.bidirected:
        lines.append(f'  "{name(a)}" -> "{name(b)}" [dir=both];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_causal_graph(graph: CausalGraph, dest) -> None:
    text = json.dumps(causal_graph_to_json(graph), indent=2, sort_keys=True)
    if hasattr(dest, "write"):
        dest.write(text + "\n")
    else:
        with open(dest, "w") as fh:
            fh.write(text + "\n")
