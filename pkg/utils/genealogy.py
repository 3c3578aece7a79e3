"""
Genealogy Module

Lineage records emitted by lookdown events, the backward ancestor walk,
coalescent tree extraction (networkx DiGraph), Newick export/parse and
pairwise coalescence statistics.
"""
import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import stats

from utils.core import LookdownError

logger = logging.getLogger(__name__)


class IncompleteLineageError(LookdownError):
    """Raised when the lineage log does not cover the requested interval."""


class LineageRecord(NamedTuple):
    """
    At `time`, particle `child_id` took its ancestry from `parent_id`.

    parent_id is None for immigrants and other roots.
    """
    time: float
    child_id: int
    parent_id: Optional[int]
    child_level: float
    parent_level: float
    event_tag: str


def _record_times(lineage_log: Sequence[LineageRecord]) -> List[float]:
    return [record.time for record in lineage_log]


def _check_coverage(r: float, t: float, coverage: Optional[Tuple[float, float]]) -> None:
    if r > t:
        raise ValueError(f"r={r} is after t={t}")
    if coverage is not None and (r < coverage[0] or t > coverage[1]):
        raise IncompleteLineageError(
            f"log covers [{coverage[0]}, {coverage[1]}], requested [{r}, {t}]")


def ancestor_index(lineage_log: Sequence[LineageRecord], particle_id: int, r: float, t: float,
                   coverage: Optional[Tuple[float, float]] = None) -> int:
    """
    Id of the ancestor at time r of the particle alive at time t.

    Walks the records in (r, t] backward, jumping to the parent whenever the
    current lineage is the child.
    """
    _check_coverage(r, t, coverage)
    times = _record_times(lineage_log)
    lo = bisect_right(times, r)
    hi = bisect_right(times, t)
    current = particle_id
    for idx in range(hi - 1, lo - 1, -1):
        record = lineage_log[idx]
        if record.child_id != current:
            continue
        if record.parent_id is None:
            raise IncompleteLineageError(
                f"lineage of {particle_id} starts at t={record.time} ({record.event_tag}), after r={r}")
        current = record.parent_id
    return current


def ancestor_level(lineage_log: Sequence[LineageRecord], level: float, r: float, t: float) -> float:
    """
    Level-arithmetic version of the ancestor walk for fixed-level models:
    follow the lineage by level instead of by id.
    """
    times = _record_times(lineage_log)
    lo = bisect_right(times, r)
    hi = bisect_right(times, t)
    current = level
    for idx in range(hi - 1, lo - 1, -1):
        record = lineage_log[idx]
        if record.child_level == current and record.parent_id is not None:
            current = record.parent_level
    return current


@dataclass
class AncestryTree:
    """Coalescent tree (or forest) of a sample; node attribute `time` is absolute."""
    graph: nx.DiGraph
    leaves: List[int]
    sample_time: float
    start_time: float
    roots: List = field(default_factory=list)

    @property
    def depth(self) -> float:
        return self.sample_time - self.start_time

    def internal_nodes(self) -> List:
        return [node for node in self.graph.nodes if self.graph.out_degree(node) > 0]

    def merge_times(self) -> List[float]:
        return sorted(self.graph.nodes[node]["time"] for node in self.internal_nodes())

    def multifurcations(self) -> int:
        return sum(1 for node in self.internal_nodes() if self.graph.out_degree(node) > 2)

    def coalescence_time(self, a: int, b: int) -> float:
        """Time back from the sample to the most recent common ancestor; inf if none."""
        if a == b:
            return 0.0
        ancestors_a = nx.ancestors(self.graph, a) | {a}
        ancestors_b = nx.ancestors(self.graph, b) | {b}
        common = ancestors_a & ancestors_b
        if not common:
            return math.inf
        latest = max(self.graph.nodes[node]["time"] for node in common)
        return self.sample_time - latest

    def pairwise_times(self) -> Dict[Tuple[int, int], float]:
        leaves = sorted(self.leaves)
        return {(a, b): self.coalescence_time(a, b) for a, b in combinations(leaves, 2)}

    def clades(self) -> set:
        """Leaf sets below every internal node (topology fingerprint)."""
        out = set()
        for node in self.internal_nodes():
            below = {n for n in nx.descendants(self.graph, node) if self.graph.out_degree(n) == 0}
            out.add(frozenset(self.graph.nodes[n]["label"] for n in below))
        return out


def extract_tree(lineage_log: Sequence[LineageRecord], sample_ids: Iterable[int], t: float,
                 r: float = 0.0, coverage: Optional[Tuple[float, float]] = None) -> AncestryTree:
    """
    Build the genealogy of `sample_ids` (alive at t) back to time r.

    Lineages are tracked by the id of the particle currently carrying them.
    All merges into one parent at one event form a single node, so star
    merges produce multifurcations.
    """
    _check_coverage(r, t, coverage)
    sample_ids = sorted(set(int(pid) for pid in sample_ids))
    graph = nx.DiGraph()
    active: Dict[int, object] = {}
    for pid in sample_ids:
        graph.add_node(pid, time=t, label=str(pid))
        active[pid] = pid

    times = _record_times(lineage_log)
    lo = bisect_right(times, r)
    hi = bisect_right(times, t)
    idx = hi - 1
    counter = 0
    while idx >= lo:
        event_time = lineage_log[idx].time
        start = bisect_left(times, event_time, lo, idx + 1)
        # records of one event share a time; group moves per parent
        moves: Dict[int, List[object]] = {}
        for j in range(idx, start - 1, -1):
            record = lineage_log[j]
            if record.child_id not in active:
                continue
            if record.parent_id is None:
                raise IncompleteLineageError(
                    f"lineage through {record.child_id} starts at t={record.time}, after r={r}")
            moves.setdefault(record.parent_id, []).append(active.pop(record.child_id))
        for parent_id, nodes in moves.items():
            if parent_id in active:
                nodes.append(active.pop(parent_id))
            if len(nodes) == 1:
                active[parent_id] = nodes[0]
                continue
            counter += 1
            merged = ("node", counter)
            graph.add_node(merged, time=event_time, label=None)
            for child in nodes:
                graph.add_edge(merged, child, length=graph.nodes[child]["time"] - event_time)
            active[parent_id] = merged
        idx = start - 1

    roots = sorted(set(active.values()), key=lambda node: _min_leaf(graph, node))
    return AncestryTree(graph=graph, leaves=sample_ids, sample_time=t, start_time=r, roots=roots)


def _min_leaf(graph: nx.DiGraph, node) -> int:
    if graph.out_degree(node) == 0:
        return int(graph.nodes[node]["label"])
    return min(_min_leaf(graph, child) for child in graph.successors(node))


def _newick_node(graph: nx.DiGraph, node) -> str:
    children = sorted(graph.successors(node), key=lambda child: _min_leaf(graph, child))
    if not children:
        text = str(graph.nodes[node]["label"])
    else:
        text = "(" + ",".join(
            f"{_newick_node(graph, child)}:{graph.edges[node, child]['length']!r}"
            for child in children) + ")"
    return text


def export_newick(tree: AncestryTree) -> str:
    """Newick text, one line per root, branch lengths in simulation time."""
    lines = [_newick_node(tree.graph, root) + ";" for root in tree.roots]
    return "\n".join(lines)


class _NewickParser:
    def __init__(self, text: str):
        self.text = text.strip()
        self.pos = 0
        self.graph = nx.DiGraph()
        self.counter = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse_label(self) -> str:
        start = self.pos
        while self.peek() and self.peek() not in "(),:;":
            self.pos += 1
        return self.text[start:self.pos].strip()

    def parse_length(self) -> float:
        if self.peek() != ":":
            return 0.0
        self.pos += 1
        return float(self.parse_label())

    def parse_subtree(self):
        if self.peek() == "(":
            self.pos += 1
            children = []
            while True:
                child = self.parse_subtree()
                children.append((child, self.parse_length()))
                if self.peek() == ",":
                    self.pos += 1
                    continue
                if self.peek() != ")":
                    raise ValueError(f"malformed Newick near position {self.pos}")
                self.pos += 1
                break
            self.parse_label()
            self.counter += 1
            node = ("node", self.counter)
            self.graph.add_node(node, label=None)
            for child, length in children:
                self.graph.add_edge(node, child, length=length)
            return node
        label = self.parse_label()
        if not label:
            raise ValueError(f"missing leaf label near position {self.pos}")
        node = int(label) if label.lstrip("-").isdigit() else label
        self.graph.add_node(node, label=label)
        return node


def parse_newick(text: str) -> AncestryTree:
    """Parse Newick text written by export_newick; times are measured from the deepest root."""
    graph = nx.DiGraph()
    roots = []
    for chunk in [part for part in text.split(";") if part.strip()]:
        parser = _NewickParser(chunk)
        parser.counter = len(graph)
        root = parser.parse_subtree()
        graph = nx.union(graph, parser.graph)
        roots.append(root)

    depth = {}
    for root in roots:
        depth[root] = 0.0
        for parent, child in nx.dfs_edges(graph, root):
            depth[child] = depth[parent] + graph.edges[parent, child]["length"]
    leaves = [node for node in graph.nodes if graph.out_degree(node) == 0]
    sample_time = max(depth[leaf] for leaf in leaves) if leaves else 0.0
    for node, value in depth.items():
        graph.nodes[node]["time"] = value
    return AncestryTree(graph=graph, leaves=sorted(leaves, key=str), sample_time=sample_time,
                        start_time=0.0, roots=roots)


def coalescence_statistics(trees: Sequence[AncestryTree], confidence: float = 0.95) -> Dict:
    """
    Pairwise coalescence summary over trees.

    The exponential rate is estimated with right-censoring at the tree depth:
    rate = (#merged pairs) / (total exposure), with the chi-square interval.
    """
    if not trees:
        raise ValueError("coalescence_statistics needs at least one tree")
    observed: List[float] = []
    exposure = 0.0
    censored = 0
    internal = 0
    multifurcating = 0
    for tree in trees:
        for value in tree.pairwise_times().values():
            if math.isfinite(value):
                observed.append(value)
                exposure += value
            else:
                censored += 1
                exposure += tree.depth
        internal += len(tree.internal_nodes())
        multifurcating += tree.multifurcations()

    events = len(observed)
    times = np.asarray(observed)
    summary = {
        "n_trees": len(trees),
        "n_pairs": events + censored,
        "n_coalesced": events,
        "n_censored": censored,
        "mean_time": float(times.mean()) if events else math.nan,
        "quantiles": {str(q): float(np.quantile(times, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
        if events else {},
        "multifurcation_fraction": multifurcating / internal if internal else 0.0,
        "degenerate": bool(events > 0 and np.ptp(times) == 0.0),
    }
    if events and exposure > 0:
        alpha = 1.0 - confidence
        summary["rate_mle"] = events / exposure
        summary["rate_ci"] = [
            float(stats.chi2.ppf(alpha / 2, 2 * events) / (2 * exposure)),
            float(stats.chi2.ppf(1 - alpha / 2, 2 * events + 2) / (2 * exposure)),
        ]
    else:
        summary["rate_mle"] = math.nan
        summary["rate_ci"] = [math.nan, math.nan]
    if summary["degenerate"]:
        logger.warning("All coalescence times coincide; distribution is degenerate")
    return summary
