"""Retweet network construction and community structure.

The retweet graph is directed (retweeter -> original author) with
aggregated edge weights; influence is weighted in-degree. Community
detection is the random-walk agglomeration of Pons & Latapy run on
the undirected weighted projection: short walks (t steps) define a
distance between vertices, communities merge greedily by the smallest
increase in mean squared walk distance, and the partition kept is the
one with maximum modularity along the merge sequence.

The implementation is deterministic and insertion-order invariant:
all arithmetic runs over a node-sorted adjacency matrix, and merge
ties break on rounded distances plus canonical pair keys.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .categories import validate_category
from .classify import Prediction
from .corpus import Corpus


# ---------------------------------------------------------------------------
# graph construction


@dataclass
class RetweetGraph:
    """Directed weighted retweet graph plus construction bookkeeping."""

    digraph: nx.DiGraph
    dropped_dangling: int
    self_loop_users: list[str]

    def in_degree(self, node: str) -> float:
        return float(self.digraph.in_degree(node, weight="weight"))

    def influence_ranking(self, top: int | None = None) -> list[tuple[str, float]]:
        """Nodes by weighted in-degree, descending; ties break on node id."""
        ranked = sorted(
            ((n, self.in_degree(n)) for n in self.digraph.nodes),
            key=lambda item: (-item[1], item[0]),
        )
        return ranked[:top] if top is not None else ranked


def build_retweet_graph(corpus: Corpus, include_isolated: bool = False) -> RetweetGraph:
    """Aggregate retweets into a directed weighted graph.

    Each retweet adds weight 1 to the edge retweeter -> source author.
    Retweets whose source post is missing from the corpus are dropped
    and counted (the edge target would be unknown). Users retweeting
    their own posts produce self-loops, which are kept and flagged.
    Users with no retweet activity in either direction are excluded
    unless *include_isolated* is set.
    """
    graph = nx.DiGraph()
    dropped = 0
    self_loops: set[str] = set()
    verified: dict[str, bool] = {}
    for post in corpus:
        verified[post.author_id] = verified.get(post.author_id, False) or post.author_verified
    for post in corpus:
        if not post.is_retweet:
            continue
        source = corpus.get(post.retweet_of)
        if source is None:
            dropped += 1
            continue
        retweeter, author = post.author_id, source.author_id
        if retweeter == author:
            self_loops.add(retweeter)
        if graph.has_edge(retweeter, author):
            graph[retweeter][author]["weight"] += 1
        else:
            graph.add_edge(retweeter, author, weight=1)
    if include_isolated:
        graph.add_nodes_from(verified)
    for node in graph.nodes:
        graph.nodes[node]["verified"] = verified.get(node, False)
    return RetweetGraph(
        digraph=graph,
        dropped_dangling=dropped,
        self_loop_users=sorted(self_loops),
    )


def undirected_projection(digraph: nx.DiGraph) -> nx.Graph:
    """Undirected weighted view: opposite-direction weights sum."""
    projected = nx.Graph()
    projected.add_nodes_from(digraph.nodes(data=True))
    for u, v, data in digraph.edges(data=True):
        w = data.get("weight", 1)
        if projected.has_edge(u, v):
            projected[u][v]["weight"] += w
        else:
            projected.add_edge(u, v, weight=w)
    return projected


# ---------------------------------------------------------------------------
# modularity


def modularity(graph: nx.Graph, assignment: Mapping) -> float:
    """Weighted Newman modularity of a node -> community-id partition.

    The one-community partition of any graph scores exactly 0; self
    loops count twice in node strength (standard convention).
    """
    nodes = list(graph.nodes)
    if not nodes:
        raise ValueError("modularity of an empty graph is undefined")
    missing = [n for n in nodes if n not in assignment]
    if missing:
        raise ValueError(f"assignment missing nodes: {missing[:10]}")
    two_m = 0.0
    strength: dict = {}
    for u in nodes:
        s = 0.0
        for v, data in graph[u].items():
            w = data.get("weight", 1)
            s += 2 * w if u == v else w
        strength[u] = s
        two_m += s
    if two_m == 0:
        raise ValueError("graph has no edges")
    internal: dict = {}
    community_strength: dict = {}
    for u in nodes:
        community_strength[assignment[u]] = (
            community_strength.get(assignment[u], 0.0) + strength[u]
        )
    for u, v, data in graph.edges(data=True):
        if assignment[u] == assignment[v]:
            # an internal edge contributes w in both directions; a
            # self-loop contributes its doubled strength once
            w = data.get("weight", 1)
            internal[assignment[u]] = internal.get(assignment[u], 0.0) + 2 * w
    return sum(
        internal.get(c, 0.0) / two_m - (community_strength[c] / two_m) ** 2
        for c in community_strength
    )


# ---------------------------------------------------------------------------
# walktrap


@dataclass
class CommunityResult:
    assignment: dict  # node -> community id
    n_communities: int
    modularity: float
    steps: int
    seed: int | None = None
    singleton_isolated: int = 0

    def communities(self) -> list[list]:
        groups: dict[int, list] = {}
        for node, cid in self.assignment.items():
            groups.setdefault(cid, []).append(node)
        return [sorted(groups[cid], key=str) for cid in sorted(groups)]

    def sizes(self) -> list[int]:
        return [len(c) for c in self.communities()]


def _pair_key(c1: int, c2: int) -> tuple[int, int]:
    return (c1, c2) if c1 < c2 else (c2, c1)


def walktrap_communities(
    graph: nx.Graph | nx.DiGraph | RetweetGraph,
    steps: int = 4,
    seed: int | None = None,
) -> CommunityResult:
    """Random-walk community detection (Pons & Latapy) on the
    undirected weighted projection of *graph*.

    ``steps`` is the walk length t (default 4). The algorithm itself
    is deterministic; ``seed`` is accepted for interface uniformity
    and recorded in the result. Nodes in different connected
    components are never merged, so the partition always refines the
    component structure. Zero-degree nodes become singleton
    communities without entering the agglomeration.
    """
    if isinstance(graph, RetweetGraph):
        graph = graph.digraph
    if graph.is_directed():
        graph = undirected_projection(graph)
    if steps < 1:
        raise ValueError("walk length must be at least 1")
    all_nodes = sorted(graph.nodes, key=str)
    if not all_nodes:
        raise ValueError("cannot detect communities in an empty graph")

    def node_strength(u) -> float:
        return sum(
            2 * d.get("weight", 1) if v == u else d.get("weight", 1)
            for v, d in graph[u].items()
        )

    active_nodes = [n for n in all_nodes if node_strength(n) > 0]
    isolated = [n for n in all_nodes if node_strength(n) == 0]

    assignment: dict = {}
    if active_nodes:
        partition = _walktrap_partition(graph, active_nodes, steps)
        assignment.update(partition)
    next_cid = max(assignment.values(), default=-1) + 1
    for node in isolated:
        assignment[node] = next_cid
        next_cid += 1

    # renumber deterministically: larger first, then smallest member
    groups: dict[int, list] = {}
    for node, cid in assignment.items():
        groups.setdefault(cid, []).append(node)
    ordered = sorted(
        groups.values(), key=lambda members: (-len(members), min(str(m) for m in members))
    )
    final = {node: cid for cid, members in enumerate(ordered) for node in members}

    result_modularity = (
        modularity(graph, final) if graph.number_of_edges() > 0 else 0.0
    )
    return CommunityResult(
        assignment=final,
        n_communities=len(ordered),
        modularity=result_modularity,
        steps=steps,
        seed=seed,
        singleton_isolated=len(isolated),
    )


def _walktrap_partition(graph: nx.Graph, nodes: list, t: int) -> dict:
    """Agglomerative core, over nodes with positive strength."""
    n = len(nodes)
    index = {node: i for i, node in enumerate(nodes)}
    A = np.zeros((n, n), dtype=np.float64)
    for u, v, data in graph.edges(data=True):
        if u not in index or v not in index:
            continue
        w = float(data.get("weight", 1))
        i, j = index[u], index[v]
        if i == j:
            A[i, i] += 2 * w
        else:
            A[i, j] += w
            A[j, i] += w
    strength = A.sum(axis=1)
    two_m = strength.sum()

    P = A / strength[:, None]
    Pt = np.linalg.matrix_power(P, t)
    inv_sqrt_d = strength ** -0.5

    # community state; ids grow past n as merges happen
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    vectors: dict[int, np.ndarray] = {i: Pt[i] for i in range(n)}
    comm_strength: dict[int, float] = {i: float(strength[i]) for i in range(n)}
    internal: dict[int, float] = {i: float(A[i, i]) for i in range(n)}
    neighbors: dict[int, set[int]] = {
        i: {index[v] for v in graph[nodes[i]] if v in index and index[v] != i}
        for i in range(n)
    }
    active: set[int] = set(range(n))

    def delta_sigma(c1: int, c2: int) -> float:
        size1, size2 = len(members[c1]), len(members[c2])
        diff = inv_sqrt_d * (vectors[c1] - vectors[c2])
        return (size1 * size2) / ((size1 + size2) * n) * float(diff @ diff)

    def partition_modularity() -> float:
        return sum(
            internal[c] / two_m - (comm_strength[c] / two_m) ** 2 for c in active
        )

    current: dict[tuple[int, int], float] = {}
    heap: list[tuple[float, tuple[str, str], int, int]] = []

    def push(c1: int, c2: int) -> None:
        ds = delta_sigma(c1, c2)
        key = _pair_key(c1, c2)
        current[key] = ds
        # rounded distance first, then canonical smallest-member names,
        # so equal-distance merges happen in one fixed order
        tie = tuple(
            sorted(
                (
                    str(nodes[min(members[c1])]),
                    str(nodes[min(members[c2])]),
                )
            )
        )
        heapq.heappush(heap, (round(ds, 12), tie, key[0], key[1]))

    for c1 in range(n):
        for c2 in neighbors[c1]:
            if c1 < c2:
                push(c1, c2)

    # snapshot the best partition as merges proceed
    best_assignment = {nodes[i]: i for i in range(n)}
    best_q = partition_modularity()
    next_id = n

    while len(active) > 1 and heap:
        ds, _tie, c1, c2 = heapq.heappop(heap)
        key = _pair_key(c1, c2)
        if c1 not in active or c2 not in active:
            continue
        if key not in current or round(current[key], 12) != ds:
            continue  # stale entry
        del current[key]

        c3 = next_id
        next_id += 1
        size1, size2 = len(members[c1]), len(members[c2])
        part1, part2 = members.pop(c1), members.pop(c2)
        members[c3] = part1 + part2
        vectors[c3] = (size1 * vectors[c1] + size2 * vectors[c2]) / (size1 + size2)
        del vectors[c1], vectors[c2]
        comm_strength[c3] = comm_strength.pop(c1) + comm_strength.pop(c2)
        cross = _cross_weight(A, part1, part2)
        internal[c3] = internal.pop(c1) + internal.pop(c2) + cross
        merged_neighbors = (neighbors.pop(c1) | neighbors.pop(c2)) - {c1, c2}
        for other in merged_neighbors:
            neighbors[other].discard(c1)
            neighbors[other].discard(c2)
            neighbors[other].add(c3)
            current.pop(_pair_key(c1, other), None)
            current.pop(_pair_key(c2, other), None)
        neighbors[c3] = merged_neighbors
        active.discard(c1)
        active.discard(c2)
        active.add(c3)

        for other in merged_neighbors:
            push(c3, other)

        q = partition_modularity()
        if round(q, 10) > round(best_q, 10):
            best_q = q
            best_assignment = {
                nodes[i]: cid for cid in active for i in members[cid]
            }

    return best_assignment


def _cross_weight(A: np.ndarray, part1: list[int], part2: list[int]) -> float:
    # ordered-pair weight that becomes internal after a merge: A[i,j]
    # plus A[j,i] for every i in one part and j in the other
    block = A[np.ix_(np.array(part1), np.array(part2))]
    return 2.0 * float(block.sum())


# ---------------------------------------------------------------------------
# community naming and engagement overlays


def assign_display_names(
    result: CommunityResult, seed_accounts: Mapping[str, Sequence[str]]
) -> dict[int, str]:
    """Name communities from seed account lists.

    Each display name goes to the community containing most of its
    seeds (ties to the larger community, then lower id). Communities
    without a name get "community_<id>".
    """
    sizes = {cid: 0 for cid in set(result.assignment.values())}
    for cid in result.assignment.values():
        sizes[cid] += 1
    names: dict[int, str] = {}
    for name in sorted(seed_accounts):
        tallies: dict[int, int] = {}
        for account in seed_accounts[name]:
            cid = result.assignment.get(account)
            if cid is not None:
                tallies[cid] = tallies.get(cid, 0) + 1
        if not tallies:
            continue
        best = sorted(tallies, key=lambda c: (-tallies[c], -sizes[c], c))[0]
        if best not in names:
            names[best] = name
    for cid in sizes:
        names.setdefault(cid, f"community_{cid}")
    return names


def engagement_overlay(
    corpus: Corpus,
    predictions: Mapping[str, str] | Iterable[Prediction],
    category: str,
) -> dict[str, int]:
    """Per-user engagement counts with one content category: posts
    authored in the category plus retweets of posts in it."""
    validate_category(category)
    labels = _as_label_map(predictions)
    counts: dict[str, int] = {}
    for post in corpus:
        content_id = post.retweet_of if post.is_retweet else post.post_id
        if labels.get(content_id) != category:
            continue
        counts[post.author_id] = counts.get(post.author_id, 0) + 1
    return counts


@dataclass(frozen=True)
class CommunityEngagement:
    community: int
    display_name: str
    engaged_users: int
    retweet_count: int
    share: float


def engagement_by_community(
    corpus: Corpus,
    predictions: Mapping[str, str] | Iterable[Prediction],
    result: CommunityResult,
    category: str,
    names: Mapping[int, str] | None = None,
) -> list[CommunityEngagement]:
    """Which communities retweet content of a category, and how much.

    ``share`` is each community's fraction of all counted retweets of
    that category (retweets by users outside any community are
    ignored). Sorted by retweet count descending.
    """
    validate_category(category)
    labels = _as_label_map(predictions)
    retweets: dict[int, int] = {}
    users: dict[int, set[str]] = {}
    for post in corpus:
        if not post.is_retweet:
            continue
        if labels.get(post.retweet_of) != category:
            continue
        cid = result.assignment.get(post.author_id)
        if cid is None:
            continue
        retweets[cid] = retweets.get(cid, 0) + 1
        users.setdefault(cid, set()).add(post.author_id)
    total = sum(retweets.values())
    rows = [
        CommunityEngagement(
            community=cid,
            display_name=(names or {}).get(cid, f"community_{cid}"),
            engaged_users=len(users[cid]),
            retweet_count=count,
            share=count / total if total else 0.0,
        )
        for cid, count in retweets.items()
    ]
    return sorted(rows, key=lambda r: (-r.retweet_count, r.community))


def _as_label_map(predictions) -> dict[str, str]:
    if isinstance(predictions, Mapping):
        return dict(predictions)
    return {p.post_id: p.label for p in predictions}


# ---------------------------------------------------------------------------
# CSV exports


EDGE_CSV_FIELDS = ("source", "target", "weight")
NODE_CSV_FIELDS = ("node", "verified", "in_degree", "community")


def write_edges_csv(rg: RetweetGraph, path) -> None:
    import csv as _csv
    from pathlib import Path as _Path

    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(EDGE_CSV_FIELDS)
        for u, v, data in sorted(rg.digraph.edges(data=True)):
            writer.writerow([u, v, data.get("weight", 1)])


def write_nodes_csv(
    rg: RetweetGraph, path, communities: CommunityResult | None = None
) -> None:
    import csv as _csv
    from pathlib import Path as _Path

    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    assignment = communities.assignment if communities else {}
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(NODE_CSV_FIELDS)
        for node in sorted(rg.digraph.nodes, key=str):
            writer.writerow(
                [
                    node,
                    "true" if rg.digraph.nodes[node].get("verified") else "false",
                    f"{rg.in_degree(node):.6f}",
                    assignment.get(node, ""),
                ]
            )
