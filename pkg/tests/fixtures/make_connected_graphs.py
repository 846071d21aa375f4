"""Regenerate ``connected_graphs_upto8.g6``: every connected simple graph on
1..8 nodes, one per isomorphism class, in graph6 format.

Graphs on up to 7 nodes come from the networkx atlas.  Every connected graph
on 8 nodes has a non-cut vertex, so it arises by joining a new vertex to a
nonempty subset of some connected 7-node graph; candidates are deduplicated
by Weisfeiler-Lehman hash followed by exact isomorphism tests.

Usage: python3 tests/fixtures/make_connected_graphs.py
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from pathlib import Path

import networkx as nx

OUT = Path(__file__).with_name("connected_graphs_upto8.g6")


def main() -> None:
    small = [g for g in nx.graph_atlas_g() if g.number_of_nodes() >= 1 and nx.is_connected(g)]
    seven = [g for g in small if g.number_of_nodes() == 7]
    buckets: dict[str, list[nx.Graph]] = defaultdict(list)
    for base in seven:
        for r in range(1, 8):
            for subset in itertools.combinations(range(7), r):
                g = base.copy()
                g.add_edges_from((7, v) for v in subset)
                h = nx.weisfeiler_lehman_graph_hash(g, iterations=4)
                if not any(nx.is_isomorphic(g, other) for other in buckets[h]):
                    buckets[h].append(g)
    eight = [g for group in buckets.values() for g in group]
    lines = [nx.to_graph6_bytes(g, header=False).decode().strip() for g in small + eight]
    OUT.write_text("\n".join(lines) + "\n")
    counts = defaultdict(int)
    for g in small + eight:
        counts[g.number_of_nodes()] += 1
    print(dict(sorted(counts.items())))


if __name__ == "__main__":
    main()
