"""Graph topology storage and the structural queries built on it.

The central type is TextGraph: an undirected graph in compressed sparse row
form whose nodes carry documents, optional labels, and named node splits.
On top of it live the exact-distance k-hop query used to draw contrastive
positives, the symmetric degree normalization used by graph convolutions,
and the train/val/test edge-split construction for link prediction.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, IngestionError

__all__ = [
    "TextGraph",
    "LinkSplit",
    "k_hop_neighbors",
    "sample_positive",
    "normalized_adjacency",
    "build_link_split",
    "save_link_split",
    "load_link_split",
]


def _canonical_edges(num_nodes: int, edges: Iterable[Tuple[int, int]]):
    """Validate endpoints, drop self-loops, deduplicate as (min, max) pairs."""
    canon = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise ContractError(
                f"edge ({u}, {v}) out of range for a {num_nodes}-node graph"
            )
        if u == v:
            continue
        canon.add((u, v) if u < v else (v, u))
    return sorted(canon)


@dataclass
class TextGraph:
    """Undirected textual graph: CSR adjacency plus per-node payload.

    indptr/indices store both directions of every edge with sorted neighbor
    lists, no self-loops, and no duplicates. labels uses -1 for unlabeled
    nodes. splits maps split names to sorted node-id arrays.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    texts: List[str]
    labels: np.ndarray
    splits: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Tuple[int, int]],
        texts: Optional[List[str]] = None,
        labels=None,
        splits: Optional[Dict[str, Sequence[int]]] = None,
    ) -> "TextGraph":
        if num_nodes < 1:
            raise ContractError(f"graph needs at least one node, got {num_nodes}")
        canon = _canonical_edges(num_nodes, edges)
        if canon:
            pairs = np.asarray(canon, dtype=np.int64)
            src = np.concatenate([pairs[:, 0], pairs[:, 1]])
            dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
        else:
            src = np.zeros(0, dtype=np.int64)
            dst = np.zeros(0, dtype=np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(np.bincount(src, minlength=num_nodes))

        if texts is None:
            texts = [""] * num_nodes
        if len(texts) != num_nodes:
            raise ContractError(f"expected {num_nodes} texts, got {len(texts)}")
        if labels is None:
            labels_arr = -np.ones(num_nodes, dtype=np.int64)
        else:
            labels_arr = np.asarray(labels, dtype=np.int64)
            if labels_arr.shape != (num_nodes,):
                raise ContractError(
                    f"expected {num_nodes} labels, got shape {labels_arr.shape}"
                )
        split_arrs: Dict[str, np.ndarray] = {}
        for name, ids in (splits or {}).items():
            arr = np.asarray(sorted(int(i) for i in ids), dtype=np.int64)
            if arr.size and (arr[0] < 0 or arr[-1] >= num_nodes):
                raise ContractError(f"split '{name}' has out-of-range node ids")
            split_arrs[name] = arr
        return cls(num_nodes, indptr, dst, list(texts), labels_arr, split_arrs)

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.indices.size // 2)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        if not (0 <= node < self.num_nodes):
            raise IndexError(f"node {node} out of range for {self.num_nodes} nodes")
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def edge_set(self):
        """All undirected edges as a set of (u, v) tuples with u < v."""
        out = set()
        for u in range(self.num_nodes):
            for v in self.neighbors(u):
                if u < v:
                    out.add((u, int(v)))
        return out

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return bool(pos < row.size and row[pos] == v)


def k_hop_neighbors(graph: TextGraph, node: int, k: int) -> set:
    """Nodes at shortest-path distance exactly k from node.

    Closer nodes and the anchor itself are excluded, so the returned sets
    for different k never overlap.
    """
    if not (0 <= node < graph.num_nodes):
        raise IndexError(f"node {node} out of range for {graph.num_nodes} nodes")
    if k < 1:
        raise ContractError(f"hop distance must be >= 1, got {k}")
    visited = {node}
    frontier = {node}
    for _ in range(k):
        nxt = set()
        for u in frontier:
            for v in graph.neighbors(u):
                v = int(v)
                if v not in visited:
                    nxt.add(v)
        visited.update(nxt)
        frontier = nxt
        if not frontier:
            break
    return frontier


def sample_positive(
    graph: TextGraph, node: int, k: int, rng: np.random.Generator
) -> Optional[int]:
    """Uniform draw from the exact-k-hop set; None when that set is empty."""
    candidates = sorted(k_hop_neighbors(graph, node, k))
    if not candidates:
        return None
    return int(candidates[int(rng.integers(len(candidates)))])


def normalized_adjacency(graph: TextGraph, add_self_loops: bool = True) -> sp.csr_matrix:
    """Symmetrically normalized adjacency D^{-1/2} A D^{-1/2}.

    Degrees are taken from A after optional self-loop insertion; isolated
    nodes keep zero rows and columns (0^{-1/2} is defined as 0).
    """
    n = graph.num_nodes
    adj = sp.csr_matrix(
        (np.ones(graph.indices.size, dtype=np.float64), graph.indices, graph.indptr),
        shape=(n, n),
    )
    if add_self_loops:
        adj = (adj + sp.identity(n, dtype=np.float64, format="csr")).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    scale = sp.diags(inv_sqrt)
    return (scale @ adj @ scale).tocsr()


@dataclass
class LinkSplit:
    """Edge-level train/val/test split with one negative per positive.

    Edge arrays have shape (m, 2) with canonical u < v rows. Negatives are
    uniform over non-edges of the full graph and distinct across all six
    arrays. The training message-passing graph must contain train positives
    only; train_message_graph builds it.
    """

    num_nodes: int
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int

    def positives(self, part: str) -> np.ndarray:
        return {"train": self.train_pos, "val": self.val_pos, "test": self.test_pos}[part]

    def negatives(self, part: str) -> np.ndarray:
        return {"train": self.train_neg, "val": self.val_neg, "test": self.test_neg}[part]

    def train_message_graph(self, graph: TextGraph) -> TextGraph:
        """Graph restricted to train positives, payload carried over."""
        return TextGraph.from_edges(
            graph.num_nodes,
            [tuple(row) for row in self.train_pos],
            texts=graph.texts,
            labels=graph.labels,
            splits=graph.splits,
        )

    def validate(self, graph: TextGraph) -> None:
        """Raise ContractError on any leakage or partition violation."""
        full = graph.edge_set()
        seen = set()
        for part in ("train", "val", "test"):
            pos = {(int(u), int(v)) for u, v in self.positives(part)}
            neg = {(int(u), int(v)) for u, v in self.negatives(part)}
            if len(pos) != self.positives(part).shape[0]:
                raise ContractError(f"{part} positives contain duplicates")
            if not pos <= full:
                raise ContractError(f"{part} positives are not edges of the graph")
            if neg & full:
                raise ContractError(f"{part} negatives collide with real edges")
            if len(neg) != self.negatives(part).shape[0]:
                raise ContractError(f"{part} negatives contain duplicates")
            if (pos | neg) & seen:
                raise ContractError(f"{part} overlaps another partition")
            seen |= pos | neg
        total_pos = sum(self.positives(p).shape[0] for p in ("train", "val", "test"))
        if total_pos != len(full):
            raise ContractError("positives do not partition the edge set")


def build_link_split(
    graph: TextGraph,
    ratios: Tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> LinkSplit:
    """Partition edges by the given ratios and sample matched negatives."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {ratios}")
    edges = sorted(graph.edge_set())
    n_edges = len(edges)
    if n_edges < 10:
        raise ConfigError(f"link split needs >= 10 edges, graph has {n_edges}")
    n = graph.num_nodes
    max_non_edges = n * (n - 1) // 2 - n_edges
    if n_edges > max_non_edges:
        raise ConfigError(
            f"cannot sample {n_edges} negatives: only {max_non_edges} non-edges exist"
        )

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_edges)
    n_train = int(round(ratios[0] * n_edges))
    n_val = int(round(ratios[1] * n_edges))
    n_train = min(n_train, n_edges)
    n_val = min(n_val, n_edges - n_train)
    bounds = (n_train, n_train + n_val)

    edge_arr = np.asarray(edges, dtype=np.int64)
    pos_parts = [
        edge_arr[np.sort(perm[: bounds[0]])],
        edge_arr[np.sort(perm[bounds[0] : bounds[1]])],
        edge_arr[np.sort(perm[bounds[1] :])],
    ]

    full = set(edges)
    chosen = set()
    negatives = []
    while len(negatives) < n_edges:
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        e = (u, v) if u < v else (v, u)
        if e in full or e in chosen:
            continue
        chosen.add(e)
        negatives.append(e)
    neg_arr = np.asarray(negatives, dtype=np.int64)
    neg_parts = [
        neg_arr[: bounds[0]],
        neg_arr[bounds[0] : bounds[1]],
        neg_arr[bounds[1] :],
    ]
    neg_parts = [part[np.lexsort((part[:, 1], part[:, 0]))] for part in neg_parts]

    return LinkSplit(
        num_nodes=n,
        train_pos=pos_parts[0],
        val_pos=pos_parts[1],
        test_pos=pos_parts[2],
        train_neg=neg_parts[0],
        val_neg=neg_parts[1],
        test_neg=neg_parts[2],
        seed=seed,
    )


_SPLIT_FILES = [
    ("train", "pos"), ("val", "pos"), ("test", "pos"),
    ("train", "neg"), ("val", "neg"), ("test", "neg"),
]


def save_link_split(split: LinkSplit, directory) -> None:
    """Write six edge-list files (one "src<TAB>dst" pair per line)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part, kind in _SPLIT_FILES:
        arr = split.positives(part) if kind == "pos" else split.negatives(part)
        lines = [f"{int(u)}\t{int(v)}" for u, v in arr]
        (directory / f"{part}_{kind}.edges").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )


def load_link_split(directory, num_nodes: int) -> LinkSplit:
    """Read the six files written by save_link_split.

    The generating seed is not stored in the files; the loaded split
    records seed -1 to mark it as externally supplied.
    """
    directory = Path(directory)
    arrays = {}
    for part, kind in _SPLIT_FILES:
        path = directory / f"{part}_{kind}.edges"
        if not path.exists():
            raise IngestionError(f"missing link-split file {path}")
        rows = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise IngestionError(f"{path} line {lineno}: expected 'src<TAB>dst'")
            try:
                u, v = int(fields[0]), int(fields[1])
            except ValueError:
                raise IngestionError(f"{path} line {lineno}: non-integer endpoint")
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise IngestionError(f"{path} line {lineno}: endpoint out of range")
            rows.append((u, v))
        arrays[(part, kind)] = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    return LinkSplit(
        num_nodes=num_nodes,
        train_pos=arrays[("train", "pos")],
        val_pos=arrays[("val", "pos")],
        test_pos=arrays[("test", "pos")],
        train_neg=arrays[("train", "neg")],
        val_neg=arrays[("val", "neg")],
        test_neg=arrays[("test", "neg")],
        seed=-1,
    )
