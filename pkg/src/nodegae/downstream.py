"""Stage-2 models trained on frozen node embeddings.

Three backbones (plain MLP, graph convolution, mean-aggregating
message passing) share one parameter store and training loop. Node
classification trains full batch with cross-entropy; link prediction
trains on minibatches of positive and sampled negative pairs with a
dot-product-plus-logistic scorer. Both keep the weights from the best
validation epoch.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, DimensionError
from .evalmetrics import accuracy, roc_auc
from .graphstore import LinkSplit, TextGraph, normalized_adjacency
from .textcorpus import build_vocab, tokenize

__all__ = [
    "EmbeddingMatrix",
    "save_embeddings",
    "load_embeddings",
    "random_embeddings",
    "shallow_embeddings",
    "GnnModel",
    "gcn_layer",
    "sage_layer",
    "DownstreamConfig",
    "train_node_classifier",
    "predict_links",
    "train_link_predictor",
    "link_bce",
]

PROVENANCES = ("shallow-baseline", "nodegae", "random")


@dataclass
class EmbeddingMatrix:
    """Frozen per-node features plus a tag recording where they came from."""

    matrix: np.ndarray
    provenance: str

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ContractError(f"embeddings must be 2-d, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ContractError("embeddings contain NaN or Inf entries")
        if self.provenance not in PROVENANCES:
            raise ContractError(
                f"provenance must be one of {PROVENANCES}, got '{self.provenance}'")

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def save_embeddings(embeddings: EmbeddingMatrix, path) -> None:
    """Text format: a "rows dim provenance" header, then one row per line."""
    lines = [f"{embeddings.num_rows} {embeddings.dim} {embeddings.provenance}"]
    for row in embeddings.matrix:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path) -> EmbeddingMatrix:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ContractError(f"{path}: empty embedding file")
    header = text[0].split()
    if len(header) != 3:
        raise ContractError(f"{path}: header must be 'rows dim provenance'")
    rows, dim, provenance = int(header[0]), int(header[1]), header[2]
    body = [line for line in text[1:] if line]
    if len(body) != rows:
        raise ContractError(f"{path}: header promises {rows} rows, found {len(body)}")
    matrix = np.array([[float(x) for x in line.split()] for line in body])
    if matrix.size and matrix.shape[1] != dim:
        raise ContractError(f"{path}: header promises dim {dim}, rows have {matrix.shape[1]}")
    return EmbeddingMatrix(matrix.reshape(rows, dim), provenance)


def random_embeddings(num_nodes: int, dim: int, seed: int = 0) -> EmbeddingMatrix:
    """Gaussian features; the uninformative control baseline."""
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(rng.standard_normal((num_nodes, dim)), provenance="random")


def shallow_embeddings(graph: TextGraph, dim: int, seed: int = 0,
                       vocab_budget: int = 2048) -> EmbeddingMatrix:
    """Word-count features squeezed to dim by a fixed random projection.

    Each node's document becomes a bag-of-words vector over the corpus
    vocabulary, L2-normalized, then projected with a seeded Gaussian map.
    """
    vocab = build_vocab(graph.texts, max_size=vocab_budget)
    counts = np.zeros((graph.num_nodes, vocab.size), dtype=np.float64)
    for v, text in enumerate(graph.texts):
        for tok in tokenize(text):
            counts[v, vocab.id_for(tok)] += 1.0
    norms = np.sqrt((counts ** 2).sum(axis=1, keepdims=True))
    norms[norms == 0.0] = 1.0
    counts /= norms
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((vocab.size, dim)) / np.sqrt(vocab.size)
    return EmbeddingMatrix(counts @ projection, provenance="shallow-baseline")


# ---------------------------------------------------------------------------
# Backbones
# ---------------------------------------------------------------------------

BACKBONES = ("mlp", "gcn", "sage")


def _dense_constant(matrix) -> dc.DiffTensor:
    if hasattr(matrix, "toarray"):
        matrix = matrix.toarray()
    return dc.constant(np.asarray(matrix, dtype=np.float64))


def _mean_aggregator(graph: TextGraph) -> np.ndarray:
    """Row-stochastic neighbor averaging; isolated nodes get zero rows."""
    n = graph.num_nodes
    agg = np.zeros((n, n), dtype=np.float64)
    for v in range(n):
        nbrs = graph.neighbors(v)
        if nbrs.size:
            agg[v, nbrs] = 1.0 / nbrs.size
    return agg


def gcn_layer(h, a_hat, w, activate: bool = True) -> dc.DiffTensor:
    """One graph convolution: relu(A_hat @ h @ w), identity when activate is off."""
    h = h if isinstance(h, dc.DiffTensor) else dc.constant(h)
    w = w if isinstance(w, dc.DiffTensor) else dc.constant(w)
    a_hat = a_hat if isinstance(a_hat, dc.DiffTensor) else _dense_constant(a_hat)
    if h.shape[-1] != w.shape[0]:
        raise DimensionError(f"features {h.shape} do not chain with weights {w.shape}")
    out = dc.matmul(dc.matmul(a_hat, h), w)
    return dc.relu(out) if activate else out


def sage_layer(h, graph: TextGraph, w_self, w_neigh, activate: bool = True
               ) -> dc.DiffTensor:
    """Self term plus neighbor-mean term; isolated nodes keep only self."""
    h = h if isinstance(h, dc.DiffTensor) else dc.constant(h)
    w_self = w_self if isinstance(w_self, dc.DiffTensor) else dc.constant(w_self)
    w_neigh = w_neigh if isinstance(w_neigh, dc.DiffTensor) else dc.constant(w_neigh)
    if h.shape[-1] != w_self.shape[0] or h.shape[-1] != w_neigh.shape[0]:
        raise DimensionError(
            f"features {h.shape} do not chain with weights {w_self.shape}")
    agg = _dense_constant(_mean_aggregator(graph))
    out = dc.add(dc.matmul(h, w_self), dc.matmul(dc.matmul(agg, h), w_neigh))
    return dc.relu(out) if activate else out


class GnnModel:
    """Stacked backbone layers with inverted dropout between them."""

    def __init__(self, backbone: str, dims: List[int], dropout: float,
                 params: Dict[str, dc.DiffTensor]):
        self.backbone = backbone
        self.dims = dims
        self.dropout = dropout
        self.params = params
        self.graph_aux = None  # adjacency operator, set by the trainers
        self.scorer = "dot"  # pair scoring rule, set by the link trainer

    @classmethod
    def build(cls, backbone: str, in_dim: int, hidden_dim: int, out_dim: int,
              num_layers: int = 2, dropout: float = 0.5, seed: int = 0
              ) -> "GnnModel":
        if backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got '{backbone}'")
        if not (0.0 <= dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        if num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {num_layers}")
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        rng = np.random.default_rng(seed)
        params: Dict[str, dc.DiffTensor] = {}
        for i in range(num_layers):
            fan_in, fan_out = dims[i], dims[i + 1]
            scale = fan_in ** -0.5
            if backbone == "mlp":
                params[f"l{i}.w"] = dc.parameter(rng.normal(0.0, scale, (fan_in, fan_out)))
                params[f"l{i}.b"] = dc.parameter(np.zeros(fan_out))
            elif backbone == "gcn":
                params[f"l{i}.w"] = dc.parameter(rng.normal(0.0, scale, (fan_in, fan_out)))
            else:
                params[f"l{i}.self"] = dc.parameter(rng.normal(0.0, scale, (fan_in, fan_out)))
                params[f"l{i}.neigh"] = dc.parameter(rng.normal(0.0, scale, (fan_in, fan_out)))
        return cls(backbone, dims, dropout, params)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def parameters(self) -> List[dc.DiffTensor]:
        return list(self.params.values())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data = snap[name].copy()

    def forward(self, features, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> dc.DiffTensor:
        """Node outputs (N, out_dim); dropout active only in train mode."""
        x = features if isinstance(features, dc.DiffTensor) else dc.constant(features)
        if x.shape[-1] != self.dims[0]:
            raise DimensionError(
                f"features have dim {x.shape[-1]}, model expects {self.dims[0]}")
        for i in range(self.num_layers):
            if train and self.dropout > 0.0:
                if rng is None:
                    raise ContractError("dropout in train mode needs an rng")
                keep = 1.0 - self.dropout
                mask = (rng.random(x.shape) < keep).astype(np.float64) / keep
                x = dc.mul(x, dc.constant(mask))
            last = i == self.num_layers - 1
            if self.backbone == "mlp":
                x = dc.add(dc.matmul(x, self.params[f"l{i}.w"]), self.params[f"l{i}.b"])
                if not last:
                    x = dc.relu(x)
            elif self.backbone == "gcn":
                if self.graph_aux is None:
                    raise ContractError("gcn forward needs graph_aux set by a trainer")
                x = gcn_layer(x, self.graph_aux, self.params[f"l{i}.w"],
                              activate=not last)
            else:
                if self.graph_aux is None:
                    raise ContractError("sage forward needs graph_aux set by a trainer")
                out = dc.add(
                    dc.matmul(x, self.params[f"l{i}.self"]),
                    dc.matmul(dc.matmul(self.graph_aux, x), self.params[f"l{i}.neigh"]))
                x = dc.relu(out) if not last else out
        return x


def _attach_graph_operator(model: GnnModel, graph: TextGraph,
                           add_self_loops: bool = True) -> None:
    if model.backbone == "gcn":
        model.graph_aux = _dense_constant(
            normalized_adjacency(graph, add_self_loops=add_self_loops))
    elif model.backbone == "sage":
        model.graph_aux = _dense_constant(_mean_aggregator(graph))


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

LINK_SCORERS = ("dot", "mlp")


@dataclass
class DownstreamConfig:
    """Stage-2 hyperparameters; learning-rate defaults differ per task."""

    backbone: str = "mlp"
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.5
    lr: float = 1e-2
    epochs: int = 200
    patience: int = 50
    seed: int = 0
    batch_edges: int = 128
    log_every_iter: bool = False
    add_self_loops: bool = True
    link_scorer: str = "dot"

    @classmethod
    def for_node_classification(cls, **overrides) -> "DownstreamConfig":
        overrides.setdefault("lr", 1e-2)
        return cls(**overrides)

    @classmethod
    def for_link_prediction(cls, **overrides) -> "DownstreamConfig":
        overrides.setdefault("lr", 1e-4)
        return cls(**overrides)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got '{self.backbone}'")
        if self.lr <= 0 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("lr must be positive; epochs and patience >= 1")
        if self.batch_edges < 2:
            raise ConfigError(f"batch_edges must be >= 2, got {self.batch_edges}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.link_scorer not in LINK_SCORERS:
            raise ConfigError(
                f"link_scorer must be one of {LINK_SCORERS}, got '{self.link_scorer}'")


def _feature_matrix(embeddings) -> np.ndarray:
    matrix = embeddings.matrix if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    return np.asarray(matrix, dtype=np.float64)


def train_node_classifier(embeddings, graph: TextGraph, cfg: DownstreamConfig
                          ) -> Tuple[GnnModel, List[dict]]:
    """Full-batch cross-entropy on the train split, best-val weights kept.

    Log rows carry (epoch, train_loss, val_acc, test_acc). Training stops
    early when the validation accuracy has not improved for cfg.patience
    epochs.
    """
    cfg.validate()
    feats = _feature_matrix(embeddings)
    if feats.shape[0] != graph.num_nodes:
        raise ConfigError(
            f"embeddings have {feats.shape[0]} rows for a {graph.num_nodes}-node graph")
    train_idx = graph.splits.get("train", np.zeros(0, dtype=np.int64))
    val_idx = graph.splits.get("val", np.zeros(0, dtype=np.int64))
    test_idx = graph.splits.get("test", np.zeros(0, dtype=np.int64))
    if train_idx.size == 0:
        raise ConfigError("node classification needs a non-empty train split")
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        if idx.size and np.any(graph.labels[idx] < 0):
            raise ConfigError(f"{name} split contains unlabeled nodes")
    num_classes = int(graph.labels.max()) + 1

    model = GnnModel.build(cfg.backbone, feats.shape[1], cfg.hidden_dim,
                           num_classes, cfg.num_layers, cfg.dropout, cfg.seed)
    _attach_graph_operator(model, graph, cfg.add_self_loops)
    adam = dc.AdamState.for_params(model.parameters(), base_lr=cfg.lr,
                                   clip_norm=None)
    rng = np.random.default_rng(cfg.seed)
    features = dc.constant(feats)

    log: List[dict] = []
    best_metric = -np.inf
    best_snap = model.snapshot()
    stale = 0
    for epoch in range(cfg.epochs):
        logits = model.forward(features, train=True, rng=rng)
        picked = dc.embedding_lookup(logits, train_idx)
        loss = dc.cross_entropy_logits(picked, graph.labels[train_idx],
                                       reduction="mean")
        dc.backward(loss)
        dc.adam_step(model.parameters(), adam)

        eval_logits = model.forward(features, train=False).data
        preds = np.argmax(eval_logits, axis=1)
        val_acc = accuracy(preds[val_idx], graph.labels[val_idx]) if val_idx.size else float("nan")
        test_acc = accuracy(preds[test_idx], graph.labels[test_idx]) if test_idx.size else float("nan")
        log.append({
            "epoch": epoch,
            "train_loss": float(loss.item()),
            "val_acc": val_acc,
            "test_acc": test_acc,
        })
        tracked = val_acc if val_idx.size else -float(loss.item())
        if tracked > best_metric:
            best_metric = tracked
            best_snap = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best_snap)
    return model, log


def _scorer_mlp_logits(model: GnnModel, u: dc.DiffTensor, v: dc.DiffTensor
                       ) -> dc.DiffTensor:
    """Two-layer head on concatenated pairs, symmetrized over (u,v) order."""
    p = model.params

    def head(a, b):
        cat = dc.concat([a, b], axis=1)
        h = dc.relu(dc.add(dc.matmul(cat, p["scorer.w1"]), p["scorer.b1"]))
        return dc.add(dc.matmul(h, p["scorer.w2"]), p["scorer.b2"])

    return dc.mul(dc.add(head(u, v), head(v, u)), dc.constant(0.5))


def _pair_logits(z: dc.DiffTensor, pairs: np.ndarray,
                 model: Optional[GnnModel] = None) -> dc.DiffTensor:
    """Pair logits as a (m,) tensor; dot products unless the model's scorer says mlp."""
    m, d = pairs.shape[0], z.shape[1]
    u = dc.embedding_lookup(z, pairs[:, 0])
    v = dc.embedding_lookup(z, pairs[:, 1])
    if model is not None and model.scorer == "mlp":
        return dc.reshape(_scorer_mlp_logits(model, u, v), (m,))
    dots = dc.matmul(dc.reshape(u, (m, 1, d)), dc.reshape(v, (m, d, 1)))
    return dc.reshape(dots, (m,))


def link_bce(z: dc.DiffTensor, pairs: np.ndarray, labels: np.ndarray,
             model: Optional[GnnModel] = None) -> dc.DiffTensor:
    """Binary cross-entropy of logistic pair scores against 0/1 labels."""
    m = pairs.shape[0]
    s = dc.reshape(_pair_logits(z, pairs, model), (m, 1))
    two_class = dc.concat([dc.constant(np.zeros((m, 1))), s], axis=1)
    return dc.cross_entropy_logits(two_class, np.asarray(labels, dtype=np.int64),
                                   reduction="mean")


def _attach_link_scorer(model: GnnModel, cfg: "DownstreamConfig",
                        rng: np.random.Generator) -> None:
    model.scorer = cfg.link_scorer
    if cfg.link_scorer != "mlp":
        return
    d2 = 2 * model.dims[-1]
    model.params["scorer.w1"] = dc.parameter(
        rng.normal(0.0, d2 ** -0.5, (d2, cfg.hidden_dim)))
    model.params["scorer.b1"] = dc.parameter(np.zeros(cfg.hidden_dim))
    model.params["scorer.w2"] = dc.parameter(
        rng.normal(0.0, cfg.hidden_dim ** -0.5, (cfg.hidden_dim, 1)))
    model.params["scorer.b2"] = dc.parameter(np.zeros(1))


def predict_links(model: GnnModel, embeddings, pairs) -> np.ndarray:
    """Scores logistic(pair logit) in (0, 1), symmetric in (u, v)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    feats = _feature_matrix(embeddings)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= feats.shape[0]):
        raise IndexError("link pair references a node outside the embedding matrix")
    z = model.forward(feats, train=False)
    logits = _pair_logits(dc.constant(z.data), pairs, model).data
    return 1.0 / (1.0 + np.exp(-logits))


def _auc_for(model: GnnModel, feats: np.ndarray, split: LinkSplit, part: str) -> float:
    pos = split.positives(part)
    neg = split.negatives(part)
    pairs = np.concatenate([pos, neg], axis=0)
    labels = np.concatenate([np.ones(len(pos), dtype=int), np.zeros(len(neg), dtype=int)])
    return roc_auc(predict_links(model, feats, pairs), labels)


def train_link_predictor(embeddings, graph: TextGraph, split: LinkSplit,
                         cfg: DownstreamConfig) -> Tuple[GnnModel, List[dict]]:
    """Minibatch logistic link training over the train partition.

    Message-passing backbones see only the training-positive adjacency.
    Log rows are dicts (scope, index, split, metric, value); with
    cfg.log_every_iter every optimizer step adds a validation ROC-AUC row.
    The returned model carries the best-validation weights.
    """
    cfg.validate()
    feats = _feature_matrix(embeddings)
    if feats.shape[0] != graph.num_nodes:
        raise ConfigError(
            f"embeddings have {feats.shape[0]} rows for a {graph.num_nodes}-node graph")
    message_graph = split.train_message_graph(graph)

    model = GnnModel.build(cfg.backbone, feats.shape[1], cfg.hidden_dim,
                           cfg.hidden_dim, cfg.num_layers, cfg.dropout, cfg.seed)
    _attach_graph_operator(model, message_graph, cfg.add_self_loops)
    rng = np.random.default_rng(cfg.seed)
    _attach_link_scorer(model, cfg, rng)
    adam = dc.AdamState.for_params(model.parameters(), base_lr=cfg.lr,
                                   clip_norm=None)

    pairs = np.concatenate([split.train_pos, split.train_neg], axis=0)
    labels = np.concatenate([
        np.ones(len(split.train_pos), dtype=np.int64),
        np.zeros(len(split.train_neg), dtype=np.int64),
    ])

    log: List[dict] = []
    best_metric = -np.inf
    best_snap = model.snapshot()
    stale = 0
    iteration = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_edges):
            batch = order[start : start + cfg.batch_edges]
            if batch.size < 2:
                continue
            z = model.forward(feats, train=True, rng=rng)
            loss = link_bce(z, pairs[batch], labels[batch], model)
            dc.backward(loss)
            dc.adam_step(model.parameters(), adam)
            epoch_loss += float(loss.item())
            n_batches += 1
            iteration += 1
            if cfg.log_every_iter:
                log.append({
                    "scope": "iter", "index": iteration, "split": "val",
                    "metric": "roc_auc",
                    "value": _auc_for(model, feats, split, "val"),
                })
        val_auc = _auc_for(model, feats, split, "val")
        test_auc = _auc_for(model, feats, split, "test")
        log.append({"scope": "epoch", "index": epoch, "split": "train",
                    "metric": "bce", "value": epoch_loss / max(1, n_batches)})
        log.append({"scope": "epoch", "index": epoch, "split": "val",
                    "metric": "roc_auc", "value": val_auc})
        log.append({"scope": "epoch", "index": epoch, "split": "test",
                    "metric": "roc_auc", "value": test_auc})
        if val_auc > best_metric:
            best_metric = val_auc
            best_snap = model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best_snap)
    return model, log
