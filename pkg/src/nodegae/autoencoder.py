"""Text autoencoder over graph nodes and its self-supervised pretraining.

The model encodes a node's token sequence with a pre-layernorm transformer,
mean-pools the non-pad positions into a latent vector h, projects h to a
short sequence of decoder inputs, and reconstructs the original tokens with
a causal transformer decoder under teacher forcing. Pretraining minimizes
the reconstruction loss plus a hop-weighted contrastive loss that pulls h
toward sampled graph neighbors and away from the other anchors in the batch.
After pretraining the encoder is frozen and used purely as a feature
extractor for downstream graph models.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, DimensionError
from .graphstore import TextGraph, sample_positive
from .textcorpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary, encode, pad_sequences

__all__ = [
    "ModelConfig",
    "InfoNCEConfig",
    "AutoencoderModel",
    "encode_node",
    "encode_batch",
    "project",
    "decoder_logits",
    "shift_for_teacher_forcing",
    "lm_loss",
    "infonce_loss",
    "pretrain_step",
    "extract_embeddings",
    "reconstruct",
    "save_model",
    "load_model",
]

MASK_BIAS = -1e30


@dataclass
class ModelConfig:
    """Architecture sizes; defaults are desk scale, minutes not hours."""

    vocab_size: int
    d_enc: int = 64
    d_dec: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    proj_len: int = 4
    ff_mult: int = 2
    max_len: int = 64

    def validate(self) -> None:
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must be >= 5, got {self.vocab_size}")
        for name in ("d_enc", "d_dec", "enc_layers", "dec_layers", "heads",
                     "proj_len", "ff_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if self.d_enc % self.heads or self.d_dec % self.heads:
            raise ConfigError(
                f"head count {self.heads} must divide d_enc {self.d_enc} "
                f"and d_dec {self.d_dec}"
            )


@dataclass
class InfoNCEConfig:
    """Contrastive-loss settings: temperature and per-hop weights."""

    tau: float = 0.5
    hops: Tuple[int, ...] = (1, 2)
    alphas: Tuple[float, ...] = (1.0, 0.1)
    normalize: bool = True

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if len(self.hops) != len(self.alphas):
            raise ConfigError(
                f"hops {self.hops} and alphas {self.alphas} must align"
            )
        if any(k < 1 for k in self.hops):
            raise ConfigError(f"hops must be >= 1, got {self.hops}")
        if any(a < 0 for a in self.alphas):
            raise ConfigError(f"alphas must be >= 0, got {self.alphas}")

    @property
    def disabled(self) -> bool:
        return all(a == 0.0 for a in self.alphas)


class AutoencoderModel:
    """Parameter store plus the configuration and vocabulary they assume."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 params: Dict[str, dc.DiffTensor]):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0
             ) -> "AutoencoderModel":
        config.validate()
        if vocab.size != config.vocab_size:
            raise ConfigError(
                f"config says vocab_size {config.vocab_size} but vocabulary "
                f"has {vocab.size} entries"
            )
        rng = np.random.default_rng(seed)
        params: Dict[str, dc.DiffTensor] = {}

        def lin(name, fan_in, fan_out):
            params[name] = dc.parameter(
                rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out)))

        def emb(name, rows, dim):
            params[name] = dc.parameter(rng.normal(0.0, 0.02, (rows, dim)))

        def norm(prefix, dim):
            params[prefix + ".g"] = dc.parameter(np.ones(dim))
            params[prefix + ".b"] = dc.parameter(np.zeros(dim))

        def block(prefix, dim, ff, cross_dim=None):
            norm(prefix + ".ln1", dim)
            for w in ("wq", "wk", "wv", "wo"):
                lin(f"{prefix}.attn.{w}", dim, dim)
            if cross_dim is not None:
                norm(prefix + ".ln2", dim)
                lin(f"{prefix}.cross.wq", dim, dim)
                lin(f"{prefix}.cross.wk", cross_dim, dim)
                lin(f"{prefix}.cross.wv", cross_dim, dim)
                lin(f"{prefix}.cross.wo", dim, dim)
            norm(prefix + (".ln3" if cross_dim is not None else ".ln2"), dim)
            lin(f"{prefix}.ff.w1", dim, ff)
            params[f"{prefix}.ff.b1"] = dc.parameter(np.zeros(ff))
            lin(f"{prefix}.ff.w2", ff, dim)
            params[f"{prefix}.ff.b2"] = dc.parameter(np.zeros(dim))

        v, de, dd = config.vocab_size, config.d_enc, config.d_dec
        emb("enc.tok_emb", v, de)
        emb("enc.pos_emb", config.max_len, de)
        for i in range(config.enc_layers):
            block(f"enc.l{i}", de, config.ff_mult * de)
        norm("enc.out_ln", de)
        lin("proj.w1", de, de)
        lin("proj.w2", de, config.proj_len * dd)
        emb("dec.tok_emb", v, dd)
        emb("dec.pos_emb", config.max_len, dd)
        for i in range(config.dec_layers):
            block(f"dec.l{i}", dd, config.ff_mult * dd, cross_dim=dd)
        norm("dec.out_ln", dd)
        lin("lm_head", dd, v)
        return cls(config, vocab, params)

    def parameters(self) -> List[dc.DiffTensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def tokens_for(self, text: str) -> np.ndarray:
        return encode(text, self.vocab, self.config.max_len)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def _layer_norm(x, params, prefix):
    normed = dc.layernorm_lastdim(x)
    return dc.add(dc.mul(normed, params[prefix + ".g"]), params[prefix + ".b"])


def _split_heads(x, heads):
    b, t, d = x.shape
    return dc.transpose(dc.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return dc.reshape(dc.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def _attention(q_src, kv_src, params, prefix, heads, bias=None):
    """Scaled dot-product attention; bias is an additive constant mask."""
    q = _split_heads(dc.matmul(q_src, params[prefix + ".wq"]), heads)
    k = _split_heads(dc.matmul(kv_src, params[prefix + ".wk"]), heads)
    v = _split_heads(dc.matmul(kv_src, params[prefix + ".wv"]), heads)
    dh = q.shape[-1]
    scores = dc.mul(dc.matmul(q, dc.transpose_last2(k)),
                    dc.constant(1.0 / np.sqrt(dh)))
    if bias is not None:
        scores = dc.add(scores, bias)
    ctx = dc.matmul(dc.softmax_lastdim(scores), v)
    return dc.matmul(_merge_heads(ctx), params[prefix + ".wo"])


def _feed_forward(x, params, prefix):
    h = dc.gelu(dc.add(dc.matmul(x, params[prefix + ".w1"]), params[prefix + ".b1"]))
    return dc.add(dc.matmul(h, params[prefix + ".w2"]), params[prefix + ".b2"])


def _as_id_matrix(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ContractError(f"token ids must be 1- or 2-dimensional, got {arr.shape}")
    return arr


def encoder_hidden(model: AutoencoderModel, ids) -> dc.DiffTensor:
    """Final per-position encoder states, shape (B, T, d_enc)."""
    ids = _as_id_matrix(ids)
    cfg, params = model.config, model.params
    b, t = ids.shape
    if t > cfg.max_len:
        raise ContractError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    x = dc.add(dc.embedding_lookup(params["enc.tok_emb"], ids),
               dc.embedding_lookup(params["enc.pos_emb"], np.arange(t)))
    key_bias = dc.constant(
        np.where(ids == PAD_ID, MASK_BIAS, 0.0)[:, None, None, :])
    for i in range(cfg.enc_layers):
        p = f"enc.l{i}"
        a = _layer_norm(x, params, p + ".ln1")
        x = dc.add(x, _attention(a, a, params, p + ".attn", cfg.heads, key_bias))
        f = _layer_norm(x, params, p + ".ln2")
        x = dc.add(x, _feed_forward(f, params, p + ".ff"))
    return _layer_norm(x, params, "enc.out_ln")


def encode_batch(model: AutoencoderModel, ids) -> dc.DiffTensor:
    """Latent vectors for a padded id matrix: mean of non-pad positions.

    Pooling is a mask-weighted sum divided by the non-pad count, so
    appending pad columns leaves every row of the result unchanged.
    """
    ids = _as_id_matrix(ids)
    mask = ids != PAD_ID
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError("encode: a sequence consists entirely of padding")
    hidden = encoder_hidden(model, ids)
    b, t = ids.shape
    d = model.config.d_enc
    # Accumulate one position at a time. Pad positions carry weight 0.0, so
    # each one adds an exact zero and the running sum is bit-identical to the
    # sum over the unpadded sequence, whatever the padded length is.
    flat = dc.reshape(hidden, (b * t, d))
    weights = mask.astype(np.float64)
    pooled = dc.constant(np.zeros((b, d)))
    base = np.arange(b, dtype=np.int64) * t
    for pos in range(t):
        rows = dc.embedding_lookup(flat, base + pos)
        pooled = dc.add(pooled, dc.mul(rows, dc.constant(weights[:, pos:pos + 1])))
    return dc.mul(pooled, dc.constant((1.0 / counts)[:, None]))


def encode_node(model: AutoencoderModel, tokens) -> dc.DiffTensor:
    """Latent vector h for one token sequence, shape (d_enc,)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ContractError(f"expected a non-empty 1-d id sequence, got {tokens.shape}")
    h = encode_batch(model, tokens[None, :])
    return dc.reshape(h, (model.config.d_enc,))


def project(model: AutoencoderModel, h: dc.DiffTensor) -> dc.DiffTensor:
    """Map latents to decoder input slots: relu(h W1) W2 reshaped to rows.

    A (d_enc,) input yields (proj_len, d_dec); a batch (B, d_enc) yields
    (B, proj_len, d_dec).
    """
    cfg = model.config
    if h.shape[-1] != cfg.d_enc:
        raise DimensionError(
            f"project expects last dimension {cfg.d_enc}, got {h.shape}")
    if h.ndim > 2:
        raise DimensionError(f"project expects 1- or 2-d input, got {h.shape}")
    single = h.ndim == 1
    rows = dc.reshape(h, (1, cfg.d_enc)) if single else h
    z = dc.relu(dc.matmul(rows, model.params["proj.w1"]))
    flat = dc.matmul(z, model.params["proj.w2"])
    if single:
        return dc.reshape(flat, (cfg.proj_len, cfg.d_dec))
    return dc.reshape(flat, (h.shape[0], cfg.proj_len, cfg.d_dec))


def decoder_logits(model: AutoencoderModel, memory: dc.DiffTensor, dec_ids
                   ) -> dc.DiffTensor:
    """Next-token logits (B, T, vocab) for teacher-forced decoder inputs.

    Self-attention is causal (each position sees itself and the left
    context); cross-attention reads the projected memory rows.
    """
    dec_ids = _as_id_matrix(dec_ids)
    cfg, params = model.config, model.params
    b, t = dec_ids.shape
    if t > cfg.max_len:
        raise ContractError(f"decoder length {t} exceeds max_len {cfg.max_len}")
    if memory.ndim == 2:
        memory = dc.reshape(memory, (1,) + memory.shape)
    if memory.shape[0] != b or memory.shape[-1] != cfg.d_dec:
        raise DimensionError(
            f"memory shape {memory.shape} does not match batch {b} and "
            f"d_dec {cfg.d_dec}")
    x = dc.add(dc.embedding_lookup(params["dec.tok_emb"], dec_ids),
               dc.embedding_lookup(params["dec.pos_emb"], np.arange(t)))
    causal = np.triu(np.full((t, t), MASK_BIAS), k=1)
    pad = np.where(dec_ids == PAD_ID, MASK_BIAS, 0.0)[:, None, None, :]
    self_bias = dc.constant(causal[None, None, :, :] + pad)
    for i in range(cfg.dec_layers):
        p = f"dec.l{i}"
        a = _layer_norm(x, params, p + ".ln1")
        x = dc.add(x, _attention(a, a, params, p + ".attn", cfg.heads, self_bias))
        c = _layer_norm(x, params, p + ".ln2")
        x = dc.add(x, _attention(c, memory, params, p + ".cross", cfg.heads))
        f = _layer_norm(x, params, p + ".ln3")
        x = dc.add(x, _feed_forward(f, params, p + ".ff"))
    x = _layer_norm(x, params, "dec.out_ln")
    return dc.matmul(x, params["lm_head"])


def shift_for_teacher_forcing(targets) -> np.ndarray:
    """Decoder inputs: BOS followed by the targets shifted right by one."""
    targets = _as_id_matrix(targets)
    shifted = np.empty_like(targets)
    shifted[:, 0] = BOS_ID
    shifted[:, 1:] = targets[:, :-1]
    return shifted


def lm_loss(logits: dc.DiffTensor, targets) -> dc.DiffTensor:
    """Mean negative log-likelihood of targets, PAD positions excluded."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(
            f"logits {logits.shape} do not align with targets {targets.shape}")
    vocab = logits.shape[-1]
    flat = dc.reshape(logits, (int(np.prod(targets.shape)), vocab))
    return dc.cross_entropy_logits(flat, targets.ravel(),
                                   ignore_index=PAD_ID, reduction="mean")


# ---------------------------------------------------------------------------
# Contrastive loss
# ---------------------------------------------------------------------------

def _as_rows(x) -> dc.DiffTensor:
    t = x if isinstance(x, dc.DiffTensor) else dc.constant(np.asarray(x, dtype=np.float64))
    if t.ndim == 1:
        t = dc.reshape(t, (1, t.shape[0]))
    return t


def _unit_rows(rows: dc.DiffTensor, normalize: bool) -> dc.DiffTensor:
    norms = np.sqrt((rows.data ** 2).sum(axis=-1))
    if np.any(norms == 0.0):
        raise ContractError("contrastive loss received a zero-norm embedding")
    return dc.l2_normalize_lastdim(rows) if normalize else rows


def infonce_loss(anchor, positives: Mapping[int, Optional[object]], negatives,
                 cfg: InfoNCEConfig) -> dc.DiffTensor:
    """Hop-weighted contrastive loss for one anchor.

    positives maps hop -> embedding (or None when the anchor has no node at
    that hop; such hops contribute exactly zero). negatives is a sequence of
    embeddings or a stacked (N, d) tensor; it may be empty, in which case
    each present hop term is -log 1 = 0. Embeddings are L2-normalized before
    the dot products unless cfg.normalize is off.
    """
    cfg.validate()
    anchor_row = _unit_rows(_as_rows(anchor), cfg.normalize)
    d = anchor_row.shape[1]

    if isinstance(negatives, (list, tuple)):
        neg_rows = [_as_rows(v) for v in negatives]
        negs = dc.concat(neg_rows, axis=0) if neg_rows else None
    else:
        negs = _as_rows(negatives)
        if negs.shape[0] == 0:
            negs = None
    if negs is not None:
        if negs.shape[1] != d:
            raise DimensionError(
                f"negatives have dimension {negs.shape[1]}, anchor has {d}")
        negs = _unit_rows(negs, cfg.normalize)
        neg_logits = dc.reshape(dc.matmul(anchor_row, dc.transpose(negs, (1, 0))),
                                (negs.shape[0],))

    inv_tau = dc.constant(1.0 / cfg.tau)
    total = None
    for hop, alpha in zip(cfg.hops, cfg.alphas):
        pos = positives.get(hop)
        if pos is None:
            continue
        pos_row = _unit_rows(_as_rows(pos), cfg.normalize)
        if pos_row.shape[1] != d:
            raise DimensionError(
                f"hop-{hop} positive has dimension {pos_row.shape[1]}, anchor has {d}")
        pos_logit = dc.reshape(dc.matmul(anchor_row, dc.transpose(pos_row, (1, 0))),
                               (1,))
        logits = pos_logit if negs is None else dc.concat([pos_logit, neg_logits], axis=0)
        logits = dc.reshape(dc.mul(logits, inv_tau), (1, logits.shape[0]))
        term = dc.cross_entropy_logits(logits, np.array([0]), reduction="mean")
        if alpha != 1.0:
            term = dc.mul(term, dc.constant(alpha))
        total = term if total is None else dc.add(total, term)
    return total if total is not None else dc.constant(0.0)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------

def pretrain_step(model: AutoencoderModel, graph: TextGraph,
                  batch_nodes: Sequence[int], adam: dc.AdamState,
                  rng: np.random.Generator, cfg: InfoNCEConfig
                  ) -> Tuple[float, float]:
    """One optimizer step on reconstruction plus contrastive loss.

    Encodes the batch anchors and their sampled hop-k positives in a single
    padded forward pass, forms the unweighted sum of the two losses, and
    applies one Adam update. Returns (reconstruction, contrastive) values.
    """
    cfg.validate()
    batch = [int(v) for v in batch_nodes]
    if len(batch) < 2:
        raise ContractError(
            f"pretrain batch needs >= 2 anchors for in-batch negatives, got {len(batch)}")
    b = len(batch)

    row_of = {}
    for i, v in enumerate(batch):
        row_of.setdefault(v, i)
    pos_node: Dict[Tuple[int, int], Optional[int]] = {}
    extra_nodes: List[int] = []
    if not cfg.disabled:
        for i, v in enumerate(batch):
            for hop in cfg.hops:
                p = sample_positive(graph, v, hop, rng)
                pos_node[(i, hop)] = p
                if p is not None and p not in row_of:
                    row_of[p] = b + len(extra_nodes)
                    extra_nodes.append(p)

    all_nodes = batch + extra_nodes
    seqs = [model.tokens_for(graph.texts[v]) for v in all_nodes]
    ids = pad_sequences(seqs)
    latents = encode_batch(model, ids)

    if cfg.disabled:
        info = dc.constant(0.0)
    else:
        per_anchor = []
        for i in range(b):
            neg_idx = np.array([j for j in range(b) if j != i], dtype=np.int64)
            negs = dc.embedding_lookup(latents, neg_idx)
            anchor = dc.reshape(
                dc.embedding_lookup(latents, np.array([i])), (model.config.d_enc,))
            positives = {}
            for hop in cfg.hops:
                p = pos_node.get((i, hop))
                positives[hop] = None if p is None else dc.reshape(
                    dc.embedding_lookup(latents, np.array([row_of[p]])),
                    (model.config.d_enc,))
            per_anchor.append(infonce_loss(anchor, positives, negs, cfg))
        info = per_anchor[0]
        for term in per_anchor[1:]:
            info = dc.add(info, term)
        info = dc.mul(info, dc.constant(1.0 / b))

    targets = ids[:b]
    anchor_latents = dc.embedding_lookup(latents, np.arange(b))
    memory = project(model, anchor_latents)
    logits = decoder_logits(model, memory, shift_for_teacher_forcing(targets))
    reconstruction = lm_loss(logits, targets)

    total = dc.add(reconstruction, info)
    params = model.parameters()
    dc.zero_grads(params)
    dc.backward(total)
    dc.adam_step(params, adam)
    return float(reconstruction.item()), float(info.item())


def extract_embeddings(model: AutoencoderModel, graph: TextGraph):
    """Latent vector per node as an EmbeddingMatrix; the model is unchanged.

    Nodes are encoded one at a time without padding so each row is
    bit-identical to a standalone encode_node call.
    """
    from .downstream import EmbeddingMatrix

    out = np.empty((graph.num_nodes, model.config.d_enc))
    for v in range(graph.num_nodes):
        out[v] = encode_node(model, model.tokens_for(graph.texts[v])).data
    return EmbeddingMatrix(out, provenance="nodegae")


def reconstruct(model: AutoencoderModel, tokens, max_gen_len: Optional[int] = None
                ) -> np.ndarray:
    """Greedy decode conditioned on the latent of tokens; stops at EOS."""
    if max_gen_len is None:
        max_gen_len = model.config.max_len
    memory = project(model, encode_node(model, tokens))
    memory = dc.reshape(memory, (1,) + memory.shape)
    generated = [BOS_ID]
    for _ in range(max_gen_len):
        logits = decoder_logits(model, memory, np.asarray(generated)[None, :])
        nxt = int(np.argmax(logits.data[0, -1]))
        generated.append(nxt)
        if nxt == EOS_ID:
            break
    return np.asarray(generated[1:], dtype=np.int64)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_model(path, model: AutoencoderModel, adam: Optional[dc.AdamState] = None,
               extra_meta: Optional[dict] = None) -> None:
    """Persist parameters (and optimizer state for resumable training)."""
    tensors: Dict[str, object] = dict(model.params)
    meta = {
        "kind": "autoencoder",
        "config": asdict(model.config),
        "vocab": model.vocab.id_to_token,
    }
    if extra_meta:
        meta.update(extra_meta)
    if adam is not None:
        for name, m, v in zip(model.params, adam.first_moment, adam.second_moment):
            tensors["opt.m." + name] = m
            tensors["opt.v." + name] = v
        meta["optimizer"] = {
            "step_count": adam.step_count,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "base_lr": adam.base_lr,
            "warmup_steps": adam.warmup_steps,
            "clip_norm": adam.clip_norm,
        }
    dc.save_checkpoint(path, tensors, meta)


def load_model(path) -> Tuple[AutoencoderModel, Optional[dc.AdamState], dict]:
    """Rebuild a model (and optimizer state if stored) from a checkpoint."""
    tensors, meta = dc.load_checkpoint(path)
    config = ModelConfig(**meta["config"])
    vocab = Vocabulary.from_tokens(meta["vocab"])
    model = AutoencoderModel.init(config, vocab, seed=0)
    for name, param in model.params.items():
        if name not in tensors:
            raise ContractError(f"checkpoint is missing parameter '{name}'")
        if tensors[name].shape != param.data.shape:
            raise ContractError(
                f"checkpoint parameter '{name}' has shape {tensors[name].shape}, "
                f"expected {param.data.shape}")
        param.data = tensors[name]

    adam = None
    if "optimizer" in meta:
        opt = meta["optimizer"]
        adam = dc.AdamState(
            first_moment=[tensors["opt.m." + name] for name in model.params],
            second_moment=[tensors["opt.v." + name] for name in model.params],
            step_count=int(opt["step_count"]),
            beta1=float(opt["beta1"]),
            beta2=float(opt["beta2"]),
            epsilon=float(opt["epsilon"]),
            base_lr=float(opt["base_lr"]),
            warmup_steps=int(opt["warmup_steps"]),
            clip_norm=None if opt["clip_norm"] is None else float(opt["clip_norm"]),
        )
    return model, adam, meta
