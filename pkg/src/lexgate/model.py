"""Cross-encoder with lexical-bias gated self-attention.

The encoder is a BERT-style stack (embeddings, multi-head self-attention,
feed-forward, post-layer-norm) whose attention scores are corrected by a pair
of external token-level matrices: raw scores QK^T are multiplied elementwise
by ``1 + g*sim + (1-g)*dissim`` where ``g`` is a learned per-head,
per-query-position gate. The same matrix pair feeds every layer and head;
heads differ through their learned gates.

Ablation modes: ``baseline`` skips the multiplier entirely, ``M_only`` pins
the gate to 1 (similarity matrix only), ``Mr_only`` pins it to 0
(dissimilarity only), ``full_gated`` learns it.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import GradTape, MASK_DROP, check_finite

ABLATION_MODES = ("baseline", "M_only", "Mr_only", "full_gated")
GATE_ACTIVATIONS = ("sigmoid", "identity")
TASK_MODES = ("classification", "regression")

INIT_STD = 0.02
FFN_MULT = 4


@dataclass
class ModelConfig:
    h: int = 2
    d_m: int = 32
    layers: int = 2
    vocab_size: int = 64
    max_len: int = 64
    ablation_mode: str = "full_gated"
    gate_activation: str = "sigmoid"
    task_mode: str = "classification"
    # 0.1 rather than the BERT-conventional 0.02: the external matrices scale
    # raw attention scores multiplicatively, so scores must be O(1) at
    # initialisation for the correction to have a learnable effect when
    # training from scratch (pretrained encoders get this for free).
    init_std: float = 0.1

    def __post_init__(self):
        if self.d_m % self.h != 0:
            raise ValueError(f"d_m={self.d_m} must be divisible by h={self.h}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.max_len < 4:
            raise ValueError("max_len must be >= 4")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        if self.ablation_mode not in ABLATION_MODES:
            raise ValueError(f"unknown ablation_mode {self.ablation_mode!r}")
        if self.gate_activation not in GATE_ACTIVATIONS:
            raise ValueError(f"unknown gate_activation {self.gate_activation!r}")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"unknown task_mode {self.task_mode!r}")

    @property
    def d_k(self):
        return self.d_m // self.h

    @property
    def d_v(self):
        return self.d_m // self.h

    def to_dict(self):
        return {
            "h": self.h,
            "d_m": self.d_m,
            "layers": self.layers,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "ablation_mode": self.ablation_mode,
            "gate_activation": self.gate_activation,
            "task_mode": self.task_mode,
            "init_std": self.init_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_mode(self, mode):
        return replace(self, ablation_mode=mode)


def parameter_shapes(config):
    """Ordered (name, shape, kind) triples; creation order fixes the RNG stream."""
    c = config
    shapes = [
        ("emb.tok", (c.vocab_size, c.d_m), "proj"),
        ("emb.pos", (c.max_len, c.d_m), "proj"),
        ("emb.seg", (3, c.d_m), "proj"),
        ("emb.ln.g", (1, c.d_m), "one"),
        ("emb.ln.b", (1, c.d_m), "zero"),
    ]
    for layer in range(c.layers):
        p = f"enc{layer}"
        for i in range(c.h):
            shapes += [
                (f"{p}.head{i}.wq", (c.d_m, c.d_k), "proj"),
                (f"{p}.head{i}.wk", (c.d_m, c.d_k), "proj"),
                (f"{p}.head{i}.wv", (c.d_m, c.d_v), "proj"),
                (f"{p}.head{i}.wg", (c.d_m, c.d_k), "proj"),
                (f"{p}.head{i}.gate_w", (c.d_k, 1), "proj"),
                (f"{p}.head{i}.gate_b", (1, 1), "zero"),
            ]
        shapes += [
            (f"{p}.wo", (c.h * c.d_v, c.d_m), "proj"),
            (f"{p}.ln1.g", (1, c.d_m), "one"),
            (f"{p}.ln1.b", (1, c.d_m), "zero"),
            (f"{p}.ffn.w1", (c.d_m, FFN_MULT * c.d_m), "proj"),
            (f"{p}.ffn.b1", (1, FFN_MULT * c.d_m), "zero"),
            (f"{p}.ffn.w2", (FFN_MULT * c.d_m, c.d_m), "proj"),
            (f"{p}.ffn.b2", (1, c.d_m), "zero"),
            (f"{p}.ln2.g", (1, c.d_m), "one"),
            (f"{p}.ln2.b", (1, c.d_m), "zero"),
        ]
    shapes += [
        ("pool.w", (c.d_m, c.d_m), "proj"),
        ("pool.b", (1, c.d_m), "zero"),
        ("head.w", (c.d_m, 1), "proj"),
        ("head.b", (1, 1), "zero"),
    ]
    return shapes


@dataclass
class ModelParams:
    """All learnable tensors plus the configuration they were created for."""

    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config, seed=0, scale=None):
        rng = np.random.default_rng(seed)
        scale = config.init_std if scale is None else scale
        tensors = {}
        for name, shape, kind in parameter_shapes(config):
            if kind == "proj":
                tensors[name] = rng.normal(0.0, scale, size=shape)
            elif kind == "one":
                tensors[name] = np.ones(shape)
            else:
                tensors[name] = np.zeros(shape)
        return cls(config, tensors)

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def quantize_storage(self):
        """Round every tensor to float32-representable values (in float64).

        Applied when training finalises so that the 32-bit checkpoint
        round-trip is lossless.
        """
        for name, tensor in self.tensors.items():
            self.tensors[name] = tensor.astype(np.float32).astype(np.float64)
        return self


@dataclass
class AttentionLayerParams:
    """Per-head projections and gate units of one layer, plus shared W^O."""

    wq: list
    wk: list
    wv: list
    wg: list
    gate_w: list
    gate_b: list
    wo: np.ndarray

    @classmethod
    def from_tensors(cls, tensors, layer, h):
        p = f"enc{layer}"
        return cls(
            wq=[tensors[f"{p}.head{i}.wq"] for i in range(h)],
            wk=[tensors[f"{p}.head{i}.wk"] for i in range(h)],
            wv=[tensors[f"{p}.head{i}.wv"] for i in range(h)],
            wg=[tensors[f"{p}.head{i}.wg"] for i in range(h)],
            gate_w=[tensors[f"{p}.head{i}.gate_w"] for i in range(h)],
            gate_b=[tensors[f"{p}.head{i}.gate_b"] for i in range(h)],
            wo=tensors[f"{p}.wo"],
        )


def _gate_vector(tape, g_feat, gate_w, gate_b, gate_activation):
    lin = tape.add(tape.matmul(g_feat, gate_w), gate_b)
    if gate_activation == "sigmoid":
        return tape.sigmoid(lin)
    return lin


def _attention_core(
    tape, q, k, v, g_feat, gate_w, gate_b, sim, dissim, addmask, mode, gate_activation
):
    """Shared single-head attention body. Returns (context, gate, weights) Vars.

    ``q``/``k``/``v``/``g_feat`` are already per-head projections (len x d).
    ``sim``/``dissim`` are constant matrices; ``addmask`` is an additive 0 /
    MASK_DROP matrix or None.
    """
    d_k = (q.shape if isinstance(q, np.ndarray) else q.value.shape)[1]
    scores = tape.matmul_t(q, k)
    gate = None
    if mode == "full_gated":
        gate = _gate_vector(tape, g_feat, gate_w, gate_b, gate_activation)
        p = tape.gate_mix(scores, gate, sim, dissim)
    elif mode == "M_only":
        n = scores.value.shape[0]
        p = tape.gate_mix(scores, np.ones((n, 1)), sim, dissim)
    elif mode == "Mr_only":
        n = scores.value.shape[0]
        p = tape.gate_mix(scores, np.zeros((n, 1)), sim, dissim)
    else:  # baseline
        p = scores
    logits = tape.scale(p, 1.0 / math.sqrt(d_k))
    weights = tape.softmax_rows(logits, additive_mask=addmask)
    context = tape.matmul(weights, v)
    return context, gate, weights


def gated_attention(
    q,
    k,
    v,
    gate_feats,
    gate_w,
    gate_b,
    sim,
    dissim,
    mask=None,
    gate_activation="sigmoid",
    mode="full_gated",
):
    """Single-head attention with the lexical-bias multiplier.

    Args:
        q, k, v, gate_feats: projected per-head inputs, shape (len, d).
        gate_w: (d, 1) gate projection; gate_b: (1, 1) gate bias.
        sim, dissim: (len, len) external matrices; zero cells leave the raw
            scores untouched.
        mask: optional additive matrix, 0 to keep and -1e9 to drop.

    Returns:
        (context, gate_values, attention_weights) as arrays; gate_values is
        None outside full_gated mode.
    """
    tape = GradTape()
    ctx, gate, weights = _attention_core(
        tape, q, k, v, gate_feats, gate_w, gate_b, sim, dissim, mask, mode, gate_activation
    )
    check_finite(ctx.value, "attention context")
    return ctx.value, (None if gate is None else gate.value), weights.value


def multi_head_on_tape(tape, x, leaves, layer, config, sim, dissim, addmask, trace=None):
    h = config.h
    p = f"enc{layer}"
    heads = []
    for i in range(h):
        hp = f"{p}.head{i}"
        q = tape.matmul(x, leaves[f"{hp}.wq"])
        k = tape.matmul(x, leaves[f"{hp}.wk"])
        v = tape.matmul(x, leaves[f"{hp}.wv"])
        g_feat = None
        if config.ablation_mode == "full_gated":
            g_feat = tape.matmul(x, leaves[f"{hp}.wg"])
        ctx, gate, weights = _attention_core(
            tape,
            q,
            k,
            v,
            g_feat,
            leaves.get(f"{hp}.gate_w"),
            leaves.get(f"{hp}.gate_b"),
            sim,
            dissim,
            addmask,
            config.ablation_mode,
            config.gate_activation,
        )
        if trace is not None:
            trace.append(
                {
                    "layer": layer,
                    "head": i,
                    "gate": None if gate is None else gate.value.copy(),
                    "weights": weights.value.copy(),
                }
            )
        heads.append(ctx)
    concat = tape.concat_cols(heads) if len(heads) > 1 else heads[0]
    return tape.matmul(concat, leaves[f"{p}.wo"])


def multi_head(x, layer_params, sim, dissim, mask=None, config=None):
    """Multi-head attention over already-embedded inputs (len x d_m)."""
    config = config or ModelConfig(
        h=len(layer_params.wq), d_m=x.shape[1], vocab_size=1, layers=1
    )
    tape = GradTape()
    leaves = {}
    for i in range(len(layer_params.wq)):
        hp = f"enc0.head{i}"
        leaves[f"{hp}.wq"] = layer_params.wq[i]
        leaves[f"{hp}.wk"] = layer_params.wk[i]
        leaves[f"{hp}.wv"] = layer_params.wv[i]
        leaves[f"{hp}.wg"] = layer_params.wg[i]
        leaves[f"{hp}.gate_w"] = layer_params.gate_w[i]
        leaves[f"{hp}.gate_b"] = layer_params.gate_b[i]
    leaves["enc0.wo"] = layer_params.wo
    out = multi_head_on_tape(tape, x, leaves, 0, config, sim, dissim, mask)
    return check_finite(out.value, "multi-head attention")


def padding_mask(kept):
    """Additive (L, L) mask dropping the key columns of padded positions."""
    kept = np.asarray(kept, dtype=bool)
    mask = np.zeros((kept.size, kept.size))
    mask[:, ~kept] = MASK_DROP
    return mask


def encode_on_tape(tape, leaves, pair, bias, config, kept=None):
    """Embeddings plus the encoder stack; returns the final hidden Var."""
    length = pair.length
    if length > config.max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {config.max_len}")
    ids = pair.token_ids
    if np.any(ids >= config.vocab_size):
        raise ValueError("token id outside the embedding table")
    addmask = None if kept is None else padding_mask(kept)
    tok = tape.gather_rows(leaves["emb.tok"], ids)
    pos = tape.slice_rows(leaves["emb.pos"], 0, length)
    seg = tape.gather_rows(leaves["emb.seg"], pair.sentence_of.astype(np.intp))
    x = tape.layernorm(
        tape.add(tape.add(tok, pos), seg), leaves["emb.ln.g"], leaves["emb.ln.b"]
    )
    sim, dissim = bias.sim, bias.dissim
    for layer in range(config.layers):
        p = f"enc{layer}"
        attn = multi_head_on_tape(tape, x, leaves, layer, config, sim, dissim, addmask)
        x = tape.layernorm(tape.add(x, attn), leaves[f"{p}.ln1.g"], leaves[f"{p}.ln1.b"])
        inner = tape.gelu(tape.add(tape.matmul(x, leaves[f"{p}.ffn.w1"]), leaves[f"{p}.ffn.b1"]))
        ff = tape.add(tape.matmul(inner, leaves[f"{p}.ffn.w2"]), leaves[f"{p}.ffn.b2"])
        x = tape.layernorm(tape.add(x, ff), leaves[f"{p}.ln2.g"], leaves[f"{p}.ln2.b"])
    return x


def logit_on_tape(tape, leaves, hidden):
    """[CLS] pooling: dense + tanh, then the scoring projection."""
    cls = tape.slice_rows(hidden, 0, 1)
    pooled = tape.tanh(tape.add(tape.matmul(cls, leaves["pool.w"]), leaves["pool.b"]))
    return tape.add(tape.matmul(pooled, leaves["head.w"]), leaves["head.b"])


def make_leaves(tape, params):
    return {name: tape.leaf(t, name=name) for name, t in params.tensors.items()}


def encoder_forward(pair, bias, params, kept=None):
    """Final hidden states (L x d_m) for a tokenized pair; inference only."""
    tape = GradTape()
    hidden = encode_on_tape(tape, params.tensors, pair, bias, params.config, kept)
    return check_finite(hidden.value, "encoder output")


def score_pair(params, pair, bias, kept=None):
    """Forward to a scalar score in (0, 1)."""
    tape = GradTape()
    hidden = encode_on_tape(tape, params.tensors, pair, bias, params.config, kept)
    logit = logit_on_tape(tape, params.tensors, hidden)
    z = float(check_finite(logit.value, "scoring head")[0, 0])
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def pool_and_score(hidden, params, task_mode=None):
    """Score from precomputed hidden states; row 0 is the [CLS] position.

    In classification mode the score is a similarity probability (higher =
    more similar); in regression mode it is a distance (lower = more
    similar). The numeric range is (0, 1) either way.
    """
    del task_mode  # polarity is an interpretation, not a computation switch
    tape = GradTape()
    logit = logit_on_tape(tape, params.tensors, np.asarray(hidden, dtype=np.float64))
    z = float(logit.value[0, 0])
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def loss_on_tape(tape, leaves, pair, bias, label, config, kept=None):
    """Scalar loss Var for one labeled example."""
    hidden = encode_on_tape(tape, leaves, pair, bias, config, kept)
    logit = logit_on_tape(tape, leaves, hidden)
    if config.task_mode == "classification":
        return tape.bce_with_logit(logit, float(label))
    score = tape.sigmoid(logit)
    diff = tape.add(score, np.array([[-float(label)]]))
    return tape.mul(diff, diff)


def compute_loss(score, label, task_mode):
    """Binary cross-entropy (classification) or squared error (regression)."""
    score = float(score)
    label = float(label)
    if task_mode == "classification":
        if label not in (0.0, 1.0):
            raise ValueError(f"classification label {label} must be 0 or 1")
        eps = 1e-300
        return -(label * math.log(score + eps) + (1.0 - label) * math.log(1.0 - score + eps))
    if task_mode == "regression":
        if not 0.0 <= label <= 1.0:
            raise ValueError(f"regression label {label} outside [0, 1]")
        return (score - label) ** 2
    raise ValueError(f"unknown task_mode {task_mode!r}")
