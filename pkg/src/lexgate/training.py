"""Training loop, metrics, gradient checking, and correction probes.

Training runs per-example forward/backward passes on the gradient tape,
averages gradients over a mini-batch, and applies adaptive-moment updates.
Matrices are built once per example and cached across epochs. Evaluation is
read-only over shared parameters and may fan out across threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .lexicon import KeywordDictionary, SimilarityProvider, pair_key
from .matrices import Tokenizer, build_pair_matrices, segmentation_vocabulary, segment
from .model import (
    ModelConfig,
    ModelParams,
    encode_on_tape,
    logit_on_tape,
    loss_on_tape,
    make_leaves,
    score_pair,
)
from .numerics import GradTape, finite_diff_gradient

DEFAULT_REGRESSION_THRESHOLD = 0.326  # boundary at which a distance flips negative


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: Optional[float] = None  # task-mode default when None
    min_word_count: int = 1  # tokenizer vocabulary frequency cutoff

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def resolve_threshold(self, task_mode):
        if self.threshold is not None:
            return self.threshold
        return DEFAULT_REGRESSION_THRESHOLD if task_mode == "regression" else 0.5

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "threshold": self.threshold,
            "min_word_count": self.min_word_count,
        }


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    count: int

    def to_dict(self):
        return self.__dict__.copy()


def metrics_from_counts(tp, fp, tn, fn):
    count = tp + fp + tn + fn
    if count == 0:
        raise ValueError("cannot compute metrics over zero examples")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics((tp + tn) / count, precision, recall, f1, tp, fp, tn, fn, count)


def compute_metrics(predictions, truths):
    """Confusion-count metrics from parallel {0,1} sequences."""
    tp = fp = tn = fn = 0
    for pred, truth in zip(predictions, truths, strict=True):
        if truth:
            tp, fn = (tp + 1, fn) if pred else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if pred else (fp, tn + 1)
    return metrics_from_counts(tp, fp, tn, fn)


def classify_by_threshold(score, threshold, task_mode):
    """Binary decision from a score.

    Regression scores are distances: strictly below the threshold is positive.
    Classification scores are similarity probabilities: strictly above is
    positive. A score equal to the threshold is negative in both modes.
    """
    if not (0.0 <= score <= 1.0 and 0.0 <= threshold <= 1.0):
        raise ValueError("score and threshold must lie in [0, 1]")
    if task_mode == "regression":
        return 1 if score < threshold else 0
    if task_mode == "classification":
        return 1 if score > threshold else 0
    raise ValueError(f"unknown task_mode {task_mode!r}")


def true_label(label, threshold, task_mode):
    """Binarize a ground-truth label with the task polarity."""
    if task_mode == "regression":
        return 1 if label < threshold else 0
    return 1 if label >= 0.5 else 0


@dataclass
class PreparedExample:
    pair: object
    bias: object
    label: float


def prepare_examples(
    dataset,
    providers,
    kw_dict,
    tokenizer,
    missing_policy="zero",
    zero_bias=False,
    apply_overrides=True,
):
    """Build and cache per-example matrices for training or evaluation.

    A per-example override (kw1/kw2 with a score) extends the run dictionary
    for that example only. ``zero_bias`` zeroes both matrices, the
    vanilla-control path.
    """
    prepared = []
    for index, ex in enumerate(dataset):
        local_dict = kw_dict
        if apply_overrides and ex.override is not None and ex.override.score is not None:
            base = kw_dict if kw_dict is not None else KeywordDictionary()
            local_dict = base.with_entry(ex.override.kw1, ex.override.kw2, ex.override.score)
        try:
            pair, bias = build_pair_matrices(
                ex.s1, ex.s2, providers, local_dict, tokenizer, missing_policy
            )
        except ValueError as err:
            raise ValueError(f"example {index}: {err}") from None
        if zero_bias:
            z = np.zeros_like(bias.sim)
            bias = type(bias)(z, z.copy(), bias.cross_mask)
        prepared.append(PreparedExample(pair, bias, ex.label))
    return prepared


class AdamState:
    def __init__(self, tensors):
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, tensors, grads, cfg):
        self.t += 1
        for name, grad in grads.items():
            kernels.adam_step(
                tensors[name],
                np.ascontiguousarray(grad),
                self.m[name],
                self.v[name],
                cfg.learning_rate,
                cfg.beta1,
                cfg.beta2,
                cfg.adam_eps,
                self.t,
            )


def batch_gradients(params, batch):
    """Mean loss and mean gradients over a batch of prepared examples."""
    grads = {}
    total = 0.0
    scale = 1.0 / len(batch)
    for ex in batch:
        tape = GradTape()
        leaves = make_leaves(tape, params)
        loss = loss_on_tape(tape, leaves, ex.pair, ex.bias, ex.label, params.config)
        total += float(loss.value[0, 0])
        tape.backward(loss, seed=scale)
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                if name in grads:
                    grads[name] += leaf.grad
                else:
                    grads[name] = leaf.grad
    return total * scale, grads


def vocabulary_for(datasets, providers, kw_dict=None):
    """Tokenizer vocabulary covering dataset words plus lexicon words."""
    seg_vocab = segmentation_vocabulary(providers, kw_dict)
    words = set(seg_vocab)
    for dataset in datasets:
        for ex in dataset:
            for sentence in (ex.s1, ex.s2):
                for word, _, _ in segment(sentence, seg_vocab):
                    words.add(word)
    return words


def build_tokenizer(datasets, providers, kw_dict=None, min_word_count=1):
    """Tokenizer from dataset word frequencies.

    With ``min_word_count`` of 1 the vocabulary also covers every lexicon
    word; above 1 it is a pure frequency cutoff over the datasets and rare
    words encode as [UNK], leaving the bias matrices as their only signal.
    """
    if min_word_count <= 1:
        return Tokenizer.build(vocabulary_for(datasets, providers, kw_dict))
    seg_vocab = segmentation_vocabulary(providers, kw_dict)
    counts = {}
    for dataset in datasets:
        for ex in dataset:
            for sentence in (ex.s1, ex.s2):
                for word, _, _ in segment(sentence, seg_vocab):
                    counts[word] = counts.get(word, 0) + 1
    return Tokenizer.build_with_min_count(counts, min_word_count)


@dataclass
class TrainResult:
    params: ModelParams
    tokenizer: Tokenizer
    loss_trace: list = field(default_factory=list)


def train(
    train_cfg,
    model_cfg,
    dataset,
    providers,
    kw_dict=None,
    tokenizer=None,
    zero_bias=False,
    epoch_callback=None,
):
    """Mini-batch adaptive-moment training; returns params and per-epoch losses.

    Deterministic for a fixed seed: shuffling, initialisation, and updates all
    derive from ``train_cfg.seed``. Parameters are finalised at 32-bit storage
    precision so checkpoints round-trip exactly.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if tokenizer is None:
        tokenizer = build_tokenizer([dataset], providers, kw_dict, train_cfg.min_word_count)
    model_cfg = _fit_vocab(model_cfg, tokenizer)
    prepared = prepare_examples(dataset, providers, kw_dict, tokenizer, zero_bias=zero_bias)
    params = ModelParams.init(model_cfg, seed=train_cfg.seed)
    state = AdamState(params.tensors)
    rng = np.random.default_rng(train_cfg.seed)
    trace = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [prepared[i] for i in order[start : start + train_cfg.batch_size]]
            loss, grads = batch_gradients(params, batch)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            if train_cfg.learning_rate > 0:
                state.step(params.tensors, grads, train_cfg)
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / n_batches)
        if epoch_callback is not None:
            epoch_callback(epoch, params, tokenizer)
    params.quantize_storage()
    return TrainResult(params, tokenizer, trace)


def _fit_vocab(model_cfg, tokenizer):
    if model_cfg.vocab_size < tokenizer.vocab_size:
        d = model_cfg.to_dict()
        d["vocab_size"] = tokenizer.vocab_size
        return ModelConfig.from_dict(d)
    return model_cfg


def evaluate(
    params,
    tokenizer,
    dataset,
    providers,
    kw_dict=None,
    threshold=0.5,
    threads=1,
):
    """Threshold-classified metrics over a dataset.

    Per-example overrides in the dataset are applied when they carry a score.
    Evaluation is read-only over ``params`` and parallelises per example.
    """
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    prepared = prepare_examples(dataset, providers, kw_dict, tokenizer)
    task = params.config.task_mode

    def one(ex):
        return score_pair(params, ex.pair, ex.bias)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one, prepared))
    else:
        scores = [one(ex) for ex in prepared]
    preds = [classify_by_threshold(s, threshold, task) for s in scores]
    truths = [true_label(ex.label, threshold, task) for ex in prepared]
    return compute_metrics(preds, truths)


def sweep_threshold(params, tokenizer, dataset, providers, kw_dict=None, steps=21):
    """Metrics at evenly spaced thresholds; returns [(threshold, Metrics)]."""
    out = []
    for i in range(steps):
        threshold = i / (steps - 1) if steps > 1 else 0.5
        out.append(
            (
                threshold,
                evaluate(params, tokenizer, dataset, providers, kw_dict, threshold),
            )
        )
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

GRADCHECK_TOLERANCE = 1e-4

_GROUPS = (
    ("emb.", "embeddings"),
    (".wq", "q_proj"),
    (".wk", "k_proj"),
    (".wv", "v_proj"),
    (".wg", "g_proj"),
    (".gate_w", "gate_w"),
    (".gate_b", "gate_b"),
    (".wo", "w_o"),
    (".ffn.", "ffn"),
    (".ln", "layer_norm"),
    ("pool.", "pooler"),
    ("head.", "head"),
)


def parameter_group(name):
    if name.startswith("emb."):
        return "embeddings"
    for suffix, group in _GROUPS[1:]:
        if suffix in name:
            return group
    raise ValueError(f"unmapped parameter {name!r}")


def _relative_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@dataclass
class GradcheckReport:
    mode: str
    group_errors: dict
    unused_groups: list
    passed: bool

    def worst(self):
        return max(self.group_errors.values(), default=0.0)


def _gradcheck_case():
    """A fixed tiny sentence pair with varied sim/dissim cross cells.

    Varied scores keep the gate-path gradients well above the
    central-difference noise floor.
    """
    provider = SimilarityProvider(
        name="gradcheck",
        entries={
            pair_key("aa", "dd"): 0.9,
            pair_key("aa", "ee"): 0.2,
            pair_key("bb", "dd"): 0.6,
            pair_key("bb", "ee"): 0.4,
            pair_key("cc", "dd"): 0.1,
            pair_key("cc", "ee"): 0.8,
        },
    )
    tokenizer = Tokenizer.build({"aa", "bb", "cc", "dd", "ee"})
    pair, bias = build_pair_matrices("aa bb cc", "dd ee", [provider], tokenizer=tokenizer)
    return pair, bias, tokenizer


def gradcheck_harness(model_cfg=None, seed=7, epsilon=3e-5, init_scale=0.3, mode="full_gated"):
    """Analytic-vs-central-difference comparison for every parameter group.

    Runs on a tiny configuration; the default is 2 layers, 2 heads, d_m=8,
    sequence length 6. Two layers matter: with [CLS]-only pooling the loss of
    a single-layer encoder reads one attention row whose bias cells are zero,
    leaving the gate parameters genuinely (and uninformatively) unused.
    Parameters are drawn at ``init_scale``, well above the training
    initialisation, so true gradients sit far from the central-difference
    noise floor. Groups left unused by the ablation mode must have exactly
    zero gradients and are reported separately.
    """
    pair, bias, tokenizer = _gradcheck_case()
    if model_cfg is None:
        model_cfg = ModelConfig(
            h=2,
            d_m=8,
            layers=2,
            vocab_size=tokenizer.vocab_size,
            max_len=10,
            ablation_mode=mode,
        )
    label = 1.0
    params = ModelParams.init(model_cfg, seed=seed, scale=init_scale)

    tape = GradTape()
    leaves = make_leaves(tape, params)
    loss = loss_on_tape(tape, leaves, pair, bias, label, model_cfg)
    tape.backward(loss)
    analytic = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }

    def loss_fn(tensors):
        t = GradTape()
        probe = ModelParams(model_cfg, tensors)
        return float(
            loss_on_tape(t, probe.tensors, pair, bias, label, model_cfg).value[0, 0]
        )

    numeric = finite_diff_gradient(loss_fn, params.tensors, epsilon)

    group_errors = {}
    used = {}
    for name in params.tensors:
        group = parameter_group(name)
        err = _relative_error(analytic[name], numeric[name])
        group_errors[group] = max(group_errors.get(group, 0.0), err)
        any_used = bool(np.any(analytic[name] != 0.0) or np.any(numeric[name] != 0.0))
        used[group] = used.get(group, False) or any_used
    unused = sorted(g for g, u in used.items() if not u)
    passed = all(err < GRADCHECK_TOLERANCE for err in group_errors.values())
    return GradcheckReport(model_cfg.ablation_mode, group_errors, unused, passed)


# ---------------------------------------------------------------------------
# ablation study
# ---------------------------------------------------------------------------

ABLATION_LABELS = {
    "baseline": "baseline",
    "M_only": "+M",
    "Mr_only": "+Mr",
    "full_gated": "+M+Mr+gate",
}


def ablation_study(
    train_cfg, model_cfg, train_set, test_set, providers, kw_dict=None, seeds=(0, 1, 2)
):
    """Train and evaluate every ablation mode across seeds.

    Returns one row per mode with per-seed and median test metrics; all modes
    share seeds, data, and hyperparameters so only the attention correction
    differs.
    """
    tokenizer = build_tokenizer(
        [train_set, test_set], providers, kw_dict, train_cfg.min_word_count
    )
    rows = []
    for mode in ("baseline", "M_only", "Mr_only", "full_gated"):
        cfg = model_cfg.with_mode(mode)
        accs, f1s = [], []
        for seed in seeds:
            tc = TrainConfig(**{**train_cfg.to_dict(), "seed": seed})
            result = train(tc, cfg, train_set, providers, kw_dict, tokenizer=tokenizer)
            metrics = evaluate(
                result.params,
                result.tokenizer,
                test_set,
                providers,
                kw_dict,
                threshold=tc.resolve_threshold(cfg.task_mode),
            )
            accs.append(metrics.accuracy)
            f1s.append(metrics.f1)
        rows.append(
            {
                "mode": mode,
                "label": ABLATION_LABELS[mode],
                "acc": accs,
                "f1": f1s,
                "median_acc": float(np.median(accs)),
                "median_f1": float(np.median(f1s)),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# flexibility-correction probes
# ---------------------------------------------------------------------------


@dataclass
class ProbeOutcome:
    s1: str
    s2: str
    kw1: str
    kw2: str
    valid: bool
    score_none: Optional[float] = None
    score_dissimilar: Optional[float] = None
    score_similar: Optional[float] = None
    resolved: bool = False


@dataclass
class ProbeReport:
    outcomes: list
    n_valid: int
    n_invalid: int
    fraction_resolved: float

    def to_dict(self):
        return {
            "n_valid": self.n_valid,
            "n_invalid": self.n_invalid,
            "fraction_resolved": self.fraction_resolved,
            "outcomes": [o.__dict__ for o in self.outcomes],
        }


def flexibility_probe(params, tokenizer, probes, providers, base_dict=None):
    """Directional effect of keyword overrides on trained-model scores.

    Each probe is scored three times: without an override, with the keyword
    pair overridden to 0 (dissimilar), and overridden to 1 (similar). A valid
    probe (keywords present in s1 and s2 respectively) counts as resolved when
    the score moves toward dissimilar under 0 and toward similar under 1,
    relative to the no-override score. Regression polarity is handled.
    """
    toward_similar = +1.0 if params.config.task_mode == "classification" else -1.0
    base = base_dict if base_dict is not None else KeywordDictionary()
    outcomes = []
    for probe in probes:
        if probe.override is None:
            outcomes.append(
                ProbeOutcome(probe.s1, probe.s2, "", "", valid=False)
            )
            continue
        kw1, kw2 = probe.override.kw1, probe.override.kw2
        dict0 = base.with_entry(kw1, kw2, 0.0)
        dict1 = base.with_entry(kw1, kw2, 1.0)
        seg_vocab = segmentation_vocabulary(providers, dict0)
        words_s1 = {w for w, _, _ in segment(probe.s1, seg_vocab)}
        words_s2 = {w for w, _, _ in segment(probe.s2, seg_vocab)}
        outcome = ProbeOutcome(probe.s1, probe.s2, kw1, kw2, valid=True)
        if kw1 not in words_s1 or kw2 not in words_s2:
            outcome.valid = False
            outcomes.append(outcome)
            continue

        def scored(kw_dict):
            pair, bias = build_pair_matrices(
                probe.s1, probe.s2, providers, kw_dict, tokenizer
            )
            return score_pair(params, pair, bias)

        outcome.score_none = scored(base_dict)
        outcome.score_dissimilar = scored(dict0)
        outcome.score_similar = scored(dict1)
        moved_dis = (outcome.score_dissimilar - outcome.score_none) * toward_similar < 0
        moved_sim = (outcome.score_similar - outcome.score_none) * toward_similar > 0
        outcome.resolved = bool(moved_dis and moved_sim)
        outcomes.append(outcome)
    n_valid = sum(o.valid for o in outcomes)
    n_invalid = len(outcomes) - n_valid
    resolved = sum(o.resolved for o in outcomes)
    fraction = resolved / n_valid if n_valid else 0.0
    return ProbeReport(outcomes, n_valid, n_invalid, fraction)
