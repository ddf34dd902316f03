"""Desk-scale training harness.

Wires the encoder, losses, dictionaries, and diagnostics into per-step
updates for each framework variant:

- mocov2: momentum-encoded keys, FIFO queue negatives (two independent
  queues for the scalar and vector components, or one shared dictionary
  with a single temperature), asymmetric loss.
- simmoco: mocov2 without queues; negatives are the current batch's
  momentum keys.
- simco / st-simco: no momentum encoder; the dual-temperature batch loss
  with gradients through both views; st-simco pins both temperatures
  equal.
- noncl-simsiam / noncl-byol-like: predictor plus stop-gradient target
  (the target is the online encoder for simsiam, an EMA copy for
  byol-like) with an optional frozen inter-anchor hardness factor.

Optimization is SGD with momentum and weight decay on a linear-warmup
cosine schedule, with an online linear probe trained on detached
backbone features.
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import analysis, losses, network, numerics
from .dictionary import QueueDictionary, momentum_update
from .losses import BatchPair, DualTempConfig
from .network import Affine, EncoderParams

__all__ = [
    "FRAMEWORKS",
    "FrameworkSpec",
    "ScheduleConfig",
    "TrainState",
    "StepMetrics",
    "MetricLog",
    "lr_at",
    "init_state",
    "train_step",
    "linear_eval_step",
    "evaluate_top1",
    "run_training",
    "fit_encoder",
    "save_checkpoint",
    "load_checkpoint",
]

FRAMEWORKS = (
    "mocov2",
    "simmoco",
    "simco",
    "st-simco",
    "noncl-simsiam",
    "noncl-byol-like",
)

_MOMENTUM_FRAMEWORKS = {"mocov2", "simmoco", "noncl-byol-like"}
_NONCL_FRAMEWORKS = {"noncl-simsiam", "noncl-byol-like"}


@dataclass(frozen=True)
class FrameworkSpec:
    """Which variant to train and its contrastive configuration.

    ha_toggle enables inter-anchor hardness-awareness where the variant
    normally removes it: for simco it pins the scalar component back to
    tau_alpha (single temperature), for noncl it multiplies the loss by
    the frozen per-anchor attraction weight.
    """

    name: str
    dt: DualTempConfig = field(default_factory=lambda: DualTempConfig(0.1, 1.0))
    symmetric: bool = False
    momentum: float = 0.99
    queue_scalar: int = 1024
    queue_vector: int = 1024
    sample_scalar: int = 128
    sample_vector: int = 128
    sampling: str = "newest"
    shared_dictionary: bool = False
    ha_toggle: bool = False

    def __post_init__(self):
        if self.name not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.name!r}, expected one of {FRAMEWORKS}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if self.name == "st-simco" and not self.dt.single_temperature:
            raise ValueError("st-simco requires tau_beta == tau_alpha")
        if self.shared_dictionary and self.name != "mocov2":
            raise ValueError("shared_dictionary only applies to mocov2")
        if self.uses_queues and (self.queue_scalar < self.sample_scalar or self.queue_vector < self.sample_vector):
            raise ValueError("queue capacity must be at least the per-step sample count")

    @property
    def uses_momentum(self) -> bool:
        return self.name in _MOMENTUM_FRAMEWORKS

    @property
    def uses_queues(self) -> bool:
        return self.name == "mocov2"

    @property
    def is_noncl(self) -> bool:
        return self.name in _NONCL_FRAMEWORKS

    @property
    def is_batch_dt(self) -> bool:
        return self.name in ("simco", "st-simco")

    @property
    def effective_dt(self) -> DualTempConfig:
        """ha_toggle on a dual-temperature variant restores the scalar
        component's hardness-awareness by evaluating it at tau_alpha."""
        if self.ha_toggle and not self.is_noncl:
            return DualTempConfig(self.dt.tau_alpha, self.dt.tau_alpha)
        return self.dt

    @property
    def scalar_tau(self) -> float:
        return self.effective_dt.tau_beta


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 0.03
    warmup_epochs: int = 3
    total_epochs: int = 30
    batch_size: int = 128
    weight_decay: float = 5e-4
    sgd_momentum: float = 0.9
    linear_scaling: bool = True

    def __post_init__(self):
        if self.total_epochs < 0 or not 0 <= self.warmup_epochs <= max(self.total_epochs, 1):
            raise ValueError(
                f"need 0 <= warmup ({self.warmup_epochs}) <= total epochs ({self.total_epochs})"
            )
        if self.base_lr <= 0 or self.batch_size < 2:
            raise ValueError(f"invalid base_lr {self.base_lr} or batch_size {self.batch_size}")
        if self.weight_decay < 0 or not 0.0 <= self.sgd_momentum < 1.0:
            raise ValueError(f"invalid weight_decay {self.weight_decay} or sgd_momentum {self.sgd_momentum}")

    @property
    def peak_lr(self) -> float:
        return self.base_lr * (self.batch_size / 256.0) if self.linear_scaling else self.base_lr


def lr_at(step: int, schedule: ScheduleConfig, steps_per_epoch: int) -> float:
    """Linear warmup to peak_lr, then a single cosine decay to 0."""
    if step < 0 or steps_per_epoch < 1:
        raise ValueError(f"invalid step {step} or steps_per_epoch {steps_per_epoch}")
    peak = schedule.peak_lr
    warmup = schedule.warmup_epochs * steps_per_epoch
    total = schedule.total_epochs * steps_per_epoch
    if step < warmup:
        return peak * (step + 1) / warmup
    if total <= warmup:
        return peak
    progress = (step - warmup) / (total - warmup)
    return 0.5 * peak * (1.0 + np.cos(np.pi * min(progress, 1.0)))


@dataclass
class TrainState:
    framework: FrameworkSpec
    online: EncoderParams
    predictor: tuple | None
    momentum_copy: EncoderParams | None
    queue_scalar: QueueDictionary | None
    queue_vector: QueueDictionary | None
    velocity: EncoderParams
    predictor_velocity: tuple | None
    classifier: Affine
    step: int = 0


def init_state(
    framework: FrameworkSpec,
    rng: np.random.Generator,
    in_dim: int,
    n_classes: int,
    hidden_dim: int = 64,
    embedding_dim: int = 32,
) -> TrainState:
    online = network.init_encoder(rng, in_dim, hidden_dim, embedding_dim)
    predictor = network.init_predictor(rng, embedding_dim, hidden_dim) if framework.is_noncl else None
    momentum_copy = online if framework.uses_momentum else None
    queue_scalar = queue_vector = None
    if framework.uses_queues:
        if framework.shared_dictionary:
            queue_scalar = queue_vector = QueueDictionary(framework.queue_scalar, embedding_dim)
        else:
            queue_scalar = QueueDictionary(framework.queue_scalar, embedding_dim)
            queue_vector = QueueDictionary(framework.queue_vector, embedding_dim)
    classifier = Affine(np.zeros((n_classes, online.feature_dim)), np.zeros(n_classes))
    return TrainState(
        framework=framework,
        online=online,
        predictor=predictor,
        momentum_copy=momentum_copy,
        queue_scalar=queue_scalar,
        queue_vector=queue_vector,
        velocity=network.zeros_like_params(online),
        predictor_velocity=network.zeros_like_params(predictor) if predictor else None,
        classifier=classifier,
        step=0,
    )


@dataclass(frozen=True)
class StepMetrics:
    loss: float
    lr: float
    r_plus_entropy: float
    collapse: float


def _sgd(params, grads, velocity, lr: float, schedule: ScheduleConfig):
    velocity = network.tree_map(
        lambda v, g, p: schedule.sgd_momentum * v + g + schedule.weight_decay * p,
        velocity,
        grads,
        params,
    )
    params = network.tree_map(lambda p, v: p - lr * v, params, velocity)
    return params, velocity


def _momentum_keys(state: TrainState, x: np.ndarray) -> np.ndarray:
    """Keys from the EMA encoder; detached by construction (values only,
    no cache kept)."""
    return network.encode(state.momentum_copy, x).embeddings


def _neg_sims(queries: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    """(N, K) similarities against a shared (K, d) or per-anchor (N, K, d)
    negative block."""
    if negatives.ndim == 2:
        return queries @ negatives.T
    return np.einsum("nd,nkd->nk", queries, negatives)


def _weighted_negatives(p_hat: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    if negatives.ndim == 2:
        return p_hat @ negatives
    return np.einsum("nk,nkd->nd", p_hat, negatives)


def _scalar_sums(queries: np.ndarray, pos_dots: np.ndarray, negatives: np.ndarray, tau: float) -> np.ndarray:
    """Per-anchor off-positive softmax mass (positive in the denominator)."""
    scaled = _neg_sims(queries, negatives) / tau
    scaled_pos = pos_dots / tau
    m = np.maximum(np.max(scaled, axis=1), scaled_pos)
    neg_mass = np.sum(np.exp(scaled - m[:, None]), axis=1)
    pos_mass = np.exp(scaled_pos - m)
    return neg_mass / (neg_mass + pos_mass)


def _decomposed_batch_grad(
    queries: np.ndarray,
    positives: np.ndarray,
    negs_scalar: np.ndarray,
    negs_vector: np.ndarray,
    cfg: DualTempConfig,
) -> tuple[float, np.ndarray]:
    """Vectorized decomposed loss over a batch of anchors: per-anchor
    frozen scalar at tau_beta over negs_scalar, vector at tau_alpha over
    negs_vector, gradient on each query, mean loss = mean(grad . q).

    negs_* are either one shared (K, d) block or per-anchor (N, K, d);
    agrees with losses.decomposed_loss anchor by anchor.
    """
    n = queries.shape[0]
    pos_dots = np.sum(queries * positives, axis=1)
    scalars = _scalar_sums(queries, pos_dots, negs_scalar, cfg.tau_beta)
    p_hat = numerics.tempered_softmax(_neg_sims(queries, negs_vector), cfg.tau_alpha)
    vectors = positives - _weighted_negatives(p_hat, negs_vector)
    grads = -(scalars / cfg.tau_alpha)[:, None] * vectors
    loss = float(np.mean(np.sum(grads * queries, axis=1)))
    return loss, grads / n


def _infonce_batch_grad(
    queries: np.ndarray, positives: np.ndarray, negatives: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """Plain contrastive loss and query gradients; single temperature."""
    n = queries.shape[0]
    pos_dots = np.sum(queries * positives, axis=1)
    scalars = _scalar_sums(queries, pos_dots, negatives, tau)
    p_hat = numerics.tempered_softmax(_neg_sims(queries, negatives), tau)
    vectors = positives - _weighted_negatives(p_hat, negatives)
    grads = -(scalars / tau)[:, None] * vectors
    # p_pos = 1 - scalar_sum, so the loss is -log1p(-scalar_sum)
    loss = float(np.mean(-np.log1p(-scalars)))
    return loss, grads / n


def _in_batch_negatives(keys: np.ndarray) -> np.ndarray:
    """Per-anchor negative sets: every key but the anchor's own."""
    n = keys.shape[0]
    return np.stack([np.delete(keys, i, axis=0) for i in range(n)])


def _ha_factors(queries: np.ndarray, keys: np.ndarray, tau: float) -> np.ndarray:
    """Frozen per-anchor attraction weights from in-batch negatives."""
    p = numerics.tempered_softmax(queries @ keys.T, tau)
    return np.sum(p * ~np.eye(queries.shape[0], dtype=bool), axis=1)


def _contrastive_step(state: TrainState, x1: np.ndarray, x2: np.ndarray, rng: np.random.Generator):
    """Loss and online-parameter gradients for mocov2/simmoco (queries
    from view 1, keys from the momentum encoder on view 2)."""
    spec = state.framework
    cfg = spec.effective_dt
    result = network.encode(state.online, x1)
    queries = result.embeddings
    keys = _momentum_keys(state, x2)

    if spec.uses_queues and len(state.queue_scalar) >= spec.sample_scalar and len(state.queue_vector) >= spec.sample_vector:
        negs_scalar = state.queue_scalar.sample(spec.sampling, spec.sample_scalar, rng)
        negs_vector = (
            negs_scalar
            if spec.shared_dictionary
            else state.queue_vector.sample(spec.sampling, spec.sample_vector, rng)
        )
    else:
        # warm-up (and all of simmoco): current batch's momentum keys
        negs_scalar = negs_vector = _in_batch_negatives(keys)

    if spec.shared_dictionary:
        # single-dictionary baseline: the plain contrastive loss at tau_alpha
        loss, d_q = _infonce_batch_grad(queries, keys, negs_scalar, cfg.tau_alpha)
    else:
        loss, d_q = _decomposed_batch_grad(queries, keys, negs_scalar, negs_vector, cfg)
    grads, _ = network.encode_backward(state.online, result, d_q)
    return loss, grads, queries, keys


def _batch_dt_step(state: TrainState, x1: np.ndarray, x2: np.ndarray):
    """Loss and gradients for simco/st-simco: both views through the
    online encoder, gradients through both sides."""
    spec = state.framework
    res1 = network.encode(state.online, x1)
    res2 = network.encode(state.online, x2)
    batch = BatchPair(res1.embeddings, res2.embeddings, check=False)
    loss, d_q, d_k = losses.dt_loss_with_grads(batch, spec.effective_dt, symmetric=spec.symmetric)
    g1, _ = network.encode_backward(state.online, res1, d_q)
    g2, _ = network.encode_backward(state.online, res2, d_k)
    grads = network.tree_map(lambda a, b: a + b, g1, g2)
    return loss, grads, res1.embeddings, res2.embeddings


def _noncl_step(state: TrainState, x1: np.ndarray, x2: np.ndarray):
    """Predictor/stop-gradient loss, symmetric over the two views.

    The target side is the online encoder (simsiam) or the EMA copy
    (byol-like); either way no gradient flows into it.
    """
    spec = state.framework
    n = x1.shape[0]
    res1 = network.encode(state.online, x1)
    res2 = network.encode(state.online, x2)
    if spec.uses_momentum:
        target1 = _momentum_keys(state, x2)
        target2 = _momentum_keys(state, x1)
    else:
        target1 = res2.embeddings
        target2 = res1.embeddings

    ha1 = ha2 = None
    if spec.ha_toggle:
        tau = spec.dt.tau_alpha
        ha1 = _ha_factors(res1.embeddings, target1, tau)
        ha2 = _ha_factors(res2.embeddings, target2, tau)

    def side(result, targets, ha):
        raw, cache = network.chain_forward(state.predictor, result.embeddings, relu_after_last=False)
        total = 0.0
        d_raw = np.zeros_like(raw)
        for i in range(n):
            factor = None if ha is None else float(ha[i])
            total += losses.noncl_loss(raw[i], targets[i], ha_factor=factor)
            d_raw[i] = losses.noncl_loss_grad(raw[i], targets[i], ha_factor=factor) * 0.5 / n
        pred_grads, d_emb = network.chain_backward(state.predictor, cache, d_raw, relu_after_last=False)
        enc_grads, _ = network.encode_backward(state.online, result, d_emb)
        return total / n, pred_grads, enc_grads

    loss1, pg1, eg1 = side(res1, target1, ha1)
    loss2, pg2, eg2 = side(res2, target2, ha2)
    loss = 0.5 * (loss1 + loss2)
    pred_grads = network.tree_map(lambda a, b: a + b, pg1, pg2)
    enc_grads = network.tree_map(lambda a, b: a + b, eg1, eg2)
    return loss, enc_grads, pred_grads, res1.embeddings, target1


def train_step(
    state: TrainState,
    x1: np.ndarray,
    x2: np.ndarray,
    labels: np.ndarray,
    lr: float,
    schedule: ScheduleConfig,
    rng: np.random.Generator,
) -> StepMetrics:
    """One optimization step; mutates state in place and returns metrics."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    if x1.shape[0] < 2:
        raise ValueError("a training step needs at least 2 pairs")
    spec = state.framework
    pred_grads = None

    if spec.is_batch_dt:
        loss, grads, queries, keys = _batch_dt_step(state, x1, x2)
    elif spec.is_noncl:
        loss, grads, pred_grads, queries, keys = _noncl_step(state, x1, x2)
    else:
        if spec.symmetric:
            loss_a, grads_a, queries, keys = _contrastive_step(state, x1, x2, rng)
            loss_b, grads_b, _, _ = _contrastive_step(state, x2, x1, rng)
            loss = 0.5 * (loss_a + loss_b)
            grads = network.tree_map(lambda a, b: 0.5 * (a + b), grads_a, grads_b)
        else:
            loss, grads, queries, keys = _contrastive_step(state, x1, x2, rng)

    state.online, state.velocity = _sgd(state.online, grads, state.velocity, lr, schedule)
    if pred_grads is not None:
        state.predictor, state.predictor_velocity = _sgd(
            state.predictor, pred_grads, state.predictor_velocity, lr, schedule
        )

    if spec.uses_queues:
        # keys enter the queue only after the loss, so a batch never sees
        # itself among its negatives; symmetric mode still pushes once
        state.queue_scalar.push(keys, iteration=state.step)
        if not spec.shared_dictionary:
            state.queue_vector.push(keys, iteration=state.step)
    if spec.uses_momentum:
        state.momentum_copy = momentum_update(state.online, state.momentum_copy, spec.momentum)

    # linear probe on detached features of view 1
    features = network.encode(state.online, x1).features
    state.classifier, _ = linear_eval_step(state.classifier, features, labels, lr)

    profile = analysis.r_plus_in_batch(BatchPair(queries, keys, check=False), spec.scalar_tau)
    collapse = analysis.collapse_stat(queries)
    state.step += 1
    return StepMetrics(float(loss), float(lr), profile.entropy, collapse)


def linear_eval_step(
    classifier: Affine, features: np.ndarray, labels: np.ndarray, lr: float
) -> tuple[Affine, float]:
    """One plain-SGD cross-entropy step on detached features."""
    labels = np.asarray(labels)
    n, c = features.shape[0], classifier.out_dim
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    logits = features @ classifier.weight.T + classifier.bias
    log_p = numerics.tempered_log_softmax(logits, 1.0)
    loss = float(np.mean(-log_p[np.arange(n), labels]))
    d_logits = np.exp(log_p)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    updated = Affine(
        classifier.weight - lr * (d_logits.T @ features),
        classifier.bias - lr * np.sum(d_logits, axis=0),
    )
    return updated, loss


def evaluate_top1(classifier: Affine, features: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy; argmax resolves ties toward the lowest index."""
    logits = features @ classifier.weight.T + classifier.bias
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


@dataclass(frozen=True)
class MetricLog:
    """Per-epoch training records with a canonical JSONL rendering."""

    rows: tuple

    def to_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=False) + "\n" for row in self.rows)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @property
    def final_top1(self) -> float:
        return self.rows[-1]["top1"]

    @property
    def final_collapse(self) -> float:
        return self.rows[-1]["collapse"]


def run_training(
    framework: FrameworkSpec,
    schedule: ScheduleConfig,
    dataset,
    n_classes: int,
    seed: int,
    hidden_dim: int = 64,
    embedding_dim: int = 32,
    eval_fraction: float = 0.2,
) -> MetricLog:
    """Full training loop over a PairDataset; one MetricLog row per epoch
    (or a single initial-eval row when total_epochs is 0). Deterministic
    in (dataset, config, seed)."""
    _, log = fit_encoder(
        framework, schedule, dataset, n_classes, seed, hidden_dim, embedding_dim, eval_fraction
    )
    return log


def fit_encoder(
    framework: FrameworkSpec,
    schedule: ScheduleConfig,
    dataset,
    n_classes: int,
    seed: int,
    hidden_dim: int = 64,
    embedding_dim: int = 32,
    eval_fraction: float = 0.2,
) -> tuple[TrainState, MetricLog]:
    """run_training, but also hands back the final TrainState for callers
    that need the fitted encoder and probe."""
    rng = numerics.make_rng(seed, stream=10)
    n = dataset.size
    n_eval = max(1, int(round(n * eval_fraction)))
    perm = rng.permutation(n)
    eval_idx, train_idx = perm[:n_eval], perm[n_eval:]
    if train_idx.size < schedule.batch_size:
        raise ValueError(
            f"dataset leaves {train_idx.size} training samples, need at least one batch of {schedule.batch_size}"
        )
    state = init_state(
        framework,
        rng,
        in_dim=dataset.view1.shape[1],
        n_classes=n_classes,
        hidden_dim=hidden_dim,
        embedding_dim=embedding_dim,
    )
    steps_per_epoch = train_idx.size // schedule.batch_size

    def eval_row(epoch: int, mean_loss, metrics: StepMetrics | None, lr: float):
        features = network.encode(state.online, dataset.view1[eval_idx]).features
        top1 = evaluate_top1(state.classifier, features, dataset.labels[eval_idx])
        if metrics is None:
            embeddings = network.encode(state.online, dataset.view1[eval_idx][:256]).embeddings
            entropy = None
            collapse = analysis.collapse_stat(embeddings)
        else:
            entropy = metrics.r_plus_entropy
            collapse = metrics.collapse
        return {
            "epoch": epoch,
            "step": state.step,
            "loss": mean_loss,
            "top1": top1,
            "r_plus_entropy": entropy,
            "lr": lr,
            "framework": framework.name,
            "seed": seed,
            "collapse": collapse,
        }

    rows = []
    if schedule.total_epochs == 0:
        return state, MetricLog((eval_row(0, None, None, 0.0),))

    for epoch in range(1, schedule.total_epochs + 1):
        order = rng.permutation(train_idx.size)
        epoch_losses = []
        last_metrics = None
        lr = 0.0
        for b in range(steps_per_epoch):
            batch = train_idx[order[b * schedule.batch_size : (b + 1) * schedule.batch_size]]
            lr = lr_at(state.step, schedule, steps_per_epoch)
            last_metrics = train_step(
                state,
                dataset.view1[batch],
                dataset.view2[batch],
                dataset.labels[batch],
                lr,
                schedule,
                rng,
            )
            epoch_losses.append(last_metrics.loss)
        rows.append(eval_row(epoch, float(np.mean(epoch_losses)), last_metrics, lr))
    return state, MetricLog(tuple(rows))


_CKPT_MAGIC = b"DTL1"


def _shape_list(layers) -> list:
    return [[layer.out_dim, layer.in_dim] for layer in layers]


def _layers_template(shapes) -> tuple:
    return tuple(Affine(np.zeros((o, i)), np.zeros(o)) for o, i in shapes)


def _encoder_template(meta) -> EncoderParams:
    return EncoderParams(_layers_template(meta["backbone"]), _layers_template(meta["projector"]))


def save_checkpoint(state: TrainState, path) -> None:
    """Versioned little-endian binary: JSON structure header, then flat
    float64 parameter blocks, then queue blobs."""
    spec = state.framework
    meta = {
        "framework": {
            "name": spec.name,
            "tau_alpha": spec.dt.tau_alpha,
            "tau_beta": spec.dt.tau_beta,
            "symmetric": spec.symmetric,
            "momentum": spec.momentum,
            "queue_scalar": spec.queue_scalar,
            "queue_vector": spec.queue_vector,
            "sample_scalar": spec.sample_scalar,
            "sample_vector": spec.sample_vector,
            "sampling": spec.sampling,
            "shared_dictionary": spec.shared_dictionary,
            "ha_toggle": spec.ha_toggle,
        },
        "step": state.step,
        "online": {
            "backbone": _shape_list(state.online.backbone),
            "projector": _shape_list(state.online.projector),
        },
        "predictor": _shape_list(state.predictor) if state.predictor else None,
        "classifier": [state.classifier.out_dim, state.classifier.in_dim],
        "has_momentum": state.momentum_copy is not None,
        "queues": "shared" if (spec.uses_queues and spec.shared_dictionary) else ("dual" if spec.uses_queues else "none"),
    }
    blocks = [network.flatten_params(state.online), network.flatten_params(state.velocity)]
    if state.momentum_copy is not None:
        blocks.append(network.flatten_params(state.momentum_copy))
    if state.predictor is not None:
        blocks.append(network.flatten_params(state.predictor))
        blocks.append(network.flatten_params(state.predictor_velocity))
    blocks.append(network.flatten_params(state.classifier))
    queue_blobs = []
    if spec.uses_queues:
        queue_blobs.append(state.queue_scalar.to_bytes())
        if not spec.shared_dictionary:
            queue_blobs.append(state.queue_vector.to_bytes())

    header = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<q", len(header)))
        fh.write(header)
        for block in blocks:
            fh.write(struct.pack("<q", block.size))
            fh.write(block.astype("<f8").tobytes())
        for blob in queue_blobs:
            fh.write(struct.pack("<q", len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a trainer checkpoint (bad magic)")
        (header_len,) = struct.unpack("<q", fh.read(8))
        meta = json.loads(fh.read(header_len))

        def read_block() -> np.ndarray:
            (count,) = struct.unpack("<q", fh.read(8))
            return np.frombuffer(fh.read(count * 8), dtype="<f8").copy()

        def read_blob() -> bytes:
            (count,) = struct.unpack("<q", fh.read(8))
            return fh.read(count)

        fw = meta["framework"]
        spec = FrameworkSpec(
            name=fw["name"],
            dt=DualTempConfig(fw["tau_alpha"], fw["tau_beta"]),
            symmetric=fw["symmetric"],
            momentum=fw["momentum"],
            queue_scalar=fw["queue_scalar"],
            queue_vector=fw["queue_vector"],
            sample_scalar=fw["sample_scalar"],
            sample_vector=fw["sample_vector"],
            sampling=fw["sampling"],
            shared_dictionary=fw["shared_dictionary"],
            ha_toggle=fw["ha_toggle"],
        )
        encoder_template = _encoder_template(meta["online"])
        online = network.unflatten_params(encoder_template, read_block())
        velocity = network.unflatten_params(encoder_template, read_block())
        momentum_copy = (
            network.unflatten_params(encoder_template, read_block()) if meta["has_momentum"] else None
        )
        predictor = predictor_velocity = None
        if meta["predictor"] is not None:
            template = _layers_template(meta["predictor"])
            predictor = network.unflatten_params(template, read_block())
            predictor_velocity = network.unflatten_params(template, read_block())
        c_out, c_in = meta["classifier"]
        classifier = network.unflatten_params(Affine(np.zeros((c_out, c_in)), np.zeros(c_out)), read_block())
        queue_scalar = queue_vector = None
        if meta["queues"] == "shared":
            queue_scalar = queue_vector = QueueDictionary.from_bytes(read_blob())
        elif meta["queues"] == "dual":
            queue_scalar = QueueDictionary.from_bytes(read_blob())
            queue_vector = QueueDictionary.from_bytes(read_blob())
    return TrainState(
        framework=spec,
        online=online,
        predictor=predictor,
        momentum_copy=momentum_copy,
        queue_scalar=queue_scalar,
        queue_vector=queue_vector,
        velocity=velocity,
        predictor_velocity=predictor_velocity,
        classifier=classifier,
        step=meta["step"],
    )
