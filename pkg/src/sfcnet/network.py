"""Full model assembly: sampling/grouping, curve-guided skeleton sampling,
correlation fusion, channel-spatial attention, global pooling, and the
classification/segmentation heads, plus the toy training loop.

A model instance is confined to one thread while training; frozen models
may serve inference from many threads.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .attention import (
    AttentionWeights,
    apply_attention,
    channel_attention,
    spatial_attention,
)
from .config import DEFAULT_SEED, NetworkConfig
from .engine import AdamState, BatchNormState, DenseLayer, Tensor, adam_step, backward
from .errors import InputError
from .fusion import correlate, reduce_correlation, skip_fuse
from .geometry import PointCloud, morton_codes, normalize_unit_cube
from .sampling import fps, set_abstraction
from .zorder import skeleton_from_indices, zorder_sample


class Model:
    """Built network: parameter tensors plus the wiring defined by a config."""

    def __init__(self, config: NetworkConfig, seed: int):
        self.config = config
        self.seed = seed
        self._params = {}  # name -> Tensor, insertion-ordered
        self.bn_states = {}

    # -- parameter bookkeeping ------------------------------------------------

    def _add_param(self, name, array):
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return dict(self._params)

    def task_parameters(self, task):
        """Parameters on the given task's path; the other head is excluded."""
        skip = "seg." if task == "classify" else "head."
        return [p for name, p in self._params.items() if not name.startswith(skip)]

    def state_arrays(self):
        """Everything a checkpoint stores: parameters plus BN running stats."""
        arrays = {name: p.data for name, p in self._params.items()}
        for name, st in self.bn_states.items():
            arrays[f"{name}.running_mean"] = st.running_mean
            arrays[f"{name}.running_var"] = st.running_var
        return arrays

    def load_state_arrays(self, arrays):
        expected = self.state_arrays()
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise InputError(f"checkpoint mismatch: missing {missing}, extra {extra}")
        for name, p in self._params.items():
            if arrays[name].shape != p.data.shape:
                raise InputError(
                    f"checkpoint {name}: shape {arrays[name].shape} != {p.data.shape}"
                )
            p.data = np.array(arrays[name], dtype=np.float64)
        for name, st in self.bn_states.items():
            st.running_mean = np.array(arrays[f"{name}.running_mean"])
            st.running_var = np.array(arrays[f"{name}.running_var"])

    def save(self, path):
        engine.save_checkpoint(path, self.state_arrays())

    def load(self, path):
        self.load_state_arrays(engine.load_checkpoint(path))

    # -- forward passes ---------------------------------------------------

    def _prepare(self, cloud: PointCloud) -> PointCloud:
        """Normalize and, if needed, subsample to exactly n_input_points.

        The subset is drawn from the Morton-canonical ordering of the
        points so the choice depends only on the point multiset and the
        model seed, never on input row order.
        """
        cfg = self.config
        n = len(cloud)
        if n < cfg.n_input_points:
            raise InputError(
                f"cloud has {n} points, model needs at least {cfg.n_input_points}"
            )
        norm = normalize_unit_cube(cloud)
        if n == cfg.n_input_points:
            return norm
        pos = norm.positions
        codes = morton_codes(pos, cfg.morton_depth)
        order = np.lexsort((np.arange(n), pos[:, 2], pos[:, 1], pos[:, 0], codes))
        rng = np.random.default_rng(self.seed)
        keep = np.sort(rng.choice(n, cfg.n_input_points, replace=False))
        idx = order[keep]
        return PointCloud(
            pos[idx],
            norm.normals[idx] if norm.normals is not None else None,
            norm.label,
        )

    def _backbone(self, norm_cloud: PointCloud, training=False):
        """Shared trunk; expects a normalized cloud of exactly n_input_points.

        Returns (embedded centers, refined per-center features, lifted
        per-center features just before global pooling).
        """
        cfg = self.config
        embedded = set_abstraction(
            norm_cloud,
            cfg.n_regions,
            cfg.radius,
            cfg.group_size,
            self.embed_layers,
            use_normals=cfg.use_normals,
            depth=cfg.morton_depth,
        )
        if cfg.use_cs:
            if cfg.use_zs:
                skeleton = zorder_sample(embedded, cfg.n_skeleton, cfg.morton_depth)
            else:
                picked = fps(
                    PointCloud(embedded.positions), cfg.n_skeleton, cfg.morton_depth
                )
                skeleton = skeleton_from_indices(embedded, np.sort(picked))
            p_structure, p_position = correlate(embedded, skeleton)
            x_cs = reduce_correlation(p_structure, p_position, self.fusion_layers)
            fused = skip_fuse(embedded, x_cs).values
        else:
            fused = engine.concat(
                [embedded.features, Tensor(embedded.positions)], axis=1
            )
        if cfg.use_am:
            weights = AttentionWeights(
                channel=channel_attention(fused, self.channel_layers),
                spatial=spatial_attention(
                    fused,
                    self.spatial_layers,
                    self.spatial_gamma,
                    self.spatial_beta,
                    self.bn_states["spatial_bn"],
                    training,
                ),
            )
            refined = apply_attention(fused, weights)
        else:
            refined = fused
        lifted = engine.shared_mlp(refined, self.lift_layers)
        return embedded, refined, lifted

    def _global_feature(self, lifted):
        pooled = engine.pool(lifted, axis=0, kind="max")
        return engine.reshape(pooled, (1, self.config.global_dim))

    def forward_classify(self, cloud: PointCloud, training=False, dropout_rng=None):
        """Logits (1, k) for one cloud. Deterministic unless dropout_rng is set."""
        cfg = self.config
        sub = self._prepare(cloud)
        _, _, lifted = self._backbone(sub, training)
        x = self._global_feature(lifted)
        for i, layer in enumerate(self.head_layers):
            x = engine.add(engine.matmul(x, layer.weight), layer.bias)
            if i + 1 < len(self.head_layers):
                x = engine.relu(x)
                if training:
                    x = engine.dropout(x, cfg.dropout, dropout_rng)
        return x

    def forward_segment(self, cloud: PointCloud, training=False, dropout_rng=None):
        """Per-point logits (N, k') for every point of the input cloud.

        The backbone runs on the canonical subsample; its per-center
        features and the global feature are propagated back to all points
        by inverse-square-distance 3-nearest-center interpolation.
        """
        norm = normalize_unit_cube(cloud)
        sub = self._prepare(cloud)
        embedded, refined, lifted = self._backbone(sub, training)
        n = len(norm)
        weights = _interpolation_weights(norm.positions, embedded.positions)
        per_point = engine.matmul(Tensor(weights), refined)
        broadcast = engine.matmul(Tensor(np.ones((n, 1))), self._global_feature(lifted))
        feats = engine.concat([per_point, broadcast], axis=1)
        return engine.shared_mlp(feats, self.seg_layers)

    def predict_class(self, cloud: PointCloud) -> int:
        return int(np.argmax(self.forward_classify(cloud).data))

    def heatmap_responses(self, cloud: PointCloud):
        """Per-center response: how many global-feature channels that center
        wins (argmax over centers) after attention. Returns (normalized
        center positions, integer counts)."""
        sub = self._prepare(cloud)
        embedded, _, lifted = self._backbone(sub, training=False)
        winners = np.argmax(lifted.data, axis=0)
        counts = np.bincount(winners, minlength=len(embedded))
        return embedded.positions, counts


def _interpolation_weights(points, centers):
    """(N, m) row-stochastic weights over the 3 nearest centers (1/d^2).

    A point coincident with a center takes that center's feature exactly.
    """
    n = points.shape[0]
    m = centers.shape[0]
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    k = min(3, m)
    nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
    rows = np.arange(n)[:, None]
    d2n = d2[rows, nearest]
    weights = np.zeros((n, m))
    coincident = d2n.min(axis=1) < 1e-24
    if coincident.any():
        hit = np.argmin(d2[coincident], axis=1)
        weights[np.flatnonzero(coincident), hit] = 1.0
    rest = ~coincident
    if rest.any():
        inv = 1.0 / d2n[rest]
        inv /= inv.sum(axis=1, keepdims=True)
        tmp = np.zeros((int(rest.sum()), m))
        np.put_along_axis(tmp, nearest[rest], inv, axis=1)
        weights[rest] = tmp
    return weights


def build(config: NetworkConfig, seed: int = DEFAULT_SEED) -> Model:
    """Deterministically initialize a model for the given config and seed.

    Disabled blocks contribute no parameters: ZS off swaps the skeleton
    for a farthest-point subset, C&S off bypasses the correlation stack,
    AM off uses identity attention weights.
    """
    config.validate()
    model = Model(config, seed)
    rng = np.random.default_rng(seed)

    def dense(prefix, i, c_in, c_out, activation):
        w = model._add_param(
            f"{prefix}.{i}.weight", rng.normal(0.0, np.sqrt(2.0 / c_in), (c_in, c_out))
        )
        b = model._add_param(f"{prefix}.{i}.bias", rng.normal(0.0, 0.05, c_out))
        return DenseLayer(w, b, activation)

    def dense_stack(prefix, c_in, widths, last_activation="relu"):
        layers = []
        for i, width in enumerate(widths):
            act = "relu" if i + 1 < len(widths) else last_activation
            layers.append(dense(prefix, i, c_in, width, act))
            c_in = width
        return layers

    embed_in = 6 if config.use_normals else 3
    model.embed_layers = dense_stack("embed", embed_in, config.embed_mlp)

    if config.use_cs:
        model.fusion_layers = []
        c_in = 2 * config.feature_dim + 6
        for i, width in enumerate(config.fusion_g):
            kernel = model._add_param(
                f"fusion.{i}.kernel",
                rng.normal(0.0, np.sqrt(2.0 / c_in), (1, 1, c_in, width)),
            )
            bias = model._add_param(f"fusion.{i}.bias", rng.normal(0.0, 0.05, width))
            model.fusion_layers.append((kernel, bias))
            c_in = width
    else:
        model.fusion_layers = []

    fused = config.fused_dim
    if config.use_am:
        hidden = max(1, fused // config.channel_ratio)
        model.channel_layers = [
            dense("channel", 0, fused, hidden, "relu"),
            dense("channel", 1, hidden, fused, None),
        ]
        model.spatial_layers = dense_stack(
            "spatial", fused, config.spatial_mlp, last_activation=None
        )
        spatial_out = config.spatial_mlp[-1]
        model.spatial_gamma = model._add_param("spatial_bn.gamma", np.ones(spatial_out))
        model.spatial_beta = model._add_param("spatial_bn.beta", np.zeros(spatial_out))
        model.bn_states["spatial_bn"] = BatchNormState.for_channels(
            spatial_out, momentum=config.bn_momentum, eps=config.bn_eps
        )
    else:
        model.channel_layers = []
        model.spatial_layers = []

    model.lift_layers = dense_stack("lift", fused, config.lift_mlp)
    model.head_layers = dense_stack(
        "head",
        config.global_dim,
        tuple(config.head_mlp) + (config.n_classes,),
        last_activation=None,
    )
    model.seg_layers = dense_stack(
        "seg",
        fused + config.global_dim,
        tuple(config.seg_mlp) + (config.n_part_classes,),
        last_activation=None,
    )
    return model


def param_count(model: Model) -> int:
    """Number of trainable scalars (BN running stats excluded)."""
    return sum(p.data.size for p in model.parameters())


def lr_at(config: NetworkConfig, epoch: int) -> float:
    """Step decay: lr * decay^(epoch // every)."""
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


# ---------------------------------------------------------------------------
# training


def _mean_loss(losses):
    total = losses[0]
    for loss in losses[1:]:
        total = engine.add(total, loss)
    return engine.mul(total, Tensor(1.0 / len(losses)))


def evaluate(model: Model, dataset, task="classify") -> float:
    """Eval-mode accuracy: fraction of correct clouds, or mean per-point
    accuracy for segmentation."""
    scores = []
    for item in dataset:
        if task == "classify":
            cloud = item
            scores.append(float(model.predict_class(cloud) == cloud.label))
        else:
            cloud, labels = item
            logits = model.forward_segment(cloud)
            pred = np.argmax(logits.data, axis=1)
            scores.append(float(np.mean(pred == labels)))
    return float(np.mean(scores))


def train(
    model: Model,
    dataset,
    epochs: int,
    seed: int = DEFAULT_SEED,
    task: str = "classify",
    stop_accuracy: float | None = None,
    min_epochs: int = 1,
    lr: float | None = None,
):
    """Adam training with the step-decayed learning rate.

    dataset: clouds with labels set (classification) or (cloud,
    point_labels) pairs (segmentation). ``lr`` overrides the config rate
    (0.0 gives a frozen run). Returns the loss history as a list of
    (epoch, mean training loss, eval accuracy) records.
    """
    if not dataset:
        raise InputError("train: empty dataset")
    if task not in ("classify", "segment"):
        raise InputError(f"train: unknown task {task!r}")
    if task == "classify" and any(c.label is None for c in dataset):
        raise InputError("train: classification dataset needs labels")
    cfg = model.config
    params = model.task_parameters(task)
    adam = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    base_lr = cfg.lr if lr is None else lr
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        adam.lr = base_lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            engine.zero_grads(params)
            if task == "classify":
                logits = engine.concat(
                    [
                        model.forward_classify(dataset[i], training=True, dropout_rng=rng)
                        for i in batch
                    ],
                    axis=0,
                )
                loss = engine.cross_entropy(logits, [dataset[i].label for i in batch])
            else:
                losses = []
                for i in batch:
                    cloud, labels = dataset[i]
                    logits = model.forward_segment(cloud, training=True, dropout_rng=rng)
                    losses.append(engine.cross_entropy(logits, labels))
                loss = _mean_loss(losses)
            backward(loss)
            adam_step(params, adam)
            total += float(loss.data) * len(batch)
        mean_loss = total / len(order)
        accuracy = evaluate(model, dataset, task)
        history.append((epoch, mean_loss, accuracy))
        if (
            stop_accuracy is not None
            and accuracy >= stop_accuracy
            and epoch + 1 >= min_epochs
        ):
            break
    return history


def write_history(history, path):
    with open(path, "w") as f:
        f.write("epoch,loss,accuracy\n")
        for epoch, loss, acc in history:
            f.write(f"{epoch},{loss:.12g},{acc:.12g}\n")


def read_history(path):
    history = []
    with open(path) as f:
        header = f.readline()
        if header.strip() != "epoch,loss,accuracy":
            raise InputError(f"{path}: not a loss history file")
        for line in f:
            epoch, loss, acc = line.strip().split(",")
            history.append((int(epoch), float(loss), float(acc)))
    return history
