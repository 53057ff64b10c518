"""U-Net surrogate: architecture, training, and inference bundles.

One model per velocity component. Input is a normalized height raster,
output the normalized canonical-frame component field. The encoder halves
the resolution per level while doubling channels; the decoder mirrors it
with nearest-neighbor upsampling and skip concatenations; a final 1x1
convolution maps back to one channel.

Training minimizes mean absolute error plus a small L1 weight penalty,
with plateau-based learning-rate decay and early stopping on validation
MAE (reported in denormalized m/s). The best-validation-epoch weights are
returned. Normalization statistics come from the training partition only
and are frozen into the bundle; inference never recomputes them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._logging import get_logger
from .errors import ValidationError
from .raster import (
    Direction,
    HeightGrid,
    NormStats,
    VelocityField,
    canonicalize,
    decanonicalize,
    denormalize_component,
    norm_stats_from_training,
    normalize_component,
    normalize_heights,
)

log = get_logger(__name__)

COMPONENTS = ("u", "v")


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 3
    base_channels: int = 16
    kernel: int = 5
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValidationError("depth and base_channels must be >= 1")
        if self.kernel % 2 == 0:
            raise ValidationError("kernel must be odd")

    def validate_resolution(self, resolution: int) -> None:
        if resolution % (1 << self.depth) != 0:
            raise ValidationError(
                f"resolution {resolution} not divisible by 2^depth = {1 << self.depth}"
            )


@dataclass(frozen=True)
class TrainConfig:
    component: str = "u"
    batch_size: int = 8
    initial_lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-5
    l1_lambda: float = 1e-9
    max_epochs: int = 200
    early_stop_patience: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValidationError(f"component must be one of {COMPONENTS}")
        for name in ("batch_size", "initial_lr", "plateau_factor", "plateau_patience",
                     "min_lr", "max_epochs", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.l1_lambda < 0:
            raise ValidationError("l1_lambda must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    """Layout-level partition; each layout contributes its 4 directions."""

    train: int = 200
    val: int = 20
    test: int = 20

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 1:
            raise ValidationError("all partitions need at least one layout")

    @property
    def total(self) -> int:
        return self.train + self.val + self.test

    def assign(self, layout_ids) -> dict[int, str]:
        ids = list(layout_ids)
        if len(ids) < self.total:
            raise ValidationError(f"need {self.total} layouts, got {len(ids)}")
        out = {}
        for pos, lid in enumerate(ids[: self.total]):
            if pos < self.train:
                out[lid] = "train"
            elif pos < self.train + self.val:
                out[lid] = "val"
            else:
                out[lid] = "test"
        return out


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)  # optimized objective, normalized
    val_mae: list[float] = field(default_factory=list)  # denormalized, m/s
    lr: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.val_mae)


class UNet:
    """Parameter container plus the forward graph."""

    def __init__(self, spec: UNetSpec, params: list[ad.Parameter]):
        self.spec = spec
        self.params = params
        self._by_name = {p.name: p for p in params}

    def forward(self, x: ad.Tensor, tape: ad.Tape | None = None) -> ad.Tensor:
        spec = self.spec
        p = self._by_name
        skips = []
        t = x
        for lev in range(spec.depth):
            t = ad.relu(ad.conv2d(t, p[f"enc{lev}.c1.w"], p[f"enc{lev}.c1.b"], tape), tape)
            t = ad.relu(ad.conv2d(t, p[f"enc{lev}.c2.w"], p[f"enc{lev}.c2.b"], tape), tape)
            skips.append(t)
            t = ad.maxpool2(t, tape)
        t = ad.relu(ad.conv2d(t, p["bott.c1.w"], p["bott.c1.b"], tape), tape)
        t = ad.relu(ad.conv2d(t, p["bott.c2.w"], p["bott.c2.b"], tape), tape)
        for lev in range(spec.depth - 1, -1, -1):
            t = ad.upsample2(t, tape)
            t = ad.concat_channels(skips[lev], t, tape)
            t = ad.relu(ad.conv2d(t, p[f"dec{lev}.c1.w"], p[f"dec{lev}.c1.b"], tape), tape)
            t = ad.relu(ad.conv2d(t, p[f"dec{lev}.c2.w"], p[f"dec{lev}.c2.b"], tape), tape)
        return ad.conv2d(t, p["head.w"], p["head.b"], tape)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params)

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params]).astype(np.float32)

    def load_flat_weights(self, flat: np.ndarray) -> None:
        expect = self.num_parameters()
        if flat.size != expect:
            raise ValidationError(f"weight count {flat.size} != architecture count {expect}")
        off = 0
        for p in self.params:
            n = p.data.size
            p.data = flat[off : off + n].reshape(p.data.shape).astype(np.float32)
            off += n


def _layer_plan(spec: UNetSpec) -> list[tuple[str, int, int, int]]:
    """(name, in_ch, out_ch, kernel) in build order."""
    plan = []
    ch_in = spec.in_channels
    for lev in range(spec.depth):
        ch = spec.base_channels << lev
        plan.append((f"enc{lev}.c1", ch_in, ch, spec.kernel))
        plan.append((f"enc{lev}.c2", ch, ch, spec.kernel))
        ch_in = ch
    bott = spec.base_channels << spec.depth
    plan.append(("bott.c1", ch_in, bott, spec.kernel))
    plan.append(("bott.c2", bott, bott, spec.kernel))
    ch_up = bott
    for lev in range(spec.depth - 1, -1, -1):
        ch = spec.base_channels << lev
        plan.append((f"dec{lev}.c1", ch + ch_up, ch, spec.kernel))
        plan.append((f"dec{lev}.c2", ch, ch, spec.kernel))
        ch_up = ch
    plan.append(("head", spec.base_channels, spec.out_channels, 1))
    return plan


def parameter_count(spec: UNetSpec) -> int:
    """Closed-form parameter count implied by the architecture."""
    total = 0
    for _, ci, co, k in _layer_plan(spec):
        total += co * ci * k * k + co
    return total


def build(spec: UNetSpec, seed: int) -> UNet:
    """Initialize parameters with fan-in-scaled uniform draws; deterministic."""
    rng = np.random.default_rng(seed)
    params: list[ad.Parameter] = []
    for name, ci, co, k in _layer_plan(spec):
        fan_in = ci * k * k
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(co, ci, k, k)).astype(np.float32)
        b = rng.uniform(-bound, bound, size=co).astype(np.float32)
        params.append(ad.Parameter(w, name=f"{name}.w"))
        params.append(ad.Parameter(b, name=f"{name}.b", is_bias=True))
    return UNet(spec, params)


@dataclass
class ModelBundle:
    """Everything inference needs, serialized bit-exact by the formats layer."""

    spec: UNetSpec
    weights: np.ndarray  # flat float32, build order
    stats: NormStats
    component: str
    metadata: dict

    _net: UNet | None = None

    def __post_init__(self):
        expect = parameter_count(self.spec)
        if self.weights.size != expect:
            raise ValidationError(f"weight count {self.weights.size} != expected {expect}")
        if self.component not in COMPONENTS:
            raise ValidationError(f"bad component {self.component!r}")

    def net(self) -> UNet:
        if self._net is None:
            net = build(self.spec, seed=0)
            net.load_flat_weights(self.weights)
            self._net = net
        return self._net

    @property
    def resolution(self) -> int:
        return int(self.metadata["resolution"])


def _forward_batch(net: UNet, x: np.ndarray) -> np.ndarray:
    """x (B, H, W) normalized heights -> (B, H, W) normalized component."""
    t = ad.Tensor(x[..., None], dtype=np.float32)
    out = net.forward(t, tape=None)
    return out.data[..., 0]


def predict(bundle: ModelBundle, grid: HeightGrid) -> np.ndarray:
    """Canonical-frame component field in m/s. Deterministic, sub-second."""
    if grid.resolution != bundle.resolution:
        raise ValidationError(
            f"grid resolution {grid.resolution} != model resolution {bundle.resolution}"
        )
    xn = normalize_heights(grid.data, bundle.stats)
    yn = _forward_batch(bundle.net(), xn[None])[0]
    return denormalize_component(yn, bundle.stats, bundle.component)


def predict_directional(
    bundles: dict[str, ModelBundle], grid: HeightGrid, direction: Direction
) -> VelocityField:
    """World-frame field: canonicalize, predict u and v, rotate back."""
    if set(bundles) != set(COMPONENTS):
        raise ValidationError("need bundles for both 'u' and 'v'")
    canon = canonicalize(grid, direction)
    u = predict(bundles["u"], canon)
    v = predict(bundles["v"], canon)
    return decanonicalize(VelocityField(u, v), direction)


def train(
    dataset,
    split: SplitSpec | dict[int, str] | None,
    tcfg: TrainConfig,
    stats: NormStats | None = None,
) -> tuple[ModelBundle, TrainingHistory]:
    """Train one component model on canonical-frame (grid, field) cases.

    `dataset` is any object with `cases(partition, assignment) -> keys` and
    `load_case(key) -> (heights, u, v)`; see dataset.WindDataset. `split`
    may be a SplitSpec (assigned over the dataset's layouts in order), an
    explicit layout->partition mapping, or None to use the assignment
    recorded in the dataset manifest.
    """
    if split is None:
        assignment = dataset.split_assignment()
    elif isinstance(split, dict):
        assignment = split
    else:
        assignment = split.assign(dataset.layout_ids())
    train_keys = dataset.cases("train", assignment)
    val_keys = dataset.cases("val", assignment)
    if not train_keys or not val_keys:
        raise ValidationError("empty train or validation partition")

    comp_idx = 1 if tcfg.component == "u" else 2
    train_cases = [dataset.load_case(k) for k in train_keys]
    grids = [c[0] for c in train_cases]
    if stats is None:
        stats = norm_stats_from_training(
            grids, [c[1] for c in train_cases], [c[2] for c in train_cases]
        )

    x_train = np.stack([normalize_heights(g, stats) for g in grids])
    y_train = np.stack(
        [normalize_component(c[comp_idx], stats, tcfg.component) for c in train_cases]
    )
    val_cases = [dataset.load_case(k) for k in val_keys]
    x_val = np.stack([normalize_heights(c[0], stats) for c in val_cases])
    y_val_ms = np.stack([c[comp_idx] for c in val_cases])  # m/s

    resolution = x_train.shape[1]
    spec = UNetSpec()
    spec.validate_resolution(resolution)
    net = build(spec, tcfg.seed)
    # shuffle stream independent of the init stream
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0x5F1E]))

    history = TrainingHistory()
    lr = tcfg.initial_lr
    best_val = np.inf
    best_weights = net.flat_weights()
    best_epoch = 0
    epochs_since_best = 0
    t0 = time.perf_counter()
    n_train = len(train_keys)

    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(n_train)
        losses = []
        for start in range(0, n_train, tcfg.batch_size):
            sel = order[start : start + tcfg.batch_size]
            xb = ad.Tensor(x_train[sel][..., None], dtype=np.float32)
            yb = ad.Tensor(y_train[sel][..., None], dtype=np.float32)
            tape = ad.Tape()
            pred = net.forward(xb, tape)
            loss = ad.add(
                ad.mae_loss(pred, yb, tape), ad.l1_penalty(net.params, tcfg.l1_lambda, tape), tape
            )
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch} (component {tcfg.component})"
                )
            ad.zero_grads(net.params)
            tape.backward(loss)
            ad.adam_step(net.params, lr)
            losses.append(lval)

        val_mae = _validation_mae(net, x_val, y_val_ms, stats, tcfg.component, tcfg.batch_size)
        history.train_loss.append(float(np.mean(losses)))
        history.val_mae.append(val_mae)
        history.lr.append(lr)
        if val_mae < best_val:
            best_val = val_mae
            best_weights = net.flat_weights()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best % tcfg.plateau_patience == 0:
                lr = max(lr * tcfg.plateau_factor, tcfg.min_lr)
        log.info(
            "epoch %d: train %.5f val %.5f m/s lr %.2e", epoch, history.train_loss[-1], val_mae, lr
        )
        if epochs_since_best >= tcfg.early_stop_patience:
            break

    metadata = {
        "seed": tcfg.seed,
        "epochs_run": history.epochs,
        "best_epoch": best_epoch,
        "final_val_mae": best_val,
        "resolution": resolution,
        "train_cases": n_train,
        "train_seconds": round(time.perf_counter() - t0, 3),
        "dataset_hash": getattr(dataset, "dataset_hash", ""),
    }
    bundle = ModelBundle(spec, best_weights, stats, tcfg.component, metadata)
    return bundle, history


def _validation_mae(net, x_val, y_val_ms, stats, component, batch_size) -> float:
    maes = []
    for start in range(0, len(x_val), batch_size):
        xb = x_val[start : start + batch_size]
        yn = _forward_batch(net, xb)
        pred_ms = denormalize_component(yn, stats, component)
        maes.extend(
            np.abs(pred_ms[i] - y_val_ms[start + i]).mean() for i in range(len(xb))
        )
    return float(np.mean(maes))
