"""Per-scan coordinate network: model, gradients, optimizer, training, synthesis.

A small fully-connected network maps the 5-D view/pixel coordinates of a
projection sample to predicted counts in every energy window.  It is
trained from scratch on the measured views of a single scan (no external
data), with a random 20% of pixels held out for model selection, then
evaluated at the skipped views' coordinates to synthesize the missing
projections.

Everything numerical is explicit here: forward pass, reverse-mode
gradients, Adam, and the plateau scheduler are hand-rolled so their unit
behavior can be pinned exactly in tests.  Training runs in float32;
building a model with ``dtype=np.float64`` gives the precision the
finite-difference gradient checks need.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .geometry import ProjectionStack, ScanGeometry, WINDOW_NAMES, coordinate_grid


def _encode_raw(coords: np.ndarray) -> np.ndarray:
    return coords


def _encode_fourier(coords: np.ndarray, n_frequencies: int) -> np.ndarray:
    """sin/cos features of u and v at geometric frequencies; angle and radius pass through.

    Width: 4 * n_frequencies + 3.
    """
    uv = coords[:, :2]
    rest = coords[:, 2:]
    feats = [rest]
    for k in range(n_frequencies):
        w = (2.0 ** k) * math.pi
        feats.append(np.sin(w * uv))
        feats.append(np.cos(w * uv))
    return np.concatenate(feats, axis=1)


def encoded_width(encoding: str, n_frequencies: int) -> int:
    if encoding == "raw":
        return 5
    if encoding == "fourier":
        if n_frequencies < 1:
            raise ValueError("fourier encoding needs at least 1 frequency")
        return 4 * n_frequencies + 3
    raise ValueError(f"unknown encoding {encoding!r}")


@dataclass
class FieldModel:
    """Affine-rectifier chain with a linear multi-channel output head."""

    weights: list
    biases: list
    encoding: str = "raw"
    n_frequencies: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching weight/bias lists")
        if self.weights[0].shape[0] != encoded_width(self.encoding, self.n_frequencies):
            raise ValueError("first layer width does not match the input encoding")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width must match layer output width")
        for wp, wn in zip(self.weights, self.weights[1:]):
            if wp.shape[1] != wn.shape[0]:
                raise ValueError("consecutive layer widths disagree")

    @property
    def n_windows(self) -> int:
        return self.biases[-1].shape[0]

    @property
    def layer_widths(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def encode(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords)
        if coords.ndim != 2 or coords.shape[1] != 5:
            raise ValueError("coordinates must be (n, 5)")
        if self.encoding == "fourier":
            out = _encode_fourier(coords, self.n_frequencies)
        else:
            out = _encode_raw(coords)
        return np.ascontiguousarray(out, dtype=self.dtype)

    def parameters(self) -> list:
        """Flat list alternating weight, bias per layer; shared references."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy_parameters(self) -> list:
        return [p.copy() for p in self.parameters()]

    def load_parameters(self, params: list) -> None:
        own = self.parameters()
        if len(own) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, params):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    @classmethod
    def create(cls, n_hidden: int = 12, hidden_width: int = 256, n_windows: int = 3,
               encoding: str = "raw", n_frequencies: int = 0, seed=0,
               dtype=np.float32) -> "FieldModel":
        """Fresh model with uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.

        That range gives weight variance 2/fan_in, sized for rectifier
        layers.  ``seed`` may be an int or a numpy SeedSequence.
        """
        if n_hidden < 1 or hidden_width < 1 or n_windows < 1:
            raise ValueError("layer counts and widths must be positive")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rng = np.random.default_rng(ss)
        widths = [encoded_width(encoding, n_frequencies)] + [hidden_width] * n_hidden + [n_windows]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths, widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights=weights, biases=biases, encoding=encoding,
                   n_frequencies=n_frequencies)


def forward(model: FieldModel, coords: np.ndarray, keep: bool = False):
    """Predicted counts per window for a coordinate batch.

    With ``keep=True`` returns ``(pred, cache)`` where the cache holds the
    layer inputs and rectifier masks that ``backward`` consumes.
    """
    for w in model.weights:
        if not np.isfinite(w).all():
            raise NumericError("model weights are not finite")
    x = model.encode(coords)
    if x.shape[0] == 0:
        raise ValueError("empty coordinate batch")
    inputs = []
    masks = []
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        if keep:
            inputs.append(x)
        z = x @ w + b
        if i < n_layers - 1:
            mask = z > 0
            x = np.where(mask, z, z.dtype.type(0))
            if keep:
                masks.append(mask)
        else:
            x = z
    if keep:
        return x, (inputs, masks)
    return x


def backward(model: FieldModel, cache, grad_out: np.ndarray):
    """Parameter gradients given output gradients; returns (grads_w, grads_b).

    Exact reverse-mode differentiation of the forward chain; the cache must
    come from ``forward(..., keep=True)`` on the same batch.
    """
    inputs, masks = cache
    if len(inputs) != len(model.weights):
        raise ValueError("cache does not match the model depth")
    g = np.ascontiguousarray(grad_out, dtype=model.dtype)
    if g.shape != (inputs[0].shape[0], model.n_windows):
        raise ValueError(f"gradient shape {g.shape} does not match the batch output")
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = inputs[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ model.weights[i].T) * masks[i - 1]
    return grads_w, grads_b


def huber_loss(pred: np.ndarray, target: np.ndarray, delta: float = 1.0):
    """Mean Huber loss over all elements and its gradient wrt predictions.

    Quadratic within ``delta`` of the target, linear outside; the gradient
    is the residual clamped to [-delta, delta], divided by the element
    count.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes must match")
    a = pred.astype(np.float64) - target.astype(np.float64)
    absa = np.abs(a)
    quad = absa < delta
    loss = float(np.where(quad, 0.5 * a * a, delta * (absa - 0.5 * delta)).mean())
    grad = np.clip(a, -delta, delta) / a.size
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params: list, grads: list, state: AdamState, lr: float):
    """One Adam update, in place; returns ``(params, state)``.

    Standard bias-corrected moment estimates; at the first step the update
    magnitude is close to ``lr`` for any gradient scale well above ``eps``.
    """
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter, gradient, and state lengths must match")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping: halve lr after patience stale epochs."""

    lr: float
    factor: float = 0.5
    patience: int = 10
    min_lr: float = 1e-5
    rel_threshold: float = 1e-6
    best: float = math.inf
    stale: int = 0


def plateau_scheduler(state: PlateauState, val_loss: float) -> float:
    """Record one epoch's validation loss; returns the lr for the next epoch.

    An epoch improves only if it beats the best seen by more than the
    relative threshold; ``patience`` consecutive non-improving epochs
    multiply the lr by ``factor``, floored at ``min_lr``.
    """
    if state.lr <= 0:
        raise ValueError("learning rate must be positive")
    if val_loss < state.best * (1.0 - state.rel_threshold):
        state.best = val_loss
        state.stale = 0
    else:
        state.stale += 1
        if state.stale >= state.patience:
            state.lr = max(state.lr * state.factor, state.min_lr)
            state.stale = 0
    return state.lr


@dataclass
class TrainConfig:
    """Optimization hyperparameters plus the network shape to train."""

    lr0: float = 0.001
    batch_size: int = 10_000
    epochs: int = 200
    huber_delta: float = 1.0
    val_fraction: float = 0.2
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_min_lr: float = 1e-5
    plateau_rel_threshold: float = 1e-6
    n_hidden: int = 12
    hidden_width: int = 256
    encoding: str = "raw"
    n_frequencies: int = 0
    upsample: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("validation fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epoch count must be positive")
        if self.huber_delta <= 0:
            raise ValueError("huber delta must be positive")
        if self.lr0 <= 0:
            raise ValueError("initial learning rate must be positive")
        if self.n_hidden < 1 or self.hidden_width < 1:
            raise ValueError("layer counts and widths must be positive")
        if self.upsample < 1:
            raise ValueError("upsample factor must be positive")
        encoded_width(self.encoding, self.n_frequencies)  # rejects unknown encodings

    def to_dict(self) -> dict:
        return {
            "lr0": self.lr0, "batch_size": self.batch_size, "epochs": self.epochs,
            "huber_delta": self.huber_delta, "val_fraction": self.val_fraction,
            "plateau_factor": self.plateau_factor, "plateau_patience": self.plateau_patience,
            "plateau_min_lr": self.plateau_min_lr,
            "plateau_rel_threshold": self.plateau_rel_threshold,
            "n_hidden": self.n_hidden, "hidden_width": self.hidden_width,
            "encoding": self.encoding, "n_frequencies": self.n_frequencies,
            "upsample": self.upsample, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(eq=False)
class TrainReport:
    """Per-epoch losses and learning rates, best epoch, wall time."""

    train_loss: list
    val_loss: list
    lr: list
    best_epoch: int
    wall_time_s: float

    def __eq__(self, other):
        # wall time is measurement noise, not an outcome; determinism
        # comparisons must ignore it
        if not isinstance(other, TrainReport):
            return NotImplemented
        return (self.train_loss == other.train_loss
                and self.val_loss == other.val_loss
                and self.lr == other.lr
                and self.best_epoch == other.best_epoch)


def prepare_targets(measured: ProjectionStack, upsample: int = 2):
    """Coordinates and per-window targets for every measured pixel.

    Each view's grid is upsampled by nearest-neighbor duplication, so each
    source pixel appears ``upsample**2`` times with its raw count value, and
    the rows align 1:1 with ``coordinate_grid`` at the same upsample.
    Views are processed in ascending global index order, giving a canonical
    row ordering regardless of how the stack was assembled.

    Returns ``(coords (n, 5) float64, targets (n, n_windows) float64)``.
    """
    if len(measured.view_indices) == 0:
        raise ValueError("empty projection stack")
    g = measured.geometry
    coords = []
    targets = []
    for k, v in enumerate(measured.view_indices):
        coords.append(coordinate_grid(g, int(v), upsample))
        win = np.asarray(measured.windows[:, k], dtype=np.float64)
        up = np.repeat(np.repeat(win, upsample, axis=1), upsample, axis=2)
        targets.append(up.reshape(win.shape[0], -1).T)
    return np.concatenate(coords), np.concatenate(targets)


def downsample_mean(fine: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over factor x factor tiles of the trailing two axes."""
    *lead, nu, nv = fine.shape
    if nu % factor or nv % factor:
        raise ValueError("grid is not divisible by the downsample factor")
    blocked = fine.reshape(*lead, nu // factor, factor, nv // factor, factor)
    return blocked.mean(axis=(-3, -1))


def _eval_loss(model: FieldModel, coords, targets, delta, chunk=65536) -> float:
    """Mean Huber loss over a dataset, streamed in chunks."""
    total = 0.0
    n_elem = 0
    for i in range(0, len(coords), chunk):
        pred = forward(model, coords[i : i + chunk])
        tgt = targets[i : i + chunk]
        loss, _ = huber_loss(pred, tgt, delta)
        total += loss * tgt.size
        n_elem += tgt.size
    return total / n_elem


def train(measured: ProjectionStack, geometry: ScanGeometry, config: TrainConfig):
    """Fit a field model to one scan's measured views; returns (model, report).

    All measured pixels are pooled, shuffled once with a seeded generator,
    and split into a training set and a held-out validation set that never
    enters a gradient step.  Each epoch reshuffles the training set with an
    epoch-derived seed, steps Adam per mini-batch, then scores the
    validation set; the returned model carries the parameters of the epoch
    with the lowest validation loss.
    """
    if len(measured.view_indices) < 2:
        raise ValueError("need at least 2 measured views to train")
    if geometry is not measured.geometry and geometry.to_dict() != measured.geometry.to_dict():
        raise ValueError("geometry does not match the measured stack")
    t0 = time.perf_counter()
    coords64, targets64 = prepare_targets(measured, config.upsample)
    coords = coords64.astype(np.float32)
    targets = targets64.astype(np.float32)
    n = len(coords)
    n_val = int(round(config.val_fraction * n))
    if n_val < 1 or n - n_val < 1:
        raise ValueError("dataset too small for the validation split")
    perm = np.random.default_rng(np.random.SeedSequence((config.seed, 0))).permutation(n)
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:]

    model = FieldModel.create(
        n_hidden=config.n_hidden, hidden_width=config.hidden_width,
        n_windows=measured.n_windows, encoding=config.encoding,
        n_frequencies=config.n_frequencies,
        seed=np.random.SeedSequence((config.seed, 1)), dtype=np.float32,
    )
    params = model.parameters()
    opt = AdamState.for_params(params)
    sched = PlateauState(
        lr=config.lr0, factor=config.plateau_factor, patience=config.plateau_patience,
        min_lr=config.plateau_min_lr, rel_threshold=config.plateau_rel_threshold,
    )

    train_hist, val_hist, lr_hist = [], [], []
    best_val = math.inf
    best_epoch = -1
    best_params = model.copy_parameters()
    for epoch in range(config.epochs):
        lr_epoch = sched.lr
        order = np.random.default_rng(np.random.SeedSequence((config.seed, 2, epoch))).permutation(tr_idx)
        total = 0.0
        n_elem = 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            pred, cache = forward(model, coords[idx], keep=True)
            loss, grad = huber_loss(pred, targets[idx], config.huber_delta)
            gw, gb = backward(model, cache, grad)
            grads = []
            for a, b in zip(gw, gb):
                grads.extend((a, b))
            adam_step(params, grads, opt, lr_epoch)
            total += loss * pred.size
            n_elem += pred.size
        train_loss = total / n_elem
        val_loss = _eval_loss(model, coords[val_idx], targets[val_idx], config.huber_delta)
        train_hist.append(train_loss)
        val_hist.append(val_loss)
        lr_hist.append(lr_epoch)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            err = NumericError(f"training diverged at epoch {epoch}")
            err.report = TrainReport(train_hist, val_hist, lr_hist, best_epoch,
                                     time.perf_counter() - t0)
            raise err
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = model.copy_parameters()
        plateau_scheduler(sched, val_loss)
    model.load_parameters(best_params)
    report = TrainReport(
        train_loss=train_hist, val_loss=val_hist, lr=lr_hist,
        best_epoch=best_epoch, wall_time_s=time.perf_counter() - t0,
    )
    return model, report


def synthesize(model: FieldModel, geometry: ScanGeometry, skipped, upsample: int = 2,
               chunk: int = 65536, window_names=None) -> ProjectionStack:
    """Predict full projections at the skipped views.

    The field is evaluated on each view's upsampled grid and reduced to the
    native detector grid by block mean, which exactly inverts the
    nearest-neighbor duplication used for training targets.  Negative
    predictions are clamped to zero counts.
    """
    skipped = np.asarray(skipped, dtype=np.intp)
    if skipped.size == 0:
        raise ValueError("no views to synthesize")
    nu, nv = geometry.det_nu, geometry.det_nv
    out = np.empty((model.n_windows, len(skipped), nu, nv))
    for k, v in enumerate(skipped):
        coords = coordinate_grid(geometry, int(v), upsample)
        pred = np.empty((len(coords), model.n_windows), dtype=np.float64)
        for i in range(0, len(coords), chunk):
            pred[i : i + chunk] = forward(model, coords[i : i + chunk])
        fine = pred.T.reshape(model.n_windows, nu * upsample, nv * upsample)
        out[:, k] = downsample_mean(fine, upsample)
    np.maximum(out, 0.0, out=out)
    if window_names is None:
        if model.n_windows <= len(WINDOW_NAMES):
            window_names = WINDOW_NAMES[: model.n_windows]
        else:
            window_names = tuple(f"w{i}" for i in range(model.n_windows))
    return ProjectionStack(
        geometry=geometry,
        view_indices=skipped,
        windows=out,
        window_names=tuple(window_names),
        kind="synthesized",
    )
