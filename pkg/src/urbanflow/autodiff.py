"""Minimal dense-tensor engine with reverse-mode differentiation.

Exactly the kernels the encoder-decoder network needs, nothing more:
same-padding stride-1 convolution, 2x2 max pooling, nearest-neighbor 2x
upsampling, channel concatenation, relu, mean-absolute-error loss, an L1
weight penalty, and Adam. Data lives in plain numpy arrays (float32 for
training, float64 for gradient checking).

Activations are channels-LAST, shape (batch, height, width, channels).
On CPU this keeps the innermost convolution axis contiguous, so the whole
conv reduces to 25 BLAS matmuls over shifted views instead of a strided
im2col gather (measured 3-5x faster here). Convolution weights keep the
conventional (out_ch, in_ch, k, k) layout.

Recording model: ops take an optional `tape`. When given, each op appends
a node holding the backward closure; `Tape.backward(root)` walks the nodes
in exact reverse execution order and accumulates gradients additively into
`Tensor.grad`, so fan-out just works. With `tape=None` ops run forward
only, which is the inference fast path.

Subgradient conventions are pinned for determinism: d|x|/dx = 0 at x = 0,
drelu/dx = 0 at x = 0, and max-pool ties route all gradient to the first
cell of the window in row-major order.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError

DEBUG_FINITE = bool(int(os.environ.get("UF_DEBUG_FINITE", "0")))


def set_debug_finite(flag: bool) -> None:
    """Toggle the per-op NaN/Inf assertion (slow; tests switch it on)."""
    global DEBUG_FINITE
    DEBUG_FINITE = flag


def _check_finite(arr: np.ndarray, op: str) -> None:
    if DEBUG_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op}")


class Tensor:
    """Dense array plus gradient buffer. Shape (B, H, W, C) or lower rank."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def add_grad(self, g: np.ndarray, owned: bool = False) -> None:
        """Accumulate into the gradient buffer.

        `owned=True` promises `g` is a fresh array the caller will not touch
        again, letting the first accumulation adopt it without a copy.
        """
        if self.grad is None:
            if owned and g.dtype == self.data.dtype and g.flags.owndata:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable tensor with Adam state."""

    __slots__ = ("name", "m", "v", "step", "is_bias")

    def __init__(self, data, name: str = "", is_bias: bool = False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.is_bias = is_bias
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


class Tape:
    """Ordered record of executed ops; backward runs them in reverse."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, object]] = []

    def record(self, out: Tensor, backward) -> None:
        self._nodes.append((out, backward))

    def __len__(self):
        return len(self._nodes)

    def backward(self, root: Tensor) -> None:
        if root.data.size != 1:
            raise ValidationError("backward root must be a scalar")
        root.grad = np.ones_like(root.data)
        for out, bwd in reversed(self._nodes):
            if out.grad is None:
                continue  # branch not reaching the root
            bwd(out.grad)


def _track(tape, inputs) -> bool:
    return tape is not None and any(t.requires_grad for t in inputs)


# ---------------------------------------------------------------------------
# Convolution kernels (channels-last shift-accumulate)
# ---------------------------------------------------------------------------

def _conv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x (B,H,W,Cin), w (Cout,Cin,k,k) -> (B,H,W,Cout), zero same-padding."""
    k = w.shape[2]
    p = k // 2
    B, H, W, _ = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    wt = w.transpose(2, 3, 1, 0)  # (k, k, Cin, Cout)
    out = np.zeros((B, H, W, co), dtype=x.dtype)
    tmp = np.empty_like(out)
    for dy in range(k):
        for dx in range(k):
            xs = xp[:, dy : dy + H, dx : dx + W, :]
            np.matmul(xs, np.ascontiguousarray(wt[dy, dx]), out=tmp)
            out += tmp
    return out


def _conv_weight_grad(xp: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    """dL/dw for _conv_forward from the padded input; returns (Cout, Cin, k, k)."""
    p = k // 2
    H, W = xp.shape[1] - 2 * p, xp.shape[2] - 2 * p
    ci, co = xp.shape[3], g.shape[3]
    gc = np.ascontiguousarray(g)
    dw = np.empty((k, k, ci, co), dtype=g.dtype)
    for dy in range(k):
        for dx in range(k):
            xs = xp[:, dy : dy + H, dx : dx + W, :]
            # batched per-row gemms, reduced over batch and rows
            dw[dy, dx] = np.matmul(xs.swapaxes(2, 3), gc).sum(axis=(0, 1))
    return dw.transpose(3, 2, 0, 1)


def conv2d(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Same-padding stride-1 convolution. w: (Cout, Cin, k, k), k odd."""
    kh, kw = w.shape[2], w.shape[3]
    if kh != kw or kh % 2 == 0:
        raise ValidationError(f"kernel must be square and odd, got {w.shape}")
    if x.data.ndim != 4 or x.shape[3] != w.shape[1]:
        raise ValidationError(f"conv2d shape mismatch: input {x.shape}, weights {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValidationError(f"bias shape {b.shape} != ({w.shape[0]},)")
    out_data = _conv_forward(x.data, w.data)
    out_data += b.data
    _check_finite(out_data, "conv2d")
    out = Tensor(out_data, requires_grad=_track(tape, (x, w, b)), dtype=out_data.dtype)
    if out.requires_grad:
        p = kh // 2
        xpad = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)))

        def backward(g):
            if b.requires_grad:
                b.add_grad(g.sum(axis=(0, 1, 2)), owned=True)
            if w.requires_grad:
                w.add_grad(_conv_weight_grad(xpad, g, kh), owned=True)
            if x.requires_grad:
                w_flip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                x.add_grad(_conv_forward(g, w_flip), owned=True)

        tape.record(out, backward)
    return out


def maxpool2(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first window cell."""
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValidationError(f"maxpool2 requires even spatial dims, got {H}x{W}")
    win = (
        x.data.reshape(B, H // 2, 2, W // 2, 2, C)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(B, H // 2, W // 2, 4, C)
    )
    idx = win.argmax(axis=3)
    out_data = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    out = Tensor(out_data, requires_grad=_track(tape, (x,)), dtype=out_data.dtype)
    if out.requires_grad:

        def backward(g):
            gwin = np.zeros((B, H // 2, W // 2, 4, C), dtype=g.dtype)
            np.put_along_axis(gwin, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
            gx = (
                gwin.reshape(B, H // 2, W // 2, 2, 2, C)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(B, H, W, C)
            )
            x.add_grad(gx, owned=True)

        tape.record(out, backward)
    return out


def upsample2(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Nearest-neighbor 2x upsampling."""
    out_data = x.data.repeat(2, axis=1).repeat(2, axis=2)
    out = Tensor(out_data, requires_grad=_track(tape, (x,)), dtype=out_data.dtype)
    if out.requires_grad:
        B, H, W, C = x.shape

        def backward(g):
            x.add_grad(g.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4)), owned=True)

        tape.record(out, backward)
    return out


def concat_channels(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape[:3] != b.shape[:3]:
        raise ValidationError(f"concat_channels mismatch: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=3)
    out = Tensor(out_data, requires_grad=_track(tape, (a, b)), dtype=out_data.dtype)
    if out.requires_grad:
        ca = a.shape[3]

        def backward(g):
            if a.requires_grad:
                a.add_grad(g[..., :ca])
            if b.requires_grad:
                b.add_grad(g[..., ca:])

        tape.record(out, backward)
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out_data = np.maximum(x.data, 0)
    out = Tensor(out_data, requires_grad=_track(tape, (x,)), dtype=out_data.dtype)
    if out.requires_grad:

        def backward(g):
            x.add_grad(g * (x.data > 0), owned=True)

        tape.record(out, backward)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ValidationError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=_track(tape, (a, b)), dtype=a.dtype)
    if out.requires_grad:

        def backward(g):
            if a.requires_grad:
                a.add_grad(g)
            if b.requires_grad:
                b.add_grad(g)

        tape.record(out, backward)
    return out


def mae_loss(pred: Tensor, target: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean absolute error over every element (all pixels and batch items)."""
    if pred.shape != target.shape:
        raise ValidationError(f"mae_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out_data = np.array(np.abs(diff).mean(), dtype=pred.dtype)
    _check_finite(out_data, "mae_loss")
    out = Tensor(out_data, requires_grad=_track(tape, (pred, target)), dtype=pred.dtype)
    if out.requires_grad:
        scale = 1.0 / diff.size

        def backward(g):
            sgn = np.sign(diff) * (g * scale)
            if pred.requires_grad:
                pred.add_grad(sgn)
            if target.requires_grad:
                target.add_grad(-sgn)

        tape.record(out, backward)
    return out


def l1_penalty(params, lam: float, tape: Tape | None = None) -> Tensor:
    """lam * sum|w| over weight parameters; biases are skipped."""
    if lam < 0:
        raise ValidationError("l1 lambda must be >= 0")
    weights = [p for p in params if not p.is_bias]
    dtype = weights[0].dtype if weights else np.float32
    total = sum(float(np.abs(p.data).sum()) for p in weights)
    out = Tensor(np.array(lam * total, dtype=dtype), requires_grad=tape is not None, dtype=dtype)
    if out.requires_grad and tape is not None:

        def backward(g):
            for p in weights:
                if p.requires_grad:
                    p.add_grad((lam * g) * np.sign(p.data))

        tape.record(out, backward)
    return out


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place Adam update; parameters with no gradient are left untouched."""
    for p in params:
        if p.grad is None:
            continue
        p.step += 1
        g = p.grad
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        mhat = p.m / (1.0 - beta1**p.step)
        vhat = p.v / (1.0 - beta2**p.step)
        p.data -= np.asarray(lr * mhat / (np.sqrt(vhat) + eps), dtype=p.data.dtype)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def grad_check(
    build_loss,
    tensors,
    step_scale: float = 1e-4,
    max_samples: int = 64,
    seed: int = 0,
    atol: float = 1e-6,
):
    """Max relative error between tape gradients and central finite differences.

    `build_loss(tape)` must construct the graph from `tensors` and return the
    scalar loss. Tensors are promoted to float64 in place for the check. For
    large tensors a seeded subset of `max_samples` coordinates is differenced;
    small tensors are checked exhaustively. `atol` floors the denominator so
    structurally-zero gradients do not trip on finite-difference roundoff.
    """
    for t in tensors:
        t.data = t.data.astype(np.float64)
        t.zero_grad()
    tape = Tape()
    root = build_loss(tape)
    tape.backward(root)
    analytic = [
        np.array(t.grad, copy=True) if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]
    for t in tensors:
        t.zero_grad()

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= max_samples:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_samples, replace=False)
        for c in coords:
            orig = flat[c]
            h = step_scale * max(1.0, abs(orig))
            flat[c] = orig + h
            lp = float(build_loss(None).data)
            flat[c] = orig - h
            lm = float(build_loss(None).data)
            flat[c] = orig
            fd = (lp - lm) / (2.0 * h)
            an = float(ga.reshape(-1)[c])
            rel = abs(an - fd) / max(abs(an), abs(fd), atol)
            max_rel = max(max_rel, rel)
    return max_rel
