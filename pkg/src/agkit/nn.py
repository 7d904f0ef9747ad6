"""Spatial network ops (convolution, pooling, resampling, batch norm) and the
thin layer classes that own their parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Array, Tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, parameter name): a layer's init draws do not
    depend on which other layers exist, so gated and ungated variants of the
    same network share weights for their shared layers."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *name.encode()]))


def he_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Array:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


# ---------------------------------------------------------------------------
# functional ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with bias.

    Kernel layout is (C_out, C_in, kH, kW); output spatial extent follows
    floor((H + 2*pad - kH)/stride) + 1.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d needs rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = kernel.shape
    if c_in != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride/padding ({stride}, {padding})")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, OH, OW, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)
    wmat = kernel.data.reshape(c_out, -1).T  # (C*kh*kw, C_out)
    out = cols @ wmat
    if bias is not None:
        if bias.shape != (c_out,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out += bias.data

    def grad_fn(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, c_out)
        gk = (cols.T @ gt).T.reshape(c_out, c, kh, kw)
        dcols = (gt @ wmat.T).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                # per offset the strided targets are distinct: plain adds
                gxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += dcols[..., u, v]
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(gt.sum(axis=0))
        return grads

    out4 = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out4, parents, grad_fn, "conv2d")


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Per-window maximum; the backward pass routes the gradient to the first
    (row-major) argmax of each window."""
    if k < 1:
        raise ValueError(f"maxpool2d: window {k} must be >= 1")
    stride = k if stride is None else stride
    if stride < 1:
        raise ValueError(f"maxpool2d: stride {stride} must be >= 1")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ValueError(f"maxpool2d: window {k} exceeds input ({h},{w})")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1

    best = np.full((n, c, oh, ow), -np.inf)
    arg_u = np.zeros((n, c, oh, ow), dtype=np.intp)
    arg_v = np.zeros((n, c, oh, ow), dtype=np.intp)
    for u in range(k):
        for v in range(k):
            cand = x.data[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride]
            better = cand > best  # strict: earlier offsets win ties
            best = np.where(better, cand, best)
            arg_u[better] = u
            arg_v[better] = v

    rows = (np.arange(oh) * stride)[None, None, :, None] + arg_u
    cols = (np.arange(ow) * stride)[None, None, None, :] + arg_v
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]

    def grad_fn(g):
        gx = np.zeros(x.shape)
        if stride >= k:
            # non-overlapping windows cannot collide: direct scatter
            gx[ni, ci, rows, cols] = g
        else:
            np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx,)

    return record(best, (x,), grad_fn, "maxpool2d")


def avgpool2d(x: Tensor, kh: int, kw: int | None = None) -> Tensor:
    """Non-overlapping window averaging; extents must be divisible by the window."""
    kw = kh if kw is None else kw
    if kh < 1 or kw < 1:
        raise ValueError(f"avgpool2d: window ({kh},{kw}) must be >= 1")
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise ValueError(f"avgpool2d: extents ({h},{w}) not divisible by ({kh},{kw})")
    oh, ow = h // kh, w // kw
    out = x.data.reshape(n, c, oh, kh, ow, kw).mean(axis=(3, 5))

    def grad_fn(g):
        return (np.repeat(np.repeat(g, kh, axis=2), kw, axis=3) / (kh * kw),)

    return record(out, (x,), grad_fn, "avgpool2d")


_INTERP_CACHE: dict[tuple[int, int], Array] = {}


def _interp_matrix(n_in: int, n_out: int) -> Array:
    """(n_out, n_in) bilinear interpolation matrix, align-corners-false:
    source coordinate (d + 0.5)*scale - 0.5, clamped to the grid."""
    key = (n_in, n_out)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1.0)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = s - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - w1)
    np.add.at(mat, (rows, i1), w1)
    _INTERP_CACHE[key] = mat
    return mat


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsampling with the align-corners-false convention; applied
    as a separable pair of interpolation matrices so the backward pass is
    their exact transpose."""
    n, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"upsample_bilinear: zero output extent ({out_h},{out_w})")
    if out_h < h or out_w < w:
        raise ValueError(f"upsample_bilinear: target ({out_h},{out_w}) smaller than input ({h},{w})")
    ah = _interp_matrix(h, out_h)
    aw = _interp_matrix(w, out_w)
    out = ah @ x.data @ aw.T

    def grad_fn(g):
        return (ah.T @ g @ aw,)

    return record(out, (x,), grad_fn, "upsample_bilinear")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Array,
    running_var: Array,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel standardization. Train mode uses batch statistics (biased
    variance) and updates the running buffers in place; eval mode applies the
    stored statistics. Train mode rejects batches of one."""
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    gd = gamma.data.reshape(1, c, 1, 1)

    if training:
        if n < 2:
            raise ValueError("batch_norm: train mode needs batch size >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        m = n * h * w

        def grad_fn(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gd
            mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = inv_std.reshape(1, c, 1, 1) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
            return dx, dgamma, dbeta

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)

        def grad_fn(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            return g * gd * inv_std.reshape(1, c, 1, 1), dgamma, dbeta

    out = gd * xhat + beta.data.reshape(1, c, 1, 1)
    return record(out, (x, gamma, beta), grad_fn, "batch_norm")


# ---------------------------------------------------------------------------
# layers


class Conv2d:
    """Convolution layer owning its kernel and bias."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, name: str = "conv", seed: int = 0):
        self.stride = stride
        self.padding = padding
        rng = param_rng(seed, f"{name}.kernel")
        self.kernel = Tensor(he_normal((c_out, c_in, k, k), c_in * k * k, rng),
                             requires_grad=True, name=f"{name}.kernel")
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, self.stride, self.padding)

    def parameters(self) -> dict[str, Tensor]:
        out = {self.kernel.name: self.kernel}
        if self.bias is not None:
            out[self.bias.name] = self.bias
        return out

    def state(self) -> dict[str, Array]:
        return {}


class BatchNorm2d:
    """Batch norm layer with per-channel affine and running statistics."""

    def __init__(self, c: int, name: str = "bn"):
        self.gamma = Tensor(np.ones(c), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(c), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.training = True
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)

    def parameters(self) -> dict[str, Tensor]:
        return {self.gamma.name: self.gamma, self.beta.name: self.beta}

    def state(self) -> dict[str, Array]:
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}


class Linear:
    """Fully connected layer on flat (N,F) tensors."""

    def __init__(self, f_in: int, f_out: int, name: str = "fc", seed: int = 0):
        rng = param_rng(seed, f"{name}.weight")
        self.weight = Tensor(he_normal((f_in, f_out), f_in, rng), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(f_out), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        from .autodiff import linear

        return linear(x, self.weight, self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def state(self) -> dict[str, Array]:
        return {}


class ConvBlock:
    """conv -> batch norm -> relu, the building unit of both networks."""

    def __init__(self, c_in: int, c_out: int, k: int = 3, padding: int = 1, name: str = "block", seed: int = 0):
        self.conv = Conv2d(c_in, c_out, k, padding=padding, name=f"{name}.conv", seed=seed)
        self.bn = BatchNorm2d(c_out, name=f"{name}.bn")

    def __call__(self, x: Tensor) -> Tensor:
        from .autodiff import relu

        return relu(self.bn(self.conv(x)))

    def parameters(self) -> dict[str, Tensor]:
        return {**self.conv.parameters(), **self.bn.parameters()}

    def state(self) -> dict[str, Array]:
        return self.bn.state()
