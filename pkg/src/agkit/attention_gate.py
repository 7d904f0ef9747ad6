"""Additive attention gate: compatibility scores from an activation map and a
coarser gating signal, normalization into coefficients, and gating of the
activations, with grid resampling and optional parallel sub-gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import avgpool2d, conv2d, he_normal, param_rng, upsample_bilinear

NORMALIZATIONS = ("sigmoid", "softmax", "min-shift")
RESAMPLE_MODES = ("up-to-x", "down-to-g")

PASSTHROUGH_BIAS = 4.0  # sigmoid(4) ~ 0.982: open gate with live gradients


@dataclass
class AttentionGateParams:
    """Parameter bundle of one gate.

    ``w_x`` maps the F_l input channels and ``w_g`` the F_g gating channels to
    F_int intermediate features via 1x1 convolutions sharing the bias
    ``b_xg``; ``psi`` collapses them to one score channel per sub-gate with
    bias ``b_psi``. With ``shared_transforms`` the sub-gates differ only in
    their psi column; otherwise each sub-gate owns a full transform stack
    (w_x/w_g then hold sub_gates*F_int output channels, applied groupwise).
    """

    w_x: Tensor
    w_g: Tensor
    b_xg: Tensor
    psi: Tensor
    b_psi: Tensor
    normalization: str = "sigmoid"
    sub_gates: int = 1
    resample: str = "up-to-x"
    shared_transforms: bool = True
    f_int: int = field(default=0)

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.resample not in RESAMPLE_MODES:
            raise ValueError(f"unknown resample mode {self.resample!r}")
        if self.sub_gates < 1:
            raise ValueError("sub_gates must be >= 1")
        if not self.f_int:
            groups = 1 if self.shared_transforms else self.sub_gates
            self.f_int = self.w_x.shape[0] // groups
        stack = self.f_int if self.shared_transforms else self.f_int * self.sub_gates
        if (
            self.w_x.shape[0] != stack
            or self.w_g.shape[0] != stack
            or self.b_xg.shape != (stack,)
            or self.psi.shape[:2] != (self.sub_gates, self.f_int)
            or self.b_psi.shape != (self.sub_gates,)
        ):
            raise ValueError(
                f"inconsistent gate shapes: w_x {self.w_x.shape}, w_g {self.w_g.shape}, "
                f"b_xg {self.b_xg.shape}, psi {self.psi.shape}, b_psi {self.b_psi.shape}"
            )

    @property
    def f_l(self) -> int:
        return self.w_x.shape[1]

    @property
    def f_g(self) -> int:
        return self.w_g.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {
            t.name: t for t in (self.w_x, self.w_g, self.b_xg, self.psi, self.b_psi)
        }


@dataclass
class AttentionMap:
    """Normalized coefficients, one channel per sub-gate, on the gated
    tensor's spatial grid."""

    alpha: Tensor
    mode: str
    scale: int | None = None

    @property
    def sub_gates(self) -> int:
        return self.alpha.shape[1]


def init_passthrough(
    f_l: int,
    f_g: int,
    f_int: int | None = None,
    sub_gates: int = 1,
    normalization: str = "sigmoid",
    resample: str = "up-to-x",
    shared_transforms: bool = True,
    name: str = "gate",
    seed: int = 0,
) -> AttentionGateParams:
    """Build gate parameters in the open-gate state: psi is zero so scores are
    spatially constant, and the bias puts sigmoid-mode coefficients at ~0.982
    everywhere. Sum-normalized modes start as the exactly uniform map."""
    if f_int is None:
        f_int = max(f_l // 2, 1)
    stack = f_int if shared_transforms else f_int * sub_gates
    w_x = he_normal((stack, f_l, 1, 1), f_l, param_rng(seed, f"{name}.w_x"))
    w_g = he_normal((stack, f_g, 1, 1), f_g, param_rng(seed, f"{name}.w_g"))
    bias = PASSTHROUGH_BIAS if normalization == "sigmoid" else 0.0
    return AttentionGateParams(
        w_x=Tensor(w_x, requires_grad=True, name=f"{name}.w_x"),
        w_g=Tensor(w_g, requires_grad=True, name=f"{name}.w_g"),
        b_xg=Tensor(np.zeros(stack), requires_grad=True, name=f"{name}.b_xg"),
        psi=Tensor(np.zeros((sub_gates, f_int, 1, 1)), requires_grad=True, name=f"{name}.psi"),
        b_psi=Tensor(np.full(sub_gates, bias), requires_grad=True, name=f"{name}.b_psi"),
        normalization=normalization,
        sub_gates=sub_gates,
        resample=resample,
        shared_transforms=shared_transforms,
        f_int=f_int,
    )


def compatibility(x: Tensor, g: Tensor, params: AttentionGateParams) -> Tensor:
    """Raw attention scores psi.(relu(Wx.x + Wg.g + b)) + b_psi, one channel
    per sub-gate. Both inputs must already live on the same spatial grid."""
    if x.shape[2:] != g.shape[2:] or x.shape[0] != g.shape[0]:
        raise ValueError(
            f"compatibility: x grid {x.shape} differs from g grid {g.shape}; resample first"
        )
    feats = ad.relu(ad.add(conv2d(x, params.w_x), conv2d(g, params.w_g, params.b_xg)))
    if params.shared_transforms:
        return conv2d(feats, params.psi, params.b_psi)
    # groupwise: sub-gate k scores its own feature group with its own psi row
    scores = []
    fi = params.f_int
    for k in range(params.sub_gates):
        group = ad.channel_slice(feats, k * fi, (k + 1) * fi)
        all_rows = conv2d(group, params.psi, params.b_psi)
        scores.append(ad.channel_slice(all_rows, k, k + 1))
    return ad.channel_concat(scores)


def normalize(q: Tensor, mode: str, scale: int | None = None) -> AttentionMap:
    """Turn raw scores into coefficients: sigmoid keeps each in [0,1];
    softmax and min-shift make each channel sum to 1 over the spatial grid."""
    if mode == "sigmoid":
        alpha = ad.sigmoid(q)
    elif mode == "softmax":
        alpha = ad.softmax(q, "spatial")
    elif mode == "min-shift":
        alpha = ad.minshift_spatial(q)
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return AttentionMap(alpha=alpha, mode=mode, scale=scale)


def apply_gate(x: Tensor, amap: AttentionMap) -> Tensor:
    """Scale activations by the coefficients. One sub-gate broadcasts over the
    channels; m sub-gates concatenate m gated copies (C becomes m*F_l)."""
    alpha = amap.alpha
    if alpha.shape[2:] != x.shape[2:] or alpha.shape[0] != x.shape[0]:
        raise ValueError(f"apply_gate: map grid {alpha.shape} does not match x {x.shape}")
    m = alpha.shape[1]
    if m == 1:
        return ad.mul(x, alpha)
    return ad.channel_concat([ad.mul(x, ad.channel_slice(alpha, k, k + 1)) for k in range(m)])


def resample_to_grid(a: Tensor, target: tuple[int, int]) -> Tensor:
    """Bring a map onto another grid: bilinear when growing, non-overlapping
    window averaging when shrinking by an integer ratio."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError(f"resample_to_grid: bad target extents ({th},{tw})")
    h, w = a.shape[2:]
    if (h, w) == (th, tw):
        return a
    if th >= h and tw >= w:
        return upsample_bilinear(a, th, tw)
    if th <= h and tw <= w:
        if h % th or w % tw:
            raise ValueError(
                f"resample_to_grid: non-integer downsample ratio from ({h},{w}) to ({th},{tw})"
            )
        return avgpool2d(a, h // th, w // tw)
    raise ValueError(f"resample_to_grid: mixed up/down resampling ({h},{w}) to ({th},{tw})")


def gated_skip(
    x: Tensor, g: Tensor, params: AttentionGateParams, scale: int | None = None
) -> tuple[Tensor, AttentionMap]:
    """Full gate pipeline for a skip connection: bring g and x onto a common
    grid, score, normalize, and gate x. Returns the gated features and the
    map (always on x's grid) for export.

    With ``resample='up-to-x'`` the scores are computed on x's grid from the
    upsampled gating signal; with ``'down-to-g'`` they are computed on g's
    coarse grid and the coefficients are upsampled instead.
    """
    if g.shape[2] > x.shape[2] or g.shape[3] > x.shape[3]:
        raise ValueError(f"gated_skip: gating signal grid {g.shape} finer than x {x.shape}")
    xh, xw = x.shape[2:]
    if params.resample == "up-to-x":
        q = compatibility(x, resample_to_grid(g, (xh, xw)), params)
        amap = normalize(q, params.normalization, scale)
    else:
        gh, gw = g.shape[2:]
        q = compatibility(resample_to_grid(x, (gh, gw)), g, params)
        coarse = normalize(q, params.normalization, scale)
        amap = AttentionMap(resample_to_grid(coarse.alpha, (xh, xw)), coarse.mode, scale)
    return apply_gate(x, amap), amap
