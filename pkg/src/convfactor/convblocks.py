"""Factorized convolution layers and the reference forward pass.

A decomposition of a reshaped kernel turns one dense conv2d into a short
chain of cheap layers:

* CP block: 1x1 (S->R), depthwise DxD with R groups, 1x1 (R->T);
* hybrid block: 1x1 (S->R1), 1x1 (R1->R), depthwise DxD, 1x1 (R->R2),
  1x1 (R2->T);
* SVD block (1x1 kernels only): 1x1 (S->R), 1x1 (R->T).

The chain computes exactly the convolution with the kernel the model
reconstructs, which is what the equivalence tests assert.  The reference
forward pass is a direct evaluation of the convolution sum with zero
padding, intended for verification, not speed.
"""

from dataclasses import dataclass

import numpy as np

from .tensorops import reconstruct_cp, restore_kernel

__all__ = [
    "ConvSpec",
    "LayerDescriptor",
    "conv2d_reference",
    "layer_forward",
    "compose_forward",
    "emit_cpd_block",
    "emit_tkd_cpd_block",
    "emit_svd_block",
    "block_to_kernel",
    "count_params_flops",
]


@dataclass
class ConvSpec:
    """Shape metadata of one convolution layer."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    pad: int = 0
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError("kernel_size and stride must be >= 1, pad >= 0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.out_channels,):
                raise ValueError("bias must have one entry per output channel")


@dataclass
class LayerDescriptor:
    """One conv2d layer: weights shaped (out, in/groups, k_h, k_w)."""

    in_channels: int
    out_channels: int
    kernel: tuple
    weights: np.ndarray
    groups: int = 1
    stride: int = 1
    pad: int = 0
    bias: np.ndarray | None = None
    kind: str = "conv2d"

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("channel counts must be divisible by groups")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel[0],
            self.kernel[1],
        )
        if self.weights.shape != expected:
            raise ValueError(
                f"weights shape {self.weights.shape} != expected {expected}"
            )
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.out_channels,):
                raise ValueError("bias must have one entry per output channel")

    def param_count(self):
        n = self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


def _out_hw(h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(
            f"kernel {kh}x{kw} with stride {stride}, pad {pad} does not fit "
            f"a {h}x{w} input"
        )
    return ho, wo


def _conv_hwc(x, kernel, stride, pad):
    """Direct convolution; x is (H, W, S), kernel is (kh, kw, S, T)."""
    h, w, s = x.shape
    kh, kw, ks, t = kernel.shape
    if ks != s:
        raise ValueError(f"kernel expects {ks} input channels, got {s}")
    ho, wo = _out_hw(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((ho, wo, t))
    for i in range(kh):
        for j in range(kw):
            window = xp[
                i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride,
                :,
            ]
            out += window @ kernel[i, j]
    return out


def conv2d_reference(x, spec, kernel):
    """Reference conv2d: output[h', w', t] = sum over taps and channels of
    kernel[i, j, s, t] * x at the strided, zero-padded tap position.

    x is (H, W, S); kernel is (D, D, S, T); output is (H', W', T) with
    ``H' = (H + 2*pad - D) // stride + 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("input must be (H, W, S)")
    if kernel.ndim != 4:
        raise ValueError("kernel must be (D, D, S, T)")
    d = spec.kernel_size
    if kernel.shape[:2] != (d, d):
        raise ValueError(f"kernel spatial shape {kernel.shape[:2]} != ({d}, {d})")
    if kernel.shape[2] != spec.in_channels or x.shape[2] != spec.in_channels:
        raise ValueError("input-channel mismatch between x, kernel and spec")
    if kernel.shape[3] != spec.out_channels:
        raise ValueError("output-channel mismatch between kernel and spec")
    out = _conv_hwc(x, kernel, spec.stride, spec.pad)
    if spec.bias is not None:
        out = out + spec.bias
    return out


def layer_forward(x, layer):
    """Apply one :class:`LayerDescriptor` to an (H, W, C) input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[2] != layer.in_channels:
        raise ValueError(
            f"layer expects {layer.in_channels} channels, got {x.shape[2]}"
        )
    g = layer.groups
    ing = layer.in_channels // g
    outg = layer.out_channels // g
    pieces = []
    for gi in range(g):
        xg = x[:, :, gi * ing : (gi + 1) * ing]
        wg = layer.weights[gi * outg : (gi + 1) * outg]  # (outg, ing, kh, kw)
        kern = np.transpose(wg, (2, 3, 1, 0))            # (kh, kw, ing, outg)
        pieces.append(_conv_hwc(xg, kern, layer.stride, layer.pad))
    out = pieces[0] if g == 1 else np.concatenate(pieces, axis=2)
    if layer.bias is not None:
        out = out + layer.bias
    return out


def compose_forward(layers, x):
    """Run an input through a chain of layer descriptors."""
    for i in range(len(layers) - 1):
        if layers[i].out_channels != layers[i + 1].in_channels:
            raise ValueError(
                f"broken chain: layer {i} emits {layers[i].out_channels} "
                f"channels, layer {i + 1} expects {layers[i + 1].in_channels}"
            )
    out = x
    for layer in layers:
        out = layer_forward(out, layer)
    return out


def _spatial_to_filters(a, d):
    """Columns of A (D*D x R) as depthwise weights (R, 1, D, D)."""
    r = a.shape[1]
    return np.ascontiguousarray(
        np.transpose(a.reshape(d, d, r, order="F"), (2, 0, 1))[:, None, :, :]
    )


def _filters_to_spatial(w):
    """Inverse of :func:`_spatial_to_filters`."""
    r, _, d, _ = w.shape
    return np.ascontiguousarray(
        np.transpose(w[:, 0], (1, 2, 0)).reshape(d * d, r, order="F")
    )


def _pointwise(matrix, in_channels, out_channels, bias=None):
    """1x1 layer with weights[o, i] = matrix[o, i]."""
    return LayerDescriptor(
        in_channels=in_channels,
        out_channels=out_channels,
        kernel=(1, 1),
        weights=np.asarray(matrix, dtype=np.float64)[:, :, None, None],
        bias=bias,
    )


def emit_cpd_block(model, spec):
    """Three-layer CP realization of a conv layer.

    Layer order: 1x1 S->R from B, depthwise DxD (groups=R, stride and pad
    of the original layer) from A, 1x1 R->T from C with the component
    weights folded in; the original bias rides on the last layer.
    """
    d = spec.kernel_size
    if model.shape != (d * d, spec.in_channels, spec.out_channels):
        raise ValueError(
            f"model shape {model.shape} does not match spec "
            f"({d * d}, {spec.in_channels}, {spec.out_channels})"
        )
    a, b, c = model.A, model.B, model.C
    c_scaled = c if model.lam is None else c * model.lam
    r = model.rank
    depthwise = LayerDescriptor(
        in_channels=r,
        out_channels=r,
        kernel=(d, d),
        weights=_spatial_to_filters(a, d),
        groups=r,
        stride=spec.stride,
        pad=spec.pad,
    )
    return [
        _pointwise(b.T, spec.in_channels, r),
        depthwise,
        _pointwise(c_scaled, r, spec.out_channels, bias=spec.bias),
    ]


def emit_tkd_cpd_block(model, spec):
    """Five-layer hybrid realization: U, core-B, depthwise core-A, core-C, V.

    Only meaningful when the CP rank is not below both multilinear ranks;
    otherwise the adjacent 1x1 layers should be merged first
    (:func:`convfactor.hybrid.to_equivalent_cp`) and a CP block emitted.
    """
    from .hybrid import should_merge

    d = spec.kernel_size
    r1, r2, r = model.ranks
    if model.shape != (d * d, spec.in_channels, spec.out_channels):
        raise ValueError(
            f"model shape {model.shape} does not match spec "
            f"({d * d}, {spec.in_channels}, {spec.out_channels})"
        )
    if should_merge(model.ranks):
        raise ValueError(
            f"CP rank {r} is below both multilinear ranks ({r1}, {r2}); "
            "merge to a CP block via to_equivalent_cp instead"
        )
    core = model.core_cp
    c_scaled = core.C if core.lam is None else core.C * core.lam
    depthwise = LayerDescriptor(
        in_channels=r,
        out_channels=r,
        kernel=(d, d),
        weights=_spatial_to_filters(core.A, d),
        groups=r,
        stride=spec.stride,
        pad=spec.pad,
    )
    return [
        _pointwise(model.U.T, spec.in_channels, r1),
        _pointwise(core.B.T, r1, r),
        depthwise,
        _pointwise(c_scaled, r, r2),
        _pointwise(model.V, r2, spec.out_channels, bias=spec.bias),
    ]


def emit_svd_block(matrix, rank, spec):
    """Two 1x1 layers from a truncated SVD of a 1x1 kernel matrix (T x S).

    The square roots of the singular values are split between the two
    layers; the truncation is the best rank-R approximant in Frobenius
    norm.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if spec.kernel_size != 1:
        raise ValueError("svd blocks require a 1x1 kernel")
    if matrix.shape != (spec.out_channels, spec.in_channels):
        raise ValueError(
            f"matrix shape {matrix.shape} != "
            f"({spec.out_channels}, {spec.in_channels})"
        )
    if not 1 <= rank <= min(matrix.shape):
        raise ValueError(f"rank must lie in [1, {min(matrix.shape)}]")
    u, sing, vt = np.linalg.svd(matrix, full_matrices=False)
    root = np.sqrt(sing[:rank])
    return [
        _pointwise(vt[:rank] * root[:, None], spec.in_channels, rank),
        _pointwise(u[:, :rank] * root, rank, spec.out_channels, bias=spec.bias),
    ]


def block_to_kernel(layers, kind):
    """Dense (D, D, S, T) kernel equivalent to an emitted block."""
    if kind == "cpd":
        w1, wd, w3 = layers
        b = w1.weights[:, :, 0, 0].T
        a = _filters_to_spatial(wd.weights)
        c = w3.weights[:, :, 0, 0]
        d = wd.kernel[0]
        return restore_kernel(reconstruct_cp(a, b, c), d)
    if kind == "tkd-cpd":
        w1, w2, wd, w4, w5 = layers
        u = w1.weights[:, :, 0, 0].T
        b_core = w2.weights[:, :, 0, 0].T
        a_core = _filters_to_spatial(wd.weights)
        c_core = w4.weights[:, :, 0, 0]
        v = w5.weights[:, :, 0, 0]
        d = wd.kernel[0]
        return restore_kernel(
            reconstruct_cp(a_core, u @ b_core, v @ c_core), d
        )
    if kind == "svd":
        w1, w2 = layers
        m = w2.weights[:, :, 0, 0] @ w1.weights[:, :, 0, 0]  # (T, S)
        return np.ascontiguousarray(m.T[None, None, :, :])
    raise ValueError(f"unknown block kind {kind!r}")


def count_params_flops(layers, input_hw):
    """Exact parameter count and forward FLOPs of a layer chain.

    FLOPs count a multiply-add as 2 operations:
    ``2 * H' * W' * (in/groups) * k_h * k_w * out`` per layer.
    """
    h, w = input_hw
    params = 0
    flops = 0
    for i, layer in enumerate(layers):
        if i and layers[i - 1].out_channels != layer.in_channels:
            raise ValueError(
                f"broken chain: layer {i - 1} emits "
                f"{layers[i - 1].out_channels} channels, layer {i} expects "
                f"{layer.in_channels}"
            )
        kh, kw = layer.kernel
        h, w = _out_hw(h, w, kh, kw, layer.stride, layer.pad)
        params += layer.param_count()
        flops += (
            2 * h * w * (layer.in_channels // layer.groups) * kh * kw
            * layer.out_channels
        )
    return params, flops
