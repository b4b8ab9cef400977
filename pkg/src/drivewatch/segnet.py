"""Forward-pass engine for the compact convolutional encoder-decoder.

The default build has 17 weighted layers: a stride-2 subsampling conv, a
10-conv encoder (normal 3x3, factored 5x5, and dilated 3x3) interleaved with
3 max-pool stages, a 5-conv decoder interleaved with 4 nearest-neighbor
up-sample stages, and a final 1x1 fusion conv. Total down-sampling equals
total up-sampling, so the class map comes out at input resolution.

Tensors are channel-major (c, h, w) float arrays. Inference only; weights
are loaded from the checksummed little-endian float32 container written by
``WeightStore.save``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .image import ImageBuffer

CLASS_BACKGROUND = 0
CLASS_DRIVABLE = 1
CLASS_LANE_MARKING = 2

_WEIGHTED_KINDS = ("conv", "asym_conv", "dilated_conv", "conv1x1")
_MAGIC = b"DWSW"


class NetworkError(ValueError):
    pass


class NonFiniteActivation(ArithmeticError):
    """A layer produced NaN/Inf; reported instead of being clamped away."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | asym_conv | dilated_conv | maxpool | upsample | conv1x1
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 3
    dilation: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.kind == "asym_conv" and self.kernel != 5:
            raise NetworkError("asym_conv requires kernel 5")
        if self.kind == "dilated_conv" and self.dilation < 2:
            raise NetworkError("dilated_conv requires dilation >= 2")
        if self.kind == "conv1x1" and self.kernel != 1:
            raise NetworkError("conv1x1 requires kernel 1")

    @property
    def weighted(self) -> bool:
        return self.kind in _WEIGHTED_KINDS


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    n_classes: int

    def __post_init__(self):
        ch = None
        downs = ups = 0
        for layer in self.layers:
            if layer.kind == "maxpool":
                downs += 1
            elif layer.kind == "upsample":
                ups += 1
            elif layer.weighted:
                if ch is not None and layer.in_ch != ch:
                    raise NetworkError(
                        f"channel chain broken at {layer.kind}: "
                        f"expected in_ch {ch}, got {layer.in_ch}")
                ch = layer.out_ch
                if layer.stride == 2:
                    downs += 1
        if downs != ups:
            raise NetworkError(
                f"down-sampling ({downs}) must equal up-sampling ({ups})")

    @property
    def weighted_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.weighted)


def build_default_net(n_classes: int = 3) -> NetworkSpec:
    """The shipped 17-weighted-layer encoder-decoder."""
    if n_classes < 2:
        raise NetworkError("need at least 2 classes")
    c = LayerSpec
    layers = (
        # subsampling entry layer
        c("conv", 3, 16, kernel=3, stride=2),
        # encoder: 10 convs, 3 max-pool stages
        c("conv", 16, 16),
        c("conv", 16, 16),
        c("maxpool"),
        c("conv", 16, 32),
        c("asym_conv", 32, 32, kernel=5),
        c("dilated_conv", 32, 32, dilation=2),
        c("maxpool"),
        c("conv", 32, 64),
        c("asym_conv", 64, 64, kernel=5),
        c("dilated_conv", 64, 64, dilation=2),
        c("dilated_conv", 64, 64, dilation=4),
        c("conv", 64, 64),
        c("maxpool"),
        # decoder: 5 convs, 4 up-sample stages
        c("upsample"),
        c("conv", 64, 32),
        c("upsample"),
        c("conv", 32, 16),
        c("upsample"),
        c("conv", 16, 16),
        c("upsample"),
        c("conv", 16, 16),
        c("conv", 16, 16),
        # fusion
        c("conv1x1", 16, n_classes, kernel=1),
    )
    return NetworkSpec(layers, n_classes)


# ---------------------------------------------------------------------------
# primitive ops

def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
           dilation: int = 1, stride: int = 1) -> np.ndarray:
    """Cross-correlation with dilation; zero padding keeps size at stride 1.

    x is (c_in, h, w); weights are (c_out, c_in, kh, kw); bias is (c_out,).
    """
    c_in, h, w = x.shape
    if weights.ndim != 4 or weights.shape[1] != c_in:
        raise NetworkError(
            f"weight shape {weights.shape} does not match input channels {c_in}")
    c_out, _, kh, kw = weights.shape
    if bias.shape != (c_out,):
        raise NetworkError(f"bias shape {bias.shape} != ({c_out},)")

    pad_h = dilation * (kh - 1) // 2
    pad_w = dilation * (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    out_h = (h + 2 * pad_h - dilation * (kh - 1) - 1) // stride + 1
    out_w = (w + 2 * pad_w - dilation * (kw - 1) - 1) // stride + 1

    rows = np.arange(out_h) * stride
    cols = np.arange(out_w) * stride
    ky = np.arange(kh) * dilation
    kx = np.arange(kw) * dilation
    patches = xp[:,
                 rows[:, None, None, None] + ky[None, None, :, None],
                 cols[None, :, None, None] + kx[None, None, None, :]]
    out = np.einsum("cijkl,ockl->oij", patches, weights, optimize=True)
    return out + bias[:, None, None]


def asym_conv5(x: np.ndarray, w_5x1: np.ndarray, w_1x5: np.ndarray,
               b_5x1: np.ndarray, b_1x5: np.ndarray) -> np.ndarray:
    """Factored 5x5: a 5x1 pass then a 1x5 pass, each size-preserving.

    Costs 5+5 weights per channel pair instead of 25 for the full kernel.
    """
    mid = conv2d(x, w_5x1, b_5x1)
    return conv2d(mid, w_1x5, b_1x5)


def max_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 per-channel max; odd edges padded with -inf."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2)),
                   constant_values=-np.inf)
        c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x spatial replication."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# weights

def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


@dataclass
class WeightStore:
    """Per-weighted-layer named arrays, keyed by weighted-layer index."""

    arrays: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def random(cls, spec: NetworkSpec, seed: int = 0) -> "WeightStore":
        rng = np.random.RandomState(seed)
        store: dict[int, dict[str, np.ndarray]] = {}
        for idx, layer in enumerate(spec.weighted_layers):
            if layer.kind == "asym_conv":
                k = layer.kernel
                store[idx] = {
                    "wv": rng.normal(0, _he_std(layer.in_ch * k),
                                     (layer.out_ch, layer.in_ch, k, 1)),
                    "bv": np.zeros(layer.out_ch),
                    "wh": rng.normal(0, _he_std(layer.out_ch * k),
                                     (layer.out_ch, layer.out_ch, 1, k)),
                    "bh": np.zeros(layer.out_ch),
                }
            else:
                k = layer.kernel
                store[idx] = {
                    "w": rng.normal(0, _he_std(layer.in_ch * k * k),
                                    (layer.out_ch, layer.in_ch, k, k)),
                    "b": np.zeros(layer.out_ch),
                }
        return cls({i: {n: a.astype(np.float64) for n, a in d.items()}
                    for i, d in store.items()})

    def save(self, path) -> None:
        body = bytearray()
        body += struct.pack("<II", 1, len(self.arrays))
        for idx in sorted(self.arrays):
            named = self.arrays[idx]
            body += struct.pack("<II", idx, len(named))
            for name in sorted(named):
                arr = np.ascontiguousarray(named[name], dtype="<f4")
                encoded = name.encode("ascii")
                body += struct.pack("<B", len(encoded)) + encoded
                body += struct.pack("<I", arr.ndim)
                body += struct.pack(f"<{arr.ndim}I", *arr.shape)
                body += arr.tobytes()
        crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
        with open(path, "wb") as fh:
            fh.write(_MAGIC + bytes(body) + struct.pack("<I", crc))

    @classmethod
    def load(cls, path) -> "WeightStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if not blob.startswith(_MAGIC) or len(blob) < 12:
            raise NetworkError("not a weight file")
        body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise NetworkError("weight file checksum mismatch")
        pos = 0

        def take(fmt):
            nonlocal pos
            size = struct.calcsize(fmt)
            vals = struct.unpack_from(fmt, body, pos)
            pos += size
            return vals

        version, n_layers = take("<II")
        if version != 1:
            raise NetworkError(f"unsupported weight file version {version}")
        arrays: dict[int, dict[str, np.ndarray]] = {}
        for _ in range(n_layers):
            idx, n_arrays = take("<II")
            named = {}
            for _ in range(n_arrays):
                (name_len,) = take("<B")
                name = body[pos:pos + name_len].decode("ascii")
                pos += name_len
                (ndim,) = take("<I")
                shape = take(f"<{ndim}I")
                count = int(np.prod(shape))
                arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos)
                pos += count * 4
                named[name] = arr.reshape(shape).astype(np.float64)
            arrays[idx] = named
        return cls(arrays)


def _expected_names(layer: LayerSpec) -> tuple[str, ...]:
    return ("wv", "bv", "wh", "bh") if layer.kind == "asym_conv" else ("w", "b")


def check_weights(spec: NetworkSpec, weights: WeightStore) -> None:
    """Raise NetworkError unless the store matches the spec layer-for-layer."""
    for idx, layer in enumerate(spec.weighted_layers):
        named = weights.arrays.get(idx)
        if named is None:
            raise NetworkError(f"missing weights for layer {idx} ({layer.kind})")
        for name in _expected_names(layer):
            if name not in named:
                raise NetworkError(f"layer {idx} missing array {name!r}")
        if layer.kind == "asym_conv":
            k = layer.kernel
            want_v = (layer.out_ch, layer.in_ch, k, 1)
            want_h = (layer.out_ch, layer.out_ch, 1, k)
            if named["wv"].shape != want_v or named["wh"].shape != want_h:
                raise NetworkError(f"layer {idx} asym weight shape mismatch")
        else:
            want = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
            if named["w"].shape != want:
                raise NetworkError(
                    f"layer {idx} weight shape {named['w'].shape} != {want}")


def run_layers(spec: NetworkSpec, weights: WeightStore,
               x: np.ndarray) -> np.ndarray:
    """Apply the network to a (c, h, w) tensor and return the raw logits.

    ReLU follows every weighted layer except the final 1x1.
    """
    check_weights(spec, weights)
    widx = 0
    n_weighted = len(spec.weighted_layers)
    for layer in spec.layers:
        if layer.kind == "maxpool":
            x = max_pool2(x)
        elif layer.kind == "upsample":
            x = upsample2(x)
        elif layer.kind == "asym_conv":
            named = weights.arrays[widx]
            x = asym_conv5(x, named["wv"], named["wh"],
                           named["bv"], named["bh"])
            widx += 1
            if widx < n_weighted:
                x = relu(x)
        else:
            named = weights.arrays[widx]
            x = conv2d(x, named["w"], named["b"],
                       dilation=layer.dilation, stride=layer.stride)
            widx += 1
            if widx < n_weighted:
                x = relu(x)
        if not np.all(np.isfinite(x)):
            raise NonFiniteActivation(
                f"non-finite activation after {layer.kind} "
                f"(weighted layer {widx - 1 if layer.weighted else widx})")
    return x


def forward(spec: NetworkSpec, weights: WeightStore,
            img: ImageBuffer) -> np.ndarray:
    """Pixel-wise argmax class map at input resolution (ties -> lower id).

    Input samples are scaled to [0, 1]. Inputs whose sides are not divisible
    by 16 are padded internally by the pooling stages; the logits are cropped
    back to the input size.
    """
    if img.channels != 3:
        raise NetworkError("forward requires a 3-channel image")
    x = img.as_float().transpose(2, 0, 1) / 255.0
    logits = run_layers(spec, weights, x)
    logits = logits[:, :img.height, :img.width]
    return np.argmax(logits, axis=0).astype(np.uint8)
