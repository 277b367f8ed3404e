"""Dense float32 tensors and the small set of ops the generator pipeline needs.

Everything here is pure: operations allocate fresh tensors, never mutate their
inputs, and repeated calls with identical inputs are bitwise identical.
Arithmetic and accumulation happen in float32 throughout (test tolerances
account for this).

The convolution accumulates one kernel offset at a time, reducing over input
channels inside each matmul. That fixes the per-pixel summation order
regardless of the spatial extent of the input, which is what lets windowed
evaluation reproduce full evaluation bitwise (see generator.g_b_chunked).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_MASK64 = (1 << 64) - 1

PIXEL_NORM_EPS = 1e-8


class Rng:
    """Deterministic random stream, keyed by a 64-bit seed.

    Backed by numpy's Philox 4x64 counter-based generator, whose streams are
    stable across platforms and numpy releases for a fixed key. The same seed
    always yields the same sequence of draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        """float32 draws from N(0, std^2)."""
        out = self._gen.standard_normal(size=shape, dtype=np.float32)
        if std != 1.0:
            out *= np.float32(std)
        return out

    def integer(self, n: int) -> int:
        """One uniform integer in [0, n)."""
        return int(self._gen.integers(0, n))

    def uniform(self) -> float:
        """One uniform float in [0, 1)."""
        return float(self._gen.random())

    def u64(self, count: int) -> np.ndarray:
        """`count` uniform 64-bit integers (used to derive per-sample seeds)."""
        return self._gen.integers(0, 1 << 64, size=count, dtype=np.uint64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


class Tensor:
    """A dense (channels, height, width) block of float32 values.

    The backing array is marked read-only; build a new tensor to change data.
    Construction rejects non-finite values, so a tensor in hand is always
    safe to feed onward.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError(f"tensor must be (channels, height, width), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("tensor contains NaN or Inf")
        if arr.flags.writeable:
            if arr is data or (isinstance(data, np.ndarray) and arr.base is data):
                arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for freshly computed arrays: skips the finite
        # scan only when the caller already guarantees it.
        t = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.flags.writeable = False
        object.__setattr__(t, "data", arr)
        return t

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Tensor":
        return cls._wrap(np.zeros((channels, height, width), np.float32))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor{self.data.shape}"


def _check_3d(t: Tensor, name: str = "input"):
    if not isinstance(t, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(t).__name__}")


# ---------------------------------------------------------------------------
# Raw array kernels. These accept (C, H, W) or (B, C, H, W) float32 arrays and
# are shared with the generator's batched forward paths. The per-element
# computation never depends on the spatial extent or on the batch position.
# ---------------------------------------------------------------------------

def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    # One gemm per kernel offset over the whole contiguous padded buffer,
    # accumulated through a flat index shift (gutter positions collect junk
    # that the final slice discards). This avoids any strided window copies
    # while keeping the exact (ky, kx, channel) per-pixel reduction order.
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    nb, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    ho, wo = hp - (kh - 1), wp - (kw - 1)
    if pad > 0:
        xp = np.zeros((nb, c, hp, wp), np.float32)
        xp[:, :, pad:pad + h, pad:pad + wd] = x
    else:
        xp = np.ascontiguousarray(x)
    t = hp * wp
    flat_in = xp.reshape(nb, c, t)
    # contiguous per-offset kernel slices keep matmul on the BLAS fast path
    mats = [np.ascontiguousarray(w[:, :, ky, kx])[None] for ky in range(kh) for kx in range(kw)]
    acc = np.empty((nb, oc, t), np.float32)
    np.matmul(mats[0], flat_in, out=acc)  # offset (0, 0) seeds the sum
    tmp = np.empty((nb, oc, t), np.float32) if kh * kw > 1 else None
    for ky in range(kh):
        for kx in range(kw):
            if ky == 0 and kx == 0:
                continue
            np.matmul(mats[ky * kw + kx], flat_in, out=tmp)
            d = ky * wp + kx
            acc[:, :, :t - d] += tmp[:, :, d:]
    out = acc.reshape(nb, oc, hp, wp)[:, :, :ho, :wo] + b.reshape(1, oc, 1, 1)
    return out[0] if squeeze else out


def upsample2x_raw(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def leaky_relu_raw(x: np.ndarray, slope: float) -> np.ndarray:
    out = x.copy()
    np.multiply(out, np.float32(slope), out=out, where=x < 0)
    return out


def pixel_norm_raw(x: np.ndarray, eps: float = PIXEL_NORM_EPS) -> np.ndarray:
    m = np.mean(np.square(x), axis=-3, keepdims=True)
    return x / np.sqrt(m + np.float32(eps))


def avg_pool_raw(x: np.ndarray, r: int) -> np.ndarray:
    h, wd = x.shape[-2], x.shape[-1]
    bh, bw = h // r, wd // r
    shp = x.shape[:-2] + (r, bh, r, bw)
    return x.reshape(shp).mean(axis=(-3, -1))


# ---------------------------------------------------------------------------
# Public tensor ops
# ---------------------------------------------------------------------------

def conv2d(input: Tensor, kernel, bias, zero_pad: int) -> Tensor:
    """2-D cross-correlation with zero padding.

    `kernel` is a 4-axis (out_channels, in_channels, kh, kw) weight block and
    `bias` one value per output channel. No kernel flip is applied; this is
    the cross-correlation convention of convolutional networks. Output
    spatial size is input + 2*zero_pad - (k - 1).
    """
    _check_3d(input)
    w = np.asarray(kernel, dtype=np.float32)
    b = np.asarray(bias, dtype=np.float32)
    if w.ndim != 4:
        raise ShapeError(f"kernel must have 4 axes, got {w.ndim}")
    oc, ic, kh, kw = w.shape
    if ic != input.channels:
        raise ShapeError(f"kernel expects {ic} input channels, tensor has {input.channels}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel spatial size must be odd, got {kh}x{kw}")
    if b.shape != (oc,):
        raise ShapeError(f"bias must have shape ({oc},), got {b.shape}")
    if zero_pad < 0:
        raise ValueError("zero_pad must be >= 0")
    ho = input.height + 2 * zero_pad - (kh - 1)
    wo = input.width + 2 * zero_pad - (kw - 1)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {input.height}x{input.width} with pad {zero_pad}")
    return Tensor(conv2d_raw(input.data, w, b, zero_pad))


def upsample2x(input: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling: every pixel becomes a 2x2 block."""
    _check_3d(input)
    return Tensor._wrap(upsample2x_raw(input.data))


def leaky_relu(input: Tensor, slope: float) -> Tensor:
    """Elementwise x for x >= 0, slope*x otherwise. Requires slope in [0, 1)."""
    _check_3d(input)
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must be in [0, 1), got {slope}")
    return Tensor._wrap(leaky_relu_raw(input.data, slope))


def pixel_norm(input: Tensor, epsilon: float = PIXEL_NORM_EPS) -> Tensor:
    """Normalize each pixel by the RMS of its channel values.

    x_c <- x_c / sqrt(mean_c(x^2) + epsilon). With epsilon 0 the per-pixel
    mean of squares afterwards equals 1 wherever the pixel is nonzero.
    """
    _check_3d(input)
    if input.channels < 1:
        raise ShapeError("pixel_norm needs at least one channel")
    return Tensor(pixel_norm_raw(input.data, epsilon))


def avg_pool_to(input: Tensor, r: int) -> Tensor:
    """Average-pool to an r x r grid; height and width must be divisible by r."""
    _check_3d(input)
    if r < 1:
        raise ValueError("r must be >= 1")
    if input.height % r != 0 or input.width % r != 0:
        raise ShapeError(f"input {input.height}x{input.width} not divisible by r={r}")
    return Tensor._wrap(avg_pool_raw(input.data, r).astype(np.float32, copy=False))


def l2_distance(a: Tensor, b: Tensor) -> float:
    """Euclidean distance: sqrt of the sum of squared elementwise differences."""
    _check_3d(a, "a")
    _check_3d(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.data - b.data
    return float(np.sqrt(np.sum(np.square(d), dtype=np.float32)))
