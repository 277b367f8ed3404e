"""Splittable convolutional generator pyramid.

The network is a stack of identical upsample+conv blocks, as in progressively
grown GANs. Level 1 is the input latent vector; the initial block emits a
4x4 feature map at level 2; every further block doubles the resolution, so
level l has spatial size 2^l and the final level n produces the RGB image.

Splitting the stack at level l gives two halves:

  g_a  latent vector -> feature tile at level l  (2^l x 2^l)
  g_b  latent field at level l -> RGB image

g_b accepts fields of any width and height. Its convolutions zero-pad only at
the outer border of the field and run continuously across interior tile
boundaries, which is what suppresses seams between tiles. A field of w x h
latent units renders to exactly 2^(n-l)*w x 2^(n-l)*h pixels.

Chunked evaluation (g_b_chunked) processes a large field in overlapping
windows and discards the overlap. Because every op's per-pixel arithmetic is
independent of the window extent, a chunked render is bitwise identical to
the full render as long as the overlap covers the receptive-field halo.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .tensor import (
    Rng,
    Tensor,
    conv2d_raw,
    leaky_relu_raw,
    pixel_norm_raw,
    upsample2x_raw,
)

WEIGHT_MAGIC = b"TGW1"
WEIGHT_VERSION = 1


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape parameters of the pyramid.

    channels_per_level lists the feature-map channel count for levels
    2 through n inclusive. The RGB output always has 3 channels.
    """

    n: int
    latent_dim: int = 512
    channels_per_level: tuple = ()
    leaky_slope: float = 0.2
    use_pixel_norm: bool = True

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"need n >= 3 levels, got {self.n}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        ch = tuple(int(c) for c in self.channels_per_level)
        if len(ch) != self.n - 1:
            raise ValueError(
                f"channels_per_level must list levels 2..{self.n} ({self.n - 1} entries), got {len(ch)}"
            )
        if any(c < 1 for c in ch):
            raise ValueError("channel counts must be >= 1")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must be in [0, 1)")
        object.__setattr__(self, "channels_per_level", ch)

    def channels_at(self, level: int) -> int:
        if not 2 <= level <= self.n:
            raise ValueError(f"level {level} out of range [2, {self.n}]")
        return self.channels_per_level[level - 2]

    @property
    def output_resolution(self) -> int:
        return 2 ** self.n


def default_channels(n: int, base: int = 64, floor: int = 8) -> tuple:
    """Halving channel profile: `base` at level 2, floored at `floor`."""
    return tuple(max(floor, base >> (l - 2)) for l in range(2, n + 1))


@dataclass
class LatentField:
    """A level-l feature grid assembled from (cropped) latent tiles.

    values holds channels x (cells_y*c) x (cells_x*c) where c is the cell
    size in latent units. Optional per-cell provenance records which bank
    sample (and cluster) each cell was placed from; -1 means unknown, e.g.
    after a hand edit.
    """

    level: int
    cell_size: int
    values: Tensor
    sample_ids: np.ndarray | None = None
    cluster_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1")
        if self.values.height % self.cell_size or self.values.width % self.cell_size:
            raise ShapeError(
                f"field {self.values.height}x{self.values.width} not divisible by cell size {self.cell_size}"
            )
        cy, cx = self.cells_y, self.cells_x
        if self.sample_ids is None:
            self.sample_ids = np.full((cy, cx), -1, np.int64)
        if self.cluster_ids is None:
            self.cluster_ids = np.full((cy, cx), -1, np.int64)
        if self.sample_ids.shape != (cy, cx) or self.cluster_ids.shape != (cy, cx):
            raise ShapeError("provenance arrays must be (cells_y, cells_x)")

    @property
    def width(self) -> int:
        """Field width in latent units."""
        return self.values.width

    @property
    def height(self) -> int:
        return self.values.height

    @property
    def cells_x(self) -> int:
        return self.values.width // self.cell_size

    @property
    def cells_y(self) -> int:
        return self.values.height // self.cell_size

    @classmethod
    def from_tile(cls, tile: Tensor, level: int) -> "LatentField":
        """Wrap one uncropped tile as a single-cell field."""
        return cls(level=level, cell_size=tile.width, values=tile)

    def with_cell_values(self, cx: int, cy: int, block: np.ndarray,
                         sample_id: int = -1, cluster_id: int = -1) -> "LatentField":
        """Copy of this field with one c x c cell replaced."""
        c = self.cell_size
        buf = self.values.data.copy()
        buf[:, cy * c:(cy + 1) * c, cx * c:(cx + 1) * c] = block
        ids = self.sample_ids.copy()
        cls = self.cluster_ids.copy()
        ids[cy, cx] = sample_id
        cls[cy, cx] = cluster_id
        return LatentField(self.level, c, Tensor._wrap(buf), ids, cls)


class Generator:
    """Immutable weight container plus the forward passes.

    Weight layout (also the TGW1 record order):
      proj_w  (ch2*16, latent_dim)   latent -> 4x4 map projection
      proj_b  (ch2*16,)
      init_w  (ch2, ch2, 3, 3)       conv on the 4x4 map
      init_b  (ch2,)
      per level j in 3..n:
        w1 (ch_j, ch_{j-1}, 3, 3), b1, w2 (ch_j, ch_j, 3, 3), b2
      rgb_w  (3, ch_n, 1, 1)
      rgb_b  (3,)

    When use_pixel_norm is set, the latent vector is channel-normalized
    before projection and every conv activation is followed by pixel_norm,
    matching the reference architecture family.
    """

    def __init__(self, spec: GeneratorSpec, weights: dict):
        self.spec = spec
        self.weights = weights
        self._fp = None
        for name, arr in weights.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in weight block {name}")

    # -- construction -----------------------------------------------------

    @staticmethod
    def _weight_shapes(spec: GeneratorSpec):
        ch = spec.channels_per_level
        shapes = [
            ("proj_w", (ch[0] * 16, spec.latent_dim)),
            ("proj_b", (ch[0] * 16,)),
            ("init_w", (ch[0], ch[0], 3, 3)),
            ("init_b", (ch[0],)),
        ]
        for j in range(3, spec.n + 1):
            cin, cout = spec.channels_at(j - 1), spec.channels_at(j)
            shapes.append((f"l{j}_w1", (cout, cin, 3, 3)))
            shapes.append((f"l{j}_b1", (cout,)))
            shapes.append((f"l{j}_w2", (cout, cout, 3, 3)))
            shapes.append((f"l{j}_b2", (cout,)))
        shapes.append(("rgb_w", (3, spec.channels_at(spec.n), 1, 1)))
        shapes.append(("rgb_b", (3,)))
        return shapes

    @property
    def fingerprint(self) -> bytes:
        """SHA-256 of the serialized weight file; identifies this generator."""
        if self._fp is None:
            self._fp = hashlib.sha256(save_weights(self)).digest()
        return self._fp

    # -- forward passes on raw (B, C, H, W) arrays -------------------------

    def _act(self, x: np.ndarray) -> np.ndarray:
        x = leaky_relu_raw(x, self.spec.leaky_slope)
        if self.spec.use_pixel_norm:
            x = pixel_norm_raw(x)
        return x

    def _initial_raw(self, z: np.ndarray) -> np.ndarray:
        """(B, latent_dim) -> (B, ch2, 4, 4)."""
        w = self.weights
        if self.spec.use_pixel_norm:
            m = np.mean(np.square(z), axis=1, keepdims=True)
            z = z / np.sqrt(m + np.float32(1e-8))
        # The projection runs as a 1x1 conv so each sample goes through the
        # same matmul shapes whatever the batch size (keeps batched bank
        # builds bitwise equal to the per-sample public path).
        proj = w["proj_w"].reshape(w["proj_w"].shape[0], self.spec.latent_dim, 1, 1)
        x = conv2d_raw(z[:, :, None, None], proj, w["proj_b"], 0)
        x = x.reshape(z.shape[0], self.spec.channels_at(2), 4, 4)
        x = self._act(x)
        x = conv2d_raw(x, w["init_w"], w["init_b"], 1)
        return self._act(x)

    def _block_raw(self, x: np.ndarray, j: int) -> np.ndarray:
        w = self.weights
        x = upsample2x_raw(x)
        x = self._act(conv2d_raw(x, w[f"l{j}_w1"], w[f"l{j}_b1"], 1))
        x = self._act(conv2d_raw(x, w[f"l{j}_w2"], w[f"l{j}_b2"], 1))
        return x

    def _g_a_raw(self, z: np.ndarray, level: int) -> np.ndarray:
        x = self._initial_raw(z)
        for j in range(3, level + 1):
            x = self._block_raw(x, j)
        return x

    def _g_b_raw(self, x: np.ndarray, level: int) -> np.ndarray:
        for j in range(level + 1, self.spec.n + 1):
            x = self._block_raw(x, j)
        return conv2d_raw(x, self.weights["rgb_w"], self.weights["rgb_b"], 0)


def build_toy_generator(spec: GeneratorSpec, seed: int) -> Generator:
    """Seeded, untrained generator for testing without any training run.

    Conv and projection weights are fan-in-scaled normals (std sqrt(2/fan_in))
    drawn from one Philox stream in record order; biases are zero. The same
    (spec, seed) always yields bitwise identical weights.
    """
    rng = Rng(seed)
    weights = {}
    for name, shape in Generator._weight_shapes(spec):
        if name.endswith("_b") or name.endswith("b1") or name.endswith("b2"):
            weights[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            weights[name] = rng.normal(shape, std=math.sqrt(2.0 / fan_in))
    return Generator(spec, weights)


# ---------------------------------------------------------------------------
# Split application
# ---------------------------------------------------------------------------

def g_a(gen: Generator, z: Tensor, l: int) -> Tensor:
    """Front half: latent vector to the level-l feature tile (2^l x 2^l)."""
    if not 2 <= l <= gen.spec.n - 1:
        raise ValueError(f"split level must be in [2, {gen.spec.n - 1}], got {l}")
    if z.channels != gen.spec.latent_dim or z.height != 1 or z.width != 1:
        raise ShapeError(f"z must be ({gen.spec.latent_dim}, 1, 1), got {z.shape}")
    out = gen._g_a_raw(z.data.reshape(1, -1), l)
    return Tensor._wrap(out[0])


def g_b(gen: Generator, field: LatentField) -> Tensor:
    """Back half: render a latent field to RGB at 2^(n-l) pixels per latent unit."""
    want = gen.spec.channels_at(field.level)
    if field.values.channels != want:
        raise ShapeError(
            f"field has {field.values.channels} channels, level {field.level} needs {want}"
        )
    if not 2 <= field.level <= gen.spec.n - 1:
        raise ValueError(f"field level must be in [2, {gen.spec.n - 1}], got {field.level}")
    out = gen._g_b_raw(field.values.data[None], field.level)
    return Tensor(out[0])


def g_full(gen: Generator, z: Tensor) -> Tensor:
    """Whole pyramid: z to the 3 x 2^n x 2^n image."""
    if z.channels != gen.spec.latent_dim or z.height != 1 or z.width != 1:
        raise ShapeError(f"z must be ({gen.spec.latent_dim}, 1, 1), got {z.shape}")
    x = gen._g_a_raw(z.data.reshape(1, -1), 2)
    out = gen._g_b_raw(x, 2)
    return Tensor(out[0])


def pixel_scale(spec: GeneratorSpec, l: int) -> int:
    """Output pixels per latent unit at split level l."""
    return 2 ** (spec.n - l)


def halo_for(spec: GeneratorSpec, l: int) -> int:
    """Smallest margin (latent units at level l) that makes windowed output exact.

    Backward recursion over the blocks above l: the 1x1 RGB conv needs no
    margin, and each block's two 3x3 convs need 2 extra pixels at their own
    level, which halve (rounded up) through the upsample:
    m(n) = 0, m(j) = ceil((m(j+1) + 2) / 2).
    """
    if not 2 <= l <= spec.n - 1:
        raise ValueError(f"level must be in [2, {spec.n - 1}], got {l}")
    m = 0
    for _ in range(spec.n, l, -1):
        m = (m + 2 + 1) // 2
    return m


def _render_window(gen: Generator, values: np.ndarray, level: int) -> np.ndarray:
    """Run the back half over one raw (C, h, w) window."""
    return gen._g_b_raw(values[None], level)[0]


def render_region(gen: Generator, field: LatentField, pixel_rect: tuple) -> np.ndarray:
    """Render only the given output-pixel rect of a field.

    Evaluates the smallest latent window whose halo covers the rect, so the
    returned (3, y1-y0, x1-x0) patch matches the corresponding slice of a
    full g_b render bitwise.
    """
    level = field.level
    scale = pixel_scale(gen.spec, level)
    m = halo_for(gen.spec, level)
    px0, py0, px1, py1 = pixel_rect
    fw_px, fh_px = field.width * scale, field.height * scale
    if not (0 <= px0 < px1 <= fw_px and 0 <= py0 < py1 <= fh_px):
        raise ValueError(f"pixel rect {pixel_rect} outside the {fw_px}x{fh_px} output")
    lx0, ly0 = px0 // scale, py0 // scale
    lx1, ly1 = -(-px1 // scale), -(-py1 // scale)
    wx0, wy0 = max(0, lx0 - m), max(0, ly0 - m)
    wx1, wy1 = min(field.width, lx1 + m), min(field.height, ly1 + m)
    img = _render_window(gen, field.values.data[:, wy0:wy1, wx0:wx1], level)
    ox, oy = px0 - wx0 * scale, py0 - wy0 * scale
    return img[:, oy:oy + (py1 - py0), ox:ox + (px1 - px0)].copy()


def _chunk_rects(w: int, h: int, chunk: int):
    for y0 in range(0, h, chunk):
        for x0 in range(0, w, chunk):
            yield x0, y0, min(x0 + chunk, w), min(y0 + chunk, h)


def _chunked_raw(gen: Generator, field: LatentField, chunk: int, halo: int,
                 threads: int = 1) -> np.ndarray:
    """Chunked render without the halo validity check (probe path for tests)."""
    level = field.level
    scale = pixel_scale(gen.spec, level)
    fw, fh = field.width, field.height
    vals = field.values.data
    out = np.empty((3, fh * scale, fw * scale), np.float32)

    def run(rect):
        x0, y0, x1, y1 = rect
        wx0, wy0 = max(0, x0 - halo), max(0, y0 - halo)
        wx1, wy1 = min(fw, x1 + halo), min(fh, y1 + halo)
        img = _render_window(gen, vals[:, wy0:wy1, wx0:wx1], level)
        px0, py0 = (x0 - wx0) * scale, (y0 - wy0) * scale
        out[:, y0 * scale:y1 * scale, x0 * scale:x1 * scale] = img[
            :, py0:py0 + (y1 - y0) * scale, px0:px0 + (x1 - x0) * scale
        ]

    rects = list(_chunk_rects(fw, fh, chunk))
    if threads > 1:
        # Chunk outputs are disjoint, so the schedule cannot change the
        # result. BLAS is pinned to one thread per worker so the level of
        # parallelism lives entirely at the chunk level.
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1, user_api="blas"):
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, rects))
    else:
        for rect in rects:
            run(rect)
    return out


def g_b_chunked(gen: Generator, field: LatentField, chunk: int, halo: int,
                threads: int = 1) -> Tensor:
    """Render like g_b but in bounded-memory windows of `chunk` latent units.

    Requires halo >= halo_for(spec, level); smaller halos would silently
    corrupt pixels near chunk boundaries, so they are refused. The result is
    identical to g_b(field) (bitwise with the fixed reduction order used
    here). Border chunks reproduce the outer zero padding exactly.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    need = halo_for(gen.spec, field.level)
    if halo < need:
        raise ValueError(f"halo {halo} is below the required margin {need} for level {field.level}")
    want = gen.spec.channels_at(field.level)
    if field.values.channels != want:
        raise ShapeError(
            f"field has {field.values.channels} channels, level {field.level} needs {want}"
        )
    return Tensor(_chunked_raw(gen, field, chunk, halo, threads))


# ---------------------------------------------------------------------------
# TGW1 weight files
# ---------------------------------------------------------------------------

def _write_record(buf: io.BytesIO, arr: np.ndarray):
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.astype("<f4", copy=False).tobytes())


def save_weights(gen: Generator) -> bytes:
    """Serialize to the TGW1 byte format (little-endian, byte-exact)."""
    spec = gen.spec
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    buf.write(struct.pack("<II", WEIGHT_VERSION, spec.n))
    buf.write(struct.pack("<II", spec.latent_dim, len(spec.channels_per_level)))
    buf.write(struct.pack(f"<{len(spec.channels_per_level)}I", *spec.channels_per_level))
    buf.write(struct.pack("<fI", spec.leaky_slope, 1 if spec.use_pixel_norm else 0))
    for name, _ in Generator._weight_shapes(spec):
        _write_record(buf, gen.weights[name])
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(f"truncated file while reading {what}")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]


def _read_record(r: _Reader, name: str, expect_shape: tuple) -> np.ndarray:
    ndim = r.u32(name)
    if ndim != len(expect_shape):
        raise FormatError(f"weight block {name}: expected {len(expect_shape)} axes, file has {ndim}")
    shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, name))
    if shape != expect_shape:
        raise FormatError(f"weight block {name}: expected shape {expect_shape}, file has {shape}")
    count = int(np.prod(shape))
    raw = r.take(4 * count, name)
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def load_weights(data: bytes) -> Generator:
    """Parse a TGW1 byte string; the forward pass uses the stored weights verbatim."""
    r = _Reader(data)
    if r.take(4, "magic") != WEIGHT_MAGIC:
        raise FormatError("not a TGW1 weight file (bad magic)")
    version = r.u32("version")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported TGW1 version {version}")
    n = r.u32("level count")
    latent_dim = r.u32("latent_dim")
    n_ch = r.u32("channel list length")
    if n_ch != n - 1:
        raise FormatError(f"channel list length {n_ch} does not match n={n}")
    channels = struct.unpack(f"<{n_ch}I", r.take(4 * n_ch, "channel list"))
    slope = r.f32("leaky_slope")
    use_pn = r.u32("pixel_norm flag") != 0
    try:
        spec = GeneratorSpec(n=n, latent_dim=latent_dim, channels_per_level=channels,
                             leaky_slope=slope, use_pixel_norm=use_pn)
    except ValueError as e:
        raise FormatError(f"invalid generator header: {e}") from e
    weights = {}
    for name, shape in Generator._weight_shapes(spec):
        label = name
        if name.startswith("l"):
            label = f"level {name[1:name.index('_')]} block ({name})"
        weights[name] = _read_record(r, label, shape)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after the last weight block")
    return Generator(spec, weights)
