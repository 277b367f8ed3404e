"""Sample bank: the searchable set of latent tiles the synthesizer draws from.

Building a bank samples the generator many times at the chosen split level.
Each sample keeps the full (uncropped) latent tile, the seed of the latent
vector it came from, and a small r x r downsampled render of the tile (its
"representative"), which is what retrieval, clustering, and the visual energy
terms all operate on. The tile placed into a field is a centered c x c crop
of the full tile; the outermost latents sit next to the zero-padded border
and are unstable, so they are never placed. The full tile is retained as
context for the neighbor-compatibility energy.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from .errors import CompatibilityError, FormatError, ShapeError
from .generator import Generator, LatentField, g_a, g_b
from .tensor import Rng, Tensor, avg_pool_raw, avg_pool_to

BANK_MAGIC = b"TGB1"
BANK_VERSION = 1

UNCLUSTERED = -1
_NO_CLUSTER_U32 = 0xFFFFFFFF

DEFAULT_SAMPLE_COUNT = 100_000
DEFAULT_CLUSTERS = 10
DEFAULT_REP_RES = 16


@dataclass
class Sample:
    """One bank entry.

    tile is the full uncropped latent tile (channels x 2^l x 2^l); rep is the
    3 x r x r pooled render of that tile; cluster is -1 until the bank has
    been clustered. The latent vector is not stored, only its seed, so the
    tile and rep can be re-derived.
    """

    id: int
    z_seed: int
    tile: Tensor
    rep: Tensor
    cluster: int = UNCLUSTERED

    def crop(self, c: int) -> np.ndarray:
        """Centered c x c crop of the full tile, offset (T - c) // 2 per axis."""
        t = self.tile.width
        off = (t - c) // 2
        return self.tile.data[:, off:off + c, off:off + c]


class Candidate(NamedTuple):
    sample_id: int
    distance: float


@dataclass
class SampleBank:
    level: int
    crop_size: int
    rep_res: int
    samples: list
    seed: int
    generator_fingerprint: bytes
    centers: np.ndarray | None = None  # (k, 3, r, r) float32
    _rep_matrix: np.ndarray | None = dc_field(default=None, repr=False)
    _fp: bytes | None = dc_field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.samples)

    @property
    def k(self) -> int:
        return 0 if self.centers is None else len(self.centers)

    @property
    def clustered(self) -> bool:
        return self.centers is not None

    @property
    def tile_size(self) -> int:
        return self.samples[0].tile.width if self.samples else 0

    @property
    def channels(self) -> int:
        return self.samples[0].tile.channels if self.samples else 0

    def rep_matrix(self) -> np.ndarray:
        """(N, 3*r*r) float32 view of all representatives, row i = sample i."""
        if self._rep_matrix is None:
            self._rep_matrix = np.stack([s.rep.data.ravel() for s in self.samples])
        return self._rep_matrix

    def cluster_members(self, cluster: int) -> list:
        return [s.id for s in self.samples if s.cluster == cluster]

    @property
    def fingerprint(self) -> bytes:
        """SHA-256 of the serialized bank; identifies bank contents exactly."""
        if self._fp is None:
            self._fp = hashlib.sha256(save_bank(self)).digest()
        return self._fp

    def _invalidate(self):
        self._rep_matrix = None
        self._fp = None


def build_bank(gen: Generator, l: int, count: int, c: int, r: int, seed: int,
               batch: int = 64) -> SampleBank:
    """Sample `count` latent tiles at split level l.

    Each tile is rendered as its own single-tile field (so the render sees
    the same outer zero padding it would get standalone) and pooled to the
    r x r representative. Per-sample latent seeds come from one Philox stream,
    so the result is a pure function of (generator, l, count, c, r, seed).
    """
    spec = gen.spec
    if not 2 <= l <= spec.n - 1:
        raise ValueError(f"level must be in [2, {spec.n - 1}], got {l}")
    tile_px = 2 ** spec.n
    if not 1 <= c <= 2 ** l:
        raise ValueError(f"crop must be in [1, {2 ** l}], got {c}")
    if r < 1 or r > tile_px or tile_px % r != 0:
        raise ValueError(f"rep resolution {r} must divide the {tile_px}px tile render")
    if count < 1:
        raise ValueError("count must be >= 1")

    z_seeds = Rng(seed).u64(count)
    samples = []
    for start in range(0, count, batch):
        stop = min(start + batch, count)
        zb = np.stack([Rng(int(z_seeds[i])).normal((spec.latent_dim,)) for i in range(start, stop)])
        tiles = gen._g_a_raw(zb, l)
        imgs = gen._g_b_raw(tiles, l)
        reps = avg_pool_raw(imgs, r).astype(np.float32, copy=False)
        for j in range(stop - start):
            samples.append(Sample(
                id=start + j,
                z_seed=int(z_seeds[start + j]),
                tile=Tensor(tiles[j]),
                rep=Tensor(reps[j]),
            ))
    return SampleBank(level=l, crop_size=c, rep_res=r, samples=samples, seed=seed,
                      generator_fingerprint=gen.fingerprint)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def kmeans(points: np.ndarray, k: int, max_iters: int, rng: Rng):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (assignments, centers, inertia_trace). Distances and center means
    are computed in float64 so the recorded inertia is non-increasing across
    iterations. Assignment ties go to the lowest center index; an emptied
    cluster is re-seeded from the point farthest from its current center.
    Iteration stops at max_iters or when no assignment changes.
    """
    x = points.astype(np.float64)
    n = len(x)
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available points")
    if k < 1:
        raise ValueError("k must be >= 1")

    # k-means++ seeding
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integer(n)]
    d2 = np.square(x - centers[0]).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = x[rng.integer(n)]
            continue
        u = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.square(x - centers[j]).sum(axis=1))

    assign = np.full(n, -1, np.int64)
    trace = []
    for _ in range(max_iters):
        dist = (
            np.square(x).sum(axis=1)[:, None]
            - 2.0 * (x @ centers.T)
            + np.square(centers).sum(axis=1)[None, :]
        )
        new_assign = np.argmin(dist, axis=1)

        # re-seed empty clusters from the farthest point
        used = np.bincount(new_assign, minlength=k)
        for j in np.nonzero(used == 0)[0]:
            cur = dist[np.arange(n), new_assign]
            far = int(np.argmax(cur))
            centers[j] = x[far]
            new_assign[far] = j
            dist[:, j] = np.square(x - centers[j]).sum(axis=1)
            used = np.bincount(new_assign, minlength=k)

        exact = np.square(x - centers[new_assign]).sum(axis=1)
        trace.append(float(exact.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return assign, centers, trace


def cluster_bank(bank: SampleBank, k: int, max_iters: int, seed: int) -> SampleBank:
    """Cluster representatives with k-means; returns a bank with assignments set."""
    if k > bank.count:
        raise ValueError(f"k={k} exceeds bank size {bank.count}")
    assign, centers, _ = kmeans(bank.rep_matrix(), k, max_iters, Rng(seed))
    samples = [
        Sample(id=s.id, z_seed=s.z_seed, tile=s.tile, rep=s.rep, cluster=int(assign[i]))
        for i, s in enumerate(bank.samples)
    ]
    r = bank.rep_res
    return SampleBank(
        level=bank.level, crop_size=bank.crop_size, rep_res=r, samples=samples,
        seed=bank.seed, generator_fingerprint=bank.generator_fingerprint,
        centers=centers.astype(np.float32).reshape(k, 3, r, r),
    )


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def top_k_unary(bank: SampleBank, guidance_crop: Tensor, k: int = 10) -> list:
    """Samples ranked by distance between their representative and the crop.

    Ascending Euclidean distance, ties broken by ascending sample id; at most
    min(k, N) entries.
    """
    r = bank.rep_res
    if guidance_crop.shape != (3, r, r):
        raise ShapeError(f"guidance crop must be (3, {r}, {r}), got {guidance_crop.shape}")
    d2 = np.square(bank.rep_matrix() - guidance_crop.data.ravel()).sum(axis=1)
    order = np.argsort(d2, kind="stable")[: min(k, bank.count)]
    return [Candidate(int(i), float(np.sqrt(d2[i]))) for i in order]


def sample_from_cluster(bank: SampleBank, cluster: int, rng: Rng) -> Sample:
    """Uniform draw over the cluster's members, deterministic in the rng state."""
    if not 0 <= cluster < max(bank.k, 1):
        raise ValueError(f"cluster {cluster} out of range (bank has k={bank.k})")
    members = bank.cluster_members(cluster)
    if not members:
        raise ValueError(f"cluster {cluster} is empty")
    return bank.samples[members[rng.integer(len(members))]]


# ---------------------------------------------------------------------------
# TGB1 bank files
# ---------------------------------------------------------------------------

def save_bank(bank: SampleBank) -> bytes:
    buf = io.BytesIO()
    buf.write(BANK_MAGIC)
    buf.write(struct.pack("<I", BANK_VERSION))
    buf.write(bank.generator_fingerprint)
    t = bank.tile_size
    buf.write(struct.pack("<IIIIII", bank.level, bank.channels, bank.crop_size,
                          bank.rep_res, bank.count, bank.k))
    buf.write(struct.pack("<Q", bank.seed))
    if bank.k:
        buf.write(bank.centers.astype("<f4", copy=False).tobytes())
    for s in bank.samples:
        buf.write(struct.pack("<Q", s.z_seed))
        cl = _NO_CLUSTER_U32 if s.cluster == UNCLUSTERED else s.cluster
        buf.write(struct.pack("<I", cl))
        buf.write(s.tile.data.astype("<f4", copy=False).tobytes())
        buf.write(s.rep.data.astype("<f4", copy=False).tobytes())
    return buf.getvalue()


def load_bank(data: bytes, generator_fingerprint: bytes | None = None) -> SampleBank:
    """Parse a TGB1 byte string, optionally checking it belongs to a generator."""
    pos = 0

    def take(count, what):
        nonlocal pos
        if pos + count > len(data):
            raise FormatError(f"truncated bank file while reading {what}")
        out = data[pos:pos + count]
        pos += count
        return out

    if take(4, "magic") != BANK_MAGIC:
        raise FormatError("not a TGB1 bank file (bad magic)")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != BANK_VERSION:
        raise FormatError(f"unsupported TGB1 version {version}")
    fp = take(32, "generator fingerprint")
    if generator_fingerprint is not None and fp != generator_fingerprint:
        raise CompatibilityError(
            "bank was built from a different generator (fingerprint mismatch)"
        )
    level, channels, crop_size, rep_res, count, k = struct.unpack("<IIIIII", take(24, "header"))
    seed = struct.unpack("<Q", take(8, "seed"))[0]
    tile_side = 2 ** level
    centers = None
    if k:
        raw = take(4 * k * 3 * rep_res * rep_res, "cluster centers")
        centers = np.frombuffer(raw, "<f4").reshape(k, 3, rep_res, rep_res).astype(np.float32)
    tile_count = channels * tile_side * tile_side
    rep_count = 3 * rep_res * rep_res
    samples = []
    for i in range(count):
        rec = f"sample record {i}"
        z_seed = struct.unpack("<Q", take(8, rec))[0]
        cl = struct.unpack("<I", take(4, rec))[0]
        tile = np.frombuffer(take(4 * tile_count, rec), "<f4").reshape(
            channels, tile_side, tile_side).astype(np.float32)
        rep = np.frombuffer(take(4 * rep_count, rec), "<f4").reshape(
            3, rep_res, rep_res).astype(np.float32)
        if not (np.isfinite(tile).all() and np.isfinite(rep).all()):
            raise FormatError(f"corrupt values in sample record {i}")
        if k and cl != _NO_CLUSTER_U32 and cl >= k:
            raise FormatError(f"sample record {i} references cluster {cl} >= k={k}")
        samples.append(Sample(
            id=i, z_seed=z_seed, tile=Tensor(tile), rep=Tensor(rep),
            cluster=UNCLUSTERED if cl == _NO_CLUSTER_U32 else int(cl),
        ))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last sample record")
    return SampleBank(level=level, crop_size=crop_size, rep_res=rep_res, samples=samples,
                      seed=seed, generator_fingerprint=fp, centers=centers)


def rederive_rep(gen: Generator, bank: SampleBank, sample: Sample) -> Tensor:
    """Recompute a sample's representative from its stored latent seed."""
    z = Tensor(Rng(sample.z_seed).normal((gen.spec.latent_dim, 1, 1)))
    tile = g_a(gen, z, bank.level)
    img = g_b(gen, LatentField.from_tile(tile, bank.level))
    return avg_pool_to(img, bank.rep_res)
