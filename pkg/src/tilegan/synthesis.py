"""Latent field synthesis: guided tiling plus MRF refinement.

A small guidance image steers the global layout. Every field cell is scored
by how well a candidate sample's representative matches the guidance region
under the cell's FULL tile footprint (the footprint is wider than the cell,
so adjacent cells see overlapping guidance windows). Neighbor compatibility
adds three terms per 4-connected edge:

  D_V  distance between the two representatives over the band where the
       full tile footprints overlap at the cell stride,
  D_L  the same band measured on the latent tiles themselves,
  D_C  0 when the two samples share a cluster, else 1.

The overlap band has width (T - c) latent units (T = full tile side, c =
cell stride) and is taken at the same centered offset inside both tiles.
Comparing identical indices makes a repeated tile cost exactly zero, keeps
the energy symmetric under swapping the edge's endpoints, and vanishes when
c = T (no overlap). Total energy is the sum of all per-cell match terms and
all per-edge terms, each unordered edge counted once.

Synthesis runs in two steps: an initial tiling assigns every cell its single
best guidance match, then refinement repeatedly re-decides one random cell
against its top guidance candidates, keeping the incumbent when nothing
beats it, so the total energy never increases. Refinement stops at an energy
threshold (a fraction of the initial energy) or a step cap; running to
convergence trades away diversity, so stopping early is the intended mode.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from .bank import Sample, SampleBank, top_k_unary
from .errors import CompatibilityError, FormatError, ShapeError, StateError
from .generator import Generator, LatentField, g_b_chunked, halo_for
from .tensor import Rng, Tensor

FIELD_MAGIC = b"TGF1"
FIELD_VERSION = 1

DIRECTIONS = ("N", "E", "S", "W")


@dataclass
class GuidanceMap:
    """Low-resolution target image plus the field extents it maps onto.

    The map stretches affinely over the whole field, axis by axis. Guidance
    windows for border cells can poke past the field edge; sampling clamps
    to the map border there. A map smaller than the output is simply
    upsampled by the bilinear lookup, never tiled.
    """

    image: Tensor
    cells_x: int
    cells_y: int

    def __post_init__(self):
        if self.image.channels != 3:
            raise ShapeError(f"guidance map must have 3 channels, got {self.image.channels}")
        if self.cells_x < 1 or self.cells_y < 1:
            raise ValueError("field extents must be >= 1 cell")

    def cell_window_norm(self, bank: SampleBank, cx: int, cy: int) -> tuple:
        """Footprint of cell (cx, cy)'s full tile in field-normalized coords."""
        t = bank.tile_size
        c = bank.crop_size
        off = (t - c) // 2
        w = self.cells_x * c
        h = self.cells_y * c
        x0 = (cx * c - off) / w
        y0 = (cy * c - off) / h
        return (x0, y0, x0 + t / w, y0 + t / h)

    def crop_for_cell(self, bank: SampleBank, cx: int, cy: int) -> Tensor:
        rect = self.cell_window_norm(bank, cx, cy)
        return Tensor._wrap(resample_bilinear(self.image.data, rect, bank.rep_res))


def resample_bilinear(img: np.ndarray, rect_norm: tuple, out_res: int) -> np.ndarray:
    """Sample a normalized sub-rectangle of (3, H, W) to (3, out, out).

    Align-centers convention with edge clamping. Interpolates as
    a + w*(b - a), so constant regions come back exactly and integer source
    coordinates return exact pixels.
    """
    _, h, w = img.shape
    x0, y0, x1, y1 = rect_norm
    us = (x0 + (np.arange(out_res) + 0.5) / out_res * (x1 - x0)) * w - 0.5
    vs = (y0 + (np.arange(out_res) + 0.5) / out_res * (y1 - y0)) * h - 0.5
    us = np.clip(us, 0.0, w - 1.0)
    vs = np.clip(vs, 0.0, h - 1.0)
    ix0 = np.floor(us).astype(np.int64)
    iy0 = np.floor(vs).astype(np.int64)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)
    fx = us - ix0
    fy = vs - iy0
    top = img[:, iy0[:, None], ix0[None, :]] + fx[None, None, :] * (
        img[:, iy0[:, None], ix1[None, :]] - img[:, iy0[:, None], ix0[None, :]]
    )
    bot = img[:, iy1[:, None], ix0[None, :]] + fx[None, None, :] * (
        img[:, iy1[:, None], ix1[None, :]] - img[:, iy1[:, None], ix0[None, :]]
    )
    out = top + fy[None, :, None] * (bot - top)
    return out.astype(np.float32)


@dataclass
class EnergyParams:
    """Weights and stopping controls for the field energy."""

    lambda_v: float = 1.0
    lambda_l: float = 0.5
    lambda_c: float = 0.5
    theta_frac: float = 0.85   # stop refining once E <= theta_frac * E_initial
    max_refine_steps: int | None = None  # default 20 * number of cells
    top_k: int = 10

    def __post_init__(self):
        if min(self.lambda_v, self.lambda_l, self.lambda_c) < 0:
            raise ValueError("energy weights must be non-negative")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


class BinaryTerms(NamedTuple):
    d_v: float
    d_l: float
    d_c: float
    weighted: float


class MatchDecision(NamedTuple):
    cell: tuple
    old_id: int
    new_id: int
    changed: bool
    old_local: float
    new_local: float


@dataclass
class EnergyBreakdown:
    """E = E_m + E_n with the per-cell and per-edge terms that produced it.

    h_edges[cy, cx] is the edge between cells (cx, cy) and (cx+1, cy);
    v_edges[cy, cx] the edge to (cx, cy+1). Each edge row stores
    (d_v, d_l, d_c, weighted). Every unordered edge is counted once.
    """

    unary: np.ndarray
    h_edges: np.ndarray
    v_edges: np.ndarray

    @property
    def e_m(self) -> float:
        return float(self.unary.sum())

    @property
    def e_n(self) -> float:
        return float(self.h_edges[:, :, 3].sum() + self.v_edges[:, :, 3].sum())

    @property
    def e(self) -> float:
        return self.e_m + self.e_n


@dataclass
class FieldState:
    """A latent field under synthesis or editing.

    Tracks which cells still need an assignment, the current energy terms,
    the rendered image cache (invalidated regionally through dirty rects),
    and the per-step energy trace of refinement.
    """

    field: LatentField
    guidance: GuidanceMap | None = None
    energy: EnergyBreakdown | None = None
    unassigned: set = dc_field(default_factory=set)
    e_initial: float | None = None
    theta_abs: float | None = None
    image_cache: np.ndarray | None = None
    revision: int = 0
    last_refined: tuple | None = None
    trace: list = dc_field(default_factory=list)
    stop_reason: str | None = None
    spec: object | None = None  # GeneratorSpec, set once a generator is in play

    @property
    def cells_x(self) -> int:
        return self.field.cells_x

    @property
    def cells_y(self) -> int:
        return self.field.cells_y

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y

    def theta_local(self) -> float:
        if self.theta_abs is None:
            return float("inf")
        return self.theta_abs / self.n_cells


# ---------------------------------------------------------------------------
# Energy terms
# ---------------------------------------------------------------------------

def unary_energy(bank: SampleBank, sample: Sample, guidance: GuidanceMap, cell: tuple) -> float:
    """Distance between the sample's representative and the guidance window."""
    cx, cy = cell
    if not (0 <= cx < guidance.cells_x and 0 <= cy < guidance.cells_y):
        raise ValueError(f"cell {cell} outside the {guidance.cells_x}x{guidance.cells_y} field")
    crop = guidance.crop_for_cell(bank, cx, cy)
    d = sample.rep.data - crop.data
    return float(np.sqrt(np.sum(np.square(d), dtype=np.float32)))


def _band(t: int, c: int) -> tuple:
    """Centered overlap band [lo, hi) of width t - c inside a tile of side t."""
    width = t - c
    lo = (t - width) // 2
    return lo, lo + width


def _strip(arr: np.ndarray, t: int, c: int, horizontal: bool) -> np.ndarray:
    lo, hi = _band(t, c)
    if horizontal:
        return arr[:, :, lo:hi]
    return arr[:, lo:hi, :]


def binary_energy(bank: SampleBank, a: Sample, b: Sample, params: EnergyParams,
                  direction: str) -> BinaryTerms:
    """Compatibility terms for sample `a` with neighbor `b` on side `direction`.

    Exactly symmetric: (a, b, E) equals (b, a, W), and likewise for N/S.
    With no overlap (c = tile side) the visual and latent terms are zero by
    convention and only the cluster term remains.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    t = bank.tile_size
    c = bank.crop_size
    horizontal = direction in ("E", "W")
    if t == c:
        d_v = d_l = 0.0
    else:
        r = bank.rep_res
        scale = r / t
        lo, hi = _band(t, c)
        plo, phi = round(lo * scale), round(hi * scale)
        if horizontal:
            va = a.rep.data[:, :, plo:phi]
            vb = b.rep.data[:, :, plo:phi]
        else:
            va = a.rep.data[:, plo:phi, :]
            vb = b.rep.data[:, plo:phi, :]
        d_v = float(np.sqrt(np.sum(np.square(va - vb), dtype=np.float32)))
        la = _strip(a.tile.data, t, c, horizontal)
        lb = _strip(b.tile.data, t, c, horizontal)
        d_l = float(np.sqrt(np.sum(np.square(la - lb), dtype=np.float32)))
    d_c = 0.0 if a.cluster == b.cluster else 1.0
    weighted = params.lambda_v * d_v + params.lambda_l * d_l + params.lambda_c * d_c
    return BinaryTerms(d_v, d_l, d_c, weighted)


def _edge_terms(bank, params, sa: Sample, sb: Sample, horizontal: bool) -> BinaryTerms:
    return binary_energy(bank, sa, sb, params, "E" if horizontal else "S")


def total_energy(state: FieldState, bank: SampleBank, guidance: GuidanceMap,
                 params: EnergyParams) -> EnergyBreakdown:
    """Recompute every unary and edge term from the current assignments."""
    if state.unassigned:
        raise StateError(f"{len(state.unassigned)} cells are still unassigned")
    cy, cx = state.cells_y, state.cells_x
    ids = state.field.sample_ids
    if (ids < 0).any():
        raise StateError("field has cells without sample provenance")
    unary = np.zeros((cy, cx))
    for y in range(cy):
        for x in range(cx):
            unary[y, x] = unary_energy(bank, bank.samples[ids[y, x]], guidance, (x, y))
    h_edges = np.zeros((cy, max(cx - 1, 0), 4))
    v_edges = np.zeros((max(cy - 1, 0), cx, 4))
    for y in range(cy):
        for x in range(cx - 1):
            h_edges[y, x] = _edge_terms(bank, params, bank.samples[ids[y, x]],
                                        bank.samples[ids[y, x + 1]], True)
    for y in range(cy - 1):
        for x in range(cx):
            v_edges[y, x] = _edge_terms(bank, params, bank.samples[ids[y, x]],
                                        bank.samples[ids[y + 1, x]], False)
    return EnergyBreakdown(unary=unary, h_edges=h_edges, v_edges=v_edges)


# ---------------------------------------------------------------------------
# Initial tiling
# ---------------------------------------------------------------------------

def _place(field: LatentField, bank: SampleBank, cx: int, cy: int, sample: Sample) -> LatentField:
    return field.with_cell_values(cx, cy, sample.crop(bank.crop_size),
                                  sample_id=sample.id, cluster_id=sample.cluster)


def initial_tiling(bank: SampleBank, guidance: GuidanceMap, params: EnergyParams) -> FieldState:
    """Raster-scan the field, assigning each cell its single best guidance match."""
    if bank.count == 0:
        raise ValueError("bank is empty")
    cxn, cyn = guidance.cells_x, guidance.cells_y
    c = bank.crop_size
    ch = bank.channels
    values = np.zeros((ch, cyn * c, cxn * c), np.float32)
    ids = np.full((cyn, cxn), -1, np.int64)
    clusters = np.full((cyn, cxn), -1, np.int64)
    reps = bank.rep_matrix()
    for y in range(cyn):
        for x in range(cxn):
            crop = guidance.crop_for_cell(bank, x, y)
            d2 = np.square(reps - crop.data.ravel()).sum(axis=1)
            best = int(np.argmin(d2))
            s = bank.samples[best]
            values[:, y * c:(y + 1) * c, x * c:(x + 1) * c] = s.crop(c)
            ids[y, x] = best
            clusters[y, x] = s.cluster
    field = LatentField(level=bank.level, cell_size=c, values=Tensor._wrap(values),
                        sample_ids=ids, cluster_ids=clusters)
    state = FieldState(field=field, guidance=guidance)
    state.energy = total_energy(state, bank, guidance, params)
    energy = state.energy
    state.e_initial = energy.e
    state.theta_abs = params.theta_frac * energy.e if np.isfinite(params.theta_frac) else float("inf")
    state.trace.append((0, energy.e, True))
    return state


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

def _incident_edges(state: FieldState, cx: int, cy: int):
    """(neighbor cell, edge array, edge index, horizontal) for each 4-neighbor."""
    out = []
    if cx > 0:
        out.append(((cx - 1, cy), state.energy.h_edges, (cy, cx - 1), True, False))
    if cx < state.cells_x - 1:
        out.append(((cx + 1, cy), state.energy.h_edges, (cy, cx), True, True))
    if cy > 0:
        out.append(((cx, cy - 1), state.energy.v_edges, (cy - 1, cx), False, False))
    if cy < state.cells_y - 1:
        out.append(((cx, cy + 1), state.energy.v_edges, (cy, cx), False, True))
    return out


def _local_energy(state: FieldState, bank: SampleBank, params: EnergyParams,
                  cell: tuple, sample: Sample):
    """Unary plus incident edge terms if `sample` occupied `cell`.

    Edges to cells without sample provenance (hand edits) cannot be scored
    and contribute nothing.
    """
    cx, cy = cell
    unary = unary_energy(bank, sample, state.guidance, cell)
    total = unary
    edges = []
    for (nx, ny), arr, idx, horizontal, _self_first in _incident_edges(state, cx, cy):
        nid = int(state.field.sample_ids[ny, nx])
        if nid < 0:
            continue
        terms = _edge_terms(bank, params, sample, bank.samples[nid], horizontal)
        edges.append((arr, idx, terms))
        total += terms.weighted
    return total, unary, edges


def better_match(state: FieldState, cell: tuple, bank: SampleBank,
                 guidance: GuidanceMap, params: EnergyParams,
                 rng: Rng | None = None) -> MatchDecision:
    """Re-decide one cell against its top guidance candidates.

    Keeps the cell when its local energy is already below the per-cell share
    of the stopping threshold. Otherwise evaluates the incumbent plus the
    top_k unary candidates by full local energy (unary + incident edges) and
    keeps the argmin, ties to the lowest sample id, so total energy never
    increases. The rng parameter is accepted for interface stability; the
    decision itself is deterministic.
    """
    cx, cy = cell
    incumbent = int(state.field.sample_ids[cy, cx])
    if incumbent < 0:
        candidates = []
        old_local = float("inf")
    else:
        old_local, _, _ = _local_energy(state, bank, params, cell, bank.samples[incumbent])
        if old_local <= state.theta_local():
            return MatchDecision(cell, incumbent, incumbent, False, old_local, old_local)
        candidates = [incumbent]

    crop = guidance.crop_for_cell(bank, cx, cy)
    for cand in top_k_unary(bank, crop, params.top_k):
        if cand.sample_id not in candidates:
            candidates.append(cand.sample_id)
    candidates.sort()

    best_id, best_val, best_parts = None, None, None
    for sid in candidates:
        val, unary, edges = _local_energy(state, bank, params, cell, bank.samples[sid])
        if best_val is None or val < best_val:
            best_id, best_val, best_parts = sid, val, (unary, edges)
    if best_id == incumbent:
        return MatchDecision(cell, incumbent, incumbent, False, old_local, best_val)

    sample = bank.samples[best_id]
    state.field = _place(state.field, bank, cx, cy, sample)
    unary, edges = best_parts
    state.energy.unary[cy, cx] = unary
    for arr, idx, terms in edges:
        arr[idx] = terms
    state.revision += 1
    return MatchDecision(cell, incumbent, best_id, True, old_local, best_val)


def generate_texture_map(gen: Generator, bank: SampleBank, guidance: GuidanceMap,
                         params: EnergyParams, rng: Rng,
                         chunk: int = 16, threads: int = 1):
    """Full pipeline: initial tiling, random-cell refinement, chunked render.

    Returns (state, image). Refinement stops once the total energy drops to
    theta_frac of the initial energy or after max_refine_steps (default
    20 * cells), whichever comes first; the reason lands in state.stop_reason.
    """
    state = initial_tiling(bank, guidance, params)
    state.spec = gen.spec
    refine(state, bank, guidance, params, rng)
    image = g_b_chunked(gen, state.field, chunk=chunk,
                        halo=halo_for(gen.spec, bank.level), threads=threads)
    state.image_cache = np.asarray(image.data).copy()
    return state, image


def refine(state: FieldState, bank: SampleBank, guidance: GuidanceMap,
           params: EnergyParams, rng: Rng, max_steps: int | None = None) -> int:
    """Run the refinement loop on an already tiled state; returns steps taken."""
    n = state.n_cells
    cap = max_steps if max_steps is not None else (
        params.max_refine_steps if params.max_refine_steps is not None else 20 * n)
    steps = 0
    while steps < cap:
        if state.energy.e <= state.theta_abs:
            state.stop_reason = "energy"
            return steps
        cell = _pick_cell(state, rng)
        decision = better_match(state, cell, bank, guidance, params, rng)
        steps += 1
        state.last_refined = cell
        state.trace.append((state.trace[-1][0] + 1 if state.trace else 1,
                            state.energy.e, decision.changed))
    state.stop_reason = "energy" if state.energy.e <= state.theta_abs else "step-cap"
    return steps


def _pick_cell(state: FieldState, rng: Rng) -> tuple:
    """Uniform cell choice, excluding the immediately preceding pick."""
    n = state.n_cells
    last = state.last_refined
    if last is None or n == 1:
        idx = rng.integer(n)
    else:
        last_idx = last[1] * state.cells_x + last[0]
        idx = rng.integer(n - 1)
        if idx >= last_idx:
            idx += 1
    return (idx % state.cells_x, idx // state.cells_x)


# ---------------------------------------------------------------------------
# TGF1 field files
# ---------------------------------------------------------------------------

def save_field(field: LatentField, bank_fingerprint: bytes) -> bytes:
    buf = io.BytesIO()
    buf.write(FIELD_MAGIC)
    buf.write(struct.pack("<I", FIELD_VERSION))
    buf.write(bank_fingerprint)
    buf.write(struct.pack("<IIIII", field.level, field.cell_size,
                          field.values.channels, field.cells_x, field.cells_y))
    ids = field.sample_ids.astype(np.int64)
    ids_u32 = np.where(ids < 0, 0xFFFFFFFF, ids).astype("<u4")
    buf.write(ids_u32.tobytes())
    buf.write(field.values.data.astype("<f4", copy=False).tobytes())
    return buf.getvalue()


def load_field(data: bytes, bank: SampleBank | None = None) -> LatentField:
    """Parse a TGF1 byte string; cluster provenance is rebuilt from the bank."""
    pos = 0

    def take(count, what):
        nonlocal pos
        if pos + count > len(data):
            raise FormatError(f"truncated field file while reading {what}")
        out = data[pos:pos + count]
        pos += count
        return out

    if take(4, "magic") != FIELD_MAGIC:
        raise FormatError("not a TGF1 field file (bad magic)")
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != FIELD_VERSION:
        raise FormatError(f"unsupported TGF1 version {version}")
    fp = take(32, "bank fingerprint")
    if bank is not None and fp != bank.fingerprint:
        raise CompatibilityError("field belongs to a different bank (fingerprint mismatch)")
    level, cell, channels, cx, cy = struct.unpack("<IIIII", take(20, "header"))
    ids_raw = np.frombuffer(take(4 * cx * cy, "sample ids"), "<u4").reshape(cy, cx)
    ids = ids_raw.astype(np.int64)
    ids[ids_raw == 0xFFFFFFFF] = -1
    vals = np.frombuffer(take(4 * channels * cy * cell * cx * cell, "latent values"), "<f4")
    vals = vals.reshape(channels, cy * cell, cx * cell).astype(np.float32)
    if not np.isfinite(vals).all():
        raise FormatError("corrupt latent values in field file")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in field file")
    clusters = np.full((cy, cx), -1, np.int64)
    if bank is not None:
        for y in range(cy):
            for x in range(cx):
                if ids[y, x] >= 0:
                    if ids[y, x] >= bank.count:
                        raise FormatError(f"cell ({x},{y}) references sample {ids[y, x]} "
                                          f"outside the bank of {bank.count}")
                    clusters[y, x] = bank.samples[ids[y, x]].cluster
    return LatentField(level=level, cell_size=cell, values=Tensor(vals),
                       sample_ids=ids, cluster_ids=clusters)
