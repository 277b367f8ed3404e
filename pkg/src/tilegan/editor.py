"""Latent-field editing: brush, clone, noise, interpolation, guidance updates.

Edits mutate cells of a FieldState and return the dirty region that needs
re-rendering: the edited cells' pixel footprint dilated by the receptive
field halo. Pixels outside that region are guaranteed bitwise unchanged, so
re-synthesis only ever touches a bounded window.

The Editor wrapper adds bounded undo and an append-only command log. Every
command carries its own seed, so replaying a saved log against the same bank
reproduces the field bytes exactly.

Provenance bookkeeping: the brush and clone keep per-cell sample ids intact.
Noise and interpolation produce latents that no longer correspond to any
bank sample, so affected cells drop to id -1 and their energy terms are
zeroed until refinement re-decides them.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .bank import SampleBank, sample_from_cluster
from .errors import StateError
from .generator import Generator, GeneratorSpec, LatentField, halo_for, pixel_scale
from .generator import _render_window, render_region
from .synthesis import FieldState, GuidanceMap, _local_energy
from .tensor import Rng, Tensor

COMMAND_KINDS = ("brush", "clone", "shuffle-clone", "noise", "interpolate", "guidance-update")


@dataclass(frozen=True)
class DirtyRegion:
    """Half-open cell rect plus the pixel rect it dirties after dilation."""

    cell_rect: tuple   # (x0, y0, x1, y1) in cells
    pixel_rect: tuple  # (x0, y0, x1, y1) in output pixels

    @property
    def empty(self) -> bool:
        x0, y0, x1, y1 = self.pixel_rect
        return x1 <= x0 or y1 <= y0


@dataclass(frozen=True)
class EditCommand:
    """One replayable edit: kind, target rect, parameters, and its own seed.

    For guidance-update the rect is in guidance-map pixels; for every other
    kind it is in field cells.
    """

    kind: str
    rect: tuple
    params: dict
    seed: int = 0

    def __post_init__(self):
        if self.kind not in COMMAND_KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if len(self.rect) != 4:
            raise ValueError("rect must be (x0, y0, x1, y1)")

    def to_json(self) -> str:
        return json.dumps(
            {"kind": self.kind, "rect": list(self.rect), "params": self.params, "seed": self.seed},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "EditCommand":
        d = json.loads(line)
        return cls(kind=d["kind"], rect=tuple(d["rect"]), params=d["params"], seed=d.get("seed", 0))


def encode_patch(patch: np.ndarray) -> dict:
    """Pack a float32 image patch for the textual command log."""
    arr = np.ascontiguousarray(patch, dtype="<f4")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_patch(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, "<f4").reshape(blob["shape"]).astype(np.float32)


def dirty_for(spec: GeneratorSpec, field: LatentField, cell_rect: tuple) -> DirtyRegion:
    """Dirty pixels for a cell rect: its footprint dilated by the pixel halo."""
    x0, y0, x1, y1 = cell_rect
    if x1 <= x0 or y1 <= y0:
        return DirtyRegion(cell_rect, (0, 0, 0, 0))
    c = field.cell_size
    m = halo_for(spec, field.level)
    scale = pixel_scale(spec, field.level)
    px0 = max(0, x0 * c - m) * scale
    py0 = max(0, y0 * c - m) * scale
    px1 = min(field.width, x1 * c + m) * scale
    py1 = min(field.height, y1 * c + m) * scale
    return DirtyRegion(cell_rect, (px0, py0, px1, py1))


def _check_rect(state: FieldState, rect: tuple, what: str = "rect"):
    x0, y0, x1, y1 = rect
    if not (0 <= x0 < x1 <= state.cells_x and 0 <= y0 < y1 <= state.cells_y):
        raise ValueError(f"{what} {rect} outside the {state.cells_x}x{state.cells_y} field")


def _write_cells(state: FieldState, rect: tuple, blocks: np.ndarray,
                 ids: np.ndarray, clusters: np.ndarray):
    """Replace the latents and provenance of a cell rect in one copy."""
    x0, y0, x1, y1 = rect
    c = state.field.cell_size
    buf = state.field.values.data.copy()
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            buf[:, yy * c:(yy + 1) * c, xx * c:(xx + 1) * c] = blocks[yy - y0, xx - x0]
    new_ids = state.field.sample_ids.copy()
    new_cls = state.field.cluster_ids.copy()
    new_ids[y0:y1, x0:x1] = ids
    new_cls[y0:y1, x0:x1] = clusters
    state.field = LatentField(state.field.level, c, Tensor._wrap(buf), new_ids, new_cls)
    state.revision += 1


def _zero_energy_terms(state: FieldState, rect: tuple):
    """Clear the stored terms touching a rect whose provenance went away."""
    if state.energy is None:
        return
    x0, y0, x1, y1 = rect
    state.energy.unary[y0:y1, x0:x1] = 0.0
    h, v = state.energy.h_edges, state.energy.v_edges
    h[y0:y1, max(x0 - 1, 0):x1] = 0.0
    v[max(y0 - 1, 0):y1, x0:x1] = 0.0


def _refresh_energy_cell(state: FieldState, bank: SampleBank, params, cx: int, cy: int):
    """Recompute the unary and incident edge terms of one provenance-backed cell."""
    if state.energy is None or state.guidance is None or params is None:
        return
    sid = int(state.field.sample_ids[cy, cx])
    if sid < 0:
        return
    _, unary, edges = _local_energy(state, bank, params, (cx, cy), bank.samples[sid])
    state.energy.unary[cy, cx] = unary
    for arr, idx, terms in edges:
        arr[idx] = terms


def _refresh_energy_rect(state: FieldState, bank: SampleBank, params, rect: tuple):
    """Re-derive the stored energy terms after a rect write.

    Cells that lost provenance get their terms zeroed first (including the
    edges they touch), then every provenance-backed cell in the rect is
    recomputed against its current neighbors.
    """
    if state.energy is None or state.guidance is None or params is None:
        return
    x0, y0, x1, y1 = rect
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            if state.field.sample_ids[yy, xx] < 0:
                _zero_energy_terms(state, (xx, yy, xx + 1, yy + 1))
    for yy in range(y0, y1):
        for xx in range(x0, x1):
            if state.field.sample_ids[yy, xx] >= 0:
                _refresh_energy_cell(state, bank, params, xx, yy)


# ---------------------------------------------------------------------------
# Primitive edit operations
# ---------------------------------------------------------------------------

def apply_brush(state: FieldState, cell: tuple, cluster: int, bank: SampleBank,
                rng: Rng, params=None) -> DirtyRegion:
    """Replace one cell with a random sample from the chosen cluster."""
    cx, cy = cell
    rect = (cx, cy, cx + 1, cy + 1)
    _check_rect(state, rect, "cell")
    sample = sample_from_cluster(bank, cluster, rng)  # validates the cluster
    c = bank.crop_size
    _write_cells(state, rect, sample.crop(c)[None, None],
                 np.array([[sample.id]]), np.array([[sample.cluster]]))
    _refresh_energy_cell(state, bank, params, cx, cy)
    return dirty_for_state(state, rect)


def clone(state: FieldState, src_rect: tuple, dst_origin: tuple, shuffle: bool,
          rng: Rng, bank: SampleBank | None = None, params=None) -> DirtyRegion:
    """Copy the latents (and provenance) of src_rect to dst_origin.

    Overlapping source and destination are fine: the source is snapshotted
    before anything is written. With shuffle on, the copied cells land in a
    seeded uniform permutation of their order.
    """
    sx0, sy0, sx1, sy1 = src_rect
    _check_rect(state, src_rect, "source rect")
    w, h = sx1 - sx0, sy1 - sy0
    dx, dy = dst_origin
    dst_rect = (dx, dy, dx + w, dy + h)
    _check_rect(state, dst_rect, "destination rect")
    c = state.field.cell_size
    vals = state.field.values.data
    blocks = np.stack([
        np.stack([vals[:, (sy0 + yy) * c:(sy0 + yy + 1) * c, (sx0 + xx) * c:(sx0 + xx + 1) * c].copy()
                  for xx in range(w)])
        for yy in range(h)
    ])
    ids = state.field.sample_ids[sy0:sy1, sx0:sx1].copy()
    clusters = state.field.cluster_ids[sy0:sy1, sx0:sx1].copy()
    if shuffle:
        perm = rng.permutation(w * h)
        blocks = blocks.reshape(w * h, *blocks.shape[2:])[perm].reshape(h, w, *blocks.shape[2:])
        ids = ids.ravel()[perm].reshape(h, w)
        clusters = clusters.ravel()[perm].reshape(h, w)
    _write_cells(state, dst_rect, blocks, ids, clusters)
    if bank is not None:
        _refresh_energy_rect(state, bank, params, dst_rect)
    return dirty_for_state(state, dst_rect)


def perturb(state: FieldState, rect: tuple, sigma: float, rng: Rng) -> DirtyRegion:
    """Add Gaussian latent noise (std sigma) to a cell rect."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    _check_rect(state, rect)
    if sigma == 0.0:
        x0, y0, _, _ = rect
        return DirtyRegion((x0, y0, x0, y0), (0, 0, 0, 0))
    x0, y0, x1, y1 = rect
    c = state.field.cell_size
    buf = state.field.values.data.copy()
    region = buf[:, y0 * c:y1 * c, x0 * c:x1 * c]
    region += rng.normal(region.shape, std=sigma)
    new_ids = state.field.sample_ids.copy()
    new_cls = state.field.cluster_ids.copy()
    new_ids[y0:y1, x0:x1] = -1
    new_cls[y0:y1, x0:x1] = -1
    state.field = LatentField(state.field.level, c, Tensor._wrap(buf), new_ids, new_cls)
    state.revision += 1
    _zero_energy_terms(state, rect)
    return dirty_for_state(state, rect)


def interpolate(state: FieldState, cell: tuple, a, b, t: float,
                bank: SampleBank | None = None, params=None) -> DirtyRegion:
    """Set one cell to the linear latent blend (1-t)*a + t*b of two samples.

    At t = 0 or t = 1 (or when a and b are the same sample) the endpoint is
    copied exactly and keeps its provenance; anywhere in between the cell
    becomes a hand edit with no sample id.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    cx, cy = cell
    rect = (cx, cy, cx + 1, cy + 1)
    _check_rect(state, rect, "cell")
    c = state.field.cell_size
    if a.id == b.id or t == 0.0:
        block, sid, cl = a.crop(c), a.id, a.cluster
    elif t == 1.0:
        block, sid, cl = b.crop(c), b.id, b.cluster
    else:
        block = np.float32(1.0 - t) * a.crop(c) + np.float32(t) * b.crop(c)
        sid, cl = -1, -1
    _write_cells(state, rect, np.asarray(block, np.float32)[None, None],
                 np.array([[sid]]), np.array([[cl]]))
    if sid >= 0 and bank is not None:
        _refresh_energy_cell(state, bank, params, cx, cy)
    else:
        _zero_energy_terms(state, rect)
    return dirty_for_state(state, rect)


def update_guidance(state: FieldState, patch: Tensor, at: tuple,
                    bank: SampleBank | None = None) -> set:
    """Write an image patch into the guidance map at (x, y).

    Returns the set of cells whose guidance windows intersect the patch;
    those are the candidates for re-matching, which the caller triggers
    explicitly through refinement. The energy terms themselves are left
    untouched here.
    """
    if state.guidance is None:
        raise StateError("field has no guidance map")
    g = state.guidance
    x, y = at
    ph, pw = patch.height, patch.width
    if not (0 <= x and 0 <= y and x + pw <= g.image.width and y + ph <= g.image.height):
        raise ValueError(f"patch {pw}x{ph} at {at} outside the {g.image.width}x{g.image.height} map")
    if pw == 0 or ph == 0:
        return set()
    buf = g.image.data.copy()
    buf[:, y:y + ph, x:x + pw] = patch.data
    state.guidance = GuidanceMap(image=Tensor._wrap(buf), cells_x=g.cells_x, cells_y=g.cells_y)
    state.revision += 1
    if bank is None:
        raise ValueError("update_guidance needs the bank to compute affected windows")
    affected = set()
    mw, mh = g.image.width, g.image.height
    for cy in range(g.cells_y):
        for cx in range(g.cells_x):
            nx0, ny0, nx1, ny1 = state.guidance.cell_window_norm(bank, cx, cy)
            wx0, wy0, wx1, wy1 = nx0 * mw, ny0 * mh, nx1 * mw, ny1 * mh
            if wx0 < x + pw and wx1 > x and wy0 < y + ph and wy1 > y:
                affected.add((cx, cy))
    return affected


def dirty_for_state(state: FieldState, cell_rect: tuple) -> DirtyRegion:
    if state.spec is None:
        raise StateError("field state has no generator spec attached")
    return dirty_for(state.spec, state.field, cell_rect)


def resynthesize(gen: Generator, state: FieldState, dirty: DirtyRegion) -> Tensor:
    """Re-render just the dirty window and splice it into the image cache.

    The patch is evaluated with enough halo context that, inside the dirty
    rect, it is bitwise what a full re-render would produce; everything
    outside the rect keeps its cached bytes.
    """
    if dirty.empty:
        return Tensor.zeros(3, 0, 0)
    px0, py0, px1, py1 = dirty.pixel_rect
    patch = render_region(gen, state.field, dirty.pixel_rect)
    if state.image_cache is None:
        state.image_cache = _render_window(gen, state.field.values.data, state.field.level)
    state.image_cache[:, py0:py1, px0:px1] = patch
    return Tensor(patch)


# ---------------------------------------------------------------------------
# Editor: undo history and the command log
# ---------------------------------------------------------------------------

class Editor:
    """Applies EditCommands to one FieldState with undo and a replayable log."""

    def __init__(self, state: FieldState, bank: SampleBank, spec: GeneratorSpec,
                 params=None, history_limit: int = 64):
        state.spec = spec
        self.state = state
        self.bank = bank
        self.spec = spec
        self.params = params
        self.history_limit = history_limit
        self._undo: list = []
        self.log: list = []
        self.last_affected_cells: set = set()

    # -- snapshots (rect-scoped: only bytes a command can touch) ------------

    def _snapshot(self, cmd: EditCommand):
        st = self.state
        if cmd.kind == "guidance-update":
            x0, y0, x1, y1 = cmd.rect
            return {
                "kind": "guidance",
                "rect": tuple(cmd.rect),
                "patch": st.guidance.image.data[:, y0:y1, x0:x1].copy(),
            }
        x0, y0, x1, y1 = cmd.rect
        c = st.field.cell_size
        return {
            "kind": "cells",
            "rect": tuple(cmd.rect),
            "values": st.field.values.data[:, y0 * c:y1 * c, x0 * c:x1 * c].copy(),
            "sample_ids": st.field.sample_ids[y0:y1, x0:x1].copy(),
            "cluster_ids": st.field.cluster_ids[y0:y1, x0:x1].copy(),
        }

    def _restore(self, snap) -> DirtyRegion:
        st = self.state
        x0, y0, x1, y1 = snap["rect"]
        if snap["kind"] == "guidance":
            g = st.guidance
            buf = g.image.data.copy()
            buf[:, y0:y1, x0:x1] = snap["patch"]
            st.guidance = GuidanceMap(image=Tensor._wrap(buf), cells_x=g.cells_x, cells_y=g.cells_y)
            st.revision += 1
            return DirtyRegion((0, 0, 0, 0), (0, 0, 0, 0))
        c = st.field.cell_size
        buf = st.field.values.data.copy()
        buf[:, y0 * c:y1 * c, x0 * c:x1 * c] = snap["values"]
        ids = st.field.sample_ids.copy()
        cls = st.field.cluster_ids.copy()
        ids[y0:y1, x0:x1] = snap["sample_ids"]
        cls[y0:y1, x0:x1] = snap["cluster_ids"]
        st.field = LatentField(st.field.level, c, Tensor._wrap(buf), ids, cls)
        st.revision += 1
        _refresh_energy_rect(st, self.bank, self.params, snap["rect"])
        return dirty_for(self.spec, st.field, snap["rect"])

    # -- command application -------------------------------------------------

    def validate(self, cmd: EditCommand):
        """Raise without touching the field if the command cannot apply."""
        st = self.state
        if cmd.kind == "guidance-update":
            if st.guidance is None:
                raise StateError("field has no guidance map")
            x0, y0, x1, y1 = cmd.rect
            g = st.guidance.image
            if not (0 <= x0 <= x1 <= g.width and 0 <= y0 <= y1 <= g.height):
                raise ValueError(f"guidance rect {cmd.rect} outside the {g.width}x{g.height} map")
            patch = decode_patch(cmd.params["patch"])
            if tuple(patch.shape) != (3, y1 - y0, x1 - x0):
                raise ValueError("guidance patch shape does not match its rect")
            return
        _check_rect(st, cmd.rect)
        if cmd.kind == "brush":
            cluster = int(cmd.params["cluster"])
            if not 0 <= cluster < max(self.bank.k, 1) or not self.bank.cluster_members(cluster):
                raise ValueError(f"cluster {cluster} is invalid or empty")
        elif cmd.kind in ("clone", "shuffle-clone"):
            src = tuple(cmd.params["src"])
            _check_rect(st, src, "source rect")
            if (src[2] - src[0], src[3] - src[1]) != (cmd.rect[2] - cmd.rect[0], cmd.rect[3] - cmd.rect[1]):
                raise ValueError("clone source and destination sizes differ")
        elif cmd.kind == "noise":
            if float(cmd.params["sigma"]) < 0:
                raise ValueError("sigma must be >= 0")
        elif cmd.kind == "interpolate":
            t = float(cmd.params["t"])
            if not 0.0 <= t <= 1.0:
                raise ValueError("t must be in [0, 1]")
            for key in ("a", "b"):
                if not 0 <= int(cmd.params[key]) < self.bank.count:
                    raise ValueError(f"sample id {cmd.params[key]} outside the bank")

    def apply(self, cmd: EditCommand) -> DirtyRegion:
        self.validate(cmd)
        snap = self._snapshot(cmd)
        rng = Rng(cmd.seed)
        st = self.state
        self.last_affected_cells = set()
        if cmd.kind == "brush":
            dirty = self._brush_rect(cmd.rect, int(cmd.params["cluster"]), rng)
        elif cmd.kind in ("clone", "shuffle-clone"):
            dirty = clone(st, tuple(cmd.params["src"]), (cmd.rect[0], cmd.rect[1]),
                          cmd.kind == "shuffle-clone", rng, self.bank, self.params)
        elif cmd.kind == "noise":
            dirty = perturb(st, cmd.rect, float(cmd.params["sigma"]), rng)
        elif cmd.kind == "interpolate":
            a = self.bank.samples[int(cmd.params["a"])]
            b = self.bank.samples[int(cmd.params["b"])]
            x0, y0, x1, y1 = cmd.rect
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    interpolate(st, (xx, yy), a, b, float(cmd.params["t"]),
                                self.bank, self.params)
            dirty = dirty_for(self.spec, st.field, cmd.rect)
        else:  # guidance-update
            x0, y0, x1, y1 = cmd.rect
            patch = Tensor(decode_patch(cmd.params["patch"]))
            self.last_affected_cells = update_guidance(st, patch, (x0, y0), self.bank)
            dirty = DirtyRegion((0, 0, 0, 0), (0, 0, 0, 0))
        self._undo.append(snap)
        if len(self._undo) > self.history_limit:
            self._undo.pop(0)
        self.log.append(cmd)
        return dirty

    def _brush_rect(self, rect: tuple, cluster: int, rng: Rng) -> DirtyRegion:
        # a brush larger than one cell is independent cluster draws per cell
        x0, y0, x1, y1 = rect
        for yy in range(y0, y1):
            for xx in range(x0, x1):
                apply_brush(self.state, (xx, yy), cluster, self.bank, rng, self.params)
        return dirty_for(self.spec, self.state.field, rect)

    def undo(self) -> DirtyRegion | None:
        if not self._undo:
            return None
        self.log.append(None)  # marks an undo in the session log; not replayable
        return self._restore(self._undo.pop())

    # -- log ----------------------------------------------------------------

    def log_lines(self) -> list:
        return [cmd.to_json() for cmd in self.log if cmd is not None]


def replay(lines, state: FieldState, bank: SampleBank, spec: GeneratorSpec,
           params=None) -> FieldState:
    """Apply a saved command log to a field; deterministic per-command seeds."""
    editor = Editor(state, bank, spec, params)
    for line in lines:
        line = line.strip()
        if line:
            editor.apply(EditCommand.from_json(line))
    return state
