import numpy as np
import pytest

from tilegan.editor import (
    DirtyRegion,
    EditCommand,
    Editor,
    apply_brush,
    clone,
    dirty_for,
    encode_patch,
    interpolate,
    perturb,
    replay,
    resynthesize,
    update_guidance,
)
from tilegan.errors import StateError
from tilegan.generator import g_b, halo_for, pixel_scale
from tilegan.synthesis import EnergyParams, GuidanceMap, initial_tiling, total_energy
from tilegan.tensor import Rng, Tensor


def tiled_state(bank, gen, ids, cells_x, cells_y, params=None):
    r = bank.rep_res
    img = np.zeros((3, cells_y * r, cells_x * r), np.float32)
    for i, sid in enumerate(ids):
        y, x = divmod(i, cells_x)
        img[:, y * r:(y + 1) * r, x * r:(x + 1) * r] = bank.samples[sid].rep.data
    g = GuidanceMap(image=Tensor(img), cells_x=cells_x, cells_y=cells_y)
    state = initial_tiling(bank, g, params or EnergyParams())
    state.spec = gen.spec
    return state


@pytest.fixture()
def state4(small_gen, small_bank):
    return tiled_state(small_bank, small_gen, [1, 5, 9, 13, 17, 21, 25, 29, 33,
                                               37, 41, 45, 49, 53, 57, 61], 4, 4)


class TestBrush:
    def test_provenance_matches_cluster(self, state4, small_bank):
        dirty = apply_brush(state4, (1, 2), 3, small_bank, Rng(5))
        sid = int(state4.field.sample_ids[2, 1])
        assert small_bank.samples[sid].cluster == 3
        assert state4.field.cluster_ids[2, 1] == 3
        assert not dirty.empty

    def test_deterministic_choice(self, small_gen, small_bank):
        a = tiled_state(small_bank, small_gen, [1, 2, 3, 4], 2, 2)
        b = tiled_state(small_bank, small_gen, [1, 2, 3, 4], 2, 2)
        apply_brush(a, (0, 0), 1, small_bank, Rng(42))
        apply_brush(b, (0, 0), 1, small_bank, Rng(42))
        assert a.field.sample_ids[0, 0] == b.field.sample_ids[0, 0]
        assert np.array_equal(a.field.values.data, b.field.values.data)

    def test_invalid_cluster(self, state4, small_bank):
        with pytest.raises(ValueError):
            apply_brush(state4, (0, 0), 99, small_bank, Rng(1))

    def test_locality_outside_dirty_rect(self, small_gen, small_bank, state4):
        before = g_b(small_gen, state4.field).data
        dirty = apply_brush(state4, (2, 1), 0, small_bank, Rng(7))
        after = g_b(small_gen, state4.field).data
        x0, y0, x1, y1 = dirty.pixel_rect
        outside = (after != before)
        outside[:, y0:y1, x0:x1] = False
        assert not outside.any()


class TestClone:
    def test_plain_copy_bitwise(self, state4, small_bank):
        src = (0, 0, 2, 2)
        c = state4.field.cell_size
        src_vals = state4.field.values.data[:, 0:2 * c, 0:2 * c].copy()
        clone(state4, src, (2, 2), False, Rng(1), small_bank, EnergyParams())
        dst_vals = state4.field.values.data[:, 2 * c:4 * c, 2 * c:4 * c]
        assert np.array_equal(dst_vals, src_vals)
        assert np.array_equal(state4.field.sample_ids[2:4, 2:4], state4.field.sample_ids[0:2, 0:2])

    def test_shuffle_preserves_multiset(self, state4, small_bank):
        src = (0, 0, 3, 3)
        before = sorted(state4.field.sample_ids[0:3, 0:3].ravel().tolist())
        clone(state4, src, (1, 1), True, Rng(9), small_bank, EnergyParams())
        after = sorted(state4.field.sample_ids[1:4, 1:4].ravel().tolist())
        assert after == before

    def test_single_cell_shuffle_is_identity(self, state4, small_bank):
        src = (0, 0, 1, 1)
        want = state4.field.values.data[:, 0:2, 0:2].copy()
        clone(state4, src, (3, 3), True, Rng(2), small_bank, EnergyParams())
        c = state4.field.cell_size
        got = state4.field.values.data[:, 3 * c:4 * c, 3 * c:4 * c]
        assert np.array_equal(got, want)

    def test_out_of_bounds(self, state4, small_bank):
        with pytest.raises(ValueError):
            clone(state4, (0, 0, 2, 2), (3, 3), False, Rng(1), small_bank)

    def test_overlapping_copy_then_write(self, state4, small_bank):
        src = (0, 0, 3, 3)
        src_vals = state4.field.values.data[:, 0:6, 0:6].copy()
        clone(state4, src, (1, 1), False, Rng(1), small_bank, EnergyParams())
        c = state4.field.cell_size
        assert np.array_equal(state4.field.values.data[:, c:c + 6, c:c + 6], src_vals)


class TestPerturb:
    def test_sigma_zero_is_noop(self, state4):
        before = state4.field.values.data.copy()
        dirty = perturb(state4, (0, 0, 2, 2), 0.0, Rng(1))
        assert dirty.empty
        assert np.array_equal(state4.field.values.data, before)

    def test_noise_std(self, small_gen):
        # a big synthetic field so the std estimate sees ~1e5 values
        from tilegan.generator import LatentField
        from tilegan.synthesis import FieldState
        vals = np.zeros((96, 32, 32), np.float32)
        field = LatentField(level=3, cell_size=2, values=Tensor(vals))
        state = FieldState(field=field)
        state.spec = small_gen.spec
        sigma = 0.37
        perturb(state, (0, 0, 16, 16), sigma, Rng(123))
        added = state.field.values.data
        assert added.size >= 90_000
        assert np.std(added.astype(np.float64)) == pytest.approx(sigma, rel=0.02)

    def test_deterministic(self, small_gen, small_bank):
        a = tiled_state(small_bank, small_gen, [1, 2, 3, 4], 2, 2)
        b = tiled_state(small_bank, small_gen, [1, 2, 3, 4], 2, 2)
        perturb(a, (0, 0, 2, 2), 0.1, Rng(5))
        perturb(b, (0, 0, 2, 2), 0.1, Rng(5))
        assert np.array_equal(a.field.values.data, b.field.values.data)

    def test_breaks_provenance(self, state4):
        perturb(state4, (1, 1, 2, 2), 0.5, Rng(3))
        assert state4.field.sample_ids[1, 1] == -1

    def test_negative_sigma(self, state4):
        with pytest.raises(ValueError):
            perturb(state4, (0, 0, 1, 1), -1.0, Rng(1))


class TestInterpolate:
    def test_endpoints_exact(self, state4, small_bank):
        a, b = small_bank.samples[2], small_bank.samples[40]
        c = small_bank.crop_size
        interpolate(state4, (0, 0), a, b, 0.0, small_bank, EnergyParams())
        assert np.array_equal(state4.field.values.data[:, 0:c, 0:c], a.crop(c))
        assert state4.field.sample_ids[0, 0] == a.id
        interpolate(state4, (0, 0), a, b, 1.0, small_bank, EnergyParams())
        assert np.array_equal(state4.field.values.data[:, 0:c, 0:c], b.crop(c))
        assert state4.field.sample_ids[0, 0] == b.id

    def test_same_sample_midpoint(self, state4, small_bank):
        a = small_bank.samples[7]
        c = small_bank.crop_size
        interpolate(state4, (1, 1), a, a, 0.5, small_bank, EnergyParams())
        assert np.array_equal(state4.field.values.data[:, c:2 * c, c:2 * c], a.crop(c))

    def test_midpoint_elementwise_mean(self, state4, small_bank):
        a, b = small_bank.samples[3], small_bank.samples[50]
        c = small_bank.crop_size
        interpolate(state4, (2, 2), a, b, 0.5, small_bank, EnergyParams())
        got = state4.field.values.data[:, 2 * c:3 * c, 2 * c:3 * c]
        want = 0.5 * a.crop(c).astype(np.float64) + 0.5 * b.crop(c).astype(np.float64)
        assert np.abs(got - want).max() <= 1e-6
        assert state4.field.sample_ids[2, 2] == -1

    def test_t_out_of_range(self, state4, small_bank):
        a = small_bank.samples[0]
        with pytest.raises(ValueError):
            interpolate(state4, (0, 0), a, a, 1.5)


class TestUpdateGuidance:
    def test_affected_cells_for_local_patch(self, state4, small_bank):
        r = small_bank.rep_res
        patch = Tensor(np.zeros((3, r, r), np.float32))
        affected = update_guidance(state4, patch, (r, r), small_bank)
        assert (1, 1) in affected
        # windows overlap, so the neighbors are affected too
        assert (0, 1) in affected and (1, 0) in affected
        assert (3, 3) not in affected

    def test_empty_patch(self, state4, small_bank):
        patch = Tensor(np.zeros((3, 0, 0), np.float32))
        assert update_guidance(state4, patch, (0, 0), small_bank) == set()

    def test_full_patch_affects_all(self, state4, small_bank):
        g = state4.guidance.image
        patch = Tensor(np.zeros((3, g.height, g.width), np.float32))
        affected = update_guidance(state4, patch, (0, 0), small_bank)
        assert len(affected) == 16

    def test_out_of_bounds(self, state4, small_bank):
        g = state4.guidance.image
        patch = Tensor(np.zeros((3, 4, 4), np.float32))
        with pytest.raises(ValueError):
            update_guidance(state4, patch, (g.width - 2, 0), small_bank)

    def test_no_guidance(self, small_gen, small_bank, state4):
        state4.guidance = None
        with pytest.raises(StateError):
            update_guidance(state4, Tensor(np.zeros((3, 1, 1), np.float32)), (0, 0), small_bank)


class TestResynthesize:
    def test_matches_full_render_bitwise(self, small_gen, small_bank, state4):
        resynthesize(small_gen, state4, dirty_for(small_gen.spec, state4.field, (0, 0, 4, 4)))
        dirty = apply_brush(state4, (2, 2), 1, small_bank, Rng(31))
        patch = resynthesize(small_gen, state4, dirty)
        full = g_b(small_gen, state4.field).data
        x0, y0, x1, y1 = dirty.pixel_rect
        assert np.array_equal(patch.data, full[:, y0:y1, x0:x1])
        assert np.array_equal(state4.image_cache, full)

    def test_noop_leaves_cache(self, small_gen, state4):
        resynthesize(small_gen, state4, dirty_for(small_gen.spec, state4.field, (0, 0, 4, 4)))
        cache = state4.image_cache.copy()
        patch = resynthesize(small_gen, state4, DirtyRegion((0, 0, 0, 0), (0, 0, 0, 0)))
        assert patch.shape == (3, 0, 0)
        assert np.array_equal(state4.image_cache, cache)

    def test_corner_edit_clipped(self, small_gen, small_bank, state4):
        resynthesize(small_gen, state4, dirty_for(small_gen.spec, state4.field, (0, 0, 4, 4)))
        dirty = apply_brush(state4, (0, 0), 2, small_bank, Rng(17))
        assert dirty.pixel_rect[0] == 0 and dirty.pixel_rect[1] == 0
        resynthesize(small_gen, state4, dirty)
        full = g_b(small_gen, state4.field).data
        assert np.array_equal(state4.image_cache, full)


class TestEditorUndoAndLog:
    def make_editor(self, gen, bank, state):
        return Editor(state, bank, gen.spec, EnergyParams())

    def test_apply_undo_restores_bytes(self, small_gen, small_bank, state4):
        ed = self.make_editor(small_gen, small_bank, state4)
        before_vals = state4.field.values.data.copy()
        before_ids = state4.field.sample_ids.copy()
        ed.apply(EditCommand("noise", (0, 0, 2, 2), {"sigma": 0.4}, seed=3))
        ed.undo()
        assert np.array_equal(state4.field.values.data, before_vals)
        assert np.array_equal(state4.field.sample_ids, before_ids)

    def test_undo_stack_bounded(self, small_gen, small_bank, state4):
        ed = Editor(state4, small_bank, small_gen.spec, EnergyParams(), history_limit=4)
        for i in range(10):
            ed.apply(EditCommand("brush", (0, 0, 1, 1), {"cluster": 0}, seed=i))
        undone = 0
        while ed.undo() is not None:
            undone += 1
        assert undone == 4

    def test_guidance_undo(self, small_gen, small_bank, state4):
        ed = self.make_editor(small_gen, small_bank, state4)
        before = state4.guidance.image.data.copy()
        patch = encode_patch(np.ones((3, 4, 4), np.float32))
        ed.apply(EditCommand("guidance-update", (2, 2, 6, 6), {"patch": patch}, seed=0))
        assert not np.array_equal(state4.guidance.image.data, before)
        assert ed.last_affected_cells
        ed.undo()
        assert np.array_equal(state4.guidance.image.data, before)

    def test_failed_command_changes_nothing(self, small_gen, small_bank, state4):
        ed = self.make_editor(small_gen, small_bank, state4)
        vals = state4.field.values.data.copy()
        rev = state4.revision
        with pytest.raises(ValueError):
            ed.apply(EditCommand("brush", (9, 9, 10, 10), {"cluster": 0}, seed=1))
        assert np.array_equal(state4.field.values.data, vals)
        assert state4.revision == rev
        assert not ed.log_lines()

    def test_replay_reproduces_field_bytes(self, small_gen, small_bank):
        s1 = tiled_state(small_bank, small_gen, [1, 2, 3, 4, 5, 6, 7, 8, 9,
                                                 10, 11, 12, 13, 14, 15, 16], 4, 4)
        ed = self.make_editor(small_gen, small_bank, s1)
        ed.apply(EditCommand("brush", (1, 1, 3, 2), {"cluster": 2}, seed=11))
        ed.apply(EditCommand("shuffle-clone", (0, 2, 2, 4), {"src": (2, 0, 4, 2)}, seed=12))
        ed.apply(EditCommand("noise", (3, 3, 4, 4), {"sigma": 0.2}, seed=13))
        ed.apply(EditCommand("interpolate", (0, 0, 1, 1), {"a": 4, "b": 9, "t": 0.25}, seed=14))
        lines = ed.log_lines()

        s2 = tiled_state(small_bank, small_gen, [1, 2, 3, 4, 5, 6, 7, 8, 9,
                                                 10, 11, 12, 13, 14, 15, 16], 4, 4)
        replay(lines, s2, small_bank, small_gen.spec, EnergyParams())
        assert np.array_equal(s1.field.values.data, s2.field.values.data)
        assert np.array_equal(s1.field.sample_ids, s2.field.sample_ids)

    def test_energy_bookkeeping_tracks_recompute(self, small_gen, small_bank, state4):
        ed = self.make_editor(small_gen, small_bank, state4)
        ed.apply(EditCommand("brush", (1, 1, 2, 2), {"cluster": 1}, seed=4))
        ed.apply(EditCommand("clone", (2, 2, 4, 4), {"src": (0, 0, 2, 2)}, seed=5))
        full = total_energy(state4, small_bank, state4.guidance, EnergyParams())
        assert state4.energy.e == pytest.approx(full.e, rel=1e-6)

    def test_edit_locality_via_command(self, small_gen, small_bank, state4):
        ed = self.make_editor(small_gen, small_bank, state4)
        before = g_b(small_gen, state4.field).data
        dirty = ed.apply(EditCommand("noise", (1, 2, 3, 3), {"sigma": 0.3}, seed=6))
        after = g_b(small_gen, state4.field).data
        x0, y0, x1, y1 = dirty.pixel_rect
        changed = after != before
        changed[:, y0:y1, x0:x1] = False
        assert not changed.any()
