"""Self-contained oracle suite behind `tilegan verify`.

Each check re-derives an expected result from first principles (loop
oracles, recursions, exhaustive argmins) and compares the production path
against it. Runs in seconds on small instances; the full pytest suite covers
the same ground at scale.
"""

from __future__ import annotations

import numpy as np

from .bank import build_bank, cluster_bank, kmeans, load_bank, save_bank, top_k_unary
from .generator import (
    GeneratorSpec,
    LatentField,
    build_toy_generator,
    g_a,
    g_b,
    g_b_chunked,
    g_full,
    halo_for,
    load_weights,
    save_weights,
    _chunked_raw,
)
from .synthesis import (
    EnergyParams,
    GuidanceMap,
    better_match,
    initial_tiling,
    load_field,
    save_field,
    total_energy,
    unary_energy,
)
from .tensor import Rng, Tensor, conv2d


def _check_conv_oracle():
    rng = Rng(301)
    x = rng.normal((3, 6, 6), std=0.25)
    w = rng.normal((4, 3, 3, 3), std=0.25)
    b = rng.normal((4,), std=0.25)
    got = conv2d(Tensor(x), w, b, 1).data
    want = np.zeros_like(got, dtype=np.float64)
    xp = np.zeros((3, 8, 8))
    xp[:, 1:7, 1:7] = x
    for o in range(4):
        for yy in range(6):
            for xx in range(6):
                acc = 0.0
                for i in range(3):
                    for ky in range(3):
                        for kx in range(3):
                            acc += float(w[o, i, ky, kx]) * xp[i, yy + ky, xx + kx]
                want[o, yy, xx] = acc + float(b[o])
    return float(np.abs(got - want).max()) <= 1e-6


def _check_split_consistency():
    spec = GeneratorSpec(n=5, latent_dim=16, channels_per_level=(16, 16, 8, 8))
    gen = build_toy_generator(spec, 5)
    for seed in range(4):
        z = Tensor(Rng(seed).normal((16, 1, 1)))
        full = g_full(gen, z)
        for l in range(2, 5):
            img = g_b(gen, LatentField.from_tile(g_a(gen, z, l), l))
            if np.abs(full.data - img.data).max() > 1e-6:
                return False
    return True


def _check_chunked_and_halo():
    spec = GeneratorSpec(n=5, latent_dim=16, channels_per_level=(16, 16, 8, 8))
    gen = build_toy_generator(spec, 6)
    f = LatentField(level=3, cell_size=1, values=Tensor(Rng(9).normal((16, 12, 12))))
    full = g_b(gen, f).data
    m = halo_for(spec, 3)
    if np.abs(g_b_chunked(gen, f, 4, m).data - full).max() > 1e-5:
        return False
    bad = _chunked_raw(gen, f, 4, m - 1)
    return np.abs(bad - full).max() > 1e-5


def _check_halo_recursion():
    ok = True
    for n in (5, 7, 9):
        spec = GeneratorSpec(n=n, latent_dim=4, channels_per_level=(4,) * (n - 1))
        for l in range(2, n):
            m, want = 0, None
            for _ in range(n - l):
                m = int(np.ceil((m + 2) / 2))
            want = m
            ok = ok and halo_for(spec, l) == want
    return ok


def _check_kmeans():
    rng = Rng(77)
    pts = np.concatenate([rng.normal((15, 6)) * 0.05 + off for off in (0.0, 50.0, -50.0)])
    assign, centers, trace = kmeans(pts, 3, 50, Rng(78))
    if any(b > a for a, b in zip(trace, trace[1:])):
        return False
    x = pts.astype(np.float64)
    for i in range(len(x)):
        d = np.square(x[i] - centers).sum(axis=1)
        if assign[i] != np.argmin(d):
            return False
    return True


def _check_round_trips():
    spec = GeneratorSpec(n=4, latent_dim=8, channels_per_level=(8, 8, 4))
    gen = build_toy_generator(spec, 7)
    data = save_weights(gen)
    if save_weights(load_weights(data)) != data:
        return False
    bank = cluster_bank(build_bank(gen, 2, 12, 2, 4, 8), k=3, max_iters=20, seed=9)
    bdata = save_bank(bank)
    if save_bank(load_bank(bdata)) != bdata:
        return False
    r = bank.rep_res
    img = np.zeros((3, 2 * r, 2 * r), np.float32)
    g = GuidanceMap(image=Tensor(img), cells_x=2, cells_y=2)
    state = initial_tiling(bank, g, EnergyParams())
    fdata = save_field(state.field, bank.fingerprint)
    return save_field(load_field(fdata, bank), bank.fingerprint) == fdata


def _check_mrf_oracles():
    spec = GeneratorSpec(n=4, latent_dim=8, channels_per_level=(8, 8, 4))
    gen = build_toy_generator(spec, 13)
    bank = cluster_bank(build_bank(gen, 2, 32, 2, 4, 21), k=4, max_iters=20, seed=2)
    r = bank.rep_res
    rng = Rng(3)
    img = Rng(4).normal((3, 3 * r, 3 * r)) * 0.3
    g = GuidanceMap(image=Tensor(img), cells_x=3, cells_y=3)
    params = EnergyParams()
    state = initial_tiling(bank, g, params)
    for y in range(3):
        for x in range(3):
            best = min((unary_energy(bank, s, g, (x, y)), s.id) for s in bank.samples)[1]
            if state.field.sample_ids[y, x] != best:
                return False
    state.theta_abs = 0.0
    before = state.energy.e
    for _ in range(20):
        cell = (rng.integer(3), rng.integer(3))
        better_match(state, cell, bank, g, params)
        if state.energy.e > before + 1e-9:
            return False
        before = state.energy.e
    full = total_energy(state, bank, g, params)
    return abs(state.energy.e - full.e) <= 1e-5 * max(1.0, abs(full.e))


CHECKS = [
    ("conv2d vs quadruple-loop oracle", _check_conv_oracle),
    ("generator split consistency", _check_split_consistency),
    ("chunked render exact, halo probe detects m-1", _check_chunked_and_halo),
    ("halo recursion values", _check_halo_recursion),
    ("k-means monotone + nearest-center", _check_kmeans),
    ("TGW1/TGB1/TGF1 round trips", _check_round_trips),
    ("MRF argmin + energy bookkeeping", _check_mrf_oracles),
]


def run_verify(echo=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok = fn()
        except Exception as e:  # a crashed check is a failed check
            ok = False
            echo(f"FAIL {name} ({type(e).__name__}: {e})")
            all_ok = False
            continue
        echo(f"{'PASS' if ok else 'FAIL'} {name}")
        all_ok = all_ok and ok
    return all_ok
