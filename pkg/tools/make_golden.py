#!/usr/bin/env python3
"""Regenerate the committed golden files under tests/golden/.

Run from the repo root after an intentional format change:

    python3 tools/make_golden.py

The test suite asserts that freshly serialized objects match these bytes,
so any unintentional drift in the TGW1/TGB1/TGF1 writers or in the seeded
toy-generator pipeline shows up as a diff.
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tilegan.bank import build_bank, cluster_bank, save_bank
from tilegan.editor import EditCommand, Editor, replay
from tilegan.generator import GeneratorSpec, build_toy_generator, save_weights
from tilegan.synthesis import EnergyParams, FieldState, GuidanceMap, initial_tiling, save_field
from tilegan.tensor import Rng, Tensor

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "golden")

GEN_SPEC = GeneratorSpec(n=4, latent_dim=8, channels_per_level=(8, 8, 4))
GEN_SEED = 42
BANK_ARGS = dict(l=2, count=32, c=2, r=8, seed=7)
CLUSTER_ARGS = dict(k=4, max_iters=50, seed=9)
FIELD_CELLS = (3, 3)
GUIDANCE_SEED = 13
EDITS = [
    EditCommand("brush", (0, 0, 2, 1), {"cluster": 1}, seed=21),
    EditCommand("shuffle-clone", (1, 1, 3, 3), {"src": (0, 0, 2, 2)}, seed=22),
    EditCommand("noise", (2, 0, 3, 1), {"sigma": 0.25}, seed=23),
    EditCommand("interpolate", (0, 2, 1, 3), {"a": 3, "b": 11, "t": 0.5}, seed=24),
]


def build_all():
    gen = build_toy_generator(GEN_SPEC, GEN_SEED)
    bank = cluster_bank(build_bank(gen, **BANK_ARGS), **CLUSTER_ARGS)
    r = bank.rep_res
    cx, cy = FIELD_CELLS
    img = Rng(GUIDANCE_SEED).normal((3, cy * r, cx * r), std=0.3)
    guidance = GuidanceMap(image=Tensor(img), cells_x=cx, cells_y=cy)
    state = initial_tiling(bank, guidance, EnergyParams())
    state.spec = gen.spec
    base_field = save_field(state.field, bank.fingerprint)

    editor = Editor(state, bank, gen.spec, EnergyParams())
    for cmd in EDITS:
        editor.apply(cmd)
    edited_field = save_field(state.field, bank.fingerprint)
    log_text = "\n".join(c.to_json() for c in EDITS) + "\n"
    return {
        "golden.tgw": save_weights(gen),
        "golden.tgb": save_bank(bank),
        "golden.tgf": base_field,
        "golden_edits.jsonl": log_text.encode(),
        "golden_edited.tgf": edited_field,
    }


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, data in build_all().items():
        path = os.path.join(OUT, name)
        with open(path, "wb") as fh:
            fh.write(data)
        print(f"wrote {path} ({len(data)} bytes)")


if __name__ == "__main__":
    main()
