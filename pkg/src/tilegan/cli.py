"""Command line interface.

Paths default into the data directory (--data-dir or $TILEGAN_DATA_DIR,
falling back to the working directory): generator weights live in gen.tgw
and banks in bank.tgb unless overridden. A typical session:

    tilegan init-gen --n 7 --latent-dim 64 --seed 42
    tilegan sample --count 10000 --level 3 --crop 2 --r 16 --seed 7
    tilegan cluster --k 10 --seed 3
    tilegan synth --guidance target.png --cells 16x16 --out texture.png --report out/
    tilegan serve --port 8080
"""

from __future__ import annotations

import math
import os
import sys

import click
import numpy as np

from . import bank as bank_mod
from . import generator as gen_mod
from . import synthesis as synth_mod
from .editor import replay
from .service_io import decode_png, encode_png
from .tensor import Rng, Tensor


def _data_dir(ctx) -> str:
    return ctx.obj.get("data_dir") or os.environ.get("TILEGAN_DATA_DIR") or "."


def _default_path(ctx, name: str) -> str:
    return os.path.join(_data_dir(ctx), name)


def _load_generator(path: str) -> gen_mod.Generator:
    with open(path, "rb") as fh:
        return gen_mod.load_weights(fh.read())


def _load_bank(path: str, gen=None) -> bank_mod.SampleBank:
    with open(path, "rb") as fh:
        return bank_mod.load_bank(fh.read(), None if gen is None else gen.fingerprint)


def _parse_cells(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"expected WxH, got {text!r}")


@click.group()
@click.option("--data-dir", default=None, envvar="TILEGAN_DATA_DIR",
              help="Directory for default generator/bank/field files.")
@click.pass_context
def main(ctx, data_dir):
    """Large-scale texture synthesis from tiled generator latents."""
    ctx.ensure_object(dict)
    ctx.obj["data_dir"] = data_dir


@main.command("init-gen")
@click.option("--n", default=7, show_default=True, help="Pyramid levels; output is 2^n px.")
@click.option("--latent-dim", default=64, show_default=True)
@click.option("--channels", default=None,
              help="Comma-separated channel counts for levels 2..n (default: halving from --base).")
@click.option("--base", default=64, show_default=True, help="Base channel count at level 2.")
@click.option("--leaky-slope", default=0.2, show_default=True)
@click.option("--pixel-norm/--no-pixel-norm", default=True, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", default=None, help="Output .tgw path (default: <data-dir>/gen.tgw).")
@click.pass_context
def init_gen(ctx, n, latent_dim, channels, base, leaky_slope, pixel_norm, seed, out):
    """Create a seeded toy generator and write its TGW1 weight file."""
    if channels:
        ch = tuple(int(c) for c in channels.split(","))
    else:
        ch = gen_mod.default_channels(n, base=base)
    spec = gen_mod.GeneratorSpec(n=n, latent_dim=latent_dim, channels_per_level=ch,
                                 leaky_slope=leaky_slope, use_pixel_norm=pixel_norm)
    gen = gen_mod.build_toy_generator(spec, seed)
    path = out or _default_path(ctx, "gen.tgw")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(gen_mod.save_weights(gen))
    click.echo(f"wrote {path} (n={n}, {2**n}px output, channels {','.join(map(str, ch))})")


@main.command("sample")
@click.option("--gen", "gen_path", default=None, help="Generator .tgw (default: <data-dir>/gen.tgw).")
@click.option("--count", default=bank_mod.DEFAULT_SAMPLE_COUNT, show_default=True)
@click.option("--level", default=3, show_default=True, help="Split level l.")
@click.option("--crop", default=2, show_default=True, help="Placed tile size c in latent units.")
@click.option("--r", "rep_res", default=bank_mod.DEFAULT_REP_RES, show_default=True,
              help="Representative resolution r.")
@click.option("--seed", default=1, show_default=True)
@click.option("--out", default=None, help="Output .tgb path (default: <data-dir>/bank.tgb).")
@click.pass_context
def sample(ctx, gen_path, count, level, crop, rep_res, seed, out):
    """Build a sample bank from the generator."""
    gen = _load_generator(gen_path or _default_path(ctx, "gen.tgw"))
    bank = bank_mod.build_bank(gen, level, count, crop, rep_res, seed)
    path = out or _default_path(ctx, "bank.tgb")
    with open(path, "wb") as fh:
        fh.write(bank_mod.save_bank(bank))
    click.echo(f"wrote {path} ({count} samples at level {level}, crop {crop}, r={rep_res})")


@main.command("cluster")
@click.option("--bank", "bank_path", default=None, help="Bank .tgb (default: <data-dir>/bank.tgb).")
@click.option("--k", default=bank_mod.DEFAULT_CLUSTERS, show_default=True)
@click.option("--max-iters", default=100, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--out", default=None, help="Output path (default: rewrite the input bank).")
@click.option("--report", "report_dir", default=None,
              help="Write cluster_inertia.csv/.png and cluster_palette.png here.")
@click.pass_context
def cluster(ctx, bank_path, k, max_iters, seed, out, report_dir):
    """Cluster a bank's representatives with k-means."""
    path = bank_path or _default_path(ctx, "bank.tgb")
    bank = _load_bank(path)
    assign, centers, trace = bank_mod.kmeans(bank.rep_matrix(), k, max_iters, Rng(seed))
    clustered = bank_mod.cluster_bank(bank, k, max_iters, seed)
    with open(out or path, "wb") as fh:
        fh.write(bank_mod.save_bank(clustered))
    click.echo(f"clustered {bank.count} samples into k={k} ({len(trace)} iterations, "
               f"inertia {trace[-1]:.3f})")
    if report_dir:
        from .report import write_cluster_report
        paths = write_cluster_report(clustered, trace, report_dir)
        click.echo("report: " + ", ".join(paths))


@main.command("synth")
@click.option("--gen", "gen_path", default=None, help="Generator .tgw (default: <data-dir>/gen.tgw).")
@click.option("--bank", "bank_path", default=None, help="Bank .tgb (default: <data-dir>/bank.tgb).")
@click.option("--guidance", required=True, type=click.Path(exists=True), help="Guidance PNG.")
@click.option("--cells", required=True, help="Field size in cells, e.g. 8x8.")
@click.option("--out", required=True, help="Output PNG path.")
@click.option("--theta", default=0.85, show_default=True,
              help="Stop refining at this fraction of the initial energy (inf disables refinement).")
@click.option("--steps", default=None, type=int, help="Refinement step cap (default 20x cells).")
@click.option("--top-k", default=10, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--chunk", default=16, show_default=True, help="Chunk size in latent units.")
@click.option("--threads", default=1, show_default=True)
@click.option("--save-field", "field_path", default=None, help="Also write the field as .tgf.")
@click.option("--report", "report_dir", default=None,
              help="Write synth_energy.csv and synth_energy.png here.")
@click.pass_context
def synth(ctx, gen_path, bank_path, guidance, cells, out, theta, steps, top_k, seed,
          chunk, threads, field_path, report_dir):
    """Synthesize a texture that follows a guidance image."""
    gen = _load_generator(gen_path or _default_path(ctx, "gen.tgw"))
    bank = _load_bank(bank_path or _default_path(ctx, "bank.tgb"), gen)
    if not bank.clustered:
        raise click.ClickException("bank is not clustered; run `tilegan cluster` first")
    cx, cy = _parse_cells(cells)
    with open(guidance, "rb") as fh:
        gmap = synth_mod.GuidanceMap(image=decode_png(fh.read()), cells_x=cx, cells_y=cy)
    params = synth_mod.EnergyParams(theta_frac=math.inf if theta in (None, float("inf")) else theta,
                                    max_refine_steps=steps, top_k=top_k)
    state, image = synth_mod.generate_texture_map(gen, bank, gmap, params, Rng(seed),
                                                  chunk=chunk, threads=threads)
    with open(out, "wb") as fh:
        fh.write(encode_png(image.data))
    refined = sum(1 for _, _, acc in state.trace[1:] if acc)
    click.echo(f"wrote {out} ({image.width}x{image.height}px; energy "
               f"{state.e_initial:.2f} -> {state.energy.e:.2f}, {len(state.trace) - 1} steps, "
               f"{refined} accepted, stop: {state.stop_reason})")
    if field_path:
        with open(field_path, "wb") as fh:
            fh.write(synth_mod.save_field(state.field, bank.fingerprint))
        click.echo(f"wrote {field_path}")
    if report_dir:
        from .report import write_energy_report
        paths = write_energy_report(state.trace, state.theta_abs, report_dir)
        click.echo("report: " + ", ".join(paths))


@main.command("edit-replay")
@click.option("--gen", "gen_path", default=None, help="Generator .tgw (default: <data-dir>/gen.tgw).")
@click.option("--bank", "bank_path", default=None, help="Bank .tgb (default: <data-dir>/bank.tgb).")
@click.option("--field", "field_path", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path(exists=True),
              help="Command log (one JSON record per line).")
@click.option("--guidance", default=None, type=click.Path(exists=True),
              help="Guidance PNG, required when the log edits the guidance map.")
@click.option("--out", required=True, help="Output .tgf path.")
@click.option("--render", "render_path", default=None, help="Also render the result as PNG.")
@click.pass_context
def edit_replay(ctx, gen_path, bank_path, field_path, log_path, guidance, out, render_path):
    """Re-apply a saved edit log to a field file."""
    gen = _load_generator(gen_path or _default_path(ctx, "gen.tgw"))
    bank = _load_bank(bank_path or _default_path(ctx, "bank.tgb"), gen)
    with open(field_path, "rb") as fh:
        field = synth_mod.load_field(fh.read(), bank)
    gmap = None
    if guidance:
        with open(guidance, "rb") as fh:
            gmap = synth_mod.GuidanceMap(image=decode_png(fh.read()),
                                         cells_x=field.cells_x, cells_y=field.cells_y)
    state = synth_mod.FieldState(field=field, guidance=gmap, spec=gen.spec)
    with open(log_path) as fh:
        lines = fh.readlines()
    replay(lines, state, bank, gen.spec)
    with open(out, "wb") as fh:
        fh.write(synth_mod.save_field(state.field, bank.fingerprint))
    click.echo(f"replayed {len([l for l in lines if l.strip()])} commands -> {out}")
    if render_path:
        img = gen_mod.g_b_chunked(gen, state.field, chunk=16,
                                  halo=gen_mod.halo_for(gen.spec, state.field.level))
        with open(render_path, "wb") as fh:
            fh.write(encode_png(img.data))
        click.echo(f"wrote {render_path}")


@main.command("verify")
def verify_cmd():
    """Run the oracle suite; exits 0 when every check passes."""
    from .verify import run_verify
    if not run_verify(click.echo):
        sys.exit(1)


@main.command("serve")
@click.option("--gen", "gen_path", default=None, help="Generator .tgw (default: <data-dir>/gen.tgw).")
@click.option("--bank", "bank_path", default=None, help="Bank .tgb (default: <data-dir>/bank.tgb).")
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--ui-dir", default=None, type=click.Path(),
              help="Built studio UI to mount at /ui (default: ./frontend/dist when present).")
@click.pass_context
def serve(ctx, gen_path, bank_path, port, host, ui_dir):
    """Serve the HTTP API (and the studio UI, if built) for interactive editing."""
    import uvicorn

    from .server import create_app
    gen = _load_generator(gen_path or _default_path(ctx, "gen.tgw"))
    bank = _load_bank(bank_path or _default_path(ctx, "bank.tgb"), gen)
    if not bank.clustered:
        raise click.ClickException("bank is not clustered; run `tilegan cluster` first")
    if ui_dir is None and os.path.isdir(os.path.join("frontend", "dist")):
        ui_dir = os.path.join("frontend", "dist")
    app = create_app(gen, bank, ui_dir=ui_dir)
    click.echo(f"serving on http://{host}:{port}" + (" (UI at /ui)" if ui_dir else ""))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
