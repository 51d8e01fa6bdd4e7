"""Command-line pipeline: synth, train, index, eval, query, serve.

Exit codes: 2 invalid config or inputs, 3 checkpoint problems,
4 protocol or label mismatch, 1 divergence and other runtime failures.
"""

import sys
from pathlib import Path

import click
import numpy as np

from . import reporting
from .config import ConfigError, load_config
from .data.manifest import DatasetManifest
from .data.sampling import batch_chw
from .data.strokes import sketch_from_json
from .data.synthetic import synth_generate
from .index import EmbeddingIndex, IndexFormatError
from .losses import degenerate_batch, saddle_trajectory, write_saddle_csv
from .metrics import benchmark_report
from .models import load_triplet
from .training import TrainingDiverged, default_store, run_curriculum, \
    write_training_csv

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_PROTOCOL = 4


@click.group()
def main():
    """Sketch-to-photo embedding pipeline."""


def _fail(code, message):
    click.echo(message, err=True)
    sys.exit(code)


def _load_config_or_exit(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")


def _load_manifest_or_exit(cfg):
    try:
        return DatasetManifest.load_csv(cfg.manifest, root=cfg.data_root)
    except (OSError, ValueError) as exc:
        _fail(EXIT_CONFIG, f"config error: cannot load manifest "
                           f"{cfg.manifest}: {exc}")


def _restore_net_or_exit(cfg, checkpoint):
    path = Path(checkpoint) if checkpoint else _default_checkpoint(cfg)
    try:
        net = load_triplet(path, cfg.scheme, cfg.pairing, preset=cfg.preset,
                           seed=cfg.seed)
    except (OSError, ValueError) as exc:
        _fail(EXIT_CHECKPOINT, f"checkpoint error ({path}): {exc}")
    return net, path


def _default_checkpoint(cfg):
    best = cfg.checkpoint_dir / "best.sbf"
    return best if best.exists() else cfg.checkpoint_dir / "last.sbf"


def _embed_all(branch, rasters, batch=32):
    out = []
    for lo in range(0, len(rasters), batch):
        x = batch_chw(rasters[lo:lo + batch])
        out.append(branch.embed(x, training=False).data)
    return np.concatenate(out, axis=0)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--categories", default=8, show_default=True)
@click.option("--photos", default=6, show_default=True,
              help="photos per category")
@click.option("--sketches", default=8, show_default=True,
              help="sketches per category")
@click.option("--seed", default=0, show_default=True)
def synth(out_dir, categories, photos, sketches, seed):
    """Generate a synthetic sketch/photo corpus with a manifest."""
    manifest = synth_generate(categories, photos, sketches, seed, out_dir)
    click.echo(f"wrote {len(manifest)} items across "
               f"{len(manifest.categories)} categories under {out_dir}")


@main.command()
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path())
def train(config_path):
    """Run the configured phase curriculum; write checkpoints and logs."""
    cfg = _load_config_or_exit(config_path)
    if not cfg.phases:
        _fail(EXIT_CONFIG, "config error: the phases list is empty")
    manifest = _load_manifest_or_exit(cfg)
    out_dir = cfg.checkpoint_dir
    try:
        state = run_curriculum(cfg.scheme, cfg.pairing, manifest, cfg.phases,
                               preset=cfg.preset, seed=cfg.seed,
                               out_dir=out_dir)
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    except TrainingDiverged as exc:
        if exc.state is not None and exc.state.history:
            write_training_csv(exc.state.history,
                               out_dir / "training_log.csv")
        _fail(1, f"training diverged: {exc}")
    write_training_csv(state.history, out_dir / "training_log.csv")
    reporting.plot_training_curves(state.history,
                                   out_dir / "training_curves.png")
    click.echo(f"trained {state.step} steps over {state.epoch} epochs")
    if state.best_map is not None:
        click.echo(f"best validation mAP: {state.best_map!r}")
        click.echo(f"best checkpoint: {state.best_checkpoint}")
    click.echo(f"last checkpoint: {state.last_checkpoint}")


@main.command()
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path())
@click.option("--checkpoint", type=click.Path(),
              help="defaults to best.sbf (or last.sbf) in checkpoint_dir")
@click.option("--out", "out_path", type=click.Path(),
              help="defaults to index_path from the config")
def index(config_path, checkpoint, out_path):
    """Embed every photo with the photo branch and write the index."""
    cfg = _load_config_or_exit(config_path)
    manifest = _load_manifest_or_exit(cfg)
    net, ckpt = _restore_net_or_exit(cfg, checkpoint)
    store = default_store(net, manifest)
    photos = manifest.photos()
    if not photos:
        _fail(EXIT_CONFIG, "config error: manifest has no photos")
    embeddings = _embed_all(
        net.photo, [store.photo_raster(p, train=False) for p in photos])
    idx = EmbeddingIndex(net.photo.embed_dim)
    for item, emb in zip(photos, embeddings):
        idx.add(item.id, emb, category=item.category)
    idx = idx.snapshot()
    target = Path(out_path) if out_path else cfg.index_path
    idx.save(target)
    click.echo(f"indexed {len(idx)} photos from {ckpt} -> {target}")


def _read_reference_ranks(path):
    import csv
    ranks = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "item_id", "rank"]:
            raise ValueError(f"{path}: expected header "
                             f"query_id,item_id,rank, got {header}")
        for row in reader:
            qid, item_id, rank = row
            ranks.setdefault(qid, {})[item_id] = float(rank)
    return ranks


@main.command("eval")
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path())
@click.option("--index", "index_path", type=click.Path(),
              help="defaults to index_path from the config")
@click.option("--checkpoint", type=click.Path())
@click.option("--split", default="validation", show_default=True,
              type=click.Choice(["train", "validation"]))
@click.option("--protocol", default="map", show_default=True,
              type=click.Choice(["map", "tau_b"]))
@click.option("--ranks", "ranks_path", type=click.Path(),
              help="reference ranks CSV (query_id,item_id,rank), "
                   "required for tau_b")
@click.option("--out", "out_dir", type=click.Path(),
              help="defaults to <index dir>/report")
def eval_command(config_path, index_path, checkpoint, split, protocol,
                 ranks_path, out_dir):
    """Score the index against a sketch split; write report, CSVs, figure."""
    cfg = _load_config_or_exit(config_path)
    manifest = _load_manifest_or_exit(cfg)
    net, _ = _restore_net_or_exit(cfg, checkpoint)
    target = Path(index_path) if index_path else cfg.index_path
    try:
        idx = EmbeddingIndex.load(target)
    except (OSError, IndexFormatError) as exc:
        _fail(EXIT_CONFIG, f"config error: cannot load index {target}: "
                           f"{exc}")
    sketches = manifest.sketches(split)
    if not sketches:
        _fail(EXIT_PROTOCOL, f"protocol error: no sketches in split "
                             f"{split!r}")
    store = default_store(net, manifest)
    embeddings = _embed_all(
        net.anchor, [store.anchor_raster(s, train=False) for s in sketches])
    queries = [(item.id, emb) for item, emb in zip(sketches, embeddings)]
    reference = None
    if ranks_path is not None:
        try:
            reference = _read_reference_ranks(ranks_path)
        except (OSError, ValueError) as exc:
            _fail(EXIT_PROTOCOL, f"protocol error: {exc}")
    try:
        report = benchmark_report(idx, queries, manifest, protocol,
                                  reference_ranks=reference)
    except ValueError as exc:
        _fail(EXIT_PROTOCOL, f"protocol error: {exc}")
    out = Path(out_dir) if out_dir else target.parent / "report"
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (out / "report.txt").write_text(text)
    report.write_csv(out)
    if report.pr_points is not None:
        reporting.plot_pr_curve(report.pr_points, out / "pr_curve.png")
    click.echo(text, nl=False)
    click.echo(f"report written to {out}")


@main.command()
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path())
@click.option("--sketch", "sketch_path", required=True, type=click.Path(),
              help="stroke document (JSON)")
@click.option("-k", "top_k", type=int, help="defaults to top_k from config")
@click.option("--index", "index_path", type=click.Path())
@click.option("--checkpoint", type=click.Path())
def query(config_path, sketch_path, top_k, index_path, checkpoint):
    """One-shot retrieval for a sketch file; prints id,distance,category."""
    cfg = _load_config_or_exit(config_path)
    manifest = _load_manifest_or_exit(cfg)
    net, _ = _restore_net_or_exit(cfg, checkpoint)
    target = Path(index_path) if index_path else cfg.index_path
    try:
        idx = EmbeddingIndex.load(target)
    except (OSError, IndexFormatError) as exc:
        _fail(EXIT_CONFIG, f"config error: cannot load index {target}: "
                           f"{exc}")
    try:
        sketch = sketch_from_json(Path(sketch_path).read_text())
    except OSError as exc:
        _fail(EXIT_CONFIG, f"config error: cannot read sketch: {exc}")
    except ValueError as exc:
        _fail(EXIT_PROTOCOL, f"sketch document error: {exc}")
    store = default_store(net, manifest)
    emb = net.anchor.embed(batch_chw([store.query_raster(sketch)]),
                           training=False).data[0]
    k = top_k if top_k is not None else cfg.top_k
    results = idx.query(emb, k=min(k, len(idx)))
    click.echo("rank,id,distance,category")
    for rank, (rid, dist) in enumerate(results, start=1):
        click.echo(f"{rank},{rid},{dist!r},{idx.category(rid) or ''}")


@main.command()
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, host):
    """Host the query service for the sketchpad frontend."""
    import uvicorn

    from .service import build_app

    cfg = _load_config_or_exit(config_path)
    app = build_app(cfg)
    uvicorn.run(app, host=host, port=cfg.port)


@main.command("probe-saddle")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--dim", default=2, show_default=True)
@click.option("--margin", default=1.0, show_default=True)
@click.option("--steps", default=200, show_default=True)
@click.option("--lr", default=0.05, show_default=True)
def probe_saddle(out_dir, dim, margin, steps, lr):
    """Trace gradient descent from the degenerate a=p=n start.

    Writes one CSV per loss kind plus a comparison figure showing the
    standard loss pinned at half the margin while the modified loss
    escapes.
    """
    if dim < 1:
        _fail(EXIT_CONFIG, f"config error: dim must be positive, got {dim}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v = np.full(dim, 1.0 / np.sqrt(dim), dtype=np.float32)
    rows_by_kind = {}
    for kind in ("standard", "modified"):
        rows = saddle_trajectory(degenerate_batch(v, m=margin), kind,
                                 steps=steps, lr=lr)
        write_saddle_csv(rows, out / f"saddle_{kind}.csv")
        rows_by_kind[kind] = rows
        click.echo(f"{kind}: loss {rows[0]['loss']!r} -> "
                   f"{rows[-1]['loss']!r}")
    reporting.plot_saddle_trajectories(rows_by_kind, out / "saddle.png")
    click.echo(f"traces written to {out}")


if __name__ == "__main__":
    main()
