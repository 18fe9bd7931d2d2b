"""Command-line toolkit: dataset building, training, generation, editing,
evaluation, and the HTTP service runner.

Every command is deterministic given its config, seed, and checkpoints.
The checkpoint/log root comes from --home, falling back to the
SCENEFACTOR_HOME environment variable, then ./scenefactor_home.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import Counter
from pathlib import Path

import click
import numpy as np

from ..grids.bundle import read_bundle
from ..grids.core import GeometryGrid, SemanticGrid
from ..grids.chunks import chunk_of
from ..grids.presets import GridPreset, get_preset
from ..metrics import EmptySurfaceError, semantic_accuracy, set_metrics, surface_points
from ..scenegen import (
    EDIT_OPS,
    EditRequest,
    SceneSession,
    apply_edit,
    load_snapshot,
    save_snapshot,
    synthesize,
)
from ..synthdata.dataset import build_dataset, load_manifest
from .checkpoint import STAGES
from .config import HOME_ENV, PipelineConfig
from .meshes import mesh_arrays, mesh_payload, write_stl
from .service import CATEGORY_LABELS, create_app
from .training import load_scene_models, train_stage

_GEOMETRY_GRID_NAMES = ("geometry", "geometry_udf")


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _parse_layout(text: str) -> tuple[int, int]:
    try:
        cx, cz = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise _fail(f"layout must look like '2x3', got {text!r}") from None
    if cx < 1 or cz < 1:
        raise _fail(f"layout must be at least 1x1, got {text!r}")
    return cx, cz


def _read_captions(path: Path) -> list[str]:
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if not isinstance(data, list) or not all(isinstance(c, str) for c in data):
            raise _fail(f"{path} must hold a JSON list of strings")
        return data
    return text.splitlines()


def _load_models(home):
    try:
        return load_scene_models(home)
    except Exception as exc:
        raise _fail(str(exc)) from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_from(config_path, preset, seed, home, dataset) -> PipelineConfig:
    if config_path is not None:
        cfg = PipelineConfig.load(config_path)
    else:
        cfg = PipelineConfig.desk_defaults()
    updates = {}
    if preset is not None:
        updates.update(preset=preset, custom_preset=None)
    if seed is not None:
        updates["seed"] = seed
    if home is not None:
        updates["home"] = str(home)
    if dataset is not None:
        updates["dataset_dir"] = str(dataset)
    return dataclasses.replace(cfg, **updates) if updates else cfg


_home_option = click.option(
    "--home", type=click.Path(path_type=Path), default=None,
    envvar=HOME_ENV, help="Checkpoint/log root (env SCENEFACTOR_HOME).")


@click.group()
def main():
    """Factored text-to-3D scene toolkit: train, generate, edit, evaluate, serve."""


@main.command()
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Output dataset directory.")
@click.option("--preset", default="desk", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Pipeline config JSON (custom presets).")
@click.option("--scenes", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--chunks", default="2x2", show_default=True,
              help="Scene size in chunks, e.g. 2x2.")
@click.option("--test-fraction", default=0.1, show_default=True, type=float)
def dataset(out, preset, config_path, scenes, seed, chunks, test_fraction):
    """Build a synthetic scene dataset of chunk bundles plus a manifest."""
    if config_path is not None:
        grid = PipelineConfig.load(config_path).resolve_preset()
    else:
        try:
            grid = get_preset(preset)
        except KeyError as exc:
            raise _fail(str(exc)) from exc
    layout = _parse_layout(chunks)
    manifest_path = build_dataset(out, grid, n_scenes=scenes, seed=seed,
                                  scene_chunks=layout, test_fraction=test_fraction)
    n = len(load_manifest(manifest_path)["entries"])
    click.echo(f"dataset written: {out} ({scenes} scenes, {n} chunks, "
               f"preset {grid.name})")


@main.command()
@click.argument("stage", type=click.Choice(STAGES))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Pipeline config JSON.")
@click.option("--preset", default=None, help="Registered preset name override.")
@click.option("--seed", default=None, type=int)
@_home_option
@click.option("--dataset", "dataset_dir", type=click.Path(path_type=Path), default=None)
@click.option("--steps", default=None, type=int,
              help="Step budget override for this stage.")
@click.option("--resume", is_flag=True, help="Continue from the stage checkpoint.")
def train(stage, config_path, preset, seed, home, dataset_dir, steps, resume):
    """Train one pipeline stage (denoiser stages need their VQ checkpoints)."""
    cfg = _config_from(config_path, preset, seed, home, dataset_dir)
    if steps is not None:
        field = {"vqvae-sem": "steps_vq_sem", "vqvae-geo": "steps_vq_geo",
                 "diff-sem": "steps_diff_sem", "diff-geo": "steps_diff_geo"}[stage]
        cfg = dataclasses.replace(cfg, **{field: steps})
    try:
        result = train_stage(stage, cfg, resume=resume)
    except Exception as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"stage {result.stage}: step {result.final_step} "
               f"({result.steps_run} run this invocation)"
               + (" [early stop]" if result.stopped_early else ""))
    click.echo(f"final loss {result.final_loss:.6f}"
               + (f", validation {result.final_val:.6f}"
                  if result.final_val is not None else ""))
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"loss log:   {result.log_path}")


@main.command()
@click.option("--captions", "captions_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Caption file: one line per chunk (row-major), or a JSON list.")
@click.option("--layout", default="1x1", show_default=True,
              help="Scene size in chunks, e.g. 3x3.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Output snapshot bundle path.")
@_home_option
@click.option("--edit-steps", default=None, type=int,
              help="Shortened resampling tail for later edits.")
@click.option("--mesh", "mesh_path", type=click.Path(path_type=Path), default=None,
              help="Also export the decoded surface (.stl or .json).")
def generate(captions_path, layout, seed, out, home, edit_steps, mesh_path):
    """Synthesize a scene from captions and write a session snapshot."""
    chunks = _parse_layout(layout)
    captions = _read_captions(captions_path)
    models = _load_models(home)
    try:
        session = SceneSession(models, chunks, captions, seed=seed,
                               edit_steps=edit_steps)
    except ValueError as exc:
        raise _fail(str(exc)) from exc

    def on_progress(stage: str, done: int, total: int) -> None:
        click.echo(f"[{done}/{total}] {stage}")

    synthesize(session, progress=on_progress)
    for entry in session.audit_log:
        i, j = entry["chunk"]
        click.echo(f"{entry['stage']} chunk ({i}, {j}): "
                   f"unknown {entry['unknown_fraction']:.0%}")
    path = save_snapshot(session, out)
    click.echo(f"snapshot written: {path} (sha256 {_sha256(path)})")
    if mesh_path is not None:
        _export_mesh(session.geometry_scene, mesh_path)


def _export_mesh(geometry, mesh_path: Path) -> None:
    try:
        if mesh_path.suffix == ".stl":
            verts, faces = mesh_arrays(geometry)
            write_stl(mesh_path, verts, faces)
        else:
            mesh_path.parent.mkdir(parents=True, exist_ok=True)
            mesh_path.write_text(json.dumps(mesh_payload(geometry)))
        click.echo(f"mesh written: {mesh_path}")
    except EmptySurfaceError as exc:
        click.echo(f"mesh skipped: {exc}", err=True)


def _label_counts(labels: np.ndarray) -> Counter:
    values, counts = np.unique(labels, return_counts=True)
    return Counter({int(v): int(c) for v, c in zip(values, counts)})


@main.command()
@click.argument("snapshot", type=click.Path(exists=True, path_type=Path))
@click.option("--ops", "ops_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="JSON list of edit requests.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@_home_option
def edit(snapshot, ops_path, out, home):
    """Apply a batch of box edits to a snapshot, in order."""
    try:
        ops = json.loads(Path(ops_path).read_text())
    except json.JSONDecodeError as exc:
        raise _fail(f"{ops_path}: {exc}") from exc
    if not isinstance(ops, list):
        raise _fail(f"{ops_path} must hold a JSON list of edit requests")
    models = _load_models(home)
    try:
        session = load_snapshot(models, snapshot)
    except Exception as exc:
        raise _fail(f"cannot load snapshot: {exc}") from exc

    before_sem = np.array(session.semantic_scene.labels()) \
        if session.semantic_scene is not None else None
    before_geo = np.array(session.geometry_scene.data) \
        if session.geometry_scene is not None else None

    for index, spec in enumerate(ops, start=1):
        try:
            request = EditRequest(
                op=spec["op"],
                region=tuple(tuple(int(c) for c in corner)
                             for corner in spec["region"]),
                category=spec.get("category"),
                target_region=None if spec.get("target_region") is None else
                tuple(tuple(int(c) for c in corner)
                      for corner in spec["target_region"]),
            )
            apply_edit(session, request)
        except (KeyError, TypeError) as exc:
            raise _fail(f"edit {index}: malformed request "
                        f"(need op∈{EDIT_OPS}, region [[x,y,z],[x,y,z]]): {exc}"
                        ) from exc
        except ValueError as exc:
            raise _fail(f"edit {index}: {exc}") from exc
        click.echo(f"edit {index}: {request.op} "
                   f"{list(request.region[0])} -> {list(request.region[1])}")

    if ops and before_sem is not None:
        after_sem = np.array(session.semantic_scene.labels())
        changed = int((after_sem != before_sem).sum())
        click.echo(f"semantic voxels changed: {changed} / {before_sem.size} "
                   f"({changed / before_sem.size:.1%})")
        delta = _label_counts(after_sem)
        delta.subtract(_label_counts(before_sem))
        parts = [f"{CATEGORY_LABELS[k]} {v:+d}"
                 for k, v in sorted(delta.items()) if v]
        if parts:
            click.echo("category deltas: " + ", ".join(parts))
        if before_geo is not None and session.geometry_scene is not None:
            after_geo = np.array(session.geometry_scene.data)
            geo_changed = int((after_geo != before_geo).sum())
            click.echo(f"geometry voxels changed: {geo_changed} / {before_geo.size}")
    path = save_snapshot(session, out)
    click.echo(f"snapshot written: {path} (sha256 {_sha256(path)})")


def _geometry_from_bundle(path: Path):
    grids, meta = read_bundle(path)
    for name in _GEOMETRY_GRID_NAMES:
        if name in grids:
            bg = grids[name]
            return GeometryGrid(bg.data, bg.voxel_size_m, bg.origin), grids, meta
    return None, grids, meta


def _semantic_scores(grids: dict, meta: dict) -> list[float]:
    """Per-chunk caption-satisfaction scores for one snapshot bundle."""
    if "semantic_map" not in grids or not meta.get("captions"):
        return []
    bg = grids["semantic_map"]
    scene = SemanticGrid.from_labels(np.asarray(bg.data, dtype=np.uint8),
                                     bg.voxel_size_m, origin=bg.origin)
    spec = {key: tuple(value) if isinstance(value, list) else value
            for key, value in meta["preset"].items()}
    preset = GridPreset(**spec)
    layout = preset.sem_layout(tuple(meta["scene_chunks"]))
    scores = []
    for caption, idx in zip(meta["captions"], layout.traversal):
        try:
            scores.append(semantic_accuracy(chunk_of(scene, layout, idx), caption))
        except ValueError:
            continue  # caption outside the template grammar: not scoreable
    return scores


def _collect_points(directory: Path, points: int, seed: int, label: str):
    bundles = sorted(Path(directory).glob("**/*.sfcb"))
    if not bundles:
        raise _fail(f"no .sfcb bundles found in {label} directory {directory}")
    clouds, sem_scores, skipped = [], [], 0
    for path in bundles:
        geometry, grids, meta = _geometry_from_bundle(path)
        sem_scores.extend(_semantic_scores(grids, meta))
        if geometry is None:
            skipped += 1
            continue
        try:
            clouds.append(surface_points(geometry, n=points, seed=seed))
        except EmptySurfaceError:
            skipped += 1
    if not clouds:
        raise _fail(f"no usable surfaces in {label} directory {directory}")
    return clouds, sem_scores, skipped


@main.command()
@click.option("--generated", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--reference", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Report JSON path.")
@click.option("--points", default=256, show_default=True, type=int,
              help="Surface points sampled per bundle.")
@click.option("--seed", default=0, show_default=True, type=int)
def evaluate(generated, reference, out, points, seed):
    """Score generated bundles against reference bundles (set metrics)."""
    gen_clouds, gen_sem, gen_skipped = _collect_points(
        generated, points, seed, "generated")
    ref_clouds, _, ref_skipped = _collect_points(
        reference, points, seed, "reference")
    report = {
        "metrics": {
            metric: set_metrics(gen_clouds, ref_clouds, metric=metric)
            for metric in ("chamfer", "emd")
        },
        "semantic_accuracy":
            float(np.mean(gen_sem)) if gen_sem else None,
        "config": {
            "points": points,
            "seed": seed,
            "generated_count": len(gen_clouds),
            "reference_count": len(ref_clouds),
            "skipped": gen_skipped + ref_skipped,
        },
    }
    width = 18
    click.echo(f"{'metric':<{width}}{'chamfer':>12}{'emd':>12}")
    for row in ("mmd", "cov", "one_nna"):
        cd = report["metrics"]["chamfer"][row]
        em = report["metrics"]["emd"][row]
        click.echo(f"{row:<{width}}{cd:>12.6f}{em:>12.6f}")
    if report["semantic_accuracy"] is not None:
        click.echo(f"{'semantic_accuracy':<{width}}"
                   f"{report['semantic_accuracy']:>12.6f}")
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        click.echo(f"report written: {out}")


@main.command()
@_home_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(home, host, port):
    """Run the HTTP edit service (loads checkpoints at startup)."""
    import uvicorn

    app = create_app(home=home)
    click.echo(f"serving on http://{host}:{port} "
               f"(preset {app.state.models.preset.name})")
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
