"""Pipeline stages. Every stage reads its inputs from disk and writes its outputs there.

Layout under ``cfg.out``::

    config.yaml
    dataset/   manifest.json, color_*.ppm, depth_*.pfm, labels_*.pgm, emb_*.tens
    train/     checkpoint.tens, loss.csv
    render/    view_*.tens with logits, entropy, depth, color (+ previews)
    segments/  seg_*.pgm with .txt statistics
    results/<variant>/  features.csv, partition.csv, labels_*.pgm, pred_*.ppm, metrics.csv
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .cluster import assign_labels, cluster_segments, palette, save_label_map, save_partition
from .config import ConfigError, PipelineConfig
from .field import FieldParams, RayDataset, TrainState, render_views, train, write_loss_csv
from .field.losses import entropy_from_logits
from .geomseg import load_segments, save_segments, segment
from .imageio import read_pfm, read_pgm16, read_ppm, write_pfm, write_pgm16, write_ppm
from .metrics import evaluate, write_metrics_csv
from .modulate import modulate_frame, save_features
from .synth import Camera, Scene, load_scene, make_trajectory, oracle_embedding, render_rgbd
from .synth.scene import SceneError, scene_from_dict

log = logging.getLogger(__name__)

DATASET_SECTIONS = ("scene", "trajectory", "oracle")
TRAIN_SECTIONS = DATASET_SECTIONS + ("arch", "train")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


def _stage(name):
    def wrap(fn):
        def run(*a, **kw):
            try:
                return fn(*a, **kw)
            except (ConfigError, StageError):
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def variant_name(cfg: PipelineConfig) -> str:
    a = cfg.ablation
    parts = []
    if not a.use_field:
        parts.append("nofield")
    if not a.use_embedding and not a.use_entropy:
        parts.append("gs")
    elif not a.use_embedding:
        parts.append("gs-ep")
    elif not a.use_entropy:
        parts.append("gs-se")
    return "-".join(parts) or "full"


def prepare(cfg: PipelineConfig) -> Scene:
    """Validate everything that can be checked up front; nothing is written on failure."""
    cfg.validate()
    try:
        scene = load_scene(cfg.scene_path())
        scene.validate()
    except SceneError as exc:
        raise ConfigError(f"scene: {exc}") from None
    if scene.known_classes and max(scene.known_classes) >= cfg.oracle.dim:
        raise ConfigError(f"oracle.dim: {cfg.oracle.dim} is too small for known class {max(scene.known_classes)}")
    return scene


def write_config(cfg: PipelineConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dumps())


# dataset

@dataclass
class Dataset:
    scene: Scene
    cameras: list[Camera]
    colors: list[np.ndarray]
    depths: list[np.ndarray]
    labels: list[np.ndarray]
    embeddings: list[np.ndarray]
    manifest: dict

    def valid(self) -> list[np.ndarray]:
        bg = self.scene.background_class
        return [(l != bg) & (d > 0) for l, d in zip(self.labels, self.depths)]


def _dataset_dir(cfg) -> Path:
    return Path(cfg.out) / "dataset"


def _dataset_current(cfg) -> bool:
    m = _dataset_dir(cfg) / "manifest.json"
    return m.exists() and json.loads(m.read_text()).get("config_hash") == cfg.section_hash(*DATASET_SECTIONS)


@_stage("synth")
def stage_synth(cfg: PipelineConfig, scene: Scene | None = None) -> Path:
    scene = scene or prepare(cfg)
    t = cfg.trajectory
    cams = make_trajectory(scene, t.n_views, t.seed, t.width, t.height, t.fov)
    final = _dataset_dir(cfg)
    tmp = final.with_name("dataset.partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    frames = []
    for i, cam in enumerate(cams):
        fr = render_rgbd(scene, cam)
        emb = oracle_embedding(scene, fr, cfg.oracle, i)
        names = {k: f"{k}_{i:03d}.{ext}" for k, ext in
                 (("color", "ppm"), ("depth", "pfm"), ("labels", "pgm"), ("instances", "pgm"), ("emb", "tens"))}
        write_ppm(tmp / names["color"], fr.color)
        write_pfm(tmp / names["depth"], fr.depth.astype(np.float32))
        write_pgm16(tmp / names["labels"], fr.labels.astype(np.uint16))
        write_pgm16(tmp / names["instances"], (fr.instances + 1).astype(np.uint16))
        dc.save_tensors(tmp / names["emb"], {"logits": emb.logits}, {"frame": i})
        frames.append({"index": i, "camera": cam.to_dict(), **names})
    manifest = {
        "version": 1,
        "config_hash": cfg.section_hash(*DATASET_SECTIONS),
        "scene": scene.to_dict(),
        "trajectory": asdict(cfg.trajectory),
        "oracle": asdict(cfg.oracle),
        "frames": frames,
    }
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    return final


def load_dataset(path) -> Dataset:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    scene = scene_from_dict(m["scene"])
    cams, colors, depths, labels, embs = [], [], [], [], []
    for f in m["frames"]:
        cams.append(Camera.from_dict(f["camera"]))
        colors.append(read_ppm(path / f["color"]).astype(np.float64) / 255.0)
        depths.append(read_pfm(path / f["depth"]).astype(np.float64))
        labels.append(read_pgm16(path / f["labels"]).astype(np.int64))
        embs.append(dc.load_tensors(path / f["emb"])[0]["logits"])
    return Dataset(scene, cams, colors, depths, labels, embs, m)


def ensure_dataset(cfg: PipelineConfig, scene: Scene | None = None) -> Dataset:
    if not _dataset_current(cfg):
        stage_synth(cfg, scene)
    return load_dataset(_dataset_dir(cfg))


# training

def _checkpoint(cfg) -> Path:
    return Path(cfg.out) / "train" / "checkpoint.tens"


def _checkpoint_current(cfg) -> bool:
    ck = _checkpoint(cfg)
    if not ck.exists():
        return False
    _, meta = dc.load_tensors(ck)
    return meta.get("config_hash") == cfg.section_hash(*TRAIN_SECTIONS) and \
        meta.get("iteration", 0) >= cfg.train.iterations


@_stage("train")
def stage_train(cfg: PipelineConfig, resume: bool = False) -> Path:
    data = ensure_dataset(cfg)
    ds = RayDataset.from_frames(data.cameras, data.colors, data.embeddings, data.valid())
    arch = cfg.arch.build(ds.emb_dim, data.scene.room_min, data.scene.room_max)
    ck = _checkpoint(cfg)
    state = None
    if resume:
        if not ck.exists():
            raise FileNotFoundError(f"no checkpoint to resume from at {ck}")
        state, meta = TrainState.load(ck)
        if meta.get("config_hash") != cfg.section_hash(*TRAIN_SECTIONS):
            log.warning("resuming from a checkpoint written under a different configuration")
        state.history = _read_loss_csv(ck.parent / "loss.csv")[:state.iteration]
    state = train(ds, cfg.train, arch, state=state)
    ck.parent.mkdir(parents=True, exist_ok=True)
    tmp = ck.with_suffix(".partial")
    state.save(tmp, cfg.train, extra_meta={"config_hash": cfg.section_hash(*TRAIN_SECTIONS),
                                           "lam": cfg.train.lam})
    tmp.replace(ck)
    write_loss_csv(ck.parent / "loss.csv", state.history)
    return ck


def _read_loss_csv(path) -> list[tuple[int, float, float, float]]:
    path = Path(path)
    if not path.exists():
        return []
    rows = path.read_text().splitlines()[1:]
    return [(int(i), float(a), float(b), float(c)) for i, a, b, c in (r.split(",") for r in rows)]


def ensure_checkpoint(cfg: PipelineConfig) -> FieldParams:
    if not _checkpoint_current(cfg):
        stage_train(cfg)
    params, _, _ = FieldParams.load(_checkpoint(cfg))
    return params


# rendering

def _render_dir(cfg) -> Path:
    return Path(cfg.out) / ("render" if cfg.ablation.use_field else "render-oracle")


@_stage("render")
def stage_render(cfg: PipelineConfig) -> Path:
    data = ensure_dataset(cfg)
    out = _render_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.ablation.use_field:
        params = ensure_checkpoint(cfg)
        views = render_views(params, data.cameras, cfg.train.render_config(), cfg.threads)
        maps = [(v.logits, v.entropy, v.depth, v.color) for v in views]
    else:
        maps = [(e.astype(np.float64), entropy_from_logits(e), d, c)
                for e, d, c in zip(data.embeddings, data.depths, data.colors)]
    for i, (logits, ent, depth, color) in enumerate(maps):
        dc.save_tensors(out / f"view_{i:03d}.tens",
                        {"logits": logits.astype(np.float32), "entropy": ent.astype(np.float32),
                         "depth": depth.astype(np.float32), "color": color.astype(np.float32)},
                        {"frame": i, "source": "field" if cfg.ablation.use_field else "oracle"})
        write_ppm(out / f"color_{i:03d}.ppm", np.clip(color, 0, 1))
        write_pfm(out / f"entropy_{i:03d}.pfm", ent.astype(np.float32))
    return out


def load_render(path, i: int) -> dict[str, np.ndarray]:
    return dc.load_tensors(Path(path) / f"view_{i:03d}.tens")[0]


# segmentation

@_stage("segment")
def stage_segment(cfg: PipelineConfig) -> Path:
    data = ensure_dataset(cfg)
    out = Path(cfg.out) / "segments"
    out.mkdir(parents=True, exist_ok=True)
    for i, (cam, depth) in enumerate(zip(data.cameras, data.depths)):
        segs = segment(depth, cam, cfg.geomseg, frame_index=i)
        save_segments(out / f"seg_{i:03d}.pgm", segs, depth)
    return out


# modulation, clustering, evaluation

def _results_dir(cfg) -> Path:
    return Path(cfg.out) / "results" / variant_name(cfg)


@_stage("cluster")
def stage_cluster(cfg: PipelineConfig) -> Path:
    data = ensure_dataset(cfg)
    rdir, sdir, out = _render_dir(cfg), Path(cfg.out) / "segments", _results_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.ablation
    use_feats = a.use_embedding or a.use_entropy
    segsets, feats, nodes, pixels = [], [], [], []
    for i in range(len(data.cameras)):
        segs = load_segments(sdir / f"seg_{i:03d}.pgm")
        segsets.append(segs)
        if use_feats:
            r = load_render(rdir, i)
            fs = modulate_frame(segs, r["logits"], r["entropy"],
                                use_embedding=a.use_embedding, use_entropy=a.use_entropy)
            feats.extend(fs)
            nodes.extend((i, f.segment) for f in fs)
            pixels.extend(f.pixels for f in fs)
        else:
            nodes.extend((i, s) for s in segs.ids)
            pixels.extend(segs.counts[s] for s in segs.ids)
    if use_feats:
        save_features(out / "features.csv", feats)
    known = sorted(data.scene.known_classes)
    res = cluster_segments(np.array([f.feature for f in feats]) if use_feats else None, nodes,
                           np.array(pixels), cfg.cluster, slot_classes=list(range(cfg.oracle.dim)),
                           has_entropy=a.use_entropy, has_embedding=a.use_embedding)
    if not res.converged:
        log.warning("clustering did not converge; partition is best-effort")
    save_partition(out / "partition.csv", res)
    n_colors = int(res.labels.max(initial=0)) + 1
    pal = palette(n_colors)
    for i, segs in enumerate(segsets):
        lab = assign_labels(res.partition(i), segs)
        save_label_map(out / f"labels_{i:03d}.pgm", lab, n_colors)
        write_ppm(out / f"pred_{i:03d}.ppm", pal[lab].astype(np.float64) / 255.0)
    summary = {
        "variant": variant_name(cfg), "n_segments": len(nodes), "n_clusters": int(res.labels.max(initial=0)),
        "feature_dim": int(feats[0].dim) if feats else 0, "converged": res.converged,
        "tags": {str(k): str(v) for k, v in sorted(res.tags.items())}, "known_classes": known,
    }
    (out / "clusters.json").write_text(json.dumps(summary, indent=1))
    return out


@_stage("eval")
def stage_eval(cfg: PipelineConfig) -> Path:
    data = ensure_dataset(cfg)
    out = _results_dir(cfg)
    preds = [read_pgm16(out / f"labels_{i:03d}.pgm").astype(np.int64) for i in range(len(data.cameras))]
    names = dict(enumerate(data.scene.class_names or []))
    rep = evaluate(preds, data.labels, data.valid(), data.scene.known_classes, data.scene.novel_classes, names)
    write_metrics_csv(out / "metrics.csv", rep)
    return out / "metrics.csv"


def run_pipeline(cfg: PipelineConfig) -> Path:
    scene = prepare(cfg)
    write_config(cfg)
    ensure_dataset(cfg, scene)
    if cfg.ablation.use_field:
        ensure_checkpoint(cfg)
    stage_render(cfg)
    stage_segment(cfg)
    stage_cluster(cfg)
    return stage_eval(cfg)
