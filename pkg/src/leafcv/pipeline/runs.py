"""Training runs, evaluation reports and Grad-CAM batch rendering."""
from __future__ import annotations

import json
import logging
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..augment import AugmentConfig, apply_augmentation
from ..errors import ClassMismatch, ConfigError, RepresentationMismatch
from ..features import make_params, params_fingerprint
from ..gradcam import gradcam_heatmap, render_overlay, upsample_heatmap
from ..imaging import ImageBuffer, encode_image, resize_bilinear, to_chw, to_rgb
from ..metrics import ConfusionMatrix, MetricReport, confusion, report
from ..nn import Model, TrainConfig, linear_head, mlp_head, small_cnn, train
from ..rng import make_rng
from ..synthdata import SynthConfig, generate
from .cache import extract_features, featurize
from .checkpoint import ModelCheckpoint
from .dataset import DatasetManifest, ingest, split

log = logging.getLogger(__name__)

MODELS = ("small-cnn", "linear", "mlp")
REPRESENTATIONS = ("raw", "hog", "lbp")
LOCALIZATION_THRESHOLD = 0.6
BOX_DILATION = 0.1


@dataclass
class RunConfig:
    data: str | None = None
    synth: dict | None = None
    representation: str = "raw"
    descriptor: dict = field(default_factory=dict)
    model: str = "small-cnn"
    image_size: int = 224
    hidden: int = 128
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_features: bool = False
    split_fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.model == "small-cnn" and self.representation != "raw":
            raise ConfigError("small-cnn consumes images; descriptor representations need a linear or mlp head")
        make_params(self.representation, self.descriptor)  # validates descriptor keys

    @property
    def descriptor_params(self):
        return make_params(self.representation, self.descriptor)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d


@dataclass
class RunResult:
    checkpoint: ModelCheckpoint
    manifest: DatasetManifest
    reports: dict[str, MetricReport]
    confusions: dict[str, ConfusionMatrix]


def prepare_manifest(cfg: RunConfig, workdir=None) -> DatasetManifest:
    """Ingest ``cfg.data`` (or generate the synthetic set) and split it."""
    if cfg.data:
        manifest = ingest(cfg.data)
    elif cfg.synth is not None:
        root = Path(workdir or tempfile.mkdtemp(prefix="leafcv-synth-")) / "synth"
        generate(SynthConfig(**cfg.synth), root)
        manifest = ingest(root)
    else:
        raise ConfigError("config needs either 'data' or 'synth'")
    return split(manifest, cfg.split_fractions, cfg.seed)


def _is_identity(aug: AugmentConfig) -> bool:
    return not aug.horizontal_flip and not any(
        (aug.rotation_factor, aug.zoom_factor, aug.height_factor, aug.width_factor))


def image_batch_augmenter(aug: AugmentConfig):
    """Batch transform drawing from a stream keyed on ``(aug.seed, epoch, batch)``."""

    def transform(xb: np.ndarray, epoch: int, batch: int) -> np.ndarray:
        rng = make_rng(aug.seed, epoch, batch)
        out = np.empty_like(xb)
        for i, x in enumerate(xb):
            img = apply_augmentation(ImageBuffer(x.transpose(1, 2, 0)), aug, rng)
            out[i] = img.pixels.transpose(2, 0, 1)
        return out

    return transform


def load_images(manifest: DatasetManifest, samples, input_shape) -> np.ndarray:
    if not samples:
        return np.zeros((0,) + tuple(input_shape), dtype=np.float32)
    return np.stack([to_chw(manifest.load_image(s), input_shape) for s in samples])


def _features_for(manifest, cfg: RunConfig, cache_dir):
    cache_path = Path(cache_dir) / f"{cfg.representation}.lfcv" if cache_dir else None
    return extract_features(manifest, cfg.representation, cfg.descriptor_params, cfg.image_size, cache_path)


def _augmented_train_features(manifest, cfg: RunConfig) -> np.ndarray:
    rows = []
    for i, s in enumerate(manifest.select("train")):
        img = apply_augmentation(manifest.load_image(s), cfg.augment, make_rng(cfg.augment.seed, i))
        rows.append(featurize(img, cfg.representation, cfg.descriptor_params, cfg.image_size))
    return np.stack(rows)


def run_training(cfg: RunConfig, manifest: DatasetManifest | None = None, workdir=None,
                 cache_dir=None) -> RunResult:
    """Train the configured model and report on the val and test splits.

    Image runs feed the small CNN with on-the-fly augmentation; descriptor
    runs train a standardized linear or MLP head on cached features.
    """
    if manifest is None:
        manifest = prepare_manifest(cfg, workdir)
    elif any(s.split is None for s in manifest.samples):
        manifest = split(manifest, cfg.split_fractions, cfg.seed)
    k = len(manifest.classes)
    size = cfg.image_size
    meta = {"representation": cfg.representation, "model": cfg.model, "image_size": size,
            "descriptor": asdict(cfg.descriptor_params), "seed": cfg.seed,
            "params_fingerprint": params_fingerprint(cfg.representation, cfg.descriptor_params,
                                                     image_size=size).hex(),
            "augment": cfg.augment.to_dict()}

    if cfg.model == "small-cnn":
        spec = small_cnn(k, (3, size, size), cfg.seed)
        model = Model(spec)
        data = {sp: (load_images(manifest, manifest.select(sp), spec.input_shape), manifest.labels(sp))
                for sp in ("train", "val", "test")}
        augment = None if _is_identity(cfg.augment) else image_batch_augmenter(cfg.augment)
    else:
        cache = _features_for(manifest, cfg, cache_dir)
        data = {sp: cache.select(sp) for sp in ("train", "val", "test")}
        if cfg.augment_features:
            data["train"] = (_augmented_train_features(manifest, cfg), data["train"][1])
        dim = data["train"][0].shape[1]
        spec = (linear_head(dim, k, cfg.seed) if cfg.model == "linear"
                else mlp_head(dim, k, cfg.hidden, cfg.seed))
        model = Model(spec)
        xtr = data["train"][0].astype(np.float64)
        std = xtr.std(axis=0)
        model.buffers["0.mean"] = xtr.mean(axis=0).astype(model.dtype)
        model.buffers["0.std"] = np.where(std > 1e-6, std, 1.0).astype(model.dtype)
        augment = None

    xtr, ytr = data["train"]
    val = data["val"] if len(data["val"][1]) else None
    history = train(model, xtr, ytr, cfg.train, val=val, augment=augment)
    ckpt = ModelCheckpoint.from_model(model, manifest.classes, cfg.train.to_dict(), history, meta)

    reports, confusions = {}, {}
    for sp in ("val", "test"):
        x, y = data[sp]
        if len(y):
            pred, _ = model.predict(x)
            confusions[sp] = confusion(y, pred, k)
            reports[sp] = report(confusions[sp])
    return RunResult(ckpt, manifest, reports, confusions)


def predict_split(ckpt: ModelCheckpoint, manifest: DatasetManifest, split_name: str | None, cache_dir=None):
    """``(true_labels, predicted_labels)`` for one split of ``manifest``."""
    if list(ckpt.class_names) != list(manifest.classes):
        raise ClassMismatch(f"checkpoint classes {ckpt.class_names} != manifest classes {manifest.classes}")
    model = ckpt.to_model()
    samples = manifest.select(split_name)
    y = np.array([s.class_id for s in samples], dtype=np.int64)
    if ckpt.meta.get("model", "small-cnn") == "small-cnn":
        x = load_images(manifest, samples, model.spec.input_shape)
    else:
        rep = ckpt.representation
        params = make_params(rep, ckpt.meta.get("descriptor"))
        size = int(ckpt.meta["image_size"])
        if cache_dir:
            cache = extract_features(manifest, rep, params, size, Path(cache_dir) / f"{rep}.lfcv")
            x, y = cache.select(split_name)
        else:
            x = np.stack([featurize(manifest.load_image(s), rep, params, size) for s in samples])
    pred, _ = model.predict(x)
    return y, pred


def evaluate(ckpt: ModelCheckpoint, manifest: DatasetManifest, split_name: str | None = "test",
             cache_dir=None):
    """``(MetricReport, ConfusionMatrix)`` for one split."""
    y, pred = predict_split(ckpt, manifest, split_name, cache_dir)
    cm = confusion(y, pred, len(manifest.classes))
    return report(cm), cm


def report_document(rep: MetricReport, cm: ConfusionMatrix, ckpt: ModelCheckpoint, split_name) -> dict:
    doc = rep.to_dict()
    doc["confusion_matrix"] = cm.tolist()
    doc["metadata"] = {
        "averaging": "macro",
        "class_names": list(ckpt.class_names),
        "model": ckpt.meta.get("model"),
        "params_fingerprint": ckpt.meta.get("params_fingerprint"),
        "representation": ckpt.representation,
        "samples": cm.total,
        "seed": ckpt.meta.get("seed"),
        "split": split_name,
    }
    return doc


def write_report(path, rep: MetricReport, cm: ConfusionMatrix, ckpt: ModelCheckpoint, split_name) -> dict:
    doc = report_document(rep, cm, ckpt, split_name)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def lesion_mask(boxes, src_w: int, src_h: int, size: int, dilation: float = BOX_DILATION) -> np.ndarray:
    """Union of lesion boxes rescaled to ``size`` and grown by ``dilation * size`` per side."""
    mask = np.zeros((size, size), dtype=bool)
    sx, sy = size / src_w, size / src_h
    grow = dilation * size
    for b in boxes:
        x0 = max(0, int(np.floor(b["x"] * sx - grow)))
        y0 = max(0, int(np.floor(b["y"] * sy - grow)))
        x1 = min(size, int(np.ceil((b["x"] + b["w"]) * sx + grow)))
        y1 = min(size, int(np.ceil((b["y"] + b["h"]) * sy + grow)))
        mask[y0:y1, x0:x1] = True
    return mask


def mass_fraction(heat: np.ndarray, mask: np.ndarray) -> float:
    total = float(heat.sum())
    return float(heat[mask].sum() / total) if total > 0 else 0.0


def gradcam_batch(ckpt: ModelCheckpoint, manifest: DatasetManifest, split_name: str | None, out_dir,
                  alpha: float = 0.4, limit: int | None = None) -> dict:
    """Render Grad-CAM overlays for a split and measure lesion localization.

    Writes ``<class>/<stem>.ppm`` overlays, ``<class>/<stem>_cam.pgm`` heatmaps
    and ``stats.json``. The localization statistic is the share of heatmap mass
    inside the dilated lesion boxes, for images that carry boxes.
    """
    if ckpt.meta.get("model", "small-cnn") != "small-cnn":
        raise RepresentationMismatch("Grad-CAM needs a small-cnn checkpoint; feature heads have no conv layer")
    if list(ckpt.class_names) != list(manifest.classes):
        raise ClassMismatch(f"checkpoint classes {ckpt.class_names} != manifest classes {manifest.classes}")
    model = ckpt.to_model()
    size = model.spec.input_shape[1]
    out = Path(out_dir)
    rows = []
    samples = manifest.select(split_name)[:limit]
    for s in samples:
        src = manifest.load_image(s)
        working = resize_bilinear(to_rgb(src), size, size)
        pred, probs = model.predict(to_chw(working, model.spec.input_shape)[None])
        pred = int(pred[0])
        heat = upsample_heatmap(gradcam_heatmap(model, working, pred), size, size)
        stem = Path(s.path).stem
        (out / manifest.classes[s.class_id]).mkdir(parents=True, exist_ok=True)
        base = out / manifest.classes[s.class_id] / stem
        Path(f"{base}.ppm").write_bytes(encode_image(render_overlay(working, heat, alpha), "PPM"))
        Path(f"{base}_cam.pgm").write_bytes(encode_image(ImageBuffer(heat.values), "PGM"))
        row = {"path": s.path, "true": s.class_id, "pred": pred, "correct": pred == s.class_id,
               "confidence": float(probs[0, pred]), "lesion_mass_fraction": None}
        if s.lesion_boxes:
            mask = lesion_mask(s.lesion_boxes, src.width, src.height, size)
            row["lesion_mass_fraction"] = mass_fraction(heat.values, mask)
        rows.append(row)
    scored = [r for r in rows if r["correct"] and r["lesion_mass_fraction"] is not None]
    hits = sum(r["lesion_mass_fraction"] >= LOCALIZATION_THRESHOLD for r in scored)
    stats = {
        "images": rows,
        "summary": {
            "images": len(rows),
            "correct_with_boxes": len(scored),
            "localized": hits,
            "localized_fraction": hits / len(scored) if scored else None,
            "mass_threshold": LOCALIZATION_THRESHOLD,
            "box_dilation": BOX_DILATION,
        },
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats
