"""End-to-end orchestration: ingest, split, feature caches, runs, reports and charts."""
from .cache import FeatureCache, extract_features, read_cache, write_cache
from .chart import emit_chart, render_chart
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .dataset import DatasetManifest, Sample, ingest, split
from .runs import RunConfig, evaluate, gradcam_batch, run_training, write_report

__all__ = [
    "DatasetManifest", "FeatureCache", "ModelCheckpoint", "RunConfig", "Sample", "emit_chart",
    "evaluate", "extract_features", "gradcam_batch", "ingest", "load_checkpoint", "read_cache",
    "render_chart", "run_training", "save_checkpoint", "split", "write_cache", "write_report",
]
