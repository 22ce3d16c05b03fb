"""Benchmark orchestration: corpus preparation, training, scoring and report files.

Everything is driven by a :class:`BenchConfig`. A run directory holds::

    manifest.tsv                      dataset manifest
    phantoms/<class>/phantom_*.png    synthetic corpus (when no dataset root is given)
    ae_skip.ckpt, ae_noskip.ckpt      trained autoencoders
    history_ae_skip.csv, ...          per-epoch losses
    results.csv, results.md           per (method, variance) metrics
    curves.tsv                        SSIM-vs-variance series
    panel_<image>_var<v>.png          side-by-side method comparison
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dae
from .filters import FILTER_NAMES, FilterConfig, apply_filter
from .imaging import (DataError, DatasetManifest, build_manifest, generate_phantom_corpus,
                      load_resized, save_png)
from .metrics import MetricsRow, evaluate_method
from .noise import CANONICAL_VARIANCES, derive_seed, noise_grid

log = logging.getLogger(__name__)

AE_METHODS = ("ae_noskip", "ae_skip")
# panel order: original, noisy, then these
METHODS = AE_METHODS + ("median", "gaussian", "average", "bilateral", "wiener", "anisotropic")
# row order inside a variance block of the results table
TABLE_ORDER = ("anisotropic", "bilateral", "wiener", "gaussian", "average", "median", "ae_noskip", "ae_skip")
# series listed first in the curve file
CURVE_ORDER = ("ae_skip", "ae_noskip", "gaussian", "average", "bilateral")

CSV_HEADER = ["method", "variance", "psnr_db", "ssim", "mse", "n_images", "seed"]
_BENCH_STREAM = 0xBE7C


class ConfigError(ValueError):
    """Bad configuration file or option."""


@dataclass
class BenchConfig:
    seed: int = 0
    out_dir: Path = Path("run")
    dataset_root: Path = None
    phantom_n: int = 20
    phantom_size: int = 500
    image_size: int = 128
    variances: tuple = CANONICAL_VARIANCES
    methods: tuple = METHODS
    filters: FilterConfig = field(default_factory=FilterConfig)
    train: dae.TrainConfig = field(default_factory=dae.TrainConfig)
    channels: int = 32

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
        if not self.methods:
            raise ConfigError("method list is empty")
        if not self.variances:
            raise ConfigError("variance list is empty")
        if any(v < 0 for v in self.variances):
            raise ConfigError("noise variances must be >= 0")

    @property
    def manifest_path(self) -> Path:
        return Path(self.out_dir) / "manifest.tsv"

    def checkpoint_path(self, method: str) -> Path:
        return Path(self.out_dir) / f"{method}.ckpt"

    def history_path(self, method: str) -> Path:
        return Path(self.out_dir) / f"history_{method}.csv"

    def network_config(self, method: str) -> dae.NetworkConfig:
        return dae.NetworkConfig(use_skip=(method == "ae_skip"), base_channels=self.channels,
                                 input_size=self.image_size)


PRESETS = {
    "desk": {
        "phantom.n": "20",
        "train.epochs": "200",
        "train.channels": "8",
        "train.batch_size": "2",
        "train.learning_rate": "2e-3",
    },
    "paper": {
        "train.epochs": "300",
        "train.batch_size": "64",
        "train.channels": "32",
        "train.learning_rate": "1e-3",
    },
}

_FILTER_KEYS = {
    "filters.median.kernel": ("median_kernel", int),
    "filters.average.kernel": ("average_kernel", int),
    "filters.gaussian.sigma": ("gaussian_sigma", float),
    "filters.gaussian.kernel": ("gaussian_kernel", int),
    "filters.bilateral.sigma_spatial": ("bilateral_sigma_spatial", float),
    "filters.bilateral.sigma_range": ("bilateral_sigma_range", float),
    "filters.bilateral.kernel": ("bilateral_kernel", int),
    "filters.wiener.window": ("wiener_window", int),
    "filters.anisotropic.iterations": ("pm_iterations", int),
    "filters.anisotropic.kappa": ("pm_kappa", float),
    "filters.anisotropic.lambda": ("pm_lambda", float),
}
_TRAIN_KEYS = {
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.learning_rate": ("learning_rate", float),
    "train.patience": ("patience", int),
}


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _names(text):
    return tuple(t for t in text.replace(",", " ").split())


_TOP_KEYS = {
    "seed": ("seed", int),
    "out": ("out_dir", Path),
    "dataset.root": ("dataset_root", Path),
    "phantom.n": ("phantom_n", int),
    "phantom.size": ("phantom_size", int),
    "image.size": ("image_size", int),
    "noise.variances": ("variances", _floats),
    "methods": ("methods", _names),
    "train.channels": ("channels", int),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines (``#`` starts a comment) into a dict."""
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TOP_KEYS and key not in _FILTER_KEYS and key not in _TRAIN_KEYS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = value
    return values


def make_config(values: dict) -> BenchConfig:
    """Build a :class:`BenchConfig` from raw string values (defaults fill the rest)."""
    top, filt, train = {}, {}, {}
    try:
        for key, value in values.items():
            for table, dest in ((_TOP_KEYS, top), (_FILTER_KEYS, filt), (_TRAIN_KEYS, train)):
                if key in table:
                    name, conv = table[key]
                    dest[name] = conv(value)
                    break
            else:
                raise ConfigError(f"unknown key {key!r}")
        seed = top.get("seed", 0)
        train_cfg = dae.TrainConfig(seed=seed, noise_variances=top.get("variances", CANONICAL_VARIANCES), **train)
        return BenchConfig(filters=FilterConfig(**filt), train=train_cfg, **top)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, preset: str = None, overrides: dict = None) -> BenchConfig:
    """Preset values, then the config file, then explicit overrides."""
    values = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        values.update(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, str(path)))
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    return make_config(values)


# ---------------------------------------------------------------- prepare

def cmd_prepare(cfg: BenchConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.dataset_root is not None:
        root = Path(cfg.dataset_root)
        if not root.is_dir():
            raise DataError(f"dataset root {root} does not exist")
    else:
        root = out / "phantoms"
        generate_phantom_corpus(cfg.phantom_n, cfg.seed, root, cfg.phantom_size)
    manifest = build_manifest(root, cfg.seed)
    manifest.write(cfg.manifest_path)
    log.info("manifest %s: %s", cfg.manifest_path, manifest.counts())
    return cfg.manifest_path


def _read_manifest(cfg: BenchConfig) -> DatasetManifest:
    if not cfg.manifest_path.exists():
        raise DataError(f"no manifest at {cfg.manifest_path}; run 'prepare' first")
    return DatasetManifest.read(cfg.manifest_path)


# ---------------------------------------------------------------- train

def cmd_train(cfg: BenchConfig) -> dict:
    """Train both autoencoder variants with the shared seed; returns checkpoint paths."""
    manifest = _read_manifest(cfg)
    cache = {}

    def loader(p):
        if p not in cache:
            cache[p] = load_resized(p, cfg.image_size)
        return cache[p]

    paths = {}
    for method in AE_METHODS:
        net = dae.build_network(cfg.network_config(method), cfg.seed)
        ckpt, history = dae.train(net, manifest, cfg.train, loader=loader)
        ckpt.save(cfg.checkpoint_path(method))
        cfg.history_path(method).write_text(history.to_csv())
        log.info("%s: best val loss %.6f at epoch %d", method, ckpt.best_val_loss, ckpt.epoch)
        paths[method] = cfg.checkpoint_path(method)
    return paths


# ---------------------------------------------------------------- bench

class _Denoisers:
    """Callable per method name; autoencoders are loaded lazily from the run directory."""

    def __init__(self, cfg: BenchConfig):
        self.cfg = cfg
        self.nets = {}
        for m in cfg.methods:
            if m in AE_METHODS:
                path = cfg.checkpoint_path(m)
                if not path.exists():
                    raise DataError(f"method {m} needs checkpoint {path}; run 'train' first")
                ckpt = dae.Checkpoint.load(path)
                self.nets[m] = (ckpt, ckpt.network())

    def __call__(self, method, noisy):
        if method in AE_METHODS:
            ckpt, net = self.nets[method]
            return dae.denoise(ckpt, noisy, net)
        return np.clip(apply_filter(method, noisy, self.cfg.filters), 0.0, 1.0)


def noisy_versions(cfg: BenchConfig, index: int, clean):
    """Noisy copies of test image ``index`` at every configured variance."""
    return noise_grid(clean, cfg.variances, derive_seed(cfg.seed, _BENCH_STREAM, index))


def run_benchmark(cfg: BenchConfig, manifest: DatasetManifest = None) -> list:
    manifest = manifest or _read_manifest(cfg)
    tests = manifest.split("test")
    if not tests:
        raise DataError("manifest has an empty test split")
    denoisers = _Denoisers(cfg)
    clean = [load_resized(e.path, cfg.image_size) for e in tests]
    outputs = {(m, vi): [] for m in cfg.methods for vi in range(len(cfg.variances))}
    for j, img in enumerate(clean):
        for vi, (_, noisy) in enumerate(noisy_versions(cfg, j, img)):
            for m in cfg.methods:
                outputs[m, vi].append(denoisers(m, noisy))
    rows = []
    for vi, v in enumerate(cfg.variances):
        for m in sorted(cfg.methods, key=TABLE_ORDER.index):
            rows.append(evaluate_method(clean, outputs[m, vi], m, v, cfg.seed))
    return rows


def _fmt(x) -> str:
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def read_results_csv(path) -> list:
    """Parse a results CSV back into raw string dicts, validating the header."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise DataError(f"{path}: header {header} != {CSV_HEADER}")
            rows = []
            for n, rec in enumerate(reader, start=2):
                if len(rec) != len(CSV_HEADER):
                    raise DataError(f"{path}:{n}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
                row = dict(zip(CSV_HEADER, rec))
                float(row["variance"]), float(row["ssim"])
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed number ({exc})") from exc
    return rows


def results_markdown(rows) -> str:
    lines = []
    for v in dict.fromkeys(r.variance for r in rows):
        lines += [f"### Variance = {v:g}", "", "| Method | PSNR | SSIM | MSE |", "|---|---|---|---|"]
        for r in rows:
            if r.variance == v:
                p = "inf" if math.isinf(r.psnr_db) else f"{r.psnr_db:.3f}"
                lines.append(f"| {r.method} | {p} | {r.ssim:.3f} | {r.mse:.3f} |")
        lines.append("")
    return "\n".join(lines)


def curves_text(rows: list) -> str:
    """SSIM-vs-variance series, one ``# method=`` block per method."""
    series = {}
    for r in rows:
        series.setdefault(r["method"], []).append((float(r["variance"]), r["variance"], r["ssim"]))
    order = [m for m in CURVE_ORDER if m in series] + [m for m in series if m not in CURVE_ORDER]
    lines = []
    for m in order:
        lines.append(f"# method={m}")
        lines += [f"{v}\t{s}" for _, v, s in sorted(series[m], key=lambda t: t[0])]
    return "\n".join(lines) + "\n"


def cmd_curves(results_path, out_path=None) -> Path:
    rows = read_results_csv(results_path)
    out_path = Path(out_path) if out_path else Path(results_path).with_name("curves.tsv")
    out_path.write_text(curves_text(rows))
    return out_path


def cmd_bench(cfg: BenchConfig) -> dict:
    """Score every method at every variance; writes the report bundle and returns its paths."""
    manifest = _read_manifest(cfg)
    rows = run_benchmark(cfg, manifest)
    out = Path(cfg.out_dir)
    csv_path = out / "results.csv"
    csv_path.write_text(results_csv(rows))
    md_path = out / "results.md"
    md_path.write_text(results_markdown(rows))
    curves = cmd_curves(csv_path)
    first = manifest.split("test")[0]
    panel = cmd_panel(cfg, first.path, max(cfg.variances), manifest)
    return {"results": csv_path, "markdown": md_path, "curves": curves, "panel": panel, "rows": rows}


# ---------------------------------------------------------------- panel

def panel_strip(tiles, separator: float = 1.0) -> np.ndarray:
    """Concatenate equal-height tiles horizontally with 1-pixel separators."""
    h = tiles[0].shape[0]
    sep = np.full((h, 1), separator)
    parts = []
    for i, t in enumerate(tiles):
        if i:
            parts.append(sep)
        parts.append(np.clip(t, 0.0, 1.0))
    return np.hstack(parts)


def cmd_panel(cfg: BenchConfig, image_id: str, variance: float, manifest: DatasetManifest = None) -> Path:
    """Write clean | noisy | one tile per method (fixed order) for one test image."""
    manifest = manifest or _read_manifest(cfg)
    entry = manifest.find(image_id)
    tests = manifest.split("test")
    # test images reuse their benchmark noise; other splits get a separate stream
    index = tests.index(entry) if entry in tests else 10_000 + manifest.entries.index(entry)
    clean = load_resized(entry.path, cfg.image_size)
    variance = float(variance)
    variances = list(cfg.variances) if variance in cfg.variances else [variance]
    sub = replace(cfg, variances=tuple(variances))
    noisy = dict(noisy_versions(sub, index, clean))[variance]
    denoisers = _Denoisers(cfg)
    tiles = [clean, noisy] + [denoisers(m, noisy) for m in METHODS if m in cfg.methods]
    path = Path(cfg.out_dir) / f"panel_{Path(entry.path).stem}_var{variance:g}.png"
    save_png(panel_strip(tiles), path)
    return path
