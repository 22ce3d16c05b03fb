"""PNG ingestion, resizing, dataset manifests and the synthetic phantom corpus.

Images are 2-D float arrays with values in [0, 1] (``GrayImage`` below is
just an alias for documentation purposes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

GrayImage = np.ndarray

CLASSES = ("normal", "benign", "malignant")
SPLITS = ("train", "val", "test")
MASK_SUFFIX = "_mask"

# class frequencies of the breast-ultrasound corpus (133 normal, 437 benign, 210 malignant)
_CLASS_WEIGHTS = np.array([133, 437, 210]) / 780.0

# phantom echotexture: amplitude range and correlation length (pixels at 500x500);
# 4-8 px at 500 becomes 1-2 px after resizing to 128, i.e. fine granular tissue detail
TEXTURE_AMPLITUDE = (0.1, 0.15)
TEXTURE_CORR_PX = (4.0, 8.0)
ECHO_LINES = (2, 6)
ECHO_WIDTH_PX = (3.0, 6.0)


class ImageIOError(OSError):
    """An image file could not be read or written."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class DataError(ValueError):
    """The corpus or manifest is unusable (empty, malformed, missing entries)."""


def load_png(path) -> GrayImage:
    """Read a PNG as a float64 grayscale image in [0, 1].

    RGB(A) inputs are collapsed with Rec.601 luma weights; alpha is ignored.
    8- and 16-bit files are both supported.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            elif mode in ("I;16", "I;16B", "I;16L", "I"):
                raw = np.asarray(im, dtype=np.float64)
                arr = raw / 65535.0
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                arr = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
            else:
                raise ImageIOError(path, f"unsupported PNG color mode {mode!r}")
    except ImageIOError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageIOError(path, f"cannot decode PNG ({exc})") from exc
    return np.clip(arr, 0.0, 1.0)


def to_bytes(img: GrayImage) -> np.ndarray:
    """Quantize a unit-range image to uint8 with round-half-up."""
    img = np.asarray(img, dtype=np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError("pixels must lie in [0, 1] before quantization")
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def save_png(img: GrayImage, path):
    """Write an 8-bit grayscale PNG."""
    path = Path(path)
    data = to_bytes(img)
    try:
        Image.fromarray(data).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(path, f"cannot write PNG ({exc})") from exc


def resize_bilinear(img: GrayImage, out_h: int = 128, out_w: int = 128) -> GrayImage:
    """Bilinear resampling with half-pixel-centre alignment (no antialiasing).

    Source samples outside the image are clamped to the border.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"resize needs a 2-D source of at least 2x2, got {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {out_h}x{out_w}")
    h, w = img.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    entries: list
    seed: int

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        return {s: len(self.split(s)) for s in SPLITS}

    def find(self, image_id: str) -> ManifestEntry:
        """Look up an entry by full path, or by file stem."""
        for e in self.entries:
            if e.path == image_id or Path(e.path).stem == image_id:
                return e
        raise DataError(f"image {image_id!r} not in manifest")

    def to_text(self) -> str:
        lines = [f"# seed={self.seed}"]
        lines += [f"{e.path}\t{e.label}\t{e.split}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# seed="):
            raise DataError(f"{path}: missing '# seed=' header")
        seed = int(lines[0][len("# seed="):])
        entries = []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in SPLITS:
                raise DataError(f"{path}:{n}: malformed manifest line {line!r}")
            entries.append(ManifestEntry(*parts))
        return cls(entries, seed)


def split_counts(n: int) -> tuple:
    """Floor-based 70/15/15 allocation; the remainder goes to train."""
    n_val = math.floor(0.15 * n)
    n_test = math.floor(0.15 * n)
    return n - n_val - n_test, n_val, n_test


def assign_splits(paths_labels, seed: int) -> DatasetManifest:
    """Deterministically partition ``(path, label)`` pairs into train/val/test."""
    items = sorted(paths_labels)
    if not items:
        raise DataError("empty corpus")
    n_train, n_val, _ = split_counts(len(items))
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(len(items))
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    entries = [ManifestEntry(p, lab, split_of[i]) for i, (p, lab) in enumerate(items)]
    return DatasetManifest(entries, seed)


def build_manifest(root_dir, seed: int) -> DatasetManifest:
    """Scan ``root_dir/<class>/*.png`` (skipping ``*_mask*`` files) and split it."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    found = []
    for label in CLASSES:
        cls_dir = root / label
        if not cls_dir.is_dir():
            continue
        for p in cls_dir.glob("*.png"):
            if MASK_SUFFIX in p.stem:
                continue
            found.append((p.as_posix(), label))
    if not found:
        raise DataError(f"no PNG images under {root}/{{{','.join(CLASSES)}}}")
    return assign_splits(found, seed)


def _tissue_texture(rng: np.random.Generator, size: int, corr_px: float) -> np.ndarray:
    """Zero-mean, unit-std random field with Gaussian correlation length ``corr_px``."""
    white = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    transfer = np.exp(-2 * (np.pi * corr_px) ** 2 * (fx * fx + fy * fy))
    field = np.fft.irfft2(np.fft.rfft2(white) * transfer, s=(size, size))
    return field / field.std()


def phantom_image(rng: np.random.Generator, label: str, size: int = 500) -> GrayImage:
    """One synthetic ultrasound-like frame.

    Smooth depth-dependent background, fine granular echotexture, a few thin
    bright echo lines and soft elliptical lesions (spiculated for the first
    malignant one).
    """
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    # depth attenuation plus a gentle lateral ripple
    base = rng.uniform(0.45, 0.65)
    slope = rng.uniform(-0.25, -0.05)
    img = base + slope * (yy - 0.5)
    freq = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    img += rng.uniform(0.03, 0.08) * np.sin(2 * np.pi * freq * xx + phase) * np.cos(np.pi * yy)
    # a brighter tissue band
    band_y = rng.uniform(0.15, 0.35)
    img += rng.uniform(0.05, 0.15) * np.exp(-((yy - band_y) / 0.06) ** 2)

    img += rng.uniform(*TEXTURE_AMPLITUDE) * _tissue_texture(rng, size, rng.uniform(*TEXTURE_CORR_PX) * size / 500)
    # thin bright curvilinear echoes (ligaments, fascia)
    for _ in range(int(rng.integers(*ECHO_LINES))):
        y0 = rng.uniform(0.05, 0.95)
        curve = y0 + rng.uniform(0.02, 0.08) * np.sin(2 * np.pi * rng.uniform(0.3, 1.5) * xx + rng.uniform(0, 2 * np.pi))
        width = rng.uniform(*ECHO_WIDTH_PX) / size
        img += rng.uniform(0.2, 0.35) * np.exp(-(((yy - curve) / width) ** 2))

    n_lesions = {"normal": 0, "benign": 1, "malignant": 1}[label] + int(rng.integers(0, 2))
    for k in range(n_lesions):
        cy, cx = rng.uniform(0.3, 0.75), rng.uniform(0.25, 0.75)
        ry, rx = rng.uniform(0.06, 0.16), rng.uniform(0.08, 0.2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
        r = np.sqrt(u * u + v * v)
        if label == "malignant" and k == 0:
            # spiculated boundary
            ang = np.arctan2(v, u)
            r = r * (1 + 0.18 * np.sin(int(rng.integers(5, 9)) * ang + rng.uniform(0, 2 * np.pi)))
        softness = rng.uniform(0.02, 0.06)
        mask = 1.0 / (1.0 + np.exp((r - 1.0) / softness))
        # hypoechoic lesions are the common case
        level = rng.uniform(0.08, 0.2) if rng.random() < 0.75 else rng.uniform(0.8, 0.95)
        img = img * (1 - mask) + level * mask
    return np.clip(img, 0.0, 1.0)


def generate_phantom_corpus(n: int, seed: int, out_dir, size: int = 500) -> list:
    """Write ``n`` phantom PNGs as ``out_dir/<class>/phantom_XXXX.png``; returns their paths."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    paths = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        label = CLASSES[int(rng.choice(3, p=_CLASS_WEIGHTS))]
        img = phantom_image(rng, label, size)
        d = out / label
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ImageIOError(d, f"cannot create directory ({exc})") from exc
        p = d / f"phantom_{i:04d}.png"
        save_png(img, p)
        paths.append(p)
    return paths


def load_resized(path, size: int = 128) -> GrayImage:
    return resize_bilinear(load_png(path), size, size)
