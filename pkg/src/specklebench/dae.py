"""Convolutional denoising autoencoders with and without a skip connection.

Layer table (``c`` = base channel width, 32 by default)::

    conv3x3      1  -> c    + ReLU
    conv3x3      c  -> c    + ReLU      (tagged "enc1")
    maxpool2x2                          (the only pooling stage)
    conv3x3      c  -> 2c   + ReLU
    conv3x3      2c -> 2c   + ReLU
    tconv2x2/2   2c -> c                (upsample back to full size)
    concat enc1  c  -> 2c               (skip variant only)
    conv3x3      2c|c -> c  + ReLU
    conv3x3      c  -> 1    + sigmoid

The network computes in float32. Training pairs each clean image with a
speckled copy whose variance is drawn, per sample and per epoch, from the
configured grid.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .noise import CANONICAL_VARIANCES, NoiseSpec, add_speckle, derive_seed

log = logging.getLogger(__name__)

DTYPE = np.float32
LAYER_KINDS = ("conv3x3", "maxpool2x2", "transposed_conv2x2", "concat_skip", "conv3x3_sigmoid")
CHECKPOINT_MAGIC = b"SPKDAE\n"
CHECKPOINT_VERSION = 1

# learning rate listed for the original experiment; kept selectable but it does not move float32 weights
PAPER_LEARNING_RATE = 1e-10


class NetworkError(ValueError):
    """Inconsistent layer table or wrong input shape."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, last_finite_epoch):
        super().__init__(f"loss became non-finite in epoch {epoch} (last finite epoch: {last_finite_epoch})")
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int
    out_ch: int
    tag: str = None
    skip_source: str = None


@dataclass
class NetworkConfig:
    use_skip: bool = True
    base_channels: int = 32
    input_size: int = 128

    def layers(self) -> list:
        c = self.base_channels
        table = [
            LayerSpec("conv3x3", 1, c),
            LayerSpec("conv3x3", c, c, tag="enc1"),
            LayerSpec("maxpool2x2", c, c),
            LayerSpec("conv3x3", c, 2 * c),
            LayerSpec("conv3x3", 2 * c, 2 * c),
            LayerSpec("transposed_conv2x2", 2 * c, c),
        ]
        if self.use_skip:
            table.append(LayerSpec("concat_skip", c, 2 * c, skip_source="enc1"))
        table += [
            LayerSpec("conv3x3", 2 * c if self.use_skip else c, c),
            LayerSpec("conv3x3_sigmoid", c, 1),
        ]
        return table


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    noise_variances: tuple = CANONICAL_VARIANCES
    seed: int = 0
    patience: int = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.noise_variances:
            raise ValueError("noise_variances must be non-empty")
        self.noise_variances = tuple(float(v) for v in self.noise_variances)


def validate_layers(layers, in_channels=1):
    """Check channel arithmetic and structural constraints of a layer table."""
    if any(l.kind not in LAYER_KINDS for l in layers):
        raise NetworkError(f"unknown layer kind in {[l.kind for l in layers]}")
    if sum(l.kind == "maxpool2x2" for l in layers) != 1:
        raise NetworkError("the network must contain exactly one maxpool2x2")
    channels = {}
    ch = in_channels
    for i, l in enumerate(layers):
        if l.in_ch != ch:
            raise NetworkError(f"layer {i} ({l.kind}) expects {l.in_ch} input channels, gets {ch}")
        if l.kind == "maxpool2x2" and l.out_ch != l.in_ch:
            raise NetworkError(f"layer {i}: pooling cannot change channels")
        if l.kind == "concat_skip":
            if l.skip_source not in channels:
                raise NetworkError(f"layer {i}: unknown skip source {l.skip_source!r}")
            if l.out_ch != l.in_ch + channels[l.skip_source]:
                raise NetworkError(f"layer {i}: concat gives {l.in_ch + channels[l.skip_source]} channels, "
                                   f"table says {l.out_ch}")
        ch = l.out_ch
        if l.tag:
            channels[l.tag] = ch
    if layers[-1].kind != "conv3x3_sigmoid" or ch != 1:
        raise NetworkError("the network must end in a single-channel conv3x3_sigmoid")


class Network:
    """Parameters plus forward/backward over a validated layer table."""

    def __init__(self, config: NetworkConfig, params: dict, dtype=DTYPE):
        self.config = config
        self.dtype = dtype
        self.layers = config.layers()
        validate_layers(self.layers)
        self.params = params

    def param_names(self):
        return list(self.params)

    def _conv(self, i, layer):
        w, b = self.params[f"{i}.w"].value, self.params[f"{i}.b"].value
        if layer.kind == "transposed_conv2x2":
            return T.ConvParams(w, b, stride=2, padding=0)
        return T.ConvParams(w, b, stride=1, padding=1)

    def _check_input(self, x):
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise NetworkError(f"expected input [N,1,{s},{s}], got {x.shape}")

    def _run(self, x):
        tags, cache = {}, []
        h = x
        for i, layer in enumerate(self.layers):
            inp = h
            if layer.kind in ("conv3x3", "conv3x3_sigmoid"):
                pre = T.conv2d(h, self._conv(i, layer))
                h = T.relu(pre) if layer.kind == "conv3x3" else T.sigmoid(pre)
                cache.append((inp, pre, h))
            elif layer.kind == "transposed_conv2x2":
                h = T.transposed_conv2d(h, self._conv(i, layer))
                cache.append((inp, None, None))
            elif layer.kind == "maxpool2x2":
                h, idx = T.maxpool2x2(h)
                cache.append((inp, idx, None))
            elif layer.kind == "concat_skip":
                h = T.concat_channels(h, tags[layer.skip_source])
                cache.append((inp, None, None))
            if layer.tag:
                tags[layer.tag] = h
        return h, cache

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        self._check_input(x)
        return self._run(x)[0]

    def forward_backward(self, x, target):
        """Forward pass, MSE loss, and parameter gradients (accumulated into ``.grad``)."""
        x = np.asarray(x, dtype=self.dtype)
        self._check_input(x)
        out, cache = self._run(x)
        loss, g = T.mse_loss(out, np.asarray(target, dtype=self.dtype))
        self.backward(cache, g)
        return loss, out

    def backward(self, cache, grad_out):
        tag_grads = {}
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            inp, a, b = cache[i]
            if layer.tag and layer.tag in tag_grads:
                g = g + tag_grads.pop(layer.tag)
            if layer.kind in ("conv3x3", "conv3x3_sigmoid"):
                g = T.relu_backward(a, g) if layer.kind == "conv3x3" else T.sigmoid_backward(b, g)
                g, gw, gb = T.conv2d_backward(inp, self._conv(i, layer), g)
            elif layer.kind == "transposed_conv2x2":
                g, gw, gb = T.transposed_conv2d_backward(inp, self._conv(i, layer), g)
            elif layer.kind == "maxpool2x2":
                g = T.maxpool2x2_backward(g, a)
                continue
            elif layer.kind == "concat_skip":
                g, g_skip = T.concat_channels_backward(g, layer.in_ch)
                tag_grads[layer.skip_source] = g_skip
                continue
            self.params[f"{i}.w"].grad += gw
            self.params[f"{i}.b"].grad += gb
        return g

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict):
        for k, v in arrays.items():
            self.params[k] = T.GradTensor(np.array(v, dtype=self.dtype))

    def astype(self, dtype) -> "Network":
        """Copy of the network computing in ``dtype`` (float64 is handy for gradient checks)."""
        net = Network(self.config, {}, dtype)
        net.load_arrays(self.state_arrays())
        return net


def build_network(config: NetworkConfig, seed: int = 0) -> Network:
    """Create a network with He-uniform weights (fan-in scaling) and zero biases."""
    layers = config.layers()
    validate_layers(layers)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A17]))
    params = {}
    for i, layer in enumerate(layers):
        if layer.kind in ("conv3x3", "conv3x3_sigmoid"):
            shape = (layer.out_ch, layer.in_ch, 3, 3)
            fan_in = layer.in_ch * 9
        elif layer.kind == "transposed_conv2x2":
            shape = (layer.in_ch, layer.out_ch, 2, 2)
            # stride 2 with a 2x2 kernel: each output pixel sees one tap per input channel
            fan_in = layer.in_ch
        else:
            continue
        bound = math.sqrt(6.0 / fan_in)
        params[f"{i}.w"] = T.GradTensor(rng.uniform(-bound, bound, size=shape).astype(DTYPE))
        params[f"{i}.b"] = T.GradTensor(np.zeros(layer.out_ch, dtype=DTYPE))
    return Network(config, params)


def forward(net: Network, batch) -> np.ndarray:
    return net.forward(batch)


@dataclass
class Checkpoint:
    params: dict
    config: NetworkConfig
    epoch: int
    best_val_loss: float
    seed: int

    def network(self) -> Network:
        net = build_network(self.config, self.seed)
        net.load_arrays(self.params)
        return net

    def to_bytes(self) -> bytes:
        names = sorted(self.params)
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "seed": self.seed,
            "tensors": [{"name": n, "shape": list(self.params[n].shape), "dtype": "<f4"} for n in names],
        }
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        body = b"".join(np.ascontiguousarray(self.params[n], dtype="<f4").tobytes() for n in names)
        return CHECKPOINT_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if not data.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a checkpoint file (bad magic)")
        off = len(CHECKPOINT_MAGIC)
        (hlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = {}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"]))
            arr = np.frombuffer(data, dtype=t["dtype"], count=count, offset=off)
            params[t["name"]] = arr.reshape(t["shape"]).astype(DTYPE)
            off += 4 * count
        if off != len(data):
            raise ValueError("checkpoint has trailing bytes")
        return cls(params, NetworkConfig(**header["config"]), header["epoch"],
                   header["best_val_loss"], header["seed"])

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class History:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{t!r},{v!r}" for e, t, v in zip(self.epochs, self.train_loss, self.val_loss)]
        return "\n".join(lines) + "\n"


def _stack(images):
    return np.stack([np.asarray(im, dtype=DTYPE) for im in images])[:, None]


def _mean_loss(net, noisy, clean, batch_size):
    total = 0.0
    for s in range(0, len(noisy), batch_size):
        out = net.forward(noisy[s:s + batch_size])
        total += T.mse_loss(out, clean[s:s + batch_size])[0] * len(out)
    return total / len(noisy)


def validation_pairs(images, variances, seed):
    """Fixed noisy copies for validation: image ``i`` gets ``variances[i % len]``."""
    noisy = [add_speckle(im, NoiseSpec(variances[i % len(variances)], derive_seed(seed, 0xA11D, i)))
             for i, im in enumerate(images)]
    return _stack(noisy), _stack(images)


def train_on_arrays(net: Network, train_images, val_images, cfg: TrainConfig):
    """Train ``net`` in place on clean unit-range images; returns ``(Checkpoint, History)``.

    Each epoch shuffles the training set, gives every sample a freshly seeded
    speckle realisation at a variance drawn from ``cfg.noise_variances``, and
    takes one Adam step per mini-batch. The checkpoint keeps the parameters
    with the lowest validation loss.
    """
    if not train_images or not val_images:
        raise ValueError("training and validation sets must be non-empty")
    clean = _stack(train_images)
    val_noisy, val_clean = validation_pairs(val_images, cfg.noise_variances, cfg.seed)
    states = {k: T.AdamState.like(p.value) for k, p in net.params.items()}
    history = History()
    best = (math.inf, 0, net.state_arrays())
    last_finite = 0
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 0x7EA1]))
        order = rng.permutation(len(clean))
        var_idx = rng.integers(0, len(cfg.noise_variances), size=len(clean))
        noisy = np.empty_like(clean)
        for k, i in enumerate(order):
            spec = NoiseSpec(cfg.noise_variances[var_idx[k]], derive_seed(cfg.seed, epoch, int(i)))
            noisy[k, 0] = add_speckle(clean[i, 0], spec)
        target = clean[order]
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            net.zero_grad()
            loss, _ = net.forward_backward(noisy[s:s + cfg.batch_size], target[s:s + cfg.batch_size])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, last_finite)
            total += loss * len(target[s:s + cfg.batch_size])
            for name, p in net.params.items():
                net.params[name], states[name] = T.adam_step(p, states[name], cfg.learning_rate)
        train_loss = total / len(order)
        val_loss = _mean_loss(net, val_noisy, val_clean, cfg.batch_size)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDiverged(epoch, last_finite)
        last_finite = epoch
        history.epochs.append(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        log.info("epoch %d: train %.6f val %.6f", epoch, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, epoch, net.state_arrays())
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    ckpt = Checkpoint(best[2], net.config, best[1], best[0], cfg.seed)
    return ckpt, history


def train(net: Network, manifest, cfg: TrainConfig, loader=None):
    """Train on the manifest's train split, monitoring the val split."""
    from .imaging import load_resized

    size = net.config.input_size
    load = loader or (lambda p: load_resized(p, size))
    train_imgs = [load(e.path) for e in manifest.split("train")]
    val_imgs = [load(e.path) for e in manifest.split("val")]
    if not train_imgs or not val_imgs:
        raise ValueError("manifest needs non-empty train and val splits")
    return train_on_arrays(net, train_imgs, val_imgs, cfg)


def denoise(checkpoint, img, net: Network = None):
    """Denoise one image with a trained checkpoint; output clamped to [0, 1]."""
    net = net or checkpoint.network()
    img = np.asarray(img)
    s = net.config.input_size
    if img.shape != (s, s):
        raise NetworkError(f"image must be {s}x{s}, got {img.shape}")
    out = net.forward(img[None, None])[0, 0]
    return np.clip(out.astype(np.float64), 0.0, 1.0)
