"""Dual-encoder depth-completion network with named latent taps."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import pdt
from . import tensor as T
from .tensor import Tensor


class Modality(str, Enum):
    IMAGE = "image"
    DEPTH = "depth"
    FUSED = "fused"


@dataclass(frozen=True)
class LatentTap:
    tap_id: str
    channels: int
    modality: Modality


@dataclass(frozen=True)
class BackboneConfig:
    enc_channels: tuple[int, int, int] = (16, 32, 64)
    bottleneck: int = 64
    dec_hidden: int = 96
    d_min: float = 0.2
    d_max: float = 5.0
    slope: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


AdapterMap = Mapping[str, Callable[[Tensor], Tensor]]


def _kaiming(rng: np.random.Generator, k: int, cin: int, cout: int, slope: float) -> np.ndarray:
    fan_in = k * k * cin
    bound = np.sqrt(2.0 / (1 + slope**2)) * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(k, k, cin, cout)).astype(np.float32)


class Backbone:
    """Image and sparse-depth encoders (3 stride-2 stages each), fused bottleneck, skip decoder.

    Inputs are batched channels-last: image ``(n, h, w, 3)``, sparse depth and
    mask ``(n, h, w)``. Adapters act on skip features before the decoder
    concatenates them, and on the bottleneck before decoding, so the encoders
    (and hence the bottleneck descriptor source) never see adapted features.
    """

    def __init__(self, config: BackboneConfig = BackboneConfig()):
        self.config = config
        self.frozen = False
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xBB]))
        c1, c2, c3 = config.enc_channels
        for pre, cin in (("img", 3), ("dep", 2)):
            prev = cin
            for i, c in enumerate((c1, c2, c3), start=1):
                self._conv(rng, f"{pre}{i}a", prev, c)
                self._conv(rng, f"{pre}{i}b", c, c)
                prev = c
        self._conv(rng, "fuse", 2 * c3, config.bottleneck)
        self._conv(rng, "dec3a", config.bottleneck + 2 * c3, config.dec_hidden)
        self._conv(rng, "dec3b", config.dec_hidden, c3)
        self._conv(rng, "dec2a", c3 + 2 * c2, c2)
        self._conv(rng, "dec2b", c2, c2)
        self._conv(rng, "dec1a", c2 + 2 * c1, c1)
        self._conv(rng, "dec1b", c1, c1)
        self._conv(rng, "head", c1, 1)

    def _conv(self, rng, name, cin, cout, k=3):
        self.params[f"{name}.w"] = Tensor(_kaiming(rng, k, cin, cout, self.config.slope), requires_grad=True, name=name)
        self.params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True, name=name)

    # ------------------------------------------------------------- taps
    @property
    def taps(self) -> list[LatentTap]:
        c1, c2, c3 = self.config.enc_channels
        out = []
        for pre, mod in (("img", Modality.IMAGE), ("dep", Modality.DEPTH)):
            for i, c in enumerate((c1, c2, c3), start=1):
                out.append(LatentTap(f"{pre}_s{i}", c, mod))
        out.append(LatentTap("bottleneck", self.config.bottleneck, Modality.FUSED))
        return out

    # ---------------------------------------------------------- forward
    def _layer(self, x, name, stride=1, act=True):
        y = T.conv2d(x, self.params[f"{name}.w"], stride=stride, pad=1) + self.params[f"{name}.b"]
        return T.leaky_relu(y, self.config.slope) if act else y

    def encode(self, image, sparse_z, mask):
        """Run both encoders; returns skip features per tap and the fused bottleneck."""
        img = T._wrap(np.asarray(image, dtype=np.float32) - 0.5)
        dep_in = np.stack([np.asarray(sparse_z) / self.config.d_max, np.asarray(mask)], axis=-1).astype(np.float32)
        dep = T._wrap(dep_in)
        feats = {}
        for pre, x in (("img", img), ("dep", dep)):
            for i in (1, 2, 3):
                x = self._layer(x, f"{pre}{i}a", stride=2)
                x = self._layer(x, f"{pre}{i}b")
                feats[f"{pre}_s{i}"] = x
        bottleneck = self._layer(T.concat([feats["img_s3"], feats["dep_s3"]]), "fuse")
        return feats, bottleneck

    def forward(self, image, sparse_z, mask, adapters: AdapterMap | None = None):
        """Predict dense depth; returns ``(depth (n, h, w), pre-adaptation bottleneck)``."""
        image = np.asarray(image)
        squeeze = image.ndim == 3
        if squeeze:
            image, sparse_z, mask = image[None], np.asarray(sparse_z)[None], np.asarray(mask)[None]
        n, h, w, _ = image.shape
        if h % 8 or w % 8:
            raise T.DimensionError(f"image extents must be divisible by 8, got {h}x{w}")
        if np.shape(sparse_z) != (n, h, w) or np.shape(mask) != (n, h, w):
            raise T.DimensionError("sparse depth and mask must match the image extents")
        feats, bottleneck = self.encode(image, sparse_z, mask)
        adapters = adapters or {}

        def tap(name, x):
            fn = adapters.get(name)
            return fn(x) if fn is not None else x

        x = tap("bottleneck", bottleneck)
        x = self._layer(T.concat([x, tap("img_s3", feats["img_s3"]), tap("dep_s3", feats["dep_s3"])]), "dec3a")
        x = T.upsample2x(self._layer(x, "dec3b"))
        x = self._layer(T.concat([x, tap("img_s2", feats["img_s2"]), tap("dep_s2", feats["dep_s2"])]), "dec2a")
        x = T.upsample2x(self._layer(x, "dec2b"))
        x = self._layer(T.concat([x, tap("img_s1", feats["img_s1"]), tap("dep_s1", feats["dep_s1"])]), "dec1a")
        x = T.upsample2x(self._layer(x, "dec1b"))
        logits = self._layer(x, "head", act=False)
        lo, hi = self.config.d_min, self.config.d_max
        depth = lo + (hi - lo) * T.sigmoid(T.reshape(logits, (n, h, w)))
        if squeeze:
            return depth[0], bottleneck[0]
        return depth, bottleneck

    __call__ = forward

    # ---------------------------------------------------------- freezing
    def freeze(self):
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None

    def trainable(self) -> list[Tensor]:
        return [] if self.frozen else list(self.params.values())

    def parameter_count(self) -> dict[str, int]:
        total = sum(p.data.size for p in self.params.values())
        trainable = 0 if self.frozen else total
        return {"trainable": trainable, "frozen": total - trainable, "total": total}

    # ------------------------------------------------------- checkpoints
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode()).hexdigest()[:12]

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        layers = {}
        for name, p in self.params.items():
            rel = f"{name}.pdt"
            pdt.save(out / rel, p.data)
            layers[name] = {"shape": list(p.shape), "file": rel}
        manifest = {
            "layers": layers,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash(),
            "frozen": self.frozen,
        }
        path = out / "backbone.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, out_dir) -> "Backbone":
        out = Path(out_dir)
        manifest = json.loads((out / "backbone.json").read_text())
        cfg = manifest["config"]
        cfg["enc_channels"] = tuple(cfg["enc_channels"])
        net = cls(BackboneConfig(**cfg))
        for name, meta in manifest["layers"].items():
            arr = pdt.load(out / meta["file"])
            if list(arr.shape) != meta["shape"] or arr.shape != net.params[name].shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            net.params[name].data = arr
        if manifest["frozen"]:
            net.freeze()
        return net
