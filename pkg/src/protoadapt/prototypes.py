"""Per-domain prototype sets that bias frozen latent features.

Each set holds a per-channel multiplicative prototype ``A``, ``N`` additive
local prototypes ``P`` and a key projection ``W``. Features ``X`` are adapted as
``A * X + B`` where each spatial row of ``B`` is an attention-weighted convex
combination of the rows of ``P``, keyed by ``stopgrad(P) @ W``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import pdt
from . import tensor as T
from .backbone import LatentTap, Modality
from .tensor import Tensor

INDOOR_SIZES = (10, 5)
OUTDOOR_SIZES = (25, 10)
SIZE_PROFILES = {"indoor": INDOOR_SIZES, "outdoor": OUTDOOR_SIZES}


@dataclass(frozen=True)
class Ablation:
    """Switches for the component ablations; all off is the full method."""

    disable_global_A: bool = False
    free_keys_no_W: bool = False
    no_stop_grad: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def project_keys(P: Tensor, W: Tensor, stop_grad: bool = True) -> Tensor:
    """Keys ``stopgrad(P) @ W``; with ``stop_grad=False`` gradients also reach ``P``."""
    if P.shape[1] != W.shape[0]:
        raise T.DimensionError(f"key projection mismatch: P {P.shape}, W {W.shape}")
    return T.matmul(T.detach(P) if stop_grad else P, W)


def local_bias(X: Tensor, P: Tensor, K: Tensor) -> Tensor:
    """Additive bias: softmax(Q K^T / sqrt(c)) P, reshaped back to ``X``'s extents."""
    c = X.shape[-1]
    if P.shape[1] != c or K.shape != P.shape:
        raise T.DimensionError(f"channel mismatch: X {X.shape}, P {P.shape}, K {K.shape}")
    Q = T.flatten_spatial(X)
    scores = T.matmul(Q, T.transpose(K)) * np.float32(1.0 / np.sqrt(c))
    alpha = T.softmax_rows(scores)
    return T.reshape(T.matmul(alpha, P), X.shape)


class PrototypeSet:
    def __init__(self, tap: LatentTap, domain_id: int, n: int, rng: np.random.Generator, ablation: Ablation = Ablation()):
        c = tap.channels
        self.tap_id = tap.tap_id
        self.domain_id = domain_id
        self.n = n
        self.ablation = ablation
        self.A = Tensor(np.ones(c, dtype=np.float32), requires_grad=not ablation.disable_global_A)
        self.P = Tensor(np.zeros((n, c), dtype=np.float32), requires_grad=True)
        noise = rng.normal(0.0, 1e-3, size=(c, c))
        if ablation.free_keys_no_W:
            self.W = None
            self.K = Tensor(rng.normal(0.0, 1e-3, size=(n, c)).astype(np.float32), requires_grad=True)
        else:
            self.W = Tensor((np.eye(c) + noise).astype(np.float32), requires_grad=True)
            self.K = None
        self.frozen = False

    @property
    def channels(self) -> int:
        return self.P.shape[1]

    def keys(self) -> Tensor:
        if self.K is not None:
            return self.K
        return project_keys(self.P, self.W, stop_grad=not self.ablation.no_stop_grad)

    def bias(self, X: Tensor) -> Tensor:
        return local_bias(X, self.P, self.keys())

    def adapt(self, X: Tensor) -> Tensor:
        if X.shape[-1] != self.channels:
            raise T.DimensionError(f"tap {self.tap_id} expects {self.channels} channels, got {X.shape}")
        return self.A * X + self.bias(X)

    __call__ = adapt

    def jitter(self, rng: np.random.Generator, sigma: float):
        """Add row-centred noise to ``P`` so identical prototypes can specialise.

        Zero-initialised rows receive identical gradients forever; centring keeps
        the uniform-attention mean of the rows unchanged (a no-op when N == 1).
        """
        if self.frozen or sigma <= 0:
            return
        noise = rng.normal(0.0, sigma, size=self.P.shape)
        noise -= noise.mean(axis=0, keepdims=True)
        self.P.data = (self.P.data + noise).astype(np.float32)

    def parameters(self) -> dict[str, Tensor]:
        out = {"A": self.A, "P": self.P}
        if self.W is not None:
            out["W"] = self.W
        if self.K is not None:
            out["K"] = self.K
        return out

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters().values() if p.requires_grad]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def freeze(self):
        self.frozen = True
        for p in self.parameters().values():
            p.requires_grad = False
            p.grad = None


def set_size(tap: LatentTap, n_image: int, n_depth: int) -> int:
    return n_depth if tap.modality == Modality.DEPTH else n_image


class AdapterBank:
    """Prototype sets keyed by domain then tap; older domains are frozen."""

    def __init__(self, ablation: Ablation = Ablation()):
        self.ablation = ablation
        self.domains: dict[int, dict[str, PrototypeSet]] = {}
        self.frozen_domains: set[int] = set()

    def new_domain(
        self,
        domain_id: int,
        taps: Iterable[LatentTap],
        n_image: int,
        n_depth: int,
        rng: np.random.Generator,
    ) -> dict[str, PrototypeSet]:
        if domain_id in self.domains:
            raise ValueError(f"domain {domain_id} already has prototype sets")
        for d in self.domains:
            self.freeze_domain(d)
        sets = {
            tap.tap_id: PrototypeSet(tap, domain_id, set_size(tap, n_image, n_depth), rng, self.ablation)
            for tap in taps
        }
        self.domains[domain_id] = sets
        return sets

    def freeze_domain(self, domain_id: int):
        for s in self.domains[domain_id].values():
            s.freeze()
        self.frozen_domains.add(domain_id)

    def adapters(self, domain_id: int | None) -> dict[str, PrototypeSet] | None:
        """Tap-to-set mapping for a domain; ``None`` for domains without sets (the base)."""
        if domain_id is None:
            return None
        return self.domains.get(domain_id)

    def trainable(self, domain_id: int) -> list[Tensor]:
        return [p for s in self.domains[domain_id].values() for p in s.trainable()]

    def parameter_count(self, domain_id: int) -> int:
        return sum(s.parameter_count() for s in self.domains[domain_id].values())

    # ------------------------------------------------------- persistence
    def save(self, out_dir, extra: dict | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for dom in sorted(self.domains):
            for tap_id, s in self.domains[dom].items():
                blobs = {}
                for key, p in s.parameters().items():
                    rel = f"d{dom}_{tap_id}_{key}.pdt"
                    pdt.save(out / rel, p.data)
                    blobs[key] = rel
                entries.append({"domain_id": dom, "tap_id": tap_id, "n": s.n, "channels": s.channels, "blobs": blobs})
        manifest = {
            "ablation": self.ablation.to_dict(),
            "frozen_domains": sorted(self.frozen_domains),
            "sets": entries,
        }
        if extra:
            manifest.update(extra)
        path = out / "bank.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, out_dir) -> tuple["AdapterBank", dict]:
        out = Path(out_dir)
        manifest = json.loads((out / "bank.json").read_text())
        bank = cls(Ablation(**manifest["ablation"]))
        rng = np.random.default_rng(0)
        for e in manifest["sets"]:
            tap = LatentTap(e["tap_id"], e["channels"], Modality.FUSED)
            s = PrototypeSet(tap, e["domain_id"], e["n"], rng, bank.ablation)
            for key, rel in e["blobs"].items():
                getattr(s, key).data = pdt.load(out / rel)
            bank.domains.setdefault(e["domain_id"], {})[e["tap_id"]] = s
        for d in manifest["frozen_domains"]:
            bank.freeze_domain(d)
        return bank, manifest
