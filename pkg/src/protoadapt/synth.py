"""Deterministic synthetic multi-domain depth-completion data.

Scenes are a floor, a back wall and a few fronto-parallel boxes, textured in
world coordinates and ray cast from three camera positions (t-1, t, t+1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pdt
from .geometry import Intrinsics, Pose, rotation_from_euler

FORMAT_VERSION = 1
FRAMES = ("image_tm1", "image_t", "image_tp1")


@dataclass(frozen=True)
class DomainSpec:
    name: str = "domain"
    seed: int = 0
    height: int = 64
    width: int = 96
    depth_range: tuple[float, float] = (0.8, 3.5)
    n_boxes: tuple[int, int] = (2, 4)
    texture_freq: float = 1.0
    brightness: float = 1.0
    hue_shift: float = 0.0
    contrast: float = 1.0
    haze_density: float = 0.35
    haze_color: tuple[float, float, float] = (0.75, 0.75, 0.75)
    noise_sigma: float = 0.005
    density: float = 0.0049
    depth_noise_sigma: float = 0.0
    intrinsics: tuple[float, float, float, float] = (60.0, 60.0, 47.5, 31.5)
    baseline: float = 0.08
    rotation_deg: float = 1.0
    eval_range: tuple[float, float] = (0.2, 5.0)

    def __post_init__(self):
        if not 0 < self.density <= 0.1:
            raise ValueError(f"density must be in (0, 0.1], got {self.density}")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError(f"invalid depth range {self.depth_range}")
        if self.height % 8 or self.width % 8:
            raise ValueError("image extents must be divisible by 8")
        Intrinsics(*self.intrinsics)

    @property
    def K(self) -> Intrinsics:
        return Intrinsics(*self.intrinsics)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        d = dict(d)
        for key in ("depth_range", "n_boxes", "intrinsics", "eval_range", "haze_color"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# Density giving ~1500 points on a 640x480 frame, applied at any resolution.
INDOOR = DomainSpec(name="indoor-like", density=1500 / (640 * 480), depth_range=(0.8, 3.5), eval_range=(0.2, 5.0))
OUTDOOR = DomainSpec(
    name="outdoor-like", density=0.05, depth_range=(2.0, 40.0), eval_range=(1.0, 80.0), baseline=0.5
)
PROFILES = {"indoor-like": INDOOR, "outdoor-like": OUTDOOR}


@dataclass
class Sample:
    image: np.ndarray
    adjacent: list[tuple[np.ndarray, Pose]]
    sparse_z: np.ndarray
    mask: np.ndarray
    K: Intrinsics
    gt: np.ndarray | None = None
    domain: int | None = None
    ident: str = ""


@dataclass
class Dataset:
    root: Path
    manifest: dict
    spec: DomainSpec
    samples: dict = field(default_factory=dict)

    def ids(self, split: str) -> list[str]:
        return [e["id"] for e in self.manifest["files"] if e["split"] == split]

    def load(self, ident: str) -> Sample:
        if ident not in self.samples:
            entry = next(e for e in self.manifest["files"] if e["id"] == ident)
            self.samples[ident] = _read_sample(self.root, entry)
        return self.samples[ident]

    def split(self, split: str) -> list[Sample]:
        return [self.load(i) for i in self.ids(split)]


# --------------------------------------------------------------- rendering

def _hue_matrix(degrees: float) -> np.ndarray:
    """Rotation of RGB about the grey axis."""
    th = np.deg2rad(degrees)
    c, s = np.cos(th), np.sin(th)
    k = 1.0 / 3.0
    sq = np.sqrt(k)
    return np.array(
        [
            [c + (1 - c) * k, k * (1 - c) - sq * s, k * (1 - c) + sq * s],
            [k * (1 - c) + sq * s, c + k * (1 - c), k * (1 - c) - sq * s],
            [k * (1 - c) - sq * s, k * (1 - c) + sq * s, c + k * (1 - c)],
        ]
    )


def _make_scene(spec: DomainSpec, rng: np.random.Generator) -> dict:
    lo, hi = spec.depth_range
    nb = int(rng.integers(spec.n_boxes[0], spec.n_boxes[1] + 1))
    boxes = []
    for _ in range(nb):
        z = rng.uniform(lo, lo + 0.75 * (hi - lo))
        half_w = rng.uniform(0.15, 0.4) * z
        half_h = rng.uniform(0.15, 0.4) * z
        cx = rng.uniform(-0.6, 0.6) * z
        cy = rng.uniform(-0.4, 0.4) * z
        boxes.append((z, cx - half_w, cx + half_w, cy - half_h, cy + half_h))
    n_surf = nb + 2
    return {
        "wall": rng.uniform(lo + 0.8 * (hi - lo), hi),
        "floor": rng.uniform(0.35, 0.6) * lo + 0.2,
        "boxes": boxes,
        "colors": rng.uniform(0.25, 0.75, size=(n_surf, 3)),
        "freqs": rng.uniform(1.0, 3.0, size=(n_surf, 2, 2)) * spec.texture_freq,
        "phases": rng.uniform(0, 2 * np.pi, size=(n_surf, 2, 2)),
        "amps": rng.uniform(0.12, 0.25, size=(n_surf, 2)),
    }


def _texture(scene: dict, sid: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    f, ph, amp = scene["freqs"][sid], scene["phases"][sid], scene["amps"][sid]
    pattern = amp[..., 0] * np.sin(2 * np.pi * (f[..., 0, 0] * a + f[..., 0, 1] * b) + ph[..., 0, 0])
    pattern = pattern + amp[..., 1] * np.sin(2 * np.pi * (f[..., 1, 0] * a - f[..., 1, 1] * b) + ph[..., 1, 1])
    return scene["colors"][sid] * (1.0 + pattern[..., None])


def _render(spec: DomainSpec, scene: dict, cam_rot: np.ndarray, cam_pos: np.ndarray):
    """Ray cast one view; returns linear RGB (before appearance) and z-depth."""
    K = spec.K
    v, u = np.meshgrid(np.arange(spec.height, dtype=np.float64), np.arange(spec.width, dtype=np.float64), indexing="ij")
    d_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], -1)
    d = d_cam @ cam_rot.T
    o = cam_pos
    best = np.full(u.shape, np.inf)
    sid = np.zeros(u.shape, dtype=np.int64)
    hit = np.zeros(u.shape + (3,))

    def consider(t, surface):
        nonlocal best
        better = (t > 1e-3) & (t < best)
        best = np.where(better, t, best)
        sid[better] = surface
        hit[better] = (o + t[..., None] * d)[better]

    with np.errstate(divide="ignore", invalid="ignore"):
        consider((scene["wall"] - o[2]) / d[..., 2], 0)
        consider(np.where(d[..., 1] > 0, (scene["floor"] - o[1]) / d[..., 1], np.inf), 1)
        for i, (z, x0, x1, y0, y1) in enumerate(scene["boxes"]):
            t = (z - o[2]) / d[..., 2]
            p = o + t[..., None] * d
            inside = (p[..., 0] >= x0) & (p[..., 0] <= x1) & (p[..., 1] >= y0) & (p[..., 1] <= y1)
            consider(np.where(inside, t, np.inf), i + 2)
    # texture coordinates in the surface plane
    a = hit[..., 0]
    b = np.where(sid == 1, hit[..., 2], hit[..., 1])
    rgb = _texture(scene, sid, a, b)
    return rgb, best  # ray parameter equals camera z-depth since d_cam has unit z


def _appearance(spec: DomainSpec, rgb: np.ndarray, depth: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    trans = np.exp(-spec.haze_density * depth)[..., None]
    out = rgb * trans + np.asarray(spec.haze_color) * (1.0 - trans)
    out = out @ _hue_matrix(spec.hue_shift).T
    out = (out - 0.5) * spec.contrast + 0.5
    out = out * spec.brightness
    if spec.noise_sigma > 0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _camera_motion(spec: DomainSpec, rng: np.random.Generator):
    direction = rng.normal(size=3) * np.array([1.0, 0.3, 0.6])
    direction /= np.linalg.norm(direction)
    step = direction * spec.baseline * rng.uniform(0.6, 1.0)
    ang = np.deg2rad(spec.rotation_deg) * rng.uniform(-1, 1, size=3)
    return step, ang


def render_sample(spec: DomainSpec, rng: np.random.Generator, ident: str = "") -> Sample:
    scene = _make_scene(spec, rng)
    step, ang = _camera_motion(spec, rng)
    frames = {}
    cams = {}
    for name, sign in (("image_tm1", -1), ("image_t", 0), ("image_tp1", 1)):
        rot = rotation_from_euler(*(sign * ang))
        pos = sign * step
        rgb, depth = _render(spec, scene, rot, pos)
        frames[name] = (rgb, depth)
        cams[name] = (rot, pos)
    gt = frames["image_t"][1].astype(np.float32)
    r_t, c_t = cams["image_t"]
    adjacent = []
    images = {k: _appearance(spec, v[0], v[1], rng) for k, v in frames.items()}
    for name in ("image_tm1", "image_tp1"):
        r_s, c_s = cams[name]
        pose = Pose(r_s.T @ r_t, r_s.T @ (c_t - c_s))
        adjacent.append((images[name], pose))
    mask = (rng.random(gt.shape) < spec.density).astype(np.float32)
    sparse = gt * mask
    if spec.depth_noise_sigma > 0:
        sparse = sparse + mask * rng.normal(0, spec.depth_noise_sigma, gt.shape).astype(np.float32)
    return Sample(images["image_t"], adjacent, sparse.astype(np.float32), mask, spec.K, gt, ident=ident)


def _sample_rng(spec: DomainSpec, split: str, index: int) -> np.random.Generator:
    split_code = {"train": 0, "eval": 1}[split]
    return np.random.default_rng(np.random.SeedSequence([spec.seed, split_code, index]))


# ------------------------------------------------------------ serialization

def _write_sample(root: Path, ident: str, sample: Sample, split: str) -> dict:
    d = root / ident
    d.mkdir(parents=True, exist_ok=True)
    blobs = {
        "image_tm1": sample.adjacent[0][0],
        "image_t": sample.image,
        "image_tp1": sample.adjacent[1][0],
        "sparse_z": sample.sparse_z,
        "mask": sample.mask,
        "gt": sample.gt,
    }
    files = {}
    for key, arr in blobs.items():
        rel = f"{ident}/{key}.pdt"
        pdt.save(root / rel, arr)
        files[key] = rel
    return {
        "id": ident,
        "split": split,
        "files": files,
        "intrinsics": sample.K.to_list(),
        "poses": {"tm1": sample.adjacent[0][1].to_list(), "tp1": sample.adjacent[1][1].to_list()},
    }


def _read_sample(root: Path, entry: dict) -> Sample:
    f = {k: pdt.load(root / v) for k, v in entry["files"].items()}
    adjacent = [
        (f["image_tm1"], Pose.from_list(entry["poses"]["tm1"])),
        (f["image_tp1"], Pose.from_list(entry["poses"]["tp1"])),
    ]
    return Sample(
        f["image_t"], adjacent, f["sparse_z"], f["mask"], Intrinsics.from_list(entry["intrinsics"]), f["gt"], ident=entry["id"]
    )


def generate_domain(spec: DomainSpec, n_samples: int, out_dir, n_eval: int | None = None) -> Path:
    """Render ``n_samples`` training samples plus a held-out eval split to ``out_dir``.

    The eval split (default 20% of ``n_samples``, at least 1) is drawn from a
    disjoint seed stream. Returns the manifest path.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n_eval = max(1, n_samples // 5) if n_eval is None else n_eval
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, count in (("train", n_samples), ("eval", n_eval)):
        for i in range(count):
            ident = f"{split}_{i:05d}"
            sample = render_sample(spec, _sample_rng(spec, split, i), ident)
            entries.append(_write_sample(root, ident, sample, split))
    manifest = {
        "format_version": FORMAT_VERSION,
        "domain": spec.name,
        "spec": spec.to_dict(),
        "sample_count": len(entries),
        "splits": {"train": n_samples, "eval": n_eval},
        "files": entries,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {manifest.get('format_version')!r}")
    if manifest["sample_count"] != len(manifest["files"]):
        raise ValueError("manifest sample_count does not match its file list")
    root = path.parent
    for e in manifest["files"]:
        for rel in e["files"].values():
            if not (root / rel).exists():
                raise FileNotFoundError(f"dataset file missing: {root / rel}")
    return Dataset(root, manifest, DomainSpec.from_dict(manifest["spec"]))


def in_memory(spec: DomainSpec, n_samples: int, split: str = "train") -> list[Sample]:
    return [render_sample(spec, _sample_rng(spec, split, i), f"{split}_{i:05d}") for i in range(n_samples)]


# ------------------------------------------------------------ domain family

def make_shifted_family(base: DomainSpec, n_domains: int, gap: float = 1.0) -> list[DomainSpec]:
    """Specs sharing ``base``'s scene family with appearance, camera and depth shifts.

    Domain ``i`` is shifted by ``i * gap`` units along every axis; ``gap == 0``
    reproduces ``base`` with only the seed changed.
    """
    if n_domains < 2:
        raise ValueError("a family needs at least two domains")
    specs = []
    lo, hi = base.depth_range
    for i in range(n_domains):
        s = i * gap
        fx, fy, cx, cy = base.intrinsics
        specs.append(
            replace(
                base,
                name=f"{base.name}-{i + 1}",
                seed=base.seed + 1000 * (i + 1),
                hue_shift=base.hue_shift + 50.0 * s,
                brightness=base.brightness * (1.0 - 0.2 * s) if s <= 2 else base.brightness * 0.6,
                contrast=base.contrast * (1.0 + 0.25 * s),
                texture_freq=base.texture_freq * (1.0 + 0.2 * s),
                intrinsics=(fx * (1.0 + 0.1 * s), fy * (1.0 + 0.1 * s), cx, cy),
                haze_density=base.haze_density * (1.0 + 0.7 * s),
                haze_color=tuple(float(np.clip(c + d * s, 0.05, 0.95)) for c, d in zip(base.haze_color, (-0.15, 0.0, 0.15))),
                depth_range=(lo * (1.0 + 0.2 * s), min(hi * (1.0 + 0.2 * s), base.eval_range[1] * 0.98)),
            )
        )
    return specs


def spec_hash(spec: DomainSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:12]
