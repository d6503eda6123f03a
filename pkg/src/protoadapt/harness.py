"""Continual sequence driver: pretrain, freeze, adapt per domain, evaluate, report.

Domain ids are 1-based. Domain 1 is the pretraining domain and is served by the
bare frozen backbone; every later domain gets its own prototype sets and a
trainable descriptor that is frozen once its stage ends.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .backbone import Backbone
from .config import ConfigError, ExperimentConfig
from .geometry import warp_image
from .losses import (
    error_metrics,
    photometric_loss,
    smoothness_loss,
    sparse_consistency_loss,
    total_loss,
)
from .metrics import summarize
from .optim import SGD, Adam
from .prototypes import AdapterBank
from .router import (
    DomainDescriptor,
    batch_descriptor_loss,
    fit_initial_descriptor,
    init_descriptor,
    sample_descriptor,
    select_domain,
)
from .synth import INDOOR, OUTDOOR, Dataset, Sample, generate_domain, load_dataset, make_shifted_family
from .tensor import NumericError

METRICS = ("mae", "rmse", "imae", "irmse")
MODES = ("incremental", "agnostic")
LOG_NAME = "continual_log.json"
REPORT_NAME = "metrics_report.csv"
CHART_NAME = "trajectory.svg"

log = logging.getLogger("protoadapt")


class TrainingAborted(NumericError):
    """A non-finite loss stopped training; carries the stage and step."""

    def __init__(self, message: str, stage: int, step: int, dump: Path | None):
        super().__init__(message)
        self.stage = stage
        self.step = step
        self.dump = dump


# ------------------------------------------------------------------ data

def prepare_datasets(cfg: ExperimentConfig) -> list[Dataset]:
    """Load every dataset in the config, generating missing ones when asked to."""
    paths = [Path(p) for p in cfg.datasets]
    missing = [p for p in paths if not (p / "manifest.json").exists()]
    if missing and cfg.generate:
        g = cfg.generate
        base = OUTDOOR if g.get("profile") == "outdoor-like" else INDOOR
        base = replace(base, seed=g.get("seed", base.seed))
        family = make_shifted_family(base, len(paths), g.get("gap", 1.0))
        for p, spec in zip(paths, family):
            if p in missing:
                generate_domain(spec, g.get("n_train", 160), p, g.get("n_eval", 40))
    elif missing:
        raise FileNotFoundError(f"dataset not found: {missing[0]}")
    return [load_dataset(p) for p in paths]


# ------------------------------------------------------------- training

def _stack(batch: Sequence[Sample]):
    img = np.stack([s.image for s in batch])
    z = np.stack([s.sparse_z for s in batch])
    m = np.stack([s.mask for s in batch])
    return img, z, m


def batch_terms(net: Backbone, batch: Sequence[Sample], weights, adapters=None):
    """Unsupervised loss terms for a batch; returns (terms, pre-adaptation bottleneck)."""
    img, z, m = _stack(batch)
    pred, bottleneck = net(img, z, m, adapters)
    views = []
    for v in range(2):
        outs, vals = [], []
        for i, s in enumerate(batch):
            o, val = warp_image(s.adjacent[v][0], pred[i], s.adjacent[v][1], s.K)
            outs.append(T.reshape(o, (1,) + o.shape))
            vals.append(val)
        views.append((T.concat(outs, axis=0), np.stack(vals)))
    terms = {
        "ph": photometric_loss(img, views, weights).loss,
        "sz": sparse_consistency_loss(pred, z, m),
        "sm": smoothness_loss(pred, img),
    }
    return terms, bottleneck


def make_optimizer(params, opt_cfg: dict):
    if opt_cfg["optimizer"] == "adam":
        return Adam(params, opt_cfg["lr"])
    return SGD(params, opt_cfg["lr"], opt_cfg.get("momentum", 0.9), clip=opt_cfg.get("clip"))


def _dump_state(out_dir: Path | None, net: Backbone, bank: AdapterBank | None) -> Path | None:
    if out_dir is None:
        return None
    dump = out_dir / "abort_state"
    net.save(dump / "backbone")
    if bank is not None:
        bank.save(dump / "bank")
    return dump


def train_stage(
    net: Backbone,
    samples: Sequence[Sample],
    cfg: ExperimentConfig,
    stage: int,
    rng: np.random.Generator,
    bank: AdapterBank | None = None,
    descriptor: DomainDescriptor | None = None,
    frozen: Sequence[DomainDescriptor] = (),
    out_dir: Path | None = None,
) -> list[float]:
    """Optimise either the backbone (stage 1) or domain ``stage``'s sets (+ descriptor)."""
    opt_cfg = cfg.pretrain if stage == 1 else cfg.adapt
    steps = opt_cfg["steps"]
    adapters = bank.adapters(stage) if bank is not None else None
    params = net.trainable() if stage == 1 else bank.trainable(stage)
    if descriptor is not None:
        params = params + [descriptor.r]
    mode = "pretrain" if stage == 1 else ("adapt-agnostic" if descriptor is not None else "adapt-incremental")
    opt = make_optimizer(params, opt_cfg)
    jitter_rng = cfg.rng(f"jitter-{stage}")
    n = len(samples)
    bs = min(cfg.batch_size, n)
    history = []
    for step in range(steps):
        idx = rng.choice(n, bs, replace=False)
        batch = [samples[i] for i in idx]
        try:
            terms, bottleneck = batch_terms(net, batch, cfg.loss_weights, adapters)
            if descriptor is not None:
                terms["dr"] = batch_descriptor_loss(
                    sample_descriptor(bottleneck), descriptor.r, frozen, cfg.descriptor_w_scale
                )
            loss = total_loss(terms, cfg.loss_weights, mode)
            if not np.isfinite(loss.data).all():
                raise NumericError("non-finite total loss")
        except NumericError as exc:
            dump = _dump_state(out_dir, net, bank)
            raise TrainingAborted(f"stage {stage}, step {step}: {exc}", stage, step, dump) from exc
        if opt_cfg.get("decay", "linear") == "linear":
            opt.lr = opt_cfg["lr"] * (1.0 - step / steps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step == 0 and stage > 1:
            for s in adapters.values():
                s.jitter(jitter_rng, cfg.prototype_jitter)
        history.append(loss.item())
        if step % 50 == 0 or step == steps - 1:
            log.info("stage %d step %d loss %.5f", stage, step, history[-1])
    return history


# ------------------------------------------------------------ evaluation

@dataclass
class EvalResult:
    metrics: dict[str, float]
    routing_accuracy: float
    routed: list[int] = field(default_factory=list)


def predict(net: Backbone, bank: AdapterBank, descriptors, sample: Sample, mode: str, domain_id: int):
    """Dense depth for one sample; returns (depth, domain used)."""
    if mode == "incremental":
        if domain_id != 1 and domain_id not in bank.domains:
            raise KeyError(f"domain {domain_id} has not been trained")
        chosen = domain_id
    elif mode == "agnostic":
        _, bottleneck = net.encode(sample.image[None], sample.sparse_z[None], sample.mask[None])
        chosen = select_domain(sample_descriptor(bottleneck)[0], descriptors)
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    pred, _ = net(sample.image, sample.sparse_z, sample.mask, bank.adapters(chosen))
    return pred.data, chosen


def evaluate(
    net: Backbone,
    bank: AdapterBank,
    descriptors: Sequence[DomainDescriptor],
    samples: Sequence[Sample],
    domain_id: int,
    mode: str,
    eval_range: tuple[float, float],
    scale: float = 1000.0,
) -> EvalResult:
    """Mean error metrics over ``samples`` (fixed-order float64 sums)."""
    sums = np.zeros(4)
    routed = []
    with T.no_grad():
        for s in samples:
            pred, chosen = predict(net, bank, descriptors, s, mode, domain_id)
            routed.append(chosen)
            sums += np.asarray(error_metrics(pred, s.gt, eval_range[0], eval_range[1], scale))
    mean = sums / len(samples)
    acc = float(np.mean([r == domain_id for r in routed]))
    return EvalResult({k: float(v) for k, v in zip(METRICS, mean)}, acc, routed)


# --------------------------------------------------------------- running

def pretrain_backbone(cfg: ExperimentConfig, datasets: Sequence[Dataset], out_dir: Path | None = None) -> Backbone:
    net = Backbone(cfg.backbone)
    train_stage(net, datasets[0].split("train"), cfg, 1, cfg.rng("batches-1"), out_dir=out_dir)
    net.freeze()
    return net


def _empty_log(t: int):
    return {mode: {m: [[None] * t for _ in range(t)] for m in METRICS} for mode in MODES}


def run_sequence(
    cfg: ExperimentConfig,
    out_dir=None,
    pretrained: Backbone | None = None,
    datasets: Sequence[Dataset] | None = None,
) -> dict:
    """Run the whole sequence and persist log, report, chart and checkpoints to ``out_dir``."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        return _run(cfg, out, pretrained, datasets)
    finally:
        log.removeHandler(handler)
        handler.close()


def _run(cfg, out, pretrained, datasets) -> dict:
    datasets = list(datasets) if datasets is not None else prepare_datasets(cfg)
    if len(datasets) < 2:
        raise ConfigError("a sequence needs at least two datasets")
    t = len(datasets)
    chash = cfg.config_hash()
    log.info("run %s over %d datasets", chash, t)
    evals = [d.split("eval") for d in datasets]
    ranges = [tuple(d.spec.eval_range) for d in datasets]

    # wall-clock seconds per stage; returned to the caller but never written to the log
    seconds = {}
    if pretrained is None:
        t0 = time.perf_counter()
        net = pretrain_backbone(cfg, datasets, out)
        seconds["1"] = time.perf_counter() - t0
    else:
        if pretrained.config_hash() != Backbone(cfg.backbone).config_hash():
            raise ConfigError("pretrained backbone does not match the configured architecture")
        net = pretrained
    net.freeze()

    bank = AdapterBank(cfg.ablation)
    subset = datasets[0].split("train")[: cfg.descriptor_subset]
    with T.no_grad():
        _, bott = net.encode(*_stack(subset))
    descriptors = [fit_initial_descriptor(sample_descriptor(bott), 1)]

    a = _empty_log(t)
    routing = [[None] * t for _ in range(t)]
    base = {}
    for j in range(t):
        r = evaluate(net, bank, descriptors, evals[j], 1, "incremental", ranges[j], cfg.eval_scale)
        base[datasets[j].spec.name] = r.metrics

    def record(k):
        for j in range(k + 1):
            for mode in MODES:
                r = evaluate(net, bank, descriptors, evals[j], j + 1, mode, ranges[j], cfg.eval_scale)
                for m in METRICS:
                    a[mode][m][j][k] = r.metrics[m]
                if mode == "agnostic":
                    routing[j][k] = r.routing_accuracy
            log.info("after stage %d: dataset %d mae %.2f", k + 1, j + 1, a["incremental"]["mae"][j][k])

    record(0)
    n_img, n_dep = cfg.set_sizes
    losses = {}
    for k in range(1, t):
        dom = k + 1
        bank.new_domain(dom, net.taps, n_img, n_dep, cfg.rng(f"sets-{dom}"))
        train = datasets[k].split("train")
        desc = None
        if "agnostic" in cfg.modes:
            first = train[: cfg.batch_size]
            with T.no_grad():
                _, bott = net.encode(*_stack(first))
            desc = init_descriptor(sample_descriptor(bott), dom, cfg.rng(f"descriptor-{dom}"))
        t0 = time.perf_counter()
        losses[str(dom)] = train_stage(
            net, train, cfg, dom, cfg.rng(f"batches-{dom}"), bank, desc, descriptors, out
        )
        seconds[str(dom)] = time.perf_counter() - t0
        log.info("stage %d trained in %.1f s", dom, seconds[str(dom)])
        bank.freeze_domain(dom)
        if desc is None:
            with T.no_grad():
                _, bott = net.encode(*_stack(train[: cfg.descriptor_subset]))
            desc = fit_initial_descriptor(sample_descriptor(bott), dom)
        desc.freeze()
        descriptors.append(desc)
        record(k)

    counts = net.parameter_count()
    per_domain = {str(d): bank.parameter_count(d) for d in sorted(bank.domains)}
    result = {
        "config_hash": chash,
        "pretrain_hash": cfg.pretrain_hash(),
        "datasets": [d.spec.name for d in datasets],
        "set_sizes": list(cfg.set_sizes),
        "log": a,
        "routing_accuracy": routing,
        "base": base,
        "summary": {mode: {m: summarize(a[mode][m]) for m in METRICS} for mode in MODES},
        "parameters": {"backbone": counts["total"], "per_domain": per_domain},
        "final_loss": {d: h[-1] if h else None for d, h in losses.items()},
    }
    write_outputs(out, cfg, result, net, bank, descriptors)
    result["stage_seconds"] = seconds
    return result


# --------------------------------------------------------------- outputs

def descriptor_payload(descriptors: Sequence[DomainDescriptor]) -> dict:
    return {str(d.domain_id): [float(v) for v in d.r.data] for d in descriptors}


def write_outputs(out: Path, cfg, result, net, bank, descriptors):
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=1, sort_keys=True))
    (out / LOG_NAME).write_text(json.dumps(result, indent=1, sort_keys=True))
    (out / REPORT_NAME).write_text(report_csv(result))
    write_chart(out / CHART_NAME, result)
    net.save(out / "checkpoints" / "backbone")
    bank.save(
        out / "checkpoints" / "bank",
        {"config_hash": result["config_hash"], "descriptors": descriptor_payload(descriptors)},
    )


def report_csv(result: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_hash", "mode", "metric", "average_forgetting_pct", "average_performance", "spto"])
    for mode in MODES:
        for m in METRICS:
            s = summarize(result["log"][mode][m])
            w.writerow([result["config_hash"], mode, m, repr(s["average_forgetting"]),
                        repr(s["average_performance"]), repr(s["spto"])])
    return buf.getvalue()


def write_chart(path: Path, result: dict, metric: str = "mae"):
    """Per-dataset error after each stage, one line per dataset and mode."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "protoadapt"
    names = result["datasets"]
    t = len(names)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for mode, style in (("incremental", "-"), ("agnostic", "--")):
        for j, name in enumerate(names):
            ks = list(range(j, t))
            ax.plot([k + 1 for k in ks], [result["log"][mode][metric][j][k] for k in ks], style,
                    marker="o", label=f"{name} ({mode})")
    ax.set_xlabel("after training stage")
    ax.set_ylabel(metric.upper())
    ax.set_xticks(range(1, t + 1))
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def load_run(run_dir) -> tuple[ExperimentConfig, Backbone, AdapterBank, list[DomainDescriptor], dict]:
    """Reload config, frozen backbone, bank and descriptors from a run directory."""
    run = Path(run_dir)
    cfg = ExperimentConfig(json.loads((run / "config.json").read_text()))
    logdata = json.loads((run / LOG_NAME).read_text())
    net = Backbone.load(run / "checkpoints" / "backbone")
    net.freeze()
    bank, manifest = AdapterBank.load(run / "checkpoints" / "bank")
    for name, h in (("bank", manifest.get("config_hash")), ("config", cfg.config_hash())):
        if h != logdata["config_hash"]:
            raise ConfigError(f"{name} config hash {h} does not match the log's {logdata['config_hash']}")
    descriptors = []
    for dom, vec in sorted(manifest["descriptors"].items(), key=lambda kv: int(kv[0])):
        d = DomainDescriptor(T.Tensor(np.asarray(vec, dtype=np.float32)), int(dom))
        d.freeze()
        descriptors.append(d)
    return cfg, net, bank, descriptors, logdata


def evaluate_run(run_dir, mode: str) -> dict:
    """Recompute final-stage metrics on every dataset of a finished run."""
    cfg, net, bank, descriptors, _ = load_run(run_dir)
    datasets = prepare_datasets(cfg)
    out = {}
    for j, ds in enumerate(datasets):
        r = evaluate(net, bank, descriptors, ds.split("eval"), j + 1, mode, tuple(ds.spec.eval_range), cfg.eval_scale)
        out[ds.spec.name] = {**r.metrics, "routing_accuracy": r.routing_accuracy}
    return out


def export_descriptors(run_dir, out_csv) -> Path:
    _, _, _, descriptors, _ = load_run(run_dir)
    path = Path(out_csv)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain_id"] + [f"c{i}" for i in range(len(descriptors[0].r.data))])
        for d in descriptors:
            w.writerow([d.domain_id] + [repr(float(v)) for v in d.r.data])
    return path


# ----------------------------------------------------------------- sweep

def sweep(cfg: ExperimentConfig, values: Sequence[tuple[int, int]], out_dir=None) -> list[dict]:
    """Run the sequence once per set-size pair, sharing one pretrained backbone."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    datasets = prepare_datasets(cfg)
    net = pretrain_backbone(cfg, datasets, out)
    rows = []
    for n_img, n_dep in values:
        sub = cfg.with_overrides(set_sizes=[int(n_img), int(n_dep)])
        res = run_sequence(sub, out / f"sizes_{n_img}_{n_dep}", pretrained=net, datasets=datasets)
        t = len(res["datasets"])
        row = {"n_image": n_img, "n_depth": n_dep, "config_hash": res["config_hash"]}
        for m in METRICS:
            cells = [res["log"]["incremental"][m][k][k] for k in range(1, t)]
            row[m] = float(np.mean(cells))
        row["params_per_domain"] = res["parameters"]["per_domain"][str(2)]
        rows.append(row)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows
