"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

The expensive criteria share one session fixture: a full three-domain run
(own pretraining) plus a set-size sweep over (1,1) and (10,5) that pretrains
its own backbone from the same config. The sweep's (10,5) member therefore
repeats the full run from scratch, which is what the determinism check uses.
"""

import json
import time

import numpy as np
import pytest

from protoadapt import tensor as T
from protoadapt.config import ExperimentConfig
from protoadapt.gradcheck import run_suite
from protoadapt.harness import METRICS, load_run, predict, prepare_datasets, run_sequence, sweep
from protoadapt.metrics import average_forgetting, average_performance, spto
from protoadapt.prototypes import AdapterBank, local_bias, project_keys
from protoadapt.backbone import Backbone, BackboneConfig
from protoadapt.tensor import Tensor

from test_metrics import direct, random_log
from test_prototypes import brute_force_bias

ACCEPT = {
    "seed": 0,
    "generate": {"profile": "indoor-like", "gap": 1.0, "n_train": 160, "n_eval": 40},
    "set_sizes": [10, 5],
    "loss_weights": {"w_sz": 200.0},
}


def report(capsys, name, ok, detail=""):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    raw = dict(ACCEPT, datasets=[str(root / "data" / f"d{i}") for i in (1, 2, 3)], output_dir=str(root / "full"))
    cfg = ExperimentConfig(raw)
    prepare_datasets(cfg)
    t0 = time.perf_counter()
    full = run_sequence(cfg, root / "full")
    full_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    rows = sweep(cfg, [(1, 1), (10, 5)], root / "sweep")
    sweep_time = time.perf_counter() - t0
    return {
        "cfg": cfg,
        "root": root,
        "full": full,
        "full_time": full_time,
        "rows": rows,
        "sweep_time": sweep_time,
    }


def test_c01_zero_forgetting_exact(experiment, capsys):
    log = experiment["full"]["log"]["incremental"]
    t = len(experiment["full"]["datasets"])
    bitwise = all(log[m][j][k] == log[m][j][j] for m in METRICS for j in range(t) for k in range(j, t))
    af = {m: experiment["full"]["summary"]["incremental"][m]["average_forgetting"] for m in METRICS}
    minutes = experiment["full_time"] / 60
    ok = bitwise and all(v == 0.0 for v in af.values()) and minutes <= 30
    report(capsys, "C1 zero forgetting (incremental)", ok, f"AF {af}, bitwise {bitwise}, {minutes:.1f} min")


def test_c02_loss_neutral_deployment(experiment, capsys):
    cfg, net, bank, descriptors, _ = load_run(experiment["root"] / "full")
    datasets = prepare_datasets(cfg)
    samples = [(j + 1, s) for j, d in enumerate(datasets) for s in d.split("eval")[:5]]
    with T.no_grad():
        before = [predict(net, bank, descriptors, s, "incremental", dom)[0] for dom, s in samples]
        bare = [net.forward(s.image, s.sparse_z, s.mask)[0].data for _, s in samples]
        bank.new_domain(4, net.taps, *cfg.set_sizes, np.random.default_rng(1))
        after = [predict(net, bank, descriptors, s, "incremental", dom)[0] for dom, s in samples]
        fresh = [net.forward(s.image, s.sparse_z, s.mask, bank.adapters(4))[0].data for _, s in samples]
    prev_same = all(a.tobytes() == b.tobytes() for a, b in zip(after, before))
    ident = all(a.tobytes() == b.tobytes() for a, b in zip(fresh, bare))
    report(capsys, "C2 loss-neutral deployment", prev_same and ident,
           f"previous domains unchanged {prev_same}, new identity sets equal bare backbone {ident}")


def test_c03_adaptation_efficacy(experiment, capsys):
    full = experiment["full"]
    gains = {}
    for k in range(1, len(full["datasets"])):
        base = full["base"][full["datasets"][k]]["mae"]
        gains[k + 1] = (base - full["log"]["incremental"]["mae"][k][k]) / base
    stage_min = full.get("stage_seconds", {})
    slow = {k: v for k, v in stage_min.items() if v > 600}
    ok = all(g >= 0.30 for g in gains.values()) and not slow
    detail = ", ".join(f"D{k} {100 * g:.1f}%" for k, g in gains.items())
    report(capsys, "C3 adaptation efficacy (MAE gain over frozen backbone)", ok, f"{detail}; slow stages {slow}")


def test_c04_agnostic_routing(experiment, capsys):
    full = experiment["full"]
    t = len(full["datasets"])
    acc = full["routing_accuracy"]
    cells = [acc[j][k] for k in range(t) for j in range(k + 1)]
    af = {m: full["summary"]["agnostic"][m]["average_forgetting"] for m in METRICS}
    ok = min(cells) >= 0.95 and all(v < 5.0 for v in af.values())
    final = [acc[j][t - 1] for j in range(t)]
    report(capsys, "C4 agnostic routing", ok, f"min accuracy {min(cells):.3f}, final {final}, AF {af}")


def test_c05_attention_bias_oracle(capsys):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        c, n = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        X, P, K = (rng.normal(size=s).astype(np.float32) for s in ((3, 4, c), (n, c), (n, c)))
        got = local_bias(Tensor(X), Tensor(P), Tensor(K)).data
        worst = max(worst, float(np.abs(got - brute_force_bias(X, P, K)).max()))
    elapsed = time.perf_counter() - t0
    report(capsys, "C5 attention-bias oracle", worst <= 1e-5 and elapsed <= 1.0, f"max abs {worst:.2e}, {elapsed:.2f} s")


def test_c06_stop_gradient_contract(capsys):
    rng = np.random.default_rng(6)
    X = Tensor(rng.normal(size=(3, 3, 4)).astype(np.float32))
    P0 = rng.normal(size=(3, 4)).astype(np.float32)
    W0 = (np.eye(4) + rng.normal(0, 0.3, size=(4, 4))).astype(np.float32)

    # key path alone: a loss that depends on P only through K
    P = Tensor(P0.copy(), requires_grad=True)
    K = project_keys(P, Tensor(W0, requires_grad=True))
    b = local_bias(X, Tensor(P0), K)
    T.reduce_sum(b * b).backward()
    key_grad = 0.0 if P.grad is None else float(np.abs(P.grad).max())

    outs, grads = [], []
    for stop in (True, False):
        P = Tensor(P0.copy(), requires_grad=True)
        out = local_bias(X, P, project_keys(P, Tensor(W0), stop_grad=stop))
        T.reduce_sum(out * out).backward()
        outs.append(out.data.copy())
        grads.append(P.grad.copy())
    same_fwd = np.array_equal(outs[0], outs[1])
    differ = not np.allclose(grads[0], grads[1])
    ok = key_grad == 0.0 and same_fwd and differ
    report(capsys, "C6 stop-gradient contract", ok,
           f"key-path P grad {key_grad}, forward equal {same_fwd}, P grads differ {differ}")


def test_c07_metric_oracles(capsys):
    rng = np.random.default_rng(7)
    worst = 0.0
    for t in (2, 3, 4, 5, 6):
        a = random_log(rng, t)
        af, ap, sp = direct(a)
        worst = max(worst, abs(average_forgetting(a) - af), abs(average_performance(a) - ap), abs(spto(a) - sp))
    ex = [[10.0, 12.0], [None, 20.0]]
    worked = (
        abs(average_forgetting(ex) - 20.0) < 1e-12
        and abs(average_performance(ex) - 14.0) < 1e-12
        and abs(spto(ex) - 1920 / 62) < 1e-12
    )
    report(capsys, "C7 metric-formula oracles", worst < 1e-9 and worked,
           f"max deviation {worst:.1e}, worked examples {worked} (SPTO {spto(ex):.3f})")


def test_c08_gradient_suite(capsys):
    t0 = time.perf_counter()
    res = run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    worst_name = max(res, key=res.get)
    ok = all(v < 5e-3 for v in res.values()) and elapsed <= 120
    report(capsys, "C8 gradient suite", ok,
           f"{len(res)} checks, worst {worst_name} {res[worst_name]:.1e}, {elapsed:.1f} s")


def test_c09_parameter_overhead(capsys):
    net = Backbone(BackboneConfig())
    total = net.parameter_count()["total"]
    counts = {}
    for name, sizes in (("indoor", (10, 5)), ("outdoor", (25, 10))):
        bank = AdapterBank()
        bank.new_domain(2, net.taps, *sizes, np.random.default_rng(0))
        counts[name] = bank.parameter_count(2)
    exact = counts == {"indoor": 17456, "outdoor": 20656} and total == 496993
    ok = exact and all(v / total < 0.05 for v in counts.values())
    ratios = {k: f"{100 * v / total:.2f}%" for k, v in counts.items()}
    report(capsys, "C9 parameter overhead", ok, f"backbone {total}, per domain {counts} ({ratios})")


def test_c10_set_size_ordering(experiment, capsys):
    rows = {(r["n_image"], r["n_depth"]): r for r in experiment["rows"]}
    small, large = rows[(1, 1)]["mae"], rows[(10, 5)]["mae"]
    minutes = experiment["sweep_time"] / 60
    ok = large <= small and minutes <= 30
    report(capsys, "C10 set-size ordering", ok, f"MAE (1,1) {small:.2f} vs (10,5) {large:.2f}, {minutes:.1f} min")


def test_c11_determinism(experiment, capsys):
    root = experiment["root"]
    a = (root / "full" / "continual_log.json").read_bytes()
    b = (root / "sweep" / "sizes_10_5" / "continual_log.json").read_bytes()
    same_hash = json.loads(a)["config_hash"] == json.loads(b)["config_hash"]
    report(capsys, "C11 determinism", a == b and same_hash,
           f"two full runs byte-identical {a == b} ({len(a)} bytes), same config hash {same_hash}")
