"""Acceptance suite: one test per criterion, each recorded as PASS/FAIL in the summary.

Run alone with ``pytest tests/test_acceptance.py -v`` (about 8 minutes on one core, dominated
by the three-variant comparison shared by criteria 7 and 8).
"""

import time

import numpy as np
import pytest

from mburst import burst
from mburst.burst import BurstConfig, BurstDenseLayer
from mburst.cli import main, run_compare
from mburst.data import Dataset, IbmParams, SampleBatch, SyntheticConfig, generate_dataset, ibm
from mburst.loss_opt import WeightedBceConfig, wbce_loss
from mburst.metrics import EpochRecord, accuracy, auc_energy, f1_score
from mburst.model import ArchitectureConfig, ModelGraph
from mburst.tensor import Conv2dSpec, conv2d, conv2d_feedback, conv2d_weight_grad
from mburst.training import TrainConfig, arch_for

from oracles import accuracy_counting, conv2d_loops, f1_counting, ibm_scalar, trapezoid_loop

VARIANTS = ("unimodal-bp", "multimodal-bp", "mburst")


def cosine(a, b):
    a, b = a.ravel(), b.ravel()
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def small_batch(arch, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return SampleBatch(
        audio=rng.normal(size=(n, *arch.audio_input)),
        visual=rng.normal(size=(n, *arch.visual_input)),
        mask=(rng.random((n, arch.mask_bins)) < 0.3).astype(float),
        clean=np.zeros((n, arch.mask_bins)),
        noise=np.zeros((n, arch.mask_bins)),
    )


def test_c01_burst_fixed_point(acceptance):
    t0 = time.perf_counter()
    arch = ArchitectureConfig()
    model = ModelGraph("mburst", arch, seed=0)
    model.forward(small_batch(arch))
    grads = model._burst_grads(np.zeros((3, arch.mask_bins)))
    all_zero = all(not g.any() for g in grads.values())
    p_ok = bool(np.all(model.head.p == 0.2))
    dt = time.perf_counter() - t0
    ok = acceptance(1, all_zero and p_ok and dt < 1.0,
                    f"all pseudo-gradients zero={all_zero}, p_L==0.2 everywhere={p_ok}, {dt:.2f}s")
    assert ok


def test_c02_h_identity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for act in ("relu", "sigmoid"):
        layer = BurstDenseLayer(16, 1000, act, rng=rng)
        layer.forward(rng.normal(size=(5, 16)))  # 5000 units per activation
        live = layer.e > BurstConfig().eps_event
        worst = max(worst, float(np.abs(layer.h_of_e() * layer.e - layer.f_prime())[live].max()))
    dt = time.perf_counter() - t0
    ok = acceptance(2, worst < 1e-12 and dt < 1.0, f"max |h*e - f'(v)| = {worst:.2e} over 10^4 units, {dt:.2f}s")
    assert ok


def _two_layer_alignment(seed, lam=1e-3):
    rng = np.random.default_rng(seed)
    l1 = BurstDenseLayer(10, 16, "relu", rng=rng)
    l2 = BurstDenseLayer(16, 6, "sigmoid", rng=rng)
    x = rng.normal(size=(8, 10))
    target = (rng.random((8, 6)) < 0.3).astype(float)
    e1 = l1.forward(x)
    e2 = l2.forward(e1)
    dl_de = e2 - target
    cfg = BurstConfig()
    l2.output_burst_prob(lam * dl_de, cfg)
    b, b_bar = l2.burst_rates()
    burst.dendritic_potentials(l1, l2, b, b_bar)
    l1.hidden_burst_prob(cfg)
    l1.burst_rates()
    d2 = dl_de * e2 * (1 - e2)
    d1 = (d2 @ l2.W) * (e1 > 0)
    exact = (d1.T @ x / 8, d2.T @ e1 / 8)
    pseudo = (l1.weight_update()[0], l2.weight_update()[0])
    return [cosine(p, t) for p, t in zip(pseudo, exact)]


def test_c03_gradient_alignment(acceptance):
    t0 = time.perf_counter()
    sims = np.array([_two_layer_alignment(s) for s in range(20)]).mean(axis=0)
    dt = time.perf_counter() - t0
    ok = acceptance(3, sims.min() > 0.9 and dt < 10.0,
                    f"mean cosine hidden={sims[0]:.4f} head={sims[1]:.4f} over 20 seeds, {dt:.2f}s")
    assert ok


def test_c04_conv_kernels(acceptance):
    t0 = time.perf_counter()
    fwd = adj = fd_rel = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        spec = Conv2dSpec(int(rng.integers(1, 3)), int(rng.integers(1, 4)), 3, 3, stride, pad)
        x = rng.normal(size=(2, spec.in_channels, 6, 7))
        k = rng.normal(size=spec.kernel_shape)
        out = conv2d(x, k, spec)
        fwd = max(fwd, float(np.abs(out - conv2d_loops(x, k, stride, pad)).max()))
        y = rng.normal(size=out.shape)
        adj = max(adj, abs(float(np.sum(out * y)) - float(np.sum(x * conv2d_feedback(y, k, spec, x.shape)))))
        got = conv2d_weight_grad(x, y, spec)
        fd = np.zeros_like(k)
        h = 1e-5
        for idx in np.ndindex(k.shape):
            kp, km = k.copy(), k.copy()
            kp[idx] += h
            km[idx] -= h
            fd[idx] = (np.sum(conv2d(x, kp, spec) * y) - np.sum(conv2d(x, km, spec) * y)) / (2 * h)
        fd_rel = max(fd_rel, float(np.abs(got - fd).max() / np.abs(fd).max()))
    dt = time.perf_counter() - t0
    ok = fwd < 1e-9 and adj < 1e-9 and fd_rel < 1e-6 and dt < 30.0
    acceptance(4, ok, f"forward {fwd:.1e}, adjoint {adj:.1e}, weight-grad rel {fd_rel:.1e} (20 cases), {dt:.1f}s")
    assert ok


def test_c05_baseline_gradients(acceptance):
    t0 = time.perf_counter()
    arch = ArchitectureConfig()
    model = ModelGraph("multimodal-bp", arch, seed=5)
    batch = small_batch(arch, n=2, seed=5)
    cfg = WeightedBceConfig(pos_weight=3.0)
    _, grads = model.gradients(batch, cfg)
    params = model.parameters()
    names = sorted(params)
    rng = np.random.default_rng(0)
    h, worst, checked = 1e-6, 0.0, 0
    for i in range(10):
        name = names[i % len(names)]
        w = params[name]
        g = grads[name]
        # prefer coordinates with a non-negligible gradient so the relative check is meaningful
        flat = np.flatnonzero(np.abs(g) > 1e-3 * np.abs(g).max())
        idx = np.unravel_index(int(rng.choice(flat)), w.shape)
        old = w[idx]
        w[idx] = old + h
        lp = wbce_loss(model.forward(batch), batch.mask, cfg)
        w[idx] = old - h
        lm = wbce_loss(model.forward(batch), batch.mask, cfg)
        w[idx] = old
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(g[idx] - fd) / max(abs(fd), abs(g[idx])))
        checked += 1
    dt = time.perf_counter() - t0
    ok = acceptance(5, worst < 1e-4 and dt < 30.0, f"{checked} weights, max rel err {worst:.2e}, {dt:.1f}s")
    assert ok


def test_c06_ibm_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    n = 10**6
    s = rng.exponential(size=n)
    nz = rng.exponential(size=n)
    s[:1000] = nz[:1000]  # exact 0 dB boundary
    nz[1000:1010] = 0.0
    mismatches = 0
    for lc in (0.0, 5.0):
        got = ibm(s, nz, IbmParams(lc_db=lc))
        ref = np.fromiter((ibm_scalar(a, b, lc) for a, b in zip(s.tolist(), nz.tolist())), float, n)
        mismatches += int(np.sum(got != ref))
    boundary = bool(np.all(ibm(s[:1000], nz[:1000], IbmParams(lc_db=0.0)) == 1.0))
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and boundary and dt < 10.0
    acceptance(6, ok, f"{mismatches} mismatches over 2x10^6 evaluations, boundary inclusive={boundary}, {dt:.1f}s")
    assert ok


def test_c09_metric_oracles(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 60))
        p = (rng.random(m) < rng.random()).astype(float)
        t = (rng.random(m) < rng.random()).astype(float)
        k = int(rng.integers(2, 50))
        ys = rng.random(k)
        recs = [EpochRecord(i, "test", 0.5, 50.0, float(y)) for i, y in enumerate(ys)]
        worst = max(
            worst,
            abs(f1_score(p, t) - f1_counting(p, t)),
            abs(accuracy(p, t) - accuracy_counting(p, t)),
            abs(auc_energy(recs) - trapezoid_loop(list(range(k)), ys)),
        )
    dt = time.perf_counter() - t0
    ok = acceptance(9, worst < 1e-12 and dt < 5.0, f"max deviation {worst:.1e} over 10^3 instances, {dt:.2f}s")
    assert ok


@pytest.mark.slow
def test_c10_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    outs = []
    for rep in ("a", "b"):
        d, t = tmp_path / rep / "data", tmp_path / rep / "train"
        (tmp_path / rep).mkdir()
        assert main(["generate", "--out", str(d), "--seed", "11"]) == 0
        assert main(["train", "--data", str(d), "--out", str(t), "--seed", "11", "--epochs", "2"]) == 0
        files = [d / "manifest.json", t / "metrics.csv", *sorted((t / "checkpoint").iterdir())]
        outs.append({f.relative_to(tmp_path / rep).as_posix(): f.read_bytes() for f in files})
    same = outs[0] == outs[1]
    dt = time.perf_counter() - t0
    ok = acceptance(10, same and dt < 300, f"{len(outs[0])} files byte-identical={same}, {dt:.1f}s")
    assert ok


# -- criteria 7 and 8 share one comparison run --------------------------------


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-data")
    t0 = time.perf_counter()
    generate_dataset(SyntheticConfig(), root)
    ds = Dataset(root)
    summary = run_compare(ds, TrainConfig(epochs=40), arch_for(ds), runs=3, seed=0)
    return summary, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_f1_ordering(acceptance, comparison):
    summary, dt = comparison
    f1 = {v: summary[v]["test"]["f1_mean"] for v in VARIANTS}
    mm, mb, uni = f1["multimodal-bp"], f1["mburst"], f1["unimodal-bp"]
    # Pairwise reading: both audio-visual models beat unimodal by 0.03 and burst
    # stays within 10% of backprop. Read as one chain, the last link would demand
    # 0.9*multimodal > unimodal + 0.03, which the reference scores
    # (0.790 / 0.768 / 0.696) themselves do not meet; it is reported, not asserted.
    ok = mm >= mb >= 0.9 * mm and min(mm, mb) > uni + 0.03 and dt < 15 * 60
    chain = 0.9 * mm > uni + 0.03
    acceptance(7, ok, f"test F1 multimodal {mm:.4f}, mburst {mb:.4f}, unimodal {uni:.4f} "
                      f"(literal chain {chain}); {dt / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_c08_energy_ordering(acceptance, comparison):
    summary, _ = comparison
    e_mm = summary["multimodal-bp"]["test"]["energy_final5_mean"]
    e_mb = summary["mburst"]["test"]["energy_final5_mean"]
    auc = {s: {v: summary[v][s]["energy_auc_mean"] for v in VARIANTS} for s in ("train", "test")}
    smallest = all(min(auc[s], key=auc[s].get) == "mburst" for s in auc)
    reduction = 1.0 - e_mb / e_mm
    ok = reduction >= 0.30 and smallest
    auc_txt = ", ".join(f"{s} " + "/".join(f"{auc[s][v]:.2f}" for v in VARIANTS) for s in auc)
    acceptance(8, ok, f"final-5 energy mburst {e_mb:.3f} vs multimodal {e_mm:.3f} "
                      f"(reduction {100 * reduction:.1f}%), AUC uni/mm/mburst {auc_txt}")
    assert ok
