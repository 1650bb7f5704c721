"""Acceptance criteria 1-12, one test each.

Every test prints a ``[PASS]``/``[FAIL]`` line (shown inline and again in the
terminal summary).  Run standalone with ``python3 tests/test_acceptance.py``.
"""

import math
import time
from collections import OrderedDict

import numpy as np
import pytest

from rvt.attention import attention_logits, local_window_attention, mhsa_forward, paas_attention, sdp_attention
from rvt.augmentation import AugConfig, augment_batch, patch_noise, patchwise_augment
from rvt.harness import OptimizerConfig, RunConfig, load_config, make_synthetic_dataset, parse_dataset, train
from rvt.harness.data import dataset_bytes
from rvt.harness.selftest import run_gradcheck
from rvt.model import ModelConfig, StageSpec, count_flops, count_params, parameter_shapes, preset
from rvt.model.checkpoint import checkpoint_bytes, parse_checkpoint
from rvt.model.layers import conv_ffn_forward
from rvt.model.network import Model
from rvt.numerics import Tensor, gelu, linear, matmul
from rvt.robustness import AttackConfig, EvalReport, compute_mce, evaluate, fgsm_attack, pgd_attack
from rvt.robustness.corruptions import CORRUPTION_KINDS
from scipy.stats import binom

RESULTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_c01_gradient_suite(verdict):
    start = time.perf_counter()
    results = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - start
    worst = {d: max(r.error for r in results if r.dtype == d) for d in ("float64", "float32")}
    failed = [f"{r.name}/{r.dtype}" for r in results if not r.passed]
    ok = not failed and elapsed < 120 and any(r.name == "network_2block" for r in results)
    verdict(1, "gradient suite", ok, f"{len(results)} checks, worst f64 {worst['float64']:.2e} (<=1e-6), worst f32 {worst['float32']:.2e} (<=1e-3), {elapsed:.1f}s, failed={failed}")


def test_c02_paas_reduces_to_plain(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n, d = rng.integers(1, 17), rng.integers(1, 33)
        q, k, v = (rng.normal(size=(n, d)) for _ in range(3))
        a = paas_attention(t64(q), t64(k), t64(v), t64(np.ones((n, n)))).data
        b = sdp_attention(t64(q), t64(k), t64(v)).data
        worst = max(worst, float(np.abs(a - b).max()))
    verdict(2, "PAAS with W_p=1 equals plain attention", worst <= 1e-7, f"max abs diff {worst:.2e} over 100 instances")


def test_c03_logit_decoupling(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n, d = rng.integers(1, 17), rng.integers(1, 33)
        q, k, wp = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.uniform(-2, 2, size=(n, n))
        got = attention_logits(t64(q), t64(k), t64(wp)).data
        worst = max(worst, float(np.abs(got - (q @ k.T) * wp / math.sqrt(d)).max()))
    verdict(3, "PAAS logits are content times position", worst <= 1e-6, f"max abs diff {worst:.2e}")


def _single_stage(pos_kind):
    return ModelConfig(
        stage=StageSpec((0, 0, 2, 0), (0, 0, 32, 0), (0, 0, 2, 0), (0, 0, 16, 0)),
        embed_kind="linear", ffn_kind="plain", pos_kind=pos_kind, head_kind="gap", num_classes=5, image_size=64,
    )


def _wide_model(cfg, rng):
    params = OrderedDict((n, Tensor(np.ones(s) if rule == "ones" else rng.normal(0.0, 0.3, size=s))) for n, (s, rule) in parameter_shapes(cfg).items())
    return Model(cfg, params)


def _permute_patches(img, patch, perm):
    b, c, h, w = img.shape
    g = h // patch
    cells = img.reshape(b, c, g, patch, g, patch).transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c, patch, patch)[:, perm]
    return cells.reshape(b, g, g, c, patch, patch).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)


def test_c04_permutation_invariance(verdict):
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(2, 3, 64, 64))
    perm = rng.permutation(16)
    plain = _wide_model(_single_stage("none"), rng)
    inv = float(np.abs(plain(img).data - plain(_permute_patches(img, 16, perm)).data).max())
    paas = _wide_model(_single_stage("paas"), rng)
    for k in range(2):
        paas.params[f"blocks.{k}.attn.paas"] = Tensor(rng.uniform(0.0, 3.0, size=(2, 16, 16)))
    brk = float(np.abs(paas(img).data - paas(_permute_patches(img, 16, perm)).data).max())
    verdict(4, "patch permutation", inv <= 1e-5 and brk > 1e-3, f"without positions {inv:.2e} (<=1e-5); with random W_p {brk:.2e} (>1e-3)")


def test_c05_architecture_arithmetic(verdict):
    start = time.perf_counter()
    params = count_params(preset("deit_ti"))
    macs = {n: count_flops(preset(n), 224) for n in ("v1", "v2", "v5", "v6")}
    elapsed = time.perf_counter() - start
    targets = {"v1": 1.3e9, "v2": 1.2e9, "v5": 3.4e9, "v6": 3.4e9}
    ok = abs(params / 5.7e6 - 1) <= 0.05 and all(abs(macs[n] / targets[n] - 1) <= 0.10 for n in targets) and elapsed < 1.0
    detail = f"deit_ti {params / 1e6:.3f}M; " + ", ".join(f"{n} {macs[n] / 1e9:.3f}G" for n in targets) + f"; {elapsed * 1e3:.1f}ms"
    verdict(5, "parameter and MAC counts", ok, detail)


def test_c06_conv_ffn_delta_kernel(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        gh, gw, c, h = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 17)
        x = rng.normal(size=(1, gh * gw, c))
        w1, b1, w2, b2 = rng.normal(size=(c, h)), rng.normal(size=h), rng.normal(size=(h, c)), rng.normal(size=c)
        dw = np.zeros((h, 1, 3, 3))
        dw[:, 0, 1, 1] = 1.0
        got = conv_ffn_forward(t64(x), (gh, gw), t64(w1), t64(b1), t64(dw), t64(np.zeros(h)), t64(w2), t64(b2)).data
        # the conv-FFN applies its activation after both the expansion and the depthwise mix
        oracle = linear(gelu(gelu(linear(t64(x), t64(w1), t64(b1)))), t64(w2), t64(b2)).data
        worst = max(worst, float(np.abs(got - oracle).max()))
    verdict(6, "delta depthwise kernel reproduces the plain FFN chain", worst <= 1e-6, f"max abs diff {worst:.2e} over 100 instances")


def test_c07_local_window_degenerations(verdict):
    rng = np.random.default_rng(7)
    full = unit = 0.0
    for _ in range(20):
        h, w, heads = rng.integers(1, 6), rng.integers(1, 6), int(rng.choice([1, 2]))
        c = 4 * heads
        p = {f"{a}_{b}": t64(rng.normal(size=(c, c)) * 0.5 if b == "w" else rng.normal(size=c) * 0.1) for a in "qkvo" for b in "wb"}
        grid = rng.normal(size=(h, w, c))
        if h == w:
            local = local_window_attention(t64(grid), p, h, heads).data
            glob = mhsa_forward(t64(grid.reshape(h * w, c)), p, heads).data.reshape(h, w, c)
            full = max(full, float(np.abs(local - glob).max()))
        out = local_window_attention(t64(grid), p, 1, heads).data
        value = (grid @ p["v_w"].data + p["v_b"].data) @ p["o_w"].data + p["o_b"].data
        unit = max(unit, float(np.abs(out - value).max()))
    verdict(7, "local-window degenerations", full <= 1e-6 and unit <= 1e-6, f"window=grid {full:.2e}; window=1 {unit:.2e}")


def test_c08_attack_contracts(verdict):
    rng = np.random.default_rng(8)
    box_ok = identity_ok = single_ok = True
    for i in range(1000):
        d, k, b = rng.integers(1, 9), rng.integers(2, 6), rng.integers(1, 5)
        x = rng.uniform(size=(b, d))
        x[rng.random(x.shape) < 0.2] = rng.choice([0.0, 1.0])
        x = x.astype(np.float32)
        w = Tensor(rng.normal(size=(d, k)).astype(np.float32))
        model = lambda t, w=w: matmul(t, w)  # noqa: E731
        y = rng.integers(0, k, size=b)
        eps = float(rng.choice([0.5, 1.0, 4.0, 8.0, 16.0, rng.uniform(0, 32)]))
        cfg = AttackConfig(epsilon=eps, steps=int(rng.integers(1, 6)), step_size=float(rng.uniform(0.25, 4.0)), random_start=bool(i % 2))
        for adv in (fgsm_attack(model, x, y, cfg), pgd_attack(model, x, y, cfg, np.random.default_rng(i))):
            dev = np.abs(adv.astype(np.float64) - x.astype(np.float64)).max()
            box_ok &= bool(dev <= cfg.eps and adv.min() >= 0.0 and adv.max() <= 1.0)
        zero = AttackConfig(epsilon=0.0)
        identity_ok &= fgsm_attack(model, x, y, zero).tobytes() == x.tobytes() and pgd_attack(model, x, y, zero).tobytes() == x.tobytes()
        one = AttackConfig(epsilon=eps or 1.0, steps=1, step_size=(eps or 1.0) * float(rng.uniform(1.0, 2.0)))
        single_ok &= pgd_attack(model, x, y, one).tobytes() == fgsm_attack(model, x, y, one).tobytes()
    verdict(8, "attack contracts on 1000 fuzzed inputs", box_ok and identity_ok and single_ok,
            f"box/clamp {box_ok}, eps=0 identity {identity_ok}, one-step PGD == FGSM {single_ok}")


def _grid(values):
    return {(k, s): float(v) for k, row in zip(CORRUPTION_KINDS, values) for s, v in zip(range(1, 6), row)}


def test_c09_mce(verdict):
    rng = np.random.default_rng(9)
    base = rng.integers(1, 256, size=(5, 5)) / 256.0
    same = compute_mce(EvalReport(0.0, _grid(base)), EvalReport(0.0, _grid(base)))
    half = compute_mce(EvalReport(0.0, _grid(base / 2)), EvalReport(0.0, _grid(base)))
    worst = 0.0
    for _ in range(200):
        a, b = rng.uniform(0, 1, size=(5, 5)), rng.uniform(0.01, 1, size=(5, 5))
        oracle = 100.0 * np.mean([a[i].sum() / b[i].sum() for i in range(5)])
        worst = max(worst, abs(compute_mce(EvalReport(0.0, _grid(a)), EvalReport(0.0, _grid(b))) - oracle))
    verdict(9, "mCE", same == 100.0 and half == 50.0 and worst <= 1e-9, f"identical {same!r}, halved {half!r}, oracle max diff {worst:.1e}")


def test_c10_augmentation_statistics(verdict):
    img = np.full((3, 200, 200), 0.5)
    _, mask = patchwise_augment(img, AugConfig(p=0.1, patch=2), np.random.default_rng(10), return_mask=True)
    lo, hi = binom.ppf([0.005, 0.995], mask.shape[0], 0.1)
    counts = mask.sum(axis=0)
    rates_ok = bool(np.all((counts >= lo) & (counts <= hi)))
    noise = patch_noise(np.full((1, 1000, 1000), 0.5), 0.0, 0.01, np.random.default_rng(11)) - 0.5
    std_ok = abs(noise.std() / 0.01 - 1) <= 0.01
    src = np.random.default_rng(12).uniform(size=(3, 32, 32))
    ident = patchwise_augment(src, AugConfig(p=0.0, patch=8), np.random.default_rng(13)).tobytes() == src.tobytes()
    verdict(10, "augmentation statistics", rates_ok and std_ok and ident,
            f"counts {counts.tolist()} in [{lo:.0f}, {hi:.0f}] of {mask.shape[0]}; noise std {noise.std():.6f}; p=0 identity {ident}")


@pytest.mark.slow
def test_c11_desk_scale_smoke(verdict, tmp_path):
    cfg = load_config("configs/tiny_run.json")
    start = time.perf_counter()
    result = train(cfg, out_dir=tmp_path)
    train_s = time.perf_counter() - start
    train_acc = result.history[-1]["clean_acc"]
    held = make_synthetic_dataset(cfg.seed + 1, 32)
    x, y = held.as_float(), held.labels
    report = evaluate(result.model, x, y, attacks=[("fgsm", AttackConfig(epsilon=8))], seed=cfg.seed, batch_size=64)
    clean = 1.0 - report.clean_err
    robust = report.robust_acc["fgsm_eps8"]
    curve = report.severity_curve()
    inversions = sum(b < a for a, b in zip(curve, curve[1:]))
    ok = train_acc >= 0.9 and train_s < 600 and robust < clean and inversions <= 1
    verdict(11, "tiny RVT smoke run", ok,
            f"train acc {train_acc:.3f} in {train_s:.0f}s; held-out clean {clean:.3f} vs FGSM eps=8 {robust:.3f}; "
            f"severity curve {[round(c, 4) for c in curve]} ({inversions} inversions)")


def test_c12_determinism_and_round_trips(verdict, tmp_path):
    cfg = RunConfig(model=preset("tiny_rvt"), aug=AugConfig(p=0.5, patch=8), seed=12, dataset="synthetic:4",
                    optimizer=OptimizerConfig(epochs=2, batch=8))
    runs = [train(cfg, out_dir=tmp_path / name) for name in ("a", "b")]
    ckpt_same = (tmp_path / "a/model.rvtw").read_bytes() == (tmp_path / "b/model.rvtw").read_bytes()
    ds = make_synthetic_dataset(cfg.seed, 4)
    x, y = ds.as_float(), ds.labels
    kw = dict(attacks=[("fgsm", AttackConfig(epsilon=4)), ("pgd", AttackConfig(random_start=True))], seed=cfg.seed)
    report_same = evaluate(runs[0].model, x, y, **kw).to_csv() == evaluate(runs[1].model, x, y, **kw).to_csv()
    idx = np.arange(len(ds))
    aug_same = augment_batch(x, idx, cfg.aug, cfg.seed, 1).tobytes() == augment_batch(x, idx, cfg.aug, cfg.seed, 1).tobytes()
    data_rt = dataset_bytes(parse_dataset(dataset_bytes(ds))) == dataset_bytes(ds)
    ckpt_rt = checkpoint_bytes(parse_checkpoint(checkpoint_bytes(runs[0].model))) == checkpoint_bytes(runs[0].model)
    ok = ckpt_same and report_same and aug_same and data_rt and ckpt_rt
    verdict(12, "determinism and round-trips", ok,
            f"checkpoints {ckpt_same}, reports {report_same}, augmented batches {aug_same}, dataset file {data_rt}, checkpoint file {ckpt_rt}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
