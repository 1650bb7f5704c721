"""Finite-difference gradient suite over every differentiable op and a 2-block network."""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from rvt import attention as A
from rvt.model import layers as L
from rvt.model.config import ModelConfig, StageSpec
from rvt.model.network import Model, init_parameters, parameter_shapes
from rvt.numerics import functional as F
from rvt import numerics as T
from rvt.numerics.gradcheck import finite_diff_check

TOLERANCE = {np.float64: 1e-6, np.float32: 1e-3}


@dataclass
class GradCase:
    name: str
    fn: Callable[..., T.Tensor]
    inputs: list[np.ndarray]
    sample: int | None = None


@dataclass
class GradResult:
    name: str
    dtype: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def _r(rng, *shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def micro_config() -> ModelConfig:
    """Two blocks over two stages: conv stem, conv-FFN, PAAS, GAP."""
    return ModelConfig(
        stage=StageSpec((1, 1, 0, 0), (16, 16, 0, 0), (2, 2, 0, 0), (8, 8, 0, 0)),
        embed_kind="conv_stem",
        ffn_kind="conv",
        pos_kind="paas",
        head_kind="gap",
        num_classes=3,
        image_size=16,
    )


def _micro_case(rng) -> GradCase:
    cfg = micro_config()
    names = list(parameter_shapes(cfg))
    params = init_parameters(cfg, seed=3, dtype=np.float64)
    arrays = [params[n].data + rng.normal(0.0, 0.1, size=params[n].shape) for n in names]
    img = rng.uniform(0.0, 1.0, size=(2, 3, 16, 16))
    labels = np.array([0, 2])

    def loss(x, *ps):
        model = Model(cfg, OrderedDict(zip(names, ps)))
        return F.cross_entropy(model(x), labels)

    return GradCase("network_2block", loss, [img, *arrays], sample=3)


def build_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    pos = lambda *s: _r(rng, *s, lo=0.5, hi=2.0)  # noqa: E731
    attn_params = {k: _r(rng, 8, 8) * 0.5 if k.endswith("_w") else _r(rng, 8) * 0.1 for k in
                   ("q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "o_w", "o_b")}
    keys = list(attn_params)

    def mhsa(x, wp, *ps):
        return A.mhsa_forward(x, dict(zip(keys, ps)), heads=2, w_p=wp)

    def window(x, wp, *ps):
        return A.local_window_attention(x, dict(zip(keys, ps)), window=2, heads=2, w_p=wp)

    ffn_c, ffn_h = 4, 8

    def conv_ffn(x, w1, b1, dw, db, w2, b2):
        return L.conv_ffn_forward(x, (3, 3), w1, b1, dw, db, w2, b2)

    def conv_ffn_cls(x, w1, b1, dw, db, w2, b2):
        return L.conv_ffn_forward(x, (2, 2), w1, b1, dw, db, w2, b2, skip_tokens=1)

    stem_keys = ["conv0.w", "conv0.b", "norm0.g", "norm0.b", "conv1.w", "conv1.b", "norm1.g", "norm1.b", "proj.w", "proj.b"]
    # norms over very few channels are near-discontinuous; keep widths >= 4
    stem_vals = [_r(rng, 4, 3, 3, 3) * 0.5, _r(rng, 4) * 0.1, pos(4), _r(rng, 4) * 0.1,
                 _r(rng, 8, 4, 3, 3) * 0.5, _r(rng, 8) * 0.1, pos(8), _r(rng, 8) * 0.1,
                 _r(rng, 8, 4), _r(rng, 4) * 0.1]

    def stem(img, *ps):
        return L.conv_stem_embed(img, dict(zip(stem_keys, ps)), 2)[0]

    def head(tokens, g, b, w, c):
        return L.classification_head(tokens, "gap", {"norm.g": g, "norm.b": b, "fc.w": w, "fc.b": c}, False)

    cases = [
        GradCase("add", lambda a, b: a + b, [_r(rng, 3, 4), _r(rng, 4)]),
        GradCase("sub", lambda a, b: a - b, [_r(rng, 3, 4), _r(rng, 3, 4)]),
        GradCase("mul", lambda a, b: a * b, [_r(rng, 3, 4), _r(rng, 1)]),
        GradCase("div", lambda a, b: a / b, [_r(rng, 3, 4), pos(3, 4)]),
        GradCase("neg", lambda a: -a, [_r(rng, 5)]),
        GradCase("power", lambda a: T.power(a, 3.0), [pos(2, 3)]),
        GradCase("exp", T.exp, [_r(rng, 2, 3)]),
        GradCase("log", T.log, [pos(2, 3)]),
        GradCase("sqrt", T.sqrt, [pos(2, 3)]),
        GradCase("matmul", T.matmul, [_r(rng, 2, 3, 4), _r(rng, 4, 5)]),
        GradCase("matmul_batched", T.matmul, [_r(rng, 2, 3, 4), _r(rng, 2, 4, 2)]),
        GradCase("reshape", lambda a: T.reshape(a, (6, 2)) * T.reshape(a, (6, 2)), [_r(rng, 3, 4)]),
        GradCase("transpose", lambda a: T.transpose(a, (2, 0, 1)) * T.transpose(a, (2, 0, 1)), [_r(rng, 2, 3, 4)]),
        GradCase("getitem", lambda a: a[:, 1:3] * a[:, 0:2], [_r(rng, 3, 4)]),
        GradCase("take", lambda a: T.take(a, np.array([0, 2, 2, 1]), axis=1) ** 2, [_r(rng, 2, 3)]),
        GradCase("concat", lambda a, b: T.concat([a, b * b], axis=1), [_r(rng, 2, 3), _r(rng, 2, 2)]),
        GradCase("sum", lambda a: T.tsum(a * a, axis=1), [_r(rng, 3, 4)]),
        GradCase("mean", lambda a: T.mean(a * a, axis=0, keepdims=True), [_r(rng, 3, 4)]),
        GradCase("linear", F.linear, [_r(rng, 3, 4), _r(rng, 4, 2), _r(rng, 2)]),
        GradCase("softmax", lambda a, w: F.softmax(a) * w, [_r(rng, 3, 5), _r(rng, 3, 5)]),
        GradCase("log_softmax", lambda a, w: F.log_softmax(a) * w, [_r(rng, 3, 5), _r(rng, 3, 5)]),
        GradCase("cross_entropy", lambda a: F.cross_entropy(a, np.array([0, 3, 1])), [_r(rng, 3, 4) * 2]),
        GradCase("layer_norm", lambda x, g, b, w: F.layer_norm(x, g, b) * w, [_r(rng, 3, 6), pos(6), _r(rng, 6), _r(rng, 3, 6)]),
        GradCase("gelu", F.gelu, [_r(rng, 4, 5, lo=-3, hi=3)]),
        GradCase("conv2d", lambda x, w, b: F.conv2d(x, w, b, stride=1, padding=1), [_r(rng, 1, 2, 5, 5), _r(rng, 3, 2, 3, 3), _r(rng, 3)]),
        GradCase("conv2d_strided", lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1), [_r(rng, 2, 2, 6, 6), _r(rng, 2, 2, 3, 3), _r(rng, 2)]),
        GradCase("conv2d_grouped", lambda x, w: F.conv2d(x, w, padding=1, groups=2), [_r(rng, 1, 4, 4, 4), _r(rng, 4, 2, 3, 3)]),
        GradCase("conv2d_depthwise", lambda x, w, b: F.conv2d(x, w, b, padding=1, groups=3), [_r(rng, 1, 3, 4, 4), _r(rng, 3, 1, 3, 3), _r(rng, 3)]),
        GradCase("avg_pool2d_odd", lambda x: F.avg_pool2d(x) * F.avg_pool2d(x), [_r(rng, 1, 2, 5, 3)]),
        GradCase("replicate_pad", lambda x: F.replicate_pad_to_multiple(x, 4) ** 2, [_r(rng, 1, 1, 3, 5)]),
        GradCase("sdp_attention", A.sdp_attention, [_r(rng, 2, 4, 3), _r(rng, 2, 4, 3), _r(rng, 2, 4, 3)]),
        GradCase("paas_attention", A.paas_attention, [_r(rng, 2, 4, 3), _r(rng, 2, 4, 3), _r(rng, 2, 4, 3), pos(2, 4, 4)]),
        GradCase("mhsa_paas", mhsa, [_r(rng, 1, 5, 8), pos(2, 5, 5), *attn_params.values()]),
        GradCase("local_window", window, [_r(rng, 1, 3, 3, 8), pos(2, 4, 4), *attn_params.values()]),
        GradCase("ffn", L.ffn_forward, [_r(rng, 1, 3, ffn_c), _r(rng, ffn_c, ffn_h), _r(rng, ffn_h), _r(rng, ffn_h, ffn_c), _r(rng, ffn_c)]),
        GradCase("conv_ffn", conv_ffn, [_r(rng, 1, 9, ffn_c), _r(rng, ffn_c, ffn_h), _r(rng, ffn_h), _r(rng, ffn_h, 1, 3, 3), _r(rng, ffn_h), _r(rng, ffn_h, ffn_c), _r(rng, ffn_c)]),
        GradCase("conv_ffn_cls", conv_ffn_cls, [_r(rng, 1, 5, ffn_c), _r(rng, ffn_c, ffn_h), _r(rng, ffn_h), _r(rng, ffn_h, 1, 3, 3), _r(rng, ffn_h), _r(rng, ffn_h, ffn_c), _r(rng, ffn_c)]),
        GradCase("conv_stem", stem, [_r(rng, 1, 3, 8, 8, lo=0.0), *stem_vals]),
        GradCase("pool_between_stages", lambda t, w, b: L.pool_between_stages(t, (3, 3), w, b)[0], [_r(rng, 1, 9, 4), _r(rng, 4, 6), _r(rng, 6)]),
        GradCase("gap_head", head, [_r(rng, 2, 4, 6), pos(6), _r(rng, 6), _r(rng, 6, 3), _r(rng, 3)]),
        _micro_case(rng),
    ]
    return cases


def _projected(fn: Callable[..., T.Tensor], seed: int) -> Callable[..., T.Tensor]:
    """``sum(fn(*xs) * R)`` for a fixed random ``R``, so every output entry carries a distinct weight."""

    def wrapped(*xs):
        out = fn(*xs)
        if out.size == 1:
            return out
        weights = np.random.default_rng(seed).uniform(-1.0, 1.0, size=out.shape).astype(out.dtype)
        return T.tsum(out * T.Tensor(weights))

    return wrapped


def run_gradcheck(seed: int = 0, dtypes=(np.float64, np.float32), h: float = 1e-5, log: Callable[[str], None] | None = None) -> list[GradResult]:
    """Check every case in every dtype; ``log`` receives one line per check."""
    results = []
    for case in build_cases(seed):
        for dtype in dtypes:
            start = time.perf_counter()
            err = finite_diff_check(_projected(case.fn, seed), case.inputs, h=h, dtype=dtype, sample=case.sample, rng=np.random.default_rng(seed))
            res = GradResult(case.name, np.dtype(dtype).name, err, TOLERANCE[dtype])
            results.append(res)
            if log is not None:
                status = "ok" if res.passed else "FAIL"
                log(f"{status:4s} {case.name:22s} {res.dtype:8s} rel_err={err:.3e} tol={res.tolerance:g} ({time.perf_counter() - start:.2f}s)")
    return results
