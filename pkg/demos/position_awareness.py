"""Position-aware attention scaling, in three small experiments.

1. With an all-ones importance matrix it is the plain attention, bit for bit.
2. Its logits factor into content (QK^T) times position (W_p).
3. A transformer with no positional signal cannot tell shuffled patches
   apart; a non-uniform W_p can.

Run: python3 demos/position_awareness.py
"""

from collections import OrderedDict

import numpy as np

from rvt.attention import attention_logits, paas_attention, sdp_attention
from rvt.model import ModelConfig, StageSpec, parameter_shapes
from rvt.model.network import Model
from rvt.numerics import Tensor

rng = np.random.default_rng(0)
q, k, v = (Tensor(rng.normal(size=(6, 8))) for _ in range(3))

plain = sdp_attention(q, k, v).data
scaled = paas_attention(q, k, v, Tensor(np.ones((6, 6)))).data
print("1. W_p = 1 vs plain attention, max |diff|:", np.abs(plain - scaled).max())

wp = rng.uniform(0.0, 2.0, size=(6, 6))
logits = attention_logits(q, k, Tensor(wp)).data
content = q.data @ k.data.T / np.sqrt(8)
print("2. logits / content equals W_p:", np.allclose(logits / content, wp))


def model(pos_kind: str) -> Model:
    cfg = ModelConfig(
        stage=StageSpec((0, 0, 2, 0), (0, 0, 32, 0), (0, 0, 2, 0), (0, 0, 16, 0)),
        embed_kind="linear", ffn_kind="plain", pos_kind=pos_kind, head_kind="gap", num_classes=5, image_size=64,
    )
    params = OrderedDict((n, Tensor(rng.uniform(0, 3, size=s) if rule == "ones" else rng.normal(0, 0.3, size=s)))
                         for n, (s, rule) in parameter_shapes(cfg).items())
    return Model(cfg, params)


def shuffle_patches(img, perm, patch=16):
    b, c, h, w = img.shape
    g = h // patch
    cells = img.reshape(b, c, g, patch, g, patch).transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c, patch, patch)[:, perm]
    return cells.reshape(b, g, g, c, patch, patch).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)


img = rng.uniform(size=(1, 3, 64, 64))
perm = rng.permutation(16)
for kind in ("none", "paas"):
    m = model(kind)
    delta = np.abs(m(img).data - m(shuffle_patches(img, perm)).data).max()
    print(f"3. pos_kind={kind:5s} logit change after shuffling patches: {delta:.2e}")
