"""Reference values for the unit tests, computed with numpy/torch/skimage.

Run from the repository root:  python3 tests/oracles/gen_oracles.py
Writes tests/oracles/expected.json. Probe clips are analytic so the C++
tests rebuild them bit-for-bit (computed in double, rounded to float32).
"""
import json
import math
import pathlib
import struct

import mpmath
import numpy as np
import torch
import torch.nn.functional as F
from skimage.metrics import structural_similarity

ROOT = pathlib.Path(__file__).resolve().parents[2]


def probe(kind, t_len, h, w):
    t, y, x, c = np.meshgrid(np.arange(t_len), np.arange(h), np.arange(w), np.arange(3), indexing="ij")
    t, y, x, c = (a.astype(np.float64) for a in (t, y, x, c))
    va = 0.8 * np.sin(0.37 * x + 0.23 * y + 0.5 * c + 0.9 * t)
    vb = 0.6 * np.cos(0.19 * x - 0.41 * y + 0.3 * c) + 0.1 * t - 0.05 * c
    v = {"a": va, "b": vb, "c": 0.7 * va + 0.3 * vb}[kind]
    return v.astype(np.float32)  # (T, H, W, 3)


def read_container(path):
    raw = path.read_bytes()
    assert raw[:4] == b"CDT1"
    version, dtype, rank = struct.unpack_from("<III", raw, 4)
    assert version == 1 and dtype == 1
    shape = struct.unpack_from("<" + "Q" * rank, raw, 16)
    off = 16 + 8 * rank
    data = np.frombuffer(raw, dtype="<f4", offset=off)
    assert data.size == int(np.prod(shape))
    return data.reshape(shape)


def first_layer_bank():
    smooth = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])
    dx = np.outer([1, 2, 1], [-1, 0, 1])
    dy = np.outer([-1, 0, 1], [1, 2, 1])
    lap = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
    lum, rg, yb = [1 / 3] * 3, [0.5, -0.5, 0.0], [0.25, 0.25, -0.5]
    filters = []
    for mix, k in [(lum, smooth), (lum, dx), (lum, dy), (lum, lap), (rg, smooth), (rg, dx), (rg, dy),
                   (yb, smooth), (yb, dx), (yb, dy)]:
        f = np.stack([m * k for m in mix])
        f /= np.linalg.norm(f)
        filters += [f, -f]
    return np.stack(filters)  # (20, 3, 3, 3)


def perceptual(weights, biases, a, b):
    def feats(v):
        x = torch.from_numpy(v.astype(np.float64)).permute(0, 3, 1, 2)  # frames as batch, (T, 3, H, W)
        out = []
        for l, (w, bias) in enumerate(zip(weights, biases)):
            if l > 0:
                x = F.avg_pool2d(x, 2)
            x = F.relu(F.conv2d(x, torch.from_numpy(w[:, :, 0].astype(np.float64)),
                                torch.from_numpy(bias.astype(np.float64)), padding=1))
            out.append(x)
        return out

    total = 0.0
    for fa, fb in zip(feats(a), feats(b)):
        na = fa / torch.sqrt((fa * fa).sum(1, keepdim=True) + 1e-6)
        nb = fb / torch.sqrt((fb * fb).sum(1, keepdim=True) + 1e-6)
        total += fa.shape[1] * ((na - nb) ** 2).mean().item()
    return total


def ssim_ref(a, b):
    x, y = (a.astype(np.float64) + 1) / 2, (b.astype(np.float64) + 1) / 2
    vals = []
    for t in range(a.shape[0]):
        for c in range(3):
            # skimage crops a (win-1)/2 border, matching the valid-window mean.
            vals.append(structural_similarity(x[t, :, :, c], y[t, :, :, c], gaussian_weights=True, sigma=1.5,
                                              use_sample_covariance=False, data_range=1.0, win_size=11))
    return float(np.mean(vals))


def psnr_ref(a, b):
    x, y = (a.astype(np.float64) + 1) / 2, (b.astype(np.float64) + 1) / 2
    return 10 * math.log10(1.0 / np.mean((x - y) ** 2))


def alpha_bar_ref(t, steps):
    mpmath.mp.dps = 40
    s = mpmath.mpf("0.008")
    f = lambda u: mpmath.cos((u + s) / (1 + s) * mpmath.pi / 2) ** 2
    bar = mpmath.mpf(1)
    for i in range(1, t + 1):
        beta = min(1 - f(mpmath.mpf(i) / steps) / f(mpmath.mpf(i - 1) / steps), mpmath.mpf("0.999"))
        bar *= 1 - beta
    return float(bar)


def main():
    pdir = ROOT / "assets" / "perceptual"
    weights = [read_container(pdir / f"conv{l}_weight.cdt") for l in (1, 2, 3)]
    biases = [read_container(pdir / f"conv{l}_bias.cdt") for l in (1, 2, 3)]
    bank_err = float(np.abs(weights[0][:, :, 0] - first_layer_bank()).max())
    assert bank_err < 1e-6, bank_err
    for w in weights[1:]:
        rows = w.reshape(w.shape[0], -1).astype(np.float64)
        assert np.abs(rows.mean(1)).max() < 1e-6 and np.abs(np.linalg.norm(rows, axis=1) - 1).max() < 1e-5

    a16, b16 = probe("a", 2, 16, 16), probe("b", 2, 16, 16)
    a24, b24, c24 = probe("a", 2, 24, 24), probe("b", 2, 24, 24), probe("c", 2, 24, 24)
    c16 = probe("c", 2, 16, 16)
    expected = {
        "perceptual": {"shape": [2, 16, 16], "a_b": perceptual(weights, biases, a16, b16),
                       "a_a": perceptual(weights, biases, a16, a16),
                       "a_c": perceptual(weights, biases, a16, c16)},
        "ssim": {"shape": [2, 24, 24], "a_b": ssim_ref(a24, b24), "a_a": ssim_ref(a24, a24),
                 "a_c": ssim_ref(a24, c24)},
        "psnr": {"shape": [2, 24, 24], "a_b": psnr_ref(a24, b24), "a_c": psnr_ref(a24, c24)},
        "alpha_bar": {str(T): {str(t): alpha_bar_ref(t, T) for t in (1, 2, T // 2, T - 1, T)} for T in (16, 1024)},
    }
    out = ROOT / "tests" / "oracles" / "expected.json"
    out.write_text(json.dumps(expected, indent=2) + "\n")
    print(json.dumps(expected, indent=2))


if __name__ == "__main__":
    main()
