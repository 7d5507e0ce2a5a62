"""Shared test oracles: finite differences and direct-loop layer references.

These stay deliberately naive (nested loops, no shared code with the
package) so they can serve as independent ground truth.
"""

from __future__ import annotations

import numpy as np


def fd_grad(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. every entry of arr (in place)."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        lp = f()
        flat[i] = orig - step
        lm = f()
        flat[i] = orig
        gf[i] = (lp - lm) / (2.0 * step)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Normalized max error: ||a - b||_inf / max(||a||_inf, ||b||_inf, floor).

    The denominator uses the tensor scale rather than per-entry magnitudes so
    that near-zero entries (where central differences are pure roundoff) do
    not dominate.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b))) / scale


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int, padding: int, dilation: int) -> np.ndarray:
    """Direct quintuple-loop convolution; the independent oracle."""
    n, c_in, h, wdt = x.shape
    c_out, _, k_h, k_w = w.shape
    h_out = (h + 2 * padding - dilation * (k_h - 1) - 1) // stride + 1
    w_out = (wdt + 2 * padding - dilation * (k_w - 1) - 1) // stride + 1
    xp = np.zeros((n, c_in, h + 2 * padding, wdt + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + wdt] = x
    y = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for i in range(n):
        for o in range(c_out):
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = b[o]
                    for j in range(c_in):
                        for u in range(k_h):
                            for v in range(k_w):
                                acc += w[o, j, u, v] * xp[i, j, oy * stride + u * dilation,
                                                          ox * stride + v * dilation]
                    y[i, o, oy, ox] = acc
    return y


def conv2d_reference_undilated(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                               stride: int, padding: int) -> np.ndarray:
    """Same direct convolution written with no dilation logic at all."""
    n, c_in, h, wdt = x.shape
    c_out, _, k_h, k_w = w.shape
    h_out = (h + 2 * padding - k_h) // stride + 1
    w_out = (wdt + 2 * padding - k_w) // stride + 1
    xp = np.zeros((n, c_in, h + 2 * padding, wdt + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + wdt] = x
    y = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for i in range(n):
        for o in range(c_out):
            for oy in range(h_out):
                for ox in range(w_out):
                    patch = xp[i, :, oy * stride: oy * stride + k_h, ox * stride: ox * stride + k_w]
                    y[i, o, oy, ox] = b[o] + float((patch * w[o]).sum())
    return y


def maxpool2x_reference(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    y = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for i in range(n):
        for j in range(c):
            for oy in range(h // 2):
                for ox in range(w // 2):
                    y[i, j, oy, ox] = x[i, j, 2 * oy: 2 * oy + 2, 2 * ox: 2 * ox + 2].max()
    return y


def bilinear_reference(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel half-pixel-center bilinear interpolation (2-D arrays)."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0 = int(np.floor(sy))
        fy = sy - y0
        y1 = min(y0 + 1, in_h - 1)
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0 = int(np.floor(sx))
            fx = sx - x0
            x1 = min(x0 + 1, in_w - 1)
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out


def confusion_reference(pred: np.ndarray, target: np.ndarray, threshold: float) -> tuple[int, int, int, int]:
    """Per-pixel loop tally -> (tp, fp, tn, fn)."""
    tp = fp = tn = fn = 0
    for p, t in zip(pred.reshape(-1), target.reshape(-1)):
        pos = p > threshold
        truth = t > 0.5
        if pos and truth:
            tp += 1
        elif pos:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def adam_scalar_reference(p0: float, grads: list[float], lr: float,
                          beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> float:
    """Hand-stepped scalar Adam, written directly from the update equations."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def residual_arch_count_reference(in_channels: int, widths: list[int]) -> int:
    """Analytic per-layer parameter sum for the residual encoder/decoder nets."""
    def unit(c_in, c_out, has_shortcut):
        total = 2 * c_in  # first norm
        total += 9 * c_in * c_out + c_out  # conv1
        total += 2 * c_out  # second norm
        total += 9 * c_out * c_out + c_out  # conv2
        if has_shortcut:
            total += c_in * c_out + c_out
        return total

    w = widths
    total = unit(in_channels, w[0], in_channels != w[0])  # stride-1 entry block
    total += unit(w[0], w[1], True)
    total += unit(w[1], w[2], True)
    total += unit(w[2], w[3], True)
    total += unit(w[3] + w[2], w[2], True)
    total += unit(w[2] + w[1], w[1], True)
    total += unit(w[1] + w[0], w[0], True)
    total += w[0] * 1 + 1  # 1x1 head
    return total


def unet_count_reference(in_channels: int, widths5: list[int]) -> int:
    w = widths5

    def double(c_in, c_mid):
        return (9 * c_in * c_mid + c_mid) + (9 * c_mid * c_mid + c_mid)

    total = double(in_channels, w[0]) + double(w[0], w[1]) + double(w[1], w[2]) + double(w[2], w[3])
    total += double(w[3], w[4])
    prev = w[4]
    for lvl in (3, 2, 1, 0):
        total += 4 * prev * w[lvl] + w[lvl]  # 2x2 transposed conv
        total += double(2 * w[lvl], w[lvl])
        prev = w[lvl]
    total += w[0] + 1
    return total
