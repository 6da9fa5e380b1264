"""Grayscale images, patch bookkeeping, seeded noise and quality metrics.

Images are 2-D float64 arrays of shape ``(height, width)`` in display
range [0, 255]. Patches are vectorized column-major (``patch.ravel("F")``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError

__all__ = [
    "PatchGrid",
    "as_image",
    "patch_count",
    "extract_patches",
    "assemble_patches",
    "SplitMix64",
    "gaussian_noise",
    "add_gaussian_noise",
    "psnr",
    "ssim",
    "load_image",
    "save_image",
    "PRNG_NAME",
]

PRNG_NAME = "splitmix64+marsaglia-polar"


def as_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


# -- patches -----------------------------------------------------------------


@dataclass(frozen=True)
class PatchGrid:
    """Where each patch column came from.

    ``origins`` holds the top-left ``(row, col)`` of each patch in row-major
    order; ``means`` the removed per-patch means (zeros when none removed).
    """

    patch_size: int
    stride: int
    shape: tuple
    origins: np.ndarray
    means: np.ndarray

    @property
    def n_patches(self):
        return len(self.origins)

    @property
    def grid_shape(self):
        h, w = self.shape
        p, st = self.patch_size, self.stride
        return (h - p) // st + 1, (w - p) // st + 1


def patch_count(height, width, p, stride):
    return ((width - p) // stride + 1) * ((height - p) // stride + 1)


def extract_patches(img, p, stride=1, subtract_mean=False):
    """Vectorize all ``p x p`` patches on a regular grid.

    Returns ``(y, grid)`` with ``y`` of shape ``(p * p, n_patches)``.
    """
    img = as_image(img)
    p, stride = int(p), int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if p < 1 or p > min(img.shape):
        raise ValueError(f"patch size {p} does not fit image of shape {img.shape}")
    win = sliding_window_view(img, (p, p))[::stride, ::stride]
    nr, nc = win.shape[:2]
    # (nr, nc, p, p) -> column-major vectors, one column per patch
    y = win.transpose(3, 2, 0, 1).reshape(p * p, nr * nc).copy()
    rr, cc = np.meshgrid(np.arange(nr) * stride, np.arange(nc) * stride, indexing="ij")
    origins = np.stack([rr.ravel(), cc.ravel()], axis=1)
    if subtract_mean:
        means = y.mean(axis=0)
        y -= means
    else:
        means = np.zeros(y.shape[1])
    return y, PatchGrid(p, stride, img.shape, origins, means)


def assemble_patches(patches, grid, fill=None):
    """Average overlapping patches back into an image.

    Means recorded in ``grid`` are added back first. Pixels covered by no
    patch take their value from ``fill`` (an image) or 0.
    """
    patches = np.asarray(patches, dtype=np.float64)
    p = grid.patch_size
    if patches.shape != (p * p, grid.n_patches):
        raise DimensionError(f"patches shape {patches.shape} does not match grid ({p * p}, {grid.n_patches})")
    nr, nc = grid.grid_shape
    st = grid.stride
    vals = (patches + grid.means).reshape(p, p, nr, nc)  # [col-in-patch, row-in-patch, ...]
    acc = np.zeros(grid.shape)
    cnt = np.zeros(grid.shape)
    for j in range(p):
        for i in range(p):
            sl = (slice(i, i + st * (nr - 1) + 1, st), slice(j, j + st * (nc - 1) + 1, st))
            acc[sl] += vals[j, i]
            cnt[sl] += 1
    covered = cnt > 0
    out = np.zeros(grid.shape) if fill is None else as_image(fill).copy()
    out[covered] = acc[covered] / cnt[covered]
    return out


# -- noise -------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """SplitMix64 counter generator.

    Output ``k`` (0-based) is ``mix(seed + (k + 1) * 0x9E3779B97F4A7C15)``
    with the standard Stafford variant-13 mixer; uniforms in [0, 1) take the
    top 53 bits. Being counter based, any block of the stream is computed
    without touching earlier outputs.
    """

    def __init__(self, seed):
        self.state = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def next_uint64(self, size):
        k = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = self.state + k * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, size):
        return (self.next_uint64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def gaussian_noise(shape, seed):
    """Standard normal field by Marsaglia's polar method.

    Uniform pairs ``(u1, u2)`` are mapped to ``a = 2 u - 1``; a pair is kept
    when ``0 < a1^2 + a2^2 < 1`` and yields ``a1 f, a2 f`` with
    ``f = sqrt(-2 ln q / q)``, in stream order.
    """
    size = int(np.prod(shape))
    gen = SplitMix64(seed)
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = (size - filled + 1) // 2
        batch = int(need * 1.3) + 16
        u = gen.uniform(2 * batch).reshape(batch, 2)
        a = 2.0 * u - 1.0
        q = a[:, 0] ** 2 + a[:, 1] ** 2
        ok = (q > 0) & (q < 1)
        a, q = a[ok], q[ok]
        if len(q) > need:
            # rewind the counter so unused pairs are not skipped
            last = np.flatnonzero(ok)[need - 1]
            gen.counter -= 2 * (batch - last - 1)
            a, q = a[:need], q[:need]
        z = (a * np.sqrt(-2.0 * np.log(q) / q)[:, None]).ravel()
        take = min(size - filled, z.size)
        out[filled:filled + take] = z[:take]
        filled += take
    return out.reshape(shape)


def add_gaussian_noise(img, sigma_noise, seed):
    """Add i.i.d. ``N(0, sigma_noise^2)`` noise; no clipping."""
    img = as_image(img)
    if sigma_noise < 0:
        raise ValueError("sigma_noise must be >= 0")
    if sigma_noise == 0:
        return img.copy()
    return img + sigma_noise * gaussian_noise(img.shape, seed)


# -- metrics -----------------------------------------------------------------


def _same_shape(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def _box_mean(img, win):
    # mean over every win x win window (valid positions only)
    c = np.pad(np.cumsum(np.cumsum(img, axis=0), axis=1), ((1, 0), (1, 0)))
    s = c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]
    return s / (win * win)


def ssim(a, b, win=8, k1=0.01, k2=0.03, data_range=255.0):
    """Mean SSIM over all ``win x win`` windows with uniform weights.

    Local statistics use population (1/N) normalization.
    """
    a, b = _same_shape(a, b)
    if win > min(a.shape):
        raise ValueError("window larger than image")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    # centre to limit cancellation in the second moments
    off = 0.5 * (a.mean() + b.mean())
    a, b = a - off, b - off
    mu_a, mu_b = _box_mean(a, win), _box_mean(b, win)
    va = _box_mean(a * a, win) - mu_a**2
    vb = _box_mean(b * b, win) - mu_b**2
    cov = _box_mean(a * b, win) - mu_a * mu_b
    mu_a, mu_b = mu_a + off, mu_b + off
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (va + vb + c2)
    return float(np.mean(num / den))


# -- file I/O ----------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm(data):
    if data[:2] != b"P5":
        raise ValueError(f"unsupported image format (magic {data[:2]!r}); expected binary PGM 'P5'")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError("malformed PGM header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ValueError("malformed PGM header") from exc
    if maxval != 255:
        raise ValueError(f"unsupported PGM bit depth (maxval {maxval}); only 255 is supported")
    if width < 1 or height < 1:
        raise ValueError("malformed PGM header")
    pos += 1  # single whitespace after maxval
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise ValueError("truncated PGM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).astype(np.float64)


def load_image(path):
    """Read an 8-bit grayscale image (binary PGM, or PNG via Pillow)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                raise ValueError(f"unsupported PNG mode {im.mode}; expected 8-bit grayscale")
            return np.asarray(im.convert("L"), dtype=np.float64)
    return _read_pgm(data)


def save_image(img, path):
    """Write an image, clamped and rounded to 8 bits; PNG by suffix, else PGM."""
    img = as_image(img)
    u8 = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(u8, mode="L").save(path)
        return
    h, w = u8.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + u8.tobytes())
