"""Image arrays, one-pixel shifts, patch cropping and quality metrics.

Images are float arrays of shape (H, W, 3) with values in [0, 1].  Every
function here is pure and never mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.signal import convolve2d

PSNR_CAP = 100.0
MIN_PIPELINE_SIZE = 8


class InvalidImageError(ValueError):
    """Raised when an image or region does not satisfy an operation's contract."""


@dataclass(frozen=True)
class PatchLocation:
    x: int  # column offset
    y: int  # row offset
    size: int

    def fits(self, height: int, width: int) -> bool:
        return (self.x >= 0 and self.y >= 0 and self.size > 0
                and self.x + self.size <= width and self.y + self.size <= height)


@dataclass(frozen=True)
class ShiftVector:
    dx: int
    dy: int  # positive is down, so "up" is dy = -1

    def __post_init__(self):
        if self.dx not in (-1, 0, 1) or self.dy not in (-1, 0, 1):
            raise InvalidImageError(f"shift components must be in {{-1,0,1}}, got {self}")

    @property
    def is_zero(self) -> bool:
        return self.dx == 0 and self.dy == 0

    def reversed(self) -> "ShiftVector":
        return ShiftVector(-self.dx, -self.dy)


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[top:top+height, left:left+width]``."""

    top: int
    left: int
    height: int
    width: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.top, self.top + self.height),
                slice(self.left, self.left + self.width))

    def intersect(self, other: "Region") -> "Region":
        top = max(self.top, other.top)
        left = max(self.left, other.left)
        bottom = min(self.top + self.height, other.top + other.height)
        right = min(self.left + self.width, other.left + other.width)
        return Region(top, left, max(bottom - top, 0), max(right - left, 0))


def as_image(arr, name: str = "image") -> np.ndarray:
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidImageError(f"{name} must have shape (H, W, 3), got {img.shape}")
    return img


def shift_image(img, v: ShiftVector) -> tuple[np.ndarray, Region]:
    """Translate ``img`` by one pixel along ``v``.

    The returned array has the input's shape; ``shifted[y, x] = img[y - dy, x - dx]``
    inside the returned overlap region and NaN outside it.  Comparisons against
    the original must be restricted to ``overlap``.
    """
    img = as_image(img)
    if v.is_zero:
        raise InvalidImageError("shift vector must be nonzero")
    h, w = img.shape[:2]
    if h <= 1 or w <= 1:
        raise InvalidImageError(f"degenerate overlap for a {h}x{w} image")
    oh, ow = h - abs(v.dy), w - abs(v.dx)
    overlap = Region(max(v.dy, 0), max(v.dx, 0), oh, ow)
    src = Region(max(-v.dy, 0), max(-v.dx, 0), oh, ow)
    shifted = np.full_like(img, np.nan)
    shifted[overlap.slices] = img[src.slices]
    return shifted, overlap


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1.0, clipped at ``cap``."""
    err = mse(a, b)
    if err == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / err), cap)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window, valid windows only, averaged over channels."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    if a.shape != b.shape:
        raise InvalidImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < window:
        raise InvalidImageError(f"SSIM needs images of at least {window}x{window}, got {a.shape[:2]}")
    c1, c2 = k1 ** 2, k2 ** 2
    win = gaussian_window(window, sigma)

    def filt(x):
        return convolve2d(x, win, mode="valid")

    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x, mu_y = filt(x), filt(y)
        var_x = filt(x * x) - mu_x ** 2
        var_y = filt(y * y) - mu_y ** 2
        cov = filt(x * y) - mu_x * mu_y
        smap = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
        scores.append(smap.mean())
    return float(np.mean(scores))


def crop_patch(img, loc: PatchLocation) -> np.ndarray:
    img = np.asarray(img)
    if not loc.fits(img.shape[0], img.shape[1]):
        raise InvalidImageError(f"{loc} is out of bounds for a {img.shape[0]}x{img.shape[1]} image")
    return img[loc.y:loc.y + loc.size, loc.x:loc.x + loc.size].copy()


def paste_patch(img, patch, loc: PatchLocation) -> np.ndarray:
    """Return a copy of ``img`` with ``patch`` written at ``loc``."""
    out = np.array(img, copy=True)
    if not loc.fits(out.shape[0], out.shape[1]):
        raise InvalidImageError(f"{loc} is out of bounds for a {out.shape[0]}x{out.shape[1]} image")
    out[loc.y:loc.y + loc.size, loc.x:loc.x + loc.size] = patch
    return out


def load_png(path) -> np.ndarray:
    with PILImage.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(img) -> np.ndarray:
    img = np.clip(as_image(img), 0.0, 1.0)
    return np.rint(img * 255.0).astype(np.uint8)


def save_png(img, path) -> None:
    PILImage.fromarray(to_uint8(img)).save(Path(path))
