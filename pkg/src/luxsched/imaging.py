"""Scene-linear images, co-located light synthesis/decomposition and fidelity metrics.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)`` holding linear
radiance (row-major, channel-interleaved).  A :class:`Decomposition` splits
an image into an ambient part and a co-located light part so that::

    image(k) = ambient + k * light_map[..., None] * light_color
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegeneratePairError,
    DimensionMismatchError,
    InvalidDecompositionError,
    NonPhysicalLightError,
    ValidationError,
)

SATURATION_LEVEL = 0.98
DARK_LEVEL = 0.02
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def as_image(data, name="image"):
    """Validate and return ``data`` as a float64 ``(H, W, 3)`` array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name} contains non-finite values")
    return img


def luminance(img):
    """Per-pixel mean of the three channels."""
    img = np.asarray(img, dtype=np.float64)
    return (img[..., 0] + img[..., 1] + img[..., 2]) / 3.0


def _same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Ambient image plus a scalar light map and a unit-sum light color."""

    ambient: np.ndarray
    light_map: np.ndarray
    light_color: np.ndarray

    def __post_init__(self):
        ambient = np.asarray(self.ambient, dtype=np.float64)
        light_map = np.asarray(self.light_map, dtype=np.float64)
        color = np.asarray(self.light_color, dtype=np.float64).reshape(-1)
        if ambient.ndim != 3 or ambient.shape[2] != 3:
            raise InvalidDecompositionError(f"ambient must be (H, W, 3), got {ambient.shape}")
        if light_map.shape != ambient.shape[:2]:
            raise InvalidDecompositionError(
                f"light_map shape {light_map.shape} does not match ambient {ambient.shape[:2]}"
            )
        if color.shape != (3,):
            raise InvalidDecompositionError("light_color must have three entries")
        for arr in (ambient, light_map, color):
            if not np.all(np.isfinite(arr)):
                raise InvalidDecompositionError("decomposition contains non-finite values")
        if np.any(light_map < 0):
            raise InvalidDecompositionError("light_map must be nonnegative")
        if np.any(color < 0) or abs(color.sum() - 1.0) > 1e-9:
            raise InvalidDecompositionError("light_color must be nonnegative and sum to 1")
        object.__setattr__(self, "ambient", ambient)
        object.__setattr__(self, "light_map", light_map)
        object.__setattr__(self, "light_color", color)

    @property
    def shape(self):
        return self.ambient.shape

    def light_field(self):
        """The per-pixel RGB light contribution at full intensity."""
        return self.light_map[..., None] * self.light_color


def relight(d: Decomposition, k: float) -> np.ndarray:
    """Synthesize the pre-clip image under light intensity ``k`` in [0, 1]."""
    if not isinstance(d, Decomposition):
        raise InvalidDecompositionError("relight expects a Decomposition")
    k = float(k)
    if not 0.0 <= k <= 1.0:
        raise ValidationError(f"intensity {k} outside [0, 1]")
    if k == 0.0:
        # light off: exactly the ambient image, no -0.0 + 0.0 rounding
        return d.ambient.copy()
    return d.ambient + k * d.light_field()


def clip_sensor(img) -> np.ndarray:
    """Fixed-exposure sensor response: clamp every channel to [0, 1]."""
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)


def decompose_paired(i1, k1, i2, k2, clip_mask=None, saturation=1.0) -> Decomposition:
    """Recover a :class:`Decomposition` from two captures at light levels ``k1 != k2``.

    The difference image divided by ``k2 - k1`` is the light field, which is
    factorized as the best rank-1 approximation of the ``(H*W, 3)`` matrix
    of its pixels.  Pixels with any channel at or above ``saturation`` in
    either input (or flagged in ``clip_mask``) are left out of the fit; the
    ambient at those pixels is back-filled as ``max(i1 - k1 * light, 0)``.
    """
    i1 = as_image(i1, "i1")
    i2 = as_image(i2, "i2")
    _same_shape(i1, i2)
    k1, k2 = float(k1), float(k2)
    if k1 == k2:
        raise DegeneratePairError(f"degenerate pair: both captures at k={k1}")
    h, w, _ = i1.shape

    if clip_mask is None:
        clipped = np.any(i1 >= saturation, axis=2) | np.any(i2 >= saturation, axis=2)
    else:
        clipped = np.asarray(clip_mask, dtype=bool)
        if clipped.shape != (h, w):
            raise DimensionMismatchError(f"clip_mask shape {clipped.shape} != {(h, w)}")

    field = (i2 - i1) / (k2 - k1)
    rows = field.reshape(-1, 3)
    fit_rows = rows[~clipped.reshape(-1)]

    if fit_rows.size == 0 or not np.any(fit_rows):
        color = np.full(3, 1.0 / 3.0)
        light_map = np.zeros((h, w))
        return Decomposition(i1.copy(), light_map, color)

    _, sigma, vt = np.linalg.svd(fit_rows, full_matrices=False)
    v = vt[0]
    if v.sum() < 0:
        v = -v
    scale = np.abs(v).max()
    if v.min() < -1e-6 * scale:
        raise NonPhysicalLightError(f"dominant light direction has negative channels: {v}")
    v = np.clip(v, 0.0, None)
    color = v / v.sum()

    # least-squares light intensity per pixel given the color direction
    s = rows @ color / (color @ color)
    if s[~clipped.reshape(-1)].sum() < 0:
        raise NonPhysicalLightError("light contribution is predominantly negative")
    light_map = np.clip(s, 0.0, None).reshape(h, w)

    ambient = i1 - k1 * (light_map[..., None] * color)
    if clipped.any():
        ambient[clipped] = np.maximum(ambient[clipped], 0.0)
    return Decomposition(ambient, light_map, color)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; ``inf`` for identical images."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _window_means(x, size):
    # integral image: mean over every size x size window, stride 1
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    c[1:, 1:] = x.cumsum(0).cumsum(1)
    s = c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]
    return s / (size * size)


def ssim(a, b, window=SSIM_WINDOW) -> float:
    """Mean structural similarity of the luminance channels over all 8x8 windows.

    Window statistics use uniform weights (population variance).
    """
    a = as_image(a, "a")
    b = as_image(b, "b")
    _same_shape(a, b)
    if min(a.shape[:2]) < window:
        raise ValidationError(f"image smaller than the {window}x{window} SSIM window")
    la, lb = luminance(a), luminance(b)
    mu_a = _window_means(la, window)
    mu_b = _window_means(lb, window)
    var_a = np.maximum(_window_means(la * la, window) - mu_a**2, 0.0)
    var_b = np.maximum(_window_means(lb * lb, window) - mu_b**2, 0.0)
    cov = _window_means(la * lb, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


class LuminanceStats(NamedTuple):
    mean_luminance: float
    saturated_fraction: float
    dark_fraction: float
    gradient_energy: float


def gradient_magnitude(lum):
    """Forward-difference gradient magnitude on the ``(H-1, W-1)`` interior."""
    gx = lum[:-1, 1:] - lum[:-1, :-1]
    gy = lum[1:, :-1] - lum[:-1, :-1]
    return np.sqrt(gx * gx + gy * gy)


def luminance_stats(img) -> LuminanceStats:
    """Summary statistics of a clipped image used by the cost terms and the policy."""
    img = as_image(img)
    lum = luminance(img)
    saturated = np.any(img >= SATURATION_LEVEL, axis=2)
    dark = np.all(img <= DARK_LEVEL, axis=2)
    if lum.shape[0] > 1 and lum.shape[1] > 1:
        grad = float(np.mean(gradient_magnitude(lum)))
    else:
        grad = 0.0
    return LuminanceStats(
        mean_luminance=float(lum.mean()),
        saturated_fraction=float(saturated.mean()),
        dark_fraction=float(dark.mean()),
        gradient_energy=min(max(grad / 0.5, 0.0), 1.0),
    )


def delta_luminance_pct(pred, ref) -> float:
    """Absolute mean-luminance change relative to ``ref``, in percent."""
    ref_lum = luminance(as_image(ref, "ref")).mean()
    pred_lum = luminance(as_image(pred, "pred")).mean()
    if ref_lum == 0:
        return 0.0 if pred_lum == 0 else float("inf")
    return float(abs(pred_lum - ref_lum) / ref_lum * 100.0)


class FidelityReport(NamedTuple):
    psnr: float
    ssim: float
    delta_luminance_pct: float


def fidelity(pred, ref) -> FidelityReport:
    return FidelityReport(psnr(pred, ref), ssim(pred, ref), delta_luminance_pct(pred, ref))
