"""Weak and strong views for vector data and small raster images.

Images are float arrays of shape (H, W, C) with C in {1, 3} and values in
[0, 1]. Every transform returns a new array of the same shape, clipped to
[0, 1]. Geometric transforms sample bilinearly and fill uncovered pixels
with 0.
"""
from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "vector"
    sigma_weak: float = 0.05
    sigma_strong: float = None  # defaults to 4 * sigma_weak
    dropout: float = 0.1
    pad: int = 4
    flip_p: float = 0.5
    n_ops: int = 2

    def __post_init__(self):
        if self.kind not in ("vector", "image"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.sigma_strong is None:
            object.__setattr__(self, "sigma_strong", 4.0 * self.sigma_weak)
        if self.sigma_weak < 0 or (self.sigma_weak > 0 and not self.sigma_strong > self.sigma_weak):
            raise ValueError("need sigma_strong > sigma_weak >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return img


def _clip(img):
    return np.clip(img, 0.0, 1.0)


def _gray(img):
    if img.shape[2] == 1:
        return img
    return (img @ LUMA)[..., None]


def _blend(img, other, factor):
    # factor 1 returns img exactly
    return _clip(img * factor + other * (1.0 - factor))


def _sample(img, sx, sy):
    """Bilinear lookup of ``img`` at source coordinates; outside reads as 0."""
    H, W, _ = img.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    wx = sx - x0
    wy = sy - y0
    out = np.zeros(sx.shape + (img.shape[2],))
    for dy, fy in ((0, 1.0 - wy), (1, wy)):
        for dx, fx in ((0, 1.0 - wx), (1, wx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            vals = np.zeros_like(out)
            vals[ok] = img[yi[ok], xi[ok]]
            out += vals * (fx * fy)[..., None]
    return _clip(out)


def _grid(img):
    H, W, _ = img.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    return xs, ys


# --- the fourteen RandAugment transforms ----------------------------------------

def autocontrast(img, _=None):
    lo = img.min(axis=(0, 1), keepdims=True)
    hi = img.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.where(span > 0, (img - lo) / np.where(span > 0, span, 1.0), img)
    return _clip(out)


def brightness(img, B):
    return _blend(img, np.zeros_like(img), B)


def color(img, C):
    return _blend(img, np.broadcast_to(_gray(img), img.shape), C)


def contrast(img, C):
    return _blend(img, np.full_like(img, _gray(img).mean()), C)


def equalize(img, _=None):
    q = np.round(img * 255).astype(np.int64)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        ch = q[..., c]
        hist = np.bincount(ch.ravel(), minlength=256)
        nz = hist[hist > 0]
        step = (nz.sum() - nz[-1]) // 255 if nz.size else 0
        if step == 0:
            out[..., c] = img[..., c]
            continue
        lut = (np.concatenate([[0], np.cumsum(hist)[:-1]]) + step // 2) // step
        out[..., c] = np.minimum(lut, 255)[ch] / 255.0
    return _clip(out)


def identity(img, _=None):
    return img.copy()


def posterize(img, B):
    B = int(B)
    q = np.round(img * 255).astype(np.uint8)
    mask = np.uint8((0xFF << (8 - B)) & 0xFF)
    return (q & mask) / 255.0


def rotate(img, theta):
    H, W, _ = img.shape
    xs, ys = _grid(img)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    t = np.deg2rad(theta)
    c, s = np.cos(t), np.sin(t)
    dx, dy = xs - cx, ys - cy
    # inverse map: output pixel pulls from the input rotated by -theta
    sx = c * dx + s * dy + cx
    sy = -s * dx + c * dy + cy
    return _sample(img, sx, sy)


def sharpness(img, S):
    H, W, _ = img.shape
    blurred = img.copy()
    if H > 2 and W > 2:
        k = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0
        acc = np.zeros((H - 2, W - 2, img.shape[2]))
        for i in range(3):
            for j in range(3):
                acc += k[i, j] * img[i:i + H - 2, j:j + W - 2]
        blurred[1:-1, 1:-1] = acc
    return _blend(img, blurred, S)


def shear_x(img, R):
    xs, ys = _grid(img)
    return _sample(img, xs + R * ys, ys)


def shear_y(img, R):
    xs, ys = _grid(img)
    return _sample(img, xs, ys + R * xs)


def solarize(img, T):
    return np.where(img >= T, 1.0 - img, img)


def translate_x(img, lam):
    xs, ys = _grid(img)
    return _sample(img, xs - lam * img.shape[1], ys)


def translate_y(img, lam):
    xs, ys = _grid(img)
    return _sample(img, xs, ys - lam * img.shape[0])


# name -> (function, parameter range or None)
RAND_AUGMENT_OPS = {
    "autocontrast": (autocontrast, None),
    "brightness": (brightness, (0.05, 0.95)),
    "color": (color, (0.05, 0.95)),
    "contrast": (contrast, (0.05, 0.95)),
    "equalize": (equalize, None),
    "identity": (identity, None),
    "posterize": (posterize, (4, 8)),
    "rotate": (rotate, (-30.0, 30.0)),
    "sharpness": (sharpness, (0.05, 0.95)),
    "shear_x": (shear_x, (-0.3, 0.3)),
    "shear_y": (shear_y, (-0.3, 0.3)),
    "solarize": (solarize, (0.0, 1.0)),
    "translate_x": (translate_x, (-0.3, 0.3)),
    "translate_y": (translate_y, (-0.3, 0.3)),
}
OP_NAMES = tuple(RAND_AUGMENT_OPS)


def apply_op(img, name, param=None):
    fn, _ = RAND_AUGMENT_OPS[name]
    return fn(check_image(img), param)


def sample_ops(rng, n_ops=2):
    """Draw ``n_ops`` (name, parameter) pairs uniformly."""
    ops = []
    for _ in range(n_ops):
        name = OP_NAMES[rng.integers(len(OP_NAMES))]
        rng_range = RAND_AUGMENT_OPS[name][1]
        if rng_range is None:
            param = None
        elif name == "posterize":
            param = int(rng.integers(rng_range[0], rng_range[1] + 1))
        else:
            param = float(rng.uniform(*rng_range))
        ops.append((name, param))
    return ops


def rand_augment(img, rng, n_ops=2):
    out = check_image(img)
    for name, param in sample_ops(rng, n_ops):
        out = apply_op(out, name, param)
    return out


def crop_flip(img, top, left, flip, pad=4):
    """Zero-pad by ``pad``, crop back to size at (top, left), optionally mirror."""
    H, W, _ = img.shape
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)))
    out = padded[top:top + H, left:left + W]
    return out[:, ::-1].copy() if flip else out.copy()


def _weak_image(img, rng, policy):
    top, left = rng.integers(0, 2 * policy.pad + 1, size=2)
    flip = rng.random() < policy.flip_p
    return crop_flip(check_image(img), int(top), int(left), flip, policy.pad)


def weak(x, rng, policy=AugmentPolicy()):
    """Light view: Gaussian jitter for vectors, pad-crop + mirror for images."""
    x = np.asarray(x, dtype=np.float64)
    if policy.kind == "vector":
        if policy.sigma_weak == 0:
            return x.copy()
        return x + rng.normal(0.0, policy.sigma_weak, size=x.shape)
    if x.ndim == 3:
        return _weak_image(x, rng, policy)
    return np.stack([_weak_image(im, rng, policy) for im in x])


def strong(x, rng, policy=AugmentPolicy()):
    """Heavy view: larger jitter plus coordinate dropout, or RandAugment."""
    x = np.asarray(x, dtype=np.float64)
    if policy.kind == "vector":
        out = x + rng.normal(0.0, policy.sigma_strong, size=x.shape) if policy.sigma_strong else x.copy()
        if policy.dropout > 0:
            out[rng.random(x.shape) < policy.dropout] = 0.0
        return out
    if x.ndim == 3:
        return rand_augment(_weak_image(x, rng, policy), rng, policy.n_ops)
    return np.stack([rand_augment(_weak_image(im, rng, policy), rng, policy.n_ops) for im in x])
