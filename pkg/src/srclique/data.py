"""Image I/O, bicubic resampling, preprocessing modes, patches and augmentation.

Images are uint8 arrays of shape (H, W, 3). Float images are (3, H, W)
arrays on the 0..255 scale unless a preprocessing mode says otherwise.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import UsageError
from .model import DIHEDRAL, dihedral
from .wavelet import rescale_ll_image, restore_ll_image

log = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


# ------------------------------------------------------------------- I/O

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def decode_ppm(raw: bytes) -> np.ndarray:
    """Parse a binary P6 PPM with maxval 255."""
    if raw[:2] != b"P6":
        raise ImageFormatError(f"unsupported magic {raw[:2]!r}, expected b'P6'", 0)
    pos = 2
    header = []
    for what in ("width", "height", "maxval"):
        m = _TOKEN.match(raw, pos)
        pos = m.end()
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ImageFormatError(f"malformed PPM header: missing {what}", start)
        header.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise ImageFormatError("malformed PPM header: no whitespace after maxval", pos)
    pos += 1
    width, height, maxval = header
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}", pos - 1)
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid size {width}x{height}", pos - 1)
    need = width * height * 3
    payload = raw[pos : pos + need]
    if len(payload) < need:
        raise ImageFormatError(f"truncated payload: {len(payload)} of {need} bytes", pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = _check_image(img)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def _check_image(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise UsageError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    return np.ascontiguousarray(img)


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:1] == b"P":
        return decode_ppm(raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raise ImageFormatError(f"{path}: unrecognized image format", 0)


def save_image(img: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(_check_image(img), "RGB").save(path, format="PNG")
    else:
        path.write_bytes(encode_ppm(img))


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float64 (3, H, W) on the 0..255 scale."""
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float64)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """float (3, H, W) 0..255 -> rounded, clipped uint8 (H, W, 3)."""
    return np.clip(np.round(x), 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()


# --------------------------------------------------------------- bicubic


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix for one axis.

    Half-pixel centers, clamped edges, rows normalized to sum to one. When
    shrinking with ``antialias`` the kernel is stretched by the inverse scale.
    """
    if out_len < 1 or in_len < 1:
        raise UsageError(f"resize lengths must be positive, got {in_len}->{out_len}")
    scale = out_len / in_len
    width = 4.0
    stretch = 1.0
    if scale < 1 and antialias:
        stretch = scale
        width = width / scale
    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(int)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic(stretch * (centers[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), idx.ravel()), w.ravel())
    return mat


def bicubic_resize(x: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize the last two axes of a float array with the a = -0.5 cubic kernel."""
    if out_h < 1 or out_w < 1:
        raise UsageError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    wy = resize_weights(h, out_h, antialias)
    wx = resize_weights(w, out_w, antialias)
    return np.matmul(np.matmul(wy, x), wx.T)


def modcrop(x: np.ndarray, factor: int) -> np.ndarray:
    h, w = x.shape[-2:]
    return x[..., : h - h % factor, : w - w % factor]


def downscale(hr: np.ndarray, factor: int, quantize: bool = True) -> np.ndarray:
    """Bicubic 1/factor downscale of a (3, H, W) float image (H, W multiples of factor)."""
    h, w = hr.shape[-2:]
    out = bicubic_resize(hr, h // factor, w // factor)
    return np.clip(np.round(out), 0, 255) if quantize else out


def upscale(lr: np.ndarray, factor: int) -> np.ndarray:
    h, w = lr.shape[-2:]
    return bicubic_resize(lr, h * factor, w * factor)


# ---------------------------------------------------------- preprocessing


def preprocess(x: np.ndarray, mode: int, means=None, s: float = 4.0, target: bool = False) -> np.ndarray:
    """Map a 0..255 float image into network units.

    Modes: 1 raw, 2 /255, 3 /255 minus per-channel training means, 4 as 3 and,
    for targets, the Haar LL band divided by ``s``. Network inputs in mode 4
    are plain mode-3 images.
    """
    if mode not in (1, 2, 3, 4):
        raise UsageError(f"preprocessing mode must be 1..4, got {mode}")
    x = np.asarray(x, dtype=np.float64)
    if mode == 1:
        return x.copy()
    y = x / 255.0
    if mode >= 3:
        y = y - _means(means, mode)
    if mode == 4 and target:
        y = rescale_ll_image(y, s)
    return y


def postprocess(y: np.ndarray, mode: int, means=None, s: float = 4.0, target: bool = True) -> np.ndarray:
    """Inverse of :func:`preprocess`; returns 0..255 floats (not yet rounded)."""
    if mode not in (1, 2, 3, 4):
        raise UsageError(f"preprocessing mode must be 1..4, got {mode}")
    y = np.asarray(y, dtype=np.float64)
    if mode == 1:
        return y.copy()
    if mode == 4 and target:
        y = restore_ll_image(y, s)
    if mode >= 3:
        y = y + _means(means, mode)
    return y * 255.0


def _means(means, mode: int) -> np.ndarray:
    if means is None or len(means) != 3:
        raise UsageError(f"mode {mode} needs three channel means, got {means!r}")
    return np.asarray(means, dtype=np.float64).reshape(3, 1, 1)


# --------------------------------------------------------------- manifest


@dataclass
class DatasetManifest:
    entries: list[tuple[str, str]] = field(default_factory=list)
    means: tuple[float, float, float] | None = None

    def paths(self, split: str) -> list[str]:
        return [p for p, s in self.entries if s == split]

    def compute_means(self) -> tuple[float, float, float]:
        """Per-channel mean over train images, in 0..1 units."""
        train = self.paths("train")
        if not train:
            raise UsageError("manifest has no train images")
        total = np.zeros(3)
        count = 0
        for p in train:
            img = load_image(p)
            total += img.reshape(-1, 3).sum(axis=0, dtype=np.float64)
            count += img.shape[0] * img.shape[1]
        self.means = tuple(float(v) for v in total / count / 255.0)
        return self.means


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "path":
                continue
            if len(row) != 2 or row[1] not in ("train", "val", "test"):
                raise UsageError(f"{path}: bad manifest row {row!r}")
            p = Path(row[0])
            entries.append((str(p if p.is_absolute() else path.parent / p), row[1]))
    manifest = DatasetManifest(entries)
    means_path = path.with_suffix(".means")
    if means_path.exists():
        manifest.means = read_means(means_path)
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "split"])
        writer.writerows(manifest.entries)
    if manifest.means is not None:
        write_means(manifest.means, path.with_suffix(".means"))


def read_means(path: str | Path) -> tuple[float, float, float]:
    values = [float(v) for v in Path(path).read_text().split()]
    if len(values) != 3:
        raise UsageError(f"{path}: expected 3 channel means, got {len(values)}")
    return tuple(values)


def write_means(means: Sequence[float], path: str | Path) -> None:
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in means))


# --------------------------------------------------------------- patches


@dataclass
class SamplePair:
    lr: np.ndarray
    hr_levels: list[np.ndarray]

    def __post_init__(self):
        h, w = self.lr.shape[-2:]
        for j, hr in enumerate(self.hr_levels, start=1):
            if hr.shape[-2:] != (h * 2**j, w * 2**j):
                raise UsageError(f"level {j} target {hr.shape[-2:]} is not {2**j}x the LR size {(h, w)}")


def build_pyramid(hr: np.ndarray, J: int, quantize: bool = True) -> tuple[np.ndarray, list[np.ndarray]]:
    """LR input and level targets I^1..I^J for a (3, H, W) 0..255 image."""
    r = 2**J
    hr = modcrop(hr, r)
    lr = downscale(hr, r, quantize)
    levels = [downscale(hr, 2 ** (J - j), quantize) if j < J else hr.copy() for j in range(1, J + 1)]
    return lr, levels


def extract_patches(
    hr: np.ndarray,
    J: int,
    patch: int,
    stride: int | None = None,
    count: int | None = None,
    rng: np.random.Generator | None = None,
    quantize: bool = True,
) -> list[SamplePair]:
    """Aligned LR/HR patch pairs: LR patch at (y, x) <-> level-j patch at (2^j y, 2^j x).

    Either tile with ``stride`` or draw ``count`` random positions from ``rng``.
    """
    lr, levels = build_pyramid(hr, J, quantize)
    h, w = lr.shape[-2:]
    if patch > h or patch > w:
        log.warning("image with LR size %dx%d is smaller than patch %d; skipped", h, w, patch)
        return []
    if stride is not None:
        positions = [(y, x) for y in range(0, h - patch + 1, stride) for x in range(0, w - patch + 1, stride)]
    else:
        if count is None or rng is None:
            raise UsageError("give either stride or count with rng")
        ys = rng.integers(0, h - patch + 1, size=count)
        xs = rng.integers(0, w - patch + 1, size=count)
        positions = list(zip(ys.tolist(), xs.tolist()))
    pairs = []
    for y, x in positions:
        hrs = []
        for j, level in enumerate(levels, start=1):
            f = 2**j
            hrs.append(level[:, f * y : f * (y + patch), f * x : f * (x + patch)].copy())
        pairs.append(SamplePair(lr[:, y : y + patch, x : x + patch].copy(), hrs))
    return pairs


def augment(sample: SamplePair, rng: np.random.Generator | None = None, index: int | None = None) -> SamplePair:
    """Apply one of the 8 dihedral transforms identically to LR and all targets."""
    if index is None:
        index = int(rng.integers(0, 8))
    k, flip = DIHEDRAL[index]
    h, w = sample.lr.shape[-2:]
    if k % 2 and h != w:
        raise UsageError(f"rotation needs square patches, got {h}x{w}")
    return SamplePair(
        np.ascontiguousarray(dihedral(sample.lr, k, flip)),
        [np.ascontiguousarray(dihedral(t, k, flip)) for t in sample.hr_levels],
    )


# ---------------------------------------------------- bundled natural images


# everyday photographs among the bundled images; the rest are scientific
# imagery (retina, moon, hubble_deep_field, immunohistochemistry) or the second
# view of a stereo pair (motorcycle_right)
PHOTOGRAPHS = ("astronaut", "camera", "chelsea", "clock", "coffee", "coins", "motorcycle_left", "rocket")


def sample_images() -> dict[str, np.ndarray]:
    """Natural photos shipped with scikit-image, as uint8 RGB (grey ones replicated)."""
    from skimage import data as skdata

    names = [
        "astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry",
        "hubble_deep_field", "retina", "camera", "moon", "coins", "clock",
    ]
    out = {}
    for name in names:
        img = getattr(skdata, name)()
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        out[name] = np.ascontiguousarray(img[:, :, :3].astype(np.uint8))
    left, right, _ = skdata.stereo_motorcycle()
    out["motorcycle_left"] = np.ascontiguousarray(left)
    out["motorcycle_right"] = np.ascontiguousarray(right)
    return out


def natural_crops(
    images: dict[str, np.ndarray], size: int, per_image: int, seed: int = 0
) -> list[tuple[str, np.ndarray]]:
    """``per_image`` random square uint8 crops from each image, named ``image/k``."""
    rng = np.random.default_rng(seed)
    out = []
    for name in sorted(images):
        img = images[name]
        h, w = img.shape[:2]
        if h < size or w < size:
            log.warning("%s (%dx%d) is smaller than crop %d; skipped", name, h, w, size)
            continue
        for k in range(per_image):
            y = int(rng.integers(0, h - size + 1))
            x = int(rng.integers(0, w - size + 1))
            out.append((f"{name}/{k}", np.ascontiguousarray(img[y : y + size, x : x + size])))
    return out
