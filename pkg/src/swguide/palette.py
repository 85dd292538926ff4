"""Pixel-space palette transfer.

Images are RGB rasters in [0, 1]. The pixel extractor turns an image into a
color cloud in the unit cube; :func:`transfer_palette` optimizes a
full-resolution residual added to the content image so that its color cloud
approaches the reference's under the chosen loss, and :func:`histogram_match`
is the per-channel baseline.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffgrad import LOSS_MODES, loss_and_grad
from .errors import (
    ConfigError,
    CorruptHeaderError,
    InputError,
    NumericError,
    UnreadableFileError,
    UnsupportedFormatError,
)
from .ot_core import exact_w2
from .sliced import SlicedConfig, sample_slices

__all__ = [
    "ImageBuffer",
    "PaletteTransferConfig",
    "load_image",
    "save_image",
    "pixels_from_image",
    "transfer_palette",
    "histogram_match",
    "palette_w2",
    "palette_report",
]

SWIM_MAGIC = b"SWIM"
_SWIM_HEADER = struct.Struct("<4sIII")
# per-pixel moves are capped at this multiple of the current SW1 loss
STEP_CAP = 0.5


@dataclass(frozen=True)
class ImageBuffer:
    """``(H, W, 3)`` float64 raster with every channel in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InputError(f"image must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError("image dimensions must be >= 1")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InputError("image values must be finite and within [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def pixels(self):
        return self.data.reshape(-1, 3)


@dataclass
class PaletteTransferConfig:
    mode: str = "sw"
    iterations: int = 600
    step: float = 0.01
    samples: int = 4096
    slices: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss mode {self.mode!r}; choose from {LOSS_MODES}")
        if self.samples < 2:
            raise ConfigError("sample size must be >= 2")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.slices < 1:
            raise ConfigError("K (slices) must be >= 1")
        if not self.step > 0:
            raise ConfigError("step size must be positive")


# -- raster I/O ---------------------------------------------------------------


def _to_u8(img):
    return np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)


def _read_ppm(path, raw):
    # header: P6 <ws> width <ws> height <ws> maxval <single ws> data
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptHeaderError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: non-numeric PPM header field") from exc
    if w < 1 or h < 1 or maxval != 255:
        raise CorruptHeaderError(f"{path}: unsupported PPM geometry {w}x{h} maxval={maxval}")
    body = raw[pos:]
    if len(body) != w * h * 3:
        raise CorruptHeaderError(f"{path}: PPM body holds {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3) / 255.0


def _read_swim(path, raw):
    if len(raw) < _SWIM_HEADER.size:
        raise CorruptHeaderError(f"{path}: truncated SWIM header")
    _, h, w, c = _SWIM_HEADER.unpack_from(raw)
    body = raw[_SWIM_HEADER.size :]
    if c != 3 or len(body) != 8 * h * w * c:
        raise CorruptHeaderError(f"{path}: SWIM header {h}x{w}x{c} disagrees with body size")
    return np.frombuffer(body, dtype="<f8").reshape(h, w, c).astype(np.float64)


def _read_png(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptHeaderError(f"{path}: damaged PNG ({exc})") from exc
    return arr / 255.0


def load_image(path):
    """Read a PNG, binary PPM (P6, 8-bit) or SWIM (float64) image."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        data = _read_png(path)
    elif raw[:2] == b"P6":
        data = _read_ppm(path, raw)
    elif raw[:4] == SWIM_MAGIC:
        data = _read_swim(path, raw)
    else:
        raise UnsupportedFormatError(f"{path}: not a PNG, P6 PPM or SWIM image")
    try:
        return ImageBuffer(data)
    except InputError as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from exc


def save_image(img, path):
    """Write by extension: ``.png``/``.ppm`` (8-bit) or ``.swim`` (lossless float64)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".swim":
        h, w, c = img.data.shape
        with open(path, "wb") as fh:
            fh.write(_SWIM_HEADER.pack(SWIM_MAGIC, h, w, c))
            fh.write(np.ascontiguousarray(img.data, dtype="<f8").tobytes())
    elif ext == ".ppm":
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
            fh.write(_to_u8(img).tobytes())
    elif ext == ".png":
        from PIL import Image

        Image.fromarray(_to_u8(img), mode="RGB").save(path)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported extension {ext!r} (.png .ppm .swim)")


# -- color clouds -------------------------------------------------------------


def pixels_from_image(img, n, seed=0, exhaustive=False):
    """Color cloud of ``n`` pixels drawn uniformly with replacement.

    ``exhaustive=True`` returns every pixel once (row-major) and requires
    ``n == H * W``.
    """
    px = img.pixels()
    if exhaustive:
        if n != px.shape[0]:
            raise ConfigError(f"exhaustive mode needs n = H*W = {px.shape[0]}, got {n}")
        return px.copy()
    if n < 1:
        raise ConfigError("pixel count must be >= 1")
    rng = np.random.default_rng(seed)
    return px[rng.integers(0, px.shape[0], size=n)]


def palette_w2(a, b, n=3000, seed=0):
    """Exact W2 between ``n``-pixel samples of two images (the evaluation metric)."""
    pa = pixels_from_image(a, n, seed=[seed, 0])
    pb = pixels_from_image(b, n, seed=[seed, 1])
    return exact_w2(pa, pb)


def transfer_palette(content, reference, cfg=None, trace=None, descent=None):
    """Move the content image's colors toward the reference palette.

    A residual ``u`` (same shape as the image, zero at start) is updated by
    stochastic gradient steps on the configured loss between ``samples``
    pixels of ``content + u`` and ``samples`` reference pixels, with fresh
    pixels and slices every iteration. Each sampled pixel moves by
    ``step * n * dL/dpixel`` (so ``step`` is in color units for the SW loss),
    the step decays linearly to 10% of its start, and ``content + u`` is
    clamped to [0, 1] after every update.

    When the loss has a sliced term, the step is also capped at
    ``STEP_CAP`` times its current value (the mean quantile gap). SW1 does
    not care which pixel carries which color, so without the cap sign
    gradients would keep shuffling pixels once the palettes agree.

    ``trace``, when a list, receives one ``(iteration, loss)`` row per update.
    ``descent``, when a list, receives ``(iteration, loss_before, loss_after)``
    with both losses evaluated on that iteration's pixels and slices.
    """
    cfg = cfg or PaletteTransferConfig()
    src = content.pixels()
    ref_px = reference.pixels()
    n = cfg.samples
    cur = src.copy()
    rng = np.random.default_rng([cfg.seed, 0])
    for it in range(cfg.iterations):
        ic = rng.integers(0, cur.shape[0], size=n)
        ir = rng.integers(0, ref_px.shape[0], size=n)
        scfg = SlicedConfig("sw", 1.0, cfg.slices, "rotation-triples", [cfg.seed, 1, it])
        slices = sample_slices(scfg, 3) if cfg.mode != "moments" else None
        try:
            rep = loss_and_grad(cur[ic], ref_px[ir], cfg.mode, slices, scfg)
        except ArithmeticError as exc:
            raise NumericError(f"non-finite gradient at iteration {it}") from exc
        if not np.isfinite(rep.loss):
            raise NumericError(f"non-finite loss at iteration {it}")
        if trace is not None:
            trace.append((it, rep.loss))
        lr = cfg.step
        if "sw" in rep.terms:
            lr = min(lr, STEP_CAP * rep.terms["sw"])
        lr = lr * (1.0 - 0.9 * it / max(cfg.iterations - 1, 1))
        delta = np.zeros_like(cur)
        np.add.at(delta, ic, -lr * n * rep.grad)
        cur = np.clip(cur + delta, 0.0, 1.0)
        if descent is not None:
            after = loss_and_grad(cur[ic], ref_px[ir], cfg.mode, slices, scfg).loss
            descent.append((it, rep.loss, after))
    return ImageBuffer(cur.reshape(content.data.shape))


def histogram_match(content, reference):
    """Per-channel exact histogram specification.

    Content pixels are ranked per channel (stable order) and the pixel of
    rank ``r`` takes the reference's quantile at ``(r + 1/2) / N``, read off
    the reference's step quantile function. Each output channel therefore
    reproduces the reference channel's distribution even where the content
    has large flat regions, and outputs only take reference values.
    """
    src = content.pixels()
    ref = reference.pixels()
    N, M = src.shape[0], ref.shape[0]
    out = np.empty_like(src)
    # rank r -> reference order statistic floor((r + 1/2) M / N); the identity when M == N
    pick = np.minimum((2 * np.arange(N) + 1) * M // (2 * N), M - 1)
    for c in range(3):
        order = np.argsort(src[:, c], kind="stable")
        out[order, c] = np.sort(ref[:, c])[pick]
    return ImageBuffer(out.reshape(content.data.shape))


def palette_report(image_id, content, output, reference, n=3000, seed=0):
    """One report row: W2 before/after and per-channel moment errors after."""
    po, pr = output.pixels(), reference.pixels()
    mean_err = np.abs(po.mean(axis=0) - pr.mean(axis=0))
    cov_err = np.abs(np.cov(po.T) - np.cov(pr.T))
    return {
        "image_id": image_id,
        "w2_before": palette_w2(content, reference, n, seed),
        "w2_after": palette_w2(output, reference, n, seed),
        "mean_err_r": float(mean_err[0]),
        "mean_err_g": float(mean_err[1]),
        "mean_err_b": float(mean_err[2]),
        "cov_err_r": float(cov_err[0, 0]),
        "cov_err_g": float(cov_err[1, 1]),
        "cov_err_b": float(cov_err[2, 2]),
    }
