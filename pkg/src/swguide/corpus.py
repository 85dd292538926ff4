"""Bundled fixtures: the 3-component GMM simulator and a procedural image corpus.

Everything here is generated deterministically from fixed seeds, so the
corpus needs no binary assets beyond the small JSON model spec in ``data/``.
"""

import json
from importlib import resources

import numpy as np

from .guidance import DdimSchedule, Decoder, GmmScoreModel
from .palette import ImageBuffer

__all__ = [
    "builtin_prior",
    "builtin_reference_model",
    "builtin_decoder",
    "builtin_schedule",
    "shifted_reference",
    "fixture_clouds",
    "palette_corpus",
    "CORPUS_SIZE",
]

CORPUS_SIZE = 10
IMAGE_SIDE = 64


def _data(name):
    return resources.files("swguide").joinpath("data", name).read_text()


def builtin_prior():
    """Three-component GMM over a 3D latent space (the simulator's prior)."""
    return GmmScoreModel.from_json(_data("gmm3.json"))


def builtin_reference_model():
    """Two-component GMM whose decoded samples form the shifted reference."""
    return GmmScoreModel.from_json(_data("gmm_reference.json"))


def builtin_decoder():
    return Decoder.random("affine-tanh", 3, seed=7)


def builtin_schedule():
    return DdimSchedule()


def shifted_reference(n=512, seed=123):
    """Decoded reference cloud in [0, 1]^3, disjoint in style from the prior's output."""
    rng = np.random.default_rng(seed)
    return builtin_decoder().forward(builtin_reference_model().sample(n, rng))


def fixture_clouds():
    """The two bundled point clouds used for the golden distance value."""
    a = np.random.default_rng(2024).random((256, 3))
    b = 0.3 + 0.5 * np.random.default_rng(2025).random((256, 3)) ** 2
    return a, b


# -- procedural palette corpus --------------------------------------------------


def _smooth_fields(rng, k, side):
    yy, xx = np.mgrid[0:side, 0:side] / side
    fields = np.zeros((k, side, side))
    for j in range(k):
        for _ in range(4):
            fx, fy = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            fields[j] += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    return fields


def _render(palette, weights, seed, sharpness=3.0, noise=0.02, side=IMAGE_SIDE):
    rng = np.random.default_rng(seed)
    palette = np.asarray(palette, dtype=np.float64)
    k = palette.shape[0]
    logits = sharpness * _smooth_fields(rng, k, side) + np.log(np.asarray(weights))[:, None, None]
    logits -= logits.max(axis=0, keepdims=True)
    mix = np.exp(logits)
    mix /= mix.sum(axis=0, keepdims=True)
    img = np.einsum("khw,kc->hwc", mix, palette)
    # brightness ripple plus grain
    shade = 1.0 + 0.08 * _smooth_fields(rng, 1, side)[0][..., None]
    img = img * shade + noise * rng.standard_normal(img.shape)
    return ImageBuffer(np.clip(img, 0.0, 1.0))


def _random_palette(rng, k, saturation, value):
    hues = rng.uniform(0, 1, size=k)
    sat = np.clip(rng.normal(saturation, 0.1, size=k), 0, 1)
    val = np.clip(rng.normal(value, 0.12, size=k), 0.05, 1)
    # HSV to RGB
    i = np.floor(hues * 6).astype(int) % 6
    f = hues * 6 - np.floor(hues * 6)
    p, q, t = val * (1 - sat), val * (1 - f * sat), val * (1 - (1 - f) * sat)
    table = np.stack(
        [
            np.stack([val, t, p], 1),
            np.stack([q, val, p], 1),
            np.stack([p, val, t], 1),
            np.stack([p, q, val], 1),
            np.stack([t, p, val], 1),
            np.stack([val, p, q], 1),
        ]
    )
    return table[i, np.arange(k)]


def palette_corpus():
    """Ten ``(name, content, reference)`` triples of 64x64 RGB images.

    Pair 0 is a grayscale content image against a saturated reference; the
    rest pair random palettes of differing saturation and brightness.
    """
    pairs = []
    grays = np.array([[0.15] * 3, [0.45] * 3, [0.7] * 3, [0.9] * 3])
    saturated = np.array([[0.9, 0.1, 0.1], [0.1, 0.75, 0.2], [0.15, 0.2, 0.9], [0.95, 0.85, 0.1]])
    pairs.append(
        (
            "gray-to-saturated",
            _render(grays, [0.25] * 4, seed=100),
            _render(saturated, [0.3, 0.3, 0.2, 0.2], seed=101),
        )
    )
    rng = np.random.default_rng(7)
    for idx in range(1, CORPUS_SIZE):
        kc, kr = rng.integers(3, 6, size=2)
        content_pal = _random_palette(rng, kc, rng.uniform(0.2, 0.7), rng.uniform(0.4, 0.8))
        ref_pal = _random_palette(rng, kr, rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9))
        wc = rng.dirichlet(np.full(kc, 2.0))
        wr = rng.dirichlet(np.full(kr, 2.0))
        pairs.append(
            (
                f"scene-{idx:02d}",
                _render(content_pal, wc, seed=100 + 2 * idx),
                _render(ref_pal, wr, seed=101 + 2 * idx),
            )
        )
    return pairs


def model_json_text(name="gmm3.json"):
    """Raw text of a bundled model spec (what the CLI accepts as a model path)."""
    return _data(name)


def dump_model(model):
    return json.dumps(model.to_dict(), indent=2)
