"""Hand-written reverse-mode gradients for the guidance loss chain.

There is no tape: the pipeline is a short fixed composition of named maps,
each carrying its own vector-Jacobian product. Losses return a
:class:`LossGradReport` with the value, the gradient with respect to the
variable cloud and a per-term breakdown.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, SampleCountError
from .ot_core import as_cloud
from .sliced import (
    SlicedConfig,
    dsw_weights,
    ebsw_weights,
    feature_map,
    feature_vjp,
    project,
    sample_slices,
    slice_costs,
)

__all__ = [
    "DifferentiableMap",
    "LossGradReport",
    "GradcheckReport",
    "grad_sw1",
    "grad_sliced",
    "grad_moments",
    "loss_and_grad",
    "chain_forward",
    "chain_vjp",
    "linear_map",
    "identity_map",
    "finite_diff_check",
    "sw1_tie_mask",
    "chain_tie_mask",
    "LOSS_MODES",
]

LOSS_MODES = ("sw", "moments", "sw+moments")


@dataclass(frozen=True)
class DifferentiableMap:
    """A pure map with its vector-Jacobian product.

    ``vjp(x, ct)`` returns the cotangent on ``x`` given the cotangent ``ct`` on
    ``forward(x)``. ``in_shape``/``out_shape`` are optional shape contracts
    checked by :func:`chain_vjp`.
    """

    name: str
    forward: object
    vjp: object
    in_shape: tuple = None
    out_shape: tuple = None


@dataclass
class LossGradReport:
    loss: float
    grad: np.ndarray
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise ArithmeticError("non-finite gradient")


def identity_map(name="identity"):
    return DifferentiableMap(name, lambda x: x, lambda x, ct: ct)


def linear_map(matrix, name="linear"):
    """Row-wise ``x -> x @ matrix.T`` on an ``(n, d_in)`` batch (or a vector)."""
    A = np.asarray(matrix, dtype=np.float64)
    return DifferentiableMap(
        name,
        lambda x: np.asarray(x) @ A.T,
        lambda x, ct: np.asarray(ct) @ A,
    )


def _pair(a, b):
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    if a.shape[0] != b.shape[0]:
        raise SampleCountError(f"unequal sample counts: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _slice_cost_grads(pa, pb, p):
    """Per-slice costs and d cost_k / d pa[:, k] scattered back to input order."""
    costs, order_a, gap = slice_costs(pa, pb, p)
    n = pa.shape[0]
    if p == 1:
        dsorted = np.sign(gap) / n
    else:
        dsorted = p * np.abs(gap) ** (p - 1) * np.sign(gap) / n
    dproj = np.empty((gap.shape[1], n))
    np.put_along_axis(dproj, order_a.T, dsorted.T, axis=1)
    return costs, dproj.T


def _back_project(coef, directions):
    """``sum_k coef[:, k] * theta_k`` with a fixed, thread-independent reduction."""
    return np.einsum("nk,kd->nd", coef, directions)


def grad_sliced(a, b, slices, p=1.0, variant="sw", params=None, g="linear"):
    """Loss and gradient of a sliced estimate with respect to cloud ``a``.

    ``b`` is held constant. Slice weights follow ``variant``: uniform for
    ``sw``/``gsw``, optimized-and-frozen for ``dsw`` (the gradient of a
    supremum at its maximizer), and energy weights differentiated through for
    ``ebsw``.
    """
    a, b = _pair(a, b)
    params = params or {}
    fa, fb = feature_map(a, g), feature_map(b, g)
    dirs = slices.directions
    if dirs.shape[1] != fa.shape[1]:
        raise InputError(f"slices live in dimension {dirs.shape[1]}, features in {fa.shape[1]}")
    pa, pb = project(fa, dirs), project(fb, dirs)
    costs, dproj = _slice_cost_grads(pa, pb, p)
    K = costs.size
    if variant in ("sw", "gsw"):
        w = np.full(K, 1.0 / K)
        dw = w
    elif variant == "dsw":
        w, _ = dsw_weights(
            costs,
            dirs,
            params.get("iterations", 50),
            params.get("step", 1.0),
            params.get("diversity", 0.1),
        )
        dw = w
    elif variant == "ebsw":
        f = params.get("f", "exp")
        w = ebsw_weights(costs, f, params.get("offset", 1.0))
        total = float(np.sum(w * costs))
        if f == "exp":
            # d/dc_j sum_k w_k c_k with w = softmax(c)
            dw = w * (1.0 + costs - total)
        elif f == "linear":
            s = np.sum(costs + params.get("offset", 1.0))
            dw = w + (costs - total) / s
        else:
            dw = w
    else:
        raise ConfigError(f"unknown sliced variant {variant!r}")
    total = float(np.sum(w * costs))
    if p == 1:
        loss, outer = total, 1.0
    else:
        loss = total ** (1.0 / p)
        outer = (1.0 / p) * total ** (1.0 / p - 1.0) if total > 0 else 0.0
    gfeat = _back_project(dproj * (outer * dw)[None, :], dirs)
    grad = feature_vjp(a, g, gfeat)
    return LossGradReport(loss, grad, {"sw": loss})


def grad_sw1(a, b, slices):
    """Gradient of the Monte Carlo SW_1 estimate with respect to cloud ``a``.

    Per slice: sort both projections, pair by rank, push
    ``sign(a_(i) - b_(i)) / (n K)`` along ``theta`` back to the original index.
    ``sign(0) = 0``.
    """
    return grad_sliced(a, b, slices, p=1.0, variant="sw")


def grad_moments(a, b):
    """``|mu_a - mu_b|^2 + ||Cov_a - Cov_b||_F^2`` and its gradient in ``a``.

    Covariances use the unbiased ``1/(n-1)`` normalization.
    """
    a, b = _pair(a, b)
    n = a.shape[0]
    if n < 2:
        raise InputError("moment loss needs n >= 2 samples (covariance undefined)")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ca, cb = a - mu_a, b - mu_b
    cov_a = np.einsum("ni,nj->ij", ca, ca) / (n - 1)
    cov_b = np.einsum("ni,nj->ij", cb, cb) / (n - 1)
    dmu = mu_a - mu_b
    dcov = cov_a - cov_b
    mean_term = float(np.sum(dmu * dmu))
    cov_term = float(np.sum(dcov * dcov))
    grad = 2.0 * dmu[None, :] / n + (4.0 / (n - 1)) * np.einsum("nj,jk->nk", ca, dcov)
    return LossGradReport(
        mean_term + cov_term, grad, {"mean": mean_term, "cov": cov_term}
    )


def loss_and_grad(a, b, mode="sw", slices=None, sliced_cfg=None):
    """Guidance loss in one of :data:`LOSS_MODES`.

    ``sw+moments`` adds the unweighted moment terms to the sliced term.
    """
    if mode not in LOSS_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}; choose from {LOSS_MODES}")
    terms = {}
    loss = 0.0
    grad = None
    if mode in ("sw", "sw+moments"):
        cfg = sliced_cfg or SlicedConfig()
        g = cfg.params.get("g", "linear") if cfg.variant == "gsw" else "linear"
        if slices is None:
            slices = sample_slices(cfg, feature_map(np.zeros((1, np.shape(a)[1])), g).shape[1])
        rep = grad_sliced(a, b, slices, cfg.p, cfg.variant, cfg.params, g)
        loss += rep.loss
        grad = rep.grad
        terms["sw"] = rep.loss
    if mode in ("moments", "sw+moments"):
        rep = grad_moments(a, b)
        loss += rep.loss
        grad = rep.grad if grad is None else grad + rep.grad
        terms.update(rep.terms)
    return LossGradReport(loss, grad, terms)


def chain_forward(maps, x):
    """Run ``maps`` left to right, returning every intermediate (input first)."""
    values = [np.asarray(x, dtype=np.float64)]
    for idx, m in enumerate(maps):
        cur = values[-1]
        if m.in_shape is not None and tuple(cur.shape) != tuple(m.in_shape):
            raise InputError(
                f"stage {idx} ({m.name}): input shape {cur.shape} != expected {m.in_shape}"
            )
        out = np.asarray(m.forward(cur), dtype=np.float64)
        if m.out_shape is not None and tuple(out.shape) != tuple(m.out_shape):
            raise InputError(
                f"stage {idx} ({m.name}): output shape {out.shape} != declared {m.out_shape}"
            )
        values.append(out)
    return values


def chain_vjp(maps, x, loss_grad, values=None):
    """Input cotangent of the composition ``maps[-1] o ... o maps[0]`` at ``x``.

    ``loss_grad`` is the cotangent on the final output. Pass ``values`` from
    :func:`chain_forward` to skip recomputing the forward pass.
    """
    if values is None:
        values = chain_forward(maps, x)
    ct = np.asarray(loss_grad, dtype=np.float64)
    if ct.shape != values[-1].shape:
        stage = len(maps) - 1
        name = maps[stage].name if maps else "input"
        raise InputError(
            f"stage {stage} ({name}): cotangent shape {ct.shape} != output shape {values[-1].shape}"
        )
    for idx in range(len(maps) - 1, -1, -1):
        ct = np.asarray(maps[idx].vjp(values[idx], ct), dtype=np.float64)
        if ct.shape != values[idx].shape:
            raise InputError(
                f"stage {idx} ({maps[idx].name}): vjp returned shape {ct.shape}, "
                f"input has shape {values[idx].shape}"
            )
    return ct


@dataclass
class GradcheckReport:
    stage: str
    max_abs_err: float
    max_rel_err: float
    flagged_ties: int
    passed: bool
    worst_index: tuple = ()

    def to_dict(self):
        return {
            "stage": self.stage,
            "max_abs_err": self.max_abs_err,
            "max_rel_err": self.max_rel_err,
            "flagged_ties": self.flagged_ties,
            "pass": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def finite_diff_check(f, x, grad=None, eps=1e-5, tol=1e-4, ties=None, stage="loss", seed=0):
    """Compare an analytic gradient with central finite differences.

    Parameters
    ----------
    f : callable or DifferentiableMap
        A scalar loss ``f(x)``; for a map, the scalar ``<w, forward(x)>`` with a
        seeded random cotangent ``w`` is checked against ``vjp(x, w)``.
    grad : ndarray, optional
        Analytic gradient of a scalar ``f`` at ``x``.
    ties : ndarray of bool, optional
        Coordinates sitting near a kink; reported but excluded from pass/fail.

    Notes
    -----
    The relative error of coordinate ``i`` is
    ``|g_i - fd_i| / max(|g_i|, |fd_i|, 1e-3 * max(|g|_inf, |fd|_inf))``; the
    floor keeps coordinates whose true derivative is zero from dividing
    round-off by round-off.
    """
    x = np.array(x, dtype=np.float64)
    if eps <= 0:
        raise ConfigError("finite-difference step must be positive")
    if isinstance(f, DifferentiableMap):
        fx = np.asarray(f.forward(x))
        w = np.random.default_rng(seed).standard_normal(fx.shape)
        grad = np.asarray(f.vjp(x, w), dtype=np.float64)
        m = f
        f = lambda z: float(np.sum(w * m.forward(z)))  # noqa: E731
    elif grad is None:
        raise ConfigError("a scalar loss needs its analytic gradient")
    grad = np.asarray(grad, dtype=np.float64)
    fd = np.empty_like(x)
    flat, fdflat = x.reshape(-1), fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        fdflat[i] = (up - down) / (2.0 * eps)
    abs_err = np.abs(grad - fd)
    floor = 1e-3 * max(np.max(np.abs(grad)), np.max(np.abs(fd)), 1e-300)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(grad), np.abs(fd)), floor)
    mask = np.zeros(x.shape, dtype=bool) if ties is None else np.asarray(ties, dtype=bool)
    valid = ~mask
    if np.any(valid):
        worst = np.unravel_index(np.argmax(np.where(valid, rel_err, -1.0)), x.shape)
        max_abs = float(np.max(abs_err[valid]))
        max_rel = float(np.max(rel_err[valid]))
    else:
        worst, max_abs, max_rel = (), 0.0, 0.0
    return GradcheckReport(
        stage, max_abs, max_rel, int(mask.sum()), bool(max_rel < tol), tuple(int(i) for i in worst)
    )


def sw1_tie_mask(a, b, slices, eps, g="linear"):
    """Coordinates of ``a`` whose perturbation by ``eps`` may cross a kink of the loss.

    On each slice the sorted-pairing loss has a kink where a paired gap
    ``a_(r) - b_(r)`` changes sign, or where two neighbouring ``a`` samples
    swap ranks while straddling their reference partners. A point is flagged
    (all its coordinates) when either event lies within ``10 * eps * rate``,
    ``rate`` bounding how fast its projection moves per unit coordinate step
    (1 for linear slices).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fa, fb = feature_map(a, g), feature_map(b, g)
    dirs = slices.directions
    pa, pb = project(fa, dirs), project(fb, dirs)
    n, K = pa.shape
    rate = np.ones((n, K))
    if g != "linear":
        for k in range(K):
            jac = feature_vjp(a, g, np.broadcast_to(dirs[k], fa.shape))
            rate[:, k] = np.maximum(1.0, 2.0 * np.max(np.abs(jac), axis=1))
    flagged = np.zeros(n, dtype=bool)
    for k in range(K):
        oa = np.argsort(pa[:, k], kind="stable")
        sa = pa[oa, k]
        sb = np.sort(pb[:, k], kind="stable")
        thr = 10.0 * eps * rate[oa, k]
        hit = np.abs(sa - sb) < thr
        if n > 1:
            close = np.diff(sa) < np.maximum(thr[:-1], thr[1:])
            # a rank swap is a kink only if the mover's sign flips between partners
            straddle = np.sign(sa[:-1] - sb[:-1]) != np.sign(sa[:-1] - sb[1:])
            straddle |= np.sign(sa[1:] - sb[1:]) != np.sign(sa[1:] - sb[:-1])
            swap = close & straddle
            hit[:-1] |= swap
            hit[1:] |= swap
        flagged[oa[hit]] = True
    return np.repeat(flagged[:, None], a.shape[1], axis=1)


def chain_tie_mask(maps, x, b, slices, eps):
    """Kink mask for an SW1 loss applied after ``maps``, pulled back to ``x``.

    A point is flagged when its image could cross a kink under an input step of
    ``eps``; the step is scaled by the largest per-point Jacobian norm of the
    chain (probed with one vjp per output coordinate).
    """
    values = chain_forward(maps, x)
    y = values[-1]
    rate = np.zeros(y.shape[0])
    for k in range(y.shape[1]):
        ct = np.zeros_like(y)
        ct[:, k] = 1.0
        col = chain_vjp(maps, x, ct, values)
        rate += np.sum(col * col, axis=1)
    scale = max(1.0, float(np.sqrt(np.max(rate))))
    flagged = sw1_tie_mask(y, b, slices, eps * scale)[:, 0]
    return np.repeat(flagged[:, None], np.shape(x)[1], axis=1)
