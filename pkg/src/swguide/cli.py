"""Command-line front end.

Subcommands: ``dist``, ``eval``, ``transfer``, ``diffuse``, ``gradcheck`` and
``replay``. Every run writes its outputs plus a JSON run manifest into
``--out-dir``; ``replay`` re-executes a manifest and compares output hashes.

Settings resolve as built-in defaults, then ``--config`` (a flat JSON object
keyed by option name), then explicit flags. Exit codes: 0 ok, 1 a check
failed (gradcheck or replay mismatch), 2 bad input, 3 config error,
4 numeric failure.
"""

import argparse
import csv
import hashlib
import json
import secrets
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .cloudio import load_cloud, save_cloud
from .diffgrad import (
    LOSS_MODES,
    DifferentiableMap,
    chain_forward,
    chain_tie_mask,
    chain_vjp,
    finite_diff_check,
    grad_moments,
    grad_sw1,
    sw1_tie_mask,
)
from .errors import ConfigError, InputError, SwError
from .guidance import (
    DdimSchedule,
    Decoder,
    GmmScoreModel,
    GuidanceConfig,
    _prepare_reference,
    guided_sample,
    lr_sweep,
    moment_errors,
    predict_x0_at,
    unguided_sample,
    x0_vjp,
)
from .ot_core import EXACT_W2_CAP, exact_w2
from .palette import (
    PaletteTransferConfig,
    histogram_match,
    load_image,
    palette_report,
    save_image,
    transfer_palette,
)
from .sliced import SCHEMES, VARIANTS, SlicedConfig, sample_slices, sliced_distance

EXIT_CHECK_FAILED = 1

# defaults per subcommand; every key is also a flag and a config-file key
DEFAULTS = {
    "dist": {
        "variant": "sw",
        "p": 1.0,
        "slices": 10,
        "scheme": "rotation-triples",
        "g": "linear",
        "pool": 100,
        "dsw_iterations": 50,
        "dsw_step": 1.0,
        "diversity": 0.1,
        "f": "exp",
        "offset": 1.0,
    },
    "eval": {"n": 3000},
    "transfer": {
        "mode": "sw",
        "iters": PaletteTransferConfig.iterations,
        "lr": PaletteTransferConfig.step,
        "samples": PaletteTransferConfig.samples,
        "slices": PaletteTransferConfig.slices,
        "output": "transfer.png",
        "baseline": False,
    },
    "diffuse": {
        "lr": GuidanceConfig.lr,
        "inner_steps": GuidanceConfig.inner_steps,
        "slices": GuidanceConfig.slices,
        "loss_mode": "sw",
        "variant": "sw",
        "p": 1.0,
        "normalize": True,
        "gamma": 1.0,
        "label": None,
        "batch": GuidanceConfig.batch,
        "steps": 30,
        "spacing": "quadratic",
        "decoder": "affine-tanh",
        "decoder_seed": 7,
        "sweep": None,
        "sweep_seeds": 3,
    },
    "gradcheck": {
        "decoder": "identity",
        "decoder_seed": 7,
        "instances": 50,
        "n": 64,
        "slices": 10,
        "eps": 1e-5,
        "tol": None,
    },
}


# -- helpers ------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _array_hash(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def parse_sweep(text):
    """``"a:b:n"`` -> ``n`` log-spaced learning rates from ``a`` to ``b``."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise ConfigError(f"--sweep expects lo:hi:count, got {text!r}") from exc
    if not (0 < lo < hi) or count < 2:
        raise ConfigError("--sweep needs 0 < lo < hi and count >= 2")
    return np.geomspace(lo, hi, count).tolist()


def _sliced_cfg(cfg, seed):
    variant = cfg["variant"]
    params = {}
    if variant == "gsw":
        params = {"g": cfg["g"]}
    elif variant == "dsw":
        params = {
            "pool": cfg["pool"],
            "iterations": cfg["dsw_iterations"],
            "step": cfg["dsw_step"],
            "diversity": cfg["diversity"],
        }
    elif variant == "ebsw":
        params = {"f": cfg["f"], "offset": cfg["offset"]}
    return SlicedConfig(variant, cfg["p"], cfg["slices"], cfg["scheme"], seed, params)


def _load_pair(path_a, path_b):
    a, b = load_cloud(path_a), load_cloud(path_b)
    if a.shape[1] != b.shape[1]:
        raise InputError(f"clouds differ in dimension: {a.shape[1]} vs {b.shape[1]}")
    return a, b


# -- subcommands --------------------------------------------------------------
# each runner takes (cfg, inputs, out_dir) and returns (record, outputs, lines)


def run_dist(cfg, inputs, out_dir):
    a, b = _load_pair(inputs["a"], inputs["b"])
    scfg = _sliced_cfg(cfg, cfg["seed"])
    value = sliced_distance(a, b, scfg)
    record = {"variant": scfg.variant, "value": value, "sliced_config": json.loads(scfg.to_json())}
    lines = [f"{scfg.variant}: {value!r}"]
    if a.shape[0] == b.shape[0] and a.shape[0] <= EXACT_W2_CAP:
        record["exact_w2"] = exact_w2(a, b)
        lines.append(f"exact_w2: {record['exact_w2']!r}")
    out = out_dir / "dist.json"
    _write_json(out, record)
    return record, {"record": out}, lines


def run_eval(cfg, inputs, out_dir):
    n = int(cfg["n"])
    if n > EXACT_W2_CAP:
        raise ConfigError(f"--n {n} exceeds the exact_w2 cap of {EXACT_W2_CAP}")
    if n < 1:
        raise ConfigError("--n must be >= 1")
    a, b = _load_pair(inputs["a"], inputs["b"])
    m = min(n, a.shape[0], b.shape[0])
    rng = np.random.default_rng(cfg["seed"])
    sa = a[rng.choice(a.shape[0], size=m, replace=False)] if a.shape[0] > m else a
    sb = b[rng.choice(b.shape[0], size=m, replace=False)] if b.shape[0] > m else b
    value = exact_w2(sa, sb)
    record = {"w2": value, "n": m}
    out = out_dir / "eval.json"
    _write_json(out, record)
    return record, {"record": out}, [f"w2: {value!r} (n={m})"]


def run_transfer(cfg, inputs, out_dir):
    content = load_image(inputs["content"])
    reference = load_image(inputs["reference"])
    pcfg = PaletteTransferConfig(
        mode=cfg["mode"],
        iterations=int(cfg["iters"]),
        step=float(cfg["lr"]),
        samples=int(cfg["samples"]),
        slices=int(cfg["slices"]),
        seed=cfg["seed"],
    )
    trace = []
    result = transfer_palette(content, reference, pcfg, trace=trace)
    out_img = out_dir / Path(cfg["output"]).name
    save_image(result, out_img)
    rows = [palette_report(Path(inputs["content"]).stem, content, result, reference, seed=cfg["seed"])]
    outputs = {"image": out_img}
    if cfg["baseline"]:
        hm = histogram_match(content, reference)
        hm_path = out_dir / ("hm_" + out_img.name)
        save_image(hm, hm_path)
        row = palette_report("hm", content, hm, reference, seed=cfg["seed"])
        rows.append(row)
        outputs["baseline"] = hm_path
    report = out_dir / "transfer_report.csv"
    _write_csv(report, list(rows[0]), [list(r.values()) for r in rows])
    trace_path = out_dir / "transfer_trace.csv"
    _write_csv(trace_path, ["iteration", "loss"], trace)
    outputs.update(report=report, trace=trace_path)
    r = rows[0]
    lines = [
        f"w2_before: {r['w2_before']!r}",
        f"w2_after: {r['w2_after']!r}",
        "w2_after <= w2_before" if r["w2_after"] <= r["w2_before"] else "w2_after > w2_before",
    ]
    if cfg["baseline"]:
        lines.append(f"hm w2_after: {rows[1]['w2_after']!r}")
    return r, outputs, lines


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read model spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"model spec {path} is not valid JSON: {exc}") from exc
    model = GmmScoreModel.from_dict(doc)
    decoder = Decoder.from_dict(doc["decoder"]) if "decoder" in doc else None
    return model, decoder


def _guidance_cfg(cfg, lr=None, seed=None):
    return GuidanceConfig(
        slices=int(cfg["slices"]),
        inner_steps=int(cfg["inner_steps"]),
        lr=float(cfg["lr"] if lr is None else lr),
        normalize_grad=bool(cfg["normalize"]),
        gamma=float(cfg["gamma"]),
        loss_mode=cfg["loss_mode"],
        variant=cfg["variant"],
        p=float(cfg["p"]),
        label=cfg["label"],
        batch=int(cfg["batch"]),
        seed=cfg["seed"] if seed is None else seed,
    )


def run_diffuse(cfg, inputs, out_dir):
    model, decoder = _load_model(inputs["model"])
    if decoder is None:
        decoder = Decoder.random(cfg["decoder"], model.dim, seed=int(cfg["decoder_seed"]))
    reference = load_cloud(inputs["reference"])
    if reference.shape[1] != model.dim:
        raise InputError(f"reference has d={reference.shape[1]}, model has d={model.dim}")
    schedule = DdimSchedule(steps=int(cfg["steps"]), spacing=cfg["spacing"])
    gcfg = _guidance_cfg(cfg)
    outputs = {}
    if cfg["sweep"]:
        grid = parse_sweep(cfg["sweep"])
        seeds = [gcfg.seed + i for i in range(int(cfg["sweep_seeds"]))]
        rows = lr_sweep(model, schedule, decoder, reference, gcfg, grid, seeds)
        path = out_dir / "sweep.csv"
        _write_csv(
            path,
            ["lr", "w2", "w2_std", "mean_err", "cov_err"],
            [[r["lr"], r["w2"], r["w2_std"], r["mean_err"], r["cov_err"]] for r in rows],
        )
        outputs["sweep"] = path
        lines = [f"lr={r['lr']:.4g} w2={r['w2']:.6f} +- {r['w2_std']:.6f}" for r in rows]
        return {"sweep": rows}, outputs, lines

    guided = guided_sample(model, schedule, decoder, reference, gcfg)
    plain = unguided_sample(model, schedule, decoder, gcfg)
    ref = _prepare_reference(reference, guided.cloud.shape[0], gcfg.seed)
    m_g, c_g = moment_errors(guided.cloud, ref)
    m_u, c_u = moment_errors(plain.cloud, ref)
    metrics = {
        "w2_guided": exact_w2(guided.cloud, ref) if ref.shape[0] <= EXACT_W2_CAP else None,
        "w2_unguided": exact_w2(plain.cloud, ref) if ref.shape[0] <= EXACT_W2_CAP else None,
        "mean_err_guided": m_g,
        "cov_err_guided": c_g,
        "mean_err_unguided": m_u,
        "cov_err_unguided": c_u,
        "guided_sha256": _array_hash(guided.cloud),
        "unguided_sha256": _array_hash(plain.cloud),
    }
    cloud_path = out_dir / "generated.swpc"
    save_cloud(cloud_path, guided.cloud)
    trace_path = out_dir / "trace.csv"
    _write_csv(trace_path, ["step", "iteration", "loss", "grad_norm", "u_norm"], guided.trace)
    metrics_path = out_dir / "metrics.json"
    _write_json(metrics_path, metrics)
    outputs.update(cloud=cloud_path, trace=trace_path, metrics=metrics_path)
    lines = [f"w2_guided: {metrics['w2_guided']!r}", f"w2_unguided: {metrics['w2_unguided']!r}"]
    return metrics, outputs, lines


def _gradcheck_instance(target, cfg, rng, prior, reference_pool):
    n, d = int(cfg["n"]), 3
    eps = float(cfg["eps"])
    scfg = SlicedConfig("sw", 1.0, int(cfg["slices"]), "rotation-triples", int(rng.integers(2**31)))
    slices = sample_slices(scfg, d)
    if target == "sw1":
        a, b = rng.random((n, d)), rng.random((n, d))
        rep = grad_sw1(a, b, slices)
        f = lambda z: grad_sw1(z, b, slices).loss  # noqa: E731
        return finite_diff_check(f, a, rep.grad, eps, cfg["tol"], sw1_tie_mask(a, b, slices, eps), "sw1")
    if target == "moments":
        a, b = rng.random((n, d)), rng.random((n, d))
        rep = grad_moments(a, b)
        f = lambda z: grad_moments(z, b).loss  # noqa: E731
        return finite_diff_check(f, a, rep.grad, eps, cfg["tol"], None, "moments")
    decoder = Decoder.random(cfg["decoder"], d, seed=int(cfg["decoder_seed"]))
    abar = float(rng.uniform(0.05, 0.95))
    x0 = DifferentiableMap(
        "x0", lambda z: predict_x0_at(prior, z, abar), lambda z, ct: x0_vjp(prior, z, abar, ct)
    )
    maps = [x0, decoder.as_map()]
    x = rng.standard_normal((n, d))
    b = reference_pool[rng.integers(0, reference_pool.shape[0], size=n)]
    if cfg["decoder"] == "identity":
        b = predict_x0_at(prior, rng.standard_normal((n, d)), abar)

    def f(z):
        return grad_sw1(chain_forward(maps, z)[-1], b, slices).loss

    values = chain_forward(maps, x)
    grad = chain_vjp(maps, x, grad_sw1(values[-1], b, slices).grad, values)
    ties = chain_tie_mask(maps, x, b, slices, eps)
    return finite_diff_check(f, x, grad, eps, cfg["tol"], ties, f"chain[{cfg['decoder']}]")


def run_gradcheck(cfg, inputs, out_dir):
    from .corpus import builtin_prior, shifted_reference

    target = inputs["target"]
    if cfg["tol"] is None:
        cfg["tol"] = 1e-3 if (target == "chain" and cfg["decoder"] == "affine-tanh") else 1e-4
    rng = np.random.default_rng(cfg["seed"])
    prior = builtin_prior()
    pool = shifted_reference(512, seed=int(rng.integers(2**31)))
    reports = [
        _gradcheck_instance(target, cfg, rng, prior, pool) for _ in range(int(cfg["instances"]))
    ]
    worst = max(r.max_rel_err for r in reports)
    passed = all(r.passed for r in reports)
    record = {
        "target": target,
        "pass": passed,
        "tol": cfg["tol"],
        "max_rel_err": worst,
        "flagged_ties": int(sum(r.flagged_ties for r in reports)),
        "instances": [r.to_dict() for r in reports],
    }
    out = out_dir / "gradcheck.json"
    _write_json(out, record)
    verdict = "PASS" if passed else "FAIL"
    return record, {"report": out}, [f"{verdict} {target}: max_rel_err={worst:.3e} tol={cfg['tol']:g}"]


RUNNERS = {
    "dist": run_dist,
    "eval": run_eval,
    "transfer": run_transfer,
    "diffuse": run_diffuse,
    "gradcheck": run_gradcheck,
}


# -- argument parsing ---------------------------------------------------------


def _opt(p, flag, help, **kw):
    p.add_argument(flag, default=argparse.SUPPRESS, help=help, **kw)


def _common(p):
    _opt(p, "--config", "JSON file of settings (flat, keyed by option name)", metavar="PATH")
    _opt(p, "--seed", "master seed; omitted -> a fresh seed is drawn and printed", type=int)
    p.add_argument("--out-dir", default=".", help="directory for outputs and the manifest")
    p.add_argument("--manifest", default=None, help="manifest path (default OUT_DIR/<cmd>.manifest.json)")


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swguide",
        description="Sliced Wasserstein distances, color guidance and palette transfer.",
        epilog="Exit codes: 0 ok, 1 check failed, 2 bad input, 3 config error, 4 numeric failure.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"swguide {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="sliced distance between two clouds", allow_abbrev=False)
    p.add_argument("a", help="first cloud (.swpc or .csv)")
    p.add_argument("b", help="second cloud (.swpc or .csv)")
    _opt(p, "--variant", "sliced variant (default sw)", choices=VARIANTS)
    _opt(p, "--p", "order p >= 1 (default 1)", type=float)
    _opt(p, "--slices", "K: rotations (rotation-triples) or directions (default 10)", type=int)
    _opt(p, "--scheme", "direction sampling scheme", choices=SCHEMES)
    _opt(p, "--g", "gsw defining function", choices=("linear", "poly3"))
    _opt(p, "--pool", "dsw candidate pool size L (default 100)", type=int)
    _opt(p, "--dsw-iterations", "dsw ascent iterations (default 50)", type=int)
    _opt(p, "--dsw-step", "dsw ascent step (default 1.0)", type=float)
    _opt(p, "--diversity", "dsw diversity penalty (default 0.1)", type=float)
    _opt(p, "--f", "ebsw energy function", choices=("exp", "linear", "constant"))
    _opt(p, "--offset", "ebsw offset for f=linear (default 1.0)", type=float)
    _common(p)

    p = sub.add_parser("eval", help="exact W2 on subsampled clouds", allow_abbrev=False)
    p.add_argument("a")
    p.add_argument("b")
    _opt(p, "--n", f"points per cloud after subsampling (default 3000, max {EXACT_W2_CAP})", type=int)
    _common(p)

    p = sub.add_parser("transfer", help="palette transfer between two images", allow_abbrev=False)
    p.add_argument("content", help="content image (.png, .ppm or .swim)")
    p.add_argument("reference", help="reference image (.png, .ppm or .swim)")
    _opt(p, "--mode", "loss mode (default sw)", choices=LOSS_MODES)
    _opt(p, "--iters", f"iterations (default {PaletteTransferConfig.iterations})", type=int)
    _opt(p, "--lr", f"initial step in color units (default {PaletteTransferConfig.step})", type=float)
    _opt(p, "--samples", "pixels sampled per iteration from each image (default 4096)", type=int)
    _opt(p, "--slices", "K rotations per iteration (default 10)", type=int)
    _opt(p, "--output", "output image name, written inside --out-dir (default transfer.png)")
    _opt(p, "--baseline", "also run histogram matching (true/false)", type=_bool)
    _common(p)

    p = sub.add_parser("diffuse", help="guided sampling from a GMM model", allow_abbrev=False)
    p.add_argument("model", help="GMM spec JSON (weights, means, covariances[, conditional, decoder])")
    p.add_argument("reference", help="reference cloud in decoded space (.swpc or .csv)")
    _opt(p, "--lr", f"guidance learning rate (default {GuidanceConfig.lr})", type=float)
    _opt(p, "--inner-steps", "M, inner guidance iterations per step (default 10)", type=int)
    _opt(p, "--slices", "K rotations per inner iteration (default 10)", type=int)
    _opt(p, "--loss-mode", "guidance loss (default sw)", choices=LOSS_MODES)
    _opt(p, "--variant", "sliced variant of the sw term (default sw)", choices=VARIANTS)
    _opt(p, "--p", "order p (default 1)", type=float)
    _opt(p, "--normalize", "divide guidance gradients by their std (default true)", type=_bool)
    _opt(p, "--gamma", "classifier-free guidance scale (default 1)", type=float)
    _opt(p, "--label", "conditional branch label")
    _opt(p, "--batch", "samples generated (default 512)", type=int)
    _opt(p, "--steps", "DDIM inference steps (default 30)", type=int)
    _opt(p, "--spacing", "timestep spacing (default quadratic)", choices=("quadratic", "even"))
    _opt(p, "--decoder", "decoder kind when the spec has none (default affine-tanh)",
         choices=("identity", "affine", "affine-tanh"))
    _opt(p, "--decoder-seed", "seed of the random decoder (default 7)", type=int)
    _opt(p, "--sweep", "learning-rate sweep lo:hi:count (log-spaced)")
    _opt(p, "--sweep-seeds", "seeds per sweep point (default 3)", type=int)
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", allow_abbrev=False)
    p.add_argument("target", choices=("sw1", "moments", "chain"))
    _opt(p, "--decoder", "decoder in the chain (default identity)",
         choices=("identity", "affine", "affine-tanh"))
    _opt(p, "--decoder-seed", "seed of the random decoder (default 7)", type=int)
    _opt(p, "--instances", "random instances (default 50)", type=int)
    _opt(p, "--n", "points per instance (default 64)", type=int)
    _opt(p, "--slices", "K rotations (default 10)", type=int)
    _opt(p, "--eps", "central-difference step (default 1e-5)", type=float)
    _opt(p, "--tol", "max relative error (default 1e-4; 1e-3 for chain with affine-tanh)",
         type=float)
    _common(p)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes",
                       allow_abbrev=False)
    p.add_argument("manifest_path", metavar="manifest")
    p.add_argument("--out-dir", default=None, help="where to write replayed outputs (default: temp)")
    return parser


INPUT_NAMES = {
    "dist": ("a", "b"),
    "eval": ("a", "b"),
    "transfer": ("content", "reference"),
    "diffuse": ("model", "reference"),
    "gradcheck": ("target",),
}
PATH_INPUTS = {"a", "b", "content", "reference", "model"}


def resolve_config(command, given, config_path=None):
    """Merge defaults < config file < flags, rejecting unknown keys."""
    cfg = dict(DEFAULTS[command])
    cfg["seed"] = None
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {unknown}")
        cfg.update(doc)
    cfg.update(given)
    return cfg


def _execute(command, cfg, inputs, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    record, outputs, lines = RUNNERS[command](cfg, inputs, out_dir)
    elapsed = time.perf_counter() - t0
    hashes = {key: {"path": p.name, "sha256": sha256_file(p)} for key, p in outputs.items()}
    return record, hashes, lines, elapsed


def _manifest(command, cfg, inputs, hashes, elapsed):
    return {
        "subcommand": command,
        "version": __version__,
        "backend": BACKEND,
        "config": cfg,
        "seed": cfg["seed"],
        "inputs": {
            k: {"path": str(Path(v).resolve()), "sha256": sha256_file(v)} if k in PATH_INPUTS else v
            for k, v in inputs.items()
        },
        "outputs": hashes,
        "timings": {"wall_seconds": elapsed},
    }


def replay(manifest_path, out_dir=None):
    """Re-run a manifest; returns ``(ok, mismatches)``."""
    try:
        doc = json.loads(Path(manifest_path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    command = doc.get("subcommand")
    if command not in RUNNERS:
        raise ConfigError(f"manifest names unknown subcommand {command!r}")
    inputs = {k: (v["path"] if isinstance(v, dict) else v) for k, v in doc["inputs"].items()}
    for k, v in doc["inputs"].items():
        if isinstance(v, dict) and sha256_file(v["path"]) != v["sha256"]:
            raise InputError(f"input {k} ({v['path']}) changed since the manifest was written")
    with tempfile.TemporaryDirectory() as tmp:
        target = Path(out_dir) if out_dir else Path(tmp)
        _, hashes, _, _ = _execute(command, dict(doc["config"]), inputs, target)
    mismatches = [
        key
        for key, entry in doc["outputs"].items()
        if hashes.get(key, {}).get("sha256") != entry["sha256"]
    ]
    return not mismatches, mismatches


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            ok, bad = replay(args.manifest_path, args.out_dir)
            print("replay: all output hashes match" if ok else f"replay: mismatched outputs {bad}")
            return 0 if ok else EXIT_CHECK_FAILED
        given = {
            k: v
            for k, v in vars(args).items()
            if k not in ("command", "config", "out_dir", "manifest", *INPUT_NAMES[args.command])
        }
        cfg = resolve_config(args.command, given, getattr(args, "config", None))
        if cfg["seed"] is None:
            cfg["seed"] = secrets.randbits(32)
            print(f"seed: {cfg['seed']}", file=sys.stderr)
        inputs = {k: getattr(args, k) for k in INPUT_NAMES[args.command]}
        out_dir = Path(args.out_dir)
        record, hashes, lines, elapsed = _execute(args.command, cfg, inputs, out_dir)
        manifest_path = Path(args.manifest or out_dir / f"{args.command}.manifest.json")
        _write_json(manifest_path, _manifest(args.command, cfg, inputs, hashes, elapsed))
        for line in lines:
            print(line)
        if args.command == "gradcheck" and not record["pass"]:
            return EXIT_CHECK_FAILED
        return 0
    except SwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
