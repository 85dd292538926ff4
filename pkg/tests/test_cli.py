"""Command-line contract: outputs, manifests, exit codes and config merging."""

import json
from importlib import resources

import numpy as np
import pytest

from swguide import cli
from swguide.cloudio import save_cloud
from swguide.corpus import builtin_decoder, builtin_prior, palette_corpus, shifted_reference
from swguide.palette import save_image

GOLDEN_SW_K10_SEED7 = 0.12748469847587127


def _data(name):
    return str(resources.files("swguide").joinpath("data", name))


@pytest.fixture
def fixtures():
    return _data("fixture_a.swpc"), _data("fixture_b.swpc")


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestDist:
    def test_golden_value(self, fixtures, tmp_path, capsys):
        code, out, _ = run(["dist", *fixtures, "--slices", 10, "--seed", 7, "--out-dir", tmp_path], capsys)
        assert code == 0
        rec = json.loads((tmp_path / "dist.json").read_text())
        assert abs(rec["value"] - GOLDEN_SW_K10_SEED7) < 1e-12
        assert "exact_w2" in rec and "exact_w2" in out

    @pytest.mark.parametrize("variant", ["sw", "gsw", "dsw", "ebsw"])
    def test_identical_files_are_zero(self, fixtures, tmp_path, capsys, variant):
        code, _, _ = run(["dist", fixtures[0], fixtures[0], "--variant", variant, "--seed", 1,
                          "--out-dir", tmp_path], capsys)
        assert code == 0
        assert json.loads((tmp_path / "dist.json").read_text())["value"] == 0.0

    def test_ebsw_constant_equals_sw(self, fixtures, tmp_path, capsys):
        run(["dist", *fixtures, "--seed", 7, "--out-dir", tmp_path / "sw"], capsys)
        run(["dist", *fixtures, "--seed", 7, "--variant", "ebsw", "--f", "constant",
             "--out-dir", tmp_path / "eb"], capsys)
        sw = json.loads((tmp_path / "sw" / "dist.json").read_text())["value"]
        eb = json.loads((tmp_path / "eb" / "dist.json").read_text())["value"]
        assert sw == eb

    def test_dimension_mismatch(self, tmp_path, capsys):
        save_cloud(tmp_path / "a.swpc", np.zeros((4, 3)))
        save_cloud(tmp_path / "b.swpc", np.zeros((4, 2)))
        code, _, err = run(["dist", tmp_path / "a.swpc", tmp_path / "b.swpc", "--seed", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 2 and "dimension" in err


class TestExitCodes:
    def test_missing_input(self, tmp_path, capsys):
        code, _, _ = run(["dist", tmp_path / "no.swpc", tmp_path / "no.swpc", "--seed", 0,
                          "--out-dir", tmp_path], capsys)
        assert code == 2

    def test_bad_order(self, fixtures, tmp_path, capsys):
        code, _, _ = run(["dist", *fixtures, "--p", 0.5, "--seed", 0, "--out-dir", tmp_path], capsys)
        assert code == 3

    def test_unknown_flag_is_an_error(self, fixtures, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["dist", *fixtures, "--slicez", "3"])
        assert exc.value.code == 2
        assert "unrecognized" in capsys.readouterr().err

    def test_no_prefix_abbreviations(self, fixtures, capsys):
        with pytest.raises(SystemExit):
            cli.main(["dist", *fixtures, "--sli", "3"])

    def test_help_lists_every_flag(self, capsys):
        for command, defaults in cli.DEFAULTS.items():
            with pytest.raises(SystemExit):
                cli.main([command, "--help"])
            text = capsys.readouterr().out
            for key in defaults:
                assert "--" + key.replace("_", "-") in text, (command, key)
            assert "--seed" in text and "--config" in text

    def test_invalid_gmm_names_component(self, tmp_path, capsys):
        spec = {"weights": [0.5, 0.5], "means": [[0, 0, 0], [1, 1, 1]],
                "covariances": [np.eye(3).tolist(), (-np.eye(3)).tolist()]}
        (tmp_path / "m.json").write_text(json.dumps(spec))
        save_cloud(tmp_path / "r.swpc", np.full((8, 3), 0.5))
        code, _, err = run(["diffuse", tmp_path / "m.json", tmp_path / "r.swpc", "--seed", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 3 and "component 1" in err

    def test_failed_gradcheck_exits_one(self, tmp_path, capsys):
        code, out, _ = run(["gradcheck", "moments", "--instances", 2, "--tol", 1e-30, "--seed", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 1 and out.startswith("FAIL")


class TestConfigAndSeeds:
    def test_merge_order(self, fixtures, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"slices": 3, "variant": "ebsw", "seed": 11}))
        run(["dist", *fixtures, "--config", conf, "--slices", 5, "--out-dir", tmp_path], capsys)
        man = json.loads((tmp_path / "dist.manifest.json").read_text())
        assert man["config"]["slices"] == 5
        assert man["config"]["variant"] == "ebsw"
        assert man["config"]["seed"] == 11
        assert man["config"]["p"] == 1.0

    def test_unknown_config_key(self, fixtures, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"slicez": 3}))
        code, _, err = run(["dist", *fixtures, "--config", conf, "--out-dir", tmp_path], capsys)
        assert code == 3 and "slicez" in err

    def test_omitted_seed_is_printed_and_recorded(self, fixtures, tmp_path, capsys):
        code, _, err = run(["dist", *fixtures, "--out-dir", tmp_path], capsys)
        assert code == 0
        seed = int(err.split("seed:")[1].split()[0])
        man = json.loads((tmp_path / "dist.manifest.json").read_text())
        assert man["seed"] == seed

    def test_manifest_fields(self, fixtures, tmp_path, capsys):
        run(["dist", *fixtures, "--seed", 3, "--out-dir", tmp_path], capsys)
        man = json.loads((tmp_path / "dist.manifest.json").read_text())
        assert {"subcommand", "version", "backend", "config", "seed", "inputs", "outputs", "timings"} <= set(man)
        assert len(man["outputs"]["record"]["sha256"]) == 64
        assert len(man["inputs"]["a"]["sha256"]) == 64


class TestReplay:
    @pytest.mark.parametrize(
        "argv",
        [
            ["dist", "A", "B", "--variant", "dsw"],
            ["eval", "A", "B", "--n", 200],
            ["gradcheck", "chain", "--decoder", "affine-tanh", "--instances", 3],
        ],
    )
    def test_replay_matches(self, fixtures, tmp_path, capsys, argv):
        argv = [{"A": fixtures[0], "B": fixtures[1]}.get(a, a) for a in argv]
        assert run([*argv, "--seed", 5, "--out-dir", tmp_path], capsys)[0] == 0
        manifest = next(tmp_path.glob("*.manifest.json"))
        code, out, _ = run(["replay", manifest], capsys)
        assert code == 0 and "match" in out

    def test_tampered_output_is_detected(self, fixtures, tmp_path, capsys):
        run(["dist", *fixtures, "--seed", 5, "--out-dir", tmp_path], capsys)
        man_path = tmp_path / "dist.manifest.json"
        man = json.loads(man_path.read_text())
        man["outputs"]["record"]["sha256"] = "0" * 64
        man_path.write_text(json.dumps(man))
        code, out, _ = run(["replay", man_path], capsys)
        assert code == 1 and "record" in out

    def test_changed_input_is_rejected(self, tmp_path, capsys):
        a = tmp_path / "a.swpc"
        save_cloud(a, np.random.default_rng(0).random((10, 3)))
        run(["dist", a, a, "--seed", 5, "--out-dir", tmp_path], capsys)
        save_cloud(a, np.random.default_rng(1).random((10, 3)))
        code, _, err = run(["replay", tmp_path / "dist.manifest.json"], capsys)
        assert code == 2 and "changed" in err


class TestEval:
    def test_identical_is_zero(self, fixtures, tmp_path, capsys):
        run(["eval", fixtures[0], fixtures[0], "--seed", 0, "--out-dir", tmp_path], capsys)
        assert json.loads((tmp_path / "eval.json").read_text())["w2"] == 0.0

    def test_unit_separated_point_masses(self, tmp_path, capsys):
        save_cloud(tmp_path / "a.swpc", np.zeros((50, 3)))
        save_cloud(tmp_path / "b.swpc", np.tile([0.0, 1.0, 0.0], (50, 1)))
        run(["eval", tmp_path / "a.swpc", tmp_path / "b.swpc", "--seed", 0, "--out-dir", tmp_path], capsys)
        assert json.loads((tmp_path / "eval.json").read_text())["w2"] == pytest.approx(1.0, abs=1e-12)

    def test_cap(self, fixtures, tmp_path, capsys):
        assert run(["eval", *fixtures, "--n", 5000, "--seed", 0, "--out-dir", tmp_path], capsys)[0] == 3

    def test_subsampling_stability(self, tmp_path, capsys):
        # decoded simulator output against the shifted reference style
        generated = builtin_decoder().forward(builtin_prior().sample(10_000, np.random.default_rng(1)))
        save_cloud(tmp_path / "a.swpc", generated)
        save_cloud(tmp_path / "b.swpc", shifted_reference(10_000, seed=5))
        values = []
        for seed in range(3):
            out = tmp_path / str(seed)
            run(["eval", tmp_path / "a.swpc", tmp_path / "b.swpc", "--seed", seed, "--out-dir", out], capsys)
            values.append(json.loads((out / "eval.json").read_text())["w2"])
        assert max(values) - min(values) < 0.01


@pytest.fixture(scope="module")
def image_pair(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    _, content, ref = palette_corpus()[3]
    save_image(content, root / "content.png")
    save_image(ref, root / "reference.png")
    return root / "content.png", root / "reference.png"


class TestTransfer:
    def test_defaults(self):
        d = cli.DEFAULTS["transfer"]
        assert (d["slices"], d["samples"], d["mode"]) == (10, 4096, "sw")

    def test_self_transfer_report(self, image_pair, tmp_path, capsys):
        code, out, _ = run(["transfer", image_pair[0], image_pair[0], "--iters", 50, "--seed", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 0
        assert "w2_after <= w2_before" in out
        assert (tmp_path / "transfer.png").exists()
        header = (tmp_path / "transfer_report.csv").read_text().splitlines()[0]
        assert header.startswith("image_id,w2_before,w2_after,mean_err_r")

    def test_sw_beats_moments(self, image_pair, tmp_path, capsys):
        rows = {}
        for mode in ("sw", "moments"):
            out = tmp_path / mode
            code, _, _ = run(["transfer", *image_pair, "--mode", mode, "--iters", 200, "--samples", 2048,
                              "--seed", 1, "--baseline", "true", "--out-dir", out], capsys)
            assert code == 0
            rows[mode] = (out / "transfer_report.csv").read_text().splitlines()
            assert len(rows[mode]) == 3
        w2 = {m: float(r[1].split(",")[2]) for m, r in rows.items()}
        assert w2["sw"] < w2["moments"]


class TestDiffuse:
    @pytest.fixture
    def model_and_ref(self):
        return _data("gmm3.json"), _data("reference.swpc")

    def test_lr_zero_hashes_match(self, model_and_ref, tmp_path, capsys):
        code, _, _ = run(["diffuse", *model_and_ref, "--lr", 0, "--batch", 64, "--seed", 2,
                          "--out-dir", tmp_path], capsys)
        assert code == 0
        m = json.loads((tmp_path / "metrics.json").read_text())
        assert m["guided_sha256"] == m["unguided_sha256"]

    def test_defaults_halve_w2(self, model_and_ref, tmp_path, capsys):
        code, _, _ = run(["diffuse", *model_and_ref, "--seed", 0, "--out-dir", tmp_path], capsys)
        assert code == 0
        m = json.loads((tmp_path / "metrics.json").read_text())
        assert m["w2_guided"] < 0.5 * m["w2_unguided"]
        trace = (tmp_path / "trace.csv").read_text().splitlines()
        assert trace[0] == "step,iteration,loss,grad_norm,u_norm"
        assert len(trace) == 1 + 30 * 10

    def test_sweep_table(self, model_and_ref, tmp_path, capsys):
        code, out, _ = run(["diffuse", *model_and_ref, "--sweep", "1e-3:1e+1:5", "--sweep-seeds", 1,
                            "--batch", 64, "--steps", 10, "--seed", 0, "--out-dir", tmp_path], capsys)
        assert code == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "lr,w2,w2_std,mean_err,cov_err" and len(lines) == 6

    def test_bad_sweep(self, model_and_ref, tmp_path, capsys):
        assert run(["diffuse", *model_and_ref, "--sweep", "1:0.1:3", "--seed", 0,
                    "--out-dir", tmp_path], capsys)[0] == 3


class TestGradcheck:
    @pytest.mark.parametrize(
        "target,extra,tol",
        [("sw1", [], 1e-4), ("moments", [], 1e-4), ("chain", [], 1e-4),
         ("chain", ["--decoder", "affine-tanh"], 1e-3)],
    )
    def test_passes_at_default_tolerance(self, tmp_path, capsys, target, extra, tol):
        code, out, _ = run(["gradcheck", target, *extra, "--instances", 10, "--seed", 0,
                            "--out-dir", tmp_path], capsys)
        assert code == 0 and out.startswith("PASS")
        rec = json.loads((tmp_path / "gradcheck.json").read_text())
        assert rec["tol"] == tol and rec["max_rel_err"] < tol
