import json

import numpy as np
import pytest
import yaml

from svelift import cli
from svelift.config import load_config, run_experiment, validate
from svelift.errors import ConfigError
from svelift.io import read_ensemble, sha256_file, write_ensemble
from svelift.see_sim import PathEnsemble

LIPSCHITZ = {
    "kernel": {"kind": "fractional", "alpha": 0.75},
    "grid": {"N": 20, "theta_min": 1e-2, "theta_max": 1e2},
    "coefficients": {
        "drift": {"name": "linear_drift", "params": {"a": -1.0}},
        "sigma": {"name": "sin_sigma", "params": {"c0": 1.0, "a": 0.3}},
    },
    "simulation": {"T": 1.0, "h": 0.03125, "samples": 300},
}

CNR = dict(
    LIPSCHITZ,
    experiment="cnr",
    seed=3,
    simulation={"T": 1.0, "h": 1 / 128, "samples": 300},
    schedule={"k_max": 2},
    cnr={
        "reference": {
            "drift": {"name": "linear_drift", "params": {"a": -1.0, "c": 5e-4}},
            "sigma": {"name": "sin_sigma", "params": {"c0": 1.0, "a": 0.3}},
        },
        "mollify": 1e-6,
        "params": {"m": "grid_max", "M_bar": "grid_max", "delta0": 1e-6, "delta1": 1e-9, "delta2": 1e-3,
                   "delta3": 0.05, "lam": 10.0, "J": 1.0},
    },
)


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(json.dumps(raw) if name.endswith(".json") else yaml.safe_dump(raw))
    return p


class TestLoad:
    def test_minimal_atomic(self, tmp_path):
        cfg = load_config(_write(tmp_path, {"kernel": {"kind": "atomic", "weights": [1.0], "nodes": [0.0]}}))
        assert cfg.kernel.regular and cfg.pair.name == "zero_drift+zero_sigma"

    def test_json(self, tmp_path):
        cfg = load_config(_write(tmp_path, LIPSCHITZ, "cfg.json"))
        assert cfg.sim["steps"] == 32

    def test_alpha_domain(self, tmp_path):
        with pytest.raises(ConfigError, match=r"alpha must lie in \(1/2,1\)") as exc:
            load_config(_write(tmp_path, {"kernel": {"kind": "fractional", "alpha": 0.4}}))
        assert exc.value.field == "kernel.alpha"

    def test_balance_refusal(self, tmp_path):
        raw = {"kernel": {"kind": "fractional", "alpha": 0.75}, "balance": True,
               "coefficients": {"sigma": {"name": "holder_sigma", "params": {"gamma": 0.4, "c0": 1.0}}}}
        with pytest.raises(ConfigError, match="schedule refused") as exc:
            load_config(_write(tmp_path, raw))
        assert exc.value.field == "coefficients.sigma"

    def test_balance_pass(self, tmp_path):
        raw = {"kernel": {"kind": "fractional", "alpha": 0.75}, "balance": True,
               "coefficients": {"sigma": {"name": "holder_sigma", "params": {"gamma": 0.8, "c0": 1.0}}}}
        assert load_config(_write(tmp_path, raw)).pair.rho_sigma.gamma == 0.8

    @pytest.mark.parametrize("patch,field", [
        ({"coefficients": {"drift": {"name": "cubic"}}}, "coefficients.drift"),
        ({"coefficients": {"sigma": {"name": "holder_sigma", "params": {"gamma": 0.5, "c0": -1}}}},
         "coefficients.sigma.params.c0"),
        ({"coefficients": {"drift": {"name": "power_drift", "params": {"beta": 2.0}}}},
         "coefficients.drift.params.beta"),
        ({"simulation": {"T": 1.0, "h": 0.3}}, "simulation.h"),
        ({"kernel": {"kind": "fractional", "alpha": 0.75, "eta": 0.1}}, "kernel.eta"),
        ({"kernel": {"kind": "gamma", "alpha": 0.75}}, "kernel.beta"),
        ({"kernel": {"kind": "spline"}}, "kernel.kind"),
        ({"grid": {"N": 0}}, "grid.N"),
        ({"bogus": 1}, "bogus"),
        ({"experiment": "fly"}, "experiment"),
        ({"experiment": "cnr"}, "cnr"),
    ])
    def test_field_named(self, patch, field):
        raw = dict(LIPSCHITZ)
        raw.update(patch)
        with pytest.raises(ConfigError) as exc:
            validate(raw)
        assert exc.value.field == field

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_overrides(self):
        cfg = validate(LIPSCHITZ).with_overrides(seed=9, threads=2)
        assert (cfg.seed, cfg.threads) == (9, 2)


def test_ensemble_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ens = PathEnsemble(np.arange(5) * 0.25, rng.normal(size=(3, 5, 2)), np.arange(3))
    p = write_ensemble(tmp_path / "e.csv", ens)
    back = read_ensemble(p)
    assert np.array_equal(back.X, ens.X) and np.array_equal(back.t, ens.t)


class TestRun:
    def test_demo_recipe(self, tmp_path):
        raw = {"experiment": "demo-regularization", "demo": {"N": 20, "samples": 120, "h": 2**-5}}
        out = run_experiment(validate(raw), tmp_path / "demo")
        for f in ("demo.csv", "demo_lift.csv", "demo_direct.csv", "demo_summary.csv", "manifest.json"):
            assert (out / f).is_file()
        head = (out / "demo.csv").read_text().splitlines()[0]
        assert head == "t,branch_plus,branch_minus,perturbed_plus,perturbed_minus,unperturbed"

    def test_cnr_recipe_and_manifest(self, tmp_path):
        out = run_experiment(validate(CNR), tmp_path / "cnr")
        man = json.loads((out / "manifest.json").read_text())
        assert set(man["files"]) == {"schedule.csv", "cnr.csv", "cnr_aggregate.csv", "config.json"}
        for name, digest in man["files"].items():
            assert sha256_file(out / name) == digest
        assert man["seed"] == 3 and "numpy" in man["versions"]
        agg = dict(line.split(",") for line in (out / "cnr_aggregate.csv").read_text().splitlines()[1:])
        assert float(agg["energy_max"]) <= float(agg["energy_cap"])

    def test_rerun_identical_bytes_across_threads(self, tmp_path):
        raw = dict(LIPSCHITZ, experiment="simulate-lift", seed=4)
        a = run_experiment(validate(dict(raw, threads=1)), tmp_path / "a")
        b = run_experiment(validate(dict(raw, threads=4)), tmp_path / "b")
        assert (a / "ensemble.csv").read_bytes() == (b / "ensemble.csv").read_bytes()


class TestCli:
    def test_subcommands(self, tmp_path, capsys):
        cfg = _write(tmp_path, dict(LIPSCHITZ, schedule={"k_max": 1}))
        od = str(tmp_path / "o")
        assert cli.main(["--config", str(cfg), "--out-dir", od, "kernel-info"]) == 0
        assert (tmp_path / "o" / "kernel_info.csv").read_text().startswith("m,R_m,eps_m,R_rho_ratio\n")
        assert cli.main(["discretize", "--config", str(cfg), "--out-dir", od]) == 0
        assert (tmp_path / "o" / "grid.csv").read_text().startswith("theta,weight,r_theta\n")
        assert cli.main(["kernel-error", "--config", str(cfg), "--out-dir", od]) == 0
        assert (tmp_path / "o" / "kernel_error.csv").read_text().startswith("t,K,K_N,rel_err\n")
        assert cli.main(["simulate-lift", "--config", str(cfg), "--out-dir", od, "--out", "a.csv", "--dump-state"]) == 0
        assert "Y_20_1" in (tmp_path / "o" / "a.csv").read_text().splitlines()[0]
        assert cli.main(["simulate-direct", "--config", str(cfg), "--out-dir", od, "--out", "b.csv", "--seed", "5"]) == 0
        assert cli.main(["compare-laws", "--out-dir", od, "--a", f"{od}/a.csv", "--b", f"{od}/b.csv", "--t", "1"]) == 0
        rep = (tmp_path / "o" / "report.csv").read_text()
        assert "ks," in rep and "wasserstein," in rep
        assert cli.main(["schedule", "--config", str(cfg), "--out-dir", od]) == 0
        assert (tmp_path / "o" / "schedule.csv").read_text().startswith("k,m,M,delta0")

    def test_cnr_run(self, tmp_path):
        cfg = _write(tmp_path, CNR)
        out = tmp_path / "cnr.csv"
        assert cli.main(["cnr-run", "--config", str(cfg), "--out", str(out)]) == 0
        assert out.read_text().startswith("path_id,tau,tau_event,zeta,in_omega_hat,energy")
        assert (tmp_path / "cnr_aggregate.csv").is_file()

    def test_error_exit(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"kernel": {"kind": "fractional", "alpha": 0.4}})
        assert cli.main(["kernel-info", "--config", str(cfg)]) == 2
        assert "kernel.alpha: alpha must lie in (1/2,1)" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        assert cli.main(["kernel-info"]) == 2
