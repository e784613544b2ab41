import json
import os
from pathlib import Path

import numpy as np
import pytest

from gedg.cli import main
from gedg.config import parse_config, parse_config_text
from gedg.errors import ConfigError

SHIPPED = Path(__file__).resolve().parents[1] / "configs" / "constant_kernel.cfg"

BASE = """\
mode = {mode}
kernel.type = separable_sum
ic = exp
n = {n}
cells = {cells}
t_end = {t_end}
output_dir = {out}
"""


def write_cfg(tmp_path, extra="", name="run.cfg", mode="pde", n=8, cells=32, t_end=0.5):
    out = tmp_path / "out"
    text = BASE.format(mode=mode, n=n, cells=cells, t_end=t_end, out=out) + extra
    p = tmp_path / name
    p.write_text(text)
    return p, out


class TestParse:
    def test_defaults(self):
        cfg = parse_config_text("mode = pde\nkernel.type = separable_sum\nic = exp\nn = 4\ncells = 8\nt_end = 1\n")
        assert (cfg.method, cfg.rtol, cfg.atol) == ("rk45", 1e-6, 1e-12)
        assert cfg.void_accepts is False

    def test_cutoff_must_exceed_one(self):
        with pytest.raises(ConfigError, match="n > 1"):
            parse_config_text("mode = pde\nkernel.type = separable_sum\nic = exp\nn = 1\ncells = 8\nt_end = 1\n")

    def test_duplicate_key_names_line(self):
        text = "mode = pde\nkernel.type = separable_sum\nic = exp\nn = 4\nn = 5\ncells = 8\nt_end = 1\n"
        with pytest.raises(ConfigError, match=r":5: duplicate key 'n'"):
            parse_config_text(text)

    def test_all_violations_reported(self):
        text = "mode = nope\nbogus = 1\nn = 0.5\ncells = 1\n"
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        msgs = "\n".join(info.value.violations)
        for frag in ("unknown key 'bogus'", "missing required key 'ic'", "mode must be", "n > 1", "cells"):
            assert frag in msgs

    def test_comments_and_lists(self):
        cfg = parse_config_text("# header\nmode = pde  # inline\nkernel.type = separable_product\n"
                                "kernel.eta = pow:0.25\nic = box:1,2\nn = 4\ncells = 8\nt_end = 1\n"
                                "output_times = 0.25, 0.5\n")
        assert cfg.output_times == [0.25, 0.5] and cfg.kernel_eta == "pow:0.25"

    def test_ssa_needs_replicas(self):
        with pytest.raises(ConfigError, match="replicas"):
            parse_config_text("mode = ssa\nkernel.type = separable_sum\nic = exp\nn = 4\ncells = 8\n"
                              "t_end = 1\nreplicas = 0\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.cfg")


class TestMain:
    def test_validate_shipped_config(self):
        assert main(["validate-kernel", str(SHIPPED)]) == 0

    def test_config_error_exit(self, tmp_path):
        p, _ = write_cfg(tmp_path, n=1)
        assert main(["run", str(p)]) == 1

    def test_pde_outputs_and_byte_identity(self, tmp_path):
        extra = "method = rk4\ndt = 0.01\noutput_times = 0.1, 0.2, 0.5\nsnapshot_times = 0.5\n"
        blobs = []
        for tag in ("a", "b"):
            d = tmp_path / tag
            d.mkdir()
            p, out = write_cfg(d, extra)
            assert main(["run", str(p)]) == 0
            blobs.append({f: (out / f).read_bytes() for f in ("moments.csv", "bounds.json",
                                                               "snapshots/snapshot_t0.5.csv")})
        assert blobs[0] == blobs[1]
        bounds = json.loads(blobs[0]["bounds.json"])
        for key in ("Gamma", "Gamma1", "Gamma2", "Gamma3", "Gamma4", "C0", "Xi_T"):
            assert np.isfinite(bounds[key])
        assert blobs[0]["moments.csv"].decode().splitlines()[0] == \
            "t,M0,M0_with_void,M1,Msigma1,sigma2_functional,min_density,dt"

    def test_runtime_abort_keeps_bounds(self, tmp_path):
        p, out = write_cfg(tmp_path, "cons_tol = 1e-300\nmethod = rk4\ndt = 0.05\n")
        assert main(["run", str(p)]) == 2
        assert (out / "bounds.json").exists()

    def test_contraction_mode(self, tmp_path):
        p, out = write_cfg(tmp_path, "output_times = 0.1, 0.5, 1\n", mode="contraction", t_end=1.0)
        assert main(["run", str(p)]) == 0
        lines = (out / "contraction.csv").read_text().splitlines()
        assert lines[0] == "t,weighted_distance,gronwall_envelope"
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        assert np.all(rows[:, 1] <= rows[:, 2])

    def test_contraction_needs_uniqueness_class(self, tmp_path):
        p, _ = write_cfg(tmp_path, "kernel.xy = sum\n", mode="contraction")
        assert main(["run", str(p)]) == 1

    def test_truncation_sweep(self, tmp_path):
        p, out = write_cfg(tmp_path, "sweep_n = 4, 8, 16, 32\nmethod = rk4\ndt = 0.01\n",
                           mode="truncation_sweep", n=8, cells=32, t_end=1.0)
        assert main(["--jobs", "1", "run", str(p)]) == 0
        for n in (4, 8, 16, 32):
            assert (out / f"moments_n{n}.csv").exists()
        summary = (out / "sweep_summary.csv").read_text().splitlines()
        assert summary[0].startswith("n,cells,M1_initial,M1_final,M1_drift")
        drift = [abs(float(ln.split(",")[4])) for ln in summary[1:]]
        assert max(drift) < 1e-12

    def test_ssa_mode(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GEDG_JOBS", "2")
        p, out = write_cfg(tmp_path, "replicas = 2\nparticles = 500\nseed = 3\nsnapshot_times = 0.5\n",
                           mode="ssa", n=8, cells=32)
        assert main(["run", str(p)]) == 0
        lines = (out / "empirical_moments.csv").read_text().splitlines()
        assert lines[0].endswith(",M2,replica_id")
        assert {ln.split(",")[-1] for ln in lines[1:]} == {"0", "1"}
        assert (out / "snapshots" / "replica1_snapshot_t0.5.csv").exists()

    def test_check_bounds(self, tmp_path, capsys):
        p, out = write_cfg(tmp_path, "output_times = 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5\n")
        assert main(["check-bounds", str(p)]) == 0
        assert "bound checks hold" in capsys.readouterr().out
        assert (out / "bounds_check.csv").exists()

    def test_check_bounds_product_kernel(self, tmp_path):
        p, out = write_cfg(tmp_path, "kernel.eta = sqrt\n")
        text = p.read_text().replace("separable_sum", "separable_product")
        p.write_text(text)
        assert main(["check-bounds", str(p)]) == 0
        assert "Lambda_T" in json.loads((out / "bounds.json").read_text())


def test_shipped_config_parses():
    cfg = parse_config(SHIPPED)
    assert cfg.method == "rk4" and cfg.cells == 256 and os.path.basename(cfg.output_dir)
