import csv

import numpy as np
import pytest

from lcmt.cli import main, summarize
from lcmt.data import gen_blobs, load_csv, write_csv
from lcmt.persistence import read_features, read_metrics
from lcmt.trainer import run_training
from conftest import TINY, tiny_config

LONG_LC = ["schedule.total_epochs=14", "schedule.mt_only_epochs=4", "schedule.lc_rampup_length=5",
           "schedule.lr_decay_start=14"]


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text("data.kind = two_moons\n" + "".join(f"{o.replace('=', ' = ', 1)}\n" for o in TINY))
    return p


def sets(*items):
    out = []
    for i in items:
        out += ["--set", i]
    return out


class TestTrain:
    def test_completes(self, cfg_file, tmp_path, capsys):
        assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "run")]) == 0
        assert capsys.readouterr().out.startswith("student_err=")
        assert len(read_metrics(tmp_path / "run/metrics.csv")) >= 1
        assert (tmp_path / "run/final.lcmt").exists()

    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "absent.cfg"
        assert main(["train", "--config", str(missing), "--out", str(tmp_path / "r")]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_unknown_override(self, cfg_file, tmp_path, capsys):
        assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r")] + sets("loss.lamda2=3")) == 1
        assert "loss.lamda2" in capsys.readouterr().err

    def test_override_changes_one_key(self, cfg_file, tmp_path):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "plain")])
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "set")] + sets("ema.alpha=0.5"))
        plain = (tmp_path / "plain/config.txt").read_text().splitlines()
        changed = (tmp_path / "set/config.txt").read_text().splitlines()
        diff = [(a, b) for a, b in zip(plain, changed) if a != b]
        assert len(plain) == len(changed) and diff == [("ema.alpha = 0.99", "ema.alpha = 0.5")]

    def test_extreme_lambda2_collapses_tiny(self, cfg_file, tmp_path, capsys):
        code = main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r")]
                    + sets(*LONG_LC, "loss.lambda2=1000"))
        assert code == 2
        assert "collapsed" in capsys.readouterr().err

    @pytest.mark.slow
    def test_extreme_lambda2_collapses_two_moons(self, tmp_path):
        p = tmp_path / "moons.cfg"
        p.write_text("data.kind = two_moons\n")
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")] + sets("loss.lambda2=1000")) == 2

    def test_resume_from_checkpoint_only(self, cfg_file, tmp_path):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "a")] + sets("run.checkpoint_every=4"))
        assert main(["train", "--resume", str(tmp_path / "a/ckpt_00004.lcmt"), "--out", str(tmp_path / "b")]) == 0
        full = (tmp_path / "a/metrics.csv").read_text().splitlines()
        assert (tmp_path / "b/metrics.csv").read_text().splitlines() == [full[0]] + full[5:]

    def test_repeatable(self, cfg_file, tmp_path):
        for d in ("a", "b"):
            main(["train", "--config", str(cfg_file), "--out", str(tmp_path / d)])
        for name in ("metrics.csv", "final.lcmt", "config.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestEval:
    @pytest.mark.slow
    def test_converged_two_moons(self, tmp_path, capsys):
        p = tmp_path / "moons.cfg"
        p.write_text("data.kind = two_moons\nschedule.total_epochs = 200\n")
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "r/final.lcmt")]) == 0
        out = capsys.readouterr().out.split()
        student, teacher = (float(t.split("=")[1]) for t in out)
        assert student < 0.05 and teacher < 0.05

    def test_memorized_tiny_set(self, tmp_path, capsys):
        data = tmp_path / "blobs.csv"
        write_csv(data, gen_blobs(40, 2, 0.1, 0))
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"data.kind = csv\ndata.path = {data}\ndata.n_labeled = 10\n"
                       "batch.labeled = 4\nbatch.unlabeled = 16\nschedule.total_epochs = 30\n"
                       "schedule.mt_only_epochs = 30\nmodel.feature_layers = 16\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "r/final.lcmt"), "--data", str(data)]) == 0
        assert capsys.readouterr().out.strip() == "student_err=0.0000 teacher_err=0.0000"

    def test_width_mismatch(self, cfg_file, tmp_path, capsys):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r")])
        bad = tmp_path / "wide.csv"
        bad.write_text("f0,f1,f2,label\n0,0,0,0\n1,1,1,1\n")
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "r/final.lcmt"), "--data", str(bad)]) == 1
        assert "width 3" in capsys.readouterr().err

    def test_bad_checkpoint(self, tmp_path, capsys):
        junk = tmp_path / "junk.lcmt"
        junk.write_bytes(b"not a checkpoint")
        assert main(["eval", "--checkpoint", str(junk)]) == 1
        assert "magic" in capsys.readouterr().err


class TestSweep:
    def read_table(self, path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    def test_epsilon_zero_is_mt(self, cfg_file, tmp_path):
        assert main(["sweep", "--config", str(cfg_file), "--param", "graph.epsilon", "--values", "0",
                     "--seeds", "0", "--out", str(tmp_path / "s")]) == 0
        row = self.read_table(tmp_path / "s/sweep.csv")[0]
        mt = run_training(tiny_config("loss.lc_enabled=false"))
        assert float(row["mean_teacher_error"]) == mt.teacher_error
        run_dir = next((tmp_path / "s").glob("*_seed0"))
        assert read_metrics(run_dir / "metrics.csv") == mt.history

    def test_table_shape(self, cfg_file, tmp_path, capsys):
        assert main(["sweep", "--config", str(cfg_file), "--param", "graph.epsilon", "--values", "0,5,20,50",
                     "--seeds", "0,1,2,3,4", "--out", str(tmp_path / "s")]) == 0
        rows = self.read_table(tmp_path / "s/sweep.csv")
        assert [r["value"] for r in rows] == ["0", "5", "20", "50"]
        assert all(r["runs"] == "5" and r["status"] == "ok" for r in rows)
        assert len(list((tmp_path / "s").glob("*_seed*"))) == 20
        assert capsys.readouterr().out.count("±") == 4

    def test_extreme_lambda2_marked(self, cfg_file, tmp_path, capsys):
        assert main(["sweep", "--config", str(cfg_file), "--param", "loss.lambda2", "--values", "0,1000",
                     "--seeds", "0,1", "--out", str(tmp_path / "s")] + sets(*LONG_LC)) == 0
        rows = self.read_table(tmp_path / "s/sweep.csv")
        assert rows[0]["status"] == "ok" and rows[1]["status"] == "collapsed"
        assert "collapsed" in capsys.readouterr().out

    def test_parallel_matches_serial(self, cfg_file, tmp_path):
        args = ["sweep", "--config", str(cfg_file), "--param", "ema.alpha", "--values", "0,0.9", "--seeds", "0,1"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b"), "--parallel", "2"])
        assert (tmp_path / "a/sweep.csv").read_bytes() == (tmp_path / "b/sweep.csv").read_bytes()

    def test_bad_param(self, cfg_file, tmp_path):
        with pytest.raises(SystemExit):
            main(["sweep", "--config", str(cfg_file), "--param", "optim.lr", "--values", "1", "--out", str(tmp_path)])

    def test_summary_std(self):
        status, mean, std = summarize(["completed"] * 3, [0.1, 0.2, 0.3])
        assert status == "ok" and mean == pytest.approx(0.2) and std == pytest.approx(0.1)
        assert summarize(["completed", "collapsed"], [0.1, 0.5])[0] == "collapsed"
        assert summarize(["diverged", "completed"], [0.1, 0.5])[0] == "diverged"


class TestDataCommands:
    def test_gen_two_moons(self, tmp_path):
        out = tmp_path / "m.csv"
        assert main(["gen-data", "--kind", "two_moons", "--n", "1000", "--out", str(out)]) == 0
        ds = load_csv(out)
        assert ds.N == 1000 and np.bincount(ds.y).tolist() == [500, 500]

    def test_gen_deterministic(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            main(["gen-data", "--kind", "circles", "--n", "50", "--seed", "3", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_export_features(self, cfg_file, tmp_path):
        main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r")])
        out = tmp_path / "z.csv"
        assert main(["export-features", "--checkpoint", str(tmp_path / "r/final.lcmt"), "--out", str(out)]) == 0
        dump = read_features(out)
        assert dump.z.shape == (160, 2)
        assert dump.labeled.sum() == 6
        assert out.read_text().splitlines()[0] == "z0,z1,label,labeled,predicted"
