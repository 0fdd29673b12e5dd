import json
import subprocess
import sys

import numpy as np
import pytest

from treeopt.cli import main
from treeopt.data import Dataset, write_csv
from treeopt.tree_model import Tree, TreeEnsemble, load_model, save_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset_file(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(40, 2))
    path = tmp_path / "data.csv"
    write_csv(Dataset(X, np.sum(X**2, axis=1)), path)
    return path


class TestRun:
    def test_sphere_trace(self, tmp_path, capsys):
        args = ["run", "--benchmark", "sphere", "--dim", 2, "--budget", 80, "--seed", 101, "--num-trees", 30,
                "--node-limit", 100]
        code, _, _ = run(capsys, *args, "--out", tmp_path / "a.csv")
        assert code == 0
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert len(lines) == 81
        assert lines[0].startswith("iter,phase,x_0,x_1,f,best")
        man = json.loads((tmp_path / "a.csv.json").read_text())
        assert man["seed"] == 101 and man["rows"] == 80
        assert run(capsys, *args, "--out", tmp_path / "b.csv")[0] == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()

    def test_unknown_benchmark(self, tmp_path, capsys):
        code, _, err = run(capsys, "run", "--benchmark", "nope", "--out", tmp_path / "t.csv")
        assert code == 2
        assert "nope" in err
        assert not (tmp_path / "t.csv").exists()

    def test_invalid_override(self, tmp_path, capsys):
        code, _, err = run(capsys, "run", "--benchmark", "sphere", "--kappa", -1, "--out", tmp_path / "t.csv")
        assert code == 2 and "kappa" in err

    def test_script_blackbox(self, tmp_path, capsys):
        script = tmp_path / "bb.py"
        script.write_text("import sys\nprint(sum(float(v) ** 2 for v in sys.argv[1:]))\n")
        code, _, _ = run(capsys, "run", "--script", script, "--bounds=-1:1,-1:1", "--budget", 12,
                         "--init-points", 10, "--num-trees", 10, "--min-samples-leaf", 2, "--node-limit", 50,
                         "--out", tmp_path / "t.csv")
        assert code == 0
        rows = (tmp_path / "t.csv").read_text().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            assert float(cells[4]) == pytest.approx(float(cells[2]) ** 2 + float(cells[3]) ** 2)

    def test_failing_script(self, tmp_path, capsys):
        script = tmp_path / "bb.py"
        script.write_text("import sys\nsys.exit(1)\n")
        code, _, err = run(capsys, "run", "--script", script, "--bounds", "0:1", "--dim", 1,
                           "--out", tmp_path / "t.csv")
        assert code == 3 and "aborted" in err

    def test_toml_config_with_override(self, tmp_path, capsys):
        conf = tmp_path / "c.toml"
        conf.write_text("budget = 12\ninit_points = 10\nseed = 5\nnum_trees = 10\nnode_limit = 50\n")
        code, _, _ = run(capsys, "run", "--benchmark", "sphere", "--config", conf, "--budget", 11,
                         "--out", tmp_path / "t.csv")
        assert code == 0
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 12
        man = json.loads((tmp_path / "t.csv.json").read_text())
        conf = man["config"]
        assert (conf["budget"], conf["seed"], conf["init_points"]) == (11, 5, 10)
        assert conf["gbrt"]["num_trees"] == 10

    def test_bad_toml(self, tmp_path, capsys):
        conf = tmp_path / "c.toml"
        conf.write_text("budget = = 3\n")
        code, _, _ = run(capsys, "run", "--benchmark", "sphere", "--config", conf, "--out", tmp_path / "t.csv")
        assert code == 3


class TestSolve:
    def test_single_leaf_kappa_zero(self, tmp_path, dataset_file, capsys):
        model = tmp_path / "m.json"
        save_model(TreeEnsemble((Tree.leaf(1.5),), 0.25, 2), model)
        code, out, _ = run(capsys, "solve", "--data", dataset_file, "--model", model, "--bounds=-2:2,-2:2",
                           "--mode", "penalty", "--kappa", 0)
        assert code == 0
        doc = json.loads(out)
        assert doc["upper_bound"] == 1.75
        assert doc["rel_gap"] <= 1e-4

    def test_explore_toy(self, tmp_path, capsys):
        # predict == 0, data at 0.5 only, spread of x falls back to 1, alpha cap 10 * Var(y) = 10
        data = tmp_path / "d.csv"
        data.write_text("x_0,y\n0.5,-1\n0.5,1\n")
        model = tmp_path / "m.json"
        save_model(TreeEnsemble((Tree.leaf(0.0),), 0.0, 1), model)
        code, out, _ = run(capsys, "solve", "--data", data, "--model", model, "--bounds", "0:1", "--mode", "explore",
                           "--metric", "manhattan", "--kappa", 1, "--zeta", 10, "--rel-gap", 1e-9)
        assert code == 0
        doc = json.loads(out)
        assert doc["upper_bound"] == pytest.approx(-0.5, abs=1e-9)
        assert min(abs(doc["x_next"][0]), abs(doc["x_next"][0] - 1)) < 1e-9

    def test_missing_data(self, tmp_path, capsys):
        code, _, err = run(capsys, "solve", "--data", tmp_path / "none.csv", "--bounds", "0:1")
        assert code == 3 and "none.csv" in err

    def test_model_dimension_mismatch(self, tmp_path, dataset_file, capsys):
        model = tmp_path / "m.json"
        save_model(TreeEnsemble((Tree.leaf(1.0),), 0.0, 3), model)
        code, _, _ = run(capsys, "solve", "--data", dataset_file, "--model", model, "--bounds=-2:2,-2:2")
        assert code == 3

    def test_bad_bounds(self, dataset_file, capsys):
        assert run(capsys, "solve", "--data", dataset_file, "--bounds", "1:0,0:1")[0] == 2

    def test_node_limit_exit(self, dataset_file, capsys):
        code, out, _ = run(capsys, "solve", "--data", dataset_file, "--bounds=-2:2,-2:2", "--kappa", 100,
                           "--zeta", 100, "--node-limit", 1, "--num-trees", 30, "--min-samples-leaf", 2)
        assert code == 4
        assert json.loads(out)["termination"] == "node-limit"

    def test_idempotent(self, dataset_file, capsys):
        args = ["solve", "--data", dataset_file, "--bounds=-2:2,-2:2", "--num-trees", 20]
        assert run(capsys, *args)[1] == run(capsys, *args)[1]


class TestExport:
    def test_counts(self, tmp_path, dataset_file, capsys):
        model = tmp_path / "m.json"
        assert run(capsys, "train", "--data", dataset_file, "--out", model, "--num-trees", 8,
                   "--min-samples-leaf", 3)[0] == 0
        ens = load_model(model)
        code, out, _ = run(capsys, "export", "--data", dataset_file, "--model", model, "--bounds=-2:2,-2:2",
                           "--mode", "penalty", "--metric", "manhattan", "--out", tmp_path / "m.lp")
        assert code == 0
        counts = json.loads(out)["counts"]
        assert counts["z"] == sum(len(t.leaves) for t in ens.trees)
        assert counts["b"] == 40 and counts["r"] == 2 * 2 * 40
        assert json.loads((tmp_path / "m.lp.json").read_text())["counts"] == counts
        assert (tmp_path / "m.lp").read_text().rstrip().endswith("End")

    def test_unwritable(self, tmp_path, dataset_file, capsys):
        code, _, err = run(capsys, "export", "--data", dataset_file, "--bounds=-2:2,-2:2", "--num-trees", 5,
                           "--out", tmp_path / "no" / "m.lp")
        assert code == 3 and err


class TestStudy:
    def test_header_and_sorted_grid(self, tmp_path, capsys):
        code, out, _ = run(capsys, "study", "--kappas", "8,0.5,2", "--n-train", 40, "--seeds", "1-2",
                           "--num-trees", 20, "--min-samples-leaf", 3, "--node-limit", 100)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == ("kappa,n,excluded,median_error,q1_error,q3_error,band_lo_error,band_hi_error,"
                            "median_mu,q1_mu,q3_mu")
        assert [float(ln.split(",")[0]) for ln in lines[1:]] == [0.5, 2.0, 8.0]

    def test_bad_grid(self, capsys):
        assert run(capsys, "study", "--kappas", "a,b")[0] == 2
        assert run(capsys, "study", "--seeds", "x-y")[0] == 2


class TestSession:
    def init(self, tmp_path, capsys, **extra):
        args = ["init-session", tmp_path / "s", "--bounds", "0:1,0:1", "--init-points", 3, "--budget", 10,
                "--seed", 9, "--num-trees", 10, "--min-samples-leaf", 1, "--node-limit", 50]
        assert run(capsys, *args)[0] == 0
        return tmp_path / "s"

    def ask(self, capsys, s):
        code, out, _ = run(capsys, "ask", s)
        assert code == 0
        return json.loads(out)

    def test_empty_session_gives_seeded_init_point(self, tmp_path, capsys):
        from treeopt.bo import init_design

        s = self.init(tmp_path, capsys)
        doc = self.ask(capsys, s)
        assert doc["phase"] == "init"
        np.testing.assert_array_equal(doc["x"], init_design([0, 0], [1, 1], 3, 9)[0])
        assert self.ask(capsys, s) == doc

    def test_tell_then_ask(self, tmp_path, capsys):
        s = self.init(tmp_path, capsys)
        for _ in range(3):
            x = self.ask(capsys, s)["x"]
            assert run(capsys, "tell", s, "--x", ",".join(map(repr, x)), "--f", repr(sum(x)))[0] == 0
        first = self.ask(capsys, s)
        assert first["phase"] == "optimize"
        assert self.ask(capsys, s) == first
        x = first["x"]
        assert run(capsys, "tell", s, "--x", ",".join(map(repr, x)), "--f", repr(sum(x)))[0] == 0
        second = self.ask(capsys, s)
        assert second["x"] != first["x"]
        assert len((s / "data.csv").read_text().splitlines()) == 5

    @pytest.mark.parametrize("x,f", [("0.5", "1"), ("0.5,abc", "1"), ("0.5,0.5", "nan"), ("2,0.5", "1")])
    def test_malformed_tell_leaves_session_untouched(self, tmp_path, capsys, x, f):
        s = self.init(tmp_path, capsys)
        before = (s / "data.csv").read_bytes()
        assert run(capsys, "tell", s, "--x", x, "--f", f)[0] == 3
        assert (s / "data.csv").read_bytes() == before

    def test_missing_session(self, tmp_path, capsys):
        assert run(capsys, "ask", tmp_path / "none")[0] == 3

    def test_init_twice(self, tmp_path, capsys):
        self.init(tmp_path, capsys)
        assert run(capsys, "init-session", tmp_path / "s", "--bounds", "0:1")[0] == 3


class TestModelCommands:
    def test_train_and_inspect(self, tmp_path, dataset_file, capsys):
        model = tmp_path / "m.json"
        assert run(capsys, "train", "--data", dataset_file, "--out", model, "--num-trees", 7,
                   "--min-samples-leaf", 3)[0] == 0
        code, out, _ = run(capsys, "inspect", "--model", model)
        doc = json.loads(out)
        assert code == 0 and doc["num_trees"] == 7 and doc["num_features"] == 2
        assert doc["max_depth"] <= 3

    def test_inspect_corrupt(self, tmp_path, capsys):
        bad = tmp_path / "m.json"
        bad.write_text('{"version": 1, "trees": [')
        assert run(capsys, "inspect", "--model", bad)[0] == 3

    def test_cluster(self, dataset_file, capsys):
        code, out, _ = run(capsys, "cluster", "--data", dataset_file, "--k", 3)
        lines = out.splitlines()
        assert code == 0 and lines[0] == "x_0,x_1,size" and len(lines) == 4
        assert sum(int(ln.split(",")[-1]) for ln in lines[1:]) == 40
        assert run(capsys, "cluster", "--data", dataset_file, "--k", 41)[0] == 2

    def test_list_benchmarks(self, capsys):
        code, out, _ = run(capsys, "list-benchmarks")
        assert code == 0 and "rosenbrock" in out


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "treeopt.cli", "list-benchmarks"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sphere" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "treeopt.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
