import json

import numpy as np
import pytest

from app import EXIT_IO, EXIT_OK, EXIT_USAGE, main, resolve_budget
from config import Config
from services.feature_store import load_pool
from utils.audit_log import read_events
from utils.errors import BudgetError

SYNTH = ["--clusters", "3", "--per-cluster", "10", "--dim", "16", "--spread", "0.05"]


@pytest.fixture
def pool_path(tmp_path):
    path = str(tmp_path / "pool.fpl")
    assert main(["synth", *SYNTH, "--seed", "7", "--out", path]) == EXIT_OK
    return path


def _read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class TestResolveBudget:

    def test_ratio(self):
        assert resolve_budget(50000, ratio=0.01) == 500

    def test_ratio_rounds_down_to_at_least_one(self):
        assert resolve_budget(10, ratio=0.05) == 1

    def test_count(self):
        assert resolve_budget(10, b=4) == 4

    @pytest.mark.parametrize("kwargs", [dict(b=11), dict(b=0), dict(ratio=1.5), dict()])
    def test_invalid(self, kwargs):
        with pytest.raises(BudgetError):
            resolve_budget(10, **kwargs)


class TestSynth:

    def test_writes_pool(self, pool_path):
        pool = load_pool(pool_path)
        assert (pool.n, pool.dim) == (30, 16)

    def test_missing_out_is_usage_error(self):
        assert main(["synth", *SYNTH]) == EXIT_USAGE

    def test_byte_identical_reruns(self, tmp_path):
        a, b = str(tmp_path / "a.fpl"), str(tmp_path / "b.fpl")
        main(["synth", *SYNTH, "--seed", "3", "--out", a])
        main(["synth", *SYNTH, "--seed", "3", "--out", b])
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_csv_output(self, tmp_path):
        path = str(tmp_path / "pool.csv")
        assert main(["synth", *SYNTH, "--out", path]) == EXIT_OK
        assert load_pool(path).n == 30


class TestSelect:

    def test_activeft(self, pool_path, tmp_path):
        out, report = str(tmp_path / "idx.txt"), str(tmp_path / "report.json")
        code = main(["select", "--pool", pool_path, "--b", "6", "--iterations", "40",
                     "--out", out, "--report", report])
        assert code == EXIT_OK
        with open(out) as f:
            indices = [int(line) for line in f]
        assert len(set(indices)) == 6 and indices == sorted(indices)
        data = _read_json(report)
        assert data["schema_version"] == 1
        assert data["method"] == "activeft"
        assert data["loss"]["final"]["total"] <= data["loss"]["initial"]["total"] + 1e-9
        assert data["metrics"]["emd"] >= 0

    @pytest.mark.parametrize("method", ["random", "fds", "kmeans"])
    def test_baselines(self, method, pool_path, tmp_path):
        out = str(tmp_path / "idx.txt")
        assert main(["select", "--method", method, "--pool", pool_path, "--ratio", "0.1", "--out", out]) == EXIT_OK
        with open(out) as f:
            assert len(f.read().split()) == 3

    def test_fds_pinned_first_center(self, tmp_path):
        pool = tmp_path / "pool.csv"
        pool.write_text("1,0\n-1,0\n0,1\n")
        out = tmp_path / "idx.txt"
        code = main(["select", "--method", "fds", "--pool", str(pool), "--b", "2",
                     "--first-index", "0", "--out", str(out)])
        assert code == EXIT_OK
        assert out.read_text() == "0\n1\n"

    def test_repeat_runs_are_identical(self, pool_path, tmp_path):
        outputs = []
        for name in ("a", "b"):
            out, report = str(tmp_path / f"{name}.txt"), str(tmp_path / f"{name}.json")
            main(["select", "--pool", pool_path, "--b", "4", "--iterations", "20", "--subsample", "12",
                  "--no-timing", "--out", out, "--report", report])
            with open(out, "rb") as f1, open(report, "rb") as f2:
                outputs.append((f1.read(), f2.read()))
        assert outputs[0] == outputs[1]

    def test_missing_pool(self, tmp_path):
        code = main(["select", "--pool", str(tmp_path / "nope.fpl"), "--b", "2", "--out", str(tmp_path / "i.txt")])
        assert code == EXIT_IO

    def test_budget_above_pool(self, pool_path, tmp_path):
        assert main(["select", "--pool", pool_path, "--b", "31", "--out", str(tmp_path / "i.txt")]) == EXIT_USAGE

    def test_single_item_activeft_is_rejected(self, pool_path, tmp_path):
        assert main(["select", "--pool", pool_path, "--b", "1", "--out", str(tmp_path / "i.txt")]) == EXIT_USAGE

    def test_single_item_without_regularizer(self, pool_path, tmp_path):
        code = main(["select", "--pool", pool_path, "--b", "1", "--regularizer", "none_s1",
                     "--iterations", "10", "--out", str(tmp_path / "i.txt")])
        assert code == EXIT_OK

    @pytest.mark.parametrize("method", ["random", "fds", "kmeans", "activeft"])
    def test_negative_seed(self, method, pool_path, tmp_path):
        code = main(["select", "--method", method, "--pool", pool_path, "--b", "2", "--seed", "-1",
                     "--out", str(tmp_path / "i.txt")])
        assert code == EXIT_USAGE

    def test_budget_and_ratio_are_exclusive(self, pool_path, tmp_path):
        code = main(["select", "--pool", pool_path, "--b", "2", "--ratio", "0.1", "--out", str(tmp_path / "i.txt")])
        assert code == EXIT_USAGE

    def test_run_is_audited(self, pool_path, tmp_path):
        main(["select", "--method", "random", "--pool", pool_path, "--b", "2", "--out", str(tmp_path / "i.txt")])
        events = read_events(Config.AUDIT_LOG_PATH)
        assert events[-1]["command"] == "select"
        assert events[-1]["exit_code"] == EXIT_OK


class TestEval:

    def _indices(self, tmp_path, text):
        path = tmp_path / "idx.txt"
        path.write_text(text)
        return str(path)

    def test_full_selection(self, pool_path, tmp_path):
        indices = self._indices(tmp_path, "".join(f"{i}\n" for i in range(30)))
        report = str(tmp_path / "eval.json")
        assert main(["eval", "--pool", pool_path, "--indices", indices, "--report", report]) == EXIT_OK
        assert _read_json(report)["metrics"]["emd"] == 0.0

    def test_report_shares_the_select_schema(self, pool_path, tmp_path):
        indices = self._indices(tmp_path, "0\n10\n")
        report = str(tmp_path / "eval.json")
        assert main(["eval", "--pool", pool_path, "--indices", indices, "--report", report]) == EXIT_OK
        data = _read_json(report)
        for key in ("method", "config", "config_digest", "seed"):
            assert key in data and data[key] is None
        assert (data["n"], data["b"]) == (30, 2)

    def test_csv_pool_that_is_not_utf8(self, tmp_path):
        pool = tmp_path / "pool.csv"
        pool.write_bytes(b"\xff\xfe,1.0\n0.0,1.0\n")
        indices = self._indices(tmp_path, "0\n")
        code = main(["eval", "--pool", str(pool), "--indices", indices, "--report", str(tmp_path / "r.json")])
        assert code == EXIT_USAGE
        assert read_events(Config.AUDIT_LOG_PATH)[-1]["exit_code"] == EXIT_USAGE

    def test_indices_file_that_is_not_utf8(self, pool_path, tmp_path):
        indices = tmp_path / "idx.txt"
        indices.write_bytes(b"\xff\n")
        code = main(["eval", "--pool", pool_path, "--indices", str(indices), "--report", str(tmp_path / "r.json")])
        assert code == EXIT_USAGE

    def test_oracle_cross_check(self, pool_path, tmp_path):
        indices = self._indices(tmp_path, "0\n10\n20\n")
        report = str(tmp_path / "eval.json")
        assert main(["eval", "--pool", pool_path, "--indices", indices, "--report", report, "--oracle"]) == EXIT_OK
        assert _read_json(report)["metrics"]["oracle"]["abs_diff"] <= 1e-9

    def test_duplicate_indices(self, pool_path, tmp_path):
        indices = self._indices(tmp_path, "1\n1\n")
        assert main(["eval", "--pool", pool_path, "--indices", indices,
                     "--report", str(tmp_path / "r.json")]) == EXIT_USAGE

    def test_index_out_of_range(self, pool_path, tmp_path):
        indices = self._indices(tmp_path, "0\n30\n")
        assert main(["eval", "--pool", pool_path, "--indices", indices,
                     "--report", str(tmp_path / "r.json")]) == EXIT_USAGE


class TestDiag:

    def test_single_entry(self, pool_path, tmp_path):
        report = str(tmp_path / "diag.json")
        assert main(["diag", "--pool", pool_path, "--b", "3", "--k", "1", "--report", report]) == EXIT_OK
        data = _read_json(report)
        assert len(data["topk_mean_exp_sim"]) == 1
        assert data["top1_ratio"] is None
        assert data["params_source"] == "random_init"

    def test_k_above_budget(self, pool_path, tmp_path):
        code = main(["diag", "--pool", pool_path, "--b", "10", "--k", "20", "--report", str(tmp_path / "d.json")])
        assert code == EXIT_USAGE

    def test_from_select(self, pool_path, tmp_path):
        report = str(tmp_path / "diag.json")
        code = main(["diag", "--pool", pool_path, "--b", "3", "--k", "3", "--from-select",
                     "--iterations", "20", "--report", report])
        assert code == EXIT_OK
        entries = _read_json(report)["topk_mean_exp_sim"]
        assert entries == sorted(entries, reverse=True)

    @pytest.mark.parametrize("tau", ["0", "-0.5"])
    def test_non_positive_temperature(self, tau, pool_path, tmp_path):
        code = main(["diag", "--pool", pool_path, "--b", "3", "--k", "2", "--tau", tau,
                     "--report", str(tmp_path / "d.json")])
        assert code == EXIT_USAGE


class TestExperiment:

    def test_comparison_over_all_methods(self, tmp_path):
        report = str(tmp_path / "exp.json")
        code = main(["experiment", "--kind", "comparison", *SYNTH, "--b", "3", "--seeds", "2",
                     "--iterations", "20", "--report", report])
        assert code == EXIT_OK
        assert len(_read_json(report)["table"]["aggregates"]) == 4

    def test_repeat_runs_are_identical(self, tmp_path):
        blobs = []
        for name in ("a", "b"):
            report = tmp_path / f"{name}.json"
            main(["experiment", "--kind", "ablation", "--axis", "temperature", "--values", "0.07,0.5",
                  *SYNTH, "--b", "3", "--seeds", "2", "--iterations", "20", "--no-timing", "--report", str(report)])
            blobs.append(report.read_bytes())
        assert blobs[0] == blobs[1]

    def test_unknown_method(self, tmp_path):
        code = main(["experiment", "--kind", "comparison", *SYNTH, "--b", "3", "--methods", "activeft,coreset",
                     "--report", str(tmp_path / "e.json")])
        assert code == EXIT_USAGE

    def test_unknown_axis(self, tmp_path):
        code = main(["experiment", "--kind", "ablation", "--axis", "lr", *SYNTH, "--b", "3",
                     "--report", str(tmp_path / "e.json")])
        assert code == EXIT_USAGE

    def test_ablation_needs_axis(self, tmp_path):
        code = main(["experiment", "--kind", "ablation", *SYNTH, "--b", "3", "--report", str(tmp_path / "e.json")])
        assert code == EXIT_USAGE

    def test_default_sweep_values(self, tmp_path):
        report = str(tmp_path / "exp.json")
        main(["experiment", "--kind", "ablation", "--axis", "temperature", *SYNTH, "--b", "3",
              "--seed-list", "0", "--iterations", "10", "--report", report])
        values = [agg["value"] for agg in _read_json(report)["table"]["aggregates"]]
        np.testing.assert_allclose(values, [0.04, 0.07, 0.2, 0.5])

    @pytest.mark.parametrize("flag,value", [("--seed-list", "a,b"), ("--seed-list", "1,-2"),
                                            ("--cluster-sizes", "x"), ("--pool-seed", "-3")])
    def test_malformed_integer_arguments(self, flag, value, tmp_path):
        code = main(["experiment", "--kind", "comparison", *SYNTH, "--b", "3", flag, value,
                     "--report", str(tmp_path / "e.json")])
        assert code == EXIT_USAGE

    def test_explicit_seed_list_and_cluster_sizes(self, tmp_path):
        report = str(tmp_path / "exp.json")
        code = main(["experiment", "--kind", "comparison", *SYNTH, "--cluster-sizes", "20,5,5", "--b", "3",
                     "--methods", "random", "--seed-list", "4,9", "--report", report])
        assert code == EXIT_OK
        data = _read_json(report)
        assert data["seeds"] == [4, 9]
        assert data["spec"]["cluster_sizes"] == [20, 5, 5]


def test_synth_rejects_non_integer_cluster_sizes(tmp_path):
    code = main(["synth", *SYNTH, "--cluster-sizes", "4,x,4", "--out", str(tmp_path / "p.fpl")])
    assert code == EXIT_USAGE
