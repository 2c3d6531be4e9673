import json
import math
import xml.etree.ElementTree as ET

import pytest

from ergmlasso.cli import DEFAULT_SEED, main

FAST = ["--m-per-iter", "50", "--max-iters", "300", "--thin", "300", "--burn-in", "20000"]


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "setup3"
    assert main(["simulate", "--generator", "setup3", "--draws", "2", "--n-nodes", "30",
                 "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_outputs(self, sim):
        truth = json.loads((sim / "truth.json").read_text())
        assert truth["theta"] == [-1.5]
        assert truth["seed"] == DEFAULT_SEED
        assert (sim / "draw_00001.edges").exists()
        assert (sim / "draw_00001.nodes.csv").read_text().splitlines()[0] == "id"
        manifest = json.loads((sim / "manifest.json").read_text())
        assert manifest["exit_code"] == 0
        assert set(manifest["outputs"]) >= {"truth.json", "draw_00000.edges"}
        assert {"numpy", "scipy", "numba"} <= set(manifest["versions"])

    def test_setup3_density(self, tmp_path):
        assert main(["simulate", "--generator", "setup3", "--draws", "20", "--out",
                     str(tmp_path / "s")]) == 0
        truth = json.loads((tmp_path / "s" / "truth.json").read_text())
        sd = math.sqrt(0.1824 * 0.8176 / 1225 / 20)
        assert abs(truth["mean_density"] - 1 / (1 + math.exp(1.5))) < 4 * sd

    def test_attribute_generator(self, tmp_path):
        assert main(["simulate", "--generator", "attr1", "--draws", "1", "--out",
                     str(tmp_path / "a")]) == 0
        spec = json.loads((tmp_path / "a" / "candidate_spec.json").read_text())
        assert spec["attributes"]["x"]["reference"] == "0"
        header = (tmp_path / "a" / "draw_00000.nodes.csv").read_text().splitlines()[0]
        assert header == "id,x"

    def test_spec_and_theta(self, tmp_path):
        spec = write(tmp_path / "spec.json", '{"terms": ["edges", "gwesp"]}')
        assert main(["simulate", "--spec", spec, "--theta=-2,0.3", "--n-nodes", "10",
                     "--draws", "2", "--out", str(tmp_path / "o")]) == 0
        assert main(["simulate", "--spec", spec, "--theta=-2", "--out",
                     str(tmp_path / "o2")]) == 2


class TestFitAndErrors:
    def test_edges_fit_logit(self, sim, tmp_path):
        spec = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        out = tmp_path / "fit"
        code = main(["fit", "--edges", str(sim / "draw_00000.edges"), "--attrs",
                     str(sim / "draw_00000.nodes.csv"), "--spec", spec, "--out", str(out)])
        assert code == 0
        report = json.loads((out / "fit_report.json").read_text())
        e = sum(1 for _ in (sim / "draw_00000.edges").open())
        d = 30 * 29 / 2
        est = report["terms"][0]["estimate_raw"]
        assert est == pytest.approx(math.log(e / (d - e)), abs=0.05)
        assert report["aic"] == pytest.approx(2 - 2 * report["loglik"])
        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header == "iteration,eta,edges,delta_inf"

    def test_malformed_edge_list(self, tmp_path, capsys):
        edges = write(tmp_path / "bad.edges", "a b\nb c d\n")
        spec = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        assert main(["fit", "--edges", edges, "--spec", spec, "--out", str(tmp_path / "o")]) == 2
        assert "bad.edges:2" in capsys.readouterr().err

    def test_missing_column(self, sim, tmp_path, capsys):
        spec = write(tmp_path / "s.json", '{"terms": [{"kind": "nodecov", "column": "age"}]}')
        code = main(["fit", "--edges", str(sim / "draw_00000.edges"), "--attrs",
                     str(sim / "draw_00000.nodes.csv"), "--spec", spec, "--out",
                     str(tmp_path / "o")])
        assert code == 2
        assert "'age'" in capsys.readouterr().err

    def test_refuses_non_empty_out(self, sim, tmp_path):
        spec = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        args = ["standardize", "--edges", str(sim / "draw_00000.edges"), "--spec", spec,
                "--out", str(tmp_path / "o")]
        assert main(args) == 0
        assert main(args) == 2
        assert main(args + ["--force"]) == 0

    def test_non_convergence_exit(self, sim, tmp_path):
        out = tmp_path / "o"
        code = main(["fit", "--edges", str(sim / "draw_00000.edges"), "--spec",
                     str(sim / "candidate_spec.json"), "--out", str(out), "--max-iters", "3"])
        assert code == 3
        assert (out / "trace.csv").exists()
        assert json.loads((out / "manifest.json").read_text())["exit_code"] == 3

    def test_bad_json(self, tmp_path):
        spec = write(tmp_path / "s.json", '{"terms": [')
        edges = write(tmp_path / "g.edges", "a b\n")
        assert main(["fit", "--edges", edges, "--spec", spec, "--out", str(tmp_path / "o")]) == 2


class TestPathAndSelect:
    def test_path_outputs_and_determinism(self, sim, tmp_path):
        base = ["path", "--edges", str(sim / "draw_00000.edges"), "--spec",
                str(sim / "candidate_spec.json"), "--lambda-grid", "auto:6:0.05", "--plot", *FAST]
        assert main(base + ["--out", str(tmp_path / "a")]) == 0
        assert main(base + ["--out", str(tmp_path / "b"), "--workers", "1"]) == 0
        for name in ("path.csv", "path_raw.csv", "ranking.csv", "path.json", "path.svg",
                     "spec_used.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = (tmp_path / "a" / "path.csv").read_text().splitlines()
        assert rows[0].startswith("lambda,edges,gwesp.fixed.0.5")
        assert len(rows) == 1 + 7
        rank = (tmp_path / "a" / "ranking.csv").read_text().splitlines()
        assert rank[0] == "term,importance_score,first_sign" and len(rank) == 4
        svg = ET.parse(tmp_path / "a" / "path.svg").getroot()
        assert len(svg.findall("{http://www.w3.org/2000/svg}path")) == 4

    def test_huge_lambda_all_zero(self, sim, tmp_path):
        out = tmp_path / "o"
        assert main(["path", "--edges", str(sim / "draw_00000.edges"), "--spec",
                     str(sim / "candidate_spec.json"), "--lambda-grid", "1e6", "--out",
                     str(out), *FAST]) == 0
        row = (out / "path.csv").read_text().splitlines()[1].split(",")
        assert row[0] == "1000000.0"
        assert float(row[1]) != 0.0 and row[2:] == ["0.0", "0.0", "0.0"]

    def test_select_outputs(self, sim, tmp_path):
        out = tmp_path / "o"
        assert main(["select", "--edges", str(sim / "draw_00000.edges"), "--spec",
                     str(sim / "candidate_spec.json"), "--lambda-grid", "auto:6:0.05",
                     "--cov-m", "500", "--bridge-m", "100", "--bridge-points", "10",
                     "--out", str(out), *FAST]) == 0
        sel = json.loads((out / "selection.json").read_text())
        assert sel["selected"][0] == "edges"
        walk = (out / "walk.csv").read_text().splitlines()
        assert walk[0] == "step,term,aic,p_value,accepted,note"
        report = json.loads((out / "fit_report.json").read_text())
        assert [t["term"] for t in report["terms"]] == sel["selected"]


class TestExact:
    def test_uniform_log_kappa(self, tmp_path):
        spec = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        assert main(["exact", "--n-nodes", "4", "--spec", spec, "--out",
                     str(tmp_path / "o")]) == 0
        body = json.loads((tmp_path / "o" / "exact.json").read_text())
        assert body["log_kappa"] == pytest.approx(6 * math.log(2))

    def test_edges_mle_and_activation(self, tmp_path):
        edges = write(tmp_path / "g.edges", "0 1\n1 2\n2 0\n2 3\n3 4\n")
        spec = write(tmp_path / "s.json", '{"terms": ["edges", {"kind": "gwesp", "alpha": 0.5}]}')
        assert main(["exact", "--edges", edges, "--spec", spec, "--out",
                     str(tmp_path / "o")]) == 0
        body = json.loads((tmp_path / "o" / "exact.json").read_text())
        act = body["activation_lambda"]["gwesp.fixed.0.5"]
        assert act == pytest.approx(body["lambda_max"], rel=1e-6)
        rows = (tmp_path / "o" / "exact_path.csv").read_text().splitlines()
        assert rows[1].endswith(",0.0")

        e_only = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        assert main(["exact", "--edges", edges, "--spec", e_only, "--out",
                     str(tmp_path / "o2")]) == 0
        body = json.loads((tmp_path / "o2" / "exact.json").read_text())
        assert body["mle"][0] == pytest.approx(0.0, abs=1e-9)

    def test_capacity(self, tmp_path):
        spec = write(tmp_path / "e.json", '{"terms": ["edges"]}')
        assert main(["exact", "--n-nodes", "8", "--spec", spec, "--out",
                     str(tmp_path / "o")]) == 4
