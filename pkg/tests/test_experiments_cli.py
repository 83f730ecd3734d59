import json
import os

import numpy as np
import pytest

import gel
from gel import ioutil
from gel.cli import main
from gel.exceptions import ConfigError
from gel.experiments import (ExperimentConfig, read_study_csv, run_study, run_study1, run_study2,
                             write_result)
from gel.graphs import erdos_renyi, load_graph, save_graph

SMALL = {
    "autocorr": {"reps": 2, "n": 60, "grid": {"eps1": [0.0, 0.3], "eps2": [0.0, 0.04]}},
    "gma_filter": {"reps": 2, "n": 40, "params": {"null_days": 200, "days": 60},
                   "grid": {"eps1": [0.0, 0.02], "eps2": [0.0, 0.1], "c": [0.0, 0.01]}},
    "garma_filter": {"reps": 2, "n": 40, "params": {"n_starts": 2},
                     "grid": {"K": [1, 3], "eps1": [0.0, 0.2], "eps2": [0.0, 0.05]}},
    "grade": {"reps": 2, "n": 150, "grid": {"eps1": [0.0, 0.5], "eps2": [0.0, 0.05]}},
}


def small(study, **kw):
    obj = {"study": study, "workers": 1, **json.loads(json.dumps(SMALL[study]))}
    obj.update(kw)
    return ExperimentConfig.from_dict(obj)


class TestConfig:
    def test_full_size_defaults(self):
        cfg = ExperimentConfig.defaults("autocorr")
        assert (cfg.reps, cfg.n, cfg.params["alpha"], cfg.params["theta"]) == (2000, 500, 0.05, 0.5)
        assert cfg.grid["eps2"] == [0.0, 0.02, 0.04, 0.06]
        assert ExperimentConfig.defaults("grade").n == 1000

    def test_desk_preset(self):
        for study in ("autocorr", "gma_filter", "garma_filter"):
            full = ExperimentConfig.defaults(study)
            desk = ExperimentConfig.defaults(study, "desk")
            assert (desk.reps, desk.n) == (full.reps // 10, full.n)
        # the separation study has its own desk size: N=500 with 200 reps
        desk = ExperimentConfig.defaults("grade", "desk")
        assert (desk.reps, desk.n) == (200, 500)

    @pytest.mark.parametrize("bad", [
        {"study": "nope"}, {"study": "autocorr", "reps": 0}, {"study": "autocorr", "seed": -1},
        {"study": "autocorr", "grid": {"eps1": [1.5]}}, {"study": "autocorr", "grid": {"eps1": []}},
        {"study": "garma_filter", "grid": {"K": [0]}}, {"study": "autocorr", "colour": 1},
        {"reps": 3}, {"study": "autocorr", "scale": "huge"}, {"study": "autocorr", "workers": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_wrong_runner(self):
        with pytest.raises(ConfigError):
            run_study1(small("grade"))
        with pytest.raises(ConfigError):
            run_study2(small("autocorr"))

    def test_hash_ignores_plumbing(self):
        a = small("autocorr")
        b = small("autocorr", workers=4, output_dir="elsewhere")
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != small("autocorr", seed=1).config_hash()

    def test_load(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"study": "grade", "reps": 5}))
        cfg = ExperimentConfig.load(path, seed=9)
        assert (cfg.reps, cfg.seed) == (5, 9)
        path.write_text("[1]")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)


@pytest.mark.parametrize("study", list(SMALL))
def test_single_rep_smoke(study, tmp_path):
    cfg = small(study, reps=1)
    result = run_study(cfg)
    paths = write_result(result, cfg, tmp_path)
    main_csv = tmp_path / f"{result.name}.csv"
    assert main_csv in paths
    first = main_csv.read_text().splitlines()[0]
    assert first == f"# config_hash={cfg.config_hash()} seed={cfg.seed} version={gel.__version__}"
    rows = read_study_csv(main_csv)
    assert rows and set(rows[0]) == set(result.columns)
    for r in rows:
        for c in result.columns:
            float(r[c])
    summary = json.loads((tmp_path / f"{result.name}_summary.json").read_text())
    assert summary["seed"] == cfg.seed and summary["config_hash"] == cfg.config_hash()
    for p in paths:
        assert p.read_text().startswith("# config_hash=") or p.suffix == ".json"


def test_study1_theory_peaks_at_exact_graph():
    rows = run_study(small("autocorr", reps=1, grid={"eps1": [0, .1, .3, .5], "eps2": [0, .02, .06]})).rows
    top = next(r["theory"] for r in rows if r["eps1"] == 0 and r["eps2"] == 0)
    assert all(r["theory"] <= top for r in rows)


def test_study4_extra_tables(tmp_path):
    cfg = small("grade")
    result = run_study(cfg)
    write_result(result, cfg, tmp_path)
    md = read_study_csv(tmp_path / "study4_md.csv")
    assert list(md[0]) == ["rep", "eps1", "eps2", "md2"]
    assert len(md) == cfg.reps * 4
    grid = read_study_csv(tmp_path / "study4_ratio_grid.csv")
    assert len(grid) == 2 and float(grid[0]["eps2=0"]) == 1.0


def test_study4_alpha_sweep():
    cfg = small("grade", reps=2, params={"mode": "alpha_sweep", "alphas": [0.05, 0.1],
                                         "pairs": [[0.5, 0.0]]})
    result = run_study(cfg)
    assert result.rows and all(np.isfinite(r["ratio_hat"]) for r in result.rows if "ratio_hat" in r)


@pytest.mark.parametrize("study", ["autocorr", "grade", "garma_filter"])
def test_deterministic_and_worker_independent(study, tmp_path):
    texts = []
    for i, workers in enumerate((1, 1, 2)):
        cfg = small(study, workers=workers)
        out = tmp_path / str(i)
        write_result(run_study(cfg), cfg, out)
        texts.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
    assert texts[0] == texts[1] == texts[2]


def test_seed_changes_output():
    a = run_study(small("autocorr")).rows
    b = run_study(small("autocorr", seed=7)).rows
    assert [r["mc_mean"] for r in a] != [r["mc_mean"] for r in b]


def test_interrupted_write_keeps_previous_file(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"
    target.write_text("old\n")

    def boom(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr(ioutil.os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        ioutil.atomic_write_text(target, "new\n")
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_rep_streams_are_keyed():
    a = ioutil.rep_rng(5, 1, 2).random(3)
    assert np.array_equal(a, ioutil.rep_rng(5, 1, 2).random(3))
    assert not np.array_equal(a, ioutil.rep_rng(5, 2, 1).random(3))


class TestCli:
    def write(self, tmp_path, name, obj):
        p = tmp_path / name
        p.write_text(json.dumps(obj))
        return str(p)

    def test_study_command(self, tmp_path, capsys):
        cfg = self.write(tmp_path, "c.json", {"study": "autocorr", **SMALL["autocorr"]})
        out = tmp_path / "res"
        assert main(["study1", "--config", cfg, "--seed", "3", "--out", str(out), "--workers", "1"]) == 0
        text = (out / "study1.csv").read_text()
        assert "seed=3" in text.splitlines()[0]

    def test_study_without_config_uses_defaults(self, tmp_path, monkeypatch):
        import gel.cli as cli
        seen = {}
        monkeypatch.setattr(cli, "run_study", lambda cfg: seen.setdefault("cfg", cfg) and (_ for _ in ()).throw(ConfigError("stop")))
        assert main(["study3", "--scale", "desk", "--out", str(tmp_path)]) == 2
        assert seen["cfg"].reps == 200 and seen["cfg"].study == "garma_filter"

    def test_config_errors(self, tmp_path):
        assert main(["study9"]) == 2
        assert main(["study1", "--config", str(tmp_path / "missing.json")]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["study1", "--config", str(bad)]) == 2
        assert main(["study1", "--config", self.write(tmp_path, "g.json", {"study": "grade"})]) == 2
        assert main(["study1", "--config", self.write(tmp_path, "r.json", {"reps": 0})]) == 2
        assert main(["gen-graph"]) == 2
        assert main(["gen-graph", "--config", self.write(tmp_path, "f.json", {"family": "moebius"}),
                     "--out", str(tmp_path)]) == 2

    def test_gen_graph_and_perturb(self, tmp_path):
        gcfg = self.write(tmp_path, "g.json", {"family": "erdos_renyi", "n": 30, "eps": 0.2, "name": "a.csv"})
        assert main(["gen-graph", "--config", gcfg, "--seed", "1", "--out", str(tmp_path)]) == 0
        A = load_graph(tmp_path / "a.csv")
        assert A.n == 30 and np.array_equal(A.adj, A.adj.T)
        for model, extra in [("m1", {"eps": 0.1}), ("m2", {"eps1": 0.2, "eps2": 0.1}),
                             ("m3", {"partition": {"masks": [(1 - np.eye(30)).tolist()],
                                                   "remove_probs": [0.1], "add_probs": [0.05]}})]:
            pcfg = self.write(tmp_path, "p.json", {"graph": str(tmp_path / "a.csv"), "model": model,
                                                   "name": f"{model}.csv", **extra})
            assert main(["perturb", "--config", pcfg, "--seed", "2", "--out", str(tmp_path)]) == 0, model
            W = load_graph(tmp_path / f"{model}.csv")
            assert not np.diag(W.adj).any() and np.array_equal(W.adj, W.adj.T)

    def test_perturb_weighted(self, tmp_path):
        gcfg = self.write(tmp_path, "g.json", {"family": "knn", "n": 40, "k": 5, "scale": 0.1, "name": "k.csv"})
        assert main(["gen-graph", "--config", gcfg, "--seed", "1", "--out", str(tmp_path)]) == 0
        base = {"graph": str(tmp_path / "k.csv"), "coords": str(tmp_path / "k_coords.csv"), "knn": 5, "scale": 0.1,
                "per_node_variance": True}
        for model, extra in [("m2w", {"eps1": 0.2, "eps2": 0.1, "c": 0.01}),
                             ("m3w", {"partition": {"masks": {"distance_threshold": 0.2},
                                                    "remove_probs": [0.1, 0.2], "add_probs": [0.0, 0.05],
                                                    "var_multipliers": [0.0, 0.01]}})]:
            pcfg = self.write(tmp_path, "p.json", {**base, "model": model, "name": f"{model}.csv", **extra})
            assert main(["perturb", "--config", pcfg, "--seed", "2", "--out", str(tmp_path)]) == 0, model
            W = load_graph(tmp_path / f"{model}.csv")
            assert W.weighted and np.all(W.adj >= 0) and not np.diag(W.adj).any()

    @pytest.mark.parametrize("family,extra", [
        ("sbm", {"sizes": [5, 5], "probs": [[0.5, 0.1], [0.1, 0.5]]}), ("geometric", {"n": 20, "radius": 0.3}),
        ("knn", {"n": 20, "k": 3, "scale": 0.1}), ("cycle", {"n": 6}),
        ("graphon", {"n": 20, "kernel": "exponential", "beta0": 1.0, "beta1": 2.0}),
        ("graphon", {"n": 20, "kernel": "constant", "eps": 0.3})])
    def test_gen_graph_families(self, tmp_path, family, extra):
        cfg = self.write(tmp_path, "g.json", {"family": family, **extra})
        assert main(["gen-graph", "--config", cfg, "--seed", "4", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "graph.csv").exists()

    def test_grade_and_numerical_failure(self, tmp_path, rng):
        A = erdos_renyi(80, 0.1, rng=rng)
        save_graph(A, tmp_path / "a.csv")
        Om = rng.standard_normal((3, 3))
        np.savetxt(tmp_path / "x.csv", Om @ rng.standard_normal((3, 80)), delimiter=",")
        np.savetxt(tmp_path / "om.csv", Om, delimiter=",")
        cfg = self.write(tmp_path, "c.json", {"data": str(tmp_path / "x.csv"), "graph": str(tmp_path / "a.csv"),
                                              "K": 2, "mixing": str(tmp_path / "om.csv")})
        assert main(["grade", "--config", cfg, "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "unmixing.json").read_text())
        assert np.array(res["gamma"]).shape == (3, 3) and 0 <= res["md_index"] <= 1
        X = rng.standard_normal((1, 80))
        np.savetxt(tmp_path / "dup.csv", np.vstack([X, X]), delimiter=",")
        cfg = self.write(tmp_path, "d.json", {"data": str(tmp_path / "dup.csv"), "graph": str(tmp_path / "a.csv")})
        assert main(["grade", "--config", cfg, "--out", str(tmp_path)]) == 3

    def test_filter(self, tmp_path, rng):
        gcfg = self.write(tmp_path, "g.json", {"family": "knn", "n": 30, "k": 4, "scale": 0.1, "area": 1.0})
        assert main(["gen-graph", "--config", gcfg, "--seed", "5", "--out", str(tmp_path)]) == 0
        np.savetxt(tmp_path / "s.csv", rng.standard_normal((12, 30)), delimiter=",")
        cfg = self.write(tmp_path, "f.json", {"graph": str(tmp_path / "graph.csv"),
                                              "signal": str(tmp_path / "s.csv"), "order": 4})
        assert main(["filter", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "detection.csv").read_text().splitlines()
        assert lines[0] == "day,flag,max_gft,threshold" and len(lines) == 10
        assert len(json.loads((tmp_path / "filter.json").read_text())["coeffs"]) == 5
