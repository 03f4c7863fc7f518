import numpy as np
import pytest

from dbnsat.cli import main, parse_config_file
from dbnsat.harness import (
    ExperimentConfig,
    ResultRow,
    emit_trace,
    make_sampler,
    run_experiment,
    write_rows_csv,
)


def small_config(paths, **overrides):
    base = dict(
        experiment="minibatch_sweep",
        train_images=paths["train_images"],
        train_labels=paths["train_labels"],
        test_images=paths["test_images"],
        test_labels=paths["test_labels"],
        samplers=("cd",),
        pretrain_iters=(1,),
        backprop_iters=(2,),
        seeds=(0,),
        layer_sizes=(32, 8, 8),
        train_size=60,
        test_size=40,
        minibatch=20,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_rejects_unknown_experiment(self):
        with pytest.raises(ValueError):
            ExperimentConfig(experiment="grid_search")

    def test_requires_seeds(self):
        with pytest.raises(ValueError):
            ExperimentConfig(seeds=())

    def test_make_sampler_wires_solver_options(self):
        cfg = ExperimentConfig(restart_patience=7, noise=0.25, stall_flips=100)
        spec = make_sampler("qubo-best", cfg)
        assert spec.kind == "qubo_best"
        assert spec.solver.restart_patience == 7
        assert spec.solver.noise == 0.25
        assert spec.solver.stall_flips == 100

    def test_make_sampler_rejects_unknown(self):
        with pytest.raises(ValueError):
            make_sampler("annealer", ExperimentConfig())


class TestRunExperiment:
    def test_rows_sorted_and_complete(self, surrogate_paths):
        cfg = small_config(
            surrogate_paths,
            samplers=("cd",),
            pretrain_iters=(1, 2),
            backprop_iters=(1, 2),
            seeds=(0, 1),
        )
        rows = run_experiment(cfg)
        assert len(rows) == 8
        keys = [r.key() for r in rows]
        assert keys == sorted(keys)
        assert all(0.0 <= r.accuracy <= 1.0 for r in rows)

    def test_deterministic_accuracies(self, surrogate_paths):
        cfg = small_config(surrogate_paths)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert [r.accuracy for r in a] == [r.accuracy for r in b]

    def test_bn_relu_comparison_methods(self, surrogate_paths):
        cfg = small_config(
            surrogate_paths, experiment="bn_relu_comparison", pretrain_iters=(1,)
        )
        rows = run_experiment(cfg)
        methods = {r.method for r in rows}
        assert methods == {"cd+sigmoid", "bn+relu"}
        assert all(r.pretrain_iters == 0 for r in rows if r.method == "bn+relu")


class TestTrace:
    def test_trace_rows(self):
        cfg = ExperimentConfig(
            experiment="solver_trace", trace_visible=8, trace_hidden=8, seeds=(3,)
        )
        rows, result = emit_trace(cfg)
        assert len(rows) == len(result.trace.points)
        assert sum(r[2] for r in rows) == len(result.trace.restart_markers)
        flips = [r[0] for r in rows]
        assert flips == sorted(flips)


class TestCsv:
    def test_deterministic_bytes(self, tmp_path):
        cfg = ExperimentConfig()
        rows = [
            ResultRow("cd", 1, 100, 0, 0.5, 1.23),
            ResultRow("cd", 1, 100, 1, 0.6, 4.56),
        ]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rows_csv(p1, cfg, rows)
        write_rows_csv(p2, cfg, [ResultRow(r.method, r.pretrain_iters, r.backprop_iters,
                                           r.seed, r.accuracy, r.wall_time_seconds + 9)
                                 for r in rows])
        assert p1.read_bytes() == p2.read_bytes()

    def test_timings_opt_in(self, tmp_path):
        cfg = ExperimentConfig()
        rows = [ResultRow("cd", 1, 100, 0, 0.5, 1.23)]
        write_rows_csv(tmp_path / "t.csv", cfg, rows, include_timings=True)
        text = (tmp_path / "t.csv").read_text()
        assert "wall_time_seconds" in text
        assert ",1.230" in text

    def test_header_records_config(self, tmp_path):
        cfg = ExperimentConfig(seeds=(0, 1, 2), restart_patience=14)
        write_rows_csv(tmp_path / "h.csv", cfg, [])
        text = (tmp_path / "h.csv").read_text()
        assert "# seeds=0,1,2" in text
        assert "# restart_patience=14" in text


class TestCli:
    def test_config_file_parsing(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# a comment\n"
            "samplers = cd,qubo-best\n"
            "minibatch = 50  # trailing comment\n"
            "\n"
            "seeds=0,1\n"
        )
        values = parse_config_file(cfg)
        assert values == {"samplers": "cd,qubo-best", "minibatch": "50", "seeds": "0,1"}

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no equals sign here\n")
        with pytest.raises(ValueError):
            parse_config_file(cfg)

    def test_unknown_key_is_an_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed=9\n")
        rc = main(["trace", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_sweep_end_to_end_byte_identical(self, tmp_path, surrogate_paths):
        args = [
            "sweep",
            "--experiment", "minibatch_sweep",
            "--sampler", "cd",
            "--pretrain-iters", "1",
            "--backprop-iters", "2",
            "--seed", "0",
            "--minibatch", "20",
            "--train-size", "60",
            "--test-size", "40",
            "--train-images", surrogate_paths["train_images"],
            "--train-labels", surrogate_paths["train_labels"],
            "--test-images", surrogate_paths["test_images"],
            "--test-labels", surrogate_paths["test_labels"],
        ]
        out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        body = [l for l in out1.read_text().splitlines() if not l.startswith("#")]
        assert body[0] == "method,pretrain_iters,backprop_iters,seed,accuracy"
        assert len(body) == 2

    def test_trace_command(self, tmp_path):
        out = tmp_path / "trace.csv"
        rc = main(["trace", "--seed", "5", "--out", str(out)])
        assert rc == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0] == "flip_count,best_weight,is_restart"
        assert len(lines) > 1

    def test_pretrain_then_eval(self, tmp_path, surrogate_paths):
        common = [
            "--sampler", "cd",
            "--pretrain-iters", "1",
            "--train-size", "60",
            "--test-size", "40",
            "--seed", "0",
            "--train-images", surrogate_paths["train_images"],
            "--train-labels", surrogate_paths["train_labels"],
            "--test-images", surrogate_paths["test_images"],
            "--test-labels", surrogate_paths["test_labels"],
        ]
        ckpt = tmp_path / "model.dbnc"
        assert main(["pretrain", "--out", str(ckpt)] + common) == 0
        assert ckpt.exists()
        report = tmp_path / "acc.csv"
        assert main(["eval", "--model", str(ckpt), "--out", str(report)] + common) == 0
        text = report.read_text()
        assert text.startswith("accuracy,")
        assert 0.0 <= float(text.split(",")[1]) <= 1.0
