"""End-to-end tests for the command line interface.

Each stage runs in-process through cli(argv) so exit codes and printed
output are asserted directly; one smoke test exercises the installed
console script.
"""
import json
import subprocess

import numpy as np

from probebench import (
    DatasetManifest,
    ExampleRecord,
    SplitSpec,
    read_table,
    write_manifest,
    write_table,
)
from probebench.cli import cli
from probebench.probe import ProbeModel

from helpers import gaussian_dataset, pcm16_wav_bytes, tone

FAST_PROBE = {"max_epochs": 32, "convergence_patience": 6}


def audio_workspace(tmp_path, per_class=4, seconds=0.2):
    """WAV files + manifest for two tone classes; returns the manifest path."""
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir(exist_ok=True)
    records = []
    for label, freq in (("low", 500.0), ("high", 4000.0)):
        for i in range(per_class):
            samples = tone(freq, 16000, seconds, amplitude=0.4 + 0.05 * i)
            ints = np.round(samples * 32767).astype(np.int16)
            name = f"{label}-{i}.wav"
            (audio_dir / name).write_bytes(pcm16_wav_bytes(ints, 16000))
            records.append(ExampleRecord(f"{label}{i}", f"audio/{name}", label))
    manifest_path = tmp_path / "tones.csv"
    write_manifest(DatasetManifest("tones", tuple(records)), manifest_path)
    return manifest_path


def table_workspace(tmp_path, name="synth"):
    table, manifest = gaussian_dataset(3, 12, 8, 3.0, data_seed=17, name=name)
    manifest_path = tmp_path / f"{name}.csv"
    write_manifest(manifest, manifest_path)
    table_path = tmp_path / f"{name}.embt"
    write_table(table, table_path)
    return manifest_path, table_path


class TestParsing:
    def test_help_exits_zero(self, capsys):
        assert cli(["--help"]) == 0
        assert "embed" in capsys.readouterr().out

    def test_no_subcommand_is_usage_error(self, capsys):
        assert cli([]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli(["split", "--manifest", "x.csv", "--wibble"]) == 1
        assert "wibble" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert cli(["transmogrify"]) == 1


class TestSplit:
    def test_writes_split_json(self, tmp_path, capsys):
        manifest_path, _ = table_workspace(tmp_path)
        out = tmp_path / "split.json"
        code = cli([
            "split", "--manifest", str(manifest_path),
            "--k", "4", "--seed", "202", "--out", str(out),
        ])
        assert code == 0
        split = SplitSpec.from_json(out.read_text())
        assert split.k == 4 and split.seed == 202
        assert len(split.all_train_ids()) == 12
        message = capsys.readouterr().out
        assert "k=4" in message and "12 train" in message and "24 eval" in message

    def test_default_seed(self, tmp_path):
        manifest_path, _ = table_workspace(tmp_path)
        out = tmp_path / "split.json"
        assert cli(["split", "--manifest", str(manifest_path), "--k", "2",
                    "--out", str(out)]) == 0
        assert SplitSpec.from_json(out.read_text()).seed == 101

    def test_missing_manifest_names_path(self, tmp_path, capsys):
        code = cli(["split", "--manifest", str(tmp_path / "ghost.csv"),
                    "--k", "4", "--out", str(tmp_path / "s.json")])
        assert code == 1
        assert "ghost.csv" in capsys.readouterr().err

    def test_oversized_k_is_input_error(self, tmp_path, capsys):
        manifest_path, _ = table_workspace(tmp_path)
        code = cli(["split", "--manifest", str(manifest_path),
                    "--k", "99", "--out", str(tmp_path / "s.json")])
        assert code == 1
        assert "99" in capsys.readouterr().err

    def test_config_file_supplies_defaults_and_flags_win(self, tmp_path):
        manifest_path, _ = table_workspace(tmp_path)
        config = tmp_path / "split.json.conf"
        config.write_text(json.dumps({
            "manifest": str(manifest_path),
            "k": 2,
            "out": str(tmp_path / "from-config.json"),
        }))
        assert cli(["split", "--config", str(config)]) == 0
        assert SplitSpec.from_json((tmp_path / "from-config.json").read_text()).k == 2

        assert cli(["split", "--config", str(config), "--k", "3",
                    "--out", str(tmp_path / "override.json")]) == 0
        assert SplitSpec.from_json((tmp_path / "override.json").read_text()).k == 3


class TestEmbed:
    def test_reference_embedding_table(self, tmp_path, capsys):
        manifest_path = audio_workspace(tmp_path)
        out = tmp_path / "tones.embt"
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "name": "reference",
            "native_rate": 16000,
            "window_seconds": 0.2,
            "embedding_dim": 256,
        }))
        code = cli(["embed", "--manifest", str(manifest_path),
                    "--spec", str(spec_path), "--out", str(out)])
        assert code == 0
        table = read_table(out)
        assert len(table) == 8 and table.dim == 256
        assert "8 x 256" in capsys.readouterr().out

    def test_unknown_provider_listed(self, tmp_path, capsys):
        manifest_path = audio_workspace(tmp_path)
        code = cli(["embed", "--manifest", str(manifest_path),
                    "--provider", "whalenet", "--out", str(tmp_path / "t.embt")])
        assert code == 1
        assert "presets" in capsys.readouterr().err

    def test_missing_audio_file_is_input_error(self, tmp_path, capsys):
        records = [ExampleRecord("x0", "audio/ghost.wav", "x"),
                   ExampleRecord("y0", "audio/ghost2.wav", "y")]
        manifest_path = tmp_path / "bad.csv"
        write_manifest(DatasetManifest("bad", tuple(records)), manifest_path)
        code = cli(["embed", "--manifest", str(manifest_path),
                    "--out", str(tmp_path / "t.embt")])
        assert code == 1
        assert "ghost.wav" in capsys.readouterr().err


class TestTrainEval:
    def pipeline(self, tmp_path, capsys, extra_train=()):
        manifest_path, table_path = table_workspace(tmp_path)
        split_path = tmp_path / "split.json"
        assert cli(["split", "--manifest", str(manifest_path),
                    "--k", "4", "--out", str(split_path)]) == 0
        model_path = tmp_path / "model.json"
        probe_conf = tmp_path / "train.conf"
        probe_conf.write_text(json.dumps({"probe_config": FAST_PROBE}))
        code = cli(["train", "--table", str(table_path), "--split", str(split_path),
                    "--config", str(probe_conf), "--out", str(model_path),
                    *extra_train])
        assert code == 0
        return manifest_path, table_path, split_path, model_path

    def test_train_writes_model(self, tmp_path, capsys):
        *_, model_path = self.pipeline(tmp_path, capsys)
        model = ProbeModel.from_json(model_path.read_text())
        assert model.kind == "linear"
        assert model.class_names == ("class0", "class1", "class2")
        assert "linear/bce probe over 3 classes" in capsys.readouterr().out

    def test_train_flags_select_probe_shape(self, tmp_path, capsys):
        *_, model_path = self.pipeline(
            tmp_path, capsys, extra_train=("--probe", "two_layer", "--loss", "cce")
        )
        model = ProbeModel.from_json(model_path.read_text())
        assert model.kind == "two_layer" and model.loss == "cce"

    def test_eval_prints_metrics_and_writes_report(self, tmp_path, capsys):
        manifest_path, table_path, split_path, model_path = self.pipeline(tmp_path, capsys)
        report_path = tmp_path / "report.json"
        code = cli(["eval", "--table", str(table_path), "--split", str(split_path),
                    "--model", str(model_path), "--manifest", str(manifest_path),
                    "--out", str(report_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "n_eval=24" in out and "top1=" in out and "macro_auc=" in out
        payload = json.loads(report_path.read_text())
        assert payload["n_eval"] == 24
        assert 0.9 <= payload["macro_auc"] <= 1.0

    def test_directory_as_table_is_runtime_failure(self, tmp_path, capsys):
        manifest_path, table_path = table_workspace(tmp_path)
        split_path = tmp_path / "split.json"
        assert cli(["split", "--manifest", str(manifest_path),
                    "--k", "4", "--out", str(split_path)]) == 0
        code = cli(["train", "--table", str(tmp_path), "--split", str(split_path),
                    "--out", str(tmp_path / "m.json")])
        assert code == 2
        assert "runtime failure" in capsys.readouterr().err


class TestRunAndReport:
    def experiment_config(self, tmp_path, shots=(2, 4)):
        manifest_path, table_path = table_workspace(tmp_path)
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps({
            "datasets": [str(manifest_path)],
            "providers": [{"name": "ident", "table": str(table_path)}],
            "shots": list(shots),
            "seeds": [101, 102],
            "probe": FAST_PROBE,
            "outputs": str(tmp_path / "runs"),
        }))
        return config_path

    def test_run_needs_config(self, capsys):
        assert cli(["run"]) == 1
        assert "--config" in capsys.readouterr().err

    def test_run_writes_log_and_summarizes(self, tmp_path, capsys):
        config_path = self.experiment_config(tmp_path)
        assert cli(["run", "--config", str(config_path)]) == 0
        out = capsys.readouterr().out
        assert "4 cells: 4 ok, 0 failed" in out
        assert "results log:" in out
        assert (tmp_path / "runs" / "results.ndjson").exists()

    def test_report_renders_tables_and_curves(self, tmp_path, capsys):
        config_path = self.experiment_config(tmp_path)
        assert cli(["run", "--config", str(config_path)]) == 0
        capsys.readouterr()
        report_dir = tmp_path / "report"
        code = cli(["report", "--log", str(tmp_path / "runs" / "results.ndjson"),
                    "--out", str(report_dir)])
        assert code == 0
        assert (report_dir / "results-table.txt").exists()
        assert (report_dir / "results-table.csv").exists()
        assert (report_dir / "shots-curve-synth.svg").exists()
        assert (report_dir / "shots-curve-synth.csv").exists()
        out = capsys.readouterr().out
        assert "dataset=synth k=2" in out
        assert "wrote" in out
        svg = (report_dir / "shots-curve-synth.svg").read_text()
        assert "macro ROC-AUC" in svg

    def test_report_single_k_still_writes_table(self, tmp_path, capsys):
        config_path = self.experiment_config(tmp_path, shots=(2,))
        assert cli(["run", "--config", str(config_path)]) == 0
        capsys.readouterr()
        report_dir = tmp_path / "report"
        code = cli(["report", "--log", str(tmp_path / "runs" / "results.ndjson"),
                    "--out", str(report_dir)])
        assert code == 0
        captured = capsys.readouterr()
        assert (report_dir / "results-table.txt").exists()
        assert not list(report_dir.glob("shots-curve-*"))
        assert "skipping shot curves" in captured.err

    def test_report_empty_log_fails(self, tmp_path, capsys):
        log = tmp_path / "results.ndjson"
        log.write_text("\n")
        assert cli(["report", "--log", str(log), "--out", str(tmp_path)]) == 1
        assert "no records" in capsys.readouterr().err

    def test_report_group_by_flag(self, tmp_path, capsys):
        config_path = self.experiment_config(tmp_path)
        assert cli(["run", "--config", str(config_path)]) == 0
        capsys.readouterr()
        code = cli(["report", "--log", str(tmp_path / "runs" / "results.ndjson"),
                    "--out", str(tmp_path / "r2"), "--group-by", "k"])
        assert code == 0
        assert "k=2" in capsys.readouterr().out


class TestTsne:
    def test_writes_svg_and_csv(self, tmp_path, capsys):
        manifest_path, table_path = table_workspace(tmp_path)
        out = tmp_path / "scatter"
        code = cli(["tsne", "--table", str(table_path), "--manifest", str(manifest_path),
                    "--perplexity", "5", "--iterations", "300", "--out", str(out)])
        assert code == 0
        assert (tmp_path / "scatter.svg").exists()
        assert (tmp_path / "scatter.csv").exists()
        lines = (tmp_path / "scatter.csv").read_text().splitlines()
        assert lines[0] == "id,x,y,class"
        assert len(lines) == 1 + 36

    def test_bad_perplexity_is_input_error(self, tmp_path, capsys):
        manifest_path, table_path = table_workspace(tmp_path)
        code = cli(["tsne", "--table", str(table_path), "--manifest", str(manifest_path),
                    "--perplexity", "1.0", "--out", str(tmp_path / "s")])
        assert code == 1


class TestConsoleScript:
    def test_script_split_round_trip(self, tmp_path):
        manifest_path, _ = table_workspace(tmp_path)
        out = tmp_path / "split.json"
        proc = subprocess.run(
            ["probebench", "split", "--manifest", str(manifest_path),
             "--k", "2", "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert SplitSpec.from_json(out.read_text()).k == 2
