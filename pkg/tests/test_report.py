"""Tests for results tables, win markers, and shot curve rendering."""
import math
from pathlib import Path

import numpy as np
import pytest

from probebench import RunRecord
from probebench.metrics import MetricsReport, log_odds
from probebench.report import (
    render_results_table,
    render_shots_curve,
    shots_curve_data,
)


def rec(provider, k, seed, auc, top1=None, dataset="synth", probe_kind="linear"):
    if top1 is None:
        top1 = auc
    metrics = MetricsReport(
        classes=("a", "b"),
        per_class_auc={"a": auc, "b": auc},
        macro_auc=auc,
        top1=top1,
        confusion=np.zeros((2, 2), dtype=np.int64),
        n_eval=20,
    )
    return RunRecord(
        provider=provider,
        dataset=dataset,
        k=k,
        seed=seed,
        probe_kind=probe_kind,
        resample_mode=None,
        dim=None,
        config_hash=f"{hash((provider, dataset, k, seed, probe_kind)) & 0xFFFFFFFF:064x}",
        status="ok",
        metrics=metrics,
        error=None,
        wall_time_s=0.5,
    )


def failed(provider, k, seed):
    return RunRecord(
        provider=provider,
        dataset="synth",
        k=k,
        seed=seed,
        probe_kind="linear",
        resample_mode=None,
        dim=None,
        config_hash="f" * 64,
        status="error",
        metrics=None,
        error="boom",
        wall_time_s=0.0,
    )


class TestResultsTable:
    def sweep(self, margins):
        """Two providers over seeds 101..103; margins[seed] > 0 means alpha wins."""
        records = []
        for seed, margin in margins.items():
            records.append(rec("alpha", 4, seed, 0.80 + margin))
            records.append(rec("beta", 4, seed, 0.80))
        return records

    def test_all_seed_sweep_is_bold(self):
        table = render_results_table(self.sweep({101: 0.05, 102: 0.04, 103: 0.06}))
        assert "**0.8500**" in table.text
        assert "**" not in table.text.replace("**0.8500**", "")

    def test_one_dropped_seed_is_italic(self):
        table = render_results_table(self.sweep({101: 0.05, 102: -0.01, 103: 0.06}))
        assert "*0.8333*" in table.text
        assert "**" not in table.text

    def test_split_wins_unmarked(self):
        # 2-2 over four seeds: nobody wins all but one
        table = render_results_table(
            self.sweep({101: 0.05, 102: 0.04, 103: -0.01, 104: -0.02})
        )
        assert "*" not in table.text

    def test_tie_on_a_seed_blocks_bold(self):
        # wins must be strict
        table = render_results_table(self.sweep({101: 0.05, 102: 0.0, 103: 0.06}))
        assert "**" not in table.text
        assert "*0.8367*" in table.text

    def test_csv_carries_marker_column(self):
        table = render_results_table(self.sweep({101: 0.05, 102: 0.04, 103: 0.06}))
        lines = table.csv.splitlines()
        assert lines[0] == "dataset,k,provider,top1,auc,top1_marker,auc_marker"
        alpha = next(l for l in lines if l.startswith("synth,4,alpha"))
        assert alpha == "synth,4,alpha,0.850000,0.850000,bold,bold"
        beta = next(l for l in lines if l.startswith("synth,4,beta"))
        assert beta.endswith(",,")

    def test_groups_split_by_dataset_and_k(self):
        records = [
            rec("alpha", 4, 101, 0.9),
            rec("alpha", 8, 101, 0.95),
            rec("alpha", 4, 101, 0.7, dataset="other"),
        ]
        table = render_results_table(records)
        assert "dataset=synth k=4" in table.text
        assert "dataset=synth k=8" in table.text
        assert "dataset=other k=4" in table.text

    def test_failed_records_excluded(self):
        records = self.sweep({101: 0.05, 102: 0.04, 103: 0.06}) + [failed("alpha", 4, 104)]
        table = render_results_table(records)
        assert "**0.8500**" in table.text

    def test_no_usable_records_raises(self):
        with pytest.raises(ValueError, match="no records"):
            render_results_table([failed("alpha", 4, 101)])

    def test_unknown_group_field_rejected(self):
        with pytest.raises(ValueError, match="cannot group by"):
            render_results_table([rec("alpha", 4, 101, 0.9)], group_by=("vibes",))

    def test_mismatched_seed_sets_warn(self):
        records = self.sweep({101: 0.05, 102: 0.04}) + [rec("alpha", 4, 103, 0.86)]
        table = render_results_table(records)
        assert table.warnings
        assert "seed sets differ" in table.text

    def test_mixed_probes_get_suffixed_rows(self):
        records = [
            rec("alpha", 4, 101, 0.9),
            rec("alpha", 4, 101, 0.8, probe_kind="two_layer"),
        ]
        table = render_results_table(records)
        assert "alpha/linear" in table.text
        assert "alpha/two_layer" in table.text


class TestShotsCurveData:
    def test_points_and_means_sorted(self):
        records = [
            rec("alpha", 8, 102, 0.9),
            rec("alpha", 8, 101, 0.8),
            rec("alpha", 4, 101, 0.6),
            rec("alpha", 4, 102, 0.7),
        ]
        data = shots_curve_data(records)
        points, means = data["synth"]["alpha"]
        assert [(p[0], p[1]) for p in points] == [(4, 101), (4, 102), (8, 101), (8, 102)]
        assert [m[0] for m in means] == [4, 8]
        assert [m[1] for m in means] == pytest.approx([0.65, 0.85])
        assert points[0][3] == pytest.approx(log_odds(0.6))
        # mean is taken in probability space, then mapped
        assert means[0][2] == pytest.approx(log_odds(0.65))

    def test_single_k_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            shots_curve_data([rec("alpha", 4, 101, 0.9), rec("alpha", 4, 102, 0.8)])


class TestRenderShotsCurve:
    def curve_records(self):
        records = []
        for provider, base in (("alpha", 0.85), ("beta", 0.7)):
            for k in (4, 8, 16):
                for seed in (101, 102):
                    auc = min(base + 0.01 * math.log2(k) + 0.001 * (seed - 101), 0.999)
                    records.append(rec(provider, k, seed, auc))
        return records

    def test_writes_svg_and_csv_per_dataset(self, tmp_path):
        written = render_shots_curve(self.curve_records(), tmp_path)
        assert written == [
            tmp_path / "shots-curve-synth.svg",
            tmp_path / "shots-curve-synth.csv",
        ]
        svg = written[0].read_text()
        assert svg.lstrip().startswith("<?xml")
        assert "alpha" in svg and "beta" in svg
        assert "training examples per class" in svg

    def test_csv_rows_per_point_plus_means(self, tmp_path):
        records = self.curve_records()
        written = render_shots_curve(records, tmp_path)
        lines = written[1].read_text().splitlines()
        assert lines[0] == "provider,k,seed,macro_auc,log_odds"
        # 2 providers x 3 k x (2 seeds + 1 mean row)
        assert len(lines) == 1 + 2 * 3 * 3
        mean_rows = [l for l in lines if ",mean," in l]
        assert len(mean_rows) == 6

    def test_svg_bytes_deterministic(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        first = render_shots_curve(self.curve_records(), a_dir)
        second = render_shots_curve(self.curve_records(), b_dir)
        assert first[0].read_bytes() == second[0].read_bytes()
        assert first[1].read_text() == second[1].read_text()

    def test_one_figure_per_dataset(self, tmp_path):
        records = self.curve_records() + [
            rec("alpha", k, seed, 0.8, dataset="other")
            for k in (4, 8)
            for seed in (101, 102)
        ]
        written = render_shots_curve(records, tmp_path)
        names = {p.name for p in written}
        assert names == {
            "shots-curve-synth.svg",
            "shots-curve-synth.csv",
            "shots-curve-other.svg",
            "shots-curve-other.csv",
        }
