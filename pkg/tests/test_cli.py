"""CLI wiring: thin wrappers, exit codes, JSON mode, config precedence."""

import json
import sys

import numpy as np
import pytest

import langarith as la
from langarith.cli import main

from helpers import make_delta, random_map, random_pair


@pytest.fixture()
def workspace(tmp_path):
    rng = np.random.default_rng(40)
    pre, ft1 = random_pair(rng, n_tensors=3)
    ft2 = la.apply(pre, make_delta(rng, pre, "seed"), force=True)
    paths = {"pre": tmp_path / "pre.st", "ft1": tmp_path / "ft1.st",
             "ft2": tmp_path / "ft2.st"}
    la.save_checkpoint(pre, paths["pre"])
    la.save_checkpoint(ft1, paths["ft1"])
    la.save_checkpoint(ft2, paths["ft2"])
    return tmp_path, pre, ft1, ft2, paths


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestDiffMerge:
    def test_diff_then_merge_round_trip(self, workspace, capsys):
        tmp, pre, ft1, ft2, paths = workspace
        code, out, _ = run(capsys, "diff", "--base", paths["pre"],
                           "--finetuned", paths["ft1"], "--label", "en",
                           "-o", tmp / "tau_en.st")
        assert code == 0 and "tau_en.st" in out
        code, _, _ = run(capsys, "diff", "--base", paths["pre"],
                         "--finetuned", paths["ft2"], "--label", "fr",
                         "-o", tmp / "tau_fr.st")
        assert code == 0

        code, _, _ = run(capsys, "merge", "--base", paths["pre"],
                         "--delta", f"{tmp}/tau_en.st:0.65",
                         "--delta", f"{tmp}/tau_fr.st:0.35",
                         "-o", tmp / "merged.st")
        assert code == 0

        # the CLI output must be bit-identical to the library composition
        recipe = la.MergeRecipe((("en", 0.65), ("fr", 0.35)))
        merged = la.multi_merge(pre, recipe, {
            "en": la.diff(ft1, pre, "en"),
            "fr": la.diff(ft2, pre, "fr"),
        })
        lib_path = tmp / "lib.st"
        la.save_checkpoint(merged, lib_path)
        assert (tmp / "merged.st").read_bytes() == lib_path.read_bytes()

    def test_merge_weight_syntax_error_is_usage(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        code, _, err = run(capsys, "merge", "--base", paths["pre"],
                           "--delta", f"{paths['ft1']}:notanumber",
                           "-o", tmp / "x.st")
        assert code == 1 and "notanumber" in err

    def test_merge_without_fingerprint_needs_force(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        # ft1 is a plain checkpoint, not a delta: no recorded fingerprint
        code, _, err = run(capsys, "merge", "--base", paths["pre"],
                           "--delta", str(paths["ft1"]), "-o", tmp / "x.st")
        assert code == 2 and "fingerprint" in err
        code, _, _ = run(capsys, "merge", "--base", paths["pre"],
                         "--delta", str(paths["ft1"]), "-o", tmp / "x.st",
                         "--force")
        assert code == 0

    def test_ties_merge_matches_library(self, workspace, capsys):
        tmp, pre, ft1, ft2, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        code, out, _ = run(capsys, "ties-merge", "--base", paths["pre"],
                           "--delta", tmp / "a.st", "--delta", tmp / "b.st",
                           "--top-k", "0.5", "--lambda", "1.2",
                           "-o", tmp / "ties.st", "--json")
        assert code == 0
        assert json.loads(out)["deltas"] == ["en", "fr"]
        expected = la.ties_merge(
            pre,
            [la.diff(ft1, pre, "en"), la.diff(ft2, pre, "fr")],
            la.TiesConfig(0.5, 1.2),
        )
        lib_path = tmp / "ties_lib.st"
        la.save_checkpoint(expected, lib_path)
        assert (tmp / "ties.st").read_bytes() == lib_path.read_bytes()

    def test_weighted_deltas_rejected_for_ties(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        code, _, err = run(capsys, "ties-merge", "--base", paths["pre"],
                           "--delta", f"{paths['ft1']}:0.5", "-o", tmp / "x.st")
        assert code == 1 and "unweighted" in err


class TestReports:
    @pytest.fixture()
    def deltas(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        return tmp, tmp / "a.st", tmp / "b.st"

    def test_cossim_json_csv_plot(self, deltas, capsys):
        tmp, a, b = deltas
        code, out, _ = run(capsys, "cossim", a, b, "--json",
                           "--csv", tmp / "m.csv", "--plot", tmp / "m.png")
        assert code == 0
        payload = json.loads(out)
        assert payload["labels"] == ["en", "fr"]
        assert payload["values"][0][0] == 1.0
        rows = (tmp / "m.csv").read_text().splitlines()
        assert rows[0] == "label,en,fr"
        assert len(rows) == 3
        assert (tmp / "m.png").stat().st_size > 0

    def test_sparsity_json_csv_plot(self, deltas, capsys):
        tmp, a, _ = deltas
        code, out, _ = run(capsys, "sparsity", a, "--bins", "8", "--json",
                           "--csv", tmp / "h.csv", "--plot", tmp / "h.png")
        assert code == 0
        payload = json.loads(out)
        assert payload["label"] == "en"
        assert len(payload["histogram"]) == 8
        rows = (tmp / "h.csv").read_text().splitlines()
        assert rows[0] == "bin_lower,bin_upper,count"
        assert len(rows) == 9
        assert (tmp / "h.png").stat().st_size > 0


class TestSweepCommand:
    def test_sweep_end_to_end(self, workspace, capsys, tmp_path):
        tmp, pre, ft1, ft2, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        evaluator = (
            f"{sys.executable} -c "
            "\"import json,sys;req=json.load(sys.stdin);"
            "print(json.dumps({'score': -abs(req['lambda']-0.25)}))\" "
            "{checkpoint}"
        )
        workdir = tmp / "sweepwork"
        code, out, _ = run(capsys, "sweep", "--base", paths["pre"],
                           "--t1", tmp / "a.st", "--t2", tmp / "b.st",
                           "--evaluator", evaluator,
                           "--step", "0.25", "--workdir", workdir,
                           "--csv", tmp / "s.csv", "--plot", tmp / "s.png",
                           "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["best_lambda"] == 0.25
        assert (workdir / "sweep_entries.jsonl").exists()
        assert (workdir / "sweep_summary.json").exists()
        rows = (tmp / "s.csv").read_text().splitlines()
        assert rows[0] == "lambda,score,evaluator_exit,checkpoint"
        assert len(rows) == 6
        assert (tmp / "s.png").stat().st_size > 0

    def test_workdir_from_environment(self, workspace, capsys, monkeypatch):
        tmp, _, _, _, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        envdir = tmp / "envwork"
        monkeypatch.setenv("LANGARITH_WORKDIR", str(envdir))
        evaluator = (
            f"{sys.executable} -c "
            "\"import json,sys;sys.stdin.read();print(json.dumps({'score':1.0}))\" "
            "{checkpoint}"
        )
        code, _, _ = run(capsys, "sweep", "--base", paths["pre"],
                         "--t1", tmp / "a.st", "--t2", tmp / "b.st",
                         "--evaluator", evaluator, "--step", "1.0")
        assert code == 0
        assert (envdir / "sweep_summary.json").exists()

    def test_all_failures_exit_3(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        code, _, err = run(capsys, "sweep", "--base", paths["pre"],
                           "--t1", tmp / "a.st", "--t2", tmp / "b.st",
                           "--evaluator", "false {checkpoint}",
                           "--step", "1.0", "--workdir", tmp / "w")
        assert code == 3 and "score" in err


class TestMiscCommands:
    def test_related(self, capsys):
        code, out, _ = run(capsys, "related", "es")
        assert code == 0 and out.strip() == "fr"
        code, out, _ = run(capsys, "related", "de", "--json")
        assert code == 0
        assert json.loads(out) == {"language": "de", "related": "fr"}

    def test_related_unknown_exits_2(self, capsys):
        code, _, err = run(capsys, "related", "xx")
        assert code == 2 and "xx" in err

    def test_validate_single_file(self, workspace, capsys):
        _, pre, _, _, paths = workspace
        code, out, _ = run(capsys, "validate", paths["pre"], "--deep", "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["tensors"] == len(pre.names)
        assert payload["deep"] is True

    def test_validate_pair_compatible(self, workspace, capsys):
        _, _, _, _, paths = workspace
        code, out, _ = run(capsys, "validate", paths["pre"], paths["ft1"])
        assert code == 0 and "compatible" in out

    def test_validate_pair_incompatible_exits_2(self, tmp_path, capsys):
        la.save_checkpoint(la.TensorMap({"w": np.zeros(2, np.float32)}),
                           tmp_path / "a.st")
        la.save_checkpoint(la.TensorMap({"w": np.zeros(3, np.float32)}),
                           tmp_path / "b.st")
        code, out, _ = run(capsys, "validate", tmp_path / "a.st",
                           tmp_path / "b.st", "--json")
        assert code == 2
        assert json.loads(out)["shape_mismatches"]

    def test_corrupt_file_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.st"
        bad.write_bytes(b"\x00" * 4)
        code, _, err = run(capsys, "validate", bad)
        assert code == 2 and "header" in err

    def test_missing_subcommand_is_usage_error(self, capsys):
        assert run(capsys)[0] == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(capsys, "related", "es", "--frobnicate")[0] == 1

    def test_help_exits_zero(self, capsys):
        assert run(capsys, "--help")[0] == 0


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        config = tmp / "config.json"
        config.write_text(json.dumps({"bins": 4, "thresholds": "0.5"}))
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        code, out, _ = run(capsys, "--config", config, "sparsity", tmp / "a.st",
                           "--json")
        assert code == 0
        assert len(json.loads(out)["histogram"]) == 4
        # explicit flag beats the config value
        code, out, _ = run(capsys, "--config", config, "sparsity", tmp / "a.st",
                           "--bins", "2", "--json")
        assert len(json.loads(out)["histogram"]) == 2

    def test_bad_config_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        code, _, err = run(capsys, "--config", bad, "related", "es")
        assert code == 1 and "config" in err


class TestJsonEverywhere:
    def test_every_subcommand_emits_parseable_json(self, workspace, capsys):
        tmp, _, _, _, paths = workspace
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
            "--label", "en", "-o", tmp / "a.st")
        run(capsys, "diff", "--base", paths["pre"], "--finetuned", paths["ft2"],
            "--label", "fr", "-o", tmp / "b.st")
        evaluator = (
            f"{sys.executable} -c "
            "\"import json,sys;sys.stdin.read();print(json.dumps({'score':1.0}))\" "
            "{checkpoint}"
        )
        invocations = [
            ("diff", "--base", paths["pre"], "--finetuned", paths["ft1"],
             "--label", "en", "-o", tmp / "j1.st"),
            ("merge", "--base", paths["pre"], "--delta", f"{tmp}/a.st:1.0",
             "-o", tmp / "j2.st"),
            ("ties-merge", "--base", paths["pre"], "--delta", tmp / "a.st",
             "-o", tmp / "j3.st"),
            ("cossim", tmp / "a.st", tmp / "b.st"),
            ("sparsity", tmp / "a.st"),
            ("sweep", "--base", paths["pre"], "--t1", tmp / "a.st",
             "--t2", tmp / "b.st", "--evaluator", evaluator, "--step", "1.0",
             "--workdir", tmp / "jw"),
            ("related", "es"),
            ("validate", paths["pre"]),
        ]
        for argv in invocations:
            code, out, err = run(capsys, *argv, "--json")
            assert code == 0, f"{argv[0]} failed: {err}"
            json.loads(out)
