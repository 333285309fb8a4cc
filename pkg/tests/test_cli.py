import json

import pytest

from convnlu.checkpoint import load_checkpoint, save_checkpoint
from convnlu.cli import format_table, main, merge_curves, read_manifest
from convnlu.data import LabelMaps
from convnlu.pruning import SparsityCurvePoint, read_curve, write_curve

SMALL = ["--embed-dim", "16", "--filters", "20", "--kernel-size", "3", "--epochs", "4", "--lr", "0.01",
         "--max-seq-len", "30"]


def _train(corpus_dir, out, *extra):
    argv = ["train", "--data", str(corpus_dir / "data"), "--vectors", str(corpus_dir / "vectors.txt"),
            "--out", str(out), *SMALL, *extra]
    assert main(argv) == 0
    return out / "model.ckpt"


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_dir):
    return _train(corpus_dir, tmp_path_factory.mktemp("train"))


def _point(rate, intent, slot, params=100):
    return SparsityCurvePoint(int(round(300 * (1 - rate))), params, rate, intent, slot, "")


class TestTrain:
    def test_outputs_and_manifest(self, trained):
        out = trained.parent
        for name in ("model.ckpt", "metrics.tsv", "history.tsv", "manifest.tsv"):
            assert (out / name).is_file()
        m = read_manifest(out / "manifest.tsv")
        assert m["command"] == "train" and m["exit_code"] == "0" and m["seed"] == "0"
        assert m["arg.filters"] == "20"
        assert len(m["dataset_checksum"]) == 64
        assert m["output.checkpoint"] == str(trained)
        for key in ("toolkit_version", "numpy_version", "started", "finished"):
            assert m[key]

    def test_deterministic(self, trained, corpus_dir, tmp_path):
        again = _train(corpus_dir, tmp_path)
        assert again.read_bytes() == trained.read_bytes()

    def test_manifest_replay(self, trained, tmp_path):
        assert main(["--from-manifest", str(trained.parent / "manifest.tsv"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "model.ckpt").read_bytes() == trained.read_bytes()
        recorded = json.loads(read_manifest(tmp_path / "manifest.tsv")["argv"])
        assert recorded[-2:] == ["--out", str(tmp_path)]

    def test_intent_only_has_no_slot_head(self, corpus_dir, tmp_path):
        model = load_checkpoint(_train(corpus_dir, tmp_path, "--task", "intent"))
        assert model.slot_w is None and model.intent_w is not None
        assert "slot_f1" in (tmp_path / "metrics.tsv").read_text()

    def test_missing_data_is_usage_error(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path)]) == 2
        assert "--data" in capsys.readouterr().err
        assert read_manifest(tmp_path / "manifest.tsv")["exit_code"] == "2"

    def test_nonexistent_data_dir(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2

    def test_bad_data_format(self, corpus_dir, tmp_path):
        import shutil

        root = tmp_path / "data"
        shutil.copytree(corpus_dir / "data", root)
        with open(root / "train" / "seq.out", "a", encoding="utf-8") as fh:
            fh.write("O O\n")
        assert main(["train", "--data", str(root), "--out", str(tmp_path / "o"), *SMALL]) == 3

    def test_unknown_flag(self, tmp_path):
        assert main(["train", "--no-such-flag"]) == 2


class TestEval:
    def test_metrics_file(self, trained, corpus_dir, tmp_path):
        code = main(["eval", "--checkpoint", str(trained), "--data", str(corpus_dir / "data"), "--out", str(tmp_path),
                     "--max-seq-len", "30", "--split", "dev"])
        assert code == 0
        lines = (tmp_path / "metrics.tsv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("dev\t")

    def test_missing_checkpoint(self, corpus_dir, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "x.ckpt"), "--data", str(corpus_dir / "data"),
                     "--out", str(tmp_path)]) == 2

    def test_corrupt_checkpoint(self, corpus_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["eval", "--checkpoint", str(bad), "--data", str(corpus_dir / "data"),
                     "--out", str(tmp_path)]) == 3


class TestPrune:
    def _prune(self, trained, corpus_dir, out, *extra):
        argv = ["prune", "--checkpoint", str(trained), "--data", str(corpus_dir / "data"), "--out", str(out),
                "--max-seq-len", "30", "--epochs", "2", "--lr", "0.01", *extra]
        return main(argv)

    def test_iterative_curve(self, trained, corpus_dir, tmp_path):
        assert self._prune(trained, corpus_dir, tmp_path) == 0
        points = read_curve(tmp_path / "curve.tsv")
        assert [p.filters_remaining for p in points] == [18, 16, 14, 12, 10]
        assert all((tmp_path / f"pruned_{p.filters_remaining:04d}.ckpt").is_file() for p in points)
        params = [p.params for p in points]
        assert params == sorted(params, reverse=True)

    def test_include_baseline(self, trained, corpus_dir, tmp_path):
        assert self._prune(trained, corpus_dir, tmp_path, "--target", "0.2", "--include-baseline") == 0
        points = read_curve(tmp_path / "curve.tsv")
        assert points[0].compression_rate == 0.0 and points[0].filters_remaining == 20

    def test_one_shot_without_data(self, trained, tmp_path):
        assert main(["prune", "--checkpoint", str(trained), "--mode", "one-shot", "--target", "0.5",
                     "--out", str(tmp_path)]) == 0
        (p,) = read_curve(tmp_path / "curve.tsv")
        assert p.filters_remaining == 10 and p.intent_accuracy is None
        assert load_checkpoint(tmp_path / "pruned_0010.ckpt").num_filters == 10

    def test_l1_and_l2_differ_in_general(self, trained, tmp_path):
        for norm in ("l1", "l2"):
            assert main(["prune", "--checkpoint", str(trained), "--mode", "one-shot", "--target", "0.5",
                         "--norm", norm, "--out", str(tmp_path / norm)]) == 0
        a = load_checkpoint(tmp_path / "l1" / "pruned_0010.ckpt")
        b = load_checkpoint(tmp_path / "l2" / "pruned_0010.ckpt")
        assert a.num_filters == b.num_filters == 10

    @pytest.mark.parametrize("target", ["1.0", "1.5", "-0.1"])
    def test_invalid_target(self, trained, tmp_path, target):
        assert main(["prune", "--checkpoint", str(trained), "--mode", "one-shot", "--target", target,
                     "--out", str(tmp_path)]) == 2


class TestDistill:
    def test_curve(self, trained, corpus_dir, tmp_path):
        code = main(["distill", "--checkpoint", str(trained), "--data", str(corpus_dir / "data"), "--out",
                     str(tmp_path), "--max-seq-len", "30", "--epochs", "1", "--rates", "0.5,0.75"])
        assert code == 0
        points = read_curve(tmp_path / "curve.tsv")
        assert [p.filters_remaining for p in points] == [10, 5]
        assert (tmp_path / "student_0005.ckpt").is_file()


class TestCompare:
    def test_identical_curves_zero_delta(self, tmp_path):
        pts = [_point(0.0, 0.95, 0.9), _point(0.5, 0.9, 0.85)]
        p, d = write_curve(pts, tmp_path / "p.tsv"), write_curve(pts, tmp_path / "d.tsv")
        assert main(["compare", "--pruning", str(p), "--distillation", str(d), "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "combined.tsv").read_text().splitlines()[1:]
        for row in rows:
            f = row.split("\t")
            assert f[1:4] == f[4:7]
        table = (tmp_path / "table.txt").read_text()
        assert "(+0.00)" in table and "(-5.00)" in table

    def test_full_grid(self):
        rates = [0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 0.95]
        rows = merge_curves([_point(r, 0.9, 0.9) for r in rates], [_point(r, 0.8, 0.8) for r in rates])
        assert len(rows) == 8
        assert len(format_table(rows).splitlines()) == 10

    def test_missing_point_marked_absent(self, caplog):
        rows = merge_curves([_point(0.0, 0.9, 0.9), _point(0.5, 0.8, 0.8)], [_point(0.0, 0.9, 0.9)])
        assert rows[1][2] is None
        assert "absent" in format_table(rows).splitlines()[-1]
        assert "shared points: 0%" in caplog.text

    def test_missing_file(self, tmp_path):
        assert main(["compare", "--pruning", str(tmp_path / "a"), "--distillation", str(tmp_path / "b"),
                     "--out", str(tmp_path)]) == 2


class TestFlips:
    def test_same_checkpoint_no_flips(self, trained, corpus_dir, tmp_path):
        code = main(["flips", "--checkpoint", str(trained), "--against", str(trained), "--data",
                     str(corpus_dir / "data"), "--out", str(tmp_path), "--max-seq-len", "30"])
        assert code == 0
        assert len((tmp_path / "flips.tsv").read_text().splitlines()) == 1

    def test_pruned_line_count(self, trained, corpus_dir, tmp_path):
        assert main(["prune", "--checkpoint", str(trained), "--mode", "one-shot", "--target", "0.8",
                     "--out", str(tmp_path)]) == 0
        code = main(["flips", "--checkpoint", str(trained), "--against", str(tmp_path / "pruned_0004.ckpt"),
                     "--data", str(corpus_dir / "data"), "--out", str(tmp_path), "--max-seq-len", "30"])
        assert code == 0
        summary = dict(line.split("\t") for line in
                       (tmp_path / "flips.tsv.summary").read_text().splitlines()[1:])
        lines = (tmp_path / "flips.tsv").read_text().splitlines()
        assert len(lines) == int(summary["intent_flips"]) + int(summary["slot_flips"]) + 1

    def test_label_map_mismatch(self, trained, corpus_dir, tmp_path):
        other = load_checkpoint(trained)
        other.labels = LabelMaps(list(reversed(other.labels.intents)), other.labels.slots)
        save_checkpoint(other, tmp_path / "other.ckpt")
        code = main(["flips", "--checkpoint", str(trained), "--against", str(tmp_path / "other.ckpt"),
                     "--data", str(corpus_dir / "data"), "--out", str(tmp_path), "--max-seq-len", "30"])
        assert code == 2


class TestBench:
    def test_latency_file(self, trained, corpus_dir, tmp_path):
        assert main(["prune", "--checkpoint", str(trained), "--mode", "one-shot", "--out", str(tmp_path)]) == 0
        code = main(["bench", "--checkpoint", str(tmp_path / "pruned_0010.ckpt"), "--baseline", str(trained),
                     "--data", str(corpus_dir / "data"), "--out", str(tmp_path), "--max-seq-len", "30",
                     "--warmup", "5", "--rounds", "1"])
        assert code == 0
        lines = (tmp_path / "latency.tsv").read_text().splitlines()
        assert len(lines) == 3
        header = lines[0].split("\t")
        row = dict(zip(header, lines[1].split("\t")))
        assert row["samples"] == "80" and row["batch_size"] == "1"
