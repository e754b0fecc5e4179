import json
import subprocess
import sys

import numpy as np
import pytest

from covr.cli import main
from covr.embeddings import EmbeddingStore, write_embedding_store
from covr.evaluation import parse_eval_report
from covr.fusion import init_params, save_checkpoint


def stores(paths):
    return ["--query-store", str(paths["query_store"]), "--desc-store", str(paths["desc_store"]),
            "--target-store", str(paths["target_store"])]


def train_args(paths, out, *extra):
    return ["train", "--triplets", str(paths["triplets"]), *stores(paths), "--out", str(out),
            "--epochs", "2", "--layers", "1", "--heads", "2", "--vocab", "512", "--max-len", "16",
            *extra]


@pytest.fixture
def trained(task_files, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(task_files, out)) == 0
    return out / "checkpoint.cvrp"


class TestTrain:
    def test_writes_artifacts(self, task_files, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(train_args(task_files, out)) == 0
        for name in ("checkpoint.cvrp", "optimizer.cvrp", "loss_trace.csv", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train" and manifest["seed"] == 42
        assert set(manifest["inputs"]) == {str(p) for p in task_files.values()}
        assert all(len(v) == 16 for v in manifest["inputs"].values())
        trace = (out / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,loss,alpha" and len(trace) == 3
        assert "final loss" in capsys.readouterr().out

    def test_same_seed_same_checkpoint(self, task_files, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(train_args(task_files, a, "--seed", "7")) == 0
        assert main(train_args(task_files, b, "--seed", "7")) == 0
        assert (a / "checkpoint.cvrp").read_bytes() == (b / "checkpoint.cvrp").read_bytes()
        assert (a / "loss_trace.csv").read_bytes() == (b / "loss_trace.csv").read_bytes()

    def test_resume_flags(self, task_files, tmp_path):
        full, part, rest = tmp_path / "full", tmp_path / "part", tmp_path / "rest"
        assert main(train_args(task_files, full, "--epochs", "4")) == 0
        assert main(train_args(task_files, part, "--epochs", "2")) == 0
        assert main(train_args(task_files, rest, "--epochs", "4", "--start-epoch", "2",
                               "--init-checkpoint", str(part / "checkpoint.cvrp"),
                               "--init-optimizer", str(part / "optimizer.cvrp"))) == 0
        assert (rest / "checkpoint.cvrp").read_bytes() == (full / "checkpoint.cvrp").read_bytes()

    def test_missing_required_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train", "--triplets", "x.jsonl"])
        assert info.value.code == 2
        assert "usage" in capsys.readouterr().err

    @pytest.mark.parametrize("flags", [["--batch-size", "0"], ["--heads", "3"], ["--d", "8"]])
    def test_config_errors_exit_2(self, task_files, tmp_path, flags, capsys):
        assert main(train_args(task_files, tmp_path / "o", *flags)) == 2
        assert capsys.readouterr().err.startswith("covr:")

    def test_missing_file_exits_3(self, task_files, tmp_path):
        paths = dict(task_files, triplets=tmp_path / "nope.jsonl")
        assert main(train_args(paths, tmp_path / "o")) == 3

    def test_unknown_id_exits_3(self, task_files, tmp_path, capsys):
        with open(task_files["triplets"], "a", encoding="utf-8") as fh:
            fh.write('{"query_id": "zz9", "description": "d", "modification": "m", "target_id": "t000_0"}\n')
        assert main(train_args(task_files, tmp_path / "o")) == 3
        assert "zz9" in capsys.readouterr().err

    def test_numeric_failure_exits_4(self, task_files, tmp_path, capsys):
        with np.errstate(all="ignore"):
            assert main(train_args(task_files, tmp_path / "o", "--tau", "1e-320")) == 4
        assert "TrainingError" in capsys.readouterr().err


class TestEval:
    def test_report(self, task_files, trained, tmp_path, capsys):
        out = tmp_path / "rep.txt"
        args = ["eval", "--checkpoint", str(trained), "--triplets", str(task_files["triplets"]),
                *stores(task_files), "--out", str(out)]
        assert main(args) == 0
        rep = parse_eval_report(out.read_text())
        assert list(rep.recalls) == [1, 5, 10, 50] and rep.count == 8
        assert (tmp_path / "rep.txt.manifest.json").exists()
        assert "R@1" in capsys.readouterr().out

    def test_single_k(self, task_files, trained, tmp_path):
        out = tmp_path / "rep.txt"
        args = ["eval", "--checkpoint", str(trained), "--triplets", str(task_files["triplets"]),
                *stores(task_files), "--out", str(out), "--ks", "1"]
        assert main(args) == 0
        block = out.read_text().split("\n\n")[1].splitlines()
        assert block[0] == "k,recall" and len(block) == 2

    def test_bad_checkpoint_magic(self, task_files, tmp_path, capsys):
        bad = tmp_path / "bad.cvrp"
        bad.write_bytes(b"NOPE" + bytes(20))
        args = ["eval", "--checkpoint", str(bad), "--triplets", str(task_files["triplets"]),
                *stores(task_files), "--out", str(tmp_path / "r.txt")]
        assert main(args) == 3
        assert "byte offset 0" in capsys.readouterr().err

    def test_bad_ks(self, task_files, trained):
        with pytest.raises(SystemExit) as info:
            main(["eval", "--checkpoint", str(trained), "--triplets", str(task_files["triplets"]),
                  *stores(task_files), "--ks", "0,5"])
        assert info.value.code == 2


class TestRetrieve:
    def args(self, task_files, ckpt, tmp_path, *extra):
        return ["retrieve", "--checkpoint", str(ckpt), "--query-store", str(task_files["query_store"]),
                "--target-store", str(task_files["target_store"]), "--desc-store",
                str(task_files["desc_store"]), "--query-id", "q001", "--desc-id", "q001",
                "--modification", "make it night", "--manifest", str(tmp_path / "m.json"), *extra]

    def test_output_format_and_idempotence(self, task_files, trained, tmp_path, capsys):
        assert main(self.args(task_files, trained, tmp_path, "--topk", "3")) == 0
        first = capsys.readouterr().out
        assert main(self.args(task_files, trained, tmp_path, "--topk", "3")) == 0
        assert capsys.readouterr().out == first
        lines = first.splitlines()
        assert lines[0] == "rank,id,score" and len(lines) == 4
        rank, key, score = lines[1].split(",")
        assert rank == "1" and len(score.split(".")[1]) == 6

    def test_topk_beyond_store(self, task_files, trained, tmp_path, capsys):
        assert main(self.args(task_files, trained, tmp_path, "--topk", "100")) == 0
        assert len(capsys.readouterr().out.splitlines()) == 1 + 8

    def test_free_text_description(self, task_files, trained, tmp_path, capsys):
        args = self.args(task_files, trained, tmp_path)
        i = args.index("--desc-id")
        args[i:i + 2] = ["--description", "a dog on a beach"]
        assert main(args) == 0

    def test_unknown_query_id(self, task_files, trained, tmp_path, capsys):
        args = self.args(task_files, trained, tmp_path)
        args[args.index("q001")] = "nobody"
        assert main(args) == 3
        assert "nobody" in capsys.readouterr().err

    def test_topk_zero(self, task_files, trained, tmp_path):
        assert main(self.args(task_files, trained, tmp_path, "--topk", "0")) == 2


class TestStats:
    def test_exact_means(self, tmp_path, capsys):
        p = tmp_path / "t.jsonl"
        p.write_text(
            '{"query_id": "a", "description": "one two three", "modification": "x y", "target_id": "b"}\n'
            '{"query_id": "a", "description": "one", "modification": "x y z w", "target_id": "c"}\n',
            encoding="utf-8")
        assert main(["stats", "--triplets", str(p), "--out-dir", str(tmp_path / "s")]) == 0
        out = capsys.readouterr().out
        assert "description_mean_words=2.00" in out and "modification_mean_words=3.00" in out
        rows = (tmp_path / "s" / "description_words.csv").read_text().splitlines()
        assert rows[0] == "value,count"
        assert sum(int(r.split(",")[1]) for r in rows[1:]) == 2
        assert (tmp_path / "s" / "stats.manifest.json").exists()

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.jsonl"
        p.write_text("")
        assert main(["stats", "--triplets", str(p), "--out-dir", str(tmp_path)]) == 3

    def test_parse_failure(self, tmp_path):
        p = tmp_path / "e.jsonl"
        p.write_text("{oops\n")
        assert main(["stats", "--triplets", str(p), "--out-dir", str(tmp_path)]) == 3


class TestCompareFusion:
    def test_same_checkpoint_same_mode(self, task_files, trained, tmp_path):
        out = tmp_path / "cmp.csv"
        args = ["compare-fusion", "--checkpoint-a", str(trained), "--fusion-b", "unified",
                "--triplets", str(task_files["triplets"]), *stores(task_files), "--out", str(out)]
        assert main(args) == 0
        summary = out.read_text().split("\n\n")[1].splitlines()
        assert summary[1].split(",")[1:] == summary[2].split(",")[1:]

    def test_both_methods(self, task_files, trained, tmp_path):
        out = tmp_path / "cmp.csv"
        args = ["compare-fusion", "--checkpoint-a", str(trained), "--triplets",
                str(task_files["triplets"]), *stores(task_files), "--out", str(out)]
        assert main(args) == 0
        methods = {line.split(",")[0] for line in out.read_text().splitlines()[1:] if line}
        assert {"unified", "pairwise"} <= methods

    def test_dimension_mismatch(self, task_files, trained, tmp_path):
        other = tmp_path / "other.cvrp"
        save_checkpoint(init_params(8, 1, 2, vocab=512, max_len=16), other)
        args = ["compare-fusion", "--checkpoint-a", str(trained), "--checkpoint-b", str(other),
                "--triplets", str(task_files["triplets"]), *stores(task_files),
                "--out", str(tmp_path / "c.csv")]
        assert main(args) == 2


def test_zero_vector_in_store_exits_3(task_files, tmp_path, capsys):
    write_embedding_store(EmbeddingStore(16, {"t000_0": [0.0] * 16}), task_files["target_store"])
    assert main(train_args(task_files, tmp_path / "o")) == 3
    assert "zero" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "covr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "compare-fusion" in proc.stdout
