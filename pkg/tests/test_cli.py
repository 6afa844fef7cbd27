"""CLI surface: subcommands, formats, exit codes."""

import json
import os

import numpy as np
import pytest

from neuroalign.cli import main
from neuroalign.corpus import serialize_conllu
from neuroalign.reprs import ReprMatrix
from neuroalign.synth import GrammarSpec, gen_corpus
from neuroalign.probes import write_pairs_tsv


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("data")
    items = gen_corpus(GrammarSpec(seed=0), 10)
    path = tmp / "corpus.conllu"
    path.write_text(serialize_conllu([g for g, _ in items]), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_file):
    """One tiny trained checkpoint + vocab + jsonl corpus, reused across tests."""
    tmp = tmp_path_factory.mktemp("trained")
    jsonl = tmp / "corpus.jsonl"
    assert main(["ingest", "--input", str(corpus_file), "--output",
                 str(jsonl)]) == 0
    vocab = tmp / "vocab.txt"
    assert main(["vocab", "--corpus", str(jsonl), "--size", "80",
                 "--output", str(vocab)]) == 0
    ckpt = tmp / "model.bin"
    assert main([
        "train", "--corpus", str(jsonl), "--vocab", str(vocab),
        "--layers", "1", "--heads", "0", "--alpha", "0.1",
        "--steps", "30", "--seed", "1", "--output", str(ckpt),
        "--model-layers", "1", "--model-heads", "2",
        "--d-model", "16", "--d-ff", "32",
    ]) == 0
    reps = tmp / "reps.bin"
    assert main(["extract", "--checkpoint", str(ckpt), "--vocab", str(vocab),
                 "--corpus", str(jsonl), "--output", str(reps)]) == 0
    return {"dir": tmp, "jsonl": jsonl, "vocab": vocab, "ckpt": ckpt,
            "reps": reps}


class TestIngest:
    def test_summary_counts(self, corpus_file, tmp_path, capsys):
        out = tmp_path / "norm.jsonl"
        assert main(["ingest", "--input", str(corpus_file), "--output",
                     str(out)]) == 0
        captured = capsys.readouterr().out
        assert "sentences: 10" in captured
        assert out.exists()

    def test_unsupported_extension(self, tmp_path, capsys):
        bad = tmp_path / "data.xyz"
        bad.write_text("x")
        assert main(["ingest", "--input", str(bad), "--output",
                     str(tmp_path / "o.jsonl")]) == 2
        assert "error" in capsys.readouterr().err

    def test_empty_file(self, tmp_path, capsys):
        empty = tmp_path / "empty.conllu"
        empty.write_text("")
        out = tmp_path / "o.jsonl"
        assert main(["ingest", "--input", str(empty), "--output",
                     str(out)]) == 0
        assert "sentences: 0" in capsys.readouterr().out

    def test_parse_error_names_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.conllu"
        bad.write_text("1\tJohn\t_\tNOUN\t_\t_\t2\tnsubj\t_\n")  # 9 cols
        assert main(["ingest", "--input", str(bad), "--output",
                     str(tmp_path / "o.jsonl")]) == 2
        err = capsys.readouterr().err
        assert "line 1" in err

    def test_sdp_and_hier_json(self, tmp_path):
        sdp = tmp_path / "tiny.sdp"
        sdp.write_text(
            "#1\n1\tJohn\tjohn\tNNP\t-\t-\t_\tARG1\n"
            "2\truns\trun\tVBZ\t+\t+\trun.v\t_\n"
        )
        assert main(["ingest", "--input", str(sdp), "--output",
                     str(tmp_path / "s.jsonl")]) == 0
        hier = tmp_path / "graph.json"
        hier.write_text(json.dumps({
            "units": ["r", "p", "a"],
            "edges": [
                {"parent": "r", "child": "p", "category": "P"},
                {"parent": "r", "child": "a", "category": "A"},
            ],
            "anchors": {"p": 2, "a": 1},
            "tokens": ["John", "runs"],
        }))
        assert main(["ingest", "--input", str(hier), "--format", "hier-json",
                     "--output", str(tmp_path / "h.jsonl")]) == 0


class TestModelCommands:
    def test_train_and_extract_artifacts(self, trained):
        assert trained["ckpt"].exists()
        mat = ReprMatrix.load(trained["reps"])
        assert mat.n == 10

    def test_grid_plan_output(self, trained, tmp_path, capsys):
        assert main([
            "grid", "--corpus", str(trained["jsonl"]),
            "--vocab", str(trained["vocab"]),
            "--layer-counts", "1", "--head-sets", "0", "--runs", "1",
            "--steps", "3", "--seed", "0", "--out-dir", str(tmp_path),
            "--model-layers", "1", "--model-heads", "2",
            "--d-model", "16", "--d-ff", "32",
        ]) == 0
        out = capsys.readouterr().out
        assert "grid plan: 1 settings" in out
        manifests = [p for p in os.listdir(tmp_path) if p.startswith("manifest")]
        assert len(manifests) == 1

    def test_synth_brain_decode_stats(self, trained, tmp_path, capsys):
        brain = tmp_path / "brain.bin"
        assert main(["synth-brain", "--reprs", str(trained["reps"]),
                     "--d-b", "16", "--sigma", "0.1", "--seed", "4",
                     "--output", str(brain)]) == 0
        report = tmp_path / "report.json"
        scores = tmp_path / "scores.csv"
        assert main(["decode", "--brain", str(brain),
                     "--reprs", str(trained["reps"]),
                     "--outer", "5", "--inner", "3", "--seed", "0",
                     "--output", str(report),
                     "--scores-csv", str(scores)]) == 0
        doc = json.loads(report.read_text())
        assert "mean_pearson" in doc["summary"]
        # stats compares a score file against itself: p must be 1 (ties)
        out_json = tmp_path / "stats.json"
        assert main(["stats", "--scores-a", str(scores),
                     "--scores-b", str(scores), "--iters", "50",
                     "--output", str(out_json)]) == 0
        stats_doc = json.loads(out_json.read_text())
        assert stats_doc["p_raw"] == 1.0
        assert stats_doc["p_bonferroni"] == 1.0

    def test_stats_by_subject_wilcoxon(self, tmp_path, capsys):
        def write_scores(path, values):
            with open(path, "w", encoding="utf-8") as f:
                f.write("subject,pearson\n")
                for i, v in enumerate(values):
                    f.write(f"s{i},{v}\n")

        a_path, b_path = tmp_path / "a.csv", tmp_path / "b.csv"
        # 8 subjects, A above B for every one: the smallest two-sided p
        write_scores(a_path, [0.30, 0.31, 0.29, 0.33, 0.28, 0.32, 0.30, 0.31])
        write_scores(b_path, [0.20, 0.22, 0.21, 0.24, 0.19, 0.23, 0.22, 0.21])
        assert main(["stats", "--scores-a", str(a_path),
                     "--scores-b", str(b_path), "--iters", "50",
                     "--by-subject-a", str(a_path),
                     "--by-subject-b", str(b_path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["m_subjects"] == 8
        assert doc["wilcoxon_p"] == 0.0078125
        assert doc["wilcoxon_p_bonferroni"] == 0.0234375

    def test_decode_with_pca(self, trained, tmp_path, capsys):
        # raw high-dimensional "recordings" reduced before decoding
        rng = np.random.default_rng(1)
        reps = ReprMatrix.load(trained["reps"])
        latent = rng.normal(size=(reps.n, 3))
        raw = ReprMatrix(
            data=latent @ rng.normal(size=(3, 40)) + reps.data @ np.zeros((reps.dim, 40)),
            labels=reps.labels,
        )
        raw_path = tmp_path / "raw.bin"
        raw.save(raw_path)
        report = tmp_path / "r.json"
        assert main(["decode", "--brain", str(raw_path),
                     "--reprs", str(trained["reps"]),
                     "--outer", "5", "--inner", "2",
                     "--pca-threshold", "0.95",
                     "--output", str(report)]) == 0
        out = capsys.readouterr().out
        assert "pca: brain reduced to" in out
        reduced_dims = int(out.split("pca: brain reduced to ")[1].split()[0])
        assert reduced_dims <= 3  # latent rank bounds the kept components
        assert report.exists()

    def test_select(self, trained, tmp_path, capsys):
        rng = np.random.default_rng(0)
        uniform = ReprMatrix(data=rng.normal(size=(12, 4)),
                             labels=[f"s{i}" for i in range(12)])
        hub = np.ones((12, 4)) + 0.01 * rng.normal(size=(12, 4))
        hub[0] = 0.0001
        hubby = ReprMatrix(data=hub, labels=[f"s{i}" for i in range(12)])
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        uniform.save(a)
        hubby.save(b)
        assert main(["select", "--reprs", str(a), str(b),
                     "--names", "uniform,hubby", "--k", "3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["selected"] == "uniform"

    def test_probe_tags(self, trained, tmp_path, capsys):
        word_reps = tmp_path / "word_reps.bin"
        assert main(["extract", "--checkpoint", str(trained["ckpt"]),
                     "--vocab", str(trained["vocab"]),
                     "--corpus", str(trained["jsonl"]),
                     "--level", "word", "--output", str(word_reps)]) == 0
        capsys.readouterr()
        # tag every word with its UPOS from the generated graphs
        from neuroalign.corpus import read_jsonl

        graphs = read_jsonl(trained["jsonl"])
        rows = []
        for g in graphs:
            for tok in g.tokens:
                rows.append(f"{g.sent_id}\t{tok.index}\t{tok.upos}")
        tags = tmp_path / "tags.tsv"
        tags.write_text("\n".join(rows) + "\n")
        assert main(["probe", "--kind", "tags",
                     "--train-features", str(word_reps),
                     "--train-tags", str(tags),
                     "--test-features", str(word_reps),
                     "--test-tags", str(tags),
                     "--l2", "0.01"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "macro_f1" in doc and "per_class" in doc

    def test_probe_pairs(self, trained, tmp_path, capsys):
        items = gen_corpus(GrammarSpec(seed=0), 10)
        pairs_path = tmp_path / "pairs.tsv"
        write_pairs_tsv([p for _, p in items], pairs_path)
        assert main(["probe", "--kind", "pairs",
                     "--checkpoint", str(trained["ckpt"]),
                     "--vocab", str(trained["vocab"]),
                     "--pairs", str(pairs_path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert "overall_accuracy" in doc


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    config = {
        "out_dir": str(tmp / "run"),
        "seed": 2,
        "corpus": {"synthetic": True, "n_train": 40, "n_heldout": 20},
        "train": {"steps": 40, "batch_size": 4, "learning_rate": 1e-3},
        "stats": {"iters": 200},
    }
    cfg_path = tmp / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["pipeline", "--config", str(cfg_path)]) == 0
    return tmp / "run"


class TestPipelineAndReport:
    def test_summary_exists(self, run_dir):
        summary = json.loads((run_dir / "summary.json").read_text())
        assert set(summary["models"]) == {"baseline", "guided"}
        assert "mean_pearson" in summary["models"]["guided"]

    def test_report_table(self, run_dir, capsys):
        assert main(["report", "--run-dir", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "pearson_r" in out and "mean_rank" in out and "median_rank" in out
        assert "guided" in out and "baseline" in out

    def test_report_values_match_stage_outputs(self, run_dir):
        summary = json.loads((run_dir / "summary.json").read_text())
        for name in ("baseline", "guided"):
            stage = json.loads(
                (run_dir / "decode" / f"{name}_report.json").read_text()
            )
            assert summary["models"][name]["mean_pearson"] == (
                stage["summary"]["mean_pearson"]
            )
            assert summary["models"][name]["mean_rank"] == (
                stage["summary"]["mean_rank"]
            )

    def test_report_missing_dir(self, capsys):
        assert main(["report", "--run-dir", "/nonexistent/run"]) == 2

    def test_stage_failure_exit_code(self, tmp_path, capsys):
        # brain file whose labels cannot match the heldout stimuli:
        # the decode stage fails and the CLI reports exit code 3
        bad = ReprMatrix(data=np.ones((3, 4)) + np.arange(12).reshape(3, 4),
                         labels=["a", "b", "c"])
        brain_path = tmp_path / "brain.bin"
        bad.save(brain_path)
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "out_dir": str(tmp_path / "r"),
            "corpus": {"synthetic": True, "n_train": 12, "n_heldout": 12},
            "train": {"steps": 2, "batch_size": 2},
            "brain": {"synthetic": False, "path": str(brain_path)},
            "decode": {"outer_folds": 4, "inner_folds": 2},
        }))
        assert main(["pipeline", "--config", str(cfg_path)]) == 3
        assert "decode" in capsys.readouterr().err
        # partial artifacts from completed stages are retained
        assert (tmp_path / "r" / "models").is_dir()

    def test_missing_corpus_path_validation(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({
            "out_dir": str(tmp_path / "r"),
            "corpus": {"synthetic": False, "path": "/does/not/exist",
                       "format": "conllu"},
        }))
        assert main(["pipeline", "--config", str(cfg_path)]) == 2
        assert "error" in capsys.readouterr().err
        assert not (tmp_path / "r").exists()  # validation precedes any work

    def test_word_level_content_function_breakdown(self, tmp_path, capsys):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "out_dir": str(tmp_path / "r"),
            "seed": 5,
            "corpus": {"synthetic": True, "n_train": 30, "n_heldout": 8},
            "train": {"steps": 10, "batch_size": 2},
            "decode": {"level": "word", "outer_folds": 6, "inner_folds": 2},
            "stats": {"iters": 50},
        }))
        assert main(["pipeline", "--config", str(cfg_path)]) == 0
        summary = json.loads((tmp_path / "r" / "summary.json").read_text())
        for name in ("baseline", "guided"):
            assert "content_pearson" in summary["models"][name]
            assert "function_pearson" in summary["models"][name]
        capsys.readouterr()
        assert main(["report", "--run-dir", str(tmp_path / "r")]) == 0
        out = capsys.readouterr().out
        assert "content_r" in out and "function_r" in out

    def test_env_seed_override(self, tmp_path, monkeypatch, capsys):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "out_dir": str(tmp_path / "r"),
            "corpus": {"synthetic": True, "n_train": 12, "n_heldout": 12},
            "train": {"steps": 2, "batch_size": 2},
            "decode": {"outer_folds": 4, "inner_folds": 2},
            "stats": {"iters": 20},
        }))
        monkeypatch.setenv("NEUROALIGN_SEED", "777")
        assert main(["pipeline", "--config", str(cfg_path)]) == 0
        summary = json.loads((tmp_path / "r" / "summary.json").read_text())
        assert summary["seed"] == 777
