import warnings

import numpy as np
import pytest

from fastmetric import cli
from fastmetric.data import load_matrix, load_pairs, save_labels, save_matrix, synth_blobs
from fastmetric.errors import PairShortfallWarning
from fastmetric.evaluation import read_convergence_csv
from fastmetric.nn import load_model
from fastmetric.relation import generate_pairs


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PairShortfallWarning)
        yield


@pytest.fixture
def blob_files(tmp_path):
    ds = synth_blobs(4, 30, 6, seed=0)
    save_matrix(tmp_path / "x.fmlt", ds.features)
    save_labels(tmp_path / "labels.txt", ds.label_sets)
    return tmp_path, ds


def _blob_cfg(out_dir, **extra):
    raw = dict(cli.DEFAULTS)
    raw.update(out_dir=str(out_dir), epochs="20")
    raw.update({k: str(v) for k, v in extra.items()})
    return raw


def test_gen_pairs_and_learn_targets(blob_files, capsys):
    d, ds = blob_files
    assert cli.main(["gen-pairs", "--labels", str(d / "labels.txt"), "--pos", "3", "--neg", "3",
                     "--seed", "1", "--out", str(d / "p.csv")]) == 0
    pairs = load_pairs(d / "p.csv")
    assert pairs == generate_pairs(ds.label_sets, 3, 3, seed=1)
    assert (d / "p.csv.gen-pairs.manifest").exists()
    assert cli.main(["learn-targets", "--pairs", str(d / "p.csv"), "--n", str(len(ds)), "--dim", "4",
                     "--epochs", "3", "--out", str(d / "t.fmlt")]) == 0
    out = capsys.readouterr().out
    assert out.count("epoch ") == 3 and "total wall time" in out
    assert load_matrix(d / "t.fmlt").shape == (len(ds), 4)


def test_stage_commands_chain(blob_files, capsys):
    d, ds = blob_files
    p, t, s, m, e = (str(d / n) for n in ("p.csv", "t.fmlt", "s.fmlt", "m.fmlm", "e.fmlt"))
    run = cli.main
    assert run(["gen-pairs", "--labels", str(d / "labels.txt"), "--out", p]) == 0
    assert run(["learn-targets", "--pairs", p, "--n", str(len(ds)), "--dim", "3", "--out", t]) == 0
    assert run(["standardize", "--targets", t, "--out", s]) == 0
    std = load_matrix(s).astype(np.float64)
    assert abs(std.std(axis=0).mean() - 1) < 1e-5
    assert run(["train-embedder", "--features", str(d / "x.fmlt"), "--targets", s, "--arch", "in-8-3",
                "--epochs", "5", "--log", str(d / "log.csv"), "--out", m]) == 0
    assert load_model(m).arch == "6-8-3"
    assert (d / "log.csv").read_text().splitlines()[0] == "seconds,epoch,objective,test_auroc"
    assert run(["embed", "--model", m, "--features", str(d / "x.fmlt"), "--out", e]) == 0
    capsys.readouterr()
    assert run(["eval-auroc", "--embeddings", e, "--pairs", p]) == 0
    assert capsys.readouterr().out.startswith("auroc=")
    assert run(["eval-knn", "--train-emb", e, "--train-labels", str(d / "labels.txt"), "--test-emb", e,
                "--test-labels", str(d / "labels.txt"), "--k", "1"]) == 0
    assert capsys.readouterr().out.strip() == "knn_accuracy=1.000000"
    assert run(["train-siamese", "--features", str(d / "x.fmlt"), "--pairs", p, "--arch", "6-8-3",
                "--epochs", "1", "--out", str(d / "sia.fmlm")]) == 0


def test_missing_input_is_usage_error(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert cli.main(["gen-pairs", "--labels", str(missing), "--out", str(tmp_path / "p.csv")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path):
    (tmp_path / "c.cfg").write_text("dataset=blobs\nnot a pair\n")
    assert cli.main(["pipeline", "--config", str(tmp_path / "c.cfg")]) == 2
    assert cli.main(["pipeline", "--set", "bogus_key=1"]) == 2
    assert cli.main(["pipeline", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_divergence_is_numeric_failure(blob_files, tmp_path):
    d, ds = blob_files
    cli.main(["gen-pairs", "--labels", str(d / "labels.txt"), "--out", str(d / "p.csv")])
    code = cli.main(["learn-targets", "--pairs", str(d / "p.csv"), "--n", str(len(ds)), "--loss", "dot",
                     "--lr", "1e30", "--init-scale", "1e200", "--epochs", "2", "--out", str(d / "t.fmlt")])
    assert code == 1


def test_global_flags_either_side(blob_files):
    d, _ = blob_files
    args = ["gen-pairs", "--labels", str(d / "labels.txt"), "--out", str(d / "a.csv")]
    assert cli.main(["--seed", "3"] + args) == 0
    assert cli.main(args[:-1] + [str(d / "b.csv"), "--seed", "3"]) == 0
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


def test_pipeline_blobs_end_to_end(tmp_path):
    res = cli.run_pipeline(_blob_cfg(tmp_path / "run"))
    assert res.report.auroc >= 0.99
    assert res.report.knn_accuracy >= 0.95
    assert list(res.manifest.timings) == [
        "gen-pairs", "learn-targets", "standardize", "train-embedder", "eval-auroc", "eval-knn",
    ]
    assert all(v >= 0 for v in res.manifest.timings.values())
    man = cli.read_manifest(tmp_path / "run" / "manifest.txt")
    assert man["command"] == "pipeline" and man["param.seed"] == "0"
    assert len(man["output.model.sha256"]) == 64


def test_pipeline_rerun_has_identical_digests(tmp_path):
    a = cli.run_pipeline(_blob_cfg(tmp_path / "a")).manifest.outputs
    b = cli.run_pipeline(_blob_cfg(tmp_path / "b")).manifest.outputs
    assert {k: v[1] for k, v in a.items()} == {k: v[1] for k, v in b.items()}
    c = cli.run_pipeline(_blob_cfg(tmp_path / "c", seed=1)).manifest.outputs
    assert c["model"][1] != a["model"][1]


def test_pipeline_multilabel_reports_jaccard(tmp_path):
    res = cli.run_pipeline(_blob_cfg(tmp_path / "ml", dataset="multilabel", multilabel_n=300))
    assert res.report.jaccard is not None and res.report.knn_accuracy is None
    assert res.witnesses


def test_pipeline_files_dataset(blob_files, tmp_path):
    d, ds = blob_files
    res = cli.run_pipeline(_blob_cfg(
        tmp_path / "f", dataset="files", train_features=d / "x.fmlt", train_labels=d / "labels.txt",
        test_features=d / "x.fmlt", test_labels=d / "labels.txt", pos=3, neg=3,
    ))
    assert 0.5 <= res.report.auroc <= 1.0


def test_compare_single_repeat_reports_na(tmp_path):
    res = cli.run_compare(_blob_cfg(tmp_path / "cmp", repeats=1, siamese_epochs=2, epochs=2))
    text = res.summary_path.read_text()
    assert "n/a" in text
    assert set(res.methods) == {"FML-C", "FML-DP", "Siamese"}
    for r in res.methods.values():
        curve = read_convergence_csv(r.curve_path)
        secs = [s for s, _ in curve]
        assert secs[0] > 0 and all(b > a for a, b in zip(secs, secs[1:]))
    # FML timestamps include phase 1
    fml = res.methods["FML-C"]
    assert fml.curve[0][0] >= fml.phase1_seconds
    assert len(res.methods["FML-C"].run.epoch_seconds) == 2 * len(res.methods["Siamese"].run.epoch_seconds)


def test_compare_repeats_give_interval(tmp_path):
    res = cli.run_compare(_blob_cfg(tmp_path / "cmp", repeats=3, siamese_epochs=1), methods=("FML-C",))
    assert len(res.phase1_times["FML-C"]) == 3
    assert "n/a" not in res.summary_path.read_text()


def test_t_interval():
    mean, half = cli.t_interval([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert half == pytest.approx(4.302652729911275 * 1.0 / np.sqrt(3))
    assert cli.t_interval([5.0]) == (5.0, None)
