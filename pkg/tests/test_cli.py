import json

import pytest

from conftest import FIXTURES
from relcap.cli import main, read_captions
from relcap.corpus import Vocabulary, load_corpus

TINY = ["d_model=8", "n_heads=2", "n_layers=1", "d_ff=16", "d_rel=4", "gmm_m=2", "min_count=1", "relcls_hidden=8", "relcls_epochs=2", "epochs=2"]


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.cfg").write_text("\n".join(TINY) + "\n")
    assert main(["gen-synthetic", "--n", "24", "--feature-dim", "6", "--seed", "3", "--out", str(tmp_path / "c.jsonl")]) == 0
    return tmp_path


def test_gen_synthetic_writes_loadable_corpus(workdir):
    recs = load_corpus(workdir / "c.jsonl")
    assert len(recs) == 24 and recs[0].features.shape[1] == 6


def test_gen_synthetic_contextual(tmp_path):
    assert main(["gen-synthetic", "--n", "10", "--feature-dim", "4", "--contextual", "--out", str(tmp_path / "x.jsonl")]) == 0
    assert len(load_corpus(tmp_path / "x.jsonl")) == 10


def test_build_vocab(workdir, capsys):
    assert main(["build-vocab", str(workdir / "c.jsonl"), "--min-count", "1", "--out", str(workdir / "v.txt")]) == 0
    vocab = Vocabulary.load(workdir / "v.txt")
    assert "a" in vocab and f"{len(vocab)} tokens" in capsys.readouterr().out


def test_fit_gmm_and_relcls(workdir, capsys):
    cfg = ["--config", str(workdir / "tiny.cfg")]
    assert main(["fit-gmm", str(workdir / "c.jsonl"), *cfg, "--out", str(workdir / "g.ckpt")]) == 0
    assert main(["train-relcls", str(workdir / "c.jsonl"), *cfg, "--out", str(workdir / "r.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "m=2" in out and "train_accuracy=" in out
    assert (workdir / "g.ckpt").exists() and (workdir / "r.ckpt").exists()


# two epochs leave some captions empty
@pytest.mark.filterwarnings("ignore:empty candidate caption")
@pytest.mark.parametrize("level", ["object", "hierarchical"])
def test_train_caption_evaluate(workdir, level, capsys):
    corpus = str(workdir / "c.jsonl")
    ckpt, log, caps = workdir / "m.ckpt", workdir / "m.log", workdir / "caps.tsv"
    assert main(["train", corpus, "--config", str(workdir / "tiny.cfg"), "--level", level, "--out", str(ckpt), "--log", str(log)]) == 0
    assert log.read_text().splitlines()[0].startswith("# ")
    assert main(["caption", corpus, "--checkpoint", str(ckpt), "--beam", "2", "--max-len", "5", "--out", str(caps)]) == 0
    lines = caps.read_text().splitlines()
    assert len(lines) == 24 and all("\t" in l for l in lines)
    capsys.readouterr()
    assert main(["evaluate", str(caps), corpus]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split("\t")[0] for r in rows] == ["BLEU@1", "BLEU@2", "BLEU@3", "BLEU@4"]


def test_caption_to_stdout(workdir, capsys):
    corpus = str(workdir / "c.jsonl")
    assert main(["train", corpus, "--config", str(workdir / "tiny.cfg"), "--out", str(workdir / "m.ckpt")]) == 0
    capsys.readouterr()
    assert main(["caption", corpus, "--checkpoint", str(workdir / "m.ckpt")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 24


def test_evaluate_fixture(capsys):
    assert main(["evaluate", str(FIXTURES / "bleu_candidates.tsv"), str(FIXTURES / "bleu_references.tsv")]) == 0
    scores = [float(r.split("\t")[1]) for r in capsys.readouterr().out.splitlines()]
    expected = [17 / 18, (17 / 18 * 11 / 13) ** 0.5, (17 / 18 * 11 / 13 * 7 / 8) ** (1 / 3), (17 / 18 * 11 / 13 * 7 / 8) ** 0.25]
    assert scores == pytest.approx(expected, abs=1e-6)


def test_read_captions_groups_references():
    refs = read_captions(FIXTURES / "bleu_references.tsv")
    assert len(refs["f4"]) == 2


@pytest.mark.parametrize("level", ["object", "image", "hierarchical"])
def test_grad_check_passes(level, capsys):
    assert main(["grad-check", "--level", level]) == 0
    assert "max_relative_error" in capsys.readouterr().out


def test_grad_check_failure_exits_2(capsys):
    assert main(["grad-check", "--tol", "1e-30"]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_training_nan_exits_2(workdir, capsys):
    assert main(["train", str(workdir / "c.jsonl"), "--config", str(workdir / "tiny.cfg"), "--out", str(workdir / "m.ckpt")]) == 0
    (workdir / "nan.cfg").write_text("\n".join(TINY) + "\nlr=1e300\n")
    assert main(["train", str(workdir / "c.jsonl"), "--config", str(workdir / "nan.cfg"), "--out", str(workdir / "n.ckpt")]) == 2


@pytest.mark.parametrize("level", ["object", "image", "hierarchical"])
def test_dump_graph(workdir, level, capsys):
    assert main(["dump-graph", str(workdir / "c.jsonl"), "--level", level, "--index", "5"]) == 0
    assert capsys.readouterr().out.strip()


def test_invalid_inputs_exit_1(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"image_id": "x"}) + "\n")
    assert main(["build-vocab", str(bad)]) == 1
    assert main(["build-vocab", str(tmp_path / "missing.jsonl")]) == 1
    (tmp_path / "bad.cfg").write_text("nonsense_key=3\n")
    assert main(["build-vocab", str(workdir / "c.jsonl"), "--config", str(tmp_path / "bad.cfg")]) == 1
    assert main(["dump-graph", str(workdir / "c.jsonl"), "--index", "999"]) == 1
    assert main(["caption", str(workdir / "c.jsonl"), "--checkpoint", str(tmp_path / "nope.ckpt")]) == 1
    (tmp_path / "cand.tsv").write_text("zzz\tan image\n")
    assert main(["evaluate", str(tmp_path / "cand.tsv"), str(workdir / "c.jsonl")]) == 1
    assert main(["build-vocab", str(workdir / "c.jsonl"), "--config", str(tmp_path / "none.cfg")]) == 1
    assert "error:" in capsys.readouterr().err


def test_env_config_is_applied(workdir, monkeypatch):
    monkeypatch.setenv("RELCAP_LEVEL", "bogus")
    assert main(["build-vocab", str(workdir / "c.jsonl"), "--out", str(workdir / "v.txt")]) == 1
