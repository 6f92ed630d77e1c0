import json

import pytest

from wenas.cli import (
    load_genome_file,
    main,
    read_config_file,
    read_genome_lines,
    read_report_csv,
)
from wenas.data import load_corpus_dir, unigram_perplexity
from wenas.genome import parse, serialize, validate
from wenas.synth import write_markov_corpus


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_markov_corpus(
        d, train_tokens=2600, valid_tokens=500, test_tokens=500,
        n_symbols=8, seed=77, line_len=80,
    )
    return d


SEARCH_FLAGS = [
    "--total-nets", "4", "--net-batch", "2", "--seed-size", "1",
    "--levels", "3", "--epochs-per-round", "1",
    "--emb-dim", "8", "--hidden-dim", "8", "--batch", "5", "--bptt", "6",
    "--dropout-embed", "0", "--dropout-input", "0",
    "--dropout-hidden", "0", "--dropout-output", "0",
    "--lr", "0.002", "--seed", "4",
]


def run_search_cli(corpus_dir, tmp_path, tag, extra=()):
    out = tmp_path / f"genome_{tag}.json"
    report = tmp_path / f"report_{tag}.csv"
    code = main(
        ["search", "--corpus", str(corpus_dir), *SEARCH_FLAGS, *extra,
         "--out", str(out), "--report", str(report)]
    )
    assert code == 0
    return out, report


# ---- generate ----


def test_generate_level2_exhausts_ops(tmp_path):
    out = tmp_path / "pool.jsonl"
    assert main(["generate", "--levels", "2", "--count", "4", "--seed", "1", "--out", str(out)]) == 0
    genomes = read_genome_lines(out)
    assert sorted(g.genes[0].op.value for g in genomes) == [
        "identity", "relu", "sigmoid", "tanh",
    ]


def test_generate_seeded_files_identical(tmp_path):
    out = tmp_path / "a.jsonl"
    argv = ["generate", "--levels", "5", "--count", "12", "--seed", "9", "--out", str(out)]
    assert main(argv) == 0
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first


def test_generate_distinct_by_default(tmp_path):
    out = tmp_path / "pool.jsonl"
    assert main(["generate", "--levels", "3", "--count", "10", "--seed", "2", "--out", str(out)]) == 0
    genomes = read_genome_lines(out)
    assert len({g.canonical_key() for g in genomes}) == 10


def test_generate_embeds_run_config(tmp_path):
    out = tmp_path / "pool.jsonl"
    main(["generate", "--levels", "2", "--count", "1", "--seed", "0", "--out", str(out)])
    first = json.loads(out.read_text().splitlines()[0])
    assert first["run_config"]["command"] == "generate"
    assert first["run_config"]["levels"] == 2


def test_generate_overfull_space_is_config_error(tmp_path):
    out = tmp_path / "pool.jsonl"
    assert main(["generate", "--levels", "2", "--count", "5", "--seed", "0", "--out", str(out)]) == 2


# ---- search ----


def test_search_writes_valid_genome_and_report(corpus_dir, tmp_path):
    out, report = run_search_cli(corpus_dir, tmp_path, "main")
    g = load_genome_file(out)
    assert validate(g) == []
    rc, rows = read_report_csv(report)
    assert rc["command"] == "search"
    # row count equals the sum of per-round candidate counts: 2 + (2+1)
    assert len(rows) == 5
    by_round = {}
    for row in rows:
        by_round.setdefault(row["round"], []).append(row)
    assert {1: 2, 2: 3} == {k: len(v) for k, v in by_round.items()}
    for rows_r in by_round.values():
        assert abs(sum(r["weight"] for r in rows_r) - 1.0) <= 1e-9
    # genome column round-trips through the parser
    for row in rows:
        assert validate(parse(row["genome"])) == []


def test_search_deterministic_files(corpus_dir, tmp_path):
    out, rep = run_search_cli(corpus_dir, tmp_path, "det", extra=["--threads", "1"])
    first = (out.read_bytes(), rep.read_bytes())
    out, rep = run_search_cli(corpus_dir, tmp_path, "det", extra=["--threads", "1"])
    assert (out.read_bytes(), rep.read_bytes()) == first


def test_search_invalid_constraint_exits_2(corpus_dir, tmp_path):
    code = main(
        ["search", "--corpus", str(corpus_dir), "--total-nets", "4",
         "--net-batch", "2", "--seed-size", "3", "--out", str(tmp_path / "g.json"),
         "--report", str(tmp_path / "r.csv")]
    )
    assert code == 2


def test_search_dry_run_prints_accounting(capsys):
    code = main(
        ["search", "--dry-run", "--total-nets", "10000", "--net-batch", "100",
         "--seed-size", "20", "--epochs-per-round", "2"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "rounds=100" in out and "epochs=200" in out


def test_search_config_file_with_flag_override(corpus_dir, tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "total-nets = 4\nnet-batch = 2\nseed-size = 1\nlevels = 3\n"
        "epochs-per-round = 1\nemb-dim = 8\nhidden-dim = 8\nbatch = 5\nbptt = 6\n"
        "dropout-embed = 0\ndropout-input = 0\ndropout-hidden = 0\ndropout-output = 0\n"
        "seed = 4\nlr = 0.002\n"
    )
    out = tmp_path / "g.json"
    report = tmp_path / "r.csv"
    code = main(
        ["search", "--corpus", str(corpus_dir), "--config", str(cfg_file),
         "--levels", "4", "--out", str(out), "--report", str(report)]
    )
    assert code == 0
    wrapped = json.loads(out.read_text())
    assert wrapped["run_config"]["levels"] == 4  # flag wins over file
    assert wrapped["run_config"]["total-nets"] == 4  # file wins over default
    assert wrapped["genome"]["levels"] == 4


def test_threads_env_fallback(corpus_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("WENAS_THREADS", "2")
    out, report = run_search_cli(corpus_dir, tmp_path, "env")
    rc, _ = read_report_csv(report)
    assert rc["threads"] == 2


def test_search_with_restarts(corpus_dir, tmp_path):
    out, report = run_search_cli(
        corpus_dir, tmp_path, "rs", extra=["--restarts", "2", "--finetune-epochs", "1"]
    )
    g = load_genome_file(out)
    assert validate(g) == []
    rc, _ = read_report_csv(report)
    assert rc["restarts"] == 2


# ---- eval ----


def test_eval_zero_epochs_reports_near_vocab_ppl(corpus_dir, tmp_path, capsys):
    gpath = tmp_path / "g.json"
    gpath.write_text('{"version":1,"levels":3,"nodes":[{"ancestor":0,"op":"tanh"},{"ancestor":1,"op":"relu"}]}')
    code = main(
        ["eval", "--genome", str(gpath), "--corpus", str(corpus_dir),
         "--epochs", "0", "--emb-dim", "8", "--hidden-dim", "8",
         "--batch", "5", "--bptt", "6", "--seed", "1"]
    )
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("epoch")]
    assert len(lines) == 1 and lines[0].startswith("epoch 0")
    streams, vocab = load_corpus_dir(corpus_dir)
    ppl = float(lines[0].split("valid_ppl=")[1].split()[0])
    assert abs(ppl - len(vocab)) / len(vocab) < 0.25  # fresh init is near uniform


def test_eval_trains_below_unigram(corpus_dir, tmp_path, capsys):
    out, _ = run_search_cli(corpus_dir, tmp_path, "eval")
    ck = tmp_path / "model.npz"
    code = main(
        ["eval", "--genome", str(out), "--corpus", str(corpus_dir),
         "--epochs", "12", "--optimizer", "adam", "--lr", "0.01",
         "--emb-dim", "16", "--hidden-dim", "16", "--batch", "8", "--bptt", "10",
         "--dropout-embed", "0", "--dropout-input", "0",
         "--dropout-hidden", "0", "--dropout-output", "0",
         "--seed", "3", "--checkpoint", str(ck)]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    last = [l for l in stdout.splitlines() if l.startswith("epoch 12")][0]
    valid_ppl = float(last.split("valid_ppl=")[1].split()[0])
    streams, vocab = load_corpus_dir(corpus_dir)
    baseline = unigram_perplexity(streams["train"], streams["valid"], len(vocab))
    assert valid_ppl < baseline
    assert ck.exists()
    from wenas.model import load_checkpoint

    g2, cfg2, _ = load_checkpoint(ck)
    assert validate(g2) == []
    import numpy as np

    with np.load(ck) as z:
        rc = json.loads(str(z["run_config_json"]))
    assert rc["command"] == "eval" and rc["epochs"] == 12


def test_eval_deterministic_output(corpus_dir, tmp_path, capsys):
    gpath = tmp_path / "g.json"
    gpath.write_text('{"version":1,"levels":2,"nodes":[{"ancestor":0,"op":"tanh"}]}')
    argv = ["eval", "--genome", str(gpath), "--corpus", str(corpus_dir),
            "--epochs", "2", "--optimizer", "adam", "--lr", "0.005",
            "--emb-dim", "8", "--hidden-dim", "8", "--batch", "5", "--bptt", "6",
            "--seed", "11"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    second = capsys.readouterr().out
    assert first == second


def test_eval_asgd_smoke(corpus_dir, tmp_path, capsys):
    gpath = tmp_path / "g.json"
    gpath.write_text('{"version":1,"levels":2,"nodes":[{"ancestor":0,"op":"sigmoid"}]}')
    code = main(
        ["eval", "--genome", str(gpath), "--corpus", str(corpus_dir),
         "--epochs", "2", "--optimizer", "asgd", "--lr", "0.5", "--asgd-start", "5",
         "--emb-dim", "8", "--hidden-dim", "8", "--batch", "5", "--bptt", "6",
         "--seed", "0"]
    )
    assert code == 0
    assert "epoch 2" in capsys.readouterr().out


def test_eval_invalid_genome_exits_2(corpus_dir, tmp_path):
    gpath = tmp_path / "bad.json"
    gpath.write_text('{"version":1,"levels":3,"nodes":[{"ancestor":2,"op":"tanh"},{"ancestor":0,"op":"relu"}]}')
    code = main(["eval", "--genome", str(gpath), "--corpus", str(corpus_dir), "--epochs", "0"])
    assert code == 2


# ---- report ----


def test_report_summary_and_round_dump(corpus_dir, tmp_path, capsys):
    _, report = run_search_cli(corpus_dir, tmp_path, "rep")
    assert main(["report", "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert "round 1:" in out and "round 2:" in out and "weight_sum=1.0" in out

    assert main(["report", "--report", str(report), "--round", "2"]) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0] == "round,rank,net_index,genome,weight"
    assert len(lines) == 4  # header + 3 candidates


def test_report_round_out_of_range(corpus_dir, tmp_path, capsys):
    _, report = run_search_cli(corpus_dir, tmp_path, "oor")
    assert main(["report", "--report", str(report), "--round", "9"]) == 2
    assert "valid rounds: 1..2" in capsys.readouterr().err


def test_report_missing_file_exits_1(tmp_path):
    assert main(["report", "--report", str(tmp_path / "missing.csv")]) == 1


def test_report_top_k_matches_recorded_seeds(corpus_dir, tmp_path):
    # reconstruct each round's top-K from the CSV and compare to the seeds
    # actually carried into the following round
    out, report = run_search_cli(corpus_dir, tmp_path, "seeds")
    _, rows = read_report_csv(report)
    round1 = sorted((r for r in rows if r["round"] == 1), key=lambda r: r["rank"])
    k = 1  # --seed-size 1
    top = [parse(r["genome"]) for r in round1[:k]]
    round2_genomes = {r["genome"] for r in rows if r["round"] == 2}
    for g in top:
        assert serialize(g) in round2_genomes


# ---- config file parsing ----


def test_read_config_file(tmp_path):
    f = tmp_path / "x.cfg"
    f.write_text("# comment\nlevels = 6\n\nlr = 0.5  # trailing\n")
    assert read_config_file(f) == {"levels": "6", "lr": "0.5"}


def test_config_file_bad_line(tmp_path):
    f = tmp_path / "x.cfg"
    f.write_text("levels 6\n")
    from wenas.errors import ConfigError

    with pytest.raises(ConfigError, match="key = value"):
        read_config_file(f)
