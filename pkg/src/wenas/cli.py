"""Command-line entry points: generate, search, eval, report.

Settings resolve as flag > config file > WENAS_THREADS env (threads only)
> built-in default. The resolved configuration is echoed into every
output file for provenance. Exit codes: 0 success, 2 configuration or
validation error, 1 runtime failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import load_corpus_dir, unigram_perplexity
from .errors import ConfigError, GenomeParseError, WenasError
from .genome import parse, random_pool, serialize
from .model import (
    ModelConfig,
    evaluate_stream,
    init_params,
    save_checkpoint,
    train_language_model,
)
from .optim import OptimizerConfig
from .search import SearchConfig, run_search, run_search_with_restarts
from ._kernels import backend

log = logging.getLogger("wenas.cli")

CSV_HEADER = ["round", "rank", "net_index", "genome", "weight"]

# search-phase dropout defaults (shared by eval, which keeps them unchanged)
DROPOUT_DEFAULTS = {
    "dropout-embed": 0.2,
    "dropout-input": 0.75,
    "dropout-hidden": 0.25,
    "dropout-output": 0.75,
}


def _coerce(key, raw, kind):
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {raw!r} as {kind.__name__}")


def read_config_file(path):
    """`key = value` lines; blank lines and #-comments ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class Resolver:
    """Flag > config file > default, with type coercion for file values."""

    def __init__(self, args):
        self.args = args
        self.file = read_config_file(args.config) if getattr(args, "config", None) else {}
        self.resolved = {}

    def get(self, key, kind, default=None):
        flag_val = getattr(self.args, key.replace("-", "_"), None)
        if flag_val is not None:
            value = flag_val
        elif key in self.file:
            value = _coerce(key, self.file[key], kind)
        else:
            value = default
        self.resolved[key] = value
        return value

    def threads(self):
        flag_val = getattr(self.args, "threads", None)
        if flag_val is not None:
            value = flag_val
        elif "threads" in self.file:
            value = _coerce("threads", self.file["threads"], int)
        elif os.environ.get("WENAS_THREADS"):
            value = _coerce("WENAS_THREADS", os.environ["WENAS_THREADS"], int)
        else:
            value = 1
        self.resolved["threads"] = value
        return value

    def run_config(self, command):
        rc = {"command": command, "kernels": backend()}
        rc.update(self.resolved)
        return {k: rc[k] for k in sorted(rc)}


def _config_json(rc):
    return json.dumps(rc, sort_keys=True)


# ---- genome file helpers ----


def read_genome_lines(path):
    """Genomes from a JSONL file, skipping run_config header records."""
    genomes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if isinstance(obj, dict) and "run_config" in obj and "nodes" not in obj:
            continue
        genomes.append(parse(line))
    return genomes


def load_genome_file(path):
    """A single genome from bare, wrapped, or JSONL form."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        raise GenomeParseError(f"{path} is empty")
    if "\n" in text:
        genomes = read_genome_lines(path)
        if not genomes:
            raise GenomeParseError(f"{path} holds no genome records")
        return genomes[0]
    obj = json.loads(text)
    if isinstance(obj, dict) and "genome" in obj:
        return parse(json.dumps(obj["genome"]))
    return parse(text)


# ---- commands ----


def cmd_generate(args):
    res = Resolver(args)
    levels = res.get("levels", int, 8)
    count = res.get("count", int, 16)
    seed = res.get("seed", int, 0)
    out = res.get("out", str)
    allow_dup = res.get("allow-dup", bool, False)
    if out is None:
        raise ConfigError("--out is required")
    pool = random_pool(count, levels, np.random.default_rng(seed), dedupe=not allow_dup)
    rc = res.run_config("generate")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_config": rc}, sort_keys=True) + "\n")
        for g in pool:
            fh.write(serialize(g) + "\n")
    print(f"wrote {len(pool)} genomes to {out}")
    return 0


def _search_config(res):
    return SearchConfig(
        total_networks=res.get("total-nets", int, 64),
        net_batch=res.get("net-batch", int, 16),
        seed_size=res.get("seed-size", int, 4),
        levels=res.get("levels", int, 8),
        epochs_per_round=res.get("epochs-per-round", int, 2),
        emb_dim=res.get("emb-dim", int, 64),
        hidden_dim=res.get("hidden-dim", int, 64),
        data_batch=res.get("batch", int, 20),
        bptt=res.get("bptt", int, 35),
        dropout_embed=res.get("dropout-embed", float, DROPOUT_DEFAULTS["dropout-embed"]),
        dropout_input=res.get("dropout-input", float, DROPOUT_DEFAULTS["dropout-input"]),
        dropout_hidden=res.get("dropout-hidden", float, DROPOUT_DEFAULTS["dropout-hidden"]),
        dropout_output=res.get("dropout-output", float, DROPOUT_DEFAULTS["dropout-output"]),
        mixture=res.get("mixture", str, "logits"),
        optimizer=OptimizerConfig(
            kind=res.get("optimizer", str, "adam"),
            learning_rate=res.get("lr", float, 1e-3),
            weight_decay=res.get("weight-decay", float, 5e-7),
        ),
        master_seed=res.get("seed", int, 0),
        dedupe=not res.get("allow-dup", bool, False),
        threads=res.threads(),
        precision=res.get("precision", str, "float64"),
    ).validate()


def write_report_csv(path, rounds, rc):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# run_config: " + _config_json(rc) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rounds:
            for rank, idx, g, weight in r.table:
                writer.writerow([r.index, rank, idx, serialize(g), repr(weight)])


def cmd_search(args):
    res = Resolver(args)
    cfg = _search_config(res)
    corpus_dir = res.get("corpus", str)
    level = "char" if res.get("char-level", bool, False) else "word"
    restarts = res.get("restarts", int, 1)
    finetune_epochs = res.get("finetune-epochs", int, 3)
    out = res.get("out", str, "genome.json")
    report_path = res.get("report", str, "report.csv")
    dry = res.get("dry-run", bool, False)

    if dry:
        report = run_search(cfg, None, vocab_size=None, dry_run=True)
        print(f"dry run: rounds={report.total_rounds} epochs={report.total_epochs}")
        return 0

    if corpus_dir is None:
        raise ConfigError("--corpus is required")
    streams, vocab = load_corpus_dir(corpus_dir, level=level)
    log.info("corpus: %d train tokens, vocab %d", len(streams["train"]), len(vocab))

    best, reports, best_r = run_search_with_restarts(
        cfg, streams, len(vocab), restarts=restarts, finetune_epochs=finetune_epochs
    )
    rc = res.run_config("search")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_config": rc, "genome": json.loads(serialize(best))}) + "\n")
    write_report_csv(report_path, reports[best_r].rounds, rc)
    print(f"best genome -> {out}; weight tables -> {report_path}")
    return 0


def cmd_eval(args):
    res = Resolver(args)
    genome_path = res.get("genome", str)
    corpus_dir = res.get("corpus", str)
    if genome_path is None or corpus_dir is None:
        raise ConfigError("--genome and --corpus are required")
    level = "char" if res.get("char-level", bool, False) else "word"
    epochs = res.get("epochs", int, 10)
    batch = res.get("batch", int, 20)
    bptt = res.get("bptt", int, 35)
    seed = res.get("seed", int, 0)
    checkpoint = res.get("checkpoint", str)
    clip = res.get("clip-norm", float, 0.25)
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")

    g = load_genome_file(genome_path)
    streams, vocab = load_corpus_dir(corpus_dir, level=level)
    cfg = ModelConfig(
        vocab_size=len(vocab),
        emb_dim=res.get("emb-dim", int, 64),
        hidden_dim=res.get("hidden-dim", int, 64),
        levels=g.levels,
        dropout_embed=res.get("dropout-embed", float, DROPOUT_DEFAULTS["dropout-embed"]),
        dropout_input=res.get("dropout-input", float, DROPOUT_DEFAULTS["dropout-input"]),
        dropout_hidden=res.get("dropout-hidden", float, DROPOUT_DEFAULTS["dropout-hidden"]),
        dropout_output=res.get("dropout-output", float, DROPOUT_DEFAULTS["dropout-output"]),
        batch_norm=False,  # search-only mechanism
        mode="eval",
        precision=res.get("precision", str, "float64"),
    ).validate()
    opt_cfg = OptimizerConfig(
        kind=res.get("optimizer", str, "sgd"),
        learning_rate=res.get("lr", float, 1.0),
        weight_decay=res.get("weight-decay", float, 8e-7),
        asgd_start=res.get("asgd-start", int, 1),
    ).validate()

    rng = np.random.default_rng(seed)
    lmp = init_params(g, cfg, rng)

    def report_epoch(rec):
        parts = [f"epoch {rec['epoch']}"]
        for key in ("train_ppl", "valid_ppl", "test_ppl"):
            if key in rec:
                parts.append(f"{key}={rec[key]:.6f}")
        print(" ".join(parts), flush=True)

    initial = {"epoch": 0}
    for split in ("train", "valid", "test"):
        if split in streams:
            initial[f"{split}_ppl"] = evaluate_stream(g, lmp, streams[split], cfg, batch, bptt)
    report_epoch(initial)

    opt = None
    if epochs > 0:
        _, opt = train_language_model(
            g, lmp, streams, cfg, opt_cfg, epochs, batch, bptt, rng,
            clip_norm=clip, log_fn=report_epoch,
        )
        if "valid" in streams:
            baseline = unigram_perplexity(streams["train"], streams["valid"], len(vocab))
            print(f"unigram baseline valid_ppl={baseline:.6f}")

    if checkpoint:
        rc = res.run_config("eval")
        params = lmp.tensors()
        if opt is not None and hasattr(opt, "averaged"):
            from .model import swapped_params

            with swapped_params(params, opt.averaged(params)):
                save_checkpoint(checkpoint, g, cfg, lmp, run_config=rc)
        else:
            save_checkpoint(checkpoint, g, cfg, lmp, run_config=rc)
        print(f"checkpoint -> {checkpoint}")
    return 0


def read_report_csv(path):
    """Rows of a weight-table CSV, plus the embedded run_config if present."""
    rc = None
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if first.startswith("# run_config:"):
            rc = json.loads(first.split(":", 1)[1])
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                {
                    "round": int(row["round"]),
                    "rank": int(row["rank"]),
                    "net_index": int(row["net_index"]),
                    "genome": row["genome"],
                    "weight": float(row["weight"]),
                }
            )
    if not rows:
        raise ConfigError(f"report {path} holds no weight rows")
    return rc, rows


def cmd_report(args):
    res = Resolver(args)
    path = res.get("report", str)
    if path is None:
        raise ConfigError("--report is required")
    wanted = res.get("round", int)
    _, rows = read_report_csv(path)
    by_round = {}
    for row in rows:
        by_round.setdefault(row["round"], []).append(row)
    valid = sorted(by_round)
    if wanted is not None:
        if wanted not in by_round:
            raise ConfigError(f"round {wanted} not in report; valid rounds: {valid[0]}..{valid[-1]}")
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in sorted(by_round[wanted], key=lambda r: r["rank"]):
            writer.writerow([row["round"], row["rank"], row["net_index"], row["genome"], repr(row["weight"])])
        return 0
    for rnd in valid:
        entries = sorted(by_round[rnd], key=lambda r: r["rank"])
        total = sum(r["weight"] for r in entries)
        top = entries[0]
        print(
            f"round {rnd}: {len(entries)} candidates, weight_sum={total:.9f}, "
            f"top net_index={top['net_index']} weight={top['weight']:.6f}"
        )
    return 0


# ---- argument plumbing ----


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--verbose", action="store_true", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="wenas", description="recurrent-cell architecture search")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a pool of random genomes as JSONL")
    p.add_argument("--levels", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-dup", action="store_true", default=None)
    _add_common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("search", help="run the pool search and write the best genome")
    p.add_argument("--corpus", help="directory with train.txt (+ valid/test)")
    p.add_argument("--total-nets", type=int)
    p.add_argument("--net-batch", type=int)
    p.add_argument("--seed-size", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--epochs-per-round", type=int)
    p.add_argument("--emb-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam", "asgd"])
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--dropout-embed", type=float)
    p.add_argument("--dropout-input", type=float)
    p.add_argument("--dropout-hidden", type=float)
    p.add_argument("--dropout-output", type=float)
    p.add_argument("--mixture", choices=["logits", "hidden"])
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--char-level", action="store_true", default=None)
    p.add_argument("--dry-run", action="store_true", default=None)
    p.add_argument("--out")
    p.add_argument("--report")
    _add_common(p)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("eval", help="train one discovered cell from scratch")
    p.add_argument("--genome")
    p.add_argument("--corpus")
    p.add_argument("--epochs", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam", "asgd"])
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--asgd-start", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--emb-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--bptt", type=int)
    p.add_argument("--dropout-embed", type=float)
    p.add_argument("--dropout-input", type=float)
    p.add_argument("--dropout-hidden", type=float)
    p.add_argument("--dropout-output", type=float)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--seed", type=int)
    p.add_argument("--char-level", action="store_true", default=None)
    p.add_argument("--checkpoint")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="summarize or dump sorted weight tables")
    p.add_argument("--report")
    p.add_argument("--round", type=int)
    _add_common(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (ConfigError, GenomeParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (WenasError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
