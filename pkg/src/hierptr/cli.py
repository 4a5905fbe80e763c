"""Command-line entry point: ``hierptr <command> [options]``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .autodiff import NonFiniteError, grad_check
from .evaluate import DEFAULT_EDGES, POLICIES, AlignmentError, evaluate, plot_series, sample_tokens
from .extemb import ExternalEmbeddingError, align_external, read_external
from .infer import parse_treebank
from .model import FUSION_SYSTEM, CheckpointError, ConfigError, HierPtrNet, ModelConfig, Vocab, default_fusion, load_checkpoint
from .toy import toy_corpus
from .train import TrainConfig, aggregate_runs, train
from .transition import System, TransitionError, availability_stats, oracle_sequence
from .treebank import ConlluError, arc_stats, read_conllu, validate_tree, write_conllu

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hierptr")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# Config-file keys follow the hyper-parameter table names in kebab-case.
# Each maps to (section, field, type).
CONFIG_KEYS = {
    "cnn-window-size": ("model", "char_window", int),
    "cnn-number-of-filters": ("model", "char_filters", int),
    "char-embedding-dimension": ("model", "char_dim", int),
    "word-embedding-dimension": ("model", "word_dim", int),
    "pos-embedding-dimension": ("model", "pos_dim", int),
    "external-embedding-dimension": ("model", "ext_dim", int),
    "bilstm-encoder-layers": ("model", "enc_layers", int),
    "bilstm-encoder-size": ("model", "enc_size", int),
    "lstm-decoder-layers": ("model", "dec_layers", int),
    "lstm-decoder-size": ("model", "dec_size", int),
    "lstm-layers-dropout": ("model", "lstm_dropout", float),
    "embeddings-dropout": ("model", "emb_dropout", float),
    "arc-mlp-size": ("model", "arc_mlp", int),
    "label-mlp-size": ("model", "label_mlp", int),
    "unk-replacement-probability": ("model", "unk_replace", float),
    "decoder-init": ("model", "decoder_init", str),
    "transition-system": ("model", "system", str),
    "fusion": ("model", "fusion", str),
    "gate": ("model", "gate", str),
    "initial-learning-rate": ("train", "lr", float),
    "beta1": ("train", "beta1", float),
    "beta2": ("train", "beta2", float),
    "batch-size": ("train", "batch_size", int),
    "decay-rate": ("train", "decay", float),
    "gradient-clipping": ("train", "clip", float),
    "max-epochs": ("train", "max_epochs", int),
    "patience": ("train", "patience", int),
    "seed": ("train", "seed", int),
    "beam-size": ("run", "beam", int),
    "train": ("run", "train", str),
    "dev": ("run", "dev", str),
    "test": ("run", "test", str),
    "external-train": ("run", "ext_train", str),
    "external-dev": ("run", "ext_dev", str),
    "checkpoint": ("run", "checkpoint", str),
    "output": ("run", "out_dir", str),
    # fixed by the architecture; accepted only with their single supported value
    "mlp-layers": ("fixed", "1", str),
    "mlp-activation-function": ("fixed", "elu", str),
}


def parse_config_file(path) -> dict[str, dict]:
    """Read ``key = value`` lines (``#`` comments) into model/train/run sections."""
    out: dict[str, dict] = {"model": {}, "train": {}, "run": {}}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        section, name, typ = CONFIG_KEYS[key]
        if section == "fixed":
            if value.lower() != name:
                raise UsageError(f"{path}:{lineno}: {key} only supports {name}")
            continue
        try:
            out[section][name] = typ(value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


# ---------------------------------------------------------------- helpers


def _read_treebank(path):
    if path is None:
        raise UsageError("missing treebank path")
    try:
        return read_conllu(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def _read_ext(path, sentences, dim=None):
    if path is None:
        return None
    try:
        return align_external(sentences, read_external(path), dim)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    if getattr(args, "out_dir", None):
        return Path(args.out_dir) / "manifest.json"
    if getattr(args, "output", None):
        return Path(str(args.output) + ".manifest.json")
    return Path(f"hierptr-{args.command}.manifest.json")


def write_manifest(args, extra: Optional[dict] = None) -> Path:
    path = _manifest_path(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": args.command,
        "argv": sys.argv[1:],
        "args": echo,
        "seed": getattr(args, "seed", None),
        "versions": {"hierptr": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def _model_config(args, file_cfg: dict) -> ModelConfig:
    d = dict(file_cfg.get("model", {}))
    for flag, key in (("system", "system"), ("fusion", "fusion"), ("gate", "gate")):
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    if getattr(args, "no_dropout", False):
        d.update(lstm_dropout=0.0, emb_dropout=0.0, unk_replace=0.0)
    if "system" in d and "fusion" not in d:
        d["fusion"] = default_fusion(d["system"])
    elif "fusion" in d and "system" not in d:
        d["system"] = FUSION_SYSTEM.get(d["fusion"]) or "l2r"
    cfg = ModelConfig.from_dict(d)
    return cfg.tiny() if getattr(args, "tiny", False) else cfg


def _train_config(args, file_cfg: dict) -> TrainConfig:
    d = dict(file_cfg.get("train", {}))
    for flag, key in (("seed", "seed"), ("epochs", "max_epochs"), ("batch_size", "batch_size"),
                      ("lr", "lr"), ("patience", "patience"), ("threads", "threads")):
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    return TrainConfig.from_dict(d)


def _run_opt(args, file_cfg, name, default=None):
    value = getattr(args, name, None)
    if value is None:
        value = file_cfg.get("run", {}).get(name, default)
    return value


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    tb = _read_treebank(args.treebank)
    st = arc_stats(tb, exclude_root_arcs=args.exclude_root_arcs)
    left = "" if st.pct_left_of_long is None else f"{st.pct_left_of_long:.2f}"
    rows = ["sentences\ttokens\tarcs\tlong_arcs\tpct_long\tpct_left_of_long",
            f"{st.sentence_count}\t{st.token_count}\t{st.arc_count}\t{st.long_arc_count}"
            f"\t{st.pct_long_arcs:.2f}\t{left}"]
    _emit("\n".join(rows) + "\n", args.output)
    write_manifest(args)
    return EXIT_OK


def cmd_availability(args) -> int:
    tb = _read_treebank(args.treebank)
    systems = [args.system] if args.system else [s.value for s in System]
    rows = ["system\tall\tlong"]
    for s in systems:
        av = availability_stats(s, tb, count_both_sides=args.count_both_sides)
        rows.append(f"{s}\t{av.all_per_sentence:g}\t{av.long_per_sentence:g}")
    _emit("\n".join(rows) + "\n", args.output)
    write_manifest(args)
    return EXIT_OK


def cmd_oracle(args) -> int:
    tb = _read_treebank(args.treebank)
    lines = []
    for k, sent in enumerate(tb):
        try:
            seq = oracle_sequence(args.system, sent)
        except TransitionError as exc:
            raise DataError(f"sentence {sent.id or k + 1}: {exc}") from None
        lines.append(" ".join(map(str, seq)))
    _emit("\n".join(lines) + "\n", args.output)
    write_manifest(args)
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = parse_config_file(args.config) if args.config else {}
    mcfg = _model_config(args, file_cfg)
    tcfg = _train_config(args, file_cfg)
    out_dir = Path(_run_opt(args, file_cfg, "out_dir", "."))
    args.out_dir = str(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.toy:
        train_set = toy_corpus(seed=tcfg.seed)
        dev_set = train_set
    else:
        train_set = _read_treebank(_run_opt(args, file_cfg, "train"))
        dev_path = _run_opt(args, file_cfg, "dev")
        dev_set = _read_treebank(dev_path) if dev_path else train_set
    for name, tb in (("train", train_set), ("dev", dev_set)):
        for k, sent in enumerate(tb):
            check = validate_tree(sent)
            if not check:
                raise DataError(f"{name} sentence {sent.id or k + 1}: invalid tree ({check.kind})")
    ext_train = _read_ext(_run_opt(args, file_cfg, "ext_train"), train_set, mcfg.ext_dim or None)
    ext_dev = _read_ext(_run_opt(args, file_cfg, "ext_dev"), dev_set, mcfg.ext_dim or None)
    if mcfg.ext_dim and (ext_train is None or ext_dev is None):
        raise UsageError("external-embedding-dimension > 0 needs --ext-train and --ext-dev")
    if not mcfg.ext_dim and ext_train is not None:
        mcfg = replace(mcfg, ext_dim=ext_train[0].shape[1])
    vocab = Vocab.build(train_set)
    checkpoint = _run_opt(args, file_cfg, "checkpoint") or str(out_dir / "model.hptr")
    rows = ["run\tseed\tbest_epoch\tdev_uas\tdev_las\tepochs\tseconds"]
    las, uas = [], []
    for run in range(args.runs):
        seed = tcfg.seed + run
        ck = checkpoint if args.runs == 1 else f"{checkpoint}.run{run + 1}"
        logp = out_dir / ("train_log.tsv" if args.runs == 1 else f"train_log.run{run + 1}.tsv")
        start = time.perf_counter()
        res = train(train_set, dev_set, mcfg, replace(tcfg, seed=seed), vocab, ext_train, ext_dev,
                    checkpoint=ck, log_path=str(logp))
        rows.append(f"{run + 1}\t{seed}\t{res.best_epoch}\t{res.best_dev_uas:.6f}\t{res.best_dev_las:.6f}"
                    f"\t{len(res.log)}\t{time.perf_counter() - start:.1f}")
        las.append(res.best_dev_las)
        uas.append(res.best_dev_uas)
    text = "\n".join(rows) + "\n"
    summary = {}
    if args.runs > 1:
        a_uas = aggregate_runs([100 * x for x in uas], sample=args.sample_stddev)
        a_las = aggregate_runs([100 * x for x in las], sample=args.sample_stddev)
        text += f"\nmetric\tmean\tsd\nuas\t{a_uas.mean:.2f}\t{a_uas.sd:.2f}\nlas\t{a_las.mean:.2f}\t{a_las.sd:.2f}\n"
        summary = {"uas": a_uas.format(), "las": a_las.format(),
                   "sd_kind": "sample" if args.sample_stddev else "population"}
    (out_dir / "runs.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    write_manifest(args, {"model_config": mcfg.to_dict(), "train_config": asdict(tcfg), "summary": summary})
    return EXIT_OK


def _load_model(path) -> HierPtrNet:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None


def cmd_parse(args) -> int:
    model = _load_model(args.model)
    tb = _read_treebank(args.input)
    ext = _read_ext(args.ext, tb, model.config.ext_dim or None)
    if model.config.ext_dim and ext is None:
        raise UsageError("this model was trained with external embeddings; pass --ext")
    pred = parse_treebank(model, tb, beam=args.beam, ext=ext, projective=args.projective,
                          single_root=args.single_root, threads=args.threads)
    _emit(write_conllu(pred), args.output)
    write_manifest(args, {"model_config": model.config.to_dict()})
    return EXIT_OK


def cmd_eval(args) -> int:
    gold, pred = _read_treebank(args.gold), _read_treebank(args.pred)
    edges = tuple(args.edges) if args.edges else DEFAULT_EDGES
    rep = evaluate(gold, pred, args.punct, edges)
    text = rep.to_json() + "\n" if args.format == "json" else rep.to_tsv()
    _emit(text, args.output)
    write_manifest(args, {"uas": rep.uas, "las": rep.las})
    return EXIT_OK


def cmd_analyze(args) -> int:
    gold = _read_treebank(args.gold)
    edges = tuple(args.edges) if args.edges else DEFAULT_EDGES
    preds = {}
    for spec in args.pred:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        preds[name] = _read_treebank(path)
    keep = None
    if args.budget:
        picked = sample_tokens(gold, args.budget, args.seed)
        ids = {id(s) for s in picked}
        keep = [k for k, s in enumerate(gold) if id(s) in ids]
    reports = {}
    for name, pred in preds.items():
        g, p = gold, pred
        if keep is not None:
            if len(pred) != len(gold):
                raise DataError(f"{name}: {len(pred)} sentences, gold has {len(gold)}")
            g, p = [gold[k] for k in keep], [pred[k] for k in keep]
        reports[name] = evaluate(g, p, args.punct, edges)
    rows = ["system\taxis\tbin\tcount\tuas\tlas"]
    for name, rep in reports.items():
        for line in rep.bins_tsv().splitlines()[1:]:
            rows.append(f"{name}\t{line}")
    _emit("\n".join(rows) + "\n", args.output)
    if args.emit_plot_data:
        Path(args.emit_plot_data).write_text(json.dumps(plot_series(reports), indent=2) + "\n", encoding="utf-8")
    write_manifest(args)
    return EXIT_OK


def gradcheck_combos(system=None, fusion=None, gate=None) -> list[tuple[str, str, str]]:
    combos = []
    for s in ([system] if system else [x.value for x in System]):
        fusions = [fusion] if fusion else [f for f, sys_ in FUSION_SYSTEM.items() if sys_ in (None, s)]
        for f in fusions:
            for g in ([gate] if gate else ["gate1", "gate2"]):
                combos.append((s, f, g))
    return combos


def run_gradcheck(system: str, fusion: str, gate: str, seed: int = 0, coords: int = 200,
                  length: int = 4) -> float:
    sents = toy_corpus(1, length, 20, seed=seed, min_len=length)
    cfg = ModelConfig(system=system, fusion=fusion, gate=gate, lstm_dropout=0.0, emb_dropout=0.0,
                      unk_replace=0.0, dtype="float64").tiny(6)
    cfg = replace(cfg, enc_layers=2, char_dim=4)
    model = HierPtrNet(cfg, Vocab.build(sents), seed=seed)
    for p in model.params.values():
        # move the zero-initialised entries off zero so every path is exercised
        if not p.data.any():
            p.data[...] = np.random.default_rng(seed).normal(0, 0.1, p.data.shape)
    es = model.encode_sentence(sents[0])
    rng = np.random.default_rng(seed)
    # sample every tensor so no weight family is skipped by chance
    per = max(2, coords // len(model.params))
    return max(grad_check(lambda: model.sentence_loss(es, training=False), [p], max_coords=per, rng=rng)
               for p in model.params.values())


def cmd_gradcheck(args) -> int:
    combos = gradcheck_combos(args.system, args.fusion, args.gate)
    rows = ["system\tfusion\tgate\tmax_rel_err\tok"]
    failed = False
    for s, f, g in combos:
        try:
            ModelConfig(system=s, fusion=f, gate=g)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        err = run_gradcheck(s, f, g, seed=args.seed, coords=args.coords, length=args.length)
        ok = err < args.tol
        failed |= not ok
        rows.append(f"{s}\t{f}\t{g}\t{err:.3e}\t{'yes' if ok else 'no'}")
    _emit("\n".join(rows) + "\n", args.output)
    write_manifest(args)
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hierptr", description="Hierarchical pointer-network dependency parser.")
    p.add_argument("--version", action="version", version=f"hierptr {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    systems = [s.value for s in System]

    def common(sp, output=True):
        if output:
            sp.add_argument("-o", "--output", help="write result here instead of stdout")
        sp.add_argument("--manifest", help="manifest path (default: beside the output)")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("stats", help="arc statistics of a treebank")
    sp.add_argument("treebank")
    sp.add_argument("--exclude-root-arcs", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("availability", help="mean dependents available per sentence")
    sp.add_argument("treebank")
    sp.add_argument("--system", choices=systems)
    sp.add_argument("--count-both-sides", action="store_true",
                    help="also count dependents on the side the fusion does not read")
    common(sp)
    sp.set_defaults(func=cmd_availability)

    sp = sub.add_parser("oracle", help="print the gold parent sequence of each sentence")
    sp.add_argument("treebank")
    sp.add_argument("--system", choices=systems, default="l2r")
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("train", help="train a parser")
    sp.add_argument("--config", help="key = value config file; flags override it")
    sp.add_argument("--train")
    sp.add_argument("--dev")
    sp.add_argument("--ext-train")
    sp.add_argument("--ext-dev")
    sp.add_argument("--toy", action="store_true", help="train and evaluate on the synthetic toy corpus")
    sp.add_argument("--system", choices=systems)
    sp.add_argument("--fusion", choices=sorted(FUSION_SYSTEM))
    sp.add_argument("--gate", choices=["gate1", "gate2"])
    sp.add_argument("--tiny", action="store_true", help="cap every layer width at 64")
    sp.add_argument("--no-dropout", action="store_true", help="disable dropout and UNK replacement")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--runs", type=int, default=1, help="repeat with seeds seed..seed+runs-1")
    sp.add_argument("--sample-stddev", action="store_true", help="report sample instead of population sd")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out-dir")
    sp.add_argument("--manifest")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("parse", help="parse a CoNLL-U file with a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--ext")
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--projective", action="store_true")
    sp.add_argument("--single-root", action="store_true")
    sp.add_argument("--threads", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("eval", help="UAS/LAS of a prediction against gold")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--punct", choices=POLICIES, default="none")
    sp.add_argument("--format", choices=["tsv", "json"], default="tsv")
    sp.add_argument("--edges", type=int, nargs="+")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="accuracy by sentence length and word position")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True, action="append", help="NAME=PATH, repeatable")
    sp.add_argument("--punct", choices=POLICIES, default="none")
    sp.add_argument("--edges", type=int, nargs="+")
    sp.add_argument("--budget", type=int, help="sample whole sentences up to this many tokens")
    sp.add_argument("--emit-plot-data", help="write per-bin series as JSON")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the training loss")
    sp.add_argument("--system", choices=systems)
    sp.add_argument("--fusion", choices=sorted(FUSION_SYSTEM))
    sp.add_argument("--gate", choices=["gate1", "gate2"])
    sp.add_argument("--coords", type=int, default=200)
    sp.add_argument("--length", type=int, default=4)
    sp.add_argument("--tol", type=float, default=1e-4)
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command not in ("train",):
        args.seed = 0
    if args.command == "analyze" and args.edges and sorted(args.edges) != args.edges:
        print("hierptr: --edges must be increasing", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hierptr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (ConlluError, AlignmentError, ExternalEmbeddingError, TransitionError, CheckpointError)):
            print(f"hierptr: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"hierptr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"hierptr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"hierptr: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
