"""Mini-batch training with Adam, norm clipping and plateau learning-rate decay."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .evaluate import uas_las
from .infer import parse_treebank
from .model import EncodedSentence, HierPtrNet, ModelConfig, Vocab, save_checkpoint
from .optim import OptState, adam_step
from .treebank import Sentence, validate_tree

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-8
    decay: float = 0.75
    clip: float = 5.0
    max_epochs: int = 400
    patience: int = 5
    min_lr: float = 1e-6
    seed: int = 0
    deterministic: bool = True
    threads: int = 1
    punct: str = "none"
    beam: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_uas: float
    dev_las: float
    lr: float
    seconds: float

    HEADER = "epoch\ttrain_loss\tdev_uas\tdev_las\tlr\tseconds"

    def tsv(self) -> str:
        return (f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_uas:.6f}\t{self.dev_las:.6f}"
                f"\t{self.lr:.8g}\t{self.seconds:.3f}")


@dataclass
class TrainResult:
    model: HierPtrNet
    log: list[EpochLog]
    best_epoch: int
    best_dev_las: float
    best_dev_uas: float

    def log_tsv(self) -> str:
        return "\n".join([EpochLog.HEADER] + [e.tsv() for e in self.log]) + "\n"


def decayed_lr(lr: float, decay: float, triggers: int) -> float:
    return lr * decay ** triggers


def make_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator,
                 bucket_factor: int = 4) -> list[list[int]]:
    """Shuffle, sort each bucket of ``bucket_factor`` batches by length, cut, shuffle batches."""
    order = list(rng.permutation(len(lengths)))
    span = batch_size * bucket_factor
    batches = []
    for start in range(0, len(order), span):
        bucket = sorted(order[start:start + span], key=lambda k: (lengths[k], k))
        batches.extend(bucket[i:i + batch_size] for i in range(0, len(bucket), batch_size))
    return [batches[k] for k in rng.permutation(len(batches))]


def sentence_gradients(model: HierPtrNet, es: EncodedSentence, ext: Optional[np.ndarray],
                       rng: Optional[np.random.Generator], training: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    loss = model.sentence_loss(es, ext, training=training, rng=rng)
    grads = ad.backward(loss)
    by_id = {id(t): g for t, g in grads.items()}
    return float(loss.data), {name: by_id[id(p)] for name, p in model.params.items() if id(p) in by_id}


def batch_step(model: HierPtrNet, batch: Sequence[EncodedSentence], opt: OptState, cfg: TrainConfig,
               rngs: Sequence[Optional[np.random.Generator]], ext: Optional[Sequence] = None,
               training: bool = True, pool=None) -> float:
    """Average the per-sentence gradients of a batch and take one optimizer step.

    Returns the summed loss of the batch. Reduction happens in batch order so
    results do not depend on worker scheduling.
    """
    exts = ext if ext is not None else [None] * len(batch)
    jobs = list(zip(batch, exts, rngs))
    if pool is not None:
        results = list(pool.map(lambda j: sentence_gradients(model, j[0], j[1], j[2], training), jobs))
    else:
        results = [sentence_gradients(model, es, e, r, training) for es, e, r in jobs]
    total = 0.0
    summed: dict[str, np.ndarray] = {}
    for loss, grads in results:
        if not math.isfinite(loss):
            raise ad.NonFiniteError(f"non-finite training loss {loss}")
        total += loss
        for name, g in grads.items():
            summed[name] = summed[name] + g if name in summed else g.copy()
    scale = 1.0 / len(batch)
    adam_step(model.params, {k: v * scale for k, v in summed.items()}, opt, cfg.clip)
    return total


def train(train_set: Sequence[Sentence], dev_set: Sequence[Sentence], model_config: ModelConfig,
          train_config: TrainConfig, vocab: Optional[Vocab] = None,
          ext_train: Optional[Sequence[np.ndarray]] = None, ext_dev: Optional[Sequence[np.ndarray]] = None,
          checkpoint: Optional[str] = None, log_path: Optional[str] = None,
          on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """Train a parser and return the model from the epoch with the best dev LAS."""
    if not train_set:
        raise ValueError("training set is empty")
    for k, s in enumerate(train_set):
        check = validate_tree(s)
        if not check:
            raise ValueError(f"training sentence {s.id or k + 1}: invalid tree ({check.kind} {list(check.nodes)})")
    cfg = train_config
    vocab = vocab or Vocab.build(train_set)
    model = HierPtrNet(model_config, vocab, seed=cfg.seed)
    encoded = [model.encode_sentence(s) for s in train_set]
    lengths = [es.n for es in encoded]
    opt = OptState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    shuffle_rng = np.random.default_rng(cfg.seed)
    pool = None
    if cfg.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(cfg.threads)

    history: list[EpochLog] = []
    best = {k: p.data.copy() for k, p in model.params.items()}
    best_las, best_uas, best_epoch = -1.0, -1.0, 0
    stale = 0
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_file:
        log_file.write(EpochLog.HEADER + "\n")
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            start = time.perf_counter()
            epoch_loss = 0.0
            for batch in make_batches(lengths, cfg.batch_size, shuffle_rng):
                rngs = [np.random.default_rng([cfg.seed, epoch, k]) for k in batch]
                ext = [ext_train[k] for k in batch] if ext_train is not None else None
                epoch_loss += batch_step(model, [encoded[k] for k in batch], opt, cfg, rngs, ext, pool=pool)
            dev_pred = parse_treebank(model, dev_set, beam=cfg.beam, ext=ext_dev)
            report = uas_las(dev_set, dev_pred, cfg.punct)
            entry = EpochLog(epoch, epoch_loss / len(encoded), report.uas, report.las, opt.lr,
                             time.perf_counter() - start)
            history.append(entry)
            if log_file:
                log_file.write(entry.tsv() + "\n")
                log_file.flush()
            if on_epoch:
                on_epoch(entry)
            log.info(entry.tsv())
            if report.las > best_las:
                best_las, best_uas, best_epoch = report.las, report.uas, epoch
                best = {k: p.data.copy() for k, p in model.params.items()}
                stale = 0
                if checkpoint:
                    save_checkpoint(checkpoint, model, extra={"epoch": epoch, "dev_las": best_las})
            else:
                stale += 1
                if stale >= cfg.patience:
                    opt.lr *= cfg.decay
                    stale = 0
            if opt.lr < cfg.min_lr:
                break
    finally:
        if log_file:
            log_file.close()
        if pool is not None:
            pool.shutdown()
    for k, p in model.params.items():
        p.data[...] = best[k]
    return TrainResult(model, history, best_epoch, best_las, best_uas)


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    sd: float
    n: int

    def format(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f} ±{self.sd:.{digits}f}"


def aggregate_runs(scores: Sequence[float], sample: bool = False) -> RunAggregate:
    """Mean and standard deviation (population by default) over repeated runs."""
    if len(scores) < 2:
        raise ValueError("need at least 2 runs to report a standard deviation")
    arr = np.asarray(scores, dtype=np.float64)
    return RunAggregate(float(arr.mean()), float(arr.std(ddof=1 if sample else 0)), len(arr))
