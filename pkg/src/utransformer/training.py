"""Loss, optimiser, metrics and the train / evaluate loops."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import act as act_mod
from . import model as M
from . import tasks as T
from . import tensor as tn
from .errors import ContractError, NonFiniteError, TrainingDiverged
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(dist: Tensor, targets, mask=None) -> Tensor:
    """Mean over unmasked positions of -log dist[i, target_i] (``dist`` holds probabilities)."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ContractError("cross_entropy: mask selects no positions")
    nll = -tn.log(tn.pick(dist, targets))
    return (nll * mask.astype(dist.dtype)).sum() * (1.0 / n)


def sequence_loss(logits: Tensor, targets, mask, label_smoothing: float = 0.0) -> Tensor:
    """Token-level cross entropy computed from logits via log-softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ContractError("sequence_loss: mask selects no positions")
    logp = tn.log_softmax(logits)
    nll = -tn.pick(logp, targets)
    if label_smoothing:
        nll = nll * (1.0 - label_smoothing) - logp.mean(axis=-1) * label_smoothing
    return (nll * mask.astype(logits.dtype)).sum() * (1.0 / n)


def ponder_penalty(stack: M.StackOutput, mask) -> Optional[Tensor]:
    """mean(n_updates + remainders) over real positions; None without ACT."""
    if stack.ponder is None:
        return None
    mask = np.asarray(mask, dtype=stack.h.dtype)
    total = (stack.remainders + stack.ponder) * mask
    return total.sum() * (1.0 / max(mask.sum(), 1.0))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

def lr_schedule(step: int, d: int, warmup: int) -> float:
    """d^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warm-up, then inverse sqrt."""
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    step = max(step, 1)
    return d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


def global_grad_norm(params) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values()))


def adam_step(params, opt: OptimState, lr: float, max_grad_norm: Optional[float] = None) -> None:
    """Bias-corrected Adam update of every parameter, then zero the gradients.

    All gradients are checked before anything is modified, so a non-finite
    gradient leaves the parameters untouched.
    """
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
            raise NonFiniteError(f"non-finite gradient in {name!r} ({bad} entries)")
    scale = 1.0
    if max_grad_norm is not None:
        norm = global_grad_norm(params)
        if norm > max_grad_norm:
            scale = max_grad_norm / norm
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for name, p in params.items():
        g = p.grad * scale if scale != 1.0 else p.grad
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.zero_grad()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def accuracy(pred, gold, mask) -> tuple:
    """(char_acc, seq_acc) over aligned (B, L) token matrices.

    char_acc averages each sequence's fraction of matching unmasked positions,
    so that seq_acc <= char_acc holds for sequences of unequal length.
    """
    pred, gold = np.asarray(pred), np.asarray(gold)
    mask = np.asarray(mask, dtype=bool)
    hit = (pred == gold) & mask
    per_len = mask.sum(axis=-1)
    keep = per_len > 0
    if not keep.any():
        return 0.0, 0.0
    frac = hit.sum(axis=-1)[keep] / per_len[keep]
    return float(frac.mean()), float(np.mean(frac == 1.0))


def generations_to_matrix(gens, length: int) -> np.ndarray:
    out = np.full((len(gens), length), T.PAD, dtype=np.int64)
    for b, g in enumerate(gens):
        seq = list(g.tokens) + ([T.EOS] if g.terminated else [])
        seq = seq[:length]
        out[b, :len(seq)] = seq
    return out


@dataclass
class EvalReport:
    split: str
    n: int
    char_acc: float
    seq_acc: float
    loss: float
    ponder_mean: Optional[float] = None
    ponder_std: Optional[float] = None
    ponder_histogram: Optional[dict] = None
    per_length: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.ponder_histogram is not None:
            out["ponder_histogram"] = {str(k): v for k, v in self.ponder_histogram.items()}
        out["per_length"] = {str(k): v for k, v in self.per_length.items()}
        return out


def evaluate_samples(params, cfg: M.ModelConfig, samples, split: str = "eval",
                     batch_size: int = 128) -> EvalReport:
    """Greedy-decode every sample and score against its target (EOS included)."""
    rows, losses, ponders = [], [], []
    total_loss, total_tokens = 0.0, 0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        batch = T.make_batch(chunk)
        with tn.no_grad():
            fwd = M.forward(params, cfg, batch.src, batch.tgt_in, None, batch.src_mask,
                            batch.tgt_mask)
            n_tok = int(batch.tgt_mask.sum())
            total_loss += sequence_loss(fwd.logits, batch.tgt_out, batch.tgt_mask).item() * n_tok
            total_tokens += n_tok
            if fwd.encoder.ponder is not None:
                ponders.append(fwd.encoder.ponder[batch.src_mask])
        Lt = batch.tgt_out.shape[1]
        gens = M.generate_greedy_batch(batch.src, params, cfg, Lt, T.BOS, T.EOS,
                                       src_mask=batch.src_mask)
        pred = generations_to_matrix(gens, Lt)
        for b, s in enumerate(chunk):
            c, q = accuracy(pred[b:b + 1], batch.tgt_out[b:b + 1], batch.tgt_mask[b:b + 1])
            rows.append((len(s.src), c, q))
    char = float(np.mean([r[1] for r in rows]))
    seq = float(np.mean([r[2] for r in rows]))
    per_length = {}
    for length in sorted({r[0] for r in rows}):
        sel = [r for r in rows if r[0] == length]
        per_length[length] = {"n": len(sel), "char_acc": float(np.mean([r[1] for r in sel])),
                              "seq_acc": float(np.mean([r[2] for r in sel]))}
    report = EvalReport(split, len(samples), char, seq, total_loss / max(total_tokens, 1),
                        per_length=per_length)
    if ponders:
        stats = act_mod.ponder_stats(np.concatenate(ponders))
        report.ponder_mean, report.ponder_std = stats["mean"], stats["std"]
        report.ponder_histogram = stats["histogram"]
    return report


def evaluate(params, cfg: M.ModelConfig, task: str, spec: T.SplitSpec, seed: int, split: str,
             n: int, batch_size: int = 128) -> EvalReport:
    samples = T.take(task, spec, seed, split, n)
    return evaluate_samples(params, cfg, samples, split, batch_size)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: M.Parameters
    records: list
    final_reports: dict
    best_checkpoint: Optional[str] = None
    final_checkpoint: Optional[str] = None


def _record(step, loss, lr, char_acc, seq_acc, ponder_mean, ponder_std, split) -> dict:
    return {"step": step, "loss": loss, "lr": lr, "char_acc": char_acc, "seq_acc": seq_acc,
            "ponder_mean": ponder_mean, "ponder_std": ponder_std, "split": split}


def train_step(params, cfg: M.ModelConfig, batch: T.Batch, opt: OptimState, lr: float,
               rng: Rng, label_smoothing: float = 0.0, ponder_cost: float = 0.0,
               max_grad_norm: Optional[float] = None) -> tuple:
    """Teacher-forced forward/backward and one Adam update; returns (loss, forward result)."""
    fwd = M.forward(params, cfg, batch.src, batch.tgt_in, batch.offsets, batch.src_mask,
                    batch.tgt_mask, rng=rng, training=True)
    loss = sequence_loss(fwd.logits, batch.tgt_out, batch.tgt_mask, label_smoothing)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"loss became non-finite ({value})")
    objective = loss
    if ponder_cost:
        for stack, mask in ((fwd.encoder, batch.src_mask), (fwd.decoder, batch.tgt_mask)):
            pen = ponder_penalty(stack, mask)
            if pen is not None:
                objective = objective + pen * ponder_cost
    objective.backward()
    adam_step(params, opt, lr, max_grad_norm)
    return value, fwd


def train(run, out_dir=None, log_file=None) -> TrainResult:
    """Train the model described by ``run`` (a :class:`RunConfig`).

    Evaluations run on the float32-rounded weights, i.e. exactly the weights a
    checkpoint stores, so re-evaluating a saved checkpoint reproduces the
    logged numbers.
    """
    from . import checkpoint as ckpt

    cfg, tc, spec = run.model, run.train, run.task.split_spec()
    task, seed = run.task.name, run.seed
    params = M.init_params(cfg, seed)
    opt = OptimState(beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records, reports = [], {}
    best_key, best_path, final_path = None, None, None
    fh = open(log_file, "w", encoding="utf-8") if log_file is not None else None

    def emit(rec):
        records.append(rec)
        if fh is not None:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

    def run_eval(step):
        nonlocal best_key, best_path
        snapshot = params.rounded_to_float32()
        lr_now = lr_schedule(max(step, 1), cfg.d, tc.warmup) * tc.lr_scale
        for split in ("in", "out"):
            rep = evaluate(snapshot, cfg, task, spec, seed, split, tc.n_eval, tc.eval_batch_size)
            reports[split] = rep
            emit(_record(step, rep.loss, lr_now, rep.char_acc, rep.seq_acc, rep.ponder_mean,
                         rep.ponder_std, split))
        key = (reports["out"].seq_acc, reports["out"].char_acc)
        if out is not None and (best_key is None or key > best_key):
            best_key = key
            best_path = str(out / "checkpoints" / "best")
            ckpt.save_checkpoint(params, best_path, run, step)

    try:
        samples = T.dataset(task, spec, seed, "train")
        for step in range(1, tc.steps + 1):
            batch = T.make_batch([next(samples) for _ in range(tc.batch_size)])
            lr = lr_schedule(step, cfg.d, tc.warmup) * tc.lr_scale
            try:
                loss, fwd = train_step(params, cfg, batch, opt, lr, Rng(seed, 0xD0, step),
                                       tc.label_smoothing, tc.ponder_cost, tc.max_grad_norm)
            except NonFiniteError as exc:
                last = None
                if out is not None:
                    last = str(out / "checkpoints" / "last_good")
                    ckpt.save_checkpoint(params, last, run, step - 1)
                raise TrainingDiverged(f"step {step}: {exc}", last) from exc
            if step % tc.log_every == 0 or step == tc.steps:
                pred = fwd.logits.data.argmax(axis=-1)
                c, q = accuracy(pred, batch.tgt_out, batch.tgt_mask)
                pm = ps = None
                if fwd.encoder.ponder is not None:
                    st = act_mod.ponder_stats(fwd.encoder.ponder, batch.src_mask)
                    pm, ps = st["mean"], st["std"]
                emit(_record(step, loss, lr, c, q, pm, ps, "train"))
                log.info("step %d loss %.4f lr %.2e acc %.3f/%.3f", step, loss, lr, c, q)
            if tc.eval_every and step % tc.eval_every == 0 and step != tc.steps:
                run_eval(step)
        run_eval(tc.steps)
        if out is not None:
            final_path = str(out / "checkpoints" / "final")
            ckpt.save_checkpoint(params, final_path, run, tc.steps)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params, records, reports, best_path, final_path)


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

GRAD_CHECK_CONFIGS = {
    "fully_connected": dict(transition="fully_connected"),
    "separable_conv": dict(transition="separable_conv"),
    "act": dict(transition="fully_connected", act_enabled=True, act_threshold=0.99,
                act_max_steps=3),
}


def tiny_config(**overrides) -> M.ModelConfig:
    base = dict(d=8, k=2, vocab_size=T.VOCAB_SIZE, T_max=2, ff_hidden=16, conv_kernel=3,
                dropout_rate=0.0, dtype="float64")
    base.update(overrides)
    return M.ModelConfig(**base).validate()


def _grad_check_batch() -> T.Batch:
    samples = [T.TaskSample(T.tokenize("31"), T.tokenize("13") + [T.EOS], 0),
               T.TaskSample(T.tokenize("7"), T.tokenize("7") + [T.EOS], 0)]
    return T.make_batch(samples)


def grad_check(cfg: M.ModelConfig, tol: float = 1e-4, seed: int = 0, h: float = 1e-5,
               max_entries: Optional[int] = None, floor: float = 1e-6) -> dict:
    """Compare backprop gradients with central finite differences.

    Relative error per entry is |g - fd| / max(|g|, |fd|, floor). Every entry
    is checked unless ``max_entries`` is given, in which case a seeded random
    subsample of that size (at least 200) is used.
    """
    params = M.init_params(cfg, seed)
    # Perturb gains/biases away from 1/0 so their gradients are generic.
    rng = Rng(seed, 0x6C)
    for name, p in params.items():
        if name.endswith((".gain", ".bias", ".b1", ".b2", "dw_bias", "pw_bias", "output.b")):
            p.data += 0.1 * rng.normal(p.shape)
    batch = _grad_check_batch()

    def loss_value():
        fwd = M.forward(params, cfg, batch.src, batch.tgt_in, None, batch.src_mask,
                        batch.tgt_mask)
        return sequence_loss(fwd.logits, batch.tgt_out, batch.tgt_mask)

    params.zero_grad()
    loss_value().backward()
    entries = [(name, idx) for name, p in params.items() for idx in np.ndindex(p.shape)]
    if max_entries is not None and len(entries) > max_entries:
        pick = Rng(seed, 0x9C).integers(0, len(entries), max(max_entries, 200))
        entries = [entries[i] for i in sorted(set(int(i) for i in pick))]
    worst, worst_at = 0.0, None
    with tn.no_grad():
        for name, idx in entries:
            p = params[name]
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = loss_value().item()
            p.data[idx] = orig - h
            down = loss_value().item()
            p.data[idx] = orig
            fd = (up - down) / (2 * h)
            g = float(p.grad[idx])
            err = abs(g - fd) / max(abs(g), abs(fd), floor)
            if err > worst:
                worst, worst_at = err, f"{name}{list(idx)}"
    return {"n_checked": len(entries), "n_parameters": params.count(), "max_rel_err": worst,
            "worst_entry": worst_at, "tol": tol, "passed": worst < tol}
