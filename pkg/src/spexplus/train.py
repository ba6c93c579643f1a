"""Training loop: Adam, validation-driven LR schedule, early stopping,
checkpointing, and a deterministic history log.

The monitored validation metric halves the learning rate after
`patience_decay` consecutive non-improving epochs and stops training after
`patience_stop`; a validation pass before the first epoch establishes the
baseline.  With a fixed seed the whole loss trajectory is reproducible, and
resuming from `last.ckpt` continues it bitwise.
"""

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import loss as losses
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import SpexPlusModel, config_from_dict
from .simulate import dataset_root, load_example, load_manifest, segment_or_pad
from .tensor import backward, no_grad


class TrainDivergedError(RuntimeError):
    """The loss went non-finite; message names the epoch, step and example."""


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    lr_decay: float = 0.5
    patience_decay: int = 2
    patience_stop: int = 6
    max_epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    val_metric: str = "loss"  # "loss" (min) or "speaker_accuracy" (max)
    segment_seconds: float = 4.0
    grad_clip: float = 5.0
    max_steps: int | None = None

    def __post_init__(self):
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must be in (0, 1)")
        if self.patience_stop < self.patience_decay:
            raise ValueError("patience_stop must be >= patience_decay")
        if self.val_metric not in ("loss", "speaker_accuracy"):
            raise ValueError("val_metric must be 'loss' or 'speaker_accuracy'")
        if isinstance(self.weights, dict):
            self.weights = losses.LossWeights(**self.weights)


class Adam:
    """Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.named_params:
            if p.grad is None:
                raise RuntimeError(f"parameter {name!r} has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def state_dict(self):
        state = {}
        for name in self.m:
            state["m." + name] = self.m[name]
            state["v." + name] = self.v[name]
        state["step"] = np.array(self.step_count, dtype=np.int64)
        return state

    def load_state(self, state):
        expected = {"m." + n for n in self.m} | {"v." + n for n in self.v} | {"step"}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            unexpected = sorted(set(state) - expected)
            raise CheckpointError(
                f"optimizer state mismatch: missing={missing}, unexpected={unexpected}")
        for name in self.m:
            self.m[name][...] = state["m." + name]
            self.v[name][...] = state["v." + name]
        self.step_count = int(state["step"])


def clip_global_norm(named_params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class LrScheduler:
    """Decay-on-plateau with early stopping.

    `observe` is called once per validation pass (including the pre-training
    baseline).  After every `patience_decay` consecutive non-improving
    epochs the LR is multiplied by `decay`; after `patience_stop` of them
    `should_stop` turns True.
    """

    def __init__(self, lr_init, decay=0.5, patience_decay=2, patience_stop=6,
                 mode="min"):
        self.lr = lr_init
        self.decay = decay
        self.patience_decay = patience_decay
        self.patience_stop = patience_stop
        self.mode = mode
        self.best = None
        self.bad_epochs = 0
        self.should_stop = False

    def _improved(self, value):
        if self.best is None:
            return True
        return value < self.best if self.mode == "min" else value > self.best

    def observe(self, value):
        """Returns True when `value` improves on the best seen so far."""
        if self._improved(value):
            self.best = value
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        if self.bad_epochs % self.patience_decay == 0:
            self.lr *= self.decay
        if self.bad_epochs >= self.patience_stop:
            self.should_stop = True
        return False

    def state_dict(self):
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs,
                "should_stop": self.should_stop}

    def load_state(self, state):
        self.lr = state["lr"]
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]
        self.should_stop = state["should_stop"]


@dataclass
class FitResult:
    history: list
    best_path: Path
    last_path: Path
    best_val: float
    epochs_run: int
    global_steps: int


HISTORY_COLUMNS = "epoch,lr,train_loss,val_metric,seconds"


def write_history(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(HISTORY_COLUMNS + "\n")
        for row in rows:
            f.write("%d,%.10g,%.6f,%.6f,%.3f\n" % tuple(row))


def _trainable_params(model, weights):
    """Named parameters that the active loss terms can actually reach."""
    skip_prefixes = []
    if weights.gamma == 0:
        skip_prefixes.append("classifier.")
    if weights.alpha == 0:
        skip_prefixes.append("decoder.deconvs.1.")
    if weights.beta == 0:
        skip_prefixes.append("decoder.deconvs.2.")
    return [(n, p) for n, p in model.named_parameters()
            if not any(n.startswith(s) for s in skip_prefixes)]


def _example_loss(model, example, weights):
    out = model.forward(example.mixture.samples, example.reference.samples)
    return losses.total_loss(out.s1, out.s2, out.s3,
                             example.target.samples.astype(model.dtype),
                             out.logits, example.speaker_label, weights)


def validate(model, rows, root, cfg):
    """Deterministic validation pass; returns (metric, mean_loss, accuracy)."""
    was_training = model.training
    model.eval()
    total = 0.0
    hits = 0
    try:
        with no_grad():
            for i, row in enumerate(rows):
                ex = load_example(root, row)
                seg = segment_or_pad(ex, cfg.segment_seconds,
                                     np.random.default_rng([cfg.seed, 0, i]))
                out = model.forward(seg.mixture.samples, seg.reference.samples)
                loss = losses.total_loss(
                    out.s1, out.s2, out.s3, seg.target.samples.astype(model.dtype),
                    out.logits, seg.speaker_label, cfg.weights)
                total += float(loss.data)
                if int(np.argmax(out.logits.data)) == seg.speaker_label:
                    hits += 1
    finally:
        model.train(was_training)
    mean_loss = total / max(1, len(rows))
    accuracy = hits / max(1, len(rows))
    metric = mean_loss if cfg.val_metric == "loss" else accuracy
    return metric, mean_loss, accuracy


def _snapshot(path, model, opt, sched, cfg, rng, epoch, gstep, history, best_val):
    meta = {
        "model_config": asdict(model.config),
        "train_config": asdict(cfg),
        "epoch": epoch,
        "global_step": gstep,
        "best_val": best_val,
        "scheduler": sched.state_dict(),
        "history": [list(r) for r in history],
        "monitor": cfg.val_metric,
        "model_class": "spexplus",
    }
    save_checkpoint(path, model.state_dict(), opt.state_dict(),
                    rng_state=rng.bit_generator.state, meta=meta)


def load_model_from_checkpoint(path):
    """Rebuild a model (architecture + weights) from a checkpoint file."""
    ckpt = load_checkpoint(path)
    if "model_config" not in ckpt.meta:
        raise CheckpointError(f"{path}: no model_config in metadata")
    model = SpexPlusModel(config_from_dict(ckpt.meta["model_config"]))
    model.load_state(ckpt.params)
    return model, ckpt


def fit(model, train_manifest, dev_manifest, cfg, out_dir, clock=time.monotonic,
        resume=None, log=None):
    """Run the optimization loop; returns a FitResult.

    `clock` is injectable so tests can pin the seconds column; `resume` is a
    path to a last.ckpt written by a previous run over the same data/config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    say = log or (lambda msg: None)

    train_rows = load_manifest(train_manifest)
    dev_rows = load_manifest(dev_manifest)
    train_root = dataset_root(train_manifest)
    dev_root = dataset_root(dev_manifest)

    params = _trainable_params(model, cfg.weights)
    opt = Adam(params, lr=cfg.lr_init)
    mode = "min" if cfg.val_metric == "loss" else "max"
    sched = LrScheduler(cfg.lr_init, cfg.lr_decay, cfg.patience_decay,
                        cfg.patience_stop, mode=mode)
    rng = np.random.default_rng([cfg.seed, 0x7121])
    history = []
    gstep = 0
    start_epoch = 0
    best_val = None
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    if resume is not None:
        ckpt = load_checkpoint(resume)
        model.load_state(ckpt.params)
        opt.load_state(ckpt.optimizer)
        sched.load_state(ckpt.meta["scheduler"])
        rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.meta["epoch"]
        gstep = ckpt.meta["global_step"]
        best_val = ckpt.meta["best_val"]
        history = [tuple(r) for r in ckpt.meta["history"]]
        say(f"resumed from {resume} at epoch {start_epoch}")
    else:
        baseline, *_ = validate(model, dev_rows, dev_root, cfg)
        sched.observe(baseline)
        best_val = baseline
        _snapshot(best_path, model, opt, sched, cfg, rng, 0, 0, history, best_val)
        say(f"baseline val_{cfg.val_metric}={baseline:.6f}")

    steps_exhausted = gstep >= cfg.max_steps if cfg.max_steps else False
    epoch = start_epoch
    for epoch in range(start_epoch + 1, cfg.max_epochs + 1):
        if sched.should_stop or steps_exhausted:
            epoch -= 1
            break
        t0 = clock()
        lr_epoch = sched.lr
        opt.lr = lr_epoch
        order = rng.permutation(len(train_rows))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            opt.zero_grad()
            batch_loss = None
            for idx in batch:
                row = train_rows[int(idx)]
                ex = load_example(train_root, row)
                seg = segment_or_pad(ex, cfg.segment_seconds, rng)
                loss = _example_loss(model, seg, cfg.weights)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainDivergedError(
                        f"non-finite loss at epoch {epoch}, step {gstep}, "
                        f"example {row.get('id', idx)}")
                epoch_losses.append(value)
                batch_loss = loss if batch_loss is None else batch_loss + loss
            if len(batch) > 1:
                batch_loss = batch_loss * (1.0 / len(batch))
            backward(batch_loss)
            clip_global_norm(params, cfg.grad_clip)
            opt.step()
            gstep += 1
            if cfg.max_steps is not None and gstep >= cfg.max_steps:
                steps_exhausted = True
                break

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        metric, mean_loss, accuracy = validate(model, dev_rows, dev_root, cfg)
        improved = sched.observe(metric)
        if improved:
            best_val = metric
            _snapshot(best_path, model, opt, sched, cfg, rng, epoch, gstep,
                      history, best_val)
        seconds = clock() - t0
        history.append((epoch, lr_epoch, train_loss, metric, seconds))
        write_history(out_dir / "history.csv", history)
        _snapshot(last_path, model, opt, sched, cfg, rng, epoch, gstep,
                  history, best_val)
        say(f"epoch {epoch}: lr={lr_epoch:.2e} train_loss={train_loss:.4f} "
            f"val_{cfg.val_metric}={metric:.4f} acc={accuracy:.2f}"
            + (" *" if improved else ""))

    write_history(out_dir / "history.csv", history)
    return FitResult(history=history, best_path=best_path, last_path=last_path,
                     best_val=best_val, epochs_run=epoch,
                     global_steps=gstep)
