"""
Training loop: Adam with the inverse-square-root warmup schedule, label
smoothed loss, global-norm clipping, per-epoch dev evaluation, checkpointing
and best-checkpoint selection.
"""

import logging
import math
import os
import shutil
from dataclasses import dataclass, field

import numpy as np

from corpus import batch
from errors import ConfigError, NonFiniteGradientError, TrainingDivergedError
from numerics import ComputationTape, backward, cross_entropy

METRICS_HEADER = "step\tepoch\ttrain_loss\tdev_loss\tlr"
SELECTION_CRITERIA = ("loss", "bleu")


@dataclass
class TrainConfig:
    epochs: int = 10
    max_tokens: int = 2048
    warmup_steps: int = 16000
    lr_scale: float = 4.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    label_smoothing: float = 0.1
    clip_norm: float = 5.0
    select_by: str = "loss"
    max_steps: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.select_by not in SELECTION_CRITERIA:
            raise ConfigError(f"select_by must be one of {SELECTION_CRITERIA}, got {self.select_by!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


def lr(step, d, warmup, scale):
    """scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)"""
    if step < 1:
        raise ValueError(f"learning rate is defined for step >= 1, got {step}")
    return scale * d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimizerState:
    d_model: int
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 16000
    scale: float = 4.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params, d_model, train_config):
        state = cls(
            d_model=d_model,
            beta1=train_config.beta1,
            beta2=train_config.beta2,
            eps=train_config.eps,
            warmup_steps=train_config.warmup_steps,
            scale=train_config.lr_scale,
        )
        for name, tensor in params:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state

    def moment_tensors(self):
        tensors = {f"adam.m.{name}": value for name, value in self.m.items()}
        tensors.update({f"adam.v.{name}": value for name, value in self.v.items()})
        return tensors

    def load_moments(self, tensors):
        for name in self.m:
            self.m[name] = np.array(tensors[f"adam.m.{name}"])
            self.v[name] = np.array(tensors[f"adam.v.{name}"])


def adam_step(params, state):
    """Bias-corrected Adam update using each parameter's .grad.

    Every gradient is checked before any parameter moves. Returns the
    learning rate that was applied.
    """
    grads = {}
    for name, tensor in params:
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            bad = int(np.size(grad) - np.isfinite(grad).sum())
            raise NonFiniteGradientError(
                name, f"gradient of {name} has {bad} non-finite entries (shape {grad.shape})"
            )
        grads[name] = grad

    state.step += 1
    rate = lr(state.step, state.d_model, state.warmup_steps, state.scale)
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, tensor in params:
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data = tensor.data - rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return rate


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm"""
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for _, t in params if t.grad is not None))
    if max_norm and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for _, tensor in params:
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return total


def compute_loss(model, b, label_smoothing=0.0):
    logits = model.forward(b.src, b.tgt_in)
    return cross_entropy(logits, b.tgt_out, model.config.pad_id, label_smoothing)


def evaluate_loss(model, batches):
    """Token-weighted mean cross-entropy without smoothing or dropout"""
    was_training = model.training
    model.eval()
    total, tokens = 0.0, 0
    for b in batches:
        n = b.n_target_tokens
        total += compute_loss(model, b).item() * n
        tokens += n
    model.train(was_training)
    return total / tokens if tokens else float("nan")


@dataclass
class TrainingResult:
    run_dir: str
    best_checkpoint: str
    best_score: float
    steps: int
    epochs_completed: int
    history: list = field(default_factory=list)


def _checkpoint_dir(run_dir):
    path = os.path.join(run_dir, "checkpoints")
    os.makedirs(path, exist_ok=True)
    return path


def _append_metrics(run_dir, step, epoch, train_loss, dev_loss, rate):
    path = os.path.join(run_dir, "metrics.log")
    new_file = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as f:
        if new_file:
            f.write(METRICS_HEADER + "\n")
        f.write(f"{step}\t{epoch}\t{train_loss:.6f}\t{dev_loss:.6f}\t{rate:.6e}\n")


def _save(model, optimizer, path, **metadata):
    metadata["step"] = optimizer.step
    model.save(path, metadata=metadata, extra_tensors=optimizer.moment_tensors())


def _dev_score(model, dev_batches, dev_chunks, train_config):
    """Lower is better for both criteria (BLEU is negated)"""
    dev_loss = evaluate_loss(model, dev_batches)
    if train_config.select_by == "bleu":
        from decoding import greedy_decode
        from evaluation import bleu

        was_training = model.training
        model.eval()
        hyps, refs = [], []
        for chunk in dev_chunks:
            hyps.append(" ".join(map(str, greedy_decode(model, chunk.src_ids, len(chunk.tgt_ids) + 10))))
            refs.append(" ".join(map(str, chunk.tgt_ids)))
        model.train(was_training)
        return dev_loss, -bleu(hyps, refs, tokenize="none").score
    return dev_loss, dev_loss


def train(model, train_chunks, dev_chunks, train_config, run_dir, seed=0, resume=False):
    """Train `model` in place, writing checkpoints and metrics under run_dir.

    Checkpoints: epoch-NNNN.ckpt after every epoch, last.ckpt (resumable,
    also written on interruption), best.ckpt (lowest dev score). A NaN loss
    writes postmortem.ckpt and raises TrainingDivergedError.
    """
    ckpt_dir = _checkpoint_dir(run_dir)
    last_path = os.path.join(ckpt_dir, "last.ckpt")
    best_path = os.path.join(ckpt_dir, "best.ckpt")
    optimizer = OptimizerState.for_parameters(model.params, model.config.d_model, train_config)
    dev_batches = batch(dev_chunks, train_config.max_tokens) if dev_chunks else []

    start_epoch, skip_batches = 1, 0
    resumed_loss, resumed_tokens = 0.0, 0
    best_score = math.inf
    history = []
    if resume and os.path.exists(last_path):
        from model import TranslationModel

        restored, checkpoint = TranslationModel.load(last_path)
        model.params.load_arrays(restored.params.arrays())
        optimizer.load_moments(checkpoint.tensors)
        meta = checkpoint.metadata
        optimizer.step = meta["step"]
        start_epoch = meta["epoch"]
        skip_batches = meta.get("batch_index", 0)
        best_score = meta.get("best_score", math.inf)
        resumed_loss = meta.get("epoch_loss", 0.0)
        resumed_tokens = meta.get("epoch_tokens", 0)
        print(f"Resuming from step {optimizer.step}, epoch {start_epoch}, batch {skip_batches}")
        logging.info(f"Resuming from {last_path} at step {optimizer.step}")
    else:
        init_path = os.path.join(ckpt_dir, "epoch-0000.ckpt")
        _save(model, optimizer, init_path, epoch=1, batch_index=0, best_score=best_score)
        shutil.copyfile(init_path, last_path)
        if train_config.epochs == 0:
            shutil.copyfile(init_path, best_path)
            logging.info("epochs=0: wrote initialization checkpoint only")
            return TrainingResult(run_dir, best_path, best_score, 0, 0, history)

    epoch = start_epoch
    stop = False
    while epoch <= train_config.epochs and not stop:
        batches = batch(train_chunks, train_config.max_tokens)
        order = np.random.default_rng([seed, epoch]).permutation(len(batches))
        model.train()
        # a mid-epoch resume carries the loss of the batches already run
        epoch_loss, epoch_tokens = resumed_loss, resumed_tokens
        resumed_loss, resumed_tokens = 0.0, 0
        rate = lr(max(optimizer.step, 1), optimizer.d_model, optimizer.warmup_steps, optimizer.scale)
        position = skip_batches
        try:
            for position in range(skip_batches, len(order)):
                b = batches[order[position]]
                model.rng = np.random.default_rng([seed, optimizer.step + 1])
                model.params.zero_grad()
                with ComputationTape() as tape:
                    loss = compute_loss(model, b, train_config.label_smoothing)
                    if not math.isfinite(loss.item()):
                        postmortem = os.path.join(ckpt_dir, "postmortem.ckpt")
                        _save(model, optimizer, postmortem, epoch=epoch, batch_index=position,
                              best_score=best_score)
                        logging.error(f"Loss diverged at step {optimizer.step + 1}; saved {postmortem}")
                        raise TrainingDivergedError(
                            f"loss became {loss.item()} at step {optimizer.step + 1}", postmortem
                        )
                    backward(loss, tape)
                clip_grad_norm(model.params, train_config.clip_norm)
                rate = adam_step(model.params, optimizer)

                n = b.n_target_tokens
                epoch_loss += loss.item() * n
                epoch_tokens += n
                if train_config.log_every and optimizer.step % train_config.log_every == 0:
                    logging.info(f"step {optimizer.step} epoch {epoch} loss {loss.item():.4f} lr {rate:.3e}")
                if train_config.max_steps and optimizer.step >= train_config.max_steps:
                    stop = True
                    break
        except KeyboardInterrupt:
            _save(model, optimizer, last_path, epoch=epoch, batch_index=position, best_score=best_score,
                  epoch_loss=epoch_loss, epoch_tokens=epoch_tokens)
            print(f"\nTraining interrupted at step {optimizer.step}. Resume with --resume.")
            logging.info(f"Training interrupted at step {optimizer.step}; saved {last_path}")
            raise
        skip_batches = 0

        if stop and position + 1 < len(order):
            _save(model, optimizer, last_path, epoch=epoch, batch_index=position + 1, best_score=best_score,
                  epoch_loss=epoch_loss, epoch_tokens=epoch_tokens)
            print(f"Stopped at step {optimizer.step} inside epoch {epoch}. Resume with --resume.")
            logging.info(f"max_steps reached at step {optimizer.step}; saved {last_path}")
            break

        train_loss = epoch_loss / epoch_tokens if epoch_tokens else float("nan")
        if dev_batches:
            dev_loss, score = _dev_score(model, dev_batches, dev_chunks, train_config)
        else:
            dev_loss, score = train_loss, train_loss
        _append_metrics(run_dir, optimizer.step, epoch, train_loss, dev_loss, rate)
        history.append({"epoch": epoch, "step": optimizer.step, "train_loss": train_loss,
                        "dev_loss": dev_loss, "lr": rate})
        print(f"Epoch {epoch}: train loss {train_loss:.4f}, dev loss {dev_loss:.4f}")
        logging.info(f"Epoch {epoch} finished at step {optimizer.step}: dev loss {dev_loss:.6f}")

        epoch_path = os.path.join(ckpt_dir, f"epoch-{epoch:04d}.ckpt")
        improved = score < best_score
        if improved:
            best_score = score
        _save(model, optimizer, epoch_path, epoch=epoch + 1, batch_index=0,
              best_score=best_score, dev_loss=dev_loss, best=improved)
        shutil.copyfile(epoch_path, last_path)
        if improved:
            shutil.copyfile(epoch_path, best_path)
            logging.info(f"New best checkpoint at epoch {epoch} (score {score:.6f})")
        epoch += 1

    if not os.path.exists(best_path):
        shutil.copyfile(last_path, best_path)
    return TrainingResult(run_dir, best_path, best_score, optimizer.step, epoch - 1, history)
