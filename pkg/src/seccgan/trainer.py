"""The co-supervised training loop and its comparators.

One iteration of the co-supervised method is five sequential Adam updates:
(1) discriminator on real pairs toward 1, (2) discriminator on generated
pairs toward 0 with the generator detached, (3) generator through a fresh
discriminator evaluation toward 1, (4) classifier on real cross-entropy,
(5) classifier on the confidence-qualified synthetic samples, weighted by
lambda. The pseudo-labeling comparator replaces (5) with the classifier's own
argmax labels, and the baseline runs (4) alone. Every update is an Adam step
on its own network; the three optimizers never share state.
"""

import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from . import rng
from .checkpoint import (
    CheckpointBundle,
    CheckpointFormatError,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    compute_class_weights,
    normalize,
    sample_noise_labels,
    sample_weighted_batch,
)
from .models import Classifier, Discriminator, Generator, NetConfig, init_params
from .objectives import (
    SyntheticBatch,
    bce,
    ce,
    filter_qualified,
    gan_value_diagnostic,
    generator_loss,
)
from .optim import Adam

METHODS = ("sec_cgan", "ec_gan", "baseline")

CSV_HEADER = "iter,loss_d,loss_g,loss_c_real,loss_c_syn,k_prime_frac,gan_value,test_acc"


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; training aborts rather than silently skipping."""

    def __init__(self, what, value, iteration):
        super().__init__(f"{what} is {value} at iteration {iteration}")
        self.what = what
        self.value = value
        self.iteration = iteration
        self.history = []


@dataclass(frozen=True)
class TrainConfig:
    method: str = "sec_cgan"
    lam: float = 0.6
    beta: float = 0.7
    eta_g: float = 2e-4
    eta_d: float = 2e-4
    eta_c: float = 2e-4
    m: int = 64
    k: int = 64
    iterations: int = 2000
    eval_every: int = 200
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    master_seed: int = 0
    pseudo_label_threshold: float = 0.7
    regenerate_synthetic: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        # beta > 1 is the documented way to close the confidence gate (k'=0)
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        # rate 0 freezes a network; used by convergence diagnostics
        for name in ("eta_g", "eta_d", "eta_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.m <= 0 or self.k <= 0:
            raise ValueError(f"batch sizes must be > 0, got m={self.m}, k={self.k}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.eval_every <= 0:
            raise ValueError(f"eval_every must be > 0, got {self.eval_every}")
        if not 0.0 <= self.pseudo_label_threshold <= 1.0:
            raise ValueError(
                f"pseudo_label_threshold must be in [0,1], got {self.pseudo_label_threshold}"
            )
        if self.master_seed < 0:
            raise ValueError(f"master_seed must be >= 0, got {self.master_seed}")


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    loss_d: float
    loss_g: float
    loss_c_real: float
    loss_c_syn: float
    k_prime_fraction: float
    gan_value_diag: float
    test_accuracy: float = None


def format_csv_row(r):
    acc = "" if r.test_accuracy is None else repr(float(r.test_accuracy))
    return (
        f"{r.iteration},{r.loss_d!r},{r.loss_g!r},{r.loss_c_real!r},"
        f"{r.loss_c_syn!r},{r.k_prime_fraction!r},{r.gan_value_diag!r},{acc}"
    )


class MetricsWriter:
    """Append-only CSV metrics stream, flushed per row."""

    def __init__(self, path, append=False):
        self._f = open(path, "a" if append else "w")
        if not append:
            self._f.write(CSV_HEADER + "\n")
            self._f.flush()

    def write(self, record):
        self._f.write(format_csv_row(record) + "\n")
        self._f.flush()

    def close(self):
        self._f.close()


@dataclass
class TrainState:
    cfg: TrainConfig
    net_cfg: NetConfig
    generator: Generator
    discriminator: Discriminator
    classifier: Classifier
    opt_g: Adam
    opt_d: Adam
    opt_c: Adam
    streams: rng.StreamSet
    iteration: int = 0

    def nets(self):
        return {"g": self.generator, "d": self.discriminator, "c": self.classifier}

    def opts(self):
        return {"g": self.opt_g, "d": self.opt_d, "c": self.opt_c}


def init_state(cfg, net_cfg):
    """Fresh state: all three networks are initialized for every method, in a
    fixed draw order, so runs differing only in `method` share initializations."""
    streams = rng.StreamSet(cfg.master_seed)
    g, d, c = init_params(net_cfg, streams[rng.INIT])
    adam = lambda net, lr: Adam(
        net.parameters(), lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    )
    return TrainState(
        cfg, net_cfg, g, d, c,
        adam(g, cfg.eta_g), adam(d, cfg.eta_d), adam(c, cfg.eta_c),
        streams,
    )


def _apply(opt, loss, what, iteration):
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(what, value, iteration)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return value


def _probe(probe, name, state):
    if probe is not None:
        probe(name, state)


def train_step_sec_cgan(state, real, noise, probe=None):
    """One co-supervised iteration (the five updates); mutates state in place.

    `probe(name, state)` is called after each update ("d_real", "d_fake",
    "g", "c_real", "c_syn") for diagnostics and oracle tests.
    """
    cfg = state.cfg
    g, d, c = state.generator, state.discriminator, state.classifier
    g.train(), d.train(), c.train()
    dtype = next(c.parameters()).dtype
    x, y = real.images.to(dtype), real.labels
    z, yhat = noise.z.to(dtype), noise.labels
    it = state.iteration

    # (1) discriminator, real pairs vs 1
    conf_real = d(x, y)
    loss_d_real = _apply(state.opt_d, bce(conf_real, 1), "loss_d_real", it)
    _probe(probe, "d_real", state)

    # (2) discriminator, generated pairs vs 0; generator graph kept for (3)
    fake = g(z, yhat)
    conf_fake = d(fake.detach(), yhat)
    loss_d_fake = _apply(state.opt_d, bce(conf_fake, 0), "loss_d_fake", it)
    _probe(probe, "d_fake", state)

    # (3) generator via a fresh evaluation of the updated discriminator
    conf_fake_g = d(fake, yhat)
    loss_g = _apply(state.opt_g, generator_loss(conf_fake_g), "loss_g", it)
    _probe(probe, "g", state)

    # (4) classifier, real cross-entropy
    loss_c_real = _apply(state.opt_c, ce(c(x), y), "loss_c_real", it)
    _probe(probe, "c_real", state)

    # (5) classifier on the confidence-qualified synthetic samples.
    # Skipped outright when lambda=0 or nothing qualifies: a zero-weight Adam
    # step would still move parameters through stale moments, and a forward
    # would advance normalization statistics.
    if cfg.regenerate_synthetic:
        with torch.no_grad():
            fake_s = g(z, yhat)
            conf_s = d(fake_s, yhat)
    else:
        # reuse the batch and the step-(3) scores: images are produced once
        # per iteration and immediately fed onward
        fake_s = fake.detach()
        conf_s = conf_fake_g.detach()
    qualified = filter_qualified(SyntheticBatch(fake_s, yhat, conf_s), cfg.beta)
    loss_c_syn = 0.0
    if cfg.lam > 0 and len(qualified) > 0:
        syn_ce = ce(c(qualified.images), qualified.labels)
        _apply(state.opt_c, cfg.lam * syn_ce, "loss_c_syn", it)
        loss_c_syn = float(syn_ce.detach())
    _probe(probe, "c_syn", state)

    return MetricsRecord(
        iteration=it,
        loss_d=loss_d_real + loss_d_fake,
        loss_g=loss_g,
        loss_c_real=loss_c_real,
        loss_c_syn=loss_c_syn,
        k_prime_fraction=len(qualified) / len(noise),
        gan_value_diag=gan_value_diagnostic(conf_real.detach(), conf_fake.detach()),
    )


def train_step_ec_gan(state, real, noise, probe=None):
    """Pseudo-labeling comparator: GAN updates with conditioning pinned to
    class 0, then real CE and a classifier update on its own argmax labels
    where softmax confidence reaches the threshold (ties to lowest index)."""
    cfg = state.cfg
    g, d, c = state.generator, state.discriminator, state.classifier
    g.train(), d.train(), c.train()
    dtype = next(c.parameters()).dtype
    x, y = real.images.to(dtype), real.labels
    z = noise.z.to(dtype)
    pinned = torch.zeros_like(noise.labels)
    it = state.iteration

    conf_real = d(x, y)
    loss_d_real = _apply(state.opt_d, bce(conf_real, 1), "loss_d_real", it)
    _probe(probe, "d_real", state)

    fake = g(z, pinned)
    conf_fake = d(fake.detach(), pinned)
    loss_d_fake = _apply(state.opt_d, bce(conf_fake, 0), "loss_d_fake", it)
    _probe(probe, "d_fake", state)

    loss_g = _apply(state.opt_g, generator_loss(d(fake, pinned)), "loss_g", it)
    _probe(probe, "g", state)

    loss_c_real = _apply(state.opt_c, ce(c(x), y), "loss_c_real", it)
    _probe(probe, "c_real", state)

    loss_c_syn = 0.0
    n_pseudo = 0
    if cfg.lam > 0:
        fake_s = fake.detach()
        logits_syn = c(fake_s)
        probs = torch.softmax(logits_syn.detach(), dim=1).numpy()
        pseudo = probs.argmax(axis=1)
        mask = probs.max(axis=1) >= cfg.pseudo_label_threshold
        n_pseudo = int(mask.sum())
        if n_pseudo > 0:
            syn_ce = ce(logits_syn[torch.from_numpy(mask)], torch.from_numpy(pseudo[mask]))
            _apply(state.opt_c, cfg.lam * syn_ce, "loss_c_syn", it)
            loss_c_syn = float(syn_ce.detach())
    _probe(probe, "c_syn", state)

    return MetricsRecord(
        iteration=it,
        loss_d=loss_d_real + loss_d_fake,
        loss_g=loss_g,
        loss_c_real=loss_c_real,
        loss_c_syn=loss_c_syn,
        k_prime_fraction=n_pseudo / len(noise),
        gan_value_diag=gan_value_diagnostic(conf_real.detach(), conf_fake.detach()),
    )


def train_step_baseline(state, real, probe=None):
    """Supervised comparator: one Adam step on mean real cross-entropy."""
    c = state.classifier
    c.train()
    dtype = next(c.parameters()).dtype
    x, y = real.images.to(dtype), real.labels
    loss_c_real = _apply(state.opt_c, ce(c(x), y), "loss_c_real", state.iteration)
    _probe(probe, "c_real", state)
    return MetricsRecord(
        iteration=state.iteration,
        loss_d=0.0,
        loss_g=0.0,
        loss_c_real=loss_c_real,
        loss_c_syn=0.0,
        k_prime_fraction=0.0,
        gan_value_diag=0.0,
    )


def evaluate(classifier, test_set, batch_size=256):
    """Top-1 accuracy on the full test set, ties to the lowest class index.

    Runs in evaluation mode (running normalization statistics) and restores
    the previous mode; consumes no randomness.
    """
    n = len(test_set)
    if n == 0:
        raise ValueError("empty test set")
    was_training = classifier.training
    classifier.eval()
    dtype = next(classifier.parameters()).dtype
    correct = 0
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            chunk = slice(lo, min(lo + batch_size, n))
            x = torch.from_numpy(normalize(test_set.images[chunk])).to(dtype)
            pred = classifier(x).numpy().argmax(axis=1)
            correct += int((pred == test_set.labels[chunk]).sum())
    classifier.train(was_training)
    return correct / n


@dataclass
class TrainResult:
    state: TrainState
    history: list

    @property
    def final_accuracy(self):
        for r in reversed(self.history):
            if r.test_accuracy is not None:
                return r.test_accuracy
        return None


def bundle_from_state(state):
    tensors = {}
    adam_steps = {}
    for prefix, net in state.nets().items():
        for name, p in net.named_parameters():
            tensors[f"{prefix}.param.{name}"] = p.detach().to(torch.float32).numpy()
        for name, b in net.named_buffers():
            tensors[f"{prefix}.buffer.{name}"] = b.detach().to(torch.float32).numpy()
        opt = state.opts()[prefix]
        for (name, _), m, v in zip(net.named_parameters(), opt.m, opt.v):
            tensors[f"{prefix}.adam_m.{name}"] = m.to(torch.float32).numpy()
            tensors[f"{prefix}.adam_v.{name}"] = v.to(torch.float32).numpy()
        adam_steps[prefix] = opt.t
    return CheckpointBundle(
        train_cfg=asdict(state.cfg),
        net_cfg=asdict(state.net_cfg),
        iteration=state.iteration,
        tensors=tensors,
        adam_steps=adam_steps,
        rng_states=state.streams.capture(),
    )


def state_from_bundle(bundle):
    cfg = TrainConfig(**bundle.train_cfg)
    net_cfg = NetConfig(**bundle.net_cfg)
    state = init_state(cfg, net_cfg)

    def fetch(key):
        if key not in bundle.tensors:
            raise CheckpointFormatError(f"checkpoint is missing tensor {key!r}")
        return torch.from_numpy(bundle.tensors[key])

    with torch.no_grad():
        for prefix, net in state.nets().items():
            for name, p in net.named_parameters():
                p.copy_(fetch(f"{prefix}.param.{name}").to(p.dtype))
            for name, b in net.named_buffers():
                # num_batches_tracked rides the float32 table; exact below 2^24
                b.copy_(fetch(f"{prefix}.buffer.{name}").to(b.dtype))
            opt = state.opts()[prefix]
            names = [n for n, _ in net.named_parameters()]
            opt.load_state(
                bundle.adam_steps[prefix],
                [fetch(f"{prefix}.adam_m.{n}") for n in names],
                [fetch(f"{prefix}.adam_v.{n}") for n in names],
            )
    state.streams.restore(bundle.rng_states)
    state.iteration = bundle.iteration
    return state


def save_state(state, path):
    save_checkpoint(bundle_from_state(state), path)


def load_state(path):
    return state_from_bundle(load_checkpoint(path))


def _resume_compatible(cfg, saved_cfg_dict):
    current = asdict(cfg)
    for key, value in saved_cfg_dict.items():
        if key == "iterations":
            continue
        if current.get(key) != value:
            raise ValueError(
                f"cannot resume: config field {key!r} was {value!r} at save time, "
                f"now {current.get(key)!r}"
            )


def train(cfg, train_set, test_set, net_cfg=None, augment_policy=None,
          metrics_path=None, checkpoint_path=None, checkpoint_every=0,
          resume_from=None):
    """Run `cfg.iterations` steps of the configured method.

    Deterministic in (cfg, datasets): all randomness flows through named
    streams of cfg.master_seed (init, real-sampling, noise, augmentation).
    Evaluates on test_set every eval_every steps and at the final iteration.
    resume_from (a checkpoint path or bundle) continues a run bit-for-bit;
    the saved config must match cfg in everything but `iterations`.
    """
    if net_cfg is None:
        net_cfg = NetConfig(
            image_size=train_set.image_size,
            channels=train_set.channels,
            num_classes=train_set.num_classes,
        )
    for name, ds in (("train", train_set), ("test", test_set)):
        if ds.image_size != net_cfg.image_size or ds.channels != net_cfg.channels:
            raise ValueError(
                f"{name} set is {ds.channels}x{ds.image_size}px but the networks "
                f"expect {net_cfg.channels}x{net_cfg.image_size}px"
            )
        if ds.num_classes != net_cfg.num_classes:
            raise ValueError(
                f"{name} set has {ds.num_classes} classes, networks expect "
                f"{net_cfg.num_classes}"
            )

    resuming = resume_from is not None
    if resuming:
        bundle = resume_from
        if not isinstance(bundle, CheckpointBundle):
            bundle = load_checkpoint(bundle)
        _resume_compatible(cfg, bundle.train_cfg)
        if bundle.net_cfg != asdict(net_cfg):
            raise ValueError(
                f"cannot resume: checkpoint networks {bundle.net_cfg} differ from "
                f"requested {asdict(net_cfg)}"
            )
        state = state_from_bundle(bundle)
        state.cfg = cfg
    else:
        state = init_state(cfg, net_cfg)

    weights = compute_class_weights(train_set)
    step_fns = {
        "sec_cgan": train_step_sec_cgan,
        "ec_gan": train_step_ec_gan,
        "baseline": train_step_baseline,
    }
    step = step_fns[cfg.method]

    writer = None
    if metrics_path is not None:
        writer = MetricsWriter(metrics_path, append=resuming)

    history = []
    try:
        while state.iteration < cfg.iterations:
            state.iteration += 1
            real = sample_weighted_batch(
                train_set, weights, cfg.m,
                state.streams[rng.REAL], augment_policy, state.streams[rng.AUGMENT],
            )
            if cfg.method == "baseline":
                record = step(state, real)
            else:
                noise = sample_noise_labels(
                    cfg.k, net_cfg.num_classes, net_cfg.z_dim, state.streams[rng.NOISE]
                )
                record = step(state, real, noise)
            if state.iteration % cfg.eval_every == 0 or state.iteration == cfg.iterations:
                record = replace(
                    record, test_accuracy=evaluate(state.classifier, test_set)
                )
            history.append(record)
            if writer is not None:
                writer.write(record)
            if (
                checkpoint_path is not None
                and checkpoint_every > 0
                and state.iteration % checkpoint_every == 0
            ):
                save_state(state, checkpoint_path)
    except TrainingDiverged as exc:
        exc.history = history
        raise
    finally:
        if writer is not None:
            writer.close()

    if checkpoint_path is not None:
        save_state(state, checkpoint_path)
    return TrainResult(state=state, history=history)
