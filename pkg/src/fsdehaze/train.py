"""Alternating generator/discriminator training.

Each iteration performs one generator update (minimizing the weighted
four-term objective) followed by one discriminator update (minimizing the
negated two-term objective) on the same batch, with the generator output
detached for the discriminator pass. The learning rate follows
lr * gamma^floor(iteration / step); weight decay is decoupled (AdamW).

The clean image's encoder pass for the feature-regularization term is a
supervision target by default (no gradient through the clean branch);
letting gradients flow through both branches would admit the degenerate
optimum of encoding everything to a constant. A config flag restores the
symmetric behaviour for ablations.

Runs are bit-reproducible: batches are pure functions of (seed,
iteration), parameter init is seeded, and checkpoints carry optimizer
moments, so resuming reproduces the uninterrupted run exactly.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from .checkpoint import load_training_state, save_checkpoint
from .data import PairDataset
from .discriminator import MultiScaleDiscriminator
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .features import build_extractor
from .generator import DehazeGenerator
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss,
    discriminator_loss,
    feature_reg_loss,
    perceptual_loss,
    style_loss,
    weighted_total,
)

log = logging.getLogger(__name__)

# ablation presets: which loss terms stay active
PRESETS = {
    "A+P": {"gamma3": 0.0, "gamma4": 0.0},
    "A+P+FR": {"gamma3": 0.0},
    "A+P+FR+S": {},
}

LOG_COLUMNS = ("iteration", "adversarial", "perceptual", "style",
               "feature_reg", "total", "d_loss", "lr", "walltime")

# config keys that may change between a checkpoint and a resumed run
RESUMABLE_OVERRIDES = {"max_iterations", "checkpoint_interval", "device"}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    lr_gamma: float = 0.5
    lr_step: int = 5000
    max_iterations: int = 300_000
    batch_size: int = 4
    patch: int = 256
    seed: int = 0
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 50.0
    gamma4: float = 0.01
    preset: str | None = None
    checkpoint_interval: int = 1000
    extractor: str = "random"
    extractor_weights: str | None = None
    extractor_seed: int = 77
    perceptual_tap: str | None = None
    feature_reg_tap: str = "enc11"
    feature_reg_reduction: str = "sum"
    feature_reg_symmetric: bool = False
    non_saturating: bool = False
    update_discriminator: bool = True
    device: str = "cpu"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.lr_gamma <= 1):
            raise ConfigError(f"lr_gamma must be in (0, 1], got {self.lr_gamma}")
        if self.lr_step < 1:
            raise ConfigError(f"lr_step must be >= 1, got {self.lr_step}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; options: {sorted(PRESETS)}")

    def resolved_weights(self):
        """LossWeights after applying the ablation preset."""
        values = {"gamma1": self.gamma1, "gamma2": self.gamma2,
                  "gamma3": self.gamma3, "gamma4": self.gamma4}
        if self.preset is not None:
            values.update(PRESETS[self.preset])
        try:
            return LossWeights(**values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- flat key=value config file --------------------------------------

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(known[key].type, value)
        return cls(**values)

    def to_file(self, path):
        lines = [f"{k} = {'' if v is None else v}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_value(annotation, raw):
    if raw == "":
        return None
    text = str(annotation)
    if "bool" in text:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if "int" in text:
        return int(raw)
    if "float" in text:
        return float(raw)
    return raw


class TrainState:
    """Networks, optimizers, extractor, and the iteration counter."""

    def __init__(self, config):
        self.config = config
        try:
            device = torch.device(config.device)
        except RuntimeError as exc:
            raise ConfigError(f"bad device {config.device!r}: {exc}") from exc
        self.generator = DehazeGenerator(seed=config.seed).to(device)
        self.discriminator = MultiScaleDiscriminator(seed=config.seed + 1).to(device)
        weights = config.resolved_weights()
        self.extractor = None
        if weights.gamma2 > 0 or weights.gamma3 > 0:
            self.extractor = build_extractor(
                config.extractor,
                tap=config.perceptual_tap,
                seed=config.extractor_seed,
                weights=config.extractor_weights,
            ).to(device)
        self.opt_g = torch.optim.AdamW(
            self.generator.parameters(), lr=config.learning_rate,
            betas=(0.9, 0.999), eps=1e-8, weight_decay=config.weight_decay)
        self.opt_d = torch.optim.AdamW(
            self.discriminator.parameters(), lr=config.learning_rate,
            betas=(0.9, 0.999), eps=1e-8, weight_decay=config.weight_decay)
        self.device = device
        self.iteration = 0

    @property
    def current_lr(self):
        c = self.config
        return c.learning_rate * c.lr_gamma ** (self.iteration // c.lr_step)


def schedule_lr(config, iteration):
    return config.learning_rate * config.lr_gamma ** (iteration // config.lr_step)


def train_step(state, batch, config=None):
    """One generator update then one discriminator update; returns
    (LossBreakdown, discriminator loss)."""
    config = config or state.config
    weights = config.resolved_weights()
    g, d = state.generator, state.discriminator
    lr = state.current_lr
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = lr

    hazy = batch.hazy.to(state.device)
    clean = batch.clean.to(state.device)

    features, taps = g.encode(hazy)
    output = g.decode(features, taps)
    zero = output.new_zeros(())

    adv = zero
    if weights.gamma1 > 0:
        adv = adversarial_loss(d.score(hazy, output), config.non_saturating)
    perc = zero
    if weights.gamma2 > 0:
        perc = perceptual_loss(state.extractor, output, clean)
    sty = zero
    if weights.gamma3 > 0:
        sty = style_loss(state.extractor, output, clean)
    fr = zero
    if weights.gamma4 > 0:
        f_hazy = taps[config.feature_reg_tap]
        if config.feature_reg_symmetric:
            f_clean = g.encode(clean)[1][config.feature_reg_tap]
        else:
            with torch.no_grad():
                f_clean = g.encode(clean)[1][config.feature_reg_tap]
        fr = feature_reg_loss(f_hazy, f_clean, config.feature_reg_reduction)

    total = weighted_total(weights, adv, perc, sty, fr)
    breakdown = LossBreakdown(*(float(t.detach()) for t in (adv, perc, sty, fr, total)))

    d_loss_value = 0.0
    if config.update_discriminator:
        fake = output.detach()
        d_loss = discriminator_loss(d.score(hazy, fake), d.score(hazy, clean))
        d_loss_value = float(d_loss.detach())

    checked = dict(breakdown.as_dict(), d_loss=d_loss_value)
    if not all(math.isfinite(v) for v in checked.values()):
        raise TrainingDivergedError(state.iteration, batch.names, checked)

    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    if config.update_discriminator:
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()

    state.iteration += 1
    return breakdown, d_loss_value


def _format_row(iteration, breakdown, d_loss, lr, walltime):
    values = [breakdown.adversarial, breakdown.perceptual, breakdown.style,
              breakdown.feature_reg, breakdown.total, d_loss, lr]
    return "\t".join([str(iteration)] + [f"{v:.10g}" for v in values] + [f"{walltime:.3f}"])


def train(config, dataset_root, out_dir, resume=None, log_name="losses.tsv"):
    """Run the training loop; returns the final checkpoint path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc

    dataset = PairDataset(dataset_root, config.patch, config.batch_size, config.seed)
    state = TrainState(config)

    log_path = out / log_name
    if resume is not None:
        record = load_training_state(
            resume, state.generator, state.discriminator, state.opt_g, state.opt_d)
        saved = record["config"]
        current = asdict(config)
        diverging = {
            k for k in current
            if k not in RESUMABLE_OVERRIDES and saved.get(k) != current[k]
        }
        if diverging:
            raise CheckpointError(
                f"{resume}: config differs from the checkpointed run on {sorted(diverging)}"
            )
        state.iteration = record["iteration"]
        log.info("resumed from %s at iteration %d", resume, state.iteration)
        fresh = not log_path.exists()
        log_fh = open(log_path, "a", encoding="utf-8")
        if fresh:
            log_fh.write("\t".join(LOG_COLUMNS) + "\n")
    else:
        log_fh = open(log_path, "w", encoding="utf-8")
        log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    started = time.monotonic()
    final_path = out / "ckpt_final.pt"
    config_dict = asdict(config)
    try:
        while state.iteration < config.max_iterations:
            it = state.iteration
            lr = state.current_lr
            batch = dataset.batch_at(it)
            breakdown, d_loss = train_step(state, batch, config)
            log_fh.write(_format_row(it, breakdown, d_loss, lr,
                                     time.monotonic() - started) + "\n")
            if state.iteration % config.checkpoint_interval == 0:
                save_checkpoint(out / f"ckpt_{state.iteration:07d}.pt",
                                state.generator, state.discriminator,
                                state.opt_g, state.opt_d,
                                state.iteration, config_dict)
        save_checkpoint(final_path, state.generator, state.discriminator,
                        state.opt_g, state.opt_d, state.iteration, config_dict)
    finally:
        log_fh.close()
    return final_path
