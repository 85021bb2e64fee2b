"""Training loop for the style-conditioned generator.

Each iteration draws a batch with one shared style value t, evaluates the
schedule at t, and optimises the critic then the generator under the
resulting coefficients. A flat style map equal to t conditions the
generator, so the network sees the same control signal the objective is
weighted by; spatially varying maps appear only at inference time.

The critic update is skipped entirely while the adversarial weight is
zero. Everything stochastic flows through one numpy Generator so a run can
be resumed bit-exactly from a checkpoint.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml

from . import checkpoint as checkpoint_io
from . import data as data_mod
from .adversarial import (
    Discriminator,
    DiscriminatorConfig,
    discriminator_loss,
    generator_adversarial_loss,
    relative_probs,
)
from .data import Batch, DegradationSpec, PairedPatch, sample_batch
from .errors import ConfigError, DataError, NumericalError
from .generator import FlexibleGenerator, GeneratorConfig
from .perceptual import FeatureExtractor, perceptual_terms
from .schedules import (
    LossConstants,
    ScheduleVariant,
    WeightSet,
    default_constants,
    lambda_coeffs,
    weights_at,
)

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"


def lr_at(iteration: int, lr0: float = 1e-4,
          halve_at: tuple[int, ...] = (5000, 10000, 20000, 30000)) -> float:
    """Step learning rate: halved once each time a milestone is reached."""
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    halvings = sum(1 for h in halve_at if iteration >= h)
    return lr0 * (0.5 ** halvings)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on.

    ``constants`` defaults to the published values for the chosen variant.
    ``feature_source`` selects the perceptual extractor (see
    fxsr.perceptual). ``dtype`` exists for numerically strict tests.
    """

    variant: ScheduleVariant = ScheduleVariant.PD
    scale: int = 4
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc_width: int = 64
    constants: LossConstants | None = None
    beta1: float = 0.9
    beta2: float = 0.99
    lr0: float = 1e-4
    lr_halve_at: tuple[int, ...] = (5000, 10000, 20000, 30000)
    total_iters: int = 50000
    batch_size: int = 16
    seed: int = 0
    jpeg_quality: int | None = None
    augment: bool = True
    feature_source: str = "seeded:0"
    checkpoint_every: int = 5000
    warmup_iters: int = 0
    init_checkpoint: str | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", ScheduleVariant.parse(self.variant))
        if isinstance(self.generator, dict):
            object.__setattr__(
                self, "generator", GeneratorConfig.from_dict(self.generator)
            )
        if self.constants is None:
            object.__setattr__(self, "constants", default_constants(self.variant))
        elif isinstance(self.constants, dict):
            object.__setattr__(self, "constants", LossConstants(**self.constants))
        if self.scale != self.generator.scale:
            raise ConfigError(
                f"config scale {self.scale} disagrees with generator scale "
                f"{self.generator.scale}"
            )
        halve = tuple(int(h) for h in self.lr_halve_at)
        if list(halve) != sorted(set(halve)) or any(h <= 0 for h in halve):
            raise ConfigError(
                f"lr_halve_at must be strictly increasing positives, got {halve}"
            )
        object.__setattr__(self, "lr_halve_at", halve)
        if self.total_iters < 0:
            raise ConfigError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.warmup_iters < 0:
            raise ConfigError("warmup_iters must be >= 0")

    @classmethod
    def toy(cls, variant: ScheduleVariant = ScheduleVariant.PD,
            scale: int = 4, **overrides) -> "TrainConfig":
        """Small CPU-friendly run used by smoke tests and demos."""
        defaults = dict(
            variant=variant,
            scale=scale,
            generator=GeneratorConfig.toy(scale),
            disc_width=16,
            batch_size=4,
            total_iters=2000,
            feature_source="seeded:0:0.25",
            checkpoint_every=500,
        )
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "scale": self.scale,
            "generator": self.generator.to_dict(),
            "disc_width": self.disc_width,
            "constants": {
                "lambda_rec_o": self.constants.lambda_rec_o,
                "lambda_adv_o": self.constants.lambda_adv_o,
                "lambda_per": self.constants.lambda_per,
                "eta": self.constants.eta,
            },
            "beta1": self.beta1,
            "beta2": self.beta2,
            "lr0": self.lr0,
            "lr_halve_at": list(self.lr_halve_at),
            "total_iters": self.total_iters,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "jpeg_quality": self.jpeg_quality,
            "augment": self.augment,
            "feature_source": self.feature_source,
            "checkpoint_every": self.checkpoint_every,
            "warmup_iters": self.warmup_iters,
            "init_checkpoint": self.init_checkpoint,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        values = dict(values)
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "lr_halve_at" in values:
            values["lr_halve_at"] = tuple(values["lr_halve_at"])
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                values = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid config syntax: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(values)


@dataclass
class LossBreakdown:
    """Raw loss terms and effective coefficients for one iteration."""

    iteration: int
    t: float
    lr: float
    lambda_rec: float
    lambda_adv: float
    lambda_per: float
    rec: float
    adv: float
    per: float
    per_levels: dict[str, float]
    total: float
    d_loss: float | None
    d_skipped: bool

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "t": self.t,
            "lr": self.lr,
            "lambda_rec": self.lambda_rec,
            "lambda_adv": self.lambda_adv,
            "lambda_per": self.lambda_per,
            "rec": self.rec,
            "adv": self.adv,
            "per": self.per,
            "per_levels": self.per_levels,
            "total": self.total,
            "d_loss": self.d_loss,
            "d_skipped": self.d_skipped,
        }


@dataclass
class TrainState:
    """Mutable bundle of everything train_step touches."""

    config: TrainConfig
    generator: FlexibleGenerator
    discriminator: Discriminator
    extractor: FeatureExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    iteration: int = 0


def init_state(config: TrainConfig) -> TrainState:
    """Build fresh networks, optimizers, and sampler RNG from the config."""
    torch.manual_seed(config.seed)
    generator = FlexibleGenerator(config.generator)
    discriminator = Discriminator(
        DiscriminatorConfig(base_width=config.disc_width,
                            input_size=data_mod.PATCH_SIZE)
    )
    extractor = FeatureExtractor.from_source(config.feature_source)
    if config.dtype == "float64":
        generator.double()
        discriminator.double()
        extractor.double()
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr0, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr0, betas=betas)
    rng = np.random.default_rng(config.seed)
    return TrainState(
        config=config,
        generator=generator,
        discriminator=discriminator,
        extractor=extractor,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
    )


def _torch_dtype(config: TrainConfig) -> torch.dtype:
    return torch.float64 if config.dtype == "float64" else torch.float32


def _batch_tensors(batch: Batch, dtype: torch.dtype):
    hr = torch.from_numpy(batch.hr.transpose(0, 3, 1, 2)).to(dtype)
    lr = torch.from_numpy(batch.lr.transpose(0, 3, 1, 2)).to(dtype)
    style = torch.full(
        (lr.shape[0], 1, lr.shape[2], lr.shape[3]), batch.t, dtype=dtype
    )
    return hr, lr, style


def train_step(state: TrainState, batch: Batch) -> LossBreakdown:
    """One optimisation step: critic first, then generator.

    Mutates the state in place (parameters, optimizer moments, iteration
    counter) and returns the loss breakdown for logging.
    """
    config = state.config
    if state.iteration < config.warmup_iters:
        # Pixel-only warmup: the conditioning input still varies but the
        # objective is pure L1 until the generator produces something the
        # critic is worth training against.
        weights = WeightSet(w_rec=1.0, w_adv=0.0, w_per={})
    else:
        weights = weights_at(batch.t, config.variant)
    lam = lambda_coeffs(weights, config.constants)
    current_lr = lr_at(state.iteration, config.lr0, config.lr_halve_at)
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = current_lr

    dtype = _torch_dtype(config)
    hr, lr, style = _batch_tensors(batch, dtype)
    state.generator.train()
    state.discriminator.train()
    sr = state.generator(lr, style)

    d_loss_value = None
    if weights.w_adv > 0.0:
        state.opt_d.zero_grad(set_to_none=True)
        probs_d = relative_probs(
            state.discriminator(hr), state.discriminator(sr.detach())
        )
        d_loss = discriminator_loss(probs_d)
        if not bool(torch.isfinite(d_loss)):
            raise NumericalError(
                f"critic loss became non-finite at iteration {state.iteration}"
            )
        d_loss.backward()
        state.opt_d.step()
        d_loss_value = float(d_loss.detach())

    rec = (sr - hr).abs().mean()
    if weights.w_adv > 0.0:
        for p in state.discriminator.parameters():
            p.requires_grad_(False)
        try:
            real_logits = state.discriminator(hr).detach()
            fake_logits = state.discriminator(sr)
            adv = generator_adversarial_loss(
                relative_probs(real_logits, fake_logits)
            )
        finally:
            for p in state.discriminator.parameters():
                p.requires_grad_(True)
    else:
        adv = sr.new_zeros(())
    active = weights.active_levels()
    if active:
        terms = perceptual_terms(sr, hr, active, state.extractor)
        per = sr.new_zeros(())
        for level in active:
            per = per + weights.w_per[level] * terms[level]
        per_levels = {level.value: float(terms[level].detach()) for level in active}
    else:
        per = sr.new_zeros(())
        per_levels = {}
    total = lam.lambda_rec * rec + lam.lambda_adv * adv.to(dtype) + lam.lambda_per * per
    if not bool(torch.isfinite(total)):
        raise NumericalError(
            f"generator loss became non-finite at iteration {state.iteration}"
        )
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    state.iteration += 1

    return LossBreakdown(
        iteration=state.iteration - 1,
        t=batch.t,
        lr=current_lr,
        lambda_rec=lam.lambda_rec,
        lambda_adv=lam.lambda_adv,
        lambda_per=lam.lambda_per,
        rec=float(rec.detach()),
        adv=float(adv.detach()),
        per=float(per.detach()),
        per_levels=per_levels,
        total=float(total.detach()),
        d_loss=d_loss_value,
        d_skipped=weights.w_adv == 0.0,
    )


def train(config: TrainConfig, dataset, out_dir, resume=None) -> str:
    """Run (or continue) training; returns the final checkpoint path.

    Args:
        config: run configuration. When resuming it may extend the run
            (total_iters, checkpoint_every); every other field must match
            the checkpoint, since changing them mid-run would silently
            train a different model.
        dataset: a dataset directory or a list of PairedPatch.
        out_dir: checkpoints and the loss log are written here.
        resume: checkpoint path to continue from.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    if resume is not None:
        state = checkpoint_io.load_state(resume)
        if config is not None:
            wanted = config.to_dict()
            stored = state.config.to_dict()
            for run_field in ("total_iters", "checkpoint_every"):
                stored[run_field] = wanted[run_field]
            if wanted != stored:
                changed = sorted(
                    k for k in wanted if wanted[k] != stored[k]
                )
                raise ConfigError(
                    f"resume config changes model-defining fields {changed}; "
                    "only total_iters and checkpoint_every may differ"
                )
            config = TrainConfig.from_dict(stored)
            state.config = config
        else:
            config = state.config
    else:
        state = init_state(config)
        if config.init_checkpoint is not None:
            src_iter = checkpoint_io.import_generator(
                config.init_checkpoint, state.generator
            )
            logger.info("imported generator weights from %s (iteration %d)",
                        config.init_checkpoint, src_iter)
        if config.total_iters == 0:
            # Degenerate run: still emit the initial checkpoint so the
            # export path can be exercised without training.
            return _save_checkpoint(out_dir, state)

    if isinstance(dataset, (str, os.PathLike)):
        pairs, disk_spec = data_mod.load_dataset(dataset)
        if disk_spec.scale != config.scale:
            raise DataError(
                f"dataset was prepared at scale {disk_spec.scale}, run wants "
                f"{config.scale}"
            )
        spec = disk_spec
    else:
        pairs = list(dataset)
        spec = DegradationSpec(scale=config.scale,
                               jpeg_quality=config.jpeg_quality)
        if not pairs:
            raise DataError("empty training set")

    log_path = os.path.join(out_dir, LOG_NAME)
    final_path = None
    mode = "a" if (resume is not None and os.path.exists(log_path)) else "w"
    with open(log_path, mode, encoding="utf-8") as log:
        while state.iteration < config.total_iters:
            batch = sample_batch(pairs, config.batch_size, state.rng, spec,
                                 augment=config.augment)
            breakdown = train_step(state, batch)
            log.write(json.dumps(breakdown.to_dict()) + "\n")
            done = state.iteration
            if config.checkpoint_every and done % config.checkpoint_every == 0:
                final_path = _save_checkpoint(out_dir, state)
                logger.info("iteration %d: checkpoint written", done)
    if final_path is None or state.iteration % max(config.checkpoint_every, 1):
        final_path = _save_checkpoint(out_dir, state)
    return final_path


def _save_checkpoint(out_dir: str, state: TrainState) -> str:
    path = os.path.join(out_dir, f"checkpoint_{state.iteration:06d}.fxc")
    checkpoint_io.save_state(path, state)
    return path
