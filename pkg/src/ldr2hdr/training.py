"""Alternating adversarial optimization with the published schedule.

Learning rate holds at lr0 for ``epochs_const`` epochs, then decays linearly
to exactly zero over ``epochs_decay`` more. Each step updates the
discriminator once on detached fakes, then the generator once against fresh
discriminator logits; neither update touches the other network's parameters.
Adam runs with beta1 = 0.5, beta2 = 0.999, eps = 1e-8.

Checkpoints capture everything needed for exact resumption: both parameter
sets, both optimizers' moments, the torch RNG state (dropout is the only
consumer during training), epoch/step counters, and the loss history.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import optim

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, iterate, load_manifest
from .errors import ConfigurationError, DivergenceError
from .losses import (
    LossWeights,
    RandomFeaturePyramid,
    gan_loss_d,
    gan_loss_g,
    perceptual_loss,
    rec_loss,
    total_g_loss,
)
from .masks import DEFAULT_TAU, ThresholdMaskProvider
from .networks import ArchConfig, GeneratorPipeline, PatchDiscriminator, init_normal
from .tonemap import MuLawParams, mu_tonemap_tensor

__all__ = [
    "TrainConfig",
    "TrainState",
    "LossRecord",
    "lr_at",
    "train_step",
    "fit",
    "save_train_state",
    "load_train_state",
    "load_generator",
    "LOSS_LOG_HEADER",
]

LOSS_LOG_HEADER = ["step", "L_D", "L_G_gan", "L_rec", "L_perc", "L_total"]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 2e-4
    epochs_const: int = 100
    epochs_decay: int = 100
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    image_size: int = 256
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    arch: ArchConfig = field(default_factory=ArchConfig)
    mask_tau: float = DEFAULT_TAU
    mask_dilate_radius: int = 0
    mu: float = 5000.0
    gamma: float = 2.2
    grad_clip: Optional[float] = None
    checkpoint_every: int = 50
    extractor_seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs_const < 1 or self.epochs_decay < 0:
            raise ValueError("need epochs_const >= 1 and epochs_decay >= 0")
        if self.batch_size < 1 or self.image_size < 1:
            raise ValueError("batch_size and image_size must be positive")
        if self.mu <= 0 or self.gamma <= 0:
            raise ValueError("mu and gamma must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.epochs_const + self.epochs_decay

    @property
    def mu_params(self) -> MuLawParams:
        return MuLawParams(self.mu)

    def to_flat_dict(self) -> dict:
        d = {
            k: v
            for k, v in self.__dict__.items()
            if k not in ("weights", "arch") and v is not None
        }
        d.update({"lambda1": self.weights.lambda1, "lambda2": self.weights.lambda2})
        d.update(self.arch.to_dict())
        return d

    @classmethod
    def from_flat_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        arch_fields = set(ArchConfig.__dataclass_fields__)
        arch_kwargs = {k: d.pop(k) for k in list(d) if k in arch_fields}
        weights = LossWeights(
            lambda1=d.pop("lambda1", LossWeights.lambda1),
            lambda2=d.pop("lambda2", LossWeights.lambda2),
        )
        known = set(cls.__dataclass_fields__) - {"weights", "arch"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(weights=weights, arch=ArchConfig(**arch_kwargs), **d)


class LossRecord(NamedTuple):
    step: int
    loss_d: float
    loss_g_gan: float
    loss_rec: float
    loss_perc: float
    loss_total: float


@dataclass
class TrainState:
    config: TrainConfig
    generator: GeneratorPipeline
    discriminator: PatchDiscriminator
    opt_g: optim.Adam
    opt_d: optim.Adam
    extractor: RandomFeaturePyramid
    mask_provider: ThresholdMaskProvider
    epoch: int = 0
    global_step: int = 0
    loss_history: list = field(default_factory=list)
    last_checkpoint: Optional[Path] = None

    HISTORY_LIMIT = 1000


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant lr0, then linear decay hitting exactly zero at the last epoch."""
    if epoch < 0 or epoch >= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    if epoch < cfg.epochs_const:
        return cfg.lr0
    return cfg.lr0 * (1.0 - (epoch - cfg.epochs_const + 1) / cfg.epochs_decay)


def new_train_state(cfg: TrainConfig) -> TrainState:
    """Seeded fresh state: G and D initialized from N(0, 0.02), biases zero."""
    torch.manual_seed(cfg.seed)
    generator = init_normal(GeneratorPipeline(cfg.arch), seed=cfg.seed)
    discriminator = init_normal(PatchDiscriminator(), seed=cfg.seed + 1)
    return TrainState(
        config=cfg,
        generator=generator,
        discriminator=discriminator,
        opt_g=_make_optimizer(generator, cfg),
        opt_d=_make_optimizer(discriminator, cfg),
        extractor=RandomFeaturePyramid(seed=cfg.extractor_seed),
        mask_provider=ThresholdMaskProvider(cfg.mask_tau, cfg.mask_dilate_radius),
    )


def _make_optimizer(module, cfg: TrainConfig) -> optim.Adam:
    return optim.Adam(
        module.parameters(),
        lr=cfg.lr0,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def _set_requires_grad(module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def batch_tensors(batch, mask_provider):
    """Stack a list of PairedSample into (ldr, hdr, alpha) NCHW tensors."""
    ldr = torch.from_numpy(np.stack([s.ldr.pixels for s in batch])).permute(0, 3, 1, 2)
    hdr = torch.from_numpy(np.stack([s.hdr.pixels for s in batch])).permute(0, 3, 1, 2)
    masks = [s.mask if s.mask is not None else mask_provider(s.ldr) for s in batch]
    alpha = torch.from_numpy(
        np.stack([m.values.astype(np.float32) for m in masks])
    ).unsqueeze(1)
    return ldr.contiguous(), hdr.contiguous(), alpha.contiguous()


def train_step(batch, state: TrainState, cfg: TrainConfig) -> LossRecord:
    """One alternating update: D on detached fakes, then G on fresh logits."""
    g, d = state.generator, state.discriminator
    g.train()
    d.train()
    x, h_gt, alpha = batch_tensors(batch, state.mask_provider)
    mu = cfg.mu_params

    outputs = g(x, alpha)
    t_fake = mu_tonemap_tensor(outputs.h_tilde, mu)
    t_real = mu_tonemap_tensor(h_gt, mu)

    # discriminator update; generator gradients blocked via detach
    state.opt_d.zero_grad(set_to_none=True)
    loss_d = gan_loss_d(d(x, t_real), d(x, t_fake.detach()))
    _check_finite("discriminator", loss_d, state)
    loss_d.backward()
    state.opt_d.step()

    # generator update; discriminator parameters frozen
    _set_requires_grad(d, False)
    state.opt_g.zero_grad(set_to_none=True)
    l_gan = gan_loss_g(d(x, t_fake))
    l_rec = rec_loss(outputs.h_tilde, h_gt, mu)
    l_perc = perceptual_loss(outputs.h_tilde, h_gt, state.extractor, mu)
    try:
        l_total = total_g_loss(l_gan, l_rec, l_perc, cfg.weights)
    except FloatingPointError as exc:
        raise DivergenceError(str(exc), last_checkpoint=state.last_checkpoint) from exc
    l_total.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(g.parameters(), cfg.grad_clip)
    state.opt_g.step()
    _set_requires_grad(d, True)

    state.global_step += 1
    record = LossRecord(
        step=state.global_step,
        loss_d=loss_d.item(),
        loss_g_gan=l_gan.item(),
        loss_rec=l_rec.item(),
        loss_perc=l_perc.item(),
        loss_total=l_total.item(),
    )
    state.loss_history.append(list(record))
    del state.loss_history[: -TrainState.HISTORY_LIMIT]
    return record


def _check_finite(name, loss, state: TrainState) -> None:
    if not torch.isfinite(loss).all():
        raise DivergenceError(
            f"non-finite {name} loss at step {state.global_step + 1}",
            last_checkpoint=state.last_checkpoint,
        )


def _batched(stream, size: int):
    batch = []
    for sample in stream:
        batch.append(sample)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def fit(
    manifest,
    cfg: TrainConfig,
    out_dir,
    resume_from=None,
    max_steps: Optional[int] = None,
    log_every: int = 1,
) -> Path:
    """Run the full schedule over the manifest; returns the final checkpoint.

    Samples are resized to ``cfg.image_size`` and shuffled with seed
    ``cfg.seed + epoch``, so the data order is a pure function of the config
    and resuming reproduces the uninterrupted run exactly.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = load_train_state(resume_from)
        if state.config.arch != cfg.arch:
            raise ConfigurationError("resume checkpoint architecture differs from config")
        state.config = cfg
    else:
        state = new_train_state(cfg)

    log_path = out_dir / "loss_log.csv"
    log_mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    with open(log_path, log_mode, newline="") as log_file:
        writer = csv.writer(log_file)
        if log_mode == "w":
            writer.writerow(LOSS_LOG_HEADER)
        stop = False
        while state.epoch < cfg.total_epochs and not stop:
            lr = lr_at(state.epoch, cfg)
            for group in state.opt_g.param_groups + state.opt_d.param_groups:
                group["lr"] = lr
            stream = iterate(manifest, resize_to=cfg.image_size, shuffle_seed=cfg.seed + state.epoch)
            for batch in _batched(stream, cfg.batch_size):
                record = train_step(batch, state, cfg)
                if record.step % log_every == 0:
                    writer.writerow(list(record))
                    log_file.flush()
                if max_steps is not None and state.global_step >= max_steps:
                    stop = True
                    break
            if not stop:
                state.epoch += 1
                if state.epoch % cfg.checkpoint_every == 0 and state.epoch < cfg.total_epochs:
                    path = out_dir / f"ckpt_epoch{state.epoch:04d}.ckpt"
                    save_train_state(state, path)

    final_path = out_dir / "final.ckpt"
    save_train_state(state, final_path)
    return final_path


# ---------------------------------------------------------------------------
# State serialization
# ---------------------------------------------------------------------------


def _optimizer_tensors(prefix: str, module, opt: optim.Adam) -> dict:
    tensors = {}
    for name, param in module.named_parameters():
        st = opt.state.get(param)
        if not st:
            continue
        tensors[f"{prefix}.{name}.step"] = np.array(st["step"].item(), dtype=np.float64)
        tensors[f"{prefix}.{name}.exp_avg"] = st["exp_avg"].detach().numpy()
        tensors[f"{prefix}.{name}.exp_avg_sq"] = st["exp_avg_sq"].detach().numpy()
    return tensors


def _restore_optimizer(prefix: str, module, opt: optim.Adam, tensors: dict) -> None:
    for name, param in module.named_parameters():
        key = f"{prefix}.{name}.step"
        if key not in tensors:
            continue
        opt.state[param] = {
            "step": torch.tensor(float(tensors[key])),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}.{name}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}.{name}.exp_avg_sq"].copy()),
        }


def save_train_state(state: TrainState, path) -> Path:
    path = Path(path)
    tensors = {}
    for name, param in state.generator.named_parameters():
        tensors[f"g.{name}"] = param.detach().numpy()
    for name, param in state.discriminator.named_parameters():
        tensors[f"d.{name}"] = param.detach().numpy()
    tensors.update(_optimizer_tensors("opt_g", state.generator, state.opt_g))
    tensors.update(_optimizer_tensors("opt_d", state.discriminator, state.opt_d))
    tensors["rng.torch"] = torch.get_rng_state().numpy()
    meta = {
        "arch": state.config.arch.to_dict(),
        "train_config": state.config.to_flat_dict(),
        "seed": state.config.seed,
        "epoch": state.epoch,
        "global_step": state.global_step,
        "loss_history": state.loss_history,
    }
    save_checkpoint(path, meta, tensors)
    state.last_checkpoint = path
    return path


def load_train_state(path) -> TrainState:
    meta, tensors = load_checkpoint(path)
    cfg = TrainConfig.from_flat_dict(meta["train_config"])
    state = new_train_state(cfg)
    _load_module_params("g", state.generator, tensors)
    _load_module_params("d", state.discriminator, tensors)
    _restore_optimizer("opt_g", state.generator, state.opt_g, tensors)
    _restore_optimizer("opt_d", state.discriminator, state.opt_d, tensors)
    torch.set_rng_state(torch.from_numpy(tensors["rng.torch"].copy()))
    state.epoch = int(meta["epoch"])
    state.global_step = int(meta["global_step"])
    state.loss_history = [list(r) for r in meta["loss_history"]]
    state.last_checkpoint = Path(path)
    return state


def _load_module_params(prefix: str, module, tensors: dict) -> None:
    params = dict(module.named_parameters())
    expected = {f"{prefix}.{n}" for n in params}
    present = {k for k in tensors if k.startswith(f"{prefix}.")}
    if expected - present:
        raise ConfigurationError(
            f"checkpoint is missing parameters: {sorted(expected - present)[:3]} ..."
        )
    with torch.no_grad():
        for name, param in params.items():
            saved = torch.from_numpy(tensors[f"{prefix}.{name}"].copy())
            if saved.shape != param.shape:
                raise ConfigurationError(
                    f"checkpoint/arch mismatch for {prefix}.{name}: "
                    f"{tuple(saved.shape)} vs {tuple(param.shape)}"
                )
            param.copy_(saved)


def load_generator(path):
    """Rebuild just the generator from a checkpoint; returns (model, meta)."""
    meta, tensors = load_checkpoint(path)
    arch = ArchConfig.from_dict(meta["arch"])
    generator = GeneratorPipeline(arch)
    _load_module_params("g", generator, tensors)
    generator.eval()
    return generator, meta
