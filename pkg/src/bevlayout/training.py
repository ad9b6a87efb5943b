"""Alternating generator / discriminator optimisation."""
from __future__ import annotations

import ast
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .grid import LayoutGrid
from .losses import discriminator_loss, generator_adversarial_loss, supervised_loss
from .model import ModelConfig, LayoutNet, save_checkpoint
from .priors import sample_prior_layout

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """A loss became non-finite."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 200
    max_steps: int | None = None
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adversarial_enabled: bool = True
    adversarial_weight: float = 1.0
    static_weight: float = 1.0
    dynamic_weight: float = 1.0
    augment: bool = True
    hflip_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    prior_source: str = "template_bank"
    prior_dir: str | None = None
    width_divisor: int = 1
    static_channels: int = 2
    checkpoint_every: int = 0
    log_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def model_config(self) -> ModelConfig:
        return ModelConfig(width_divisor=self.width_divisor, static_channels=self.static_channels)


def _parse_value(text: str):
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        return text.strip()


def read_config(path: str | Path, **overrides) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments allowed) into a :class:`TrainConfig`.

    Keyword overrides that are not ``None`` take precedence over the file.
    """
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def write_config(path: str | Path, cfg: TrainConfig) -> None:
    with open(path, "w") as f:
        for k, v in asdict(cfg).items():
            f.write(f"{k} = {v!r}\n" if isinstance(v, str) else f"{k} = {v}\n")


@dataclass
class TrainingSample:
    image: np.ndarray  # (3, 512, 512) in [0, 1]
    static_gt: LayoutGrid
    dynamic_gt: LayoutGrid

    def __post_init__(self):
        if self.static_gt.spec != self.dynamic_gt.spec:
            raise ValueError("static and dynamic ground truth must share a grid spec")


def flip_sample(s: TrainingSample) -> TrainingSample:
    return TrainingSample(s.image[:, :, ::-1].copy(), s.static_gt.flip_lateral(), s.dynamic_gt.flip_lateral())


def color_jitter(image: np.ndarray, rng: np.random.Generator, brightness: float, contrast: float,
                 saturation: float) -> np.ndarray:
    img = image.astype(np.float32)
    if brightness:
        img = img * rng.uniform(1 - brightness, 1 + brightness)
    if contrast:
        mean = img.mean()
        img = (img - mean) * rng.uniform(1 - contrast, 1 + contrast) + mean
    if saturation:
        gray = img.mean(axis=0, keepdims=True)
        img = (img - gray) * rng.uniform(1 - saturation, 1 + saturation) + gray
    return np.clip(img, 0.0, 1.0)


def augment_sample(s: TrainingSample, rng: np.random.Generator, config: TrainConfig | None = None) -> TrainingSample:
    """Random lateral flip of image and grids together, then image-only colour jitter."""
    config = config or TrainConfig()
    if rng.random() < config.hflip_prob:
        s = flip_sample(s)
    image = color_jitter(s.image, rng, config.brightness, config.contrast, config.saturation)
    return TrainingSample(image, s.static_gt, s.dynamic_gt)


def collate(samples: Sequence[TrainingSample]):
    stack = lambda arrays: torch.from_numpy(np.ascontiguousarray(np.stack(arrays), dtype=np.float32))
    images = stack([s.image for s in samples])
    static = stack([s.static_gt.values.transpose(2, 0, 1) for s in samples])
    dynamic = stack([s.dynamic_gt.values.transpose(2, 0, 1) for s in samples])
    return images, static, dynamic


def make_optimizers(model: LayoutNet, config: TrainConfig):
    kw = dict(lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps)
    return torch.optim.Adam(model.generator_parameters(), **kw), torch.optim.Adam(model.discriminator_parameters(), **kw)


def _priors(kind: str, n: int, rng: np.random.Generator, config: TrainConfig, spec) -> torch.Tensor:
    grids = [sample_prior_layout(kind, rng, config.prior_source, spec, config.prior_dir) for _ in range(n)]
    return torch.from_numpy(np.stack([g.values[:, :, 0] for g in grids]))[:, None]


def train_step(batch: Sequence[TrainingSample], model: LayoutNet, optimizers, config: TrainConfig,
               rng: np.random.Generator) -> dict[str, float]:
    """One generator update followed by one update of each discriminator."""
    if not batch:
        raise ValueError("empty batch")
    opt_g, opt_d = optimizers
    model.train()
    images, gt_s, gt_d = collate(batch)
    pred_s, pred_d = model(images)
    l_sup = supervised_loss(pred_s, gt_s, pred_d, gt_d, config.static_weight, config.dynamic_weight)
    record = {"L_sup": float(l_sup.detach()), "L_adv": 0.0, "L_discr_static": 0.0, "L_discr_dynamic": 0.0}
    loss = l_sup
    if config.adversarial_enabled:
        # static discriminator judges the road channel only
        l_adv = generator_adversarial_loss(model.static_discriminator(pred_s[:, :1]),
                                           model.dynamic_discriminator(pred_d))
        record["L_adv"] = float(l_adv.detach())
        loss = loss + config.adversarial_weight * l_adv
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite generator loss: {record}")
    opt_g.zero_grad(set_to_none=True)
    loss.backward()
    opt_g.step()

    if config.adversarial_enabled:
        spec = batch[0].static_gt.spec
        real_s = _priors("static", len(batch), rng, config, spec)
        real_d = _priors("dynamic", len(batch), rng, config, spec)
        fake_s, fake_d = pred_s[:, :1].detach(), pred_d.detach()
        l_ds = discriminator_loss(model.static_discriminator(real_s), model.static_discriminator(fake_s))
        l_dd = discriminator_loss(model.dynamic_discriminator(real_d), model.dynamic_discriminator(fake_d))
        if not (torch.isfinite(l_ds) and torch.isfinite(l_dd)):
            raise DivergenceError(f"non-finite discriminator loss: {float(l_ds.detach())}, {float(l_dd.detach())}")
        opt_d.zero_grad(set_to_none=True)
        (l_ds + l_dd).backward()
        opt_d.step()
        record["L_discr_static"] = float(l_ds.detach())
        record["L_discr_dynamic"] = float(l_dd.detach())
    return record


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


class Trainer:
    """Owns the model, optimisers and RNG; the only writer of model parameters."""

    def __init__(self, config: TrainConfig, model: LayoutNet | None = None):
        self.config = config
        self.rng = seed_everything(config.seed)
        self.model = model or LayoutNet(config.model_config())
        self.optimizers = make_optimizers(self.model, config)
        self.step = 0
        self.history: list[dict[str, float]] = []

    def batches(self, samples: Sequence[TrainingSample]):
        n = len(samples)
        bs = min(self.config.batch_size, n)
        while True:
            order = self.rng.permutation(n)
            for i in range(0, n - bs + 1, bs):
                yield [samples[j] for j in order[i:i + bs]]

    def fit(self, samples: Sequence[TrainingSample], steps: int | None = None, out_dir: str | Path | None = None):
        cfg = self.config
        if steps is None:
            per_epoch = max(1, len(samples) // min(cfg.batch_size, len(samples)))
            steps = cfg.max_steps or cfg.epochs * per_epoch
        out = Path(out_dir) if out_dir else None
        logf = None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            write_config(out / "train.cfg", cfg)
            logf = open(out / "loss_log.txt", "a")
            if self.step == 0:
                logf.write("step L_sup L_adv L_discr_static L_discr_dynamic\n")
        try:
            batches = self.batches(samples)
            for _ in range(steps):
                batch = next(batches)
                if cfg.augment:
                    batch = [augment_sample(s, self.rng, cfg) for s in batch]
                rec = train_step(batch, self.model, self.optimizers, cfg, self.rng)
                self.step += 1
                rec["step"] = self.step
                self.history.append(rec)
                if logf:
                    logf.write(f"{self.step} {rec['L_sup']:.8g} {rec['L_adv']:.8g} "
                               f"{rec['L_discr_static']:.8g} {rec['L_discr_dynamic']:.8g}\n")
                if cfg.log_every and self.step % cfg.log_every == 0:
                    log.info("step %d  L_sup %.5f  L_adv %.5f  L_ds %.5f  L_dd %.5f", self.step,
                             rec["L_sup"], rec["L_adv"], rec["L_discr_static"], rec["L_discr_dynamic"])
                if out and cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    save_checkpoint(out / f"checkpoint_{self.step:06d}.pt", self.model,
                                    samples[0].static_gt.spec, extra={"step": self.step})
        finally:
            if logf:
                logf.close()
        if out:
            save_checkpoint(out / "checkpoint_final.pt", self.model, samples[0].static_gt.spec,
                            extra={"step": self.step})
        return self.history


@torch.no_grad()
def predict(model: LayoutNet, images: np.ndarray | torch.Tensor, batch_size: int = 4):
    """Eval-mode static and dynamic predictions as numpy arrays ``(N, O, 128, 128)``."""
    model.eval()
    images = torch.as_tensor(np.asarray(images, dtype=np.float32))
    outs_s, outs_d = [], []
    for i in range(0, len(images), batch_size):
        s, d = model(images[i:i + batch_size])
        outs_s.append(s.numpy())
        outs_d.append(d.numpy())
    return np.concatenate(outs_s), np.concatenate(outs_d)


def is_finite_history(history) -> bool:
    return all(math.isfinite(v) for rec in history for v in rec.values())
