"""Convolutional-LSTM trajectory forecasting over vehicle occupancy grids.

An encoder-decoder with a ConvLSTM at the bottleneck and one on each skip
connection. The network is first preconditioned on observed grids, then
rolled out autoregressively: every prediction is the next step's input.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .grid import GridSpec, LayoutGrid


@dataclass
class ForecastConfig:
    precondition_seconds: float = 1.0
    horizon_seconds: float = 3.0
    frame_rate: float = 10.0
    grid_spec: GridSpec = field(default_factory=GridSpec)
    static_context: bool = False  # append the static layout as a second input channel
    widths: tuple[int, int, int] = (8, 16, 32)

    def __post_init__(self):
        if min(self.precondition_seconds, self.horizon_seconds, self.frame_rate) <= 0:
            raise ValueError("forecast durations and frame rate must be positive")
        for name in ("precondition_seconds", "horizon_seconds"):
            n = getattr(self, name) * self.frame_rate
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"{name} x frame_rate must be a whole number of frames")

    @property
    def precondition_frames(self) -> int:
        return int(round(self.precondition_seconds * self.frame_rate))

    @property
    def horizon_frames(self) -> int:
        return int(round(self.horizon_seconds * self.frame_rate))


class ConvLSTMCell(nn.Module):
    def __init__(self, channels: int, hidden: int, kernel: int = 3):
        super().__init__()
        self.hidden = hidden
        self.gates = nn.Conv2d(channels + hidden, 4 * hidden, kernel, padding=kernel // 2)

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c


@dataclass
class RecurrentState:
    """Memory of every ConvLSTM (skip 1, skip 2, bottleneck) plus the pending prediction."""

    memories: list[tuple[torch.Tensor, torch.Tensor]]
    pending: torch.Tensor  # prediction for the next frame, (B, 1, H, W)
    context: torch.Tensor | None = None  # static layout channel, when configured

    def check(self):
        for h, c in self.memories:
            if not (torch.isfinite(h).all() and torch.isfinite(c).all()):
                raise FloatingPointError("non-finite recurrent state")


class TrajectoryForecaster(nn.Module):
    def __init__(self, config: ForecastConfig | None = None):
        super().__init__()
        self.config = config or ForecastConfig()
        c1, c2, c3 = self.config.widths
        cin = 2 if self.config.static_context else 1
        self.enc1 = nn.Sequential(nn.Conv2d(cin, c1, 3, 2, 1, bias=False), nn.LeakyReLU(0.1))
        self.enc2 = nn.Sequential(nn.Conv2d(c1, c2, 3, 2, 1, bias=False), nn.LeakyReLU(0.1))
        self.enc3 = nn.Sequential(nn.Conv2d(c2, c3, 3, 2, 1, bias=False), nn.LeakyReLU(0.1))
        self.lstm1 = ConvLSTMCell(c1, c1)
        self.lstm2 = ConvLSTMCell(c2, c2)
        self.lstm3 = ConvLSTMCell(c3, c3)
        self.dec3 = nn.Sequential(nn.ConvTranspose2d(c3, c2, 4, 2, 1), nn.LeakyReLU(0.1))
        self.dec2 = nn.Sequential(nn.ConvTranspose2d(2 * c2, c1, 4, 2, 1), nn.LeakyReLU(0.1))
        self.dec1 = nn.ConvTranspose2d(2 * c1, 1, 4, 2, 1)

    def zero_state(self, batch: int = 1, context: torch.Tensor | None = None) -> RecurrentState:
        spec = self.config.grid_spec
        H, W = spec.rows, spec.cols
        mems = []
        for cell, s in ((self.lstm1, 2), (self.lstm2, 4), (self.lstm3, 8)):
            z = torch.zeros(batch, cell.hidden, H // s, W // s)
            mems.append((z, z.clone()))
        return RecurrentState(mems, torch.zeros(batch, 1, H, W), context)

    def step(self, x: torch.Tensor, state: RecurrentState):
        """Consume one input grid ``(B, 1, H, W)``; return the next-frame prediction and state."""
        if self.config.static_context:
            if state.context is None:
                raise ValueError("static_context is enabled but no static layout was given")
            x = torch.cat([x, state.context], dim=1)
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        m1 = self.lstm1(e1, state.memories[0])
        m2 = self.lstm2(e2, state.memories[1])
        m3 = self.lstm3(e3, state.memories[2])
        d = self.dec3(m3[0])
        d = self.dec2(torch.cat([d, m2[0]], dim=1))
        y = torch.sigmoid(self.dec1(torch.cat([d, m1[0]], dim=1)))
        new = RecurrentState([m1, m2, m3], y, state.context)
        return y, new


def _as_batch(frames) -> torch.Tensor:
    """Accept a list of LayoutGrids, an array (T, H, W) / (T, 1, H, W) or (B, T, 1, H, W)."""
    if isinstance(frames, (list, tuple)) and frames and isinstance(frames[0], LayoutGrid):
        frames = np.stack([g.values[:, :, 0] for g in frames])
    x = torch.as_tensor(np.asarray(frames, dtype=np.float32)) if not isinstance(frames, torch.Tensor) else frames
    if x.dim() == 3:
        x = x[:, None]
    if x.dim() == 4:
        x = x[None]
    return x.float()


def precondition(frames, model: TrajectoryForecaster, config: ForecastConfig | None = None,
                 static_layout=None) -> RecurrentState:
    """Feed the observation window in order; the returned state holds the first forecast."""
    config = config or model.config
    x = _as_batch(frames)
    if x.shape[1] != config.precondition_frames:
        raise ValueError(f"expected {config.precondition_frames} observed frames "
                         f"({config.precondition_seconds} s at {config.frame_rate} fps), got {x.shape[1]}")
    ctx = None
    if static_layout is not None:
        ctx = torch.as_tensor(np.asarray(static_layout, dtype=np.float32)).reshape(1, 1, *x.shape[-2:])
        ctx = ctx.expand(x.shape[0], -1, -1, -1)
    state = model.zero_state(x.shape[0], ctx)
    for t in range(x.shape[1]):
        _, state = model.step(x[:, t], state)
    state.check()
    return state


def rollout(state: RecurrentState, model: TrajectoryForecaster, config: ForecastConfig | None = None,
            override: dict[int, torch.Tensor] | None = None) -> torch.Tensor:
    """Autoregressive forecast of ``horizon_frames`` grids, shape ``(B, T, 1, H, W)``.

    ``override`` replaces the output of the given steps before it is fed
    back, which is how the feedback path is probed.
    """
    config = config or model.config
    outputs = []
    y = state.pending
    for k in range(config.horizon_frames):
        if override and k in override:
            y = torch.as_tensor(override[k], dtype=y.dtype).reshape(y.shape)
        outputs.append(y)
        if k + 1 < config.horizon_frames:
            y, state = model.step(y, state)
            state.check()
    out = torch.stack(outputs, dim=1)
    if not torch.isfinite(out).all():
        raise FloatingPointError("non-finite forecast")
    return out


def forecast_loss(pred: torch.Tensor, target: torch.Tensor, pos_weight: float = 1.0) -> torch.Tensor:
    eps = 1e-6
    p = pred.clamp(eps, 1 - eps)
    return -(pos_weight * target * torch.log(p) + (1 - target) * torch.log(1 - p)).mean()


def fit_forecaster(trajectories, config: ForecastConfig | None = None, steps: int = 500, lr: float = 3e-3,
                   seed: int = 0, pos_weight: float = 1.0, teacher_steps: int | None = None,
                   log=None) -> tuple[TrajectoryForecaster, list[float]]:
    """Fit on ``(B, T, 1, H, W)`` trajectories.

    The first ``teacher_steps`` updates (default: half of ``steps``) are
    teacher-forced one-step predictions over the whole trajectory; the rest
    train through the full precondition + free-running rollout. Starting
    directly with the rollout leaves the network stuck at a constant output.
    """
    config = config or ForecastConfig()
    torch.manual_seed(seed)
    model = TrajectoryForecaster(config)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    data = _as_batch(trajectories)
    P, T = config.precondition_frames, config.horizon_frames
    if data.shape[1] < P + T:
        raise ValueError(f"trajectories need {P + T} frames, got {data.shape[1]}")
    data = data[:, :P + T]
    obs, future = data[:, :P], data[:, P:]
    teacher_steps = steps // 2 if teacher_steps is None else teacher_steps
    losses = []
    for i in range(steps):
        if i < teacher_steps:
            state = model.zero_state(data.shape[0])
            preds = []
            for t in range(P + T - 1):
                y, state = model.step(data[:, t], state)
                preds.append(y)
            loss = forecast_loss(torch.stack(preds, dim=1), data[:, 1:], pos_weight)
        else:
            loss = forecast_loss(rollout(precondition(obs, model, config), model, config), future, pos_weight)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log and (i + 1) % 50 == 0:
            log(i + 1, losses[-1])
    return model, losses


def save_forecaster(path: str | Path, model: TrajectoryForecaster) -> None:
    cfg = asdict(model.config)
    torch.save({"config": cfg, "state_dict": model.state_dict()}, path)


def load_forecaster(path: str | Path) -> TrajectoryForecaster:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = dict(blob["config"])
    cfg["grid_spec"] = GridSpec(**cfg["grid_spec"])
    cfg["widths"] = tuple(cfg["widths"])
    model = TrajectoryForecaster(ForecastConfig(**cfg))
    model.load_state_dict(blob["state_dict"])
    return model
