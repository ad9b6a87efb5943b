import numpy as np
import pytest
import torch

from bevlayout.forecast import (ForecastConfig, RecurrentState, TrajectoryForecaster, fit_forecaster,
                                load_forecaster, precondition, rollout, save_forecaster)
from bevlayout.grid import GridSpec
from bevlayout.synth import straight_trajectory

SMALL = ForecastConfig(grid_spec=GridSpec(16.0, 16.0, 32, 32))


@pytest.fixture
def model():
    torch.manual_seed(0)
    return TrajectoryForecaster(SMALL)


def test_config_frame_counts():
    cfg = ForecastConfig()
    assert (cfg.precondition_frames, cfg.horizon_frames) == (10, 30)
    with pytest.raises(ValueError):
        ForecastConfig(frame_rate=0)
    with pytest.raises(ValueError):
        ForecastConfig(precondition_seconds=0.25)


def test_precondition_window_length(model):
    frames = np.zeros((10, 32, 32))
    state = precondition(frames, model)
    assert isinstance(state, RecurrentState)
    shapes = [h.shape for h, _ in state.memories]
    assert shapes == [(1, 8, 16, 16), (1, 16, 8, 8), (1, 32, 4, 4)]
    with pytest.raises(ValueError):
        precondition(np.zeros((9, 32, 32)), model)


def test_rollout_length_and_range(model, rng):
    state = precondition(rng.random((10, 32, 32)), model)
    out = rollout(state, model)
    assert out.shape == (1, 30, 1, 32, 32)
    assert torch.all(out > 0) and torch.all(out < 1)


def test_zero_state_zero_input_repeats_bias_output(model):
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)) and m.bias is not None:
                m.bias.zero_()
        model.dec1.bias.fill_(-2.0)
        y, state = model.step(torch.zeros(1, 1, 32, 32), model.zero_state(1))
        y2, _ = model.step(torch.zeros(1, 1, 32, 32), state)
    expected = torch.sigmoid(torch.tensor(-2.0))
    assert torch.allclose(y, expected) and torch.allclose(y2, expected)


def test_state_shapes_constant_over_time(model, rng):
    state = precondition(rng.random((10, 32, 32)), model)
    shapes = [(h.shape, c.shape) for h, c in state.memories]
    for _ in range(3):
        _, state = model.step(state.pending, state)
        assert [(h.shape, c.shape) for h, c in state.memories] == shapes


def test_static_context_switch(rng):
    cfg = ForecastConfig(grid_spec=SMALL.grid_spec, static_context=True)
    m = TrajectoryForecaster(cfg)
    state = precondition(rng.random((10, 32, 32)), m, static_layout=np.ones((32, 32)))
    assert rollout(state, m).shape == (1, 30, 1, 32, 32)
    with pytest.raises(ValueError):
        precondition(rng.random((10, 32, 32)), m)


def test_fit_save_load_round_trip(tmp_path):
    grids, _ = straight_trajectory(40, grid_spec=SMALL.grid_spec)
    m, losses = fit_forecaster(grids, SMALL, steps=4, teacher_steps=2)
    assert len(losses) == 4 and all(np.isfinite(losses))
    save_forecaster(tmp_path / "f.pt", m)
    back = load_forecaster(tmp_path / "f.pt")
    x = torch.as_tensor(np.stack([g.values[:, :, 0] for g in grids[:10]]))
    with torch.no_grad():
        assert torch.equal(rollout(precondition(x, m), m), rollout(precondition(x, back), back))
    with pytest.raises(ValueError):
        fit_forecaster(grids[:20], SMALL, steps=1)


# --- properties of the trained model ---------------------------------------------------------

@pytest.mark.slow
def test_feedback_path_carries_information(trained_forecaster):
    m, grids = trained_forecaster.model, trained_forecaster.trajectory
    cfg = m.config
    with torch.no_grad():
        base = rollout(precondition(grids[:10], m), m)
        gt5 = torch.as_tensor(grids[15].values[:, :, 0])
        probed = rollout(precondition(grids[:10], m), m, override={5: torch.zeros_like(gt5)})
        forced = rollout(precondition(grids[:10], m), m, override={5: gt5})
    assert not torch.equal(probed[0, 6], base[0, 6])
    assert not torch.equal(probed[0, 6], forced[0, 6])
    assert torch.equal(probed[0, :5], base[0, :5])
    assert cfg.horizon_frames == base.shape[1]


@pytest.mark.slow
def test_repeated_frame_state_converges(trained_forecaster):
    """Hidden-map deltas shrink monotonically after the third step when one frame is repeated."""
    m, grids = trained_forecaster.model, trained_forecaster.trajectory
    for idx in (0, 9, 20):
        x = torch.as_tensor(grids[idx].values[:, :, 0])[None, None]
        state = m.zero_state(1)
        prev = torch.cat([h.flatten() for h, _ in state.memories])
        deltas = []
        with torch.no_grad():
            for _ in range(15):
                _, state = m.step(x, state)
                cur = torch.cat([h.flatten() for h, _ in state.memories])
                deltas.append(float((cur - prev).norm()))
                prev = cur
        tail = deltas[3:]
        assert all(b < a for a, b in zip(tail, tail[1:])), deltas
