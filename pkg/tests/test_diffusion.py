import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from ssdl.diffusion import (
    ALPHA_BAR_CLIP,
    NoiseSchedule,
    ancestral_sample,
    cosine_schedule,
    diffusion_loss,
    extraction_input,
    forward_sample,
    linear_schedule,
    recover_eps,
    recover_x0,
    velocity_target,
)


class TestSchedules:
    def test_cosine_endpoints(self):
        sched = cosine_schedule(50)
        assert sched.alpha_bar[0] >= 0.999
        assert sched.alpha_bar[-1] < 0.01

    def test_cosine_midpoint_oracle(self):
        # independent evaluation of the profile at grid point 25
        s = 0.008
        f = lambda u: math.cos(((u / 50 + s) / (1 + s)) * math.pi / 2) ** 2
        sched = cosine_schedule(50)
        assert float(sched.alpha_bar[25]) == pytest.approx(f(25) / f(0), rel=1e-12)
        assert float(sched.alpha_bar[25]) == pytest.approx(0.49384, abs=1e-4)

    def test_cosine_clipped(self):
        sched = cosine_schedule(50)
        assert torch.all(sched.alpha_bar >= ALPHA_BAR_CLIP)
        assert torch.all(sched.alpha_bar <= 1.0 - ALPHA_BAR_CLIP)
        assert float(sched.alpha_bar[0]) == 1.0 - ALPHA_BAR_CLIP

    def test_monotone_decreasing(self):
        for sched in (cosine_schedule(50), linear_schedule(50)):
            assert torch.all(sched.alpha_bar[1:] < sched.alpha_bar[:-1])

    def test_linear_matches_cumprod_oracle(self):
        sched = linear_schedule(10, beta_start=0.01, beta_end=0.1)
        betas = torch.linspace(0.01, 0.1, 10, dtype=torch.float64)
        expected = 1.0
        for t in range(10):
            expected *= 1.0 - float(betas[t])
            assert float(sched.alpha_bar[t]) == pytest.approx(expected, rel=1e-12)

    def test_derived_quantities(self):
        sched = cosine_schedule(50)
        assert torch.allclose(sched.sqrt_alpha_bar**2, sched.alpha_bar)
        assert torch.allclose(sched.sqrt_one_minus**2, 1.0 - sched.alpha_bar)
        # beta_t = 1 - ab_t / ab_{t-1}
        assert torch.allclose(
            sched.beta, 1.0 - sched.alpha_bar / sched.alpha_bar_prev
        )
        assert float(sched.alpha_bar_prev[0]) == 1.0
        assert float(sched.sigma2[0]) == 0.0  # no noise entering step 1

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            NoiseSchedule(torch.tensor([0.5, 0.6]))
        with pytest.raises(ValueError):
            NoiseSchedule(torch.tensor([1.5, 0.5]))
        with pytest.raises(ValueError):
            cosine_schedule(0)
        with pytest.raises(ValueError):
            linear_schedule(10, beta_start=0.5, beta_end=0.1)

    def test_gather_range_checks(self):
        sched = cosine_schedule(10)
        with pytest.raises(ValueError):
            sched.gather("alpha_bar", 0)
        with pytest.raises(ValueError):
            sched.gather("alpha_bar", 11)
        assert float(sched.gather("alpha_bar", 10)) == float(sched.alpha_bar[9])

    def test_dump_csv(self, tmp_path):
        sched = cosine_schedule(5)
        path = tmp_path / "sched.csv"
        sched.dump_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,alpha_bar,sqrt_alpha_bar,sigma"
        assert len(lines) == 6


class TestRecoveryIdentities:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 50), st.integers(0, 2**32 - 1))
    def test_roundtrip(self, t, seed):
        sched = cosine_schedule(50)
        gen = torch.Generator().manual_seed(seed)
        x0 = torch.randn(3, 16, generator=gen, dtype=torch.float64)
        eps = torch.randn(3, 16, generator=gen, dtype=torch.float64)
        xt = forward_sample(x0, t, eps, sched)
        v = velocity_target(x0, eps, t, sched)
        assert (recover_x0(xt, v, t, sched) - x0).abs().max() < 1e-6
        assert (recover_eps(xt, v, t, sched) - eps).abs().max() < 1e-6

    def test_per_example_steps(self):
        sched = cosine_schedule(50)
        gen = torch.Generator().manual_seed(0)
        x0 = torch.randn(4, 8, generator=gen, dtype=torch.float64)
        eps = torch.randn(4, 8, generator=gen, dtype=torch.float64)
        t = torch.tensor([1, 10, 25, 50])
        xt = forward_sample(x0, t, eps, sched)
        v = velocity_target(x0, eps, t, sched)
        assert (recover_x0(xt, v, t, sched) - x0).abs().max() < 1e-6

    def test_velocity_limits(self):
        # near t=1 velocity is mostly eps; near t=T mostly -x0
        sched = cosine_schedule(50)
        x0 = torch.ones(1, 4, dtype=torch.float64)
        eps = 2.0 * torch.ones(1, 4, dtype=torch.float64)
        v1 = velocity_target(x0, eps, 1, sched)
        vT = velocity_target(x0, eps, 50, sched)
        assert (v1 - eps).abs().max() < 0.01
        assert (vT + x0).abs().max() < 0.1


class _OracleModel(torch.nn.Module):
    """Predicts the exact velocity for a known x0 (pure noise removal)."""

    def __init__(self, x0, sched):
        super().__init__()
        self.x0 = x0
        self.sched = sched

    def forward(self, xt, t, channel_ids):
        sa = self.sched.gather("sqrt_alpha_bar", t).view(-1, 1).to(xt.dtype)
        sb = self.sched.gather("sqrt_one_minus", t).view(-1, 1).to(xt.dtype)
        # invert xt = sa x0 + sb eps for eps, then build v
        eps = (xt - sa * self.x0) / sb
        return sa * eps - sb * self.x0


class TestLossAndSampling:
    def test_loss_zero_for_oracle(self):
        sched = cosine_schedule(50)
        gen = torch.Generator().manual_seed(1)
        x0 = torch.randn(6, 32, generator=gen, dtype=torch.float64)
        model = _OracleModel(x0, sched)
        loss = diffusion_loss(model, x0, torch.zeros(6, dtype=torch.long), sched, generator=gen)
        assert float(loss) < 1e-20

    def test_loss_positive_for_zero_model(self):
        sched = cosine_schedule(50)
        gen = torch.Generator().manual_seed(2)
        x0 = torch.randn(6, 32, generator=gen)
        model = lambda xt, t, cids: torch.zeros_like(xt)
        loss = diffusion_loss(model, x0, torch.zeros(6, dtype=torch.long), sched, generator=gen)
        # E||v||^2 = E[ab |eps|^2 + (1-ab)|x0|^2] ~ 1 for unit-variance data
        assert 0.5 < float(loss) < 2.0

    def test_loss_rejects_empty(self):
        sched = cosine_schedule(10)
        with pytest.raises(ValueError):
            diffusion_loss(lambda *a: None, torch.zeros(0, 8), torch.zeros(0), sched)

    def test_ancestral_sample_oracle_recovers_x0(self):
        # with a perfect velocity model the sampler should land near x0
        sched = cosine_schedule(50)
        gen = torch.Generator().manual_seed(3)
        x0 = torch.randn(2, 16, generator=gen, dtype=torch.float64)
        model = _OracleModel(x0, sched)
        out = ancestral_sample(
            model, sched, (2, 16), torch.zeros(2, dtype=torch.long), generator=gen, dtype=torch.float64
        )
        assert (out - x0).abs().max() < 1e-2

    def test_ancestral_sample_deterministic_given_seed(self):
        sched = cosine_schedule(10)
        model = lambda xt, t, cids: torch.zeros_like(xt)
        a = ancestral_sample(model, sched, (1, 8), torch.zeros(1, dtype=torch.long),
                             generator=torch.Generator().manual_seed(4))
        b = ancestral_sample(model, sched, (1, 8), torch.zeros(1, dtype=torch.long),
                             generator=torch.Generator().manual_seed(4))
        assert torch.equal(a, b)


class TestExtractionInput:
    def test_none_mode(self):
        sched = cosine_schedule(50)
        x0 = torch.randn(2, 8)
        out, t = extraction_input(x0, "none", 5, sched)
        assert torch.equal(out, x0)
        assert t == 0

    def test_noiseless_mode(self):
        sched = cosine_schedule(50)
        x0 = torch.randn(2, 8, dtype=torch.float64)
        out, t = extraction_input(x0, "noiseless", 25, sched)
        assert t == 25
        assert torch.allclose(out, sched.sqrt_alpha_bar[24] * x0)

    def test_rejects_unknown_mode_and_bad_step(self):
        sched = cosine_schedule(50)
        with pytest.raises(ValueError):
            extraction_input(torch.zeros(1, 4), "fuzzy", 1, sched)
        with pytest.raises(ValueError):
            extraction_input(torch.zeros(1, 4), "noiseless", 0, sched)
