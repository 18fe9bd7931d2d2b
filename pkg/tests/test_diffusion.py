"""Noise schedule, v-parameterization algebra, and sampling steps.

Oracles here recompute every quantity with plain Python floats and explicit
loops, independently of the tensor implementations.
"""
from __future__ import annotations

import math

import pytest
import torch

from scenefactor.diffusion import NoiseSchedule, denoise_step, inpaint_step, sample

DESK_T = 64


def scalar_tables(T: int, start: float = 1e-4, end: float = 2e-2,
                  ref: int = 1000) -> tuple[list, list, list]:
    """Python-float reference tables indexed 0..T (beta_0 = 0, abar_0 = 1)."""
    scale = ref / T
    betas = [0.0] + [(start + (end - start) * i / (T - 1)) * scale for i in range(T)]
    alphas = [1.0 - b for b in betas]
    abars = []
    p = 1.0
    for a in alphas:
        p *= a
        abars.append(p)
    return betas, alphas, abars


@pytest.fixture(scope="module")
def sched() -> NoiseSchedule:
    return NoiseSchedule(DESK_T)


# --------------------------------------------------------------- tables


def test_tables_match_scalar_recomputation(sched):
    betas, alphas, abars = scalar_tables(DESK_T)
    for t in range(DESK_T + 1):
        assert math.isclose(float(sched.betas[t]), betas[t], rel_tol=0, abs_tol=1e-12)
        assert math.isclose(float(sched.alphas[t]), alphas[t], rel_tol=0, abs_tol=1e-12)
        assert math.isclose(float(sched.alpha_bars[t]), abars[t], rel_tol=1e-12, abs_tol=1e-15)


def test_schedule_invariants(sched):
    betas = sched.betas[1:]
    assert float(betas.min()) > 0.0 and float(betas.max()) < 1.0
    assert bool((betas.diff() > 0).all()), "betas must increase strictly"
    assert float(sched.alpha_bars[0]) == 1.0
    assert float(sched.betas[0]) == 0.0
    assert bool((sched.alpha_bars.diff() < 0).all()), "alpha_bar must decrease strictly"


def test_constructor_rejects_bad_configs():
    with pytest.raises(ValueError):
        NoiseSchedule(10)  # terminal beta would reach 2.0
    with pytest.raises(ValueError):
        NoiseSchedule(1)
    with pytest.raises(ValueError):
        NoiseSchedule(64, beta_start=0.0)
    with pytest.raises(ValueError):
        NoiseSchedule(64, beta_start=0.02, beta_end=0.0001)


# ------------------------------------------------------- forward process


def test_forward_sample_boundary_cases(sched):
    g = torch.Generator().manual_seed(3)
    x0 = torch.randn((2, 3, 4, 2, 4), generator=g, dtype=torch.float64)
    eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    # t = 0 keeps the clean signal exactly.
    assert torch.equal(sched.forward_sample(x0, 0, torch.zeros_like(x0)), x0)
    assert torch.allclose(sched.forward_sample(x0, 0, eps), x0, atol=1e-12)
    # zero noise scales the signal by sqrt(alpha_bar_t).
    for t in (1, 17, DESK_T):
        ab = float(sched.alpha_bars[t])
        got = sched.forward_sample(x0, t, torch.zeros_like(x0))
        assert torch.allclose(got, math.sqrt(ab) * x0, atol=1e-12)


def test_forward_sample_matches_scalar_loop(sched):
    _, _, abars = scalar_tables(DESK_T)
    g = torch.Generator().manual_seed(11)
    x0 = torch.randn((5, 2, 2, 1, 2), generator=g, dtype=torch.float64)
    eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    ts = torch.tensor([1, 5, 23, 40, DESK_T])
    got = sched.forward_sample(x0, ts, eps)
    for b in range(5):
        ab = abars[int(ts[b])]
        for idx in range(x0[b].numel()):
            x = float(x0[b].reshape(-1)[idx])
            e = float(eps[b].reshape(-1)[idx])
            want = math.sqrt(ab) * x + math.sqrt(1.0 - ab) * e
            assert abs(float(got[b].reshape(-1)[idx]) - want) < 1e-7


def test_forward_sample_validates_inputs(sched):
    x0 = torch.zeros((1, 1, 2, 2, 2))
    with pytest.raises(ValueError):
        sched.forward_sample(x0, DESK_T + 1, torch.zeros_like(x0))
    with pytest.raises(ValueError):
        sched.forward_sample(x0, -1, torch.zeros_like(x0))
    with pytest.raises(ValueError):
        sched.forward_sample(x0, 3, torch.zeros((1, 1, 2, 2, 1)))


# ------------------------------------------------- v-parameterization


def test_v_parameterization_matches_scalar_loop(sched):
    _, _, abars = scalar_tables(DESK_T)
    g = torch.Generator().manual_seed(29)
    x0 = torch.randn((3, 1, 2, 2, 2), generator=g, dtype=torch.float64)
    eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    for t in (1, 9, 31, DESK_T):
        ab = abars[t]
        v = sched.v_from(x0, eps, t)
        x_t = sched.forward_sample(x0, t, eps)
        x0_rec = sched.x0_from(x_t, v, t)
        eps_rec = sched.eps_from(x_t, v, t)
        flat = [a.reshape(-1) for a in (x0, eps, v, x_t, x0_rec, eps_rec)]
        for i in range(flat[0].numel()):
            x, e = float(flat[0][i]), float(flat[1][i])
            want_v = math.sqrt(ab) * e - math.sqrt(1.0 - ab) * x
            xt = math.sqrt(ab) * x + math.sqrt(1.0 - ab) * e
            want_x0 = math.sqrt(ab) * xt - math.sqrt(1.0 - ab) * want_v
            want_eps = math.sqrt(1.0 - ab) * xt + math.sqrt(ab) * want_v
            assert abs(float(flat[2][i]) - want_v) < 1e-7
            assert abs(float(flat[4][i]) - want_x0) < 1e-7
            assert abs(float(flat[5][i]) - want_eps) < 1e-7


def test_v_inverses_round_trip_every_timestep(sched):
    g = torch.Generator().manual_seed(41)
    x0 = torch.randn((DESK_T, 2, 3, 2, 3), generator=g)
    eps = torch.randn(x0.shape, generator=g)
    ts = torch.arange(1, DESK_T + 1)
    x_t = sched.forward_sample(x0, ts, eps)
    v = sched.v_from(x0, eps, ts)
    assert torch.allclose(sched.x0_from(x_t, v, ts), x0, atol=1e-6)
    assert torch.allclose(sched.eps_from(x_t, v, ts), eps, atol=1e-6)


def test_terminal_statistics(sched):
    # After the full forward process a bounded signal is ~standard normal.
    g = torch.Generator().manual_seed(202)
    n = 100_000
    x0 = torch.rand((n,), generator=g, dtype=torch.float64) * 2.0 - 1.0
    eps = torch.randn((n,), generator=g, dtype=torch.float64)
    x_T = sched.forward_sample(x0, DESK_T, eps)
    assert abs(float(x_T.mean())) < 0.05
    assert abs(float(x_T.var()) - 1.0) < 0.05


def test_terminal_statistics_reference_length():
    long = NoiseSchedule(1000)
    g = torch.Generator().manual_seed(7)
    x0 = torch.rand((100_000,), generator=g, dtype=torch.float64) * 2.0 - 1.0
    eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
    x_T = long.forward_sample(x0, 1000, eps)
    assert abs(float(x_T.mean())) < 0.05
    assert abs(float(x_T.var()) - 1.0) < 0.05


# ------------------------------------------------------------ posterior


def test_posterior_coefficients_match_scalar_loop(sched):
    betas, alphas, abars = scalar_tables(DESK_T)
    for t in range(1, DESK_T + 1):
        c0, cx, var = sched.posterior_coefficients(t)
        want_c0 = math.sqrt(abars[t - 1]) * betas[t] / (1.0 - abars[t])
        want_cx = math.sqrt(alphas[t]) * (1.0 - abars[t - 1]) / (1.0 - abars[t])
        want_var = (1.0 - abars[t - 1]) / (1.0 - abars[t]) * betas[t]
        assert abs(float(c0) - want_c0) < 1e-12
        assert abs(float(cx) - want_cx) < 1e-12
        assert abs(float(var) - want_var) < 1e-12
    with pytest.raises(ValueError):
        sched.posterior_coefficients(0)


# -------------------------------------------------------- denoise steps


def _fixed_model(v: torch.Tensor):
    def model(x_t, t, cond):
        return v.to(x_t.dtype).expand(x_t.shape)
    return model


def test_denoise_step_matches_scalar_oracle(sched):
    betas, alphas, abars = scalar_tables(DESK_T)
    g = torch.Generator().manual_seed(5)
    x_t = torch.randn((1, 1, 2, 1, 2), generator=g, dtype=torch.float64)
    v = torch.randn(x_t.shape, generator=g, dtype=torch.float64)
    for t in (1, 13, DESK_T):
        got = denoise_step(_fixed_model(v), sched, x_t, t,
                           generator=torch.Generator().manual_seed(99))
        noise = torch.randn(x_t.shape, generator=torch.Generator().manual_seed(99),
                            dtype=torch.float64)
        ab, abp = abars[t], abars[t - 1]
        for i in range(x_t.numel()):
            x = float(x_t.reshape(-1)[i])
            vv = float(v.reshape(-1)[i])
            x0 = math.sqrt(ab) * x - math.sqrt(1.0 - ab) * vv
            mean = (math.sqrt(abp) * betas[t] / (1.0 - ab) * x0
                    + math.sqrt(alphas[t]) * (1.0 - abp) / (1.0 - ab) * x)
            if t == 1:
                want = mean
            else:
                sigma = math.sqrt((1.0 - abp) / (1.0 - ab) * betas[t])
                want = mean + sigma * float(noise.reshape(-1)[i])
            assert abs(float(got.reshape(-1)[i]) - want) < 1e-7


def test_final_denoise_step_is_deterministic(sched):
    x_1 = torch.randn((2, 1, 2, 2, 2), generator=torch.Generator().manual_seed(1))
    v = torch.randn(x_1.shape, generator=torch.Generator().manual_seed(2))
    a = denoise_step(_fixed_model(v), sched, x_1, 1,
                     generator=torch.Generator().manual_seed(10))
    b = denoise_step(_fixed_model(v), sched, x_1, 1,
                     generator=torch.Generator().manual_seed(999))
    assert torch.equal(a, b)


def test_denoise_step_rejects_bad_timesteps(sched):
    x = torch.zeros((1, 1, 2, 2, 2))
    model = _fixed_model(torch.zeros_like(x))
    with pytest.raises(ValueError):
        denoise_step(model, sched, x, 0)
    with pytest.raises(ValueError):
        denoise_step(model, sched, x, DESK_T + 1)

    def bad_model(x_t, t, cond):
        return torch.zeros((1, 1, 2, 2, 1))

    with pytest.raises(ValueError):
        denoise_step(bad_model, sched, x, 3)


# ------------------------------------------------------------ inpainting


def test_zero_mask_reproduces_denoise_step(sched):
    g1 = torch.Generator().manual_seed(77)
    g2 = torch.Generator().manual_seed(77)
    x_t = torch.randn((1, 2, 2, 2, 2), generator=torch.Generator().manual_seed(4))
    v = torch.randn(x_t.shape, generator=torch.Generator().manual_seed(6))
    known = torch.randn(x_t.shape, generator=torch.Generator().manual_seed(8))
    for t in (DESK_T, 30, 1):
        plain = denoise_step(_fixed_model(v), sched, x_t, t, generator=g1)
        masked = inpaint_step(_fixed_model(v), sched, x_t, t, known,
                              torch.zeros_like(x_t), generator=g2)
        assert torch.equal(plain, masked)
        # realign streams (the masked call draws once more per step at t > 1)
        if t > 1:
            torch.randn(x_t.shape, generator=g1)


def test_full_mask_final_step_returns_known_exactly(sched):
    x_1 = torch.randn((1, 1, 4, 2, 4), generator=torch.Generator().manual_seed(12))
    known = torch.randn(x_1.shape, generator=torch.Generator().manual_seed(13))
    out = inpaint_step(_fixed_model(torch.zeros_like(x_1)), sched, x_1, 1, known,
                       torch.ones_like(x_1), generator=torch.Generator().manual_seed(14))
    assert torch.equal(out, known)


def test_inpaint_step_rejects_fractional_mask(sched):
    x = torch.zeros((1, 1, 2, 2, 2))
    with pytest.raises(ValueError):
        inpaint_step(_fixed_model(torch.zeros_like(x)), sched, x, 5, x,
                     torch.full_like(x, 0.5))
    with pytest.raises(ValueError):
        inpaint_step(_fixed_model(torch.zeros_like(x)), sched, x, 5,
                     torch.zeros((1, 1, 2, 2, 1)), torch.zeros_like(x))


def test_inpaint_step_statistics_match_target_distributions(sched):
    """Monte-Carlo audit of the mask composition at a mid-trajectory step.

    Known cells must follow N(sqrt(abar_{t-1}) * known, 1 - abar_{t-1});
    unknown cells (with a zero-v model) follow the analytic posterior of
    x0_hat = sqrt(abar_t) * x_t.  Means and variances of 10^4 draws must sit
    within 3 standard errors.
    """
    t = 40
    draws = 10_000
    betas, alphas, abars = scalar_tables(DESK_T)
    ab, abp = abars[t], abars[t - 1]
    cell = torch.tensor([[0.7, -0.4], [1.3, 0.2]]).reshape(1, 1, 2, 2, 1)
    known_cell = torch.tensor([[-1.1, 0.6], [0.3, 2.0]]).reshape(1, 1, 2, 2, 1)
    mask_cell = torch.tensor([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2, 1)
    x_t = cell.expand(draws, 1, 2, 2, 1)
    known = known_cell.expand(draws, 1, 2, 2, 1)
    mask = mask_cell.expand(draws, 1, 2, 2, 1)
    out = inpaint_step(_fixed_model(torch.zeros(1, 1, 2, 2, 1)), sched, x_t, t,
                       known, mask, generator=torch.Generator().manual_seed(555))
    mean_se = 3.0 / math.sqrt(draws)
    var_rel = 3.0 * math.sqrt(2.0 / (draws - 1))
    post_var = (1.0 - abp) / (1.0 - ab) * betas[t]
    for i in range(4):
        m = float(mask_cell.reshape(-1)[i])
        got_mean = float(out.reshape(draws, 4)[:, i].mean())
        got_var = float(out.reshape(draws, 4)[:, i].var())
        if m == 1.0:
            want_mean = math.sqrt(abp) * float(known_cell.reshape(-1)[i])
            want_var = 1.0 - abp
        else:
            x = float(cell.reshape(-1)[i])
            x0 = math.sqrt(ab) * x
            want_mean = (math.sqrt(abp) * betas[t] / (1.0 - ab) * x0
                         + math.sqrt(alphas[t]) * (1.0 - abp) / (1.0 - ab) * x)
            want_var = post_var
        assert abs(got_mean - want_mean) < mean_se * math.sqrt(want_var)
        assert abs(got_var - want_var) < var_rel * want_var


def test_masked_cells_ignore_latent_perturbations(sched):
    """Composed output in known cells depends only on known signal + rng."""
    shape = (1, 2, 4, 2, 4)
    x_t = torch.randn(shape, generator=torch.Generator().manual_seed(21))
    known = torch.randn(shape, generator=torch.Generator().manual_seed(22))
    mask = (torch.rand(shape, generator=torch.Generator().manual_seed(23)) < 0.5).float()

    def model(x, t, cond):  # spatially coupled so masked-cell perturbations
        # would leak into unmasked outputs if the composition were wrong
        return torch.tanh(x) * 0.3 + 0.05 * x.mean(dim=(1, 2, 3, 4), keepdim=True)

    x_perturbed = x_t + mask * torch.randn(shape, generator=torch.Generator().manual_seed(24))
    for t in (50, 2, 1):
        a = inpaint_step(model, sched, x_t, t, known, mask,
                         generator=torch.Generator().manual_seed(31))
        b = inpaint_step(model, sched, x_perturbed, t, known, mask,
                         generator=torch.Generator().manual_seed(31))
        assert torch.equal(a[mask.bool()], b[mask.bool()])
        if t > 1:  # unmasked cells did change, so the test is not vacuous
            assert not torch.allclose(a[~mask.bool()], b[~mask.bool()])


# ------------------------------------------------------------- full loop


def test_sample_is_deterministic_under_seed(sched):
    model = _fixed_model(torch.zeros((2, 1, 4, 2, 4)))
    a = sample(model, sched, (2, 1, 4, 2, 4), generator=torch.Generator().manual_seed(9))
    b = sample(model, sched, (2, 1, 4, 2, 4), generator=torch.Generator().manual_seed(9))
    c = sample(model, sched, (2, 1, 4, 2, 4), generator=torch.Generator().manual_seed(10))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
    assert bool(torch.isfinite(a).all())


def test_sample_all_zero_mask_equals_unmasked_loop(sched):
    model = _fixed_model(torch.zeros((1, 1, 2, 2, 2)))
    shape = (1, 1, 2, 2, 2)
    a = sample(model, sched, shape, generator=torch.Generator().manual_seed(40))
    b = sample(model, sched, shape, known=torch.ones(shape), mask=torch.zeros(shape),
               generator=torch.Generator().manual_seed(40))
    assert torch.equal(a, b)


def test_sample_pins_masked_region_to_known(sched):
    shape = (1, 1, 4, 2, 4)
    known = torch.randn(shape, generator=torch.Generator().manual_seed(50))
    mask = torch.zeros(shape)
    mask[..., :2, :, :] = 1.0

    def model(x, t, cond):
        return torch.tanh(x) * 0.1

    out = sample(model, sched, shape, known=known, mask=mask,
                 generator=torch.Generator().manual_seed(51))
    assert torch.equal(out[mask.bool()], known[mask.bool()])
    assert bool(torch.isfinite(out).all())


def test_sample_requires_known_with_mask(sched):
    model = _fixed_model(torch.zeros((1, 1, 2, 2, 2)))
    with pytest.raises(ValueError):
        sample(model, sched, (1, 1, 2, 2, 2), mask=torch.ones((1, 1, 2, 2, 2)))


def test_sampling_recovers_two_mode_distribution(sched):
    """Ancestral sampling with the exact Bayes denoiser lands on the data.

    For a two-point dataset the posterior-optimal v prediction is available
    in closed form; running the full reverse loop must concentrate samples
    tightly around the two modes and visit both about equally often.
    """
    d = 8
    modes = torch.stack([torch.full((d,), 0.8), torch.full((d,), -0.8)]).double()

    def bayes_model(x_t, t, cond):
        ab = sched.alpha_bars[t[0]].to(x_t.dtype)
        flat = x_t.reshape(x_t.shape[0], -1)
        sq = ((flat.unsqueeze(1) - ab.sqrt() * modes.unsqueeze(0)) ** 2).sum(-1)
        w = torch.softmax(-sq / (2.0 * (1.0 - ab)), dim=1)
        x0_hat = w @ modes
        v = (ab.sqrt() * flat - x0_hat) / (1.0 - ab).sqrt()
        return v.reshape(x_t.shape)

    n = 200
    out = sample(bayes_model, sched, (n, 1, 2, 2, 2), dtype=torch.float64,
                 generator=torch.Generator().manual_seed(777))
    flat = out.reshape(n, d)
    dist = torch.cdist(flat, modes)
    nearest = dist.min(dim=1)
    rms = nearest.values / math.sqrt(d)
    assert float((rms < 0.15).float().mean()) >= 0.95
    counts = torch.bincount(nearest.indices, minlength=2)
    assert int(counts.min()) >= 40
