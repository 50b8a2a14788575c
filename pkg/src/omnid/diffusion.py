"""Conditional diffusion action head.

Forward noising:  a_t = sqrt(ab_t) * a_0 + sqrt(1 - ab_t) * eps
Training target:  mean squared error between eps and the denoiser output.
Sampling:         ancestral DDPM from pure noise down to a clean chunk,
                  clamped to the normalized action box [-1, 1].

The denoiser is a small residual temporal conv network over the action
chunk, modulated feature-wise by (timestep embedding (+) conditioning), with
plain concatenation available as an alternative conditioning mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensorgrad import Linear, Module, Tensor, concat, gelu
from .tensorgrad.nn import Conv2d
from .tensorgrad.rng import CounterRng

SCHEDULE_KINDS = ("squared-cosine", "linear-beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal fractions ab_t plus the per-step DDPM quantities.

    Arrays are length T + 1, indexed by timestep; entry 0 is the clean state
    (ab_0 = 1, beta_0 = 0).
    """

    kind: str
    steps: int
    alpha_bar: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)
    posterior_variance: np.ndarray = field(repr=False)


def build_schedule(kind: str, steps: int, cosine_offset: float = 0.008,
                   alpha_floor: float = 1e-3) -> NoiseSchedule:
    """Build a noise schedule of the given kind over ``steps`` timesteps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind == "squared-cosine":
        t = np.arange(steps + 1, dtype=np.float64)
        f = np.cos(((t / steps + cosine_offset) / (1.0 + cosine_offset)) * math.pi / 2.0) ** 2
        raw = f / f[0]
        alphas_step = np.clip(raw[1:] / raw[:-1], alpha_floor, None)
    elif kind == "linear-beta":
        betas_step = np.linspace(1e-4, 0.02, steps)
        alphas_step = 1.0 - betas_step
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; choose from {SCHEDULE_KINDS}")
    alphas = np.concatenate([[1.0], alphas_step])
    alpha_bar = np.cumprod(alphas)
    betas = 1.0 - alphas
    prev = alpha_bar[:-1]
    post = np.concatenate([[0.0], betas[1:] * (1.0 - prev) / (1.0 - alpha_bar[1:])])
    if not (np.all(np.diff(alpha_bar) < 0) and alpha_bar[0] == 1.0 and alpha_bar[-1] > 0):
        raise ValueError(f"degenerate schedule ({kind}, T={steps})")
    return NoiseSchedule(kind, steps, alpha_bar, alphas, betas, post)


def q_sample(schedule: NoiseSchedule, a0, t, eps):
    """Noise clean actions to step t (works on arrays or Tensors)."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.steps):
        raise ValueError(f"timestep {t} outside [0, {schedule.steps}]")
    ab = schedule.alpha_bar[t_arr]
    expand = (...,) + (None,) * (np.ndim(a0) - t_arr.ndim) if t_arr.ndim else ...
    signal = np.sqrt(ab)[expand] if t_arr.ndim else math.sqrt(ab)
    noise = np.sqrt(1.0 - ab)[expand] if t_arr.ndim else math.sqrt(1.0 - ab)
    if isinstance(a0, Tensor) or isinstance(eps, Tensor):
        a0 = a0 if isinstance(a0, Tensor) else Tensor(a0)
        eps = eps if isinstance(eps, Tensor) else Tensor(eps, dtype=a0.dtype)
        return a0 * signal + eps * noise
    out = signal * a0 + noise * eps
    return out.astype(np.asarray(a0).dtype, copy=False)


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half - 1, 1))
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class _FilmBlock(Module):
    """Residual temporal conv block with feature-wise scale/shift modulation."""

    def __init__(self, channels: int, ctx_dim: int, rng: CounterRng):
        self.conv_a = Conv2d(channels, channels, (1, 3), rng.split("a"), padding=(0, 1))
        self.conv_b = Conv2d(channels, channels, (1, 3), rng.split("b"), padding=(0, 1))
        # regular init: a zero-initialized modulation would leave the
        # conditioning path silent for most of a short training budget
        self.film = Linear(ctx_dim, 2 * channels, rng.split("film"))

    def __call__(self, x: Tensor, ctx: Tensor) -> Tensor:
        b, ch = x.shape[0], x.shape[1]
        mod = self.film(ctx)  # (B, 2*ch)
        scale = mod[:, :ch].reshape((b, ch, 1, 1))
        shift = mod[:, ch:].reshape((b, ch, 1, 1))
        h = self.conv_a(x)
        h = h * (scale + 1.0) + shift
        h = gelu(h)
        h = self.conv_b(h)
        return x + h


class Denoiser(Module):
    """Predicts the injected noise from (noisy chunk, timestep, conditioning)."""

    def __init__(self, action_dim: int, horizon: int, cond_dim: int,
                 rng: CounterRng, width: int = 128, blocks: int = 3,
                 time_dim: int = 64, cond_mode: str = "film", pos_dim: int = 8):
        if cond_mode not in ("film", "concat"):
            raise ValueError(f"cond_mode must be film or concat, got {cond_mode!r}")
        self.action_dim = action_dim
        self.horizon = horizon
        # fixed positional channels along the chunk: without them the network
        # cannot place phase boundaries when denoising from pure noise
        self.pos_dim = pos_dim
        self.pos_channels = timestep_embedding(np.arange(horizon), pos_dim).T \
            .reshape(1, pos_dim, 1, horizon)
        self.cond_dim = cond_dim
        self.width = width
        self.time_dim = time_dim
        self.cond_mode = cond_mode
        # per-dimension standardization of the conditioning with running
        # statistics (updated during training, frozen in the checkpoint):
        # task-relevant pooled features move a few dimensions by far less
        # than the spread across dimensions, so raw inputs would bury them
        self.cond_stat_mean = np.zeros(cond_dim)
        self.cond_stat_var = np.ones(cond_dim)
        self.cond_stat_momentum = 0.02
        self.cond_norm_gain = Tensor(np.ones(cond_dim), requires_grad=True)
        self.cond_norm_bias = Tensor(np.zeros(cond_dim), requires_grad=True)
        self.cond_proj = Linear(cond_dim, width, rng.split("cond"))
        self.time_proj = Linear(time_dim, width, rng.split("time"))
        in_ch = action_dim + pos_dim + (width if cond_mode == "concat" else 0)
        self.input_proj = Conv2d(in_ch, width, (1, 1), rng.split("in"))
        ctx_dim = 2 * width
        self.blocks = [_FilmBlock(width, ctx_dim, rng.split(f"block{i}"))
                       for i in range(blocks)]
        self.output_proj = Conv2d(width, action_dim, (1, 1), rng.split("out"),
                                  zero_init=True)

    def update_cond_stats(self, cond: np.ndarray) -> None:
        """Fold a training batch into the running conditioning statistics."""
        m = self.cond_stat_momentum
        self.cond_stat_mean = (1 - m) * self.cond_stat_mean + m * cond.mean(axis=0)
        self.cond_stat_var = (1 - m) * self.cond_stat_var + m * cond.var(axis=0)

    def buffer_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}cond_stat_mean": np.asarray(self.cond_stat_mean, dtype=np.float64),
                f"{prefix}cond_stat_var": np.asarray(self.cond_stat_var, dtype=np.float64)}

    def load_buffers(self, arrays: dict, prefix: str = "") -> None:
        self.cond_stat_mean = np.asarray(arrays[f"{prefix}cond_stat_mean"], dtype=np.float64)
        self.cond_stat_var = np.asarray(arrays[f"{prefix}cond_stat_var"], dtype=np.float64)

    def __call__(self, noisy: Tensor, t, cond: Tensor) -> Tensor:
        """noisy (B, H, action_dim), t int or (B,) ints, cond (B, cond_dim)."""
        b, h, ad = noisy.shape
        if ad != self.action_dim or h != self.horizon:
            raise ValueError(f"chunk shape {noisy.shape} does not match "
                             f"(_, {self.horizon}, {self.action_dim})")
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (b,))
        t_emb = Tensor(timestep_embedding(t_arr, self.time_dim).astype(noisy.dtype.type))
        t_feat = gelu(self.time_proj(t_emb))
        # variance floor: constant dims (e.g. never-observed voxels) would
        # otherwise amplify numerical dust by orders of magnitude
        var = np.maximum(self.cond_stat_var, 1e-4)
        scale = (1.0 / np.sqrt(var)).astype(noisy.dtype.type)
        shift = (-self.cond_stat_mean * scale).astype(noisy.dtype.type)
        cond_n = cond * scale + shift
        cond_n = cond_n * self.cond_norm_gain + self.cond_norm_bias
        c_feat = gelu(self.cond_proj(cond_n))
        ctx = concat([t_feat, c_feat], axis=1)
        x = noisy.transpose(0, 2, 1).reshape((b, ad, 1, h))
        pos = Tensor(np.broadcast_to(self.pos_channels,
                                     (b, self.pos_dim, 1, h)).astype(noisy.dtype.type))
        x = concat([x, pos], axis=1)
        if self.cond_mode == "concat":
            tiled = (c_feat.reshape((b, self.width, 1, 1))
                     * Tensor(np.ones((1, 1, 1, h), dtype=noisy.dtype.type)))
            x = concat([x, tiled], axis=1)
        x = self.input_proj(x)
        for block in self.blocks:
            x = block(x, ctx)
        out = self.output_proj(x)  # (B, ad, 1, H)
        return out.reshape((b, ad, h)).transpose(0, 2, 1)


def diffusion_loss(denoiser: Denoiser, schedule: NoiseSchedule, a0: np.ndarray,
                   cond: Tensor, rng: CounterRng, t=None, eps=None,
                   update_cond_stats: bool = False) -> Tensor:
    """Epsilon-prediction MSE over a batch of clean normalized chunks."""
    b = a0.shape[0]
    if t is None:
        t = rng.integers(schedule.steps, (b,)) + 1
    if eps is None:
        eps = rng.normal(a0.shape, dtype=a0.dtype)
    if update_cond_stats and hasattr(denoiser, "update_cond_stats"):
        denoiser.update_cond_stats(cond.numpy().astype(np.float64))
    noisy = q_sample(schedule, a0, t, eps)
    pred = denoiser(Tensor(noisy), t, cond)
    err = pred - Tensor(np.asarray(eps, dtype=noisy.dtype))
    return (err * err).mean()


def ddpm_sample(denoiser, schedule: NoiseSchedule, cond: Tensor,
                rng: CounterRng, zero_noise: bool = False,
                clip_denoised: bool = True) -> np.ndarray:
    """Ancestral DDPM sampling of one action chunk.

    Starts from pure Gaussian noise and walks t = T..1; the final output is
    clamped to the normalized box [-1, 1].  With ``zero_noise`` the injected
    noise is suppressed (deterministic mean recursion).

    ``clip_denoised`` clamps the implied clean chunk to the box each step
    before forming the posterior mean (the two mean forms are algebraically
    identical whenever the implied chunk is already in the box).
    """
    horizon, ad = denoiser.horizon, denoiser.action_dim
    if cond.ndim == 1:
        cond = cond.reshape((1, cond.shape[0]))
    a = rng.normal((horizon, ad))
    ab = schedule.alpha_bar
    for t in range(schedule.steps, 0, -1):
        eps_hat = denoiser(Tensor(a[None].astype(cond.dtype.type)), t, cond) \
            .numpy()[0].astype(np.float64)
        alpha_t = schedule.alphas[t]
        beta_t = schedule.betas[t]
        if clip_denoised:
            x0 = (a - math.sqrt(1.0 - ab[t]) * eps_hat) / math.sqrt(ab[t])
            x0 = np.clip(x0, -1.0, 1.0)
            mean = (beta_t * math.sqrt(ab[t - 1]) / (1.0 - ab[t])) * x0 \
                + ((1.0 - ab[t - 1]) * math.sqrt(alpha_t) / (1.0 - ab[t])) * a
        else:
            mean = (a - (beta_t / math.sqrt(1.0 - ab[t])) * eps_hat) \
                / math.sqrt(alpha_t)
        if t > 1 and not zero_noise:
            sigma = math.sqrt(schedule.posterior_variance[t])
            a = mean + sigma * rng.normal((horizon, ad))
        else:
            a = mean
    return np.clip(a, -1.0, 1.0)


class IdealDenoiser:
    """Closed-form optimal predictor for a point-mass data distribution at
    ``target``: eps_hat = (a_t - sqrt(ab_t) * target) / sqrt(1 - ab_t)."""

    def __init__(self, schedule: NoiseSchedule, target: np.ndarray):
        self.schedule = schedule
        self.target = np.asarray(target, dtype=np.float64)
        self.horizon, self.action_dim = self.target.shape

    def __call__(self, noisy: Tensor, t, cond: Tensor) -> Tensor:
        ab = self.schedule.alpha_bar[int(np.atleast_1d(t)[0])]
        eps = (noisy.numpy() - math.sqrt(ab) * self.target) / math.sqrt(1.0 - ab)
        return Tensor(eps, dtype=np.float64)


@dataclass(frozen=True)
class MinMaxNormalizer:
    """Per-dimension affine map onto [-1, 1] and back."""

    lo: np.ndarray
    hi: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0).astype(x.dtype)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return ((np.asarray(y) + 1.0) * 0.5 * (self.hi - self.lo) + self.lo)


class Policy:
    """Fusion + denoiser + normalization, acting with a receding horizon:
    predict ``horizon`` normalized actions, execute the first ``exec_steps``."""

    def __init__(self, fusion, denoiser, schedule: NoiseSchedule,
                 action_norm: MinMaxNormalizer, state_norm: MinMaxNormalizer,
                 obs_steps: int = 2, exec_steps: int = 8):
        self.fusion = fusion
        self.denoiser = denoiser
        self.schedule = schedule
        self.action_norm = action_norm
        self.state_norm = state_norm
        self.obs_steps = obs_steps
        self.exec_steps = exec_steps

    def conditioning(self, images: np.ndarray, states: np.ndarray) -> Tensor:
        norm_states = self.state_norm.normalize(states.astype(np.float64)).astype(images.dtype)
        return self.fusion.conditioning(Tensor(images[None]), Tensor(norm_states[None]))

    def act(self, images: np.ndarray, states: np.ndarray, rng: CounterRng,
            sample_schedule: NoiseSchedule | None = None) -> np.ndarray:
        """Observation window -> the executed slice of a denoised chunk.

        images (obs_steps, M, 3, H, W) in [0, 1]; states (obs_steps, sd) in
        raw units.  Returns (exec_steps, action_dim) raw actions.
        """
        if images.ndim != 5 or images.shape[0] != self.obs_steps \
                or states.shape != (self.obs_steps, self.state_norm.lo.shape[0]):
            raise ValueError(f"malformed observation window: images {images.shape}, "
                             f"states {states.shape}, expected {self.obs_steps} steps")
        cond = self.conditioning(images, states)
        chunk = ddpm_sample(self.denoiser, sample_schedule or self.schedule, cond, rng)
        return self.action_norm.denormalize(chunk)[:self.exec_steps]


def act(policy: Policy, images: np.ndarray, states: np.ndarray,
        rng: CounterRng) -> np.ndarray:
    return policy.act(images, states, rng)
