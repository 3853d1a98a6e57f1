"""Conditional denoising-diffusion policy over 4-D pick-and-place actions.

A small affine denoiser predicts the injected noise from the noisy action,
a sinusoidal timestep embedding and an observation embedding from a dedicated
encoder. Sampling runs the full reverse chain from a unit Gaussian with the
usual clipped x0 posterior step, so actions stay in bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError
from .nn import core
from .nn.core import Tape, Tensor
from .nn.layers import ParamStore, affine
from .nn.optim import adam_update

ACTION_DIM = 4


@dataclass
class DiffusionSchedule:
    """Linear beta schedule with precomputed alpha-bar products.

    The default betas are the canonical 1000-step (1e-4, 0.02) endpoints
    compressed into 50 steps (scaled by 1000/50), which keeps the terminal
    alpha-bar near zero so the reverse chain can start from a unit Gaussian.
    """

    steps: int = 50
    beta_start: float = 0.002
    beta_end: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError(f"invalid beta range ({self.beta_start}, {self.beta_end})")
        self.betas = np.linspace(self.beta_start, self.beta_end, self.steps)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)

    def sanity_report(self) -> dict:
        return {
            "terminal_alpha_bar": float(self.alpha_bar[-1]),
            "alpha_bar_strictly_decreasing": bool(np.all(np.diff(self.alpha_bar) < 0)),
            "betas_in_range": bool(np.all((self.betas > 0) & (self.betas < 1))),
        }


def schedule_sanity(schedule: DiffusionSchedule) -> dict:
    return schedule.sanity_report()


@dataclass
class DemoSet:
    """Flat (observation, action) pairs with trajectory provenance ids."""

    observations: np.ndarray   # (N, R, R) uint8 masks
    actions: np.ndarray        # (N, 4) in [-1, 1]
    trajectory_ids: np.ndarray  # (N,)

    def __post_init__(self):
        if len(self.observations) != len(self.actions):
            raise ValueError("observations/actions misaligned")
        if len(self.actions) and np.abs(self.actions).max() > 1.0 + 1e-9:
            raise ValueError("demo actions outside [-1, 1]")

    def __len__(self):
        return len(self.actions)


@dataclass
class DiffusionConfig:
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    hidden_width: int = 256
    hidden_layers: int = 3
    time_embed_dim: int = 16
    obs_embed_dim: int = 64
    obs_hidden: int = 128
    learning_rate: float = 1e-3
    batch_size: int = 64
    train_steps: int = 2000


class DiffusionPolicy:
    def __init__(self, config: DiffusionConfig | None = None,
                 obs_resolution: int = 32, store: ParamStore | None = None):
        self.config = config or DiffusionConfig()
        self.obs_resolution = obs_resolution
        self.store = store or ParamStore(seed=1)
        self._freqs = np.exp(
            np.linspace(0.0, np.log(1000.0), self.config.time_embed_dim // 2))
        self._build()

    def _build(self):
        dummy_obs = np.zeros((1, self.obs_resolution ** 2))
        e = self.encode_obs(dummy_obs)
        self.predict_noise(np.zeros((1, ACTION_DIM)), np.zeros(1, dtype=int), e)

    def time_embedding(self, t: np.ndarray) -> np.ndarray:
        """Sinusoidal features of the diffusion step index."""
        phase = np.asarray(t, dtype=np.float64)[:, None] * self._freqs[None, :] \
            / self.config.schedule.steps
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)

    def encode_obs(self, flat_masks) -> Tensor:
        x = core.as_tensor(flat_masks)
        h = core.elu(affine(self.store, x, "obsenc.l1", self.config.obs_hidden))
        return core.elu(affine(self.store, h, "obsenc.l2", self.config.obs_embed_dim))

    def predict_noise(self, noisy_actions, t, obs_embedding) -> Tensor:
        temb = self.time_embedding(t)
        h = core.concat([core.as_tensor(noisy_actions), core.as_tensor(temb),
                         core.as_tensor(obs_embedding)])
        for i in range(self.config.hidden_layers):
            h = core.elu(affine(self.store, h, f"denoise.l{i + 1}", self.config.hidden_width))
        return affine(self.store, h, "denoise.out", ACTION_DIM)

    def save(self, path: str):
        from .nn.checkpoint import save_params

        save_params(self.store.state_dict(), path)
        sched = self.config.schedule
        with open(f"{path}.meta", "w", encoding="utf-8") as fh:
            fh.write(f"steps = {sched.steps}\n")
            fh.write(f"beta_start = {sched.beta_start}\n")
            fh.write(f"beta_end = {sched.beta_end}\n")
            fh.write(f"obs_resolution = {self.obs_resolution}\n")

    @staticmethod
    def load(path: str) -> "DiffusionPolicy":
        from .nn.checkpoint import load_params

        meta = {}
        with open(f"{path}.meta", "r", encoding="utf-8") as fh:
            for line in fh:
                key, _, value = line.strip().partition("=")
                meta[key.strip()] = value.strip()
        schedule = DiffusionSchedule(
            steps=int(meta["steps"]), beta_start=float(meta["beta_start"]),
            beta_end=float(meta["beta_end"]))
        policy = DiffusionPolicy(DiffusionConfig(schedule=schedule),
                                 obs_resolution=int(meta["obs_resolution"]))
        policy.store.load_state_dict(load_params(path))
        return policy


def train_ddpm(demos: DemoSet, config: DiffusionConfig | None = None,
               rng: np.random.Generator | None = None,
               obs_resolution: int = 32, progress: bool = False) -> DiffusionPolicy:
    """Noise-prediction training on demonstration pairs; deterministic per rng."""
    if len(demos) == 0:
        raise InsufficientDataError("diffusion policy needs at least one demonstration pair")
    config = config or DiffusionConfig()
    rng = rng or np.random.default_rng(0)
    policy = DiffusionPolicy(config, obs_resolution=obs_resolution)
    sched = config.schedule
    flat_obs = demos.observations.reshape(len(demos), -1).astype(np.float64)
    acts = demos.actions.astype(np.float64)

    for step in range(1, config.train_steps + 1):
        idx = rng.integers(len(demos), size=min(config.batch_size, len(demos)))
        a0 = acts[idx]
        t = rng.integers(sched.steps, size=len(idx))
        eps = rng.standard_normal(a0.shape)
        ab = sched.alpha_bar[t][:, None]
        noisy = np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps

        policy.store.zero_grads()
        with Tape() as tape:
            emb = policy.encode_obs(flat_obs[idx])
            pred = policy.predict_noise(noisy, t, emb)
            loss = core.scale(core.total(core.square(core.sub(pred, eps))), 1.0 / len(idx))
            tape.backward(loss)
        adam_update(policy.store, policy.store.grads(), config.learning_rate)
        if progress and (step % 200 == 0 or step == 1):
            print("  ddpm step %5d  loss %.4f" % (step, float(loss.data)))
    return policy


def sample_action(policy: DiffusionPolicy, observation, rng: np.random.Generator) -> np.ndarray:
    """Full reverse diffusion from N(0, I); returns a 4-vector in [-1, 1]."""
    sched = policy.config.schedule
    flat = np.asarray(observation, dtype=np.float64).reshape(1, -1)
    emb = policy.encode_obs(flat)
    x = rng.standard_normal((1, ACTION_DIM))
    for t in range(sched.steps - 1, -1, -1):
        eps_hat = policy.predict_noise(x, np.array([t]), emb).data
        ab_t = sched.alpha_bar[t]
        ab_prev = sched.alpha_bar[t - 1] if t > 0 else 1.0
        beta_t = sched.betas[t]
        # clipped-x0 posterior step keeps the chain inside the action box
        x0 = np.clip((x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t), -1.0, 1.0)
        mean = (np.sqrt(ab_prev) * beta_t * x0
                + np.sqrt(sched.alphas[t]) * (1.0 - ab_prev) * x) / (1.0 - ab_t)
        if t > 0:
            var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
            x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
        else:
            x = mean
    return np.clip(x[0], -1.0, 1.0)
