"""Goal-conditioned recurrent state-space model.

One shared encoder embeds both the current observation and the goal mask.
The recurrent core carries a deterministic state h; the stochastic state z is
inferred from (h, e_x, e_g) by the posterior head or predicted from (h, e_g)
by the prior head. Decoders reconstruct mask logits and a Gaussian reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DimensionError
from ..nn import core
from ..nn.layers import ParamStore, affine, gaussian_head, gru_cell
from ..nn.core import Tensor


@dataclass
class RSSMConfig:
    deterministic_dim: int = 128
    stochastic_dim: int = 32
    hidden_dim: int = 128
    obs_resolution: int = 32
    action_dim: int = 4
    min_std: float = 0.1
    kl_scale: float = 1.0
    free_nats: float = 3.0
    overshoot_horizon: int = 3
    overshoot_scale: float = 1.0
    learning_rate: float = 3e-4
    batch_size: int = 16
    sequence_length: int = 8
    goal_conditioned: bool = True     # False: plain variant with zeroed goal embedding
    grad_clip: float = 100.0
    goal_translate_std: float = 0.2

    def __post_init__(self):
        if min(self.deterministic_dim, self.stochastic_dim, self.hidden_dim) <= 0:
            raise ValueError("latent dimensions must be positive")
        if self.overshoot_horizon < 0 or self.free_nats < 0:
            raise ValueError("overshoot_horizon and free_nats must be nonnegative")

    @staticmethod
    def paper_preset() -> "RSSMConfig":
        return RSSMConfig(deterministic_dim=300, stochastic_dim=60, hidden_dim=300)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "RSSMConfig":
        cfg = RSSMConfig()
        for key, value in d.items():
            if not hasattr(cfg, key):
                raise DimensionError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                value = bool(int(value)) if not isinstance(value, bool) else value
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(cfg, key, value)
        return cfg


@dataclass
class LatentState:
    h: Tensor            # (B, D) deterministic state
    z: Tensor            # (B, S) stochastic state sample
    mean: Tensor         # parameters of the distribution z was drawn from
    std: Tensor
    kind: str            # "posterior" or "prior"


class GoalConditionedRSSM:
    """Network container; all methods run on the active tape when recording."""

    def __init__(self, config: RSSMConfig, store: ParamStore | None = None):
        self.config = config
        self.store = store or ParamStore(seed=0)
        self._build()

    def _build(self):
        # materialize parameters in a fixed order so stores are reproducible
        cfg = self.config
        dummy_obs = np.zeros((1, cfg.obs_resolution ** 2))
        e = self.encode(dummy_obs)
        h0 = core.as_tensor(np.zeros((1, cfg.deterministic_dim)))
        z0 = core.as_tensor(np.zeros((1, cfg.stochastic_dim)))
        a0 = np.zeros((1, cfg.action_dim))
        state = LatentState(h0, z0, z0, z0, "prior")
        h = self.recurrent_step(state, a0)
        rng = np.random.default_rng(0)
        post = self.posterior(h, e, e, rng)
        self.prior(h, e)
        self.decode_obs(post)
        self.decode_reward(post)

    # ------------------------------------------------------------- components

    def encode(self, masks) -> Tensor:
        """Shared embedding for observations and goals: flattened mask through
        two affine+elu layers."""
        cfg = self.config
        x = core.as_tensor(masks)
        if x.data.ndim == 1:
            x = core.as_tensor(x.data[None, :])
        if x.data.shape[-1] != cfg.obs_resolution ** 2:
            raise DimensionError(
                f"encoder expects {cfg.obs_resolution ** 2} pixels, got {x.data.shape[-1]}"
            )
        h = core.elu(affine(self.store, x, "enc.l1", cfg.hidden_dim))
        return core.elu(affine(self.store, h, "enc.l2", cfg.hidden_dim))

    def initial_state(self, batch: int) -> LatentState:
        cfg = self.config
        zeros_h = core.as_tensor(np.zeros((batch, cfg.deterministic_dim)))
        zeros_z = core.as_tensor(np.zeros((batch, cfg.stochastic_dim)))
        ones = core.as_tensor(np.ones((batch, cfg.stochastic_dim)))
        return LatentState(zeros_h, zeros_z, zeros_z, ones, "prior")

    def recurrent_step(self, prev: LatentState, action) -> Tensor:
        """h_t from (h_{t-1}, z_{t-1}, a_{t-1}) through the gated recurrent core."""
        fused = core.elu(affine(
            self.store, core.concat([prev.z, core.as_tensor(action)]),
            "dyn.fuse", self.config.hidden_dim,
        ))
        return gru_cell(self.store, prev.h, fused, "dyn.gru")

    def _goal_input(self, goal_embedding) -> Tensor:
        e_g = core.as_tensor(goal_embedding)
        if not self.config.goal_conditioned:
            e_g = core.as_tensor(np.zeros_like(e_g.data))
        return e_g

    def posterior(self, h: Tensor, obs_embedding, goal_embedding,
                  rng: np.random.Generator | None = None,
                  noise: np.ndarray | None = None) -> LatentState:
        cfg = self.config
        e_g = self._goal_input(goal_embedding)
        x = core.elu(affine(
            self.store, core.concat([h, core.as_tensor(obs_embedding), e_g]),
            "post.l1", cfg.hidden_dim,
        ))
        mean, std = gaussian_head(self.store, x, "post.head", cfg.stochastic_dim, cfg.min_std)
        z = self._sample(mean, std, rng, noise)
        return LatentState(h, z, mean, std, "posterior")

    def prior(self, h: Tensor, goal_embedding,
              rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> LatentState:
        cfg = self.config
        e_g = self._goal_input(goal_embedding)
        x = core.elu(affine(
            self.store, core.concat([h, e_g]), "prior.l1", cfg.hidden_dim,
        ))
        mean, std = gaussian_head(self.store, x, "prior.head", cfg.stochastic_dim, cfg.min_std)
        z = self._sample(mean, std, rng, noise)
        return LatentState(h, z, mean, std, "prior")

    @staticmethod
    def _sample(mean: Tensor, std: Tensor, rng, noise) -> Tensor:
        if noise is None:
            if rng is None:
                return mean  # distribution mode, used by planning rollouts
            noise = rng.standard_normal(mean.data.shape)
        return core.add(mean, core.mul(std, noise))

    def decode_obs(self, state: LatentState) -> Tensor:
        """Per-pixel Bernoulli logits from (h, z)."""
        cfg = self.config
        x = core.elu(affine(
            self.store, core.concat([state.h, state.z]), "dec.l1", cfg.hidden_dim,
        ))
        return affine(self.store, x, "dec.logits", cfg.obs_resolution ** 2)

    def decode_reward(self, state: LatentState) -> tuple[Tensor, Tensor]:
        """Gaussian reward head, four hidden layers deep."""
        cfg = self.config
        x = core.concat([state.h, state.z])
        for i in range(4):
            x = core.elu(affine(self.store, x, f"rew.l{i + 1}", cfg.hidden_dim))
        mean, std = gaussian_head(self.store, x, "rew.head", 1, cfg.min_std)
        return mean, std

    # ------------------------------------------------------------- inference

    def filter_posterior(self, observations, actions, goal_mask,
                         rng: np.random.Generator | None = None) -> LatentState:
        """Filter a history of (mask, leading action) pairs to the current
        posterior state. observations: (T, R*R) flats; actions: (T, 4) where
        actions[t] led into observations[t] (zeros for the first step).
        """
        obs = np.asarray(observations, dtype=np.float64)
        acts = np.asarray(actions, dtype=np.float64)
        if obs.ndim != 2 or acts.ndim != 2 or len(obs) != len(acts):
            raise DimensionError(f"history shapes {obs.shape} / {acts.shape} misaligned")
        goal_e = self.encode(np.asarray(goal_mask, dtype=np.float64)[None, :]
                             if np.asarray(goal_mask).ndim == 1 else goal_mask)
        state = self.initial_state(1)
        for t in range(len(obs)):
            h = self.recurrent_step(state, acts[t : t + 1])
            e_x = self.encode(obs[t : t + 1])
            state = self.posterior(h, e_x, goal_e, rng=rng)
        return state

    def prior_rollout(self, start: LatentState, actions, goal_embedding,
                      rng: np.random.Generator | None = None) -> list:
        """Open-loop rollout with the transition predictor; decodes a reward
        and obs distribution at each step. actions: (K, B, 4) or (K, 4)."""
        acts = np.asarray(actions, dtype=np.float64)
        if acts.ndim == 2:
            acts = acts[:, None, :]
        steps = []
        state = start
        for k in range(acts.shape[0]):
            h = self.recurrent_step(state, acts[k])
            state = self.prior(h, goal_embedding, rng=rng)
            reward_mean, reward_std = self.decode_reward(state)
            logits = self.decode_obs(state)
            steps.append((state, (reward_mean, reward_std), logits))
        return steps

    # ------------------------------------------------------------- persistence

    def save(self, path: str):
        from ..nn.checkpoint import save_params

        save_params(self.store.state_dict(), path)
        with open(f"{path}.meta", "w", encoding="utf-8") as fh:
            for key, value in self.config.to_dict().items():
                fh.write(f"{key} = {value}\n")

    @staticmethod
    def load(path: str) -> "GoalConditionedRSSM":
        from ..nn.checkpoint import load_params

        values = {}
        with open(f"{path}.meta", "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
        for key in ("goal_conditioned",):
            if key in values:
                values[key] = values[key] in ("True", "true", "1")
        config = RSSMConfig.from_dict(values)
        model = GoalConditionedRSSM(config)
        model.store.load_state_dict(load_params(path))
        return model
