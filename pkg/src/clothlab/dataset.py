"""Offline trajectory dataset: the diffusion/random mixture collector and the
binary persistence format.

File layout (little-endian): magic "LGNT", u16 version, u32 trajectory count;
per trajectory: u8 garment id, u8 policy tag, u64 seed, u16 step count,
u16 mask resolution, packed goal-mask bits, then per step packed mask bits,
4 x f32 action, f32 reward, u8 miss flag. A plain-text sidecar index lists
one "offset length tag" line per trajectory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionPolicy, sample_action
from .env import ClothEnv
from .errors import DatasetFormatError, DatasetTruncationError, NoClothError
from .masks import MaskImage, pack_mask_bits, pixel_to_normalized, unpack_mask_bits
from .sim import GARMENT_NAMES, PnPAction

MAGIC = b"LGNT"
VERSION = 1

POLICY_TAGS = ("random", "diffusion", "scripted", "human", "planner")


@dataclass
class MixtureConfig:
    trajectories: int = 200           # M
    diffusion_ratio: float = 0.5      # a
    horizon: int = 30
    garments: tuple = ("square",)
    difficulty: float = 1.0
    seed: int = 0
    resolution: int = 32

    def __post_init__(self):
        if self.trajectories < 1 or self.horizon < 1:
            raise ValueError("trajectories and horizon must be >= 1")
        if not 0.0 <= self.diffusion_ratio <= 1.0:
            raise ValueError("diffusion_ratio must lie in [0, 1]")


@dataclass
class TrajectoryRecord:
    """One episode: step 0 is the initial observation under a zero no-op
    action, subsequent steps hold the executed action and resulting mask."""

    masks: np.ndarray      # (S, R, R) uint8
    actions: np.ndarray    # (S, 4) float
    rewards: np.ndarray    # (S,) float32 precision
    miss: np.ndarray       # (S,) uint8
    goal_mask: np.ndarray  # (R, R) uint8
    policy_tag: str
    garment: str
    seed: int

    def __post_init__(self):
        s = len(self.rewards)
        if not (len(self.masks) == len(self.actions) == len(self.miss) == s):
            raise DatasetFormatError("misaligned step arrays")
        if self.policy_tag not in POLICY_TAGS:
            raise DatasetFormatError(f"unknown policy tag {self.policy_tag!r}")

    @property
    def steps(self) -> int:
        return len(self.rewards)


def mask_biased_random(mask: MaskImage, rng: np.random.Generator) -> PnPAction:
    """Uniform pick over cloth pixels, uniform place over the whole image."""
    rows, cols = np.nonzero(mask.bits)
    if rows.size == 0:
        raise NoClothError("mask-biased pick requires a nonempty cloth mask")
    res = mask.resolution
    k = int(rng.integers(rows.size))
    pick = pixel_to_normalized(np.array([rows[k], cols[k]]), res)
    place_r = int(rng.integers(res))
    place_c = int(rng.integers(res))
    place = pixel_to_normalized(np.array([place_r, place_c]), res)
    return PnPAction(tuple(pick), tuple(place))


def collect(config: MixtureConfig, diffusion_policy: DiffusionPolicy | None,
            env_factory=None, progress: bool = False) -> list:
    """Unroll M episodes, each with the diffusion policy with probability
    ``diffusion_ratio`` and the mask-biased random policy otherwise.
    Deterministic per (config, seed)."""
    if config.diffusion_ratio > 0.0 and diffusion_policy is None:
        raise ValueError("diffusion_ratio > 0 requires a trained diffusion policy")
    if env_factory is None:
        env_factory = lambda garment: ClothEnv(garment, resolution=config.resolution)
    envs = {g: env_factory(g) for g in config.garments}
    tag_rng = np.random.default_rng(np.random.SeedSequence(entropy=(config.seed, 0xD1CE)))
    seeds = np.random.SeedSequence(entropy=(config.seed, 0xE715)).spawn(config.trajectories)

    records = []
    for i in range(config.trajectories):
        garment = config.garments[i % len(config.garments)]
        env = envs[garment]
        use_diffusion = tag_rng.random() < config.diffusion_ratio
        tag = "diffusion" if use_diffusion else "random"
        ep_rng = np.random.default_rng(seeds[i])
        ep_seed = int(ep_rng.integers(1 << 62))

        first = env.reset(ep_seed, config.difficulty)
        masks = [first.mask.bits.copy()]
        actions = [np.zeros(4)]
        rewards = [np.float32(first.reward)]
        miss = [1]
        obs = first.mask
        for _ in range(config.horizon):
            if use_diffusion:
                act = PnPAction.from_array(sample_action(diffusion_policy, obs.bits, ep_rng))
            else:
                act = mask_biased_random(obs, ep_rng)
            result = env.step(act, ep_rng)
            masks.append(result.mask.bits.copy())
            actions.append(act.as_array())
            rewards.append(np.float32(result.reward))
            miss.append(1 if result.miss else 0)
            obs = result.mask
        records.append(TrajectoryRecord(
            masks=np.asarray(masks, dtype=np.uint8),
            actions=np.asarray(actions, dtype=np.float64),
            rewards=np.asarray(rewards, dtype=np.float32).astype(np.float64),
            miss=np.asarray(miss, dtype=np.uint8),
            goal_mask=env.goal_mask.bits.copy(),
            policy_tag=tag,
            garment=garment,
            seed=ep_seed,
        ))
        if progress and (i + 1) % 20 == 0:
            print("  collected %d/%d episodes" % (i + 1, config.trajectories))
    return records


def demos_from_records(records: list):
    """(observation before action, action) pairs for behavior cloning; the
    virtual step 0 provides the first observation and contributes no action."""
    from .diffusion import DemoSet

    obs, acts, ids = [], [], []
    for tid, rec in enumerate(records):
        for t in range(rec.steps - 1):
            obs.append(rec.masks[t])
            acts.append(rec.actions[t + 1])
            ids.append(tid)
    return DemoSet(np.asarray(obs, dtype=np.uint8), np.asarray(acts, dtype=np.float64),
                   np.asarray(ids, dtype=np.int64))


# ------------------------------------------------------------------ file I/O

def write_dataset(records: list, path) -> None:
    index_lines = []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(records)))
        for rec in records:
            offset = fh.tell()
            res = rec.goal_mask.shape[0]
            garment_id = GARMENT_NAMES.index(rec.garment) if rec.garment in GARMENT_NAMES else 255
            head = struct.pack("<BBQHH", garment_id, POLICY_TAGS.index(rec.policy_tag),
                               rec.seed & ((1 << 64) - 1), rec.steps, res)
            fh.write(head)
            fh.write(pack_mask_bits(rec.goal_mask))
            for t in range(rec.steps):
                fh.write(pack_mask_bits(rec.masks[t]))
                fh.write(np.asarray(rec.actions[t], dtype="<f4").tobytes())
                fh.write(struct.pack("<f", float(rec.rewards[t])))
                fh.write(struct.pack("<B", int(rec.miss[t])))
            index_lines.append(f"{offset} {fh.tell() - offset} {rec.policy_tag}")
    with open(f"{path}.idx", "w", encoding="utf-8") as fh:
        fh.write("\n".join(index_lines) + ("\n" if index_lines else ""))


def read_dataset(path) -> list:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, count = struct.unpack_from("<HI", data, 4)
    except struct.error:
        raise DatasetFormatError(f"{path}: truncated header") from None
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")

    records = []
    pos = 10
    for i in range(count):
        try:
            garment_id, tag_id, seed, steps, res = struct.unpack_from("<BBQHH", data, pos)
            pos += struct.calcsize("<BBQHH")
            if tag_id >= len(POLICY_TAGS):
                raise DatasetFormatError(f"{path}: trajectory {i}: bad policy tag {tag_id}")
            mask_bytes = (res * res + 7) // 8
            goal = unpack_mask_bits(data[pos : pos + mask_bytes], res)
            if pos + mask_bytes > len(data):
                raise struct.error("goal mask out of range")
            pos += mask_bytes
            masks = np.zeros((steps, res, res), dtype=np.uint8)
            actions = np.zeros((steps, 4))
            rewards = np.zeros(steps)
            miss = np.zeros(steps, dtype=np.uint8)
            for t in range(steps):
                end = pos + mask_bytes + 16 + 4 + 1
                if end > len(data):
                    raise struct.error("step out of range")
                masks[t] = unpack_mask_bits(data[pos : pos + mask_bytes], res)
                pos += mask_bytes
                actions[t] = np.frombuffer(data, dtype="<f4", count=4, offset=pos)
                pos += 16
                (rewards[t],) = struct.unpack_from("<f", data, pos)
                pos += 4
                (miss[t],) = struct.unpack_from("<B", data, pos)
                pos += 1
            garment = GARMENT_NAMES[garment_id] if garment_id < len(GARMENT_NAMES) else "custom"
            records.append(TrajectoryRecord(masks, actions, rewards, miss, goal,
                                            POLICY_TAGS[tag_id], garment, seed))
        except struct.error as exc:
            raise DatasetTruncationError(f"{path}: trajectory {i}: {exc}") from None
    return records
