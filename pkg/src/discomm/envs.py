"""Environments: the Matrix family, a noisy message channel, and speaker-listener.

All three are deterministic given (config, rng). Message transport is the
trainer's job; the environments only define observations, phases, actions
and team rewards.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import GraphValue

# Matrix actions: claim all numbers equal, or not
ACTION_SAME = 0
ACTION_DIFFERENT = 1

# Listener actions
SL_ACTIONS = ("noop", "up", "down", "left", "right")
_SL_DELTAS = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])


class Phase(enum.Enum):
    COMMUNICATE = "communicate"
    ACT = "act"
    DONE = "done"


# ---------------------------------------------------------------------------
# Matrix environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixConfig:
    n_agents: int
    n_numbers: int
    message_bits: int
    error_probability: float = 0.0
    max_bit_flips: int = 0
    # Channel errors always apply at evaluation; whether training rollouts see
    # them too is configurable. Off by default: each unit's own noise is then
    # the only robustness pressure, which is the regime the error-correction
    # comparison is about.
    corrupt_training: bool = False

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError(f"n_agents must be >= 2, got {self.n_agents}")
        if self.n_numbers < 2:
            raise ValueError(f"n_numbers must be >= 2, got {self.n_numbers}")
        if not 0.0 <= self.error_probability <= 1.0:
            raise ValueError(f"error_probability must be in [0, 1], got {self.error_probability}")
        if self.max_bit_flips > self.message_bits:
            raise ValueError("max_bit_flips cannot exceed message_bits")
        if self.error_probability == 0.0 and self.message_bits < math.ceil(
            math.log2(self.n_numbers)
        ):
            raise ValueError(
                f"message_bits={self.message_bits} cannot encode {self.n_numbers} numbers"
            )

    @property
    def observation_dim(self) -> int:
        # one-hot for small alphabets, binary expansion for large ones
        return self.n_numbers if self.n_numbers <= 16 else math.ceil(math.log2(self.n_numbers))

    def channel(self) -> "ChannelConfig":
        return ChannelConfig(
            error_probability=self.error_probability, flips_per_error=self.max_bit_flips
        )


@dataclass
class MatrixState:
    numbers: np.ndarray  # (n_agents,) ints in [0, n_numbers)
    phase: Phase
    pending_messages: np.ndarray | None = None  # (n_agents, bits) after delivery


def matrix_reset(config: MatrixConfig, rng) -> MatrixState:
    """Half the episodes give every agent one shared number, half redraw i.i.d.

    The redraw rejects the all-equal outcome so the two branches partition
    the episodes and the all-same odds are exactly 0.5.
    """
    if rng.random() < 0.5:
        numbers = np.full(config.n_agents, rng.integers(config.n_numbers))
    else:
        while True:
            numbers = rng.integers(0, config.n_numbers, config.n_agents)
            if not np.all(numbers == numbers[0]):
                break
    return MatrixState(numbers=numbers, phase=Phase.COMMUNICATE)


def matrix_observations(config: MatrixConfig, numbers: np.ndarray) -> np.ndarray:
    """Encode assigned numbers, one row per agent."""
    numbers = np.asarray(numbers)
    if config.n_numbers <= 16:
        out = np.zeros(numbers.shape + (config.n_numbers,))
        np.put_along_axis(out, numbers[..., None], 1.0, axis=-1)
        return out
    width = config.observation_dim
    shifts = np.arange(width)
    return ((numbers[..., None] >> shifts) & 1).astype(np.float64)


def matrix_deliver(state: MatrixState, messages: np.ndarray) -> MatrixState:
    """Store broadcast messages and advance the phase to Act."""
    if state.phase is not Phase.COMMUNICATE:
        raise ValueError(f"matrix_deliver: expected Communicate phase, got {state.phase.value}")
    if messages.shape[0] != state.numbers.shape[0]:
        raise ValueError("matrix_deliver: one message per agent required")
    state.pending_messages = np.asarray(messages, dtype=np.float64)
    state.phase = Phase.ACT
    return state


def matrix_truth(state: MatrixState) -> int:
    return ACTION_SAME if np.all(state.numbers == state.numbers[0]) else ACTION_DIFFERENT


def matrix_step(state: MatrixState, actions) -> float:
    """Team reward: how many agents called same-vs-different correctly."""
    if state.phase is not Phase.ACT:
        raise ValueError(f"matrix_step: expected Act phase, got {state.phase.value}")
    actions = np.asarray(actions)
    if actions.shape != state.numbers.shape:
        raise ValueError("matrix_step: one action per agent required")
    reward = float(np.sum(actions == matrix_truth(state)))
    state.phase = Phase.DONE
    return reward


# ---------------------------------------------------------------------------
# Noisy message channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    error_probability: float = 0.0
    flips_per_error: int = 1
    stream: str = "channel"  # name of the rng stream a run should feed this from

    def __post_init__(self):
        if not 0.0 <= self.error_probability <= 1.0:
            raise ValueError(f"error_probability must be in [0, 1], got {self.error_probability}")
        if self.flips_per_error < 0:
            raise ValueError("flips_per_error must be >= 0")

    @property
    def active(self) -> bool:
        return self.error_probability > 0.0 and self.flips_per_error > 0


def sample_flip_mask(config: ChannelConfig, n_bits: int, rng) -> np.ndarray:
    """0/1 mask marking the positions to invert for a single message."""
    if config.flips_per_error > n_bits:
        raise ValueError("flips_per_error cannot exceed message length")
    mask = np.zeros(n_bits)
    if config.active and rng.random() < config.error_probability:
        mask[rng.choice(n_bits, size=config.flips_per_error, replace=False)] = 1.0
    return mask


def sample_flip_masks(config: ChannelConfig, rows: int, n_bits: int, rng) -> np.ndarray:
    """Batched masks, (rows, n_bits); exactly 0 or flips_per_error ones per row."""
    if config.flips_per_error > n_bits:
        raise ValueError("flips_per_error cannot exceed message length")
    masks = np.zeros((rows, n_bits))
    if not config.active:
        return masks
    hit = rng.random(rows) < config.error_probability
    positions = rng.random((rows, n_bits)).argsort(axis=1)[:, : config.flips_per_error]
    rows_idx = np.repeat(np.arange(rows), config.flips_per_error)
    chosen = np.zeros((rows, n_bits))
    chosen[rows_idx, positions.ravel()] = 1.0
    masks[hit] = chosen[hit]
    return masks


def apply_flip_mask(message, mask: np.ndarray):
    """Invert marked positions: v -> 1 - v (a bit flip at the {0,1} extremes).

    Works on plain arrays and on GraphValues; the graph form keeps the
    channel differentiable so sender gradients pass through corruption.
    """
    if isinstance(message, GraphValue):
        return ag.shift(ag.mul(message, GraphValue(1.0 - 2.0 * mask)), mask)
    return message * (1.0 - 2.0 * mask) + mask


def channel_apply(config: ChannelConfig, message, rng):
    """Corrupt one message: with probability p, invert flips_per_error positions."""
    message_len = (
        message.value.shape[-1] if isinstance(message, GraphValue) else np.shape(message)[-1]
    )
    mask = sample_flip_mask(config, message_len, rng)
    return apply_flip_mask(message, mask)


# ---------------------------------------------------------------------------
# Speaker-listener environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeakerListenerConfig:
    n_landmarks: int = 3
    half_width: float = 1.0
    episode_length: int = 25
    message_bits: int = 2
    step_size: float = 0.1

    def __post_init__(self):
        if self.n_landmarks < 2:
            raise ValueError("need at least two landmarks")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")

    @property
    def speaker_obs_dim(self) -> int:
        return self.n_landmarks

    @property
    def listener_obs_dim(self) -> int:
        # relative landmark positions; the received message is appended by the caller
        return 2 * self.n_landmarks


@dataclass
class SpeakerListenerState:
    landmarks: np.ndarray  # (n_landmarks, 2)
    target: int
    listener_pos: np.ndarray  # (2,)
    t: int = 0
    last_message: np.ndarray | None = None

    def done(self, config: SpeakerListenerConfig) -> bool:
        return self.t >= config.episode_length


def sl_reset(config: SpeakerListenerConfig, rng) -> SpeakerListenerState:
    hw = config.half_width
    return SpeakerListenerState(
        landmarks=rng.uniform(-hw, hw, (config.n_landmarks, 2)),
        target=int(rng.integers(config.n_landmarks)),
        listener_pos=np.zeros(2),
    )


def sl_speaker_observation(config: SpeakerListenerConfig, state: SpeakerListenerState) -> np.ndarray:
    obs = np.zeros(config.n_landmarks)
    obs[state.target] = 1.0
    return obs


def sl_listener_observation(
    config: SpeakerListenerConfig, state: SpeakerListenerState, include_message: bool = True
) -> np.ndarray:
    relative = (state.landmarks - state.listener_pos).ravel()
    if not include_message:
        return relative
    message = state.last_message
    if message is None:
        message = np.zeros(config.message_bits)
    return np.concatenate([relative, message])


def sl_step(
    config: SpeakerListenerConfig, state: SpeakerListenerState, action: int, message=None
) -> tuple[SpeakerListenerState, float]:
    """Move the listener, store the received message, return -distance reward."""
    if state.done(config):
        raise ValueError("sl_step: episode is over")
    if not 0 <= action < len(SL_ACTIONS):
        raise ValueError(f"invalid listener action {action}")
    if message is not None:
        state.last_message = np.asarray(message, dtype=np.float64)
    hw = config.half_width
    state.listener_pos = np.clip(
        state.listener_pos + config.step_size * _SL_DELTAS[action], -hw, hw
    )
    state.t += 1
    reward = -float(np.linalg.norm(state.listener_pos - state.landmarks[state.target]))
    return state, reward


# -- scripted listeners, used as evaluation baselines -----------------------

def sl_greedy_action_towards(state: SpeakerListenerState, goal: np.ndarray, step_size: float) -> int:
    """Action (including noop) minimizing next-step distance to ``goal``."""
    candidates = state.listener_pos + step_size * _SL_DELTAS
    return int(np.argmin(np.linalg.norm(candidates - goal, axis=1)))


def sl_oracle_episode(config: SpeakerListenerConfig, rng) -> float:
    """Return of a listener that is told the target directly."""
    state = sl_reset(config, rng)
    total = 0.0
    while not state.done(config):
        goal = state.landmarks[state.target]
        _, r = sl_step(config, state, sl_greedy_action_towards(state, goal, config.step_size))
        total += r
    return total


def sl_ablated_episode(config: SpeakerListenerConfig, rng) -> float:
    """Return of a message-free listener steering to the landmark centroid."""
    state = sl_reset(config, rng)
    goal = state.landmarks.mean(axis=0)
    total = 0.0
    while not state.done(config):
        _, r = sl_step(config, state, sl_greedy_action_towards(state, goal, config.step_size))
        total += r
    return total


def sl_random_episode(config: SpeakerListenerConfig, rng) -> float:
    state = sl_reset(config, rng)
    total = 0.0
    while not state.done(config):
        _, r = sl_step(config, state, int(rng.integers(len(SL_ACTIONS))))
        total += r
    return total
