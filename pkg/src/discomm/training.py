"""DIAL training loops for the Matrix and speaker-listener environments.

One training iteration rolls out a batch of fresh episodes as a single
computation graph: every sender's C-Net output passes through the
discretization unit (train mode) and the channel into each receiver's
A-Net input, so the receivers' TD errors backpropagate into the sender
C-Nets. There is no replay; stale messages would sever that path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import GraphValue
from .discretizers import (
    DiscretizerConfig,
    Mode,
    discretize,
    forward_raw,
    sample_noise,
)
from .envs import (
    MatrixConfig,
    SpeakerListenerConfig,
    apply_flip_mask,
    matrix_deliver,
    matrix_observations,
    matrix_reset,
    matrix_step,
    sample_flip_masks,
    sl_listener_observation,
    sl_reset,
    sl_speaker_observation,
    sl_step,
)
from .nets import AgentParams, Mlp, MlpSpec, select_actions

RNG_STREAMS = ("env", "explore", "noise", "channel", "init", "eval")

DEFAULT_A_SPEC = MlpSpec(hidden=(64, 64), activation="relu")
DEFAULT_C_SPEC = MlpSpec(hidden=(32,), activation="tanh")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """One master seed split into fixed, named, independent streams."""
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(RNG_STREAMS, children)}


@dataclass
class TrainerConfig:
    iterations: int
    gamma: float = 1.0
    tau_target: float = 0.01
    learning_rate: float = 5e-4
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_iters: int | None = None  # default: first 20% of iterations
    episodes_per_iteration: int = 32
    eval_every: int = 100
    eval_episodes: int = 100
    parameter_sharing: bool = True
    optimizer: str = "rms"
    clip_norm: float = 10.0
    seed: int = 0
    amplitude_ewma_alpha: float = 5e-5

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("eval cadence values must be >= 1")
        if self.episodes_per_iteration < 1:
            raise ValueError("episodes_per_iteration must be >= 1")
        if not 0.0 < self.amplitude_ewma_alpha <= 1.0:
            raise ValueError("amplitude_ewma_alpha must be in (0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"epsilon values must be in [0, 1], got {eps}")

    def epsilon_at(self, iteration: int) -> float:
        """Linear decay from start to end, then constant."""
        decay = self.epsilon_decay_iters
        if decay is None:
            decay = max(1, round(0.2 * self.iterations))
        if iteration >= decay:
            return self.epsilon_end
        frac = iteration / decay
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


@dataclass
class MetricsRecord:
    iteration: int
    mean_eval_return: float
    return_std: float
    comm_amplitude: float
    amplitude_ewma: float


# ---------------------------------------------------------------------------
# Metrics helpers
# ---------------------------------------------------------------------------

def communication_amplitude(logits) -> float:
    """Mean absolute value of the discretization unit's inputs."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise ValueError("communication_amplitude: empty logit sample")
    return float(np.abs(logits).mean())


def ewma(series, alpha: float) -> np.ndarray:
    """Exponentially weighted moving average with s_0 = x_0."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise ValueError("ewma: empty series")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"ewma: alpha must be in (0, 1], got {alpha}")
    out = np.empty_like(series)
    out[0] = series[0]
    for i in range(1, series.size):
        out[i] = alpha * series[i] + (1.0 - alpha) * out[i - 1]
    return out


def final_summary(records: list[MetricsRecord]) -> tuple[float, float]:
    """Mean and population std of eval returns in the final 10% of iterations."""
    if not records:
        raise ValueError("final_summary: empty history")
    last = max(r.iteration for r in records)
    cutoff = 0.9 * last
    window = np.array([r.mean_eval_return for r in records if r.iteration > cutoff])
    return float(window.mean()), float(window.std())


def _population_stats(returns: np.ndarray) -> tuple[float, float]:
    return float(returns.mean()), float(returns.std())


def td_targets(rewards: np.ndarray, next_max_q: np.ndarray, gamma: float) -> np.ndarray:
    """Bootstrapped TD targets per step: r_t + gamma * max_a Q'(o_{t+1}, a).

    ``rewards`` is (steps, ...); ``next_max_q`` is (steps - 1, ...) — the
    final step is terminal and its target is the reward alone. The target
    values come from the target network and are treated as constants.
    """
    targets = np.asarray(rewards, dtype=np.float64).copy()
    if targets.shape[0] - 1 != np.shape(next_max_q)[0]:
        raise ValueError("td_targets: need next-step values for all non-terminal steps")
    if targets.shape[0] > 1:
        targets[:-1] += gamma * np.asarray(next_max_q)
    return targets


def _gather_rows(source: GraphValue, index: np.ndarray) -> GraphValue:
    """Collect and flatten sender rows per receiver: (rows, k) index -> (rows, k*width)."""
    rows, k = index.shape
    width = source.value.shape[1]

    def fwd(m):
        return m[index].reshape(rows, k * width)

    def bwd(g, m):
        gm = np.zeros_like(m)
        np.add.at(gm, index, g.reshape(rows, k, width))
        return (gm,)

    return ag.custom_op(fwd, bwd, source)


def _codes_from_bits(bits: np.ndarray) -> np.ndarray:
    """Message bit rows -> integer codes, first bit most significant."""
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return (bits.astype(np.int64) @ weights).astype(np.int64)


# ---------------------------------------------------------------------------
# Matrix trainer
# ---------------------------------------------------------------------------

@dataclass
class MatrixTrace:
    """One batch of Matrix episodes (a single connected graph in train mode)."""

    numbers: np.ndarray  # (episodes, agents)
    logits: GraphValue
    messages_pre: GraphValue
    messages_post: GraphValue
    q_step0: GraphValue | None
    q_step1: GraphValue
    actions_step0: np.ndarray | None
    actions_step1: np.ndarray
    act_inputs: np.ndarray  # raw A-Net inputs of the act step (for targets)
    rewards: np.ndarray  # (episodes,)
    mode: Mode


class MatrixTrainer:
    """Parameter-shared DIAL agents on the Matrix environment family."""

    def __init__(
        self,
        env_config: MatrixConfig,
        disc_config: DiscretizerConfig,
        trainer_config: TrainerConfig,
        a_spec: MlpSpec = DEFAULT_A_SPEC,
        c_spec: MlpSpec = DEFAULT_C_SPEC,
    ):
        self.env_config = env_config
        self.disc_train = disc_config.with_mode(Mode.TRAIN)
        self.disc_eval = disc_config.with_mode(Mode.EVAL)
        self.config = trainer_config
        self.channel = env_config.channel()
        self.streams = make_streams(trainer_config.seed)

        n, bits = env_config.n_agents, env_config.message_bits
        obs_dim = env_config.observation_dim
        self.incoming_dim = (n - 1) * bits
        # A-Net sees observation + a phase flag pair + all incoming messages
        self.a_in_dim = obs_dim + 2 + self.incoming_dim
        self.shared = AgentParams(
            a_mlp=Mlp(self.a_in_dim, 2, a_spec),
            c_mlp=Mlp(obs_dim, bits, c_spec),
            tau_target=trainer_config.tau_target,
            rng=self.streams["init"],
        )
        self.optimizer = ag.make_optimizer(
            trainer_config.optimizer,
            self.shared.trainable_params(),
            trainer_config.learning_rate,
            clip_norm=trainer_config.clip_norm,
        )
        self.iteration = 0
        self.amplitude_ewma: float | None = None
        self.records: list[MetricsRecord] = []
        self._amp_window: list[float] = []
        self._sender_rows_cache: dict[int, np.ndarray] = {}

    # -- plumbing -------------------------------------------------------------

    def _sender_rows(self, episodes: int) -> np.ndarray:
        """Flat row indices of the (n-1) senders for every (episode, receiver)."""
        cached = self._sender_rows_cache.get(episodes)
        if cached is not None:
            return cached
        n = self.env_config.n_agents
        per_receiver = np.array([[j for j in range(n) if j != i] for i in range(n)])
        offsets = np.arange(episodes)[:, None, None] * n
        index = (per_receiver[None, :, :] + offsets).reshape(episodes * n, n - 1)
        self._sender_rows_cache[episodes] = index
        return index

    def _phase_flags(self, rows: int, phase: int) -> np.ndarray:
        flags = np.zeros((rows, 2))
        flags[:, phase] = 1.0
        return flags

    # -- rollouts ---------------------------------------------------------------

    def rollout(self, episodes: int, mode: Mode, epsilon: float = 0.0) -> MatrixTrace:
        """Run a batch of episodes; train mode keeps one connected graph."""
        if episodes < 1:
            raise ValueError("rollout: need at least one episode")
        cfg = self.env_config
        n, bits = cfg.n_agents, cfg.message_bits
        rows = episodes * n
        train = mode is Mode.TRAIN
        rng_env = self.streams["env"] if train else self.streams["eval"]
        rng_noise = self.streams["noise"] if train else self.streams["eval"]
        rng_channel = self.streams["channel"] if train else self.streams["eval"]

        states = [matrix_reset(cfg, rng_env) for _ in range(episodes)]
        numbers = np.stack([s.numbers for s in states])
        obs_rows = matrix_observations(cfg, numbers).reshape(rows, -1)

        # communicate phase: logits -> unit -> channel
        disc = self.disc_train if train else self.disc_eval
        noise = sample_noise(disc, (rows, bits), rng_noise)
        corrupt = self.channel.active and (self.env_config.corrupt_training or not train)
        masks = (
            sample_flip_masks(self.channel, rows, bits, rng_channel)
            if corrupt
            else np.zeros((rows, bits))
        )
        if train:
            logits = self.shared.c_net_forward(obs_rows)
            msg_pre = discretize(disc, logits, noise)
            msg_post = apply_flip_mask(msg_pre, masks) if corrupt else msg_pre
        else:
            logits = GraphValue(self.shared.c_logits_raw(obs_rows))
            msg_pre = GraphValue(forward_raw(disc, logits.value, noise))
            msg_post = GraphValue(apply_flip_mask(msg_pre.value, masks))

        for b, state in enumerate(states):
            matrix_deliver(state, msg_post.value[b * n : (b + 1) * n])

        # communicate-phase Q (trained, env ignores the action)
        q0 = u0 = None
        if train:
            in0 = np.concatenate(
                [obs_rows, self._phase_flags(rows, 0), np.zeros((rows, self.incoming_dim))],
                axis=1,
            )
            q0 = self.shared.a_mlp.forward(self.shared.a_net, GraphValue(in0))
            u0 = select_actions(q0.value, epsilon, self.streams["explore"])

        # act phase: every receiver reads the other agents' (possibly corrupted)
        # broadcasts, ordered by sender index
        sender_rows = self._sender_rows(episodes)
        const1 = np.concatenate([obs_rows, self._phase_flags(rows, 1)], axis=1)
        if train:
            incoming = _gather_rows(msg_post, sender_rows)
            q1 = self.shared.a_mlp.forward(
                self.shared.a_net, ag.concat([GraphValue(const1), incoming])
            )
            act_inputs = np.concatenate([const1, incoming.value], axis=1)
            u1 = select_actions(q1.value, epsilon, self.streams["explore"])
        else:
            flat = msg_post.value[sender_rows].reshape(rows, self.incoming_dim)
            act_inputs = np.concatenate([const1, flat], axis=1)
            q1 = GraphValue(self.shared.a_q_raw(act_inputs))
            u1 = q1.value.argmax(axis=1)  # no exploration during evaluation

        rewards = np.array(
            [matrix_step(state, u1[b * n : (b + 1) * n]) for b, state in enumerate(states)]
        )
        return MatrixTrace(
            numbers=numbers,
            logits=logits,
            messages_pre=msg_pre,
            messages_post=msg_post,
            q_step0=q0,
            q_step1=q1,
            actions_step0=u0,
            actions_step1=u1,
            act_inputs=act_inputs,
            rewards=rewards,
            mode=mode,
        )

    def td_loss(self, trace: MatrixTrace) -> GraphValue:
        """Summed squared TD errors over both steps and all agents, batch-averaged."""
        if trace.mode is not Mode.TRAIN:
            raise ValueError("td_loss: trace was not collected in train mode")
        n = self.env_config.n_agents
        episodes = trace.numbers.shape[0]
        reward_rows = np.repeat(trace.rewards, n)

        # communicate step bootstraps from the target network; act step is terminal
        next_q = self.shared.a_q_raw(trace.act_inputs, target=True)
        step_rewards = np.stack([np.zeros_like(reward_rows), reward_rows])
        target0, target1 = td_targets(step_rewards, next_q.max(axis=1)[None, :], self.config.gamma)
        d0 = ag.sub(ag.index_select(trace.q_step0, trace.actions_step0), GraphValue(target0))
        d1 = ag.sub(ag.index_select(trace.q_step1, trace.actions_step1), GraphValue(target1))
        total = ag.add(ag.reduce_sum(ag.mul(d0, d0)), ag.reduce_sum(ag.mul(d1, d1)))
        return ag.scale(total, 1.0 / episodes)

    # -- training ---------------------------------------------------------------

    def train_iteration(self) -> float:
        epsilon = self.config.epsilon_at(self.iteration)
        trace = self.rollout(self.config.episodes_per_iteration, Mode.TRAIN, epsilon)
        amp = communication_amplitude(trace.logits.value)
        self._record_amplitude(amp)
        loss = self.td_loss(trace)
        ag.backward(loss)
        self.optimizer.step()
        self.shared.soft_update()
        self.iteration += 1
        return float(loss.value)

    def _record_amplitude(self, amp: float):
        alpha = self.config.amplitude_ewma_alpha
        self.amplitude_ewma = (
            amp if self.amplitude_ewma is None else alpha * amp + (1 - alpha) * self.amplitude_ewma
        )
        self._amp_window.append(amp)

    def evaluate(self, episodes: int | None = None) -> tuple[float, float]:
        """Greedy eval-mode returns (units in eval mode, no exploration)."""
        episodes = self.config.eval_episodes if episodes is None else episodes
        if episodes < 1:
            raise ValueError("evaluate: need at least one episode")
        trace = self.rollout(episodes, Mode.EVAL)
        return _population_stats(trace.rewards)

    def run(self) -> list[MetricsRecord]:
        for _ in range(self.config.iterations):
            self.train_iteration()
            if self.iteration % self.config.eval_every == 0:
                mean, std = self.evaluate()
                self.records.append(
                    MetricsRecord(
                        iteration=self.iteration,
                        mean_eval_return=mean,
                        return_std=std,
                        comm_amplitude=float(np.mean(self._amp_window)),
                        amplitude_ewma=self.amplitude_ewma,
                    )
                )
                self._amp_window.clear()
        return self.records

    # -- protocol inspection ------------------------------------------------------

    def protocol_matrix(self, samples: int, rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Histogram of emitted messages per input number, pre- and post-channel.

        Rows are input numbers, columns the 2^bits messages in lexicographic
        order; every row sums to ``samples``.
        """
        cfg = self.env_config
        if cfg.message_bits > 16:
            raise ValueError("protocol_matrix: message_bits > 16 is not tabulated")
        if samples < 1:
            raise ValueError("protocol_matrix: samples must be >= 1")
        rng = rng or self.streams["eval"]
        m, bits = cfg.n_numbers, cfg.message_bits
        inputs = np.repeat(np.arange(m), samples)
        obs = matrix_observations(cfg, inputs)
        logits = self.shared.c_logits_raw(obs)
        noise = sample_noise(self.disc_eval, logits.shape, rng)
        pre = forward_raw(self.disc_eval, logits, noise)
        masks = sample_flip_masks(self.channel, pre.shape[0], bits, rng)
        post = apply_flip_mask(pre, masks)

        width = 2**bits
        pre_counts = np.zeros((m, width), dtype=np.int64)
        post_counts = np.zeros((m, width), dtype=np.int64)
        pre_codes = _codes_from_bits(pre)
        post_codes = _codes_from_bits(post)
        for number in range(m):
            rows = inputs == number
            pre_counts[number] = np.bincount(pre_codes[rows], minlength=width)
            post_counts[number] = np.bincount(post_codes[rows], minlength=width)
        return pre_counts, post_counts


# ---------------------------------------------------------------------------
# Speaker-listener trainer
# ---------------------------------------------------------------------------

@dataclass
class SpeakerListenerTrace:
    targets: np.ndarray  # (episodes,)
    logits: GraphValue
    q_steps: list[GraphValue]
    actions: np.ndarray  # (steps, episodes)
    rewards: np.ndarray  # (steps, episodes)
    listener_inputs: np.ndarray  # (steps, episodes, in_dim) raw values
    mode: Mode

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


class SpeakerListenerTrainer:
    """A speaking agent (C-Net only) teaching a navigating listener (A-Net only)."""

    N_ACTIONS = 5

    def __init__(
        self,
        env_config: SpeakerListenerConfig,
        disc_config: DiscretizerConfig,
        trainer_config: TrainerConfig,
        a_spec: MlpSpec = DEFAULT_A_SPEC,
        c_spec: MlpSpec = DEFAULT_C_SPEC,
    ):
        self.env_config = env_config
        self.disc_train = disc_config.with_mode(Mode.TRAIN)
        self.disc_eval = disc_config.with_mode(Mode.EVAL)
        self.config = trainer_config
        self.streams = make_streams(trainer_config.seed)

        bits = env_config.message_bits
        listener_in = env_config.listener_obs_dim + bits
        self.speaker = AgentParams(
            a_mlp=None,
            c_mlp=Mlp(env_config.speaker_obs_dim, bits, c_spec),
            tau_target=trainer_config.tau_target,
            rng=self.streams["init"],
        )
        self.listener = AgentParams(
            a_mlp=Mlp(listener_in, self.N_ACTIONS, a_spec),
            c_mlp=None,
            tau_target=trainer_config.tau_target,
            rng=self.streams["init"],
        )
        params = self.speaker.trainable_params("speaker/") + self.listener.trainable_params(
            "listener/"
        )
        self.optimizer = ag.make_optimizer(
            trainer_config.optimizer,
            params,
            trainer_config.learning_rate,
            clip_norm=trainer_config.clip_norm,
        )
        self.iteration = 0
        self.amplitude_ewma: float | None = None
        self.records: list[MetricsRecord] = []
        self._amp_window: list[float] = []

    def rollout(self, episodes: int, mode: Mode, epsilon: float = 0.0) -> SpeakerListenerTrace:
        if episodes < 1:
            raise ValueError("rollout: need at least one episode")
        cfg = self.env_config
        bits = cfg.message_bits
        train = mode is Mode.TRAIN
        rng_env = self.streams["env"] if train else self.streams["eval"]
        rng_noise = self.streams["noise"] if train else self.streams["eval"]
        disc = self.disc_train if train else self.disc_eval

        states = [sl_reset(cfg, rng_env) for _ in range(episodes)]
        speaker_obs = np.stack([sl_speaker_observation(cfg, s) for s in states])
        if train:
            logits = self.speaker.c_net_forward(speaker_obs)
        else:
            logits = GraphValue(self.speaker.c_logits_raw(speaker_obs))

        steps = cfg.episode_length
        q_steps: list[GraphValue] = []
        actions = np.zeros((steps, episodes), dtype=np.int64)
        rewards = np.zeros((steps, episodes))
        inputs = np.zeros((steps, episodes, self.listener.a_mlp.in_dim))

        for t in range(steps):
            noise = sample_noise(disc, (episodes, bits), rng_noise)
            if train:
                message = discretize(disc, logits, noise)
            else:
                message = GraphValue(forward_raw(disc, logits.value, noise))
            positions = np.stack(
                [sl_listener_observation(cfg, s, include_message=False) for s in states]
            )
            if train:
                a_in = ag.concat([GraphValue(positions), message])
                q = self.listener.a_mlp.forward(self.listener.a_net, a_in)
                u = select_actions(q.value, epsilon, self.streams["explore"])
            else:
                a_in = GraphValue(np.concatenate([positions, message.value], axis=1))
                q = GraphValue(self.listener.a_q_raw(a_in.value))
                u = q.value.argmax(axis=1)
            inputs[t] = a_in.value
            q_steps.append(q)
            actions[t] = u
            for b, state in enumerate(states):
                _, rewards[t, b] = sl_step(cfg, state, int(u[b]), message.value[b])

        return SpeakerListenerTrace(
            targets=np.array([s.target for s in states]),
            logits=logits,
            q_steps=q_steps,
            actions=actions,
            rewards=rewards,
            listener_inputs=inputs,
            mode=mode,
        )

    def td_loss(self, trace: SpeakerListenerTrace) -> GraphValue:
        if trace.mode is not Mode.TRAIN:
            raise ValueError("td_loss: trace was not collected in train mode")
        steps, episodes = trace.rewards.shape
        # target-net values for steps 1..T-1, evaluated in one raw pass
        flat_next = trace.listener_inputs[1:].reshape((steps - 1) * episodes, -1)
        next_max = (
            self.listener.a_q_raw(flat_next, target=True).max(axis=1).reshape(steps - 1, episodes)
        )
        targets = td_targets(trace.rewards, next_max, self.config.gamma)

        total = None
        for t in range(steps):
            d = ag.sub(
                ag.index_select(trace.q_steps[t], trace.actions[t]), GraphValue(targets[t])
            )
            sq = ag.reduce_sum(ag.mul(d, d))
            total = sq if total is None else ag.add(total, sq)
        return ag.scale(total, 1.0 / episodes)

    def train_iteration(self) -> float:
        epsilon = self.config.epsilon_at(self.iteration)
        trace = self.rollout(self.config.episodes_per_iteration, Mode.TRAIN, epsilon)
        amp = communication_amplitude(trace.logits.value)
        alpha = self.config.amplitude_ewma_alpha
        self.amplitude_ewma = (
            amp if self.amplitude_ewma is None else alpha * amp + (1 - alpha) * self.amplitude_ewma
        )
        self._amp_window.append(amp)
        loss = self.td_loss(trace)
        ag.backward(loss)
        self.optimizer.step()
        self.speaker.soft_update()
        self.listener.soft_update()
        self.iteration += 1
        return float(loss.value)

    def evaluate(self, episodes: int | None = None) -> tuple[float, float]:
        episodes = self.config.eval_episodes if episodes is None else episodes
        if episodes < 1:
            raise ValueError("evaluate: need at least one episode")
        trace = self.rollout(episodes, Mode.EVAL)
        return _population_stats(trace.returns)

    def run(self) -> list[MetricsRecord]:
        for _ in range(self.config.iterations):
            self.train_iteration()
            if self.iteration % self.config.eval_every == 0:
                mean, std = self.evaluate()
                self.records.append(
                    MetricsRecord(
                        iteration=self.iteration,
                        mean_eval_return=mean,
                        return_std=std,
                        comm_amplitude=float(np.mean(self._amp_window)),
                        amplitude_ewma=self.amplitude_ewma,
                    )
                )
                self._amp_window.clear()
        return self.records
