"""Feed-forward action and communication networks.

Every agent owns an A-Net (Q-values from observation plus incoming
messages) and/or a C-Net (message logits from observation alone), each
with a slowly-tracking target copy used for TD targets. Environments
with identical agents share one AgentParams instance between them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import GraphValue, ParamSet

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    hidden: tuple[int, ...]
    activation: str = "relu"  # "relu" | "tanh"

    def __post_init__(self):
        if len(self.hidden) < 1:
            raise ValueError("MlpSpec needs at least one hidden layer")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Mlp:
    """Shape descriptor for one network; parameters live in a ParamSet."""

    in_dim: int
    out_dim: int
    spec: MlpSpec

    @property
    def widths(self):
        return (self.in_dim, *self.spec.hidden, self.out_dim)

    def init(self, params: ParamSet, rng):
        widths = self.widths
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            params.add(f"W{i}", rng.uniform(-limit, limit, (n_in, n_out)))
            params.add(f"b{i}", np.zeros(n_out))

    def forward(self, params: ParamSet, x: GraphValue) -> GraphValue:
        """Graph forward pass; hidden nonlinearity per spec, linear output."""
        act = ag.relu if self.spec.activation == "relu" else ag.tanh
        n_layers = len(self.spec.hidden) + 1
        h = x
        for i in range(n_layers):
            h = ag.affine(h, params[f"W{i}"], params[f"b{i}"])
            if i < n_layers - 1:
                h = act(h)
        return h

    def forward_raw(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        """Array-only forward pass (no graph); used for targets and evaluation."""
        n_layers = len(self.spec.hidden) + 1
        h = np.asarray(x, dtype=np.float64)
        for i in range(n_layers):
            h = h @ params[f"W{i}"].value + params[f"b{i}"].value
            if i < n_layers - 1:
                h = np.tanh(h) if self.spec.activation == "tanh" else np.maximum(h, 0.0)
        return h


class AgentParams:
    """Live and target parameter sets for one agent (or one shared group)."""

    def __init__(self, a_mlp: Mlp | None, c_mlp: Mlp | None, tau_target: float, rng=None):
        if not 0.0 < tau_target <= 1.0:
            raise ValueError(f"tau_target must be in (0, 1], got {tau_target}")
        self.a_mlp = a_mlp
        self.c_mlp = c_mlp
        self.tau_target = tau_target
        self.a_net = ParamSet() if a_mlp else None
        self.c_net = ParamSet() if c_mlp else None
        if rng is not None:
            if a_mlp:
                a_mlp.init(self.a_net, rng)
            if c_mlp:
                c_mlp.init(self.c_net, rng)
        self.a_target = _copy_paramset(self.a_net)
        self.c_target = _copy_paramset(self.c_net)

    # -- forward passes -----------------------------------------------------

    def a_net_forward(self, observation, incoming_messages) -> GraphValue:
        """Q-values from observation and incoming messages, as one graph.

        ``incoming_messages`` may be a GraphValue (training: gradients must
        reach the message nodes) or a plain array.
        """
        obs = observation if isinstance(observation, GraphValue) else GraphValue(observation)
        msgs = (
            incoming_messages
            if isinstance(incoming_messages, GraphValue)
            else GraphValue(incoming_messages)
        )
        self._check_a_width(obs.value.shape[-1] + msgs.value.shape[-1])
        return self.a_mlp.forward(self.a_net, ag.concat([obs, msgs]))

    def c_net_forward(self, observation) -> GraphValue:
        """Message logits from the observation (incoming messages unseen)."""
        obs = observation if isinstance(observation, GraphValue) else GraphValue(observation)
        if obs.value.shape[-1] != self.c_mlp.in_dim:
            raise ValueError(
                f"c_net_forward: observation width {obs.value.shape[-1]} != {self.c_mlp.in_dim}"
            )
        return self.c_mlp.forward(self.c_net, obs)

    def a_q_raw(self, x: np.ndarray, target: bool = False) -> np.ndarray:
        """Q-values from a pre-concatenated input, outside any graph."""
        self._check_a_width(np.shape(x)[-1])
        return self.a_mlp.forward_raw(self.a_target if target else self.a_net, x)

    def c_logits_raw(self, observation: np.ndarray, target: bool = False) -> np.ndarray:
        return self.c_mlp.forward_raw(self.c_target if target else self.c_net, observation)

    def _check_a_width(self, width):
        if width != self.a_mlp.in_dim:
            raise ValueError(f"a_net input width {width} != {self.a_mlp.in_dim}")

    # -- parameter bookkeeping ------------------------------------------------

    def trainable_params(self, prefix: str = ""):
        """Deterministic (name, GraphValue) list over live nets only."""
        out = []
        for net_name, params in (("a_net", self.a_net), ("c_net", self.c_net)):
            if params is None:
                continue
            out.extend((f"{prefix}{net_name}/{name}", p) for name, p in params.items())
        return out

    def soft_update(self):
        """Target tracking: theta_target <- tau*theta + (1 - tau)*theta_target."""
        tau = self.tau_target
        for live, target in ((self.a_net, self.a_target), (self.c_net, self.c_target)):
            if live is None:
                continue
            for name, p in live.items():
                t = target[name]
                t.value *= 1.0 - tau
                t.value += tau * p.value


def _copy_paramset(params: ParamSet | None) -> ParamSet | None:
    if params is None:
        return None
    copy = ParamSet()
    for name, p in params.items():
        copy.add(name, p.value.copy())
    return copy


def soft_update(agent: AgentParams):
    agent.soft_update()


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------

def select_action(q_values: np.ndarray, epsilon: float, rng) -> int:
    """Epsilon-greedy with lowest-index tie breaking on the greedy branch."""
    q_values = np.asarray(q_values)
    if q_values.size == 0:
        raise ValueError("select_action: empty q_values")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q_values.size))
    return int(np.argmax(q_values))


def select_actions(q_values: np.ndarray, epsilon: float, rng) -> np.ndarray:
    """Vectorized epsilon-greedy over rows of a (rows, actions) matrix."""
    q_values = np.asarray(q_values)
    if q_values.ndim != 2 or q_values.shape[1] == 0:
        raise ValueError(f"select_actions: need (rows, actions), got {q_values.shape}")
    greedy = q_values.argmax(axis=1)
    if epsilon <= 0.0:
        return greedy
    rows = q_values.shape[0]
    explore = rng.random(rows) < epsilon
    random_actions = rng.integers(0, q_values.shape[1], rows)
    return np.where(explore, random_actions, greedy)


# ---------------------------------------------------------------------------
# Checkpoints: one .npz of named float64 arrays plus a JSON header
# ---------------------------------------------------------------------------

def _mlp_to_meta(mlp: Mlp | None):
    if mlp is None:
        return None
    return {
        "in_dim": mlp.in_dim,
        "out_dim": mlp.out_dim,
        "hidden": list(mlp.spec.hidden),
        "activation": mlp.spec.activation,
    }


def _mlp_from_meta(meta) -> Mlp | None:
    if meta is None:
        return None
    return Mlp(
        in_dim=meta["in_dim"],
        out_dim=meta["out_dim"],
        spec=MlpSpec(hidden=tuple(meta["hidden"]), activation=meta["activation"]),
    )


def save_checkpoint(path, agents: dict[str, AgentParams], meta: dict | None = None):
    """Write live parameters of every role to ``path`` (.npz, versioned)."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "roles": {
            role: {
                "a_net": _mlp_to_meta(agent.a_mlp),
                "c_net": _mlp_to_meta(agent.c_mlp),
                "tau_target": agent.tau_target,
            }
            for role, agent in agents.items()
        },
        "extra": meta or {},
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for role, agent in agents.items():
        for name, p in agent.trainable_params(prefix=f"{role}/"):
            arrays[name] = p.value
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, AgentParams], dict]:
    """Rebuild agents from a checkpoint; targets start as copies of live."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        agents = {}
        for role, role_meta in header["roles"].items():
            agent = AgentParams(
                _mlp_from_meta(role_meta["a_net"]),
                _mlp_from_meta(role_meta["c_net"]),
                role_meta["tau_target"],
            )
            for net_name, params in (("a_net", agent.a_net), ("c_net", agent.c_net)):
                if params is None:
                    continue
                mlp = agent.a_mlp if net_name == "a_net" else agent.c_mlp
                for i in range(len(mlp.spec.hidden) + 1):
                    for kind in ("W", "b"):
                        key = f"{role}/{net_name}/{kind}{i}"
                        params.add(f"{kind}{i}", data[key])
            agent.a_target = _copy_paramset(agent.a_net)
            agent.c_target = _copy_paramset(agent.c_net)
            agents[role] = agent
    return agents, header["extra"]
