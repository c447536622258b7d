"""Deep Q-Network: numpy MLP, replay buffer, epsilon-greedy exploration, and
the training loop consuming (optionally LLM-shaped) rewards.

The value network is a 4 -> 256 -> 256 -> 5 MLP with rectified-linear hidden
activations.  Observations are scaled to comparable magnitude on entry
(speed by 1/30, TTCs by 1/ttc_cap); the scaling is part of the serialized
model contract.  Everything is float64 and seeded, so training runs are
reproducible bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .observation import Observation, extract_observation
from .rewards import ShapingScheme, compose, env_reward, normalize_score
from .scenario import ScenarioConfig
from .simulate import MetaAction, reset, step

MODEL_MAGIC = b"SHWY"
MODEL_VERSION = 1

N_OBS = 4
N_ACTIONS = 5


class ModelFormatError(ValueError):
    """Model file rejected: bad magic, version, or layer shapes."""


def obs_scale_vector(ttc_cap: float = 10.0, speed_scale: float = 30.0) -> np.ndarray:
    return np.array([1.0 / speed_scale, 1.0 / ttc_cap, 1.0 / ttc_cap, 1.0 / ttc_cap])


class QNetwork:
    """Value network mapping a raw observation vector to 5 action values."""

    def __init__(
        self,
        hidden: tuple[int, ...] = (256, 256),
        seed: int | list[int] = 0,
        scales: np.ndarray | None = None,
    ) -> None:
        self.scales = obs_scale_vector() if scales is None else np.asarray(scales, dtype=np.float64)
        if self.scales.shape != (N_OBS,):
            raise ModelFormatError(f"scale vector must have shape ({N_OBS},), got {self.scales.shape}")
        rng = np.random.default_rng(seed)
        sizes = (N_OBS, *hidden, N_ACTIONS)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            limit = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "QNetwork":
        clone = QNetwork.__new__(QNetwork)
        clone.scales = self.scales.copy()
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def load_from(self, other: "QNetwork") -> None:
        for dst, src in zip(self.parameters(), other.parameters()):
            np.copyto(dst, src)

    def forward(self, obs: np.ndarray) -> np.ndarray:
        """Action values for a raw observation (4,) or batch (B, 4)."""
        x = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite observation passed to QNetwork.forward")
        h = x * self.scales
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def forward_cached(self, obs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batch forward keeping pre/post-activation caches for backprop."""
        x = np.asarray(obs, dtype=np.float64) * self.scales
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i != last:
                h = np.maximum(z, 0.0)
                cache.append(z)
                cache.append(h)
            else:
                cache.append(z)
        return cache[-1], cache

    def backward(self, cache: list[np.ndarray], dq: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter given d(loss)/d(output)."""
        grads: list[np.ndarray] = []
        x = cache[0]
        activations = [x] + [cache[2 * i + 2] for i in range(len(self.weights) - 1)]
        pre = [cache[2 * i + 1] for i in range(len(self.weights) - 1)]
        delta = dq
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = activations[layer]
            grads.insert(0, delta.sum(axis=0))          # bias
            grads.insert(0, a_in.T @ delta)             # weight
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pre[layer - 1] > 0.0)
        return grads

    def save(self, path: str | Path) -> None:
        """Write the little-endian binary model file (magic ``SHWY``)."""
        blob = bytearray()
        blob += MODEL_MAGIC
        blob += struct.pack("<HH", MODEL_VERSION, len(self.weights))
        for w in self.weights:
            blob += struct.pack("<II", w.shape[0], w.shape[1])
        blob += struct.pack("<I", self.scales.shape[0])
        blob += self.scales.astype("<f8").tobytes()
        for w, b in zip(self.weights, self.biases):
            blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
            blob += b.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(blob))

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        data = Path(path).read_bytes()
        if len(data) < 8 or data[:4] != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic {data[:4]!r})")
        version, n_layers = struct.unpack_from("<HH", data, 4)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        offset = 8
        shapes: list[tuple[int, int]] = []
        for _ in range(n_layers):
            fan_in, fan_out = struct.unpack_from("<II", data, offset)
            shapes.append((fan_in, fan_out))
            offset += 8
        if not shapes or shapes[0][0] != N_OBS or shapes[-1][1] != N_ACTIONS:
            raise ModelFormatError(
                f"{path}: layer chain {shapes} does not map {N_OBS} observations to {N_ACTIONS} actions"
            )
        for (_, out_a), (in_b, _) in zip(shapes, shapes[1:]):
            if out_a != in_b:
                raise ModelFormatError(f"{path}: inconsistent layer chain {shapes}")
        (n_scales,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if n_scales != N_OBS:
            raise ModelFormatError(f"{path}: expected {N_OBS} input scales, got {n_scales}")
        scales = np.frombuffer(data, dtype="<f8", count=n_scales, offset=offset).copy()
        offset += 8 * n_scales
        net = cls.__new__(cls)
        net.scales = scales
        net.weights = []
        net.biases = []
        for fan_in, fan_out in shapes:
            count = fan_in * fan_out
            if offset + 8 * (count + fan_out) > len(data):
                raise ModelFormatError(f"{path}: truncated weight data for shape {(fan_in, fan_out)}")
            w = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(fan_in, fan_out).copy()
            offset += 8 * count
            b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset).copy()
            offset += 8 * fan_out
            net.weights.append(w)
            net.biases.append(b)
        if offset != len(data):
            raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")
        return net


def forward(net: QNetwork, obs: Observation) -> np.ndarray:
    """Action values for a single observation."""
    return net.forward(obs.as_vector())


def greedy_action(net: QNetwork, obs: Observation) -> MetaAction:
    """Argmax action with lowest-index tie-breaking."""
    return MetaAction(int(np.argmax(net.forward(obs.as_vector()))))


def select_action(values: np.ndarray, epsilon: float, rng: np.random.Generator) -> MetaAction:
    """Epsilon-greedy over precomputed action values."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return MetaAction(int(rng.integers(0, N_ACTIONS)))
    return MetaAction(int(np.argmax(values)))


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    fraction: float = 0.1

    def value(self, step: int, total_steps: int) -> float:
        ramp = max(1.0, self.fraction * total_steps)
        progress = min(1.0, step / ramp)
        return self.start + (self.end - self.start) * progress


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling over current contents."""

    def __init__(self, capacity: int = 50_000) -> None:
        self.capacity = capacity
        self.obs = np.zeros((capacity, N_OBS))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, N_OBS))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs: np.ndarray, action: int, reward: float, next_obs: np.ndarray, done: bool) -> None:
        i = self._head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = 1.0 if done else 0.0
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 20_000
    learning_rate: float = 1e-4
    gamma: float = 0.98
    batch_size: int = 64
    buffer_capacity: int = 50_000
    learning_starts: int = 1_000
    train_freq: int = 4
    gradient_steps: int = 4
    target_update_interval: int = 1_000
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    seed: int = 42
    hidden: tuple[int, ...] = (256, 256)
    optimizer: str = "adam"  # or "sgd"
    loss: str = "mse"  # or "huber"
    shaping: ShapingScheme = field(default_factory=ShapingScheme)
    reward_a: float = 0.4
    reward_b: float = 1.0

    def validate(self) -> None:
        if self.total_steps < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("counts must be positive")
        if self.train_freq < 1 or self.gradient_steps < 1 or self.target_update_interval < 1:
            raise ValueError("counts must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.epsilon.end > self.epsilon.start:
            raise ValueError("epsilon end must not exceed start")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "huber"):
            raise ValueError(f"unknown loss {self.loss!r}")


def train_config_to_dict(config: TrainConfig) -> dict:
    return {
        "total_steps": config.total_steps,
        "learning_rate": config.learning_rate,
        "gamma": config.gamma,
        "batch_size": config.batch_size,
        "buffer_capacity": config.buffer_capacity,
        "learning_starts": config.learning_starts,
        "train_freq": config.train_freq,
        "gradient_steps": config.gradient_steps,
        "target_update_interval": config.target_update_interval,
        "epsilon": {
            "start": config.epsilon.start,
            "end": config.epsilon.end,
            "fraction": config.epsilon.fraction,
        },
        "seed": config.seed,
        "hidden": list(config.hidden),
        "optimizer": config.optimizer,
        "loss": config.loss,
        "shaping": {"kind": config.shaping.kind.value, "lambda": config.shaping.lam},
        "reward_a": config.reward_a,
        "reward_b": config.reward_b,
    }


def train_config_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(
        total_steps=data["total_steps"],
        learning_rate=data["learning_rate"],
        gamma=data["gamma"],
        batch_size=data["batch_size"],
        buffer_capacity=data["buffer_capacity"],
        learning_starts=data["learning_starts"],
        train_freq=data["train_freq"],
        gradient_steps=data["gradient_steps"],
        target_update_interval=data["target_update_interval"],
        epsilon=EpsilonSchedule(
            start=data["epsilon"]["start"],
            end=data["epsilon"]["end"],
            fraction=data["epsilon"]["fraction"],
        ),
        seed=data["seed"],
        hidden=tuple(data["hidden"]),
        optimizer=data["optimizer"],
        loss=data["loss"],
        shaping=ShapingScheme.parse(data["shaping"]["kind"], data["shaping"]["lambda"]),
        reward_a=data["reward_a"],
        reward_b=data["reward_b"],
    )


class _Optimizer:
    """Plain gradient descent or Adam (beta1=0.9, beta2=0.999, eps=1e-8).

    Adam applies the standard bias-corrected update in its rescaled form
    ``p -= lr*sqrt(bc2)/bc1 * m / (sqrt(v) + eps*sqrt(bc2))`` with
    ``bc_k = 1 - beta_k**t``, using in-place arithmetic throughout.
    """

    def __init__(self, params: list[np.ndarray], kind: str, lr: float) -> None:
        self.kind = kind
        self.lr = lr
        self.t = 0
        if kind == "adam":
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            self._scratch = [np.empty_like(p) for p in params]

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        bc1 = 1.0 - b1 ** self.t
        sqrt_bc2 = float(np.sqrt(1.0 - b2 ** self.t))
        alpha = self.lr * sqrt_bc2 / bc1
        eps_hat = eps * sqrt_bc2
        for p, g, m, v, tmp in zip(params, grads, self.m, self.v, self._scratch):
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp += eps_hat
            np.divide(m, tmp, out=tmp)
            tmp *= alpha
            p -= tmp


class _Workspace:
    """Preallocated buffers for fixed-batch forward/backward passes."""

    def __init__(self, net: QNetwork, batch: int) -> None:
        sizes = [w.shape[0] for w in net.weights] + [net.weights[-1].shape[1]]
        self.batch = batch
        self.x = np.empty((batch, sizes[0]))
        self.acts = [np.empty((batch, s)) for s in sizes[1:]]      # post-activation per layer
        self.deltas = [np.empty((batch, s)) for s in sizes[1:]]
        self.masks = [np.empty((batch, s), dtype=bool) for s in sizes[1:-1]]
        self.grads = [np.empty_like(p) for p in net.parameters()]
        self.tq = np.empty((batch, sizes[-1]))                     # target-network output
        self.th = [np.empty((batch, s)) for s in sizes[1:-1]]      # target hidden buffers
        self.targets = np.empty(batch)
        self.rows = np.arange(batch)


class DqnAgent:
    """Online/target network pair plus optimizer state."""

    def __init__(self, config: TrainConfig, ttc_cap: float = 10.0) -> None:
        config.validate()
        self.config = config
        self.net = QNetwork(hidden=config.hidden, seed=[config.seed, 0],
                            scales=obs_scale_vector(ttc_cap))
        self.target = self.net.copy()
        self.optimizer = _Optimizer(self.net.parameters(), config.optimizer, config.learning_rate)
        self._ws: _Workspace | None = None

    def _workspace(self, batch: int) -> _Workspace:
        if self._ws is None or self._ws.batch != batch:
            self._ws = _Workspace(self.net, batch)
        return self._ws

    def loss_and_grads(self, batch: dict[str, np.ndarray]) -> tuple[float, list[np.ndarray]]:
        """Loss and parameter gradients for one TD regression batch.

        The returned gradient arrays live in a reused workspace: copy them
        before computing another batch.
        """
        cfg = self.config
        obs = batch["obs"]
        ws = self._workspace(obs.shape[0])
        n_layers = len(self.net.weights)

        # TD targets from the target network (buffers are reused afterwards).
        np.multiply(batch["next_obs"], self.target.scales, out=ws.x)
        h = ws.x
        for i in range(n_layers - 1):
            np.matmul(h, self.target.weights[i], out=ws.th[i])
            ws.th[i] += self.target.biases[i]
            np.maximum(ws.th[i], 0.0, out=ws.th[i])
            h = ws.th[i]
        np.matmul(h, self.target.weights[-1], out=ws.tq)
        ws.tq += self.target.biases[-1]
        np.max(ws.tq, axis=1, out=ws.targets)
        ws.targets *= cfg.gamma
        ws.targets *= 1.0 - batch["dones"]
        ws.targets += batch["rewards"]

        # Online forward with caches.
        np.multiply(obs, self.net.scales, out=ws.x)
        h = ws.x
        for i in range(n_layers):
            np.matmul(h, self.net.weights[i], out=ws.acts[i])
            ws.acts[i] += self.net.biases[i]
            if i < n_layers - 1:
                np.maximum(ws.acts[i], 0.0, out=ws.acts[i])
                np.greater(ws.acts[i], 0.0, out=ws.masks[i])
            h = ws.acts[i]
        q = ws.acts[-1]

        acts_idx = batch["actions"]
        err = q[ws.rows, acts_idx] - ws.targets
        n = float(q.shape[0])
        if cfg.loss == "mse":
            loss = float(np.mean(err * err))
            derr = (2.0 / n) * err
        else:  # huber, delta = 1
            abs_err = np.abs(err)
            quad = np.minimum(abs_err, 1.0)
            loss = float(np.mean(0.5 * quad * quad + (abs_err - quad)))
            derr = np.clip(err, -1.0, 1.0) / n

        dq = ws.deltas[-1]
        dq.fill(0.0)
        dq[ws.rows, acts_idx] = derr
        for layer in range(n_layers - 1, -1, -1):
            a_in = ws.x if layer == 0 else ws.acts[layer - 1]
            delta = ws.deltas[layer]
            np.matmul(a_in.T, delta, out=ws.grads[2 * layer])
            np.sum(delta, axis=0, out=ws.grads[2 * layer + 1])
            if layer > 0:
                np.matmul(delta, self.net.weights[layer].T, out=ws.deltas[layer - 1])
                ws.deltas[layer - 1] *= ws.masks[layer - 1]
        return loss, ws.grads

    def train_step(self, batch: dict[str, np.ndarray]) -> float:
        """One gradient update toward the TD targets; returns the loss."""
        loss, grads = self.loss_and_grads(batch)
        self.optimizer.update(self.net.parameters(), grads)
        return loss

    def sync_target(self) -> None:
        self.target.load_from(self.net)


def sync_target(agent: DqnAgent) -> None:
    agent.sync_target()


@dataclass
class EpisodeLog:
    index: int
    end_step: int
    steps: int
    return_total: float
    mean_loss: float
    epsilon: float


@dataclass
class TrainLog:
    episodes: list[EpisodeLog] = field(default_factory=list)
    total_steps: int = 0
    gradient_updates: int = 0
    target_syncs: int = 0
    scorer_counters: dict[str, int] = field(default_factory=dict)

    def to_csv_bytes(self) -> bytes:
        lines = ["episode,end_step,steps,return,mean_loss,epsilon"]
        for ep in self.episodes:
            lines.append(
                f"{ep.index},{ep.end_step},{ep.steps},{ep.return_total!r},{ep.mean_loss!r},{ep.epsilon!r}"
            )
        lines.append("")
        lines.append("total_steps,gradient_updates,target_syncs")
        lines.append(f"{self.total_steps},{self.gradient_updates},{self.target_syncs}")
        if self.scorer_counters:
            lines.append("")
            lines.append(",".join(self.scorer_counters))
            lines.append(",".join(str(v) for v in self.scorer_counters.values()))
        return ("\n".join(lines) + "\n").encode()


def train(config: TrainConfig, scenario: ScenarioConfig, scorer=None) -> tuple[QNetwork, TrainLog]:
    """Run the full DQN loop on the given scenario.

    ``scorer`` (a :class:`shwy.llm.TransitionScorer`) is consulted on every
    transition when the shaping scheme uses scores; its failures resolve to
    fallback scores inside the scorer and never abort training.  Given a
    deterministic scorer the entire run is reproducible bit for bit.
    """
    config.validate()
    scheme = config.shaping
    if scheme.uses_scores and scorer is None:
        raise ValueError(f"shaping {scheme.kind.value} requires a scorer")

    rng = np.random.default_rng(config.seed)
    episode_seeds = np.random.default_rng([config.seed, 1])
    agent = DqnAgent(config, ttc_cap=scenario.ttc_cap)
    buffer = ReplayBuffer(config.buffer_capacity)
    log = TrainLog()

    state = reset(scenario, int(episode_seeds.integers(0, 2**31 - 1)))
    obs = extract_observation(state)
    ep_index = 0
    ep_return = 0.0
    ep_steps = 0
    ep_losses: list[float] = []

    for step_i in range(config.total_steps):
        eps = config.epsilon.value(step_i, config.total_steps)
        if rng.random() < eps:
            action = MetaAction(int(rng.integers(0, N_ACTIONS)))
        else:
            action = MetaAction(int(np.argmax(agent.net.forward(obs.as_vector()))))

        state, info = step(state, action)
        next_obs = extract_observation(state)
        r_env = env_reward(
            info.ego_speed_after, info.collided_now,
            config.reward_a, config.reward_b, scenario.v_min, scenario.v_max,
        )
        if scheme.uses_scores:
            raw = scorer.score(obs, action, next_obs)
            total = compose(scheme, r_env, normalize_score(raw)).total
        else:
            total = r_env
        done = info.collided_now
        buffer.add(obs.as_vector(), int(action), total, next_obs.as_vector(), done)
        ep_return += total
        ep_steps += 1

        if step_i + 1 > config.learning_starts and (step_i + 1) % config.train_freq == 0:
            for _ in range(config.gradient_steps):
                batch = buffer.sample(config.batch_size, rng)
                ep_losses.append(agent.train_step(batch))
                log.gradient_updates += 1
        if (step_i + 1) % config.target_update_interval == 0:
            agent.sync_target()
            log.target_syncs += 1

        if done or state.step_count >= scenario.horizon_steps:
            mean_loss = float(np.mean(ep_losses)) if ep_losses else float("nan")
            log.episodes.append(
                EpisodeLog(ep_index, step_i + 1, ep_steps, ep_return, mean_loss, eps)
            )
            ep_index += 1
            ep_return = 0.0
            ep_steps = 0
            ep_losses = []
            state = reset(scenario, int(episode_seeds.integers(0, 2**31 - 1)))
            obs = extract_observation(state)
        else:
            obs = next_obs

    if ep_steps > 0:
        mean_loss = float(np.mean(ep_losses)) if ep_losses else float("nan")
        log.episodes.append(
            EpisodeLog(ep_index, config.total_steps, ep_steps, ep_return, mean_loss,
                       config.epsilon.value(config.total_steps - 1, config.total_steps))
        )

    log.total_steps = config.total_steps
    if scorer is not None:
        log.scorer_counters = scorer.counters.as_dict()
    return agent.net, log
