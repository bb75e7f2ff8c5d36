"""Deep Q-learning agent: targets, exploration, training, curriculum and transfer."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from modelock.dqn.network import NetSpec, QNetwork, forward, loss_and_grad
from modelock.dqn.replay import ReplayBuffer, Transition


class DivergenceError(RuntimeError):
    """Raised when the Q-values grow beyond the configured bound."""

    def __init__(self, episode: int, step: int, mean_abs_q: float, bound: float, log=None):
        self.episode, self.step, self.mean_abs_q, self.bound = episode, step, mean_abs_q, bound
        self.log = log or []
        super().__init__(
            f"training diverged at episode {episode}, update step {step}: "
            f"mean |Q| = {mean_abs_q:.4g} exceeds bound {bound:.4g}")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    lr: float = 1e-4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.99  # per episode, exponential
    batch_size: int = 64
    warmup_size: int = 500
    replay_capacity: int = 20_000
    target_blend: float = 0.01
    episodes: int = 300
    seed: int = 0
    double: bool = False  # argmax on the action network, value from the target
    divergence_bound: float = 1e3
    train_every: int = 1  # environment steps per minibatch update
    max_grad_norm: float = 0.0  # 0 disables clipping
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.eps_end <= self.eps_start <= 1 and 0 < self.eps_decay <= 1):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1 and 0 < eps_decay <= 1")
        if self.batch_size < 1 or self.warmup_size < self.batch_size:
            raise ValueError("need batch_size >= 1 and warmup_size >= batch_size")
        if self.replay_capacity < self.warmup_size:
            raise ValueError("replay_capacity must be >= warmup_size")
        if not 0 < self.target_blend <= 1:
            raise ValueError("target_blend must lie in (0, 1]")
        if self.episodes < 0 or self.train_every < 1:
            raise ValueError("episodes must be >= 0 and train_every >= 1")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay ** episode)


@dataclass(frozen=True)
class FinetuneConfig:
    """Transfer settings: resume training with a modest exploration restart."""

    train: TrainConfig = TrainConfig()
    eps_restart: float = 0.3
    episodes: int = 50

    def __post_init__(self):
        if not self.train.eps_end < self.eps_restart < self.train.eps_start:
            raise ValueError("eps_restart must lie strictly between eps_end and eps_start")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


@dataclass
class EpisodeLog:
    episode: int
    total_raw_reward: float
    total_rescaled_reward: float
    mean_loss: float
    eps: float
    steps: int
    max_abs_q: float = float("nan")  # largest batch mean |Q| seen by the guard

    def row(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    net: QNetwork
    log: list[EpisodeLog]
    stopped_early: bool = False


class Adam:
    def __init__(self, size: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------- targets

def ddqn_target(t: Transition, theta_target: QNetwork, gamma: float,
                theta_action: QNetwork | None = None) -> float:
    """``r`` if done, else ``r + gamma * Q'(s', a*)``.

    Without ``theta_action``, ``a*`` maximizes the target network itself.
    With it, ``a*`` is the action network's argmax (double Q-learning).
    """
    if t.done:
        return float(t.r)
    q_next = forward(theta_target, t.s_next)
    if theta_action is None:
        return float(t.r + gamma * q_next.max())
    a_star = int(np.argmax(forward(theta_action, t.s_next)))
    return float(t.r + gamma * q_next[a_star])


def batch_targets(r, s_next, done, target: QNetwork, gamma: float,
                  action: QNetwork | None = None) -> np.ndarray:
    q_next = target.forward_batch(s_next)
    if action is None:
        best = q_next.max(axis=1)
    else:
        a_star = action.forward_batch(s_next).argmax(axis=1)
        best = q_next[np.arange(len(a_star)), a_star]
    return np.where(done, r, r + gamma * best)


def tabular_q_update(Q: np.ndarray, s: int, a: int, r: float, s_next: int,
                     alpha: float, gamma: float, terminal: bool = False) -> np.ndarray:
    """One Q-learning update on a copy of the table."""
    S, A = Q.shape
    if not (0 <= s < S and 0 <= s_next < S and 0 <= a < A):
        raise IndexError(f"state/action index out of range for a {S}x{A} table")
    Q = Q.copy()
    target = r if terminal else r + gamma * Q[s_next].max()
    Q[s, a] += alpha * (target - Q[s, a])
    return Q


def value_iteration(next_state: np.ndarray, rewards: np.ndarray, terminal: np.ndarray,
                    gamma: float, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Optimal Q for a deterministic MDP.

    ``next_state[s, a]`` and ``rewards[s, a]`` describe transitions; entering a
    state flagged in ``terminal`` ends the episode.
    """
    S, A = rewards.shape
    Q = np.zeros((S, A))
    for _ in range(max_iter):
        V = np.where(terminal, 0.0, Q.max(axis=1))
        Qn = rewards + gamma * V[next_state]
        if np.max(np.abs(Qn - Q)) < tol:
            return Qn
        Q = Qn
    return Q


# ---------------------------------------------------------------- policy

def select_action(q_values, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice; ties go to the lowest index."""
    q = np.asarray(q_values)
    if q.size == 0:
        raise ValueError("empty q_values")
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def soft_update(theta_target: QNetwork, theta_action: QNetwork, blend: float) -> QNetwork:
    """``theta' <- (1 - blend) theta' + blend theta`` in place; returns the target."""
    if theta_target.params.shape != theta_action.params.shape:
        raise ValueError("parameter shapes differ")
    if not 0 < blend <= 1:
        raise ValueError("blend must lie in (0, 1]")
    if blend == 1:
        theta_target.params[...] = theta_action.params
    else:
        theta_target.params *= 1 - blend
        theta_target.params += blend * theta_action.params
    return theta_target


def spec_for_env(env, conv=((8, 5), (16, 5)), fc=(256, 128), pool: int = 2,
                 slope: float = 0.01) -> NetSpec:
    ch, length, extra = env.observation_layout()
    return NetSpec(ch, length, extra, env.n_actions, conv=conv if ch else (), pool=pool,
                   fc=fc, slope=slope)


# ---------------------------------------------------------------- training

def train(env, cfg: TrainConfig, net: QNetwork | None = None, spec: NetSpec | None = None,
          callback: Callable[[int, QNetwork, list], bool] | None = None) -> TrainResult:
    """Deep Q-learning with replay, a softly updated target network and Adam.

    ``callback(episode, net, log)`` runs after every episode; returning True
    stops training early.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, act_rng, sample_rng = (np.random.default_rng(s) for s in seeds[:3])
    if net is None:
        net = QNetwork.initialize(spec or spec_for_env(env), init_rng)
    else:
        net = net.copy()
    if net.obs_len != env.obs_len or net.n_actions != env.n_actions:
        raise ValueError(f"network ({net.obs_len} inputs, {net.n_actions} actions) does not "
                         f"match environment ({env.obs_len}, {env.n_actions})")
    if hasattr(env, "rng"):
        env.rng = np.random.default_rng(seeds[3])
    target = net.copy()
    opt = Adam(net.size, cfg.lr, cfg.adam_betas, cfg.adam_eps)
    buf = ReplayBuffer(cfg.replay_capacity, env.obs_len, cfg.warmup_size)
    log: list[EpisodeLog] = []
    n_updates = 0
    total_steps = 0
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        obs = env.reset()
        raw_total = scaled_total = 0.0
        losses = []
        peak_q = float("nan")
        steps = 0
        done = False
        while not done:
            a = select_action(forward(net, obs), eps, act_rng)
            res = env.step(a)
            done = res.done
            terminal = bool(res.info.get("terminal", done))
            buf.push(Transition(obs, a, res.reward, res.observation, terminal))
            raw_total += res.info.get("raw_reward", res.reward)
            scaled_total += res.reward
            obs = res.observation
            steps += 1
            total_steps += 1
            if buf.size >= cfg.warmup_size and total_steps % cfg.train_every == 0:
                b = buf.sample(cfg.batch_size, sample_rng)
                y = batch_targets(b.r, b.s_next, b.done, target, cfg.gamma,
                                  net if cfg.double else None)
                loss, g, q = loss_and_grad(net, b.s, b.a, y, return_q=True)
                if cfg.max_grad_norm > 0:
                    norm = np.linalg.norm(g)
                    if norm > cfg.max_grad_norm:
                        g *= cfg.max_grad_norm / norm
                opt.step(net.params, g)
                soft_update(target, net, cfg.target_blend)
                n_updates += 1
                losses.append(loss)
                mean_q = float(np.mean(np.abs(q)))  # batch Q-values before this update
                peak_q = mean_q if np.isnan(peak_q) else max(peak_q, mean_q)
                if not np.isfinite(mean_q) or mean_q > cfg.divergence_bound:
                    raise DivergenceError(ep, n_updates, mean_q, cfg.divergence_bound, log)
        log.append(EpisodeLog(ep, raw_total, scaled_total,
                              float(np.mean(losses)) if losses else float("nan"), eps, steps,
                              peak_q))
        if callback is not None and callback(ep, net, log):
            return TrainResult(net, log, True)
    return TrainResult(net, log, False)


@dataclass
class EvalEpisode:
    raw_rewards: list[float]
    rescaled_rewards: list[float]
    actions: list[int]
    final_ctrl: object = None
    initial_ctrl: object = None

    @property
    def final_raw(self) -> float:
        return self.raw_rewards[-1] if self.raw_rewards else float("nan")


def evaluate(env, net: QNetwork, initials: Sequence | int) -> list[EvalEpisode]:
    """Greedy rollouts, one per initial control state (or ``initials`` resets)."""
    starts = [None] * initials if isinstance(initials, int) else list(initials)
    out = []
    for start in starts:
        obs = env.reset() if start is None else env.reset(start)
        ep = EvalEpisode([], [], [], initial_ctrl=getattr(env, "ctrl", None))
        done = False
        while not done:
            a = int(np.argmax(forward(net, obs)))
            res = env.step(a)
            ep.actions.append(a)
            ep.raw_rewards.append(float(res.info.get("raw_reward", res.reward)))
            ep.rescaled_rewards.append(float(res.reward))
            obs, done = res.observation, res.done
        ep.final_ctrl = res.info.get("ctrl")
        out.append(ep)
    return out


# ---------------------------------------------------------------- curriculum / transfer

def grow_controllers(net: QNetwork, new_count: int, rng: np.random.Generator | None = None,
                     noise: float = 1e-3) -> QNetwork:
    """Enlarge a network from ``c`` to ``new_count`` controlled angles.

    New angles are appended to the observation and act as the least
    significant digits of the action index. Their input weights start at
    zero and actions that hold every new angle copy the old output rows, so
    the grown network reproduces the old Q-values exactly; the remaining
    output rows are small random values.
    """
    old = net.spec
    old_count = int(round(np.log(old.n_actions) / np.log(3)))
    if 3 ** old_count != old.n_actions or old.n_extra != old_count:
        raise ValueError("network is not a controller network (3^c actions, c angle inputs)")
    if new_count < old_count:
        raise ValueError("shrinking the controller set is not supported")
    if new_count == old_count:
        return net.copy()
    rng = rng or np.random.default_rng(0)
    spec = replace(old, n_extra=new_count, n_actions=3 ** new_count)
    new = QNetwork(spec)
    extra = new_count - old_count
    linear_old = [l for l in net.layers if hasattr(l, "W")]
    linear_new = [l for l in new.layers if hasattr(l, "W")]
    first_fc = len(net.conv_layers) // 3
    for i, (lo, ln) in enumerate(zip(linear_old, linear_new)):
        W, b = lo.W, lo.b
        if i == first_fc:  # rows for the appended angle inputs
            W = np.concatenate([W, np.zeros((extra, W.shape[1]))], axis=0)
        if i == len(linear_old) - 1:
            k = 3 ** extra
            cols = np.zeros((W.shape[0], spec.n_actions))
            bias = np.zeros(spec.n_actions)
            scale = noise * (np.std(W) if W.size > 1 else 1.0)
            for j in range(spec.n_actions):
                prefix, suffix = divmod(j, k)
                if suffix == (k - 1) // 2:
                    cols[:, j], bias[j] = W[:, prefix], b[prefix]
                else:
                    cols[:, j] = rng.normal(0.0, scale, W.shape[0])
            W, b = cols, bias
        ln.W[...] = W
        ln.b[...] = b
    return new


def transfer_finetune(net: QNetwork, env, cfg_ft: FinetuneConfig,
                      callback: Callable | None = None) -> TrainResult:
    """Resume training at a new birefringence with an exploration restart."""
    if cfg_ft.episodes == 0:
        return TrainResult(net.copy(), [], False)
    cfg = replace(cfg_ft.train, eps_start=cfg_ft.eps_restart, episodes=cfg_ft.episodes)
    return train(env, cfg, net=net, callback=callback)
