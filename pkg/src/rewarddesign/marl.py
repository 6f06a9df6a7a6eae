"""Mean-field actor-critic training for the fleet world.

Each driver class shares one actor and one critic plus frozen target copies.
Rollouts are epsilon-greedy against the target actor; every episode one
minibatch is drawn uniformly from a ring replay buffer, the critic regresses
on bootstrapped mean-field targets, and the actor ascends the advantage-
weighted log-policy gradient. Targets are re-synced every ``tau`` episodes,
and both the exploration rate and the learning rate decay linearly over the
first part of the budget.

Observations are encoded as concatenated one-hot grid and one-hot time; the
critic additionally sees a one-hot action and the scalar mean action (the
demand-to-supply ratio of the grid the driver entered).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import (
    CLASSES,
    ExperienceBatch,
    N_ACTIONS,
    Scenario,
    Simulation,
)
from .rewards import MetricsReport, ObjectiveConfig, RewardDesign


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 1.0
    eta0: float = 1e-2
    eta_min_fraction: float = 0.1    # eta decays linearly to eta0 * this
    epsilon0: float = 0.5
    epsilon_min: float = 0.01
    decay_fraction: float = 0.6      # share of the budget over which decays run
    tau: int = 10                    # target-network sync period, in episodes
    batch_size: int = 1024           # K sampled tuples per update
    buffer_capacity: int = 100_000
    episodes: int = 3000
    clip_norm: float = 5.0          # global gradient-norm cap per update
    advantage_norm: bool = False    # standardize advantages per batch
    advantage_clip: float = 10.0    # cap on |advantage| (fare scale)
    actor_eta_scale: float = 3.0    # actor SGD rate relative to eta
    entropy_coef0: float = 0.1      # initial entropy bonus, decays like epsilon
    actor_weight_decay: float = 1e-4
    warmup_episodes: int = 100      # critic-only episodes before actor updates
    optimizer: str = "adam"         # critic optimizer: "adam" or "sgd"
    critic_hidden: tuple[int, ...] = (64, 32, 16)
    actor_hidden: tuple[int, ...] = (32, 16, 8)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.epsilon_min <= self.epsilon0 <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if self.tau < 1 or self.batch_size < 1 or self.episodes < 1:
            raise ValueError("tau, batch_size, and episodes must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def epsilon_at(self, episode: int) -> float:
        return _linear(episode, self.episodes, self.decay_fraction,
                       self.epsilon0, self.epsilon_min)

    def eta_at(self, episode: int) -> float:
        return _linear(episode, self.episodes, self.decay_fraction,
                       self.eta0, self.eta0 * self.eta_min_fraction)

    def entropy_at(self, episode: int) -> float:
        return _linear(episode, self.episodes, self.decay_fraction,
                       self.entropy_coef0, 0.0)


def _linear(episode, episodes, fraction, start, end):
    span = max(1, int(episodes * fraction))
    if episode >= span:
        return end
    return start + (end - start) * episode / span


@dataclass
class ClassNets:
    actor: nn.Mlp
    critic: nn.Mlp
    target_actor: nn.Mlp
    target_critic: nn.Mlp
    actor_opt: nn.AdamState | None = None
    critic_opt: nn.AdamState | None = None

    def sync_targets(self) -> None:
        nn.copy_into_target(self.actor, self.target_actor)
        nn.copy_into_target(self.critic, self.target_critic)


@dataclass
class Policy:
    nets: dict[str, ClassNets]
    n_grids: int
    n_times: int

    @property
    def obs_dim(self) -> int:
        return self.n_grids + self.n_times


def make_policy(scenario: Scenario, hyper: Hyperparams, seed: int) -> Policy:
    n_grids, n_times = scenario.n_grids, scenario.horizon + 1
    obs_dim = n_grids + n_times
    critic_dim = obs_dim + N_ACTIONS + 1
    nets = {}
    for ci, cls in enumerate(CLASSES):
        if scenario.fleet.get(cls, 0) == 0:
            continue
        actor = nn.mlp_init((obs_dim, *hyper.actor_hidden, N_ACTIONS),
                            seed=seed * 4 + ci * 2, head=nn.HEAD_SOFTMAX)
        critic = nn.mlp_init((critic_dim, *hyper.critic_hidden, 1),
                             seed=seed * 4 + ci * 2 + 1)
        bundle = ClassNets(actor, critic, nn.clone(actor), nn.clone(critic))
        if hyper.optimizer == "adam":
            # adaptive steps suit the critic's mixed-scale regression targets;
            # the actor stays on plain SGD so the policy-gradient direction
            # (relative advantage magnitudes) is followed faithfully
            bundle.critic_opt = nn.adam_init(critic)
        nets[cls] = bundle
    return Policy(nets, n_grids, n_times)


def save_policy(policy: Policy, path) -> None:
    arrays = {
        "meta": np.asarray([policy.n_grids, policy.n_times], dtype=np.int64),
        "classes": np.asarray([cls for cls in policy.nets], dtype="U16"),
    }
    for cls, bundle in policy.nets.items():
        for name in ("actor", "critic", "target_actor", "target_critic"):
            arrays.update(nn.checkpoint_arrays(getattr(bundle, name), prefix=f"{cls}.{name}."))
    np.savez(path, **arrays)


def load_policy(path) -> Policy:
    with np.load(path) as data:
        n_grids, n_times = (int(v) for v in data["meta"])
        nets = {}
        for cls in data["classes"]:
            cls = str(cls)
            nets[cls] = ClassNets(*(
                nn.from_checkpoint_arrays(data, prefix=f"{cls}.{name}.")
                for name in ("actor", "critic", "target_actor", "target_critic")
            ))
    return Policy(nets, n_grids, n_times)


class MeanActionField:
    """Running estimate of the mean action (demand/supply ratio) a driver
    finds in each (grid, time), smoothed across episodes.

    The advantage baseline must average the critic over counterfactual
    actions, and each counterfactual action lands in a different grid with
    its own competition level; this table supplies those per-destination
    mean actions from data instead of reusing the taken action's value.
    """

    def __init__(self, n_grids: int, n_times: int, rate: float = 0.05):
        self.values = np.zeros((n_grids, n_times))
        self.seen = np.zeros((n_grids, n_times), dtype=bool)
        self.rate = rate

    def update(self, mam) -> None:
        for (grid, t), supply in mam.supply.items():
            if t >= self.values.shape[1]:
                continue
            ratio = mam.demand[(grid, t)] / supply
            if self.seen[grid, t]:
                self.values[grid, t] += self.rate * (ratio - self.values[grid, t])
            else:
                self.values[grid, t] = ratio
                self.seen[grid, t] = True

    def lookup(self, grids, times) -> np.ndarray:
        times = np.clip(np.asarray(times, dtype=np.int64), 0, self.values.shape[1] - 1)
        return self.values[np.asarray(grids, dtype=np.int64), times]


def move_matrix(scenario: Scenario) -> np.ndarray:
    """Destination grid for every (grid, action), boundary moves staying put."""
    w, h = scenario.width, scenario.height
    grids = np.arange(scenario.n_grids)
    rows, cols = grids // w, grids % w
    out = np.empty((scenario.n_grids, N_ACTIONS), dtype=np.int64)
    drow = [0, -1, 1, 0, 0]
    dcol = [0, 0, 0, -1, 1]
    for a in range(N_ACTIONS):
        r = rows + drow[a]
        c = cols + dcol[a]
        off = (r < 0) | (r >= h) | (c < 0) | (c >= w)
        r[off], c[off] = rows[off], cols[off]
        out[:, a] = r * w + c
    return out


# ---------------------------------------------------------------------------
# encodings

def encode_obs(grids, times, n_grids: int, n_times: int) -> np.ndarray:
    grids = np.asarray(grids, dtype=np.int64)
    times = np.clip(np.asarray(times, dtype=np.int64), 0, n_times - 1)
    x = np.zeros((len(grids), n_grids + n_times))
    rows = np.arange(len(grids))
    x[rows, grids] = 1.0
    x[rows, n_grids + times] = 1.0
    return x


def encode_critic_input(grids, times, actions, mean_actions,
                        n_grids: int, n_times: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    x = np.zeros((len(actions), n_grids + n_times + N_ACTIONS + 1))
    x[:, :n_grids + n_times] = encode_obs(grids, times, n_grids, n_times)
    x[np.arange(len(actions)), n_grids + n_times + actions] = 1.0
    x[:, -1] = np.asarray(mean_actions, dtype=float)
    return x


def _all_action_inputs(grids, times, mean_actions, n_grids, n_times):
    """Critic inputs for every (sample, action) pair, shape (n*5, d)."""
    n = len(grids)
    rep = np.repeat(np.arange(n), N_ACTIONS)
    acts = np.tile(np.arange(N_ACTIONS), n)
    return encode_critic_input(np.asarray(grids)[rep], np.asarray(times)[rep],
                               acts, np.asarray(mean_actions)[rep],
                               n_grids, n_times)


# ---------------------------------------------------------------------------
# replay buffer

class ReplayBuffer:
    """Capacity-bounded ring store of experience tuples, uniform sampling."""

    FIELDS = ("obs_grid", "obs_time", "action", "reward", "mean_action",
              "next_grid", "next_time", "terminal")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 0
        self._pos = 0
        self._data = {
            "obs_grid": np.zeros(capacity, dtype=np.int64),
            "obs_time": np.zeros(capacity, dtype=np.int64),
            "action": np.zeros(capacity, dtype=np.int64),
            "reward": np.zeros(capacity),
            "mean_action": np.zeros(capacity),
            "next_grid": np.zeros(capacity, dtype=np.int64),
            "next_time": np.zeros(capacity, dtype=np.int64),
            "terminal": np.zeros(capacity, dtype=bool),
        }

    def __len__(self) -> int:
        return self.size

    def extend(self, batch: ExperienceBatch) -> None:
        n = len(batch)
        if n == 0:
            return
        if n >= self.capacity:  # keep only the newest records
            for name in self.FIELDS:
                self._data[name][:] = getattr(batch, name)[n - self.capacity:]
            self.size, self._pos = self.capacity, 0
            return
        first = min(n, self.capacity - self._pos)
        for name in self.FIELDS:
            col = getattr(batch, name)
            self._data[name][self._pos:self._pos + first] = col[:first]
            if first < n:
                self._data[name][:n - first] = col[first:]
        self._pos = (self._pos + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def sample(self, k: int, rng) -> ExperienceBatch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=k)
        return ExperienceBatch(**{name: self._data[name][idx] for name in self.FIELDS})


# ---------------------------------------------------------------------------
# action selection and updates

def select_actions(policy: Policy, cls: str, grids, times, epsilon: float, rng,
                   use_target: bool = True, greedy: bool = False) -> np.ndarray:
    """Epsilon-greedy action draw: uniform with probability epsilon, else
    sampled from (or greedy under) the actor's distribution."""
    n = len(grids)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    bundle = policy.nets[cls]
    actor = bundle.target_actor if use_target else bundle.actor
    key = np.asarray(grids, dtype=np.int64) * policy.n_times + np.asarray(times, dtype=np.int64)
    uniq, inv = np.unique(key, return_inverse=True)
    probs = nn.forward(actor, encode_obs(uniq // policy.n_times, uniq % policy.n_times,
                                         policy.n_grids, policy.n_times))
    per_driver = probs[inv]
    if greedy:
        acts = per_driver.argmax(axis=1).astype(np.int64)
    else:
        cum = np.cumsum(per_driver, axis=1)
        draws = rng.random(n)
        acts = np.minimum((draws[:, None] > cum).sum(axis=1), N_ACTIONS - 1).astype(np.int64)
    if epsilon > 0:
        explore = rng.random(n) < epsilon
        acts[explore] = rng.integers(0, N_ACTIONS, size=int(explore.sum()))
    return acts


def _step_net(net, grads, eta, clip_norm, opt_state):
    if clip_norm:
        nn.clip_gradients(grads, clip_norm)
    if opt_state is not None:
        nn.adam_update(net, grads, opt_state, eta)
    else:
        nn.apply_update(net, grads, eta)


def critic_targets(policy: Policy, cls: str, batch: ExperienceBatch, gamma: float) -> np.ndarray:
    """Bootstrapped regression targets r + gamma * max_a Q_target(o', a, abar).

    The expectation over the next mean action is approximated by the single
    observed one; terminal records bootstrap nothing.
    """
    targets = batch.reward.astype(float).copy()
    live = ~batch.terminal
    if gamma > 0 and np.any(live):
        x = _all_action_inputs(batch.next_grid[live], batch.next_time[live],
                               batch.mean_action[live], policy.n_grids, policy.n_times)
        q = nn.forward(policy.nets[cls].target_critic, x).reshape(-1, N_ACTIONS)
        targets[live] += gamma * q.max(axis=1)
    return targets


def critic_update(policy: Policy, cls: str, batch: ExperienceBatch,
                  gamma: float, eta: float, clip_norm: float | None = None) -> float:
    """One SGD step on the mean squared error against the mean-field targets;
    returns the pre-step loss. Gradients do not flow through the target."""
    bundle = policy.nets[cls]
    y = critic_targets(policy, cls, batch, gamma)
    x = encode_critic_input(batch.obs_grid, batch.obs_time, batch.action,
                            batch.mean_action, policy.n_grids, policy.n_times)
    q, cache = nn.forward_cached(bundle.critic, x)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite critic loss for class {cls!r}")
    grads = nn.backward_from_output(bundle.critic, cache, (2.0 * err / len(err))[:, None])
    _step_net(bundle.critic, grads, eta, clip_norm, bundle.critic_opt)
    return loss


def baseline_value(policy: Policy, cls: str, grids, times, mean_actions) -> np.ndarray:
    """State baseline: the target critic averaged over the target actor's
    action distribution at the observed mean action."""
    bundle = policy.nets[cls]
    probs = nn.forward(bundle.target_actor,
                       encode_obs(grids, times, policy.n_grids, policy.n_times))
    x = _all_action_inputs(grids, times, mean_actions, policy.n_grids, policy.n_times)
    q = nn.forward(bundle.target_critic, x).reshape(-1, N_ACTIONS)
    return (probs * q).sum(axis=1)


def counterfactual_values(policy: Policy, cls: str, grids, times,
                          mean_field: MeanActionField | None,
                          moves: np.ndarray | None,
                          fallback_mean) -> np.ndarray:
    """Target-critic values Q(o, a, abar_a) for every action, shape (n, 5).

    Each action is paired with the mean action a driver would actually find
    in that action's destination grid (from the running field estimate); if
    no field is supplied the single fallback value is used for all actions.
    """
    n = len(grids)
    grids = np.asarray(grids, dtype=np.int64)
    times = np.asarray(times, dtype=np.int64)
    if mean_field is not None and moves is not None:
        dests = moves[grids]                              # (n, 5)
        mean = mean_field.lookup(dests.ravel(), np.repeat(times + 1, N_ACTIONS))
    else:
        mean = np.repeat(np.asarray(fallback_mean, dtype=float), N_ACTIONS)
    rep = np.repeat(np.arange(n), N_ACTIONS)
    acts = np.tile(np.arange(N_ACTIONS), n)
    x = encode_critic_input(grids[rep], times[rep], acts, mean,
                            policy.n_grids, policy.n_times)
    return nn.forward(policy.nets[cls].target_critic, x).reshape(n, N_ACTIONS)


def actor_update(policy: Policy, cls: str, batch: ExperienceBatch, eta: float,
                 clip_norm: float | None = None,
                 mean_field: MeanActionField | None = None,
                 moves: np.ndarray | None = None,
                 advantage_norm: bool = False,
                 advantage_clip: float | None = None,
                 entropy_coef: float = 0.0,
                 weight_decay: float = 0.0) -> None:
    """One ascent step along (Q_target - baseline) * grad log pi, batch-averaged.

    The baseline is the target critic averaged over the target actor's
    distribution, each action evaluated at its destination's estimated mean
    action so the baseline depends on the observation only.
    """
    bundle = policy.nets[cls]
    x_taken = encode_critic_input(batch.obs_grid, batch.obs_time, batch.action,
                                  batch.mean_action, policy.n_grids, policy.n_times)
    q_taken = nn.forward(bundle.target_critic, x_taken)[:, 0]
    q_all = counterfactual_values(policy, cls, batch.obs_grid, batch.obs_time,
                                  mean_field, moves, batch.mean_action)
    pi = nn.forward(bundle.target_actor,
                    encode_obs(batch.obs_grid, batch.obs_time, policy.n_grids, policy.n_times))
    advantage = q_taken - (pi * q_all).sum(axis=1)
    if advantage_norm and len(advantage) > 1:
        advantage = (advantage - advantage.mean()) / (advantage.std() + 1e-8)
    if advantage_clip:
        advantage = np.clip(advantage, -advantage_clip, advantage_clip)

    obs = encode_obs(batch.obs_grid, batch.obs_time, policy.n_grids, policy.n_times)
    probs, cache = nn.forward_cached(bundle.actor, obs)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(batch)), batch.action] = 1.0
    # descent on the negated objective == ascent on advantage-weighted log pi
    grad_logits = -(advantage / len(batch))[:, None] * (onehot - probs)
    if entropy_coef:
        # entropy bonus keeps early policies soft so a premature favorite
        # can still be overturned once the critic sharpens
        logp = np.log(np.clip(probs, 1e-12, None))
        ent = -(probs * logp).sum(axis=1, keepdims=True)
        grad_logits += entropy_coef * probs * (logp + ent) / len(batch)
    if not np.all(np.isfinite(grad_logits)):
        raise TrainingDiverged(f"non-finite policy gradient for class {cls!r}")
    grads = nn.backward_from_logits(bundle.actor, cache, grad_logits)
    if weight_decay:
        for w, g in zip(bundle.actor.weights, grads.d_weights):
            g += weight_decay * w
        for b, g in zip(bundle.actor.biases, grads.d_biases):
            g += weight_decay * b
    _step_net(bundle.actor, grads, eta, clip_norm, bundle.actor_opt)


# ---------------------------------------------------------------------------
# training and evaluation loops

def rollout(policy: Policy, scenario: Scenario, design: RewardDesign, rng,
            epsilon: float, use_target: bool = True, greedy: bool = False,
            collect=None, on_mean_actions=None) -> Simulation:
    sim = Simulation(scenario, design, rng)
    while not sim.done:
        obs = sim.observations()
        actions = {
            cls: select_actions(policy, cls, grids, times, epsilon, rng,
                                use_target=use_target, greedy=greedy)
            for cls, (ids, grids, times) in obs.items()
        }
        batches, mam = sim.step(actions)
        if collect is not None:
            collect(batches)
        if on_mean_actions is not None:
            on_mean_actions(mam)
    return sim


def train(scenario: Scenario, design: RewardDesign, hyper: Hyperparams, seed: int,
          objective_config: ObjectiveConfig | None = None,
          callback=None) -> tuple[Policy, list[MetricsReport]]:
    """Run the full training loop; returns the policy and the per-episode trace."""
    config = objective_config or ObjectiveConfig()
    rng = np.random.default_rng(seed)
    policy = make_policy(scenario, hyper, seed)
    buffers = {cls: ReplayBuffer(hyper.buffer_capacity) for cls in policy.nets}
    mean_field = MeanActionField(policy.n_grids, policy.n_times)
    moves = move_matrix(scenario)
    trace: list[MetricsReport] = []

    for episode in range(hyper.episodes):
        epsilon = hyper.epsilon_at(episode)
        eta = hyper.eta_at(episode)

        def store(batches):
            for cls, batch in batches.items():
                buffers[cls].extend(batch)

        sim = rollout(policy, scenario, design, rng, epsilon, collect=store,
                      on_mean_actions=mean_field.update)
        trace.append(sim.stats.metrics(design, config, scenario))

        for cls in policy.nets:
            if len(buffers[cls]) == 0:
                continue
            batch = buffers[cls].sample(min(hyper.batch_size, len(buffers[cls])), rng)
            try:
                critic_update(policy, cls, batch, hyper.gamma, eta, hyper.clip_norm)
                if episode >= hyper.warmup_episodes:
                    actor_update(policy, cls, batch, eta * hyper.actor_eta_scale,
                                 hyper.clip_norm,
                                 mean_field=mean_field, moves=moves,
                                 advantage_norm=hyper.advantage_norm,
                                 advantage_clip=hyper.advantage_clip,
                                 entropy_coef=hyper.entropy_at(episode),
                                 weight_decay=hyper.actor_weight_decay)
            except TrainingDiverged as err:
                raise TrainingDiverged(f"episode {episode}: {err}") from None

        if (episode + 1) % hyper.tau == 0:
            for bundle in policy.nets.values():
                bundle.sync_targets()
        if callback is not None:
            callback(episode, trace[-1])
    return policy, trace


def evaluate(policy: Policy, scenario: Scenario, design: RewardDesign,
             episodes: int, seed: int,
             objective_config: ObjectiveConfig | None = None,
             stochastic: bool = True, detail: bool = False) -> MetricsReport:
    """Execute the trained actors with no exploration and average the metrics.

    Stochastic execution samples from the actor distribution (the shared
    policy realizes fractional splits only through sampling); greedy
    execution takes the argmax action.
    """
    config = objective_config or ObjectiveConfig()
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(episodes):
        sim = rollout(policy, scenario, design, rng, epsilon=0.0,
                      use_target=False, greedy=not stochastic)
        reports.append(sim.stats.metrics(design, config, scenario, detail=detail))
    return average_reports(reports)


def average_reports(reports: list[MetricsReport]) -> MetricsReport:
    out = MetricsReport(alpha=reports[0].alpha)
    for name in ("orr", "osc", "ptc", "ics", "mean_reward", "objective"):
        setattr(out, name, float(np.mean([getattr(r, name) for r in reports])))
    for name in ("occupancy", "ics_detail"):
        dicts = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if dicts:
            keys = dicts[0].keys()
            setattr(out, name, {k: float(np.mean([d[k] for d in dicts])) for k in keys})
    return out


def trace_to_csv(trace: list[MetricsReport], path, mode: str) -> None:
    """Per-episode convergence trace; columns depend on the design mode."""
    toll_mode = mode == "toll"
    header = ("episode,ptc,ics,mean_reward" if toll_mode
              else "episode,orr,one_minus_osc,mean_reward")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, r in enumerate(trace):
            if toll_mode:
                fh.write(f"{i},{r.ptc:.6f},{r.ics:.6f},{r.mean_reward:.6f}\n")
            else:
                fh.write(f"{i},{r.orr:.6f},{1.0 - r.osc:.6f},{r.mean_reward:.6f}\n")


def make_bilevel_evaluator(scenario: Scenario, mode: str, hyper: Hyperparams,
                           objective_config: ObjectiveConfig, seed: int = 0,
                           eval_episodes: int = 100, stochastic: bool = True,
                           flat_grids: frozenset[int] = frozenset()):
    """Objective alpha -> f for the upper-level optimizer: trains the lower
    level under the design at alpha, then evaluates the composed objective."""
    counter = {"calls": 0}

    def evaluator(alpha: float) -> float:
        counter["calls"] += 1
        design = RewardDesign(mode=mode, alpha=float(alpha), flat_grids=flat_grids)
        run_seed = seed + 1000 * counter["calls"]
        policy, _ = train(scenario, design, hyper, run_seed, objective_config)
        report = evaluate(policy, scenario, design, eval_episodes, run_seed + 1,
                          objective_config, stochastic=stochastic)
        return report.objective

    return evaluator
