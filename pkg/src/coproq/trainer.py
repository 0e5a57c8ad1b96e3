"""The interactive training loop and its variants.

One iteration = Collect (epsilon-greedy rollout, query segments, gather
corrective labels), Align (fit labels with the margin loss until accuracy
clears the target), Prop (epochs of combined TD + margin descent over the
recent window, target synced at epoch starts). Baselines and ablations are
the same loop with phases or loss terms switched per the METHODS table; the
flat replay trainer (rainbow_lite) and offline behavior cloning live here
too, along with greedy evaluation and run artifacts (metrics.csv, align
log, labels, checkpoints).
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, nn, qnet
from .buffers import (
    CorrectiveLabel,
    FeedbackBuffer,
    NStepAssembler,
    Transition,
    TransitionBuffer,
    Window,
    recent_window,
    sample_minibatches,
    sample_query_segments,
)
from .exceptions import ConfigurationError, NumericalError, UsageError
from .losses import LossWeights, label_accuracy, margin_align_step, prop_step

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "iter", "env_steps", "labels_total", "align_acc", "align_steps",
    "loss_td1", "loss_tdn", "loss_mg_label", "loss_mg_tgt", "crash_rate",
    "distance_avg", "speed_avg", "lane_change_ratio", "lane_pos_avg",
    "steps_avg", "wall_s",
]


@dataclass
class TrainerConfig:
    total_iters: int = 150
    rollout_len: int = 1000
    queries_per_iter: int = 10
    segment_len: int = 10
    n_cf: int = 1
    acc_target: float = 0.98
    prop_epochs: int = 2
    window_iters: int = 100
    epsilon: float = 0.01
    margin: float = 0.05
    pseudo_weight: float = 0.5
    gamma: float = 0.99
    n_step: int = 20
    batch_size: int = 128
    lr: float = 1e-4
    align_max_epochs: int = 50
    eval_episodes: int = 50
    hidden: int = 128
    # flat replay trainer
    rl_batch_size: int = 32
    rl_target_sync: int = 2000
    rl_warmup: int = 1600
    rl_eps_start: float = 1.0
    rl_eps_end: float = 0.05
    rl_eps_fraction: float = 0.1
    rl_replay_capacity: int = 100_000
    rl_eval_every: int = 10_000

    def __post_init__(self):
        if self.total_iters < 1 or self.rollout_len < 1:
            raise ConfigurationError("need at least one iteration and step")
        if self.queries_per_iter * self.segment_len > self.rollout_len:
            raise ConfigurationError(
                "query budget M*T exceeds the rollout length")
        if not 0.0 < self.acc_target <= 1.0:
            raise ConfigurationError("acc_target must be in (0, 1]")
        if not 0.0 <= self.pseudo_weight <= 1.0:
            raise ConfigurationError("pseudo_weight must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must be in (0, 1]")
        if self.batch_size < 1 or self.rl_batch_size < 1:
            raise ConfigurationError("batch sizes must be positive")

    def loss_weights(self, use_pseudo: bool = True) -> LossWeights:
        return LossWeights(
            margin=self.margin,
            pseudo_weight=self.pseudo_weight if use_pseudo else 0.0,
            gamma=self.gamma,
            n_step=self.n_step,
        )


@dataclass(frozen=True)
class MethodSpec:
    align: bool
    prop: bool
    label_term: str = "margin"   # "margin" | "pvp"
    use_pseudo: bool = False
    zero_rewards: bool = False


# phase/loss schedule per method; rainbow_lite and bc run separate loops
METHODS = {
    "icopro": MethodSpec(align=True, prop=True, use_pseudo=True),
    "dagger": MethodSpec(align=True, prop=False),
    "dqfd": MethodSpec(align=False, prop=True),
    "ablate_align": MethodSpec(align=False, prop=True, use_pseudo=True),
    "ablate_tgt": MethodSpec(align=True, prop=True, use_pseudo=False),
    "pvp_plus_r": MethodSpec(align=False, prop=True, label_term="pvp"),
    "pvp_minus_r": MethodSpec(align=False, prop=True, label_term="pvp",
                              zero_rewards=True),
}


@dataclass
class EvalSummary:
    episodes: int
    crash_rate: float
    distance_avg: float
    distance_std: float
    speed_avg: float
    speed_std: float
    lane_change_ratio: float
    lane_pos_avg: float
    steps_avg: float
    return_avg: float
    return_std: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class RunRecord:
    iteration: int
    env_steps: int
    labels_total: int
    align_acc: float
    align_steps: int
    align_exit: str
    loss_td1: float
    loss_tdn: float
    loss_mg_label: float
    loss_mg_tgt: float
    eval: EvalSummary
    wall_s: float
    seed: int

    def csv_row(self) -> list:
        e = self.eval
        return [self.iteration, self.env_steps, self.labels_total,
                self.align_acc, self.align_steps, self.loss_td1,
                self.loss_tdn, self.loss_mg_label, self.loss_mg_tgt,
                e.crash_rate, e.distance_avg, e.speed_avg,
                e.lane_change_ratio, e.lane_pos_avg, e.steps_avg,
                self.wall_s]


@dataclass
class RunResult:
    method: str
    seed: int
    records: list
    q: qnet.QFunction
    feedback: FeedbackBuffer | None = None
    out_dir: str | None = None


class FlatAdam:
    """Adam over the flat parameter vector; moments reset at phase starts."""

    def __init__(self, size: int, alpha: float, eps: float,
                 beta1: float = 0.9, beta2: float = 0.999):
        self.alpha = alpha
        self.eps = eps
        self.beta1 = beta1
        self.beta2 = beta2
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        self.t += 1
        kernels.adam_update(params, grads, self.m, self.v, self.t,
                            self.alpha, self.beta1, self.beta2, self.eps)

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0


class MetricsWriter:
    """Incremental metrics.csv with a pinned column order."""

    def __init__(self, path: str):
        self.path = path
        self._f = open(path, "w")
        self._f.write(",".join(METRICS_COLUMNS) + "\n")
        self._f.flush()

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return repr(float(v))

    def write(self, record: RunRecord) -> None:
        self._f.write(",".join(self._fmt(v) for v in record.csv_row())
                      + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def evaluate(q: qnet.QFunction, env, n_episodes: int, seed: int,
             gamma: float = 0.99) -> EvalSummary:
    """Greedy rollouts over freshly seeded episodes; means and stds of the
    per-episode behavioral metrics plus the discounted env-reward return."""
    if n_episodes < 1:
        raise ConfigurationError("need at least one evaluation episode")
    rng = np.random.default_rng(seed)
    episode_seeds = rng.integers(0, 2 ** 62, size=n_episodes)
    crashed, distance, speed, lane_ratio, lane_pos, steps, returns = \
        [], [], [], [], [], [], []
    for ep_seed in episode_seeds:
        obs = env.reset(seed=int(ep_seed))
        ret, disc, k = 0.0, 1.0, 0
        while not env.done:
            a = int(qnet.greedy_actions(q, obs[None])[0])
            obs, r, done, _ = env.step(a)
            ret += disc * r
            disc *= gamma
            k += 1
        m = env.metrics()
        crashed.append(m.crashed)
        distance.append(m.distance)
        speed.append(m.mean_speed)
        lane_ratio.append(m.lane_change_ratio)
        lane_pos.append(m.mean_lane_position)
        steps.append(m.steps)
        returns.append(ret)
    return EvalSummary(
        episodes=n_episodes,
        crash_rate=float(np.mean(crashed)),
        distance_avg=float(np.mean(distance)),
        distance_std=float(np.std(distance)),
        speed_avg=float(np.mean(speed)),
        speed_std=float(np.std(speed)),
        lane_change_ratio=float(np.mean(lane_ratio)),
        lane_pos_avg=float(np.mean(lane_pos)),
        steps_avg=float(np.mean(steps)),
        return_avg=float(np.mean(returns)),
        return_std=float(np.std(returns)),
    )


def eval_seed(run_seed: int, iteration: int) -> int:
    """Stable evaluation seed per (run, iteration), disjoint from the
    training episode streams by construction."""
    ss = np.random.SeedSequence([int(run_seed), 59297, int(iteration)])
    return int(ss.generate_state(1)[0])


def window_target_columns(tgt: qnet.QFunction, window: Window,
                          need_pseudo: bool, chunk: int = 8192):
    """Per-row target columns over the whole window, chunked: max Q^TGT at
    the next state, max at the n-step bootstrap state, argmax at the state
    itself (pseudo-labels). The target is frozen within an epoch, so one
    bulk pass replaces per-minibatch target forwards."""
    n = len(window)
    td1_boot = np.empty(n)
    nstep_boot = np.zeros(n)
    pseudo = np.zeros(n, dtype=np.int64) if need_pseudo else None
    live = np.flatnonzero(window.nstep_gamma > 0.0)
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        td1_boot[s:e] = qnet.q_values_batch(
            tgt, window.next_obs[s:e]).max(axis=1)
        if need_pseudo:
            pseudo[s:e] = np.argmax(
                qnet.q_values_batch(tgt, window.obs[s:e]), axis=1)
    for s in range(0, live.size, chunk):
        idx = live[s:s + chunk]
        nstep_boot[idx] = qnet.q_values_batch(
            tgt, window.nstep_boot_obs[idx]).max(axis=1)
    return td1_boot, nstep_boot, pseudo


class _CollectState:
    """Environment stream that persists across iterations: an episode can
    span a rollout boundary, so no env step is ever discarded."""

    def __init__(self, env, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.obs = None
        self.episode_id = -1
        self.t = 0
        self.global_step = 0

    def ensure_episode(self):
        if self.obs is None or self.env.done:
            self.episode_id += 1
            self.t = 0
            self.obs = self.env.reset(
                seed=int(self.rng.integers(0, 2 ** 62)))


def collect_rollout(state: _CollectState, q: qnet.QFunction,
                    buffer: TransitionBuffer, iteration: int,
                    epsilon: float, steps: int,
                    frames: list | None = None) -> None:
    env = state.env
    for _ in range(steps):
        state.ensure_episode()
        if frames is not None:
            frames.append(env.render_frame())
        a = qnet.select_action(q, state.obs, epsilon, state.rng)
        next_obs, r, done, _ = env.step(a)
        buffer.append(state.obs, a, r, next_obs, done, state.episode_id,
                      state.t, iteration, state.global_step)
        state.obs = next_obs
        state.t += 1
        state.global_step += 1


def gather_labels(segments, labeler, feedback: FeedbackBuffer,
                  n_cf: int) -> int:
    """Run the labeler over the query segments; returns labels added."""
    added = 0
    for seg in segments:
        picks = labeler.label(seg)
        if len(picks) > n_cf:
            raise UsageError(
                f"labeler returned {len(picks)} labels, budget is {n_cf}")
        for idx, action in picks:
            if not 0 <= idx < len(seg):
                raise UsageError(f"label index {idx} outside the segment")
            added += feedback.add(CorrectiveLabel(
                state=seg.obs[idx],
                executed_action=int(seg.actions[idx]),
                label_action=int(action),
                source=labeler.source,
                global_step=int(seg.global_steps[idx]),
                episode_id=seg.episode_id,
                t=int(seg.ts[idx]),
            ))
    return added


def _align_sweep_batches(size: int, batch: int, rng: np.random.Generator):
    # small label sets must keep every row, so partial batches stay
    perm = rng.permutation(size)
    for s in range(0, size, batch):
        yield perm[s:s + batch]


def align_phase(q: qnet.QFunction, adam: FlatAdam, feedback: FeedbackBuffer,
                config: TrainerConfig, rng: np.random.Generator):
    """Fit the labels with the margin loss until accuracy clears the
    target, bounded by the sweep guard. Returns (accuracy, update count,
    sweeps, exit reason)."""
    if feedback.size == 0:
        return 1.0, 0, 0, "no-labels"
    adam.reset()
    obs = feedback.obs[:feedback.size]
    labels = feedback.labels[:feedback.size]
    acc = label_accuracy(q, obs, labels)
    updates = 0
    sweeps = 0
    while acc <= config.acc_target and sweeps < config.align_max_epochs:
        for idx in _align_sweep_batches(feedback.size, config.batch_size,
                                        rng):
            _, grads = margin_align_step(q, obs[idx], labels[idx],
                                         config.margin)
            adam.step(q.params, grads)
            updates += 1
        sweeps += 1
        acc = label_accuracy(q, obs, labels)
    exit_reason = "accuracy" if acc > config.acc_target else "guard-cap"
    if exit_reason == "guard-cap":
        log.warning("align guard cap hit at accuracy %.4f after %d sweeps",
                    acc, sweeps)
    return acc, updates, sweeps, exit_reason


def prop_phase(q: qnet.QFunction, adam: FlatAdam, buffer: TransitionBuffer,
               feedback: FeedbackBuffer, config: TrainerConfig,
               spec: MethodSpec, iteration: int,
               rng: np.random.Generator) -> dict:
    """E epochs over the recent window with the combined objective; the
    target network refreshes at each epoch start. Returns mean loss parts."""
    adam.reset()
    weights = config.loss_weights(use_pseudo=spec.use_pseudo)
    window = recent_window(buffer, iteration, config.window_iters,
                           gamma=config.gamma, n_step=config.n_step,
                           feedback=feedback,
                           zero_rewards=spec.zero_rewards)
    sums = {"td1": 0.0, "tdn": 0.0, "mg_label": 0.0, "mg_tgt": 0.0}
    count = 0
    need_pseudo = spec.use_pseudo and weights.pseudo_weight > 0.0
    for _ in range(config.prop_epochs):
        tgt = qnet.sync_target(q)
        td1_boot, nstep_boot, pseudo = window_target_columns(
            tgt, window, need_pseudo)
        for env_mb, label_mb in sample_minibatches(
                window, feedback, config.batch_size, rng):
            idx = env_mb.indices
            total, grads, parts = prop_step(
                q, env_mb, label_mb, weights,
                td1_boot[idx], nstep_boot[idx],
                pseudo_actions=pseudo[idx] if need_pseudo else None,
                label_term=spec.label_term)
            if not np.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at iteration {iteration}: {parts}")
            adam.step(q.params, grads)
            for k in sums:
                sums[k] += parts[k]
            count += 1
    nn.check_finite("params", q.params)
    if count == 0:
        return sums
    return {k: v / count for k, v in sums.items()}


def run_method(method: str, config: TrainerConfig, env_factory, labeler,
               seed: int, out_dir: str | None = None) -> RunResult:
    """Drive one interactive method end to end. Artifacts (metrics.csv,
    align.jsonl, labels.jsonl, checkpoints/final.ckpt) land in out_dir."""
    if method not in METHODS:
        raise ConfigurationError(
            f"unknown method {method!r}; expected one of "
            f"{sorted(METHODS) + ['rainbow_lite', 'bc']}")
    spec = METHODS[method]
    env = env_factory()
    eval_env = env_factory()

    ss = np.random.SeedSequence(seed)
    init_rng, collect_rng, segment_rng, batch_rng = [
        np.random.default_rng(c) for c in ss.spawn(4)]

    q = qnet.init_qfunction(env.obs_dim, env.action_count, init_rng,
                            hidden=config.hidden)
    adam = FlatAdam(q.layout.size, alpha=config.lr,
                    eps=0.01 / config.batch_size)
    buffer = TransitionBuffer(
        env.obs_dim,
        capacity=(config.window_iters + 1) * config.rollout_len)
    feedback = FeedbackBuffer(env.obs_dim)
    state = _CollectState(env, collect_rng)

    writer = align_log = None
    labels_path = None
    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
        align_log = open(os.path.join(out_dir, "align.jsonl"), "w")
        labels_path = os.path.join(out_dir, "labels.jsonl")
        open(labels_path, "w").close()

    needs_frames = getattr(labeler, "needs_frames", False)
    bridge = getattr(labeler, "bridge", None)
    records = []
    labels_written = 0
    try:
        for i in range(1, config.total_iters + 1):
            t0 = time.perf_counter()
            buffer.drop_before(i - config.window_iters + 1)
            if bridge is not None:
                bridge.update_progress(
                    status="active", iteration=i,
                    total_iters=config.total_iters,
                    labels_total=feedback.size)

            frame_log = [] if needs_frames else None
            collect_rollout(state, q, buffer, i, config.epsilon,
                            config.rollout_len, frames=frame_log)
            segments = sample_query_segments(
                buffer, i, config.queries_per_iter, config.segment_len,
                segment_rng)
            if needs_frames:
                start = (i - 1) * config.rollout_len
                for seg in segments:
                    seg.frames = [frame_log[gs - start]
                                  for gs in seg.global_steps]
            gather_labels(segments, labeler, feedback, config.n_cf)

            if spec.align:
                acc, align_steps, sweeps, align_exit = align_phase(
                    q, adam, feedback, config, batch_rng)
            else:
                align_steps, sweeps, align_exit = 0, 0, "skipped"

            if spec.prop:
                parts = prop_phase(q, adam, buffer, feedback, config, spec,
                                   i, batch_rng)
            else:
                parts = {"td1": 0.0, "tdn": 0.0, "mg_label": 0.0,
                         "mg_tgt": 0.0}

            if not spec.align:
                # accuracy still reported against the labels gathered so far
                acc = (label_accuracy(
                    q, feedback.obs[:feedback.size],
                    feedback.labels[:feedback.size])
                    if feedback.size else 1.0)

            summary = evaluate(q, eval_env, config.eval_episodes,
                               eval_seed(seed, i), gamma=config.gamma)
            record = RunRecord(
                iteration=i, env_steps=i * config.rollout_len,
                labels_total=feedback.size, align_acc=acc,
                align_steps=align_steps, align_exit=align_exit,
                loss_td1=parts["td1"], loss_tdn=parts["tdn"],
                loss_mg_label=parts["mg_label"],
                loss_mg_tgt=parts["mg_tgt"], eval=summary,
                wall_s=time.perf_counter() - t0, seed=seed)
            records.append(record)

            if writer:
                writer.write(record)
                align_log.write(json.dumps(
                    {"iter": i, "acc": acc, "steps": align_steps,
                     "sweeps": sweeps, "exit": align_exit}) + "\n")
                align_log.flush()
                labels_written = feedback.append_jsonl(labels_path,
                                                       labels_written)
            log.info("%s iter %d/%d: labels=%d acc=%.3f crash=%.2f "
                     "speed=%.2f", method, i, config.total_iters,
                     feedback.size, acc, summary.crash_rate,
                     summary.speed_avg)
    finally:
        if writer:
            writer.close()
            align_log.close()
        if bridge is not None:
            bridge.update_progress(labels_total=feedback.size)
            bridge.finish()

    if out_dir:
        qnet.save_checkpoint(
            q, os.path.join(out_dir, "checkpoints", "final.ckpt"),
            meta={"method": method, "seed": seed,
                  "env_steps": config.total_iters * config.rollout_len,
                  "labels_total": feedback.size})
    return RunResult(method=method, seed=seed, records=records, q=q,
                     feedback=feedback, out_dir=out_dir)


def run_icopro(config, env_factory, labeler, seed, out_dir=None):
    return run_method("icopro", config, env_factory, labeler, seed, out_dir)


def run_baseline(kind, config, env_factory, labeler, seed, out_dir=None,
                 **kw):
    if kind == "rainbow_lite":
        total = config.total_iters * config.rollout_len
        return run_rainbow_lite(config, env_factory, seed,
                                total_steps=total, out_dir=out_dir, **kw)
    if kind == "bc":
        return run_bc(config, env_factory, seed, out_dir=out_dir, **kw)
    return run_method(kind, config, env_factory, labeler, seed, out_dir)


class RingReplay:
    """Fixed-capacity uniform replay for the flat trainer; rows arrive
    already matured with their n-step fields."""

    def __init__(self, obs_dim: int, capacity: int):
        self.capacity = capacity
        self.size = 0
        self.head = 0
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.nstep_return = np.zeros(capacity)
        self.nstep_gamma = np.zeros(capacity)
        self.nstep_boot_obs = np.zeros((capacity, obs_dim))

    def add(self, tr: Transition, nret: float, ngam: float,
            boot_obs: np.ndarray | None) -> None:
        i = self.head
        self.obs[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.dones[i] = tr.done
        self.next_obs[i] = tr.next_state
        self.nstep_return[i] = nret
        self.nstep_gamma[i] = ngam
        if boot_obs is not None:
            self.nstep_boot_obs[i] = boot_obs
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch)
        from .buffers import EnvMinibatch
        return EnvMinibatch(
            obs=self.obs[idx], actions=self.actions[idx],
            rewards=self.rewards[idx], dones=self.dones[idx],
            next_obs=self.next_obs[idx],
            nstep_return=self.nstep_return[idx],
            nstep_gamma=self.nstep_gamma[idx],
            nstep_boot_obs=self.nstep_boot_obs[idx],
            labeled=np.zeros(batch, dtype=bool),
            episode_ids=np.zeros(batch, dtype=np.int64),
            ts=np.zeros(batch, dtype=np.int64), indices=idx)


def linear_epsilon(step: int, total: int, config: TrainerConfig) -> float:
    ramp = max(1, int(total * config.rl_eps_fraction))
    if step >= ramp:
        return config.rl_eps_end
    frac = step / ramp
    return config.rl_eps_start + frac * (config.rl_eps_end
                                         - config.rl_eps_start)


def run_rainbow_lite(config: TrainerConfig, env_factory, seed: int,
                     total_steps: int, out_dir: str | None = None,
                     snapshot_steps: tuple = (),
                     snapshot_dir: str | None = None) -> RunResult:
    """Flat per-step trainer: uniform replay, 1-step + n-step TD only,
    linear exploration schedule, periodic target sync. Used for baselines
    and for training labeler checkpoints."""
    env = env_factory()
    eval_env = env_factory()
    ss = np.random.SeedSequence(seed)
    init_rng, collect_rng, batch_rng = [np.random.default_rng(c)
                                        for c in ss.spawn(3)]
    q = qnet.init_qfunction(env.obs_dim, env.action_count, init_rng,
                            hidden=config.hidden)
    adam = FlatAdam(q.layout.size, alpha=config.lr,
                    eps=0.01 / config.rl_batch_size)
    replay = RingReplay(env.obs_dim,
                        min(config.rl_replay_capacity, total_steps))
    assembler = NStepAssembler(config.gamma, config.n_step)
    weights = config.loss_weights(use_pseudo=False)
    state = _CollectState(env, collect_rng)
    tgt = qnet.sync_target(q)

    writer = None
    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    snapshots = {}

    records = []
    updates = 0
    sums = {"td1": 0.0, "tdn": 0.0}
    count = 0
    t0 = time.perf_counter()
    try:
        for step in range(1, total_steps + 1):
            state.ensure_episode()
            eps = linear_epsilon(step - 1, total_steps, config)
            a = qnet.select_action(q, state.obs, eps, state.rng)
            next_obs, r, done, _ = env.step(a)
            tr = Transition(state=state.obs, action=a, reward=r,
                            next_state=next_obs, done=done,
                            episode_id=state.episode_id, t=state.t)
            for mt, nret, ngam, boot in assembler.push(tr):
                replay.add(mt, nret, ngam, boot)
            state.obs = next_obs
            state.t += 1
            state.global_step += 1

            if step > config.rl_warmup and replay.size >= \
                    config.rl_batch_size:
                env_mb = replay.sample(config.rl_batch_size, batch_rng)
                td1_boot = qnet.q_values_batch(
                    tgt, env_mb.next_obs).max(axis=1)
                nstep_boot = np.zeros(len(env_mb.actions))
                live = env_mb.nstep_gamma > 0
                if live.any():
                    nstep_boot[live] = qnet.q_values_batch(
                        tgt, env_mb.nstep_boot_obs[live]).max(axis=1)
                total, grads, parts = prop_step(
                    q, env_mb, None, weights, td1_boot, nstep_boot)
                if not np.isfinite(total):
                    raise NumericalError(
                        f"non-finite loss at step {step}")
                adam.step(q.params, grads)
                updates += 1
                sums["td1"] += parts["td1"]
                sums["tdn"] += parts["tdn"]
                count += 1
                if updates % config.rl_target_sync == 0:
                    tgt = qnet.sync_target(q)

            if step in snapshot_steps:
                sdir = snapshot_dir or out_dir or "."
                os.makedirs(sdir, exist_ok=True)
                path = os.path.join(sdir, f"snapshot_{step}.ckpt")
                qnet.save_checkpoint(q, path, meta={"steps": step,
                                                    "seed": seed})
                snapshots[step] = path

            if step % config.rl_eval_every == 0 or step == total_steps:
                summary = evaluate(q, eval_env, config.eval_episodes,
                                   eval_seed(seed, step),
                                   gamma=config.gamma)
                record = RunRecord(
                    iteration=len(records) + 1, env_steps=step,
                    labels_total=0, align_acc=float("nan"), align_steps=0,
                    align_exit="skipped",
                    loss_td1=sums["td1"] / max(count, 1),
                    loss_tdn=sums["tdn"] / max(count, 1),
                    loss_mg_label=0.0, loss_mg_tgt=0.0, eval=summary,
                    wall_s=time.perf_counter() - t0, seed=seed)
                records.append(record)
                if writer:
                    writer.write(record)
                sums = {"td1": 0.0, "tdn": 0.0}
                count = 0
                t0 = time.perf_counter()
                log.info("rainbow_lite step %d/%d: crash=%.2f speed=%.2f",
                         step, total_steps, summary.crash_rate,
                         summary.speed_avg)
    finally:
        if writer:
            writer.close()

    if out_dir:
        qnet.save_checkpoint(
            q, os.path.join(out_dir, "checkpoints", "final.ckpt"),
            meta={"method": "rainbow_lite", "seed": seed,
                  "env_steps": total_steps})
    result = RunResult(method="rainbow_lite", seed=seed, records=records,
                       q=q, out_dir=out_dir)
    result.snapshots = snapshots
    return result


def run_bc(config: TrainerConfig, env_factory, seed: int,
           labels_path: str = None, feedback: FeedbackBuffer | None = None,
           out_dir: str | None = None,
           parent_env_steps: int = 0) -> RunResult:
    """Offline behavior cloning: fit a fresh net on a finished run's label
    set with the align loop, then evaluate once."""
    if feedback is None:
        if labels_path is None:
            raise ConfigurationError("bc needs labels_path or a feedback "
                                     "buffer")
        feedback = FeedbackBuffer.load_jsonl(labels_path)
    env = env_factory()
    ss = np.random.SeedSequence(seed)
    init_rng, batch_rng = [np.random.default_rng(c) for c in ss.spawn(2)]
    q = qnet.init_qfunction(env.obs_dim, env.action_count, init_rng,
                            hidden=config.hidden)
    adam = FlatAdam(q.layout.size, alpha=config.lr,
                    eps=0.01 / config.batch_size)
    t0 = time.perf_counter()
    acc, align_steps, sweeps, align_exit = align_phase(
        q, adam, feedback, config, batch_rng)
    summary = evaluate(q, env, config.eval_episodes, eval_seed(seed, 1),
                       gamma=config.gamma)
    record = RunRecord(
        iteration=1, env_steps=parent_env_steps,
        labels_total=feedback.size, align_acc=acc, align_steps=align_steps,
        align_exit=align_exit, loss_td1=0.0, loss_tdn=0.0,
        loss_mg_label=0.0, loss_mg_tgt=0.0, eval=summary,
        wall_s=time.perf_counter() - t0, seed=seed)
    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
        writer.write(record)
        writer.close()
        with open(os.path.join(out_dir, "align.jsonl"), "w") as f:
            f.write(json.dumps({"iter": 1, "acc": acc,
                                "steps": align_steps, "sweeps": sweeps,
                                "exit": align_exit}) + "\n")
        qnet.save_checkpoint(
            q, os.path.join(out_dir, "checkpoints", "final.ckpt"),
            meta={"method": "bc", "seed": seed,
                  "labels_total": feedback.size})
    return RunResult(method="bc", seed=seed, records=[record], q=q,
                     feedback=feedback, out_dir=out_dir)


def train_labeler_checkpoint(config: TrainerConfig, env_factory, seed: int,
                             total_steps: int, out_dir: str,
                             snapshot_steps: tuple = ()) -> dict:
    """Train the simulated labeler's Q-checkpoint with the flat trainer and
    persist its evaluated metrics next to it; optional earlier snapshots
    serve as weaker alternative labelers."""
    result = run_rainbow_lite(config, env_factory, seed,
                              total_steps=total_steps, out_dir=out_dir,
                              snapshot_steps=snapshot_steps,
                              snapshot_dir=os.path.join(out_dir,
                                                        "checkpoints"))
    final = result.records[-1].eval
    info = {
        "checkpoint": os.path.join(out_dir, "checkpoints", "final.ckpt"),
        "steps": total_steps,
        "seed": seed,
        "metrics": final.as_dict(),
        "snapshots": result.snapshots,
    }
    with open(os.path.join(out_dir, "labeler.json"), "w") as f:
        json.dump(info, f, indent=2)
    return info
