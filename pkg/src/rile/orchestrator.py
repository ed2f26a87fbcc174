"""Training loops and run lifecycle.

One generic off-policy harness (three FIFO replay buffers, relabeled
rewards, trainer freezing, expert-data mixing) plus an on-policy variant
that updates from each fresh rollout. GAIL/AIRL runs reuse the same
collection path so that seed-paired runs differ only in the reward
pathway. Every random draw comes from named streams derived from one
master seed, which makes whole runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .agents import (
    REWARD_VARIANTS,
    StudentAgent,
    TrainerAgent,
    make_student,
    make_trainer,
    student_act,
    student_update,
    trainer_act,
    trainer_act_batch,
    trainer_observation,
    trainer_reward,
    trainer_update,
)
from .discriminator import DiscriminatorNet, disc_output, disc_update, make_discriminator
from .envs import ExpertDataset, MazeSpec, maze_reset, maze_step
from .metrics import MetricsWindow, cpr, evaluate_policy, fs_rfdc, goal_reached, rfdc
from .nets import mlp_to_bytes, save_mlp

ALGORITHMS = ("rile_on", "rile_off", "gail", "airl", "bc")


class RunAborted(RuntimeError):
    """Raised when a run hits non-finite diagnostics; the last healthy
    state has already been checkpointed."""


@dataclass
class ReplayBuffer:
    """Fixed-capacity FIFO store of homogeneous rows.

    Columns are allocated on first insert. Sampling is uniform without
    replacement within a batch.
    """

    capacity: int
    _cols: dict = field(default_factory=dict)
    _ptr: int = 0
    _size: int = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, **row):
        if not self._cols:
            for k, v in row.items():
                v = np.asarray(v)
                self._cols[k] = np.zeros((self.capacity, *v.shape), dtype=v.dtype)
        if set(row) != set(self._cols):
            raise ValueError("row columns do not match the buffer schema")
        for k, v in row.items():
            self._cols[k][self._ptr] = v
        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> dict:
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from buffer of size {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return {k: v[idx] for k, v in self._cols.items()}

    def contents(self) -> dict:
        """All rows in insertion order, oldest first."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = np.concatenate([np.arange(self._ptr, self.capacity),
                                    np.arange(self._ptr)])
        return {k: v[order] for k, v in self._cols.items()}

    def set_rows(self, idx, **row_arrays):
        for k, v in row_arrays.items():
            self._cols[k][idx] = v


@dataclass
class FreezeMonitor:
    """One-shot detector: fires when the rolling mean absolute critic loss
    over a full window drops below the threshold."""

    window: int = 100
    threshold: float = 0.1
    fired: bool = False
    history: list = field(default_factory=list)

    def check(self, new_loss: float) -> bool:
        if not np.isfinite(new_loss):
            raise ValueError("freeze monitor fed a non-finite loss")
        if self.fired:
            return True
        self.history.append(abs(float(new_loss)))
        if len(self.history) > self.window:
            self.history.pop(0)
        if len(self.history) == self.window and np.mean(self.history) < self.threshold:
            self.fired = True
        return self.fired


def freeze_check(monitor: FreezeMonitor, new_loss: float) -> bool:
    return monitor.check(new_loss)


@dataclass
class RunConfig:
    """Everything a run needs; defaults follow the tuned desk-scale setup."""

    algorithm: str = "rile_off"
    env: MazeSpec = field(default_factory=MazeSpec)
    trainer_reward_variant: str = "exponential_difference"
    trainer_reward_exponent_sign: float = -1.0
    # buffers and batches
    student_buffer: int = 1_000_000
    trainer_buffer: int = 16_384
    disc_buffer: int = 16_384
    student_batch: int = 256
    trainer_batch: int = 256
    disc_batch: int = 32
    # optimization
    student_lr: float = 3e-4
    trainer_lr: float = 3e-4
    disc_lr: float = 3e-5
    gamma: float = 0.99
    tau: float = 0.01
    epsilon_greedy: float = 0.2
    student_entropy: float = 0.2
    trainer_entropy: float = 0.2
    gp_weight: float = 1.0
    advantage_norm: bool = True
    # networks (desk-scale defaults; override per run)
    student_hidden: tuple = (64, 64)
    trainer_hidden: tuple = (64, 64)
    disc_hidden: tuple = (64, 64)
    # trainer freezing
    freeze_threshold: float = 0.1
    freeze_window: int = 100
    # expert mixing (share of buffer insertions sourced from expert data)
    expert_mix_student: float = 0.0
    expert_mix_trainer: float = 0.0
    # schedule
    total_steps: int = 200_000
    update_every: int = 4
    warmup_steps: int = 2_000
    eval_every: int = 10_000
    eval_episodes: int = 10
    checkpoint_every: int = 10_000
    metric_window: int = 10_000
    early_stop_success: bool = True
    relabel_rewards: bool = True
    # Treat goal termination as a time limit for the student's value
    # bootstrap (absorbing-state handling). Always-positive learned rewards
    # otherwise make episode termination value-catastrophic, so policies
    # learn to dawdle near the demonstration instead of finishing it.
    bootstrap_through_goal: bool = True
    # environment perturbation (covariate shift) and frozen-reward transfer
    action_noise: float = 0.0
    frozen_reward: dict | None = None  # {"kind": "trainer"|"airl", "path": ...}
    # bc only
    bc_epochs: int = 200
    bc_holdout: float = 0.1
    seed: int = 0

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.trainer_reward_variant not in REWARD_VARIANTS:
            raise ValueError(f"unknown trainer reward variant {self.trainer_reward_variant!r}")
        for cap, batch, name in (
            (self.student_buffer, self.student_batch, "student"),
            (self.trainer_buffer, self.trainer_batch, "trainer"),
            (self.disc_buffer, self.disc_batch, "disc"),
        ):
            if cap < batch:
                raise ValueError(f"{name} buffer capacity {cap} < batch size {batch}")
        for name, frac in (("expert_mix_student", self.expert_mix_student),
                           ("expert_mix_trainer", self.expert_mix_trainer)):
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.frozen_reward is not None:
            if self.frozen_reward.get("kind") not in ("trainer", "airl"):
                raise ValueError("frozen_reward.kind must be 'trainer' or 'airl'")
        return self


STREAM_NAMES = ("env", "student", "trainer", "disc", "noise", "eval", "mix",
                "init_student", "init_trainer", "init_disc", "init_airl")


def seed_streams(master_seed: int) -> dict:
    """One master seed split deterministically into named substreams."""
    children = np.random.SeedSequence(master_seed).spawn(len(STREAM_NAMES))
    return {n: np.random.default_rng(c) for n, c in zip(STREAM_NAMES, children)}


def expert_transition_table(expert: ExpertDataset) -> dict:
    """Expert rows in the shapes the buffers use, including the trainer's
    observation stream (next observation pairs the next expert action)."""
    s, a, sp, done = expert.transitions()
    obs = np.concatenate([s, a], axis=1)
    ap = np.vstack([a[1:], a[-1:]])
    ap[done] = 0.0  # next action unused past a terminal
    obsp = np.concatenate([sp, ap], axis=1)
    return {"s": s, "a": a, "sp": sp, "done": done.astype(np.float64),
            "obs": obs, "obsp": obsp}


def mix_expert_into_buffer(buffer: ReplayBuffer, expert: ExpertDataset,
                           fraction: float, rng) -> ReplayBuffer:
    """Replaces a `fraction` share of the buffer's current rows with
    expert-sourced records (actions from the data; rewards are placeholders
    relabeled at sample time). fraction 0 leaves the buffer untouched;
    fraction 1 makes every row expert-sourced. Expert records repeat when
    the dataset is smaller than the slots to fill.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    if fraction == 0.0 or len(buffer) == 0:
        return buffer
    if expert.n_steps < 1:
        raise ValueError("expert dataset too small to satisfy the requested "
                         "fraction at capacity: needs at least 1 record")
    table = expert_transition_table(expert)
    n_fill = int(np.ceil(fraction * len(buffer)))
    slots = rng.choice(len(buffer), size=n_fill, replace=False)
    picks = rng.integers(0, len(table["s"]), size=n_fill)
    cols = set(buffer._cols)
    if {"s", "a", "sp"} <= cols:  # student-style buffer
        buffer.set_rows(slots, s=table["s"][picks], a=table["a"][picks],
                        sp=table["sp"][picks], done=table["done"][picks])
        if "r" in cols:
            buffer.set_rows(slots, r=np.zeros(n_fill))
        if "expert" in cols:
            buffer.set_rows(slots, expert=np.ones(n_fill))
    elif {"obs", "obsp"} <= cols:  # trainer-style buffer
        buffer.set_rows(slots, obs=table["obs"][picks], obsp=table["obsp"][picks],
                        done=table["done"][picks])
        if "a_t" in cols:
            buffer.set_rows(slots, a_t=np.zeros(n_fill))
        if "expert" in cols:
            buffer.set_rows(slots, expert=np.ones(n_fill))
    else:
        raise ValueError("buffer schema not recognized for expert mixing")
    return buffer


@dataclass
class RunArtifacts:
    config: RunConfig
    run_dir: str | None
    student: StudentAgent
    trainer: TrainerAgent | None
    disc: DiscriminatorNet | None
    airl: object = None
    windows: list = field(default_factory=list)
    metrics_rows: list = field(default_factory=list)
    diagnostics_rows: list = field(default_factory=list)
    final_goal_rate: float = 0.0
    final_return: float = 0.0
    steps_run: int = 0
    freeze_step: int | None = None
    trainer_corr: float | None = None
    aborted: bool = False


class _Logger:
    """Append-only line-delimited records, mirrored in memory."""

    def __init__(self, run_dir, name):
        self.rows = []
        self.path = None
        if run_dir is not None:
            self.path = os.path.join(run_dir, name)
            open(self.path, "w").close()

    def write(self, row: dict):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(row, separators=(",", ":")) + "\n")


def _checkpoint(run_dir, tag, student, trainer, disc, airl):
    if run_dir is None:
        return
    base = os.path.join(run_dir, f"step-{tag}")
    os.makedirs(os.path.join(base, "student"), exist_ok=True)
    save_mlp(student.actor, os.path.join(base, "student", "actor.mlp"))
    save_mlp(student.critic, os.path.join(base, "student", "critic.mlp"))
    save_mlp(student.critic_target, os.path.join(base, "student", "critic_target.mlp"))
    if trainer is not None:
        os.makedirs(os.path.join(base, "trainer"), exist_ok=True)
        save_mlp(trainer.actor, os.path.join(base, "trainer", "actor.mlp"))
        save_mlp(trainer.critic, os.path.join(base, "trainer", "critic.mlp"))
        save_mlp(trainer.critic_target, os.path.join(base, "trainer", "critic_target.mlp"))
    if disc is not None:
        os.makedirs(os.path.join(base, "discriminator"), exist_ok=True)
        save_mlp(disc.params, os.path.join(base, "discriminator", "net.mlp"))
    if airl is not None:
        os.makedirs(os.path.join(base, "airl"), exist_ok=True)
        save_mlp(airl.reward, os.path.join(base, "airl", "reward.mlp"))
        save_mlp(airl.potential, os.path.join(base, "airl", "potential.mlp"))


def trainer_params_digest(trainer: TrainerAgent) -> str:
    h = hashlib.sha256()
    for p in (trainer.actor, trainer.critic, trainer.critic_target):
        h.update(mlp_to_bytes(p))
    return h.hexdigest()


class _RewardPathway:
    """Per-algorithm reward computation and learner updates."""

    def __init__(self, cfg: RunConfig, expert: ExpertDataset, streams, state_dim, action_dim):
        from . import baselines  # local import: baselines builds on this module

        self.cfg = cfg
        self.bl = baselines
        self.state_dim = state_dim
        self.expert_table = expert_transition_table(expert)
        self.trainer = None
        self.disc = None
        self.airl = None
        self.frozen_trainer = None
        self.frozen_airl_reward = None
        obs_dim = state_dim + action_dim
        if cfg.frozen_reward is not None:
            kind = cfg.frozen_reward["kind"]
            from .nets import load_mlp

            if kind == "trainer":
                net = load_mlp(cfg.frozen_reward["path"])
                t = make_trainer(obs_dim, cfg.trainer_hidden, streams["init_trainer"])
                t.actor = net
                t.frozen = True
                self.frozen_trainer = t
            else:
                self.frozen_airl_reward = load_mlp(cfg.frozen_reward["path"])
            return
        if cfg.algorithm in ("rile_on", "rile_off"):
            self.trainer = make_trainer(
                obs_dim, cfg.trainer_hidden, streams["init_trainer"],
                actor_lr=cfg.trainer_lr, critic_lr=cfg.trainer_lr,
                entropy_coef=cfg.trainer_entropy, gamma=cfg.gamma, tau=cfg.tau,
                advantage_norm=cfg.advantage_norm)
        if cfg.algorithm in ("rile_on", "rile_off", "gail"):
            self.disc = make_discriminator(state_dim, action_dim, cfg.disc_hidden,
                                           cfg.disc_lr, streams["init_disc"])
        if cfg.algorithm == "airl":
            self.airl = self.bl.make_airl_heads(state_dim, action_dim, cfg.disc_hidden,
                                                cfg.disc_lr, cfg.gamma,
                                                streams["init_airl"])

    def student_rewards(self, student, s, a, sp) -> np.ndarray:
        """Learned reward for student transitions under the current nets."""
        if self.frozen_trainer is not None:
            return trainer_act_batch(self.frozen_trainer, np.concatenate([s, a], axis=1))
        if self.frozen_airl_reward is not None:
            from .nets import mlp_forward

            return mlp_forward(self.frozen_airl_reward, np.concatenate([s, a], axis=1))[:, 0]
        if self.trainer is not None:
            return trainer_act_batch(self.trainer, np.concatenate([s, a], axis=1))
        if self.cfg.algorithm == "gail":
            d = disc_output(self.disc, s, a)
            return self.bl.gail_student_reward(d)
        return self.bl.airl_f_batch(self.airl, s, a, sp)

    def expert_batch(self, batch_size, rng):
        idx = rng.integers(0, len(self.expert_table["s"]), size=batch_size)
        return idx


class _Collector:
    """Steps the environment with the current student policy. The same
    code path serves every algorithm, so seed-paired runs produce
    identical rollout streams until rewards first differ."""

    def __init__(self, cfg: RunConfig, streams):
        self.cfg = cfg
        self.env_rng = streams["env"]
        self.student_rng = streams["student"]
        self.state = maze_reset(cfg.env)
        self.episode_step = 0
        self.episodes = 0

    def step(self, student: StudentAgent):
        cfg = self.cfg
        action = student_act(student, self.state, "epsilon_greedy", self.student_rng)
        env_action = action
        if cfg.action_noise > 0:
            env_action = action + self.env_rng.normal(0.0, cfg.action_noise, size=2)
        nxt, _, at_goal = maze_step(cfg.env, self.state, env_action)
        self.episode_step += 1
        truncated = self.episode_step >= cfg.env.max_steps
        done = 0.0 if cfg.bootstrap_through_goal else float(at_goal)
        row = {
            "s": self.state.copy(), "a": np.asarray(action), "sp": nxt.copy(),
            "done": done, "episode_end": at_goal or truncated,
            "env_r": cfg.env.env_reward(at_goal),
        }
        if at_goal or truncated:
            self.state = maze_reset(cfg.env)
            self.episode_step = 0
            self.episodes += 1
        else:
            self.state = nxt
        return row


def _update_student(cfg, student, pathway, buf_s, rng):
    b = buf_s.sample(cfg.student_batch, rng)
    if cfg.relabel_rewards or cfg.algorithm in ("gail", "airl") or cfg.frozen_reward:
        r = pathway.student_rewards(student, b["s"], b["a"], b["sp"])
    else:
        r = b["r"]
    _, diag = student_update(student, (b["s"], b["a"], r, b["sp"], b["done"]))
    return diag


def _update_disc(cfg, pathway, student, buf_d, rng):
    if pathway.disc is not None:
        b = buf_d.sample(cfg.disc_batch, rng)
        idx = pathway.expert_batch(cfg.disc_batch, rng)
        te = pathway.expert_table
        _, loss = disc_update(pathway.disc, (te["s"][idx], te["a"][idx]),
                              (b["s"], b["a"]), cfg.gp_weight, rng)
        return {"disc_loss": loss}
    if pathway.airl is not None:
        b = buf_d.sample(cfg.disc_batch, rng)
        idx = pathway.expert_batch(cfg.disc_batch, rng)
        te = pathway.expert_table
        loss = pathway.bl.airl_update(
            pathway.airl, student,
            (te["s"][idx], te["a"][idx], te["sp"][idx]),
            (b["s"], b["a"], b["sp"]))
        return {"disc_loss": loss}
    return {}


def _update_trainer(cfg, pathway, buf_t, monitor, rng, artifacts, step):
    trainer = pathway.trainer
    if trainer is None or trainer.frozen:
        return {}
    b = buf_t.sample(cfg.trainer_batch, rng)
    a_t = b["a_t"]
    if "expert" in b and b["expert"].any():
        # expert-sourced rows carry no recorded action; relabel with the
        # trainer's current deterministic action at that observation
        mask = b["expert"] > 0.5
        relabeled = trainer_act_batch(trainer, b["obs"][mask])
        a_t = a_t.copy()
        a_t[mask] = relabeled
    ds = pathway.state_dim
    d = disc_output(pathway.disc, b["obs"][:, :ds], b["obs"][:, ds:])
    r_t = trainer_reward(cfg.trainer_reward_variant, d, a_t,
                         cfg.trainer_reward_exponent_sign)
    _, diag = trainer_update(trainer, (b["obs"], a_t, r_t, b["obsp"], b["done"]))
    if freeze_check(monitor, diag["critic_loss"]) and not trainer.frozen:
        trainer.frozen = True
        artifacts.freeze_step = step
    return {"trainer_critic_loss": diag["critic_loss"], "r_t": r_t, "a_t": a_t}


class _WindowTracker:
    """Accumulates paired (learned, environment) reward samples and cuts a
    MetricsWindow with a fixed-probe snapshot every metric_window steps."""

    def __init__(self, cfg, pathway, probe_s, probe_a):
        self.cfg = cfg
        self.pathway = pathway
        self.probe_s, self.probe_a = probe_s, probe_a
        self.learned, self.env = [], []
        self.index = 0
        self.prev_window = None
        self.windows = []

    def snapshot(self, student):
        return self.pathway.student_rewards(student, self.probe_s, self.probe_a,
                                            self.probe_s)

    def add(self, learned, env_r):
        self.learned.append(float(learned))
        self.env.append(float(env_r))

    def maybe_close(self, student, metrics_log, eval_result):
        if len(self.learned) < self.cfg.metric_window:
            return None
        win = MetricsWindow(self.index, np.array(self.learned), np.array(self.env),
                            self.snapshot(student))
        row = {"window": self.index}
        if self.prev_window is not None:
            row["rfdc"] = rfdc(self.prev_window, win)
            row["fs_rfdc"] = fs_rfdc(self.prev_window.fixed_snapshot, win.fixed_snapshot)
        c = cpr(win.learned, win.environment)
        row["cpr"] = None if np.isnan(c) else c
        row["eval_return"] = eval_result
        metrics_log.write(row)
        self.prev_window = win
        self.windows.append(win)
        self.learned, self.env = [], []
        self.index += 1
        return win


def run_training(config: RunConfig, expert: ExpertDataset | None,
                 run_dir: str | None = None) -> RunArtifacts:
    """Executes one run per the configured algorithm and returns artifacts.

    Off-policy algorithms (rile_off, gail, airl) share the replay harness;
    rile_on updates from each completed rollout; bc is supervised.
    """
    cfg = config.validate()
    if cfg.algorithm == "bc":
        from . import baselines

        return baselines.run_bc(cfg, expert, run_dir)
    if expert is None or expert.n_steps == 0:
        raise ValueError("adversarial algorithms need a non-empty expert dataset")
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
    streams = seed_streams(cfg.seed)
    state_dim, action_dim = expert.state_dim, expert.action_dim
    student = make_student(state_dim, action_dim, cfg.student_hidden,
                           streams["init_student"], actor_lr=cfg.student_lr,
                           critic_lr=cfg.student_lr, entropy_coef=cfg.student_entropy,
                           epsilon_greedy=cfg.epsilon_greedy, gamma=cfg.gamma,
                           tau=cfg.tau, advantage_norm=cfg.advantage_norm)
    pathway = _RewardPathway(cfg, expert, streams, state_dim, action_dim)
    artifacts = RunArtifacts(cfg, run_dir, student, pathway.trainer, pathway.disc,
                             pathway.airl)
    diag_log = _Logger(run_dir, "diagnostics.jsonl")
    metrics_log = _Logger(run_dir, "metrics.jsonl")

    probe_s, probe_a = expert.all_pairs()
    tracker = _WindowTracker(cfg, pathway, probe_s, probe_a)
    monitor = FreezeMonitor(cfg.freeze_window, cfg.freeze_threshold)
    if cfg.algorithm == "rile_on":
        return _run_onpolicy(cfg, expert, streams, student, pathway, artifacts,
                             diag_log, metrics_log, tracker, monitor, run_dir)

    buf_s = ReplayBuffer(cfg.student_buffer)
    buf_t = ReplayBuffer(cfg.trainer_buffer)
    buf_d = ReplayBuffer(cfg.disc_buffer)
    collector = _Collector(cfg, streams)
    te = pathway.expert_table
    mix_rng = streams["mix"]
    trainer_rng = streams["trainer"]
    pending_trainer = None

    _checkpoint(run_dir, 0, student, pathway.trainer, pathway.disc, pathway.airl)
    last_eval = None
    step = 0
    try:
        while step < cfg.total_steps:
            step += 1
            row = collector.step(student)
            learned_now = float(pathway.student_rewards(
                student, row["s"][None], row["a"][None], row["sp"][None])[0])
            tracker.add(learned_now, row["env_r"])

            # student buffer insert (expert-mixed)
            if cfg.expert_mix_student > 0 and mix_rng.uniform() < cfg.expert_mix_student:
                k = mix_rng.integers(0, len(te["s"]))
                buf_s.insert(s=te["s"][k], a=te["a"][k], r=0.0, sp=te["sp"][k],
                             done=te["done"][k], expert=1.0)
            else:
                buf_s.insert(s=row["s"], a=row["a"], r=learned_now, sp=row["sp"],
                             done=row["done"], expert=0.0)
            buf_d.insert(s=row["s"], a=row["a"], sp=row["sp"])

            if pathway.trainer is not None:
                obs = trainer_observation(row["s"], row["a"])
                a_t = trainer_act(pathway.trainer, obs, "stochastic", trainer_rng)
                if pending_trainer is not None:
                    pending_trainer["obsp"] = obs
                    _insert_trainer_row(cfg, buf_t, te, mix_rng, pending_trainer)
                    pending_trainer = None
                rec = {"obs": obs, "a_t": a_t, "obsp": None, "done": 0.0}
                if row["episode_end"]:
                    rec["done"] = 1.0
                    rec["obsp"] = np.zeros_like(obs)
                    _insert_trainer_row(cfg, buf_t, te, mix_rng, rec)
                else:
                    pending_trainer = rec

            ready = (len(buf_s) >= max(cfg.student_batch, cfg.warmup_steps)
                     and len(buf_d) >= cfg.disc_batch
                     and (pathway.trainer is None or len(buf_t) >= cfg.trainer_batch))
            if ready and step % cfg.update_every == 0:
                diag = {"step": step}
                diag.update(_update_student(cfg, student, pathway, buf_s,
                                            streams["student"]))
                diag.update(_update_disc(cfg, pathway, student, buf_d, streams["disc"]))
                tdiag = _update_trainer(cfg, pathway, buf_t, monitor, trainer_rng,
                                        artifacts, step)
                if "trainer_critic_loss" in tdiag:
                    diag["trainer_critic_loss"] = tdiag["trainer_critic_loss"]
                diag["frozen"] = bool(pathway.trainer.frozen) if pathway.trainer else False
                if step % (cfg.update_every * 25) == 0:
                    diag_log.write(diag)

            if step % cfg.eval_every == 0:
                ret, _ = evaluate_policy(cfg.env, student, cfg.eval_episodes,
                                         deterministic=True, seed=cfg.seed,
                                         action_noise=cfg.action_noise)
                rate = goal_reached(cfg.env, student, cfg.eval_episodes, seed=cfg.seed,
                                    action_noise=cfg.action_noise)
                last_eval = ret
                diag_log.write({"step": step, "eval_return": ret, "goal_rate": rate,
                                "frozen": bool(pathway.trainer.frozen)
                                if pathway.trainer else False})
                if cfg.early_stop_success and rate == 1.0:
                    tracker.maybe_close(student, metrics_log, last_eval)
                    break
            if step % cfg.checkpoint_every == 0:
                _checkpoint(run_dir, step, student, pathway.trainer, pathway.disc,
                            pathway.airl)
            tracker.maybe_close(student, metrics_log, last_eval)
    except ValueError as e:
        _checkpoint(run_dir, f"{step}-abort", student, pathway.trainer, pathway.disc,
                    pathway.airl)
        artifacts.aborted = True
        raise RunAborted(f"run aborted at step {step}: {e}") from e

    _finalize(cfg, artifacts, student, pathway, tracker, metrics_log, diag_log,
              run_dir, step)
    return artifacts


def _insert_trainer_row(cfg, buf_t, te, mix_rng, rec):
    if cfg.expert_mix_trainer > 0 and mix_rng.uniform() < cfg.expert_mix_trainer:
        k = mix_rng.integers(0, len(te["s"]))
        buf_t.insert(obs=te["obs"][k], a_t=0.0, obsp=te["obsp"][k],
                     done=te["done"][k], expert=1.0)
    else:
        buf_t.insert(obs=rec["obs"], a_t=rec["a_t"], obsp=rec["obsp"],
                     done=rec["done"], expert=0.0)


def _run_onpolicy(cfg, expert, streams, student, pathway, artifacts, diag_log,
                  metrics_log, tracker, monitor, run_dir):
    """Rollout-at-a-time variant: collect one episode, compute the student
    rewards from the trainer's deterministic action, update student, then
    discriminator, then trainer on that same rollout."""
    collector = _Collector(cfg, streams)
    trainer_rng = streams["trainer"]
    te = pathway.expert_table
    corr_rt, corr_at = [], []
    _checkpoint(run_dir, 0, student, pathway.trainer, pathway.disc, pathway.airl)
    step = 0
    last_eval = None
    try:
        while step < cfg.total_steps:
            rows = []
            while True:
                row = collector.step(student)
                step += 1
                rows.append(row)
                if row["episode_end"] or step >= cfg.total_steps:
                    break
            s = np.array([r["s"] for r in rows])
            a = np.array([r["a"] for r in rows])
            sp = np.array([r["sp"] for r in rows])
            done = np.array([r["done"] for r in rows])
            obs = np.concatenate([s, a], axis=1)
            r_s = trainer_act_batch(pathway.trainer, obs)
            for r_i, row in zip(r_s, rows):
                tracker.add(float(r_i), row["env_r"])

            _, sdiag = student_update(student, (s, a, r_s, sp, done))

            nb = min(cfg.disc_batch, len(rows))
            idx_s = streams["disc"].choice(len(rows), size=nb, replace=False)
            idx_e = pathway.expert_batch(nb, streams["disc"])
            _, dloss = disc_update(pathway.disc, (te["s"][idx_e], te["a"][idx_e]),
                                   (s[idx_s], a[idx_s]), cfg.gp_weight, streams["disc"])

            if not pathway.trainer.frozen:
                a_t = np.array([trainer_act(pathway.trainer, o, "stochastic", trainer_rng)
                                for o in obs])
                obsp = np.concatenate([sp, np.vstack([a[1:], np.zeros((1, a.shape[1]))])],
                                      axis=1)
                t_done = done.copy()
                t_done[-1] = 1.0  # trainer episode ends with the rollout
                d = disc_output(pathway.disc, s, a)
                r_t = trainer_reward(cfg.trainer_reward_variant, d, a_t,
                                     cfg.trainer_reward_exponent_sign)
                corr_rt.extend(r_t.tolist())
                corr_at.extend(a_t.tolist())
                _, tdiag = trainer_update(pathway.trainer, (obs, a_t, r_t, obsp, t_done))
                if freeze_check(monitor, tdiag["critic_loss"]) and not pathway.trainer.frozen:
                    pathway.trainer.frozen = True
                    artifacts.freeze_step = step
                diag_row = {"step": step, "student_critic_loss": sdiag["critic_loss"],
                            "disc_loss": dloss,
                            "trainer_critic_loss": tdiag["critic_loss"],
                            "frozen": pathway.trainer.frozen}
            else:
                diag_row = {"step": step, "student_critic_loss": sdiag["critic_loss"],
                            "disc_loss": dloss, "frozen": True}
            if collector.episodes % 25 == 0:
                diag_log.write(diag_row)

            if step // cfg.eval_every > (step - len(rows)) // cfg.eval_every:
                ret, _ = evaluate_policy(cfg.env, student, cfg.eval_episodes,
                                         deterministic=True, seed=cfg.seed,
                                         action_noise=cfg.action_noise)
                rate = goal_reached(cfg.env, student, cfg.eval_episodes, seed=cfg.seed,
                                    action_noise=cfg.action_noise)
                last_eval = ret
                diag_log.write({"step": step, "eval_return": ret, "goal_rate": rate,
                                "frozen": pathway.trainer.frozen})
                if cfg.early_stop_success and rate == 1.0:
                    break
            if step // cfg.checkpoint_every > (step - len(rows)) // cfg.checkpoint_every:
                _checkpoint(run_dir, step, student, pathway.trainer, pathway.disc, None)
            tracker.maybe_close(student, metrics_log, last_eval)
    except ValueError as e:
        _checkpoint(run_dir, f"{step}-abort", student, pathway.trainer, pathway.disc, None)
        artifacts.aborted = True
        raise RunAborted(f"run aborted at step {step}: {e}") from e

    if len(corr_rt) >= 2 and np.std(corr_rt) > 0 and np.std(corr_at) > 0:
        artifacts.trainer_corr = float(np.corrcoef(corr_rt, corr_at)[0, 1])
    _finalize(cfg, artifacts, student, pathway, tracker, metrics_log, diag_log,
              run_dir, step)
    return artifacts


def _finalize(cfg, artifacts, student, pathway, tracker, metrics_log, diag_log,
              run_dir, step):
    artifacts.steps_run = step
    artifacts.windows = tracker.windows
    artifacts.metrics_rows = metrics_log.rows
    artifacts.diagnostics_rows = diag_log.rows
    artifacts.final_return, _ = evaluate_policy(cfg.env, student, cfg.eval_episodes,
                                                deterministic=True, seed=cfg.seed,
                                                action_noise=cfg.action_noise)
    artifacts.final_goal_rate = goal_reached(cfg.env, student, cfg.eval_episodes,
                                             seed=cfg.seed,
                                             action_noise=cfg.action_noise)
    _checkpoint(run_dir, "final", student, pathway.trainer, pathway.disc, pathway.airl)
