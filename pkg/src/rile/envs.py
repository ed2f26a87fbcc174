"""Desk-scale environments and expert-data handling.

A continuous 2-D obstacle maze on [0,1]^2, a tiny discrete chain MDP used
as a closed-form oracle, expert trajectory file I/O (line-delimited JSON),
and Gaussian noise injection for robustness protocols.

Environments are value-semantic: reset/step take all state explicitly and
share nothing, so any number of rollouts can run concurrently.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MazeSpec:
    """Axis-aligned rectangular obstacles inside the unit square.

    Each obstacle is (xmin, ymin, xmax, ymax). The environment-defined
    reward used for evaluation and reward-correlation metrics is
    goal_reward on reaching the goal minus living_cost per step.
    """

    obstacles: list = field(default_factory=lambda: list(DEFAULT_OBSTACLES))
    start: tuple = (0.1, 0.9)
    goal: tuple = (0.9, 0.1)
    goal_radius: float = 0.08
    max_steps: int = 120
    step_size: float = 0.06
    start_jitter: float = 0.0
    goal_reward: float = 1.0
    living_cost: float = 0.001

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValueError("goal radius must be positive")
        for name, p in (("start", self.start), ("goal", self.goal)):
            if point_in_obstacle(self, np.asarray(p, float)):
                raise ValueError(f"{name} position lies inside an obstacle")

    def env_reward(self, at_goal: bool) -> float:
        return (self.goal_reward if at_goal else 0.0) - self.living_cost


# Three rectangles forming an S-shaped corridor: one wall hanging from the
# top, one rising from the bottom, and a block closing the bottom of the
# middle passage. Start top-left, goal bottom-right.
DEFAULT_OBSTACLES = (
    (0.28, 0.35, 0.38, 1.00),
    (0.62, 0.00, 0.72, 0.65),
    (0.44, 0.00, 0.56, 0.10),
)


def point_in_obstacle(spec: MazeSpec, p) -> bool:
    """True when p is strictly inside some obstacle (faces count as outside)."""
    x, y = float(p[0]), float(p[1])
    for xmin, ymin, xmax, ymax in spec.obstacles:
        if xmin < x < xmax and ymin < y < ymax:
            return True
    return False


def maze_reset(spec: MazeSpec, rng_seed: int = 0) -> np.ndarray:
    """Fixed start position; optional jitter (disabled by default) resamples
    uniformly in a disc around the start until outside all obstacles."""
    start = np.asarray(spec.start, dtype=np.float64)
    if spec.start_jitter <= 0:
        return start.copy()
    rng = np.random.default_rng(rng_seed)
    while True:
        angle = rng.uniform(0, 2 * np.pi)
        radius = spec.start_jitter * np.sqrt(rng.uniform())
        cand = start + radius * np.array([np.cos(angle), np.sin(angle)])
        cand = np.clip(cand, 0.0, 1.0)
        if not point_in_obstacle(spec, cand):
            return cand


def _segment_obstacle_entry(p, q, box):
    """Earliest t in [0,1] at which segment p->q penetrates the open box,
    or None. Touching a face without entering does not count."""
    xmin, ymin, xmax, ymax = box
    t0, t1 = 0.0, 1.0
    for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
        a, b = p[axis], q[axis]
        d = b - a
        if d == 0.0:
            if not (lo < a < hi):
                # parallel to this slab and outside (or on its face): no entry
                if a <= lo or a >= hi:
                    return None
            continue
        ta, tb = (lo - a) / d, (hi - a) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return None
    # t0 < t1 means the open interior is actually crossed, not just touched
    return t0


def maze_step(spec: MazeSpec, state, action):
    """One kinematic step: candidate = state + step_size * clamp(action),
    clipped to the unit square; motion stops at the first obstacle face hit.

    Returns (next_state, done, at_goal); done means at_goal here (the step
    budget is tracked by the caller, which owns episode time).
    """
    p = np.asarray(state, dtype=np.float64)
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    q = np.clip(p + spec.step_size * a, 0.0, 1.0)

    t_hit, box_hit = 1.0, None
    for box in spec.obstacles:
        t = _segment_obstacle_entry(p, q, box)
        if t is not None and t < t_hit:
            t_hit, box_hit = t, box
    if box_hit is None:
        nxt = q
    else:
        nxt = p + t_hit * (q - p)
        # pin the blocked coordinate exactly onto the face to avoid the
        # rounded point drifting into the interior
        xmin, ymin, xmax, ymax = box_hit
        for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
            for face in (lo, hi):
                if abs(nxt[axis] - face) < 1e-12:
                    nxt[axis] = face
    for box in spec.obstacles:  # rounding safety net: never end up inside
        xmin, ymin, xmax, ymax = box
        if xmin < nxt[0] < xmax and ymin < nxt[1] < ymax:
            gaps = [(nxt[0] - xmin, 0, xmin), (xmax - nxt[0], 0, xmax),
                    (nxt[1] - ymin, 1, ymin), (ymax - nxt[1], 1, ymax)]
            _, axis, face = min(gaps)
            nxt[axis] = face
    at_goal = bool(np.linalg.norm(nxt - np.asarray(spec.goal)) <= spec.goal_radius)
    return nxt, at_goal, at_goal


def chain_reset(K: int) -> np.ndarray:
    """One-hot start at the leftmost cell of a K-cell line, 2 <= K <= 16."""
    if not 2 <= K <= 16:
        raise ValueError("K must be in [2, 16]")
    s = np.zeros(K)
    s[0] = 1.0
    return s


def chain_step(K: int, state, action):
    """Deterministic left/right motion; done at the rightmost cell."""
    if action not in ("left", "right"):
        raise ValueError(f"chain action must be 'left' or 'right', got {action!r}")
    cell = int(np.argmax(state))
    cell = max(0, cell - 1) if action == "left" else min(K - 1, cell + 1)
    nxt = np.zeros(K)
    nxt[cell] = 1.0
    return nxt, cell == K - 1


@dataclass
class ExpertDataset:
    """Ordered (state, action) episodes plus environment metadata.

    episodes is a list of (states [n, ds], actions [n, da]) array pairs.
    """

    episodes: list
    env_id: str = "maze"

    def __post_init__(self):
        ds, da = None, None
        for k, (s, a) in enumerate(self.episodes):
            s, a = np.asarray(s, float), np.asarray(a, float)
            if s.ndim != 2 or a.ndim != 2 or len(s) != len(a):
                raise ValueError(f"episode {k}: states/actions must be aligned 2-d arrays")
            ds = s.shape[1] if ds is None else ds
            da = a.shape[1] if da is None else da
            if s.shape[1] != ds or a.shape[1] != da:
                raise ValueError(f"episode {k}: dimension mismatch across episodes")
            self.episodes[k] = (s.astype(np.float64), a.astype(np.float64))

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_steps(self) -> int:
        return sum(len(s) for s, _ in self.episodes)

    @property
    def state_dim(self):
        return self.episodes[0][0].shape[1] if self.episodes else None

    @property
    def action_dim(self):
        return self.episodes[0][1].shape[1] if self.episodes else None

    def all_pairs(self):
        """All (state, action) rows stacked: ([N, ds], [N, da])."""
        if not self.episodes:
            return np.zeros((0, 0)), np.zeros((0, 0))
        return (np.concatenate([s for s, _ in self.episodes]),
                np.concatenate([a for _, a in self.episodes]))

    def transitions(self):
        """(s, a, s', done) rows built pairwise within each episode.

        The last step of an episode is marked done; its next state repeats
        the current state (never used by a bootstrapped target).
        """
        ss, aa, nn, dd = [], [], [], []
        for s, a in self.episodes:
            n = len(s)
            if n == 0:
                continue
            nxt = np.vstack([s[1:], s[-1:]])
            done = np.zeros(n, dtype=bool)
            done[-1] = True
            ss.append(s)
            aa.append(a)
            nn.append(nxt)
            dd.append(done)
        if not ss:
            raise ValueError("dataset has no steps")
        return np.concatenate(ss), np.concatenate(aa), np.concatenate(nn), np.concatenate(dd)

    def content_hash(self) -> str:
        return hashlib.sha256(dataset_to_bytes(self)).hexdigest()


def dataset_to_bytes(dataset: ExpertDataset) -> bytes:
    """Line-delimited format: a metadata header, then one
    {"ep": k, "t": i, "s": [...], "a": [...]} record per step."""
    lengths = sorted({len(s) for s, _ in dataset.episodes})
    header = {
        "env": dataset.env_id,
        "episodes": dataset.n_episodes,
        "episode_length": lengths[0] if len(lengths) == 1 else None,
        "state_dim": dataset.state_dim,
        "action_dim": dataset.action_dim,
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for k, (s, a) in enumerate(dataset.episodes):
        for i in range(len(s)):
            rec = {"ep": k, "t": i, "s": [float(v) for v in s[i]],
                   "a": [float(v) for v in a[i]]}
            lines.append(json.dumps(rec, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode()


def save_expert(dataset: ExpertDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(dataset))


def load_expert(path) -> ExpertDataset:
    """Parses and validates the line-delimited expert format; malformed
    records are rejected with their line number."""
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ValueError("empty expert file: missing metadata header")
    try:
        header = json.loads(lines[0])
        env_id = header["env"]
        n_eps = int(header["episodes"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"line 1: malformed metadata header ({e})") from e
    episodes = [([], []) for _ in range(n_eps)]
    prev = (-1, -1)
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            ep, t = int(rec["ep"]), int(rec["t"])
            s, a = rec["s"], rec["a"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ValueError(f"line {ln}: malformed record ({e})") from e
        if not 0 <= ep < n_eps:
            raise ValueError(f"line {ln}: episode index {ep} out of range")
        expect = (prev[0], prev[1] + 1) if ep == prev[0] else (prev[0] + 1, 0)
        if (ep, t) != expect:
            raise ValueError(f"line {ln}: out-of-order record (ep={ep}, t={t})")
        episodes[ep][0].append(s)
        episodes[ep][1].append(a)
        prev = (ep, t)
    eps = []
    ds = header.get("state_dim")
    da = header.get("action_dim")
    for k, (ss, aa) in enumerate(episodes):
        s = np.asarray(ss, dtype=np.float64).reshape(len(ss), -1 if ss else 0)
        a = np.asarray(aa, dtype=np.float64).reshape(len(aa), -1 if aa else 0)
        if ss and ds is not None and s.shape[1] != ds:
            raise ValueError(f"episode {k}: state dim {s.shape[1]} != header {ds}")
        if aa and da is not None and a.shape[1] != da:
            raise ValueError(f"episode {k}: action dim {a.shape[1]} != header {da}")
        if len(ss) == 0 and ds is not None:
            s = np.zeros((0, ds))
            a = np.zeros((0, da))
        eps.append((s, a))
    return ExpertDataset(eps, env_id=env_id)


def inject_noise(dataset: ExpertDataset, sigma: float, target: str,
                 rng_seed: int) -> ExpertDataset:
    """Adds i.i.d. zero-mean Gaussian noise (std sigma) to every component
    of the chosen field ('state' or 'action'); the other field is untouched."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if target not in ("state", "action"):
        raise ValueError(f"target must be 'state' or 'action', got {target!r}")
    if sigma == 0:
        return ExpertDataset([(s.copy(), a.copy()) for s, a in dataset.episodes],
                             env_id=dataset.env_id)
    rng = np.random.default_rng(rng_seed)
    out = []
    for s, a in dataset.episodes:
        if target == "state":
            s = s + rng.normal(0.0, sigma, size=s.shape)
            a = a.copy()
        else:
            s = s.copy()
            a = a + rng.normal(0.0, sigma, size=a.shape)
        out.append((s, a))
    return ExpertDataset(out, env_id=dataset.env_id)


DEFAULT_WAYPOINTS = (
    (0.10, 0.16),
    (0.50, 0.16),
    (0.50, 0.84),
    (0.86, 0.84),
    (0.90, 0.10),
)


class WaypointController:
    """Waypoint-following policy: heads at the active waypoint with speed
    scaled down near it so the agent does not overshoot."""

    def __init__(self, spec: MazeSpec, waypoints=None, slack: float = 0.04):
        self.spec = spec
        self.waypoints = [np.asarray(w, float) for w in (waypoints or DEFAULT_WAYPOINTS)]
        self.waypoints.append(np.asarray(spec.goal, float))
        self.slack = slack
        self.wp = 0

    def reset(self):
        self.wp = 0

    def act(self, state) -> np.ndarray:
        state = np.asarray(state, float)
        while (self.wp < len(self.waypoints) - 1
               and np.linalg.norm(state - self.waypoints[self.wp]) <= self.slack):
            self.wp += 1
        delta = self.waypoints[self.wp] - state
        dist = np.linalg.norm(delta)
        direction = delta / max(dist, 1e-12)
        speed = min(1.0, dist / self.spec.step_size)
        return np.clip(direction * speed, -1.0, 1.0)


def scripted_expert_episode(spec: MazeSpec, waypoints=None, slack: float = 0.04):
    """Runs the waypoint controller once and returns (states, actions).
    Raises if the goal is not reached within max_steps."""
    ctrl = WaypointController(spec, waypoints, slack)
    state = maze_reset(spec)
    states, actions = [], []
    for _ in range(spec.max_steps):
        action = ctrl.act(state)
        states.append(state.copy())
        actions.append(action)
        state, done, at_goal = maze_step(spec, state, action)
        if at_goal:
            return np.asarray(states), np.asarray(actions)
    raise ValueError("scripted controller failed to reach the goal under this maze spec")


def generate_expert(spec: MazeSpec, episodes: int) -> ExpertDataset:
    """episodes scripted demonstrations; every episode reaches the goal."""
    if episodes <= 0:
        raise ValueError("episode count must be positive")
    eps = [scripted_expert_episode(spec) for _ in range(episodes)]
    return ExpertDataset(eps, env_id="maze")
