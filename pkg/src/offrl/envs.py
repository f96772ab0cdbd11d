"""Toy continuous-control environments and scripted behavior controllers.

Two deterministic point-mass domains (a 2-d double integrator and its 1-d
analogue) with several reward functions per domain. Episodes never
terminate early; the rollout loop cuts them at the horizon. Rewards are
bounded in [0, 1] per step so normalized scores are comparable across
tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASKS = {
    "pointmass2d": ("reach-east", "reach-west", "reach-north", "stand", "spin"),
    "line1d": ("reach-east", "reach-west", "stand"),
}

_GOALS = {
    ("pointmass2d", "reach-east"): np.array([0.8, 0.0]),
    ("pointmass2d", "reach-west"): np.array([-0.8, 0.0]),
    ("pointmass2d", "reach-north"): np.array([0.0, 0.8]),
    ("line1d", "reach-east"): np.array([0.8]),
    ("line1d", "reach-west"): np.array([-0.8]),
}


@dataclass(frozen=True)
class ToyEnv:
    """Damped point mass pushed by bounded forces inside a box."""

    env_id: str = "pointmass2d"
    task: str = "reach-east"
    dt: float = 0.1
    damping: float = 0.5
    mass: float = 1.0
    horizon: int = 100
    pos_bound: float = 1.0
    vel_bound: float = 2.0

    def __post_init__(self):
        if self.env_id not in TASKS:
            raise ValueError(f"unknown environment {self.env_id!r}")
        if self.task not in TASKS[self.env_id]:
            raise ValueError(f"unknown task {self.task!r} for {self.env_id}")
        if self.dt <= 0 or self.mass <= 0 or self.horizon < 1:
            raise ValueError("dt, mass must be positive and horizon >= 1")

    @property
    def action_dim(self) -> int:
        return 2 if self.env_id == "pointmass2d" else 1

    @property
    def state_dim(self) -> int:
        return 2 * self.action_dim


def task_reward(env_id, task, states, actions, next_states):
    """Per-step reward, vectorised over leading axes; depends on the
    post-transition state only (states/actions kept for signature parity
    with relabeling)."""
    del states, actions
    next_states = np.asarray(next_states, dtype=np.float64)
    d = 2 if env_id == "pointmass2d" else 1
    pos = next_states[..., :d]
    vel = next_states[..., d:]
    if task.startswith("reach-"):
        goal = _GOALS.get((env_id, task))
        if goal is None:
            raise ValueError(f"unknown task {task!r} for {env_id}")
        return np.exp(-2.0 * np.linalg.norm(pos - goal, axis=-1))
    if task == "stand":
        return np.exp(-2.0 * (np.linalg.norm(pos, axis=-1)
                              + np.linalg.norm(vel, axis=-1)))
    if task == "spin" and env_id == "pointmass2d":
        ang_mom = pos[..., 0] * vel[..., 1] - pos[..., 1] * vel[..., 0]
        return np.clip(ang_mom, 0.0, 1.0)
    raise ValueError(f"unknown task {task!r} for {env_id}")


def env_step(env: ToyEnv, state, action):
    """One transition. Returns (next_state, reward, terminal); terminal is
    always False because episodes only end at the horizon."""
    state = np.asarray(state, dtype=np.float64)
    if not np.isfinite(state).all():
        raise ValueError("state must be finite")
    if state.shape != (env.state_dim,):
        raise ValueError(f"state shape {state.shape} != ({env.state_dim},)")
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    d = env.action_dim
    pos, vel = state[:d], state[d:]
    vel_next = (1.0 - env.damping * env.dt) * vel + (action / env.mass) * env.dt
    vel_next = np.clip(vel_next, -env.vel_bound, env.vel_bound)
    pos_next = np.clip(pos + env.dt * vel_next, -env.pos_bound, env.pos_bound)
    next_state = np.concatenate([pos_next, vel_next])
    reward = float(task_reward(env.env_id, env.task, state, action, next_state))
    return next_state, reward, False


def initial_state(env: ToyEnv, rng) -> np.ndarray:
    """Start at rest at a uniformly random position away from the walls."""
    pos = rng.uniform(-0.8, 0.8, size=env.action_dim)
    return np.concatenate([pos, np.zeros(env.action_dim)])


class ScriptedController:
    """PD-style controller solving env.task; competence is deliberately
    imperfect for spin (a bounded force can only hold a modest orbit)."""

    def __init__(self, env: ToyEnv, kp=3.0, kd=3.0):
        self.env = env
        self.source = env.task
        self.kp = kp
        self.kd = kd

    def __call__(self, state, rng):
        d = self.env.action_dim
        pos, vel = state[:d], state[d:]
        task = self.env.task
        if task.startswith("reach-"):
            goal = _GOALS[(self.env.env_id, task)]
            a = self.kp * (goal - pos) - self.kd * vel
        elif task == "stand":
            a = self.kp * (0.0 - pos) - self.kd * vel
        elif task == "spin":
            r = np.linalg.norm(pos)
            radial = pos / r if r > 1e-6 else np.array([1.0, 0.0])
            tangent = np.array([-radial[1], radial[0]])
            v_des = 0.9 * tangent + 1.0 * (0.85 - r) * radial
            a = 3.0 * (v_des - vel)
        else:  # pragma: no cover - ToyEnv validates tasks
            raise ValueError(f"no controller for task {task!r}")
        return np.clip(a, -1.0, 1.0)


class RandomController:
    """Uniform actions; stands in for exploration-driven behavior data."""

    source = "random"

    def __init__(self, env: ToyEnv):
        self.action_dim = env.action_dim

    def __call__(self, state, rng):
        return rng.uniform(-1.0, 1.0, size=self.action_dim)


def scripted_controller(env: ToyEnv) -> ScriptedController:
    return ScriptedController(env)


def random_controller(env: ToyEnv) -> RandomController:
    return RandomController(env)


def rollout_return(env: ToyEnv, action_fn, rng) -> float:
    """Run one episode with action_fn(state) and return the summed reward."""
    state = initial_state(env, rng)
    total = 0.0
    for _ in range(env.horizon):
        state, reward, _ = env_step(env, state, action_fn(state))
        total += reward
    return total
