"""Columnar offline datasets: generation, relabeling, merging, file format.

In-memory columns are float64 but quantized to float32-representable
values at construction, so the 32-bit on-disk format round-trips
bit-exactly. Trajectory boundaries are carried by episode_start flags;
the stored max trajectory return is the score-normalization target.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np
import yaml

from .envs import TASKS, ToyEnv, env_step, initial_state, task_reward
from .errors import DatasetFormatError

FORMAT_MAGIC = b"MOODDS01"
_FIELD_ORDER = ["states", "actions", "rewards", "next_states",
                "terminals", "episode_starts"]


@dataclass
class DatasetMeta:
    env_id: str
    source_tasks: list
    target_task: str
    state_dim: int
    action_dim: int
    rows: int
    max_return: float


@dataclass(frozen=True)
class Transition:
    """One row of a dataset."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    episode_start: bool


@dataclass
class Dataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    episode_starts: np.ndarray
    meta: DatasetMeta

    def __post_init__(self):
        n = self.states.shape[0]
        if n < 1:
            raise ValueError("dataset must hold at least one row")
        if self.states.shape != (n, self.meta.state_dim):
            raise ValueError("states shape inconsistent with metadata")
        if self.next_states.shape != self.states.shape:
            raise ValueError("next_states shape inconsistent with states")
        if self.actions.shape != (n, self.meta.action_dim):
            raise ValueError("actions shape inconsistent with metadata")
        if self.rewards.shape != (n,):
            raise ValueError("rewards must be one value per row")
        for name in ("terminals", "episode_starts"):
            flags = getattr(self, name)
            if flags.shape != (n,) or flags.dtype != np.bool_:
                raise ValueError(f"{name} must be a boolean column of length {n}")
        if not self.episode_starts[0]:
            raise ValueError("first row must start a trajectory")
        if np.abs(self.actions).max() > 1.0 + 1e-9:
            raise ValueError("actions must lie in the [-1, 1] box")
        if self.meta.rows != n:
            raise ValueError(f"metadata row count {self.meta.rows} != {n}")
        recomputed = self.recompute_max_return()
        if abs(recomputed - self.meta.max_return) > 1e-9:
            raise ValueError(
                f"metadata max_return {self.meta.max_return} does not match "
                f"recomputed {recomputed}")

    def __len__(self):
        return self.states.shape[0]

    def row(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i],
                          float(self.rewards[i]), self.next_states[i],
                          bool(self.terminals[i]),
                          bool(self.episode_starts[i]))

    def episode_bounds(self):
        """(start, end) row slices of each trajectory."""
        starts = np.flatnonzero(self.episode_starts)
        ends = np.append(starts[1:], len(self))
        return list(zip(starts, ends))

    def recompute_max_return(self) -> float:
        return max(float(self.rewards[s:e].sum())
                   for s, e in self.episode_bounds())


def quantize(x) -> np.ndarray:
    """Round float64 data to the nearest float32-representable values."""
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def build_dataset(states, actions, rewards, next_states, terminals,
                  episode_starts, env_id, source_tasks, target_task) -> Dataset:
    """Assemble a dataset, quantizing columns and filling the metadata."""
    states = quantize(states)
    actions = quantize(actions)
    meta = DatasetMeta(
        env_id=env_id,
        source_tasks=list(source_tasks),
        target_task=target_task,
        state_dim=states.shape[1],
        action_dim=actions.shape[1],
        rows=states.shape[0],
        max_return=0.0,
    )
    return _finalize(states, actions, quantize(rewards), quantize(next_states),
                     np.asarray(terminals, dtype=bool),
                     np.asarray(episode_starts, dtype=bool), meta)


# the metadata max_return must be recomputed before Dataset validation
# runs, so fill it on a shallow draft first
def _finalize(states, actions, rewards, next_states, terminals,
              episode_starts, meta) -> Dataset:
    ds = object.__new__(Dataset)
    ds.states = states
    ds.actions = actions
    ds.rewards = rewards
    ds.next_states = next_states
    ds.terminals = terminals
    ds.episode_starts = episode_starts
    ds.meta = meta
    meta.max_return = ds.recompute_max_return()
    return Dataset(states, actions, rewards, next_states, terminals,
                   episode_starts, meta)


def generate_dataset(env: ToyEnv, controller, episodes: int, noise_std: float,
                     seed: int) -> Dataset:
    """Roll out a controller with additive exploration noise.

    Rewards are recomputed from the quantized columns so relabeling to the
    same task is a bit-exact no-op.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    n = episodes * env.horizon
    states = np.empty((n, env.state_dim))
    actions = np.empty((n, env.action_dim))
    next_states = np.empty((n, env.state_dim))
    episode_starts = np.zeros(n, dtype=bool)
    row = 0
    for _ in range(episodes):
        state = initial_state(env, rng)
        episode_starts[row] = True
        for _ in range(env.horizon):
            action = controller(state, rng)
            if noise_std > 0:
                action = action + noise_std * rng.standard_normal(env.action_dim)
            action = np.clip(action, -1.0, 1.0)
            next_state, _, _ = env_step(env, state, action)
            states[row] = state
            actions[row] = action
            next_states[row] = next_state
            state = next_state
            row += 1
    states = quantize(states)
    actions = quantize(actions)
    next_states = quantize(next_states)
    rewards = quantize(task_reward(env.env_id, env.task, states, actions,
                                   next_states))
    source = getattr(controller, "source", env.task)
    meta = DatasetMeta(env.env_id, [source], env.task, env.state_dim,
                       env.action_dim, n, 0.0)
    return _finalize(states, actions, rewards, next_states,
                     np.zeros(n, dtype=bool), episode_starts, meta)


def relabel(dataset: Dataset, target_task: str) -> Dataset:
    """Recompute rewards for a different task; everything else unchanged."""
    if target_task not in TASKS[dataset.meta.env_id]:
        raise ValueError(
            f"unknown task {target_task!r} for {dataset.meta.env_id}")
    rewards = quantize(task_reward(dataset.meta.env_id, target_task,
                                   dataset.states, dataset.actions,
                                   dataset.next_states))
    meta = DatasetMeta(dataset.meta.env_id, list(dataset.meta.source_tasks),
                       target_task, dataset.meta.state_dim,
                       dataset.meta.action_dim, dataset.meta.rows, 0.0)
    return _finalize(dataset.states, dataset.actions, rewards,
                     dataset.next_states, dataset.terminals,
                     dataset.episode_starts, meta)


def merge(datasets) -> Dataset:
    """Concatenate datasets sharing an environment and target task.

    Trajectory boundaries are preserved; the normalization target becomes
    the max over inputs (no subsampling happens on merge).
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("merge needs at least one dataset")
    head = datasets[0].meta
    for ds in datasets[1:]:
        m = ds.meta
        if (m.env_id, m.state_dim, m.action_dim) != (
                head.env_id, head.state_dim, head.action_dim):
            raise ValueError("datasets disagree on environment or dimensions")
        if m.target_task != head.target_task:
            raise ValueError("datasets disagree on the target task")
    sources = []
    for ds in datasets:
        sources += list(ds.meta.source_tasks)
    meta = DatasetMeta(head.env_id, sources, head.target_task, head.state_dim,
                       head.action_dim, sum(len(d) for d in datasets), 0.0)
    return _finalize(
        np.concatenate([d.states for d in datasets]),
        np.concatenate([d.actions for d in datasets]),
        np.concatenate([d.rewards for d in datasets]),
        np.concatenate([d.next_states for d in datasets]),
        np.concatenate([d.terminals for d in datasets]),
        np.concatenate([d.episode_starts for d in datasets]),
        meta)


def normalize_score(episode_return: float, dataset: Dataset) -> float:
    """Return as a percentage of the best trajectory return in the data."""
    target = dataset.meta.max_return
    if target <= 0:
        raise ValueError(f"normalization target must be positive, got {target}")
    return 100.0 * episode_return / target


# ----------------------------------------------------------------------
# File format: magic, uint32 header length, JSON header ending in a
# newline, float32 little-endian columns (states, actions, rewards,
# next_states), then terminals and episode_starts as one byte per row.

def save(dataset: Dataset, path) -> None:
    meta = dataset.meta
    header = json.dumps({
        "format_version": 1,
        "env_id": meta.env_id,
        "source_tasks": list(meta.source_tasks),
        "target_task": meta.target_task,
        "state_dim": meta.state_dim,
        "action_dim": meta.action_dim,
        "rows": meta.rows,
        "max_return": meta.max_return,
        "fields": _FIELD_ORDER,
    }) + "\n"
    header_bytes = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(dataset.states.astype("<f4").tobytes())
        fh.write(dataset.actions.astype("<f4").tobytes())
        fh.write(dataset.rewards.astype("<f4").tobytes())
        fh.write(dataset.next_states.astype("<f4").tobytes())
        fh.write(dataset.terminals.astype(np.uint8).tobytes())
        fh.write(dataset.episode_starts.astype(np.uint8).tobytes())


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:8] != FORMAT_MAGIC:
        raise DatasetFormatError("magic", "not a MOODDS01 file")
    if len(data) < 12:
        raise DatasetFormatError("header", "file truncated before header length")
    (header_len,) = struct.unpack("<I", data[8:12])
    header_end = 12 + header_len
    if len(data) < header_end:
        raise DatasetFormatError("header", "file truncated inside header")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError("header", f"unparseable header: {exc}") from exc
    try:
        env_id = header["env_id"]
        rows = int(header["rows"])
        state_dim = int(header["state_dim"])
        action_dim = int(header["action_dim"])
        max_return = float(header["max_return"])
        source_tasks = list(header["source_tasks"])
        target_task = header["target_task"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError("header", f"missing or bad field: {exc}") from exc
    if rows < 1 or state_dim < 1 or action_dim < 1:
        raise DatasetFormatError("header", "row count and dims must be positive")

    widths = {"states": state_dim, "actions": action_dim, "rewards": 1,
              "next_states": state_dim}
    expected = sum(w * 4 for w in widths.values()) * rows + 2 * rows
    actual = len(data) - header_end
    if actual < expected:
        raise DatasetFormatError(
            "payload", f"columns truncated: expected {expected} bytes "
            f"for {rows} rows, found {actual}")
    if actual > expected:
        raise DatasetFormatError(
            "payload", f"header row count {rows} inconsistent with payload: "
            f"{actual - expected} trailing bytes")

    offset = header_end
    columns = {}
    for name in ("states", "actions", "rewards", "next_states"):
        width = widths[name]
        nbytes = rows * width * 4
        col = np.frombuffer(data, dtype="<f4", count=rows * width, offset=offset)
        columns[name] = col.astype(np.float64).reshape(
            (rows,) if name == "rewards" else (rows, width))
        offset += nbytes
    flags = {}
    for name in ("terminals", "episode_starts"):
        flags[name] = np.frombuffer(data, dtype=np.uint8, count=rows,
                                    offset=offset).astype(bool)
        offset += rows

    meta = DatasetMeta(env_id, source_tasks, target_task, state_dim,
                       action_dim, rows, max_return)
    try:
        return Dataset(columns["states"], columns["actions"],
                       columns["rewards"], columns["next_states"],
                       flags["terminals"], flags["episode_starts"], meta)
    except ValueError as exc:
        raise DatasetFormatError("payload", str(exc)) from exc


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries) -> None:
    """Structured-text manifest of generated dataset files."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({"datasets": entries}, fh, sort_keys=False)


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)["datasets"]
