"""Replay storage: transitions, relabeled trajectories, context windows and HES buffers."""

import heapq
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, UsageError
from .simulator import Observation, stack_observations


@dataclass(frozen=True, eq=False)
class Transition:
    """One control step as collected during a rollout."""

    observation: Observation
    action: np.ndarray  # (2,)
    reward: float
    episode_id: int
    step_index: int
    ego_state: np.ndarray  # (4,) state before the action
    next_ego_state: np.ndarray  # (4,) state after the action


def episode_transitions(episode, episode_id: int):
    """Split a rolled-out episode into transitions."""
    return [
        Transition(
            observation=episode.observations[k],
            action=np.asarray(episode.actions[k], float),
            reward=float(episode.rewards[k]),
            episode_id=episode_id,
            step_index=k,
            ego_state=episode.ego_states[k],
            next_ego_state=episode.ego_states[k + 1],
        )
        for k in range(len(episode))
    ]


def suffix_sums(rewards) -> np.ndarray:
    """Undiscounted return-to-go for every step."""
    r = np.asarray(rewards, float)
    return np.cumsum(r[::-1])[::-1].copy()


def relabel(episode, horizon: int = 80):
    """Attach hindsight returns-to-go to a complete episode.

    Args:
        episode: transitions of one episode in step order.
        horizon: expected number of control steps.

    Returns:
        List of ``(observation, action, return_to_go)`` triples.
    """
    episode = list(episode)
    if len(episode) != horizon or [t.step_index for t in episode] != list(range(horizon)):
        raise ContractViolation(f"incomplete episode: {len(episode)} of {horizon} steps")
    if len({t.episode_id for t in episode}) != 1:
        raise ContractViolation("transitions come from more than one episode")
    g = suffix_sums([t.reward for t in episode])
    return [(t.observation, t.action, float(gi)) for t, gi in zip(episode, g)]


class TransitionBuffer:
    """Bounded store of whole episodes worth of transitions."""

    def __init__(self, capacity: int, horizon: int = 80):
        if capacity <= 0 or capacity % horizon:
            raise UsageError(f"capacity {capacity} must be a positive multiple of the horizon {horizon}")
        self.capacity = capacity
        self.horizon = horizon
        self._episodes = []

    def __len__(self):
        return sum(len(e) for e in self._episodes)

    @property
    def full(self):
        return len(self) >= self.capacity

    def add_episode(self, transitions):
        transitions = list(transitions)
        if len(self) + len(transitions) > self.capacity:
            raise UsageError("transition buffer is full")
        self._episodes.append(transitions)

    def episodes(self):
        return list(self._episodes)

    def clear(self):
        self._episodes = []


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """A relabeled episode stored as stacked arrays."""

    observations: Observation  # leading axis T
    actions: np.ndarray  # (T, 2)
    returns_to_go: np.ndarray  # (T,)
    ego_states: np.ndarray  # (T, 4)
    next_ego_states: np.ndarray  # (T, 4)
    episode_id: int
    provenance: str = "policy"

    def __len__(self):
        return len(self.actions)


def relabel_episode(transitions, horizon: int = 80, provenance: str = "policy") -> TrajectoryRecord:
    triples = relabel(transitions, horizon)
    transitions = list(transitions)
    return TrajectoryRecord(
        observations=stack_observations([o for o, _, _ in triples]),
        actions=np.stack([a for _, a, _ in triples]),
        returns_to_go=np.array([g for _, _, g in triples]),
        ego_states=np.stack([t.ego_state for t in transitions]),
        next_ego_states=np.stack([t.next_ego_state for t in transitions]),
        episode_id=transitions[0].episode_id,
        provenance=provenance,
    )


@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    """``c`` consecutive relabeled steps from one episode."""

    observations: Observation  # leading axis c
    actions: np.ndarray  # (c, 2)
    returns_to_go: np.ndarray  # (c,)
    ego_states: np.ndarray  # (c, 4)
    next_ego_states: np.ndarray  # (c, 4)
    episode_id: int
    offset: int

    def __len__(self):
        return len(self.actions)

    @property
    def key(self):
        return (self.episode_id, self.offset)

    def permute_obstacles(self, perm) -> "TrajectoryWindow":
        """Reorder obstacle slots by ``perm`` at every timestep: new slot i holds old slot perm[i]."""
        perm = np.asarray(perm)
        obs = replace(
            self.observations,
            obstacles=self.observations.obstacles[:, perm],
            obstacles_valid=self.observations.obstacles_valid[:, perm],
        )
        return replace(self, observations=obs)


class TrajectoryBuffer:
    """Unbounded store of relabeled episodes."""

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def add(self, record: TrajectoryRecord):
        if not np.all(np.isfinite(record.returns_to_go)):
            raise ContractViolation("returns-to-go must be finite")
        self._records.append(record)

    def records(self):
        return list(self._records)

    def window(self, index: int, offset: int, c: int) -> TrajectoryWindow:
        r = self._records[index]
        sl = slice(offset, offset + c)
        obs = Observation(**{k: v[sl] for k, v in r.observations.arrays().items()})
        return TrajectoryWindow(obs, r.actions[sl], r.returns_to_go[sl], r.ego_states[sl], r.next_ego_states[sl],
                                r.episode_id, offset)


def sample_windows(buffer: TrajectoryBuffer, batch: int, c: int, rng, shuffle: bool = True):
    """Draw ``batch`` windows uniformly over all (episode, offset) pairs.

    Each window gets its own random permutation of obstacle slots when
    ``shuffle`` is set.
    """
    if len(buffer) == 0:
        raise UsageError("trajectory buffer is empty")
    counts = np.array([max(len(r) - c + 1, 0) for r in buffer.records()])
    if counts.sum() == 0:
        raise UsageError(f"no episode in the buffer has at least {c} steps")
    cum = np.cumsum(counts)
    out = []
    for flat in rng.integers(0, cum[-1], size=batch):
        e = int(np.searchsorted(cum, flat, side="right"))
        offset = int(flat - (cum[e - 1] if e else 0))
        w = buffer.window(e, offset, c)
        if shuffle:
            w = w.permute_obstacles(rng.permutation(w.observations.obstacles.shape[1]))
        out.append(w)
    return out


@dataclass(frozen=True, eq=False)
class WindowBatch:
    observations: Observation  # leading axes (B, c)
    actions: np.ndarray  # (B, c, 2)
    returns_to_go: np.ndarray  # (B, c)
    ego_states: np.ndarray  # (B, c, 4)
    next_ego_states: np.ndarray  # (B, c, 4)

    def __len__(self):
        return len(self.actions)


def collate(windows) -> WindowBatch:
    windows = list(windows)
    return WindowBatch(
        observations=stack_observations([w.observations for w in windows]),
        actions=np.stack([w.actions for w in windows]),
        returns_to_go=np.stack([w.returns_to_go for w in windows]),
        ego_states=np.stack([w.ego_states for w in windows]),
        next_ego_states=np.stack([w.next_ego_states for w in windows]),
    )


CRITERIA = ("single", "cumulative")


class HesBuffer:
    """Fixed-capacity store that keeps the highest-loss windows.

    Args:
        capacity: maximum number of entries.
        criterion: ``"single"`` ranks windows by their worst step loss,
            ``"cumulative"`` by the summed loss over the window.
    """

    def __init__(self, capacity: int, criterion: str = "single"):
        if capacity <= 0:
            raise UsageError("HES capacity must be positive")
        if criterion not in CRITERIA:
            raise UsageError(f"unknown HES criterion {criterion!r}")
        self.capacity = capacity
        self.criterion = criterion
        self._entries = {}  # id -> [priority, window]
        self._by_key = {}
        self._heap = []  # (priority, id); stale rows skipped lazily
        self._ids = itertools.count()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, entry_id):
        return entry_id in self._entries

    def priority_of(self, losses) -> float:
        losses = np.asarray(losses, float)
        if losses.ndim != 1 or np.any(losses < 0) or not np.all(np.isfinite(losses)):
            raise ContractViolation("losses must be a finite non-negative vector")
        return float(losses.max() if self.criterion == "single" else losses.sum())

    def _push(self, entry_id, p):
        self._entries[entry_id][0] = p
        heapq.heappush(self._heap, (p, entry_id))
        if len(self._heap) > 4 * self.capacity + 16:
            self._heap = [(v[0], i) for i, v in self._entries.items()]
            heapq.heapify(self._heap)

    def _min(self):
        while True:
            p, i = self._heap[0]
            if i in self._entries and self._entries[i][0] == p:
                return p, i
            heapq.heappop(self._heap)

    def offer(self, window, losses) -> bool:
        """Insert ``window`` if there is room or it outranks the current minimum."""
        p = self.priority_of(losses)
        key = getattr(window, "key", None)
        if key is not None and key in self._by_key:
            i = self._by_key[key]
            self._entries[i][1] = window
            self._push(i, p)
            return True
        if len(self._entries) >= self.capacity:
            pmin, imin = self._min()
            if not p > pmin:
                return False
            self._remove(imin)
        i = next(self._ids)
        self._entries[i] = [p, window]
        if key is not None:
            self._by_key[key] = i
        self._push(i, p)
        return True

    def _remove(self, entry_id):
        _, w = self._entries.pop(entry_id)
        key = getattr(w, "key", None)
        if key is not None and self._by_key.get(key) == entry_id:
            del self._by_key[key]

    def update_priority(self, entry_id, losses):
        if entry_id not in self._entries:
            raise UsageError(f"HES entry {entry_id} is not present")
        self._push(entry_id, self.priority_of(losses))

    def min_entry(self):
        """``(priority, id)`` of the next eviction candidate."""
        if not self._entries:
            raise UsageError("HES buffer is empty")
        return self._min()

    def priorities(self) -> np.ndarray:
        return np.array([v[0] for v in self._entries.values()])

    def entries(self):
        return [(i, v[0], v[1]) for i, v in self._entries.items()]

    def sample(self, batch: int, rng):
        """Uniform sample without replacement (fewer if the buffer is smaller)."""
        if not self._entries:
            raise UsageError("HES buffer is empty")
        ids = sorted(self._entries)
        pick = rng.choice(len(ids), size=min(batch, len(ids)), replace=False)
        chosen = [ids[j] for j in pick]
        return chosen, [self._entries[i][1] for i in chosen]


def hes_offer(buf: HesBuffer, window, losses) -> bool:
    return buf.offer(window, losses)


def hes_update_priority(buf: HesBuffer, entry_id, losses):
    buf.update_priority(entry_id, losses)
