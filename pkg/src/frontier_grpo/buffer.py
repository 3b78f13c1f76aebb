"""Task states, the transition operator, and the append-only evolving buffer.

A :class:`ContextState` is one step-wise training task: a task instance, the
current solution (absent for a fresh draft), and the execution history that
led to it. Executing an action from a state spawns a child state through
:func:`transition`; children are appended to the :class:`EvolvingBuffer`,
which never evicts.

The buffer keeps per-state sampling metadata (potential, visit times, last
group spread) in columnar numpy arrays so the sampler can build a
distribution over tens of thousands of states without touching Python
objects.
"""
from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

VISIT_WINDOW = 20
DEFAULT_P_INIT = 0.05


class Kind(enum.IntEnum):
    DRAFT = 0
    DEBUG = 1
    IMPROVE = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


class ErrorClass(str, enum.Enum):
    NONE = "none"
    RUNTIME_ERROR = "runtime_error"
    INVALID_SUBMISSION = "invalid_submission"


class BufferError(ValueError):
    """Raised on contract violations against the buffer or its states."""


@dataclass(frozen=True)
class TaskInstance:
    id: str
    description_features: tuple[float, ...]
    difficulty: float
    metric_id: str = "humanrank"
    leaderboard_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty {self.difficulty} outside [0, 1]")


@dataclass(frozen=True)
class ExecFeedback:
    succeeded: bool
    error_class: ErrorClass = ErrorClass.NONE
    detail_code: int = 0

    def __post_init__(self):
        if self.succeeded != (self.error_class == ErrorClass.NONE):
            raise ValueError(
                f"succeeded={self.succeeded} inconsistent with error_class={self.error_class.value}"
            )

    @classmethod
    def success(cls) -> "ExecFeedback":
        return cls(True, ErrorClass.NONE, 0)

    @classmethod
    def failure(cls, error_class: ErrorClass = ErrorClass.RUNTIME_ERROR, detail_code: int = 1):
        return cls(False, ErrorClass(error_class), detail_code)


@dataclass(frozen=True)
class HistoryEntry:
    solution_id: str
    feedback: ExecFeedback
    score: float

    def __post_init__(self):
        _check_score(self.score, self.feedback)


def _check_score(score: float, feedback: ExecFeedback) -> None:
    if feedback.succeeded:
        if not 0.0 <= score <= 1.0:
            raise BufferError(f"successful execution needs a score in [0, 1], got {score}")
    elif score != -1:
        raise BufferError(f"failed execution must carry score -1, got {score}")


@dataclass(frozen=True)
class ContextState:
    """One step-wise task ``(instance, code, history)`` plus sampling metadata.

    ``potential`` and ``visit_times`` are a point-in-time copy; the buffer owns
    the live values.
    """

    state_id: str
    instance: TaskInstance
    code: str | None = None
    history: tuple[HistoryEntry, ...] = ()
    kind: Kind = Kind.DRAFT
    potential: float = DEFAULT_P_INIT
    visit_times: tuple[int, ...] = ()
    parent_id: str | None = None

    @property
    def depth(self) -> int:
        return len(self.history)

    @property
    def last_feedback(self) -> ExecFeedback | None:
        return self.history[-1].feedback if self.history else None

    def check(self) -> None:
        """Validate the kind/history invariants; raise :class:`BufferError` if broken."""
        if (self.code is None) != (len(self.history) == 0):
            raise BufferError(f"{self.state_id}: code must be absent exactly when history is empty")
        expected = classify_kind(self.code is not None, self.last_feedback)
        if expected != self.kind:
            raise BufferError(f"{self.state_id}: kind {self.kind.label} but history implies {expected.label}")
        if self.potential < 0:
            raise BufferError(f"{self.state_id}: negative potential")
        if any(b <= a for a, b in zip(self.visit_times, self.visit_times[1:])):
            raise BufferError(f"{self.state_id}: visit_times not strictly increasing")


def classify_kind(code_present: bool, last_feedback: ExecFeedback | None) -> Kind:
    if not code_present:
        if last_feedback is not None:
            raise BufferError("a state without code cannot carry execution feedback")
        return Kind.DRAFT
    if last_feedback is None:
        raise BufferError("a state with code must derive from an execution")
    return Kind.IMPROVE if last_feedback.succeeded else Kind.DEBUG


def transition(
    parent: ContextState,
    solution_id: str,
    feedback: ExecFeedback,
    score: float,
    *,
    state_id: str,
    p_init: float = DEFAULT_P_INIT,
) -> ContextState:
    """Spawn the derivative state of executing ``solution_id`` from ``parent``."""
    _check_score(score, feedback)
    entry = HistoryEntry(solution_id, feedback, float(score))
    return ContextState(
        state_id=state_id,
        instance=parent.instance,
        code=solution_id,
        history=parent.history + (entry,),
        kind=classify_kind(True, feedback),
        potential=p_init,
        visit_times=(),
        parent_id=parent.state_id,
    )


@dataclass
class BufferSnapshot:
    """Consistent read-only view over the first ``size`` states of a buffer."""

    size: int
    iteration: int
    ids: list[str]
    kind: np.ndarray
    depth: np.ndarray
    potential: np.ndarray
    visits: np.ndarray
    visit_counts: np.ndarray
    last_std: np.ndarray

    def __len__(self) -> int:
        return self.size


class EvolvingBuffer:
    """Append-only pool of :class:`ContextState` objects.

    Appends are serialized by one lock; metadata writes (potential, visits)
    are serialized per state through a striped lock table. Snapshots copy the
    mutable columns, so states appended or updated afterwards are invisible
    to an existing snapshot.
    """

    _N_STRIPES = 64

    def __init__(self, p_init: float = DEFAULT_P_INIT, visit_window: int = VISIT_WINDOW):
        if p_init < 0:
            raise ValueError("p_init must be non-negative")
        self.p_init = float(p_init)
        self.visit_window = int(visit_window)
        self.iteration = 0
        self.kind_counts = {k: 0 for k in Kind}
        self._states: list[ContextState] = []
        self._ids: list[str] = []
        self._row: dict[str, int] = {}
        cap = 256
        self._kind = np.zeros(cap, dtype=np.int8)
        self._depth = np.zeros(cap, dtype=np.int64)
        self._potential = np.zeros(cap, dtype=np.float64)
        self._visits = np.full((cap, self.visit_window), -1, dtype=np.int64)
        self._visit_counts = np.zeros(cap, dtype=np.int64)
        self._last_std = np.full(cap, np.nan, dtype=np.float64)
        self._append_lock = threading.Lock()
        self._meta_locks = [threading.Lock() for _ in range(self._N_STRIPES)]

    # -- growth ---------------------------------------------------------
    def _grow(self, need: int) -> None:
        cap = self._kind.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)

        def extend(a, fill):
            b = np.full((new_cap,) + a.shape[1:], fill, dtype=a.dtype)
            b[:cap] = a
            return b

        # metadata writers must not land in the arrays being replaced
        for lock in self._meta_locks:
            lock.acquire()
        try:
            self._kind = extend(self._kind, 0)
            self._depth = extend(self._depth, 0)
            self._potential = extend(self._potential, 0.0)
            self._visits = extend(self._visits, -1)
            self._visit_counts = extend(self._visit_counts, 0)
            self._last_std = extend(self._last_std, np.nan)
        finally:
            for lock in self._meta_locks:
                lock.release()

    def append(self, child: ContextState) -> str:
        child.check()
        with self._append_lock:
            if child.state_id in self._row:
                raise BufferError(f"state id collision: {child.state_id!r}")
            if child.parent_id is not None and child.parent_id not in self._row:
                raise BufferError(f"parent {child.parent_id!r} is not in the buffer")
            row = len(self._states)
            self._grow(row + 1)
            # stored copy carries fresh metadata; live values sit in the columns
            self._states.append(child)
            self._ids.append(child.state_id)
            self._kind[row] = int(child.kind)
            self._depth[row] = child.depth
            self._potential[row] = child.potential
            for t in child.visit_times[-self.visit_window:]:
                self._visits[row, self._visit_counts[row]] = t
                self._visit_counts[row] += 1
            self._row[child.state_id] = row
            self.kind_counts[child.kind] += 1
        return child.state_id

    def extend(self, children: Iterable[ContextState]) -> list[str]:
        return [self.append(c) for c in children]

    # -- lookup ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self._states)

    def __contains__(self, state_id: str) -> bool:
        return state_id in self._row

    def row_of(self, state_id: str) -> int:
        try:
            return self._row[state_id]
        except KeyError:
            raise BufferError(f"unknown state id {state_id!r}") from None

    def id_at(self, row: int) -> str:
        return self._ids[row]

    def get(self, state_id: str) -> ContextState:
        row = self.row_of(state_id)
        base = self._states[row]
        c = int(self._visit_counts[row])
        return ContextState(
            state_id=base.state_id,
            instance=base.instance,
            code=base.code,
            history=base.history,
            kind=base.kind,
            potential=float(self._potential[row]),
            visit_times=tuple(int(v) for v in self._visits[row, :c]),
            parent_id=base.parent_id,
        )

    def states(self) -> list[ContextState]:
        return [self.get(i) for i in list(self._ids)]

    def last_std(self, state_id: str) -> float:
        return float(self._last_std[self.row_of(state_id)])

    # -- metadata -------------------------------------------------------
    def advance(self, t: int) -> None:
        if t < self.iteration:
            raise BufferError(f"iteration cannot go backwards ({t} < {self.iteration})")
        self.iteration = int(t)

    def record_visit(self, state_id: str, t: int) -> None:
        row = self.row_of(state_id)
        if t < self.iteration:
            raise BufferError(f"visit at t={t} precedes current iteration {self.iteration}")
        with self._meta_locks[row % self._N_STRIPES]:
            c = int(self._visit_counts[row])
            if c and self._visits[row, c - 1] >= t:
                raise BufferError(f"{state_id}: visit times must be strictly increasing")
            if c == self.visit_window:
                self._visits[row, :-1] = self._visits[row, 1:]
                self._visits[row, -1] = t
            else:
                self._visits[row, c] = t
                self._visit_counts[row] = c + 1

    def set_potential(self, state_id: str, value: float, group_std: float | None = None) -> None:
        if not value >= 0:
            raise BufferError(f"potential must be non-negative, got {value}")
        row = self.row_of(state_id)
        with self._meta_locks[row % self._N_STRIPES]:
            self._potential[row] = value
            if group_std is not None:
                self._last_std[row] = group_std

    # -- views ----------------------------------------------------------
    def snapshot(self) -> BufferSnapshot:
        with self._append_lock:
            n = len(self._states)
            ids = self._ids[:n]
            kind = self._kind[:n].copy()
            depth = self._depth[:n].copy()
        # per-state metadata may be mid-update elsewhere; take each stripe in turn
        for lock in self._meta_locks:
            lock.acquire()
        try:
            potential = self._potential[:n].copy()
            visits = self._visits[:n].copy()
            counts = self._visit_counts[:n].copy()
            last_std = self._last_std[:n].copy()
        finally:
            for lock in self._meta_locks:
                lock.release()
        return BufferSnapshot(n, self.iteration, ids, kind, depth, potential, visits, counts, last_std)

    def check(self) -> None:
        """Re-validate every stored state against the kind/lineage invariants."""
        for sid in self._ids:
            st = self.get(sid)
            st.check()
            if st.parent_id is not None:
                parent = self._states[self.row_of(st.parent_id)]
                if st.history[:-1] != parent.history or st.instance != parent.instance:
                    raise BufferError(f"{sid}: history is not parent history plus one entry")
            if not st.visit_times and st.potential != self.p_init:
                raise BufferError(f"{sid}: unvisited state lost its initial potential")

    # -- serialization --------------------------------------------------
    def dump_jsonl(self, fh: IO[str]) -> int:
        """Write one JSON record per state, in insertion order. Returns the count."""
        snap = self.snapshot()
        for row, sid in enumerate(snap.ids):
            fh.write(json.dumps(state_record(self._states[row], snap, row), separators=(",", ":")))
            fh.write("\n")
        return snap.size


def state_record(state: ContextState, snap: BufferSnapshot, row: int) -> dict:
    c = int(snap.visit_counts[row])
    return {
        "state_id": state.state_id,
        "parent_id": state.parent_id,
        "instance_id": state.instance.id,
        "kind": state.kind.label,
        "depth": state.depth,
        "potential": float(snap.potential[row]),
        "visit_times": [int(v) for v in snap.visits[row, :c]],
        "history": [
            [h.solution_id, h.feedback.succeeded, h.feedback.error_class.value, h.feedback.detail_code, h.score]
            for h in state.history
        ],
    }


def load_jsonl(lines: Iterable[str]) -> list[dict]:
    """Parse a buffer snapshot written by :meth:`EvolvingBuffer.dump_jsonl`."""
    out = []
    for i, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {i}: {exc}") from None
        out.append(rec)
    return out


def seed_state_id(instance: TaskInstance) -> str:
    return f"seed:{instance.id}"


def new_buffer(
    seed_instances: Sequence[TaskInstance],
    p_init: float = DEFAULT_P_INIT,
    visit_window: int = VISIT_WINDOW,
) -> EvolvingBuffer:
    if not seed_instances:
        raise BufferError("need at least one seed instance")
    seen: set[str] = set()
    for inst in seed_instances:
        if inst.id in seen:
            raise BufferError(f"duplicate instance id {inst.id!r}")
        seen.add(inst.id)
    buf = EvolvingBuffer(p_init=p_init, visit_window=visit_window)
    for inst in seed_instances:
        buf.append(ContextState(state_id=seed_state_id(inst), instance=inst, potential=p_init))
    return buf
