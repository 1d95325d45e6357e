"""Two-worker annotation protocol with gold-standard quality control.

Each image contributes one normal task (a point-pair query). Serving
inserts gold tasks (queries with a verified answer) with probability
p_gold; workers whose running gold accuracy drops below the threshold
after enough probes are rejected, and their contributions are excluded
retroactively: an accepted task they touched reverts to open and is
re-collected from scratch.

A normal task is accepted when two distinct workers give decisive,
agreeing answers; any other outcome after two answers discards it.
"hard to tell" is never decisive.

All mutations append to an event log; replaying the log through a fresh
store reconstructs the exact state.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .sampling import PairQuery, write_pairs


class Choice(IntEnum):
    POINT1_CLOSER = 1
    POINT2_CLOSER = 2
    HARD_TO_TELL = 3

    @property
    def relation(self) -> int | None:
        if self is Choice.POINT1_CLOSER:
            return 1
        if self is Choice.POINT2_CLOSER:
            return -1
        return None


def relation_to_choice(r: int) -> Choice:
    if r == 1:
        return Choice.POINT1_CLOSER
    if r == -1:
        return Choice.POINT2_CLOSER
    raise ValueError(f"no decisive choice for relation {r}")


class CrowdError(Exception):
    pass


class WorkerRejectedError(CrowdError):
    pass


class DuplicateAnswerError(CrowdError):
    pass


class NotServedError(CrowdError):
    pass


@dataclass
class Answer:
    worker_id: str
    task_id: str
    choice: Choice
    response_ms: int = 0
    timestamp: float = 0.0


@dataclass
class AnnotationTask:
    task_id: str
    image_id: str
    query: PairQuery
    kind: str = "normal"  # or "gold"
    gold_answer: int | None = None
    assignments: list[str] = field(default_factory=list)
    served_ever: set[str] = field(default_factory=set)
    answers: list[Answer] = field(default_factory=list)
    state: str = "open"  # open | pending_second | accepted | discarded
    accepted_relation: int | None = None


@dataclass
class WorkerRecord:
    worker_id: str
    gold_answered: int = 0
    gold_correct: int = 0
    status: str = "active"  # or "rejected"
    pending: str | None = None
    answered: set[str] = field(default_factory=set)
    cursor: int = 0

    @property
    def gold_accuracy(self) -> float:
        return self.gold_correct / self.gold_answered if self.gold_answered else 1.0


class CrowdStore:
    """Tasks, workers, and the serialized mutation path between them."""

    def __init__(self, p_gold: float = 0.1, min_gold_probes: int = 20,
                 gold_accuracy_threshold: float = 0.85, filtering: bool = True,
                 seed: int = 0, log_events: bool = True, log_path=None):
        if not 0.0 <= p_gold <= 1.0:
            raise ValueError(f"p_gold must be in [0, 1], got {p_gold}")
        self.p_gold = p_gold
        self.min_gold_probes = min_gold_probes
        self.gold_accuracy_threshold = gold_accuracy_threshold
        self.filtering = filtering
        self.tasks: dict[str, AnnotationTask] = {}
        self.workers: dict[str, WorkerRecord] = {}
        self.events: list[dict] = []
        self._normal_image_ids: set[str] = set()
        self._gold_ids: list[str] = []
        self._queue: list[str] = []  # normal task ids, may repeat after reverts
        self._rng = np.random.default_rng(seed)
        self._lock = threading.RLock()
        self._log_events = log_events
        # Append-only on-disk log, flushed per event, so state survives any
        # shutdown and can be rebuilt with replay_file.
        self._log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
        self._log(t="config", p_gold=p_gold, min_gold_probes=min_gold_probes,
                  threshold=gold_accuracy_threshold, filtering=filtering)

    # -- event plumbing ----------------------------------------------------

    def _log(self, **event) -> None:
        if self._log_events:
            self.events.append(event)
        if self._log_fh is not None:
            self._log_fh.write(json.dumps(event) + "\n")
            self._log_fh.flush()

    def save_log(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            for ev in self.events:
                f.write(json.dumps(ev) + "\n")

    @classmethod
    def replay(cls, events) -> "CrowdStore":
        """Rebuild a store by applying logged events in order."""
        it = iter(events)
        head = next(it)
        if head.get("t") != "config":
            raise ValueError("event log must start with a config record")
        store = cls(p_gold=head["p_gold"], min_gold_probes=head["min_gold_probes"],
                    gold_accuracy_threshold=head["threshold"],
                    filtering=head["filtering"], log_events=True)
        for ev in it:
            kind = ev["t"]
            if kind == "worker":
                store._add_worker(ev["worker"])
                store._log(**ev)
            elif kind == "task":
                store._add_task(ev)
                store._log(**ev)
            elif kind == "serve":
                store._apply_serve(ev["worker"], ev["task"])
                store._log(**ev)
            elif kind == "answer":
                store._log(**ev)
                store._apply_answer(ev["worker"], ev["task"], Choice(ev["choice"]),
                                    ev["ms"], ev["ts"])
            elif kind == "reject":
                pass  # derived again from the answer stream
            else:
                raise ValueError(f"unknown event type {kind!r}")
        return store

    @classmethod
    def replay_file(cls, path) -> "CrowdStore":
        events = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
        return cls.replay(events)

    def snapshot(self) -> dict:
        """Comparable summary of all live state (ignores rng and cursors)."""
        return {
            "tasks": {
                tid: {
                    "state": t.state,
                    "assignments": sorted(t.assignments),
                    "served_ever": sorted(t.served_ever),
                    "answers": [(a.worker_id, int(a.choice)) for a in t.answers],
                    "accepted_relation": t.accepted_relation,
                }
                for tid, t in self.tasks.items()
            },
            "workers": {
                wid: {
                    "gold_answered": w.gold_answered,
                    "gold_correct": w.gold_correct,
                    "status": w.status,
                    "answered": sorted(w.answered),
                }
                for wid, w in self.workers.items()
            },
        }

    # -- registration ------------------------------------------------------

    def register_worker(self, worker_id: str | None = None) -> str:
        with self._lock:
            wid = worker_id or uuid.uuid4().hex
            self._add_worker(wid)
            self._log(t="worker", worker=wid)
            return wid

    def _add_worker(self, wid: str) -> None:
        if wid in self.workers:
            raise CrowdError(f"worker {wid!r} already registered")
        self.workers[wid] = WorkerRecord(worker_id=wid)

    def create_tasks(self, records) -> list[str]:
        """One normal task per (image_id, PairQuery) record."""
        with self._lock:
            records = list(records)
            if not records:
                raise ValueError("create_tasks needs a nonempty image set")
            ids = []
            for image_id, query in records:
                if image_id in self._normal_image_ids:
                    raise ValueError(f"duplicate image id {image_id!r}")
                ev = {"t": "task", "task": f"t{len(self.tasks):07d}", "image": image_id,
                      "y1": query.i[0], "x1": query.i[1], "y2": query.j[0],
                      "x2": query.j[1], "kind": "normal", "gold": None}
                self._add_task(ev)
                self._log(**ev)
                ids.append(ev["task"])
            return ids

    def add_gold_task(self, image_id: str, query: PairQuery, verified: int) -> str:
        """A reusable probe task with a pre-verified relation."""
        with self._lock:
            if verified not in (1, -1):
                raise ValueError(f"gold answer must be +1 or -1, got {verified}")
            ev = {"t": "task", "task": f"t{len(self.tasks):07d}", "image": image_id,
                  "y1": query.i[0], "x1": query.i[1], "y2": query.j[0],
                  "x2": query.j[1], "kind": "gold", "gold": verified}
            self._add_task(ev)
            self._log(**ev)
            return ev["task"]

    def _add_task(self, ev: dict) -> None:
        tid = ev["task"]
        if tid in self.tasks:
            raise CrowdError(f"task {tid!r} already exists")
        task = AnnotationTask(
            task_id=tid, image_id=ev["image"],
            query=PairQuery((ev["y1"], ev["x1"]), (ev["y2"], ev["x2"])),
            kind=ev["kind"], gold_answer=ev["gold"])
        self.tasks[tid] = task
        if task.kind == "gold":
            self._gold_ids.append(tid)
        else:
            self._normal_image_ids.add(task.image_id)
            self._queue.append(tid)

    # -- serving -----------------------------------------------------------

    def next_task(self, worker_id: str) -> AnnotationTask | None:
        """Serve a task, or None when nothing is available.

        Idempotent while unanswered: a worker with a pending task gets the
        same task again. Gold tasks are served with probability p_gold.
        """
        with self._lock:
            w = self._worker(worker_id)
            if w.status == "rejected":
                raise WorkerRejectedError(f"worker {worker_id!r} is rejected")
            if w.pending is not None:
                return self.tasks[w.pending]
            task = None
            if self.p_gold > 0 and self._rng.random() < self.p_gold:
                task = self._pick_gold(w)
            if task is None:
                task = self._pick_normal(w)
            if task is None:
                return None
            self._apply_serve(worker_id, task.task_id)
            self._log(t="serve", worker=worker_id, task=task.task_id)
            return task

    def _pick_gold(self, w: WorkerRecord) -> AnnotationTask | None:
        fresh = [tid for tid in self._gold_ids if w.worker_id not in self.tasks[tid].served_ever]
        if not fresh:
            return None
        return self.tasks[fresh[int(self._rng.integers(0, len(fresh)))]]

    def _pick_normal(self, w: WorkerRecord) -> AnnotationTask | None:
        while w.cursor < len(self._queue):
            task = self.tasks[self._queue[w.cursor]]
            if (task.state in ("open", "pending_second")
                    and len(task.assignments) < 2
                    and w.worker_id not in task.served_ever):
                return task
            w.cursor += 1
        return None

    def _apply_serve(self, worker_id: str, task_id: str) -> None:
        task = self.tasks[task_id]
        w = self.workers[worker_id]
        task.served_ever.add(worker_id)
        if task.kind == "normal":
            task.assignments.append(worker_id)
        w.pending = task_id

    # -- answering ---------------------------------------------------------

    def submit_answer(self, worker_id: str, task_id: str, choice: Choice | int,
                      response_ms: int = 0, timestamp: float | None = None) -> AnnotationTask:
        with self._lock:
            w = self._worker(worker_id)
            if w.status == "rejected":
                raise WorkerRejectedError(f"worker {worker_id!r} is rejected")
            if task_id not in self.tasks:
                raise CrowdError(f"unknown task {task_id!r}")
            if task_id in w.answered:
                raise DuplicateAnswerError(
                    f"worker {worker_id!r} already answered task {task_id!r}")
            if w.pending != task_id:
                raise NotServedError(f"task {task_id!r} was not served to {worker_id!r}")
            choice = Choice(choice)
            ts = time.time() if timestamp is None else timestamp
            self._log(t="answer", worker=worker_id, task=task_id,
                      choice=int(choice), ms=int(response_ms), ts=ts)
            self._apply_answer(worker_id, task_id, choice, int(response_ms), ts)
            return self.tasks[task_id]

    def _apply_answer(self, worker_id: str, task_id: str, choice: Choice,
                      response_ms: int, ts: float) -> None:
        w = self.workers[worker_id]
        task = self.tasks[task_id]
        w.pending = None
        w.answered.add(task_id)
        if task.kind == "gold":
            w.gold_answered += 1
            if choice.relation == task.gold_answer:
                w.gold_correct += 1
            if (self.filtering and w.status == "active"
                    and w.gold_answered >= self.min_gold_probes
                    and w.gold_accuracy < self.gold_accuracy_threshold):
                self._reject_worker(w)
            return
        task.answers.append(Answer(worker_id, task_id, choice, response_ms, ts))
        if len(task.answers) == 1:
            task.state = "pending_second"
            return
        first, second = task.answers
        decisive = first.choice.relation is not None and second.choice.relation is not None
        if decisive and first.choice == second.choice:
            task.state = "accepted"
            task.accepted_relation = first.choice.relation
        else:
            task.state = "discarded"

    # -- rejection and retroactive cleanup ----------------------------------

    def _reject_worker(self, w: WorkerRecord) -> None:
        w.status = "rejected"
        self._log(t="reject", worker=w.worker_id)
        if w.pending is not None:
            task = self.tasks[w.pending]
            if task.kind == "normal" and w.worker_id in task.assignments:
                task.assignments.remove(w.worker_id)
                self._queue.append(task.task_id)
            w.pending = None
        for task_id in sorted(w.answered):
            task = self.tasks[task_id]
            if task.kind != "normal":
                continue
            if task.state == "accepted":
                # Tainted acceptance: drop it entirely and re-collect. The
                # co-worker keeps their serving history so the task goes to
                # two fresh workers.
                task.answers = []
                task.assignments = []
                task.state = "open"
                task.accepted_relation = None
                self._queue.append(task.task_id)
            elif task.state == "pending_second":
                task.answers = [a for a in task.answers if a.worker_id != w.worker_id]
                if not task.answers:
                    if w.worker_id in task.assignments:
                        task.assignments.remove(w.worker_id)
                    task.state = "open"
                    self._queue.append(task.task_id)
            # discarded tasks stay discarded

    # -- export and stats ----------------------------------------------------

    def accepted_records(self) -> list[tuple[str, PairQuery]]:
        out = []
        for tid in sorted(self.tasks):
            t = self.tasks[tid]
            if t.kind == "normal" and t.state == "accepted":
                out.append((t.image_id, PairQuery(t.query.i, t.query.j, t.accepted_relation)))
        return out

    def export_dataset(self, path) -> int:
        """Write accepted tasks in the pair file format; returns the count."""
        with self._lock:
            records = self.accepted_records()
            write_pairs(path, records)
            return len(records)

    def stats(self) -> dict:
        with self._lock:
            states = {"open": 0, "pending_second": 0, "accepted": 0, "discarded": 0}
            for t in self.tasks.values():
                if t.kind == "normal":
                    states[t.state] += 1
            return {
                "tasks": sum(1 for t in self.tasks.values() if t.kind == "normal"),
                "gold_tasks": len(self._gold_ids),
                "answers": sum(len(w.answered) for w in self.workers.values()),
                "workers": len(self.workers),
                "rejected_workers": sum(1 for w in self.workers.values()
                                        if w.status == "rejected"),
                **states,
            }

    def _worker(self, worker_id: str) -> WorkerRecord:
        if worker_id not in self.workers:
            raise CrowdError(f"unknown worker {worker_id!r}")
        return self.workers[worker_id]


# ---------------------------------------------------------------------------
# protocol simulation

def conditional_error_rate(e: float) -> float:
    """P(accepted answer is wrong) for two independent workers with
    per-answer error rate e, no hard answers, no filtering."""
    return e * e / (e * e + (1.0 - e) * (1.0 - e))


@dataclass
class SimulationReport:
    n_tasks: int
    n_accepted: int
    n_discarded: int
    n_wrong_accepted: int
    accepted_error_rate: float
    acceptance_rate: float
    analytic_error_rate: float
    gold_answers: int
    gold_error_estimate: float | None
    rejected_workers: int


def simulate(ground_truth, n_workers: int = 2, error_rate: float = 0.07,
             hard_rate: float = 0.0, p_gold: float = 0.0, n_gold: int = 0,
             filtering: bool = False, min_gold_probes: int = 20, seed: int = 0,
             worker_error_rates=None) -> SimulationReport:
    """Run the full protocol against synthetic workers.

    `ground_truth` is a sequence of true relations (+1/-1) for the normal
    tasks. Workers answer correctly with probability 1-e, pick the wrong
    point with probability e, and answer "hard to tell" with probability
    h (applied first). With h=0 and filtering off, the accepted error rate
    converges to e^2 / (e^2 + (1-e)^2).
    """
    if not 0.0 <= error_rate <= 1.0 or not 0.0 <= hard_rate <= 1.0:
        raise ValueError("rates must be in [0, 1]")
    ground_truth = [int(r) for r in ground_truth]
    if any(r not in (1, -1) for r in ground_truth):
        raise ValueError("ground-truth relations must be +1 or -1")
    rng = np.random.default_rng(seed)
    store = CrowdStore(p_gold=p_gold, min_gold_probes=min_gold_probes,
                       filtering=filtering, seed=seed + 1, log_events=False)
    task_ids = store.create_tasks(
        (f"img{n:07d}", PairQuery((0, 0), (0, 1))) for n in range(len(ground_truth)))
    truth = dict(zip(task_ids, ground_truth))
    for g in range(n_gold):
        tid = store.add_gold_task(f"gold{g:05d}", PairQuery((0, 0), (0, 1)),
                                  verified=1 if rng.random() < 0.5 else -1)
        truth[tid] = store.tasks[tid].gold_answer

    rates = list(worker_error_rates) if worker_error_rates is not None \
        else [error_rate] * n_workers
    workers = [(store.register_worker(f"w{k}"), rates[k]) for k in range(len(rates))]
    active = list(workers)
    while active:
        still = []
        for wid, e in active:
            try:
                task = store.next_task(wid)
            except WorkerRejectedError:
                continue
            if task is None:
                continue
            true_rel = truth[task.task_id]
            if rng.random() < hard_rate:
                choice = Choice.HARD_TO_TELL
            else:
                wrong = rng.random() < e
                choice = relation_to_choice(-true_rel if wrong else true_rel)
            try:
                store.submit_answer(wid, task.task_id, choice)
            except WorkerRejectedError:
                continue
            still.append((wid, e))
        active = still

    accepted = [(tid, t) for tid, t in store.tasks.items()
                if t.kind == "normal" and t.state == "accepted"]
    n_wrong = sum(1 for tid, t in accepted if t.accepted_relation != truth[tid])
    n_acc = len(accepted)
    n_disc = sum(1 for t in store.tasks.values()
                 if t.kind == "normal" and t.state == "discarded")
    gold_answers = sum(w.gold_answered for w in store.workers.values())
    gold_correct = sum(w.gold_correct for w in store.workers.values())
    gold_estimate = None
    if gold_answers:
        e_hat = 1.0 - gold_correct / gold_answers
        gold_estimate = conditional_error_rate(e_hat)
    return SimulationReport(
        n_tasks=len(ground_truth),
        n_accepted=n_acc,
        n_discarded=n_disc,
        n_wrong_accepted=n_wrong,
        accepted_error_rate=n_wrong / n_acc if n_acc else 0.0,
        acceptance_rate=n_acc / len(ground_truth) if ground_truth else 0.0,
        analytic_error_rate=conditional_error_rate(error_rate),
        gold_answers=gold_answers,
        gold_error_estimate=gold_estimate,
        rejected_workers=sum(1 for w in store.workers.values() if w.status == "rejected"),
    )
