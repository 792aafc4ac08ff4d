"""In-process SPMD cluster with metered Broadcast / Reduce / ReduceAll.

Every node runs the same program in its own thread and talks to the others
only through the collectives on :class:`NodeContext`. A collective completes
once all nodes have entered it; the last arrival validates that the calls
match, combines the payloads in node-id order (so results never depend on
arrival order) and records the traffic.

Two schedulers are available. ``"threads"`` lets nodes run concurrently.
``"round-robin"`` passes a baton so that exactly one node executes at a time,
in node order, which is handy under a debugger. Both give identical results.
"""
from __future__ import annotations

import copy
import csv
import threading
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

BROADCAST = "broadcast"
REDUCE = "reduce"
REDUCE_ALL = "reduce_all"
KINDS = (BROADCAST, REDUCE, REDUCE_ALL)

OUTER_GRADIENT = "outer-gradient"
PCG_SETUP = "pcg-setup"
PCG_ITERATION = "pcg-iteration"
INTEGRATION = "integration"


class CollectiveError(RuntimeError):
    pass


class SequenceMismatch(CollectiveError):
    """Nodes disagreed on the kind, root, phase or size of a collective."""


class ClusterAborted(CollectiveError):
    """Raised on nodes blocked in a collective after another node failed."""


@dataclass
class Counter:
    rounds: int = 0
    vector_rounds: int = 0
    scalars: int = 0
    vector_elements: int = 0

    def add(self, other):
        self.rounds += other.rounds
        self.vector_rounds += other.vector_rounds
        self.scalars += other.scalars
        self.vector_elements += other.vector_elements
        return self

    @property
    def elements(self):
        return self.scalars + self.vector_elements


@dataclass
class TrafficLedger:
    """Per (phase, kind) communication counters.

    Each collective call is one round. Payloads of length one count as
    scalars, anything longer as vector elements. ``vector_rounds`` counts
    only the calls that move a vector; scalar reductions are latency-only
    and are left out of that figure.
    """

    counters: dict = field(default_factory=lambda: defaultdict(Counter))

    def record(self, phase, kind, length):
        c = self.counters[(phase, kind)]
        c.rounds += 1
        if length > 1:
            c.vector_rounds += 1
            c.vector_elements += length
        else:
            c.scalars += length

    def copy(self):
        out = TrafficLedger()
        for key, c in self.counters.items():
            out.counters[key] = copy.copy(c)
        return out

    def total(self, phase=None, kind=None):
        acc = Counter()
        for (p, k), c in self.counters.items():
            if (phase is None or p == phase) and (kind is None or k == kind):
                acc.add(c)
        return acc

    def phases(self):
        return sorted({p for p, _ in self.counters})

    def rows(self):
        for (phase, kind) in sorted(self.counters):
            c = self.counters[(phase, kind)]
            yield phase, kind, c.rounds, c.scalars, c.vector_elements

    def to_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phase", "kind", "rounds", "scalars", "vector_elements"])
        for row in self.rows():
            writer.writerow(row)

    def __sub__(self, other):
        out = self.copy()
        for key, c in other.counters.items():
            mine = out.counters[key]
            mine.rounds -= c.rounds
            mine.vector_rounds -= c.vector_rounds
            mine.scalars -= c.scalars
            mine.vector_elements -= c.vector_elements
        return out


@dataclass
class _Request:
    kind: str
    root: int | None
    phase: str | None
    op: str
    payload: np.ndarray | None
    scalar: bool


def _as_payload(value):
    if value is None:
        return None, False
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1).copy(), True
    if arr.ndim != 1:
        raise ValueError("collective payloads must be scalars or 1-d vectors")
    return arr.copy(), False


class NodeContext:
    """Handle through which one node takes part in collectives."""

    def __init__(self, cluster, node_id):
        self.cluster = cluster
        self.node_id = node_id
        self.m = cluster.m
        self.calls = 0

    def broadcast(self, payload, root=0, phase=None):
        """Root's payload is returned on every node.

        Non-root nodes may pass ``None`` (size taken from the root) or a
        buffer whose length must match. ``phase=None`` on a non-root node
        accepts whatever phase the root names.
        """
        arr, scalar = _as_payload(payload)
        if self.node_id == root and arr is None:
            raise ValueError("broadcast root must supply a payload")
        req = _Request(BROADCAST, root, phase, "sum", arr, scalar)
        return self._unwrap(self.cluster._exchange(self, req))

    def reduce_all(self, payload, op="sum", phase=None):
        arr, scalar = _as_payload(payload)
        if arr is None:
            raise ValueError("reduce_all needs a payload on every node")
        req = _Request(REDUCE_ALL, None, phase, op, arr, scalar)
        return self._unwrap(self.cluster._exchange(self, req))

    def reduce(self, payload, root=0, op="sum", phase=None):
        """Like reduce_all, but only ``root`` gets the result; others get None."""
        arr, scalar = _as_payload(payload)
        if arr is None:
            raise ValueError("reduce needs a payload on every node")
        req = _Request(REDUCE, root, phase, op, arr, scalar)
        return self._unwrap(self.cluster._exchange(self, req))

    @staticmethod
    def _unwrap(result):
        if result is None:
            return None
        arr, scalar = result
        return float(arr[0]) if scalar else arr


_OPS = {"sum": np.add, "max": np.maximum, "min": np.minimum}


class Cluster:
    def __init__(self, m, scheduler="threads"):
        if m < 1:
            raise ValueError("cluster needs at least one node")
        if scheduler not in ("threads", "round-robin"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.m = m
        self.scheduler = scheduler
        self.ledger = TrafficLedger()
        self._cond = threading.Condition()
        self._reset()

    def _reset(self):
        self._slots = [None] * self.m
        self._arrived = 0
        self._generation = 0
        self._results = [None] * self.m
        self._error = None
        self._finished = set()
        self._turn = 0

    def ledger_snapshot(self):
        with self._cond:
            return self.ledger.copy()

    def run(self, program, node_args=None):
        """Run ``program(ctx, *node_args[j])`` on every node; return the list of results."""
        if node_args is None:
            node_args = [()] * self.m
        if len(node_args) != self.m:
            raise ValueError("need one argument tuple per node")
        self._reset()
        results = [None] * self.m
        failures = [None] * self.m

        def body(j):
            ctx = NodeContext(self, j)
            try:
                if self.scheduler == "round-robin":
                    with self._cond:
                        self._wait_for(lambda: self._turn == j or self._error is not None)
                        if self._error is not None:
                            raise ClusterAborted("cluster aborted before start")
                results[j] = program(ctx, *node_args[j])
            except BaseException as exc:  # noqa: BLE001 - re-raised in run()
                failures[j] = exc
                with self._cond:
                    if self._error is None:
                        self._error = exc
                    self._finished.add(j)
                    self._cond.notify_all()
                return
            with self._cond:
                self._finished.add(j)
                if self._arrived > 0 and self._error is None:
                    self._error = SequenceMismatch(
                        f"node {j} finished while other nodes wait in a collective"
                    )
                self._pass_baton(j)
                self._cond.notify_all()

        if self.m == 1:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(j,), daemon=True) for j in range(self.m)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        real = [f for f in failures if f is not None and not isinstance(f, ClusterAborted)]
        if real:
            raise real[0]
        if self._error is not None:
            raise self._error
        if any(f is not None for f in failures):
            raise next(f for f in failures if f is not None)
        return results

    # -- internals, all called with self._cond held unless noted --

    def _wait_for(self, predicate):
        while not predicate():
            self._cond.wait()

    def _pass_baton(self, j):
        if self.scheduler != "round-robin":
            return
        for step in range(1, self.m + 1):
            nxt = (j + step) % self.m
            if nxt not in self._finished:
                self._turn = nxt
                return

    def _exchange(self, ctx, req):
        j = ctx.node_id
        ctx.calls += 1
        with self._cond:
            if self._error is not None:
                raise ClusterAborted("another node failed")
            if self._finished:
                self._error = SequenceMismatch(
                    f"node {j} entered a {req.kind} after node(s) {sorted(self._finished)} finished"
                )
                self._cond.notify_all()
                raise self._error
            gen = self._generation
            self._slots[j] = req
            self._arrived += 1
            if self._arrived == self.m:
                try:
                    self._complete()
                except CollectiveError as exc:
                    self._error = exc
                    self._cond.notify_all()
                    raise
            self._pass_baton(j)
            self._cond.notify_all()
            if self.scheduler == "round-robin":
                self._wait_for(
                    lambda: self._error is not None
                    or (self._generation != gen and self._turn == j)
                )
            else:
                self._wait_for(lambda: self._error is not None or self._generation != gen)
            if self._generation == gen:
                err = self._error
                if isinstance(err, CollectiveError):
                    raise err
                raise ClusterAborted("another node failed") from err
            return self._results[j]

    def _complete(self):
        reqs = self._slots
        first = reqs[0]
        for j, r in enumerate(reqs):
            if r.kind != first.kind or r.root != first.root or r.op != first.op:
                raise SequenceMismatch(
                    f"node 0 called {first.kind}(root={first.root}, op={first.op}) but "
                    f"node {j} called {r.kind}(root={r.root}, op={r.op})"
                )
        if first.root is not None and not 0 <= first.root < self.m:
            raise SequenceMismatch(f"root {first.root} outside cluster of {self.m}")
        if first.kind == BROADCAST:
            src = reqs[first.root]
            phase = src.phase
            length = src.payload.size
        else:
            phase = first.phase
            length = first.payload.size
        for j, r in enumerate(reqs):
            if r.phase is not None and phase is not None and r.phase != phase:
                raise SequenceMismatch(f"node {j} is in phase {r.phase!r}, expected {phase!r}")
            if r.payload is not None and r.payload.size != length:
                raise SequenceMismatch(
                    f"node {j} sent {r.payload.size} values to a {first.kind} of length {length}"
                )
        if phase is None:
            phase = next((r.phase for r in reqs if r.phase is not None), "unspecified")

        if first.kind == BROADCAST:
            src = reqs[first.root]
            self._results = [(src.payload.copy(), src.scalar) for _ in range(self.m)]
        else:
            combine = _OPS.get(first.op)
            if combine is None:
                raise SequenceMismatch(f"unsupported reduction {first.op!r}")
            acc = reqs[0].payload.copy()
            for r in reqs[1:]:
                combine(acc, r.payload, out=acc)
            scalar = first.scalar
            if first.kind == REDUCE_ALL:
                self._results = [(acc.copy(), scalar) for _ in range(self.m)]
            else:
                self._results = [None] * self.m
                self._results[first.root] = (acc, scalar)
        self.ledger.record(phase, first.kind, length)
        self._slots = [None] * self.m
        self._arrived = 0
        self._generation += 1
