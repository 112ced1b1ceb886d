"""Discrete-time integrate-and-fire network simulator.

Per tick t, every neuron that is touched goes through three stages:

1. decay:     v <- v * (1 - decay), applied once per elapsed tick
2. integrate: v <- v + sum of all synaptic/injected weights arriving at t
3. evaluate:  if v >= threshold and (the neuron is not input-gated, or at
              least one arrival landed this tick), draw u ~ U[0,1) when
              fire_probability < 1.  The neuron either fires or records a
              failed draw; in both cases v <- reset.

A spike fired at tick t over a delay-d synapse is integrated by the target
at exactly t + d.  All arrivals at one tick are summed before the single
evaluation; there is no sub-tick ordering.  A zero-weight arrival still
counts as an input for gating purposes.  Runs are bit-reproducible for a
fixed (topology, seed, injection schedule).
"""

from __future__ import annotations

import csv
from array import array
from dataclasses import dataclass
from math import isfinite
from typing import Iterable, NamedTuple

import numpy as np


class CircuitError(RuntimeError):
    """A compiled circuit violated one of its behavioural contracts."""


class StuckCircuitError(CircuitError):
    """The network failed to reach quiescence within its tick budget."""


class CorruptionError(CircuitError):
    """Observed network state is inconsistent with the circuit invariants."""


@dataclass(frozen=True)
class NeuronSpec:
    """Static parameters of one integrate-and-fire neuron.

    decay is the fraction of potential lost at the start of every tick:
    1.0 wipes the potential each tick, 0.0 accumulates indefinitely.
    input_gated neurons evaluate their threshold only on ticks with at
    least one arriving spike or injection.
    """

    threshold: float
    reset: float = 0.0
    decay: float = 1.0
    fire_probability: float = 1.0
    input_gated: bool = False
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must be in [0, 1], got {self.decay}")
        if not 0.0 <= self.fire_probability <= 1.0:
            raise ValueError(
                f"fire_probability must be in [0, 1], got {self.fire_probability}"
            )
        if not (isfinite(self.threshold) and isfinite(self.reset)):
            raise ValueError("threshold and reset must be finite")


@dataclass(frozen=True)
class Synapse:
    """Delayed weighted connection; delay is in whole ticks and >= 1."""

    pre: int
    post: int
    weight: float
    delay: int = 1

    def __post_init__(self):
        if not isinstance(self.delay, int) or self.delay < 1:
            raise ValueError(f"synapse delay must be an integer >= 1, got {self.delay}")


class SpikeEvent(NamedTuple):
    tick: int
    neuron: int
    fired: bool  # False records a failed stochastic draw

    @property
    def outcome(self) -> str:
        return "fired" if self.fired else "failed"


class Network:
    """A fixed-topology spiking network advanced one tick at a time."""

    def __init__(
        self,
        neurons: Iterable[NeuronSpec],
        synapses: Iterable[Synapse],
        seed: int,
        record_events: bool = False,
    ):
        self.specs = list(neurons)
        n = len(self.specs)
        self._thr = [s.threshold for s in self.specs]
        self._rst = [s.reset for s in self.specs]
        self._dec = [s.decay for s in self.specs]
        self._fp = [s.fire_probability for s in self.specs]
        self._gated = [s.input_gated for s in self.specs]

        self._adj: list[list[tuple[int, float, int]]] = [[] for _ in range(n)]
        max_delay = 1
        for syn in synapses:
            if not (0 <= syn.pre < n and 0 <= syn.post < n):
                raise ValueError(
                    f"synapse {syn.pre}->{syn.post} references a missing neuron"
                )
            self._adj[syn.pre].append((syn.post, syn.weight, syn.delay))
            max_delay = max(max_delay, syn.delay)

        self._v = [0.0] * n
        self._v_tick = [0] * n
        self._tick = 0
        self._rng = np.random.default_rng(seed)
        self._nbuckets = max_delay + 1
        self._buckets: list[dict[int, float]] = [{} for _ in range(self._nbuckets)]
        self._overflow: dict[int, dict[int, float]] = {}
        self._forced_next: set[int] = set()
        self._fired_last = False
        self._last_activity = -1

        self.last_fire = [-1] * n  # tick of most recent fire, -1 if never
        self.total_spikes = 0
        self.total_failed = 0
        self.record_events = record_events
        # event log kept as parallel primitive arrays; SpikeEvent objects are
        # materialised on demand
        self._ev_tick = array("q")
        self._ev_neuron = array("q")
        self._ev_fired = array("b")

        # neurons that can cross threshold without any input (threshold <= 0
        # and not gated) must be evaluated from tick 0 onward
        for i, s in enumerate(self.specs):
            if not s.input_gated and 0.0 >= s.threshold:
                self._forced_next.add(i)

    # -- basic accessors ---------------------------------------------------

    @property
    def tick(self) -> int:
        return self._tick

    @property
    def n_neurons(self) -> int:
        return len(self.specs)

    @property
    def last_activity_tick(self) -> int:
        """Most recent tick with a spike or a pending delivery consumed."""
        return self._last_activity

    def potential(self, neuron: int) -> float:
        """Current decayed potential; pending arrivals are not included."""
        self._check_id(neuron)
        v = self._v[neuron]
        dt = self._tick - self._v_tick[neuron]
        if dt and v:
            d = self._dec[neuron]
            if d >= 1.0:
                return 0.0
            if d > 0.0:
                return v * (1.0 - d) ** dt
        return v

    def _check_id(self, neuron: int):
        if not 0 <= neuron < len(self.specs):
            raise ValueError(f"unknown neuron id {neuron}")

    # -- driving the network -----------------------------------------------

    def inject(self, neuron: int, weight: float, at_tick: int | None = None):
        """Schedule an external arrival; treated exactly like a synaptic one.

        A zero weight still counts as an input for gated neurons.
        """
        self._check_id(neuron)
        t = self._tick if at_tick is None else at_tick
        if t < self._tick:
            raise ValueError(f"cannot inject at past tick {t} (now {self._tick})")
        slot = self._overflow.setdefault(t, {})
        slot[neuron] = slot.get(neuron, 0.0) + weight

    def step(self) -> list[SpikeEvent]:
        """Advance one tick; returns this tick's spike events."""
        return self._advance(collect=True)

    def step_quiet(self) -> None:
        """Advance one tick without building event objects."""
        self._advance(collect=False)

    def _advance(self, collect: bool):
        t = self._tick
        cur = self._buckets[t % self._nbuckets]
        extra = self._overflow.pop(t, None)
        if extra:
            for nid, w in extra.items():
                cur[nid] = cur.get(nid, 0.0) + w
        if cur:
            self._last_activity = t

        if self._forced_next:
            check = sorted(set(cur) | self._forced_next)
            self._forced_next = set()
        else:
            check = sorted(cur)

        events: list[SpikeEvent] | None = [] if collect else None
        fired_any = False
        v, vt = self._v, self._v_tick
        thr, rst, dec, fp, gated = self._thr, self._rst, self._dec, self._fp, self._gated
        adj, rng, buckets, nb = self._adj, self._rng, self._buckets, self._nbuckets

        for nid in check:
            x = v[nid]
            dt = t - vt[nid]
            if dt and x:
                d = dec[nid]
                if d >= 1.0:
                    x = 0.0
                elif d > 0.0:
                    x *= (1.0 - d) ** dt
            has_arrival = nid in cur
            if has_arrival:
                x += cur[nid]
            if x >= thr[nid] and (has_arrival or not gated[nid]):
                p = fp[nid]
                fired = True if p >= 1.0 else bool(rng.random() < p)
                x = rst[nid]
                if fired:
                    fired_any = True
                    self.total_spikes += 1
                    self.last_fire[nid] = t
                    self._last_activity = t
                    for post, w, dly in adj[nid]:
                        b = buckets[(t + dly) % nb]
                        b[post] = b.get(post, 0.0) + w
                else:
                    self.total_failed += 1
                if self.record_events:
                    self._ev_tick.append(t)
                    self._ev_neuron.append(nid)
                    self._ev_fired.append(fired)
                if collect:
                    events.append(SpikeEvent(t, nid, fired))
            v[nid] = x
            vt[nid] = t
            if not gated[nid]:
                # spontaneous re-evaluation: the decayed potential can still
                # clear the threshold next tick without any input
                d = dec[nid]
                nxt = 0.0 if d >= 1.0 else x * (1.0 - d)
                if nxt >= thr[nid] or (thr[nid] <= 0.0 and x < thr[nid] and 0.0 < d < 1.0):
                    self._forced_next.add(nid)
        cur.clear()
        self._tick = t + 1
        self._fired_last = fired_any
        return events if collect else None

    def pending_empty(self) -> bool:
        return not self._overflow and all(not b for b in self._buckets)

    def is_quiescent(self) -> bool:
        """No pending deliveries, no scheduled evaluations, no fire last tick."""
        return self.pending_empty() and not self._forced_next and not self._fired_last

    def run_until_quiescent(
        self, max_ticks: int, collect: bool = True
    ) -> tuple[list[SpikeEvent], bool]:
        """Step until quiescence or the tick budget runs out."""
        if max_ticks < 0:
            raise ValueError("max_ticks must be >= 0")
        events: list[SpikeEvent] = []
        for _ in range(max_ticks):
            if self.is_quiescent():
                break
            got = self._advance(collect=collect)
            if collect:
                events.extend(got)
        return events, self.is_quiescent()

    def run_ticks_quiet(self, ticks: int) -> None:
        for _ in range(ticks):
            self._advance(collect=False)

    # -- event log ----------------------------------------------------------

    @property
    def n_events(self) -> int:
        return len(self._ev_tick)

    def events(self, start: int = 0, stop: int | None = None) -> list[SpikeEvent]:
        """Recorded events as SpikeEvent tuples (requires record_events)."""
        stop = len(self._ev_tick) if stop is None else stop
        return [
            SpikeEvent(self._ev_tick[i], self._ev_neuron[i], bool(self._ev_fired[i]))
            for i in range(start, stop)
        ]

    def events_in_window(self, t0: int, t1: int) -> list[SpikeEvent]:
        """Recorded events with t0 <= tick < t1."""
        return [ev for ev in self.events() if t0 <= ev.tick < t1]

    def write_events_csv(self, fileobj) -> None:
        """One row per event: tick,neuron_id,outcome (outcome in {fired,failed})."""
        w = csv.writer(fileobj, lineterminator="\n")
        w.writerow(["tick", "neuron_id", "outcome"])
        for i in range(len(self._ev_tick)):
            w.writerow(
                [
                    self._ev_tick[i],
                    self._ev_neuron[i],
                    "fired" if self._ev_fired[i] else "failed",
                ]
            )


def build_network(
    neurons: Iterable[NeuronSpec],
    synapses: Iterable[Synapse],
    seed: int,
    record_events: bool = False,
) -> Network:
    """Construct a network; all potentials start at 0 and tick at 0."""
    return Network(neurons, synapses, seed, record_events=record_events)


class NetworkBuilder:
    """Incremental construction helper used by the circuit compilers."""

    def __init__(self):
        self.neurons: list[NeuronSpec] = []
        self.synapses: list[Synapse] = []

    def add_neuron(self, spec: NeuronSpec) -> int:
        self.neurons.append(spec)
        return len(self.neurons) - 1

    def connect(self, pre: int, post: int, weight: float, delay: int = 1) -> None:
        self.synapses.append(Synapse(pre, post, weight, delay))

    @property
    def n_neurons(self) -> int:
        return len(self.neurons)

    @property
    def n_synapses(self) -> int:
        return len(self.synapses)

    def build(self, seed: int, record_events: bool = False) -> Network:
        return Network(self.neurons, self.synapses, seed, record_events=record_events)
