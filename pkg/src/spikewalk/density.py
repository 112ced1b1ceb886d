"""Per-node density circuits for a Markov walk on a graph.

Every graph node compiles to a *unit*: a walker counter, a self-exciting
generator that counts the stored walkers out, a stochastic gate tree that
routes each counted walker to exactly one neighbour, one output gate per
reachable neighbour, and (in synchronized mode) a staging buffer.  Walkers
travel between units as weight -1 spikes, so a counter potential of -m
means m walkers are stored.

Counting handshake, for a unit holding m walkers (trigger at tick T):

  T          generator fires (host injects +1); the threshold-0 counter
             receives a zero-weight arrival so an empty unit reports
             immediately
  T+1..T+m   generator self-fires, feeding +1 per tick to the counters and
             one routing activation per tick into the gate tree
  T+m        the threshold-0 counter reaches 0 and fires: it halts the
             generator and cancels the in-flight overshoot activation in
             the gate tree and output gates (the generator inherently fires
             m+1 times)
  T+m+1      the threshold-1 counter absorbs the final generator spike and
             fires exactly once, reporting to the completion neuron

The counter is realised as that threshold-0 / threshold-1 pair: the low
half detects count completion early enough to stop the generator, the high
half fires once per phase and carries the canonical count (both halves
read -m between phases).  The buffer mirrors the same pair driven by its
own control neuron; flushing moves buffered walkers into the main pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    CircuitError,
    CorruptionError,
    NetworkBuilder,
    NeuronSpec,
    StuckCircuitError,
)
from .seeds import derive_seed

_ROW_TOLERANCE = 1e-12

Handle = tuple  # ('gen',) | ('gate', i) | ('relay', i) | ('leaf', pos)


# ---------------------------------------------------------------------------
# transition graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridEmbedding:
    width: int
    height: int
    torus: bool
    obstacles: frozenset

    def node(self, x: int, y: int) -> int:
        return y * self.width + x

    def xy(self, node: int) -> tuple[int, int]:
        return node % self.width, node // self.width


@dataclass(frozen=True)
class TransitionGraph:
    """Row-stochastic transition structure: per node an ordered list of
    (target, probability) pairs summing to 1."""

    rows: tuple[tuple[tuple[int, float], ...], ...]
    embedding: GridEmbedding | None = None

    def __post_init__(self):
        n = len(self.rows)
        if n == 0:
            raise ValueError("graph must have at least one node")
        obstacle_nodes = set()
        if self.embedding is not None:
            obstacle_nodes = {
                self.embedding.node(x, y) for (x, y) in self.embedding.obstacles
            }
        for i, row in enumerate(self.rows):
            total = 0.0
            for target, p in row:
                if not 0 <= target < n:
                    raise ValueError(f"row {i}: target {target} out of range")
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"row {i}: probability {p} out of range")
                if target in obstacle_nodes and target != i and p > 0:
                    raise ValueError(f"row {i}: mass {p} flows into obstacle {target}")
                total += p
            if abs(total - 1.0) > _ROW_TOLERANCE:
                raise ValueError(f"row {i} sums to {total}, expected 1")

    @property
    def n_nodes(self) -> int:
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes))
        for i, row in enumerate(self.rows):
            for target, p in row:
                m[i, target] += p
        return m

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[float]]) -> "TransitionGraph":
        rows = []
        for row in matrix:
            rows.append(tuple((j, float(p)) for j, p in enumerate(row) if p != 0.0))
        return cls(tuple(rows))


def build_cycle_topology(n: int, p_prev: float = 0.5, p_next: float = 0.5) -> TransitionGraph:
    """Cycle of n nodes; any leftover probability stays on the node."""
    if n < 3:
        raise ValueError("cycle needs at least 3 nodes")
    if p_prev < 0 or p_next < 0 or p_prev + p_next > 1.0 + _ROW_TOLERANCE:
        raise ValueError("cycle probabilities must be nonnegative and sum to <= 1")
    p_stay = 1.0 - p_prev - p_next
    rows = []
    for i in range(n):
        row = [((i - 1) % n, p_prev), ((i + 1) % n, p_next)]
        if p_stay > _ROW_TOLERANCE:
            row.append((i, p_stay))
        rows.append(tuple(row))
    return TransitionGraph(tuple(rows))


_DIRS = ("up", "down", "left", "right")
_PERP = {
    "up": ("left", "right"),
    "down": ("left", "right"),
    "left": ("up", "down"),
    "right": ("up", "down"),
}
_DELTA = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}


def build_grid_topology(
    width: int,
    height: int,
    dir_probs: Sequence[float],
    torus: bool = True,
    obstacles: Sequence[tuple[int, int]] = (),
) -> TransitionGraph:
    """4-neighbour grid walk with obstacle redistribution.

    dir_probs are (up, down, left, right) and must sum to 1.  Probability
    into a blocked target is split evenly between the two perpendicular
    directions; a blocked perpendicular share is spread equally over the
    remaining open directions.  A fully blocked node keeps a self-loop of 1.
    Obstacle nodes themselves carry a self-loop and never receive mass.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    if len(dir_probs) != 4 or any(p < 0 for p in dir_probs):
        raise ValueError("dir_probs must be four nonnegative values (up, down, left, right)")
    if abs(sum(dir_probs) - 1.0) > _ROW_TOLERANCE:
        raise ValueError(f"dir_probs must sum to 1, got {sum(dir_probs)}")
    cells = frozenset((int(x), int(y)) for x, y in obstacles)
    for x, y in cells:
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"obstacle ({x}, {y}) outside the grid")
    if len(cells) >= width * height:
        raise ValueError("obstacles cover the whole grid")
    base = dict(zip(_DIRS, dir_probs))
    embedding = GridEmbedding(width, height, torus, cells)

    rows = []
    for node in range(width * height):
        x, y = embedding.xy(node)
        if (x, y) in cells:
            rows.append(((node, 1.0),))
            continue
        open_targets: dict[str, int] = {}
        blocked: list[str] = []
        for d in _DIRS:
            dx, dy = _DELTA[d]
            tx, ty = x + dx, y + dy
            if torus:
                tx, ty = tx % width, ty % height
            if not (0 <= tx < width and 0 <= ty < height) or (tx, ty) in cells:
                blocked.append(d)
            else:
                open_targets[d] = embedding.node(tx, ty)
        if not open_targets:
            rows.append(((node, 1.0),))
            continue
        mass = {d: base[d] for d in open_targets}
        for d in blocked:
            for pd in _PERP[d]:
                share = base[d] / 2.0
                if pd in open_targets:
                    mass[pd] += share
                else:
                    for od in open_targets:
                        mass[od] += share / len(open_targets)
        row = tuple((open_targets[d], mass[d]) for d in _DIRS if d in open_targets)
        rows.append(row)
    return TransitionGraph(tuple(rows), embedding=embedding)


# ---------------------------------------------------------------------------
# gate tree planning
# ---------------------------------------------------------------------------


@dataclass
class _Leaf:
    pos: int
    depth: int = 0


@dataclass
class _Gate:
    index: int
    p_fire: float
    left: object
    right: object
    depth: int = 0


@dataclass(frozen=True)
class GateTreePlan:
    """Wiring plan for one unit's routing tree.

    Handles are ('gen',), ('gate', i), ('relay', i) or ('leaf', pos) with
    pos an index into leaf_targets (the surviving neighbour positions after
    pruning zero-probability branches).  edges hold (src, dst, weight,
    delay); spine lists the all-left path from the root with depths, which
    is exactly the set of nodes the counter must be able to cancel.
    """

    leaf_targets: tuple[int, ...]
    gate_probs: tuple[float, ...]
    relay_count: int
    edges: tuple[tuple[Handle, Handle, float, int], ...]
    spine: tuple[tuple[Handle, int], ...]
    depth: int


def sample_gate_tree(probs: Sequence[float]) -> GateTreePlan:
    """Plan a balanced routing tree over an ordered probability row.

    Internal gates are stochastic neurons firing with the conditional mass
    of their right subtree; a firing gate activates its right branch and
    cancels the default left path.  Leaves shallower than the tree depth
    are padded with relay neurons so every decision lands on the same tick.
    """
    probs = list(probs)
    if len(probs) < 1:
        raise ValueError("at least one probability is required")
    if any(p < 0 or p > 1 for p in probs):
        raise ValueError("probabilities must lie in [0, 1]")
    if abs(sum(probs) - 1.0) > _ROW_TOLERANCE:
        raise ValueError(f"probabilities must sum to 1, got {sum(probs)}")
    pruned = [(j, p) for j, p in enumerate(probs) if p > 0.0]
    if not pruned:
        raise ValueError("all probabilities are zero")
    leaf_targets = tuple(j for j, _ in pruned)

    gates: list[_Gate] = []

    def build(items: list[tuple[int, float]], offset: int):
        if len(items) == 1:
            return _Leaf(pos=offset)
        mid = (len(items) + 1) // 2  # ties keep the left side heavier
        left = build(items[:mid], offset)
        right = build(items[mid:], offset + mid)
        mass_left = sum(p for _, p in items[:mid])
        mass_right = sum(p for _, p in items[mid:])
        gate = _Gate(len(gates), mass_right / (mass_left + mass_right), left, right)
        gates.append(gate)
        return gate

    root = build(pruned, 0)

    def assign_depth(node, depth):
        node.depth = depth
        if isinstance(node, _Gate):
            assign_depth(node.left, depth + 1)
            assign_depth(node.right, depth + 1)

    assign_depth(root, 0)

    leaves: list[_Leaf] = []

    def collect(node):
        if isinstance(node, _Gate):
            collect(node.left)
            collect(node.right)
        else:
            leaves.append(node)

    collect(root)
    max_depth = max(leaf.depth for leaf in leaves)

    # pad shallow leaves with relay chains so all decisions land together
    relay_count = 0
    entry: dict[int, Handle] = {}
    chain_edges: list[tuple[Handle, Handle, float, int]] = []
    for leaf in leaves:
        pad = max_depth - leaf.depth
        if pad == 0:
            entry[leaf.pos] = ("leaf", leaf.pos)
            continue
        chain = [("relay", relay_count + i) for i in range(pad)]
        relay_count += pad
        entry[leaf.pos] = chain[0]
        hops = chain[1:] + [("leaf", leaf.pos)]
        for src, dst in zip(chain, hops):
            chain_edges.append((src, dst, 1.0, 1))

    def handle_in(node) -> Handle:
        if isinstance(node, _Gate):
            return ("gate", node.index)
        return entry[node.pos]

    def left_spine(node):
        out = [node]
        while isinstance(node, _Gate):
            node = node.left
            out.append(node)
        return out

    edges: list[tuple[Handle, Handle, float, int]] = []
    for node in left_spine(root):
        edges.append((("gen",), handle_in(node), 1.0, 1 + node.depth))
    for gate in gates:
        src = ("gate", gate.index)
        for node in left_spine(gate.right):
            edges.append((src, handle_in(node), 1.0, node.depth - gate.depth))
        for node in left_spine(gate.left):
            edges.append((src, handle_in(node), -1.0, node.depth - gate.depth))
    edges.extend(chain_edges)

    spine_leaf = left_spine(root)[-1]
    if spine_leaf.depth != max_depth:
        raise AssertionError("leftmost leaf must sit at the full tree depth")
    spine = tuple((handle_in(node), node.depth) for node in left_spine(root))

    return GateTreePlan(
        leaf_targets=leaf_targets,
        gate_probs=tuple(g.p_fire for g in gates),
        relay_count=relay_count,
        edges=tuple(edges),
        spine=spine,
        depth=max_depth,
    )


# ---------------------------------------------------------------------------
# compiled units and the phase controller
# ---------------------------------------------------------------------------


@dataclass
class UnitCircuit:
    """Neuron ids for one graph node's circuit."""

    node: int
    neighbors: tuple[int, ...]  # destination node per output gate
    counter: int  # threshold-1 half: fires once per phase, canonical count
    counter_detect: int  # threshold-0 half: halts the generator, cancels overshoot
    generator: int
    gates: tuple[int, ...]
    relays: tuple[int, ...]
    outputs: tuple[int, ...]
    buffer_counter: int | None = None
    buffer_detect: int | None = None
    buffer_control: int | None = None


@dataclass
class DensitySnapshot:
    step: int
    counts: tuple[int, ...]
    ticks: int  # count-and-distribute ticks (the walk's own cost)
    flush_ticks: int  # synchronization overhead, 0 when unsynchronized
    spikes: int
    failed_draws: int


@dataclass
class PhaseController:
    synchronized: bool
    phase: str = "idle"  # idle | distributing | flushing
    steps_done: int = 0


class DensityNetwork:
    """A compiled density walk: one unit per node plus a completion neuron."""

    def __init__(
        self,
        graph: TransitionGraph,
        initial_counts: Sequence[int],
        synchronized: bool = True,
        seed: int = 0,
        record_events: bool = False,
        gate_probability_skew: float = 0.0,
    ):
        counts = [int(c) for c in initial_counts]
        if len(counts) != graph.n_nodes:
            raise ValueError("initial_counts must provide one count per node")
        if any(c < 0 for c in counts):
            raise ValueError("initial counts must be nonnegative")
        if graph.embedding is not None:
            for x, y in graph.embedding.obstacles:
                if counts[graph.embedding.node(x, y)] != 0:
                    raise ValueError(f"walkers placed on obstacle cell ({x}, {y})")
        self.graph = graph
        self.synchronized = synchronized
        self.controller = PhaseController(synchronized)
        self._initial_counts = tuple(counts)

        builder = NetworkBuilder()
        plans: list[GateTreePlan] = []
        units: list[UnitCircuit] = []
        self._max_depth = 0
        for node, row in enumerate(graph.rows):
            plan = sample_gate_tree([p for _, p in row])
            self._max_depth = max(self._max_depth, plan.depth)
            tag = f"u{node}"
            detect = builder.add_neuron(
                NeuronSpec(0.0, decay=0.0, input_gated=True, label=f"{tag}.cnt0")
            )
            counter = builder.add_neuron(
                NeuronSpec(1.0, decay=0.0, input_gated=True, label=f"{tag}.cnt1")
            )
            generator = builder.add_neuron(NeuronSpec(0.5, label=f"{tag}.gen"))
            gate_ids = tuple(
                builder.add_neuron(
                    NeuronSpec(
                        0.5,
                        fire_probability=_skewed(p, gate_probability_skew),
                        label=f"{tag}.gate{i}",
                    )
                )
                for i, p in enumerate(plan.gate_probs)
            )
            relay_ids = tuple(
                builder.add_neuron(NeuronSpec(0.5, label=f"{tag}.relay{i}"))
                for i in range(plan.relay_count)
            )
            output_ids = tuple(
                builder.add_neuron(NeuronSpec(0.5, label=f"{tag}.out{pos}"))
                for pos in plan.leaf_targets
            )
            unit = UnitCircuit(
                node=node,
                neighbors=tuple(row[pos][0] for pos in plan.leaf_targets),
                counter=counter,
                counter_detect=detect,
                generator=generator,
                gates=gate_ids,
                relays=relay_ids,
                outputs=output_ids,
            )
            if synchronized:
                unit.buffer_detect = builder.add_neuron(
                    NeuronSpec(0.0, decay=0.0, input_gated=True, label=f"{tag}.buf0")
                )
                unit.buffer_counter = builder.add_neuron(
                    NeuronSpec(1.0, decay=0.0, input_gated=True, label=f"{tag}.buf1")
                )
                unit.buffer_control = builder.add_neuron(
                    NeuronSpec(0.5, label=f"{tag}.bufctl")
                )
            plans.append(plan)
            units.append(unit)

        self.completion = builder.add_neuron(
            NeuronSpec(
                float(graph.n_nodes), decay=0.0, input_gated=True, label="completion"
            )
        )

        for unit, plan in zip(units, plans):
            self._wire_unit(builder, unit, plan, units)
        self.units = units
        self.net = builder.build(
            seed=derive_seed(seed, "density-network"), record_events=record_events
        )

        for unit, count in zip(units, counts):
            if count > 0:
                self.net.inject(unit.counter_detect, -float(count), at_tick=0)
                self.net.inject(unit.counter, -float(count), at_tick=0)
        self.net.step_quiet()  # integrate the initial placements

        self.snapshots: list[DensitySnapshot] = [
            DensitySnapshot(0, self.read_counts(), 0, 0, 0, 0)
        ]
        self.phase_windows: list[tuple[int, int, int | None, int]] = []

    def _wire_unit(
        self,
        builder: NetworkBuilder,
        unit: UnitCircuit,
        plan: GateTreePlan,
        units: list[UnitCircuit],
    ) -> None:
        gen = unit.generator
        low, high = unit.counter_detect, unit.counter
        builder.connect(gen, gen, 1.0, delay=1)
        builder.connect(gen, low, 1.0, delay=1)
        builder.connect(gen, high, 1.0, delay=1)
        builder.connect(low, gen, -1.0, delay=1)
        builder.connect(high, self.completion, 1.0, delay=1)

        def resolve(handle: Handle) -> int:
            kind = handle[0]
            if kind == "gen":
                return gen
            if kind == "gate":
                return unit.gates[handle[1]]
            if kind == "relay":
                return unit.relays[handle[1]]
            if kind == "leaf":
                return unit.outputs[handle[1]]
            raise AssertionError(f"unknown handle {handle}")

        for src, dst, weight, delay in plan.edges:
            builder.connect(resolve(src), resolve(dst), weight, delay=delay)
        # the threshold-0 half silences the generator's overshoot everywhere
        # along the default routing path, one tick ahead at every depth
        for handle, depth in plan.spine:
            builder.connect(low, resolve(handle), -1.0, delay=1 + depth)

        for out_id, dest_node in zip(unit.outputs, unit.neighbors):
            dest = units[dest_node]
            if self.synchronized:
                builder.connect(out_id, dest.buffer_detect, -1.0, delay=1)
                builder.connect(out_id, dest.buffer_counter, -1.0, delay=1)
            else:
                builder.connect(out_id, dest.counter_detect, -1.0, delay=1)
                builder.connect(out_id, dest.counter, -1.0, delay=1)

        if self.synchronized:
            ctl = unit.buffer_control
            blow, bhigh = unit.buffer_detect, unit.buffer_counter
            builder.connect(ctl, ctl, 1.0, delay=1)
            builder.connect(ctl, blow, 1.0, delay=1)
            builder.connect(ctl, bhigh, 1.0, delay=1)
            builder.connect(blow, ctl, -1.0, delay=1)
            # each control spike hands one walker to the main pair; the
            # buffer's threshold-1 half repays the single overshoot transfer
            builder.connect(ctl, low, -1.0, delay=1)
            builder.connect(ctl, high, -1.0, delay=1)
            builder.connect(bhigh, low, 1.0, delay=1)
            builder.connect(bhigh, high, 1.0, delay=1)

    # -- phase driving -------------------------------------------------------

    def _budget(self) -> int:
        total = sum(self.snapshots[-1].counts)
        return 128 + 16 * total + 4 * self._max_depth

    def run_macro_step(self) -> DensitySnapshot:
        """Count out and redistribute every unit once (one walk step)."""
        net = self.net
        if not net.is_quiescent():
            raise CircuitError("previous phase has not completed")
        step = self.controller.steps_done + 1
        spikes0, failed0 = net.total_spikes, net.total_failed
        budget = self._budget()

        t0 = net.tick
        self.controller.phase = "distributing"
        for unit in self.units:
            net.inject(unit.generator, 1.0, at_tick=t0)
            net.inject(unit.counter_detect, 0.0, at_tick=t0)
        if not net.run_until_quiescent(budget, collect=False)[1]:
            raise StuckCircuitError(f"distribution did not quiesce at step {step}")
        dist_ticks = max(0, net.last_activity_tick - t0 + 1)
        if net.last_fire[self.completion] < t0 or net.potential(self.completion) != 0.0:
            raise CorruptionError(f"completion neuron did not report at step {step}")

        flush_start: int | None = None
        flush_ticks = 0
        if self.synchronized:
            self.controller.phase = "flushing"
            flush_start = net.tick
            for unit in self.units:
                net.inject(unit.buffer_control, 1.0, at_tick=flush_start)
                net.inject(unit.buffer_detect, 0.0, at_tick=flush_start)
            if not net.run_until_quiescent(budget, collect=False)[1]:
                raise StuckCircuitError(f"buffer flush did not quiesce at step {step}")
            flush_ticks = max(0, net.last_activity_tick - flush_start + 1)

        self.controller.phase = "idle"
        self.controller.steps_done = step
        self.phase_windows.append((step, t0, flush_start, net.tick))
        snapshot = DensitySnapshot(
            step=step,
            counts=self.read_counts(),
            ticks=dist_ticks,
            flush_ticks=flush_ticks,
            spikes=net.total_spikes - spikes0,
            failed_draws=net.total_failed - failed0,
        )
        self.snapshots.append(snapshot)
        return snapshot

    def read_counts(self) -> tuple[int, ...]:
        """Walker count per node, read from the counter potentials."""
        counts = []
        for unit in self.units:
            v_high = self.net.potential(unit.counter)
            v_low = self.net.potential(unit.counter_detect)
            if abs(v_high - v_low) > 1e-9:
                raise CorruptionError(
                    f"counter halves disagree at node {unit.node}: {v_low} vs {v_high}"
                )
            value = -v_high
            if abs(value - round(value)) > 1e-9:
                raise CorruptionError(
                    f"non-integer count {value} at node {unit.node}"
                )
            count = int(round(value))
            if count < 0:
                raise CorruptionError(f"negative count {count} at node {unit.node}")
            counts.append(count)
        return tuple(counts)

    def run(self, steps: int) -> list[DensitySnapshot]:
        for _ in range(steps):
            self.run_macro_step()
        return self.snapshots


def _skewed(p: float, skew: float) -> float:
    if skew == 0.0:
        return p
    return min(0.98, max(0.02, p + skew))


def build_density_network(
    graph: TransitionGraph,
    initial_counts: Sequence[int],
    synchronized: bool = True,
    seed: int = 0,
    record_events: bool = False,
) -> DensityNetwork:
    return DensityNetwork(
        graph,
        initial_counts,
        synchronized=synchronized,
        seed=seed,
        record_events=record_events,
    )
