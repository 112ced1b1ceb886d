"""Per-walker random-walk circuits built from ring oscillators.

Each walker dimension carries one ring oscillator per modulus.  A free
ring advances one state every 2 ticks: neuron i drives i+1 with weight 1
and both itself and i+2 with weight 0.5, all at delay 2.  A pair of update
neurons per group (groups reused every three ring positions) can advance
or stall a ring by one state relative to the free-running shared reference,
so the walker's position is the CRT-decoded offset between its rings and
the reference rings.

Timing of one macro-step (2 ticks, starting on an even "boundary" tick):

  boundary t:   the active neuron of every ring fires; a movement source
                fires iff the controller injected it this step
  t + 1:        the active group's update neuron fires (ring 0.5 + source
                0.5), sending +0.5/-0.5 adjustments at delay 1
  t + 2:        adjustments land together with the delay-2 ring propagation,
                shifting the one-hot state by +2 (advance), 0 (stall), or
                the normal +1

Positions are read at boundaries from the set of neurons that fired there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CircuitError, CorruptionError, NetworkBuilder, NeuronSpec
from .residue import decode, offset, signed_wrap
from .seeds import derive_seed

ACTION_NEG = -1
ACTION_STAY = 0
ACTION_POS = +1

_RING_NEURON = dict(threshold=1.0, reset=0.0, decay=1.0)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    f = 2
    while f * f <= n:
        if n % f == 0:
            return False
        f += 1
    return True


def update_group_assignment(size: int) -> list[int]:
    """Group index for every ring neuron.

    Groups are reused every three positions; the size mod 3 leftover
    neurons get dedicated tail groups so that no group ever has two members
    closer than 3 apart on the ring (members within 2 of each other would
    corrupt neighbouring states when an update fires).
    """
    q, r = divmod(size, 3)
    groups = [i % 3 for i in range(3 * q)]
    groups.extend(3 + j for j in range(r))
    return groups


def update_pair_count(size: int) -> int:
    return 3 + size % 3


@dataclass
class RingSpec:
    """Neuron-id bookkeeping for one ring oscillator."""

    size: int
    neurons: list[int]
    update_pairs: list[tuple[int, int]] = field(default_factory=list)  # (pos, neg)
    group_of: list[int] = field(default_factory=list)
    start: int = 0


@dataclass
class ReferenceRings:
    """Free-running rings shared by all walkers; one set per dimension."""

    moduli: tuple[int, ...]
    rings: list[list[RingSpec]]  # [dim][ring]


@dataclass
class WalkerCircuit:
    """One walker's rings, update groups, and movement sources."""

    walker_id: int
    moduli: tuple[int, ...]
    dims: int
    rings: list[list[RingSpec]]  # [dim][ring]
    sources: list[tuple[int, int]]  # (negative id, positive id) per dim

    def ring_neuron_ids(self, dim: int | None = None) -> set[int]:
        dims = range(self.dims) if dim is None else [dim]
        return {n for d in dims for ring in self.rings[d] for n in ring.neurons}

    def update_neuron_ids(self, dim: int | None = None) -> set[int]:
        dims = range(self.dims) if dim is None else [dim]
        return {
            n
            for d in dims
            for ring in self.rings[d]
            for pair in ring.update_pairs
            for n in pair
        }

    def source_ids(self, dim: int | None = None) -> set[int]:
        dims = range(self.dims) if dim is None else [dim]
        return {n for d in dims for n in self.sources[d]}


@dataclass(frozen=True)
class MovePolicy:
    """Per-dimension (p_neg, p_pos); the stay probability is the remainder."""

    per_dim: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for p_neg, p_pos in self.per_dim:
            if not (0.0 <= p_neg <= 1.0 and 0.0 <= p_pos <= 1.0):
                raise ValueError("move probabilities must lie in [0, 1]")
            if p_neg + p_pos > 1.0 + 1e-12:
                raise ValueError("p_neg + p_pos must not exceed 1")

    @classmethod
    def uniform(cls, dims: int, p_neg: float, p_pos: float) -> "MovePolicy":
        return cls(tuple((p_neg, p_pos) for _ in range(dims)))

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        actions = []
        for p_neg, p_pos in self.per_dim:
            u = rng.random()
            if u < p_neg:
                actions.append(ACTION_NEG)
            elif u < p_neg + p_pos:
                actions.append(ACTION_POS)
            else:
                actions.append(ACTION_STAY)
        return tuple(actions)


def build_ring(
    builder: NetworkBuilder,
    size: int,
    with_updates: bool = True,
    start: int = 0,
    label: str = "ring",
) -> RingSpec:
    """Add one ring oscillator (optionally with update pairs) to the builder."""
    if not _is_prime(size) or size < 3:
        raise ValueError(f"ring size must be a prime >= 3, got {size}")
    ids = [
        builder.add_neuron(NeuronSpec(**_RING_NEURON, label=f"{label}.n{i}"))
        for i in range(size)
    ]
    for i in range(size):
        builder.connect(ids[i], ids[(i + 1) % size], 1.0, delay=2)
        builder.connect(ids[i], ids[(i + 2) % size], 0.5, delay=2)
        builder.connect(ids[i], ids[i], 0.5, delay=2)

    spec = RingSpec(size=size, neurons=ids, start=start % size)
    if not with_updates:
        return spec

    groups = update_group_assignment(size)
    n_groups = max(groups) + 1
    pairs = []
    for g in range(n_groups):
        pos = builder.add_neuron(NeuronSpec(**_RING_NEURON, label=f"{label}.up{g}+"))
        neg = builder.add_neuron(NeuronSpec(**_RING_NEURON, label=f"{label}.up{g}-"))
        pairs.append((pos, neg))
    for i in range(size):
        pos, neg = pairs[groups[i]]
        builder.connect(ids[i], pos, 0.5, delay=1)
        builder.connect(ids[i], neg, 0.5, delay=1)
        # advancing: excite i+2, cancel the normal i+1 hand-off
        builder.connect(pos, ids[(i + 2) % size], 0.5, delay=1)
        builder.connect(pos, ids[(i + 1) % size], -0.5, delay=1)
        # stalling: re-excite i through its own 0.5 echo, cancel i+1
        builder.connect(neg, ids[i], 0.5, delay=1)
        builder.connect(neg, ids[(i + 1) % size], -0.5, delay=1)
    spec.update_pairs = pairs
    spec.group_of = groups
    return spec


def build_reference(
    builder: NetworkBuilder, moduli: Sequence[int], dims: int
) -> ReferenceRings:
    """Free-running rings with no update machinery; advances forever."""
    rings = [
        [
            build_ring(builder, m, with_updates=False, label=f"ref.d{d}.c{m}")
            for m in moduli
        ]
        for d in range(dims)
    ]
    return ReferenceRings(tuple(moduli), rings)


def build_walker(
    builder: NetworkBuilder,
    moduli: Sequence[int],
    dims: int,
    walker_id: int,
    origin: Sequence[int] | None = None,
) -> WalkerCircuit:
    """Rings plus two movement-source neurons per dimension for one walker."""
    origin = [0] * dims if origin is None else list(origin)
    if len(origin) != dims:
        raise ValueError("origin must have one coordinate per dimension")
    rings: list[list[RingSpec]] = []
    sources: list[tuple[int, int]] = []
    for d in range(dims):
        tag = f"w{walker_id}.d{d}"
        src_neg = builder.add_neuron(NeuronSpec(**_RING_NEURON, label=f"{tag}.src-"))
        src_pos = builder.add_neuron(NeuronSpec(**_RING_NEURON, label=f"{tag}.src+"))
        dim_rings = []
        for m in moduli:
            ring = build_ring(
                builder, m, with_updates=True, start=origin[d] % m, label=f"{tag}.c{m}"
            )
            for pos, neg in ring.update_pairs:
                builder.connect(src_pos, pos, 0.5, delay=1)
                builder.connect(src_neg, neg, 0.5, delay=1)
            dim_rings.append(ring)
        rings.append(dim_rings)
        sources.append((src_neg, src_pos))
    return WalkerCircuit(walker_id, tuple(moduli), dims, rings, sources)


def resource_counts(moduli: Sequence[int]) -> tuple[int, int]:
    """Neurons and synapses of one walker dimension.

    2 sources plus, per ring of size C: C ring neurons and 2*(3 + C mod 3)
    update neurons; 9C ring/update synapses and 2*(3 + C mod 3) source
    fan-out synapses.  Matches the constructed network exactly.
    """
    for m in moduli:
        if not _is_prime(m) or m < 3:
            raise ValueError(f"moduli must be primes >= 3, got {m}")
    neurons = 2 + sum(m + 2 * (3 + m % 3) for m in moduli)
    synapses = sum(9 * m + 2 * (3 + m % 3) for m in moduli)
    return neurons, synapses


class ParticleSimulation:
    """A shared reference plus K walker circuits in one network.

    All stochasticity lives in the controller: one categorical action per
    walker per dimension per macro-step, drawn from a per-walker stream
    seeded as derive_seed(seed, "walker-policy", walker_id), so results do
    not depend on how walkers are partitioned across networks.
    """

    def __init__(
        self,
        moduli: Sequence[int],
        dims: int,
        policy: MovePolicy,
        walkers: int,
        seed: int,
        origins: Sequence[Sequence[int]] | None = None,
        record_events: bool = False,
    ):
        if dims < 1 or walkers < 0:
            raise ValueError("dims must be >= 1 and walkers >= 0")
        if len(policy.per_dim) != dims:
            raise ValueError("policy must cover every dimension")
        self.moduli = tuple(moduli)
        self.dims = dims
        self.policy = policy
        builder = NetworkBuilder()
        self.reference = build_reference(builder, self.moduli, dims)
        self.walkers = [
            build_walker(
                builder,
                self.moduli,
                dims,
                w,
                origin=None if origins is None else origins[w],
            )
            for w in range(walkers)
        ]
        self.net = builder.build(
            seed=derive_seed(seed, "network"), record_events=record_events
        )
        self._policy_rngs = [
            np.random.default_rng(derive_seed(seed, "walker-policy", w))
            for w in range(walkers)
        ]
        for ring in self._all_rings():
            self.net.inject(ring.neurons[ring.start], 1.0, at_tick=0)
        self.steps_done = 0
        self.step_windows: list[tuple[int, int]] = []  # (step index, start tick)

    def _all_rings(self):
        for dim_rings in self.reference.rings:
            yield from dim_rings
        for w in self.walkers:
            for dim_rings in w.rings:
                yield from dim_rings

    # -- stepping ------------------------------------------------------------

    def macro_step(
        self, forced: Sequence[Sequence[int]] | None = None
    ) -> list[tuple[int, ...]]:
        """Advance one walk step: sample (or force) one action per walker
        per dimension, drive the sources, and run 2 ticks."""
        net = self.net
        if net.tick % 2 == 1:
            # a position read consumed the boundary tick; insert the idle
            # filler tick so sources line up with the next boundary
            net.step_quiet()
        if net.tick % 2 != 0:
            raise CircuitError("macro_step must start on an even boundary tick")
        t0 = net.tick
        if forced is not None and len(forced) != len(self.walkers):
            raise ValueError("forced actions must cover every walker")
        actions: list[tuple[int, ...]] = []
        for iw, walker in enumerate(self.walkers):
            if forced is None:
                acts = self.policy.sample(self._policy_rngs[iw])
            else:
                acts = tuple(forced[iw])
                if len(acts) != self.dims:
                    raise ValueError("forced actions must cover every dimension")
            for d, act in enumerate(acts):
                if act == ACTION_POS:
                    net.inject(walker.sources[d][1], 1.0, at_tick=t0)
                elif act == ACTION_NEG:
                    net.inject(walker.sources[d][0], 1.0, at_tick=t0)
                elif act != ACTION_STAY:
                    raise ValueError(f"unknown action {act}")
            actions.append(acts)
        self.steps_done += 1
        self.step_windows.append((self.steps_done, t0))
        net.step_quiet()
        net.step_quiet()
        return actions

    # -- reading -------------------------------------------------------------

    def _settle_boundary(self) -> int:
        """Run the pending boundary tick if needed; returns the boundary."""
        net = self.net
        if net.tick % 2 == 0:
            net.step_quiet()
        return net.tick - 1

    def _ring_state(self, ring: RingSpec, boundary: int) -> int:
        active = [
            i for i, nid in enumerate(ring.neurons) if self.net.last_fire[nid] == boundary
        ]
        if len(active) != 1:
            raise CorruptionError(
                f"ring of size {ring.size} has {len(active)} active neurons "
                f"at tick {boundary}"
            )
        return active[0]

    def read_position(self, walker_index: int) -> tuple[int, ...]:
        """Decode one walker's position against the reference rings."""
        boundary = self._settle_boundary()
        walker = self.walkers[walker_index]
        coords = []
        for d in range(self.dims):
            walker_states = [self._ring_state(r, boundary) for r in walker.rings[d]]
            ref_states = [self._ring_state(r, boundary) for r in self.reference.rings[d]]
            coords.append(decode(offset(walker_states, ref_states, self.moduli)))
        return tuple(coords)

    def read_positions(self) -> list[tuple[int, ...]]:
        self._settle_boundary()
        return [self.read_position(w) for w in range(len(self.walkers))]

    def reference_states(self) -> list[list[int]]:
        boundary = self._settle_boundary()
        return [
            [self._ring_state(r, boundary) for r in dim_rings]
            for dim_rings in self.reference.rings
        ]

    # -- bulk runs -----------------------------------------------------------

    def run(
        self, steps: int, trajectory: bool = False
    ) -> tuple[np.ndarray | None, list[list[tuple[int, ...]]]]:
        """Run `steps` macro-steps; returns (positions, actions_log).

        With trajectory=True, positions has shape (walkers, steps + 1, dims)
        sampled at every macro-step boundary; otherwise only the final
        positions are read and returned with shape (walkers, 1, dims).
        """
        actions_log: list[list[tuple[int, ...]]] = []
        rows: list[list[tuple[int, ...]]] = []
        if trajectory:
            rows.append(self.read_positions())
        for _ in range(steps):
            actions_log.append(self.macro_step())
            if trajectory:
                rows.append(self.read_positions())
        if not trajectory:
            rows.append(self.read_positions())
        positions = np.array(rows, dtype=np.int64).transpose(1, 0, 2)
        return positions, actions_log


def walk_capacity(moduli: Sequence[int]) -> int:
    from .residue import capacity

    return capacity(moduli)


def wrap_displacement(displacement: int, moduli: Sequence[int]) -> int:
    """Position the code reports after a net displacement (torus wrap)."""
    return signed_wrap(displacement, walk_capacity(moduli))
