"""Tournament evolution with mutation proposals from a pluggable policy.

Each step samples a subset of the population without replacement, mutates
the subset's best member, evaluates the child at inherited maturity, and
removes the subset's worst member. The mutation proposer is injected: a
learned controller, a uniform-random baseline, or a replay of logged
traces all drive the identical loop. When a trainer is attached, every
child evaluation triggers one policy-gradient update.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from . import controller as ctrl
from .arch_space import CellSpec, SpaceConfig, legal_inputs, Op, random_cell
from .controller import (
    ControllerParams,
    MutationAction,
    MutationTrace,
    MutTarget,
    apply_mutation,
    input_candidate_refs,
    sample_mutation,
    trace_logprob,
)
from .evaluators import FitnessOracle, inherit_maturity
from .reinforce import ReinforceTrainer


@dataclass(frozen=True)
class Individual:
    cell: CellSpec
    fitness: float  # observed fitness at birth (or after final re-evaluation)
    maturity: float
    id: int
    parent_id: Optional[int]
    birth_step: int


@dataclass
class Population:
    """Fixed-capacity live set plus an append-only record of every birth."""

    capacity: int
    members: List[Individual] = field(default_factory=list)
    history: List[Individual] = field(default_factory=list)
    next_id: int = 0

    def allocate_id(self) -> int:
        out = self.next_id
        self.next_id += 1
        return out


class MutationPolicy(Protocol):
    def propose(self, cell: CellSpec) -> MutationTrace:
        ...


class ControllerPolicy:
    """Adapter putting ControllerParams behind the policy protocol."""

    def __init__(self, params: ControllerParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng

    def propose(self, cell: CellSpec) -> MutationTrace:
        return sample_mutation(self.params, cell, self.rng)

    def logprob_fn(self, cell: CellSpec, trace: MutationTrace):
        return lambda: trace_logprob(self.params, cell, trace)[0]


class RandomMutationPolicy:
    """Uniform target and uniform legal replacement; no learning signal.

    Log-probabilities are recorded against the uniform distributions so
    traces stay self-consistent, though nothing trains on them.
    """

    def __init__(self, cfg: SpaceConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def propose(self, cell: CellSpec) -> MutationTrace:
        actions = []
        total_lp = 0.0
        total_h = 0.0
        for b in range(1, cell.num_blocks + 1):
            target = MutTarget(int(self.rng.integers(4)))
            router_lp = -np.log(4.0)
            if target in (MutTarget.I1, MutTarget.I2):
                refs = input_candidate_refs(b)
                replacement = refs[int(self.rng.integers(len(refs)))]
                n = len(refs)
            else:
                replacement = Op(int(self.rng.integers(cell.num_ops)))
                n = cell.num_ops
            repl_lp = -np.log(float(n))
            actions.append(
                MutationAction(
                    block=b,
                    target=target,
                    replacement=replacement,
                    router_logprob=float(router_lp),
                    replace_logprob=float(repl_lp),
                    router_entropy=float(np.log(4.0)),
                    replace_entropy=float(np.log(float(n))),
                )
            )
            total_lp += router_lp + repl_lp
            total_h += np.log(4.0) + np.log(float(n))
        return MutationTrace(tuple(actions), float(total_lp), float(total_h))


class ReplayMutationPolicy:
    """Feed back previously logged traces, in order."""

    def __init__(self, traces: Sequence[MutationTrace]):
        self._traces = list(traces)
        self._cursor = 0

    def propose(self, cell: CellSpec) -> MutationTrace:
        if self._cursor >= len(self._traces):
            raise RuntimeError("replay log exhausted")
        trace = self._traces[self._cursor]
        self._cursor += 1
        return trace


@dataclass
class StepRecord:
    step: int
    sampled_ids: Tuple[int, ...]
    parent_id: int
    parent_fitness: float
    child_id: int
    child_fitness: float
    child_maturity: float
    removed_id: int
    trace: MutationTrace
    diagnostics: Optional[Dict[str, float]]


def initialize(
    cfg: SpaceConfig,
    oracle: FitnessOracle,
    pop_size: int,
    rng: np.random.Generator,
    eval_rng: Optional[np.random.Generator] = None,
) -> Population:
    """Evaluate pop_size random cells at the initial training budget."""
    if pop_size < 1:
        raise ValueError(f"pop_size must be >= 1, got {pop_size}")
    eval_rng = eval_rng if eval_rng is not None else rng
    pop = Population(capacity=pop_size)
    m0 = oracle.maturity.initial_maturity()
    for _ in range(pop_size):
        cell = random_cell(cfg, rng)
        fit = oracle.evaluate(cell, m0, eval_rng)
        ind = Individual(
            cell=cell,
            fitness=fit,
            maturity=m0,
            id=pop.allocate_id(),
            parent_id=None,
            birth_step=0,
        )
        pop.members.append(ind)
        pop.history.append(ind)
    return pop


def tournament_best(sample: Sequence[Individual]) -> Individual:
    # highest fitness; ties go to the lower id
    return max(sample, key=lambda ind: (ind.fitness, -ind.id))


def tournament_worst(sample: Sequence[Individual]) -> Individual:
    # lowest fitness; ties go against the higher id
    return min(sample, key=lambda ind: (ind.fitness, -ind.id))


def evolution_step(
    pop: Population,
    policy: MutationPolicy,
    trainer: Optional[ReinforceTrainer],
    oracle: FitnessOracle,
    sample_size: int,
    rng: np.random.Generator,
    eval_rng: Optional[np.random.Generator] = None,
    step: int = 0,
) -> StepRecord:
    """One select-mutate-evaluate-replace round, plus an optional update."""
    if not 2 <= sample_size <= len(pop.members):
        raise ValueError(
            f"sample_size must be in [2, {len(pop.members)}], got {sample_size}"
        )
    eval_rng = eval_rng if eval_rng is not None else rng
    picks = rng.choice(len(pop.members), size=sample_size, replace=False)
    sample = [pop.members[i] for i in picks]
    parent = tournament_best(sample)
    doomed = tournament_worst(sample)

    trace = policy.propose(parent.cell)
    child_cell = apply_mutation(parent.cell, trace)
    child_maturity = inherit_maturity(
        oracle.maturity, parent.maturity, parent.cell, child_cell
    )
    child_fitness = oracle.evaluate(child_cell, child_maturity, eval_rng)
    child = Individual(
        cell=child_cell,
        fitness=child_fitness,
        maturity=child_maturity,
        id=pop.allocate_id(),
        parent_id=parent.id,
        birth_step=step,
    )
    pop.members = [ind for ind in pop.members if ind.id != doomed.id]
    pop.members.append(child)
    pop.history.append(child)

    diagnostics = None
    if trainer is not None:
        logprob_fn = getattr(policy, "logprob_fn", None)
        if logprob_fn is None:
            raise ValueError("trainer attached to a policy without gradients")
        diagnostics = trainer.update(
            logprob_fn(parent.cell, trace), trace.total_entropy, child_fitness
        )
    return StepRecord(
        step=step,
        sampled_ids=tuple(int(ind.id) for ind in sample),
        parent_id=parent.id,
        parent_fitness=parent.fitness,
        child_id=child.id,
        child_fitness=child_fitness,
        child_maturity=child_maturity,
        removed_id=doomed.id,
        trace=trace,
        diagnostics=diagnostics,
    )


@dataclass
class RunResult:
    population: Population
    records: List[StepRecord]
    best: Individual  # best by true fitness over the final population


def run(
    cfg: SpaceConfig,
    oracle: FitnessOracle,
    policy: MutationPolicy,
    trainer: Optional[ReinforceTrainer],
    budget: int,
    pop_size: int = 20,
    sample_size: int = 5,
    rng: Optional[np.random.Generator] = None,
    tournament_rng: Optional[np.random.Generator] = None,
    eval_rng: Optional[np.random.Generator] = None,
    retrain_final: bool = True,
) -> RunResult:
    """Initialize, run `budget` evolution steps, then re-evaluate finalists.

    The final re-evaluation grants every surviving member the full training
    budget (maturity 1.0), mirroring a from-scratch retrain of the
    candidates that made it to the end. History keeps birth-time records,
    so len(history) == pop_size + budget regardless.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    tournament_rng = tournament_rng if tournament_rng is not None else rng
    eval_rng = eval_rng if eval_rng is not None else rng
    pop = initialize(cfg, oracle, pop_size, rng, eval_rng)
    records: List[StepRecord] = []
    for step in range(1, budget + 1):
        records.append(
            evolution_step(
                pop, policy, trainer, oracle, sample_size, tournament_rng, eval_rng, step
            )
        )
    if retrain_final and budget > 0:
        pop.members = [
            replace(
                ind,
                fitness=oracle.evaluate(ind.cell, 1.0, eval_rng),
                maturity=1.0,
            )
            for ind in pop.members
        ]
    best = max(
        pop.members, key=lambda ind: (oracle.true_fitness(ind.cell), -ind.id)
    )
    return RunResult(population=pop, records=records, best=best)


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent named streams so that replay can skip the policy draw.

    Spawn order is part of the log format: init, tournament, policy, eval,
    params.
    """
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(5)
    names = ("init", "tournament", "policy", "eval", "params")
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}
