"""Randomized probing policies executed over drawn state realizations.

All three production policies visit items in an arbitrary arrival order,
probe each item (free of charge), observe its realized state ``s`` and
then decide immediately and irrevocably:

* the **small** policy discards any item whose realized cost exceeds
  half the budget, and otherwise accepts with probability
  ``y_is / (4 p_i(s))`` provided the remaining budget covers the cost;
* the **large** policy is its mirror image, keeping only realized costs
  strictly above half the budget (it can never afford two such items,
  so it selects at most one);
* **stocan** flips a fair coin and runs one of the two.

Cost is charged on acceptance only; rejected or skipped items are gone
for good. ``ignore_budget`` drops the remaining-budget check; it exists
purely as an analysis device for tests (the unbudgeted variant can
overspend) and must never be used in production runs.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import BudgetViolationError, CapacityError, PreconditionError, ValidationError
from .model import Instance, LatticeObjective, PROB_TOL, sample_states
from .optimizer import check_lp_feasible
from .rng import BRANCH, COINS, ORDERS, STATES, substream

KINDS = ("small", "large", "stocan")

DISCARDED = "discarded-by-size"
REJECTED = "rejected-by-coin"
SKIPPED = "skipped-no-budget"
ACCEPTED = "accepted"

EXACT_POLICY_GUARD = 1_000_000  # max S^I * 2^I for exact expectations


def resolve_order(order, item_count: int) -> np.ndarray:
    """Normalize an arrival-order spec to a permutation of 0..I-1."""
    if isinstance(order, str):
        if order == "identity":
            return np.arange(item_count)
        raise ValidationError("order", f"unknown order spec {order!r}")
    arr = np.asarray(order, dtype=np.int64)
    if sorted(arr.tolist()) != list(range(item_count)):
        raise ValidationError("order", f"{arr.tolist()} is not a permutation of 0..{item_count - 1}")
    return arr


def acceptance_probabilities(inst: Instance, y: np.ndarray) -> np.ndarray:
    """Per-pair accept probability y/(4p), zero where p = 0.

    Requires y to be LP-feasible, which bounds every entry by 1/4.
    """
    try:
        check_lp_feasible(y, inst)
    except ValidationError as exc:
        raise PreconditionError(f"y is not LP-feasible: {exc}") from exc
    y = np.asarray(y, dtype=float)
    probs = np.zeros_like(y)
    np.divide(y, 4.0 * inst.prob, out=probs, where=inst.prob > 0)
    if np.any(probs > 0.25 + PROB_TOL):
        raise PreconditionError("acceptance probability above 1/4; y is not below its caps")
    return np.clip(probs, 0.0, 0.25 + PROB_TOL)


@dataclass(frozen=True)
class RunRecord:
    """Full trace of one policy execution."""

    kind: str
    order: tuple
    events: tuple  # (item, observed state, action) per visited item
    selected: tuple  # accepted (item, state) pairs in acceptance order
    total_cost: float
    value: float
    branch: str | None = None
    ignore_budget: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "branch": self.branch,
            "order": list(self.order),
            "events": [{"item": i, "state": s, "action": a} for i, s, a in self.events],
            "selected": [list(p) for p in self.selected],
            "total_cost": self.total_cost,
            "value": self.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _walk(inst, objective, probs, phi, order, keep_small, coin_rng, *, ignore_budget=False):
    budget = inst.budget
    half = budget / 2
    events = []
    selected = []
    spent = 0.0
    u = np.zeros(inst.item_count, dtype=np.int64)
    for i in order:
        s = int(phi[i])
        cost = float(inst.cost[i, s - 1])
        if (cost <= half) != keep_small:
            events.append((int(i), s, DISCARDED))
            continue
        if not ignore_budget and spent + cost > budget:
            events.append((int(i), s, SKIPPED))
            continue
        if coin_rng.random() < probs[i, s - 1]:
            events.append((int(i), s, ACCEPTED))
            selected.append((int(i), s))
            spent += cost
            u[i] = s
        else:
            events.append((int(i), s, REJECTED))
    return events, selected, spent, float(objective.value(u))


def _make_record(kind, inst, objective, y, phi, order, seed, keep_small, branch=None,
                 ignore_budget=False):
    probs = acceptance_probabilities(inst, y)
    phi = np.asarray(phi, dtype=np.int64)
    if phi.shape != (inst.item_count,) or np.any(phi < 1) or np.any(phi > inst.state_count):
        raise ValidationError("phi", "expected one realized state in 1..S per item")
    order_arr = resolve_order(order, inst.item_count)
    coin_rng = substream(seed, COINS)
    events, selected, spent, value = _walk(
        inst, objective, probs, phi, order_arr, keep_small, coin_rng, ignore_budget=ignore_budget
    )
    record = RunRecord(
        kind=kind,
        order=tuple(int(i) for i in order_arr),
        events=tuple(events),
        selected=tuple(selected),
        total_cost=spent,
        value=value,
        branch=branch,
        ignore_budget=ignore_budget,
    )
    if not ignore_budget and record.total_cost > inst.budget:
        raise BudgetViolationError(record)  # pragma: no cover - structurally unreachable
    return record


def run_pi_small(inst, objective, y, phi, order="identity", seed=0, *,
                 ignore_budget=False) -> RunRecord:
    """Execute the small-item policy on one realization."""
    return _make_record("small", inst, objective, y, phi, order, seed, True,
                        ignore_budget=ignore_budget)


def run_pi_large(inst, objective, y, phi, order="identity", seed=0) -> RunRecord:
    """Execute the large-item policy on one realization."""
    return _make_record("large", inst, objective, y, phi, order, seed, False)


def run_stocan(inst, objective, y, phi, order="identity", seed=0) -> RunRecord:
    """Flip a fair coin, then run the small or large policy."""
    branch_small = bool(substream(seed, BRANCH).random() < 0.5)
    return _make_record("stocan", inst, objective, y, phi, order, seed, branch_small,
                        branch="small" if branch_small else "large")


@dataclass
class PolicySimulation:
    """Aggregate of a seeded simulation campaign.

    ``selected_states[r, i]`` is the state item ``i`` was accepted at in
    run ``r`` (0 when not selected); ``branch_small`` marks the coin
    outcome per run for the combined policy.
    """

    kind: str
    runs: int
    values: np.ndarray
    selected_states: np.ndarray
    total_costs: np.ndarray
    branch_small: np.ndarray | None
    ignore_budget: bool
    budget: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        if self.runs < 2:
            return math.nan
        return float(np.std(self.values, ddof=1) / math.sqrt(self.runs))

    @property
    def is_single_run(self) -> bool:
        return self.runs == 1

    @property
    def budget_violations(self) -> int:
        # exact comparison on the accumulated spend; no tolerance
        return int(np.count_nonzero(self.total_costs > self.budget))

    @property
    def selection_sizes(self) -> np.ndarray:
        return np.count_nonzero(self.selected_states, axis=1)

    def pair_inclusion_frequency(self, item: int, state: int) -> float:
        return float(np.mean(self.selected_states[:, item] == state))


def simulate_policy(kind: str, inst: Instance, objective: LatticeObjective, y: np.ndarray,
                    runs: int, order="identity", seed: int = 0, *,
                    ignore_budget: bool = False) -> PolicySimulation:
    """Run a vectorized simulation campaign, deterministic in ``seed``.

    Randomness is consumed from named substreams, with run ``r`` owning
    row ``r`` of each stream's pre-drawn block: state draws, accept
    coins, branch coins and (for ``order="random"``) fresh per-run
    arrival orders. State draws do not depend on ``kind``, so campaigns
    with the same seed are paired across policies.
    """
    if kind not in KINDS:
        raise ValidationError("kind", f"unknown policy kind {kind!r}")
    if runs < 1:
        raise ValidationError("runs", "must be at least 1")
    probs = acceptance_probabilities(inst, y)
    I, S = inst.item_count, inst.state_count
    budget = inst.budget

    phi = sample_states(inst, substream(seed, STATES), runs)  # (runs, I)
    coins = substream(seed, COINS).random((runs, I))
    if kind == "stocan":
        branch_small = substream(seed, BRANCH).random(runs) < 0.5
    else:
        branch_small = None

    random_orders = isinstance(order, str) and order == "random"
    if random_orders:
        orders = np.argsort(substream(seed, ORDERS).random((runs, I)), axis=1)
    else:
        fixed = resolve_order(order, I)

    item_axis = np.arange(I)[None, :]
    cost_real = inst.cost[item_axis, phi - 1]  # (runs, I)
    prob_real = probs[item_axis, phi - 1]
    small_real = cost_real <= budget / 2

    if kind == "small":
        keep = small_real
    elif kind == "large":
        keep = ~small_real
    else:
        keep = np.where(branch_small[:, None], small_real, ~small_real)

    spent = np.zeros(runs)
    selected = np.zeros((runs, I), dtype=np.int16)
    rows = np.arange(runs)
    for t in range(I):
        items = orders[:, t] if random_orders else np.full(runs, fixed[t])
        cost_t = cost_real[rows, items]
        ok = keep[rows, items]
        if not ignore_budget:
            ok = ok & (spent + cost_t <= budget)
        accept = ok & (coins[:, t] < prob_real[rows, items])
        spent = np.where(accept, spent + cost_t, spent)
        selected[rows[accept], items[accept]] = phi[rows[accept], items[accept]]

    values = np.asarray(objective.value_many(selected.astype(np.int64)), dtype=float)
    sim = PolicySimulation(
        kind=kind,
        runs=runs,
        values=values,
        selected_states=selected,
        total_costs=spent,
        branch_small=branch_small,
        ignore_budget=ignore_budget,
        budget=budget,
    )
    if not ignore_budget and sim.budget_violations:
        bad = int(np.argmax(sim.total_costs > budget))  # pragma: no cover
        raise BudgetViolationError(  # pragma: no cover - structurally unreachable
            {"run": bad, "total_cost": float(sim.total_costs[bad])}
        )
    return sim


def simulate_policy_value(kind, inst, objective, y, runs, order="identity",
                          seed: int = 0) -> tuple[float, float]:
    """Mean policy value and standard error over seeded runs.

    A single run has no spread estimate; its stderr is reported as NaN.
    """
    sim = simulate_policy(kind, inst, objective, y, runs, order=order, seed=seed)
    return sim.mean, sim.stderr


def exact_policy_value(kind: str, inst: Instance, objective: LatticeObjective,
                       y: np.ndarray, order="identity") -> float:
    """Exact expected policy value over states and accept coins.

    Enumerates every state realization and, per realization, the full
    tree of accept-coin outcomes along the arrival order (the combined
    policy averages its two branches). Guarded by S^I * 2^I <= 1e6.
    """
    if kind not in KINDS:
        raise ValidationError("kind", f"unknown policy kind {kind!r}")
    probs = acceptance_probabilities(inst, y)
    I, S = inst.item_count, inst.state_count
    work = (S ** I) * (2 ** I)
    if work > EXACT_POLICY_GUARD:
        raise CapacityError(
            f"S^I * 2^I = {work} exceeds guard {EXACT_POLICY_GUARD}; use simulate_policy_value"
        )
    order_arr = resolve_order(order, I)
    budget = inst.budget
    half = budget / 2
    value_cache: dict[tuple, float] = {}

    def fval(sel: tuple) -> float:
        v = value_cache.get(sel)
        if v is None:
            v = objective.value(np.asarray(sel, dtype=np.int64))
            value_cache[sel] = v
        return v

    def walk(pos: int, spent: float, sel: list, phi, keep_small: bool) -> float:
        if pos == I:
            return fval(tuple(sel))
        i = int(order_arr[pos])
        s = phi[i]
        cost = float(inst.cost[i, s - 1])
        if (cost <= half) != keep_small or spent + cost > budget:
            return walk(pos + 1, spent, sel, phi, keep_small)
        q = float(probs[i, s - 1])
        skip = walk(pos + 1, spent, sel, phi, keep_small)
        if q == 0.0:
            return skip
        sel[i] = s
        take = walk(pos + 1, spent + cost, sel, phi, keep_small)
        sel[i] = 0
        return q * take + (1.0 - q) * skip

    total = 0.0
    for phi in itertools.product(range(1, S + 1), repeat=I):
        p_phi = 1.0
        for i in range(I):
            p_phi *= inst.prob[i, phi[i] - 1]
        if p_phi == 0.0:
            continue
        sel = [0] * I
        if kind == "small":
            v = walk(0, 0.0, sel, phi, True)
        elif kind == "large":
            v = walk(0, 0.0, sel, phi, False)
        else:
            v = 0.5 * walk(0, 0.0, sel, phi, True) + 0.5 * walk(0, 0.0, sel, phi, False)
        total += p_phi * v
    return float(total)


def write_records(path, records: Iterable[RunRecord]) -> int:
    """Serialize one JSON record per line; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
            n += 1
    return n


def scalar_runs(kind: str, inst: Instance, objective: LatticeObjective, y: np.ndarray,
                runs: int, order="identity", seed: int = 0) -> list[RunRecord]:
    """Per-run records; run r derives its randomness from (seed, r).

    Slower than :func:`simulate_policy` and numerically distinct from it
    (randomness is consumed run by run rather than in blocks), but
    distributionally identical and equally deterministic.
    """
    records = []
    for r in range(runs):
        phi = sample_states(inst, substream(seed, STATES, r), 1)[0]
        coin_rng = substream(seed, COINS, r)
        if kind == "small":
            rec = _record_with_rng(kind, inst, objective, y, phi, order, coin_rng, True, None)
        elif kind == "large":
            rec = _record_with_rng(kind, inst, objective, y, phi, order, coin_rng, False, None)
        elif kind == "stocan":
            branch_small = bool(substream(seed, BRANCH, r).random() < 0.5)
            rec = _record_with_rng(kind, inst, objective, y, phi, order, coin_rng,
                                   branch_small, "small" if branch_small else "large")
        else:
            raise ValidationError("kind", f"unknown policy kind {kind!r}")
        records.append(rec)
    return records


def _record_with_rng(kind, inst, objective, y, phi, order, coin_rng, keep_small, branch):
    probs = acceptance_probabilities(inst, y)
    order_arr = resolve_order(order, inst.item_count)
    events, selected, spent, value = _walk(inst, objective, probs, phi, order_arr,
                                           keep_small, coin_rng)
    record = RunRecord(kind=kind, order=tuple(int(i) for i in order_arr),
                       events=tuple(events), selected=tuple(selected),
                       total_cost=spent, value=value, branch=branch)
    if record.total_cost > inst.budget:
        raise BudgetViolationError(record)  # pragma: no cover - structurally unreachable
    return record
