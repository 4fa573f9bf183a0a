"""Problem instances, lattice objectives, and the lifted set function.

Conventions used throughout the package:

* items are indexed ``0 .. I-1``;
* states are indexed ``1 .. S``, with ``0`` meaning "item absent".
  Probability and cost matrices have shape ``(I, S)`` where column
  ``s - 1`` holds the entry for state ``s``;
* a *state vector* ``u`` is an integer vector of length ``I`` with
  entries in ``0 .. S``;
* an *item-state pair* is a tuple ``(i, s)`` with ``s >= 1``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ValidationError
from .rng import substream

PROB_TOL = 1e-9  # validation tolerance for probabilities, costs, feasibility
EXACT_TOL = 1e-12  # tolerance for exact-arithmetic comparisons

ENUM_GUARD = 1_000_000  # max lattice points for exhaustive checks
PAIR_GUARD = 2_000_000  # max comparable pairs for the submodularity check


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class Instance:
    """A probing instance: state distributions, state costs, and a budget.

    ``prob[i, s-1]`` is the probability that item ``i`` realizes state
    ``s``; rows sum to one. ``cost[i, s-1]`` is the cost charged when
    picking item ``i`` in state ``s``; costs are nondecreasing in the
    state ("better" states cost more). Arrays are frozen after
    construction, so instances can be shared across threads freely.
    """

    prob: np.ndarray
    cost: np.ndarray
    budget: float

    def __post_init__(self):
        prob = np.array(self.prob, dtype=float)
        cost = np.array(self.cost, dtype=float)
        if prob.ndim != 2 or prob.shape != cost.shape or prob.shape[0] < 1 or prob.shape[1] < 1:
            raise ValidationError("instance", "prob and cost must be equal-shape I x S matrices")
        _validate_rows(prob, cost)
        if not self.budget > 0:
            raise ValidationError("instance.budget", f"budget must be positive (got {self.budget})")
        prob.flags.writeable = False
        cost.flags.writeable = False
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def item_count(self) -> int:
        return self.prob.shape[0]

    @property
    def state_count(self) -> int:
        return self.prob.shape[1]

    def to_dict(self) -> dict:
        return {
            "items": [
                {"probs": [float(v) for v in self.prob[i]], "costs": [float(v) for v in self.cost[i]]}
                for i in range(self.item_count)
            ],
            "budget": float(self.budget),
        }


def _validate_rows(prob: np.ndarray, cost: np.ndarray) -> None:
    for i in range(prob.shape[0]):
        row = prob[i]
        if np.any(row < -PROB_TOL) or np.any(row > 1 + PROB_TOL):
            s = int(np.argmax((row < -PROB_TOL) | (row > 1 + PROB_TOL)))
            raise ValidationError(f"items[{i}].probs[{s}]", f"probability {row[s]} outside [0, 1]")
        total = float(row.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ValidationError(f"items[{i}].probs", f"entries must sum to 1 (got {total})")
        crow = cost[i]
        if np.any(crow < -0.0):
            s = int(np.argmax(crow < 0))
            raise ValidationError(f"items[{i}].costs[{s}]", f"cost {crow[s]} is negative")
        for s in range(1, cost.shape[1]):
            if crow[s] < crow[s - 1] - PROB_TOL:
                raise ValidationError(
                    f"items[{i}].costs",
                    f"cost must be nondecreasing in state: state {s + 1} costs {crow[s]} "
                    f"< state {s} cost {crow[s - 1]}",
                )


def draw_realization(inst: Instance, seed: int) -> np.ndarray:
    """Draw one state per item from the product distribution.

    Returns an integer vector of length ``I`` with entries in ``1 .. S``,
    deterministic in ``seed``.
    """
    rng = substream(seed, 0)
    return sample_states(inst, rng, 1)[0]


def sample_states(inst: Instance, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` independent state realizations, shape ``(n, I)``."""
    u = rng.random((n, inst.item_count))
    out = np.empty((n, inst.item_count), dtype=np.int64)
    for i in range(inst.item_count):
        cum = np.cumsum(inst.prob[i])
        out[:, i] = np.searchsorted(cum, u[:, i], side="right")
    np.clip(out, 0, inst.state_count - 1, out=out)
    return out + 1


# ---------------------------------------------------------------------------
# lattice objectives


class LatticeObjective:
    """A nonnegative objective on state vectors ``{0..S}^I``.

    Subclasses must be monotone and lattice submodular on their domain;
    :func:`check_monotone` and :func:`check_lattice_submodular` verify
    this rather than assuming it. ``value_many`` evaluates a whole
    ``(n, I)`` batch of vectors at once and is the hot path everywhere.
    """

    family = "abstract"

    def __init__(self, item_count: int, state_count: int):
        self.item_count = int(item_count)
        self.state_count = int(state_count)

    def value(self, u: Sequence[int]) -> float:
        arr = np.asarray(u, dtype=np.int64).reshape(1, -1)
        return float(self.value_many(arr)[0])

    def value_many(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, u) -> float:
        return self.value(u)

    def params_dict(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params_dict()}


class ConcaveCurve:
    """A concave nondecreasing scalar map with g(0) = 0, in declarative form."""

    KINDS = ("cap", "sqrt", "power", "log1p")

    def __init__(self, kind: str, *, cap: float | None = None, scale: float = 1.0,
                 exponent: float | None = None, path: str = "g"):
        if kind not in self.KINDS:
            raise ValidationError(f"{path}.kind", f"unknown curve kind {kind!r}")
        if scale <= 0:
            raise ValidationError(f"{path}.scale", f"scale must be positive (got {scale})")
        if kind == "cap":
            if cap is None or cap <= 0:
                raise ValidationError(f"{path}.cap", f"cap must be positive (got {cap})")
        if kind == "power":
            if exponent is None or not 0 < exponent <= 1:
                raise ValidationError(f"{path}.exponent", f"exponent must lie in (0, 1] (got {exponent})")
        self.kind = kind
        self.cap = None if cap is None else float(cap)
        self.scale = float(scale)
        self.exponent = None if exponent is None else float(exponent)

    def apply(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "cap":
            return self.scale * np.minimum(t, self.cap)
        if self.kind == "sqrt":
            return self.scale * np.sqrt(t)
        if self.kind == "power":
            return self.scale * np.power(t, self.exponent)
        return self.scale * np.log1p(t)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "scale": self.scale}
        if self.cap is not None:
            out["cap"] = self.cap
        if self.exponent is not None:
            out["exponent"] = self.exponent
        return out

    @classmethod
    def from_dict(cls, d: dict, path: str = "g") -> "ConcaveCurve":
        if not isinstance(d, dict) or "kind" not in d:
            raise ValidationError(path, "expected an object with a 'kind' key")
        return cls(d["kind"], cap=d.get("cap"), scale=d.get("scale", 1.0),
                   exponent=d.get("exponent"), path=path)


class SeparableConcave(LatticeObjective):
    """f(u) = sum_i w_i * g(u_i) with tabulated concave nondecreasing g."""

    family = "separable_concave"

    def __init__(self, weights, g_table, *, path: str = "objective"):
        weights = np.asarray(weights, dtype=float)
        g = np.asarray(g_table, dtype=float)
        if weights.ndim != 1 or weights.size < 1:
            raise ValidationError(f"{path}.weights", "expected a nonempty list of weights")
        if np.any(weights < 0):
            i = int(np.argmax(weights < 0))
            raise ValidationError(f"{path}.weights[{i}]", f"weight {weights[i]} is negative")
        if g.ndim != 1 or g.size < 2:
            raise ValidationError(f"{path}.g", "expected g tabulated on states 0..S (length S+1)")
        _validate_concave_table(g, f"{path}.g")
        super().__init__(weights.size, g.size - 1)
        weights.flags.writeable = False
        g.flags.writeable = False
        self.weights = weights
        self.g_table = g

    def value_many(self, u: np.ndarray) -> np.ndarray:
        return self.g_table[u] @ self.weights

    def params_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "g": self.g_table.tolist()}


def _validate_concave_table(g: np.ndarray, path: str) -> None:
    if abs(g[0]) > EXACT_TOL:
        raise ValidationError(f"{path}[0]", f"g(0) must be 0 (got {g[0]})")
    for k in range(1, g.size):
        if g[k] < g[k - 1] - EXACT_TOL:
            raise ValidationError(f"{path}[{k}]", f"g must be nondecreasing ({g[k]} < {g[k-1]})")
    # concavity via second differences
    for k in range(2, g.size):
        if (g[k] - g[k - 1]) > (g[k - 1] - g[k - 2]) + EXACT_TOL:
            raise ValidationError(
                f"{path}[{k}]", "second difference is positive (table is not concave)"
            )


class NestedCoverage(LatticeObjective):
    """Weighted coverage with per-item covers nested along states.

    Pair ``(i, s)`` covers the element set ``C_i(s)``, with
    ``C_i(1) <= C_i(2) <= ... <= C_i(S)`` and ``C_i(0)`` empty;
    ``f(u)`` is the total weight of the union of the covered sets.
    """

    family = "nested_coverage"

    def __init__(self, covers, element_weights, *, path: str = "objective"):
        weights = np.asarray(element_weights, dtype=float)
        if weights.ndim != 1 or weights.size < 1:
            raise ValidationError(f"{path}.element_weights", "expected a nonempty list of weights")
        if np.any(weights < 0):
            e = int(np.argmax(weights < 0))
            raise ValidationError(f"{path}.element_weights[{e}]", f"weight {weights[e]} is negative")
        m = weights.size
        if not covers or not all(covers):
            raise ValidationError(f"{path}.covers", "expected one nonempty cover list per item")
        state_count = len(covers[0])
        masks = []
        for i, item_covers in enumerate(covers):
            if len(item_covers) != state_count:
                raise ValidationError(f"{path}.covers[{i}]", "all items must list one cover set per state")
            mask = np.zeros((state_count + 1, m), dtype=bool)
            prev: set = set()
            for s, elems in enumerate(item_covers, start=1):
                cur = set(elems)
                for e in cur:
                    if not isinstance(e, int) or not 0 <= e < m:
                        raise ValidationError(
                            f"{path}.covers[{i}][{s - 1}]", f"element {e!r} outside 0..{m - 1}"
                        )
                if not prev <= cur:
                    missing = sorted(prev - cur)
                    raise ValidationError(
                        f"{path}.covers[{i}][{s - 1}]",
                        f"cover of state {s} must contain cover of state {s - 1} "
                        f"(missing elements {missing})",
                    )
                mask[s, list(cur)] = True
                prev = cur
            masks.append(mask)
        super().__init__(len(covers), state_count)
        weights.flags.writeable = False
        for mask in masks:
            mask.flags.writeable = False
        self.element_weights = weights
        self.cover_masks = masks
        self._covers = [[sorted(set(c)) for c in item] for item in covers]

    def value_many(self, u: np.ndarray) -> np.ndarray:
        covered = np.zeros((u.shape[0], self.element_weights.size), dtype=bool)
        for i in range(self.item_count):
            covered |= self.cover_masks[i][u[:, i]]
        return covered @ self.element_weights

    def params_dict(self) -> dict:
        return {"covers": self._covers, "element_weights": self.element_weights.tolist()}


class ConcaveOverModular(LatticeObjective):
    """f(u) = g(sum_i a_i(u_i)) with nondecreasing a_i and concave g."""

    family = "concave_over_modular"

    def __init__(self, a_tables, curve: ConcaveCurve, *, path: str = "objective"):
        a = np.asarray(a_tables, dtype=float)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError(f"{path}.a", "expected an I x S matrix of values a_i(1..S)")
        if np.any(a[:, 0] < -EXACT_TOL):
            i = int(np.argmax(a[:, 0] < -EXACT_TOL))
            raise ValidationError(f"{path}.a[{i}][0]", f"a must be nonnegative (got {a[i, 0]})")
        for i in range(a.shape[0]):
            for s in range(1, a.shape[1]):
                if a[i, s] < a[i, s - 1] - EXACT_TOL:
                    raise ValidationError(
                        f"{path}.a[{i}][{s}]", f"a must be nondecreasing ({a[i, s]} < {a[i, s - 1]})"
                    )
        super().__init__(a.shape[0], a.shape[1])
        # prepend a_i(0) = 0 so tables index directly by state
        tables = np.concatenate([np.zeros((a.shape[0], 1)), a], axis=1)
        tables.flags.writeable = False
        self.a_tables = tables
        self.curve = curve

    def value_many(self, u: np.ndarray) -> np.ndarray:
        t = self.a_tables[np.arange(self.item_count)[None, :], u].sum(axis=1)
        return self.curve.apply(t)

    def params_dict(self) -> dict:
        return {"a": self.a_tables[:, 1:].tolist(), "g": self.curve.to_dict()}


_FAMILIES = {
    "separable_concave": SeparableConcave,
    "nested_coverage": NestedCoverage,
    "concave_over_modular": ConcaveOverModular,
}


def make_objective(family: str, params: dict, *, path: str = "objective") -> LatticeObjective:
    """Build a declared objective, validating every family parameter."""
    if family == "separable_concave":
        _require(params, ("weights", "g"), path)
        return SeparableConcave(params["weights"], params["g"], path=path)
    if family == "nested_coverage":
        _require(params, ("covers", "element_weights"), path)
        return NestedCoverage(params["covers"], params["element_weights"], path=path)
    if family == "concave_over_modular":
        _require(params, ("a", "g"), path)
        curve = ConcaveCurve.from_dict(params["g"], path=f"{path}.g")
        return ConcaveOverModular(params["a"], curve, path=path)
    raise ValidationError(f"{path}.family", f"unknown objective family {family!r}")


def _require(params: dict, keys: Iterable[str], path: str) -> None:
    for k in keys:
        if k not in params:
            raise ValidationError(f"{path}.{k}", "missing required key")


def objective_from_dict(d: dict, *, path: str = "objective") -> LatticeObjective:
    if not isinstance(d, dict):
        raise ValidationError(path, "expected an object")
    if "family" not in d:
        raise ValidationError(f"{path}.family", "missing required key")
    params = {k: v for k, v in d.items() if k != "family"}
    return make_objective(d["family"], params, path=path)


# ---------------------------------------------------------------------------
# the lifted set function h


def reduce_pairs(pairs: Iterable[tuple[int, int]]) -> dict[int, int]:
    """Map each item to the maximum state it is paired with."""
    best: dict[int, int] = {}
    for i, s in pairs:
        if s > best.get(i, 0):
            best[i] = s
    return best


def pairs_to_vector(pairs: Iterable[tuple[int, int]], item_count: int, state_count: int) -> np.ndarray:
    u = np.zeros(item_count, dtype=np.int64)
    for i, s in pairs:
        if not (0 <= i < item_count) or not (1 <= s <= state_count):
            raise ValidationError("pairs", f"pair ({i}, {s}) outside [0,{item_count}) x [1,{state_count}]")
        if s > u[i]:
            u[i] = s
    return u


def h_eval(pairs: Iterable[tuple[int, int]], objective: LatticeObjective,
           item_count: int | None = None) -> float:
    """Evaluate the lifted set function: each item at its max paired state."""
    n = objective.item_count if item_count is None else item_count
    u = pairs_to_vector(pairs, n, objective.state_count)
    return objective.value(u)


# ---------------------------------------------------------------------------
# structure checkers


@dataclass
class CheckResult:
    ok: bool
    witness: tuple | None = None
    checked: int = 0

    def __bool__(self) -> bool:
        return self.ok


def enumerate_state_vectors(item_count: int, state_count: int) -> np.ndarray:
    """All vectors in ``{0..S}^I`` as an ``((S+1)^I, I)`` array.

    Row order is lexicographic with the last coordinate fastest, so the
    row index is the mixed-radix rank of the vector.
    """
    n = (state_count + 1) ** item_count
    if n > ENUM_GUARD:
        raise CapacityError(
            f"(S+1)^I = {n} exceeds the enumeration guard {ENUM_GUARD}; use sampled mode"
        )
    grids = np.indices((state_count + 1,) * item_count).reshape(item_count, -1).T
    return grids.astype(np.int64)


def check_monotone(objective: LatticeObjective, item_count: int | None = None,
                   state_count: int | None = None, *, mode: str = "exhaustive",
                   samples: int = 2000, seed: int = 0) -> CheckResult:
    """Check f(u) <= f(u + 1_i) for every vector and coordinate.

    Single-coordinate increments generate the componentwise order, so
    this is equivalent to monotonicity over all comparable pairs. In
    ``sampled`` mode, random increment chains are screened instead of
    the full lattice (for domains beyond the enumeration guard).
    """
    I = objective.item_count if item_count is None else item_count
    S = objective.state_count if state_count is None else state_count
    if mode == "sampled":
        return _check_monotone_sampled(objective, I, S, samples, seed)
    grid = enumerate_state_vectors(I, S)
    values = objective.value_many(grid)
    checked = 0
    # rank arithmetic: bumping coordinate i by one adds (S+1)^(I-1-i)
    radix = (S + 1) ** np.arange(I - 1, -1, -1)
    for i in range(I):
        movable = grid[:, i] < S
        idx = np.nonzero(movable)[0]
        up = values[idx + radix[i]]
        bad = up < values[idx] - EXACT_TOL
        checked += idx.size
        if np.any(bad):
            k = idx[np.argmax(bad)]
            return CheckResult(False, (tuple(grid[k]), i), checked)
    return CheckResult(True, None, checked)


def _check_monotone_sampled(objective, I, S, samples, seed) -> CheckResult:
    rng = substream(seed, 0)
    u = rng.integers(0, S + 1, size=(samples, I))
    coords = rng.integers(0, I, size=samples)
    v = u.copy()
    rows = np.arange(samples)
    v[rows, coords] = np.minimum(v[rows, coords] + 1, S)
    fu = objective.value_many(u)
    fv = objective.value_many(v)
    bad = fv < fu - EXACT_TOL
    if np.any(bad):
        k = int(np.argmax(bad))
        return CheckResult(False, (tuple(u[k]), int(coords[k])), samples)
    return CheckResult(True, None, samples)


def check_lattice_submodular(objective: LatticeObjective, item_count: int | None = None,
                             state_count: int | None = None, *, mode: str = "exhaustive",
                             samples: int = 2000, seed: int = 0) -> CheckResult:
    """Check the diminishing-returns inequality over all comparable pairs.

    For every u <= v, state s and item i it verifies

        f(u v s*1_i) - f(u) >= f(v v s*1_i) - f(v) - 1e-12.

    A failing check returns the witness ``(u, v, i, s)``.
    """
    I = objective.item_count if item_count is None else item_count
    S = objective.state_count if state_count is None else state_count
    if mode == "sampled":
        return _check_submodular_sampled(objective, I, S, samples, seed)
    pair_count = ((S + 1) * (S + 2) // 2) ** I
    if pair_count > PAIR_GUARD:
        raise CapacityError(
            f"comparable-pair count {pair_count} exceeds guard {PAIR_GUARD}; use sampled mode"
        )
    grid = enumerate_state_vectors(I, S)
    values = objective.value_many(grid)
    radix = (S + 1) ** np.arange(I - 1, -1, -1)
    ranks = grid @ radix

    def rank_join(u_rank, u_vec, i, s):
        lift = max(s - u_vec[i], 0)
        return u_rank + lift * radix[i]

    checked = 0
    for a, u in enumerate(grid):
        # enumerate all v >= u
        ranges = [range(int(u_i), S + 1) for u_i in u]
        for v in itertools.product(*ranges):
            b = int(np.dot(v, radix))
            for i in range(I):
                for s in range(1, S + 1):
                    lhs = values[rank_join(ranks[a], u, i, s)] - values[a]
                    rhs = values[rank_join(b, v, i, s)] - values[b]
                    checked += 1
                    if lhs < rhs - EXACT_TOL:
                        return CheckResult(False, (tuple(u), tuple(v), i, s), checked)
    return CheckResult(True, None, checked)


def _check_submodular_sampled(objective, I, S, samples, seed) -> CheckResult:
    rng = substream(seed, 1)
    lo = rng.integers(0, S + 1, size=(samples, I))
    hi = np.minimum(lo + rng.integers(0, S + 1, size=(samples, I)), S)
    coords = rng.integers(0, I, size=samples)
    states = rng.integers(1, S + 1, size=samples)
    rows = np.arange(samples)
    lo_up = lo.copy()
    lo_up[rows, coords] = np.maximum(lo[rows, coords], states)
    hi_up = hi.copy()
    hi_up[rows, coords] = np.maximum(hi[rows, coords], states)
    lhs = objective.value_many(lo_up) - objective.value_many(lo)
    rhs = objective.value_many(hi_up) - objective.value_many(hi)
    bad = lhs < rhs - EXACT_TOL
    if np.any(bad):
        k = int(np.argmax(bad))
        return CheckResult(False, (tuple(lo[k]), tuple(hi[k]), int(coords[k]), int(states[k])), samples)
    return CheckResult(True, None, samples)


# ---------------------------------------------------------------------------
# file format


def instance_from_dict(d: dict) -> tuple[Instance, LatticeObjective]:
    if not isinstance(d, dict):
        raise ValidationError("instance", "expected a JSON object")
    if "items" not in d:
        raise ValidationError("items", "missing required key")
    if "budget" not in d:
        raise ValidationError("budget", "missing required key")
    if "objective" not in d:
        raise ValidationError("objective", "missing required key")
    items = d["items"]
    if not isinstance(items, list) or not items:
        raise ValidationError("items", "expected a nonempty list")
    probs, costs = [], []
    width = None
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "probs" not in item or "costs" not in item:
            raise ValidationError(f"items[{i}]", "expected an object with 'probs' and 'costs'")
        p, c = item["probs"], item["costs"]
        if len(p) != len(c) or not p:
            raise ValidationError(f"items[{i}]", "probs and costs must be nonempty, equal-length lists")
        if width is None:
            width = len(p)
        elif len(p) != width:
            raise ValidationError(f"items[{i}].probs", f"expected {width} states, got {len(p)}")
        probs.append(p)
        costs.append(c)
    inst = Instance(np.array(probs, dtype=float), np.array(costs, dtype=float), float(d["budget"]))
    objective = objective_from_dict(d["objective"])
    if objective.item_count != inst.item_count:
        raise ValidationError(
            "objective", f"objective covers {objective.item_count} items, instance has {inst.item_count}"
        )
    if objective.state_count != inst.state_count:
        raise ValidationError(
            "objective", f"objective covers {objective.state_count} states, instance has {inst.state_count}"
        )
    return inst, objective


def load_instance(path) -> tuple[Instance, LatticeObjective]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(str(path), f"not valid JSON: {exc}") from exc
    return instance_from_dict(payload)


def instance_payload(inst: Instance, objective: LatticeObjective) -> dict:
    payload = inst.to_dict()
    payload["objective"] = objective.to_dict()
    return payload


def save_instance(path, inst: Instance, objective: LatticeObjective) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_payload(inst, objective), fh, indent=2, sort_keys=True)
        fh.write("\n")


def instance_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
