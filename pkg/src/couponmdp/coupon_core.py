"""Coupon-set state space: groups, canonical sets, transitions, awareness subsets.

An e-wallet state is a finite set of coupon groups <v, T, n>: n identical
coupons of face value v, redeemable on trips for the next T days. T counts
remaining validity in whole steps; T = 0 means "redeemable today, gone
tomorrow". Every set carries the default group c0 = <0, 0, 1>, the option of
paying full fare, and no two groups share the same (v, T).

Transitions. Redeeming one coupon from group c removes that coupon, then
every surviving group ages one step:

    age(<v, T, n>) = <v, T-1, n>   if v > 0, n > 0 and T >= 1, else c0
    step(C, c)     = {age(c') for c' in C minus c} + age(<v_c, T_c, n_c - 1>)

Aged-out groups disappear; step(C) with no argument is pure aging. The empty
wallet {c0} is absorbing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import CapacityError, DomainError, ValidationError

__all__ = [
    "CouponGroup",
    "CouponSet",
    "DEFAULT_GROUP",
    "EMPTY_SET",
    "make_coupon_set",
    "step_group",
    "step_set",
    "enumerate_reachable",
    "reachable_union",
    "enumerate_awareness_subsets",
    "awareness_subset_count",
    "subset_counts",
    "redemption_value",
    "coupon_set_to_obj",
    "coupon_set_from_obj",
]

REACHABLE_CAP = 10**6
AWARENESS_CAP = 4096


@dataclass(frozen=True, order=True)
class CouponGroup:
    """n identical coupons of face value v with T remaining steps of validity.

    The default group (full-fare option) is <0, 0, 1>; it is the only group
    allowed to carry v = 0.
    """

    v: float
    T: int
    n: int = 1

    def __post_init__(self):
        object.__setattr__(self, "v", float(self.v))
        if not (self.v >= 0.0):  # also rejects NaN
            raise ValidationError(f"coupon face value must be >= 0, got {self.v}")
        if not isinstance(self.T, int) or isinstance(self.T, bool):
            raise ValidationError(f"coupon validity T must be an int, got {self.T!r}")
        if not isinstance(self.n, int) or isinstance(self.n, bool):
            raise ValidationError(f"coupon count n must be an int, got {self.n!r}")
        if self.T < 0:
            raise ValidationError(f"coupon validity T must be >= 0, got {self.T}")
        if self.n < 1:
            raise ValidationError(f"coupon count n must be >= 1, got {self.n}")
        if self.v == 0.0 and (self.T, self.n) != (0, 1):
            raise ValidationError(
                f"v = 0 is reserved for the default group <0,0,1>, got {self}"
            )

    @property
    def is_default(self) -> bool:
        return self.v == 0.0

    def key(self) -> tuple[float, int]:
        return (self.v, self.T)


DEFAULT_GROUP = CouponGroup(0.0, 0, 1)


@dataclass(frozen=True)
class CouponSet:
    """Canonical wallet state: default group first, then groups sorted by (v, T).

    Construct through make_coupon_set unless the groups are already canonical.
    Hashable, so it serves directly as a value-table key.
    """

    groups: tuple[CouponGroup, ...]

    def __post_init__(self):
        gs = self.groups
        if not isinstance(gs, tuple):
            raise ValidationError("CouponSet.groups must be a tuple")
        if not gs or gs[0] != DEFAULT_GROUP:
            raise ValidationError("a coupon set must start with the default group <0,0,1>")
        keys = [g.key() for g in gs]
        if len(set(keys)) != len(keys):
            raise ValidationError(f"duplicate (v, T) groups in {gs}")
        if any(g.is_default for g in gs[1:]):
            raise ValidationError("the default group may appear only once")
        if list(gs[1:]) != sorted(gs[1:]):
            raise ValidationError("groups must be sorted by (v, T); use make_coupon_set")

    @property
    def non_default(self) -> tuple[CouponGroup, ...]:
        return self.groups[1:]

    @property
    def is_empty(self) -> bool:
        return len(self.groups) == 1

    @property
    def coupon_count(self) -> int:
        return sum(g.n for g in self.groups[1:])

    @property
    def total_face(self) -> float:
        return sum(g.v * g.n for g in self.groups[1:])

    @property
    def horizon(self) -> int:
        """Max T over real coupon groups; -1 for the empty wallet."""
        return max((g.T for g in self.groups[1:]), default=-1)

    def find(self, v: float, T: int) -> CouponGroup | None:
        v = float(v)
        for g in self.groups:
            if g.v == v and g.T == T:
                return g
        return None

    def key_str(self) -> str:
        """Stable text key, e.g. '0:0:1|5:3:1|10:2:1' (used to seed per-state RNG)."""
        return "|".join(f"{g.v!r}:{g.T}:{g.n}" for g in self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)


EMPTY_SET = CouponSet((DEFAULT_GROUP,))


def make_coupon_set(groups=()) -> CouponSet:
    """Build the canonical CouponSet from (v, T, n) triples or CouponGroups.

    Merges duplicate (v, T) entries by summing counts and inserts the default
    group when absent.
    """
    merged: dict[tuple[float, int], int] = {}
    default_seen = False
    for item in groups:
        g = item if isinstance(item, CouponGroup) else CouponGroup(*item)
        if g.is_default:
            if default_seen:
                raise ValidationError("default group supplied more than once")
            default_seen = True
            continue
        k = g.key()
        merged[k] = merged.get(k, 0) + g.n
    real = sorted(CouponGroup(v, T, n) for (v, T), n in merged.items())
    return CouponSet((DEFAULT_GROUP, *real))


def step_group(c: CouponGroup) -> CouponGroup:
    """Age one group a single step: decrement T while valid, else expire to c0."""
    if c.v > 0 and c.n > 0 and c.T >= 1:
        return CouponGroup(c.v, c.T - 1, c.n)
    return DEFAULT_GROUP


def step_set(C: CouponSet, c: CouponGroup = DEFAULT_GROUP) -> CouponSet:
    """One wallet transition: redeem a coupon from group c (c0 = none), then age.

    c is matched inside C by (v, T); redeeming from a group not in C is a
    domain error.
    """
    if c.is_default:
        chosen = DEFAULT_GROUP
    else:
        chosen = C.find(c.v, c.T)
        if chosen is None or chosen.is_default:
            raise DomainError(f"cannot redeem {c}: no such group in {C.groups}")
    survivors = []
    for g in C.non_default:
        m = g.n - 1 if g is chosen else g.n
        if m < 1:
            continue
        aged = step_group(CouponGroup(g.v, g.T, m))
        if not aged.is_default:
            survivors.append(aged)
    return CouponSet((DEFAULT_GROUP, *sorted(survivors)))


def _topological(states) -> list[CouponSet]:
    # every transition strictly lowers the horizon, so ascending horizon is a
    # valid dependency order (successors first); groups break ties stably
    return sorted(states, key=lambda s: (s.horizon, s.groups))


def reachable_union(roots, cap: int = REACHABLE_CAP) -> list[CouponSet]:
    """All states reachable from any root, topologically ordered.

    Ordering: every successor step_set(C, c) of a listed state C appears
    before C. Raises CapacityError when the state count exceeds cap.
    """
    seen: set[CouponSet] = set()
    frontier: list[CouponSet] = []
    for r in roots:
        if r not in seen:
            seen.add(r)
            frontier.append(r)
    while frontier:
        C = frontier.pop()
        if C.is_empty:
            continue
        options = [DEFAULT_GROUP, *C.non_default]
        for c in options:
            nxt = step_set(C, c)
            if nxt not in seen:
                seen.add(nxt)
                if len(seen) > cap:
                    raise CapacityError(
                        f"reachable state space exceeds cap {cap}", size=len(seen)
                    )
                frontier.append(nxt)
    return _topological(seen)


def enumerate_reachable(C: CouponSet, cap: int = REACHABLE_CAP) -> list[CouponSet]:
    """Reachable states of a single root; see reachable_union."""
    return reachable_union([C], cap)


def awareness_subset_count(C: CouponSet, group_level: bool = False) -> int:
    """Number of awareness subsets: prod(n_i + 1), or 2^k at group level."""
    count = 1
    for g in C.non_default:
        count *= 2 if group_level else g.n + 1
    return count


def enumerate_awareness_subsets(
    C: CouponSet, cap: int = AWARENESS_CAP, group_level: bool = False
) -> list[CouponSet]:
    """Every wallet the traveler might be aware of: 0..n_i coupons per group.

    At group level a group is noticed all-or-nothing (0 or n_i). The empty
    wallet and C itself are always included. Deterministic order: counts
    ascend lexicographically along the canonical group order.
    """
    total = awareness_subset_count(C, group_level)
    if total > cap:
        raise CapacityError(
            f"awareness family of size {total} exceeds cap {cap}", size=total
        )
    ranges = [((0, g.n) if group_level else range(g.n + 1)) for g in C.non_default]
    subsets = []
    for counts in itertools.product(*ranges):
        gs = [
            CouponGroup(g.v, g.T, m)
            for g, m in zip(C.non_default, counts)
            if m >= 1
        ]
        subsets.append(CouponSet((DEFAULT_GROUP, *gs)))
    return subsets


def subset_counts(C: CouponSet, C_a: CouponSet) -> tuple[int, ...]:
    """Per-group coupon counts of awareness subset C_a along C's group order.

    Domain error when C_a is not a subset of C (unknown group or count above
    the group's n).
    """
    keys = {g.key(): i for i, g in enumerate(C.non_default)}
    counts = [0] * len(keys)
    for g in C_a.non_default:
        i = keys.get(g.key())
        if i is None:
            raise DomainError(f"group {g} not present in {C.groups}")
        counts[i] = g.n
    for g, m in zip(C.non_default, counts):
        if m > g.n:
            raise DomainError(f"awareness count {m} exceeds group size of {g}")
    return tuple(counts)


def redemption_value(p: float, c: CouponGroup) -> float:
    """Cash value of redeeming one coupon from c at realized fare p: min(v, p)."""
    if not (p >= 0.0):
        raise ValidationError(f"fare must be >= 0, got {p}")
    if c.is_default:
        return 0.0
    return min(c.v, float(p))


def coupon_set_to_obj(C: CouponSet) -> list[dict]:
    """JSON-ready form: list of {v, T, n} in canonical order (default first)."""
    return [{"v": g.v, "T": g.T, "n": g.n} for g in C.groups]


def coupon_set_from_obj(obj) -> CouponSet:
    """Inverse of coupon_set_to_obj; tolerates a missing default entry."""
    if not isinstance(obj, list):
        raise ValidationError("coupon set JSON must be a list of {v, T, n} objects")
    groups = []
    for entry in obj:
        try:
            v, T, n = entry["v"], entry["T"], int(entry["n"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad coupon group entry {entry!r}") from exc
        if float(v) == 0.0:
            continue  # default group is implicit
        groups.append(CouponGroup(float(v), int(T), n))
    return make_coupon_set(groups)
