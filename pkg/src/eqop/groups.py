"""Finite groups behind the latent operators.

Covers single cyclic groups, direct products (commuting translations), and
semi-direct products where a cyclic rotation factor acts on a pair of
translation factors through an explicit lookup table. The table-based action
keeps the composition law totally concrete: any automorphism action can be
declared, and the quarter-turn action ships as a preset.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import InconsistencyError, ValidationError

SINGLE_CYCLIC = "single-cyclic"
DIRECT_PRODUCT = "direct-product"
SEMI_DIRECT = "semi-direct"

_KINDS = (SINGLE_CYCLIC, DIRECT_PRODUCT, SEMI_DIRECT)


@dataclass(frozen=True)
class GroupElement:
    """Group element stored as one index per factor, index i in [0, K_i)."""

    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class GroupSpec:
    """Declaration of a finite group.

    factors: cyclic orders (K_1, ..., K_m).
    kind: one of single-cyclic, direct-product, semi-direct.
    action: semi-direct only; action[j][k][kp] is the image of the translation
        pair (k, kp) under the automorphism of rotation index j.
    """

    factors: tuple
    kind: str
    action: Optional[tuple] = None

    def __post_init__(self):
        factors = tuple(int(k) for k in self.factors)
        object.__setattr__(self, "factors", factors)
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown group kind {self.kind!r}")
        if not factors or any(k < 1 for k in factors):
            raise ValidationError(f"factors must all be >= 1, got {factors}")
        if self.kind == SINGLE_CYCLIC and len(factors) != 1:
            raise ValidationError("single-cyclic groups take exactly one factor")
        if self.kind == SEMI_DIRECT:
            if len(factors) != 3:
                raise ValidationError(
                    "semi-direct groups take exactly three factors (K, K', |H|)"
                )
            if self.action is None:
                raise ValidationError("semi-direct groups require an action table")
            action = _normalize_action(self.action, factors)
            _validate_action(action, factors)
            object.__setattr__(self, "action", action)
        elif self.action is not None:
            raise ValidationError("only semi-direct groups carry an action table")

    @property
    def order(self) -> int:
        n = 1
        for k in self.factors:
            n *= k
        return n

    def identity(self) -> GroupElement:
        return GroupElement((0,) * len(self.factors))


def _normalize_action(action, factors):
    """Coerce a nested-sequence action table into nested tuples of int pairs."""
    K, Kp, H = factors
    try:
        out = []
        for j in range(H):
            rows = []
            for k in range(K):
                row = []
                for kp in range(Kp):
                    a, b = action[j][k][kp]
                    row.append((int(a), int(b)))
                rows.append(tuple(row))
            out.append(tuple(rows))
        return tuple(out)
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed action table: {exc}") from exc


def _validate_action(action, factors):
    K, Kp, H = factors
    pairs = [(k, kp) for k in range(K) for kp in range(Kp)]

    def apply(j, pair):
        a, b = action[j][pair[0]][pair[1]]
        if not (0 <= a < K and 0 <= b < Kp):
            raise ValidationError(f"action[{j}]{pair} = {(a, b)} out of range")
        return (a, b)

    for j in range(H):
        images = {apply(j, p) for p in pairs}
        if len(images) != len(pairs):
            raise ValidationError(f"action[{j}] is not a bijection")
    for p in pairs:
        if apply(0, p) != p:
            raise ValidationError("action[0] must be the identity map")
    # h0^{j1} h0^{j2} = h0^{j1+j2}: the table must realize a cyclic H-action.
    for j1 in range(H):
        for j2 in range(H):
            j12 = (j1 + j2) % H
            for p in pairs:
                if apply(j1, apply(j2, p)) != apply(j12, p):
                    raise ValidationError(
                        f"action[{j1}] o action[{j2}] != action[{j12}]"
                    )
    # Each action[j] must be an automorphism of Z_K x Z_K' (additive).
    for j in range(H):
        for p in pairs:
            for q in pairs:
                s = ((p[0] + q[0]) % K, (p[1] + q[1]) % Kp)
                ip, iq = apply(j, p), apply(j, q)
                expect = ((ip[0] + iq[0]) % K, (ip[1] + iq[1]) % Kp)
                if apply(j, s) != expect:
                    raise ValidationError(
                        f"action[{j}] is not additive at {p} + {q}"
                    )


def action_from_generator(
    K: int, Kp: int, H: int, turn: Callable[[int, int], tuple]
) -> tuple:
    """Build an action table from one generating automorphism.

    action[j] applies `turn` j times; `turn` must have order dividing H.
    """
    table = []
    current = {(k, kp): (k, kp) for k in range(K) for kp in range(Kp)}
    for j in range(H):
        table.append(
            tuple(
                tuple(current[(k, kp)] for kp in range(Kp)) for k in range(K)
            )
        )
        current = {p: turn(*current[p]) for p in current}
    for p, image in current.items():
        if image != p:
            raise ValidationError(
                f"generator has order not dividing H={H}: turn^{H}{p} = {image}"
            )
    return tuple(table)


def quarter_turn_spec(K: int, Kp: int) -> GroupSpec:
    """Semi-direct spec where a 4-element rotation factor quarter-turns the plane.

    One turn maps (k, k') to (-k' mod K, k); this is an automorphism of
    Z_K x Z_K' only when K = K'.
    """
    if K != Kp:
        raise ValidationError(f"quarter-turn action needs K = K', got {K} != {Kp}")
    action = action_from_generator(K, Kp, 4, lambda k, kp: ((-kp) % K, k))
    return GroupSpec((K, Kp, 4), SEMI_DIRECT, action)


def validate_element(g: GroupElement, spec: GroupSpec) -> None:
    if len(g.indices) != len(spec.factors):
        raise ValidationError(
            f"element {g.indices} has {len(g.indices)} indices, "
            f"spec has {len(spec.factors)} factors"
        )
    for i, (idx, k) in enumerate(zip(g.indices, spec.factors)):
        if not 0 <= idx < k:
            raise ValidationError(f"index {idx} out of range [0, {k}) at factor {i}")


def identity(spec: GroupSpec) -> GroupElement:
    return spec.identity()


def elements(spec: GroupSpec) -> Iterator[GroupElement]:
    """All group elements in lexicographic index order."""
    for combo in itertools.product(*(range(k) for k in spec.factors)):
        yield GroupElement(combo)


def compose(g: GroupElement, h: GroupElement, spec: GroupSpec) -> GroupElement:
    """Group product g * h under the composition law picked by ``spec.kind``."""
    validate_element(g, spec)
    validate_element(h, spec)
    if spec.kind in (SINGLE_CYCLIC, DIRECT_PRODUCT):
        return GroupElement(
            tuple((a + b) % k for a, b, k in zip(g.indices, h.indices, spec.factors))
        )
    K, Kp, H = spec.factors
    k1, kp1, j1 = g.indices
    k2, kp2, j2 = h.indices
    # (a1, h1)(a2, h2) = (a1 + h1(a2), h1 h2)
    t = spec.action[j1][k2][kp2]
    return GroupElement(((k1 + t[0]) % K, (kp1 + t[1]) % Kp, (j1 + j2) % H))


def inverse(g: GroupElement, spec: GroupSpec) -> GroupElement:
    validate_element(g, spec)
    if spec.kind in (SINGLE_CYCLIC, DIRECT_PRODUCT):
        return GroupElement(
            tuple((-a) % k for a, k in zip(g.indices, spec.factors))
        )
    K, Kp, H = spec.factors
    k1, kp1, j = g.indices
    # (a, h)^-1 = (h^-1(-a), h^-1)
    jinv = (-j) % H
    t = spec.action[jinv][(-k1) % K][(-kp1) % Kp]
    return GroupElement((t[0], t[1], jinv))


def dual_action(spec: GroupSpec) -> tuple:
    """Action of the rotation factor on character indices of Z_K x Z_K'.

    The character chi_(x1,y1)(k, k') = exp(2i pi (x1 k / K + y1 k' / K'))
    transforms under h by precomposition with h^-1. The returned table maps
    rotation index j to a dict {(x1, y1): (x1', y1')}. Computed with exact
    rational arithmetic from the action on the two generators.
    """
    if spec.kind != SEMI_DIRECT:
        raise ValidationError("dual_action is defined for semi-direct specs")
    K, Kp, H = spec.factors
    tables = []
    for j in range(H):
        inv = spec.action[(-j) % H]
        g10 = inv[1 % K][0]
        g01 = inv[0][1 % Kp]
        table = {}
        for x1 in range(K):
            for y1 in range(Kp):
                q1 = Fraction(x1 * g10[0], K) + Fraction(y1 * g10[1], Kp)
                q2 = Fraction(x1 * g01[0], K) + Fraction(y1 * g01[1], Kp)
                fx, fy = q1 * K, q2 * Kp
                if fx.denominator != 1 or fy.denominator != 1:
                    raise InconsistencyError(
                        f"action[{j}] has no dual on the character lattice "
                        f"at index ({x1}, {y1})"
                    )
                table[(x1, y1)] = (int(fx) % K, int(fy) % Kp)
        if len(set(table.values())) != K * Kp:
            raise InconsistencyError(f"dual of action[{j}] is not a bijection")
        tables.append(table)
    return tuple(tables)


def character_orbits(spec: GroupSpec) -> list:
    """Orbits of the nonzero character indices under the dual rotation action.

    Each orbit is returned as a sorted tuple of (x1, y1) pairs; the orbit of
    (0, 0) is excluded. Raises when any orbit does not have size |H|, since
    the induced-representation block layout requires a trivial stabilizer.
    """
    K, Kp, H = spec.factors
    dual = dual_action(spec)
    remaining = {(x, y) for x in range(K) for y in range(Kp)} - {(0, 0)}
    orbits = []
    while remaining:
        start = min(remaining)
        orbit = {start}
        frontier = [start]
        while frontier:
            u = frontier.pop()
            for j in range(H):
                v = dual[j][u]
                if v not in orbit:
                    orbit.add(v)
                    frontier.append(v)
        if len(orbit) != H:
            raise InconsistencyError(
                f"character orbit of {start} has size {len(orbit)}, expected "
                f"|H| = {H}; the action does not act freely on nonzero characters"
            )
        orbits.append(tuple(sorted(orbit)))
        remaining -= orbit
    return sorted(orbits)


def orbit_representatives(spec: GroupSpec) -> list:
    """One (x1, y1) per nonzero character orbit: the lexicographic minimum."""
    reps = [orbit[0] for orbit in character_orbits(spec)]
    K, Kp, H = spec.factors
    expected = (K * Kp - 1) // H
    if (K * Kp - 1) % H != 0 or len(reps) != expected:
        raise InconsistencyError(
            f"got {len(reps)} orbits, expected (|A|-1)/|H| = {expected}"
        )
    return reps


def orbit(x, action: Callable, spec: GroupSpec, dedup_tol: float = 1e-9) -> list:
    """Distinct images {g . x : g in G} under an arbitrary image action.

    `action(x, g)` must return the transformed sample; samples are compared
    as arrays with an L-infinity threshold of dedup_tol.
    """
    kept = []
    kept_arrays = []
    for g in elements(spec):
        y = action(x, g)
        arr = np.asarray(y, dtype=float)
        if not any(
            arr.shape == prev.shape and np.max(np.abs(arr - prev)) <= dedup_tol
            for prev in kept_arrays
        ):
            kept.append(y)
            kept_arrays.append(arr)
    return kept
