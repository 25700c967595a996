"""Latent-space operator constructions and their character-theoretic checks.

Every builder here returns a LatentOperator that is an exact homomorphic image
of its group: op(g) . op(h) = op(g h). The character table (the trace per
group element) certifies which representation a construction realizes; the
distributed shift constructions all reproduce the regular-representation
character {identity: N, everything else: 0}, while the 2x2-block rotation
operator provably cannot.
"""
from __future__ import annotations

import cmath
import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, InconsistencyError, ParseError, UnsupportedError, ValidationError
from .groups import (
    SEMI_DIRECT,
    GroupElement,
    GroupSpec,
    elements,
    orbit_representatives,
    validate_element,
)

PERMUTATION_BLOCK = "permutation-block"
COMPLEX_DIAGONAL = "complex-diagonal"
DENSE_COMPLEX = "dense-complex"

_FORM_CODES = {PERMUTATION_BLOCK: 0, COMPLEX_DIAGONAL: 1, DENSE_COMPLEX: 2}
_CODE_FORMS = {v: k for k, v in _FORM_CODES.items()}

_MAGIC = b"EQOP"
_VERSION = 1


@dataclass(frozen=True)
class LatentOperator:
    """A linear operator on the latent space, in one of three storage forms.

    permutation-block: payload is an int array src with out[i] = in[src[i]].
    complex-diagonal:  payload is the diagonal (unit-modulus complex entries).
    dense-complex:     payload is the full (dim, dim) complex matrix.
    """

    form: str
    dim: int
    payload: np.ndarray
    orders: tuple = ()
    group_element: Optional[GroupElement] = None

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Apply to a vector or to a batch along the last axis."""
        z = np.asarray(z)
        if z.shape[-1] != self.dim:
            raise DimensionError(
                f"operator dim {self.dim} does not match input {z.shape[-1]}"
            )
        if self.form == PERMUTATION_BLOCK:
            return z[..., self.payload]
        if self.form == COMPLEX_DIAGONAL:
            return z * self.payload
        return z @ self.payload.T

    def matrix(self) -> np.ndarray:
        """Dense complex matrix form (for verification-scale dims)."""
        if self.form == PERMUTATION_BLOCK:
            m = np.zeros((self.dim, self.dim), dtype=complex)
            m[np.arange(self.dim), self.payload] = 1.0
            return m
        if self.form == COMPLEX_DIAGONAL:
            return np.diag(self.payload.astype(complex))
        return self.payload.astype(complex)

    def trace(self) -> complex:
        if self.form == PERMUTATION_BLOCK:
            return complex(int(np.count_nonzero(self.payload == np.arange(self.dim))))
        if self.form == COMPLEX_DIAGONAL:
            return complex(np.sum(self.payload))
        return complex(np.trace(self.payload))

    def conj_transpose_apply(self, z: np.ndarray) -> np.ndarray:
        """Apply the conjugate transpose (the inverse, for unitary forms)."""
        z = np.asarray(z)
        if self.form == PERMUTATION_BLOCK:
            inv = np.empty_like(self.payload)
            inv[self.payload] = np.arange(self.dim)
            return z[..., inv]
        if self.form == COMPLEX_DIAGONAL:
            return z * np.conj(self.payload)
        return z @ np.conj(self.payload)


def _check_shift_args(K: int, N: int, k: int) -> None:
    if K < 1:
        raise ValidationError(f"cyclic order K must be >= 1, got {K}")
    if not 0 <= k < K:
        raise ValidationError(f"shift index k={k} out of range [0, {K})")
    if N < 1:
        raise DimensionError(f"latent dimension must be >= 1, got {N}")


def shift_operator_perm(K: int, N: int, k: int) -> LatentOperator:
    """Block-diagonal permutation shift: N/K copies of the K-cycle to the k-th power.

    Within each block the generator M sends basis vector e_i to e_{i+1 mod K},
    so (M^k v)[i] = v[(i - k) mod K].
    """
    _check_shift_args(K, N, k)
    if N % K != 0:
        raise DimensionError(f"permutation shift needs K | N, got K={K}, N={N}")
    idx = np.arange(N)
    base = idx - (idx % K)
    src = base + ((idx % K) - k) % K
    return LatentOperator(
        PERMUTATION_BLOCK, N, src, orders=(K,), group_element=GroupElement((k,))
    )


def shift_operator_complex(K: int, N: int, k: int) -> LatentOperator:
    """Diagonal shift with entries omega^(k (n mod K)), omega = e^(2 i pi / K).

    K does not need to divide N; the final cycle is simply truncated, which
    perturbs the trace for k != 0 by strictly less than K in modulus.
    """
    _check_shift_args(K, N, k)
    n = np.arange(N)
    diag = np.exp(2j * np.pi * k * (n % K) / K)
    return LatentOperator(
        COMPLEX_DIAGONAL, N, diag, orders=(K,), group_element=GroupElement((k,))
    )


def disentangled_operator(K: int, N: int, k: int) -> LatentOperator:
    """Planar rotation by 2 pi k / K on the first two latent dimensions.

    The remaining N-2 dimensions are untouched, so the trace is
    N - 2 + 2 cos(2 pi k / K): never 0 for large N, which is exactly why this
    operator cannot realize the regular-representation character.
    """
    _check_shift_args(K, N, k)
    if N < 2:
        raise DimensionError(f"rotation block needs N >= 2, got N={N}")
    theta = 2.0 * np.pi * k / K
    m = np.eye(N, dtype=complex)
    m[0, 0] = np.cos(theta)
    m[0, 1] = -np.sin(theta)
    m[1, 0] = np.sin(theta)
    m[1, 1] = np.cos(theta)
    return LatentOperator(
        DENSE_COMPLEX, N, m, orders=(K,), group_element=GroupElement((k,))
    )


def tensor_product_operator(K: int, Kp: int, N: int, k: int, kp: int) -> LatentOperator:
    """Diagonal operator for a commuting pair of cyclic factors.

    Each K*K' cycle carries the entry omega1^(k i) * omega2^(k' j) at position
    i*K' + j (the K' index varies fastest); the cycle repeats N/(K K') times.
    """
    _check_shift_args(K, N, k)
    _check_shift_args(Kp, N, kp)
    if N % (K * Kp) != 0:
        raise DimensionError(
            f"tensor-product operator needs K*K' | N, got {K}*{Kp} and N={N}"
        )
    i = np.arange(K)[:, None]
    j = np.arange(Kp)[None, :]
    cycle = np.exp(2j * np.pi * (k * i / K + kp * j / Kp)).reshape(-1)
    diag = np.tile(cycle, N // (K * Kp))
    return LatentOperator(
        COMPLEX_DIAGONAL, N, diag, orders=(K, Kp), group_element=GroupElement((k, kp))
    )


def fourier_conjugation_matrices(H_order: int):
    """The DFT pair (B, C) with B_rc = e^(-2 i pi r c / H), C_rc = e^(+...).

    (1/H) B psi_j C equals the cyclic coset permutation P_j used in the
    induced representation, and (1/H) B C is the identity.
    """
    if H_order < 1:
        raise ValidationError(f"H must be >= 1, got {H_order}")
    r = np.arange(H_order)[:, None]
    c = np.arange(H_order)[None, :]
    B = np.exp(-2j * np.pi * r * c / H_order)
    C = np.exp(+2j * np.pi * r * c / H_order)
    return B, C


def coset_permutation(H_order: int, j: int) -> np.ndarray:
    """Matrix of the rotation generator power h0^j on coset representatives.

    Representatives are ordered h_m = h0^m. Left multiplication by h0^j sends
    representative h_c to h_{c+j}, so the matrix has a 1 at (m, c) whenever
    m = (c + j) mod H.
    """
    if not 0 <= j < H_order:
        raise ValidationError(f"rotation index {j} out of range [0, {H_order})")
    P = np.zeros((H_order, H_order))
    cols = np.arange(H_order)
    P[(cols + j) % H_order, cols] = 1.0
    return P


def _character_phase(rep, translation, K, Kp):
    x1, y1 = rep
    t0, t1 = translation
    return cmath.exp(2j * cmath.pi * (x1 * t0 / K + y1 * t1 / Kp))


def induced_rep_operator(spec: GroupSpec, g: GroupElement, N: int) -> LatentOperator:
    """Regular-character representation of a semi-direct group, block by block.

    The |A||H|-dimensional block decomposes as the |H| one-dimensional
    characters of the rotation quotient followed by, per nonzero character
    orbit representative r, |H| copies of the |H| x |H| block M_r(a) P_h with
    M_r(a)[m, m] = chi_r(h_m^-1(a)). Odd K and K' keep the orbit stabilizers
    trivial, which the block sizing requires.
    """
    if spec.kind != SEMI_DIRECT:
        raise UnsupportedError("induced representation needs a semi-direct spec")
    K, Kp, H = spec.factors
    if K % 2 == 0 or Kp % 2 == 0:
        raise UnsupportedError(
            f"induced representation supports odd K and K' only, got ({K}, {Kp})"
        )
    validate_element(g, spec)
    D = K * Kp * H
    if N % D != 0:
        raise DimensionError(f"need |A||H| = {D} to divide N = {N}")
    k, kp, j = g.indices
    reps = orbit_representatives(spec)
    if H + len(reps) * H * H != D:
        raise InconsistencyError(
            f"degree sum {H + len(reps) * H * H} != |A||H| = {D}"
        )
    block = np.zeros((D, D), dtype=complex)
    for n in range(H):
        block[n, n] = cmath.exp(2j * cmath.pi * n * j / H)
    P = coset_permutation(H, j)
    pos = H
    for r in reps:
        diag = np.array(
            [
                _character_phase(r, spec.action[(-m) % H][k][kp], K, Kp)
                for m in range(H)
            ]
        )
        sub = diag[:, None] * P
        for _ in range(H):
            block[pos : pos + H, pos : pos + H] = sub
            pos += H
    full = np.kron(np.eye(N // D), block) if N != D else block
    return LatentOperator(
        DENSE_COMPLEX, N, full, orders=(K, Kp, H), group_element=g
    )


def analytic_L1_translations(K: int, Kp: int, N: int) -> LatentOperator:
    """Fixed permutation intertwining the stacked pair of diagonal shifts.

    Within each K*K' block the perfect shuffle pi(n) = (n mod K) K' + n div K
    satisfies psi_y(k') . P . psi_x(k) = tensor(k, k') . P for every (k, k'):
    stacking the two single-factor diagonals around P acts exactly like the
    two-factor diagonal in the shuffled basis.
    """
    if K < 1 or Kp < 1:
        raise ValidationError(f"cyclic orders must be >= 1, got ({K}, {Kp})")
    if N % (K * Kp) != 0:
        raise DimensionError(f"need K*K' | N, got {K}*{Kp} and N={N}")
    block = K * Kp
    m = np.arange(N)
    base = m - (m % block)
    local = m % block
    # src is the inverse shuffle: row pi(n) picks input n.
    src = base + (local % Kp) * K + local // Kp
    return LatentOperator(PERMUTATION_BLOCK, N, src, orders=(K, Kp))


def character_table(
    builder: Callable[[GroupElement], LatentOperator], spec: GroupSpec, N: int
) -> dict:
    """Trace of builder(g) for every group element."""
    table = {}
    for g in elements(spec):
        op = builder(g)
        if op.dim != N:
            raise DimensionError(f"builder produced dim {op.dim}, expected {N}")
        table[g] = op.trace()
    return table


@dataclass(frozen=True)
class CharacterMatch:
    """Result of comparing two character tables entry by entry."""

    ok: bool
    max_deviation: float
    worst_element: Optional[GroupElement]


def verify_isomorphic(tableA: dict, tableB: dict, tol: float) -> CharacterMatch:
    """Equal characters (within tol) certify isomorphic representations."""
    if set(tableA) != set(tableB):
        raise ValidationError("character tables are over different element sets")
    worst, dev = None, 0.0
    for g, a in tableA.items():
        d = abs(complex(a) - complex(tableB[g]))
        if d > dev:
            worst, dev = g, d
    return CharacterMatch(ok=dev <= tol, max_deviation=dev, worst_element=worst)


def regular_character(spec: GroupSpec, N: int) -> dict:
    """The target table {identity: N, every other element: 0}."""
    table = {g: 0j for g in elements(spec)}
    table[spec.identity()] = complex(N)
    return table


def character_table_json(table: dict) -> list:
    """JSON-ready rows {element, trace_re, trace_im}, sorted by element."""
    rows = []
    for g in sorted(table, key=lambda e: e.indices):
        tr = complex(table[g])
        rows.append(
            {
                "element": list(g.indices),
                "trace_re": tr.real,
                "trace_im": tr.imag,
            }
        )
    return rows


def save_character_table(table: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(character_table_json(table), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_operator(op: LatentOperator, path) -> None:
    """Write the binary operator container (little-endian throughout)."""
    header = struct.pack(
        "<4sHBI", _MAGIC, _VERSION, _FORM_CODES[op.form], op.dim
    )
    header += struct.pack("<H", len(op.orders))
    header += struct.pack(f"<{len(op.orders)}I", *op.orders) if op.orders else b""
    if op.form == PERMUTATION_BLOCK:
        payload = op.payload.astype("<u4").tobytes()
    else:
        flat = np.ascontiguousarray(op.payload, dtype=complex).reshape(-1)
        pairs = np.empty(2 * flat.size, dtype="<f8")
        pairs[0::2] = flat.real
        pairs[1::2] = flat.imag
        payload = pairs.tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_operator(path) -> LatentOperator:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 11:
        raise ParseError("truncated operator header", offset=len(blob))
    magic, version, code, dim = struct.unpack_from("<4sHBI", blob, 0)
    if magic != _MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != _VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if code not in _CODE_FORMS:
        raise ParseError(f"unknown form code {code}", offset=6)
    off = 11
    (n_orders,) = struct.unpack_from("<H", blob, off)
    off += 2
    orders = struct.unpack_from(f"<{n_orders}I", blob, off)
    off += 4 * n_orders
    form = _CODE_FORMS[code]
    if form == PERMUTATION_BLOCK:
        want = 4 * dim
        if len(blob) - off != want:
            raise ParseError(
                f"payload is {len(blob) - off} bytes, expected {want}", offset=off
            )
        payload = np.frombuffer(blob, dtype="<u4", count=dim, offset=off).astype(
            np.int64
        )
    else:
        count = dim if form == COMPLEX_DIAGONAL else dim * dim
        want = 16 * count
        if len(blob) - off != want:
            raise ParseError(
                f"payload is {len(blob) - off} bytes, expected {want}", offset=off
            )
        pairs = np.frombuffer(blob, dtype="<f8", count=2 * count, offset=off)
        payload = pairs[0::2] + 1j * pairs[1::2]
        if form == DENSE_COMPLEX:
            payload = payload.reshape(dim, dim)
    return LatentOperator(form, dim, payload, orders=tuple(int(o) for o in orders))
