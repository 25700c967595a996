"""Complex linear chains with exact analytic gradients, Adam, checkpoints.

Every model here is a composition of complex-linear maps: an encoder, a
sequence of chain steps (fixed group operators and trainable intermediate
layers), and a decoder. Because the whole pipeline is linear, gradients are
cheap closed forms: for y = A x the adjoint passes are g_x = A^H g_y and
g_A = g_y x^H. Real and imaginary parts are treated as independent real
parameters throughout, which makes the maps trainable even though they are
not holomorphic in general.

Batches put samples in rows, so a layer L applies as Z @ L.T and the two
adjoints become G @ conj(L) and G.T @ conj(Z).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DimensionError, ParseError, ValidationError
from .operators import (
    COMPLEX_DIAGONAL,
    DENSE_COMPLEX,
    PERMUTATION_BLOCK,
    LatentOperator,
)

_EQCK_MAGIC = b"EQCK"
_EQCK_VERSION = 1


# ------------------------------------------------------------ small algebra


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {a.shape}")
    return a


def matvec(a, x) -> np.ndarray:
    a = _as_matrix(a, "matrix")
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != a.shape[1]:
        raise DimensionError(
            f"matvec shapes do not chain: {a.shape} with {x.shape}"
        )
    return a @ x


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a, "left factor")
    b = _as_matrix(b, "right factor")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shapes do not chain: {a.shape} with {b.shape}"
        )
    return a @ b


def conj_transpose(a) -> np.ndarray:
    return _as_matrix(a, "matrix").conj().T


# ------------------------------------------------------------- chain slots


class DiagSlot:
    """Multiply by a diagonal of unit phases; (B, N) for per-sample phases."""

    trainable = False

    def __init__(self, phases):
        self.phases = np.asarray(phases)

    def forward(self, z):
        return z * self.phases

    def backward(self, g):
        return g * np.conj(self.phases)


class PermSlot:
    """Permute coordinates: out[..., i] = in[..., src[i]]; (B, N) batched."""

    trainable = False

    def __init__(self, src):
        self.src = np.asarray(src, dtype=np.int64)
        self.inv = np.argsort(self.src, axis=-1)

    def forward(self, z):
        if self.src.ndim == 1:
            return z[..., self.src]
        return np.take_along_axis(z, self.src, axis=-1)

    def backward(self, g):
        if self.inv.ndim == 1:
            return g[..., self.inv]
        return np.take_along_axis(g, self.inv, axis=-1)


class Rot2Slot:
    """Rotate the first two coordinates by a per-sample angle, fix the rest."""

    trainable = False

    def __init__(self, cos, sin):
        self.cos = np.asarray(cos)
        self.sin = np.asarray(sin)

    def forward(self, z):
        out = z.copy()
        out[..., 0] = self.cos * z[..., 0] - self.sin * z[..., 1]
        out[..., 1] = self.sin * z[..., 0] + self.cos * z[..., 1]
        return out

    def backward(self, g):
        out = g.copy()
        out[..., 0] = self.cos * g[..., 0] + self.sin * g[..., 1]
        out[..., 1] = -self.sin * g[..., 0] + self.cos * g[..., 1]
        return out


class DenseOpSlot:
    """A fixed dense complex matrix (not trained)."""

    trainable = False

    def __init__(self, matrix):
        self.matrix = _as_matrix(matrix, "operator matrix")

    def forward(self, z):
        return z @ self.matrix.T

    def backward(self, g):
        return g @ np.conj(self.matrix)


class LayerSlot:
    """A trainable intermediate layer, referenced by index into the model."""

    trainable = True

    def __init__(self, index: int):
        self.index = int(index)


def slot_for_operator(op: LatentOperator):
    if op.form == PERMUTATION_BLOCK:
        return PermSlot(op.payload)
    if op.form == COMPLEX_DIAGONAL:
        return DiagSlot(op.payload)
    if op.form == DENSE_COMPLEX:
        return DenseOpSlot(op.payload)
    raise ValidationError(f"unknown operator form {op.form!r}")


# ---------------------------------------------------------- forward / back


@dataclass
class ChainTape:
    """Everything the backward pass needs: inputs and every chain stage."""

    x: np.ndarray
    stages: List[np.ndarray]
    slots: list
    recon_plain: np.ndarray
    recon_transformed: np.ndarray
    squeezed: bool = False


@dataclass
class Grads:
    encoder: np.ndarray
    decoder: np.ndarray
    intermediates: List[np.ndarray]

    def arrays(self) -> list:
        return [self.encoder, self.decoder] + list(self.intermediates)


def apply_slots(z, intermediates, slots) -> np.ndarray:
    """Push codes through a chain without touching encoder or decoder."""
    cur = np.asarray(z)
    for slot in slots:
        if isinstance(slot, LayerSlot):
            cur = cur @ intermediates[slot.index].T
        else:
            cur = slot.forward(cur)
    return cur


def chain_forward(x, encoder, decoder, intermediates, slots) -> ChainTape:
    """Encode, walk the chain, decode both the plain and chained codes."""
    x = np.asarray(x)
    if x.dtype.kind != "c":
        x = x.astype(np.float64)
    squeezed = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != encoder.shape[1]:
        raise DimensionError(
            f"input dim {xb.shape[1]} != encoder input dim {encoder.shape[1]}"
        )
    z = xb @ encoder.T
    stages = [z]
    cur = z
    for slot in slots:
        if isinstance(slot, LayerSlot):
            cur = cur @ intermediates[slot.index].T
        else:
            cur = slot.forward(cur)
        stages.append(cur)
    recon_plain = z @ decoder.T
    recon_transformed = cur @ decoder.T
    return ChainTape(xb, stages, list(slots), recon_plain, recon_transformed, squeezed)


def forward_chain(x, params, op_sequence):
    """Run a model over a chain spelled as operators and layer indices.

    op_sequence entries are either LatentOperator values (fixed) or integers
    naming one of the model's intermediate layers. Returns the plain
    reconstruction, the transformed-path reconstruction, and the tape.
    """
    slots = [
        op if isinstance(op, (DiagSlot, PermSlot, Rot2Slot, DenseOpSlot, LayerSlot))
        else LayerSlot(op) if isinstance(op, (int, np.integer))
        else slot_for_operator(op)
        for op in op_sequence
    ]
    tape = chain_forward(x, params.encoder, params.decoder, params.intermediates, slots)
    if tape.squeezed:
        return tape.recon_plain[0], tape.recon_transformed[0], tape
    return tape.recon_plain, tape.recon_transformed, tape


def chain_backward(tape: ChainTape, encoder, decoder, intermediates,
                   g_plain, g_transformed) -> Grads:
    """Adjoint pass through decode, the chain, and encode.

    Layers that the chain never touches get exactly zero gradient.
    """
    z = tape.stages[0]
    z_end = tape.stages[-1]
    g_plain = np.atleast_2d(np.asarray(g_plain))
    g_transformed = np.atleast_2d(np.asarray(g_transformed))
    g_decoder = g_plain.T @ np.conj(z) + g_transformed.T @ np.conj(z_end)
    g_inter = [np.zeros_like(layer) for layer in intermediates]
    g = g_transformed @ np.conj(decoder)
    for slot, stage_in in zip(reversed(tape.slots), reversed(tape.stages[:-1])):
        if isinstance(slot, LayerSlot):
            g_inter[slot.index] += g.T @ np.conj(stage_in)
            g = g @ np.conj(intermediates[slot.index])
        else:
            g = slot.backward(g)
    g_z = g + g_plain @ np.conj(decoder)
    g_encoder = g_z.T @ np.conj(tape.x)
    return Grads(g_encoder, g_decoder, g_inter)


def backward(tape: ChainTape, params, g_plain, g_transformed) -> Grads:
    return chain_backward(
        tape, params.encoder, params.decoder, params.intermediates,
        g_plain, g_transformed,
    )


# ------------------------------------------------------------------- loss


def _pair_residuals(recon_plain, recon_transformed, target_plain, target_transformed):
    r1 = np.atleast_2d(np.asarray(recon_plain))
    r2 = np.atleast_2d(np.asarray(recon_transformed))
    t1 = np.atleast_2d(np.asarray(target_plain, dtype=np.float64))
    t2 = np.atleast_2d(np.asarray(target_transformed, dtype=np.float64))
    if r1.shape != t1.shape or r2.shape != t2.shape:
        raise DimensionError(
            f"reconstruction/target shapes differ: {r1.shape} vs {t1.shape}, "
            f"{r2.shape} vs {t2.shape}"
        )
    return r1 - t1, r2 - t2


def l2_pair_loss(recon_plain, recon_transformed, target_plain, target_transformed) -> float:
    """Mean over the batch of the two per-pixel squared errors, summed.

    Complex reconstructions are compared to real targets with the full
    squared modulus, so any imaginary residue is penalized at weight one.
    """
    d1, d2 = _pair_residuals(
        recon_plain, recon_transformed, target_plain, target_transformed
    )
    per1 = np.mean(np.abs(d1) ** 2, axis=1)
    per2 = np.mean(np.abs(d2) ** 2, axis=1)
    return float(np.mean(per1 + per2))


def l2_pair_loss_grads(recon_plain, recon_transformed, target_plain, target_transformed):
    """Loss plus its gradient with respect to both reconstructions."""
    d1, d2 = _pair_residuals(
        recon_plain, recon_transformed, target_plain, target_transformed
    )
    batch, pixels = d1.shape
    loss = float(np.mean(np.mean(np.abs(d1) ** 2, axis=1) + np.mean(np.abs(d2) ** 2, axis=1)))
    scale = 2.0 / (pixels * batch)
    return loss, scale * d1, scale * d2


# ------------------------------------------------------------------- adam


@dataclass
class AdamState:
    """First and second moments, with re/im tracked as separate reals.

    m is complex like the parameter; v stacks the squared-gradient averages
    for the real parts (v[0]) and imaginary parts (v[1]).
    """

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros((2,) + p.shape, dtype=np.float64) for p in params]
        return cls(m=m, v=v, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: Optional[float] = None):
    """One update, in place. Raises if any parameter stops being finite."""
    if len(params) != len(state.m):
        raise DimensionError(
            f"optimizer tracks {len(state.m)} arrays, got {len(params)}"
        )
    rate = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g)
        m += (1.0 - state.beta1) * (g - m)
        v[0] += (1.0 - state.beta2) * (g.real ** 2 - v[0])
        v[1] += (1.0 - state.beta2) * (g.imag ** 2 - v[1])
        mh = m / bc1
        p.real -= rate * mh.real / (np.sqrt(v[0] / bc2) + state.eps)
        p.imag -= rate * mh.imag / (np.sqrt(v[1] / bc2) + state.eps)
        if not np.isfinite(p.view(np.float64)).all():
            raise FloatingPointError(
                "parameter array left the finite range during an optimizer step"
            )
    return params, state


# ------------------------------------------------------------- checkpoints


def save_checkpoint(arrays: Sequence[np.ndarray], meta: dict, path) -> None:
    """Write complex matrices plus a canonical-JSON sidecar, atomically.

    Payload is little-endian float64 interleaved re/im in row-major order,
    which makes byte-identical files whenever the arrays are bit-identical.
    """
    arrays = [np.ascontiguousarray(a, dtype=np.complex128) for a in arrays]
    for a in arrays:
        if a.ndim != 2:
            raise DimensionError(f"checkpoints hold 2-d arrays, got {a.shape}")
    parts = [struct.pack("<4sHH", _EQCK_MAGIC, _EQCK_VERSION, len(arrays))]
    for a in arrays:
        parts.append(struct.pack("<II", a.shape[0], a.shape[1]))
    for a in arrays:
        flat = np.empty(a.size * 2, dtype="<f8")
        flat[0::2] = a.real.ravel()
        flat[1::2] = a.imag.ravel()
        parts.append(flat.tobytes())
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)
    sidecar = path + ".json"
    blob = (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode()
    tmp = sidecar + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, sidecar)


def load_checkpoint(path):
    """Read back (arrays, meta); meta is None when the sidecar is missing."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ParseError("checkpoint too short for a header", offset=len(blob))
    magic, version, n_layers = struct.unpack_from("<4sHH", blob, 0)
    if magic != _EQCK_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != _EQCK_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    off = 8
    shapes = []
    for _ in range(n_layers):
        if off + 8 > len(blob):
            raise ParseError("truncated shape table", offset=off)
        shapes.append(struct.unpack_from("<II", blob, off))
        off += 8
    arrays = []
    for rows, cols in shapes:
        count = rows * cols * 2
        if off + 8 * count > len(blob):
            raise ParseError(
                f"truncated payload for a {rows}x{cols} array", offset=off
            )
        flat = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        arr = (flat[0::2] + 1j * flat[1::2]).reshape(rows, cols)
        arrays.append(arr)
        off += 8 * count
    if off != len(blob):
        raise ParseError(f"{len(blob) - off} trailing bytes", offset=off)
    meta = None
    sidecar = os.fspath(path) + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    return arrays, meta
