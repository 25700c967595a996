"""Linear complex autoencoders trained to commute with latent group actions.

Three variants share one engine. The supervised variant reads the true
transformation index for every pair and applies the matching fixed latent
operator between encode and decode. The weakly supervised variant never
sees the index: it scores every candidate cyclic shift by phase correlation
between the two codes and weights the candidate reconstructions softly.
The stacked variant handles product groups with one diagonal shift block
per factor and trainable mixing layers between them.

Everything is complex-linear, so the latent operators are exactly the
cyclic/diagonal/rotation operators from the operator catalog, batched over
samples.
"""
from __future__ import annotations

import numpy as np

from dataclasses import dataclass
from typing import List, Optional, Sequence

from .errors import (
    DimensionError,
    ParseError,
    UnsupportedError,
    ValidationError,
)
from .imaging import DatasetBundle, ImageGrid
from .numkit import (
    AdamState,
    DiagSlot,
    LayerSlot,
    PermSlot,
    Rot2Slot,
    adam_step,
    apply_slots,
    chain_backward,
    chain_forward,
    l2_pair_loss_grads,
    load_checkpoint,
    save_checkpoint,
)
from .operators import shift_operator_complex, shift_operator_perm

SUPERVISED = "supervised"
WEAK = "weak"
STACKED = "stacked"
VARIANTS = (SUPERVISED, WEAK, STACKED)

SHIFT_PERM = "shift-perm"
SHIFT_COMPLEX = "shift-complex"
DISENTANGLED = "disentangled"
OPERATOR_FAMILIES = (SHIFT_PERM, SHIFT_COMPLEX, DISENTANGLED)

_SCORE_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    operator: str = SHIFT_PERM
    orders: tuple = (10,)
    latent_dim: int = 800
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    k_latent: int = 10
    temperature: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(int(k) for k in self.orders))

    def to_dict(self) -> dict:
        kind = "single-cyclic" if len(self.orders) == 1 else "direct-product"
        return {
            "variant": self.variant,
            "operator": self.operator,
            "group": {"kind": kind, "orders": list(self.orders)},
            "latent_dim": self.latent_dim,
            "lr": self.lr,
            "batch": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "weak": {"k_latent": self.k_latent, "temperature": self.temperature},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        group = data.get("group", {})
        weak = data.get("weak", {})
        return cls(
            variant=data["variant"],
            operator=data.get("operator", SHIFT_PERM),
            orders=tuple(group.get("orders", data.get("orders", (10,)))),
            latent_dim=int(data.get("latent_dim", 800)),
            lr=float(data.get("lr", 1e-3)),
            batch_size=int(data.get("batch", data.get("batch_size", 16))),
            epochs=int(data.get("epochs", 20)),
            seed=int(data.get("seed", 0)),
            k_latent=int(weak.get("k_latent", data.get("k_latent", 10))),
            temperature=float(weak.get("temperature", data.get("temperature", 0.1))),
        )


@dataclass
class ModelParams:
    encoder: np.ndarray
    decoder: np.ndarray
    intermediates: List[np.ndarray]
    variant: str
    config: TrainConfig

    def arrays(self) -> list:
        return [self.encoder, self.decoder] + list(self.intermediates)

    @property
    def pixel_dim(self) -> int:
        return self.encoder.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder.shape[0]


def validate_config(config: TrainConfig, data_factors: Optional[tuple] = None) -> None:
    if config.variant not in VARIANTS:
        raise ValidationError(
            f"unknown variant {config.variant!r}, expected one of {VARIANTS}"
        )
    if config.operator not in OPERATOR_FAMILIES:
        raise ValidationError(
            f"unknown operator family {config.operator!r}, "
            f"expected one of {OPERATOR_FAMILIES}"
        )
    if config.latent_dim < 1:
        raise ValidationError(f"latent_dim must be >= 1, got {config.latent_dim}")
    if config.lr <= 0:
        raise ValidationError(f"lr must be positive, got {config.lr}")
    if config.batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {config.batch_size}")
    if config.epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {config.epochs}")
    if any(k < 1 for k in config.orders):
        raise ValidationError(f"orders must be >= 1, got {config.orders}")

    if config.variant == SUPERVISED:
        if len(config.orders) != 1:
            raise UnsupportedError(
                "the supervised variant drives a single cyclic factor, "
                f"got orders {config.orders}"
            )
        if config.operator == SHIFT_PERM and config.latent_dim % config.orders[0]:
            raise DimensionError(
                f"permutation shifts need the cyclic order {config.orders[0]} "
                f"to divide latent_dim {config.latent_dim}"
            )
        if config.operator == DISENTANGLED and config.latent_dim < 2:
            raise DimensionError(
                "the planar-rotation operator needs latent_dim >= 2"
            )
    elif config.variant == WEAK:
        if config.k_latent < 1:
            raise ValidationError(f"k_latent must be >= 1, got {config.k_latent}")
        if config.temperature <= 0:
            raise ValidationError(
                f"temperature must be positive, got {config.temperature}"
            )
        if data_factors is not None and len(data_factors) != 1:
            raise UnsupportedError(
                "weak supervision infers one cyclic factor; the dataset "
                f"carries {len(data_factors)}"
            )
    elif config.variant == STACKED:
        if len(config.orders) not in (2, 3):
            raise UnsupportedError(
                f"stacked chains support 2 or 3 factors, got {len(config.orders)}"
            )

    if (
        config.variant in (SUPERVISED, STACKED)
        and data_factors is not None
        and tuple(data_factors) != config.orders
    ):
        raise ValidationError(
            f"model orders {config.orders} do not match the dataset's "
            f"transformation orders {tuple(data_factors)}"
        )


# ------------------------------------------------------- operator families


class _PermFamily:
    def __init__(self, order: int, dim: int):
        self.table = np.stack(
            [shift_operator_perm(order, dim, k).payload for k in range(order)]
        )

    def slot(self, kvec):
        return PermSlot(self.table[np.asarray(kvec)])


class _DiagFamily:
    def __init__(self, order: int, dim: int):
        self.table = np.stack(
            [shift_operator_complex(order, dim, k).payload for k in range(order)]
        )

    def slot(self, kvec):
        return DiagSlot(self.table[np.asarray(kvec)])


class _Rot2Family:
    def __init__(self, order: int, dim: int):
        if dim < 2:
            raise DimensionError("planar rotations need at least two dimensions")
        ang = 2.0 * np.pi * np.arange(order) / order
        self.cos = np.cos(ang)
        self.sin = np.sin(ang)

    def slot(self, kvec):
        kvec = np.asarray(kvec)
        return Rot2Slot(self.cos[kvec], self.sin[kvec])


_FAMILY_BUILDERS = {
    SHIFT_PERM: _PermFamily,
    SHIFT_COMPLEX: _DiagFamily,
    DISENTANGLED: _Rot2Family,
}


class _ChainSpec:
    """Per-variant recipe turning parameter rows into slot sequences."""

    def __init__(self, config: TrainConfig):
        latent = config.latent_dim
        if config.variant == SUPERVISED:
            self.families = [_FAMILY_BUILDERS[config.operator](config.orders[0], latent)]
            self.n_intermediates = 0
        elif config.variant == WEAK:
            self.families = [_DiagFamily(config.k_latent, latent)]
            self.n_intermediates = 0
        else:
            self.families = [_DiagFamily(k, latent) for k in config.orders]
            self.n_intermediates = len(config.orders) - 1

    def slots(self, kmat) -> list:
        """Slot sequence for a batch; kmat is (batch, n_factors) or (n_factors,)."""
        kmat = np.atleast_2d(np.asarray(kmat, dtype=np.int64))
        out = []
        for i, family in enumerate(self.families):
            if i:
                out.append(LayerSlot(i - 1))
            out.append(family.slot(kmat[:, i] if kmat.shape[0] > 1 else kmat[0, i]))
        return out


def chain_for_element(model: ModelParams, element) -> list:
    """Slots applying one fixed group element to a whole batch of codes."""
    indices = tuple(getattr(element, "indices", element))
    spec = _ChainSpec(model.config)
    if len(indices) != len(spec.families):
        raise ValidationError(
            f"element {indices} has {len(indices)} indices, the chain expects "
            f"{len(spec.families)}"
        )
    return spec.slots(np.asarray(indices, dtype=np.int64))


def init_params(config: TrainConfig, pixel_dim: int) -> ModelParams:
    """Seeded uniform init; stacked mixing layers start near the identity.

    Draw order is fixed (encoder re, encoder im, decoder, then each mixing
    layer) so checkpoints reproduce bit for bit.
    """
    validate_config(config)
    rng = np.random.default_rng(config.seed)
    latent = config.latent_dim

    def draw(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        re = rng.uniform(-bound, bound, (rows, cols))
        im = rng.uniform(-bound, bound, (rows, cols))
        return re + 1j * im

    encoder = draw(latent, pixel_dim)
    decoder = draw(pixel_dim, latent)
    n_inter = _ChainSpec(config).n_intermediates
    intermediates = [
        np.eye(latent, dtype=complex) + 0.01 * draw(latent, latent)
        for _ in range(n_inter)
    ]
    return ModelParams(encoder, decoder, intermediates, config.variant, config)


# ------------------------------------------------------------ score machine


def infer_shift_scores_batch(z1, z2, k_latent: int) -> np.ndarray:
    """Phase-correlation evidence for each candidate cyclic shift.

    The per-coordinate cross phases z1 * conj(z2) are normalized to unit
    modulus (zeros stay zero) and correlated against each candidate's phase
    ramp. A pair related by the latent shift k scores exactly 1 at k.
    """
    z1 = np.atleast_2d(np.asarray(z1))
    z2 = np.atleast_2d(np.asarray(z2))
    if z1.shape != z2.shape:
        raise DimensionError(f"code shapes differ: {z1.shape} vs {z2.shape}")
    cps = z1 * np.conj(z2)
    mag = np.abs(cps)
    unit = np.where(mag > _SCORE_EPS, cps / np.where(mag > _SCORE_EPS, mag, 1.0), 0.0)
    n = z1.shape[-1]
    ramp = np.arange(n) % k_latent
    weights = np.exp(2j * np.pi * np.outer(np.arange(k_latent), ramp) / k_latent)
    return (unit @ weights.T).real / n


def infer_shift_scores(z1, z2, k_latent: int) -> np.ndarray:
    """Score vector for a single pair of codes."""
    return infer_shift_scores_batch(z1, z2, k_latent)[0]


def _softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------ training loop


def _stack_pixels(samples: Sequence) -> tuple:
    x1 = np.stack([s.x1.pixels.ravel() for s in samples])
    x2 = np.stack([s.x2.pixels.ravel() for s in samples])
    kmat = np.asarray([s.param.indices for s in samples], dtype=np.int64)
    return x1, x2, kmat


def _val_metrics_supervised(model, spec, x1, x2, kmat, chunk=512):
    total = 0.0
    num = 0.0
    den = 0.0
    n = x1.shape[0]
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        slots = spec.slots(kmat[sl])
        tape = chain_forward(
            x1[sl], model.encoder, model.decoder, model.intermediates, slots
        )
        loss, _, _ = l2_pair_loss_grads(
            tape.recon_plain, tape.recon_transformed, x1[sl], x2[sl]
        )
        total += loss * (sl.stop - sl.start)
        z2 = x2[sl] @ model.encoder.T
        num += float(np.sum(np.abs(z2 - tape.stages[-1]) ** 2))
        den += float(np.sum(np.abs(z2) ** 2))
    residual = num / den if den > 0 else 0.0
    return total / n, residual


def _weak_forward(model, table, x1, x2, temperature, alpha=None):
    """Weak loss pieces for one batch; the mixture weights carry no gradient.

    Passing alpha pins the mixture weights instead of deriving them from the
    scores, which is how the gradient formulas can be checked numerically.
    """
    z1 = x1 @ model.encoder.T
    z2 = x2 @ model.encoder.T
    k_latent = table.shape[0]
    scores = infer_shift_scores_batch(z1, z2, k_latent)
    if alpha is None:
        alpha = _softmax(scores / temperature)
    recon1 = z1 @ model.decoder.T
    shifted = z1[:, None, :] * table[None, :, :]
    batch, _, latent = shifted.shape
    recon2 = (shifted.reshape(batch * k_latent, latent) @ model.decoder.T).reshape(
        batch, k_latent, -1
    )
    d1 = recon1 - x1
    d2 = recon2 - x2[:, None, :]
    mse1 = np.mean(np.abs(d1) ** 2, axis=1)
    mse2 = np.mean(np.abs(d2) ** 2, axis=2)
    loss = float(np.mean(mse1 + np.sum(alpha * mse2, axis=1)))
    return z1, scores, alpha, shifted, d1, d2, loss


def weak_loss_and_grads(model, table, x1, x2, temperature, alpha=None):
    """Loss and encoder/decoder gradients for one weak batch.

    The mixture weights are treated as constants (no gradient flows through
    the scores), so the trainable path is the plain reconstruction plus the
    weighted candidate reconstructions.
    """
    z1, scores, alpha, shifted, d1, d2, loss = _weak_forward(
        model, table, x1, x2, temperature, alpha
    )
    batch, pixels = x1.shape
    k_latent = table.shape[0]
    scale = 2.0 / (pixels * batch)
    g_r1 = scale * d1
    g_r2 = scale * alpha[:, :, None] * d2
    flat_g2 = g_r2.reshape(batch * k_latent, -1)
    flat_shift = shifted.reshape(batch * k_latent, -1)
    g_decoder = g_r1.T @ np.conj(z1) + flat_g2.T @ np.conj(flat_shift)
    g2_codes = (flat_g2 @ np.conj(model.decoder)).reshape(batch, k_latent, -1)
    g_z1 = g_r1 @ np.conj(model.decoder) + np.sum(
        g2_codes * np.conj(table)[None, :, :], axis=1
    )
    g_encoder = g_z1.T @ np.conj(x1)
    return loss, g_encoder, g_decoder, scores, alpha


def _val_metrics_weak(model, table, x1, x2, temperature, chunk=256):
    total = 0.0
    num = 0.0
    den = 0.0
    n = x1.shape[0]
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        z1, scores, _, shifted, _, _, loss = _weak_forward(
            model, table, x1[sl], x2[sl], temperature
        )
        total += loss * (sl.stop - sl.start)
        z2 = x2[sl] @ model.encoder.T
        best = np.argmax(scores, axis=1)
        chained = np.take_along_axis(shifted, best[:, None, None], axis=1)[:, 0, :]
        num += float(np.sum(np.abs(z2 - chained) ** 2))
        den += float(np.sum(np.abs(z2) ** 2))
    residual = num / den if den > 0 else 0.0
    return total / n, residual


def _history_entry(epoch, train_loss, val_loss, residual) -> dict:
    return {
        "epoch": epoch,
        "train_loss": float(train_loss),
        "val_loss": float(val_loss),
        "equivariance_residual": float(residual),
    }


def train(data: DatasetBundle, config: TrainConfig):
    """Train any variant; returns the best-validation model and its history."""
    validate_config(config, data.spec.factors)
    if not data.train:
        raise ValidationError("the training split is empty")
    if not data.val:
        raise ValidationError("the validation split is empty")
    if config.variant == WEAK:
        return _train_weak(data, config)
    return _train_chain(data, config)


def train_supervised(data: DatasetBundle, config: TrainConfig):
    if config.variant != SUPERVISED:
        raise ValidationError(f"expected a supervised config, got {config.variant!r}")
    return train(data, config)


def train_weak(data: DatasetBundle, config: TrainConfig):
    if config.variant != WEAK:
        raise ValidationError(f"expected a weak config, got {config.variant!r}")
    return train(data, config)


def train_stacked(data: DatasetBundle, config: TrainConfig):
    if config.variant != STACKED:
        raise ValidationError(f"expected a stacked config, got {config.variant!r}")
    return train(data, config)


def _train_chain(data: DatasetBundle, config: TrainConfig):
    """Shared loop for the supervised and stacked variants."""
    x1, x2, kmat = _stack_pixels(data.train)
    vx1, vx2, vkmat = _stack_pixels(data.val)
    model = init_params(config, x1.shape[1])
    spec = _ChainSpec(config)
    arrays = model.arrays()
    state = AdamState.for_params(arrays, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = x1.shape[0]
    history = []
    best_val = np.inf
    best_arrays = [a.copy() for a in arrays]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            slots = spec.slots(kmat[idx])
            tape = chain_forward(
                x1[idx], model.encoder, model.decoder, model.intermediates, slots
            )
            loss, g1, g2 = l2_pair_loss_grads(
                tape.recon_plain, tape.recon_transformed, x1[idx], x2[idx]
            )
            grads = chain_backward(
                tape, model.encoder, model.decoder, model.intermediates, g1, g2
            )
            adam_step(arrays, grads.arrays(), state)
            batch_losses.append(loss)
        val_loss, residual = _val_metrics_supervised(model, spec, vx1, vx2, vkmat)
        history.append(_history_entry(epoch, np.mean(batch_losses), val_loss, residual))
        if val_loss < best_val:
            best_val = val_loss
            best_arrays = [a.copy() for a in arrays]
    final = ModelParams(
        best_arrays[0], best_arrays[1], best_arrays[2:], config.variant, config
    )
    return final, history


def _train_weak(data: DatasetBundle, config: TrainConfig):
    x1, x2, _ = _stack_pixels(data.train)
    vx1, vx2, _ = _stack_pixels(data.val)
    model = init_params(config, x1.shape[1])
    table = _DiagFamily(config.k_latent, config.latent_dim).table
    arrays = model.arrays()
    state = AdamState.for_params(arrays, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = x1.shape[0]
    history = []
    best_val = np.inf
    best_arrays = [a.copy() for a in arrays]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, g_encoder, g_decoder, _, _ = weak_loss_and_grads(
                model, table, x1[idx], x2[idx], config.temperature
            )
            adam_step(arrays, [g_encoder, g_decoder], state)
            batch_losses.append(loss)
        val_loss, residual = _val_metrics_weak(
            model, table, vx1, vx2, config.temperature
        )
        history.append(_history_entry(epoch, np.mean(batch_losses), val_loss, residual))
        if val_loss < best_val:
            best_val = val_loss
            best_arrays = [a.copy() for a in arrays]
    final = ModelParams(best_arrays[0], best_arrays[1], [], config.variant, config)
    return final, history


# ----------------------------------------------------------------- applying


def encode(model: ModelParams, x) -> np.ndarray:
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.shape[0] != model.pixel_dim:
        raise DimensionError(
            f"image has {flat.shape[0]} pixels, the model expects {model.pixel_dim}"
        )
    return model.encoder @ flat


def decode_to_image(model: ModelParams, z, height: int, width: int) -> ImageGrid:
    recon = np.real(model.decoder @ z)
    return ImageGrid(height, width, np.clip(recon.reshape(height, width), 0.0, 1.0))


def apply_latent_transform(model: ModelParams, x, element) -> ImageGrid:
    """Encode, act with the element's latent operator chain, decode.

    The output is the real part of the decoded code clamped back to [0, 1].
    """
    pixels = np.asarray(x, dtype=np.float64)
    if pixels.ndim != 2:
        raise DimensionError(f"expected a 2-d image, got shape {pixels.shape}")
    z = encode(model, pixels)
    slots = chain_for_element(model, element)
    moved = apply_slots(z[None, :], model.intermediates, slots)[0]
    return decode_to_image(model, moved, pixels.shape[0], pixels.shape[1])


# -------------------------------------------------------------- persistence


def save_model(model: ModelParams, path) -> None:
    meta = {
        "kind": "model",
        "variant": model.variant,
        "config": model.config.to_dict(),
        "n_intermediates": len(model.intermediates),
    }
    save_checkpoint(model.arrays(), meta, path)


def load_model(path) -> ModelParams:
    arrays, meta = load_checkpoint(path)
    if meta is None:
        raise ParseError(f"no metadata sidecar next to {path}")
    if len(arrays) < 2:
        raise ParseError("model checkpoints need at least encoder and decoder")
    config = TrainConfig.from_dict(meta["config"])
    return ModelParams(
        arrays[0], arrays[1], list(arrays[2:]), meta.get("variant", config.variant),
        config,
    )
