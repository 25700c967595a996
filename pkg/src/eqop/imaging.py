"""Images, exact and interpolated group actions on them, and paired datasets.

Translations wrap periodically and are exact pixel permutations. Rotations
come in two flavors: quarter-turn permutations (exact, composes perfectly)
and bilinear resampling for arbitrary angles (lossy at the corners, zero
fill outside the source). Synthetic shapes are closed five-point polylines
rasterized with Bresenham lines.
"""
from __future__ import annotations

import itertools
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DimensionError, ParseError, UnsupportedError, ValidationError
from .groups import DIRECT_PRODUCT, SINGLE_CYCLIC, GroupElement, GroupSpec

_EQDS_MAGIC = b"EQDS"
_EQDS_VERSION = 1
_KIND_CODES = {SINGLE_CYCLIC: 0, DIRECT_PRODUCT: 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_METHOD_CODES = {"exact90": 0, "bilinear": 1}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}


@dataclass(frozen=True)
class ImageGrid:
    """A height x width grid of pixel values in [0, 1]."""

    height: int
    width: int
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.shape != (self.height, self.width):
            raise ValidationError(
                f"pixel array shape {p.shape} != ({self.height}, {self.width})"
            )
        if p.size and (p.min() < -1e-9 or p.max() > 1 + 1e-9):
            raise ValidationError(
                f"pixel values outside [0, 1]: min {p.min()}, max {p.max()}"
            )
        object.__setattr__(self, "pixels", np.clip(p, 0.0, 1.0))

    @classmethod
    def from_array(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"expected a 2-d array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr)

    def __array__(self, dtype=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)


@dataclass(frozen=True)
class PairSample:
    """An image, its transformed version, and the transformation parameter."""

    x1: ImageGrid
    x2: ImageGrid
    param: GroupElement
    shape_index: int = 0


@dataclass
class DatasetBundle:
    train: list
    val: list
    test: list
    spec: GroupSpec
    provenance: dict = field(default_factory=dict)

    @property
    def pixel_dim(self) -> int:
        sample = (self.train or self.val or self.test)[0]
        return sample.x1.height * sample.x1.width


def translate_periodic(x: ImageGrid, dx: int, dy: int) -> ImageGrid:
    """Shift right by dx and down by dy with wraparound.

    Output pixel (r, c) is input pixel ((r - dy) mod H, (c - dx) mod W).
    """
    rolled = np.roll(x.pixels, shift=(int(dy), int(dx)), axis=(0, 1))
    return ImageGrid(x.height, x.width, rolled)


def _rotate_exact90(x: ImageGrid, j: int, K: int) -> ImageGrid:
    if K not in (1, 2, 4):
        raise UnsupportedError(f"exact rotations exist only for K in (1, 2, 4), got {K}")
    if x.height != x.width and K != 1:
        raise UnsupportedError("exact quarter turns need a square image")
    quarters = (j * (4 // K)) % 4
    return ImageGrid(x.height, x.width, np.rot90(x.pixels, quarters).copy())


def _rotate_bilinear(x: ImageGrid, j: int, K: int) -> ImageGrid:
    theta = 2.0 * np.pi * j / K
    h, w = x.height, x.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # destination offsets in an x-right / y-up frame
    xd = c - cx
    yd = cy - r
    cos, sin = np.cos(theta), np.sin(theta)
    xs = xd * cos + yd * sin
    ys = -xd * sin + yd * cos
    rs = cy - ys
    cs = cx + xs
    r0 = np.floor(rs).astype(int)
    c0 = np.floor(cs).astype(int)
    fr = rs - r0
    fc = cs - c0
    out = np.zeros((h, w))
    for dr, dc, weight in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = np.where(inside, x.pixels[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)], 0.0)
        out += weight * vals
    return ImageGrid(h, w, np.clip(out, 0.0, 1.0))


def rotate(x: ImageGrid, j: int, K: int, method: str = "auto") -> ImageGrid:
    """Rotate counterclockwise by 360 * j / K degrees about the image center.

    method "exact90" is a pixel permutation (K must be 1, 2, or 4);
    "bilinear" interpolates for any K; "auto" picks the exact path when the
    angle allows it. Both paths agree at multiples of 90 degrees because the
    center convention (H-1)/2 maps pixel centers onto pixel centers there.
    """
    if K < 1:
        raise ValidationError(f"rotation order must be >= 1, got {K}")
    if not 0 <= j < K:
        raise ValidationError(f"rotation index {j} out of range [0, {K})")
    if method == "auto":
        method = (
            "exact90" if K in (1, 2, 4) and x.height == x.width else "bilinear"
        )
    if method == "exact90":
        return _rotate_exact90(x, j, K)
    if method == "bilinear":
        return _rotate_bilinear(x, j, K)
    raise ValidationError(f"unknown rotation method {method!r}")


def _draw_line(canvas: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    """Bresenham segment of value 1.0, endpoints included."""
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        canvas[r, c] = 1.0
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 >= -dr:
            err -= dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr


def gen_shapes(count: int, seed: int, size: int = 28) -> list:
    """Random closed polylines: five points joined by lines, on black ground.

    Points are drawn uniformly from the central region (22x22 for the default
    28x28 canvas). Each image uses its own generator stream derived from
    (seed, index), so parallel generation is byte-identical to sequential.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    margin = max(1, round(3 * size / 28)) if size > 2 else 0
    shapes = []
    for index in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))
        pts = rng.integers(margin, size - margin, size=(5, 2))
        canvas = np.zeros((size, size))
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            _draw_line(canvas, a[0], a[1], b[0], b[1])
        shapes.append(ImageGrid(size, size, canvas))
    return shapes


def load_idx(images_path, labels_path=None):
    """Read images (and optionally labels) in the big-endian IDX format.

    Returns (images, labels) with pixel bytes scaled to [0, 1]; labels is
    None when no labels path is given.
    """
    with open(images_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ParseError(f"image file too short ({len(blob)} bytes)", offset=0)
    magic, count, rows, cols = struct.unpack_from(">IIII", blob, 0)
    if magic != 0x00000803:
        raise ParseError(f"bad image magic 0x{magic:08x}", offset=0)
    need = 16 + count * rows * cols
    if len(blob) < need:
        raise ParseError(
            f"truncated image payload: have {len(blob)} bytes, need {need}",
            offset=len(blob),
        )
    data = np.frombuffer(blob, dtype=np.uint8, count=count * rows * cols, offset=16)
    pixels = data.reshape(count, rows, cols).astype(np.float64) / 255.0
    images = [ImageGrid(rows, cols, pixels[i]) for i in range(count)]
    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            lblob = fh.read()
        if len(lblob) < 8:
            raise ParseError(f"label file too short ({len(lblob)} bytes)", offset=0)
        lmagic, lcount = struct.unpack_from(">II", lblob, 0)
        if lmagic != 0x00000801:
            raise ParseError(f"bad label magic 0x{lmagic:08x}", offset=0)
        if lcount != count:
            raise ParseError(
                f"label count {lcount} != image count {count}", offset=4
            )
        if len(lblob) < 8 + lcount:
            raise ParseError("truncated label payload", offset=len(lblob))
        labels = list(np.frombuffer(lblob, dtype=np.uint8, count=lcount, offset=8))
    return images, labels


def dataset_spec(orders) -> GroupSpec:
    """Group spec of the transformation index set for (rot, tx, ty) orders.

    Factors of order 1 are dropped; the data group is a plain index product
    (single-cyclic when one factor remains).
    """
    rot, tx, ty = orders
    active = tuple(k for k in (rot, tx, ty) if k > 1)
    if not active:
        return GroupSpec((1,), SINGLE_CYCLIC)
    if len(active) == 1:
        return GroupSpec(active, SINGLE_CYCLIC)
    return GroupSpec(active, DIRECT_PRODUCT)


def apply_transform(
    x: ImageGrid, param, orders, rot_method: str = "auto"
) -> ImageGrid:
    """Rotate, then translate along x, then along y, per the full index triple."""
    rot, tx, ty = orders
    full = _expand_param(param, orders)
    j, kx, ky = full
    out = rotate(x, j, rot, rot_method) if rot > 1 else x
    if kx or ky:
        out = translate_periodic(out, kx, ky)
    elif out is x:
        out = ImageGrid(x.height, x.width, x.pixels.copy())
    return out


def _expand_param(param, orders):
    """Map an index tuple to the full (j, kx, ky) triple.

    Accepts either the full triple or the compact form that keeps only the
    active (order > 1) factors; a lone (0,) is the identity for a dataset
    with no active factors.
    """
    indices = tuple(param.indices if isinstance(param, GroupElement) else param)
    if len(indices) == 3:
        return indices
    active = [i for i, k in enumerate(orders) if k > 1]
    if not active and indices in ((), (0,)):
        return (0, 0, 0)
    if len(indices) != len(active):
        raise ValidationError(
            f"parameter {indices} does not match active factors of {orders}"
        )
    full = [0, 0, 0]
    for pos, v in zip(active, indices):
        full[pos] = v
    return tuple(full)


def build_pairs(
    base: list,
    orders,
    cap: Optional[int] = None,
    seed: int = 0,
    rot_method: str = "auto",
) -> list:
    """Every (image, group element) pair, optionally subsampled to `cap`.

    orders = (rot, tx, ty) transformation counts, 1 meaning absent. The
    sample parameter keeps only the active factors, in rotate/x/y order.
    """
    rot, tx, ty = orders
    if min(orders) < 1:
        raise ValidationError(f"orders must all be >= 1, got {orders}")
    spec = dataset_spec(orders)
    combos = list(itertools.product(range(rot), range(tx), range(ty)))
    index_pairs = [
        (i, combo) for i in range(len(base)) for combo in combos
    ]
    if cap is not None and cap < len(index_pairs):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(index_pairs), size=cap, replace=False)
        index_pairs = [index_pairs[i] for i in np.sort(chosen)]
    samples = []
    for i, (j, kx, ky) in index_pairs:
        param = GroupElement(
            tuple(v for v, k in zip((j, kx, ky), orders) if k > 1) or (0,)
        )
        x2 = apply_transform(base[i], (j, kx, ky), orders, rot_method)
        samples.append(PairSample(base[i], x2, param, shape_index=i))
    return samples


def build_pairs_augmented(
    base: list,
    orders,
    cap: Optional[int] = None,
    seed: int = 0,
    rot_method: str = "auto",
) -> list:
    """Orbit pairing launched from every pose of each base image.

    build_pairs anchors x1 at the untransformed image, so the input side of
    a dataset sees exactly one pose per shape. Here x1 itself ranges over the
    whole transformation grid and x2 applies the sampled element to that x1.
    The supervision stays exact by construction (x2 is the element acting on
    x1) while input diversity grows by the group order, which is what linear
    models need to generalize across shapes. Shape identity is preserved so
    splits stay leak-free.

    The (image, start pose, element) triple space is subsampled to `cap`
    before any pixels are produced, and starting poses are cached, so capped
    datasets stay cheap even when the full grid would be enormous.
    """
    rot, tx, ty = orders
    if min(orders) < 1:
        raise ValidationError(f"orders must all be >= 1, got {orders}")
    grid = list(itertools.product(range(rot), range(tx), range(ty)))
    n_grid = len(grid)
    total = len(base) * n_grid * n_grid
    if cap is not None and cap < total:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(total, size=cap, replace=False))
    else:
        chosen = np.arange(total)
    pose_cache = {}
    samples = []
    for flat in chosen:
        i, rem = divmod(int(flat), n_grid * n_grid)
        s, g = divmod(rem, n_grid)
        x1 = pose_cache.get((i, s))
        if x1 is None:
            x1 = apply_transform(base[i], grid[s], orders, rot_method)
            pose_cache[(i, s)] = x1
        x2 = apply_transform(x1, grid[g], orders, rot_method)
        param = GroupElement(
            tuple(v for v, k in zip(grid[g], orders) if k > 1) or (0,)
        )
        samples.append(PairSample(x1, x2, param, shape_index=i))
    return samples


def split(
    samples: list,
    spec: GroupSpec,
    seed: int,
    provenance: Optional[dict] = None,
    test_fraction: float = 0.5,
    val_fraction: float = 0.2,
) -> DatasetBundle:
    """Partition by base-shape identity: test first, then val from the rest.

    No shape contributes pairs to more than one split.
    """
    ids = sorted({s.shape_index for s in samples})
    if len(ids) < 5:
        raise ValidationError(f"need at least 5 base shapes to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(len(ids))]
    n_test = int(len(perm) * test_fraction)
    rest = perm[n_test:]
    n_val = int(len(rest) * val_fraction)
    test_ids = set(perm[:n_test])
    val_ids = set(rest[:n_val])
    bundle = DatasetBundle([], [], [], spec, dict(provenance or {}))
    for s in samples:
        if s.shape_index in test_ids:
            bundle.test.append(s)
        elif s.shape_index in val_ids:
            bundle.val.append(s)
        else:
            bundle.train.append(s)
    return bundle


def make_shape_dataset(
    count: int,
    orders,
    seed: int,
    size: int = 28,
    cap: Optional[int] = None,
    rot_method: str = "auto",
    pairing: str = "orbit",
) -> DatasetBundle:
    """Generate shapes, pair them under the declared transforms, and split.

    pairing selects the constructor: "orbit" anchors x1 at the base image,
    "augmented" starts orbits from every pose of the grid.
    """
    base = gen_shapes(count, seed, size)
    if pairing == "orbit":
        samples = build_pairs(base, orders, cap=cap, seed=seed, rot_method=rot_method)
    elif pairing == "augmented":
        samples = build_pairs_augmented(
            base, orders, cap=cap, seed=seed, rot_method=rot_method
        )
    else:
        raise ValidationError(f"unknown pairing {pairing!r}")
    provenance = {
        "kind": "shapes",
        "count": count,
        "seed": seed,
        "size": size,
        "orders": {"rot": orders[0], "tx": orders[1], "ty": orders[2]},
        "cap": cap,
        "rot_method": rot_method,
        "pairing": pairing,
    }
    return split(samples, dataset_spec(orders), seed, provenance)


# ------------------------------------------------------------ serialization


def _write_atomic(path, blob: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def save_dataset(bundle: DatasetBundle, path, manifest_path=None) -> None:
    """Write the binary dataset container plus its JSON manifest."""
    samples = bundle.train + bundle.val + bundle.test
    if not samples:
        raise ValidationError("refusing to write an empty dataset")
    h, w = samples[0].x1.height, samples[0].x1.width
    orders = bundle.provenance.get("orders", {})
    rot = int(orders.get("rot", 1))
    tx = int(orders.get("tx", 1))
    ty = int(orders.get("ty", 1))
    method = bundle.provenance.get("rot_method", "bilinear")
    if method == "auto":
        method = "exact90" if rot in (1, 2, 4) else "bilinear"
    factors = bundle.spec.factors
    head = struct.pack(
        "<4sHIIIIIBH",
        _EQDS_MAGIC,
        _EQDS_VERSION,
        h,
        w,
        len(bundle.train),
        len(bundle.val),
        len(bundle.test),
        _KIND_CODES[bundle.spec.kind],
        len(factors),
    )
    head += struct.pack(f"<{len(factors)}I", *factors)
    head += struct.pack("<IIIB", rot, tx, ty, _METHOD_CODES[method])
    parts = [head]
    for s in samples:
        parts.append(struct.pack("<I", s.shape_index))
        parts.append(struct.pack(f"<{len(factors)}H", *s.param.indices))
        parts.append(s.x1.pixels.astype("<f4").tobytes())
        parts.append(s.x2.pixels.astype("<f4").tobytes())
    _write_atomic(path, b"".join(parts))
    if manifest_path is None:
        manifest_path = os.fspath(path) + ".json"
    manifest = dict(bundle.provenance)
    manifest["splits"] = {
        "train": len(bundle.train),
        "val": len(bundle.val),
        "test": len(bundle.test),
    }
    blob = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
    _write_atomic(manifest_path, blob)


def load_dataset(path) -> DatasetBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 29:
        raise ParseError("truncated dataset header", offset=len(blob))
    magic, version, h, w, n_train, n_val, n_test, kind_code, n_factors = (
        struct.unpack_from("<4sHIIIIIBH", blob, 0)
    )
    if magic != _EQDS_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != _EQDS_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if kind_code not in _CODE_KINDS:
        raise ParseError(f"unknown group kind code {kind_code}", offset=26)
    off = 29
    factors = struct.unpack_from(f"<{n_factors}I", blob, off)
    off += 4 * n_factors
    rot, tx, ty, method_code = struct.unpack_from("<IIIB", blob, off)
    off += 13
    spec = GroupSpec(tuple(factors), _CODE_KINDS[kind_code])
    n_total = n_train + n_val + n_test
    frame = h * w
    record = 4 + 2 * n_factors + 8 * frame
    if len(blob) - off != n_total * record:
        raise ParseError(
            f"payload is {len(blob) - off} bytes, expected {n_total * record}",
            offset=off,
        )
    samples = []
    for _ in range(n_total):
        (shape_index,) = struct.unpack_from("<I", blob, off)
        off += 4
        param = struct.unpack_from(f"<{n_factors}H", blob, off)
        off += 2 * n_factors
        x1 = np.frombuffer(blob, dtype="<f4", count=frame, offset=off).reshape(h, w)
        off += 4 * frame
        x2 = np.frombuffer(blob, dtype="<f4", count=frame, offset=off).reshape(h, w)
        off += 4 * frame
        samples.append(
            PairSample(
                ImageGrid(h, w, x1.astype(np.float64)),
                ImageGrid(h, w, x2.astype(np.float64)),
                GroupElement(param),
                shape_index=shape_index,
            )
        )
    provenance = {
        "orders": {"rot": rot, "tx": tx, "ty": ty},
        "rot_method": _CODE_METHODS.get(method_code, "bilinear"),
    }
    manifest_path = os.fspath(path) + ".json"
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        stored.pop("splits", None)
        provenance.update(stored)
    return DatasetBundle(
        samples[:n_train],
        samples[n_train : n_train + n_val],
        samples[n_train + n_val :],
        spec,
        provenance,
    )
