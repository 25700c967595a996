"""Acceptance scorecard: one test and one printed line per criterion.

The desk-scale trainings (criteria 6 through 9) are module-scoped fixtures
so the determinism criterion can re-run them and compare checkpoint bytes.
Run with -s to watch the lines appear; a plain run still records them in
the captured output.
"""
import time

import numpy as np
import pytest

from eqop.evaluate import (
    equivariance_residual,
    test_mse as mse_on_test,
    topology_demo,
    weak_assignment_report,
)
from eqop.groups import (
    SINGLE_CYCLIC,
    GroupElement,
    GroupSpec,
    compose,
    elements,
    orbit_representatives,
    quarter_turn_spec,
)
from eqop.imaging import (
    PairSample,
    dataset_spec,
    gen_shapes,
    make_shape_dataset,
    rotate,
    split,
    translate_periodic,
)
from eqop.models import (
    TrainConfig,
    _ChainSpec,
    init_params,
    save_model,
    train,
)
from eqop.numkit import chain_forward, chain_backward, l2_pair_loss_grads
from eqop.operators import (
    analytic_L1_translations,
    character_table,
    coset_permutation,
    disentangled_operator,
    fourier_conjugation_matrices,
    induced_rep_operator,
    regular_character,
    shift_operator_complex,
    shift_operator_perm,
    tensor_product_operator,
)

from test_numkit import numeric_grad


def report(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {number} failed: {detail}"


# ------------------------------------------------------------------ theory


def test_criterion_1_character_tables():
    t0 = time.monotonic()
    worst = 0.0
    disent_ok = True
    for order in range(2, 13):
        dim = 2 * order
        spec = GroupSpec((order,), SINGLE_CYCLIC)
        ref = regular_character(spec, dim)
        for builder in (shift_operator_perm, shift_operator_complex):
            table = character_table(
                lambda g: builder(order, dim, g.indices[0]), spec, dim
            )
            for g, value in table.items():
                worst = max(worst, abs(value - ref[g]))
        if order % 2 == 0:
            half_trace = disentangled_operator(order, dim, order // 2).matrix().trace()
            # the reference character is 0 away from the identity, so the
            # deviation at the half turn is |trace| and must reach dim - 4
            disent_ok = disent_ok and abs(half_trace) >= dim - 4 - 1e-9
    elapsed = time.monotonic() - t0
    ok = worst < 1e-9 and disent_ok and elapsed < 5.0
    report(1, ok, f"shift deviation {worst:.2e}, disentangled gap holds, {elapsed:.2f}s")


def test_criterion_2_induced_representation():
    t0 = time.monotonic()
    spec = quarter_turn_spec(3, 3)
    dim = 36
    group = elements(spec)
    ops = {g: induced_rep_operator(spec, g, dim).matrix() for g in group}
    worst_hom = 0.0
    for g1 in group:
        for g2 in group:
            target = ops[compose(g1, g2, spec)]
            worst_hom = max(worst_hom, float(np.abs(ops[g1] @ ops[g2] - target).max()))
    ref = regular_character(spec, dim)
    worst_char = max(abs(m.trace() - ref[g]) for g, m in ops.items())
    h = 4
    n_orbits = len(orbit_representatives(spec))
    degree_sum = h + n_orbits * h * h
    elapsed = time.monotonic() - t0
    ok = (
        worst_hom < 1e-9
        and worst_char < 1e-9
        and degree_sum == 36
        and elapsed < 10.0
    )
    report(
        2,
        ok,
        f"hom {worst_hom:.2e}, character {worst_char:.2e}, "
        f"degree sum {degree_sum}, {elapsed:.2f}s",
    )


def test_criterion_3_analytic_factorizations():
    t0 = time.monotonic()
    worst_stack = 0.0
    for first in (2, 3, 5):
        for second in (2, 3, 5):
            dim = first * second
            shuffle = analytic_L1_translations(first, second, dim).matrix()
            for k in range(first):
                psi_x = shift_operator_complex(first, dim, k).matrix()
                for kp in range(second):
                    psi_y = shift_operator_complex(second, dim, kp).matrix()
                    tensor = tensor_product_operator(
                        first, second, dim, k, kp
                    ).matrix()
                    gap = np.abs(psi_y @ shuffle @ psi_x - tensor @ shuffle).max()
                    worst_stack = max(worst_stack, float(gap))
    worst_coset = 0.0
    for h in (1, 2, 4, 8):
        B, C = fourier_conjugation_matrices(h)
        for j in range(h):
            psi = shift_operator_complex(h, h, j).matrix()
            gap = np.abs(B @ psi @ C / h - coset_permutation(h, j)).max()
            worst_coset = max(worst_coset, float(gap))
    elapsed = time.monotonic() - t0
    ok = worst_stack < 1e-12 and worst_coset < 1e-12 and elapsed < 5.0
    report(
        3,
        ok,
        f"stacking {worst_stack:.2e}, coset fourier {worst_coset:.2e}, {elapsed:.2f}s",
    )


def test_criterion_4_topology_demo():
    t0 = time.monotonic()
    sizes = topology_demo()["orbit_sizes"]
    elapsed = time.monotonic() - t0
    ok = sizes["black"] == 1 and sizes["generic"] == 3 and elapsed < 1.0
    report(4, ok, f"orbit sizes {sizes['black']} and {sizes['generic']}, "
                  f"{elapsed:.2f}s")


# ---------------------------------------------------------------- gradients


def test_criterion_5_gradient_check():
    t0 = time.monotonic()
    variants = {
        "supervised-shift": TrainConfig(
            variant="supervised", operator="shift-perm", orders=(3,),
            latent_dim=12, seed=11,
        ),
        "disentangled": TrainConfig(
            variant="supervised", operator="disentangled", orders=(5,),
            latent_dim=12, seed=12,
        ),
        "stacked-2": TrainConfig(
            variant="stacked", orders=(3, 4), latent_dim=12, seed=13,
        ),
        "stacked-3": TrainConfig(
            variant="stacked", orders=(2, 3, 2), latent_dim=12, seed=14,
        ),
    }
    rng = np.random.default_rng(99)
    worst = 0.0
    for config in variants.values():
        model = init_params(config, 36)
        spec = _ChainSpec(config)
        n_factors = len(config.orders)
        x1 = rng.uniform(0.0, 1.0, (4, 36))
        x2 = rng.uniform(0.0, 1.0, (4, 36))
        kmat = rng.integers(0, np.asarray(config.orders), (4, n_factors))
        slots = spec.slots(kmat)
        tape = chain_forward(x1, model.encoder, model.decoder,
                             model.intermediates, slots)
        _, g1, g2 = l2_pair_loss_grads(
            tape.recon_plain, tape.recon_transformed, x1, x2
        )
        grads = chain_backward(
            tape, model.encoder, model.decoder, model.intermediates, g1, g2
        )

        def loss_now():
            t = chain_forward(x1, model.encoder, model.decoder,
                              model.intermediates, spec.slots(kmat))
            value, _, _ = l2_pair_loss_grads(
                t.recon_plain, t.recon_transformed, x1, x2
            )
            return value

        for param, analytic in zip(model.arrays(), grads.arrays()):
            fd = numeric_grad(loss_now, param)
            rel = float(
                np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            )
            worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    ok = worst < 1e-4 and elapsed < 30.0
    report(5, ok, f"four variants, worst relative gap {worst:.2e}, {elapsed:.2f}s")


# -------------------------------------------------------------- desk scale
#
# The trainable criteria need pose diversity on the input side, so the
# rotation datasets pair independently rotated copies (one interpolation per
# side, relative turn count as the label; exact because full turns close),
# and the translation datasets use stride lattices whose steps close into a
# cyclic factor on the canvas torus, making every pair bit-exact from any
# starting pose.


def rotation_combination_pairs(count, turns, cap, seed):
    base = gen_shapes(count, seed, 28)
    posed = [[rotate(img, a, turns) for a in range(turns)] for img in base]
    triples = [
        (i, a, b)
        for i in range(count)
        for a in range(turns)
        for b in range(turns)
    ]
    rng = np.random.default_rng(seed)
    if cap < len(triples):
        keep = np.sort(rng.choice(len(triples), size=cap, replace=False))
        triples = [triples[t] for t in keep]
    samples = [
        PairSample(
            posed[i][a], posed[i][b],
            GroupElement(((b - a) % turns,)), shape_index=i,
        )
        for i, a, b in triples
    ]
    return split(samples, dataset_spec((turns, 1, 1)), seed, {})


def lattice_pairs(count, steps, stride, size, seed, cap, quarter_turns=False):
    base = gen_shapes(count, seed, size)
    rots = 4 if quarter_turns else 1
    grid = [
        (j, a, b)
        for j in range(rots)
        for a in range(steps)
        for b in range(steps)
    ]
    n = len(grid)
    total = count * n * n
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=min(cap, total), replace=False))

    def pose(img, g):
        j, a, b = g
        out = rotate(img, j, 4, "exact90") if quarter_turns and j else img
        return translate_periodic(out, stride * a, stride * b)

    cache = {}
    samples = []
    for flat in chosen:
        i, rem = divmod(int(flat), n * n)
        s, g = divmod(rem, n)
        x1 = cache.get((i, s))
        if x1 is None:
            x1 = pose(base[i], grid[s])
            cache[(i, s)] = x1
        x2 = pose(x1, grid[g])
        param = grid[g] if quarter_turns else grid[g][1:]
        samples.append(
            PairSample(x1, x2, GroupElement(tuple(param)), shape_index=i)
        )
    orders = (4 if quarter_turns else 1, steps, steps)
    return split(samples, dataset_spec(orders), seed, {})


ROT_SHIFT_CFG = TrainConfig(
    variant="supervised", operator="shift-perm", orders=(10,),
    latent_dim=800, lr=1e-3, batch_size=16, epochs=20, seed=0,
)
ROT_DISEN_CFG = TrainConfig(
    variant="supervised", operator="disentangled", orders=(10,),
    latent_dim=800, lr=1e-3, batch_size=16, epochs=20, seed=0,
)
TRANS_CFG = TrainConfig(
    variant="supervised", operator="shift-perm", orders=(10,),
    latent_dim=100, lr=1e-3, batch_size=16, epochs=20, seed=0,
)
WEAK_CFG = TrainConfig(
    variant="weak", latent_dim=100, lr=1e-3, batch_size=32,
    epochs=12, seed=0, k_latent=10, temperature=0.05,
)
STACK2_CFG = TrainConfig(
    variant="stacked", orders=(5, 5), latent_dim=200,
    lr=1e-3, batch_size=16, epochs=60, seed=0,
)
STACK3_CFG = TrainConfig(
    variant="stacked", orders=(4, 5, 5), latent_dim=100,
    lr=1e-3, batch_size=16, epochs=60, seed=0,
)


def desk_rotation_data():
    return rotation_combination_pairs(200, 10, cap=10000, seed=0)


def desk_translation_data():
    return make_shape_dataset(
        200, (1, 10, 1), seed=0, size=10, pairing="augmented"
    )


def desk_weak_data():
    return rotation_combination_pairs(500, 10, cap=8000, seed=0)


def desk_stack2_data():
    return lattice_pairs(200, 5, stride=2, size=10, seed=0, cap=30000)


def desk_stack3_data():
    return lattice_pairs(
        200, 5, stride=2, size=10, seed=0, cap=20000, quarter_turns=True
    )


@pytest.fixture(scope="module")
def desk_rotations():
    t0 = time.monotonic()
    data = desk_rotation_data()
    shift, _ = train(data, ROT_SHIFT_CFG)
    disen, _ = train(data, ROT_DISEN_CFG)
    shift_mse = mse_on_test(shift, data)
    disen_mse = mse_on_test(disen, data)
    return {
        "shift": shift, "disen": disen,
        "shift_mse": shift_mse, "disen_mse": disen_mse,
        "elapsed": time.monotonic() - t0,
    }


@pytest.fixture(scope="module")
def desk_translations():
    t0 = time.monotonic()
    data = desk_translation_data()
    model, _ = train(data, TRANS_CFG)
    mse = mse_on_test(model, data)
    residual = equivariance_residual(model, data)
    return {
        "model": model, "mse": mse, "residual": residual,
        "elapsed": time.monotonic() - t0,
    }


@pytest.fixture(scope="module")
def desk_weak():
    t0 = time.monotonic()
    data = desk_weak_data()
    model, _ = train(data, WEAK_CFG)
    assignment = weak_assignment_report(model, data)
    return {
        "model": model, "assignment": assignment,
        "elapsed": time.monotonic() - t0,
    }


@pytest.fixture(scope="module")
def desk_stacked():
    t0 = time.monotonic()
    data2 = desk_stack2_data()
    model2, _ = train(data2, STACK2_CFG)
    mse2 = mse_on_test(model2, data2)
    data3 = desk_stack3_data()
    model3, _ = train(data3, STACK3_CFG)
    mse3 = mse_on_test(model3, data3)
    return {
        "model2": model2, "mse2": mse2,
        "model3": model3, "mse3": mse3,
        "elapsed": time.monotonic() - t0,
    }


@pytest.mark.slow
def test_criterion_6_shift_vs_disentangled(desk_rotations):
    r = desk_rotations
    ok = (
        r["shift_mse"] <= 0.01
        and r["shift_mse"] <= 0.5 * r["disen_mse"]
        and r["elapsed"] < 600.0
    )
    report(
        6, ok,
        f"shift {r['shift_mse']:.5f} vs disentangled {r['disen_mse']:.5f}, "
        f"{r['elapsed']:.0f}s",
    )


@pytest.mark.slow
def test_criterion_7_exact_translations(desk_translations):
    r = desk_translations
    ok = r["mse"] <= 0.01 and r["residual"] < 0.05 and r["elapsed"] < 600.0
    report(
        7, ok,
        f"mse {r['mse']:.5f}, residual {r['residual']:.5f}, "
        f"{r['elapsed']:.0f}s",
    )


@pytest.mark.slow
def test_criterion_8_weak_assignment(desk_weak):
    r = desk_weak
    a = r["assignment"]
    ok = (
        a["agreement"] >= 0.90
        and a["is_bijection"]
        and r["elapsed"] < 900.0
    )
    report(
        8, ok,
        f"agreement {a['agreement']:.3f}, bijection {a['is_bijection']}, "
        f"map {a['majority_map']}, {r['elapsed']:.0f}s",
    )


@pytest.mark.slow
def test_criterion_9_stacked(desk_stacked):
    r = desk_stacked
    ok = r["mse2"] <= 0.02 and r["mse3"] <= 0.03 and r["elapsed"] < 1800.0
    report(
        9, ok,
        f"(5 tx, 5 ty) {r['mse2']:.5f}, (4 rot, 5 tx, 5 ty) {r['mse3']:.5f}, "
        f"{r['elapsed']:.0f}s",
    )


@pytest.mark.slow
def test_criterion_10_determinism(
    desk_rotations, desk_translations, desk_weak, desk_stacked, tmp_path
):
    reruns = {
        "shift6": (desk_rotation_data, ROT_SHIFT_CFG, desk_rotations["shift"]),
        "disen6": (desk_rotation_data, ROT_DISEN_CFG, desk_rotations["disen"]),
        "trans7": (desk_translation_data, TRANS_CFG, desk_translations["model"]),
        "weak8": (desk_weak_data, WEAK_CFG, desk_weak["model"]),
        "stack9a": (desk_stack2_data, STACK2_CFG, desk_stacked["model2"]),
        "stack9b": (desk_stack3_data, STACK3_CFG, desk_stacked["model3"]),
    }
    identical = []
    for name, (make_data, config, first_model) in reruns.items():
        again, _ = train(make_data(), config)
        first_path = tmp_path / f"{name}_a.eqck"
        again_path = tmp_path / f"{name}_b.eqck"
        save_model(first_model, first_path)
        save_model(again, again_path)
        identical.append(first_path.read_bytes() == again_path.read_bytes())
    ok = all(identical)
    report(
        10, ok,
        "byte-identical checkpoints: "
        + ", ".join(
            f"{name} {'yes' if same else 'NO'}"
            for name, same in zip(reruns, identical)
        ),
    )
