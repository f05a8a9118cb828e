"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the "acceptance criteria"
section at the end of the pytest run.  The two training criteria (7 and 8)
take several minutes each on one core.
"""
import math
import time

import numpy as np
import pytest

from smar.cli import read_pgm, window_to_gray, write_pgm
from smar.core import Geometry, desk_parallel, read_tensor_container, write_tensor_container
from smar.dataset import SimConfig, load_dataset, simulate_dataset
from smar.marops import compute_trace, li_interpolate, metal_trace_replacement, zero_trace
from smar.metrics import evaluate_cases
from smar.nn import ImgNet, SinoNet, load_model, save_model
from smar.pipeline import run_mar
from smar.projector import back_project, fbp, fbp_vjp, forward_project
from smar.simulate import MaskSpec, PhantomSpec, hu_to_mu, make_metal_mask, make_phantom, mu_to_hu
from smar.train import MaskBank, TrainConfig, loss_fbp, loss_sn, train

from conftest import (
    disk_image,
    fd_gradient_error,
    radius_map,
    record_acceptance,
    small_fan,
    small_parallel,
    total_loss_gradient_error,
)
from test_nn import PRIMS

# training recipe for the method-vs-baseline comparison (see README)
ORDERING_ITERATIONS = 300
ORDERING_LR = 1e-3
ORDERING_RESIDUAL = True


def check(number, passed, detail):
    record_acceptance(number, bool(passed), detail)
    assert passed, detail


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("acceptance") / "data"
    simulate_dataset(SimConfig(seed=0, eval_cases=20, eval_masks=4), desk_parallel(), path)
    return load_dataset(path)


def test_criterion_01_operator_adjoints():
    rng = np.random.default_rng(0)
    geoms = [small_parallel(45, 49, (32, 32)), small_fan(45, 49, (32, 32))]
    for g in geoms:  # compile outside the timed region
        back_project(forward_project(np.ones(g.image_size), g), g)
        fbp_vjp(fbp(np.ones(g.sino_shape), g), g)
    worst = 0.0
    t0 = time.perf_counter()
    for trial in range(100):
        g = geoms[trial % 2]
        x = rng.standard_normal(g.image_size)
        y = rng.standard_normal(g.sino_shape)
        for lhs, rhs in ((np.vdot(forward_project(x, g), y), np.vdot(x, back_project(y, g))),
                         (np.vdot(fbp(y, g), x), np.vdot(y, fbp_vjp(x, g)))):
            worst = max(worst, abs(lhs - rhs) / (abs(lhs) + 1e-12))
    elapsed = time.perf_counter() - t0
    check(1, worst < 1e-4 and elapsed < 5.0,
          f"worst adjoint mismatch {worst:.1e} (< 1e-4) over 100 trials in {elapsed:.2f} s (< 5 s)")


def test_criterion_02_disk_chord_length():
    g = desk_parallel()
    radius, mu = 40.0, 0.02
    sino = forward_project(disk_image(g, radius, mu), g)
    s = (np.arange(g.num_detectors) - (g.num_detectors - 1) / 2) * g.detector_spacing
    analytic = 2 * mu * np.sqrt(np.clip(radius**2 - s**2, 0, None))
    inside = np.abs(s) < radius - 2 * g.detector_spacing
    err = np.abs(sino[:, inside] - analytic[inside]) / analytic[inside]
    touching = analytic > 0
    err_all = np.abs(sino[:, touching] - analytic[touching]) / analytic[touching]
    check(2, err.max() < 0.02,
          f"max chord error {100 * err.max():.2f}% (< 2%) away from the 2-bin tangent rim; "
          f"{100 * err_all.max():.1f}% including grazing rays")


def _disk_recon_error(views):
    g = Geometry(num_views=views, num_detectors=185, image_size=(128, 128))
    radius, contrast = 40.0, 0.02
    img = disk_image(g, radius, contrast)
    rec = fbp(forward_project(img, g), g)
    inner = radius_map(g) < radius - 2 * g.pixel_spacing
    return float(np.sqrt(np.mean((rec - img)[inner] ** 2)) / contrast)


def test_criterion_03_reconstruction_fidelity():
    errs = [_disk_recon_error(v) for v in (90, 180, 360)]
    ok = errs[2] < 0.05 and errs[0] > errs[1] > errs[2]
    check(3, ok, "RMSE/contrast at 90/180/360 views: " + " > ".join(f"{100 * e:.2f}%" for e in errs)
          + " (360-view < 5%, monotone)")


def test_criterion_04_autodiff():
    prim = {name: fd_gradient_error(fn, inputs, np.float32) for name, (fn, inputs) in PRIMS.items()}
    worst_name = max(prim, key=prim.get)
    e2e = total_loss_gradient_error(np.float32)
    ok = max(prim.values()) < 1e-2 and e2e < 1e-2
    check(4, ok, f"32-bit FD: worst primitive {worst_name} {prim[worst_name]:.1e}, "
          f"total loss through fbp on 8x8 {e2e:.1e} (< 1e-2)")


def test_criterion_05_formula_fidelity():
    li = li_interpolate(np.array([[2, 0, 0, 8]], np.float32), np.array([[0, 1, 1, 0]], bool))
    mtr = metal_trace_replacement(np.array([[10, 0, 0, 20]], np.float32), np.array([[4, 5, 8, 5]], np.float32),
                                  np.array([[0, 1, 1, 0]], bool))
    e_li = np.abs(li - [[2, 4, 6, 8]]).max()
    e_mtr = np.abs(mtr - [[10, 14, 20, 20]]).max()
    rng = np.random.default_rng(0)
    bitwise = 0
    for _ in range(100):
        n, d = rng.integers(2, 40), rng.integers(3, 60)
        s_li = rng.normal(size=(n, d)).astype(np.float32)
        prior = rng.normal(size=(n, d)).astype(np.float32)
        tr = rng.random((n, d)) < 0.4
        tr[np.arange(n), rng.integers(0, d, n)] = False
        out = metal_trace_replacement(s_li, prior, tr)
        bitwise += out[~tr].tobytes() == s_li[~tr].tobytes()
    ok = e_li <= 1e-6 and e_mtr <= 1e-6 and bitwise == 100
    check(5, ok, f"LI example error {e_li:.1e}, MTR example error {e_mtr:.1e} (<= 1e-6); "
          f"MTR untraced bins bitwise equal in {bitwise}/100 cases")


def test_criterion_06_self_supervision_sanity():
    g = desk_parallel()
    body = make_phantom(PhantomSpec(num_ellipses=0, body_jitter=0.0), g)
    worst_fbp = worst_sn = 0.0
    for seed in range(3):
        s = forward_project(hu_to_mu(make_phantom(PhantomSpec(seed=seed), g)), g)
        m1 = make_metal_mask(MaskSpec(seed=2 * seed, shape="ellipse"), g, body)
        m2 = make_metal_mask(MaskSpec(seed=2 * seed + 1, shape="screw-pair"), g, body)
        sn = []
        for m in (m1, m2):
            tr = compute_trace(m, g)
            sn.append(np.where(tr, s, li_interpolate(zero_trace(s, tr), tr)))
        worst_fbp = max(worst_fbp, loss_fbp(sn[0], sn[1], m1, m2, g))
        worst_sn = max(worst_sn, loss_sn(sn[0], s), loss_sn(sn[1], s))
    check(6, worst_fbp < 1e-5 and worst_sn < 1e-6,
          f"true completion: L_FBP {worst_fbp:.1e} (< 1e-5), L_SN {worst_sn:.1e} (< 1e-6)")


def test_criterion_07_training_smoke(desk_dataset):
    ds = desk_dataset
    sinos = ds.sinograms[:8]
    cfg = TrainConfig(iterations=200, seed=0)
    t0 = time.perf_counter()
    hist = train(sinos, MaskBank(ds.train_masks, ds.geometry), ds.geometry, cfg).history
    elapsed = time.perf_counter() - t0
    replay = train(sinos, MaskBank(ds.train_masks, ds.geometry), ds.geometry, cfg).history
    totals = np.array([r["total"] for r in hist])
    finite = all(math.isfinite(r[k]) for r in hist for k in r)
    # single iterations see one random batch, so compare ten-iteration means
    first, last = totals[:10].mean(), totals[-10:].mean()
    ratio = last / first
    ok = ratio < 0.7 and finite and hist == replay and elapsed < 15 * 60
    check(7, ok, f"total loss {first:.4f} -> {last:.4f} (ratio {ratio:.2f} < 0.7), finite={finite}, "
          f"replay identical={hist == replay}, 200 iterations in {elapsed:.0f} s (< 900 s)")


def test_criterion_08_method_beats_baseline(desk_dataset):
    ds = desk_dataset
    assert len(ds.cases) >= 20
    cfg = TrainConfig(iterations=ORDERING_ITERATIONS, lr=ORDERING_LR, seed=0, sinonet_residual=ORDERING_RESIDUAL)
    res = train(ds.sinograms, MaskBank(ds.train_masks, ds.geometry), ds.geometry, cfg)
    rmse = {}
    for mode in ("li", "joint", "joint+mtr"):
        rep = evaluate_cases(ds.cases, lambda c, m=mode: run_mar(ds.geometry, m, sinogram=c.s_ma, sinonet=res.sinonet,
                                                                  imgnet=res.imgnet).image_hu)
        rmse[mode] = rep.to_dict()["mean_rmse_hu"]
    ok = rmse["joint+mtr"] < rmse["li"] and rmse["joint+mtr"] <= rmse["joint"] + 1.0
    check(8, ok, f"mean RMSE over {len(ds.cases)} cases: joint+mtr {rmse['joint+mtr']:.2f} HU, "
          f"LI {rmse['li']:.2f} HU, joint {rmse['joint']:.2f} HU")


def test_criterion_09_no_metal_passthrough():
    g = desk_parallel()
    sino = forward_project(hu_to_mu(make_phantom(PhantomSpec(seed=4), g)), g)
    ref = mu_to_hu(fbp(sino, g))
    sn = SinoNet.create(seed=0, s_norm=float(np.percentile(sino, 99)))
    im = ImgNet.create(seed=1)
    worst = 0.0
    for mode in ("li", "sinonet", "sinonet+fbp", "joint", "joint+mtr"):
        res = run_mar(g, mode, sinogram=sino, sinonet=sn, imgnet=im)
        assert not res.mask.any()
        worst = max(worst, float(np.abs(res.image_hu - ref).max()))
    check(9, worst <= 1e-6, f"empty segmentation: max |output - FBP| = {worst:.1e} HU over all modes (<= 1e-6)")


def test_criterion_10_serialization(tmp_path):
    rng = np.random.default_rng(0)
    tensors = [(f"t{i}", rng.standard_normal(tuple(rng.integers(1, 6, rng.integers(1, 4)))).astype(np.float32))
               for i in range(6)]
    write_tensor_container(tmp_path / "a.smar", tensors)
    back = read_tensor_container(tmp_path / "a.smar")
    smar_ok = [(n, a.shape, a.tobytes()) for n, a in back] == [(n, a.shape, a.tobytes()) for n, a in tensors]

    sn, im = SinoNet.create(seed=3, s_norm=7.0), ImgNet.create(seed=4)
    save_model(tmp_path / "m.smar", sn, im)
    ck = load_model(tmp_path / "m.smar")
    ck_ok = all(ck.sinonet.params[k].tobytes() == v.tobytes() for k, v in sn.params.items())
    ck_ok &= all(ck.imgnet.params[k].tobytes() == v.tobytes() for k, v in im.params.items())
    save_model(tmp_path / "m2.smar", ck.sinonet, ck.imgnet)
    ck_ok &= (tmp_path / "m2.smar").read_bytes() == (tmp_path / "m.smar").read_bytes()

    ramp = np.linspace(-400, 500, 901, dtype=np.float32).reshape(1, -1)
    write_pgm(tmp_path / "r.pgm", window_to_gray(ramp, 50.0, 380.0))
    lo = 50.0 - 190.0
    expected = np.floor(np.clip((ramp.astype(np.float64) - lo) / 380.0, 0, 1) * 255 + 0.5).astype(np.uint8)
    pgm_ok = np.array_equal(read_pgm(tmp_path / "r.pgm"), expected)
    check(10, smar_ok and ck_ok and pgm_ok,
          f"SMAR round-trip bitwise={smar_ok}, checkpoint round-trip bitwise={ck_ok}, PGM ramp exact={pgm_ok}")
