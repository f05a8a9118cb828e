import numpy as np
import pytest

from smar import _accel
from smar.core import FAN, Geometry


def small_parallel(views=20, dets=49, size=(32, 45)):
    return Geometry(num_views=views, num_detectors=dets, image_size=size)


def small_fan(views=30, dets=49, size=(32, 45)):
    return Geometry(kind=FAN, num_views=views, num_detectors=dets, image_size=size,
                    detector_spacing=2.0, source_to_center=200.0, source_to_detector=400.0)


def disk_image(geometry, radius_mm, value=1.0, supersample=8):
    """Anti-aliased centred disk (pixel coverage by supersampling)."""
    h, w = geometry.image_size
    ps = geometry.pixel_spacing
    o = (np.arange(supersample) + 0.5) / supersample - 0.5
    y = ((np.arange(h) - (h - 1) / 2)[:, None, None, None] + o[None, None, :, None]) * ps
    x = ((np.arange(w) - (w - 1) / 2)[None, :, None, None] + o[None, None, None, :]) * ps
    return (value * ((x**2 + y**2) < radius_mm**2).mean(axis=(2, 3))).astype(np.float32)


def radius_map(geometry):
    h, w = geometry.image_size
    yy, xx = np.mgrid[:h, :w]
    return np.hypot((xx - (w - 1) / 2) * geometry.pixel_spacing, (yy - (h - 1) / 2) * geometry.pixel_spacing)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


@pytest.fixture(params=["parallel", "fan"])
def small_geometry(request):
    return small_parallel() if request.param == "parallel" else small_fan()


def fd_gradient_error(fn, inputs, dtype=np.float64, eps=None, seed=0):
    """Relative error between autodiff and central differences for ``sum(fn(*inputs) * R)``.

    ``fn`` takes Var leaves and returns a Var; R is a fixed random cotangent.
    """
    from smar.nn import autodiff as ad

    rng = np.random.default_rng(seed)
    arrays = [np.asarray(a, dtype) for a in inputs]
    eps = eps if eps is not None else (1e-6 if dtype == np.float64 else 1e-2)
    out = fn(*[ad.Var(a) for a in arrays])
    cot = rng.standard_normal(out.shape).astype(dtype)

    def loss(arrs):
        return float(np.sum(fn(*[ad.Var(a) for a in arrs]).value.astype(np.float64) * cot))

    leaves = [ad.param(a.copy()) for a in arrays]
    ad.backward(ad.sum_all(ad.mul(fn(*leaves), ad.Var(cot))))
    num, ana = [], []
    for k, a in enumerate(arrays):
        g = np.zeros(a.shape)
        flat = a.reshape(-1)
        for i in range(flat.size):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k].reshape(-1)[i] += dtype(eps)
            minus[k].reshape(-1)[i] -= dtype(eps)
            g.reshape(-1)[i] = (loss(plus) - loss(minus)) / (2 * eps)
        num.append(g.ravel())
        ana.append(leaves[k].grad.astype(np.float64).ravel())
    num, ana = np.concatenate(num), np.concatenate(ana)
    return float(np.linalg.norm(num - ana) / max(np.linalg.norm(num), 1e-12))


def toy_training_problem(dtype=np.float64):
    """Tiny SinoNet/ImgNet pair and one paired batch on an 8x8 image geometry.

    Biases are random so no activation sits exactly on a ReLU kink.
    """
    from smar.nn import ImgNet, SinoNet, UNetConfig, init_params
    from smar.projector import forward_project
    from smar.train import MaskBank, sample_paired_batch

    g = Geometry(num_views=8, num_detectors=13, image_size=(8, 8))
    rng = np.random.default_rng(0)
    img = (rng.random((8, 8)) * 0.02).astype(np.float32)
    masks = np.zeros((2, 8, 8), bool)
    masks[0, 2:4, 2] = True
    masks[1, 5, 4:6] = True
    batch = sample_paired_batch(forward_project(img, g)[None], MaskBank(masks, g), np.random.default_rng(1), 1)
    for f in ("s", "s_li1", "s_li2"):
        setattr(batch, f, getattr(batch, f).astype(dtype))

    def params(cfg, seed):
        p = init_params(cfg, seed)
        for k in p:
            if k.endswith(".b") or k == "out.w":
                p[k] = rng.standard_normal(p[k].shape) * 0.1
        return {k: v.astype(dtype) for k, v in p.items()}

    scfg = UNetConfig(depth=1, base_channels=2, in_channels=2, mask_pyramid=True)
    icfg = UNetConfig(depth=1, base_channels=2)
    return g, SinoNet(scfg, params(scfg, 0), s_norm=1.0), ImgNet(icfg, params(icfg, 1)), batch


def total_loss_gradient_error(dtype=np.float64, step=None, max_coords=None, seed=0):
    """Relative error of the autodiff gradient of the total training loss against central differences."""
    from smar.nn import autodiff as ad
    from smar.train import TrainConfig, iteration_losses

    step = step if step is not None else (1e-6 if dtype == np.float64 else 1e-4)
    g, sn, im, batch = toy_training_problem(dtype)
    cfg = TrainConfig()

    def value(sp, ip):
        wrap = lambda d: {k: ad.Var(v) for k, v in d.items()}
        return float(iteration_losses(sn, im, batch, g, cfg, wrap(sp), wrap(ip))[0].value)

    ps, pi = sn.param_vars(), im.param_vars()
    ad.backward(iteration_losses(sn, im, batch, g, cfg, ps, pi)[0])
    coords = [(net, k, i) for net, params in (("s", sn.params), ("i", im.params))
              for k, v in params.items() for i in range(v.size)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[j] for j in pick]
    num, ana = [], []
    for net, k, i in coords:
        base = sn.params if net == "s" else im.params
        plus = {kk: vv.copy() for kk, vv in base.items()}
        minus = {kk: vv.copy() for kk, vv in base.items()}
        plus[k].reshape(-1)[i] += dtype(step)
        minus[k].reshape(-1)[i] -= dtype(step)
        if net == "s":
            d = value(plus, im.params) - value(minus, im.params)
        else:
            d = value(sn.params, plus) - value(sn.params, minus)
        num.append(d / (2 * step))
        ana.append(float((ps if net == "s" else pi)[k].grad.reshape(-1)[i]))
    num, ana = np.array(num), np.array(ana)
    return float(np.linalg.norm(num - ana) / np.linalg.norm(num))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
