"""Fixed-seed property suites behind the `verify` command.

Each suite returns CheckResult rows; a suite passes iff every row does.
The same functions back the acceptance tests, so the CLI and the test
suite agree on what "verified" means.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (
    FloFormatError,
    PnmFormatError,
    flo_read,
    flo_write,
    pgm_read,
    pgm_write,
    ppm_read,
    ppm_write,
)
from .losses import bending_energy
from .network import InitSpec, build_network
from .softmask import head_forward, init_head, mask_report, quadratic_expand


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}" + (
            f"  ({self.detail})" if self.detail else "")


def _gradcheck_case(name, build, params, tol, max_coords=None):
    rep = ad.finite_diff_check(build, params, eps=1e-5, tol=tol,
                               max_coords_per_param=max_coords)
    return CheckResult(name, rep.passed and not rep.excluded_ties,
                       f"max_rel_err={rep.max_rel_err:.2e}")


def suite_grad() -> list[CheckResult]:
    """Central finite differences vs analytic gradients for every op and
    the end-to-end lofe network on a 16x16 input."""
    rng = np.random.default_rng(20)
    out = []

    x = Tensor(rng.normal(0, 1, (1, 2, 5, 5)), requires_grad=True)
    spec = ad.ConvSpec(Tensor(rng.normal(0, 1, (3, 2, 3, 3)), requires_grad=True),
                       Tensor(rng.normal(0, 1, 3), requires_grad=True), 2, 1)
    out.append(_gradcheck_case(
        "conv2d", lambda: ad.sum_all(ad.elementwise_mul(ad.conv2d(x, spec), ad.conv2d(x, spec))),
        [x, spec.weight, spec.bias], 1e-4))

    xd = Tensor(rng.normal(0, 1, (1, 3, 3, 3)), requires_grad=True)
    dspec = ad.ConvSpec(Tensor(rng.normal(0, 1, (3, 2, 2, 2)), requires_grad=True),
                        Tensor(rng.normal(0, 1, 2), requires_grad=True), 2, 0)
    out.append(_gradcheck_case(
        "deconv2d", lambda: ad.sum_all(ad.elementwise_mul(ad.deconv2d(xd, dspec),
                                                          ad.deconv2d(xd, dspec))),
        [xd, dspec.weight, dspec.bias], 1e-4))

    m = Tensor(rng.normal(0, 1, (1, 4, 4, 4)), requires_grad=True)
    out.append(_gradcheck_case(
        "channel_maxout_select",
        lambda: ad.sum_all(ad.elementwise_mul(ad.channel_maxout_select(m),
                                              ad.channel_maxout_select(m))),
        [m], 1e-4))
    out.append(_gradcheck_case(
        "channel_softmax",
        lambda: ad.sum_all(ad.elementwise_mul(ad.channel_softmax(m), m)),
        [m], 1e-4))

    a = Tensor(rng.normal(0, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.normal(0, 1, (3, 4)), requires_grad=True)
    out.append(_gradcheck_case(
        "elementwise mul/add/leaky_relu",
        lambda: ad.sum_all(ad.leaky_relu(ad.elementwise_mul(ad.elementwise_add(a, b), a), 0.1)),
        [a, b], 1e-4))

    sc = Tensor(rng.normal(0, 1, (1, 6, 3, 3)), requires_grad=True)
    out.append(_gradcheck_case(
        "sum_channels", lambda: ad.sum_all(ad.elementwise_mul(ad.sum_channels(sc, 3),
                                                              ad.sum_channels(sc, 3))),
        [sc], 1e-4))

    mm = Tensor(rng.normal(0, 1, (1, 3, 3, 3)), requires_grad=True)
    ff = Tensor(rng.normal(0, 1, (1, 6, 3, 3)), requires_grad=True)
    out.append(_gradcheck_case(
        "masked_flow_sum", lambda: ad.sum_all(ad.elementwise_mul(
            ad.masked_flow_sum(mm, ff), ad.masked_flow_sum(mm, ff))),
        [mm, ff], 1e-4))

    img = Tensor(rng.random((1, 2, 6, 6)), requires_grad=True)
    fl = Tensor(rng.uniform(0.2, 0.8, (1, 2, 6, 6)), requires_grad=True)
    out.append(_gradcheck_case(
        "bilinear_warp", lambda: ad.sum_all(ad.elementwise_mul(
            ad.bilinear_warp(img, fl), ad.bilinear_warp(img, fl))),
        [img, fl], 1e-4))

    bf = Tensor(rng.normal(0, 1, (1, 2, 6, 6)), requires_grad=True)
    out.append(_gradcheck_case("bending_energy", lambda: bending_energy(bf), [bf], 1e-4))

    net = build_network("lofe", 3, InitSpec(21))
    i1 = Tensor(rng.random((1, 3, 16, 16)))
    i2 = Tensor(rng.random((1, 3, 16, 16)))
    params = [t for _, t in net.parameters()]

    def net_loss():
        flow, _ = net.forward(i1, i2)
        return ad.sum_all(ad.elementwise_mul(flow, flow))

    out.append(_gradcheck_case("lofe network end-to-end (16x16)", net_loss, params,
                               1e-4, max_coords=8))
    return out


def suite_masks(n_passes: int = 100) -> list[CheckResult]:
    """Post-maxout disjointness and argmax coverage over random forwards."""
    rng = np.random.default_rng(22)
    violations = 0
    argmax_covered = True
    zero_max_pixels = 0
    total_pixels = 0
    for i in range(n_passes):
        k = int(rng.integers(2, 12))
        c = int(rng.integers(3, 9))
        head = init_head("lofe", k, c, 1, np.random.default_rng(1000 + i))
        x = Tensor(rng.normal(0, 1, (1, c, 8, 8)))
        _, masks = head_forward(head, x)
        rep = mask_report(masks)
        violations += rep.disjointness_violations
        total_pixels += rep.n_pixels
        zero_max_pixels += round((1.0 - rep.coverage) * rep.n_pixels)
        w = np.argmax(masks.raw.data, axis=1)
        sel = np.take_along_axis(masks.selected.data, w[:, None], axis=1)[:, 0]
        top = masks.raw.data.max(axis=1)
        argmax_covered &= bool(np.array_equal(sel, top))
    return [
        CheckResult("disjointness violations == 0 over "
                    f"{n_passes} forwards", violations == 0, f"violations={violations}"),
        CheckResult("argmax channel carries the per-pixel max everywhere",
                    argmax_covered),
        CheckResult("zero-max corner pixels (reported, not asserted)", True,
                    f"{zero_max_pixels}/{total_pixels}"),
    ]


def suite_quadratic(n_cases: int = 100) -> list[CheckResult]:
    """head_forward vs the closed-form quadratic expansion, C=8, k=10."""
    rng = np.random.default_rng(23)
    worst = 0.0
    for i in range(n_cases):
        head = init_head("lofe", 10, 8, 1, np.random.default_rng(2000 + i))
        x = Tensor(rng.normal(0, 1, (1, 8, 6, 6)))
        flow, masks = head_forward(head, x)
        winners = np.argmax(masks.raw.data, axis=1)
        per_layer = np.stack([quadratic_expand(head, x, n) for n in range(10)])
        picked = np.take_along_axis(per_layer, winners[None, :, None], axis=0)[0]
        worst = max(worst, float(np.abs(flow.data - picked).max()))
    return [CheckResult(f"quadratic identity over {n_cases} random heads",
                        worst < 1e-10, f"max_abs_diff={worst:.2e}")]


def suite_bending(n_affine: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(24)
    ys, xs = np.mgrid[0:9, 0:11].astype(np.float64)
    exact = True
    for _ in range(n_affine):
        c = np.round(rng.uniform(-2, 2, 6) * 1024) / 1024
        u = c[0] * xs + c[1] * ys + c[2]
        v = c[3] * xs + c[4] * ys + c[5]
        exact &= bending_energy(Tensor(np.stack([u, v])[None])).item() == 0.0
    xs5, _ = np.mgrid[0:5, 0:5][::-1]
    flow = np.stack([xs5.astype(np.float64) ** 2, np.zeros((5, 5))])[None]
    val = bending_energy(Tensor(flow)).item()
    return [
        CheckResult(f"affine nullspace exact on {n_affine} dyadic flows", exact),
        CheckResult("u=x^2 on 5x5 gives 36", val == 36.0, f"value={val}"),
    ]


def suite_io() -> list[CheckResult]:
    rng = np.random.default_rng(25)
    out = []
    with tempfile.TemporaryDirectory() as td:
        flow = rng.normal(0, 4, (2, 5, 7))
        fp = os.path.join(td, "x.flo")
        flo_write(flow, fp)
        back = flo_read(fp)
        out.append(CheckResult("flo round-trip at f32 precision",
                               np.array_equal(back, flow.astype(np.float32))))
        bad = os.path.join(td, "bad.flo")
        with open(bad, "wb") as fh:
            fh.write(b"JUNKJUNKJUNKJUNK")
        try:
            flo_read(bad)
            out.append(CheckResult("flo bad magic rejected", False))
        except FloFormatError:
            out.append(CheckResult("flo bad magic rejected", True))

        flow2 = np.array([[[1.5, 0.0]], [[-2.25, 0.0]]])
        fp2 = os.path.join(td, "layout.flo")
        flo_write(flow2, fp2)
        raw = open(fp2, "rb").read()
        layout_ok = (raw[:4] == b"PIEH"
                     and np.frombuffer(raw[4:12], dtype="<i4").tolist() == [2, 1]
                     and np.frombuffer(raw[12:], dtype="<f4").tolist() == [1.5, -2.25, 0.0, 0.0])
        out.append(CheckResult("flo byte layout (magic, dims, interleaved f32)", layout_ok))

        img = np.round(rng.random((3, 4, 6)) * 255) / 255.0
        pp = os.path.join(td, "x.ppm")
        ppm_write(img, pp)
        out.append(CheckResult("ppm quantized round-trip exact",
                               np.array_equal(ppm_read(pp), img)))
        wp = os.path.join(td, "w.ppm")
        ppm_write(np.ones((3, 1, 1)), wp)
        out.append(CheckResult("1x1 white ppm byte layout",
                               open(wp, "rb").read() == b"P6\n1 1\n255\n\xff\xff\xff"))
        g = np.round(rng.random((3, 5)) * 255) / 255.0
        gp = os.path.join(td, "x.pgm")
        pgm_write(g, gp)
        out.append(CheckResult("pgm round-trip exact", np.array_equal(pgm_read(gp), g)))
        trunc = os.path.join(td, "t.ppm")
        with open(trunc, "wb") as fh:
            fh.write(b"P6\n2 2\n255\n\x00\x00\x00")
        try:
            ppm_read(trunc)
            out.append(CheckResult("ppm truncation rejected", False))
        except PnmFormatError:
            out.append(CheckResult("ppm truncation rejected", True))
    return out


SUITES = {
    "grad": suite_grad,
    "masks": suite_masks,
    "quadratic": suite_quadratic,
    "bending": suite_bending,
    "io": suite_io,
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        results = []
        for key in SUITES:
            results.extend(SUITES[key]())
        return results
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
