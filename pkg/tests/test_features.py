import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafcv.errors import ConfigError, ImageTooSmall
from leafcv.features import (HogParams, LbpParams, compute_gradients, extract, hog_extract, lbp_code_image,
                             lbp_extract, make_params, params_fingerprint, raw_flatten)
from leafcv.imaging import ImageBuffer, to_grayscale


# ---------------------------------------------------------------------------
# brute-force oracles, written as plain loops

def naive_gradients(g):
    h, w = g.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            gx[y, x] = 0.5 * (g[y, min(x + 1, w - 1)] - g[y, max(x - 1, 0)])
            gy[y, x] = 0.5 * (g[min(y + 1, h - 1), x] - g[max(y - 1, 0), x])
    return gx, gy


def naive_hog(g, orientations, cell, block, stride=1, clip=0.2):
    h, w = g.shape
    gx, gy = naive_gradients(g)
    ncy, ncx = h // cell, w // cell
    width = math.pi / orientations
    hist = np.zeros((ncy, ncx, orientations))
    for y in range(ncy * cell):
        for x in range(ncx * cell):
            mag = math.sqrt(gx[y, x] ** 2 + gy[y, x] ** 2)
            ang = math.atan2(gy[y, x], gx[y, x])
            while ang < 0:
                ang += math.pi
            while ang >= math.pi:
                ang -= math.pi
            # nearest two bin centers (b + 0.5) * width, wrapping around pi
            pos = ang / width - 0.5
            lo = math.floor(pos)
            frac = pos - lo
            hist[y // cell, x // cell, lo % orientations] += mag * (1 - frac)
            hist[y // cell, x // cell, (lo + 1) % orientations] += mag * frac
    out = []
    for by in range(0, ncy - block + 1, stride):
        for bx in range(0, ncx - block + 1, stride):
            v = []
            for cy in range(by, by + block):
                for cx in range(bx, bx + block):
                    v.extend(hist[cy, cx])
            norm = math.sqrt(sum(t * t for t in v))
            if norm == 0:
                out.extend([0.0] * len(v))
                continue
            v = [min(t / norm, clip) for t in v]
            norm = math.sqrt(sum(t * t for t in v))
            out.extend(t / norm for t in v)
    return np.array(out)


def reflect(i, n):
    while i < 0 or i >= n:
        i = -1 - i if i < 0 else 2 * n - 1 - i
    return i


def snap(v):
    return float(round(v)) if abs(v - round(v)) < 1e-9 else v


def naive_lbp(g, radius, points):
    h, w = g.shape
    codes = np.zeros((h, w), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            bits = []
            for k in range(points):
                theta = 2 * math.pi * k / points
                sx = snap(x + radius * math.cos(theta))
                sy = snap(y - radius * math.sin(theta))
                x0, y0 = math.floor(sx), math.floor(sy)
                fx, fy = sx - x0, sy - y0
                # lerp form: taps that coincide under reflection reproduce the pixel exactly
                ya, yb = reflect(y0, h), reflect(y0 + 1, h)
                xa, xb = reflect(x0, w), reflect(x0 + 1, w)
                top = g[ya, xa] + fx * (g[ya, xb] - g[ya, xa])
                bottom = g[yb, xa] + fx * (g[yb, xb] - g[yb, xa])
                v = top + fy * (bottom - top)
                bits.append(1 if v >= g[y, x] else 0)
            transitions = sum(bits[k] != bits[(k + 1) % points] for k in range(points))
            codes[y, x] = sum(bits) if transitions <= 2 else points + 1
    return codes


def gray_image(rng, h, w):
    return ImageBuffer(rng.random((h, w, 1)))


# ---------------------------------------------------------------------------
# gradients

def test_gradients_constant_and_step():
    mag, _ = compute_gradients(ImageBuffer(np.full((6, 6), 0.4)))
    assert np.all(mag == 0)
    step = np.zeros((6, 8))
    step[:, 4:] = 1.0
    mag, ori = compute_gradients(ImageBuffer(step))
    np.testing.assert_array_equal(mag[:, 3], 0.5)
    np.testing.assert_array_equal(mag[:, 4], 0.5)
    np.testing.assert_array_equal(ori[:, 3:5], 0.0)
    assert np.all(mag[:, :3] == 0) and np.all(mag[:, 5:] == 0)


def test_gradients_match_loop_oracle(rng):
    img = gray_image(rng, 8, 8)
    g = img.pixels[:, :, 0].astype(np.float64)
    gx, gy = naive_gradients(g)
    mag, ori = compute_gradients(img)
    np.testing.assert_allclose(mag, np.hypot(gx, gy), atol=1e-6)
    expected = np.mod(np.arctan2(gy, gx), math.pi)
    diff = np.abs(ori - expected)
    assert np.all(np.minimum(diff, math.pi - diff) < 1e-6)
    assert ori.min() >= 0 and ori.max() < math.pi


# ---------------------------------------------------------------------------
# HOG

def test_hog_paper_dimensions():
    img = ImageBuffer(np.random.default_rng(0).random((224, 224)))
    t0 = time.perf_counter()
    assert hog_extract(img, HogParams(cell_size=16)).dim == 6084
    assert hog_extract(img, HogParams(cell_size=14)).dim == 8100
    assert time.perf_counter() - t0 < 1.0


def test_hog_constant_image_is_zero():
    fv = hog_extract(ImageBuffer(np.full((32, 32), 0.7)), HogParams(cell_size=8))
    assert fv.dim == 3 * 3 * 36 and np.all(fv.values == 0)


def test_hog_matches_brute_force(rng):
    for _ in range(20):
        img = gray_image(rng, 32, 32)
        got = hog_extract(img, HogParams(cell_size=8)).values
        want = naive_hog(img.pixels[:, :, 0].astype(np.float64), 9, 8, 2)
        assert np.max(np.abs(got - want)) < 1e-5


def test_hog_brute_force_other_params(rng):
    img = gray_image(rng, 30, 27)
    p = HogParams(orientations=6, cell_size=5, block_size=3, block_stride=2, clip=0.3)
    want = naive_hog(img.pixels[:, :, 0].astype(np.float64), 6, 5, 3, 2, 0.3)
    np.testing.assert_allclose(hog_extract(img, p).values, want, atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(orientations=st.integers(1, 12), cell=st.integers(2, 9), block=st.integers(1, 3),
       stride=st.integers(1, 3), w=st.integers(4, 40), h=st.integers(4, 40))
def test_hog_dim_formula(orientations, cell, block, stride, w, h):
    p = HogParams(orientations=orientations, cell_size=cell, block_size=block, block_stride=stride)
    img = ImageBuffer(np.zeros((h, w)))
    if w // cell < block or h // cell < block:
        with pytest.raises(ImageTooSmall):
            hog_extract(img, p)
        return
    nbx = (w // cell - block) // stride + 1
    nby = (h // cell - block) // stride + 1
    assert hog_extract(img, p).dim == nbx * nby * block * block * orientations == p.dim(w, h)


def test_hog_block_norms_and_sign(rng):
    p = HogParams(cell_size=6, block_size=2)
    for _ in range(5):
        v = hog_extract(gray_image(rng, 36, 30), p).values.reshape(-1, 36)
        assert np.all(v >= 0)
        assert np.all(np.linalg.norm(v, axis=1) <= 1 + 1e-6)


def test_hog_offset_invariance(rng):
    base = rng.random((32, 32)) * 0.5
    p = HogParams(cell_size=8)
    a = hog_extract(ImageBuffer(base), p).values
    b = hog_extract(ImageBuffer(base + 0.375), p).values
    assert np.max(np.abs(a - b)) < 1e-6


def test_hog_flip_is_permutation_with_bin_reversal(rng):
    p = HogParams(orientations=9, cell_size=8, block_size=2)
    for _ in range(5):
        img = gray_image(rng, 32, 40)
        orig = hog_extract(img, p).values.reshape(3, 4, 2, 2, 9)
        flipped = hog_extract(ImageBuffer(img.pixels[:, ::-1]), p).values.reshape(3, 4, 2, 2, 9)
        np.testing.assert_allclose(flipped, orig[:, ::-1, :, ::-1, ::-1], atol=1e-6)


def test_hog_rejects_small_and_bad_params():
    with pytest.raises(ImageTooSmall):
        hog_extract(ImageBuffer(np.zeros((20, 20))), HogParams(cell_size=14))
    with pytest.raises(ConfigError):
        HogParams(cell_size=1)


# ---------------------------------------------------------------------------
# LBP

def test_lbp_paper_dimension():
    img = ImageBuffer(np.random.default_rng(0).random((224, 224)))
    t0 = time.perf_counter()
    fv = lbp_extract(img)
    assert fv.dim == 50176
    assert time.perf_counter() - t0 < 1.0
    assert np.all(fv.values == np.round(fv.values)) and fv.values.min() >= 0 and fv.values.max() <= 25


def test_lbp_constant_image():
    fv = lbp_extract(ImageBuffer(np.full((8, 8), 0.3)))
    assert fv.dim == 64
    np.testing.assert_array_equal(fv.values, 24.0)


def test_lbp_far_from_bright_pixel():
    px = np.zeros((21, 21))
    px[10, 10] = 1.0
    codes = lbp_code_image(ImageBuffer(px))
    assert codes[10, 2] == 24 and codes[2, 2] == 24 and codes[18, 18] == 24
    assert codes[10, 10] == 0


@pytest.mark.parametrize("radius,points", [(1, 8), (1, 24), (3, 8), (3, 24)])
def test_lbp_matches_naive_oracle(radius, points, rng):
    p = LbpParams(radius=radius, points=points)
    for _ in range(5):
        img = gray_image(rng, 16, 16)
        want = naive_lbp(img.pixels[:, :, 0].astype(np.float64), radius, points)
        np.testing.assert_array_equal(lbp_code_image(img, p), want)


def test_lbp_code_range_and_uniform_codes(rng):
    p = LbpParams(radius=2, points=16)
    codes = lbp_code_image(gray_image(rng, 24, 24), p)
    assert set(np.unique(codes)) <= set(range(18))
    assert np.any(codes == 17) and np.any(codes <= 16)


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_lbp_monotonic_invariance_on_grid(radius, rng):
    # with four axis-aligned neighbors every sample is an exact pixel value
    p = LbpParams(radius=radius, points=4)
    g = rng.permutation(400).reshape(20, 20) / 399.0
    a = lbp_code_image(ImageBuffer(g), p)
    b = lbp_code_image(ImageBuffer(g ** 2), p)
    np.testing.assert_array_equal(a, b)


def test_lbp_rejects_small():
    with pytest.raises(ImageTooSmall):
        lbp_code_image(ImageBuffer(np.zeros((6, 6))), LbpParams(radius=3))
    with pytest.raises(ConfigError):
        LbpParams(points=3)


# ---------------------------------------------------------------------------
# raw and dispatch

def test_raw_flatten():
    fv = raw_flatten(ImageBuffer(np.array([[0.1, 0.2], [0.3, 0.4]])))
    np.testing.assert_allclose(fv.values, [0.1, 0.2, 0.3, 0.4], atol=1e-7)
    rgb = ImageBuffer(np.random.default_rng(2).random((224, 224, 3)))
    assert raw_flatten(rgb).dim == 50176
    np.testing.assert_array_equal(raw_flatten(rgb).values, raw_flatten(to_grayscale(rgb)).values)


def test_extract_dispatch_and_fingerprints(rng):
    img = ImageBuffer(rng.random((32, 32, 3)))
    hog = extract(img, "hog", HogParams(cell_size=8))
    np.testing.assert_array_equal(hog.values, hog_extract(to_grayscale(img), HogParams(cell_size=8)).values)
    assert hog.params_fingerprint == params_fingerprint("hog", HogParams(cell_size=8))
    assert hog.params_fingerprint != params_fingerprint("hog", HogParams(cell_size=16))
    assert make_params("lbp", {"radius": 1, "points": 8}) == LbpParams(1, 8)
    with pytest.raises(ConfigError):
        make_params("sift")
