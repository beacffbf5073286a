import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqmamba.autodiff import Tensor, ops
from freqmamba.autodiff.gradcheck import directional_check, param_check
from freqmamba.ssm import (BlockShape, SsmParams, causal_convolve, init_mamba_block, mamba_block, mamba_stack,
                           selective_scan, ssm_kernel, ssm_scan, zoh_discretize)
from freqmamba.ssm import _branch


def block(rng, D=6, Di=8, N=4, time_dim=0, prefix="blk."):
    params = init_mamba_block(rng, BlockShape(D, Di, n_state=N, dt_rank=2, time_dim=time_dim), prefix)
    return params


# ---------------------------------------------------------------- discretization

def test_zoh_scalar_values():
    d = zoh_discretize(SsmParams(np.array(-1.0), np.array(1.0), np.array(1.0), np.array(1.0)))
    assert float(d.A_bar) == pytest.approx(math.exp(-1), abs=1e-15)
    assert float(d.B_bar) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert round(float(d.A_bar), 4) == 0.3679 and round(float(d.B_bar), 4) == 0.6321


def test_zoh_zero_limit():
    d = zoh_discretize(SsmParams(np.array([0.0, 1e-12]), np.array([2.0, 2.0]), np.ones(2), np.array(0.3)))
    np.testing.assert_allclose(d.A_bar, 1.0, atol=1e-12)
    np.testing.assert_allclose(d.B_bar, 0.6, rtol=1e-9)
    # continuity across the switch
    near = zoh_discretize(SsmParams(np.array([-2e-8]), np.array([2.0]), np.ones(1), np.array(0.3)))
    assert float(near.B_bar[0]) == pytest.approx(0.6, rel=1e-7)


def test_zoh_stable(rng):
    a = -rng.uniform(1e-3, 20, 1000)
    delta = rng.uniform(1e-4, 5, 1000)
    d = zoh_discretize(SsmParams(a, rng.standard_normal(1000), np.ones(1000), delta))
    assert np.all(np.abs(d.A_bar) < 1)


def test_delta_must_be_positive():
    with pytest.raises(ValueError):
        SsmParams(np.array(-1.0), np.array(1.0), np.array(1.0), np.array(0.0))


# ---------------------------------------------------------------- raw scan

def scan_inputs(rng, nb=2, L=7, D=3, N=4):
    return (rng.standard_normal((nb, L, D)), rng.uniform(0.05, 0.8, (nb, L, D)),
            -rng.uniform(0.2, 3, (D, N)), rng.standard_normal((nb, L, N)), rng.standard_normal((nb, L, N)))


def reference_scan(u, delta, A, B, C):
    nb, L, D = u.shape
    y = np.zeros_like(u)
    for b in range(nb):
        for d in range(D):
            h = np.zeros(A.shape[1])
            for t in range(L):
                dA = delta[b, t, d] * A[d]
                h = np.exp(dA) * h + np.expm1(dA) / A[d] * B[b, t] * u[b, t, d]
                y[b, t, d] = C[b, t] @ h
    return y


def test_scan_matches_loop(rng):
    args = scan_inputs(rng)
    np.testing.assert_allclose(ssm_scan(*args).data, reference_scan(*args), atol=1e-12)


def test_zero_readout(rng):
    u, delta, A, B, C = scan_inputs(rng)
    assert not ssm_scan(u, delta, A, B, np.zeros_like(C)).data.any()


def test_single_step(rng):
    u, delta, A, B, C = scan_inputs(rng, L=1)
    d = zoh_discretize(SsmParams(A, B[:, 0, None, :], C, delta[:, 0, :, None]))
    expect = np.einsum("bn,bdn->bd", C[:, 0], d.B_bar) * u[:, 0]
    np.testing.assert_allclose(ssm_scan(u, delta, A, B, C).data[:, 0], expect, atol=1e-14)


@given(st.integers(1, 4), st.integers(1, 64), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_lti_scan_equals_convolution(D, L, N, seed):
    r = np.random.default_rng(seed)
    u = r.standard_normal((1, L, D))
    dt = r.uniform(0.01, 1.0, D)
    A = -r.uniform(0.1, 4, (D, N))
    B, C = r.standard_normal(N), r.standard_normal(N)
    y = ssm_scan(u, np.broadcast_to(dt, (1, L, D)), A, np.broadcast_to(B, (1, L, N)),
                 np.broadcast_to(C, (1, L, N))).data[0]
    d = zoh_discretize(SsmParams(A, B[None, :], C, dt[:, None]))
    K = ssm_kernel(d.A_bar, d.B_bar, C, L)
    assert np.abs(y - causal_convolve(u[0], K)).max() < 1e-8


def test_state_bound_constant_delta(rng):
    L, N = 200, 5
    u = rng.uniform(-1, 1, (1, L, 1))
    A = -rng.uniform(0.1, 2, (1, N))
    B = rng.standard_normal(N)
    delta = np.full((1, L, 1), 0.3)
    d = zoh_discretize(SsmParams(A, B, np.ones(N), np.array(0.3)))
    bound = np.linalg.norm(d.B_bar) * np.abs(u).max() / (1 - d.A_bar.max())
    # read the state one coordinate at a time through unit readouts
    states = np.stack([ssm_scan(u, delta, A, np.broadcast_to(B, (1, L, N)),
                                np.broadcast_to(np.eye(N)[n], (1, L, N))).data[0, :, 0] for n in range(N)], axis=1)
    assert np.linalg.norm(states, axis=1).max() <= bound


def test_scan_gradients(rng):
    u, delta, A, B, C = scan_inputs(rng, nb=2, L=6, D=3, N=3)
    errs = directional_check(ssm_scan, [u, delta, A, B, C], probes=8, rng=rng)
    assert max(errs) < 1e-5


def test_scan_gradient_through_small_a(rng):
    u, delta, A, B, C = scan_inputs(rng, nb=1, L=5, D=2, N=2)
    A[0, 0] = 0.0
    A[1, 1] = -1e-9
    errs = directional_check(lambda *a: ssm_scan(*a), [u, delta, A, B, C], wrt=[0, 1, 3, 4], rng=rng)
    assert max(errs) < 1e-5


def test_scan_shape_errors(rng):
    u, delta, A, B, C = scan_inputs(rng)
    with pytest.raises(ops.DimensionError):
        ssm_scan(u, delta, A[:, :2], B, C)


# ---------------------------------------------------------------- selective scan and block

def test_backward_direction_is_reversed_forward(rng):
    p = block(rng)
    x = rng.standard_normal((2, 9, 8))
    bwd = selective_scan(x, p, "blk.f.", "bwd").data
    ref = selective_scan(x[:, ::-1], p, "blk.f.", "fwd").data[:, ::-1]
    assert np.array_equal(bwd, ref)
    with pytest.raises(ValueError):
        selective_scan(x, p, "blk.f.", "sideways")


def test_zero_output_projection_is_identity(rng):
    p = block(rng, time_dim=4)
    for k in ("blk.out_w", "blk.out_b"):
        p[k] = Tensor(np.zeros(p[k].shape))
    Z = rng.standard_normal((3, 10, 6))
    assert np.array_equal(mamba_block(Z, p, "blk.", rng.standard_normal((3, 4))).data, Z)
    stack = {**p, **{k.replace("blk.", "b2."): v for k, v in p.items()}}
    assert np.array_equal(mamba_stack(Z, stack, ["blk.", "b2."]).data, Z)


def test_all_zero_projections_identity(rng):
    p = {k: Tensor(np.zeros(v.shape)) if "in_" in k or "out_" in k else v for k, v in block(rng).items()}
    Z = rng.standard_normal((8, 6))
    assert np.array_equal(mamba_block(Z, p, "blk.").data, Z)


def test_shape_preserved_full_width():
    rng = np.random.default_rng(1)
    p = init_mamba_block(rng, BlockShape(512, 1024, n_state=16, dt_rank=32), "x.")
    Z = rng.standard_normal((1, 256, 512))
    assert mamba_block(Z, p, "x.").shape == (1, 256, 512)


def test_palindrome_symmetry_with_shared_weights(rng):
    p = block(rng)
    half = rng.standard_normal((1, 5, 8))
    xin = Tensor(np.concatenate([half, half[:, ::-1]], axis=1))
    total = ops.add(_branch(xin, p, "blk.f.", False), _branch(xin, p, "blk.f.", True)).data
    assert np.array_equal(total, total[:, ::-1])
    zh = rng.standard_normal((1, 4, 6))
    Z = np.concatenate([zh, rng.standard_normal((1, 1, 6)), zh[:, ::-1]], axis=1)
    out = mamba_block(Z, p, "blk.", shared_directions=True).data
    assert np.array_equal(out, out[:, ::-1])


def test_depth_one_stack_is_block(rng):
    p = block(rng)
    Z = rng.standard_normal((2, 5, 6))
    assert np.array_equal(mamba_stack(Z, p, ["blk."]).data, mamba_block(Z, p, "blk.").data)
    with pytest.raises(ValueError):
        mamba_stack(Z, p, [])


def test_block_dimension_error(rng):
    with pytest.raises(ops.DimensionError):
        mamba_block(rng.standard_normal((2, 5, 7)), block(rng), "blk.")


def test_block_gradient(rng):
    p = block(rng, D=4, Di=6, N=3, time_dim=3)
    Z = rng.standard_normal((2, 5, 4))
    temb = rng.standard_normal((2, 3))
    errs = param_check(lambda q: mamba_block(Z, q, "blk.", temb), p, probes=6, rng=rng)
    assert max(errs) < 1e-5
    errs = directional_check(lambda z: mamba_block(z, p, "blk.", temb), [Z], probes=4, rng=rng)
    assert max(errs) < 1e-5


def test_init_a_negative(rng):
    p = block(rng, N=5)
    A = -np.exp(p["blk.f.A_log"].data)
    assert np.all(A < 0)
    np.testing.assert_allclose(A[0], -np.arange(1, 6), rtol=1e-14)
    dt = np.log1p(np.exp(p["blk.f.dt_b"].data))
    assert dt.min() >= 1e-3 - 1e-12 and dt.max() <= 1e-1 + 1e-12
