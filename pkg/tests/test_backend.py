"""Parity and selection tests for the compiled and NumPy training kernels."""

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from funcmean._backend import BACKEND_NAME
from funcmean._backend import _numpy_mlp as pyimpl

try:
    from funcmean._backend import _mlpcore as cyimpl
except ImportError:
    cyimpl = None

needs_compiled = pytest.mark.skipif(
    cyimpl is None, reason="compiled extension not built"
)


def random_instance(seed, widths=(2, 5, 4, 1), batch=7):
    rng = np.random.default_rng(seed)
    weights = [np.ascontiguousarray(rng.normal(size=(widths[i + 1], widths[i])))
               for i in range(len(widths) - 1)]
    shifts = [np.ascontiguousarray(rng.normal(size=widths[i + 1]) * 0.2)
              for i in range(len(widths) - 2)]
    x = np.ascontiguousarray(rng.uniform(size=(batch, widths[0])))
    dy = np.ascontiguousarray(rng.normal(size=batch))
    return x, weights, shifts, dy


def test_backend_name_is_valid():
    assert BACKEND_NAME in {"cython", "python"}


@needs_compiled
def test_forward_parity():
    for seed in range(8):
        x, weights, shifts, _ = random_instance(seed)
        got = cyimpl.forward(x, weights, shifts)
        want = pyimpl.forward(x, weights, shifts)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_forward_hidden_parity():
    x, weights, shifts, _ = random_instance(3)
    got_y, got_h = cyimpl.forward_hidden(x, weights, shifts)
    want_y, want_h = pyimpl.forward_hidden(x, weights, shifts)
    np.testing.assert_allclose(got_y, want_y, rtol=1e-12, atol=1e-14)
    assert len(got_h) == len(want_h)
    for a, b in zip(got_h, want_h):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_backward_parity():
    for seed in range(8):
        x, weights, shifts, dy = random_instance(seed)
        _, hiddens_c = cyimpl.forward_hidden(x, weights, shifts)
        _, hiddens_p = pyimpl.forward_hidden(x, weights, shifts)
        dw_c, ds_c = cyimpl.backward(x, weights, shifts, hiddens_c, dy)
        dw_p, ds_p = pyimpl.backward(x, weights, shifts, hiddens_p, dy)
        for a, b in zip(dw_c, dw_p):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
        for a, b in zip(ds_c, ds_p):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


@needs_compiled
def test_adam_step_parity():
    rng = np.random.default_rng(5)
    shapes = [(4, 2), (3, 4), (1, 3), (4,), (3,)]
    params_c = [np.ascontiguousarray(rng.normal(size=s)) for s in shapes]
    params_p = [p.copy() for p in params_c]
    grads = [np.ascontiguousarray(rng.normal(size=s)) for s in shapes]
    m_c = [np.zeros(s) for s in shapes]
    v_c = [np.zeros(s) for s in shapes]
    m_p = [np.zeros(s) for s in shapes]
    v_p = [np.zeros(s) for s in shapes]
    for t in (1, 2, 3):
        cyimpl.adam_step(params_c, grads, m_c, v_c, t, 1e-3, 0.9, 0.999, 1e-8)
        pyimpl.adam_step(params_p, grads, m_p, v_p, t, 1e-3, 0.9, 0.999, 1e-8)
    for a, b in zip(params_c, params_p):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    for a, b in zip(m_c + v_c, m_p + v_p):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@needs_compiled
def test_backward_relu_kink_zero_on_both():
    # a unit sitting exactly at its shift must contribute no gradient
    x = np.array([[0.5]])
    weights = [np.array([[1.0]]), np.array([[2.0]])]
    shifts = [np.array([0.5])]
    dy = np.array([1.0])
    for impl in (pyimpl, cyimpl):
        _, hiddens = impl.forward_hidden(x, weights, shifts)
        dw, ds = impl.backward(x, weights, shifts, hiddens, dy)
        assert dw[0][0, 0] == 0.0
        assert ds[0][0] == 0.0


def _run_with_backend(backend, code):
    env = dict(os.environ, FUNCMEAN_BACKEND=backend)
    return subprocess.run([sys.executable, "-c", code],
                          capture_output=True, text=True, env=env)


def test_env_var_selects_python_backend():
    proc = _run_with_backend(
        "python", "from funcmean._backend import BACKEND_NAME; print(BACKEND_NAME)"
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "python"


@needs_compiled
def test_env_var_selects_cython_backend():
    proc = _run_with_backend(
        "cython", "from funcmean._backend import BACKEND_NAME; print(BACKEND_NAME)"
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "cython"


def test_env_var_rejects_unknown_backend():
    proc = _run_with_backend("fortran", "import funcmean")
    assert proc.returncode != 0
    assert "FUNCMEAN_BACKEND" in proc.stderr


_FIT_SNIPPET = """
import numpy as np
from funcmean import Grid, Architecture, TrainConfig, fit_targets
grid = Grid(dims=(6, 6))
targets = np.sin(2 * np.pi * grid.coords()[:, 0]) * 0.3
arch = Architecture(n_hidden=2, widths=(2, 5, 5, 1))
params, report = fit_targets(targets, grid, arch, TrainConfig(epochs=20, seed=4))
flat = np.concatenate([a.ravel() for a in params.all_arrays()])
print(repr(report.final_data_loss))
print(",".join(repr(float(v)) for v in flat))
"""


def test_full_fit_agrees_across_backends():
    py = _run_with_backend("python", _FIT_SNIPPET)
    assert py.returncode == 0, py.stderr
    if cyimpl is None:
        pytest.skip("compiled extension not built")
    cy = _run_with_backend("cython", _FIT_SNIPPET)
    assert cy.returncode == 0, cy.stderr
    loss_py = float(py.stdout.splitlines()[0])
    loss_cy = float(cy.stdout.splitlines()[0])
    assert loss_cy == pytest.approx(loss_py, rel=1e-9, abs=1e-12)
    flat_py = np.array([float(v) for v in py.stdout.splitlines()[1].split(",")])
    flat_cy = np.array([float(v) for v in cy.stdout.splitlines()[1].split(",")])
    np.testing.assert_allclose(flat_cy, flat_py, rtol=1e-9, atol=1e-11)


def test_fit_is_bitwise_deterministic_within_backend():
    outs = []
    for _ in range(2):
        proc = _run_with_backend(BACKEND_NAME, _FIT_SNIPPET)
        assert proc.returncode == 0, proc.stderr
        outs.append(proc.stdout)
    assert outs[0] == outs[1]
