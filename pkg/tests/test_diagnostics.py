import numpy as np
import pytest

from dirichlet_nas import bench
from dirichlet_nas import diagnostics as dg
from dirichlet_nas import dirichlet as dr
from dirichlet_nas import space as sp
from dirichlet_nas.errors import ContractError, DomainError

from gradcheck import numeric_grad, rel_err

SPEC = sp.micro_space()


def _psd(d, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((d, d))
    return M @ M.T / d + 0.1 * np.eye(d)


def test_hvp_diag_example():
    f = dg.Quadratic(np.diag([1.0, 3.0]))
    assert np.allclose(dg.hvp(f, np.array([0.3, -0.2]), np.array([0.0, 1.0])), [0.0, 3.0], atol=1e-9)


def test_hvp_linear_is_zero():
    f = dg.Linear(np.array([1.0, -2.0, 0.5]))
    assert np.allclose(dg.hvp(f, np.ones(3), np.array([1.0, 2.0, 3.0])), 0.0, atol=1e-8)


def test_hvp_random_quadratic():
    for seed in range(5):
        A = _psd(6, seed)
        rng = np.random.default_rng(seed)
        mu, v = rng.standard_normal(6), rng.standard_normal(6) * 4
        hv = dg.hvp(dg.Quadratic(A, rng.standard_normal(6)), mu, v)
        assert np.max(np.abs(hv - A @ v)) / np.max(np.abs(A @ v)) < 1e-6


def test_hvp_zero_direction():
    with pytest.raises(DomainError):
        dg.hvp(dg.Linear(np.ones(2)), np.zeros(2), np.zeros(2))


def test_power_iteration_known_spectra():
    r = dg.dominant_eigenvalue(dg.Quadratic(np.diag([1.0, 3.0])), np.zeros(2))
    assert r.converged and r.value == pytest.approx(3.0, rel=1e-3)
    r = dg.dominant_eigenvalue(dg.Quadratic(np.diag([-2.0, 1.0])), np.zeros(2))
    assert r.value == pytest.approx(2.0, rel=1e-3) and r.signed == pytest.approx(-2.0, rel=1e-3)
    f = dg.Quadratic(_psd(8, 1))
    top = np.max(np.abs(np.linalg.eigvalsh(f.A)))
    assert dg.dominant_eigenvalue(f, np.zeros(8), iters=500).value == pytest.approx(top, rel=1e-3)
    assert dg.dominant_eigenvalue(dg.Scaled(f, 2.0), np.zeros(8), iters=500).value == pytest.approx(2 * top, rel=1e-3)


def test_power_iteration_flags_nonconvergence():
    # eigenvalues of equal magnitude and opposite sign make the quotient oscillate
    r = dg.dominant_eigenvalue(dg.Quadratic(np.diag([1.0, -1.0, 0.5])), np.zeros(3), iters=5, tol=1e-14)
    assert r.iters == 5 and not r.converged


def test_trace_examples():
    assert dg.hessian_trace(dg.Quadratic(np.diag([1.0, 3.0])), np.zeros(2)) == pytest.approx(4.0)
    assert dg.hessian_trace(dg.Linear(np.zeros(3)), np.zeros(3)) == pytest.approx(0.0, abs=1e-9)
    assert dg.hessian_trace(dg.Quadratic(np.eye(7)), np.zeros(7)) == pytest.approx(7.0)
    A = _psd(5, 2)
    assert dg.exact_trace(dg.Quadratic(A), np.ones(5)) == pytest.approx(np.trace(A), rel=1e-7)


def test_hutchinson_unbiased():
    A = _psd(6, 3)
    f = dg.Quadratic(A)
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(100):
        s = dg.hutchinson_samples(f, np.zeros(6), 64, rng)
        hits += abs(s.mean() - np.trace(A)) <= 3 * s.std(ddof=1) / 8
    assert hits >= 95


def test_laplace_bound_constant_function():
    f = dg.Linear(np.zeros(4), s=2.5)
    r = dg.laplace_bound_check(np.array([1.0, 2.0, 0.5, 1.5]), f, n_mc=500)
    assert r["lhs"] == pytest.approx(2.5) and r["rhs"] == pytest.approx(2.5)


def test_laplace_bound_anchor_coefficient():
    r = dg.laplace_bound_check(np.ones(4), dg.Quadratic(np.eye(4)), n_mc=200)
    assert r["delta_used"] == 0.0
    assert r["coef"] == pytest.approx(dr.laplace_params(np.ones(4)).sigma_diag[0])


@pytest.mark.parametrize("d", [4, 8])
def test_laplace_bound_convex_quadratic(d):
    f = dg.Quadratic(_psd(d, d), np.random.default_rng(d).standard_normal(d))
    r = dg.laplace_bound_check(np.full(d, 1.3), f, n_mc=5000, rng=np.random.default_rng(1))
    assert r["holds"] and r["psd_proxy"] > 0


def test_laplace_bound_dimension_check():
    with pytest.raises(ContractError):
        dg.laplace_bound_check(np.ones(3), dg.Quadratic(np.eye(4)))


def _net_loss(seed=0):
    net = sp.build_supernet(SPEC, 8, 2, 2, np.random.default_rng(seed), 2, 2, 1.0)
    rng = np.random.default_rng(seed + 1)
    x, y = rng.standard_normal((16, 2)), rng.integers(0, 2, 16)
    return dg.LossOverLogits.frozen(net, x, y, rng)


def test_loss_over_logits_gradient():
    f = _net_loss()
    mu = np.random.default_rng(3).standard_normal(f.dim)
    assert rel_err(f.grad(mu), numeric_grad(f.value, mu)) < 1e-6
    assert f.value(mu) == f.value(mu)
    with pytest.raises(ContractError):
        f.value(np.zeros(5))


def test_loss_over_logits_shift_invariance():
    # softmax per edge ignores a constant shift, so the gradient sums to zero per edge
    f = _net_loss(2)
    g = f.grad(np.random.default_rng(1).standard_normal(f.dim))
    assert np.allclose([p.sum() for p in f.split(g)], 0.0, atol=1e-12)


@pytest.fixture(scope="module")
def table():
    ds = bench.gen_dataset("blobs", 256, 0.3, 0)
    return bench.build_oracle(SPEC, ds, bench.DiscreteTrainConfig(channels=8, budget_steps=15), r_seeds=1)


def test_band_collapse(table):
    base = np.array([1.0, 2.0, 3.0, 4.0])
    band = dg.exploration_band([1e4 * base] * 3, SPEC, table.__getitem__, 100, np.random.default_rng(0))
    assert set(band["genotypes"]) == {"3-3-3"} and band["max"] - band["min"] == 0.0
    assert band["mean_arch"] == "3-3-3"


def test_band_contract_error_propagates():
    with pytest.raises(ContractError):
        dg.exploration_band([np.ones(4)] * 3, SPEC, bench.OracleTable("micro", {}).__getitem__, 10)


def test_band_widths_shrink_with_concentration(table):
    rng = np.random.default_rng(0)
    for _ in range(3):
        betas = [rng.uniform(0.3, 3.0, 4) for _ in range(3)]
        w1 = dg.band_widths(betas, SPEC, table.__getitem__, 100, 200, np.random.default_rng(1))
        w10 = dg.band_widths([10 * b for b in betas], SPEC, table.__getitem__, 100, 200, np.random.default_rng(1))
        assert np.median(w10) <= np.median(w1)


def test_csv_export(tmp_path):
    p = tmp_path / "d.csv"
    dg.write_csv(p, [{"epoch": 0, "eigenvalue": 1.5}, {"epoch": 1, "trace": 2.0}])
    lines = p.read_text().splitlines()
    assert lines[0].startswith("epoch,eigenvalue") and lines[1].startswith("0,1.5") and len(lines) == 3
