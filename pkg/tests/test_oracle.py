import numpy as np
import pytest

from dsbbench import benchmark, light, oracle
from dsbbench.cpfield import CPScalarField, conditional_log_prob, log_normalizer
from dsbbench.refproc import ReferenceProcess


def _random_field(rng, K, D, S):
    beta = rng.normal(size=K)
    return CPScalarField(beta - np.log(np.sum(np.exp(beta))),
                         rng.normal(size=(K, D, S)))


# -- sinkhorn -----------------------------------------------------------------

def test_sinkhorn_zero_cost_gives_independent_coupling():
    rng = np.random.default_rng(0)
    p0 = rng.dirichlet(np.ones(6))
    p1 = rng.dirichlet(np.ones(6))
    res = oracle.sinkhorn(p0, p1, np.zeros((6, 6)), tol=1e-12)
    assert np.abs(res.coupling - np.outer(p0, p1)).max() < 1e-12


def test_sinkhorn_point_masses():
    p0 = np.eye(5)[1]
    p1 = np.eye(5)[3]
    cost = np.abs(np.arange(5)[:, None] - np.arange(5)[None, :]).astype(float)
    res = oracle.sinkhorn(p0, p1, cost)
    expected = np.zeros((5, 5))
    expected[1, 3] = 1.0
    assert np.abs(res.coupling - expected).max() < 1e-12


def test_sinkhorn_recovers_bridge_construction():
    pair = benchmark.generate_pair(1, "uniform", 0.1, seed=5, n_categories=8,
                                   n_steps=4, n_components=3)
    coupling = oracle.construction_coupling(pair.field, pair.proc,
                                            pair.source.log_pmf())
    cost = -oracle.log_ref_conditional(pair.proc, 1)
    res = oracle.sinkhorn(coupling.sum(axis=1), coupling.sum(axis=0), cost,
                          tol=1e-10)
    assert 0.5 * np.abs(res.coupling - coupling).sum() <= 1e-6
    assert res.residual0 <= 1e-10 and res.residual1 <= 1e-10

    # cross-validated against direct enumeration of the conditional
    states = oracle.enumerate_states(8, 1)
    for i, x0 in enumerate(states):
        brute = oracle.enumerate_conditional(pair.field, pair.proc, x0)
        row = res.coupling[i] / res.coupling[i].sum()
        assert np.abs(row - brute).max() <= 1e-6


def test_sinkhorn_nonconvergence_reports_residuals():
    rng = np.random.default_rng(1)
    p0 = rng.dirichlet(np.ones(4))
    p1 = rng.dirichlet(np.ones(4))
    cost = rng.uniform(0, 5, size=(4, 4))
    with pytest.raises(oracle.SinkhornError) as info:
        oracle.sinkhorn(p0, p1, cost, max_iters=1, tol=1e-14)
    assert info.value.residual0 is not None


def test_sinkhorn_kl_optimality_against_construction():
    # both couplings are feasible; the Sinkhorn optimum's KL to the
    # reference joint cannot exceed the construction's by more than slack
    pair = benchmark.generate_pair(1, "gaussian", 0.9, seed=8, n_categories=6,
                                   n_steps=3, n_components=2)
    logp0 = pair.source.log_pmf()
    constructed = oracle.construction_coupling(pair.field, pair.proc, logp0)
    ref_joint = (constructed.sum(axis=1)[:, None]
                 * np.exp(oracle.log_ref_conditional(pair.proc, 1)))
    cost = -oracle.log_ref_conditional(pair.proc, 1)
    res = oracle.sinkhorn(constructed.sum(axis=1), constructed.sum(axis=0),
                          cost, tol=1e-10)

    def kl(a, b):
        mask = a > 0
        return float((a[mask] * np.log(a[mask] / b[mask])).sum())

    assert kl(res.coupling, ref_joint) <= kl(constructed, ref_joint) + 1e-6


def test_sinkhorn_drops_zero_mass_states():
    p0 = np.array([0.5, 0.0, 0.5])
    p1 = np.array([0.25, 0.75, 0.0])
    res = oracle.sinkhorn(p0, p1, np.zeros((3, 3)), tol=1e-12)
    assert np.allclose(res.coupling.sum(axis=1), p0, atol=1e-11)
    assert np.allclose(res.coupling.sum(axis=0), p1, atol=1e-11)
    assert res.coupling[1].sum() == 0.0


# -- enumeration ---------------------------------------------------------------

def test_enumerate_conditional_unit_potential_is_reference_row():
    proc = ReferenceProcess("uniform", 0.3, 4, 3)
    field = CPScalarField(np.array([0.0]), np.zeros((1, 2, 4)))
    states = oracle.enumerate_states(4, 2)
    x0 = np.array([1, 2])
    got = oracle.enumerate_conditional(field, proc, x0)
    lk = proc.log_kernel(proc.n_steps)
    expected = np.exp(lk[x0[0], states[:, 0]] + lk[x0[1], states[:, 1]])
    assert np.abs(got - expected).max() < 1e-14


def test_enumeration_agrees_with_factorization_d3():
    rng = np.random.default_rng(7)
    proc = ReferenceProcess("gaussian", 0.7, 6, 4)
    field = _random_field(rng, 3, 3, 6)
    states = oracle.enumerate_states(6, 3)
    for _ in range(4):
        x0 = rng.integers(0, 6, size=3)
        brute = oracle.enumerate_conditional(field, proc, x0)
        fact = np.exp(conditional_log_prob(field, proc,
                                           np.tile(x0, (len(states), 1)), states))
        assert np.abs(brute - fact).max() <= 1e-10
        assert oracle.enumerate_log_normalizer(field, proc, x0) == pytest.approx(
            log_normalizer(field, proc, x0), abs=1e-10)


def test_enumerate_states_too_large_rejected():
    with pytest.raises(ValueError):
        oracle.enumerate_states(50, 4)


# -- path marginal ---------------------------------------------------------------

def _joint_transition_fn(field, proc, states):
    utab = light.build_u_tables(field, proc)
    return lambda n: light.sb_joint_transition_matrix(field, utab, proc, n,
                                                      states)


def test_path_marginal_single_step_equals_conditional():
    rng = np.random.default_rng(2)
    proc = ReferenceProcess("uniform", 0.4, 4, 1)
    field = _random_field(rng, 2, 1, 4)
    states = oracle.enumerate_states(4, 1)
    fn = _joint_transition_fn(field, proc, states)
    x0 = np.array([2])
    got = oracle.enumerate_path_marginal(proc, fn, x0, 1)
    expected = np.exp(conditional_log_prob(field, proc,
                                           np.tile(x0, (4, 1)), states))
    assert np.abs(got - expected).max() <= 1e-12


def test_path_marginal_unit_potential_is_kernel_row():
    proc = ReferenceProcess("gaussian", 0.8, 4, 3)
    field = CPScalarField(np.array([0.0]), np.zeros((1, 1, 4)))
    states = oracle.enumerate_states(4, 1)
    fn = _joint_transition_fn(field, proc, states)
    got = oracle.enumerate_path_marginal(proc, fn, np.array([1]), 1)
    assert np.abs(got - proc.kernel(proc.n_steps)[1]).max() <= 1e-12


def test_path_marginal_chaining_identity():
    rng = np.random.default_rng(4)
    proc = ReferenceProcess("uniform", 0.25, 4, 3)
    field = _random_field(rng, 2, 1, 4)
    states = oracle.enumerate_states(4, 1)
    fn = _joint_transition_fn(field, proc, states)
    for x0v in range(4):
        got = oracle.enumerate_path_marginal(proc, fn, np.array([x0v]), 1)
        expected = np.exp(conditional_log_prob(field, proc,
                                               np.tile([x0v], (4, 1)), states))
        assert np.abs(got - expected).max() <= 1e-8


# -- exact projections -------------------------------------------------------------

def test_constructed_coupling_is_projection_fixed_point():
    pair = benchmark.generate_pair(1, "uniform", 0.2, seed=5, n_categories=4,
                                   n_steps=3, n_components=2)
    coupling = oracle.construction_coupling(pair.field, pair.proc,
                                            pair.source.log_pmf())
    after = oracle.alpha_imf_step(pair.proc, coupling, 1.0, 1)
    assert 0.5 * np.abs(after - coupling).sum() <= 1e-12


def test_alpha_one_step_equals_double_projection():
    pair = benchmark.generate_pair(1, "gaussian", 0.8, seed=6, n_categories=4,
                                   n_steps=2, n_components=2)
    coupling = oracle.construction_coupling(pair.field, pair.proc,
                                            pair.source.log_pmf())
    independent = np.outer(coupling.sum(axis=1), coupling.sum(axis=0))
    double = oracle.endpoint_coupling_of_chain(
        oracle.exact_markov_projection(pair.proc, independent, 1),
        independent.sum(axis=1))
    assert np.allclose(oracle.alpha_imf_step(pair.proc, independent, 1.0, 1),
                       double, atol=1e-14)


def test_fitting_iterations_converge_to_bridge_coupling():
    pair = benchmark.generate_pair(1, "uniform", 0.3, seed=7, n_categories=4,
                                   n_steps=3, n_components=2)
    target = oracle.construction_coupling(pair.field, pair.proc,
                                          pair.source.log_pmf())
    coupling = np.outer(target.sum(axis=1), target.sum(axis=0))
    for _ in range(40):
        coupling = oracle.alpha_imf_step(pair.proc, coupling, 1.0, 1)
    assert 0.5 * np.abs(coupling - target).sum() <= 1e-8


def test_alpha_mixes_partially():
    pair = benchmark.generate_pair(1, "uniform", 0.3, seed=7, n_categories=4,
                                   n_steps=2, n_components=2)
    target = oracle.construction_coupling(pair.field, pair.proc,
                                          pair.source.log_pmf())
    start = np.outer(target.sum(axis=1), target.sum(axis=0))
    full = oracle.alpha_imf_step(pair.proc, start, 1.0, 1)
    half = oracle.alpha_imf_step(pair.proc, start, 0.5, 1)
    assert np.allclose(half, 0.5 * start + 0.5 * full, atol=1e-14)
