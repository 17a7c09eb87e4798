import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from linvec.ensemble import (ChannelInstance, EnsembleSpec, constellation, sample_channel,
                             sample_input, transmit)
from linvec.errors import CapacityError, DomainError
from linvec.replica import NoiseSetting
from linvec.simulate import (demodulate, ebn0_to_noise, mpm_exact, mpm_iterative, run_ber,
                             trial_seeds, wilson_interval)

MATCHED = NoiseSetting(0.37, 0.37)


def draw(spec, S, N0, seed, trial=0):
    s_h, s_b, s_n = trial_seeds(seed, trial)
    inst = sample_channel(spec, s_h)
    b = sample_input(spec.K, S, s_b, spec.field)
    return inst, b, transmit(inst, b, N0, s_n)


# -------------------------------------------------------------------- exact
def test_exact_single_component_sign():
    inst = ChannelInstance(np.array([[1.0]]), EnsembleSpec(1, 1, "real"))
    assert mpm_exact(inst, np.array([0.3]), 1.0, 2).b_hat[0] == 1.0
    assert mpm_exact(inst, np.array([-0.3]), 1.0, 2).b_hat[0] == -1.0
    tie = mpm_exact(inst, np.array([0.0]), 1.0, 2)
    assert tie.b_hat[0] == 1.0 and tie.index[0] == 0
    np.testing.assert_allclose(tie.marginals, [[0.5, 0.5]], atol=1e-15)


def test_exact_single_component_closed_form():
    # p(+1) / p(-1) = exp(2 r / Nr) for real BPSK with H = 1.
    inst = ChannelInstance(np.array([[1.0]]), EnsembleSpec(1, 1, "real"))
    p = mpm_exact(inst, np.array([0.4]), 0.5, 2).marginals[0]
    assert p[0] / p[1] == pytest.approx(np.exp(2 * 0.4 / 0.5), rel=1e-12)


@pytest.mark.parametrize("field,S", [("real", 2), ("complex", 4)])
def test_exact_noiseless_recovery(field, S):
    spec = EnsembleSpec(6, 24, field)
    inst, b, r = draw(spec, S, 0.0, 1)
    res = mpm_exact(inst, r, 1e-3, S)
    np.testing.assert_array_equal(res.index, b.index)


@pytest.mark.parametrize("field,S,K", [("real", 2, 6), ("complex", 2, 5), ("complex", 4, 4)])
def test_exact_against_enumeration_oracle(field, S, K):
    spec = EnsembleSpec(K, K + 2, field, "kronecker", 0.2, 0.2)
    for t in range(5):
        inst, b, r = draw(spec, S, 0.37, 3, t)
        got = mpm_exact(inst, r, 0.37, S, chunk=7)
        ref = oracles.posterior_marginals(inst.H, r.r, 0.37, S)
        np.testing.assert_allclose(got.marginals, ref, atol=1e-12)


def test_exact_capacity_guard():
    spec = EnsembleSpec(25, 30, "real")
    inst, b, r = draw(spec, 2, 0.37, 0)
    with pytest.raises(CapacityError):
        mpm_exact(inst, r, 0.37, 2)
    with pytest.raises(CapacityError):
        run_ber(spec, MATCHED, 2, 1, 0, method="exact", with_theory=False)


def test_demod_argument_checks():
    inst, b, r = draw(EnsembleSpec(3, 4, "real"), 2, 0.37, 0)
    with pytest.raises(DomainError):
        mpm_exact(inst, r.r[:3], 0.37, 2)
    with pytest.raises(DomainError):
        mpm_exact(inst, r, 0.0, 2)
    with pytest.raises(DomainError):
        mpm_exact(inst, r, 0.37, 4)
    with pytest.raises(DomainError):
        demodulate(inst, r, 0.37, 2, method="sphere")
    with pytest.raises(DomainError):
        mpm_iterative(inst, r, 0.37, 2, max_iter=0)


@given(K=st.integers(1, 8), extra=st.integers(0, 4), cplx=st.booleans(),
       seed=st.integers(0, 2 ** 32), N0=st.floats(0.01, 2.0))
def test_exact_normalized_and_argmax_consistent(K, extra, cplx, seed, N0):
    field = "complex" if cplx else "real"
    S = 4 if cplx and K <= 6 else 2
    inst, b, r = draw(EnsembleSpec(K, K + extra, field), S, N0, seed)
    res = mpm_exact(inst, r, N0, S)
    assert np.abs(res.marginals.sum(axis=1) - 1).max() < 1e-10
    np.testing.assert_array_equal(res.index, np.argmax(res.marginals, axis=1))
    np.testing.assert_array_equal(res.b_hat, constellation(S)[res.index].real if not cplx
                                  else constellation(S)[res.index])


# ---------------------------------------------------------------- iterative
@pytest.mark.parametrize("field,S", [("real", 2), ("complex", 4)])
def test_iterative_noiseless_recovery(field, S):
    spec = EnsembleSpec(8, 40, field)
    for t in range(5):
        inst, b, r = draw(spec, S, 0.0, 2, t)
        res = mpm_iterative(inst, r, 1e-3, S)
        assert res.converged
        np.testing.assert_array_equal(res.index, b.index)


def test_iterative_damping_independent():
    spec = EnsembleSpec(8, 10, "real", "kronecker", 0.2, 0.2)
    compared = 0
    for t in range(20):
        inst, b, r = draw(spec, 2, 0.37, 5, t)
        a = mpm_iterative(inst, r, 0.37, 2, damping=1.0, max_iter=2000, tol=1e-12)
        c = mpm_iterative(inst, r, 0.37, 2, damping=0.5, max_iter=2000, tol=1e-12)
        if a.converged and c.converged:
            compared += 1
            assert np.abs(a.marginals - c.marginals).max() < 1e-4
    assert compared >= 15


@pytest.mark.parametrize("field,S,N0", [("real", 2, 0.37), ("complex", 4, 0.2)])
def test_iterative_agrees_with_exact_small(field, S, N0):
    spec = EnsembleSpec(8, 10, field, "kronecker", 0.2, 0.2)
    agree = 0
    for t in range(60):
        inst, b, r = draw(spec, S, N0, 9, t)
        agree += np.sum(mpm_exact(inst, r, N0, S).index == mpm_iterative(inst, r, N0, S).index)
    assert agree / (60 * 8) >= 0.95


@given(K=st.integers(1, 30), seed=st.integers(0, 2 ** 32), cplx=st.booleans(),
       N0=st.floats(0.01, 3.0))
def test_iterative_marginals_normalized(K, seed, cplx, N0):
    field, S = ("complex", 4) if cplx else ("real", 2)
    inst, b, r = draw(EnsembleSpec(K, max(1, K // 2 + 3), field), S, N0, seed)
    res = mpm_iterative(inst, r, N0, S)
    assert np.all(np.isfinite(res.marginals))
    assert np.abs(res.marginals.sum(axis=1) - 1).max() < 1e-6
    np.testing.assert_array_equal(res.index, np.argmax(res.marginals, axis=1))


# ---------------------------------------------------------------------- BER
def test_wilson_interval_formula():
    k, n, z = 37, 400, stats.norm.ppf(0.975)
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(centre - half, abs=1e-12)
    assert hi == pytest.approx(centre + half, abs=1e-12)


def test_ebn0_mapping():
    assert ebn0_to_noise(0.0, 2, "real") == pytest.approx(0.5)
    assert ebn0_to_noise(0.0, 2, "complex") == pytest.approx(1.0)
    assert ebn0_to_noise(0.0, 4, "complex") == pytest.approx(0.5)
    assert ebn0_to_noise(10.0, 2, "real") == pytest.approx(0.05)
    with pytest.raises(DomainError):
        ebn0_to_noise(0.0, 4, "real")


def test_run_ber_validation():
    spec = EnsembleSpec(4, 4, "real")
    with pytest.raises(DomainError):
        run_ber(spec, MATCHED, 2, 0, 0)
    with pytest.raises(DomainError):
        run_ber(spec, MATCHED, 2, 1, 0, method="sphere")
    with pytest.raises(DomainError):
        run_ber(spec, MATCHED, 4, 1, 0)
    with pytest.raises(DomainError):
        run_ber(spec, MATCHED, 2, 1, 0, threads=0)


def test_run_ber_noiseless_limit():
    spec = EnsembleSpec(32, 64, "real")
    rep = run_ber(spec, NoiseSetting(1e-6, 1e-3), 2, 20, 1, with_theory=False)
    assert rep.bit_errors == 0 and rep.ber == 0.0


@pytest.mark.parametrize("field,S", [("real", 2), ("complex", 4)])
def test_run_ber_uninformative_observation(field, S):
    # With N0 = Nr huge the observation carries no information about b.
    spec = EnsembleSpec(16, 16, field)
    rep = run_ber(spec, NoiseSetting(1e8, 1e8), S, 50, 2, with_theory=False)
    target = (S - 1) / S
    assert abs(rep.ber - target) < 3 * rep.ci95


def test_run_ber_report_fields():
    spec = EnsembleSpec(12, 16, "real", "kronecker", 0.2, 0.2)
    rep = run_ber(spec, MATCHED, 2, 30, 4, with_theory=False)
    included = rep.trials - rep.excluded
    assert rep.ber == rep.bit_errors / (included * spec.K)
    assert rep.bit_errors_inclusive == sum(rep.per_trial_errors)
    assert rep.ci_low <= rep.ber <= rep.ci_high
    assert rep.ci95 == pytest.approx(0.5 * (rep.ci_high - rep.ci_low))
    row = rep.as_row()
    assert set(row) == {"beta", "N0", "Nr", "S", "method", "trials", "errors", "ber", "ci95",
                        "theory_ber", "excluded"}


def test_run_ber_deterministic_across_threads():
    spec = EnsembleSpec(20, 24, "complex", "kronecker", 0.2, 0.2)
    a = run_ber(spec, NoiseSetting(0.2, 0.2), 4, 24, 77, with_theory=False)
    b = run_ber(spec, NoiseSetting(0.2, 0.2), 4, 24, 77, threads=4, with_theory=False)
    c = run_ber(spec, NoiseSetting(0.2, 0.2), 4, 24, 77, with_theory=False)
    assert a == b == c


def test_gauge_symmetry():
    spec = EnsembleSpec(64, 128, "real", "kronecker", 0.2, 0.2)
    a = run_ber(spec, MATCHED, 2, 60, 8, with_theory=False)
    b = run_ber(spec, MATCHED, 2, 60, 8, gauge=True, with_theory=False)
    sigma = np.hypot(a.ci95, b.ci95) / 1.96
    assert abs(a.ber - b.ber) < 3 * sigma


def test_ber_decreases_with_noise():
    spec = EnsembleSpec(64, 128, "real", "kronecker", 0.2, 0.2)
    bers = [run_ber(spec, NoiseSetting(n, n), 2, 60, 6, with_theory=False)
            for n in (0.6, 0.37, 0.2)]
    for hi, lo in zip(bers, bers[1:]):
        assert lo.ber <= hi.ber + 3 * np.hypot(hi.ci95, lo.ci95) / 1.96


def test_iid_consistency_with_theory():
    spec = EnsembleSpec(128, 256, "real")
    rep = run_ber(spec, MATCHED, 2, 200, 21, threads=4)
    assert abs(rep.ber - rep.theory_ber) < 3 * rep.ci95


def test_flat_posterior_argmax_is_matched_filter():
    # Nr -> infinity flattens the marginals, but their argmax tends to the
    # matched-filter decision rather than a coin flip.
    spec = EnsembleSpec(6, 8, "real")
    for t in range(10):
        inst, b, r = draw(spec, 2, 0.37, 13, t)
        res = mpm_exact(inst, r, 1e8, 2)
        mf = np.where(inst.H.T @ r.r >= 0, 1.0, -1.0)
        np.testing.assert_array_equal(res.b_hat, mf)
        assert np.abs(res.marginals - 0.5).max() < 1e-6
