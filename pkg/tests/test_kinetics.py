import numpy as np
import pytest

from taubno.kinetics import (
    KineticParams,
    KineticsError,
    LambdaVector,
    SingularityError,
    active_transport,
    gamma_conversion,
    lambda_to_kinetics,
    m_equilibrium,
    seed_equilibrium,
    soluble_from_total,
)


def test_gamma_conversion_examples():
    assert gamma_conversion(0.0, 0.0, KineticParams()) == 0.0
    k = KineticParams(beta=1.0, gamma1=1.0, gamma2=0.0)
    assert gamma_conversion(4.0, 2.0, k) == 0.0


def test_m_equilibrium_examples():
    k = KineticParams(beta=1.0, gamma1=2.0, gamma2=0.0)
    assert m_equilibrium(0.0, k) == 0.0
    assert m_equilibrium(0.5, k) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(SingularityError):
        m_equilibrium(0.5, KineticParams(beta=1.0, gamma1=1.0, gamma2=2.0))


def test_active_transport_examples():
    k = KineticParams(f_frac=0.0, v_a=2.0, v_r=1.0, delta=0.0, epsilon=0.0)
    assert active_transport(1.0, 0.0, k) == pytest.approx(-1.0)
    assert active_transport(0.0, 3.0, k) == 0.0
    bal = KineticParams(v_a=3.0, v_r=3.0, delta=0.0, epsilon=0.0)
    assert np.all(active_transport(np.linspace(0, 5, 11), 0.0, bal) == 0.0)


def test_seed_equilibrium_examples():
    assert seed_equilibrium(0.7, KineticParams(gamma1=0.0)) == (0.7, 0.0)
    n0, m0 = seed_equilibrium(1.0, KineticParams(beta=1.0, gamma1=2.0, gamma2=0.0))
    assert n0 == pytest.approx(0.5, abs=1e-12) and m0 == pytest.approx(0.5, abs=1e-12)
    assert seed_equilibrium(0.0, KineticParams(gamma1=1.0)) == (0.0, 0.0)
    with pytest.raises(KineticsError):
        seed_equilibrium(-1.0, KineticParams())


def test_seed_equilibrium_monotone():
    rng = np.random.default_rng(1)
    for _ in range(20):
        k = KineticParams(gamma1=rng.uniform(0, 5), gamma2=rng.uniform(0, 2))
        masses = np.sort(rng.uniform(0, 10, 8))
        n0 = [seed_equilibrium(s, k)[0] for s in masses]
        assert np.all(np.diff(n0) >= 0)


def test_soluble_from_total_inverts_equilibrium():
    k = KineticParams(gamma1=3.0, gamma2=0.5)
    n = np.linspace(0, 1.5, 31)
    u = n + m_equilibrium(n, k)
    np.testing.assert_allclose(soluble_from_total(u, k), n, rtol=1e-12, atol=1e-14)


def test_lambda_mapping():
    base = KineticParams(delta=0.3, epsilon=0.2, phi=0.05)
    k = lambda_to_kinetics(LambdaVector(5e-4, 8e-3, 10, 10, 2.2), base)
    assert (k.f_source, k.gamma1, k.v_a, k.v_r) == (5e-4, 8e-3, 10, 10)
    assert k.mu_release == k.mu_uptake == 2.2
    assert (k.delta, k.epsilon, k.phi, k.beta) == (0.3, 0.2, 0.05, base.beta)
    # idempotent in the touched fields
    lv = LambdaVector(1e-3, 2e-3, 30, 40, 1.0)
    assert lambda_to_kinetics(lv, lambda_to_kinetics(lv, base)) == lambda_to_kinetics(lv, base)
    zero = lambda_to_kinetics(LambdaVector(0, 0, 0, 0, 0), KineticParams())
    assert zero.f_source == zero.gamma1 == zero.v_a == zero.mu_release == 0


def test_lambda_parse_and_validation():
    lv = LambdaVector.parse("5e-4,8e-3,10,10,2.2")
    assert lv.as_array().tolist() == [5e-4, 8e-3, 10, 10, 2.2]
    with pytest.raises(KineticsError):
        LambdaVector(-1, 0, 0, 0, 0)
    with pytest.raises(KineticsError):
        LambdaVector.from_sequence([1, 2, 3])


@pytest.mark.parametrize("bad", [dict(beta=0.0), dict(gamma1=-1.0), dict(phi=1.0),
                                 dict(diffusivity=0.0), dict(mu_release=-1.0)])
def test_params_invariants(bad):
    with pytest.raises(KineticsError):
        KineticParams(**bad)
