"""Model construction and the exact analytic functionals."""

import numpy as np
import pytest

from crittree import (
    ModelError,
    MotionSpec,
    NonCriticalError,
    OffspringSpec,
    StateSpace,
    binary_model,
    build_model,
    builtin_model,
    killed_model,
    torus_model,
    two_type_model,
)
from crittree.model import (
    EigenPair,
    ModelSpec,
    branch_pair_constant,
    branch_variance_constant,
    carre_du_champ,
    generator_matrix,
    model_from_json,
    model_to_json,
    motion_generator_phi,
    offspring_mean,
    pair_moment_functional,
    pending_mass_slope,
    qv_integrand,
    qv_integrand_vector,
    sigma2,
    survival_constant,
    variance_functional,
)

ALL_MODELS = [binary_model(), binary_model(2.0), two_type_model(),
              killed_model(), torus_model(grid=8)]


def make_chain_model(phi, q12=1.0, q21=1.0):
    """Two-state pure-motion carrier for functional unit tests (no branching);
    the eigen pair is injected directly rather than via build_model."""
    phi = np.asarray(phi, dtype=float)
    til = np.ones(2) / 2.0
    til = til / (til @ phi)  # force <til, phi> = 1, keep til proportional flat
    til = til / til.sum() if abs(til.sum() - 1) < 1e-12 else til
    # normalise properly: scale phi so flat probability tilde pairs to one
    til = np.ones(2) / 2.0
    phi = phi / (til @ phi)
    space = StateSpace("finite", 2)
    motion = MotionSpec(rates=np.array([[0.0, q12], [q21, 0.0]]),
                        kill=np.zeros(2))
    off = OffspringSpec(gamma=np.zeros(2), tables=((), ()))
    pair = EigenPair(phi=phi, phi_tilde=til, lam=0.0)
    return ModelSpec(name="chain", space=space, motion=motion,
                     offspring=off, eigenpair=pair)


class TestOffspringMean:
    def test_binary_unit_function(self):
        m = binary_model()
        assert offspring_mean(m, [1.0], 0) == pytest.approx(1.0)

    def test_zero_function(self):
        for m in ALL_MODELS:
            assert offspring_mean(m, np.zeros(m.size), 0) == 0.0

    def test_two_type_table_enumeration(self):
        # table {1/2 -> [], 1/2 -> [1, 1]} with f = (1, 3): 0.5*0 + 0.5*6
        space = StateSpace("finite", 2)
        motion = MotionSpec(rates=np.zeros((2, 2)), kill=np.zeros(2))
        off = OffspringSpec(gamma=np.array([1.0, 0.0]),
                            tables=(((0.5, ()), (0.5, (1, 1))), ()))
        pair = EigenPair(phi=np.ones(2), phi_tilde=np.array([0.5, 0.5]), lam=0.0)
        m = ModelSpec("t", space, motion, off, pair)
        assert offspring_mean(m, [1.0, 3.0], 0) == pytest.approx(3.0)

    def test_invalid_state(self):
        with pytest.raises(ModelError):
            offspring_mean(binary_model(), [1.0], 5)


class TestVarianceFunctional:
    def test_binary(self):
        assert variance_functional(binary_model(), [1.0], 0) == pytest.approx(1.0)

    def test_deterministic_table_is_zero(self):
        space = StateSpace("finite", 1)
        motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.zeros(1))
        off = OffspringSpec(gamma=np.array([1.0]), tables=(((1.0, (0, 0)),),))
        pair = EigenPair(phi=np.ones(1), phi_tilde=np.ones(1), lam=0.0)
        m = ModelSpec("det", space, motion, off, pair)
        assert variance_functional(m, [2.0], 0) == pytest.approx(0.0)

    def test_half_empty_half_pair(self):
        # {1/2 -> [], 1/2 -> [0, 0]}, g = 2: E = 2, E[.^2] = 8, var = 4
        space = StateSpace("finite", 1)
        motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.zeros(1))
        off = OffspringSpec(gamma=np.array([1.0]),
                            tables=(((0.5, ()), (0.5, (0, 0))),))
        pair = EigenPair(phi=np.ones(1), phi_tilde=np.ones(1), lam=0.0)
        m = ModelSpec("h", space, motion, off, pair)
        assert variance_functional(m, [2.0], 0) == pytest.approx(4.0)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(0)
        for m in ALL_MODELS:
            g = rng.uniform(-2, 2, m.size)
            for x in range(m.size):
                assert variance_functional(m, g, x) >= -1e-12


class TestCarreDuChamp:
    def test_constant_phi_vanishes(self):
        for m in (binary_model(), torus_model(grid=6)):
            for x in range(m.size):
                assert carre_du_champ(m, x) == pytest.approx(0.0)

    def test_two_state_chain(self):
        m = make_chain_model([1.0, 2.0])
        # after normalisation phi = (2/3, 4/3); rate 1 jump 0 -> 1
        phi = m.phi
        assert carre_du_champ(m, 0) == pytest.approx((phi[1] - phi[0]) ** 2)

    def test_killed_model_includes_cemetery(self):
        m = killed_model()
        assert carre_du_champ(m, 0) == pytest.approx(0.5 * m.phi[0] ** 2)

    def test_nonnegative(self):
        for m in ALL_MODELS:
            assert all(carre_du_champ(m, x) >= 0 for x in range(m.size))


class TestQvIntegrand:
    def test_binary(self):
        assert qv_integrand(binary_model(), 0) == pytest.approx(1.0)
        assert qv_integrand(binary_model(2.0), 0) == pytest.approx(2.0)

    def test_no_branching_constant_phi(self):
        m = make_chain_model([1.0, 1.0])
        assert qv_integrand(m, 0) == pytest.approx(0.0)

    def test_two_type_exact_values(self):
        m = two_type_model()
        f = qv_integrand_vector(m)
        assert f == pytest.approx([1.125, 1.40625])


class TestSigma2:
    def test_binary_scales_with_gamma(self):
        assert sigma2(binary_model()) == pytest.approx(1.0)
        assert sigma2(binary_model(2.0)) == pytest.approx(2.0)

    def test_two_type_exact(self):
        assert sigma2(two_type_model()) == pytest.approx(1.3125)

    def test_equals_pair_constant(self):
        # structural identity under criticality
        for m in ALL_MODELS:
            assert sigma2(m) == pytest.approx(branch_pair_constant(m), rel=1e-10)

    def test_killed_model_pair_vs_variance(self):
        m = killed_model()
        assert branch_pair_constant(m) == pytest.approx(3.0)
        assert branch_variance_constant(m) == pytest.approx(2.25)

    def test_relabeling_invariance(self):
        m = two_type_model()
        # swap the labels of both states everywhere
        space = StateSpace("finite", 2)
        perm = [1, 0]
        motion = MotionSpec(rates=m.motion.rates[np.ix_(perm, perm)],
                            kill=m.motion.kill[perm])
        tables = tuple(
            tuple((p, tuple(perm[c] for c in ch)) for p, ch in m.offspring.tables[x])
            for x in perm
        )
        off = OffspringSpec(gamma=m.offspring.gamma[perm], tables=tables)
        m2 = build_model("perm", space, motion, off)
        assert sigma2(m2) == pytest.approx(sigma2(m))
        assert branch_pair_constant(m2) == pytest.approx(branch_pair_constant(m))


class TestBuildModel:
    def test_binary_trivial_eigenpair(self):
        m = binary_model()
        assert m.phi == pytest.approx([1.0])
        assert m.phi_tilde == pytest.approx([1.0])
        assert abs(m.eigenpair.lam) < 1e-8

    def test_two_type_closed_form(self):
        m = two_type_model()
        assert m.phi == pytest.approx([1.5, 0.75], rel=1e-9)
        assert m.phi_tilde == pytest.approx([1 / 3, 2 / 3], rel=1e-9)

    def test_generator_criticality_all_models(self):
        for m in ALL_MODELS:
            a = generator_matrix(m.space, m.motion, m.offspring)
            assert np.abs(a @ m.phi).max() < 1e-8

    def test_against_dense_eig_oracle(self):
        m = two_type_model()
        a = generator_matrix(m.space, m.motion, m.offspring)
        vals, vecs = np.linalg.eig(a)
        i = np.argmax(vals.real)
        v = np.abs(vecs[:, i].real)
        v = v / v[1]
        assert m.phi / m.phi[1] == pytest.approx(v, rel=1e-8)
        assert abs(vals[i].real) < 1e-10

    def test_subcritical_rejected_with_negative_lambda(self):
        space = StateSpace("finite", 1)
        motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.zeros(1))
        off = OffspringSpec(gamma=np.array([1.0]),
                            tables=(((0.6, ()), (0.4, (0, 0))),))
        with pytest.raises(NonCriticalError) as err:
            build_model("sub", space, motion, off)
        assert err.value.eigenvalue < 0

    def test_supercritical_rejected_with_positive_lambda(self):
        space = StateSpace("finite", 1)
        motion = MotionSpec(rates=np.zeros((1, 1)), kill=np.zeros(1))
        off = OffspringSpec(gamma=np.array([1.0]),
                            tables=(((0.4, ()), (0.6, (0, 0))),))
        with pytest.raises(NonCriticalError) as err:
            build_model("sup", space, motion, off)
        assert err.value.eigenvalue > 0

    def test_singleton_litter_rejected(self):
        with pytest.raises(ModelError):
            OffspringSpec(gamma=np.array([1.0]), tables=(((1.0, (0,)),),))

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ModelError):
            OffspringSpec(gamma=np.array([1.0]),
                          tables=(((0.5, ()), (0.4, (0, 0))),))


class TestConstants:
    def test_survival_constant_binary(self):
        assert survival_constant(binary_model(), 0) == pytest.approx(2.0)
        assert survival_constant(binary_model(2.0), 0) == pytest.approx(1.0)

    def test_pending_slope_binary(self):
        assert pending_mass_slope(binary_model()) == pytest.approx(0.5)
        assert pending_mass_slope(binary_model(2.0)) == pytest.approx(1.0)

    def test_motion_generator_constant_phi(self):
        m = torus_model(grid=6)
        assert motion_generator_phi(m) == pytest.approx(np.zeros(6))


class TestJsonRoundTrip:
    def test_round_trip(self):
        m = two_type_model()
        doc = model_to_json(m)
        m2 = model_from_json(doc)
        assert m2.phi == pytest.approx(m.phi)
        assert m2.offspring.tables == m.offspring.tables

    def test_malformed_document(self):
        with pytest.raises(ModelError):
            model_from_json({"name": "x"})

    def test_builtin_registry(self):
        assert builtin_model("binary", gamma=2.0).name == "binary(gamma=2)"
        with pytest.raises(ModelError):
            builtin_model("nope")
