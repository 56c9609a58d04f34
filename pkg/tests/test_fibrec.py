import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_hermitian, random_involution
from polyfractal.drive import GOLDEN_RATIO, NoiseModel, ProtocolSpec, ideal_boundary_ops
from polyfractal.evolve import EigenPropagator, build_system, floquet_unitary
from polyfractal.fibrec import (
    REFERENCE_TABLES,
    boundary_matrix,
    compare_with_reference,
    derive_plan,
    fib_word,
    fibonacci,
    format_plan,
    location,
    oracle_unitary,
    recursive_evolve,
    seed_unitaries,
)

ALL_PROTOCOLS = list(itertools.product((1, 2), repeat=2))


def setup(n_s, n_f, dim, rng, eps=0.2, T0=0.3):
    H = random_hermitian(dim, rng)
    drives = [random_involution(dim, rng) for _ in range(n_s)]
    proto = ProtocolSpec(n_s, n_f, T0)
    noise = NoiseModel("fibonacci", eps)
    tp, tm = noise.fibonacci_intervals(T0)
    prop = EigenPropagator(H)
    return proto, noise, prop(tp), prop(tm), drives, (tp, tm)


class TestFibWord:
    def test_small(self):
        assert fib_word(1).letters == (-1,)
        assert fib_word(2).letters == (1,)
        assert fib_word(3).letters == (1, -1)

    def test_depth_five(self):
        w = fib_word(5)
        assert w.letters == (1, -1, 1, 1, -1)
        assert (w.n_long, w.n_short) == (3, 2)

    def test_depth_ten_counts(self):
        w = fib_word(10)
        assert (w.n_long, w.n_short) == (34, 21) == (fibonacci(9), fibonacci(8))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(3, 22))
    def test_concatenation(self, n):
        assert fib_word(n).letters == fib_word(n - 1).letters + fib_word(n - 2).letters
        assert len(fib_word(n).letters) == fibonacci(n)

    def test_fibonacci_numbers(self):
        assert [fibonacci(n) for n in range(1, 11)] == [1, 1, 2, 3, 5, 8, 13, 21, 34, 55]
        with pytest.raises(ValueError):
            fib_word(0)


class TestLocation:
    def test_examples(self):
        assert location(8, 5, 0) == 3
        assert location(1, 17, 0) == 1
        assert location(2, 3, 1) == 2

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from([1, 2, 4, 8, 16]), st.integers(0, 10_000), st.data())
    def test_first_application_brute_force(self, P, F, data):
        # the conjugate unitary starts after F boundaries; find its first m divisible by P (with offset k)
        k = data.draw(st.integers(0, P - 1))
        m = 1
        while (F + m - k) % P:
            m += 1
        assert location(P, F, k) == m


class TestPlans:
    def test_two_drives_one_layer(self):
        plan = derive_plan(2, 1)
        assert (plan.K, plan.ell) == (2, 3)
        assert plan.k_vectors == {"A": (0, 0), "B": (1, 1)}

    def test_two_drives_two_layers(self):
        plan = derive_plan(2, 2)
        assert (plan.K, plan.ell) == (8, 12)
        assert plan.k_vectors["B"] == (1, 1, 3, 7)

    def test_trivial(self):
        plan = derive_plan(1, 1)
        assert (plan.K, plan.ell, plan.categories) == (1, 1, ["A"])
        assert plan.conjugate("A", 7) == "A"

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_structure(self, n_s, n_f):
        plan = derive_plan(n_s, n_f)
        nsf = n_s * n_f
        assert plan.K == 2 ** (nsf - 1)
        if nsf >= 2:
            assert plan.ell == 3 * 2 ** (nsf - 2)
        assert plan.k_vectors["A"] == (0,) * nsf
        assert len(set(plan.k_vectors.values())) == plan.K
        # periodicity over three full cycles
        for cat in plan.categories:
            seq = [plan.conjugate(cat, n) for n in range(3, 3 + 3 * plan.ell)]
            assert seq[: plan.ell] * 3 == seq

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_reference_tables(self, n_s, n_f):
        for cmp in compare_with_reference(derive_plan(n_s, n_f)):
            assert cmp.matches, cmp.rows

    def test_all_reference_tables_covered(self):
        keys = {(n_s, n_f) for n_s, n_f, _ in REFERENCE_TABLES}
        assert keys == {(1, 2), (2, 1), (2, 2)}

    def test_format(self):
        text = format_plan(derive_plan(2, 1))
        assert "category B" in text and "conj" in text

    def test_rejects_unsupported(self):
        with pytest.raises(ValueError):
            derive_plan(3, 1)


class TestRecursion:
    def test_eq5_explicit(self, rng):
        proto, noise, up, um, (X,), _ = setup(1, 1, 8, rng)
        plan = derive_plan(1, 1)
        (_, _, U5), = recursive_evolve(plan, seed_unitaries(plan, up, um, [X]), 5, record_depths=[5])
        explicit = reduce(np.matmul, [X, um, X, up, X, up, X, um, X, up])
        assert np.abs(U5 - explicit).max() < 1e-10

    def test_eq6_explicit(self, rng):
        proto, noise, up, um, (X1, X2), _ = setup(2, 1, 8, rng)
        plan = derive_plan(2, 1)
        (_, _, U5), = recursive_evolve(plan, seed_unitaries(plan, up, um, [X1, X2]), 5, record_depths=[5])
        explicit = reduce(np.matmul, [X1, um, X2, X1, up, X1, up, X2, X1, um, X1, up])
        assert np.abs(U5 - explicit).max() < 1e-10

    def test_oracle_depth_three(self, rng):
        proto, noise, up, um, (X,), _ = setup(1, 1, 4, rng)
        assert np.allclose(oracle_unitary(proto, noise, 3, up, um, [X]), X @ um @ X @ up)

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_oracle_equivalence_l4_chain(self, n_s, n_f):
        system = build_system(4, n_s=n_s)
        proto = ProtocolSpec(n_s, n_f, 0.1)
        noise = NoiseModel("fibonacci", 0.1)
        prop = EigenPropagator(system.H)
        up, um = (prop(T) for T in noise.fibonacci_intervals(proto.T0))
        plan = derive_plan(n_s, n_f)
        (_, _, U), = recursive_evolve(plan, seed_unitaries(plan, up, um, system.drives), 12, record_depths=[12])
        assert np.abs(U - oracle_unitary(proto, noise, 12, up, um, system.drives)).max() < 1e-9

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_elapsed_time(self, n_s, n_f, rng):
        proto, noise, up, um, drives, (tp, tm) = setup(n_s, n_f, 4, rng)
        plan = derive_plan(n_s, n_f)
        out = recursive_evolve(plan, seed_unitaries(plan, up, um, drives), 25, durations=(tp, tm))
        for n, elapsed, _ in out:
            assert elapsed == pytest.approx(fibonacci(n - 1) * tp + fibonacci(n - 2) * tm, rel=1e-12)

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_ideal_limit_equals_floquet_power(self, n_s, n_f):
        system = build_system(4, n_s=n_s)
        proto = ProtocolSpec(n_s, n_f, 0.2)
        UF = floquet_unitary(system, proto)
        U0 = EigenPropagator(system.H)(proto.T0)
        plan = derive_plan(n_s, n_f)
        cycle = proto.cycle_boundaries
        hits = 0
        for n, _, U in recursive_evolve(plan, seed_unitaries(plan, U0, U0, system.drives), 25):
            F = fibonacci(n)
            if F % cycle == 0:
                assert np.abs(U - np.linalg.matrix_power(UF, F // cycle)).max() < 1e-9
                hits += 1
        assert hits >= 2

    @pytest.mark.parametrize("n_s,n_f", ALL_PROTOCOLS)
    def test_operator_count_conservation(self, n_s, n_f):
        # commuting diagonal "drives" that count applications through their phases
        dim = 2
        proto = ProtocolSpec(n_s, n_f, 1.0)
        plan = derive_plan(n_s, n_f)
        for n in (9, 14):
            expected = [0] * n_s
            for m in range(1, fibonacci(n) + 1):
                for i in ideal_boundary_ops(proto, m):
                    expected[i - 1] += 1
            angles = [0.1 * np.sqrt(2 + i) for i in range(n_s)]
            drives = [np.diag([np.exp(1j * a), 1.0]) for a in angles]
            eye = np.eye(dim, dtype=complex)
            (_, _, U), = recursive_evolve(plan, seed_unitaries(plan, eye, eye, drives), n, record_depths=[n])
            phase = np.angle(U[0, 0])
            assert np.isclose(np.exp(1j * phase), np.exp(1j * sum(c * a for c, a in zip(expected, angles))))

    def test_boundary_matrix(self, rng):
        X1, X2 = random_involution(4, rng), random_involution(4, rng)
        assert boundary_matrix(frozenset(), [X1, X2]) is None
        assert np.allclose(boundary_matrix(frozenset({1, 2}), [X1, X2]), X2 @ X1) or np.allclose(
            boundary_matrix(frozenset({1, 2}), [X1, X2]), X1 @ X2
        )

    def test_rejects_shallow_depth(self, rng):
        proto, noise, up, um, drives, _ = setup(1, 1, 4, rng)
        plan = derive_plan(1, 1)
        with pytest.raises(ValueError):
            recursive_evolve(plan, seed_unitaries(plan, up, um, drives), 1)
