import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misalign.core import Rng, ValidationError
from misalign.activeset import (
    DiscreteDomain,
    ExactCache,
    LabelingFn,
    World,
    realized_hypothesis_violations,
    active_set,
    degenerate_active_sets,
    dependence_r,
    fn_difference,
    load_world,
    perturbation_set,
    predictor_table,
    save_world,
    verify_support_agreement,
    verify_feature_separability,
)
from misalign import datagen

from oracles import active_set_oracle, dependence_r_oracle, enumerate_domain, fn_difference_oracle

CUBE3 = DiscreteDomain(alphabet_sizes=(2, 2, 2))


def _fn(domain, fn):
    return LabelingFn.from_callable(domain, fn)


class TestDiscreteDomain:
    def test_enumeration_coordinate_zero_fastest(self):
        dom = DiscreteDomain(alphabet_sizes=(2, 3))
        expected = [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2)]
        assert [tuple(r) for r in dom.matrix] == expected

    def test_index_round_trip(self):
        dom = DiscreteDomain(alphabet_sizes=(3, 2, 4))
        for i in range(dom.size):
            assert dom.index_of(dom.vector_of(i)) == i

    def test_rejects_tiny_alphabets(self):
        with pytest.raises(ValidationError):
            DiscreteDomain(alphabet_sizes=(2, 1))

    def test_rejects_oversized_domain(self):
        with pytest.raises(ValidationError):
            DiscreteDomain(alphabet_sizes=(2,) * 21)

    def test_rejects_foreign_points(self):
        with pytest.raises(ValidationError):
            CUBE3.index_of([0, 1, 2])
        with pytest.raises(ValidationError):
            CUBE3.index_of([0.4, 0, 0])


class TestActiveSet:
    def test_constant_function_empty_set(self):
        f = _fn(CUBE3, lambda x: 1)
        a = active_set(f, [1, 0, 1])
        assert a.indices == ()

    def test_dictator(self):
        f = _fn(CUBE3, lambda x: int(x[0]))
        a = active_set(f, [1, 0, 0])
        assert a.indices == (0,)

    def test_injective_block(self):
        # function reading coordinates {1, 2} injectively on that block
        dom = DiscreteDomain(alphabet_sizes=(2, 2, 2))
        f = _fn(dom, lambda x: int(x[1] ^ x[2] ^ (x[1] & x[2])))  # OR(x1, x2)
        # at x with block pattern (1, 1) the fiber of 1 needs... use AND instead
        f = _fn(dom, lambda x: int(x[1] & x[2]))
        a = active_set(f, [0, 1, 1])
        assert a.indices == (1, 2)

    def test_parity_yields_empty_set(self):
        f = _fn(CUBE3, lambda x: int(x[0] ^ x[1]))
        a = active_set(f, [0, 0, 1])
        assert a.indices == ()

    def test_lexicographic_tie_break(self):
        # AND of first two coordinates at (0,0,...): ties (0,1),(1,0) -> (0,1)
        f = _fn(CUBE3, lambda x: int(x[0] & x[1]))
        a = active_set(f, [0, 0, 0])
        assert tuple(a.witness) == (0, 1, 1)
        assert a.indices == (0,)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 3))
    @settings(max_examples=30, deadline=None)
    def test_matches_oracle(self, seed, p):
        rng = Rng(seed)
        dom = DiscreteDomain(alphabet_sizes=(2,) * p)
        table = (rng.random(dom.size) < 0.5).astype(np.uint8)
        if table.min() == table.max():
            table[0] ^= 1
        f = LabelingFn(dom, table)
        points = enumerate_domain(dom.alphabet_sizes)
        fvals = [int(v) for v in table]
        x = dom.vector_of(int(rng.integers(0, dom.size)))
        indices, witness = active_set_oracle(points, fvals, tuple(int(v) for v in x))
        a = active_set(f, x)
        assert a.indices == indices
        assert tuple(a.witness) == witness


class TestFnDifference:
    def test_identical_functions(self):
        f = _fn(CUBE3, lambda x: int(x[0]))
        assert fn_difference(f, f, [1, 1, 0]) == 0

    def test_complementary_functions(self):
        f = _fn(CUBE3, lambda x: int(x[0]))
        g = f.complement()
        assert fn_difference(g, f, [1, 1, 0]) == 1

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_lower_bound_and_oracle(self, seed):
        rng = Rng(seed)
        dom = CUBE3
        t_table = (rng.random(dom.size) < 0.5).astype(np.uint8)
        f_table = (rng.random(dom.size) < 0.5).astype(np.uint8)
        theta, f = LabelingFn(dom, t_table), LabelingFn(dom, f_table)
        x = dom.vector_of(int(rng.integers(0, dom.size)))
        d = fn_difference(theta, f, x)
        assert d >= abs(int(theta(x)) - int(f(x)))
        points = enumerate_domain(dom.alphabet_sizes)
        assert d == fn_difference_oracle(
            points, [int(v) for v in t_table], [int(v) for v in f_table],
            tuple(int(v) for v in x),
        )


class TestDependence:
    def test_constant_correct_predictor(self):
        theta = _fn(CUBE3, lambda x: 1)
        f = _fn(CUBE3, lambda x: int(x[0]))
        x = np.array([1, 0, 0])
        a = active_set(f, x)
        assert dependence_r(theta, a, x, 1, CUBE3) == 0

    def test_dictator_inside_active_set(self):
        f = _fn(CUBE3, lambda x: int(x[0]))
        theta = _fn(CUBE3, lambda x: int(x[0]))
        x = np.array([1, 0, 0])
        a = active_set(f, x)  # {0}
        assert dependence_r(theta, a, x, 1, CUBE3) == 1
        assert dependence_r(theta, a, x, 0, CUBE3) == 1

    def test_empty_set_correct(self):
        f = _fn(CUBE3, lambda x: int(x[0] ^ x[1]))
        theta = _fn(CUBE3, lambda x: int(x[0] ^ x[1]))
        x = np.array([0, 0, 1])
        a = active_set(f, x)
        assert a.indices == ()
        assert dependence_r(theta, a, x, 0, CUBE3) == 0

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_oracle(self, seed):
        rng = Rng(seed)
        dom = CUBE3
        t_table = (rng.random(dom.size) < 0.5).astype(np.uint8)
        f_table = (rng.random(dom.size) < 0.5).astype(np.uint8)
        theta, f = LabelingFn(dom, t_table), LabelingFn(dom, f_table)
        x = dom.vector_of(int(rng.integers(0, dom.size)))
        y = int(rng.random() < 0.5)
        a = active_set(f, x)
        got = dependence_r(theta, a, x, y, dom)
        points = enumerate_domain(dom.alphabet_sizes)
        want = dependence_r_oracle(
            points, [int(v) for v in t_table], a.indices,
            tuple(int(v) for v in x), y, dom.alphabet_sizes,
        )
        assert got == want


def _dictator_world():
    dom = DiscreteDomain(alphabet_sizes=(2, 2))
    f_h = _fn(dom, lambda x: int(x[0]))
    f_m = _fn(dom, lambda x: int(x[1]))
    support = np.nonzero(f_h.table == f_m.table)[0]
    return World(domain=dom, f_h=f_h, f_m=f_m, aligned_block=(0,),
                 misaligned_block=(1,), support=support)


class TestPerturbationSet:
    def test_empty_set_yields_only_x(self):
        world, _ = datagen.make_toy_world(datagen.ToyWorldConfig(1, 1), Rng(0))
        # constant-like case is impossible here; build a parity f_m world manually
        dom = DiscreteDomain(alphabet_sizes=(2, 2, 2))
        f_h = _fn(dom, lambda x: int(x[0]))
        f_m = _fn(dom, lambda x: int(x[1] ^ x[2]))
        support = np.nonzero(f_h.table == f_m.table)[0]
        w = World(domain=dom, f_h=f_h, f_m=f_m, aligned_block=(0,),
                  misaligned_block=(1, 2), support=support)
        x = np.array([1, 0, 1])
        assert active_set(w.f_m, x).indices == ()
        out = list(perturbation_set(w, x))
        assert len(out) == 1 and tuple(out[0]) == (1, 0, 1)

    def test_single_binary_coordinate(self):
        w = _dictator_world()
        out = list(perturbation_set(w, np.array([1, 0])))
        assert len(out) == 2
        assert {tuple(z) for z in out} == {(1, 0), (1, 1)}

    def test_three_free_coordinates(self):
        dom = DiscreteDomain(alphabet_sizes=(2,) * 4)
        f_h = _fn(dom, lambda x: int(x[0]))
        f_m = _fn(dom, lambda x: int(1 - (x[1] & x[2] & x[3])))
        support = np.nonzero(f_h.table == f_m.table)[0]
        w = World(domain=dom, f_h=f_h, f_m=f_m, aligned_block=(0,),
                  misaligned_block=(1, 2, 3), support=support)
        x = np.array([0, 1, 1, 1])  # f_m = 0, unique fiber point on the block
        out = list(perturbation_set(w, x))
        assert len(out) == 8
        assert all(z[0] == 0 for z in out)
        assert any(tuple(z) == (0, 1, 1, 1) for z in out)


class TestWorld:
    def test_support_is_agreement_set(self):
        dom = DiscreteDomain(alphabet_sizes=(2, 2))
        f_h = _fn(dom, lambda x: int(x[0]))
        f_m = _fn(dom, lambda x: int(x[1]))
        with pytest.raises(ValidationError):
            World(domain=dom, f_h=f_h, f_m=f_m, aligned_block=(0,),
                  misaligned_block=(1,), support=np.array([0]))

    def test_block_dependence_enforced(self):
        dom = DiscreteDomain(alphabet_sizes=(2, 2))
        f_h = _fn(dom, lambda x: int(x[0]))
        f_bad = _fn(dom, lambda x: int(x[0]))  # claims misaligned block but reads x0
        with pytest.raises(ValidationError):
            World(domain=dom, f_h=f_h, f_m=f_bad, aligned_block=(0,),
                  misaligned_block=(1,), support=np.arange(4))

    def test_a41_holds_on_generated_worlds(self):
        for seed in range(5):
            world, cls = datagen.make_toy_world(datagen.ToyWorldConfig(2, 2), Rng(seed))
            verify_support_agreement(world)
            cache = ExactCache(world)
            verify_feature_separability(world, cache)
            assert not realized_hypothesis_violations(world, cls.tables, cls.names, cache)

    def test_degenerate_flagging(self):
        dom = DiscreteDomain(alphabet_sizes=(2, 2, 2))
        f_h = _fn(dom, lambda x: int(x[0]))
        f_m = _fn(dom, lambda x: int(x[1] ^ x[2]))
        support = np.nonzero(f_h.table == f_m.table)[0]
        w = World(domain=dom, f_h=f_h, f_m=f_m, aligned_block=(0,),
                  misaligned_block=(1, 2), support=support)
        assert degenerate_active_sets(w)
        assert not degenerate_active_sets(_dictator_world())


class TestWorldFile:
    def test_round_trip(self, tmp_path):
        world, cls = datagen.make_toy_world(datagen.ToyWorldConfig(2, 2), Rng(3))
        path = tmp_path / "world.txt"
        save_world(path, world, cls.tables, cls.names)
        back, tables, names = load_world(path)
        assert np.array_equal(back.f_h.table, world.f_h.table)
        assert np.array_equal(back.f_m.table, world.f_m.table)
        assert np.array_equal(back.support, world.support)
        assert back.aligned_block == world.aligned_block
        assert np.array_equal(tables, cls.tables)
        assert tuple(names) == cls.names

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "world.txt"
        path.write_text("something else\n")
        with pytest.raises(ValidationError):
            load_world(path)

    def test_rejects_tampered_support(self, tmp_path):
        world, cls = datagen.make_toy_world(datagen.ToyWorldConfig(2, 2), Rng(3))
        path = tmp_path / "world.txt"
        save_world(path, world)
        lines = path.read_text().splitlines()
        idx = next(i for i, ln in enumerate(lines) if ln.startswith("support="))
        mask = list(lines[idx].split("=", 1)[1])
        flip = mask.index("0") if "0" in mask else 0
        mask[flip] = "1" if mask[flip] == "0" else "0"
        lines[idx] = "support=" + "".join(mask)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError):
            load_world(path)

    def test_rejects_unknown_field(self, tmp_path):
        world, _ = datagen.make_toy_world(datagen.ToyWorldConfig(1, 1), Rng(0))
        path = tmp_path / "world.txt"
        save_world(path, world)
        path.write_text(path.read_text() + "mystery=1\n")
        with pytest.raises(ValidationError):
            load_world(path)


class TestExactCache:
    def test_matches_public_operations(self):
        world, cls = datagen.make_toy_world(datagen.ToyWorldConfig(2, 2), Rng(11))
        cache = ExactCache(world)
        T = cls.tables
        d_h = cache.d_matrix(T, "f_h")
        r_m = cache.r_matrix(T, "f_m")
        dom = world.domain
        for m in range(cls.size):
            theta = LabelingFn(dom, T[m])
            for i in range(dom.size):
                x = dom.vector_of(i)
                y = int(world.f_h.table[i])
                assert int(d_h[m, i]) == fn_difference(theta, world.f_h, x)
                a = active_set(world.f_m, x)
                assert int(r_m[m, i]) == dependence_r(theta, a, x, y, dom)

    def test_predictor_table_from_callable(self):
        world, _ = datagen.make_toy_world(datagen.ToyWorldConfig(1, 2), Rng(2))
        table = predictor_table(world.domain, lambda x: int(x[0]))
        assert np.array_equal(table, world.domain.matrix[:, 0].astype(np.uint8))
