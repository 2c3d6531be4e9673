import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergmlasso.errors import SpecError
from ergmlasso.network import AttributeTable, Network, dyad_pair, n_dyads
from ergmlasso.statistics import (Edges, Gwdegree, Gwesp, Gwnsp, ModelSpec, NodeCov, NodeFactor,
                                  NodeMatch, change_stats, compute_stats, dyad_design,
                                  esp_counts, is_dyad_independent, nsp_counts, parse_spec,
                                  standardize)

from conftest import complete, cycle4, path3, random_network, triangle

ALL_STRUCTURAL = ModelSpec.of(Edges(), Gwesp(0.5), Gwnsp(0.5), Gwdegree(0.5))


def _attrs(n, seed=0):
    rng = np.random.default_rng(seed)
    t = AttributeTable(n)
    t.add_numeric("age", rng.normal(size=n))
    t.add_categorical("grp", rng.choice(["a", "b", "c"], n), levels=["a", "b", "c"])
    return t


FULL = ModelSpec.of(Edges(), Gwesp(0.5), Gwnsp(0.8), Gwdegree(0.3), NodeCov("age"),
                    NodeFactor("grp", "b"), NodeMatch("grp"))


class TestComputeStats:
    def test_triangle_gwesp(self):
        for alpha in (0.1, 0.5, 2.0):
            s = compute_stats(triangle(), None, ModelSpec.of(Edges(), Gwesp(alpha)))
            np.testing.assert_allclose(s, [3.0, 3.0], rtol=1e-14)

    def test_cycle4_gwnsp(self):
        s = compute_stats(cycle4(), None, ModelSpec.of(Edges(), Gwnsp(0.5)))
        r = 1 - math.exp(-0.5)
        assert s[1] == pytest.approx(2 * math.exp(0.5) * (1 - r ** 2), rel=1e-14)

    def test_path_attributes(self):
        net = path3()
        t = AttributeTable(3)
        t.add_categorical("x", ["1", "0", "1"], levels=["0", "1"], reference="0")
        t.add_numeric("xn", [1.0, 0.0, 1.0])
        spec = ModelSpec.of(Edges(), NodeFactor("x", "1"), NodeMatch("x"), NodeCov("xn"))
        np.testing.assert_array_equal(compute_stats(net, t, spec), [2, 2, 0, 2])

    def test_gwdegree_by_hand(self):
        alpha = 0.7
        r = 1 - math.exp(-alpha)
        w = lambda k: math.exp(alpha) * (1 - r ** k)
        s = compute_stats(path3(), None, ModelSpec.of(Edges(), Gwdegree(alpha)))
        assert s[1] == pytest.approx(2 * w(1) + w(2), rel=1e-14)

    def test_sp_histograms(self):
        esp = esp_counts(complete(4))
        assert esp[2] == 6 and esp.sum() == 6
        nsp = nsp_counts(cycle4())
        assert nsp[2] == 2 and nsp.sum() == 2

    def test_empty_and_complete(self):
        s0 = compute_stats(Network(6), None, ALL_STRUCTURAL)
        np.testing.assert_array_equal(s0, 0.0)
        assert compute_stats(complete(6), None, ALL_STRUCTURAL)[2] == 0.0

    def test_missing_column(self):
        with pytest.raises(SpecError, match="age"):
            compute_stats(path3(), AttributeTable(3), ModelSpec.of(Edges(), NodeCov("age")))

    def test_wrong_column_type(self):
        t = AttributeTable(3)
        t.add_numeric("age", [1, 2, 3])
        with pytest.raises(SpecError):
            compute_stats(path3(), t, ModelSpec.of(Edges(), NodeMatch("age")))

    @given(st.integers(2, 12), st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
    @settings(max_examples=60, deadline=None)
    def test_bounds(self, n, p, seed):
        net = random_network(n, p, seed)
        attrs = _attrs(n, seed)
        s = compute_stats(net, attrs, FULL)
        assert np.all(s[1:4] >= 0)
        assert s[6] <= s[0]
        assert s[5] <= 2 * s[0]

    @given(st.integers(2, 10), st.floats(0.0, 1.0), st.integers(0, 10 ** 6),
           st.lists(st.floats(0.5, 40.0), min_size=6, max_size=6))
    @settings(max_examples=30, deadline=None)
    def test_scaling(self, n, p, seed, scales):
        from ergmlasso.estimator import observed_scaled
        net = random_network(n, p, seed)
        attrs = _attrs(n, seed)
        spec = FULL.with_scales([1.0, *scales])
        np.testing.assert_allclose(observed_scaled(net, attrs, spec) * spec.scale_array,
                                   compute_stats(net, attrs, spec), rtol=1e-14)


class TestChangeStats:
    def test_empty_edges(self):
        assert change_stats(Network(3), None, ModelSpec.of(Edges()), (0, 1))[0] == 1.0

    def test_triangle_gwesp(self):
        spec = ModelSpec.of(Edges(), Gwesp(0.5))
        net = triangle()
        net.toggle((0, 1))
        delta = change_stats(net, None, spec, (0, 1))
        np.testing.assert_allclose(delta, compute_stats(triangle(), None, spec)
                                   - compute_stats(net, None, spec), rtol=1e-14)

    @given(st.integers(2, 11), st.floats(0.0, 1.0), st.integers(0, 10 ** 6), st.data())
    @settings(max_examples=150, deadline=None)
    def test_matches_recomputation(self, n, p, seed, data):
        net = random_network(n, p, seed)
        attrs = _attrs(n, seed)
        d = data.draw(st.integers(0, n_dyads(n) - 1))
        i, j = dyad_pair(d, n)
        on, off = net.copy(), net.copy()
        if not on.has_edge(i, j):
            on.toggle(d)
        if off.has_edge(i, j):
            off.toggle(d)
        want = compute_stats(on, attrs, FULL) - compute_stats(off, attrs, FULL)
        got = change_stats(net, attrs, FULL, d)
        ints = [0, 5, 6]
        np.testing.assert_array_equal(got[ints], want[ints])
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


class TestSpec:
    def test_edges_first_and_unpenalized(self):
        spec = ModelSpec.of(Edges(), Gwesp())
        assert spec.scales[0] == 1.0 and not spec.penalized[0]
        with pytest.raises(SpecError):
            ModelSpec.of(Gwesp(), Edges())
        with pytest.raises(SpecError):
            ModelSpec((Edges(), Gwesp()), penalized=(True, True))

    def test_unique_labels(self):
        with pytest.raises(SpecError):
            ModelSpec.of(Edges(), Gwesp(0.5), Gwesp(0.5))

    def test_alpha_positive(self):
        with pytest.raises(SpecError):
            Gwesp(0.0)

    def test_parse_expands_nodefactor(self):
        t = AttributeTable(4)
        t.add_categorical("office", ["B", "H", "P", "B"], reference="B")
        spec = parse_spec({"terms": ["gwesp", {"kind": "nodefactor", "column": "office"}]}, t)
        assert spec.labels == ["edges", "gwesp.fixed.0.5", "nodefactor.office.H",
                               "nodefactor.office.P"]

    def test_parse_rejects_unknown_keys(self):
        with pytest.raises(SpecError):
            parse_spec({"terms": [{"kind": "gwesp", "decay": 0.5}]})

    def test_subset_keeps_scales(self):
        spec = ALL_STRUCTURAL.with_scales([1.0, 2.0, 3.0, 4.0])
        sub = spec.subset(["gwdegree.fixed.0.5"])
        assert sub.labels == ["edges", "gwdegree.fixed.0.5"]
        assert sub.scales == (1.0, 4.0)

    def test_dyad_independence(self):
        assert is_dyad_independent(ModelSpec.of(Edges(), NodeCov("age")))
        assert not is_dyad_independent(ALL_STRUCTURAL)

    def test_dyad_design_matches_change_stats(self):
        n = 6
        attrs = _attrs(n, 3)
        spec = ModelSpec.of(Edges(), NodeCov("age"), NodeFactor("grp", "c"), NodeMatch("grp"))
        x = dyad_design(spec, attrs, n)
        net = random_network(n, 0.5, 1)
        for d in range(n_dyads(n)):
            np.testing.assert_allclose(x[d], change_stats(net, attrs, spec, d), atol=1e-12)


class TestStandardize:
    def test_edges_scale_one(self):
        net = random_network(20, 0.2, 0)
        spec = standardize(ALL_STRUCTURAL, net, None, m=50, seed=1)
        assert spec.scales[0] == 1.0
        assert all(s > 0 for s in spec.scales)

    def test_single_level_nodematch_is_edges(self):
        n, p = 30, 0.1
        net = random_network(n, p, 2)
        t = AttributeTable(n)
        t.add_categorical("g", ["same"] * n)
        spec = standardize(ModelSpec.of(Edges(), NodeMatch("g")), net, t, m=2000, seed=3)
        d, q = n_dyads(n), net.density
        assert spec.scales[1] == pytest.approx(math.sqrt(d * q * (1 - q)), rel=0.1)

    def test_constant_term_excluded(self):
        net = random_network(10, 0.3, 0)
        t = AttributeTable(10)
        t.add_numeric("zero", np.zeros(10))
        spec = standardize(ModelSpec.of(Edges(), Gwesp(), NodeCov("zero")), net, t, m=50)
        assert spec.labels == ["edges", "gwesp.fixed.0.5"]
        assert spec.excluded == ("nodecov.zero",)

    def test_fixed_scale_respected(self):
        net = random_network(10, 0.3, 0)
        spec = parse_spec({"terms": [{"kind": "gwesp", "scale": 7.5}]})
        assert standardize(spec, net, None, m=20).scales[1] == 7.5

    def test_deterministic(self):
        net = random_network(15, 0.3, 0)
        a = standardize(ALL_STRUCTURAL, net, None, m=100, seed=9)
        b = standardize(ALL_STRUCTURAL, net, None, m=100, seed=9)
        assert a.scales == b.scales

    def test_needs_two_draws(self):
        with pytest.raises(SpecError):
            standardize(ALL_STRUCTURAL, random_network(5, 0.5, 0), None, m=1)
