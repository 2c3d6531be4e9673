import math

import numpy as np
import pytest
from scipy.special import expit

import ergmlasso.selector as selector
from ergmlasso.errors import (CollinearityError, DegeneracyError, NonConvergenceError,
                              UsageError)
from ergmlasso.estimator import Fitter, SgdConfig, observed_scaled
from ergmlasso.network import AttributeTable, Network
from ergmlasso.oracle import ExactModel, activation_lambda
from ergmlasso.sampler import sample_block_bernoulli
from ergmlasso.selector import (BridgeConfig, FitReport, GridRequest, InferenceConfig,
                                LambdaGrid, PathResult, compute_path, estimate_loglik,
                                find_lambda_max, importance_scores, parse_grid, rank,
                                refit_inference, select_threshold)
from ergmlasso.statistics import (Edges, Gwdegree, Gwesp, Gwnsp, ModelSpec, NodeFactor,
                                  compute_stats)

from conftest import fixture5, random_network

SPEC4 = ModelSpec.of(Edges(), Gwesp(0.5), Gwnsp(0.5), Gwdegree(0.5)).with_scales(
    [1.0, 1.3, 2.1, 0.8])


def fixture6() -> Network:
    """Triangle with a pendant plus two isolates; interior for the four-term spec."""
    return Network(6, [(0, 1), (1, 2), (0, 2), (2, 3)])


@pytest.fixture(scope="module")
def exact4():
    return ExactModel(6, SPEC4, scaled=True)


def fake_path(importance, coef_rows, lambdas, labels=("a", "b", "c")):
    spec = ModelSpec.of(Edges(), *(Gwesp(0.1 * (k + 1)) for k in range(len(labels))))
    grid = LambdaGrid(tuple(lambdas))
    coef = np.array(coef_rows, dtype=float)
    status = ["ok"] * len(grid)
    imp, signs = importance_scores(grid, coef, status, spec)
    return PathResult(spec, grid, coef, status, imp, signs, 0)


class TestGrid:
    def test_parse(self):
        assert parse_grid("auto").mode == "auto"
        req = parse_grid("auto:10:0.05")
        assert (req.n, req.ratio) == (10, 0.05)
        g = parse_grid("geom:8:0.08:3").build()
        np.testing.assert_allclose(g.values, [8.0, 0.8, 0.08])
        assert parse_grid("lin:2:0:5").build().values == (2.0, 1.5, 1.0, 0.5, 0.0)
        assert parse_grid("4,2,1,0").build().values == (4.0, 2.0, 1.0, 0.0)

    @pytest.mark.parametrize("text", ["", "1,2", "geom:1:2:3", "lin:x:0:3", "auto:5", "-1,0"])
    def test_parse_errors(self, text):
        with pytest.raises(UsageError):
            parse_grid(text)

    def test_geometric(self):
        g = LambdaGrid.geometric(5.0, n=40, ratio=0.01)
        assert len(g) == 41
        assert g.values[0] == 5.0 and g.values[-1] == 0.0
        assert g.values[-2] == pytest.approx(0.05)

    def test_auto_needs_lambda_max(self):
        with pytest.raises(UsageError):
            GridRequest("auto").build()


class TestScoresAndRank:
    def test_distinct_scores(self):
        p = fake_path(None, [[-1, 0, 0.2, 0], [-1, 0.1, 0.3, 0], [-1, 0.1, 0.3, -0.4]], [3, 2, 1])
        assert p.score("gwesp.fixed.0.2") == 3.0
        assert p.first_sign[3] == "-"
        assert rank(p) == ["gwesp.fixed.0.2", "gwesp.fixed.0.1", "gwesp.fixed.0.3"]

    def test_ties_by_coefficient_then_order(self):
        p = fake_path(None, [[-1, 0.1, -0.5, 0.1], [-1, 0.2, 0.2, 0.2]], [2, 1])
        assert rank(p) == ["gwesp.fixed.0.2", "gwesp.fixed.0.1", "gwesp.fixed.0.3"]

    def test_never_selected_last_in_spec_order(self):
        p = fake_path(None, [[-1, 0, 0, 0], [-1, 0, 0, 0.5]], [2, 1])
        assert rank(p) == ["gwesp.fixed.0.3", "gwesp.fixed.0.1", "gwesp.fixed.0.2"]
        assert p.score("gwesp.fixed.0.1") is None

    def test_nonconverged_points_ignored(self):
        spec = ModelSpec.of(Edges(), Gwesp())
        grid = LambdaGrid((2.0, 1.0))
        imp, _ = importance_scores(grid, np.array([[-1, 0.4], [-1, 0.5]]),
                                   ["nonconverged", "ok"], spec)
        assert imp[1] == 1.0

    def test_csv_outputs(self, tmp_path):
        p = fake_path(None, [[-1, 0, 0, 0], [-1, 0.25, 0, 0]], [2, 1])
        p.write_csv(tmp_path / "path.csv")
        p.write_ranking(tmp_path / "rank.csv")
        assert (tmp_path / "path.csv").read_text().splitlines() == [
            "lambda,edges,gwesp.fixed.0.1,gwesp.fixed.0.2,gwesp.fixed.0.3",
            "2.0,-1.0,0.0,0.0,0.0",
            "1.0,-1.0,0.25,0.0,0.0",
        ]
        assert (tmp_path / "rank.csv").read_text().splitlines()[:2] == [
            "term,importance_score,first_sign", "gwesp.fixed.0.1,1.0,+"]

    def test_fmt_round_trip(self):
        for x in (0.1, 1 / 3, 1e-300, -2.5e17, 123456789.125):
            assert float(selector.fmt(x)) == x


class TestPathExact:
    def test_lambda_max(self, exact4):
        net = fixture6()
        fitter = Fitter(net, None, SPEC4, moments=exact4.exact_moments)
        lam = find_lambda_max(fitter)
        obs = observed_scaled(net, None, SPEC4)
        theta0 = fitter.theta0
        want = np.max(np.abs(obs - exact4.mean(theta0))[1:])
        assert want <= lam <= want * 1.06

    def test_lambda_max_degenerate_trial_not_zeroed(self, exact4, monkeypatch):
        fitter = Fitter(fixture6(), None, SPEC4, moments=exact4.exact_moments)
        want = find_lambda_max(fitter)
        fit = fitter.fit

        def flaky(lam, *a, **k):
            if lam < 2 * want:
                raise DegeneracyError("collapsed")
            return fit(lam, *a, **k)
        monkeypatch.setattr(fitter, "fit", flaky)
        assert 2 * want <= find_lambda_max(fitter) <= 4.2 * want

    def test_huge_single_point(self, exact4):
        path = compute_path(fixture6(), None, SPEC4, LambdaGrid((1e6,)),
                            moments=exact4.exact_moments)
        assert np.all(path.coef[0, 1:] == 0.0) and path.coef[0, 0] != 0.0
        assert all(path.score(lab) is None for lab in path.labels[1:])

    def test_consistency_and_activation_order(self, exact4):
        net = fixture6()
        obs = observed_scaled(net, None, SPEC4)
        path = compute_path(net, None, SPEC4, GridRequest("auto", n=25, ratio=0.01),
                            moments=exact4.exact_moments)
        lams = path.lambdas
        assert np.all(path.coef[:, 0] != 0.0)
        for k in range(1, 4):
            r = path.importance[k]
            if np.isnan(r):
                continue
            assert np.all(path.coef[lams > r, k] == 0.0)
        lam_hi = path.lambda_max * 1.5
        act = {k: activation_lambda(exact4, obs, k, lam_hi) for k in range(1, 4)}
        for k in range(1, 4):
            r = path.importance[k]
            g = int(np.searchsorted(-lams, -act[k]))
            nearby = lams[max(g - 1, 0):g + 2]
            assert np.isnan(r) and act[k] < lams[-2] or np.any(np.isclose(nearby, r))


class TestLoglik:
    def test_edges_closed_form(self):
        net = random_network(20, 0.25, 0)
        spec = ModelSpec.of(Edges())
        e, d = net.edge_count, net.n_dyads
        for t in (-1.0, math.log(e / (d - e)), 0.3):
            want = e * t - d * math.log1p(math.exp(t))
            assert estimate_loglik(net, None, spec, [t]) == pytest.approx(want, abs=1e-9)

    def test_reference_point_exact(self):
        net = random_network(12, 0.3, 1)
        spec = ModelSpec.of(Edges(), Gwesp(0.5))
        e, d = net.edge_count, net.n_dyads
        t0 = math.log(e / (d - e))
        want = e * t0 - d * math.log1p(math.exp(t0))
        got = estimate_loglik(net, None, spec, [t0, 0.0], method="bridge")
        assert got == pytest.approx(want, abs=1e-9)

    def test_bridge_matches_oracle(self):
        spec = ModelSpec.of(Edges(), Gwesp(0.5))
        em = ExactModel(5, spec)
        net = fixture5()
        theta = np.array([-0.4, 0.35])
        obs = compute_stats(net, None, spec)
        cfg = BridgeConfig(points=20, m=2000, thin=20, burn_in=500, seed=3)
        got = estimate_loglik(net, None, spec, theta, cfg, method="bridge")
        assert got == pytest.approx(em.loglik(obs, theta), abs=0.05)

    def test_exact_needs_dyad_independence(self):
        with pytest.raises(UsageError):
            estimate_loglik(fixture5(), None, ModelSpec.of(Edges(), Gwesp()), [0.0, 0.0],
                            method="exact")


class TestInference:
    def test_edges_only_report(self):
        net = random_network(30, 0.15, 2)
        rep = refit_inference(net, None, ModelSpec.of(Edges()), InferenceConfig(
            sgd=SgdConfig(seed=1)))
        p = expit(rep.theta[0])
        assert rep.se[0] == pytest.approx(1 / math.sqrt(net.n_dyads * p * (1 - p)), rel=1e-9)
        assert rep.aic == pytest.approx(2 - 2 * rep.loglik)
        assert 0 <= rep.pvalue[0] <= 1
        body = rep.to_dict()
        assert [r["term"] for r in body["terms"]] == ["edges"]

    def test_small_se_matches_oracle(self):
        spec = ModelSpec.of(Edges(), Gwesp(0.5))
        em = ExactModel(5, spec)
        net = fixture5()
        cfg = InferenceConfig(sgd=SgdConfig(seed=2, m_per_iter=200), cov_m=4000, cov_thin=20,
                              bridge=BridgeConfig(m=500, thin=20, burn_in=200))
        rep = refit_inference(net, None, spec, cfg)
        cov = em.exact_moments(rep.theta)[1]
        np.testing.assert_allclose(rep.se, np.sqrt(np.diag(np.linalg.inv(cov))), rtol=0.1)
        assert np.all(rep.se > 0)

    def test_collinear(self):
        cov = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(CollinearityError) as info:
            selector._inverse_information(cov, ["edges", "copy"])
        assert set(info.value.terms) == {"edges", "copy"}


def _report(labels, aic, pvals):
    k = len(labels)
    return FitReport(list(labels), np.ones(k), np.ones(k), np.array(pvals), -aic / 2 + k, aic,
                     np.ones(k))


class TestWalk:
    def _path(self):
        return fake_path(None, [[-1, 0, 0, 0], [-1, 0, 0.2, 0], [-1, 0.1, 0.3, 0],
                                [-1, 0.1, 0.3, 0.1]], [4, 3, 2, 1])

    def test_aic_stops_before_increase(self, monkeypatch):
        aics = {1: 720.0, 2: 701.50, 3: 702.35}

        def refit(observed, attrs, spec, cfg=None, moments=None, theta_init=None):
            return _report(spec.labels, aics[len(spec)], [0.01] * len(spec))

        monkeypatch.setattr(selector, "refit_inference", refit)
        sel = select_threshold(self._path(), Network(4), None, "aic")
        assert sel.selected == ["edges", "gwesp.fixed.0.2"]
        assert [s.accepted for s in sel.walk] == [True, True, False]
        assert sel.walk[-1].aic == 702.35
        assert sel.report.aic == 701.50

    def test_pvalue_mode(self, monkeypatch):
        def refit(observed, attrs, spec, cfg=None, moments=None, theta_init=None):
            p = [0.001] * len(spec)
            p[-1] = 0.2 if len(spec) == 4 else 0.001
            return _report(spec.labels, 700.0 - len(spec), p)

        monkeypatch.setattr(selector, "refit_inference", refit)
        sel = select_threshold(self._path(), Network(4), None, "pvalue", alpha_sig=0.05)
        assert sel.selected == ["edges", "gwesp.fixed.0.1", "gwesp.fixed.0.2"]

    def test_failed_refit_keeps_last_stable(self, monkeypatch):
        def refit(observed, attrs, spec, cfg=None, moments=None, theta_init=None):
            if len(spec) == 3:
                raise NonConvergenceError("no")
            return _report(spec.labels, 700.0 - len(spec), [0.01] * len(spec))

        monkeypatch.setattr(selector, "refit_inference", refit)
        sel = select_threshold(self._path(), Network(4), None, "aic")
        assert sel.selected == ["edges", "gwesp.fixed.0.2"]
        assert "refit failed" in sel.walk[-1].note

    def test_bad_arguments(self):
        with pytest.raises(UsageError):
            select_threshold(self._path(), Network(4), None, "bic")
        with pytest.raises(UsageError):
            select_threshold(self._path(), Network(4), None, "pvalue", alpha_sig=1.5)

    def test_attribute_network_end_to_end(self):
        n = 40
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, n)
        net = sample_block_bernoulli(x, (0.05, 0.15, 0.30), seed=1)
        attrs = AttributeTable(n)
        attrs.add_categorical("x", [str(v) for v in x], levels=["0", "1"], reference="0")
        spec = ModelSpec.of(Edges(), NodeFactor("x", "1"))
        cfg = SgdConfig(seed=2, max_iters=300)
        path = compute_path(net, attrs, spec, GridRequest("auto", n=8, ratio=0.05), cfg)
        runs = [select_threshold(path, net, attrs, "aic", cfg=InferenceConfig(sgd=cfg))
                for _ in range(2)]
        assert runs[0].selected == ["edges", "nodefactor.x.1"]
        assert runs[0].selected == runs[1].selected
        assert runs[0].report.aic == runs[1].report.aic
