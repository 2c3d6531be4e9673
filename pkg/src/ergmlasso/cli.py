"""Command line entry point: ``ergmlasso {fit,path,select,simulate,exact,standardize}``.

Results go to files under ``--out``; diagnostics go to stderr.  Exit codes:
0 ok, 2 bad input, 3 non-convergence, 4 numerical trouble or capacity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (CapacityError, DegenerateMLEError, ErgmLassoError,
                     NonConvergenceError, UsageError)
from .estimator import Fitter, SgdConfig
from .network import AttributeTable, Network, load_network, n_dyads, write_network
from .oracle import MAX_NODES, ExactModel, activation_lambda
from .plot import write_path_svg
from .sampler import SamplerConfig, sample, sample_block_bernoulli
from .selector import (BridgeConfig, InferenceConfig, LambdaGrid, compute_path,
                       derive_seed, fmt, inference_report, parse_grid, select_threshold,
                       unpenalized)
from .statistics import (DEFAULT_STANDARDIZE_M, Edges, Gwesp, Gwnsp, ModelSpec,
                         compute_stats, parse_spec, read_spec_file, standardize)

log = logging.getLogger("ergmlasso")

DEFAULT_SEED = 20240611
ATTR_PROBS = (0.05, 0.15, 0.30)

# name -> (terms, raw theta, uses a binary attribute, tie rule)
GENERATORS = {
    "setup1": ((Edges(), Gwesp(0.5)), (-3.5, 1.0), False, "ergm"),
    "setup2": ((Edges(), Gwnsp(0.5)), (-2.0, 0.5), False, "ergm"),
    "setup3": ((Edges(),), (-1.5,), False, "ergm"),
    "attr1": ((Edges(),), (), True, "block"),
    "attr2": ((Edges(), Gwesp(0.5)), (-3.5, 1.0), True, "ergm"),
}
ATTR_SCHEMA = {"x": {"type": "categorical", "levels": ["0", "1"], "reference": "0"}}


# -- output helpers -------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, NaN/inf to null, tuples to lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


class Run:
    """Output directory plus the list of files written during one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.files: list[str] = []
        if self.out.exists() and not self.out.is_dir():
            raise UsageError(f"--out {self.out} exists and is not a directory")
        if self.out.is_dir() and any(self.out.iterdir()) and not args.force:
            raise UsageError(f"output directory {self.out} is not empty; pass --force to overwrite")
        self.out.mkdir(parents=True, exist_ok=True)
        self.defaults: dict = {}
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def manifest(self, status: str, exit_code: int) -> None:
        digests = {}
        for name in sorted(set(self.files)):
            p = self.out / name
            if p.is_file():
                digests[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        config = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        write_json(self.out / "manifest.json", {
            "subcommand": self.args.command,
            "status": status,
            "exit_code": exit_code,
            "seed": self.args.seed,
            "config": config,
            "defaults": self.defaults,
            "versions": _versions(),
            "outputs": digests,
            **self.extra,
        })


def _versions() -> dict:
    import numba
    import scipy
    return {"ergmlasso": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


# -- configuration ----------------------------------------------------------------

def _sgd_config(args, seed: int) -> SgdConfig:
    sampler = SamplerConfig(burn_in=args.burn_in, thin=args.thin, seed=seed,
                            n_chains=args.chains, workers=max(1, args.workers))
    kw = {"max_iters": args.max_iters, "m_per_iter": args.m_per_iter, "tol": args.tol}
    return SgdConfig(seed=seed, sampler=sampler, **{k: v for k, v in kw.items() if v is not None})


def _inference_config(args, seed: int) -> InferenceConfig:
    bridge = BridgeConfig(points=args.bridge_points, m=args.bridge_m, thin=args.thin,
                          burn_in=args.burn_in, seed=derive_seed(seed, 9))
    return InferenceConfig(sgd=_sgd_config(args, seed), cov_m=args.cov_m, cov_thin=args.thin,
                           bridge=bridge)


def _load(args, need_edges: bool = True):
    """(network, attrs, spec document) from --edges/--attrs/--spec."""
    if args.spec is None:
        raise UsageError("--spec is required")
    doc = read_spec_file(args.spec)
    if args.edges is None:
        if need_edges:
            raise UsageError("--edges is required")
        return None, None, doc
    net, attrs = load_network(args.edges, args.attrs, doc.get("attributes"))
    return net, attrs, doc


def _standardized(run: Run, args, net: Network, attrs: AttributeTable, doc: dict) -> ModelSpec:
    spec = standardize(parse_spec(doc, attrs), net, attrs, m=args.std_m,
                       seed=derive_seed(args.seed, 1))
    out = spec.to_dict()
    if doc.get("attributes"):
        out["attributes"] = doc["attributes"]
    write_json(run.path("spec_used.json"), out)
    return spec


def _record_defaults(run: Run, sgd: SgdConfig, args, infer: InferenceConfig | None = None) -> None:
    run.defaults = {"sgd": asdict(sgd), "standardize_m": args.std_m,
                    "lambda_grid": getattr(args, "lambda_grid", None)}
    if infer is not None:
        run.defaults["inference"] = {"cov_m": infer.cov_m, "cov_thin": infer.cov_thin,
                                     "bridge": asdict(infer.bridge),
                                     "loglik_method": infer.loglik_method}


# -- subcommands ------------------------------------------------------------------

def cmd_standardize(run: Run, args) -> None:
    net, attrs, doc = _load(args)
    spec = _standardized(run, args, net, attrs, doc)
    run.defaults = {"standardize_m": args.std_m}
    with open(run.path("scales.csv"), "w", encoding="utf-8") as fh:
        fh.write("term,scale\n")
        for lab, s in zip(spec.labels, spec.scales):
            fh.write(f"{lab},{fmt(s)}\n")
    for lab in spec.excluded:
        log.warning("excluded (constant under the reference): %s", lab)


def _write_report(path, report, spec: ModelSpec, seed: int, extra: dict | None = None) -> None:
    body = report.to_dict()
    body["seed"] = seed
    body["spec"] = spec.to_dict()
    if extra:
        body.update(extra)
    write_json(path, body)


def cmd_fit(run: Run, args) -> None:
    net, attrs, doc = _load(args)
    spec = unpenalized(_standardized(run, args, net, attrs, doc))
    infer = _inference_config(args, derive_seed(args.seed, 2))
    _record_defaults(run, infer.sgd, args, infer)
    fitter = Fitter(net, attrs, spec, infer.sgd)
    res = fitter.fit(0.0)
    res.trace.write_csv(run.path("trace.csv"), spec.labels)
    res.require_converged()
    report = inference_report(fitter, res, infer)
    _write_report(run.path("fit_report.json"), report, spec, args.seed)


def _run_path(run: Run, args, net, attrs, spec):
    sgd = _sgd_config(args, derive_seed(args.seed, 3))
    grid = parse_grid(args.lambda_grid)
    path = compute_path(net, attrs, spec, grid, sgd)
    path.write_csv(run.path("path.csv"))
    path.write_csv(run.path("path_raw.csv"), raw=True)
    path.write_ranking(run.path("ranking.csv"))
    write_json(run.path("path.json"), path.to_dict())
    if args.plot:
        write_path_svg(path, run.path("path.svg"), title="coefficient path (scaled units)")
    n_ok = path.status.count("ok")
    bad = [fmt(lam) for lam, s in zip(path.grid.values, path.status) if s != "ok"]
    if bad:
        log.warning("grid points without a converged fit: %s", ", ".join(bad))
    if n_ok == 0:
        if path.status[0] == "degenerate":
            raise DegenerateMLEError("the first grid point is already degenerate")
        raise NonConvergenceError("no grid point converged")
    return path, sgd


def cmd_path(run: Run, args) -> None:
    net, attrs, doc = _load(args)
    spec = _standardized(run, args, net, attrs, doc)
    path, sgd = _run_path(run, args, net, attrs, spec)
    _record_defaults(run, sgd, args)


def cmd_select(run: Run, args) -> None:
    net, attrs, doc = _load(args)
    spec = _standardized(run, args, net, attrs, doc)
    path, sgd = _run_path(run, args, net, attrs, spec)
    infer = _inference_config(args, derive_seed(args.seed, 4))
    _record_defaults(run, sgd, args, infer)
    sel = select_threshold(path, net, attrs, args.criterion, args.alpha_sig, infer)
    sel.write_walk(run.path("walk.csv"))
    write_json(run.path("selection.json"), sel.to_dict())
    _write_report(run.path("fit_report.json"), sel.report, spec.subset(sel.selected[1:]),
                  args.seed, {"criterion": args.criterion, "alpha_sig": args.alpha_sig})
    log.info("selected: %s", ", ".join(sel.selected))


def _parse_floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"cannot parse {what} {text!r}") from exc


def cmd_simulate(run: Run, args) -> None:
    if args.draws < 1:
        raise UsageError("--draws must be at least 1")
    truth: dict = {"draws": args.draws, "seed": args.seed}
    attrs: AttributeTable | None = None
    rng = np.random.default_rng(derive_seed(args.seed, 5))
    if args.generator:
        terms, theta, with_attr, rule = GENERATORS[args.generator]
        n = args.n_nodes
        gen_spec = ModelSpec.of(*terms)
        theta = np.array(theta, dtype=float)
        truth.update(generator=args.generator, n_nodes=n)
        net0 = Network(n)
        cand = [{"kind": "gwesp", "alpha": 0.5}, {"kind": "gwnsp", "alpha": 0.5},
                {"kind": "gwdegree", "alpha": 0.5}]
        cand_doc: dict = {"terms": cand}
        if with_attr:
            cand.append({"kind": "nodefactor", "column": "x"})
            cand_doc["attributes"] = ATTR_SCHEMA
    else:
        if args.theta is None or args.spec is None:
            raise UsageError("simulate needs --generator, or --spec with --theta")
        doc = read_spec_file(args.spec)
        if args.edges is not None:
            net0, attrs = load_network(args.edges, args.attrs, doc.get("attributes"))
            n = net0.n_nodes
        else:
            n = args.n_nodes
            net0 = Network(n)
            attrs = AttributeTable(n)
        gen_spec = parse_spec(doc, attrs).unscaled()
        theta = _parse_floats(args.theta, "--theta")
        if theta.size != len(gen_spec):
            raise UsageError(f"--theta needs {len(gen_spec)} values ({', '.join(gen_spec.labels)})")
        with_attr, rule, cand_doc = False, "ergm", None
        truth.update(generator="spec", n_nodes=n)
    truth.update(terms=gen_spec.labels, theta=theta)
    d = n_dyads(n)
    burn = 100 * d if args.burn_in is None else args.burn_in
    thin = 20 * d if args.thin is None else args.thin
    xs = [rng.integers(0, 2, n) for _ in range(args.draws)] if with_attr else None
    if rule == "block":
        nets = [sample_block_bernoulli(xs[k], ATTR_PROBS, derive_seed(args.seed, 6, k))
                for k in range(args.draws)]
        truth["tie_rule"] = {"attribute": "x",
                             "probability_by_endpoints_with_x1": list(ATTR_PROBS)}
    else:
        cfg = SamplerConfig(burn_in=burn, thin=thin, m=args.draws, seed=derive_seed(args.seed, 7),
                            init="observed" if args.edges is not None else "empty")
        _, nets = sample(gen_spec, theta, net0, attrs, cfg, return_networks=True)
        truth["sampler"] = {"burn_in": burn, "thin": thin}
        if with_attr:
            truth["tie_rule"] = {"attribute": "x", "note": "attribute drawn independently of ties"}
    run.defaults = {"burn_in": burn, "thin": thin, "attribute_probabilities": list(ATTR_PROBS)}
    densities = []
    for k, net in enumerate(nets):
        a = attrs
        if with_attr:
            a = AttributeTable(n)
            a.add_categorical("x", [str(v) for v in xs[k]], levels=["0", "1"], reference="0")
        write_network(net, run.path(f"draw_{k:05d}.edges"), a or AttributeTable(n),
                      run.path(f"draw_{k:05d}.nodes.csv"))
        densities.append(net.density)
    truth["density"] = densities
    truth["mean_density"] = float(np.mean(densities))
    write_json(run.path("truth.json"), truth)
    if cand_doc is not None:
        write_json(run.path("candidate_spec.json"), cand_doc)


def cmd_exact(run: Run, args) -> None:
    net, attrs, doc = _load(args, need_edges=False)
    if net is not None:
        n = net.n_nodes
    else:
        n = args.n_nodes
    if n > MAX_NODES:
        raise CapacityError(f"exact enumeration is capped at {MAX_NODES} nodes, got {n}")
    attrs = attrs if attrs is not None else AttributeTable(n)
    spec = parse_spec(doc, attrs)
    em = ExactModel(n, spec, attrs, scaled=True)
    theta = np.zeros(len(spec)) if args.theta is None else _parse_floats(args.theta, "--theta")
    if theta.size != len(spec):
        raise UsageError(f"--theta needs {len(spec)} values ({', '.join(spec.labels)})")
    mean, cov = em.exact_moments(theta)
    out: dict = {"n_nodes": n, "graphs": em.stats.shape[0], "terms": spec.labels,
                 "scales": list(spec.scales), "theta": theta,
                 "log_kappa": em.log_kappa(theta), "mean": mean, "covariance": cov}
    run.defaults = {"lambda_grid": getattr(args, "lambda_grid", None)}
    if net is not None:
        obs = compute_stats(net, attrs, spec) / spec.scale_array
        out["observed"] = obs
        out["loglik"] = em.loglik(obs, theta)
        try:
            out["mle"] = em.exact_mle(obs)
        except DegenerateMLEError as exc:
            out["mle"] = None
            out["mle_error"] = str(exc)
        pen = spec.penalized_mask
        if pen.any():
            theta0 = np.zeros(len(spec))
            dens = net.density
            if 0 < dens < 1:
                theta0[0] = math.log(dens / (1 - dens))
            grad0 = obs - em.mean(theta0)
            lam_max = float(np.max(np.abs(grad0[pen])))
            out["lambda_max"] = lam_max
            req = parse_grid(args.lambda_grid)
            if req.mode == "auto":
                req = replace(req, n=min(req.n, 20))
            grid: LambdaGrid = req.build(lam_max)
            rows, status, warm = [], [], None
            for lam in grid.values:
                try:
                    warm = em.exact_penalized(obs, lam, theta0=warm)
                    rows.append(warm)
                    status.append("ok")
                except DegenerateMLEError:
                    rows.append(np.full(len(spec), np.nan))
                    status.append("degenerate")
                    warm = None
            with open(run.path("exact_path.csv"), "w", encoding="utf-8") as fh:
                fh.write(",".join(["lambda", *spec.labels]) + "\n")
                for lam, row in zip(grid.values, rows):
                    fh.write(",".join([fmt(lam), *(fmt(x) for x in row)]) + "\n")
            out["path_status"] = status
            act = {}
            for j in np.flatnonzero(pen):
                try:
                    act[spec.labels[j]] = activation_lambda(em, obs, int(j), lam_max * (1 + 1e-9))
                except DegenerateMLEError:
                    act[spec.labels[j]] = None
            out["activation_lambda"] = act
    write_json(run.path("exact.json"), out)


# -- argument parsing ---------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, inputs: bool = True) -> None:
    if inputs:
        p.add_argument("--edges", help="edge list: two node ids per line, '#' comments")
        p.add_argument("--attrs", help="node attribute CSV, first column = node id")
        p.add_argument("--spec", help="model spec JSON")
    p.add_argument("--out", required=True, help="output directory (created if absent)")
    p.add_argument("--seed", type=_u64, default=DEFAULT_SEED,
                   help=f"master seed (default {DEFAULT_SEED})")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="threads for parallel chains (default: all cores)")
    p.add_argument("--force", action="store_true", help="write into a non-empty --out")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")


def _add_sampler(p: argparse.ArgumentParser) -> None:
    p.add_argument("--burn-in", type=int, default=None, help="MH burn-in toggles (default 20 D)")
    p.add_argument("--thin", type=int, default=None, help="MH toggles between draws (default D)")
    p.add_argument("--chains", type=int, default=1, help="independent chains per fit")


def _add_fit(p: argparse.ArgumentParser) -> None:
    _add_sampler(p)
    p.add_argument("--max-iters", type=int, default=None, help="SGD iteration cap")
    p.add_argument("--m-per-iter", type=int, default=None, help="draws per SGD iteration")
    p.add_argument("--tol", type=float, default=None, help="SGD convergence tolerance")
    p.add_argument("--std-m", type=int, default=DEFAULT_STANDARDIZE_M,
                   help="Erdos-Renyi draws for standardization")


def _add_inference(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cov-m", type=int, default=2000, help="draws for the covariance at the MLE")
    p.add_argument("--bridge-points", type=int, default=20, help="path-sampling grid points")
    p.add_argument("--bridge-m", type=int, default=500, help="draws per path-sampling point")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-grid", default="auto",
                   help="auto | auto:N:RATIO | geom:MAX:MIN:N | lin:MAX:MIN:N | v1,v2,...")
    p.add_argument("--plot", action="store_true", help="also write path.svg")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergmlasso",
                                     description="L1-penalized variable ranking for ERGMs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("standardize", help="write Erdos-Renyi scale factors for a spec")
    _add_common(p)
    p.add_argument("--std-m", type=int, default=DEFAULT_STANDARDIZE_M)
    p.set_defaults(func=cmd_standardize)

    p = sub.add_parser("fit", help="unpenalized MLE with standard errors and AIC")
    _add_common(p)
    _add_fit(p)
    _add_inference(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="penalized coefficient path and importance ranking")
    _add_common(p)
    _add_fit(p)
    _add_grid(p)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("select", help="path, ranking, threshold walk and final refit")
    _add_common(p)
    _add_fit(p)
    _add_grid(p)
    _add_inference(p)
    p.add_argument("--criterion", choices=("aic", "pvalue"), default="aic")
    p.add_argument("--alpha-sig", type=float, default=0.05,
                   help="significance level for --criterion pvalue")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="draw networks from a known model")
    _add_common(p)
    _add_sampler(p)
    p.add_argument("--generator", choices=sorted(GENERATORS),
                   help="built-in generating model (N nodes, see README)")
    p.add_argument("--theta", help="comma-separated raw coefficients for --spec")
    p.add_argument("--n-nodes", type=int, default=50)
    p.add_argument("--draws", type=int, default=20)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("exact", help="exact enumeration quantities for N <= 7")
    _add_common(p)
    p.add_argument("--theta", help="comma-separated coefficients (scaled units)")
    p.add_argument("--n-nodes", type=int, default=5)
    p.add_argument("--lambda-grid", default="auto")
    p.set_defaults(func=cmd_exact)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    run = None
    code, status = 0, "ok"
    try:
        run = Run(args)
        args.func(run, args)
    except ErgmLassoError as exc:
        code, status = exc.exit_code, type(exc).__name__
        print(f"ergmlasso: error: {exc}", file=sys.stderr)
    except OSError as exc:
        code, status = 2, "OSError"
        print(f"ergmlasso: error: {exc}", file=sys.stderr)
    if run is not None:
        run.manifest(status, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
