"""Command-line front end: ``spikedlab <subcommand> [options]``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numeric failures.
Every artifact embeds the full configuration and the tool version, and reruns
with the same configuration, seed and worker count are byte-identical
(``wall_ms`` stays null unless ``--timing`` is given).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from spikedlab import __version__, artifacts
from spikedlab import detect as det
from spikedlab import moments as mom
from spikedlab import thresholds as thr
from spikedlab.ensembles import WishartFailure, sample_count, sample_gwig, sample_wig, sample_wishart
from spikedlab.noise import NoiseModel, PointMassNoise, QuadratureError, fisher_information, nongaussian_thresholds, parse_noise
from spikedlab.priors import (
    RateFunction,
    SparseRademacher,
    Spherical,
    atom_law,
    is_rademacher,
    overlap_samples,
    parse_prior,
    rate_for,
    subgaussian_sigma_star,
)
from spikedlab.rng import derive, partition

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


NUMERIC_ERRORS = (QuadratureError, det.EigenSolverError, ArithmeticError, FloatingPointError)


# --------------------------------------------------------------------------
# shared helpers


def _floats(text: str | None) -> list[float]:
    if text is None:
        return []
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text: str | None) -> list[int]:
    return [int(v) for v in _floats(text)]


def _config(args) -> dict:
    skip = {"func", "formats", "out", "gnuplot"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _prior(args):
    try:
        return parse_prior(args.prior)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _noise(args):
    try:
        return parse_noise(args.noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require(value, name):
    if value is None:
        raise ConfigError(f"--{name} is required here")
    return value


def _emit(args, text: str):
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _sample(model: str, param: float, args, prior, noise, n, gen):
    if model == "gwig":
        return sample_gwig(param, prior, n, gen)
    if model == "wig":
        return sample_wig(param, noise, prior, n, gen)
    if model == "wish":
        return sample_wishart(_require(args.gamma, "gamma"), param, prior, n, gen)
    raise ConfigError(f"unknown model {model!r}")


def _signal(args) -> float:
    if args.model == "wish":
        return float(_require(args.beta, "beta"))
    return float(_require(args.lam, "lambda"))


def _run_partitioned(fn, payload, count: int, workers: int):
    """Run ``fn(payload, worker, block)`` over a fixed contiguous partition and
    return results in trial order."""
    blocks = partition(count, workers)
    if workers == 1:
        parts = [fn(payload, 0, blocks[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, [payload] * workers, range(workers), blocks))
    return [item for part in parts for item in part]


# --------------------------------------------------------------------------
# spectrum


def cmd_spectrum(args) -> str:
    prior, n = _prior(args), args.n
    noise = _noise(args) if args.model == "wig" else None
    if isinstance(noise, PointMassNoise):
        raise ConfigError("spectrum needs a continuous noise law")
    gen = derive(args.seed, 0, 0)
    sample = _sample(args.model, _signal(args), args, prior, noise, n, gen)
    if isinstance(sample, WishartFailure):
        raise ConfigError(f"Wishart sampling failed: {sample.reason}")
    stages = [("before", sample)]
    summary = {}
    if args.model == "wish":
        lo, hi = det.wishart_edges(sample.gamma)
        summary.update(lower_edge=lo, upper_edge=hi, gamma_actual=sample.gamma)
    else:
        summary["edge"] = 2.0
    if args.model == "wig" and not noise.is_gaussian:
        stages.append(("after", det.pretransform(sample, noise)))
        summary["fisher"] = fisher_information(noise)
        summary["edge_after"] = 2 * math.sqrt(summary["fisher"])
    rows = []
    for stage, s in stages:
        ev = det.spectrum(s)
        counts, edges = np.histogram(ev, bins=args.bins)
        rows += [{"stage": stage, "kind": "bin", "lo": float(edges[i]), "hi": float(edges[i + 1]),
                  "value": int(counts[i])} for i in range(args.bins)]
        top = ev[::-1][: args.topk]
        rows += [{"stage": stage, "kind": "top", "lo": float(r + 1), "hi": float(r + 1), "value": float(v)}
                 for r, v in enumerate(top)]
        summary[f"lambda_max_{stage}"] = float(ev[-1])
        summary[f"bin_width_{stage}"] = float(edges[1] - edges[0])
    return artifacts.write_csv("spectrum", _config(args), rows, summary)


# --------------------------------------------------------------------------
# detect


def _detect_setup(args):
    prior = _prior(args)
    noise = _noise(args) if args.model == "wig" else None
    d = args.detector
    setup = {"prior": prior, "noise": noise}
    if d == "transform-pca":
        if args.model != "wig" or not isinstance(noise, NoiseModel):
            raise ConfigError("transform-pca needs --model wig with a continuous --noise")
        setup["fisher"] = fisher_information(noise)
    elif d == "mle":
        if args.model != "wish":
            raise ConfigError("mle needs --model wish")
        if not is_rademacher(prior):
            raise ConfigError("the exhaustive MLE enumerates the Rademacher support only")
        beta = _signal(args)
        N = sample_count(args.n, _require(args.gamma, "gamma"))
        lo, hi = det.mle_epsilon_interval(beta, args.n / N, math.log(2))
        setup["epsilon"] = args.epsilon if args.epsilon is not None else 0.5 * (lo + hi)
        setup["epsilon_interval"] = [lo, hi]
    elif d == "point-mass":
        if args.model != "wig" or not isinstance(noise, PointMassNoise):
            raise ConfigError("point-mass needs --model wig with discrete --noise")
        c = args.atom
        m = noise.mass_at(c)
        if m <= 0:
            raise ConfigError(f"noise has no atom at {c}")
        if isinstance(prior, SparseRademacher):
            delta = prior.rho
        else:
            delta = 1.0
        setup["mass"] = m
        setup["epsilon"] = args.epsilon if args.epsilon is not None else 0.5 * m * delta * delta
    elif d == "pca":
        if args.negative and args.model != "wish":
            raise ConfigError("--negative applies to --model wish only")
    else:
        raise ConfigError(f"unknown detector {d!r}")
    return setup


def _detect_trials(payload, worker: int, block: range):
    args, setup, trials = payload
    out = []
    for local, idx in enumerate(block):
        hyp, i = trials[idx]
        gen = derive(args.seed, worker, local)
        start = time.perf_counter()
        param = _signal(args) if hyp == "spiked" else 0.0
        sample = _sample(args.model, param, args, setup["prior"], setup["noise"], args.n, gen)
        params = {"model": args.model, "n": args.n, "signal": param}
        if args.model == "wish":
            params["gamma"] = args.gamma
        if isinstance(sample, WishartFailure):
            rec = {"detector": args.detector, "statistic": None, "threshold": None, "decision": "spiked",
                   "correlation": None, "failure": sample.reason}
        else:
            rep = _run_detector(args, setup, sample)
            rec = {"detector": rep.detector, "statistic": rep.statistic, "threshold": rep.threshold,
                   "decision": rep.decision, "correlation": rep.spike_correlation}
        wall = (time.perf_counter() - start) * 1e3 if args.timing else None
        rec.update(record="trial", params=params, seed=[args.seed, worker, local], hypothesis=hyp,
                   index=i, wall_ms=wall)
        out.append(rec)
    return out


def _run_detector(args, setup, sample):
    d = args.detector
    if d == "pca":
        return det.pca_test(sample, args.margin, negative=args.negative)
    if d == "transform-pca":
        return det.pretransformed_pca_test(sample, setup["noise"], args.margin, fisher=setup["fisher"])
    if d == "mle":
        return det.mle_wishart_test(sample, _signal(args), setup["epsilon"], cap=args.cap)
    return det.point_mass_test(sample, args.atom, setup["mass"], setup["epsilon"])


def wilson(errors: int, trials: int) -> dict:
    if trials == 0:
        return {"errors": 0, "trials": 0, "rate": None, "ci_low": None, "ci_high": None}
    ci = binomtest(errors, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return {"errors": errors, "trials": trials, "rate": errors / trials,
            "ci_low": float(ci.low), "ci_high": float(ci.high)}


def summarize_detection(records: list[dict]) -> dict:
    spiked = [r for r in records if r["hypothesis"] == "spiked"]
    null = [r for r in records if r["hypothesis"] == "unspiked"]
    t1 = wilson(sum(r["decision"] == "spiked" for r in null), len(null))
    t2 = wilson(sum(r["decision"] == "unspiked" for r in spiked), len(spiked))
    total = (t1["rate"] or 0.0) + (t2["rate"] or 0.0)
    return {"record": "summary", "type1": t1, "type2": t2, "total_error": total}


def run_detect(args) -> tuple[list[dict], dict, dict]:
    setup = _detect_setup(args)
    null_trials = args.trials if args.null_trials is None else args.null_trials
    trials = [("spiked", i) for i in range(args.trials)] + [("unspiked", i) for i in range(null_trials)]
    records = _run_partitioned(_detect_trials, (args, setup, trials), len(trials), args.workers)
    summary = summarize_detection(records)
    extras = {k: setup[k] for k in ("epsilon", "epsilon_interval", "fisher", "mass") if k in setup}
    return records, summary, extras


def cmd_detect(args) -> str:
    records, summary, extras = run_detect(args)
    config = dict(_config(args), partition=[[b.start, b.stop] for b in partition(len(records), args.workers)],
                  **{f"derived_{k}": v for k, v in extras.items()})
    return artifacts.write_jsonl("detect", config, records + [summary])


# --------------------------------------------------------------------------
# phase


def _phase_rate(args, prior) -> RateFunction:
    choice = args.rate
    if choice is None:
        try:
            return rate_for(prior)
        except ValueError as exc:
            raise ConfigError(f"{exc}; choose one explicitly with --rate") from exc
    if choice == "sph":
        return rate_for(Spherical())
    if choice == "rad":
        return rate_for("rad")
    if choice == "largebeta":
        values, probs = atom_law(prior)
        return RateFunction("largebeta", lambda t: thr.largebeta_rate(values, probs, t), 0.5,
                            note="valid rate for large beta only")
    raise ConfigError(f"unknown rate {choice!r}")


def _log_support(prior) -> float | None:
    if isinstance(prior, Spherical):
        return None
    if isinstance(prior, SparseRademacher):
        return math.log(2) if prior.rho == 1 else thr.sparse_log_support(prior.rho)
    values, _ = atom_law(prior)
    return math.log(len(values))


def cmd_phase(args) -> str:
    prior = _prior(args)
    rate = _phase_rate(args, prior)
    betas = np.round(np.arange(args.beta_min, args.beta_max + 0.5 * args.beta_step, args.beta_step), 10)
    betas = betas[betas > -1]
    chk = thr.LowerBoundChecker(rate, args.grid)
    lower = thr.wishart_lower_curve(rate, betas, tol=args.tol, checker=chk)
    log_c = _log_support(prior)
    mle = thr.mle_gamma(log_c, betas) if log_c is not None else np.full(betas.shape, np.nan)
    rows = []
    for b, gl, gm in zip(betas, lower.gamma, np.atleast_1d(mle)):
        verdict = ""
        if args.gamma is not None:
            verdict = thr.classify(float(b), args.gamma, chk, log_c).verdict
        rows.append({"beta": float(b), "gamma_pca": float(b * b), "gamma_lower": float(gl),
                     "gamma_mle": float(gm), "verdict": verdict})
    summary = {"rate": rate.name, "rate_note": rate.note, "log_support": log_c}
    if log_c is not None:
        try:
            summary["mle_pca_crossing"] = thr.mle_pca_crossing(log_c)
        except ValueError:
            summary["mle_pca_crossing"] = None
    try:
        summary["lower_departure"] = thr.lower_curve_departure(rate, grid_size=args.grid)
    except ValueError:
        summary["lower_departure"] = None
    return artifacts.write_csv("phase", _config(args), rows, summary)


# --------------------------------------------------------------------------
# moment


def _moment_terms(payload, worker: int, block: range):
    model, signal, gamma, prior_text, n, row, seed = payload
    # one stream per (worker, sweep row)
    gen = derive(seed, worker, row)
    ov = overlap_samples(parse_prior(prior_text), n, len(block), gen)
    if model == "gwig":
        return [(mom.gwig_terms(signal, ov, n), 0)]
    terms, bad = mom.wishart_terms(signal, ov, sample_count(n, gamma))
    return [(terms, bad)]


def cmd_moment(args) -> str:
    prior = _prior(args)
    if args.model not in ("gwig", "wish"):
        raise ConfigError("moment supports --model gwig or wish")
    signals = _floats(args.lam if args.model == "gwig" else args.beta)
    if not signals:
        raise ConfigError("give --lambda (gwig) or --beta (wish), comma-separated for a sweep")
    ns = _ints(args.n_list) or [args.n]
    gamma = args.gamma if args.model == "wish" else None
    if args.model == "wish":
        _require(gamma, "gamma")
        if any(abs(b) >= 1 for b in signals):
            raise ConfigError("the Wishart second moment needs |beta| < 1")
    if args.trials < 2:
        raise ConfigError("--trials must be at least 2")
    rows = []
    row = 0
    for n in ns:
        for s in signals:
            payload = (args.model, s, gamma, args.prior, n, row, args.seed)
            parts = _run_partitioned(_moment_terms, payload, args.trials, args.workers)
            terms = np.concatenate([p[0] for p in parts])
            bad = sum(p[1] for p in parts)
            est = (mom.MomentEstimate(1.0, 0.0, args.trials) if s == 0
                   else mom.summarize_terms(terms, args.trials, bad))
            ref, kind = _moment_reference(args.model, s, n, prior, gamma)
            rows.append({"lambda_or_beta": s, "gamma": gamma, "n": n, "trials": args.trials,
                         "estimate": est.value, "std_error": est.std_error, "diverged_count": est.diverged_count,
                         "top1pct_mass": est.top1pct_mass, "reference": ref, "reference_kind": kind})
            row += 1
    return artifacts.write_csv("moment", _config(args), rows)


def _moment_reference(model, s, n, prior, gamma):
    if model == "gwig":
        if isinstance(prior, Spherical) and n >= 3 and 0.5 * n * s * s <= mom.KUMMER_MAX_ARG:
            return mom.gwig_second_moment_spherical_exact(s, n), "exact_1F1"
        if 0 <= s < 1:
            return mom.second_moment_limit(s), "limit"
        return None, "none"
    if s * s < gamma:
        return 1 / math.sqrt(1 - s * s / gamma), "small_deviation_limit"
    return None, "none"


# --------------------------------------------------------------------------
# rho-star and scalar thresholds


def cmd_rho_star(args) -> str:
    rho = thr.rho_star(args.tolerance)
    payload = {"rho_star": rho, "tolerance": args.tolerance,
               "lambda_bar_at_bracket": [thr.conditioning_lambda_bar(SparseRademacher(rho - args.tolerance)),
                                         thr.conditioning_lambda_bar(SparseRademacher(min(rho + args.tolerance, 1.0)))]}
    return artifacts.write_json("rho-star", _config(args), payload)


def cmd_thresholds(args) -> str:
    results = {}
    if args.prior is not None:
        prior = _prior(args)
        results["prior"] = prior.descriptor
        if not isinstance(prior, Spherical):
            results["sigma_star"] = subgaussian_sigma_star(prior)
            results["lambda_bar"] = thr.conditioning_lambda_bar(prior)
            log_c = _log_support(prior)
            results["log_support"] = log_c
        if args.beta is not None and args.beta > 0:
            sigma = results.get("sigma_star", 1.0)
            results["subgaussian_gamma"] = thr.subgaussian_wishart_bound(sigma, args.beta)
        if args.beta is not None and args.beta != 0 and "log_support" in results:
            results["mle_gamma"] = thr.mle_gamma(results["log_support"], args.beta)
        if args.gamma is not None:
            lam_star = results.get("lambda_bar", 1.0)
            results["crude_beta"] = thr.wigner_wishart_crude_bound(min(lam_star, 1.0), args.gamma)
    if args.noise is not None:
        noise = _noise(args)
        if not isinstance(noise, NoiseModel):
            raise ConfigError("Fisher information needs a continuous noise law")
        fp = fisher_information(noise)
        lam_star = results.get("lambda_bar", 1.0)
        lower, upper = nongaussian_thresholds(noise, min(lam_star, 1.0), fp)
        results.update(noise=noise.descriptor, fisher=fp, contiguity_below=lower, transform_pca_above=upper)
    if not results:
        raise ConfigError("give --prior and/or --noise")
    return artifacts.write_json("thresholds", _config(args), {"results": results})


def cmd_validate(args) -> str:
    kind = artifacts.validate_file(args.path)
    return f"{args.path}: valid {kind} artifact\n"


# --------------------------------------------------------------------------
# argument parsing


def _common(p, models=("gwig", "wig", "wish")):
    p.add_argument("--model", choices=models, default=models[0])
    p.add_argument("--prior", default="spherical", help="spherical | rademacher | sparse:<rho> | atoms:v@p,...")
    p.add_argument("--noise", default="gaussian", help="gaussian | bimodal | mix:w@m@s,... | discrete:v@p,...")
    p.add_argument("--lambda", dest="lam", default=None)
    p.add_argument("--beta", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--format", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikedlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"spikedlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalue histogram before/after the score transform")
    _common(p)
    p.add_argument("--bins", type=int, default=80)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--gnuplot", default=None, help="also write a gnuplot script to this path")
    p.set_defaults(func=cmd_spectrum, formats=("csv",))

    p = sub.add_parser("detect", help="run a detector over spiked and unspiked seeds")
    _common(p)
    p.add_argument("--detector", choices=("pca", "transform-pca", "mle", "point-mass"), default="pca")
    p.add_argument("--trials", type=int, default=50, help="spiked trials (and unspiked unless --null-trials)")
    p.add_argument("--null-trials", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--negative", action="store_true", help="Wishart PCA also tests the lower edge")
    p.add_argument("--atom", type=float, default=1.0, help="point-mass location c")
    p.add_argument("--cap", type=int, default=det.MLE_CAP)
    p.add_argument("--timing", action="store_true", help="record wall_ms per trial")
    p.set_defaults(func=cmd_detect, formats=("jsonl",))

    p = sub.add_parser("phase", help="Wishart phase diagram: lower, MLE and PCA curves")
    _common(p, models=("wish",))
    p.add_argument("--rate", choices=("sph", "rad", "largebeta"), default=None)
    p.add_argument("--beta-min", type=float, default=-0.99)
    p.add_argument("--beta-max", type=float, default=1.5)
    p.add_argument("--beta-step", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--grid", type=int, default=10_000)
    p.add_argument("--gnuplot", default=None)
    p.set_defaults(func=cmd_phase, formats=("csv",))

    p = sub.add_parser("moment", help="second-moment Monte Carlo sweep")
    _common(p, models=("gwig", "wish"))
    p.add_argument("--n-list", default=None, help="comma-separated n sweep (overrides --n)")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--gnuplot", default=None)
    p.set_defaults(func=cmd_moment, formats=("csv",))

    p = sub.add_parser("rho-star", help="critical sparsity of the conditioning method")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--out", default="-")
    p.add_argument("--format", default=None)
    p.set_defaults(func=cmd_rho_star, formats=("json",))

    p = sub.add_parser("thresholds", help="scalar thresholds for a prior and/or noise")
    p.add_argument("--prior", default=None)
    p.add_argument("--noise", default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--out", default="-")
    p.add_argument("--format", default=None)
    p.set_defaults(func=cmd_thresholds, formats=("json",))

    p = sub.add_parser("validate", help="check an artifact against its schema")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate, formats=(None,), out="-", format=None)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.format is not None and args.format not in args.formats:
            raise ConfigError(f"{args.command} writes {', '.join(args.formats)}, not {args.format}")
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be at least 1")
        text = args.func(args)
        _emit(args, text)
        script = getattr(args, "gnuplot", None)
        if script:
            data = args.out if args.out not in (None, "-") else "data.csv"
            Path(script).write_text(artifacts.gnuplot_script(args.command, data))
    except NUMERIC_ERRORS as exc:
        print(f"spikedlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, artifacts.SchemaError) as exc:
        print(f"spikedlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
