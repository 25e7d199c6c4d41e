"""Command-line entry point: ``svcprobit <command> ...``.

Commands: simulate, fit, predict, diagnose, firth, evaluate. Exit codes are
0 on success, 2 for configuration errors, 3 for data or I/O errors and 4 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import io, kernels
from .diagnostics import (PSRF_PASS, MonitorSink, autocorrelation, default_monitor_sites,
                          max_pairwise_difference, psrf_table, read_trace_csv)
from .errors import ConfigError, DataError, SvcProbitError
from .firth import firth_map
from .inference import PosteriorSummary, standardize
from .predict import (LikelihoodSink, classify_all, empirical_prior, firth_classify_loo,
                      nbc_classify_loo)
from .sampler import McmcConfig, Problem, gibbs_run
from .simgen import (CELLS, SimDesign, analytic_rates, cell_name, design_to_json, generate_cohort,
                     interior_mse, true_rates)

log = logging.getLogger("svcprobit")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _csv_list(text):
    return [s for s in (text or "").split(",") if s]


def read_config_file(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored. Keys use flag spelling."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.lstrip("-").replace("-", "_")] = v
    return out


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args):
    if args.side % 2:
        raise ConfigError("--side must be even")
    design = SimDesign(side=args.side, quadrant=args.side // 2, lambda_left=args.lambda0_left,
                       lambda_right=args.lambda0_right, gender_effect=args.gender_effect,
                       group_effect=args.group_effect, margin=args.margin)
    cohort = generate_cohort(design, args.per_cell, args.seed)
    ds = cohort.dataset
    if args.oracle_per_cell > 0:
        rates = true_rates(design, args.oracle_per_cell, args.seed)
        source = "empirical"
    else:
        rates = analytic_rates(design)
        source = "coverage formula"
    truth = {
        "design": json.loads(design_to_json(design)),
        "rates": rates,
        "rate_source": source,
        "oracle_per_cell": args.oracle_per_cell,
        "seed": args.seed,
        "subtype_labels": ["group1", "group2"],
    }
    profiles = [{"name": cell_name(g, grp), "subtype": grp, "gender": 1 if g == "male" else 0}
                for g, grp in CELLS]
    io.write_cohort(args.out, ds.ids, [grp for grp in cohort.groups],
                    {"gender": [1 if g == "male" else 0 for g in cohort.genders]},
                    cohort.images, mask=np.ones((design.side, design.side), dtype=bool),
                    profiles=profiles, truth=truth)
    print(f"wrote {len(ds.ids)} subjects to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# fit

def _contrasts(design) -> dict[str, np.ndarray]:
    """First subtype minus each other subtype."""
    K, P = design.n_subtypes, design.n_coefficients
    names = design.names
    out = {}
    for k in range(1, K):
        c = np.zeros(P)
        c[0], c[k] = 1.0, -1.0
        out[f"{names[0]}-{names[k]}"] = c
    return out


def _read_monitor_sites(path, lattice) -> np.ndarray:
    sites = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.replace(",", " ").split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise ConfigError(f"{path}:{n}: expected a site index or x y [z] coordinates") from None
        if len(vals) == 1:
            j = vals[0]
        elif len(vals) in (2, 3):
            x, y, z = (vals + [0])[:3]
            nx, ny, nz = lattice.dims
            if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
                raise ConfigError(f"{path}:{n}: coordinates outside the grid")
            j = int(lattice.site_of_cell[z, y, x])
        else:
            raise ConfigError(f"{path}:{n}: expected a site index or x y [z] coordinates")
        if not 0 <= j < lattice.n_sites:
            raise ConfigError(f"{path}:{n}: not an in-mask site")
        sites.append(j)
    if not sites:
        raise ConfigError(f"{path}: no monitor sites listed")
    return np.array(sites, dtype=np.int64)


def _map_mse(data_dir, ds, prob_maps: dict[str, np.ndarray]):
    """Interior MSE against simulation truth, or None without a truth file."""
    truth = io.read_truth(data_dir)
    if not truth or "rates" not in truth:
        return None
    design = SimDesign(**{**truth["design"], "sizes": tuple(truth["design"]["sizes"])})
    rates = {k: v for k, v in truth["rates"].items() if k in prob_maps}
    if not rates:
        return None
    est = {k: ds.lattice.rasterize(prob_maps[k], fill=np.nan)[0] for k in rates}
    return interior_mse(design, est, rates)


def _region_proportions(z, lattice, threshold):
    """Suprathreshold fractions overall and by image half (2-D grids)."""
    supra = np.abs(z) >= threshold
    out = {"all": float(supra.mean())}
    nx, ny, _ = lattice.dims
    x, y = lattice.coords[:, 0], lattice.coords[:, 1]
    for name, sel in (("left", x < nx / 2), ("right", x >= nx / 2),
                      ("top", y < ny / 2), ("bottom", y >= ny / 2)):
        out[name] = float(supra[sel].mean()) if sel.any() else 0.0
    return out


def write_fit_products(out: Path, ds, summary: PosteriorSummary, monitor: MonitorSink | None,
                       chains: list[int], threshold: float, lik=None, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    lat = ds.lattice
    f32 = io.DTYPE_F32

    def raster(name, values):
        io.write_raster(out / f"{name}.blm", lat.rasterize(np.asarray(values, np.float32)), f32)

    props = {}
    for p, name in enumerate(summary.names):
        mean, sd = summary.coef.mean[:, p], summary.coef.std[:, p]
        z = standardize(mean, sd, threshold)
        raster(f"coef_mean_{_safe(name)}", mean)
        raster(f"coef_sd_{_safe(name)}", sd)
        raster(f"coef_z_{_safe(name)}", z.values)
        raster(f"coef_zthr_{_safe(name)}", z.thresholded)
        props[f"coef:{name}"] = _region_proportions(z.values, lat, threshold)
    for c, name in enumerate(summary.contrasts):
        mean, sd = summary.contrast.mean[:, c], summary.contrast.std[:, c]
        z = standardize(mean, sd, threshold)
        raster(f"contrast_mean_{_safe(name)}", mean)
        raster(f"contrast_sd_{_safe(name)}", sd)
        raster(f"contrast_z_{_safe(name)}", z.values)
        raster(f"contrast_zthr_{_safe(name)}", z.thresholded)
        props[f"contrast:{name}"] = _region_proportions(z.values, lat, threshold)
    prob_maps = {}
    for r, prof in enumerate(summary.profiles):
        prob_maps[prof.name] = summary.prob.mean[r]
        raster(f"prob_{_safe(prof.name)}", summary.prob.mean[r])

    it = np.asarray(summary.iterations)
    chain_of = np.repeat(chains, len(it) // max(len(chains), 1)) if chains else np.zeros(len(it), int)
    _write_multi_chain(out / "gamma.csv", {"gamma": np.asarray(summary.gamma_trace)}, chain_of, it)
    alpha = np.asarray(summary.alpha_trace).reshape(len(it), -1)
    _write_multi_chain(out / "alpha.csv", {f"alpha:{n}": alpha[:, p] for p, n in enumerate(summary.names)},
                       chain_of, it)
    prec = np.asarray(summary.precision_trace).reshape(len(it), len(summary.names), len(summary.names))
    a, b = np.triu_indices(len(summary.names))
    _write_multi_chain(out / "precision.csv", {f"precision[{i},{j}]": prec[:, i, j] for i, j in zip(a, b)},
                       chain_of, it)
    if monitor is not None:
        tr = monitor.traces()
        mit = np.asarray(monitor.iterations)
        mchain = np.repeat(chains, len(mit) // max(len(chains), 1)) if chains else np.zeros(len(mit), int)
        labels = monitor.labels()
        _write_multi_chain(out / "monitor.csv", dict(zip(labels, tr.reshape(len(mit), -1).T)), mchain, mit)
    if lik is not None:
        trace, lit, lchain = lik
        np.savez(out / "likelihood.npz", trace=trace, iterations=lit, chain=lchain,
                 subtypes=ds.subtypes, ids=np.array(ds.ids))
    mse = _map_mse(extra.get("data_dir"), ds, prob_maps) if extra and extra.get("data_dir") else None
    info = {
        "coefficients": summary.names,
        "contrasts": list(summary.contrasts),
        "profiles": [p.name for p in summary.profiles],
        "retained_draws": summary.count,
        "chains": list(chains),
        "threshold": threshold,
        "suprathreshold": props,
        "mse": mse,
        "dims": list(lat.dims),
        "sites": lat.n_sites,
    }
    if extra:
        info.update({k: v for k, v in extra.items() if k != "data_dir"})
    io.write_json(out / "summary.json", info)
    return info


def _write_multi_chain(path, traces, chain_of, iterations):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "chain", "iteration", "value"])
        for label, values in traces.items():
            for c, it, v in zip(chain_of, iterations, np.asarray(values)):
                w.writerow([label, int(c), int(it), repr(float(v))])


def cmd_fit(args):
    config = McmcConfig(iterations=args.iters, burn_in=args.burnin, thin=args.thin, seed=args.seed,
                        chains=args.chains, wishart_df=args.nu, threads=args.threads,
                        likelihood_thin=args.likelihood_thin, phase_order=args.phase_order,
                        parameterization=args.parameterization,
                        checkpoint_every=args.checkpoint_every).validate()
    ds = io.load_dataset(args.data, center=_csv_list(args.center) if args.center is not None else None)
    problem = Problem(ds)
    if args.monitor_sites:
        sites = _read_monitor_sites(args.monitor_sites, ds.lattice)
    else:
        sites = default_monitor_sites(ds.outcomes, 10, seed=0)
    contrasts = _contrasts(ds.design)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    common = {"data_dir": args.data, "seed": config.seed, "iterations": config.iterations,
              "burn_in": config.burn_in, "thin": config.thin, "wishart_df": config.wishart_df,
              "parameterization": config.parameterization}

    pooled = pooled_mon = None
    lik_parts = []
    for chain in range(config.chains):
        cdir = out / f"chain_{chain}" if config.chains > 1 else out
        cdir.mkdir(parents=True, exist_ok=True)
        summary = PosteriorSummary(ds.design.names, contrasts, ds.profiles)
        monitor = MonitorSink(sites)
        sinks = [summary, monitor]
        lik = LikelihoodSink() if args.save_likelihood_trace else None
        if lik is not None:
            sinks.append(lik)
        t0 = time.perf_counter()

        def progress(t, chain=chain, t0=t0):
            if (t + 1) % args.progress_every == 0:
                log.info("chain %d: iteration %d/%d (%.1fs)", chain, t + 1, config.iterations,
                         time.perf_counter() - t0)

        gibbs_run(problem, config, sinks, chain=chain, checkpoint=cdir / "checkpoint.npz",
                  resume=args.resume, progress=progress)
        log.info("chain %d finished in %.1fs", chain, time.perf_counter() - t0)
        lik_arr = None
        if lik is not None:
            tr = lik.trace()
            lik_arr = (tr, np.asarray(lik.iterations, dtype=np.int64), np.full(len(tr), chain))
            lik_parts.append(lik_arr)
        write_fit_products(cdir, ds, summary, monitor, [chain], args.threshold, lik_arr,
                           {**common, "chain": chain})
        if config.chains > 1:
            pooled = summary if pooled is None else pooled.merge(summary)
            if pooled_mon is None:
                pooled_mon = MonitorSink(sites)
                pooled_mon.names = monitor.names
            pooled_mon.values += monitor.values
            pooled_mon.iterations += monitor.iterations

    if config.chains > 1:
        lik_all = None
        if lik_parts:
            lik_all = tuple(np.concatenate(x) for x in zip(*lik_parts))
        info = write_fit_products(out, ds, pooled, pooled_mon, list(range(config.chains)),
                                  args.threshold, lik_all, {**common, "chain": "pooled"})
    else:
        info = io.read_json(out / "summary.json")
    print(f"fit written to {out} (backend {kernels.BACKEND})")
    if info and info.get("mse") is not None:
        print(f"interior MSE vs truth: {info['mse']:.4e}")
    return 0


# ---------------------------------------------------------------------------
# predict

def cmd_predict(args):
    ds = io.load_dataset(args.data, center=_csv_list(args.center) if args.center is not None else None)
    K = ds.design.n_subtypes
    labels = ds.design.names[:K]
    prior = np.full(K, 1.0 / K) if args.prior == "uniform" else empirical_prior(ds.subtypes, K)
    if args.method == "bayes":
        if not args.fit:
            raise ConfigError("--method bayes needs --fit DIR")
        path = Path(args.fit) / "likelihood.npz"
        if not path.exists():
            raise ConfigError(f"no likelihood trace in {args.fit}; rerun fit with --save-likelihood-trace")
        with np.load(path, allow_pickle=False) as z:
            trace = z["trace"]
            if list(z["ids"]) != list(ds.ids):
                raise DataError("likelihood trace subjects do not match the dataset")
        result = classify_all(trace, ds.subtypes, prior, labels)
    elif args.method == "nbc":
        result = nbc_classify_loo(ds.outcomes, ds.subtypes, K, prior, args.min_lesions, labels)
    else:
        result = firth_classify_loo(ds, prior, args.min_lesions, labels)

    out = Path(args.out or args.fit or ".")
    out.mkdir(parents=True, exist_ok=True)
    m = args.method
    with open(out / f"{m}_posteriors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true", "predicted"] + [f"prior_{lab}" for lab in labels]
                   + [f"post_{lab}" for lab in labels] + ["low_confidence"])
        for i, sid in enumerate(ds.ids):
            w.writerow([sid, labels[result.true[i]], labels[result.predicted[i]]]
                       + [f"{p:.6g}" for p in prior] + [f"{p:.6g}" for p in result.posteriors[i]]
                       + [int(result.low_confidence[i])])
    with open(out / f"{m}_confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true"] + labels + ["n"])
        for k in range(K):
            w.writerow([labels[k]] + [f"{v:.6f}" for v in result.confusion[k]] + [int(result.counts[k].sum())])
    report = {
        "method": m, "prior": args.prior, "n": result.n,
        "overall_rate": result.overall_rate, "overall_ci": result.overall_ci,
        "average_rate": result.average_rate, "average_ci": result.average_ci,
        "class_rates": dict(zip(labels, result.class_rates.tolist())),
        "counts": result.counts.tolist(),
        "low_confidence": int(result.low_confidence.sum()),
    }
    io.write_json(out / f"{m}_report.json", report)
    print(result.table())
    return 0


# ---------------------------------------------------------------------------
# diagnose

def cmd_diagnose(args):
    dirs = [Path(d) for d in args.fit]
    if len(dirs) < 2:
        raise ConfigError("diagnose needs at least two fit directories")
    runs = []
    for d in dirs:
        p = d / "monitor.csv"
        if not p.exists():
            raise DataError(f"{d}: no monitor.csv")
        tr = read_trace_csv(p)
        chains = {c for v in tr.values() for c in v}
        if len(chains) != 1:
            raise ConfigError(f"{d} holds {len(chains)} chains; pass the chain_* subdirectories instead")
        runs.append({label: next(iter(v.values())) for label, v in tr.items()})
    if args.labels:
        wanted = _csv_list(",".join(args.labels))
        runs = [{k: v for k, v in r.items() if k in wanted} for r in runs]
    table = psrf_table(runs)
    if not table:
        raise DataError("no common monitored labels across the fits")
    lines = ["label,psrf,degenerate,pass"]
    worst = 0.0
    for label, res in table.items():
        ok = res.psrf <= PSRF_PASS
        worst = max(worst, res.psrf)
        lines.append(f"{label},{res.psrf:.5f},{int(res.degenerate)},{int(ok)}")
    acf_lines = ["label,run," + ",".join(f"lag{k}" for k in range(args.max_lag + 1))]
    for label in table:
        for r, run in enumerate(runs):
            lag = min(args.max_lag, len(run[label]) - 1)
            acf, _ = autocorrelation(run[label], lag)
            acf_lines.append(f"{label},{r}," + ",".join(f"{v:.4f}" for v in acf))
    diff_lines = ["map,max_abs_diff,site,run_a,run_b"]
    for f in sorted(dirs[0].glob("coef_mean_*.blm")) + sorted(dirs[0].glob("prob_*.blm")):
        maps = []
        for d in dirs:
            q = d / f.name
            if not q.exists():
                break
            maps.append(io.read_raster(q).reshape(-1).astype(np.float64))
        else:
            v, j, (a, b) = max_pairwise_difference(maps)
            diff_lines.append(f"{f.stem},{v:.6g},{j},{a},{b}")
    text = "\n".join(lines + [""] + diff_lines)
    print(text)
    print(f"max PSRF {worst:.4f} ({'pass' if worst <= PSRF_PASS else 'fail'} at {PSRF_PASS})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "psrf.csv").write_text("\n".join(lines) + "\n")
        (out / "acf.csv").write_text("\n".join(acf_lines) + "\n")
        (out / "map_differences.csv").write_text("\n".join(diff_lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# firth

def cmd_firth(args):
    ds = io.load_dataset(args.data, center=_csv_list(args.center) if args.center is not None else None)
    if ds.n_subjects == 0:
        raise DataError("empty dataset")
    maps = firth_map(ds, min_lesions=args.min_lesions)
    if not maps.fitted.any():
        raise DataError("no voxel passes the lesion-count filter")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lat = ds.lattice

    def raster(name, values):
        io.write_raster(out / f"{name}.blm", lat.rasterize(np.asarray(values, np.float32)), io.DTYPE_F32)

    props = {}
    for p, name in enumerate(ds.design.names):
        z = maps.z[:, p]
        raster(f"firth_coef_{_safe(name)}", maps.coefficients[:, p])
        raster(f"firth_se_{_safe(name)}", maps.standard_errors[:, p])
        raster(f"firth_z_{_safe(name)}", z)
        raster(f"firth_zthr_{_safe(name)}", np.where(np.abs(z) >= args.threshold, z, 0.0))
        props[f"coef:{name}"] = _region_proportions(z, lat, args.threshold)
    prob_maps = {}
    for r, prof in enumerate(ds.profiles):
        prob_maps[prof.name] = maps.probabilities[r]
        raster(f"firth_prob_{_safe(prof.name)}", maps.probabilities[r])
    raster("firth_fitted", maps.fitted.astype(np.float32))
    mse = _map_mse(args.data, ds, prob_maps)
    info = {
        "coefficients": ds.design.names,
        "min_lesions": args.min_lesions,
        "fitted_voxels": int(maps.fitted.sum()),
        "nonconverged_voxels": int((maps.fitted & ~maps.converged).sum()),
        "threshold": args.threshold,
        "suprathreshold": props,
        "mse": mse,
    }
    io.write_json(out / "firth_summary.json", info)
    print(f"firth maps written to {out}: {info['fitted_voxels']} voxels fitted")
    if mse is not None:
        print(f"interior MSE vs truth: {mse:.4e}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(args):
    ds = io.load_dataset(args.data)
    fit = Path(args.fit)
    prefix = "firth_prob_" if args.firth else "prob_"
    maps = {}
    for prof in ds.profiles:
        p = fit / f"{prefix}{_safe(prof.name)}.blm"
        if p.exists():
            maps[prof.name] = ds.lattice.gather(io.read_raster(p).astype(np.float64))
    if not maps:
        raise DataError(f"no probability maps in {fit}")
    mse = _map_mse(args.data, ds, maps)
    if mse is None:
        raise DataError(f"{args.data} has no ground truth ({io.TRUTH})")
    print(f"interior MSE vs truth: {mse:.4e}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svcprobit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic quadrant cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--per-cell", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=100)
    p.add_argument("--lambda0-left", type=float, default=10.0)
    p.add_argument("--lambda0-right", type=float, default=8.0)
    p.add_argument("--gender-effect", type=float, default=4.0)
    p.add_argument("--group-effect", type=float, default=4.0)
    p.add_argument("--margin", type=int, default=2)
    p.add_argument("--oracle-per-cell", type=int, default=10_000,
                   help="subjects per cell for the ground-truth rates (0: coverage formula)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=12_000)
    p.add_argument("--burnin", type=int, default=2_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--nu", type=float, default=0.0, help="Wishart prior degrees of freedom")
    p.add_argument("--center", help="comma-separated covariates to mean-center (default: non-binary)")
    p.add_argument("--monitor-sites", help="file of site indices or x y [z] coordinates")
    p.add_argument("--save-likelihood-trace", action="store_true")
    p.add_argument("--likelihood-thin", type=int, default=10)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--phase-order", choices=["AB", "BA"], default="AB")
    p.add_argument("--parameterization", choices=["joint", "separate"], default="joint")
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--progress-every", type=int, default=1000)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="leave-one-out subtype classification")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--fit")
    p.add_argument("--out")
    p.add_argument("--method", choices=["bayes", "nbc", "firth"], default="bayes")
    p.add_argument("--prior", choices=["uniform", "empirical"], default="uniform")
    p.add_argument("--min-lesions", type=int, default=2)
    p.add_argument("--center")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="convergence diagnostics across runs")
    p.add_argument("--fit", nargs="+", required=True)
    p.add_argument("--labels", nargs="*")
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("firth", help="mass-univariate Firth logistic maps")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-lesions", type=int, default=0)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--center")
    p.set_defaults(func=cmd_firth)

    p = sub.add_parser("evaluate", help="interior MSE of probability maps against simulation truth")
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--firth", action="store_true", help="evaluate firth_prob_* maps")
    p.set_defaults(func=cmd_evaluate)
    return ap


def parse_args(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        sub = ap._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        values = read_config_file(args.config)
        unknown = sorted(set(values) - set(actions))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for k, v in values.items():
            if isinstance(actions[k], argparse._StoreTrueAction):
                values[k] = v.lower() in ("1", "true", "yes", "on")
        sub.set_defaults(**values)
        args = ap.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except SvcProbitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
