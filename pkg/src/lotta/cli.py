"""Command-line front end: fit, diagnose, sensitivity, simulate, baseline.

Every run echoes its resolved configuration and writes a manifest with a
content hash per emitted file, so reruns with the same config and seed produce
hash-identical artifacts.  All outputs are plot-ready CSV/JSON; rendering is
left to external tools.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, analysis, baselines, data, mcmc, simulate
from .treatment import CutoffPrior, TreatmentPriorSpec


class CliError(SystemExit):
    def __init__(self, message):
        super().__init__(f"error: {message}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _manifest(out_dir, exclude=("report.json",)):
    entries = {}
    for name in sorted(os.listdir(out_dir)):
        path = os.path.join(out_dir, name)
        if os.path.isfile(path) and name not in exclude:
            entries[name] = _sha256(path)
    return entries


def parse_cutoff_prior(spec_str):
    """Parse a cutoff-prior spec string (values in raw score units).

    Forms: uniform:lo:hi | beta:lo:hi:alpha:beta | pointmass:v |
    mixture:v:mass:lo:hi | discrete:p1=w1,p2=w2,...
    """
    parts = spec_str.split(":")
    kind = parts[0]
    try:
        if kind == "uniform" and len(parts) == 3:
            return {"kind": "uniform", "lo": float(parts[1]), "hi": float(parts[2])}
        if kind == "beta" and len(parts) == 5:
            return {"kind": "beta", "lo": float(parts[1]), "hi": float(parts[2]),
                    "alpha": float(parts[3]), "beta": float(parts[4])}
        if kind == "pointmass" and len(parts) == 2:
            return {"kind": "pointmass", "value": float(parts[1])}
        if kind == "mixture" and len(parts) == 5:
            return {"kind": "mixture", "value": float(parts[1]), "mass": float(parts[2]),
                    "lo": float(parts[3]), "hi": float(parts[4])}
        if kind == "discrete" and len(parts) == 2:
            points, weights = [], []
            for item in parts[1].split(","):
                p, w = item.split("=")
                points.append(float(p))
                weights.append(float(w))
            return {"kind": "discrete", "points": points, "weights": weights}
    except ValueError as exc:
        raise CliError(f"bad cutoff prior {spec_str!r}: {exc}")
    raise CliError(f"bad cutoff prior spec {spec_str!r}")


def build_cutoff_prior(prior_spec, dataset, score_scale):
    """Materialize a raw-unit prior spec on the normalized score scale.

    On grid-valued scores, continuous specs are discretized onto the grid
    points inside their interval (uniform weights, or beta-density weights).
    """
    to_norm = score_scale.to_normalized
    kind = prior_spec["kind"]
    if kind == "pointmass":
        return CutoffPrior.point_mass(float(to_norm(prior_spec["value"])))
    if kind == "discrete":
        return CutoffPrior.discrete(to_norm(np.asarray(prior_spec["points"])),
                                    prior_spec["weights"])
    if kind == "mixture":
        lo, hi = to_norm(prior_spec["lo"]), to_norm(prior_spec["hi"])
        pts = _grid_points(dataset, lo, hi, prior_spec)
        return CutoffPrior.point_mass_mixture(float(to_norm(prior_spec["value"])),
                                              prior_spec["mass"], pts)
    lo, hi = float(to_norm(prior_spec["lo"])), float(to_norm(prior_spec["hi"]))
    if dataset.score_kind.kind == "discrete-grid":
        pts = _grid_points(dataset, lo, hi, prior_spec)
        if kind == "uniform":
            return CutoffPrior.discrete(pts)
        u = (pts - lo) / (hi - lo)
        u = np.clip(u, 1e-9, 1 - 1e-9)
        w = u ** (prior_spec["alpha"] - 1) * (1 - u) ** (prior_spec["beta"] - 1)
        return CutoffPrior.discrete(pts, w / w.sum())
    if kind == "uniform":
        return CutoffPrior.uniform(lo, hi)
    return CutoffPrior.scaled_beta(lo, hi, prior_spec["alpha"], prior_spec["beta"])


def _grid_points(dataset, lo, hi, prior_spec):
    pts = np.unique(dataset.scores)
    pts = pts[(pts >= lo - 1e-12) & (pts <= hi + 1e-12)]
    if pts.size == 0:
        raise CliError("no score grid points inside the cutoff prior interval")
    return pts


def _histogram_rows(samples, discrete):
    if discrete:
        values, counts = np.unique(samples, return_counts=True)
        return [(float(v), int(k)) for v, k in zip(values, counts)]
    counts, edges = np.histogram(samples, bins=50)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return [(float(v), int(k)) for v, k in zip(centers, counts)]


def _write_histogram(path, samples, discrete):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "count"])
        for v, k in _histogram_rows(samples, discrete):
            writer.writerow([repr(v), k])


def _dataset_to_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score", "treatment", "outcome"])
        for s, t, y in zip(dataset.scores, dataset.treatments, dataset.outcomes):
            writer.writerow([repr(float(s)), int(t), repr(float(y))])


# ---------------------------------------------------------------- subcommands


def _add_sampler_args(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--burnin", type=int, default=10000)
    p.add_argument("--adapt", type=int, default=1000)
    p.add_argument("--draws", type=int, default=25000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--level", type=float, default=0.95)


def _add_fit_args(p):
    p.add_argument("--input", required=True, help="CSV with header score,treatment,outcome")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--mode", choices=("joint", "cut", "treatment-only"), default="joint")
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--cutoff-prior", dest="cutoff_prior",
                   help="e.g. uniform:300:400 (raw score units)")
    p.add_argument("--trim", help="LO:HI in raw score units")
    p.add_argument("--outcome-kind", dest="outcome_kind", default="auto",
                   help="auto | continuous | binary | bounded:LO:HI")
    p.add_argument("--flip-treatment", dest="flip_treatment", action="store_true",
                   help="recode T to 1-T (decreasing take-up trend)")
    _add_sampler_args(p)


def _resolve_config(args, parser_dests):
    """Merge an optional JSON config under the CLI flags; reject unknown keys."""
    settings = {k: getattr(args, k) for k in parser_dests if hasattr(args, k)}
    path = settings.pop("config", None)
    argv = getattr(args, "_argv", sys.argv[1:])
    if path:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(parser_dests))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in loaded.items():
            if key == "config":
                raise CliError("config files cannot nest another config")
            # explicit CLI flags win over the file
            if _flag_given(key, argv):
                continue
            settings[key] = value
    return settings


def _flag_given(dest, argv):
    flag = "--" + dest.replace("_", "-")
    return any(a == flag or a.startswith(flag + "=") for a in argv)


FIT_DESTS = ("input", "out", "config", "mode", "eta", "cutoff_prior", "trim",
             "outcome_kind", "flip_treatment", "chains", "burnin", "adapt",
             "draws", "seed", "workers", "level")


def _load_fit_inputs(cfg):
    raw_scores, treatments, raw_outcomes = data.read_csv(cfg["input"])
    if cfg["flip_treatment"]:
        treatments = 1.0 - treatments
    ok = cfg["outcome_kind"]
    if ok == "auto":
        kind = data.OutcomeKind("binary" if np.isin(raw_outcomes, (0.0, 1.0)).all()
                                else "continuous")
    elif ok.startswith("bounded:"):
        _, lo, hi = ok.split(":")
        kind = data.OutcomeKind("bounded", float(lo), float(hi))
    else:
        kind = data.OutcomeKind(ok)
    dataset, score_scale, outcome_scale = data.normalize(raw_scores, raw_outcomes,
                                                         treatments, kind)
    if cfg["trim"]:
        lo, hi = (float(v) for v in cfg["trim"].split(":"))
        dataset = data.trim(dataset, float(score_scale.to_normalized(lo)),
                            float(score_scale.to_normalized(hi)))
    return dataset, score_scale, outcome_scale


def _fit_priors_from_cfg(cfg, dataset, score_scale):
    if cfg["cutoff_prior"]:
        prior_spec = parse_cutoff_prior(cfg["cutoff_prior"])
    else:
        lo, hi = dataset.support
        span = hi - lo
        prior_spec = {"kind": "uniform",
                      "lo": float(score_scale.to_raw(lo + 0.1 * span)),
                      "hi": float(score_scale.to_raw(hi - 0.1 * span))}
    cp = build_cutoff_prior(prior_spec, dataset, score_scale)
    sb = data.compute_support_bounds(dataset)
    return TreatmentPriorSpec(cutoff_prior=cp, support_bounds=sb, eta=cfg["eta"])


def _sampler_config(cfg, mode):
    return mcmc.SamplerConfig(chains=cfg["chains"], burn_in=cfg["burnin"],
                              adapt=cfg["adapt"], draws=cfg["draws"],
                              seed=cfg["seed"], mode=mode, workers=cfg["workers"])


def cmd_fit(args):
    cfg = _resolve_config(args, FIT_DESTS)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    dataset, score_scale, outcome_scale = _load_fit_inputs(cfg)
    priors = _fit_priors_from_cfg(cfg, dataset, score_scale)

    t_draws, t_diag = mcmc.run(dataset, priors, _sampler_config(cfg, "treatment-only"))
    fits = {"treatment": (t_draws, t_diag)}
    if cfg["mode"] != "treatment-only":
        m_draws, m_diag = mcmc.run(dataset, priors, _sampler_config(cfg, cfg["mode"]))
        fits["main"] = (m_draws, m_diag)

    _dataset_to_csv(dataset, os.path.join(out_dir, "dataset.csv"))
    estimates = {}
    diagnostics = {}
    for label, (draws, diag) in fits.items():
        draws.to_csv(os.path.join(out_dir, f"draws_{label}.csv"))
        report = analysis.summarize(draws, cfg["level"], score_scale, outcome_scale)
        estimates[label] = report.to_dict()
        diagnostics[label] = {"rhat": diag.rhat, "ess": diag.ess,
                              "acceptance": diag.acceptance}
        c_raw = score_scale.to_raw(draws.column("c"))
        _write_histogram(os.path.join(out_dir, f"hist_c_{label}.csv"),
                         c_raw, draws.c_discrete)
        _write_histogram(os.path.join(out_dir, f"hist_j_{label}.csv"),
                         draws.column("j"), False)
    _write_json(os.path.join(out_dir, "estimates.json"), estimates)
    report = {
        "version": __version__,
        "command": "fit",
        "config": cfg,
        "treatment_flipped": bool(cfg["flip_treatment"]),
        "score_scale": {"range": score_scale.range, "offset": score_scale.offset},
        "outcome_scale": {"scale": outcome_scale.scale, "offset": outcome_scale.offset},
        "outcome_kind": dataset.outcome_kind.kind,
        "estimates": estimates,
        "diagnostics": diagnostics,
        "manifest": _manifest(out_dir),
    }
    _write_json(os.path.join(out_dir, "report.json"), report)
    print(f"fit written to {out_dir}")
    return 0


def _read_draws_csv(path):
    import pandas as pd

    frame = pd.read_csv(path)
    cols = tuple(c for c in frame.columns if c not in ("chain", "iteration"))
    chains = [frame[frame.chain == ci][list(cols)].to_numpy()
              for ci in sorted(frame.chain.unique())]
    return cols, chains, frame


def cmd_diagnose(args):
    fit_dir = args.fit_dir
    out_dir = args.out or fit_dir
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(fit_dir, "report.json")
    if not os.path.exists(report_path):
        raise CliError(f"no fit report found in {fit_dir}")
    with open(report_path) as fh:
        fit_report = json.load(fh)
    label = "main" if os.path.exists(os.path.join(fit_dir, "draws_main.csv")) else "treatment"
    cols, chains, _ = _read_draws_csv(os.path.join(fit_dir, f"draws_{label}.csv"))
    score_scale = data.ScoreScale(**fit_report["score_scale"])
    outcome_scale = data.OutcomeScale(**fit_report["outcome_scale"])
    okind = fit_report["outcome_kind"]
    draws = mcmc.PosteriorDraws(columns=cols, chains=chains, acceptance={},
                                mode=fit_report["config"]["mode"], outcome_kind=okind,
                                c_discrete=_looks_discrete(chains, cols))

    scores, treatments, outcomes = data.read_csv(os.path.join(fit_dir, "dataset.csv"))
    dataset = data.Dataset(scores=scores, treatments=treatments, outcomes=outcomes,
                           score_kind=data.detect_score_kind(scores),
                           outcome_kind=data.OutcomeKind(okind) if okind != "bounded"
                           else data.OutcomeKind("continuous"),
                           support=(float(scores.min()), float(scores.max())))
    c_map = analysis.map_estimate(draws.column("c"),
                                  "discrete" if draws.c_discrete else "continuous")
    t_series, y_series = data.bin_series(dataset, c_map, args.bins)
    data.write_binned_csv(os.path.join(out_dir, "binned.csv"), t_series, y_series)

    grid = np.linspace(dataset.support[0], dataset.support[1], args.grid_points)
    for which in ("treatment", "outcome"):
        band = analysis.function_band(draws, grid, which)
        frame = band.to_frame()
        frame["grid"] = score_scale.to_raw(frame["grid"])
        if which == "outcome" and okind == "continuous":
            for col in ("median", "lo", "hi"):
                frame[col] = outcome_scale.to_raw(frame[col])
        frame.to_csv(os.path.join(out_dir, f"band_{which}.csv"), index=False)

    flags = {}
    if "tau" in draws.columns:
        jt = analysis.joint_c_tau(draws)
        table = jt.to_frame().copy()
        table["c"] = score_scale.to_raw(table["c"])
        for col in ("q1", "median", "q3", "whisker_lo", "whisker_hi"):
            table[col] = table[col] * outcome_scale.scale
        table.to_csv(os.path.join(out_dir, "joint_c_tau.csv"), index=False)
        modes = analysis.kde_mode_count(draws.column("tau"))
        flags["tau_modes"] = modes
        flags["tau_multimodal"] = bool(modes > 1)
    eta = fit_report["config"]["eta"]
    flags["j_lower_bound_pileup"] = mcmc.lower_bound_pileup(draws.column("j"), eta)
    _write_json(os.path.join(out_dir, "flags.json"), flags)
    print(f"diagnostics written to {out_dir}")
    return 0


def _looks_discrete(chains, cols):
    idx = cols.index("c")
    c = np.concatenate([ch[:, idx] for ch in chains])
    return np.unique(c).size <= max(2, c.size // 100)


def cmd_sensitivity(args):
    cfg = _resolve_config(args, FIT_DESTS + ("etas", "cutoff_priors"))
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    etas = [float(v) for v in cfg["etas"].split(",")] if cfg["etas"] else [cfg["eta"]]
    prior_specs = (cfg["cutoff_priors"].split(";") if cfg["cutoff_priors"]
                   else [cfg["cutoff_prior"]])
    dataset, score_scale, outcome_scale = _load_fit_inputs(cfg)
    sb = data.compute_support_bounds(dataset)
    rows = []
    overlay = []
    for eta in etas:
        for prior_str in prior_specs:
            label = f"eta={eta}|prior={prior_str or 'default'}"
            sub_cfg = dict(cfg)
            sub_cfg["eta"] = eta
            sub_cfg["cutoff_prior"] = prior_str
            priors = _fit_priors_from_cfg(sub_cfg, dataset, score_scale)
            mode = cfg["mode"] if cfg["mode"] != "treatment-only" else "joint"
            draws, _ = mcmc.run(dataset, priors, _sampler_config(sub_cfg, mode))
            report = analysis.summarize(draws, cfg["level"], score_scale, outcome_scale)
            for name, summ in report.estimands.items():
                rows.append({"variant": label, "eta": eta, "prior": prior_str or "default",
                             "estimand": name, "map": summ.map,
                             "hdi_lo": summ.hdi_lo, "hdi_hi": summ.hdi_hi})
            c_raw = score_scale.to_raw(draws.column("c"))
            for v, k in _histogram_rows(c_raw, draws.c_discrete):
                overlay.append({"variant": label, "value": v, "count": k})
    import pandas as pd

    pd.DataFrame(rows).to_csv(os.path.join(out_dir, "sensitivity.csv"), index=False)
    pd.DataFrame(overlay).to_csv(os.path.join(out_dir, "overlay_hist_c.csv"), index=False)
    report = {"version": __version__, "command": "sensitivity", "config": cfg,
              "variants": sorted({r['variant'] for r in rows}),
              "manifest": _manifest(out_dir)}
    _write_json(os.path.join(out_dir, "report.json"), report)
    print(f"sensitivity analysis written to {out_dir}")
    return 0


SIM_DESTS = ("scenario", "replications", "estimators", "out", "config", "n",
             "chains", "burnin", "adapt", "draws", "seed", "workers", "level")


def cmd_simulate(args):
    cfg = _resolve_config(args, SIM_DESTS)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    spec = simulate.ScenarioSpec.from_name(cfg["scenario"],
                                           replications=cfg["replications"],
                                           seed=cfg["seed"], n=cfg["n"])
    estimators = [e.strip() for e in cfg["estimators"].split(",")]
    sampler = mcmc.SamplerConfig(chains=cfg["chains"], burn_in=cfg["burnin"],
                                 adapt=cfg["adapt"], draws=cfg["draws"])
    table = simulate.run_scenario(spec, estimators, sampler_config=sampler,
                                  workers=cfg["workers"], out_dir=out_dir)
    report = {"version": __version__, "command": "simulate", "config": cfg,
              "truth": {"tau": table.truth.tau, "jump": table.truth.jump,
                        "cutoff": table.truth.cutoff},
              "manifest": _manifest(out_dir)}
    _write_json(os.path.join(out_dir, "report.json"), report)
    print(table.pivot().to_string())
    print(f"simulation written to {out_dir}")
    return 0


def cmd_baseline(args):
    raw_scores, treatments, raw_outcomes = data.read_csv(args.input)
    kind = data.OutcomeKind("binary" if np.isin(raw_outcomes, (0.0, 1.0)).all()
                            else "continuous")
    dataset = data.Dataset(scores=raw_scores, treatments=treatments, outcomes=raw_outcomes,
                           score_kind=data.detect_score_kind(raw_scores),
                           outcome_kind=kind,
                           support=(float(raw_scores.min()), float(raw_scores.max())))
    config = baselines.LLRConfig(bandwidth=args.bandwidth, level=args.level)
    blocks = {}
    for cutoff in args.cutoff:
        est = baselines.llr_fit(dataset, cutoff, config,
                                sharp=True if args.sharp else None)
        blocks[repr(float(cutoff))] = est.to_dict()
    report = {"version": __version__, "command": "baseline",
              "config": {"input": args.input, "cutoffs": args.cutoff,
                         "bandwidth": args.bandwidth, "sharp": args.sharp,
                         "level": args.level},
              "results": blocks}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "baseline.json"), report)
        print(f"baseline written to {args.out}")
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lotta",
        description="Bayesian regression discontinuity analysis with an unknown cutoff")
    parser.add_argument("--version", action="version", version=f"lotta {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the treatment-only and joint/cut models")
    _add_fit_args(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_diag = sub.add_parser("diagnose", help="binned data, function bands, joint c-tau view")
    p_diag.add_argument("--fit-dir", dest="fit_dir", required=True)
    p_diag.add_argument("--out")
    p_diag.add_argument("--grid-points", dest="grid_points", type=int, default=201)
    p_diag.add_argument("--bins", type=int, default=25)
    p_diag.set_defaults(func=cmd_diagnose)

    p_sens = sub.add_parser("sensitivity", help="re-fit over eta and cutoff-prior grids")
    _add_fit_args(p_sens)
    p_sens.add_argument("--etas", help="comma-separated eta values")
    p_sens.add_argument("--cutoff-priors", dest="cutoff_priors",
                        help="semicolon-separated prior specs")
    p_sens.set_defaults(func=cmd_sensitivity)

    p_sim = sub.add_parser("simulate", help="replicated scenario study")
    p_sim.add_argument("--scenario", required=True,
                       help="1A..1C, 2A..2C, 3A..3C, Lee, Ludwig")
    p_sim.add_argument("--replications", type=int, default=50)
    p_sim.add_argument("--estimators", default="lotta-joint,llr-known-cutoff")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--config")
    p_sim.add_argument("--n", type=int, default=500)
    _add_sampler_args(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_base = sub.add_parser("baseline", help="local linear regression at given cutoffs")
    p_base.add_argument("--input", required=True)
    p_base.add_argument("--cutoff", type=float, action="append", required=True)
    p_base.add_argument("--bandwidth", type=float)
    p_base.add_argument("--sharp", action="store_true")
    p_base.add_argument("--level", type=float, default=0.95)
    p_base.add_argument("--out")
    p_base.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
