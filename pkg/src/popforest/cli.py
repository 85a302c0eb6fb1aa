"""Experiment runner: classification, simulation campaigns, dichotomy checks,
the scaling probe, and plot-data emission.

Exit codes: 0 on success (and on dichotomy agreement), 2 when a dichotomy run
contradicts the classifier, 1 on any failure.  All artifacts are a pure
function of (config, seed): JSON is written with sorted keys, CSV floats with
a fixed format, and no timestamps are recorded.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import discrete_sim, diffusion_sim
from .config import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    model_from_dict,
    parse_model_spec,
)
from .criteria import Target, Verdict, classify, diffusion_drifts
from .errors import ConfigError, PopforestError
from .interaction import InteractionModel, power_log, rate_sums
from .criteria import bd_rates
from .stats import TrendVerdict, replica_rng, summarize, trend

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONTRADICTION = 2


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(float(v), ".12g")
    return str(v)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _sde_config(cfg: ExperimentConfig, args) -> diffusion_sim.SdeConfig:
    sde = dict(cfg.sde)
    if getattr(args, "dt", None) is not None:
        sde["dt"] = args.dt
    if getattr(args, "eps_abs", None) is not None:
        sde["eps_abs"] = args.eps_abs
    if getattr(args, "t_max", None) is not None:
        sde["t_max"] = args.t_max
    sde.pop("auto_dt", None)
    return diffusion_sim.SdeConfig(**{k: float(v) for k, v in sde.items()})


def _load_cfg(args, *, need_model: bool = True) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        base = {} if args.seed is None else {"seed": args.seed}
        cfg = config_from_dict(base)  # raises unless a seed was given
    if getattr(args, "model", None):
        cfg.model = parse_model_spec(args.model)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "lam", None) is not None:
        cfg.lam = args.lam
    if getattr(args, "mu", None) is not None:
        cfg.mu = args.mu
    if getattr(args, "replicas", None) is not None:
        cfg.replicas = args.replicas
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
    if need_model and not cfg.model:
        raise ConfigError("a model is required (config [model] or --model)")
    return cfg


# --------------------------------------------------------------------------
# classify
# --------------------------------------------------------------------------

def _run_classify(cfg: ExperimentConfig, out_dir: Path, trace_csv: bool) -> int:
    if cfg.grid:
        alphas = [float(a) for a in cfg.grid.get("alpha", [])]
        gammas = [float(g) for g in cfg.grid.get("gamma", [])]
        if not alphas or not gammas:
            raise ConfigError("[grid] needs non-empty 'alpha' and 'gamma' lists")
        rows = []
        cells = {}
        for a in alphas:
            for g in gammas:
                rep = classify(power_log(a, g), cfg.lam, cfg.mu)
                rows.append((a, g, rep.height_verdict.value, rep.mass_verdict.value))
                cells[f"alpha={_fmt(a)},gamma={_fmt(g)}"] = {
                    "height": rep.height_verdict.value,
                    "mass": rep.mass_verdict.value,
                }
        _write_csv(out_dir / "verdict_table.csv",
                   ["alpha", "gamma", "height_verdict", "mass_verdict"], rows)
        _write_json(out_dir / "classify.json",
                    {"grid": cells, "lam": cfg.lam, "mu": cfg.mu})
        return EXIT_OK
    model = cfg.build_model()
    rep = classify(model, cfg.lam, cfg.mu)
    _write_json(out_dir / "classify.json", rep.to_dict())
    if trace_csv:
        rows = []
        for target, report in (("height", rep.height_integral),
                               ("mass", rep.mass_integral)):
            for cut, part in zip(report.numeric.cutoffs, report.numeric.partials):
                rows.append((target, cut, part))
        _write_csv(out_dir / "integral_trace.csv",
                   ["target", "cutoff", "partial_integral"], rows)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate-discrete
# --------------------------------------------------------------------------

def _discrete_ladder_samples(model: InteractionModel, lam, mu, m_list, replicas,
                             seed, t_max):
    """Coupled per-prefix samples of (H, L); censored H recorded at t_max."""
    n_m = len(m_list)
    big_h = np.empty((replicas, n_m))
    big_l = np.empty((replicas, n_m))
    cens = np.zeros((replicas, n_m), dtype=bool)
    events = np.zeros(replicas, dtype=np.int64)
    m_max = max(m_list)
    for i in range(replicas):
        trajes = discrete_sim.simulate_planar(
            m_max, model, lam, mu, replica_rng(seed, i), t_max, m_list,
            record=False)
        for j, tr in enumerate(trajes):
            cens[i, j] = not tr.absorbed
            big_h[i, j] = t_max if not tr.absorbed else tr.H
            big_l[i, j] = tr.L
        events[i] = trajes[0].events
    return big_h, big_l, cens, events


def _run_simulate_discrete(cfg: ExperimentConfig, out_dir: Path, args) -> int:
    model = cfg.build_model()
    if getattr(args, "m", None):
        m_list = [args.m]
    elif getattr(args, "m_list", None):
        m_list = [int(v) for v in args.m_list.split(",")]
    else:
        m_list = cfg.m_list
    t_max = args.t_max if getattr(args, "t_max", None) is not None \
        else cfg.discrete_t_max
    rows = []
    summaries = {}
    if len(m_list) == 1:
        m = m_list[0]
        bd = bd_rates(rate_sums(model, max(2 * m, 64)), cfg.lam, cfg.mu)
        h, l, cens, ev = discrete_sim.batch_extinction(
            bd, m, cfg.replicas, replica_rng(cfg.seed, 0), t_max=t_max)
        hrec = np.where(cens, t_max, h)
        for i in range(cfg.replicas):
            rows.append((i, m, None if cens[i] else h[i], cens[i], l[i], ev[i]))
        summaries[str(m)] = summarize(hrec, cens).to_dict()
    else:
        big_h, big_l, cens, events = _discrete_ladder_samples(
            model, cfg.lam, cfg.mu, m_list, cfg.replicas, cfg.seed, t_max)
        for i in range(cfg.replicas):
            for j, m in enumerate(m_list):
                rows.append((i, m, None if cens[i, j] else big_h[i, j],
                             cens[i, j], big_l[i, j], events[i]))
        for j, m in enumerate(m_list):
            summaries[str(m)] = summarize(big_h[:, j], cens[:, j]).to_dict()
    out_csv = Path(args.out) if getattr(args, "out", None) \
        else out_dir / "discrete_samples.csv"
    _write_csv(out_csv, ["replica", "m", "H", "H_censored", "L", "events"], rows)
    _write_json(out_dir / "discrete_summary.json",
                {"per_m": summaries, "lam": cfg.lam, "mu": cfg.mu,
                 "t_max": t_max, "seed": cfg.seed})
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate-diffusion
# --------------------------------------------------------------------------

def _diffusion_ladder_samples(model, target: Target, x_list, replicas, seed,
                              sde_cfg, auto_dt: bool):
    q_height, q_mass = diffusion_drifts(model)
    if target is Target.HEIGHT:
        q = q_height
        y0s = [math.sqrt(x) for x in x_list]
    else:
        q = q_mass
        y0s = [x / 2.0 for x in x_list]
    dt = diffusion_sim.stable_dt(q, max(y0s), sde_cfg.dt,
                                 eps_abs=sde_cfg.eps_abs) if auto_dt else sde_cfg.dt
    cfg = diffusion_sim.SdeConfig(dt=dt, eps_abs=sde_cfg.eps_abs,
                                  t_max=sde_cfg.t_max)
    t_mat, cens = diffusion_sim.batch_coupled_hit_times(
        q, y0s, cfg, replicas, replica_rng(seed, 0))
    return t_mat, cens, cfg


def _run_simulate_diffusion(cfg: ExperimentConfig, out_dir: Path, args) -> int:
    model = cfg.build_model()
    if getattr(args, "x", None):
        x_list = [args.x]
    elif getattr(args, "x_list", None):
        x_list = [float(v) for v in args.x_list.split(",")]
    else:
        x_list = cfg.x_list
    target_name = (getattr(args, "target", None) or
                   cfg.sde.get("target") or "height")
    sde_cfg = _sde_config(cfg, args)
    auto_dt = bool(cfg.sde.get("auto_dt", False)) and \
        getattr(args, "dt", None) is None
    rows = []
    summaries = {}
    if target_name == "z":
        for x in x_list:
            t_arr, s_arr, cens = diffusion_sim.batch_z(
                x, model, sde_cfg, cfg.replicas, replica_rng(cfg.seed, 0))
            trec = np.where(cens, sde_cfg.t_max, t_arr)
            for i in range(cfg.replicas):
                rows.append((i, x, None if cens[i] else t_arr[i],
                             s_arr[i], cens[i]))
            summaries[_fmt(x)] = summarize(trec, cens).to_dict()
    else:
        target = Target.HEIGHT if target_name == "height" else Target.MASS
        t_mat, cens, used_cfg = _diffusion_ladder_samples(
            model, target, x_list, cfg.replicas, cfg.seed, sde_cfg, auto_dt)
        for j, x in enumerate(x_list):
            trec = np.where(cens[:, j], used_cfg.t_max, t_mat[:, j])
            for i in range(cfg.replicas):
                s_val = t_mat[i, j] if (target is Target.MASS
                                        and not cens[i, j]) else None
                rows.append((i, x, None if cens[i, j] else t_mat[i, j],
                             s_val, cens[i, j]))
            summaries[_fmt(x)] = summarize(trec, cens[:, j]).to_dict()
    out_csv = Path(args.out) if getattr(args, "out", None) \
        else out_dir / "diffusion_samples.csv"
    rows.sort(key=lambda r: (r[1], r[0]))
    _write_csv(out_csv, ["replica", "x", "T", "S", "censored"], rows)
    _write_json(out_dir / "diffusion_summary.json",
                {"per_x": summaries, "target": target_name, "seed": cfg.seed})
    return EXIT_OK


# --------------------------------------------------------------------------
# dichotomy
# --------------------------------------------------------------------------

def _dichotomy_status(verdict: Verdict, trend_verdict: TrendVerdict) -> str:
    if verdict is Verdict.INCONCLUSIVE:
        return "UNTESTED"
    if trend_verdict is TrendVerdict.INCONCLUSIVE:
        return "INCONCLUSIVE"
    agree = (verdict is Verdict.FINITE_EXP_MOMENT
             and trend_verdict is TrendVerdict.PLATEAU) or \
            (verdict is Verdict.DIVERGES
             and trend_verdict is TrendVerdict.GROWING)
    return "AGREE" if agree else "CONTRADICTION"


def _run_dichotomy(cfg: ExperimentConfig, out_dir: Path, args) -> int:
    model = cfg.build_model()
    report = classify(model, cfg.lam, cfg.mu)
    sde_cfg = _sde_config(cfg, args)
    auto_dt = bool(cfg.sde.get("auto_dt", True))
    kinds = ["discrete", "diffusion"] if cfg.dichotomy_kind == "both" \
        else [cfg.dichotomy_kind]
    checks = {}
    contradiction = False

    discrete_cache = None
    for target_name in cfg.dichotomy_targets:
        verdict = report.height_verdict if target_name == "height" \
            else report.mass_verdict
        target = Target.HEIGHT if target_name == "height" else Target.MASS
        for kind in kinds:
            if kind == "discrete":
                if discrete_cache is None:
                    discrete_cache = _discrete_ladder_samples(
                        model, cfg.lam, cfg.mu, cfg.m_list, cfg.replicas,
                        cfg.seed, cfg.discrete_t_max)
                big_h, big_l, cens, _events = discrete_cache
                samples = big_h if target_name == "height" else big_l
                medians = np.median(samples, axis=0)
                levels = cfg.m_list
                cens_frac = float(cens.mean())
            else:
                t_mat, cens, used = _diffusion_ladder_samples(
                    model, target, cfg.x_list, cfg.replicas, cfg.seed,
                    sde_cfg, auto_dt)
                trec = np.where(cens, used.t_max, t_mat)
                medians = np.median(trec, axis=0)
                levels = cfg.x_list
                cens_frac = float(cens.mean())
            tr = trend(levels, medians, plateau_threshold=cfg.trend_plateau,
                       growing_threshold=cfg.trend_growing)
            status = _dichotomy_status(verdict, tr.verdict)
            if status == "CONTRADICTION":
                contradiction = True
            checks[f"{target_name}/{kind}"] = {
                "classifier": verdict.value,
                "trend": tr.to_dict(),
                "censored_fraction": cens_frac,
                "status": status,
            }
    _write_json(out_dir / "dichotomy.json", {
        "classification": report.to_dict(),
        "checks": checks,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
    })
    return EXIT_CONTRADICTION if contradiction else EXIT_OK


# --------------------------------------------------------------------------
# scaling
# --------------------------------------------------------------------------

def _run_scaling(cfg: ExperimentConfig, out_dir: Path, args) -> int:
    model = cfg.build_model()
    sc = cfg.scaling
    n_list = [int(v) for v in sc.get("n_list", [20, 50, 100])]
    x = float(sc.get("x", 1.0))
    t = float(sc.get("t", 0.5))
    sde_replicas = int(sc.get("sde_replicas", max(cfg.replicas, 10000)))
    sde_cfg = _sde_config(cfg, args)

    z_ref = diffusion_sim.batch_z_state_at(
        x, model, sde_cfg, t, sde_replicas, replica_rng(cfg.seed, 10 ** 6))
    ref_mean = float(np.mean(z_ref))
    ref_se = float(np.std(z_ref, ddof=1) / math.sqrt(z_ref.size))

    rows = []
    table = {}
    for n in n_list:
        m0 = int(math.floor(n * x))
        from .interaction import scaled_model
        sm = scaled_model(model, n)
        bd = bd_rates(rate_sums(sm, max(2 * m0, 64)), 2.0 * n, 2.0 * n)
        states = discrete_sim.batch_state_at(
            bd, m0, t, cfg.replicas, replica_rng(cfg.seed, n))
        z_n = states / n
        mean = float(np.mean(z_n))
        se = float(np.std(z_n, ddof=1) / math.sqrt(z_n.size))
        gap = abs(mean - ref_mean)
        rows.append((n, mean, se, ref_mean, ref_se, gap))
        table[str(n)] = {"mean": mean, "std_err": se, "gap": gap}
    _write_csv(out_dir / "scaling.csv",
               ["n", "mean_Zn", "se_Zn", "mean_Z_sde", "se_Z_sde", "gap"], rows)
    _write_json(out_dir / "scaling.json", {
        "x": x, "t": t, "reference": {"mean": ref_mean, "std_err": ref_se},
        "per_n": table, "seed": cfg.seed, "replicas": cfg.replicas,
    })
    return EXIT_OK


# --------------------------------------------------------------------------
# emit-plotdata
# --------------------------------------------------------------------------

def _emit_survival(samples: np.ndarray, path: Path) -> None:
    s = np.sort(samples)
    n = s.size
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for i, v in enumerate(s):
            fh.write(f"{_fmt(float(v))} {_fmt((n - i - 1) / n)}\n")


def _run_emit_plotdata(in_dir: Path, out_dir: Path) -> int:
    found = False
    dich = in_dir / "dichotomy.json"
    if dich.exists():
        found = True
        with open(dich) as fh:
            data = json.load(fh)
        for name, check in sorted(data.get("checks", {}).items()):
            tr = check["trend"]
            tgt = name.replace("/", "_")
            path = out_dir / f"{tgt}_medians.dat"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w") as fh:
                for lev, med in zip(tr["levels"], tr["medians"]):
                    fh.write(f"{_fmt(float(lev))} {_fmt(float(med))}\n")
    for csv_name, level_col, value_col, cens_col in (
            ("discrete_samples.csv", "m", "H", "H_censored"),
            ("diffusion_samples.csv", "x", "T", "censored")):
        src = in_dir / csv_name
        if not src.exists():
            continue
        found = True
        by_level: dict = {}
        with open(src) as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                if row[cens_col] == "1" or row[value_col] == "":
                    continue
                by_level.setdefault(row[level_col], []).append(float(row[value_col]))
        stem = csv_name.split("_")[0]
        for level, vals in sorted(by_level.items(), key=lambda kv: float(kv[0])):
            _emit_survival(np.asarray(vals),
                           out_dir / f"{stem}_survival_{level}.dat")
    if not found:
        raise ConfigError(f"no prior artifacts found under {in_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser, *, model_flags: bool = False):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", default="out", help="artifact directory")
    p.add_argument("--threads", type=int, help="worker threads (>=1; replicas "
                   "are executed in deterministic order regardless)")
    if model_flags:
        p.add_argument("--model", help="inline model spec family:k=v,...")
        p.add_argument("--lambda", dest="lam", type=float, help="base birth rate")
        p.add_argument("--mu", type=float, help="base death rate")
        p.add_argument("--replicas", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="popforest",
                description="population processes with general competition: "
                            "simulation and height/mass classification")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[], help="analytic classification")
    _add_common(c, model_flags=True)
    c.add_argument("--trace-csv", action="store_true",
                   help="also write the partial-integral ladder as CSV")

    d = sub.add_parser("simulate-discrete", help="event-driven population runs")
    _add_common(d, model_flags=True)
    d.add_argument("--m", type=int, help="single ancestor count")
    d.add_argument("--m-list", help="comma-separated ancestor ladder")
    d.add_argument("--t-max", type=float, help="censoring horizon")
    d.add_argument("--out", help="samples CSV path")

    f = sub.add_parser("simulate-diffusion", help="SDE runs")
    _add_common(f, model_flags=True)
    f.add_argument("--x", type=float, help="single initial mass")
    f.add_argument("--x-list", help="comma-separated initial-mass ladder")
    f.add_argument("--target", choices=["height", "mass", "z"])
    f.add_argument("--dt", type=float)
    f.add_argument("--eps-abs", type=float)
    f.add_argument("--t-max", type=float)
    f.add_argument("--out", help="samples CSV path")

    g = sub.add_parser("dichotomy",
                       help="confront simulation trends with the classifier")
    _add_common(g, model_flags=True)
    g.add_argument("--dt", type=float)
    g.add_argument("--eps-abs", type=float)
    g.add_argument("--t-max", type=float)

    s = sub.add_parser("scaling", help="renormalized-chain vs SDE probe")
    _add_common(s, model_flags=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--eps-abs", type=float)
    s.add_argument("--t-max", type=float)

    e = sub.add_parser("emit-plotdata", help="plot-ready files from artifacts")
    e.add_argument("--in-dir", default="out")
    e.add_argument("--out-dir", default="out/plotdata")
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "emit-plotdata":
            return _run_emit_plotdata(Path(args.in_dir), Path(args.out_dir))
        cfg = _load_cfg(args)
        out_dir = Path(args.out_dir)
        if args.command == "classify":
            return _run_classify(cfg, out_dir, args.trace_csv)
        if args.command == "simulate-discrete":
            return _run_simulate_discrete(cfg, out_dir, args)
        if args.command == "simulate-diffusion":
            return _run_simulate_diffusion(cfg, out_dir, args)
        if args.command == "dichotomy":
            return _run_dichotomy(cfg, out_dir, args)
        if args.command == "scaling":
            return _run_scaling(cfg, out_dir, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except PopforestError as exc:
        print(f"popforest: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # runtime failure, never a traceback to the user
        print(f"popforest: unexpected failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
