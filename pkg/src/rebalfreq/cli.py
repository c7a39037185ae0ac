"""Command-line front end.

Subcommands: ``frequency`` (optimal waiting times and cost rates), ``tc``
(leading-order total costs), ``simulate`` (Monte Carlo strategy comparison),
``table`` (built-in benchmark tables 1-4), ``figure`` (waiting time and
performance across correlations), and ``validate`` (model sanity checks).
All output is CSV on stdout or ``--out``. Exit codes: 0 success, 1 input
error, 2 numerical failure. Runs are pure functions of (config, seed):
repeating an invocation reproduces its output byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import __version__
from .config import load_config
from .errors import InputError, RebalfreqError
from .evaluate import (
    CSV_HEADER,
    figure_rows,
    rows_to_csv,
    run_table_cell,
    table_runner,
)
from .frequency import (
    check_nondegeneracy,
    constant_rule,
    cost_breakdown,
    optimal_rule,
    total_cost,
)
from .markets import finite_difference_jacobians, jacobians
from .merton import l21_norm, merton_state
from .simulate import run_strategies, simulate_state_grid

_FMT = ".10g"


def _fmt(x):
    return format(float(x), _FMT)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _default_state(run):
    if run.simulation.y0 is not None:
        return run.simulation.y0
    if run.model.p == 0:
        return np.zeros(0)
    return np.full(run.model.p, run.model.long_run_mean)


def _sample_states(run, n=100):
    """States drawn from simulated state paths (the measure the rules see)."""
    model = run.model
    if model.p == 0:
        return np.zeros((1, 0))
    sim = run.simulation
    _, states = simulate_state_grid(
        model, sim.horizon, sim.dt, 16, _default_state(run), sim.seed
    )
    flat = states.reshape(-1, model.p)
    idx = np.linspace(0, len(flat) - 1, n).astype(int)
    return flat[idx]


def cmd_frequency(args):
    run = load_config(args.config)
    sim = _apply_overrides(run, args)
    y0 = _default_state(run)
    rule = optimal_rule(run.model, sim.gamma, allow_flagged=sim.allow_flagged)
    a_star = float(np.asarray(rule.A_of(y0)))
    wait = float(rule.waiting_time(y0, sim.epsilon))
    parts = cost_breakdown(run.model, sim.gamma, y0, allow_flagged=sim.allow_flagged)
    eps23 = sim.epsilon ** (2.0 / 3.0)
    lines = ["quantity,value"]
    lines.append(f"A_star,{_fmt(a_star)}")
    lines.append(f"waiting_time_years,{format(wait, '.4g')}")
    lines.append(f"waiting_time_months,{format(12.0 * wait, '.4g')}")
    lines.append(f"tac_rate,{_fmt(parts.tac_rate)}")
    lines.append(f"de_rate,{_fmt(parts.de_rate)}")
    lines.append(f"tc_rate,{_fmt(parts.tc_rate)}")
    lines.append(f"loss_rate_annualized,{_fmt(eps23 * float(parts.tc_rate))}")
    lines.append(f"loss_rate_percent,{format(100 * eps23 * float(parts.tc_rate), '.4g')}")
    if run.model.p > 0:
        crule = constant_rule(
            run.model,
            sim.gamma,
            sim.horizon,
            y0=y0,
            dt=sim.dt,
            seed=sim.seed,
            allow_flagged=sim.allow_flagged,
        )
        cwait = float(crule.waiting_time(y0, sim.epsilon))
        lines.append(f"constant_A_star,{_fmt(crule.A)}")
        lines.append(f"constant_waiting_time_years,{format(cwait, '.4g')}")
        lines.append(f"constant_waiting_time_months,{format(12.0 * cwait, '.4g')}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_tc(args):
    run = load_config(args.config)
    sim = _apply_overrides(run, args)
    y0 = _default_state(run)
    kw = dict(
        horizon_T=sim.horizon,
        y0=y0,
        dt=sim.dt,
        seed=sim.seed,
        allow_flagged=sim.allow_flagged,
    )
    tc_opt = total_cost(run.model, sim.gamma, rule=None, **kw)
    crule = constant_rule(
        run.model, sim.gamma, sim.horizon, y0=y0, dt=sim.dt, seed=sim.seed,
        allow_flagged=sim.allow_flagged,
    )
    tc_const = total_cost(run.model, sim.gamma, rule=crule, **kw)
    parts = cost_breakdown(run.model, sim.gamma, y0, allow_flagged=sim.allow_flagged)
    split = float(parts.tac_rate / parts.de_rate)
    eps23 = sim.epsilon ** (2.0 / 3.0)
    lines = [
        "quantity,value",
        f"tc_optimal,{_fmt(tc_opt)}",
        f"tc_constant,{_fmt(tc_const)}",
        f"loss_rate_optimal,{_fmt(eps23 * tc_opt / sim.horizon)}",
        f"loss_rate_constant,{_fmt(eps23 * tc_const / sim.horizon)}",
        f"tac_over_de_at_optimum,{_fmt(split)}",
        f"split_residual,{_fmt(abs(split - 2.0))}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _apply_overrides(run, args):
    sim = run.simulation
    changes = {}
    if getattr(args, "paths", None):
        changes["n_paths"] = int(args.paths)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = int(args.seed)
    if getattr(args, "epsilon", None) is not None:
        changes["epsilon"] = float(args.epsilon)
    if changes:
        sim = dataclasses.replace(sim, **changes)
        run.simulation = sim
    return sim


def cmd_simulate(args):
    run = load_config(args.config)
    sim = _apply_overrides(run, args)
    reports = run_table_cell(run.model, sim, run.strategies)
    out_path = args.out or run.output
    _emit(rows_to_csv(reports), out_path)
    if args.dump_paths:
        if not out_path:
            raise InputError("--dump-paths requires --out (or config.output)")
        _dump_paths(run, sim, args.dump_paths, out_path + ".paths.csv")
    return 0


def _dump_paths(run, sim, k, path):
    from .evaluate import _build_strategy

    names = [n for n in run.strategies if n != "frictionless"]
    if not names:
        raise InputError("path dumps need at least one simulated strategy")
    strategies = [_build_strategy(n, run.model, sim) for n in names]
    _, records = run_strategies(run.model, sim, strategies, record_paths=int(k))
    lines = ["strategy,path,time,wealth," + ",".join(f"weight_{i+1}" for i in range(run.model.m))]
    for label in records.wealth:
        w = records.wealth[label]
        ww = records.weights[label]
        for pi in range(w.shape[0]):
            for ti, t in enumerate(records.times):
                lines.append(
                    f"{label},{pi},{_fmt(t)},{_fmt(w[pi, ti])},"
                    + ",".join(_fmt(ww[pi, ti, j]) for j in range(run.model.m))
                )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_table(args):
    kw = {}
    if args.paths:
        kw["n_paths"] = int(args.paths)
    if args.seed is not None:
        kw["seed"] = int(args.seed)
    if args.epsilon is not None:
        kw["epsilon"] = float(args.epsilon)
    reports = table_runner(args.table, **kw)
    _emit(rows_to_csv(reports), args.out)
    return 0


def cmd_figure(args):
    if args.figure != 1:
        raise InputError("only figure 1 is available")
    rows = figure_rows(
        n_paths=int(args.paths) if args.paths else 0,
        seed=int(args.seed) if args.seed is not None else 7,
    )
    lines = ["rho,A_star_years,F_hat"]
    for r in rows:
        lines.append(f"{_fmt(r['rho'])},{_fmt(r['A_star_years'])},{_fmt(r['F_hat'])}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_validate(args):
    run = load_config(args.config)
    sim = run.simulation
    model = run.model
    y0 = _default_state(run)
    lines = ["check,value,status"]

    states = _sample_states(run)
    dmu_a, dsig_a = jacobians(model, states)
    dmu_f, dsig_f = finite_difference_jacobians(model, states)
    scale = np.maximum(1.0, np.abs(dmu_f))
    err = float(np.max(np.abs(dmu_a - dmu_f) / scale)) if dmu_f.size else 0.0
    scale_s = np.maximum(1.0, np.abs(dsig_f))
    err_s = float(np.max(np.abs(dsig_a - dsig_f) / scale_s)) if dsig_f.size else 0.0
    jac_err = max(err, err_s)
    lines.append(f"jacobian_fd_max_rel_err,{_fmt(jac_err)},{_status(jac_err < 1e-5)}")

    st = merton_state(model, states, sim.gamma)
    eigmin = float(np.min(np.linalg.eigvalsh(st.Sigma)))
    lines.append(f"sigma_min_eigenvalue,{_fmt(eigmin)},{_status(eigmin > 0)}")

    st0 = merton_state(model, y0, sim.gamma)
    for i, w in enumerate(np.atleast_1d(st0.w_star)):
        lines.append(f"w_star_{i+1},{_fmt(w)},ok")
    for i in range(model.m):
        for j in range(model.d):
            lines.append(f"sigma_tilde_{i+1}{j+1},{_fmt(st0.sigma_tilde[i, j])},ok")
            lines.append(f"beta_{i+1}{j+1},{_fmt(st0.beta[i, j])},ok")
    lines.append(f"beta_l21,{_fmt(l21_norm(st0.beta))},ok")
    lines.append(
        f"assumption_no_leverage_at_y0,{int(bool(st0.assumption_ok))},"
        f"{_status(bool(st0.assumption_ok))}"
    )
    frac_ok = float(np.mean(merton_state(model, states, sim.gamma).assumption_ok))
    lines.append(f"assumption_ok_fraction_sampled,{_fmt(frac_ok)},{_status(frac_ok == 1.0)}")

    nd = check_nondegeneracy(model, sim.gamma, states)
    lines.append(f"min_beta_l21_sampled,{_fmt(nd['min_beta_l21'])},{_status(nd['passes'])}")
    if nd["analytic_bound"] is not None:
        lines.append(
            f"beta_l21_analytic_bound,{_fmt(nd['analytic_bound'])},"
            f"{_status(nd['min_beta_l21'] >= nd['analytic_bound'] - 1e-12)}"
        )
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _status(ok):
    return "pass" if ok else "fail"


def build_parser():
    parser = _Parser(
        prog="rebalfreq",
        description=(
            "Optimal time-based portfolio rebalancing frequencies under "
            "small proportional trading costs, with Monte Carlo validation."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override RNG seed")
        p.add_argument("--paths", type=int, default=None, help="override path count")
        p.add_argument("--epsilon", type=float, default=None, help="override cost rate")
        p.add_argument("--out", default=None, help="write CSV here instead of stdout")

    p = sub.add_parser("frequency", help="optimal waiting time and cost rates")
    add_common(p)
    p.set_defaults(func=cmd_frequency)

    p = sub.add_parser("tc", help="leading-order total costs and the 2:1 split")
    add_common(p)
    p.set_defaults(func=cmd_tc)

    p = sub.add_parser("simulate", help="Monte Carlo strategy comparison")
    add_common(p)
    p.add_argument(
        "--dump-paths",
        type=int,
        default=0,
        metavar="K",
        help="also write a per-step ledger for the first K paths",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table", help="run a built-in benchmark table")
    p.add_argument("--table", type=int, required=True, choices=[1, 2, 3, 4])
    add_common(p, config_required=False)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("figure", help="waiting time and performance vs correlation")
    p.add_argument("--figure", type=int, required=True, choices=[1])
    add_common(p, config_required=False)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("validate", help="model and assumption checks")
    add_common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except RebalfreqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
