"""Aggregation of path outcomes into objective estimates and diagnostics.

The simulated objective of a strategy is the time-averaged sum of relative
wealth increments minus ``gamma/2`` times their squares, estimated path by
path; each path contributes one value, so standard errors are plain sample
statistics (pair means under antithetic sampling). The loss relative to the
frictionless benchmark decomposes, to leading order, into realised
proportional costs plus ``gamma/2`` times the tracking-error integral;
:func:`decomposition_check` verifies that on common random numbers, and
:func:`expansion_check` verifies the cost/error scaling exponents in the
cost rate for general waiting-time exponents.

Benchmark tables 1-4 reproduce the four simulation studies shipped with the
package (single- and two-asset constant-coefficient markets, and their
mean-reverting counterparts); :func:`table_runner` runs them end to end.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError, ParameterError
from .frequency import (
    bs1d_closed_forms,
    constant_rule,
    lemma_constants,
    optimal_rule,
    total_cost,
)
from .markets import BlackScholesModel, TruncatedKimOmbergModel
from .merton import merton_state
from .simulate import (
    SimulationConfig,
    buy_and_hold,
    frictionless_benchmark,
    move_based,
    pasted_move_based,
    run_strategies,
    time_based,
)

__all__ = [
    "StrategyReport",
    "CSV_HEADER",
    "estimate_objective",
    "frictionless_report",
    "decomposition_check",
    "expansion_check",
    "table_runner",
    "figure_rows",
    "rows_to_csv",
    "TABLE_IDS",
]

CSV_HEADER = "strategy,F_hat,stderr,mean_tac,mean_de,mean_trades,asymptotic_prediction"

TABLE_IDS = (1, 2, 3, 4)


@dataclass
class StrategyReport:
    """Monte Carlo summary of one strategy.

    ``F_hat`` is the annualised objective estimate, ``mean_tac`` /
    ``mean_de`` are the average realised cost and tracking-error totals over
    the horizon, and ``implied_loss = frictionless_rate - F_hat``.
    """

    strategy: str
    F_hat: float
    stderr: float
    mean_tac: float
    mean_de: float
    mean_trades: float
    frictionless_rate: float
    implied_loss: float
    n_paths: int
    n_failed: int
    asymptotic_prediction: Optional[float] = None


def _stderr(values, antithetic):
    if len(values) <= 1:
        return float("nan")
    if antithetic and len(values) % 2 == 0:
        pairs = values.reshape(-1, 2).mean(axis=1)
        if len(pairs) > 1:
            return float(pairs.std(ddof=1) / np.sqrt(len(pairs)))
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def estimate_objective(outcome, config, frictionless_rate=None, prediction=None):
    """Turn per-path ledger aggregates into a :class:`StrategyReport`.

    Failed paths (wealth hit zero) are excluded and counted. When
    ``frictionless_rate`` is not given, the same-path plug-in estimate from
    the outcome's frictionless accumulator is used, which makes the implied
    loss a common-random-number difference.
    """
    valid = ~outcome.failed
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ParameterError("no surviving paths to aggregate")
    f = outcome.objective_paths(config)
    anti = config.antithetic and bool(valid.all())
    fr = (
        float(frictionless_rate)
        if frictionless_rate is not None
        else float(outcome.frictionless_path[valid].mean())
    )
    F = float(f[valid].mean())
    return StrategyReport(
        strategy=outcome.label,
        F_hat=F,
        stderr=_stderr(f[valid], anti),
        mean_tac=float(outcome.tac[valid].mean()),
        mean_de=float(outcome.de[valid].mean()),
        mean_trades=float(outcome.n_trades[valid].mean()),
        frictionless_rate=fr,
        implied_loss=fr - F,
        n_paths=n_valid,
        n_failed=int(outcome.failed.sum()),
        asymptotic_prediction=prediction,
    )


def frictionless_report(outcome, config, analytic=None, label="frictionless"):
    """Frictionless benchmark row from the same paths as a simulated run.

    For constant-coefficient models pass ``analytic`` (the exact rate); the
    row is then exact with zero standard error. Otherwise the plug-in rate
    is averaged over the simulated state paths.
    """
    if analytic is not None:
        return StrategyReport(
            strategy=label,
            F_hat=float(analytic),
            stderr=0.0,
            mean_tac=0.0,
            mean_de=0.0,
            mean_trades=0.0,
            frictionless_rate=float(analytic),
            implied_loss=0.0,
            n_paths=len(outcome.frictionless_path),
            n_failed=0,
            asymptotic_prediction=float(analytic),
        )
    vals = outcome.frictionless_path
    return StrategyReport(
        strategy=label,
        F_hat=float(vals.mean()),
        stderr=_stderr(vals, config.antithetic),
        mean_tac=0.0,
        mean_de=0.0,
        mean_trades=0.0,
        frictionless_rate=float(vals.mean()),
        implied_loss=0.0,
        n_paths=len(vals),
        n_failed=0,
        asymptotic_prediction=None,
    )


def decomposition_check(model, config, strategy):
    """Same-path check of ``loss ~ (E[TAC] + gamma/2 E[DE]) / T``.

    Runs the strategy together with the continuously rebalanced zero-cost
    benchmark on shared draws, so the simulated loss is a per-path
    difference with small noise. Returns the simulated loss, the
    decomposition value, their residual, and the residual/loss ratio.
    """
    bench = frictionless_benchmark()
    outcomes, _ = run_strategies(model, config, [strategy, bench])
    out = outcomes[strategy.label]
    ref = outcomes[bench.label]
    valid = ~(out.failed | ref.failed)
    diff = (ref.objective_paths(config) - out.objective_paths(config))[valid]
    loss = float(diff.mean())
    decomp = float(
        (out.tac[valid].mean() + 0.5 * config.gamma * out.de[valid].mean())
        / config.horizon
    )
    residual = loss - decomp
    return {
        "loss_sim": loss,
        "loss_stderr": _stderr(diff, config.antithetic and bool(valid.all())),
        "loss_decomposed": decomp,
        "residual": residual,
        "residual_over_loss": residual / loss if loss != 0 else float("nan"),
        "n_paths": int(valid.sum()),
    }


def expansion_check(model, gamma, config, alphas, epsilons, allow_flagged=False):
    """Scaling diagnostics for the cost and tracking-error expansions.

    For each waiting-time exponent ``alpha``, reruns the time-based strategy
    built on the adaptive optimal profile across the ``epsilons`` grid (same
    seeds) and compares ``E[TAC] / eps^(1 - alpha/2)`` and ``E[DE] /
    eps^alpha`` to the limiting constants computed by the frequency module.
    Reports fitted log-log slopes (expected ``1 - alpha/2`` and ``alpha``).
    """
    rule0 = optimal_rule(model, gamma, allow_flagged=allow_flagged)
    limits = lemma_constants(
        model,
        gamma,
        rule0,
        config.horizon,
        y0=config.y0,
        dt=config.dt,
        seed=config.seed,
        allow_flagged=allow_flagged,
    )
    rows = []
    summaries = []
    for alpha in alphas:
        rule = rule0.with_alpha(alpha)
        tacs, des = [], []
        for eps in epsilons:
            cfg = SimulationConfig(
                horizon=config.horizon,
                dt=config.dt,
                n_paths=config.n_paths,
                epsilon=eps,
                gamma=gamma,
                y0=config.y0,
                seed=config.seed,
                antithetic=config.antithetic,
                block_size=config.block_size,
                n_workers=config.n_workers,
                allow_flagged=allow_flagged,
            )
            outcomes, _ = run_strategies(model, cfg, [time_based(rule, label="time")])
            out = outcomes["time"]
            tac, de = float(out.tac.mean()), float(out.de.mean())
            tacs.append(tac)
            des.append(de)
            rows.append(
                {
                    "alpha": alpha,
                    "epsilon": eps,
                    "mean_tac": tac,
                    "mean_de": de,
                    "tac_scaled": tac / eps ** (1.0 - alpha / 2.0),
                    "de_scaled": de / eps**alpha,
                }
            )
        log_eps = np.log(np.asarray(epsilons, dtype=float))
        tac_slope = float(np.polyfit(log_eps, np.log(tacs), 1)[0])
        de_slope = float(np.polyfit(log_eps, np.log(des), 1)[0])
        summaries.append(
            {
                "alpha": alpha,
                "tac_slope": tac_slope,
                "tac_slope_expected": 1.0 - alpha / 2.0,
                "de_slope": de_slope,
                "de_slope_expected": alpha,
                "tac_limit": limits[0],
                "de_limit": limits[1],
            }
        )
    return rows, summaries


# ---------------------------------------------------------------------------
# benchmark tables
# ---------------------------------------------------------------------------

_BARBERIS = {
    "long_run_mean": 0.056,
    "state_vol": 0.0368,
    "mean_reversion": 0.2712,
    "state_correlation": -0.9351,
}


def _table_spec(table_id):
    if table_id == 1:
        return {
            "models": [("", BlackScholesModel(mu=[0.08], vol=[0.16]))],
            "strategies": ["frictionless", "move", "time_adaptive", "buy_hold"],
            "default_paths": 40_000,
        }
    if table_id == 2:
        return {
            "models": [("", TruncatedKimOmbergModel(vol=[0.1428], **_BARBERIS))],
            "strategies": [
                "frictionless",
                "move",
                "time_adaptive",
                "time_constant",
                "buy_hold",
            ],
            "default_paths": 30_000,
        }
    if table_id == 3:
        return {
            "models": [
                (
                    f"[rho={rho}]",
                    BlackScholesModel(
                        mu=[0.08, 0.08],
                        vol=[0.16, 0.16],
                        correlation=[[1.0, rho], [rho, 1.0]],
                    ),
                )
                for rho in (0.3, 0.6, 0.9)
            ],
            "strategies": ["frictionless", "time_adaptive", "buy_hold"],
            "default_paths": 20_000,
        }
    if table_id == 4:
        return {
            "models": [
                (
                    f"[rho={rho}]",
                    TruncatedKimOmbergModel(
                        vol=[0.1428, 0.1428],
                        correlation=[[1.0, rho], [rho, 1.0]],
                        **_BARBERIS,
                    ),
                )
                for rho in (0.3, 0.6, 0.9)
            ],
            "strategies": ["frictionless", "pasted", "time_adaptive", "buy_hold"],
            "default_paths": 20_000,
        }
    raise InputError(f"table id must be one of {TABLE_IDS}, got {table_id!r}")


def _build_strategy(name, model, config):
    if name == "time_adaptive":
        return time_based(
            optimal_rule(model, config.gamma, allow_flagged=config.allow_flagged),
            label="time_adaptive",
        )
    if name == "time_constant":
        rule = constant_rule(
            model,
            config.gamma,
            config.horizon,
            y0=config.y0,
            dt=config.dt,
            seed=config.seed,
            allow_flagged=config.allow_flagged,
        )
        return time_based(rule, label="time_constant")
    if name == "buy_hold":
        return buy_and_hold()
    if name == "move":
        return move_based()
    if name == "pasted":
        return pasted_move_based()
    if name == "frictionless_sim":
        return frictionless_benchmark()
    raise InputError(f"unknown strategy name {name!r}")


def _analytic_frictionless(model, gamma, y0=None):
    """Exact frictionless rate for constant-coefficient models, else None."""
    if model.p == 0:
        return float(merton_state(model, np.zeros(0), gamma).f_rate)
    return None


def _prediction(name, model, config):
    """Asymptotic performance prediction for strategies with closed forms."""
    fr = _analytic_frictionless(model, config.gamma)
    eps23 = config.epsilon ** (2.0 / 3.0)
    try:
        if name == "time_adaptive":
            tc = total_cost(
                model,
                config.gamma,
                rule=None,
                horizon_T=config.horizon,
                y0=config.y0,
                dt=config.dt,
                seed=config.seed,
                allow_flagged=config.allow_flagged,
            )
            base = fr if fr is not None else _mc_frictionless_rate(model, config)
            return base - eps23 * tc / config.horizon
        if name == "time_constant":
            rule = constant_rule(
                model,
                config.gamma,
                config.horizon,
                y0=config.y0,
                dt=config.dt,
                seed=config.seed,
                allow_flagged=config.allow_flagged,
            )
            tc = total_cost(
                model,
                config.gamma,
                rule=rule,
                horizon_T=config.horizon,
                y0=config.y0,
                dt=config.dt,
                seed=config.seed,
                allow_flagged=config.allow_flagged,
            )
            base = fr if fr is not None else _mc_frictionless_rate(model, config)
            return base - eps23 * tc / config.horizon
        if name == "move" and model.p == 0 and model.m == 1:
            forms = bs1d_closed_forms(
                float(model.mu(np.zeros(0))[0, 0]),
                float(model.vol[0]),
                config.gamma,
                config.epsilon,
            )
            return fr - forms.move_based_loss_rate
        if name == "frictionless":
            return fr
    except Exception:
        return None
    return None


def _mc_frictionless_rate(model, config, n_paths=2000):
    """Plug-in frictionless rate averaged over simulated state paths."""
    from .simulate import simulate_state_grid

    times, states = simulate_state_grid(
        model, config.horizon, config.dt, n_paths, config.y0, config.seed
    )
    flat = states.reshape(-1, model.p)
    f = merton_state(model, flat, config.gamma).f_rate.reshape(states.shape[0], -1)
    w = np.full(f.shape[1], config.dt)
    w[0] = w[-1] = 0.5 * config.dt
    return float((f @ w).mean()) / config.horizon


def run_table_cell(model, config, strategy_names, label_suffix=""):
    """Run one model's strategy battery and return report rows."""
    sims = [
        _build_strategy(n, model, config)
        for n in strategy_names
        if n != "frictionless"
    ]
    if sims:
        outcomes, _ = run_strategies(model, config, sims)
        sample = outcomes[sims[0].label]
    else:
        bench = frictionless_benchmark()
        outcomes, _ = run_strategies(model, config, [bench])
        sample = outcomes[bench.label]
    fr_analytic = _analytic_frictionless(model, config.gamma)
    reports = []
    for name in strategy_names:
        if name == "frictionless":
            rep = frictionless_report(sample, config, analytic=fr_analytic)
        else:
            out = outcomes[name]
            rep = estimate_objective(
                out,
                config,
                frictionless_rate=fr_analytic,
                prediction=_prediction(name, model, config),
            )
        rep.strategy = rep.strategy + label_suffix
        reports.append(rep)
    return reports


def table_runner(
    table_id,
    n_paths=None,
    seed=7,
    epsilon=0.01,
    gamma=5.0,
    horizon=20.0,
    dt=1.0 / 250.0,
    n_workers=2,
    antithetic=True,
):
    """Reproduce one of the four benchmark tables; returns report rows.

    Defaults use desk-scale path counts (tens of thousands) rather than the
    million-path runs behind the published three-digit values; widen
    tolerances accordingly. Tables 2 and 4 run with the no-leverage flag
    overridden, since the mean-reverting benchmark's default cutoffs leave
    the target leveraged in the far tails.
    """
    spec = _table_spec(int(table_id))
    n = int(n_paths) if n_paths else spec["default_paths"]
    reports = []
    for suffix, model in spec["models"]:
        config = SimulationConfig(
            horizon=horizon,
            dt=dt,
            n_paths=n,
            epsilon=epsilon,
            gamma=gamma,
            seed=seed,
            antithetic=antithetic,
            n_workers=n_workers,
            allow_flagged=model.p > 0,
        )
        reports.extend(run_table_cell(model, config, spec["strategies"], suffix))
    return reports


def figure_rows(
    rho_grid=None,
    epsilon=0.01,
    gamma=5.0,
    mu=0.08,
    vol=0.16,
    n_paths=0,
    seed=7,
    horizon=20.0,
    dt=1.0 / 250.0,
    n_workers=2,
):
    """Waiting time and performance across correlations (two identical assets).

    Returns rows ``(rho, A_star_years, F_hat)``; ``F_hat`` is the asymptotic
    prediction unless ``n_paths > 0``, in which case the optimal time-based
    rule is simulated per correlation on shared seeds. The sweep allows
    leveraged targets: with the default parameters the weights sum to
    ``1.25/(1+rho) > 1`` below ``rho = 0.25``.
    """
    if rho_grid is None:
        rho_grid = np.concatenate([np.arange(0.05, 0.96, 0.05), [0.999]])
    rows = []
    for rho in rho_grid:
        model = BlackScholesModel(
            mu=[mu, mu], vol=[vol, vol], correlation=[[1.0, rho], [rho, 1.0]]
        )
        rule = optimal_rule(model, gamma, allow_flagged=True)
        wait = float(rule.waiting_time(np.zeros(0), epsilon))
        fr = _analytic_frictionless(model, gamma)
        if n_paths:
            config = SimulationConfig(
                horizon=horizon,
                dt=dt,
                n_paths=int(n_paths),
                epsilon=epsilon,
                gamma=gamma,
                seed=seed,
                antithetic=True,
                n_workers=n_workers,
            )
            outcomes, _ = run_strategies(model, config, [time_based(rule, label="time")])
            f_hat = float(
                estimate_objective(outcomes["time"], config, frictionless_rate=fr).F_hat
            )
        else:
            tc = total_cost(model, gamma, rule=None, horizon_T=horizon)
            f_hat = fr - epsilon ** (2.0 / 3.0) * tc / horizon
        rows.append({"rho": float(rho), "A_star_years": wait, "F_hat": f_hat})
    return rows


def rows_to_csv(reports):
    """Render report rows under the fixed strategy-CSV header."""
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in reports:
        pred = "" if r.asymptotic_prediction is None else _fmt(r.asymptotic_prediction)
        buf.write(
            ",".join(
                [
                    r.strategy,
                    _fmt(r.F_hat),
                    _fmt(r.stderr),
                    _fmt(r.mean_tac),
                    _fmt(r.mean_de),
                    _fmt(r.mean_trades),
                    pred,
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def _fmt(x):
    return format(float(x), ".10g")
