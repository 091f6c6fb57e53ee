"""Command-line surface: optimize, build portfolios, build ensembles, analyze.

Objective URIs select the evaluation backend: `replay:<bundle.json>` replays
frozen learning curves, `synthetic:<name>` evaluates the closed-form curve
objective, and `socket:<host:port>` delegates to an external worker process.
All commands print a `RESULT {json}` summary line on success and exit with 0
on success, 1 on input/runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from typing import Any, Sequence

import click
import numpy as np

from . import analysis, ensemble as ens, portfolio as pf
from .configspace import ConfigurationSpace, SpaceError, load_space, parse_space
from .executor import (Objective, ReplayError, ReplayObjective, SocketObjective,
                       SyntheticCurveObjective, load_replay)
from .optimizer import Limits, budget_ladder, load_history, run


def _result(payload: dict[str, Any]) -> None:
    click.echo("RESULT " + json.dumps(payload, sort_keys=True))


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _effective_seed(seed: int) -> int:
    env = os.environ.get("MULTIFID_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            _fail(f"MULTIFID_SEED is not an integer: {env!r}")
    return seed


def _load_objective(uri: str, space: ConfigurationSpace | None,
                    replay_mode: str = "surrogate",
                    emit_predictions: bool = False) -> Objective:
    scheme, _, rest = uri.partition(":")
    if scheme == "replay":
        bundle = load_replay(rest)
        return ReplayObjective(bundle, mode=replay_mode,
                               emit_predictions=emit_predictions)
    if scheme == "synthetic":
        if rest in ("", "default"):
            dataset_seed = 0
        elif rest.lstrip("-").isdigit():
            dataset_seed = int(rest)
        else:
            dataset_seed = sum(rest.encode()) % 1000
        return SyntheticCurveObjective(noise=True, dataset_seed=dataset_seed,
                                       space=space)
    if scheme == "socket":
        if space is None:
            raise click.UsageError("socket objectives require --space")
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise click.UsageError(f"bad socket address: {rest!r}")
        return SocketObjective((host, int(port)), space)
    raise click.UsageError(f"unknown objective scheme {scheme!r} in {uri!r}")


def _space_doc_for(uri: str, space_path: str | None) -> str | None:
    """JSON text of the search space, for persisting into the run directory."""
    if space_path:
        with open(space_path, encoding="utf-8") as fh:
            return fh.read()
    scheme, _, rest = uri.partition(":")
    if scheme == "replay":
        with open(rest, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "space_inline" in doc:
            return json.dumps(doc["space_inline"], indent=2, sort_keys=True)
        path = doc.get("space", "")
        if path and not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(rest)), path)
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                return fh.read()
    if scheme == "synthetic":
        from .executor import _SYNTHETIC_SPACE_DOC
        return json.dumps(_SYNTHETIC_SPACE_DOC, indent=2, sort_keys=True)
    return None


@click.group()
def main() -> None:
    """Multi-fidelity hyperparameter optimization toolkit."""


@main.command()
@click.option("--space", "space_path", type=click.Path(exists=True),
              help="Search-space JSON; defaults to the objective's own space.")
@click.option("--objective", "objective_uri", required=True,
              help="replay:<path> | synthetic:<name> | socket:<host:port>")
@click.option("--b-min", default=12.0, show_default=True)
@click.option("--b-max", default=50.0, show_default=True)
@click.option("--eta", default=2.0, show_default=True)
@click.option("--iterations", default=10, show_default=True,
              help="Number of SuccessiveHalving brackets.")
@click.option("--wall-clock", type=float, default=None,
              help="Soft wall-clock limit in seconds.")
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--portfolio", "portfolio_path", type=click.Path(exists=True),
              help="Warmstart portfolio JSON for the first bracket.")
@click.option("--run-dir", default=None,
              help="Output directory; defaults to run-seed<seed>.")
@click.option("--no-model", is_flag=True,
              help="Disable density-model proposals (plain random sampling).")
@click.option("--replay-mode", type=click.Choice(["strict", "surrogate"]),
              default="surrogate", show_default=True)
@click.option("--predictions", "emit_predictions", is_flag=True,
              help="Store per-model validation prediction matrices (replay only).")
def optimize(space_path: str | None, objective_uri: str, b_min: float,
             b_max: float, eta: float, iterations: int,
             wall_clock: float | None, seed: int, workers: int,
             portfolio_path: str | None, run_dir: str | None, no_model: bool,
             replay_mode: str, emit_predictions: bool) -> None:
    """Run the multi-fidelity optimizer and persist the run directory."""
    seed = _effective_seed(seed)
    try:
        space = load_space(space_path) if space_path else None
        objective = _load_objective(objective_uri, space, replay_mode,
                                    emit_predictions)
        space = space if space is not None else objective.space
        ladder = budget_ladder(b_min, b_max, eta)
        warmstart = pf.load_portfolio(portfolio_path) if portfolio_path else None
        space_doc = _space_doc_for(objective_uri, space_path)
    except (OSError, ValueError, SpaceError, ReplayError) as exc:
        _fail(str(exc))
    if run_dir is None:
        run_dir = f"run-seed{seed}"
    limits = Limits(max_iterations=iterations, wall_clock=wall_clock,
                    seed=seed, workers=workers)
    try:
        history = run(space, objective, ladder, limits, portfolio=warmstart,
                      run_dir=run_dir, use_model=not no_model,
                      space_doc=space_doc)
    except (ReplayError, ConnectionError, OSError) as exc:
        _fail(str(exc))
    incumbent, loss = history.incumbent(ladder.rungs[-1])
    _result({"run_dir": run_dir, "n_evals": len(history),
             "incumbent_loss": loss, "incumbent": incumbent,
             "rungs": list(ladder.rungs)})


@main.command()
@click.option("--run-dir", "run_dirs", multiple=True, required=True,
              type=click.Path(exists=True),
              help="Source run directories contributing incumbents.")
@click.option("--objective", "objective_uris", multiple=True, required=True,
              help="Datasets the candidates are scored on (objective URIs).")
@click.option("--space", "space_path", type=click.Path(exists=True))
@click.option("--size", default=16, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", "out_path", default="portfolio.json", show_default=True)
@click.option("--matrix-out", default="matrix.csv", show_default=True)
def portfolio(run_dirs: Sequence[str], objective_uris: Sequence[str],
              space_path: str | None, size: int, seed: int, workers: int,
              out_path: str, matrix_out: str) -> None:
    """Greedily build a warmstart portfolio from run incumbents."""
    seed = _effective_seed(seed)
    space = None
    if space_path:
        space = load_space(space_path)
    candidates, candidate_ids = [], []
    b_max = None
    for rd in run_dirs:
        meta_path = os.path.join(rd, "meta.json")
        hist_path = os.path.join(rd, "runhistory.jsonl")
        if not os.path.exists(meta_path) or not os.path.exists(hist_path):
            _fail(f"{rd}: not a run directory (missing meta.json/runhistory.jsonl)")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        rd_b_max = int(meta["ladder"]["rungs"][-1])
        b_max = rd_b_max if b_max is None else max(b_max, rd_b_max)
        history = load_history(hist_path, rd_b_max)
        try:
            incumbent, _ = history.incumbent(rd_b_max)
        except ValueError:
            _fail(f"{rd}: no incumbent at budget {rd_b_max}")
        if space is None and os.path.exists(os.path.join(rd, "space.json")):
            space = load_space(os.path.join(rd, "space.json"))
        candidates.append(incumbent)
        candidate_ids.append(os.path.basename(os.path.normpath(rd)))
    try:
        objectives = [_load_objective(uri, space) for uri in objective_uris]
    except (OSError, ValueError, ReplayError) as exc:
        _fail(str(exc))
    matrix = pf.build_matrix(candidates, objectives, b_max,
                             candidate_ids=candidate_ids, seed=seed,
                             workers=workers)
    regrets = pf.relative_regret(matrix)
    built = pf.greedy_build(regrets, size=min(size, len(candidates)),
                            candidates=candidates,
                            candidate_ids=candidate_ids,
                            dataset_ids=matrix.datasets)
    pf.save_matrix_csv(matrix, matrix_out)
    pf.save_portfolio(built, out_path, space_path=space_path or "")
    _result({"portfolio": out_path, "matrix": matrix_out, "size": len(built),
             "regret_curve": built.regret_curve})


@main.command("ensemble")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--k", default=ens.DEFAULT_TOP_K, show_default=True,
              help="Keep only the k best single models before selection.")
@click.option("--size", default=ens.DEFAULT_ENSEMBLE_SIZE, show_default=True)
@click.option("--metric", type=click.Choice(["accuracy", "balanced_accuracy"]),
              default="accuracy", show_default=True)
@click.option("--trajectory", "trajectory_path", default=None,
              help="Also write the anytime ensemble-score time series (CSV).")
@click.option("--out", "out_path", default="ensemble.json", show_default=True)
def ensemble_cmd(run_dir: str, k: int, size: int, metric: str,
                 trajectory_path: str | None, out_path: str) -> None:
    """Greedy post-hoc ensemble selection over a run's stored predictions."""
    labels_path = os.path.join(run_dir, "predictions", "labels.csv")
    if not os.path.exists(labels_path):
        _fail(f"{run_dir}: no stored predictions (run optimize with --predictions)")
    labels = np.loadtxt(labels_path, dtype=int, ndmin=1)
    try:
        store = ens.load_prediction_store(run_dir, labels)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    selected = ens.greedy_select(ens.topk_filter(store, k), size, metric)
    ens.save_ensemble(selected, out_path)
    if trajectory_path:
        points = ens.ensemble_trajectory(store, size, k, metric)
        with open(trajectory_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wall_time_s", "ensemble_score"])
            for ts, score in points:
                writer.writerow([f"{ts:.6f}", f"{score:.10f}"])
    _result({"ensemble": out_path, "score": selected.score,
             "n_members": len(selected.member_counts), "size": selected.size,
             "metric": metric})


@main.command()
@click.option("--n-max", required=True, type=int)
@click.option("--n-layers", required=True, type=int)
@click.option("--n-out", required=True, type=int)
@click.option("--groups", "n_groups", type=int, default=None,
              help="Treat the shape as ResNet groups with this many blocks each.")
def shape(n_max: int, n_layers: int, n_out: int, n_groups: int | None) -> None:
    """Print the funnel layer widths for a shaped network."""
    from .shaped_arch import FunnelShape, funnel_widths, resnet_group_widths
    try:
        if n_groups is not None:
            widths = resnet_group_widths(n_max, n_layers, n_groups, n_out)
            _result({"group_widths": widths.group_widths,
                     "block_widths": widths.block_widths})
        else:
            _result({"widths": funnel_widths(
                FunnelShape(n_max=n_max, n_layers=n_layers, n_out=n_out))})
    except ValueError as exc:
        _fail(str(exc))


@main.group()
def analyze() -> None:
    """Study instruments: correlations, importances, heatmaps, regret curves."""


def _parse_budget_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise click.UsageError(f"--budgets expects 'b,b2', got {text!r}")
    return int(parts[0]), int(parts[1])


@analyze.command()
@click.option("--replay", "replay_paths", multiple=True,
              type=click.Path(exists=True), help="Replay bundle JSON file(s).")
@click.option("--run-dir", type=click.Path(exists=True),
              help="Correlate losses inside one run history instead.")
@click.option("--budgets", required=True, help="Budget pair, e.g. 12,50.")
@click.option("--mode", type=click.Choice(["non-adaptive", "adaptive", "cross"]),
              default="non-adaptive", show_default=True)
@click.option("--out", "out_path", default="correlation.csv", show_default=True)
def correlation(replay_paths: Sequence[str], run_dir: str | None,
                budgets: str, mode: str, out_path: str) -> None:
    """Spearman rank correlation of losses between two budgets."""
    pair = _parse_budget_pair(budgets)
    try:
        if run_dir:
            meta = json.load(open(os.path.join(run_dir, "meta.json")))
            history = load_history(os.path.join(run_dir, "runhistory.jsonl"),
                                   int(meta["ladder"]["rungs"][-1]))
            report = analysis.budget_correlation(history, pair, mode)
        elif replay_paths:
            bundles = [load_replay(p) for p in replay_paths]
            report = analysis.budget_correlation(bundles, pair, mode)
        else:
            raise click.UsageError("need --replay or --run-dir")
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "budget_a", "budget_b", "rho"])
            for name, rho in sorted(report.per_dataset.items()):
                writer.writerow([name, pair[0], pair[1], f"{rho:.10f}"])
    except (OSError, ValueError, ReplayError) as exc:
        _fail(str(exc))
    _result({"out": out_path, "budgets": list(pair), "mode": mode,
             "mean": report.mean, "std": report.std})


@analyze.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--budget", type=int, default=None,
              help="Budget whose records feed the surrogate; default: highest.")
@click.option("--target", type=click.Choice(["loss", "accuracy"]),
              default="loss", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="importance.csv", show_default=True)
def importance(run_dir: str, budget: int | None, target: str, seed: int,
               out_path: str) -> None:
    """Hyperparameter importance: first-order fANOVA plus local importance."""
    seed = _effective_seed(seed)
    try:
        space = load_space(os.path.join(run_dir, "space.json"))
        meta = json.load(open(os.path.join(run_dir, "meta.json")))
        b_max = int(meta["ladder"]["rungs"][-1])
        history = load_history(os.path.join(run_dir, "runhistory.jsonl"), b_max)
        budget = budget if budget is not None else b_max
        records = [r for r in history.records_at(budget) if r.status == "ok"]
        if len(records) < 20:
            raise ValueError(f"need >= 20 ok records at budget {budget}, "
                             f"have {len(records)}")
        X = np.array([space.to_unit_cube(r.configuration) for r in records])
        y = np.array([r.loss for r in records])
        if target == "accuracy":
            y = 1.0 - y
        surrogate = analysis.fit_forest(X, y, rng=np.random.default_rng(seed))
        fanova = analysis.fanova_first_order(surrogate, space.names)
        incumbent = min(records, key=lambda r: r.loss).configuration

        def surrogate_eval(config):
            return float(surrogate.predict(
                space.to_unit_cube(config)[None, :])[0])

        local = analysis.lpi(space, surrogate_eval, incumbent)
    except (OSError, ValueError, SpaceError) as exc:
        _fail(str(exc))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hyperparameter", "budget", "importance", "method"])
        for name in space.names:
            writer.writerow([name, budget, f"{fanova.scores[name]:.10f}",
                             "fanova"])
        for name in space.names:
            writer.writerow([name, budget, f"{local.scores[name]:.10f}", "lpi"])
    _result({"out": out_path, "budget": budget, "target": target,
             "oob_rmse": surrogate.oob_rmse,
             "top_fanova": max(fanova.scores, key=fanova.scores.get),
             "top_lpi": max(local.scores, key=local.scores.get)})


@analyze.command()
@click.option("--matrix", "matrix_path", required=True,
              type=click.Path(exists=True),
              help="Candidate-by-dataset accuracy matrix CSV.")
@click.option("--out-prefix", default="heatmap", show_default=True)
@click.option("--svg/--no-svg", default=True, show_default=True)
@click.option("--reproducible", is_flag=True,
              help="Suppress timestamp metadata in the SVG output.")
def heatmap(matrix_path: str, out_prefix: str, svg: bool,
            reproducible: bool) -> None:
    """Sorted accuracy and relative-regret heatmaps from a matrix CSV."""
    try:
        with open(matrix_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3:
            raise ValueError("matrix CSV needs >= 2 candidates and a header")
        dataset_ids = rows[0][1:]
        config_ids = [row[0] for row in rows[1:]]
        scores = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        artifact = analysis.performance_heatmap(scores, config_ids, dataset_ids)
    except (OSError, ValueError) as exc:
        _fail(str(exc))
    acc_path = f"{out_prefix}_accuracy.csv"
    regret_path = f"{out_prefix}_regret.csv"
    artifact.write_csv(acc_path, regret_path)
    svg_path = None
    if svg:
        svg_path = f"{out_prefix}.svg"
        artifact.write_svg(svg_path, reproducible=reproducible)
    _result({"accuracy": acc_path, "regret": regret_path, "svg": svg_path,
             "shape": list(artifact.accuracy.shape)})


@analyze.command("portfolio-curve")
@click.option("--matrix", "matrix_path", required=True,
              type=click.Path(exists=True))
@click.option("--max-size", default=16, show_default=True)
@click.option("--out", "out_path", default="portfolio_curve.csv",
              show_default=True)
def portfolio_curve(matrix_path: str, max_size: int, out_path: str) -> None:
    """Mean relative regret as a function of greedy portfolio size."""
    try:
        with open(matrix_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        dataset_ids = rows[0][1:]
        candidates = [{"id": row[0]} for row in rows[1:]]
        scores = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        matrix = pf.PerformanceMatrix(
            candidates=candidates, datasets=dataset_ids, scores=scores,
            crashed=np.zeros(scores.shape, dtype=bool),
            candidate_ids=[row[0] for row in rows[1:]])
        curve = pf.portfolio_size_curve(pf.relative_regret(matrix),
                                        min(max_size, len(candidates)))
    except (OSError, ValueError, IndexError) as exc:
        _fail(str(exc))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "mean_relative_regret"])
        for size, regret in curve:
            writer.writerow([size, f"{regret:.10f}"])
    _result({"out": out_path, "points": len(curve),
             "final_regret": curve[-1][1] if curve else None})


if __name__ == "__main__":
    main()
