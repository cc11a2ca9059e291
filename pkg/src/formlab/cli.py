"""Command line entry point: ``formlab <subcommand>``.

Exit codes: 0 success, 1 a property or solve failed, 2 usage/config error,
3 a mathematical precondition was violated.
"""
from __future__ import annotations

import json
import os
import re
import sys
import time
from contextlib import nullcontext

import click
import numpy as np

from .config import SUITES, ConfigError, load_config
from .exterior import Form, FormError, HermitianMetric
from .report import ReportError, emit_report

EXIT_FAIL, EXIT_USAGE, EXIT_PRECONDITION = 1, 2, 3


def _threads():
    env = os.environ.get("FORMLAB_THREADS")
    if not env:
        return nullcontext()
    try:
        k = max(1, int(env))
    except ValueError:
        raise click.UsageError(f"FORMLAB_THREADS must be an integer, got {env!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=k)


def _load_metric(spec, n, cfg=None):
    """Metric from a JSON/YAML file of rows [[re, im], ...], from the config, or Euclidean."""
    rows = None
    if spec:
        import yaml
        with open(spec) as fh:
            rows = yaml.safe_load(fh)
    elif cfg is not None and cfg.metric is not None:
        rows = cfg.metric
    if rows is None:
        return HermitianMetric.euclidean(n)
    H = np.array([[complex(*c) if isinstance(c, list) else complex(c) for c in row] for row in rows])
    if H.shape != (n, n):
        raise click.UsageError(f"metric is {H.shape[0]}x{H.shape[1]} but the fields have n={n}")
    return HermitianMetric(H)


_OMEGA = re.compile(r"^\s*(-)?\s*(?:([0-9.eE+-]+)\s*\*\s*)?omega\s*$")


def _field(spec, grid, metric, k, what):
    """Load a field file, or build ``[c*]omega`` (meaning omega_k) / ``-omega`` on the grid."""
    from .torus import FormField
    if spec is None:
        raise click.UsageError(f"--{what} is required")
    if os.path.exists(spec):
        return FormField.load(spec)
    mt = _OMEGA.match(spec)
    if mt is None:
        raise click.UsageError(f"--{what}: {spec!r} is neither a field file nor '[c*]omega'")
    c = float(mt.group(2)) if mt.group(2) else 1.0
    if mt.group(1):
        c = -c
    return FormField.constant(grid, metric.power(k)) * c


def _grid_and_metric(cfg, files, metric_path):
    """Grid from the first existing field file, else from the config."""
    from .torus import FormField, TorusGrid
    for f in files:
        if f and os.path.exists(f):
            g = FormField.load(f).grid
            return g, _load_metric(metric_path, g.n, cfg)
    g = TorusGrid(cfg.grid["n"], cfg.grid["N"], budget=cfg.grid["budget"])
    return g, _load_metric(metric_path, g.n, cfg)


def _write(text, path):
    if path in (None, "-"):
        click.echo(text, nl=False)


def _side_path(report, suffix):
    base = report[:-5] if report.endswith(".json") else report
    return f"{base}.{suffix}.fld"


def _emit(kind, results, cfg, report, timestamp=None):
    try:
        text = emit_report(results, report, kind=kind, config=cfg.to_dict(), timestamp=timestamp)
    except ReportError as e:
        raise click.ClickException(str(e))
    _write(text, report)
    return text


def _common(f):
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="YAML config file.")(f)
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--report", type=str, default=None, help="Report path ('-' for stdout).")(f)
    return f


def _cfg(config_path, **over):
    try:
        return load_config(config_path, over)
    except ConfigError as e:
        raise click.UsageError(f"config invalid: {e}")


def _guard(fn):
    """Map mathematical precondition failures to exit code 3."""
    from .torus import PreconditionError

    def wrapped(*a, **k):
        try:
            return fn(*a, **k)
        except (PreconditionError, FormError) as e:
            click.echo(f"precondition violated: {e}", err=True)
            sys.exit(EXIT_PRECONDITION)
    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="artifact")
def main():
    """Exterior algebra, positivity and Monge-Ampere tooling for (m,m)-forms on flat tori."""


@main.command()
@click.argument("suite", type=click.Choice(SUITES + ("all",)))
@_common
@click.option("--n-max", type=int, default=None)
@click.option("--samples", type=int, default=None, help="Samples per property (overrides the config default).")
@click.option("--grid-N", "grid_N", type=int, default=None)
@click.option("--budget-seconds", type=float, default=None)
@click.option("--timestamp", default=None, help="Fix the report timestamp (for reproducible files).")
def verify(suite, config_path, seed, report, n_max, samples, grid_N, budget_seconds, timestamp):
    """Run a verification suite and write a JSON report."""
    from .suites import failure_lines, run_suite
    cfg = _cfg(config_path, seed=seed, n_max=n_max, samples=samples, **{"grid.N": grid_N},
               budget_seconds=budget_seconds, **{"io.report": report})
    report = report or cfg.io.get("report")
    with _threads():
        try:
            results, ok = run_suite(cfg, suite)
        except TimeoutError as e:
            raise click.ClickException(f"budget exceeded: {e}")
    _emit(f"verify:{suite}", {"suite": suite, "passed": ok, "properties": results}, cfg, report, timestamp)
    for line in failure_lines(results):
        click.echo(line, err=True)
    if report not in (None, "-"):
        click.echo(f"{sum(r['passed'] for r in results)}/{len(results)} properties passed; report: {report}",
                   err=True)
    sys.exit(0 if ok else EXIT_FAIL)


@main.command("check-positivity")
@click.argument("forms", type=click.Path(exists=True, dir_okay=False))
@_common
@click.option("--cone", type=click.Choice(["strong", "weak", "m"]), default="strong")
@click.option("--m", "m", type=int, default=None, help="For --cone m: test T ^ omega^(m-1).")
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--tol", type=float, default=1e-9)
@_guard
def check_positivity(forms, config_path, seed, report, cone, m, metric_path, tol):
    """Verdicts for a JSON file holding one Form or a list of Forms."""
    from .positivity import m_positivity, strong_verdict, weak_verdict
    cfg = _cfg(config_path, seed=seed)
    with open(forms) as fh:
        raw = json.load(fh)
    items = raw if isinstance(raw, list) else [raw]
    out = []
    with _threads():
        for d in items:
            f = Form.from_dict(d)
            if cone == "strong":
                v = strong_verdict(f, tol=tol, seed=cfg.seed)
            elif cone == "weak":
                v = weak_verdict(f, tol=tol, seed=cfg.seed)
            else:
                if m is None:
                    raise click.UsageError("--cone m needs --m")
                v = m_positivity(f, _load_metric(metric_path, f.n, cfg), m, tol=tol, seed=cfg.seed)
            out.append(v.to_dict())
    _emit("positivity-verdicts", out, cfg, report)


@main.command("solve-ma")
@_common
@click.option("--alpha", required=True, help="(m,m) field file, or '[c*]omega'.")
@click.option("--dv", "dv", required=True, help="(n,n) field file, or '[c*]omega'.")
@click.option("--m", "m", type=int, required=True)
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--tol", type=float, default=1e-10)
@click.option("--max-iter", type=int, default=40)
@click.option("--grid-N", "grid_N", type=int, default=None)
@_guard
def solve_ma_cmd(config_path, seed, report, alpha, dv, m, metric_path, tol, max_iter, grid_N):
    """Solve the (m,m) Monge-Ampere type equation; the report follows the solve-report schema."""
    from .solver import solve_ma
    cfg = _cfg(config_path, seed=seed, **{"grid.N": grid_N})
    g, met = _grid_and_metric(cfg, [alpha, dv], metric_path)
    a = _field(alpha, g, met, m, "alpha")
    v = _field(dv, g, met, met.n, "dv")
    with _threads():
        rep = solve_ma(a, v, met, m, tol=tol, max_iter=max_iter)
    refs = {}
    if report not in (None, "-"):
        for name in ("phi", "u"):
            p = _side_path(report, name)
            os.makedirs(os.path.dirname(os.path.abspath(p)), exist_ok=True)
            getattr(rep, name).save(p)
            refs[name] = os.path.basename(p)
    d = rep.to_dict(refs)
    d["elapsed"] = rep.elapsed
    _emit("solve-ma", d, cfg, report)
    sys.exit(0 if rep.status in ("converged", "scalar-converged") else EXIT_FAIL)


@main.command("duality-separate")
@_common
@click.option("--theta", required=True, help="(m,m) field file, or '[c*]omega' / '-omega'.")
@click.option("--m", "m", type=int, required=True)
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--basis-size", type=int, default=None)
@click.option("--grid-N", "grid_N", type=int, default=None)
@_guard
def duality_separate(config_path, seed, report, theta, m, metric_path, basis_size, grid_N):
    """Find an S-certificate or an Omega-certificate for theta."""
    from .duality import SeparationUndecided, lamari_separate
    cfg = _cfg(config_path, seed=seed, **{"grid.N": grid_N})
    g, met = _grid_and_metric(cfg, [theta], metric_path)
    th = _field(theta, g, met, m, "theta")
    with _threads():
        try:
            cert = lamari_separate(th, met, m, basis_size=basis_size)
        except SeparationUndecided as e:
            _emit("separation", {"kind": "undecided", "message": str(e), "interval": list(e.interval)},
                  cfg, report)
            sys.exit(EXIT_FAIL)
    refs = {}
    if report not in (None, "-"):
        for name in ("S", "Omega"):
            f = getattr(cert, name)
            if f is not None:
                p = _side_path(report, name)
                f.save(p)
                refs[name] = os.path.basename(p)
    out = cert.to_dict(refs)
    out["verified"] = bool(cert.verify())
    _emit("separation", out, cfg, report)


@main.command("pairing-check")
@_common
@click.option("--alpha", required=True)
@click.option("--beta", required=True)
@click.option("--m", "m", type=int, required=True)
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--grid-N", "grid_N", type=int, default=None)
@_guard
def pairing_check(config_path, seed, report, alpha, beta, m, metric_path, grid_N):
    """Intersection-number hypothesis for (alpha, beta)."""
    from .duality import intersection_pairing
    cfg = _cfg(config_path, seed=seed, **{"grid.N": grid_N})
    g, met = _grid_and_metric(cfg, [alpha, beta], metric_path)
    a, b = _field(alpha, g, met, m, "alpha"), _field(beta, g, met, m, "beta")
    with _threads():
        rep = intersection_pairing(a, b, met, m)
    _emit("pairing", rep.to_dict(), cfg, report)
    sys.exit(0 if rep.hypothesis_holds else EXIT_FAIL)


@main.command("bigness-witness")
@_common
@click.option("--alpha", required=True, help="(n-1,n-1) field file, or '[c*]omega'.")
@click.option("--beta", required=True)
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--grid-N", "grid_N", type=int, default=None)
@_guard
def bigness_witness_cmd(config_path, seed, report, alpha, beta, metric_path, grid_N):
    """Witness (eta, delta, potential) for the m = n-1 bigness statement."""
    from .duality import BignessError, bigness_witness
    cfg = _cfg(config_path, seed=seed, **{"grid.N": grid_N})
    g, met = _grid_and_metric(cfg, [alpha, beta], metric_path)
    k = met.n - 1
    a, b = _field(alpha, g, met, k, "alpha"), _field(beta, g, met, k, "beta")
    with _threads():
        try:
            w = bigness_witness(a, b, met)
        except BignessError as e:
            _emit("bigness", {"witness": None, "message": str(e), "best_delta": e.best_delta}, cfg, report)
            sys.exit(EXIT_FAIL)
    refs = {}
    if report not in (None, "-"):
        p = _side_path(report, "T_potential")
        w.T_potential.save(p)
        refs["T_potential"] = os.path.basename(p)
    _emit("bigness", w.to_dict(refs), cfg, report)


if __name__ == "__main__":
    main()
