"""Command-line entry point: ``seedbank-lab <subcommand> --config FILE``."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dichotomy import SlowlyVarying, classify
from .dual import activity_asymptotics, coalescence_probability, sample_tau, simulate_lineages, tau_tail_fit
from .duality import MomentSpec, run_battery
from .forward import constant_init, simulate, uniform_init
from .ibm import (
    MoranParams,
    MoranState,
    fw_diffusion_limit_check,
    moran_gillespie,
    moran_ode,
    moran_fixed_point,
    moran_to_seedbank_transform,
)
from . import rng as rngmod
from .seedbank import Asymptotic

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
CSV_COLUMNS = ("experiment", "time", "estimator", "value", "stderr", "replicas")


class NumericFailure(Exception):
    """The run finished but its result is numerically inconclusive."""


class Outputs:
    """Collects output files in memory; a single writer flushes them at the end."""

    def __init__(self, experiment: str):
        self.experiment = experiment
        self.files: dict[str, bytes] = {}

    def csv(self, name: str, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t, est, val, se, reps in rows:
            w.writerow([self.experiment, _num(t), est, _num(val), _num(se), int(reps)])
        self.files[name] = buf.getvalue().encode()

    def json(self, name: str, payload: Any) -> None:
        self.files[name] = (json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n").encode()


def _num(v) -> str:
    return "%.17g" % float(v)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _initial(cfg: RunConfig, system):
    if cfg.initial.type == "uniform":
        return uniform_init(system)
    return constant_init(system, cfg.initial.x, cfg.initial.y)


def _effective(system, site_layer) -> int:
    site, layer = site_layer
    return system.state_index(int(site), int(layer))


# ---------------------------------------------------------------- experiments


def _simulate_forward(cfg: RunConfig, out: Outputs) -> None:
    system = cfg.system()
    run = simulate(system, cfg.diffusion.build(), _initial(cfg, system), cfg.numerics.times(),
                   cfg.replicas, cfg.seed, cfg.numerics.dt)
    out.csv("forward.csv", run.rows())


def _simulate_dual(cfg: RunConfig, out: Outputs) -> None:
    system = cfg.system()
    counts = np.zeros(system.n_states, dtype=np.int64)
    for sl in cfg.dual.lineages:
        counts[_effective(system, sl)] += 1
    d = cfg.dual.coalescence_d or cfg.diffusion.d
    paths = simulate_lineages(system, d, counts, cfg.numerics.times(), cfg.replicas, cfg.seed)
    alive = (paths.positions >= 0).sum(axis=2)
    active = ((paths.positions >= 0) & (paths.positions < system.n_sites)).sum(axis=2)
    root = math.sqrt(cfg.replicas)
    rows = []
    for name, arr in (("lineages", alive), ("active_lineages", active)):
        for j, t in enumerate(paths.times):
            rows.append((t, name, arr[:, j].mean(), arr[:, j].std(ddof=1) / root if cfg.replicas > 1 else 0.0, cfg.replicas))
    out.csv("dual.csv", rows)


def _parse_spec(system, spec: dict[str, int], cap: int) -> MomentSpec:
    ex: dict[int, int] = {}
    for key, k in spec.items():
        site, layer = (int(p) for p in key.split(","))
        u = system.state_index(site, layer)
        ex[u] = ex.get(u, 0) + int(k)
    return MomentSpec.of(ex, cap)


def _check_duality(cfg: RunConfig, out: Outputs) -> None:
    system = cfg.system()
    if cfg.diffusion.type != "fisher_wright":
        raise ValueError("check-duality needs the Fisher-Wright diffusion function")
    specs = [_parse_spec(system, s, cfg.duality.degree_cap) for s in cfg.duality.specs]
    init = _initial(cfg, system)
    z0 = init if isinstance(init, np.ndarray) else init(rngmod.generator(cfg.seed, 0, "z0"), 1)[0]
    cases = run_battery(system, cfg.diffusion.d, z0, specs, cfg.numerics.times(), cfg.replicas,
                        cfg.seed, dt=cfg.numerics.dt)
    frac = sum(c.passed for c in cases) / len(cases)
    out.json("duality.json", {"cases": [c.as_dict() for c in cases], "pass_fraction": frac,
                              "passed": frac >= 0.95})
    if frac < 0.95:
        raise NumericFailure(f"only {frac:.0%} of duality cases passed")


def _classify(cfg: RunConfig, out: Outputs) -> None:
    torus = cfg.torus()
    k = cfg.kernel.build(torus)
    disp = cfg.displacement.build(torus) if cfg.displacement is not None and not isinstance(cfg.displacement, list) else None
    slow = (SlowlyVarying.log_power(cfg.classify.slow_log_power)
            if cfg.classify.slow_log_power is not None else None)
    sb = cfg.seedbank.build()
    res = classify(cfg.model, k, sb, disp, slow, cfg.numerics.t_max, cfg.numerics.boundary_tol)
    out.json("classify.json", res.as_dict())
    if res.verdict == "boundary-inconclusive":
        raise NumericFailure("integral exponent lies inside the boundary window")


def _tau_tail(cfg: RunConfig, out: Outputs) -> None:
    sb = cfg.seedbank.build()
    gen = rngmod.generator(cfg.seed, 0, "tau")
    samples = sample_tau(sb, cfg.tau.samples, gen)
    record: dict[str, Any] = {"samples": int(samples.size), "rho": sb.rho, "chi": sb.chi}
    if isinstance(sb, Asymptotic) and math.isinf(sb.rho):
        fit = tau_tail_fit(samples, sb, cfg.tau.decades)
        record.update(fit.as_dict())
    else:
        record.update({"mean": float(samples.mean()),
                       "mean_se": float(samples.std(ddof=1) / math.sqrt(samples.size)),
                       "expected_mean": sb.rho / sb.chi})
    out.json("tau.json", record)
    times = cfg.numerics.times()
    act = activity_asymptotics(sb, times, min(cfg.replicas, 100_000), cfg.seed)
    norm, norm_se = act.normalised()
    rows = [(t, "active_time_normalised", v, s, act.replicas) for t, v, s in zip(act.times, norm, norm_se)]
    out.csv("activity.csv", rows)


def _coalescence(cfg: RunConfig, out: Outputs) -> None:
    system = cfg.system()
    start = tuple(_effective(system, sl) for sl in cfg.coalescence.start)
    ests = coalescence_probability(system, cfg.diffusion.d, start, cfg.coalescence.horizons,
                                   cfg.replicas, cfg.seed)
    rows = []
    for e in ests:
        rows.append((e.horizon, "coalesced", e.probability, e.se, e.replicas))
        rows.append((e.horizon, "censored", e.censored, e.se, e.replicas))
    out.csv("coalescence.csv", rows)


def _ibm_fw(cfg: RunConfig, out: Outputs) -> None:
    s = cfg.ibm_fw
    res = fw_diffusion_limit_check(s.N_sweep, s.t, cfg.replicas, cfg.seed, s.K, s.c, s.x0, s.y0,
                                   s.reference_replicas, cfg.numerics.dt)
    out.json("ibm_fw.json", {
        "N": res.N, "wasserstein": res.distance, "mean_error": res.mean_error,
        "mean_error_slope": res.slope, "mean_error_slope_se": res.slope_se,
        "decreasing": res.decreasing(), "replicas": res.replicas,
    })


def _ibm_moran(cfg: RunConfig, out: Outputs) -> None:
    s = cfg.ibm_moran
    params = MoranParams(tuple(s.cA), tuple(s.cD))
    state = MoranState.stationary(s.N, params, s.x0, s.y0)
    times = cfg.numerics.times()
    traj = moran_gillespie(state, params, times, cfg.replicas, cfg.seed)
    tbar, xbar, ybar = moran_to_seedbank_transform(traj, params)
    root = math.sqrt(cfg.replicas)
    se = (lambda a: a.std(axis=0, ddof=1) / root) if cfg.replicas > 1 else (lambda a: np.zeros(a.shape[1:]))
    rows = [(t, "x_bar", m, e, cfg.replicas) for t, m, e in zip(tbar, xbar.mean(axis=0), se(xbar))]
    for m in range(params.colours):
        yb = ybar[:, :, m]
        rows += [(t, f"y_bar_{m}", v, e, cfg.replicas) for t, v, e in zip(tbar, yb.mean(axis=0), se(yb))]
    zA = traj.ZA / s.N
    rows += [(t, "z_A", v, e, cfg.replicas) for t, v, e in zip(traj.times, zA.mean(axis=0), se(zA))]
    out.csv("moran.csv", rows)
    fixed = moran_fixed_point(params)
    z0 = [state.ZA / s.N] + [z / s.N for z in state.ZD]
    out.json("moran.json", {"fixed_point": [fixed[0], *fixed[1]],
                            "ode": moran_ode(params, z0, times),
                            "K": params.K, "e": params.e})


HANDLERS: dict[str, Callable[[RunConfig, Outputs], None]] = {
    "simulate-forward": _simulate_forward,
    "simulate-dual": _simulate_dual,
    "check-duality": _check_duality,
    "classify": _classify,
    "tau-tail": _tau_tail,
    "coalescence-prob": _coalescence,
    "ibm-fw": _ibm_fw,
    "ibm-moran": _ibm_moran,
}


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Dispatch one experiment, write its outputs and the manifest."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    out = Outputs(cfg.experiment)
    status, error = EXIT_OK, None
    try:
        HANDLERS[cfg.experiment](cfg, out)
    except NumericFailure as err:
        status, error = EXIT_NUMERIC, {"kind": "numeric", "message": str(err)}
    except (ValueError, ArithmeticError) as err:
        status, error = EXIT_NUMERIC, {"kind": "numeric", "message": str(err)}
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, data in out.files.items():
        _atomic_write(outdir / name, data)
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "version": __version__,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(out.files.items())},
        "status": status,
        "error": error,
    }
    _atomic_write(outdir / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return status, manifest


def _error(kind: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Spatial seed-bank diffusions, their duals and individual-based models."""


def _command(name: str):
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                  help="YAML or JSON run configuration.")
    @click.option("--seed", type=int, default=None, help="Override the master seed.")
    @click.option("--out", type=str, default=None, help="Override the output directory.")
    def cmd(config_path: str, seed: int | None, out: str | None) -> None:
        try:
            cfg = load_config(config_path, seed, out)
        except ConfigError as err:
            _error("config", str(err), EXIT_CONFIG)
        except OSError as err:
            _error("io", str(err), EXIT_IO)
        if cfg.experiment != name:
            _error("config", f"config describes '{cfg.experiment}', not '{name}'", EXIT_CONFIG)
        try:
            status, manifest = run(cfg)
        except OSError as err:
            _error("io", str(err), EXIT_IO)
        if status != EXIT_OK:
            _error(manifest["error"]["kind"], manifest["error"]["message"], status)
        click.echo(json.dumps({"status": "ok", "outputs": manifest["outputs"]}))

    cmd.__doc__ = f"Run the {name} experiment."
    return main.command(name)(cmd)


for _name in HANDLERS:
    _command(_name)


if __name__ == "__main__":  # pragma: no cover
    main()
