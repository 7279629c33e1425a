"""Command-line entry point.

Configuration comes from an optional ``key = value`` file (``#`` starts a
comment) and from flags, which override the file. The effective configuration is
echoed to ``<out>/config.echo`` in the same format, so a run can be replayed
with ``--config <out>/config.echo``.

Exit codes: 0 all checks passed, 1 a tolerance check failed, 2 invalid input.
"""
from __future__ import annotations

import argparse
import inspect
import math
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import gfunc, kernels, martingale
from .families import FAMILIES, standard_family
from .numgrid import GridSpec, LogTimeGrid, VectorTarget
from .validation import check_exponent, check_power_of_two, check_seed

KERNELS = ("poisson", "heat", "phi")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = ""
    target: str = ""
    d: int = 1
    L: float = 256.0
    N: int = 2**14
    t_min: float = 2.0**-12
    t_max: float = 2.0**12
    per_decade: int = 48
    p: tuple = (2.0,)
    q: float = 2.0
    r: float = 2.0
    m: int = 1
    kernel: str = "poisson"
    family: str = "standard"
    n_samples: int = 8
    K: int = 10
    a: float = 2.0
    seed: int = 0
    jobs: int = 1
    tol: tuple = ()
    out: str = "out"
    explicit: frozenset = field(default=frozenset(), compare=False)

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.d, self.L, self.N)

    @property
    def tgrid(self) -> LogTimeGrid:
        return LogTimeGrid.from_density(self.t_min, self.t_max, self.per_decade)

    @property
    def tolerances(self) -> dict:
        return dict(self.tol)


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig) if f.name not in ("subcommand", "target", "explicit", "tol"))


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "p":
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if key in ("d", "N", "per_decade", "m", "n_samples", "K", "seed", "jobs"):
            v = float(raw) if any(c in raw for c in ".eE") and not raw.lstrip("-").isdigit() else int(raw)
            if isinstance(v, float):
                if not v.is_integer():
                    raise ValueError
                v = int(v)
            return v
        if key in ("L", "t_min", "t_max", "q", "r", "a"):
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"invalid value for {key}: {raw!r}") from None


def _normalise_key(key: str) -> str:
    return key.strip().replace("-", "_")


def read_config_text(text: str) -> dict:
    """Parse the line-oriented ``key = value`` format into raw (string) entries."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[_normalise_key(k)] = v.strip()
    return out


def parse_config(path=None, overrides: dict | None = None, subcommand: str = "", target: str = "") -> RunConfig:
    """Build a validated RunConfig from a file (optional) and flag overrides.

    ``overrides`` maps config keys to values (strings are parsed as in the file);
    keys ``tol.<name>`` set tolerance overrides.
    """
    raw = read_config_text(Path(path).read_text()) if path else {}
    raw.update({_normalise_key(k): v for k, v in (overrides or {}).items() if v is not None})
    values, tol = {}, {}
    for k, v in raw.items():
        if k.startswith("tol."):
            name = k[4:]
            if name not in ex.DEFAULT_TOLERANCES:
                raise ValueError(f"unknown tolerance {name!r}; valid: {', '.join(sorted(ex.DEFAULT_TOLERANCES))}")
            tol[name] = float(v)
            continue
        if k not in CONFIG_KEYS:
            raise ValueError(f"unknown key {k!r}; valid keys: {', '.join(CONFIG_KEYS)}, tol.<name>")
        values[k] = _parse_value(k, v) if isinstance(v, str) else v
    if "p" in values and not isinstance(values["p"], tuple):
        values["p"] = tuple(float(x) for x in np.atleast_1d(values["p"]))
    cfg = replace(RunConfig(), subcommand=subcommand, target=target, tol=tuple(sorted(tol.items())),
                  explicit=frozenset(values) | frozenset(f"tol.{k}" for k in tol), **values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.d not in (1, 2):
        raise ValueError("dimension d must be 1 or 2")
    check_power_of_two(cfg.N, "N")
    if not (cfg.L > 0 and math.isfinite(cfg.L)):
        raise ValueError("L must be positive")
    if not (0 < cfg.t_min < cfg.t_max and math.isfinite(cfg.t_max)):
        raise ValueError("need 0 < t_min < t_max")
    if cfg.per_decade < 1:
        raise ValueError("per_decade must be at least 1")
    if not cfg.p:
        raise ValueError("p-list must not be empty")
    for p in cfg.p:
        check_exponent(p, "p")
    check_exponent(cfg.q, "q", allow_one=True)
    if not cfg.r >= 1:
        raise ValueError("r must be ≥ 1")
    if cfg.m < 1 or cfg.n_samples < 1 or cfg.K < 1:
        raise ValueError("m, n_samples and K must be positive")
    if not cfg.a > 1:
        raise ValueError("a must exceed 1")
    if cfg.jobs == 0 or cfg.jobs < -1:
        raise ValueError("jobs must be positive or -1")
    check_seed(cfg.seed)
    if cfg.kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {', '.join(KERNELS)}")
    if cfg.family != "standard" and cfg.family not in FAMILIES:
        raise ValueError(f"family must be one of standard, {', '.join(FAMILIES)}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def echo_config(cfg: RunConfig) -> str:
    lines = [f"# {cfg.subcommand} {cfg.target}".rstrip()]
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in CONFIG_KEYS]
    lines += [f"tol.{k} = {v!r}" for k, v in cfg.tol]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ dispatch


def _family(cfg: RunConfig):
    return standard_family() if cfg.family == "standard" else FAMILIES[cfg.family]()


def _experiment_kwargs(fn, cfg: RunConfig) -> dict:
    params = inspect.signature(fn).parameters
    kw = {}
    if "tol" in params:
        kw["tol"] = cfg.tolerances
    if "seed" in params:
        kw["seed"] = cfg.seed
    if cfg.is_set("p") and "ps" in params:
        kw["ps"] = list(cfg.p)
    if cfg.is_set("q"):
        if "qs" in params:
            kw["qs"] = [cfg.q]
        elif "q" in params:
            kw["q"] = cfg.q
    for key, name in (("r", "r"), ("m", "m"), ("L", "L"), ("N", "N"), ("a", "a"), ("n_samples", "n_samples")):
        if cfg.is_set(key) and name in params:
            kw[name] = getattr(cfg, key)
    if "n_jobs" in params:
        kw["n_jobs"] = cfg.jobs
    if cfg.is_set("family") and "family" in params:
        kw["family"] = _family(cfg)
    if any(cfg.is_set(k) for k in ("t_min", "t_max", "per_decade")) and "tgrid" in params:
        kw["tgrid"] = cfg.tgrid
    return kw


def run_experiment(cfg: RunConfig) -> ex.ExperimentReport:
    name = cfg.target
    if name not in ex.EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; available: {', '.join(ex.EXPERIMENTS)}")
    fn = ex.EXPERIMENTS[name]
    return fn(**_experiment_kwargs(fn.__wrapped__, cfg))


def run_kernels_check(cfg: RunConfig) -> ex.ExperimentReport:
    tg = cfg.tgrid
    if cfg.kernel == "phi":
        # the phi kernel needs h <= 1/1024 to resolve its transform
        grid = cfg.grid if (cfg.is_set("L") or cfg.is_set("N")) else GridSpec(1, 64.0, 2**17)
        k = kernels.phi_kernel(grid)
        deriv = kernels.phi_prime_kernel(grid)
        powers = (1.5, 2.5)
    elif cfg.kernel == "poisson":
        grid = cfg.grid
        k = kernels.SemigroupSpec.poisson(grid.d).g_kernel(grid)
        deriv = None
        powers = (grid.d + 1.0,)
    else:
        raise ValueError("kernels check supports --kernel phi or poisson")
    rep = ex.ExperimentReport("kernels_check", {"kernel": cfg.kernel, "d": grid.d, "L": grid.L, "N": grid.N,
                                                "q": cfg.q, "tgrid": [tg.t_min, tg.t_max, tg.K]}, seed=cfg.seed)
    hol = kernels.holder_check(k, seed=cfg.seed)
    hor = kernels.hormander_check(k, cfg.q, tg, seed=cfg.seed)
    radius = min(512.0, grid.L / 2)
    entries = [("holder_decay", hol.decay), ("holder_smoothness", hol.smoothness),
               ("holder_mean_over_h", hol.mean), ("hormander_size", hor.size),
               ("hormander_smoothness", hor.smoothness),
               (f"decay_power_{powers[0]:g}", kernels.decay_constant(k, powers[0], radius))]
    if deriv is not None:
        entries.append((f"derivative_decay_power_{powers[1]:g}", kernels.decay_constant(deriv, powers[1], radius)))
    for name, v in entries:
        rep.add_row(q=cfg.q, value=v, label=name)
        rep.checks[name] = ex.Check(float(v), math.inf, bool(math.isfinite(v)), "finite")
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    kernels.dump_kernel_csv(Path(cfg.out) / f"kernel_{cfg.kernel}.csv", grid, k.values)
    return rep


def run_gfunc(cfg: RunConfig) -> ex.ExperimentReport:
    grid = cfg.grid
    if cfg.kernel == "phi":
        op = kernels.phi_kernel(grid)
    elif cfg.kernel == "poisson":
        op = kernels.SemigroupSpec.poisson(grid.d)
    else:
        op = kernels.SemigroupSpec.heat(grid.d)
    target = VectorTarget(cfg.r, cfg.m)
    est = gfunc.estimate_constants(_family(cfg), op, list(cfg.p), cfg.q, grid, target, cfg.tgrid,
                                   cfg.n_samples, cfg.seed, cfg.jobs)
    rep = ex.ExperimentReport("gfunc_run", {"kernel": cfg.kernel, "family": cfg.family, "d": grid.d,
                                            "L": grid.L, "N": grid.N, "n_samples": cfg.n_samples,
                                            "tgrid": [cfg.t_min, cfg.t_max, cfg.per_decade]}, seed=cfg.seed)
    for e in est:
        rep.add_row(p=e.p, q=e.q, r=e.r, m=e.m, value=e.estimate, ratio=None,
                    label=f"argmax member {e.argmax}")
        rep.checks[f"finite_p{e.p:g}"] = ex.Check(e.estimate, math.inf, bool(math.isfinite(e.estimate)), "finite")
    rep.plot = {"p": [e.p for e in est], "estimate": [e.estimate for e in est],
                "ratios": [e.ratios for e in est]}
    return rep


def run_cotype(cfg: RunConfig) -> ex.ExperimentReport:
    if cfg.K > 20:
        raise ValueError("exact enumeration is limited to K <= 20")
    target = VectorTarget(cfg.r, cfg.m)
    est = martingale.cotype_estimate(target, cfg.q, None, cfg.K, cfg.n_samples, cfg.seed)
    rep = ex.ExperimentReport("martingale_cotype", {"K": cfg.K, "q": cfg.q, "r": cfg.r, "m": cfg.m,
                                                    "n_samples": cfg.n_samples}, seed=cfg.seed)
    rep.add_row(q=cfg.q, r=cfg.r, m=cfg.m, value=est.estimate, label=f"argmax member {est.argmax}")
    # energy identity for scalar martingales: sum_k E|d_k|^2 = E|f_K|^2
    worst = 0.0
    for ss in np.random.SeedSequence(cfg.seed).spawn(cfg.n_samples):
        mart = martingale.random_martingale(np.random.default_rng(ss), cfg.K, 1)
        dif = mart.differences()
        lhs = float(np.sum(np.mean(np.abs(dif) ** 2, axis=1)))
        rhs = float(np.mean(np.abs(mart.path()[-1]) ** 2))
        worst = max(worst, abs(lhs - rhs) / rhs)
    rep.add_row(q=2.0, value=worst, label="energy identity relative error")
    rep.checks["energy_identity"] = ex.check_le(worst, 1e-12)
    rep.checks["estimate_finite"] = ex.Check(est.estimate, math.inf, bool(math.isfinite(est.estimate)), "finite")
    rep.plot = {"ratios": est.ratios}
    return rep


def walsh_closed_form(q: float) -> float:
    """g-function of any nonconstant character: (Gamma(q) / q^q)^{1/q}."""
    return math.exp((math.lgamma(q) - q * math.log(q)) / q)


def run_walsh(cfg: RunConfig) -> ex.ExperimentReport:
    if cfg.K > 16:
        raise ValueError("Walsh check is limited to K <= 16")
    ref = walsh_closed_form(cfg.q)
    rep = ex.ExperimentReport("martingale_walsh", {"K": cfg.K, "q": cfg.q, "per_decade": cfg.per_decade},
                              seed=cfg.seed)
    worst_all = 0.0
    for K in range(1, cfg.K + 1):
        lev = martingale.walsh_levels(K)
        worst = 0.0
        for A in range(1, 2**K):
            s = int(lev[A])
            tg = LogTimeGrid.from_density(1e-6 / s, 50.0 / s, cfg.per_decade)
            g = martingale.walsh_g(martingale.walsh_character(K, A), cfg.q, tg).values
            worst = max(worst, float(np.max(np.abs(g - ref))))
        worst_all = max(worst_all, worst)
        rep.add_row(q=cfg.q, value=worst, reference=ref, label=f"K={K}")
    rep.checks["max_abs_err"] = ex.check_le(worst_all, 1e-6)
    return rep


def dispatch(cfg: RunConfig) -> int:
    runners = {"experiment": run_experiment, "kernels": run_kernels_check, "gfunc": run_gfunc}
    if cfg.subcommand == "martingale":
        runner = {"cotype": run_cotype, "walsh": run_walsh}.get(cfg.target)
    else:
        runner = runners.get(cfg.subcommand)
    if runner is None:
        raise ValueError(f"unknown subcommand {cfg.subcommand} {cfg.target}".rstrip())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(echo_config(cfg))
    t0 = time.perf_counter()
    rep = runner(cfg)
    rep.wall_time = time.perf_counter() - t0
    rep.write(out)
    for name, c in rep.checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'} {rep.name}.{name}: {c.value:.6g} ({c.kind} {c.limit:.6g})")
    print(f"{rep.name}: {'PASS' if rep.passed else 'FAIL'} in {rep.wall_time:.2f}s -> {out}")
    return 0 if rep.passed else 1


# ------------------------------------------------------------------ argument parsing


_FLAG_KEYS = {"d": int, "L": str, "N": str, "t_min": str, "t_max": str, "per_decade": str, "p": str,
              "q": str, "r": str, "m": str, "kernel": str, "family": str, "n_samples": str, "K": str,
              "a": str, "seed": str, "out": str}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    for key in _FLAG_KEYS:
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=key, default=None, type=str, help=f"override '{key}'")
    parser.add_argument("--jobs", type=str, default=None, help="worker processes (-1 for all cores)")
    parser.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                        help="override a pass/fail tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpstein", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    e = sub.add_parser("experiment", help="run a named verification experiment")
    e.add_argument("target", choices=list(ex.EXPERIMENTS))
    _common(e)
    k = sub.add_parser("kernels", help="structural kernel checks")
    k.add_argument("target", choices=["check"])
    _common(k)
    g = sub.add_parser("gfunc", help="g-function constant estimates over a test family")
    g.add_argument("target", choices=["run"])
    _common(g)
    m = sub.add_parser("martingale", help="martingale cotype and Walsh checks")
    m.add_argument("target", choices=["cotype", "walsh"])
    _common(m)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code) if exc.code is not None else 0
    overrides = {k: getattr(args, k) for k in _FLAG_KEYS if getattr(args, k) is not None}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    try:
        for item in args.tol:
            name, _, val = item.partition("=")
            if not _:
                raise ValueError(f"--tol expects NAME=VALUE, got {item!r}")
            overrides[f"tol.{name.strip()}"] = val
        cfg = parse_config(args.config, overrides, args.subcommand, args.target)
        return dispatch(cfg)
    except (ValueError, TypeError, OSError, kernels.ResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
