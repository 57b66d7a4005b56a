"""Command-line experiment harness.

Each subcommand writes one CSV (or a metric/value report) with a ``#``
header recording the toolkit version and the full resolved configuration.
Settings are layered: built-in defaults, then ``--defaults figN``, then the
``--config`` file, then ``--set key=value`` and the global flags.

Exit codes: 0 success, 2 configuration error, 3 numerical-regime error,
4 validation FAIL.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np
from scipy import stats

from aign import __version__
from aign.capacity import (
    EXPONENTIAL_INPUT,
    UNIFORM_INPUT,
    InputLaw,
    RegimeError,
    capacity_lower_bound,
    capacity_upper_bound,
    exponential_input_valid,
    mutual_information,
)
from aign.channel import ChannelParams, FirstPassageTruncated, to_ig, wiener_first_passage_times
from aign.ig_core import DomainError, ig_cdf, ig_entropy, ig_sample
from aign.receiver import (
    Constellation,
    DegenerateSampleError,
    ThresholdError,
    averaged_params,
    estimate_noise_params,
    sep_analytic,
    sep_upper_bound,
    simulate_detection,
)

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_FAIL = 0, 2, 3, 4
KS_COEFF = 1.63  # alpha = 0.01 one-sample KS critical value times sqrt(n)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

COMMON = {"seed": 0, "workers": 1, "bits": False}

DEFAULTS = {
    "mi-sweep": {"sweep": "velocity", "start": 1.0, "stop": 10.0, "num": 10, "values": None,
                 "d": 1.0, "v": 1.0, "sigma2": 1.0, "m": 1.0},
    "sep-sweep": {"T": [2], "times": None, "priors": None, "start": 1.0, "stop": 8.0, "num": 8,
                  "values": None, "d": 1.0, "sigma2": 1.0, "trials": 100_000},
    "diversity": {"times": [1.0, 2.0], "M": [1, 2, 4], "start": 0.5, "stop": 8.0, "num": 31,
                  "values": None, "d": 1.0, "sigma2": 1.0, "trials": 100_000,
                  "fit_lo": 1e-5, "fit_hi": 1e-1},
    "validate": {"d": 1.0, "v": 1.0, "sigma2": 1.0, "n": 10_000, "dt": 1e-3, "bridge": True},
    "estimate": {"k": 100_000, "t0": 0.0, "d": 1.0, "v": 1.0, "sigma2": 1.0, "arrivals": None},
}

PRESETS = {
    "fig2": ("mi-sweep", {"sweep": "velocity", "start": 0.1, "stop": 10.0, "num": 100, "sigma2": 1.0}),
    "fig3": ("mi-sweep", {"sweep": "sigma2", "v": 1.0, "start": 0.1, "stop": 20.0, "num": 100}),
    "fig4": ("mi-sweep", {"sweep": "sigma2", "v": 10.0, "start": 1.0, "stop": 20.0, "num": 20}),
    "fig6": ("sep-sweep", {"T": [2, 4, 8], "start": 1.0, "stop": 8.0, "num": 15}),
    "fig7": ("diversity", {"M": [1, 2, 4], "start": 0.5, "stop": 8.0, "num": 31}),
}

# which command-level key the global --trials flag drives
TRIALS_KEY = {"sep-sweep": "trials", "diversity": "trials", "validate": "n", "estimate": "k"}


def _parse_value(key: str, raw: str, like, where: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, str):
            return raw
        if raw.lower() in ("", "none"):
            return None
        items = [s for s in re.split(r"[,\s]+", raw) if s]
        if key in ("T", "M"):
            return [int(s) for s in items]
        return [float(s) for s in items]
    except ValueError:
        raise ConfigError(f"{where}: field '{key}': cannot parse {raw!r}") from None


def _read_config_file(path: str, command: str) -> dict[str, tuple[str, str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    headerless = not re.match(r"\s*(#.*\n|;.*\n|\s*\n)*\s*\[", text)
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    offset = 1 if headerless else 0
    try:
        parser.read_string(("[aign]\n" if headerless else "") + text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if isinstance(exc, configparser.ParsingError) and exc.errors:
            line = exc.errors[0][0]
        where = f"{path}:{line - offset}" if line else path
        raise ConfigError(f"{where}: {exc.message.splitlines()[0]}") from None
    lines = text.splitlines()

    def lineno(key):
        pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]")
        for i, ln in enumerate(lines, 1):
            if pat.match(ln):
                return i
        return "?"

    out = {}
    for section in ("aign", command):
        if parser.has_section(section):
            for key, raw in parser.items(section):
                out[key] = (raw, f"{path}:{lineno(key)}")
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[command])
    if args.defaults:
        if args.defaults not in PRESETS:
            raise ConfigError(f"unknown preset {args.defaults!r}; choose from {sorted(PRESETS)}")
        target, preset = PRESETS[args.defaults]
        if target != command:
            raise ConfigError(f"preset {args.defaults} belongs to '{target}', not '{command}'")
        cfg.update(preset)
    sources = {}
    if args.config:
        sources.update(_read_config_file(args.config, command))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        sources[key.strip()] = (raw, "--set")
    for key, (raw, where) in sources.items():
        if key not in cfg:
            raise ConfigError(f"{where}: unknown field '{key}' for {command}")
        like = cfg[key] if cfg[key] is not None else []
        if key in DEFAULTS[command] and DEFAULTS[command][key] is not None:
            like = DEFAULTS[command][key]
        cfg[key] = _parse_value(key, raw, like, where)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None and command in TRIALS_KEY:
        cfg[TRIALS_KEY[command]] = args.trials
    if args.bits:
        cfg["bits"] = True
    if args.workers is not None:
        cfg["workers"] = args.workers
    if command == "validate" and args.no_bridge:
        cfg["bridge"] = False
    _validate_config(command, cfg)
    return cfg


def _positive(cfg, *keys):
    for key in keys:
        value = cfg[key]
        if value is None or not np.isfinite(value) or value <= 0:
            raise ConfigError(f"field '{key}' must be positive, got {value!r}")


def _validate_config(command: str, cfg: dict):
    if cfg["workers"] < 1:
        raise ConfigError("field 'workers' must be at least 1")
    if cfg["seed"] < 0:
        raise ConfigError("field 'seed' must be non-negative")
    if "start" in cfg:
        values = sweep_values(cfg)
        if values.size == 0 or np.any(np.diff(values) <= 0):
            raise ConfigError("sweep range must be non-empty and increasing")
        if np.any(values <= 0):
            raise ConfigError("sweep values must be positive")
    if command == "mi-sweep":
        if cfg["sweep"] not in ("velocity", "sigma2"):
            raise ConfigError("field 'sweep' must be 'velocity' or 'sigma2'")
        _positive(cfg, "d", "v", "sigma2", "m")
    elif command == "sep-sweep":
        _positive(cfg, "d", "sigma2")
        if cfg["trials"] < 1:
            raise ConfigError("field 'trials' must be at least 1")
        if any(T < 2 for T in cfg["T"]):
            raise ConfigError("field 'T' must list sizes >= 2")
        if cfg["times"] is not None and len(cfg["T"]) != 1:
            raise ConfigError("field 'times' can only be given with a single T")
    elif command == "diversity":
        _positive(cfg, "d", "sigma2", "fit_lo", "fit_hi")
        if cfg["trials"] < 1:
            raise ConfigError("field 'trials' must be at least 1")
        if len(cfg["times"]) != 2:
            raise ConfigError("field 'times' must hold exactly two release times")
        if any(M < 1 for M in cfg["M"]):
            raise ConfigError("field 'M' must list molecule counts >= 1")
    elif command == "validate":
        _positive(cfg, "d", "v", "sigma2", "dt")
        if cfg["n"] < 1:
            raise ConfigError("field 'n' must be at least 1")
    elif command == "estimate":
        _positive(cfg, "d", "v", "sigma2")
        if cfg["t0"] < 0:
            raise ConfigError("field 't0' must be non-negative")
        k = len(cfg["arrivals"]) if cfg["arrivals"] is not None else cfg["k"]
        if k < 2:
            raise ConfigError("estimation needs k >= 2 training arrivals (lam is undefined for k = 1)")


def sweep_values(cfg: dict) -> np.ndarray:
    if cfg.get("values") is not None:
        return np.asarray(cfg["values"], dtype=float)
    if cfg["num"] < 1:
        raise ConfigError("field 'num' must be at least 1")
    return np.linspace(cfg["start"], cfg["stop"], int(cfg["num"]))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """RFC-4180 cell text; scientific notation below 1e-4, blank for missing."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not np.isfinite(x):
        return ""
    return format(x, ".10g")


def _cfg_text(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(fmt(i) for i in v)
    return fmt(v)


def render(command: str, cfg: dict, header: list[str], rows: list[list], footer: list[str] = ()) -> str:
    buf = io.StringIO()
    buf.write(f"# aign {__version__} {command}\n")
    for key in sorted(cfg):
        if key == "workers":
            continue
        buf.write(f"# {key} = {_cfg_text(cfg[key])}\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(c) for c in row])
    for line in footer:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _mi_point(value: float, cfg: dict) -> list:
    v, sigma2 = (value, cfg["sigma2"]) if cfg["sweep"] == "velocity" else (cfg["v"], value)
    p = to_ig(ChannelParams(cfg["d"], v, sigma2))
    m = cfg["m"]
    row = [
        capacity_upper_bound(m, p),
        capacity_lower_bound(m, p),
        mutual_information(InputLaw(UNIFORM_INPUT, m), p),
        mutual_information(InputLaw(EXPONENTIAL_INPUT, m), p) if exponential_input_valid(m, p) else None,
        ig_entropy(p),
    ]
    scale = 1.0 / np.log(2.0) if cfg["bits"] else 1.0
    return [value] + [None if r is None else r * scale for r in row]


def cmd_mi_sweep(cfg: dict) -> tuple[str, int]:
    values = sweep_values(cfg)
    rows = _map(partial(_mi_point, cfg=cfg), list(values), cfg["workers"])
    name = "v" if cfg["sweep"] == "velocity" else "sigma2"
    header = [name, "upper_bound", "lower_bound", "mi_uniform", "mi_exponential", "h_noise"]
    return render("mi-sweep", cfg, header, rows), EXIT_OK


def _constellation(T: int, cfg: dict) -> Constellation:
    if cfg.get("times") is not None:
        times = cfg["times"]
        if len(times) != T:
            raise ConfigError(f"field 'times' has {len(times)} entries but T = {T}")
    else:
        times = np.linspace(1.0, 2.0, T)
    priors = cfg.get("priors")
    if priors is None:
        priors = [1.0 / T] * T
    try:
        return Constellation(tuple(times), tuple(priors))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _sep_point(job: tuple, cfg: dict) -> list:
    t_idx, T, v_idx, v = job
    c = _constellation(T, cfg)
    p = to_ig(ChannelParams(cfg["d"], v, cfg["sigma2"]))
    run = simulate_detection(c, p, 1, cfg["trials"], cfg["seed"], t_idx, v_idx)
    q, se = run.rate("ml")
    nonincreasing = all(b <= a + 1e-12 for a, b in zip(c.priors, c.priors[1:]))
    bound = sep_upper_bound(c, p) if nonincreasing else None
    analytic = sep_analytic(c, p) if T == 2 else None
    return [T, v, q, se, bound, analytic]


def cmd_sep_sweep(cfg: dict) -> tuple[str, int]:
    values = sweep_values(cfg)
    jobs = [(ti, T, vi, float(v)) for ti, T in enumerate(cfg["T"]) for vi, v in enumerate(values)]
    rows = _map(partial(_sep_point, cfg=cfg), jobs, cfg["workers"])
    header = ["T", "v", "sep_simulated", "sep_stderr", "sep_bound", "sep_analytic"]
    return render("sep-sweep", cfg, header, rows), EXIT_OK


def _diversity_point(job: tuple, cfg: dict) -> list:
    m_idx, M, v_idx, v = job
    c = Constellation.equiprobable(cfg["times"])
    p = to_ig(ChannelParams(cfg["d"], v, cfg["sigma2"]))
    run = simulate_detection(c, p, M, cfg["trials"], cfg["seed"], m_idx, v_idx)
    ml, ml_se = run.rate("ml")
    lin, lin_se = run.rate("linear")
    return [v, M, ml, ml_se, lin, lin_se, sep_analytic(c, averaged_params(p, M))]


def fit_log_slope(x: np.ndarray, pe: np.ndarray, lo: float, hi: float) -> tuple[float | None, int]:
    """Least-squares slope of ``log pe`` against ``x`` over ``lo <= pe <= hi``."""
    mask = (pe >= lo) & (pe <= hi) & (pe > 0)
    if np.count_nonzero(mask) < 2:
        return None, int(np.count_nonzero(mask))
    return float(np.polyfit(x[mask], np.log(pe[mask]), 1)[0]), int(np.count_nonzero(mask))


def cmd_diversity(cfg: dict) -> tuple[str, int]:
    values = sweep_values(cfg)
    jobs = [(mi, M, vi, float(v)) for mi, M in enumerate(cfg["M"]) for vi, v in enumerate(values)]
    rows = _map(partial(_diversity_point, cfg=cfg), jobs, cfg["workers"])
    gap = cfg["times"][1] - cfg["times"][0]
    table = np.array([[r[0], r[1], r[4], r[6]] for r in rows], dtype=float)
    footer = [f"fit: log(P_e) vs c v^2/sigma2 with c = {fmt(gap)}, P_e in [{fmt(cfg['fit_lo'])}, {fmt(cfg['fit_hi'])}]"]
    for M in cfg["M"]:
        sel = table[:, 1] == M
        x = gap * table[sel, 0] ** 2 / cfg["sigma2"]
        s_sim, n_sim = fit_log_slope(x, table[sel, 2], cfg["fit_lo"], cfg["fit_hi"])
        s_an, n_an = fit_log_slope(x, table[sel, 3], cfg["fit_lo"], cfg["fit_hi"])
        footer.append(
            f"slope M={M} simulated={fmt(s_sim)} (points={n_sim}) analytic={fmt(s_an)} (points={n_an})"
        )
    header = ["v", "M", "sep_ml", "sep_ml_stderr", "sep_linear", "sep_linear_stderr", "sep_linear_analytic"]
    return render("diversity", cfg, header, rows, footer), EXIT_OK


def cmd_validate(cfg: dict) -> tuple[str, int]:
    cp = ChannelParams(cfg["d"], cfg["v"], cfg["sigma2"])
    p = to_ig(cp)
    if cfg["dt"] > 0.01 * p.mu:
        print(f"aign: warning: dt={cfg['dt']:g} exceeds mu/100={0.01 * p.mu:g}; expect discretization bias",
              file=sys.stderr)
    n = cfg["n"]
    times = wiener_first_passage_times(cp, cfg["dt"], n, cfg["seed"], bridge=cfg["bridge"], strict_dt=False)
    ks = float(stats.kstest(times, lambda t: ig_cdf(t, p)).statistic)
    crit = KS_COEFF / np.sqrt(n)
    mean, var = float(times.mean()), float(times.var(ddof=1))
    mean_se = np.sqrt(var / n)
    m4 = float(np.mean((times - mean) ** 4))
    var_se = np.sqrt(max(m4 - var**2, 0.0) / n)
    ks_ok = ks < crit
    mean_ok = abs(mean - p.mu) <= 5 * mean_se
    var_ok = abs(var - p.var) <= 5 * var_se
    verdict = "PASS" if ks_ok and mean_ok and var_ok else "FAIL"
    rows = [
        ["ks_statistic", ks], ["ks_critical", crit], ["ks_pass", ks_ok],
        ["mean_empirical", mean], ["mean_analytic", p.mu], ["mean_stderr", mean_se], ["mean_pass", mean_ok],
        ["var_empirical", var], ["var_analytic", p.var], ["var_stderr", var_se], ["var_pass", var_ok],
        ["verdict", verdict],
    ]
    return render("validate", cfg, ["metric", "value"], rows), EXIT_OK if verdict == "PASS" else EXIT_FAIL


def cmd_estimate(cfg: dict) -> tuple[str, int]:
    truth = to_ig(ChannelParams(cfg["d"], cfg["v"], cfg["sigma2"]))
    t0 = cfg["t0"]
    fixture = cfg["arrivals"] is not None
    if fixture:
        arrivals = np.asarray(cfg["arrivals"], dtype=float)
    else:
        arrivals = t0 + ig_sample(truth, cfg["k"], cfg["seed"])
    try:
        est = estimate_noise_params(t0, arrivals)
    except DegenerateSampleError as exc:
        raise DegenerateSampleError(
            f"{exc}; use more training molecules (larger k) or check the arrival times"
        ) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    mu_err = None if fixture else abs(est.mu - truth.mu) / truth.mu
    lam_err = None if fixture else abs(est.lam - truth.lam) / truth.lam
    rows = [
        ["k", arrivals.size], ["t0", t0],
        ["mu_true", None if fixture else truth.mu], ["lam_true", None if fixture else truth.lam],
        ["mu_hat", est.mu], ["lam_hat", est.lam],
        ["mu_rel_error", mu_err], ["lam_rel_error", lam_err],
    ]
    return render("estimate", cfg, ["metric", "value"], rows), EXIT_OK


COMMANDS = {
    "mi-sweep": (cmd_mi_sweep, "mutual information and capacity bounds over v or sigma2"),
    "sep-sweep": (cmd_sep_sweep, "T-ary symbol error probability: simulation, bound, exact (T=2)"),
    "diversity": (cmd_diversity, "multi-molecule ML vs linear-filter error rates and slopes"),
    "validate": (cmd_validate, "check simulated first-passage times against the IG law"),
    "estimate": (cmd_estimate, "estimate (mu, lam) from training arrivals"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out", default="-", help="output path ('-' for stdout)")
    common.add_argument("--trials", type=int, help="Monte Carlo count for the command")
    common.add_argument("--bits", action="store_true", help="report information in bits")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--defaults", metavar="FIG", help=f"figure preset: {', '.join(sorted(PRESETS))}")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    parser = argparse.ArgumentParser(prog="aign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"aign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if name == "validate":
            sp.add_argument("--no-bridge", action="store_true", help="disable the Brownian-bridge crossing correction")
        else:
            sp.set_defaults(no_bridge=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        text, code = COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"aign: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RegimeError, DomainError, ThresholdError, DegenerateSampleError, FirstPassageTruncated) as exc:
        print(f"aign: numerical-regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    if code == EXIT_FAIL:
        print("aign: validation FAIL", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
