"""Command-line surface: detect / design / evaluate / sweep / verify.

Exit codes are a stable contract: 0 alarm (or success), 2 no alarm, 1 any
error.  Every file-writing run leaves a ``<out>.manifest.json`` beside its
output recording the resolved parameters, seeds, a config hash, and SHA-256
digests of the outputs; re-running the recorded argv reproduces the outputs
byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
import sys
from pathlib import Path

import click

from .design import (
    estimate_appendix_constants,
    mu_asymptotic,
    mu_for_pdc,
    threshold_for_far,
)
from .detectors import (
    DetectorKind,
    PolicyParams,
    run_detector,
    verify_trajectory,
)
from .distributions import (
    Kind,
    log_likelihood_ratio,
    parse_family,
    parse_spec,
)
from .errors import ConfigError, ParseError, RdecusumError
from .evaluation import (
    OC_COLUMNS,
    DetectorVariant,
    SweepPlan,
    operating_characteristic_sweep,
)
from .manifest import RunManifest, file_sha256, manifest_path_for
from .series import add_poisson_noise, emit_csv, format_value, ingest_csv
from .simulate import COIN_STREAM, trial_rng

EXIT_ALARM = 0
EXIT_ERROR = 1
EXIT_NO_ALARM = 2

SEED_ENV_VAR = "RDECUSUM_SEED"

TRAJECTORY_COLUMNS = ("index", "sampled", "statistic", "alarmed")


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return 0


def _default_workers() -> int:
    return os.cpu_count() or 1


@click.group(name="rdecusum")
@click.version_option(package_name="rdecusum")
def cli() -> None:
    """Robust data-efficient quickest change detection."""


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(), help="CSV time series.")
@click.option("--f", "f_text", required=True, help="Pre-change law, e.g. pois:1 or norm:0.")
@click.option("--gbar", "gbar_text", required=True, help="Least favorable post-change law.")
@click.option("--threshold", type=float, required=True, help="Alarm threshold A.")
@click.option("--mu", type=float, default=0.0, show_default=True, help="Skip-recovery rate.")
@click.option("--h", type=float, default=0.0, show_default=True, help="Statistic floor depth.")
@click.option(
    "--kind",
    type=click.Choice([k.value for k in DetectorKind]),
    default=DetectorKind.RDE.value,
    show_default=True,
)
@click.option("--prob", type=float, default=0.5, show_default=True, help="Fractional coin bias.")
@click.option("--seed", type=int, default=None, help=f"Coin/noise seed (default ${SEED_ENV_VAR} or 0).")
@click.option("--noise-rate", type=float, default=0.0, show_default=True, help="Add Poisson noise first.")
@click.option("--index-col", default="day", show_default=True)
@click.option("--value-col", default="cases", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Trajectory CSV path.")
def detect(
    input_path: str,
    f_text: str,
    gbar_text: str,
    threshold: float,
    mu: float,
    h: float,
    kind: str,
    prob: float,
    seed: int | None,
    noise_rate: float,
    index_col: str,
    value_col: str,
    out_path: str,
) -> None:
    """Stream a CSV series through a detector; write the per-step trajectory.

    Prints the detection index (or "none") and the number of observations
    used.  Exit code 0 on alarm, 2 on no alarm, 1 on error.
    """
    seed = _resolve_seed(seed)
    f = parse_spec(f_text)
    gbar = parse_spec(gbar_text)
    detector_kind = DetectorKind(kind)
    if detector_kind is DetectorKind.ROBUST and (mu != 0 or h != 0):
        click.echo("warning: robust-cusum ignores --mu and --h", err=True)
        mu = h = 0.0
    params = PolicyParams(threshold, mu=mu, h=h, kind=detector_kind, sample_prob=prob)
    series = ingest_csv(input_path, index_col, value_col, require_counts=f.kind is Kind.POISSON)
    if noise_rate > 0:
        series = add_poisson_noise(series, noise_rate, seed)
    pairs = ((r.value, log_likelihood_ratio(f, gbar, r.value)) for r in series)
    coin_rng = (
        trial_rng(seed, 0, COIN_STREAM) if detector_kind is DetectorKind.FRACTIONAL else None
    )
    trajectory = run_detector(params, pairs, max_steps=len(series), coin_rng=coin_rng)
    rows = [
        (
            series[i].index,
            int(trajectory.sampled_flags[i]),
            trajectory.statistic_path[i],
            int(not trajectory.censored and i == trajectory.steps - 1),
        )
        for i in range(trajectory.steps)
    ]
    emit_csv(rows, TRAJECTORY_COLUMNS, out_path)
    parameters = {
        "input": str(input_path),
        "input_sha256": file_sha256(input_path),
        "f": str(f),
        "gbar": str(gbar),
        "threshold": threshold,
        "mu": mu,
        "h": h,
        "kind": detector_kind.value,
        "prob": prob,
        "seed": seed,
        "noise_rate": noise_rate,
        "index_col": index_col,
        "value_col": value_col,
        "out": str(out_path),
    }
    _write_manifest("detect", parameters, seed, out_path)
    if trajectory.censored:
        click.echo(f"no alarm in {trajectory.steps} steps; samples_used={trajectory.samples_used}")
        sys.exit(EXIT_NO_ALARM)
    alarm_index = series[trajectory.steps - 1].index
    click.echo(f"alarm at index {alarm_index}; samples_used={trajectory.samples_used}")
    sys.exit(EXIT_ALARM)


@cli.command()
@click.option("--alpha", type=float, required=True, help="False alarm rate constraint.")
@click.option("--beta", type=float, required=True, help="Pre-change duty cycle constraint.")
@click.option("--f", "f_text", required=True)
@click.option("--gbar", "gbar_text", required=True)
@click.option("--h", type=float, default=0.0, show_default=True)
@click.option(
    "--mode",
    type=click.Choice(["asymptotic", "montecarlo"]),
    default="asymptotic",
    show_default=True,
)
@click.option("--trials", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None, help="Trial parallelism (default: CPUs).")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the CSV here.")
def design(
    alpha: float,
    beta: float,
    f_text: str,
    gbar_text: str,
    h: float,
    mode: str,
    trials: int,
    seed: int | None,
    workers: int | None,
    out_path: str | None,
) -> None:
    """Turn (alpha, beta) constraints into a threshold and a mu bound."""
    seed = _resolve_seed(seed)
    f = parse_spec(f_text)
    gbar = parse_spec(gbar_text)
    threshold = threshold_for_far(alpha)
    mu_bound = mu_asymptotic(beta, f, gbar)
    row: list = [alpha, beta, h, mode, threshold, mu_bound]
    header = ["alpha", "beta", "h", "mode", "threshold", "mu_bound_asymptotic"]
    if mode == "montecarlo":
        constants = estimate_appendix_constants(
            f, gbar, h, n_trials=trials, seed=seed, workers=workers or _default_workers()
        )
        row += [
            mu_for_pdc(beta, constants),
            constants.c1,
            constants.c1_ci_halfwidth,
            constants.c2,
            constants.c2_ci_halfwidth,
            constants.p_llr_negative,
            trials,
            seed,
        ]
        header += [
            "mu_bound_montecarlo",
            "c1",
            "c1_ci",
            "c2",
            "c2_ci",
            "p_llr_negative",
            "trials",
            "seed",
        ]
    text = emit_csv([row], header, out_path)
    if out_path is None:
        click.echo(text, nl=False)
    else:
        parameters = {
            "alpha": alpha,
            "beta": beta,
            "f": str(f),
            "gbar": str(gbar),
            "h": h,
            "mode": mode,
            "trials": trials,
            "seed": seed,
            "out": str(out_path),
        }
        _write_manifest("design", parameters, seed, out_path)


def _plan_from_config(path: str) -> tuple[SweepPlan, dict]:
    """Parse the key-value experiment schema; errors carry section.key paths."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    def need(section: str, key: str) -> str:
        if not parser.has_option(section, key):
            raise ConfigError(f"{section}.{key}: required key is missing")
        return parser.get(section, key)

    def grab(section: str, key: str, default: str | None = None) -> str | None:
        return parser.get(section, key) if parser.has_option(section, key) else default

    def as_float(section: str, key: str, text: str) -> float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: not a number: {text!r}") from exc

    def as_int(section: str, key: str, text: str) -> int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: not an integer: {text!r}") from exc

    def float_list(section: str, key: str, text: str) -> tuple[float, ...]:
        return tuple(as_float(section, key, part.strip()) for part in text.split(",") if part.strip())

    try:
        f = parse_spec(need("data", "f"))
        family = parse_family(need("data", "family"))
        true_g = parse_spec(need("data", "true_g"))
    except RdecusumError as exc:
        raise ConfigError(f"data: {exc}") from exc

    kind_text = need("detectors", "kinds")
    kinds = [part.strip() for part in kind_text.split(",") if part.strip()]
    if not kinds:
        raise ConfigError("detectors.kinds: at least one detector kind is required")
    h = as_float("detectors", "h", grab("detectors", "h", "0") or "0")
    prob = as_float("detectors", "prob", grab("detectors", "prob", "0.5") or "0.5")
    mu_text = grab("detectors", "mu")
    beta_text = grab("detectors", "beta")
    detectors: list[DetectorVariant] = []
    from .distributions import lfl_of_family

    gbar = lfl_of_family(family)
    for kind in kinds:
        try:
            detector_kind = DetectorKind(kind)
        except ValueError as exc:
            raise ConfigError(f"detectors.kinds: unknown kind {kind!r}") from exc
        if detector_kind is DetectorKind.RDE:
            if mu_text:
                for mu in float_list("detectors", "mu", mu_text):
                    detectors.append(
                        DetectorVariant(f"rde(mu={mu:g})", detector_kind, mu=mu, h=h)
                    )
            elif beta_text:
                for beta in float_list("detectors", "beta", beta_text):
                    mu = mu_asymptotic(beta, f, gbar)
                    detectors.append(
                        DetectorVariant(f"rde(beta={beta:g})", detector_kind, mu=mu, h=h)
                    )
            else:
                raise ConfigError("detectors.mu: rde needs either mu or beta")
        elif detector_kind is DetectorKind.ROBUST:
            detectors.append(DetectorVariant("robust-cusum", detector_kind))
        else:
            detectors.append(
                DetectorVariant(f"fractional(p={prob:g})", detector_kind, sample_prob=prob)
            )

    thresholds_text = grab("grid", "thresholds")
    targets_text = grab("grid", "target_fars")
    if bool(thresholds_text) == bool(targets_text):
        raise ConfigError("grid.thresholds: give exactly one of thresholds or target_fars")
    thresholds = float_list("grid", "thresholds", thresholds_text) if thresholds_text else ()
    target_fars = float_list("grid", "target_fars", targets_text) if targets_text else ()
    bracket_text = grab("grid", "bracket", "1, 12") or "1, 12"
    bracket_vals = float_list("grid", "bracket", bracket_text)
    if len(bracket_vals) != 2:
        raise ConfigError("grid.bracket: expected two numbers, e.g. '2, 10'")
    tol = as_float("grid", "tol", grab("grid", "tol", "0.05") or "0.05")

    n_trials = as_int("run", "n_trials", grab("run", "n_trials", "5000") or "5000")
    plan = SweepPlan(
        f=f,
        family=family,
        true_g=true_g,
        detectors=tuple(detectors),
        thresholds=thresholds,
        target_fars=target_fars,
        bracket=(bracket_vals[0], bracket_vals[1]),
        tol=tol,
        n_trials=n_trials,
        far_max_steps=as_int("run", "far_max_steps", grab("run", "far_max_steps", "1000000") or "1000000"),
        wadd_max_steps=as_int("run", "wadd_max_steps", grab("run", "wadd_max_steps", "100000") or "100000"),
        pdc_horizon=as_int("run", "pdc_horizon", grab("run", "pdc_horizon", "100000") or "100000"),
        pdc_trials=as_int("run", "pdc_trials", grab("run", "pdc_trials", str(max(200, n_trials // 5))) or "1000"),
        renewal_cycles=as_int("run", "renewal_cycles", grab("run", "renewal_cycles", "100000") or "100000"),
        base_seed=as_int("run", "seed", grab("run", "seed", "0") or "0"),
    )
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    return plan, raw


def _run_plan(config_path: str, out_path: str, workers: int | None, single_point: bool) -> None:
    plan, raw = _plan_from_config(config_path)
    if single_point and (len(plan.thresholds) + len(plan.target_fars)) != 1:
        raise ConfigError("grid.thresholds: evaluate expects exactly one grid point; use sweep")
    rows = operating_characteristic_sweep(plan, workers=workers or _default_workers())
    emit_csv([tuple(r.to_dict()[c] for c in OC_COLUMNS) for r in rows], OC_COLUMNS, out_path)
    parameters = {
        "config": str(config_path),
        "config_file_sha256": file_sha256(config_path),
        "resolved": raw,
        "out": str(out_path),
    }
    _write_manifest("sweep", parameters, plan.base_seed, out_path)
    click.echo(f"wrote {len(rows)} rows to {out_path}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--workers", type=int, default=None, help="Trial parallelism (default: CPUs).")
def evaluate(config_path: str, out_path: str, workers: int | None) -> None:
    """Run the estimators for a single configured operating point."""
    _run_plan(config_path, out_path, workers, single_point=True)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--workers", type=int, default=None, help="Trial parallelism (default: CPUs).")
def sweep(config_path: str, out_path: str, workers: int | None) -> None:
    """Tabulate (FAR, WADD, PDC) across the configured threshold grid."""
    _run_plan(config_path, out_path, workers, single_point=False)


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(), help="Trajectory CSV.")
@click.option("--threshold", type=float, required=True)
@click.option("--mu", type=float, default=0.0, show_default=True)
@click.option("--h", type=float, default=0.0, show_default=True)
@click.option(
    "--kind",
    type=click.Choice([k.value for k in DetectorKind]),
    default=DetectorKind.RDE.value,
    show_default=True,
)
@click.option("--prob", type=float, default=0.5, show_default=True)
def verify(input_path: str, threshold: float, mu: float, h: float, kind: str, prob: float) -> None:
    """Machine-check a detect trajectory against the detector invariants."""
    params = PolicyParams(
        threshold, mu=mu, h=h, kind=DetectorKind(kind), sample_prob=prob
    )
    statistics: list[float] = []
    sampled: list[bool] = []
    alarmed: list[bool] = []
    with open(input_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{input_path}: empty trajectory") from None
        if tuple(h.strip() for h in header) != TRAJECTORY_COLUMNS:
            raise ParseError(f"{input_path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                sampled.append(bool(int(row[1])))
                statistics.append(float(row[2]))
                alarmed.append(bool(int(row[3])))
            except (ValueError, IndexError):
                raise ParseError(f"{input_path}:{line_no}: malformed row {row!r}") from None
    problems = verify_trajectory(statistics, sampled, alarmed, params)
    if problems:
        for p in problems:
            click.echo(f"violation: {p}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f"ok: {len(statistics)} rows satisfy the detector invariants")


def _write_manifest(command: str, parameters: dict, seed: int | None, out_path: str) -> None:
    manifest = RunManifest.build(
        command, parameters, seed, output_paths={Path(out_path).name: Path(out_path)}
    )
    manifest.write(manifest_path_for(out_path))


def main() -> None:
    """Console entry point with the documented exit-code contract."""
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_ERROR)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_ERROR)
    except RdecusumError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)


if __name__ == "__main__":
    main()
