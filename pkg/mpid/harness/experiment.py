import csv
import logging
import os
import warnings
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..analysis.classical import run_classical_detector
from ..analysis.fixed_point import predict_convergence
from ..detection.gmpid import IterationOptions, gmpid_run, solve_variances
from ..detection.lmmse import lmmse_detect, predict_mmse_mse
from ..detection.sagmpid import RELAXATION_MODES, choose_relaxation, sa_gmpid_run
from ..helpers.errors import ConfigError
from ..helpers.inputs import parse_list, read_spec
from ..helpers.rng import derive_trial_seed
from ..model.messages import mse
from ..model.system import SystemConfig, generate_instance

logger = logging.getLogger(__name__)

DETECTORS = ("lmmse", "gmpid", "sa_gmpid", "jacobi", "richardson")
ITERATIVE = ("gmpid", "sa_gmpid", "jacobi", "richardson")
CSV_FIELDS = ("trial_id", "detector", "prior_var", "iteration", "mse", "mul_count_cumulative", "verdict")
PREDICTION_FIELDS = (
    "n_users", "n_antennas", "beta", "noise_var", "prior_var", "snr_prior",
    "v_hat_mmse", "v_hat", "v_s", "gamma", "gamma_tilde", "w_star",
    "rho_gmpid_asymptotic", "rho_sa_asymptotic", "beta_threshold_met", "sufficient_condition_met",
)


def _fmt(value):
    """17 significant digits, enough to round-trip a double."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """
    One Monte-Carlo experiment.

    Parameters
    ----------
    name: str
        Experiment name, used in logs and the summary.
    detectors: tuple of str
        Subset of lmmse, gmpid, sa_gmpid, jacobi, richardson.
    cfg: SystemConfig
        System parameters; its seed is the master seed of the experiment.
    prior_var_sweep: tuple of float
        Prior variances to run every trial at.
    n_trials: int, default=1
        Number of independent instances.
    max_iters: int, default=200
        Iteration cap of the iterative detectors.
    output_path: str, default="results.csv"
        CSV destination; the summary goes next to it.
    tol: float, default=1e-8
        Relative convergence tolerance.
    relaxation_mode: str, default="asymptotic"
        How SA-GMPID picks w; also selects the Richardson step.
    schedule: str, default="presolved"
        Variance schedule of the message passing detectors.
    workers: int, default=1
        Threads running trials concurrently.
    """
    name: str
    detectors: tuple
    cfg: SystemConfig
    prior_var_sweep: tuple
    n_trials: int = 1
    max_iters: int = 200
    output_path: str = "results.csv"
    tol: float = 1e-8
    relaxation_mode: str = "asymptotic"
    schedule: str = "presolved"
    workers: int = 1
    options: IterationOptions = field(init=False, repr=False)

    def __post_init__(self):
        detectors = tuple(self.detectors)
        if not detectors:
            raise ConfigError("detector set must not be empty.")
        unknown = [d for d in detectors if d not in DETECTORS]
        if unknown:
            raise ConfigError(f"unknown detectors {unknown}; choose from {DETECTORS}.")
        if len(set(detectors)) != len(detectors):
            raise ConfigError("detectors must not repeat.")
        object.__setattr__(self, "detectors", detectors)

        sweep = tuple(float(v) for v in self.prior_var_sweep)
        if not sweep or any(not np.isfinite(v) or v <= 0 for v in sweep):
            raise ConfigError("prior_var_sweep must be a nonempty list of positive values.")
        if len(set(sweep)) != len(sweep):
            raise ConfigError("prior_var_sweep must not repeat.")
        object.__setattr__(self, "prior_var_sweep", sweep)

        for name in ("n_trials", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}.")
        if self.relaxation_mode == "manual":
            raise ConfigError("experiments pick w automatically; use asymptotic or exact_eigen.")
        if self.relaxation_mode not in RELAXATION_MODES:
            raise ConfigError(f"relaxation_mode must be one of {RELAXATION_MODES}, got {self.relaxation_mode!r}.")
        if not self.output_path:
            raise ConfigError("output_path must be set.")

        object.__setattr__(self, "options", IterationOptions(
            max_iters=self.max_iters, tol=self.tol, schedule=self.schedule))

    @classmethod
    def from_dict(cls, data):
        """Builds a spec from flat key: value pairs, as found in a spec file."""
        data = read_spec(data)
        for key in ("n_users", "n_antennas", "noise_var"):
            if key not in data:
                raise ConfigError(f"spec is missing the mandatory key {key!r}.")

        prior_var = data.get("prior_var", 1.0)
        sweep = data.get("prior_var_sweep")
        sweep = [prior_var] if sweep is None else parse_list(sweep, float)
        detectors = parse_list(data.get("detectors", "lmmse,gmpid,sa_gmpid"))

        cfg = SystemConfig(
            n_users=data["n_users"],
            n_antennas=data["n_antennas"],
            noise_var=float(data["noise_var"]),
            prior_var=float(prior_var),
            source_var=float(data.get("source_var", 1.0)),
            seed=data.get("seed", 0),
            prior_mode=data.get("prior_mode", "uninformative"),
        )
        return cls(
            name=str(data.get("name", "experiment")),
            detectors=tuple(detectors),
            cfg=cfg,
            prior_var_sweep=tuple(sweep),
            n_trials=data.get("n_trials", 1),
            max_iters=data.get("max_iters", 200),
            output_path=str(data.get("output_path", "results.csv")),
            tol=float(data.get("tol", 1e-8)),
            relaxation_mode=data.get("relaxation_mode", "asymptotic"),
            schedule=data.get("schedule", "presolved"),
            workers=data.get("workers", 1),
        )

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_spec(path))

    @property
    def summary_path(self):
        return f"{os.path.splitext(self.output_path)[0]}.summary.yaml"


@dataclass(frozen=True)
class TrialRecord:
    """One CSV row: a detector's state after one iteration of one trial."""
    trial_id: int
    detector: str
    prior_var: float
    iteration: int
    mse: float
    mul_count_cumulative: int
    verdict: str

    @property
    def key(self):
        return (self.trial_id, self.detector, self.prior_var, self.iteration)

    def as_row(self):
        return [_fmt(getattr(self, name)) for name in CSV_FIELDS]


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    records: tuple
    summary: dict
    csv_path: str
    summary_path: str


def _report_records(trial_id, detector, prior_var, report):
    return [
        TrialRecord(trial_id, detector, prior_var, iteration, float(mse_value), int(mul), report.verdict)
        for iteration, (mse_value, mul) in enumerate(zip(report.mse_trace, report.mul_trace), start=1)
    ]


def run_trial(spec, trial_id):
    """
    Runs every detector of ``spec`` on one instance per prior variance.

    The instance depends only on (master seed, trial_id), so trials can be
    scheduled in any order.

    Parameters
    ----------
    spec: ExperimentSpec
        Experiment.
    trial_id: int
        Trial number.

    Returns
    -------
    list of TrialRecord
        Rows of this trial.
    """
    seed = derive_trial_seed(spec.cfg.seed, trial_id)
    opts = spec.options
    records = []

    for prior_var in spec.prior_var_sweep:
        cfg = spec.cfg.with_prior_var(prior_var).with_seed(seed)
        ch, obs, prior = generate_instance(cfg)
        noise_var = cfg.noise_var

        schedule = None
        if any(d in ITERATIVE for d in spec.detectors):
            schedule = solve_variances(ch, prior, noise_var, tol=opts.variance_tol, max_iters=opts.variance_max_iters)
        oracle = lmmse_detect(ch, obs, prior, noise_var) if "lmmse" in spec.detectors else None

        for detector in spec.detectors:
            if detector == "lmmse":
                records.append(TrialRecord(
                    trial_id, detector, prior_var, 0, mse(oracle.posterior_mean, obs.x_true),
                    oracle.mul_count, "converged"))
                continue
            if detector == "gmpid":
                report = gmpid_run(ch, obs, prior, noise_var, opts, variances=schedule)
            elif detector == "sa_gmpid":
                relax = choose_relaxation(ch, cfg, mode=spec.relaxation_mode)
                report = sa_gmpid_run(ch, obs, prior, noise_var, relax, opts, variances=schedule, oracle=oracle)
            else:
                step_mode = "asymptotic" if spec.relaxation_mode == "asymptotic" else "exact_eigen"
                report = run_classical_detector(
                    detector, ch, obs, prior, noise_var, opts, mode=step_mode, variances=schedule)
            records.extend(_report_records(trial_id, detector, prior_var, report))

    logger.info("Trial %d of %s done.", trial_id, spec.name)
    return records


def prediction_row(cfg):
    """
    Closed-form predictions for one configuration.

    Raises
    ------
    ConfigError
        For N_u <= N_r or an asymmetric prior.
    """
    if cfg.beta <= 1:
        raise ConfigError(
            f"predictions cover overloaded systems only (N_u > N_r); got beta = {cfg.beta:g}.")
    prediction = predict_convergence(cfg)
    return {
        "n_users": cfg.n_users,
        "n_antennas": cfg.n_antennas,
        "beta": float(cfg.beta),
        "noise_var": float(cfg.noise_var),
        "prior_var": cfg.prior_var_scalar,
        "snr_prior": float(cfg.snr_prior),
        "v_hat_mmse": predict_mmse_mse(cfg),
        "v_hat": prediction.v_hat,
        "v_s": prediction.v_s,
        "gamma": prediction.gamma,
        "gamma_tilde": prediction.gamma_tilde,
        "w_star": prediction.w_star_asymptotic,
        "rho_gmpid_asymptotic": prediction.rho_gmpid_asymptotic,
        "rho_sa_asymptotic": prediction.rho_sa_asymptotic,
        "beta_threshold_met": prediction.beta_threshold_met,
        "sufficient_condition_met": prediction.sufficient_condition_met,
    }


def predict(spec):
    """Prediction rows for every prior variance of ``spec``; no sampling."""
    return [prediction_row(spec.cfg.with_prior_var(v)) for v in spec.prior_var_sweep]


def sweep(n_antennas, betas, snrs, prior_var=1.0):
    """
    Prediction rows over a (beta, snr) grid.

    Parameters
    ----------
    n_antennas: int
        N_r; N_u is round(beta * N_r).
    betas: list of float
        Load factors, each above 1.
    snrs: list of float
        snr = prior_var / noise_var values.
    prior_var: float, default=1.0
        Prior variance.

    Returns
    -------
    list of dict
        One row per grid point, beta-major.
    """
    rows = []
    for beta in betas:
        for snr in snrs:
            if not snr > 0:
                raise ConfigError(f"snr must be positive, got {snr}.")
            cfg = SystemConfig(
                n_users=int(round(beta * n_antennas)),
                n_antennas=int(n_antennas),
                noise_var=prior_var / snr,
                prior_var=prior_var,
            )
            rows.append(prediction_row(cfg))
    return rows


def write_csv(path, fields, rows):
    """Writes rows (lists or dicts) with a header; '\\n' line endings on every platform."""
    directory = os.path.dirname(path)
    if directory and not os.path.isdir(directory):
        warnings.warn(f"Output directory {directory} does not exist and is created.")
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in fields] if isinstance(row, dict) else row)


def summarize(spec, records):
    """
    Aggregates records per (detector, prior_var).

    Runs that stopped early keep their last MSE for the remaining
    iterations, so every trial contributes to every iteration's mean.
    """
    traces = defaultdict(dict)
    verdicts = defaultdict(Counter)
    for record in records:
        group = (record.detector, record.prior_var)
        traces[group].setdefault(record.trial_id, []).append(record)
        if record.iteration <= 1:
            verdicts[group][record.verdict] += 1

    detectors = {}
    for (detector, prior_var), per_trial in traces.items():
        length = max(len(rows) for rows in per_trial.values())
        mse = np.array([[r.mse for r in rows] + [rows[-1].mse] * (length - len(rows)) for rows in per_trial.values()])
        muls = np.array([[r.mul_count_cumulative for r in rows] + [rows[-1].mul_count_cumulative] * (length - len(rows))
                         for rows in per_trial.values()])
        detectors.setdefault(detector, {})[f"{prior_var:g}"] = {
            "mean_mse": [float(v) for v in np.mean(mse, axis=0)],
            "mean_mul_count": [float(v) for v in np.mean(muls, axis=0)],
            "verdicts": dict(sorted(verdicts[(detector, prior_var)].items())),
        }

    try:
        predictions = predict(spec)
    except ConfigError as err:
        warnings.warn(f"No predictions in the summary: {err}")
        predictions = []

    return {
        "name": spec.name,
        "n_trials": spec.n_trials,
        "n_users": spec.cfg.n_users,
        "n_antennas": spec.cfg.n_antennas,
        "noise_var": float(spec.cfg.noise_var),
        "prior_mode": spec.cfg.prior_mode,
        "csv": spec.output_path,
        "detectors": {name: detectors[name] for name in spec.detectors if name in detectors},
        "predictions": predictions,
    }


def run_experiment(spec):
    """
    Runs all trials, writes the CSV and a summary YAML next to it.

    Trials run on a thread pool when ``spec.workers`` > 1; rows are sorted on
    (trial_id, detector, prior_var, iteration) before writing, so the CSV is
    identical for serial and parallel runs.

    Parameters
    ----------
    spec: ExperimentSpec
        Experiment.

    Returns
    -------
    ExperimentResult
        Records, summary dictionary and the written paths.
    """
    trial_ids = range(spec.n_trials)
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            batches = list(pool.map(lambda trial_id: run_trial(spec, trial_id), trial_ids))
    else:
        batches = [run_trial(spec, trial_id) for trial_id in trial_ids]

    records = sorted((record for batch in batches for record in batch), key=lambda r: r.key)
    keys = [record.key for record in records]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate (trial_id, detector, prior_var, iteration) rows.")

    write_csv(spec.output_path, CSV_FIELDS, [record.as_row() for record in records])

    summary = summarize(spec, records)
    with open(spec.summary_path, "w") as f:
        yaml.safe_dump(summary, f, sort_keys=False)

    logger.info("%d rows from %d trials written to %s.", len(records), spec.n_trials, spec.output_path)

    return ExperimentResult(
        records=tuple(records), summary=summary, csv_path=spec.output_path, summary_path=spec.summary_path)
