import argparse
import logging
import sys

from ..helpers.errors import ConfigError, MpidError
from ..helpers.inputs import apply_overrides, parse_list, read_spec
from .experiment import PREDICTION_FIELDS, ExperimentSpec, predict, run_experiment, sweep, write_csv

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _load_spec(args):
    try:
        data = read_spec(args.spec)
    except TypeError as err:
        raise ConfigError(f"cannot read spec file {args.spec!r}: {err}") from err
    data = apply_overrides(
        data,
        output_path=args.out,
        n_trials=args.trials,
        seed=args.seed,
        detectors=args.detectors,
        max_iters=args.max_iters,
        workers=args.workers,
    )
    return ExperimentSpec.from_dict(data)


def _print_rows(rows, fields):
    print("  ".join(f"{name:>12.12}" for name in fields))
    for row in rows:
        cells = []
        for name in fields:
            value = row[name]
            cells.append(f"{value!s:>12}" if isinstance(value, (bool, int)) else f"{value:>12.6g}")
        print("  ".join(cells))


def cmd_run(args):
    spec = _load_spec(args)
    result = run_experiment(spec)

    print(f"{spec.name}: {spec.n_trials} trials, {spec.cfg.n_users} users, {spec.cfg.n_antennas} antennas, "
          f"noise_var {spec.cfg.noise_var:g}")
    for detector, per_prior in result.summary["detectors"].items():
        for prior_var, entry in per_prior.items():
            verdicts = ", ".join(f"{k} {v}" for k, v in entry["verdicts"].items())
            print(f"  {detector:<11} prior_var {prior_var:<8} final mean MSE {entry['mean_mse'][-1]:.6g} "
                  f"after {len(entry['mean_mse'])} rows ({verdicts})")
    for row in result.summary["predictions"]:
        print(f"  predicted MMSE at prior_var {row['prior_var']:g}: {row['v_hat_mmse']:.6g}")
    print(f"CSV written to {result.csv_path}, summary to {result.summary_path}.")
    return 0


def cmd_predict(args):
    spec = _load_spec(args)
    _print_rows(predict(spec), PREDICTION_FIELDS)
    return 0


def cmd_sweep(args):
    rows = sweep(
        n_antennas=args.n_antennas,
        betas=parse_list(args.betas, float),
        snrs=parse_list(args.snrs, float),
        prior_var=args.prior_var,
    )
    if args.out:
        write_csv(args.out, PREDICTION_FIELDS, rows)
        print(f"{len(rows)} rows written to {args.out}.")
    else:
        _print_rows(rows, PREDICTION_FIELDS)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mpid",
        description="Message passing detection for overloaded MIMO-NOMA: experiments and closed-form predictions.",
    )
    parser.add_argument("--log-level", default="WARNING", choices=LOG_LEVELS, help="Logging verbosity.")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("run", cmd_run, "Run a Monte-Carlo experiment from a spec file."),
        ("predict", cmd_predict, "Print closed-form predictions for a spec file, no sampling."),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--spec", required=True, help="YAML spec file.")
        sub.add_argument("--out", help="CSV output path, overrides output_path.")
        sub.add_argument("--trials", type=int, help="Number of trials, overrides n_trials.")
        sub.add_argument("--seed", type=int, help="Master seed.")
        sub.add_argument("--detectors", help="Comma separated detector list, e.g. lmmse,sa_gmpid.")
        sub.add_argument("--max-iters", type=int, help="Iteration cap of the iterative detectors.")
        sub.add_argument("--workers", type=int, help="Threads running trials concurrently.")
        sub.set_defaults(func=func)

    sub = commands.add_parser("sweep", help="Closed-form predictions over a (beta, snr) grid.")
    sub.add_argument("--n-antennas", type=int, default=100, help="Number of receive antennas.")
    sub.add_argument("--betas", default="1.5,2,4,6,8", help="Comma separated load factors above 1.")
    sub.add_argument("--snrs", default="0.1,1,10,100", help="Comma separated prior_var / noise_var values.")
    sub.add_argument("--prior-var", type=float, default=1.0, help="Prior variance.")
    sub.add_argument("--out", help="CSV output path; prints a table if omitted.")
    sub.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MpidError as err:
        logger.debug("Command failed.", exc_info=True)
        print(f"mpid: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
