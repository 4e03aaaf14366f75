"""Command line entry point: ``abssurv analyze | simulate | diagnose-null``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import cli_io
from .comparators import DegenerateStatisticError
from .surv_core import SurvivalDataError

EXIT_CONFIG, EXIT_INPUT, EXIT_DATA, EXIT_OTHER = 2, 3, 4, 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abssurv", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analyze", help="compare two arms from a CSV file")
    _common(a)
    a.add_argument("--input")
    a.add_argument("--group-column", dest="group_column")
    a.add_argument("--time-column", dest="time_column")
    a.add_argument("--status-column", dest="status_column")
    a.add_argument("--group1")
    a.add_argument("--group2")
    a.add_argument("--split", type=float, help="split point for the left/right interval tests")
    a.add_argument("--resamples", type=int, dest="n_resamples")
    a.add_argument("--boot", type=int, dest="n_boot")
    a.add_argument("--tau", type=float, dest="rmst_tau")
    a.add_argument("--mode", choices=("clamped", "full_gap"), dest="interval_mode")
    a.add_argument("--ties", choices=("efron", "breslow"))

    s = sub.add_parser("simulate", help="run the Monte Carlo study grid")
    _common(s)
    s.add_argument("--preset", choices=("desk", "full"))
    s.add_argument("--situations", help="comma-separated ids, e.g. I,V,VI")
    s.add_argument("--sizes", help="e.g. 20/20,50/100")
    s.add_argument("--censor-rates", dest="censor_rates")
    s.add_argument("--iterations", type=int)
    s.add_argument("--permutations", type=int)
    s.add_argument("--jobs", type=int, dest="n_jobs")

    d = sub.add_parser("diagnose-null", help="simulate the null statistic and summarize its shape")
    _common(d)
    d.add_argument("--scenario")
    d.add_argument("--n1", type=int)
    d.add_argument("--n2", type=int)
    d.add_argument("--censor-rate", type=float, dest="censor_rate")
    d.add_argument("--draws", type=int, dest="n_draws")
    d.add_argument("--bins", type=int)
    return parser


def _settings(args: argparse.Namespace) -> dict:
    values = cli_io.read_config(args.config) if args.config else {}
    skip = {"cmd", "config", "verbose"}
    values.update({k: v for k, v in vars(args).items() if k not in skip and v is not None})
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        values = _settings(args)
        if args.cmd == "analyze":
            report = cli_io.run_analysis(cli_io.AnalysisConfig.from_mapping(values))
            sys.stdout.write(cli_io.render_report(report))
        elif args.cmd == "simulate":
            cfg = cli_io.SimulateConfig.from_mapping(values)
            progress = lambda c: print(
                f"{c.scenario.id} {c.scenario.n1}/{c.scenario.n2} CR={c.scenario.censor_target:.2f}: "
                + " ".join(f"{t}={c.rate(t):.3f}" for t in c.rejections),
                file=sys.stderr,
            )
            result = cli_io.simulate(cfg, progress)
            for sid in dict.fromkeys(c.scenario.id for c in result.cells):
                sys.stdout.write(cli_io.sim_harness.render_rate_table(result, sid) + "\n")
        else:
            diag = cli_io.diagnose_null(cli_io.DiagnoseConfig.from_mapping(values))
            print(f"draws={diag.deltas.size} skewness={diag.skewness:.4f} excess_kurtosis={diag.excess_kurtosis:.4f}")
    except (cli_io.ConfigError, KeyError, TypeError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (cli_io.InputError, OSError) as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SurvivalDataError, DegenerateStatisticError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"error[internal]: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return 0


if __name__ == "__main__":
    sys.exit(main())
