"""Command-line frontend: ``python -m bunchlab <subcommand> ...``."""
import argparse
import io
import logging
import sys
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from bunchlab import __version__, configure_logging
from bunchlab.config import Config
from bunchlab.errors import BunchlabError, DimensionError, PrecisionError, ScientificCheckError
from bunchlab.models.bunching import bunching_prob, perturbative_ratio
from bunchlab.models.counterexample import (
    conjecture_search,
    load_counterexample,
    parse_sampler,
    reproduce_paper,
)
from bunchlab.models.distmodels import compile_gram, nonneg_class_test, validate_gram
from bunchlab.models.interferometer import InterferometerScene, h_matrix, reck_decompose
from bunchlab.models.permanent import ENGINES, PermanentValue, value_spread
from bunchlab.selftest import run_selftest
from bunchlab.utils.io_utils import load_gram_spec, load_matrix_file, parse_kappa
from bunchlab.utils.report_utils import (
    BsNetworkSchema,
    BunchingResultSchema,
    PermanentValueSchema,
    ReproductionReportSchema,
    SearchReportSchema,
    SelftestSummarySchema,
    emit,
    render_table,
    to_json,
    write_scan_csv,
)

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Resolved invocation, echoed into every JSON report."""
    subcommand: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    format: Literal['json', 'csv', 'table'] = 'table'
    out: Optional[str] = None
    tolerances: Dict[str, float] = Field(default_factory=dict)
    threads: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace, **inputs: Optional[str]) -> "RunConfig":
        tolerances = {
            key: value for key, value in (
                ('hermitian_tol', args.hermitian_tol),
                ('engine_tol', args.engine_tol),
            ) if value is not None
        }
        return cls(
            subcommand=args.command,
            inputs={k: v for k, v in inputs.items() if v is not None},
            seed=args.seed,
            format=args.format or args.default_format,
            out=args.out,
            tolerances=tolerances,
            threads=Config.workers(),
        )


def _with_run(payload: dict, run: RunConfig) -> dict:
    return {**payload, "run": run.model_dump()}


def _format_number(z: complex) -> str:
    if z.imag == 0:
        return repr(float(z.real))
    return repr(complex(z))


def _format_value(value: PermanentValue) -> str:
    try:
        return _format_number(value.to_complex())
    except PrecisionError:
        # outside double range: mantissa times a power of two
        return f"{_format_number(value.value)}*2**{value.log2_scale}"


# --- Subcommands ---

def cmd_perm(args) -> int:
    run = RunConfig.from_args(args, matrix=args.matrix)
    matrix = load_matrix_file(args.matrix)
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"Permanent needs a square matrix, got {matrix.shape[0]}x{matrix.shape[1]}")
    n = matrix.shape[0]

    if args.engine == 'all':
        names = [name for name in ENGINES if name != 'naive' or n <= Config.NAIVE_MAX_N]
    else:
        names = [args.engine]
    values: Dict[str, PermanentValue] = {name: ENGINES[name](matrix) for name in names}
    spread = value_spread(list(values.values()))
    if len(values) > 1 and spread > Config.ENGINE_TOL:
        raise PrecisionError(f"Permanent engines disagree by {spread:.2e}")

    if run.format == 'json':
        schema = PermanentValueSchema()
        payload = {"engines": {name: schema.dump(v) for name, v in values.items()}, "spread": spread}
        emit(to_json(_with_run(payload, run)), run.out)
    else:
        lines = []
        for name, value in values.items():
            lines.append(_format_value(value))
            lines.append(f"  engine={name} mantissa={_format_number(value.value)} log2_scale={value.log2_scale} "
                         f"log10_abs={value.log10_abs():.12f}")
        if len(values) > 1:
            lines.append(f"max relative spread {spread:.3e}")
        emit("\n".join(lines), run.out)
    return 0


def cmd_reproduce(args) -> int:
    run = RunConfig.from_args(args)
    grid = None
    if args.points is not None or args.d_max is not None:
        grid = np.linspace(0.0, args.d_max or Config.SCAN_D_MAX, args.points or Config.SCAN_POINTS)
    report = reproduce_paper(d_grid=grid, progress=not args.quiet)

    if run.format == 'csv':
        buffer = io.StringIO()
        write_scan_csv(report.scan, buffer, perturbative_ratio(report.anomaly, report.scan.d))
        emit(buffer.getvalue(), run.out)
    elif run.format == 'json':
        emit(to_json(_with_run(ReproductionReportSchema().dump(report), run)), run.out)
    else:
        rows = [(c.name, c.value, c.expected, c.tolerance, c.mode,
                 "n/a" if c.passed is None else c.passed) for c in report.checks]
        text = render_table(["check", "value", "published", "tolerance", "mode", "result"], rows)
        if report.notes:
            text += "\n\n" + "\n".join(f"note: {note}" for note in report.notes)
        emit(text, run.out)

    if not report.all_passed:
        names = ", ".join(c.name for c in report.failures())
        raise ScientificCheckError(f"Published values not reproduced: {names}")
    return 0


def cmd_bunch(args) -> int:
    run = RunConfig.from_args(args, unitary=args.unitary, gram_spec=args.gram_spec, s_matrix=args.s_matrix)
    u = load_matrix_file(args.unitary)
    kappa = parse_kappa(args.kappa)
    if args.gram_spec:
        s = compile_gram(load_gram_spec(args.gram_spec))
    else:
        s = validate_gram(load_matrix_file(args.s_matrix), "S")
    n = args.photons if args.photons is not None else s.shape[0]
    if n != s.shape[0]:
        raise DimensionError(f"{n} photons but S is {s.shape[0]}x{s.shape[0]}")

    h = h_matrix(InterferometerScene(u=u, n=n, kappa=tuple(kappa)))
    result = bunching_prob(h, s)
    member, _ = nonneg_class_test(h)

    payload = BunchingResultSchema().dump(result)
    payload["h_nonnegative_class"] = member
    payload["kappa"] = kappa
    if run.format == 'json':
        emit(to_json(_with_run(payload, run)), run.out)
    else:
        emit(render_table(["probability", "engine_agreement", "h_nonnegative_class"],
                          [(result.probability, result.engine_agreement, "yes" if member else "no")]), run.out)
    return 0


def cmd_search(args) -> int:
    run = RunConfig.from_args(args)
    name, rank = parse_sampler(args.sampler)
    around = None
    if args.around_counterexample:
        # perturbations of the published factor only make sense for the low-rank sampler
        around = load_counterexample(with_anomaly=False).m
        name, rank = 'low_rank', rank or around.shape[0]
    report = conjecture_search(args.n, args.trials, sampler=name, seed=args.seed, rank=rank,
                               around=around, epsilon=args.epsilon, progress=not args.quiet)
    payload = SearchReportSchema().dump(report)
    if run.format == 'json':
        emit(to_json(_with_run(payload, run)), run.out)
    else:
        emit(render_table(["sampler", "n", "trials", "max_margin", "max_relative_margin", "positive"],
                          [(report.sampler, report.n, report.trials, report.max_margin,
                            report.max_relative_margin, report.positive_count)]), run.out)
    return 0


def cmd_reck(args) -> int:
    run = RunConfig.from_args(args, unitary=args.unitary)
    network = reck_decompose(load_matrix_file(args.unitary))
    if run.format == 'json':
        emit(to_json(_with_run(BsNetworkSchema().dump(network), run)), run.out)
    else:
        rows = [(el.mode_a, el.mode_b, el.theta, el.phi) for el in network.elements]
        text = render_table(["mode_a", "mode_b", "theta", "phi"], rows)
        text += f"\n\nelements {network.element_count}, reconstruction error {network.reconstruction_error:.3e}"
        emit(text, run.out)
    return 0


def cmd_selftest(args) -> int:
    run = RunConfig.from_args(args)
    summary = run_selftest(seed=args.seed, quick=args.quick, progress=not args.quiet)
    if run.format == 'json':
        emit(to_json(SelftestSummarySchema().dump(summary)), run.out)
    else:
        rows = [(s.name, s.trials, s.failures, f"{s.worst:.3e}", s.passed) for s in summary.suites]
        emit(render_table(["suite", "checks", "failures", "worst", "result"], rows), run.out)
    if not summary.passed:
        failed = ", ".join(s.name for s in summary.suites if not s.passed)
        raise ScientificCheckError(f"Selftest suites failed: {failed}")
    return 0


# --- Parser ---

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=Config.SEED, help="Random seed echoed into reports.")
    common.add_argument('--format', choices=['json', 'csv', 'table'], default=None, help="Output format.")
    common.add_argument('--out', default=None, help="Output path (default: standard output).")
    common.add_argument('--threads', type=int, default=None, help="Worker threads (0 = all cores).")
    common.add_argument('--log-level', default=None, help="Logging level (default from BUNCHLAB_LOG_LEVEL).")
    common.add_argument('--log-file', default=None, help="Log file path; empty string disables file logging.")
    common.add_argument('--hermitian-tol', type=float, default=None, help="Hermiticity tolerance override.")
    common.add_argument('--engine-tol', type=float, default=None, help="Ryser/Glynn agreement tolerance override.")
    common.add_argument('--quiet', action='store_true', help="Disable progress bars.")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="bunchlab",
        description="Boson-bunching permanents, distinguishability models and the 16-photon anomaly.",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True, metavar='command')

    p = sub.add_parser('perm', parents=[common], help="Permanent of a square matrix file.")
    p.add_argument('matrix', help="MatrixFile JSON.")
    p.add_argument('--engine', choices=sorted(ENGINES) + ['all'], default='ryser')
    p.set_defaults(handler=cmd_perm, default_format='table')

    p = sub.add_parser('reproduce', parents=[common], help="Reproduce the 16-photon counterexample numbers.")
    p.add_argument('--points', type=int, default=None, help="Delay grid size.")
    p.add_argument('--d-max', type=float, default=None, help="Largest delay strength on the grid.")
    p.set_defaults(handler=cmd_reproduce, default_format='table')

    p = sub.add_parser('bunch', parents=[common], help="Bunching probability perm(H (.) S).")
    p.add_argument('--unitary', required=True, help="MatrixFile with the m x m unitary.")
    p.add_argument('--kappa', required=True, help="Comma-separated 1-based output modes.")
    p.add_argument('--photons', type=int, default=None, help="Photon count (default: dimension of S).")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--gram-spec', help="GramSpec JSON.")
    source.add_argument('--s-matrix', help="MatrixFile with an explicit Gram matrix.")
    p.set_defaults(handler=cmd_bunch, default_format='json')

    p = sub.add_parser('search', parents=[common], help="Random search for anomalous PSD matrices.")
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--trials', type=int, required=True)
    p.add_argument('--sampler', default='haar_gram', help="haar_gram, wishart, low_rank(r) or structured_interp.")
    p.add_argument('--around-counterexample', action='store_true',
                   help="Perturb the published 2x16 factor instead of sampling freely (needs --n 16).")
    p.add_argument('--epsilon', type=float, default=1e-6, help="Relative perturbation size.")
    p.set_defaults(handler=cmd_search, default_format='json')

    p = sub.add_parser('reck', parents=[common], help="Reck decomposition of a unitary.")
    p.add_argument('unitary', help="MatrixFile with the unitary.")
    p.set_defaults(handler=cmd_reck, default_format='json')

    # registered without help so it stays out of the command listing
    p = sub.add_parser('selftest', parents=[common])
    p.add_argument('--quick', action='store_true')
    p.set_defaults(handler=cmd_selftest, default_format='table')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return int(e.code or 0)

    configure_logging(args.log_level, args.log_file)
    try:
        Config.override(threads=args.threads, hermitian_tol=args.hermitian_tol, engine_tol=args.engine_tol)
        return args.handler(args)
    except BunchlabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130


if __name__ == '__main__':
    sys.exit(main())
