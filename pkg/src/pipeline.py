from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from src import __version__
from src.config import config
from src.errors import AgreementError, AnalysisWarning, InputError, IoFailure
from src.services.accuracy import (
    COVERAGE_MODES,
    assess_accuracy,
    deviations_from_reference,
    instrument_trueness,
    reference_values,
)
from src.services.agreement import assess_icc, bland_altman
from src.services.dataset import MeasurementDataset, PairedMeasurements, pair_by_object
from src.services.ingestion import (
    GRANULARITIES,
    emit_measurements_csv,
    parse_experiment_csv,
    parse_measurements_csv,
    parse_measurements_json,
    parse_test_outcomes_csv,
    score_outcomes,
    scores_to_dataset,
)
from src.services.mixed_model import compare_fits, reml_fit
from src.services.plots import emit_bland_altman_svg, emit_deviation_svg
from src.services.report import (
    AnalysisReport,
    accuracy_section,
    bland_altman_section,
    comparison_section,
    correlation_section,
    deviation_section,
    icc_section,
    input_digest,
    mixed_section,
    monte_carlo_section,
    scores_section,
)
from src.services.simulate import (
    ESTIMATORS,
    expected_d_bar,
    expected_ms_interaction,
    expected_rho,
    expected_s_d,
    expected_s_r,
    load_process_spec,
    monte_carlo,
)
from src.services.stats_util import pearson
from src.services.transformer import DataTransformer
from src.services.writer import ArtifactWriter

log: logging.Logger = logging.getLogger(__name__)

DEFAULT_ESTIMATORS: Tuple[str, ...] = ("s_M2", "s_d", "d_bar", "rho")

ORACLES: Dict[str, Callable] = {
    "s_M2": expected_ms_interaction,
    "s_d": expected_s_d,
    "d_bar": expected_d_bar,
    "repeatability": expected_s_r,
    "rho": expected_rho,
    "icc3_1": expected_rho,
}


# region logging
def _configure_logging() -> None:
    # stdout para los logs; stderr queda para la línea de diagnóstico
    logging.basicConfig(
        level=getattr(logging, config.log_level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        stream=sys.stdout,
    )


# region argparse
def build_parser() -> argparse.ArgumentParser:
    """
    Parser del CLI con un subcomando por análisis.

    :return: parser.
    :rtype: argparse.ArgumentParser
    """
    instrument_a, instrument_b = config.instruments

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", type=Path, help="CSV (o JSON) de entrada")
    common.add_argument("--variable", help="variable de respuesta, p.ej. QLTY")
    common.add_argument("--alpha", type=float, default=config.alpha)
    common.add_argument("--coverage", choices=COVERAGE_MODES, default=config.coverage)
    common.add_argument("--k", type=float, default=config.ba_k, help="multiplicador de Bland-Altman")
    common.add_argument("--out", type=Path, default=Path("."), help="directorio de salida")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--svg", action="store_true", help="escribir los gráficos SVG")
    common.add_argument("--instrument-a", default=instrument_a)
    common.add_argument("--instrument-b", default=instrument_b)

    parser = argparse.ArgumentParser(
        prog="agreement",
        description="Exactitud y concordancia de instrumentos de medición.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    score = sub.add_parser("score", parents=[common], help="puntajes desde resultados de tests")
    score.add_argument("--granularity", choices=GRANULARITIES, default=config.granularity)

    accuracy = sub.add_parser("accuracy", parents=[common], help="repetibilidad, precisión intermedia e incertidumbre")
    accuracy.add_argument("--s-r", dest="s_r", type=float, default=None)
    accuracy.add_argument("--reference", type=float, default=None, help="valor de referencia (veracidad)")
    accuracy.add_argument("--truth", type=Path, default=None, help="CSV de mediciones con los valores verdaderos")

    sub.add_parser("bland-altman", parents=[common], help="diferencias y límites de concordancia")
    sub.add_parser("icc", parents=[common], help="ANOVA de dos factores e ICC")
    sub.add_parser("correlate", parents=[common], help="correlación de Pearson")

    mixed = sub.add_parser("mixed", parents=[common], help="modelo mixto REML del experimento")
    mixed.add_argument("--compare", type=Path, default=None, help="CSV del experimento medido con otro instrumento")
    mixed.add_argument("--labels", default=None, help="etiquetas A,B de los ajustes")

    simulate = sub.add_parser("simulate", parents=[common], help="oráculo Monte Carlo")
    simulate.add_argument("--spec", type=Path, required=True, help="ProcessSpec JSON")
    simulate.add_argument("--reps", type=int, default=100)
    simulate.add_argument("--estimator", action="append", choices=sorted(ESTIMATORS), default=None)
    simulate.add_argument("--workers", type=int, default=1)
    simulate.add_argument("--seed", type=int, default=None)

    return parser


# region Entradas
class _Inputs:
    """Lee archivos de entrada y acumula sus bytes para el digest."""

    def __init__(self) -> None:
        self.blobs: List[bytes] = []

    def read(self, path: Optional[Path], flag: str = "--input") -> bytes:
        if path is None:
            raise InputError(f"falta {flag}")
        try:
            data: bytes = Path(path).read_bytes()
        except OSError as exc:
            raise IoFailure(f"no se pudo leer {path}: {exc}") from exc
        self.blobs.append(data)
        return data

    def measurements(self, path: Optional[Path], flag: str = "--input") -> MeasurementDataset:
        data: bytes = self.read(path, flag)
        if path is not None and path.suffix.lower() == ".json":
            return parse_measurements_json(data)
        return parse_measurements_csv(data)

    @property
    def digest(self) -> str:
        return input_digest(self.blobs)


def _require_variable(args: argparse.Namespace) -> str:
    if not args.variable:
        raise InputError("falta --variable")
    return str(args.variable)


def _pairs(args: argparse.Namespace, ds: MeasurementDataset) -> PairedMeasurements:
    return pair_by_object(ds, args.instrument_a, args.instrument_b, _require_variable(args))


# region Runners
def _run_score(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    matrix = parse_test_outcomes_csv(inputs.read(args.input))
    scores = score_outcomes(matrix, granularity=args.granularity)
    log.info("Puntajes: %d pares (programa, suite)", len(scores.scores))

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {"granularity": args.granularity}
    report.add("scores", scores_section(scores))

    # Mediciones listas para los demás subcomandos
    variable: str = args.variable or "SCORE"
    writer.write_text("measurements.csv", emit_measurements_csv(scores_to_dataset(scores, variable)))
    if args.format == "csv":
        writer.write_table(tables.filename("scores"), tables.scores(scores))
    return report


def _run_accuracy(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    ds = inputs.measurements(args.input)
    variable: str = _require_variable(args)
    result = assess_accuracy(
        ds, variable, s_r=args.s_r, reference=args.reference, alpha=args.alpha, mode=args.coverage
    )

    by_instrument = instrument_trueness(ds, variable, args.reference) if args.reference is not None else None
    deviations: List = []
    if args.truth is not None:
        truth_ds = inputs.measurements(args.truth, "--truth")
        truth: Dict[str, float] = reference_values(truth_ds, variable)
        for inst in ds.instruments(variable):
            measured: Dict[str, float] = {
                r.object_id: r.value for r in ds.select(variable) if r.instrument_id == inst and r.replicate == 0
            }
            deviations.append(deviations_from_reference(measured, truth, instrument_id=inst))

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {
        "variable": variable,
        "alpha": args.alpha,
        "coverage": args.coverage,
        "s_r": args.s_r,
        "reference": args.reference,
    }
    report.add("accuracy", accuracy_section(result, by_instrument))
    if deviations:
        report.add("deviations", [deviation_section(d) for d in deviations])

    if args.format == "csv":
        writer.write_table(tables.filename("anova", name="nested"), tables.anova(result.anova))
        for d in deviations:
            writer.write_table(tables.filename("deviations", instrument=d.instrument_id), tables.deviations(d))
    if args.svg:
        for d in deviations:
            emit_deviation_svg(d, writer.path_for(f"deviations_{d.instrument_id}.svg"))
    return report


def _run_bland_altman(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    pairs = _pairs(args, inputs.measurements(args.input))
    result = bland_altman(pairs, k=args.k)
    log.info("Bland-Altman: d=%.4f, s_d=%.4f", result.d_bar, result.s_d)

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {"variable": args.variable, "k": args.k}
    report.add("bland_altman", bland_altman_section(result))

    if args.format == "csv":
        writer.write_table(tables.filename("bland_altman"), tables.bland_altman(result))
    if args.svg:
        emit_bland_altman_svg(result, writer.path_for("bland_altman.svg"))
    return report


def _run_icc(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    ds = inputs.measurements(args.input)
    result = assess_icc(ds, _require_variable(args))

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {"variable": args.variable, "threshold": result.threshold}
    report.add("icc", icc_section(result))
    if args.format == "csv":
        writer.write_table(tables.filename("anova", name="twoway"), tables.anova(result.anova))
    return report


def _run_correlate(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    result = pearson(_pairs(args, inputs.measurements(args.input)))

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {
        "variable": args.variable,
        "instrument_a": args.instrument_a,
        "instrument_b": args.instrument_b,
    }
    report.add("correlation", correlation_section(result))
    return report


def _run_mixed(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    sources: List[Path] = [args.input] if args.compare is None else [args.input, args.compare]
    if args.labels:
        labels: List[str] = [label.strip() for label in str(args.labels).split(",")]
    else:
        labels = [args.instrument_a, args.instrument_b][: len(sources)]
    if len(labels) != len(sources) or len(set(labels)) != len(labels):
        raise InputError(f"--labels debe traer {len(sources)} etiqueta(s) distintas")

    fits = {}
    for label, source in zip(labels, sources):
        rows = parse_experiment_csv(inputs.read(source, "--compare" if source is args.compare else "--input"), args.variable)
        fits[label] = reml_fit(rows)
        log.info("Modelo mixto %s: %d observaciones, %d sujetos", label, fits[label].n_obs, fits[label].n_subjects)

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {"variable": args.variable, "alpha": args.alpha, "labels": labels}
    report.add("mixed", {label: mixed_section(fit, args.alpha) for label, fit in fits.items()})
    if len(fits) > 1:
        report.add("comparison", comparison_section(compare_fits(fits, args.alpha)))

    if args.format == "csv":
        for label, fit in fits.items():
            writer.write_table(tables.filename("coefficients", label=label), tables.coefficients(fit, args.alpha))
    return report


def _run_simulate(args, inputs: _Inputs, writer: ArtifactWriter, tables: DataTransformer) -> AnalysisReport:
    inputs.read(args.spec, "--spec")
    spec = load_process_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)

    names: List[str] = list(dict.fromkeys(args.estimator or DEFAULT_ESTIMATORS))
    summaries = monte_carlo(spec, names, n_reps=args.reps, workers=args.workers)
    oracles: Dict[str, float] = {}
    for name in names:
        if name in ORACLES:
            try:
                oracles[name] = float(ORACLES[name](spec))
            except AgreementError as exc:
                log.debug("Sin oráculo para %s: %s", name, exc)

    report = AnalysisReport(command=args.command, input_digest=inputs.digest)
    report.parameters = {"reps": args.reps, "estimators": names, "seed": spec.seed}
    report.add("monte_carlo", monte_carlo_section(spec, summaries, oracles))
    if args.format == "csv":
        writer.write_table(tables.filename("monte_carlo"), tables.monte_carlo(list(summaries.values())))
    return report


RUNNERS: Mapping[str, Callable] = {
    "score": _run_score,
    "accuracy": _run_accuracy,
    "bland-altman": _run_bland_altman,
    "icc": _run_icc,
    "correlate": _run_correlate,
    "mixed": _run_mixed,
    "simulate": _run_simulate,
}


# region CLI
def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Ejecuta un subcomando:
    - Lee las entradas
    - Corre el análisis
    - Escribe report.json y los CSV / SVG pedidos

    :param argv: Argumentos (sin el nombre del programa); None toma sys.argv.
    :type argv: Optional[Sequence[str]]
    :return: 0 éxito, 2 entrada inválida, 3 falla numérica, 1 error inesperado.
    :rtype: int
    """
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    log.info(">>> Iniciando %s", args.command)
    try:
        writer = ArtifactWriter(args.out)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", AnalysisWarning)
            report: AnalysisReport = RUNNERS[args.command](args, _Inputs(), writer, DataTransformer())

        for warning in caught:
            if issubclass(warning.category, AnalysisWarning):
                message: str = str(warning.message)
                log.warning(message)
                report.warnings.append(message)

        path = writer.write_report(report)
        log.info("<<< Finalizado con éxito: %s", path)
        return 0
    except AgreementError as exc:
        log.error("Error en %s: %s", args.command, exc)
        print(exc.diagnostic(), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        log.error("Error inesperado en %s: %s", args.command, exc, exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
