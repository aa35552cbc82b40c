from __future__ import annotations

import io
import json
import logging
import math
import re
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple, Union

import pandas as pd

from src.errors import (
    BadHeader,
    BadRow,
    DuplicateCase,
    InputError,
    NoEntriesAtGranularity,
    NonFiniteValue,
    UnknownOutcomeToken,
)
from src.services.dataset import MeasurementDataset, MeasurementRecord, build_dataset
from src.services.mixed_model import ExperimentRow

log: logging.Logger = logging.getLogger(__name__)

TextInput = Union[str, bytes]

MEASUREMENT_HEADER: Tuple[str, ...] = (
    "object_id", "instrument_id", "replicate", "variable", "value",
)
OUTCOME_HEADER: Tuple[str, ...] = (
    "object_id", "suite_id", "case_id", "granularity", "outcome",
)
EXPERIMENT_HEADER: Tuple[str, ...] = (
    "subject_id", "group", "treatment", "task", "variable", "value",
)

GRANULARITIES: Tuple[str, ...] = ("class", "method", "assertion")
OUTCOMES: Tuple[str, ...] = ("pass", "fail", "error")

_PARSER_LINE = re.compile(r"line (\d+)")


# region Lectura CSV
def _decode(text: TextInput) -> str:
    if isinstance(text, bytes):
        try:
            return text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BadHeader(f"la entrada no es UTF-8 válido: {exc}") from exc
    return text


def _read_table(text: TextInput, header: Sequence[str]) -> List[Tuple[int, Dict[str, str]]]:
    """
    Lee un CSV con cabecera exacta y devuelve (línea, fila) por fila de datos.

    Todo se lee como texto; las líneas en blanco se saltan pero cuentan para
    la numeración.

    :param text: Contenido del archivo.
    :type text: TextInput
    :param header: Cabecera esperada.
    :type header: Sequence[str]
    :return: filas con su número de línea (la cabecera es la línea 1).
    :rtype: List[Tuple[int, Dict[str, str]]]
    :raises BadHeader: Si la cabecera no coincide.
    :raises BadRow: Si una fila tiene una cantidad incorrecta de campos.
    """
    content: str = _decode(text)
    if content.startswith("\ufeff"):
        content = content[1:]

    first_line: str = content.splitlines()[0] if content else ""
    if tuple(first_line.strip("\r").split(",")) != tuple(header):
        raise BadHeader(f"se esperaba '{','.join(header)}', se leyó '{first_line.strip()}'")

    try:
        df: pd.DataFrame = pd.read_csv(
            io.StringIO(content),
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
        )
    except pd.errors.ParserError as exc:
        match = _PARSER_LINE.search(str(exc))
        line: int = int(match.group(1)) if match else 0
        raise BadRow(line, "cantidad de campos incorrecta") from exc

    rows: List[Tuple[int, Dict[str, str]]] = []
    for position, raw in enumerate(df.to_dict(orient="records")):
        line = position + 2
        values: List[Any] = list(raw.values())
        if all(isinstance(v, float) and math.isnan(v) or v == "" for v in values):
            continue
        if any(not isinstance(v, str) for v in values):
            raise BadRow(line, "faltan campos")
        rows.append((line, {k: str(v) for k, v in raw.items()}))
    return rows


def _parse_value(raw: str, line: int) -> float:
    try:
        value: float = float(raw)
    except ValueError as exc:
        raise BadRow(line, f"valor no numérico '{raw}'") from exc
    if not math.isfinite(value):
        raise NonFiniteValue(f"valor '{raw}'", line=line)
    return value


def _parse_replicate(raw: Any, line: int) -> int:
    if raw in ("", None):
        return 0
    try:
        replicate: int = int(raw)
    except (TypeError, ValueError) as exc:
        raise BadRow(line, f"replicate inválido '{raw}'") from exc
    if replicate < 0:
        raise BadRow(line, f"replicate negativo '{raw}'")
    return replicate


def _record(fields: Mapping[str, Any], line: int) -> MeasurementRecord:
    for key in ("object_id", "instrument_id", "variable"):
        if not isinstance(fields.get(key), str) or not fields.get(key):
            raise BadRow(line, f"campo '{key}' vacío o ausente")
    value: float = _parse_value(str(fields.get("value", "")), line)
    return MeasurementRecord(
        object_id=fields["object_id"],
        instrument_id=fields["instrument_id"],
        replicate=_parse_replicate(fields.get("replicate"), line),
        value=value,
        variable=fields["variable"],
    )


# region Mediciones
def parse_measurements_csv(text: TextInput) -> MeasurementDataset:
    """
    Lee el CSV largo `object_id,instrument_id,replicate,variable,value`.

    :param text: Contenido UTF-8 (bytes o str).
    :type text: TextInput
    :return: dataset validado, una fila por registro.
    :rtype: MeasurementDataset
    :raises BadHeader: Cabecera distinta.
    :raises BadRow: Fila mal formada (con número de línea).
    :raises NonFiniteValue: NaN/inf en value.
    """
    rows = _read_table(text, MEASUREMENT_HEADER)
    records: List[MeasurementRecord] = [_record(fields, line) for line, fields in rows]
    log.debug("CSV de mediciones: %d registros", len(records))
    return build_dataset(records)


def parse_measurements_json(text: TextInput) -> MeasurementDataset:
    """
    Lee un arreglo JSON de objetos con los campos del CSV de mediciones.

    BadRow usa la posición en el arreglo (desde 1) como número de línea.

    :param text: Contenido UTF-8.
    :type text: TextInput
    :return: dataset validado.
    :rtype: MeasurementDataset
    """
    try:
        payload: Any = json.loads(_decode(text))
    except json.JSONDecodeError as exc:
        raise BadRow(exc.lineno, f"JSON inválido: {exc.msg}") from exc
    if not isinstance(payload, list):
        raise BadHeader("se esperaba un arreglo JSON de registros")

    records: List[MeasurementRecord] = []
    for index, item in enumerate(payload, start=1):
        if not isinstance(item, dict):
            raise BadRow(index, "cada registro debe ser un objeto")
        if isinstance(item.get("value"), bool) or not isinstance(item.get("value"), (int, float, str)):
            raise BadRow(index, "value ausente o inválido")
        fields: Dict[str, Any] = dict(item)
        if isinstance(fields["value"], (int, float)):
            value = float(fields["value"])
            if not math.isfinite(value):
                raise NonFiniteValue(f"valor {value!r}", line=index)
            fields["value"] = repr(value)
        records.append(_record(fields, index))
    return build_dataset(records)


def emit_measurements_csv(ds: MeasurementDataset) -> str:
    """
    Escribe el dataset con el esquema de parse_measurements_csv.

    Los valores salen con 17 dígitos significativos, así el parseo devuelve
    exactamente los mismos floats.

    :param ds: Dataset.
    :type ds: MeasurementDataset
    :return: texto CSV con fin de línea `\\n`.
    :rtype: str
    """
    frame: pd.DataFrame = ds.to_frame()[list(MEASUREMENT_HEADER)]
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


# region Resultados de tests
@dataclass(frozen=True, slots=True)
class OutcomeEntry:
    object_id: str
    suite_id: str
    case_id: str
    granularity: str
    outcome: str


@dataclass(frozen=True, slots=True)
class TestOutcomeMatrix:
    """
    Resultados pass/fail/error por (programa, suite, caso).

    :param entries: Entradas en orden de lectura.
    :type entries: Tuple[OutcomeEntry, ...]
    """
    __test__ = False

    entries: Tuple[OutcomeEntry, ...]

    def __post_init__(self) -> None:
        seen: Dict[Tuple[str, str, str], int] = {}
        for position, entry in enumerate(self.entries):
            if entry.outcome not in OUTCOMES:
                raise UnknownOutcomeToken(
                    f"'{entry.outcome}' en {entry.case_id}; válidos: {', '.join(OUTCOMES)}"
                )
            if entry.granularity not in GRANULARITIES:
                raise InputError(
                    f"granularidad '{entry.granularity}' inválida; válidas: {', '.join(GRANULARITIES)}"
                )
            key = (entry.object_id, entry.suite_id, entry.case_id)
            if key in seen:
                raise DuplicateCase(f"caso repetido {key} (entradas {seen[key]} y {position})")
            seen[key] = position

    def __len__(self) -> int:
        return len(self.entries)


def parse_test_outcomes_csv(text: TextInput) -> TestOutcomeMatrix:
    """
    Lee el CSV `object_id,suite_id,case_id,granularity,outcome`.

    :param text: Contenido UTF-8.
    :type text: TextInput
    :return: matriz validada; `error` se conserva distinto de `fail`.
    :rtype: TestOutcomeMatrix
    :raises BadHeader: Cabecera distinta.
    :raises UnknownOutcomeToken: Outcome fuera de pass/fail/error.
    :raises DuplicateCase: Caso repetido para el mismo programa y suite.
    """
    entries: List[OutcomeEntry] = []
    for line, fields in _read_table(text, OUTCOME_HEADER):
        if fields["outcome"] not in OUTCOMES:
            raise UnknownOutcomeToken(f"línea {line}: '{fields['outcome']}'")
        if fields["granularity"] not in GRANULARITIES:
            raise BadRow(line, f"granularidad '{fields['granularity']}' inválida")
        entries.append(OutcomeEntry(**fields))
    return TestOutcomeMatrix(entries=tuple(entries))


@dataclass(frozen=True, slots=True)
class OutcomeCounts:
    passed: int
    failed: int
    errored: int

    @property
    def total(self) -> int:
        return self.passed + self.failed + self.errored


@dataclass(frozen=True, slots=True)
class ScoreSet:
    """
    Puntajes 0-100 por (programa, suite) con sus conteos de auditoría.

    :param scores: (object_id, suite_id) -> porcentaje de casos aprobados.
    :type scores: Dict[Tuple[str, str], float]
    :param counts: (object_id, suite_id) -> conteos pass/fail/error.
    :type counts: Dict[Tuple[str, str], OutcomeCounts]
    :param granularity: Nivel usado (class, method, assertion).
    :type granularity: str
    """
    scores: Dict[Tuple[str, str], float]
    counts: Dict[Tuple[str, str], OutcomeCounts]
    granularity: str

    def for_suite(self, suite_id: str) -> Dict[str, float]:
        return {obj: score for (obj, suite), score in self.scores.items() if suite == suite_id}

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {
                "object_id": obj,
                "suite_id": suite,
                "score": score,
                "passed": self.counts[(obj, suite)].passed,
                "failed": self.counts[(obj, suite)].failed,
                "errored": self.counts[(obj, suite)].errored,
                "total": self.counts[(obj, suite)].total,
            }
            for (obj, suite), score in self.scores.items()
        ]


def score_outcomes(
    m: TestOutcomeMatrix,
    granularity: str = "method",
    treat_error_as: str = "fail",
) -> ScoreSet:
    """
    Porcentaje de casos aprobados por (programa, suite).

    score = 100 * pass / (pass + fail + error); los `error` cuentan como
    fallo y se reportan aparte en los conteos.

    :param m: Matriz de resultados.
    :type m: TestOutcomeMatrix
    :param granularity: class, method o assertion.
    :type granularity: str
    :param treat_error_as: Solo "fail".
    :type treat_error_as: str
    :return: puntajes en orden de primera aparición.
    :rtype: ScoreSet
    :raises NoEntriesAtGranularity: Si un (programa, suite) no tiene entradas al nivel pedido.
    """
    if granularity not in GRANULARITIES:
        raise InputError(f"granularidad '{granularity}' inválida")
    if treat_error_as != "fail":
        raise InputError("los errores solo pueden contarse como 'fail'")

    tallies: Dict[Tuple[str, str], Dict[str, int]] = {}
    for entry in m.entries:
        tally = tallies.setdefault((entry.object_id, entry.suite_id), {o: 0 for o in OUTCOMES})
        if entry.granularity == granularity:
            tally[entry.outcome] += 1

    if not tallies:
        raise NoEntriesAtGranularity("la matriz de resultados está vacía")

    scores: Dict[Tuple[str, str], float] = {}
    counts: Dict[Tuple[str, str], OutcomeCounts] = {}
    for key, tally in tallies.items():
        count = OutcomeCounts(passed=tally["pass"], failed=tally["fail"], errored=tally["error"])
        if count.total == 0:
            raise NoEntriesAtGranularity(
                f"({key[0]}, {key[1]}) no tiene casos a nivel '{granularity}'"
            )
        counts[key] = count
        scores[key] = 100.0 * count.passed / count.total

    log.debug("Puntajes calculados para %d pares (programa, suite)", len(scores))
    return ScoreSet(scores=scores, counts=counts, granularity=granularity)


def scores_to_dataset(scores: ScoreSet, variable: str) -> MeasurementDataset:
    """
    Convierte puntajes a mediciones: la suite pasa a ser el instrumento.

    :param scores: Puntajes.
    :type scores: ScoreSet
    :param variable: Etiqueta (QLTY o PROD).
    :type variable: str
    :return: dataset con replicate 0.
    :rtype: MeasurementDataset
    """
    return build_dataset(
        [
            MeasurementRecord(
                object_id=obj,
                instrument_id=suite,
                replicate=0,
                value=score,
                variable=variable,
            )
            for (obj, suite), score in scores.scores.items()
        ]
    )


# region Experimento
def _normalize_group(raw: str) -> str:
    return raw.replace("->", "→").replace(" ", "")


def parse_experiment_csv(text: TextInput, variable: str | None = None) -> List[ExperimentRow]:
    """
    Lee el CSV `subject_id,group,treatment,task,variable,value`.

    :param text: Contenido UTF-8.
    :type text: TextInput
    :param variable: Si se indica, solo se devuelven filas de esa variable.
    :type variable: Optional[str]
    :return: filas del experimento.
    :rtype: List[ExperimentRow]
    """
    rows: List[ExperimentRow] = []
    for line, fields in _read_table(text, EXPERIMENT_HEADER):
        if variable is not None and fields["variable"] != variable:
            continue
        try:
            rows.append(
                ExperimentRow(
                    subject_id=fields["subject_id"],
                    group=_normalize_group(fields["group"]),
                    treatment=fields["treatment"],
                    task=fields["task"],
                    y=_parse_value(fields["value"], line),
                )
            )
        except InputError as exc:
            if isinstance(exc, (BadRow, NonFiniteValue)):
                raise
            raise BadRow(line, exc.message) from exc
    return rows
