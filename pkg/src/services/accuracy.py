"""
Exactitud según GUM / ISO 5725-3: repetibilidad, veracidad, precisión
intermedia con ANOVA anidada, incertidumbre expandida y desviaciones
respecto de un valor de referencia.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import config
from src.errors import (
    AmbiguousReplicates,
    AnalysisWarning,
    EmptyInput,
    InputError,
    MissingTruth,
    NonFiniteValue,
    TooFewLevels,
    TooFewSamples,
    UnbalancedDesign,
    ZeroDf,
)
from src.services.dataset import AnovaTable, CellKey, MeasurementDataset
from src.services.ingestion import ScoreSet
from src.services.stats_util import (
    build_anova_table,
    normal_quantile,
    sample_sd,
    t_quantile,
)

log: logging.Logger = logging.getLogger(__name__)

PROGRAM: str = "Program"
PROGRAM_INSTRUMENT: str = "Program:Instrument"
RESIDUAL: str = "Residual"

COVERAGE_MODES: Tuple[str, ...] = ("t", "normal", "fixed2")


# region Repetibilidad y veracidad
def repeatability(values: Sequence[float]) -> float:
    """
    Incertidumbre de repetibilidad s_r (sd muestral de las repeticiones).

    Con un único valor devuelve 0 y emite una AnalysisWarning.

    :param values: Mediciones repetidas del mismo objeto.
    :type values: Sequence[float]
    :return: s_r >= 0.
    :rtype: float
    :raises EmptyInput: Sin valores.
    """
    if len(values) == 0:
        raise EmptyInput("repeatability necesita al menos un valor")
    if len(values) == 1:
        warnings.warn(
            "repeatability: un solo valor, s_r se informa como 0",
            AnalysisWarning,
            stacklevel=2,
        )
        return 0.0
    return sample_sd(values)


def trueness(values: Sequence[float], reference: float) -> float:
    """
    Veracidad: media de las mediciones menos el valor de referencia.

    :param values: Mediciones.
    :type values: Sequence[float]
    :param reference: Valor de referencia.
    :type reference: float
    :return: sesgo (negativo si el instrumento mide de menos).
    :rtype: float
    """
    if len(values) == 0:
        raise EmptyInput("trueness necesita al menos un valor")
    if not math.isfinite(reference):
        raise NonFiniteValue(f"valor de referencia no finito: {reference}")
    arr: np.ndarray = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("la muestra contiene valores no finitos")
    return float(arr.mean() - reference)


def instrument_trueness(
    ds: MeasurementDataset,
    variable: str,
    reference: float,
) -> Dict[str, float]:
    """
    Veracidad de cada instrumento respecto de un mismo valor de referencia.

    :return: instrument_id -> sesgo.
    :rtype: Dict[str, float]
    """
    return {
        inst: trueness(ds.values(variable, inst), reference)
        for inst in ds.instruments(variable)
    }


# region ANOVA anidada
def _balanced_cells(
    ds: MeasurementDataset,
    variable: str,
) -> Tuple[List[str], List[str], Dict[CellKey, List[float]]]:
    """
    Celdas (objeto, instrumento) de un diseño completo.

    :raises EmptyInput: Si la variable no tiene registros.
    :raises TooFewLevels: Menos de 2 objetos o 2 instrumentos.
    :raises UnbalancedDesign: Si falta alguna celda.
    """
    objects: List[str] = ds.objects(variable)
    instruments: List[str] = ds.instruments(variable)
    if not objects:
        raise EmptyInput(f"no hay registros de la variable {variable}")
    if len(objects) < 2 or len(instruments) < 2:
        raise TooFewLevels(
            f"se necesitan >= 2 objetos y >= 2 instrumentos "
            f"(hay {len(objects)} y {len(instruments)})"
        )

    cells: Dict[CellKey, List[float]] = ds.cells(variable)
    for obj in objects:
        for inst in instruments:
            if (obj, inst) not in cells:
                raise UnbalancedDesign(f"falta la celda ({obj}, {inst}) para {variable}")
    return objects, instruments, cells


def nested_anova(ds: MeasurementDataset, variable: str) -> AnovaTable:
    """
    ANOVA del modelo anidado Y = Program/Instrument + e.

    Filas: Program, Program:Instrument y Residual. Con una medición por
    celda la residual queda con df = 0 y SS = 0 (MS/F/p ausentes).

    :param ds: Dataset con todos los objetos medidos por todos los instrumentos.
    :type ds: MeasurementDataset
    :param variable: Variable de respuesta.
    :type variable: str
    :return: tabla ANOVA.
    :rtype: AnovaTable
    :raises UnbalancedDesign: Si falta alguna celda.
    :raises TooFewLevels: Menos de 2 objetos o instrumentos.
    """
    objects, instruments, cells = _balanced_cells(ds, variable)

    all_values: np.ndarray = np.concatenate([np.asarray(v, dtype=float) for v in cells.values()])
    n_obs: int = int(all_values.size)
    grand: float = float(all_values.mean())

    ss_program: float = 0.0
    ss_within: float = 0.0
    ss_residual: float = 0.0
    for obj in objects:
        obj_cells: List[np.ndarray] = [np.asarray(cells[(obj, inst)], dtype=float) for inst in instruments]
        obj_values: np.ndarray = np.concatenate(obj_cells)
        obj_mean: float = float(obj_values.mean())
        ss_program += obj_values.size * (obj_mean - grand) ** 2
        for cell in obj_cells:
            cell_mean: float = float(cell.mean())
            ss_within += cell.size * (cell_mean - obj_mean) ** 2
            ss_residual += float(np.sum((cell - cell_mean) ** 2))

    n_obj: int = len(objects)
    n_inst: int = len(instruments)
    df_program: int = n_obj - 1
    df_within: int = n_obj * (n_inst - 1)
    df_residual: int = n_obs - n_obj * n_inst

    log.debug(
        "ANOVA anidada %s: N=%d, objetos=%d, instrumentos=%d",
        variable, n_obs, n_obj, n_inst,
    )
    return build_anova_table(
        terms=[(PROGRAM, df_program, ss_program), (PROGRAM_INSTRUMENT, df_within, ss_within)],
        residual=(df_residual, ss_residual),
        n_obs=n_obs,
        residual_term=RESIDUAL,
    )


def intermediate_precision(anova: AnovaTable, s_r: float) -> Tuple[float, float]:
    """
    Componente del instrumento y precisión intermedia.

    s_M = sqrt(MS(Program:Instrument)); s_Rw = sqrt(s_M^2 + s_r^2).
    Si la residual tiene df > 0 se advierte que MS(Program:Instrument)
    incluye la varianza de repetibilidad.

    :param anova: Tabla de nested_anova.
    :type anova: AnovaTable
    :param s_r: Repetibilidad.
    :type s_r: float
    :return: (s_M, s_Rw).
    :rtype: Tuple[float, float]
    :raises MissingTerm: Si no existe la fila Program:Instrument.
    :raises ZeroDf: Si esa fila tiene df = 0.
    """
    if not (math.isfinite(s_r) and s_r >= 0):
        raise InputError(f"s_r debe ser finito y >= 0: {s_r}")

    row = anova.row(PROGRAM_INSTRUMENT)
    if row.df == 0 or row.ms is None:
        raise ZeroDf(f"{PROGRAM_INSTRUMENT} tiene df = 0")

    residual_df: int = next((r.df for r in anova.rows if r.term == RESIDUAL), 0)
    if residual_df > 0:
        warnings.warn(
            f"intermediate_precision: Residual tiene df = {residual_df}; "
            "s_M^2 se toma como MS(Program:Instrument) sin restar la "
            "esperanza de la residual (corrección de componentes de varianza no aplicada)",
            AnalysisWarning,
            stacklevel=2,
        )

    s_m: float = math.sqrt(row.ms)
    s_rw: float = math.sqrt(s_m * s_m + s_r * s_r)
    return s_m, s_rw


def expanded_uncertainty(
    s: float,
    n: int,
    alpha: float = 0.05,
    mode: str = "fixed2",
) -> Tuple[float, float]:
    """
    Factor de cobertura k e incertidumbre expandida U = k * s.

    - t: k = t_{(1 - alpha/2), (n - 2)}, requiere n >= 3.
    - normal: k = z_{(1 - alpha/2)}.
    - fixed2: k = 2.

    :param s: Incertidumbre estándar (>= 0).
    :type s: float
    :param n: Número de objetos medidos.
    :type n: int
    :param alpha: Nivel de significancia.
    :type alpha: float
    :param mode: t, normal o fixed2.
    :type mode: str
    :return: (k, U).
    :rtype: Tuple[float, float]
    :raises TooFewSamples: Modo t con n < 3.
    """
    if not (math.isfinite(s) and s >= 0):
        raise InputError(f"la incertidumbre estándar debe ser >= 0: {s}")
    if mode not in COVERAGE_MODES:
        raise InputError(f"modo de cobertura '{mode}' inválido; válidos: {', '.join(COVERAGE_MODES)}")

    if mode == "fixed2":
        k: float = 2.0
    elif mode == "normal":
        k = normal_quantile(1.0 - alpha / 2.0)
    else:
        if n < 3:
            raise TooFewSamples(f"el modo t necesita n >= 3, hay {n}")
        k = t_quantile(1.0 - alpha / 2.0, n - 2)
    return k, k * s


# region Reporte de exactitud
@dataclass(frozen=True, slots=True)
class AccuracyReport:
    """
    Componentes de la exactitud de un par (o conjunto) de instrumentos.

    :param s_r: Repetibilidad.
    :param trueness: Sesgo respecto de la referencia (None sin referencia).
    :param s_M: Componente del instrumento (escala sd).
    :param s_Rw: Precisión intermedia.
    :param expanded: Incertidumbre expandida = coverage_k * s_Rw.
    :param coverage_k: Factor de cobertura.
    :param alpha: Nivel usado para k.
    :param anova: Tabla del modelo anidado.
    """
    s_r: float
    trueness: Optional[float]
    s_M: float
    s_Rw: float
    expanded: float
    coverage_k: float
    alpha: float
    anova: AnovaTable
    coverage_mode: str = "fixed2"
    n_objects: int = 0


def assess_accuracy(
    ds: MeasurementDataset,
    variable: str,
    s_r: Optional[float] = None,
    reference: Optional[float] = None,
    alpha: Optional[float] = None,
    mode: Optional[str] = None,
) -> AccuracyReport:
    """
    Análisis completo de exactitud sobre un dataset.

    s_r: el entregado; si no, la sd combinada dentro de celda cuando hay
    repeticiones; si no, 0.

    :param ds: Dataset.
    :type ds: MeasurementDataset
    :param variable: Variable de respuesta.
    :type variable: str
    :param s_r: Repetibilidad conocida (opcional).
    :type s_r: Optional[float]
    :param reference: Valor de referencia para la veracidad (opcional).
    :type reference: Optional[float]
    :param alpha: Nivel (default config).
    :type alpha: Optional[float]
    :param mode: Modo de cobertura (default config).
    :type mode: Optional[str]
    :return: reporte.
    :rtype: AccuracyReport
    """
    alpha = config.alpha if alpha is None else alpha
    mode = config.coverage if mode is None else mode

    anova: AnovaTable = nested_anova(ds, variable)
    residual = anova.row(RESIDUAL)
    if s_r is None:
        s_r = math.sqrt(residual.ms) if residual.df > 0 and residual.ms is not None else 0.0

    s_m, s_rw = intermediate_precision(anova, s_r)
    n_objects: int = len(ds.objects(variable))
    k, expanded = expanded_uncertainty(s_rw, n_objects, alpha=alpha, mode=mode)
    bias: Optional[float] = (
        trueness(ds.values(variable), reference) if reference is not None else None
    )

    log.info("Precisión intermedia %s: s_M=%.4f, s_Rw=%.4f, U=%.4f", variable, s_m, s_rw, expanded)
    return AccuracyReport(
        s_r=s_r,
        trueness=bias,
        s_M=s_m,
        s_Rw=s_rw,
        expanded=expanded,
        coverage_k=k,
        alpha=alpha,
        anova=anova,
        coverage_mode=mode,
        n_objects=n_objects,
    )


# region Desviaciones
@dataclass(frozen=True, slots=True)
class DeviationPoint:
    object_id: str
    true_value: float
    measured_value: float

    @property
    def deviation(self) -> float:
        return self.measured_value - self.true_value


@dataclass(frozen=True, slots=True)
class DeviationReport:
    """
    Dispersión (verdadero, medido) respecto de la diagonal.

    :param points: Puntos en el orden de las mediciones.
    :param epsilon: Semiancho de la banda "sobre la diagonal".
    """
    points: Tuple[DeviationPoint, ...]
    epsilon: float
    instrument_id: str = ""

    def position(self, point: DeviationPoint) -> str:
        if point.deviation > self.epsilon:
            return "above"
        if point.deviation < -self.epsilon:
            return "below"
        return "on"

    @property
    def mean_deviation(self) -> float:
        return float(np.mean([p.deviation for p in self.points]))

    @property
    def mean_abs_deviation(self) -> float:
        return float(np.mean([abs(p.deviation) for p in self.points]))

    @property
    def max_abs_deviation(self) -> float:
        return float(max(abs(p.deviation) for p in self.points))

    @property
    def counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {"above": 0, "below": 0, "on": 0}
        for point in self.points:
            out[self.position(point)] += 1
        return out

    def to_records(self) -> List[Dict[str, object]]:
        return [
            {
                "object_id": p.object_id,
                "true_value": p.true_value,
                "measured_value": p.measured_value,
                "deviation": p.deviation,
                "position": self.position(p),
            }
            for p in self.points
        ]


def deviations_from_reference(
    measured: Union[ScoreSet, Mapping[str, float]],
    truth: Mapping[str, float],
    epsilon: Optional[float] = None,
    suite_id: Optional[str] = None,
    instrument_id: Optional[str] = None,
) -> DeviationReport:
    """
    Compara cada medición con su valor verdadero.

    :param measured: Mapa objeto -> valor, o ScoreSet junto con suite_id.
    :type measured: Union[ScoreSet, Mapping[str, float]]
    :param truth: Mapa objeto -> valor verdadero.
    :type truth: Mapping[str, float]
    :param epsilon: Banda ± alrededor de la diagonal (default config).
    :type epsilon: Optional[float]
    :param suite_id: Suite a tomar cuando measured es un ScoreSet.
    :type suite_id: Optional[str]
    :return: reporte de desviaciones.
    :rtype: DeviationReport
    :raises MissingTruth: Si un objeto medido no tiene valor verdadero.
    """
    epsilon = config.deviation_epsilon if epsilon is None else epsilon
    if not (math.isfinite(epsilon) and epsilon >= 0):
        raise InputError(f"epsilon debe ser >= 0: {epsilon}")

    if isinstance(measured, ScoreSet):
        if suite_id is None:
            suites: List[str] = list(dict.fromkeys(s for _, s in measured.scores))
            if len(suites) != 1:
                raise InputError(f"indicar suite_id; el ScoreSet tiene las suites {suites}")
            suite_id = suites[0]
        values: Mapping[str, float] = measured.for_suite(suite_id)
    else:
        values = measured

    if not values:
        raise EmptyInput("no hay mediciones para comparar")

    points: List[DeviationPoint] = []
    for object_id, value in values.items():
        if object_id not in truth:
            raise MissingTruth(f"sin valor verdadero para {object_id}")
        points.append(
            DeviationPoint(
                object_id=object_id,
                true_value=float(truth[object_id]),
                measured_value=float(value),
            )
        )

    return DeviationReport(points=tuple(points), epsilon=epsilon, instrument_id=instrument_id or suite_id or "")


def reference_values(ds: MeasurementDataset, variable: str) -> Dict[str, float]:
    """
    Valor verdadero por objeto a partir de un dataset de referencia.

    :param ds: Dataset con una sola fila por objeto.
    :type ds: MeasurementDataset
    :param variable: Variable de respuesta.
    :type variable: str
    :return: objeto -> valor verdadero.
    :rtype: Dict[str, float]
    :raises AmbiguousReplicates: Si un objeto aparece en más de una fila.
    """
    truth: Dict[str, float] = {}
    for r in ds.select(variable):
        if r.object_id in truth:
            raise AmbiguousReplicates(f"más de un valor verdadero para el objeto {r.object_id}")
        truth[r.object_id] = r.value
    return truth
