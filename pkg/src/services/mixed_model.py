"""
Modelo mixto del experimento: Y ~ Treatment + Task + Group + (1|Subject).

Un único intercepto aleatorio por sujeto, así que REML se reduce a optimizar
en una dimensión la razón lambda = var_subject / var_residual.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.config import config
from src.errors import (
    DegenerateVariance,
    DuplicateKey,
    EmptyInput,
    InputError,
    NonConvergence,
    NonFiniteValue,
    RankDeficientDesign,
    TooFewLevels,
    TooFewSamples,
)
from src.services.stats_util import normal_cdf

log: logging.Logger = logging.getLogger(__name__)

GROUPS: Tuple[str, ...] = ("MR→BSK", "BSK→MR")
TREATMENTS: Tuple[str, ...] = ("ITLD", "TDD")
TASKS: Tuple[str, ...] = ("MR", "BSK")

TERMS: Tuple[str, ...] = ("Intercept", "TreatmentTDD", "TaskMR", "GroupMR→BSK")

_GOLDEN: float = (math.sqrt(5.0) - 1.0) / 2.0
_LOG_2PI: float = math.log(2.0 * math.pi)
_BRACKET_WIDTH: float = 1e-8

STAR_BANDS: Tuple[Tuple[float, str], ...] = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


# region Tipos
@dataclass(frozen=True, slots=True)
class ExperimentRow:
    """
    Una observación del diseño cruzado.

    :param subject_id: Sujeto experimental.
    :type subject_id: str
    :param group: Secuencia de tareas (MR→BSK o BSK→MR).
    :type group: str
    :param treatment: ITLD o TDD.
    :type treatment: str
    :param task: MR o BSK.
    :type task: str
    :param y: Respuesta (QLTY o PROD, en %).
    :type y: float
    """
    subject_id: str
    group: str
    treatment: str
    task: str
    y: float

    def __post_init__(self) -> None:
        if not self.subject_id:
            raise EmptyInput("subject_id vacío")
        if self.group not in GROUPS:
            raise InputError(f"grupo '{self.group}' inválido; válidos: {', '.join(GROUPS)}")
        if self.treatment not in TREATMENTS:
            raise InputError(f"tratamiento '{self.treatment}' inválido; válidos: {', '.join(TREATMENTS)}")
        if self.task not in TASKS:
            raise InputError(f"tarea '{self.task}' inválida; válidas: {', '.join(TASKS)}")
        if not math.isfinite(self.y):
            raise NonFiniteValue(f"respuesta no finita para el sujeto {self.subject_id}")


@dataclass(frozen=True, slots=True)
class MixedModelFit:
    """
    Ajuste REML (o GLS a lambda fija).

    :param coefficients: término -> (estimación, error estándar).
    :param var_subject: Varianza del intercepto aleatorio.
    :param var_residual: Varianza residual.
    :param reml_criterion: -2 log-verosimilitud restringida.
    :param aic: reml_criterion + 2 (p + 2).
    :param n_obs: Observaciones.
    :param lam: Razón var_subject / var_residual.
    """
    coefficients: Dict[str, Tuple[float, float]]
    var_subject: float
    var_residual: float
    reml_criterion: float
    aic: float
    n_obs: int
    lam: float = 0.0
    n_subjects: int = 0
    iterations: int = 0

    @property
    def terms(self) -> List[str]:
        return list(self.coefficients)

    def estimate(self, term: str) -> float:
        return self.coefficients[term][0]

    def std_error(self, term: str) -> float:
        return self.coefficients[term][1]


@dataclass(frozen=True, slots=True)
class CoefficientSummary:
    term: str
    estimate: float
    std_error: float
    z: float
    p: float
    stars: str
    significant: bool


@dataclass(frozen=True, slots=True)
class TermComparison:
    """
    Un término del modelo ajustado con dos (o más) instrumentos.

    :param estimates: etiqueta -> estimación.
    :param stars: etiqueta -> estrellas.
    :param sign_reversal: Las estimaciones no nulas cambian de signo.
    :param significance_disagreement: Significativo con unos y no con otros.
    """
    term: str
    estimates: Dict[str, float] = field(default_factory=dict)
    stars: Dict[str, str] = field(default_factory=dict)
    sign_reversal: bool = False
    significance_disagreement: bool = False


# region Diseño
def _validate_rows(rows: Sequence[ExperimentRow]) -> List[str]:
    """
    Chequea el diseño cruzado y devuelve los sujetos en orden de aparición.

    :raises EmptyInput: Sin filas.
    :raises DuplicateKey: Mismo sujeto y tratamiento dos veces.
    :raises TooFewLevels: Menos de 2 sujetos.
    """
    if not rows:
        raise EmptyInput("el experimento no tiene filas")

    seen: Dict[Tuple[str, str], int] = {}
    groups: Dict[str, str] = {}
    for position, row in enumerate(rows):
        key = (row.subject_id, row.treatment)
        if key in seen:
            raise DuplicateKey(f"el sujeto {row.subject_id} tiene dos filas con {row.treatment}")
        seen[key] = position
        previous: Optional[str] = groups.setdefault(row.subject_id, row.group)
        if previous != row.group:
            raise InputError(f"el sujeto {row.subject_id} aparece en los grupos {previous} y {row.group}")

    subjects: List[str] = list(groups)
    if len(subjects) < 2:
        raise TooFewLevels(f"se necesitan >= 2 sujetos, hay {len(subjects)}")
    return subjects


def design_matrices(rows: Sequence[ExperimentRow]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Matrices X (efectos fijos, codificación dummy), Z (indicadora de sujeto) e y.

    Niveles de referencia: ITLD, BSK y grupo BSK→MR.

    :param rows: Filas del experimento.
    :type rows: Sequence[ExperimentRow]
    :return: (X, Z, y).
    :rtype: Tuple[np.ndarray, np.ndarray, np.ndarray]
    :raises RankDeficientDesign: Si X no tiene rango completo.
    """
    subjects: List[str] = _validate_rows(rows)
    index: Dict[str, int] = {s: i for i, s in enumerate(subjects)}

    x: np.ndarray = np.array(
        [
            [
                1.0,
                float(r.treatment == "TDD"),
                float(r.task == "MR"),
                float(r.group == "MR→BSK"),
            ]
            for r in rows
        ]
    )
    z: np.ndarray = np.zeros((len(rows), len(subjects)))
    for i, r in enumerate(rows):
        z[i, index[r.subject_id]] = 1.0
    y: np.ndarray = np.array([r.y for r in rows], dtype=float)

    rank: int = int(np.linalg.matrix_rank(x))
    if rank < x.shape[1]:
        raise RankDeficientDesign(f"la matriz de efectos fijos tiene rango {rank} < {x.shape[1]}")
    if len(rows) <= x.shape[1]:
        raise TooFewSamples(f"{len(rows)} observaciones no alcanzan para {x.shape[1]} efectos fijos")
    return x, z, y


# region GLS a lambda fija
@dataclass(frozen=True, slots=True)
class _GlsResult:
    beta: np.ndarray
    cov_unscaled: np.ndarray
    sigma2: float
    criterion: float


def _gls(x: np.ndarray, z: np.ndarray, y: np.ndarray, lam: float) -> _GlsResult:
    """
    GLS bajo V = I + lam Z Z' con sigma^2 perfilada.

    Blanquea con la Cholesky de V y resuelve mínimos cuadrados ordinarios.
    El criterio es (n - p)(1 + log 2pi + log sigma^2) + log|V| + log|X'V^-1X|.
    """
    n, p = x.shape
    v: np.ndarray = np.eye(n) + lam * (z @ z.T)
    chol: np.ndarray = linalg.cholesky(v, lower=True)
    xw: np.ndarray = linalg.solve_triangular(chol, x, lower=True)
    yw: np.ndarray = linalg.solve_triangular(chol, y, lower=True)

    xtx: np.ndarray = xw.T @ xw
    beta: np.ndarray = linalg.solve(xtx, xw.T @ yw, assume_a="pos")
    resid: np.ndarray = yw - xw @ beta
    rss: float = float(resid @ resid)
    sigma2: float = rss / (n - p)
    if not sigma2 > 0.0:
        raise DegenerateVariance("la varianza residual es 0: el modelo ajusta los datos exactamente")

    logdet_v: float = 2.0 * float(np.sum(np.log(np.diag(chol))))
    sign, logdet_xtx = np.linalg.slogdet(xtx)
    if sign <= 0:
        raise RankDeficientDesign("X'V^-1X no es definida positiva")

    criterion: float = (n - p) * (1.0 + _LOG_2PI + math.log(sigma2)) + logdet_v + float(logdet_xtx)
    return _GlsResult(beta=beta, cov_unscaled=linalg.inv(xtx), sigma2=sigma2, criterion=criterion)


def _to_fit(result: _GlsResult, lam: float, n_obs: int, n_subjects: int, iterations: int = 0) -> MixedModelFit:
    p: int = result.beta.size
    se: np.ndarray = np.sqrt(result.sigma2 * np.diag(result.cov_unscaled))
    return MixedModelFit(
        coefficients={
            term: (float(result.beta[i]), float(se[i])) for i, term in enumerate(TERMS)
        },
        var_subject=lam * result.sigma2,
        var_residual=result.sigma2,
        reml_criterion=result.criterion,
        aic=result.criterion + 2.0 * (p + 2),
        n_obs=n_obs,
        lam=lam,
        n_subjects=n_subjects,
        iterations=iterations,
    )


def fit_at_lambda(rows: Sequence[ExperimentRow], lam: float) -> MixedModelFit:
    """
    Ajuste GLS con la razón de varianzas fija (lam = 0 es OLS).

    :param rows: Filas del experimento.
    :type rows: Sequence[ExperimentRow]
    :param lam: var_subject / var_residual, >= 0.
    :type lam: float
    :return: ajuste.
    :rtype: MixedModelFit
    """
    if not (math.isfinite(lam) and lam >= 0.0):
        raise InputError(f"lambda debe ser finito y >= 0: {lam}")
    x, z, y = design_matrices(rows)
    return _to_fit(_gls(x, z, y, lam), lam, len(rows), z.shape[1])


def reml_criterion(rows: Sequence[ExperimentRow], lam: float) -> float:
    """-2 log-verosimilitud restringida perfilada en lam."""
    x, z, y = design_matrices(rows)
    return _gls(x, z, y, lam).criterion


# region REML
def _golden_section(
    objective,
    low: float,
    high: float,
    max_iter: int,
    tolerance: float,
) -> Tuple[float, float, int]:
    """
    Mínimo de una función unimodal en [low, high] por sección áurea.

    Converge cuando el intervalo mide menos de 1e-8, o cuando el criterio
    entre los dos puntos interiores difiere en <= tolerance con el
    intervalo ya chico.

    :return: (argmin, mínimo, iteraciones).
    :raises NonConvergence: Si se agotan las iteraciones.
    """
    a, b = low, high
    c: float = b - _GOLDEN * (b - a)
    d: float = a + _GOLDEN * (b - a)
    fc: float = objective(c)
    fd: float = objective(d)

    for iteration in range(1, max_iter + 1):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)

        width: float = b - a
        if width < _BRACKET_WIDTH or (width < 1e-3 and abs(fc - fd) <= tolerance):
            if fc <= fd:
                return c, fc, iteration
            return d, fd, iteration

    raise NonConvergence(
        f"REML sin converger tras {max_iter} iteraciones "
        f"(cambio de criterio {abs(fc - fd):.3g} > {tolerance:.0e})"
    )


def reml_fit(
    rows: Sequence[ExperimentRow],
    log_lambda_bounds: Optional[Tuple[float, float]] = None,
    max_iter: Optional[int] = None,
    tolerance: Optional[float] = None,
) -> MixedModelFit:
    """
    Ajuste REML de Y ~ Treatment + Task + Group + (1|Subject).

    Busca log(lambda) por sección áurea dentro de los límites y compara el
    óptimo con el borde lambda = 0; si el borde no es peor se devuelve
    var_subject = 0 (el ajuste coincide con OLS).

    :param rows: Filas del experimento.
    :type rows: Sequence[ExperimentRow]
    :param log_lambda_bounds: Intervalo de búsqueda de log(lambda) (default config).
    :type log_lambda_bounds: Optional[Tuple[float, float]]
    :param max_iter: Iteraciones máximas (default config).
    :type max_iter: Optional[int]
    :param tolerance: Tolerancia del criterio (default config).
    :type tolerance: Optional[float]
    :return: ajuste REML.
    :rtype: MixedModelFit
    :raises RankDeficientDesign: Si X no tiene rango completo.
    :raises NonConvergence: Si la búsqueda no converge.
    """
    low, high = log_lambda_bounds or config.log_lambda_bounds
    max_iter = config.reml_max_iter if max_iter is None else max_iter
    tolerance = config.reml_tolerance if tolerance is None else tolerance

    x, z, y = design_matrices(rows)

    def objective(log_lam: float) -> float:
        return _gls(x, z, y, math.exp(log_lam)).criterion

    log_lam, best, iterations = _golden_section(objective, low, high, max_iter, tolerance)
    lam: float = math.exp(log_lam)

    boundary: _GlsResult = _gls(x, z, y, 0.0)
    if boundary.criterion <= best:
        log.debug("REML en el borde: lambda = 0 (criterio %.6f <= %.6f)", boundary.criterion, best)
        return _to_fit(boundary, 0.0, len(rows), z.shape[1], iterations)

    log.debug("REML: lambda=%.6g tras %d iteraciones (criterio %.6f)", lam, iterations, best)
    return _to_fit(_gls(x, z, y, lam), lam, len(rows), z.shape[1], iterations)


# region Resumen
def stars_for(p: float) -> str:
    for bound, stars in STAR_BANDS:
        if p < bound:
            return stars
    return ""


def summarize_fit(fit: MixedModelFit, alpha: Optional[float] = None) -> List[CoefficientSummary]:
    """
    Tabla de significancia con z de Wald y p bilateral normal.

    :param fit: Ajuste.
    :type fit: MixedModelFit
    :param alpha: Nivel para la columna `significant` (default config).
    :type alpha: Optional[float]
    :return: una fila por término, en el orden del ajuste.
    :rtype: List[CoefficientSummary]
    """
    alpha = config.alpha if alpha is None else alpha
    out: List[CoefficientSummary] = []
    for term, (estimate, se) in fit.coefficients.items():
        if estimate == 0.0:
            z: float = 0.0
        elif se > 0.0:
            z = estimate / se
        else:
            raise DegenerateVariance(f"error estándar nulo para {term}")
        p: float = min(1.0, 2.0 * normal_cdf(-abs(z)))
        out.append(
            CoefficientSummary(
                term=term,
                estimate=estimate,
                std_error=se,
                z=z,
                p=p,
                stars=stars_for(p),
                significant=p < alpha,
            )
        )
    return out


def compare_fits(
    fits: Mapping[str, MixedModelFit],
    alpha: Optional[float] = None,
) -> List[TermComparison]:
    """
    Compara por término los ajustes de distintos instrumentos.

    :param fits: etiqueta -> ajuste (al menos dos).
    :type fits: Mapping[str, MixedModelFit]
    :param alpha: Nivel de significancia (default config).
    :type alpha: Optional[float]
    :return: una comparación por término.
    :rtype: List[TermComparison]
    """
    if len(fits) < 2:
        raise InputError(f"compare_fits necesita al menos dos ajustes, hay {len(fits)}")

    summaries: Dict[str, Dict[str, CoefficientSummary]] = {
        label: {s.term: s for s in summarize_fit(fit, alpha)} for label, fit in fits.items()
    }
    comparisons: List[TermComparison] = []
    for term in TERMS:
        rows: Dict[str, CoefficientSummary] = {label: s[term] for label, s in summaries.items()}
        signs = {np.sign(r.estimate) for r in rows.values() if r.estimate != 0.0}
        significance = {r.significant for r in rows.values()}
        comparisons.append(
            TermComparison(
                term=term,
                estimates={label: r.estimate for label, r in rows.items()},
                stars={label: r.stars for label, r in rows.items()},
                sign_reversal=len(signs) > 1,
                significance_disagreement=len(significance) > 1,
            )
        )
    return comparisons
