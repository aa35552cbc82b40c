"""
Estadística descriptiva, correlación de Pearson y funciones de distribución
(t de Student, F) sobre la beta incompleta regularizada.

La beta incompleta se evalúa con la fracción continua de Lentz y se invierte
con Newton acotado por bisección; la normal viene de scipy.special.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from src.errors import (
    BadDegreesOfFreedom,
    BadProbability,
    DegenerateVariance,
    InputError,
    NonConvergence,
    NonFiniteValue,
    TooFewPairs,
    TooFewValues,
)
from src.services.dataset import AnovaRow, AnovaTable, PairedMeasurements

log: logging.Logger = logging.getLogger(__name__)

_CF_MAX_ITER: int = 20000
_CF_EPS: float = 1e-15
_FPMIN: float = 1e-300
_DOUBLE_EPS: float = np.finfo(float).eps


# region Descriptivos
def _as_finite_array(values: Sequence[float]) -> np.ndarray:
    arr: np.ndarray = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise InputError("se esperaba una secuencia 1-D de valores")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("la muestra contiene valores no finitos")
    return arr


def sample_sd(values: Sequence[float]) -> float:
    """
    Desviación estándar muestral (divisor n - 1).

    :param values: Al menos dos valores finitos.
    :type values: Sequence[float]
    :return: sd >= 0.
    :rtype: float
    :raises TooFewValues: Si hay menos de dos valores.
    """
    arr: np.ndarray = _as_finite_array(values)
    if arr.size < 2:
        raise TooFewValues(f"se necesitan al menos 2 valores, hay {arr.size}")
    # Centrado explícito: la sd no depende de la ubicación.
    centered: np.ndarray = arr - arr.mean()
    return float(math.sqrt(float(np.dot(centered, centered)) / (arr.size - 1)))


def c4(n: int) -> float:
    """
    Factor de sesgo de la sd muestral gaussiana: E[s] = c4(n) * sigma.

    :param n: Tamaño de muestra (>= 2).
    :type n: int
    :return: c4 en (0, 1).
    :rtype: float
    """
    if n < 2:
        raise TooFewValues("c4 requiere n >= 2")
    return math.sqrt(2.0 / (n - 1)) * math.exp(math.lgamma(n / 2.0) - math.lgamma((n - 1) / 2.0))


def describe(values: Sequence[float]) -> Dict[str, float]:
    """
    Resumen de una muestra de estimaciones: media, sd, error estándar y cuantiles.

    :param values: Estimaciones (>= 2).
    :type values: Sequence[float]
    :return: dict con mean, sd, se, q025, q250, q500, q750, q975.
    :rtype: Dict[str, float]
    """
    arr: np.ndarray = _as_finite_array(values)
    sd: float = sample_sd(arr)
    q025, q250, q500, q750, q975 = np.quantile(arr, [0.025, 0.25, 0.5, 0.75, 0.975])
    return {
        "mean": float(arr.mean()),
        "sd": sd,
        "se": sd / math.sqrt(arr.size),
        "q025": float(q025),
        "q250": float(q250),
        "q500": float(q500),
        "q750": float(q750),
        "q975": float(q975),
    }


# region Beta incompleta
def _betacf(a: float, b: float, x: float) -> float:
    """Fracción continua de I_x(a, b), algoritmo de Lentz modificado."""
    qab: float = a + b
    qap: float = a + 1.0
    qam: float = a - 1.0
    c: float = 1.0
    d: float = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h: float = d

    for m in range(1, _CF_MAX_ITER + 1):
        m2: int = 2 * m
        aa: float = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c

        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta: float = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h

    raise NonConvergence(f"fracción continua sin converger (a={a}, b={b}, x={x})")


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def betainc(a: float, b: float, x: float, y: Optional[float] = None) -> float:
    """
    Beta incompleta regularizada I_x(a, b).

    :param a: Parámetro > 0.
    :type a: float
    :param b: Parámetro > 0.
    :type b: float
    :param x: Punto en [0, 1].
    :type x: float
    :param y: 1 - x calculado por el caller sin cancelación (opcional).
    :type y: Optional[float]
    :return: probabilidad en [0, 1].
    :rtype: float
    :raises BadProbability: Si x está fuera de [0, 1].
    """
    if a <= 0 or b <= 0:
        raise BadDegreesOfFreedom(f"parámetros de la beta deben ser > 0 (a={a}, b={b})")
    if not 0.0 <= x <= 1.0:
        raise BadProbability(f"x fuera de [0, 1]: {x}")
    if y is None:
        y = 1.0 - x
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return 1.0

    log_front: float = a * math.log(x) + b * math.log(y) - _log_beta(a, b)
    # Cambio de simetría en x = (a + 1) / (a + b + 2)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, y) / b


def betaincinv(a: float, b: float, p: float, x0: Optional[float] = None) -> float:
    """
    Inversa de I_x(a, b) en x, Newton acotado por bisección.

    :param a: Parámetro > 0.
    :type a: float
    :param b: Parámetro > 0.
    :type b: float
    :param p: Probabilidad objetivo en [0, 1].
    :type p: float
    :param x0: Punto de partida opcional en (0, 1).
    :type x0: Optional[float]
    :return: x con I_x(a, b) = p.
    :rtype: float
    """
    if not 0.0 <= p <= 1.0:
        raise BadProbability(f"probabilidad fuera de [0, 1]: {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0

    lo: float = 0.0
    hi: float = 1.0
    x: float = x0 if x0 is not None and 0.0 < x0 < 1.0 else 0.5
    log_b: float = _log_beta(a, b)

    for _ in range(400):
        diff: float = betainc(a, b, x) - p
        if diff == 0.0:
            return x
        if diff < 0.0:
            lo = x
        else:
            hi = x

        log_pdf: float = (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - log_b
        pdf: float = math.exp(log_pdf) if log_pdf < 700.0 else math.inf
        candidate: float = x - diff / pdf if pdf > 0.0 else math.nan
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)

        if abs(candidate - x) <= 4.0 * _DOUBLE_EPS * max(x, _FPMIN) or hi - lo <= _DOUBLE_EPS * hi:
            return candidate
        x = candidate

    raise NonConvergence(f"inversa de la beta sin converger (a={a}, b={b}, p={p})")


# region Normal y t de Student
def normal_cdf(z: float) -> float:
    return float(special.ndtr(z))


def normal_quantile(prob: float) -> float:
    if not 0.0 < prob < 1.0:
        raise BadProbability(f"probabilidad fuera de (0, 1): {prob}")
    return float(special.ndtri(prob))


def _check_df(df: float) -> None:
    if not (math.isfinite(df) and df >= 1):
        raise BadDegreesOfFreedom(f"grados de libertad inválidos: {df}")


def t_upper_tail(t: float, df: float) -> float:
    """
    P(T > t) para T ~ t(df).

    :param t: Estadístico.
    :type t: float
    :param df: Grados de libertad (>= 1).
    :type df: float
    :return: probabilidad de la cola superior.
    :rtype: float
    """
    _check_df(df)
    if t == 0.0:
        return 0.5
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2: float = t * t
    half_tail: float = 0.5 * betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
    return half_tail if t > 0 else 1.0 - half_tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_upper_tail(t, df) if t > 0 else t_upper_tail(-t, df)


def t_pdf(t: float, df: float) -> float:
    _check_df(df)
    log_norm: float = (
        math.lgamma((df + 1.0) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
    )
    return math.exp(log_norm - (df + 1.0) / 2.0 * math.log1p(t * t / df))


def t_quantile(prob: float, df: float) -> float:
    """
    Cuantil de la t de Student.

    Se invierte I_x(df/2, 1/2) = 2 (1 - prob) y se refina con Newton sobre
    la cola superior.

    :param prob: Probabilidad en (0, 1).
    :type prob: float
    :param df: Grados de libertad (>= 1).
    :type df: float
    :return: t tal que P(T <= t) = prob.
    :rtype: float
    :raises BadProbability: Si prob no está en (0, 1).
    """
    if not (math.isfinite(prob) and 0.0 < prob < 1.0):
        raise BadProbability(f"probabilidad fuera de (0, 1): {prob}")
    _check_df(df)
    if prob == 0.5:
        return 0.0
    if prob < 0.5:
        return -t_quantile(1.0 - prob, df)

    upper: float = 1.0 - prob

    # Arranque Cornish-Fisher desde el cuantil normal
    z: float = normal_quantile(prob)
    guess: float = z + (z ** 3 + z) / (4.0 * df) + (5 * z ** 5 + 16 * z ** 3 + 3 * z) / (96.0 * df ** 2)
    x0: float = df / (df + guess * guess)

    x: float = betaincinv(df / 2.0, 0.5, 2.0 * upper, x0=x0)
    t: float = math.sqrt(df * (1.0 - x) / x) if x > 0.0 else math.inf
    if math.isinf(t):
        return t

    for _ in range(4):
        step: float = (t_upper_tail(t, df) - upper) / t_pdf(t, df)
        t += step
        if abs(step) <= 1e-15 * abs(t):
            break
    return t


# region F
def f_pvalue(f: float, df1: float, df2: float) -> float:
    """
    P(F > f) para F ~ F(df1, df2), vía I_x(df2/2, df1/2) con x = df2 / (df2 + df1 f).

    :param f: Estadístico F (>= 0).
    :type f: float
    :param df1: Grados de libertad del numerador.
    :type df1: float
    :param df2: Grados de libertad del denominador.
    :type df2: float
    :return: p-valor de la cola superior.
    :rtype: float
    :raises BadDegreesOfFreedom: Si df1 o df2 < 1.
    """
    if not (df1 >= 1 and df2 >= 1):
        raise BadDegreesOfFreedom(f"grados de libertad inválidos: ({df1}, {df2})")
    if math.isnan(f) or f < 0:
        raise InputError(f"estadístico F inválido: {f}")
    if f == 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    denom: float = df2 + df1 * f
    return betainc(df2 / 2.0, df1 / 2.0, df2 / denom, df1 * f / denom)


# region Correlación
@dataclass(frozen=True, slots=True)
class CorrelationResult:
    """
    Correlación de Pearson con su prueba t.

    :param r: Coeficiente en [-1, 1].
    :type r: float
    :param n: Número de pares.
    :type n: int
    :param t_stat: r * sqrt((n - 2) / (1 - r^2)); infinito si |r| = 1.
    :type t_stat: float
    :param p_two_sided: p-valor bilateral con n - 2 gl.
    :type p_two_sided: float
    """
    r: float
    n: int
    t_stat: float
    p_two_sided: float

    @property
    def effect_size(self) -> str:
        """Etiqueta de Cohen sobre |r|."""
        magnitude: float = abs(self.r)
        if magnitude >= 0.5:
            return "large"
        if magnitude >= 0.3:
            return "medium"
        if magnitude >= 0.1:
            return "small"
        return "negligible"


def pearson(pairs: PairedMeasurements) -> CorrelationResult:
    """
    Correlación entre los valores de los dos instrumentos.

    :param pairs: Al menos 3 pares.
    :type pairs: PairedMeasurements
    :return: r, t y p bilateral.
    :rtype: CorrelationResult
    :raises TooFewPairs: Si hay menos de 3 pares.
    :raises DegenerateVariance: Si alguna coordenada es constante.
    """
    n: int = len(pairs)
    if n < 3:
        raise TooFewPairs(f"se necesitan al menos 3 pares, hay {n}")

    dx: np.ndarray = pairs.values_a - pairs.values_a.mean()
    dy: np.ndarray = pairs.values_b - pairs.values_b.mean()
    sxx: float = float(np.dot(dx, dx))
    syy: float = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance(
            f"varianza nula en {pairs.instrument_a if sxx == 0.0 else pairs.instrument_b}"
        )

    r: float = float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    df: int = n - 2
    one_minus_r2: float = (1.0 - r) * (1.0 + r)

    if one_minus_r2 == 0.0:
        return CorrelationResult(r=r, n=n, t_stat=math.copysign(math.inf, r), p_two_sided=0.0)

    t_stat: float = r * math.sqrt(df / one_minus_r2)
    # df / (df + t^2) = 1 - r^2
    p: float = betainc(df / 2.0, 0.5, one_minus_r2, r * r)
    return CorrelationResult(r=r, n=n, t_stat=t_stat, p_two_sided=p)


# region Tablas ANOVA
def build_anova_table(
    terms: Sequence[Tuple[str, int, float]],
    residual: Tuple[int, float],
    n_obs: int,
    residual_term: str = "Residual",
) -> AnovaTable:
    """
    Arma una AnovaTable con MS, F y p respecto de la fila residual.

    MS queda ausente con df = 0; F y p solo existen cuando la residual tiene
    df > 0 y MS > 0.

    :param terms: (término, df, SS) en orden de presentación.
    :type terms: Sequence[Tuple[str, int, float]]
    :param residual: (df, SS) de la residual.
    :type residual: Tuple[int, float]
    :param n_obs: Número de observaciones.
    :type n_obs: int
    :param residual_term: Nombre de la fila residual.
    :type residual_term: str
    :return: tabla.
    :rtype: AnovaTable
    """
    res_df, res_ss = residual
    res_ss = max(float(res_ss), 0.0)
    res_ms: Optional[float] = res_ss / res_df if res_df > 0 else None

    rows: list = []
    for term, df, ss in terms:
        ss = max(float(ss), 0.0)
        ms: Optional[float] = ss / df if df > 0 else None
        f_value: Optional[float] = None
        p_value: Optional[float] = None
        if ms is not None and res_ms is not None and res_ms > 0.0:
            f_value = ms / res_ms
            p_value = f_pvalue(f_value, df, res_df)
        rows.append(AnovaRow(term=term, df=int(df), ss=ss, ms=ms, f=f_value, p=p_value))

    rows.append(AnovaRow(term=residual_term, df=int(res_df), ss=res_ss, ms=res_ms))
    return AnovaTable(rows=tuple(rows), n_obs=n_obs)
