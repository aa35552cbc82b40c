"""
Procesos de medición sintéticos con componentes conocidas y oráculo
Monte Carlo de los estimadores.

Modelo: y_ijr = mu + o_i + bias_j + g_ij + e_ijr, todo gaussiano.

Generador: numpy Philox 4x64 (10 rondas) con key = (semilla maestra + i)
mod 2^64 y contador en cero. Las componentes se extraen en orden fijo:
objetos (n), interacciones (n x m, por fila) y ruido (n x m x r), aunque
alguna sigma sea 0.

El diseño cruzado del experimento (ITLD y luego TDD por sujeto) se genera
con el mismo esquema: interceptos de sujeto (n) y después ruido (n x 2).
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import config
from src.errors import (
    AgreementError,
    AnalysisWarning,
    DegenerateVariance,
    EstimatorFailure,
    InputError,
    InvalidProcessSpec,
    IoFailure,
    TooFewSamples,
    UnknownEstimator,
)
from src.services.accuracy import nested_anova, trueness, PROGRAM_INSTRUMENT
from src.services.agreement import assess_icc, bland_altman
from src.services.dataset import (
    MeasurementDataset,
    MeasurementRecord,
    PairedMeasurements,
    aggregate_replicates,
    build_dataset,
    pair_by_object,
)
from src.services.mixed_model import GROUPS, TERMS, ExperimentRow, MixedModelFit, reml_fit
from src.services.stats_util import c4, describe, pearson

log: logging.Logger = logging.getLogger(__name__)

SIM_VARIABLE: str = "SIM"
_SEED_MODULUS: int = 2 ** 64


# region ProcessSpec
@dataclass(frozen=True, slots=True)
class ProcessSpec:
    """
    Proceso de medición sintético.

    :param n_objects: Objetos medidos (>= 2).
    :param instruments: (id, sesgo) de cada instrumento, en orden.
    :param sigma_object: sd entre objetos.
    :param sigma_interaction: sd de la interacción objeto x instrumento.
    :param sigma_noise: sd de repetibilidad.
    :param replicates: Repeticiones por celda (>= 1).
    :param seed: Semilla maestra de 64 bits.
    """
    n_objects: int
    instruments: Tuple[Tuple[str, float], ...]
    sigma_object: float
    sigma_interaction: float
    sigma_noise: float
    replicates: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_objects < 2:
            raise InvalidProcessSpec(f"n_objects debe ser >= 2: {self.n_objects}")
        if not self.instruments:
            raise InvalidProcessSpec("se necesita al menos un instrumento")
        ids: List[str] = [inst for inst, _ in self.instruments]
        if len(set(ids)) != len(ids) or not all(ids):
            raise InvalidProcessSpec(f"ids de instrumento vacíos o repetidos: {ids}")
        for inst, bias in self.instruments:
            if not math.isfinite(bias):
                raise InvalidProcessSpec(f"sesgo no finito para {inst}")
        for name in ("sigma_object", "sigma_interaction", "sigma_noise"):
            value: float = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidProcessSpec(f"{name} debe ser finito y >= 0: {value}")
        if self.replicates < 1:
            raise InvalidProcessSpec(f"replicates debe ser >= 1: {self.replicates}")
        if not 0 <= self.seed < _SEED_MODULUS:
            raise InvalidProcessSpec(f"seed fuera de [0, 2^64): {self.seed}")

    @property
    def instrument_ids(self) -> List[str]:
        return [inst for inst, _ in self.instruments]

    @property
    def biases(self) -> np.ndarray:
        return np.array([bias for _, bias in self.instruments], dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = asdict(self)
        out["instruments"] = [[inst, bias] for inst, bias in self.instruments]
        return out


def load_process_spec(source: Union[str, Path, Mapping[str, Any]]) -> ProcessSpec:
    """
    Lee un ProcessSpec desde un archivo JSON (o un dict ya cargado).

    `instruments` acepta [[id, bias], ...] o [{"id": ..., "bias": ...}, ...].

    :param source: Ruta al JSON o mapping.
    :type source: Union[str, Path, Mapping[str, Any]]
    :return: spec validada.
    :rtype: ProcessSpec
    :raises IoFailure: Si no se puede leer el archivo.
    :raises InvalidProcessSpec: Si el contenido no es válido.
    """
    if isinstance(source, Mapping):
        raw: Any = dict(source)
    else:
        path = Path(source)
        try:
            text: str = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"no se pudo leer {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidProcessSpec(f"{path}: JSON inválido ({exc.msg}, línea {exc.lineno})") from exc

    if not isinstance(raw, dict):
        raise InvalidProcessSpec("el ProcessSpec debe ser un objeto JSON")

    try:
        instruments: List[Tuple[str, float]] = []
        for item in raw["instruments"]:
            if isinstance(item, Mapping):
                instruments.append((str(item["id"]), float(item["bias"])))
            else:
                inst, bias = item
                instruments.append((str(inst), float(bias)))
        return ProcessSpec(
            n_objects=int(raw["n_objects"]),
            instruments=tuple(instruments),
            sigma_object=float(raw["sigma_object"]),
            sigma_interaction=float(raw["sigma_interaction"]),
            sigma_noise=float(raw["sigma_noise"]),
            replicates=int(raw.get("replicates", 1)),
            seed=int(raw.get("seed", 0)),
        )
    except KeyError as exc:
        raise InvalidProcessSpec(f"falta el campo {exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidProcessSpec):
            raise
        raise InvalidProcessSpec(f"campo inválido: {exc}") from exc


# region Generación
def replicate_seed(master: int, index: int) -> int:
    return (master + index) % _SEED_MODULUS


def make_rng(seed: int) -> np.random.Generator:
    """Generator Philox con la semilla como key y contador en cero."""
    return np.random.Generator(np.random.Philox(key=seed % _SEED_MODULUS))


def gen_dataset(spec: ProcessSpec, seed: Optional[int] = None) -> MeasurementDataset:
    """
    Genera un dataset sintético.

    :param spec: Proceso.
    :type spec: ProcessSpec
    :param seed: Semilla a usar en lugar de spec.seed.
    :type seed: Optional[int]
    :return: dataset con variable SIM; objetos P001.., instrumentos de la spec.
    :rtype: MeasurementDataset
    """
    rng: np.random.Generator = make_rng(spec.seed if seed is None else seed)
    n: int = spec.n_objects
    m: int = len(spec.instruments)
    r: int = spec.replicates
    mu: float = config.simulation_mu

    objects: np.ndarray = rng.normal(0.0, spec.sigma_object, size=n)
    interactions: np.ndarray = rng.normal(0.0, spec.sigma_interaction, size=(n, m))
    noise: np.ndarray = rng.normal(0.0, spec.sigma_noise, size=(n, m, r))
    values: np.ndarray = (
        mu + objects[:, None, None] + spec.biases[None, :, None] + interactions[:, :, None] + noise
    )

    width: int = max(3, len(str(n)))
    records: List[MeasurementRecord] = [
        MeasurementRecord(
            object_id=f"P{i + 1:0{width}d}",
            instrument_id=inst,
            replicate=rep,
            value=float(values[i, j, rep]),
            variable=SIM_VARIABLE,
        )
        for i in range(n)
        for j, inst in enumerate(spec.instrument_ids)
        for rep in range(r)
    ]
    return build_dataset(records)


# region Diseño cruzado
@dataclass(frozen=True, slots=True)
class CrossoverSpec:
    """
    Experimento cruzado sintético para el modelo mixto.

    La primera mitad de los sujetos (redondeando hacia arriba) va al grupo
    MR→BSK y el resto a BSK→MR.

    :param n_subjects: Sujetos (>= 4).
    :param beta: Efectos fijos en el orden de TERMS.
    :param sigma_subject: sd del intercepto aleatorio.
    :param sigma_residual: sd residual.
    :param seed: Semilla maestra de 64 bits.
    """
    n_subjects: int
    beta: Tuple[float, float, float, float]
    sigma_subject: float
    sigma_residual: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_subjects < 4:
            raise InvalidProcessSpec(f"n_subjects debe ser >= 4: {self.n_subjects}")
        if len(self.beta) != len(TERMS) or not all(math.isfinite(b) for b in self.beta):
            raise InvalidProcessSpec(f"beta necesita {len(TERMS)} valores finitos: {self.beta}")
        for name in ("sigma_subject", "sigma_residual"):
            value: float = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidProcessSpec(f"{name} debe ser finito y >= 0: {value}")
        if not 0 <= self.seed < _SEED_MODULUS:
            raise InvalidProcessSpec(f"seed fuera de [0, 2^64): {self.seed}")

    @property
    def groups(self) -> List[str]:
        first: int = (self.n_subjects + 1) // 2
        return [GROUPS[0]] * first + [GROUPS[1]] * (self.n_subjects - first)

    def truth(self) -> Dict[str, float]:
        """Valores verdaderos: un término por efecto fijo más var_subject y var_residual."""
        out: Dict[str, float] = dict(zip(TERMS, (float(b) for b in self.beta)))
        out["var_subject"] = self.sigma_subject ** 2
        out["var_residual"] = self.sigma_residual ** 2
        return out


def gen_crossover(spec: CrossoverSpec, seed: Optional[int] = None) -> List[ExperimentRow]:
    """
    Genera las filas del experimento cruzado.

    Cada sujeto hace ITLD y luego TDD; MR→BSK resuelve MR con ITLD y BSK con
    TDD, BSK→MR al revés.

    :param spec: Experimento.
    :type spec: CrossoverSpec
    :param seed: Semilla a usar en lugar de spec.seed.
    :type seed: Optional[int]
    :return: dos filas por sujeto (S01, S02, ...).
    :rtype: List[ExperimentRow]
    """
    rng: np.random.Generator = make_rng(spec.seed if seed is None else seed)
    intercept, b_treatment, b_task, b_group = spec.beta
    n: int = spec.n_subjects

    subjects: np.ndarray = rng.normal(0.0, spec.sigma_subject, size=n)
    noise: np.ndarray = rng.normal(0.0, spec.sigma_residual, size=(n, 2))

    width: int = max(2, len(str(n)))
    rows: List[ExperimentRow] = []
    for i, group in enumerate(spec.groups):
        mr_first: bool = group == GROUPS[0]
        base: float = intercept + (b_group if mr_first else 0.0) + float(subjects[i])
        subject: str = f"S{i + 1:0{width}d}"
        rows.append(
            ExperimentRow(
                subject, group, "ITLD", "MR" if mr_first else "BSK",
                base + (b_task if mr_first else 0.0) + float(noise[i, 0]),
            )
        )
        rows.append(
            ExperimentRow(
                subject, group, "TDD", "BSK" if mr_first else "MR",
                base + b_treatment + (0.0 if mr_first else b_task) + float(noise[i, 1]),
            )
        )
    return rows


# region Estimadores
def _pairs(ds: MeasurementDataset, spec: ProcessSpec) -> PairedMeasurements:
    if len(spec.instruments) < 2:
        raise InputError("el estimador necesita dos instrumentos")
    a, b = spec.instrument_ids[:2]
    return pair_by_object(aggregate_replicates(ds, SIM_VARIABLE), a, b, SIM_VARIABLE)


def _pooled_repeatability(ds: MeasurementDataset, spec: ProcessSpec) -> float:
    if spec.replicates < 2:
        raise TooFewSamples("la repetibilidad necesita replicates >= 2")
    ss: float = 0.0
    df: int = 0
    for values in ds.cells(SIM_VARIABLE).values():
        cell: np.ndarray = np.asarray(values, dtype=float)
        ss += float(np.sum((cell - cell.mean()) ** 2))
        df += cell.size - 1
    return math.sqrt(ss / df)


def _ms_interaction(ds: MeasurementDataset, spec: ProcessSpec) -> float:
    return float(nested_anova(ds, SIM_VARIABLE).row(PROGRAM_INSTRUMENT).ms)


Estimator = Callable[[MeasurementDataset, ProcessSpec], float]

ESTIMATORS: Dict[str, Estimator] = {
    "trueness": lambda ds, spec: trueness(
        ds.values(SIM_VARIABLE, spec.instrument_ids[0]), config.simulation_mu
    ),
    "repeatability": _pooled_repeatability,
    "s_M2": _ms_interaction,
    "s_M": lambda ds, spec: math.sqrt(_ms_interaction(ds, spec)),
    "s_d": lambda ds, spec: bland_altman(_pairs(ds, spec)).s_d,
    "d_bar": lambda ds, spec: bland_altman(_pairs(ds, spec)).d_bar,
    "rho": lambda ds, spec: assess_icc(aggregate_replicates(ds, SIM_VARIABLE), SIM_VARIABLE).rho,
    "pearson_r": lambda ds, spec: pearson(_pairs(ds, spec)).r,
}
ESTIMATORS["icc3_1"] = ESTIMATORS["rho"]


# region Monte Carlo
@dataclass(frozen=True, slots=True)
class MonteCarloSummary:
    """
    Resumen de las estimaciones de un estimador sobre n_reps réplicas.

    :param estimates: Estimación de cada réplica, en orden de réplica.
    """
    estimator: str
    n_reps: int
    mean: float
    sd: float
    se: float
    q025: float
    q500: float
    q975: float
    estimates: Tuple[float, ...]

    def to_record(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "n_reps": self.n_reps,
            "mean": self.mean,
            "sd": self.sd,
            "se": self.se,
            "q025": self.q025,
            "q500": self.q500,
            "q975": self.q975,
        }


def _summary(name: str, estimates: Tuple[float, ...]) -> MonteCarloSummary:
    stats: Dict[str, float] = describe(estimates)
    return MonteCarloSummary(
        estimator=name,
        n_reps=len(estimates),
        mean=stats["mean"],
        sd=stats["sd"],
        se=stats["se"],
        q025=stats["q025"],
        q500=stats["q500"],
        q975=stats["q975"],
        estimates=estimates,
    )


def _evaluate(ds: MeasurementDataset, spec: ProcessSpec, names: Sequence[str], index: int) -> Tuple[float, ...]:
    try:
        return tuple(float(ESTIMATORS[name](ds, spec)) for name in names)
    except (AgreementError, ArithmeticError, ValueError) as exc:
        raise EstimatorFailure(index, exc) from exc


def monte_carlo(
    spec: ProcessSpec,
    estimator: Union[str, Sequence[str]],
    n_reps: int,
    workers: int = 1,
) -> Union[MonteCarloSummary, Dict[str, MonteCarloSummary]]:
    """
    Corre estimadores sobre n_reps datasets con semillas seed + i.

    Cada réplica genera su dataset una sola vez y evalúa todos los
    estimadores pedidos. Los hilos solo generan datasets; los estimadores
    corren en el hilo que llama, dentro de un único catch_warnings. El
    resultado no depende de `workers`.

    :param spec: Proceso.
    :type spec: ProcessSpec
    :param estimator: Nombre o lista de nombres de ESTIMATORS.
    :type estimator: Union[str, Sequence[str]]
    :param n_reps: Réplicas (>= 2).
    :type n_reps: int
    :param workers: Hilos (1 = secuencial).
    :type workers: int
    :return: un resumen si se pidió un nombre; dict nombre -> resumen si se pidió una lista.
    :rtype: Union[MonteCarloSummary, Dict[str, MonteCarloSummary]]
    :raises UnknownEstimator: Si un nombre no existe.
    :raises EstimatorFailure: Con el índice de la primera réplica que falló.
    """
    names: List[str] = [estimator] if isinstance(estimator, str) else list(estimator)
    if not names:
        raise UnknownEstimator("no se pidió ningún estimador")
    for name in names:
        if name not in ESTIMATORS:
            raise UnknownEstimator(f"estimador '{name}' desconocido; válidos: {', '.join(sorted(ESTIMATORS))}")
    if n_reps < 2:
        raise TooFewSamples(f"n_reps debe ser >= 2: {n_reps}")
    if workers < 1:
        raise InputError(f"workers debe ser >= 1: {workers}")

    log.debug("Monte Carlo: %s x %d réplicas, %d hilo(s)", names, n_reps, workers)
    seeds: List[int] = [replicate_seed(spec.seed, i) for i in range(n_reps)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AnalysisWarning)
        if workers == 1:
            datasets: Iterable[MeasurementDataset] = (gen_dataset(spec, s) for s in seeds)
            rows: List[Tuple[float, ...]] = [_evaluate(ds, spec, names, i) for i, ds in enumerate(datasets)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                datasets = pool.map(lambda s: gen_dataset(spec, s), seeds)
                rows = [_evaluate(ds, spec, names, i) for i, ds in enumerate(datasets)]

    clamped: int = sum(1 for w in caught if issubclass(w.category, AnalysisWarning))
    if clamped:
        warnings.warn(
            f"monte_carlo: {clamped} advertencias de análisis en las réplicas "
            "(p.ej. componentes de varianza recortadas a 0)",
            AnalysisWarning,
            stacklevel=2,
        )

    summaries: Dict[str, MonteCarloSummary] = {
        name: _summary(name, tuple(row[k] for row in rows)) for k, name in enumerate(names)
    }

    if isinstance(estimator, str):
        return summaries[estimator]
    return summaries


REML_ESTIMATORS: Tuple[str, ...] = TERMS + ("var_subject", "var_residual")


def _fit_replicate(spec: CrossoverSpec, index: int) -> MixedModelFit:
    try:
        return reml_fit(gen_crossover(spec, replicate_seed(spec.seed, index)))
    except (AgreementError, ArithmeticError, ValueError) as exc:
        raise EstimatorFailure(index, exc) from exc


def reml_monte_carlo(spec: CrossoverSpec, n_reps: int, workers: int = 1) -> Dict[str, MonteCarloSummary]:
    """
    Ajusta REML sobre n_reps experimentos cruzados con semillas seed + i.

    :param spec: Experimento.
    :type spec: CrossoverSpec
    :param n_reps: Réplicas (>= 2).
    :type n_reps: int
    :param workers: Hilos (1 = secuencial).
    :type workers: int
    :return: resumen por nombre de REML_ESTIMATORS, en ese orden.
    :rtype: Dict[str, MonteCarloSummary]
    :raises EstimatorFailure: Con el índice de la primera réplica que falló.
    """
    if n_reps < 2:
        raise TooFewSamples(f"n_reps debe ser >= 2: {n_reps}")
    if workers < 1:
        raise InputError(f"workers debe ser >= 1: {workers}")

    log.debug("Monte Carlo REML: %d sujetos x %d réplicas", spec.n_subjects, n_reps)
    if workers == 1:
        fits: List[MixedModelFit] = [_fit_replicate(spec, i) for i in range(n_reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(lambda i: _fit_replicate(spec, i), range(n_reps)))

    columns: Dict[str, Tuple[float, ...]] = {term: tuple(f.estimate(term) for f in fits) for term in TERMS}
    columns["var_subject"] = tuple(f.var_subject for f in fits)
    columns["var_residual"] = tuple(f.var_residual for f in fits)
    return {name: _summary(name, columns[name]) for name in REML_ESTIMATORS}


# region Oráculos
def _bias_spread(spec: ProcessSpec) -> float:
    """Sum (b_j - b_mean)^2 sobre los instrumentos."""
    biases: np.ndarray = spec.biases
    return float(np.sum((biases - biases.mean()) ** 2))


def expected_ms_interaction(spec: ProcessSpec) -> float:
    """E[MS(Program:Instrument)] = r Var_b + r sigma_g^2 + sigma_e^2."""
    m: int = len(spec.instruments)
    if m < 2:
        raise InputError("se necesitan al menos dos instrumentos")
    r: int = spec.replicates
    var_b: float = _bias_spread(spec) / (m - 1)
    return r * var_b + r * spec.sigma_interaction ** 2 + spec.sigma_noise ** 2


def expected_d_bar(spec: ProcessSpec) -> float:
    if len(spec.instruments) < 2:
        raise InputError("se necesitan al menos dos instrumentos")
    return float(spec.biases[0] - spec.biases[1])


def expected_s_d(spec: ProcessSpec) -> float:
    """E[s_d] = c4(n) sqrt(2 sigma_g^2 + 2 sigma_e^2 / r)."""
    variance: float = 2.0 * spec.sigma_interaction ** 2 + 2.0 * spec.sigma_noise ** 2 / spec.replicates
    return c4(spec.n_objects) * math.sqrt(variance)


def expected_s_r(spec: ProcessSpec) -> float:
    """E[s_r] combinada = sigma_e c4(nu + 1), nu = n m (r - 1)."""
    if spec.replicates < 2:
        raise TooFewSamples("la repetibilidad necesita replicates >= 2")
    nu: int = spec.n_objects * len(spec.instruments) * (spec.replicates - 1)
    return spec.sigma_noise * c4(nu + 1)


def expected_rho(spec: ProcessSpec, draws: Optional[int] = None) -> float:
    """
    E[rho] por muestreo exacto de MS(Instrument) y MS(Residual).

    Sobre las medias de celda, SS(Residual)/tau^2 es chi^2((n-1)(m-1)) y
    SS(Instrument)/tau^2 es chi^2 no central con m - 1 gl y no centralidad
    n Sum(b - b_mean)^2 / tau^2, independientes; tau^2 = sigma_g^2 + sigma_e^2 / r.

    :param spec: Proceso.
    :type spec: ProcessSpec
    :param draws: Muestras (default config).
    :type draws: Optional[int]
    :return: esperanza de rho con el recorte a 0 incluido.
    :rtype: float
    """
    draws = config.rho_oracle_draws if draws is None else draws
    n: int = spec.n_objects
    m: int = len(spec.instruments)
    if m < 2:
        raise InputError("se necesitan al menos dos instrumentos")

    tau2: float = spec.sigma_interaction ** 2 + spec.sigma_noise ** 2 / spec.replicates
    spread: float = _bias_spread(spec)
    if tau2 == 0.0:
        if spread > 0.0:
            return 1.0
        raise DegenerateVariance("sin variabilidad entre instrumentos ni residual")

    df_i: int = m - 1
    df_r: int = (n - 1) * (m - 1)
    nonc: float = n * spread / tau2

    rng: np.random.Generator = make_rng(spec.seed)
    ss_i: np.ndarray = (
        rng.noncentral_chisquare(df_i, nonc, size=draws) if nonc > 0 else rng.chisquare(df_i, size=draws)
    )
    ss_r: np.ndarray = rng.chisquare(df_r, size=draws)
    ms_i: np.ndarray = tau2 * ss_i / df_i
    ms_r: np.ndarray = tau2 * ss_r / df_r

    s2_m: np.ndarray = np.maximum((ms_i - ms_r) / n, 0.0)
    return float(np.mean(s2_m / (s2_m + ms_r)))
