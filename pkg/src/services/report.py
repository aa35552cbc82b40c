"""
AnalysisReport y su serialización JSON determinista.

Claves ordenadas, floats con 17 dígitos significativos y null para valores
no finitos, así dos corridas con la misma entrada dan los mismos bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from src import __version__
from src.config import config
from src.services.accuracy import AccuracyReport, DeviationReport
from src.services.agreement import BlandAltmanReport, IccReport
from src.services.dataset import AnovaTable
from src.services.ingestion import ScoreSet
from src.services.mixed_model import MixedModelFit, TermComparison, summarize_fit
from src.services.simulate import MonteCarloSummary, ProcessSpec
from src.services.stats_util import CorrelationResult


# region Reporte
@dataclass(slots=True)
class AnalysisReport:
    """
    Documento que escribe el CLI en report.json.

    :param command: Subcomando ejecutado.
    :param input_digest: SHA-256 de las entradas.
    :param parameters: Parámetros efectivos del análisis.
    :param sections: nombre de sección -> contenido ya convertido a dict.
    :param warnings: Advertencias de los análisis, textuales.
    """
    command: str
    input_digest: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    sections: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    tool_version: str = __version__

    def add(self, name: str, section: Any) -> None:
        self.sections[name] = section

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "tool_version": self.tool_version,
            "command": self.command,
            "input_digest": self.input_digest,
            "parameters": self.parameters,
            "warnings": list(self.warnings),
        }
        out.update(self.sections)
        return out

    def to_json(self, digits: Optional[int] = None) -> str:
        return dumps(self.to_dict(), digits=digits)


def input_digest(blobs: Iterable[bytes]) -> str:
    """SHA-256 sobre los bytes de cada entrada, en orden de argumentos."""
    digest = hashlib.sha256()
    for blob in blobs:
        digest.update(blob)
    return f"sha256:{digest.hexdigest()}"


# region JSON determinista
def _format_float(value: float, digits: int) -> str:
    if not math.isfinite(value):
        return "null"
    if value == 0.0:
        return "0.0"
    text: str = format(value, f".{digits}g")
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def _encode(value: Any, digits: int, indent: int, level: int) -> str:
    pad: str = " " * (indent * (level + 1))
    end_pad: str = " " * (indent * level)

    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _format_float(float(value), digits)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items: List[str] = [
            f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(value[k], digits, indent, level + 1)}"
            for k in sorted(value, key=str)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end_pad + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) == 0:
            return "[]"
        elements: List[str] = [f"{pad}{_encode(v, digits, indent, level + 1)}" for v in value]
        return "[\n" + ",\n".join(elements) + "\n" + end_pad + "]"
    raise TypeError(f"tipo no serializable en el reporte: {type(value).__name__}")


def dumps(document: Any, digits: Optional[int] = None, indent: int = 2) -> str:
    """
    JSON con claves ordenadas y floats de `digits` cifras significativas.

    :param document: dict/list de tipos básicos.
    :type document: Any
    :param digits: Cifras significativas (default config, 17).
    :type digits: Optional[int]
    :param indent: Espacios de indentación.
    :type indent: int
    :return: texto JSON terminado en salto de línea.
    :rtype: str
    """
    digits = config.float_digits if digits is None else digits
    return _encode(document, digits, indent, 0) + "\n"


# region Secciones
def anova_section(table: AnovaTable) -> Dict[str, Any]:
    return {"n_obs": table.n_obs, "rows": table.to_records()}


def accuracy_section(report: AccuracyReport, trueness_by_instrument: Optional[Mapping[str, float]] = None) -> Dict[str, Any]:
    section: Dict[str, Any] = {
        "s_r": report.s_r,
        "trueness": report.trueness,
        "s_M": report.s_M,
        "s_Rw": report.s_Rw,
        "expanded": report.expanded,
        "coverage_k": report.coverage_k,
        "coverage_mode": report.coverage_mode,
        "alpha": report.alpha,
        "n_objects": report.n_objects,
        "anova": anova_section(report.anova),
    }
    if trueness_by_instrument is not None:
        section["trueness_by_instrument"] = dict(trueness_by_instrument)
    return section


def bland_altman_section(report: BlandAltmanReport) -> Dict[str, Any]:
    return {
        "instrument_a": report.instrument_a,
        "instrument_b": report.instrument_b,
        "d_bar": report.d_bar,
        "s_d": report.s_d,
        "k": report.k,
        "limits": {"lower": report.limits[0], "upper": report.limits[1]},
        "outside_count": report.outside_count,
        "n_pairs": report.n_pairs,
        "points": report.to_records(),
    }


def icc_section(report: IccReport) -> Dict[str, Any]:
    return {
        "s2_M": report.s2_M,
        "s2_e": report.s2_e,
        "rho": report.rho,
        "threshold": report.threshold,
        "threshold_verdict": report.threshold_verdict,
        "clamped": report.clamped,
        "icc_consistency": report.icc_consistency,
        "n_objects": report.n_objects,
        "anova": anova_section(report.anova),
    }


def correlation_section(result: CorrelationResult) -> Dict[str, Any]:
    return {
        "r": result.r,
        "n": result.n,
        "t_stat": result.t_stat,
        "p_two_sided": result.p_two_sided,
        "effect_size": result.effect_size,
    }


def deviation_section(report: DeviationReport) -> Dict[str, Any]:
    return {
        "instrument_id": report.instrument_id,
        "epsilon": report.epsilon,
        "counts": report.counts,
        "mean_deviation": report.mean_deviation,
        "mean_abs_deviation": report.mean_abs_deviation,
        "max_abs_deviation": report.max_abs_deviation,
        "points": report.to_records(),
    }


def scores_section(scores: ScoreSet) -> Dict[str, Any]:
    return {"granularity": scores.granularity, "scores": scores.to_records()}


def coefficient_records(fit: MixedModelFit, alpha: Optional[float] = None) -> List[Dict[str, Any]]:
    return [
        {
            "term": s.term,
            "estimate": s.estimate,
            "std_error": s.std_error,
            "z": s.z,
            "p": s.p,
            "stars": s.stars,
            "significant": s.significant,
        }
        for s in summarize_fit(fit, alpha)
    ]


def mixed_section(fit: MixedModelFit, alpha: Optional[float] = None) -> Dict[str, Any]:
    return {
        "coefficients": coefficient_records(fit, alpha),
        "var_subject": fit.var_subject,
        "var_residual": fit.var_residual,
        "lambda": fit.lam,
        "reml_criterion": fit.reml_criterion,
        "aic": fit.aic,
        "n_obs": fit.n_obs,
        "n_subjects": fit.n_subjects,
        "p_value_convention": "Wald z, two-sided normal",
    }


def comparison_section(comparisons: Sequence[TermComparison]) -> List[Dict[str, Any]]:
    return [
        {
            "term": c.term,
            "estimates": c.estimates,
            "stars": c.stars,
            "sign_reversal": c.sign_reversal,
            "significance_disagreement": c.significance_disagreement,
        }
        for c in comparisons
    ]


def monte_carlo_section(
    spec: ProcessSpec,
    summaries: Mapping[str, MonteCarloSummary],
    oracles: Optional[Mapping[str, float]] = None,
) -> Dict[str, Any]:
    return {
        "spec": spec.to_dict(),
        "rng": "numpy Philox4x64-10, key = (seed + i) mod 2^64",
        "estimators": [summaries[name].to_record() for name in summaries],
        "oracles": dict(oracles or {}),
    }
