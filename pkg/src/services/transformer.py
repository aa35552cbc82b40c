from __future__ import annotations

from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

from src.config import config
from src.services.accuracy import DeviationReport
from src.services.agreement import BlandAltmanReport
from src.services.dataset import AnovaTable
from src.services.ingestion import ScoreSet
from src.services.mixed_model import MixedModelFit, summarize_fit
from src.services.simulate import MonteCarloSummary


class DataTransformer:
    """
    Transforma las secciones del reporte a DataFrames para exportar a CSV.

    Cada tabla toma sus columnas (orden y nombre final) de
    `exports.<tabla>.columns` en config.yaml.
    """

    def __init__(self, exports: Optional[Mapping[str, Any]] = None) -> None:
        self._exports: Optional[Mapping[str, Any]] = exports

    def _columns_config(self, table: str) -> Mapping[str, Any]:
        if self._exports is not None:
            return self._exports[table]["columns"]
        return config.export_config(table)["columns"]

    def filename(self, table: str, **fields: str) -> str:
        """
        Nombre del archivo CSV de una tabla, con los campos del template.

        :param table: Tabla (bland_altman, deviations, ...).
        :type table: str
        :return: nombre de archivo.
        :rtype: str
        """
        spec: Mapping[str, Any] = (
            self._exports[table] if self._exports is not None else config.export_config(table)
        )
        return str(spec["filename"]).format(**fields)

    # region Tablas
    def bland_altman(self, report: BlandAltmanReport) -> pd.DataFrame:
        return self._frame("bland_altman", report.to_records())

    def deviations(self, report: DeviationReport) -> pd.DataFrame:
        return self._frame("deviations", report.to_records())

    def scores(self, scores: ScoreSet) -> pd.DataFrame:
        return self._frame("scores", scores.to_records())

    def anova(self, table: AnovaTable) -> pd.DataFrame:
        return self._frame("anova", table.to_records())

    def coefficients(self, fit: MixedModelFit, alpha: Optional[float] = None) -> pd.DataFrame:
        """
        Coeficientes del modelo mixto con z, p y estrellas.

        :param fit: Ajuste.
        :type fit: MixedModelFit
        :param alpha: Nivel de significancia.
        :type alpha: Optional[float]
        :return: una fila por término.
        :rtype: pd.DataFrame
        """
        rows: List[Dict[str, Any]] = [
            {
                "term": s.term,
                "estimate": s.estimate,
                "std_error": s.std_error,
                "z": s.z,
                "p": s.p,
                "stars": s.stars,
            }
            for s in summarize_fit(fit, alpha)
        ]
        return self._frame("coefficients", rows)

    def monte_carlo(self, summaries: Sequence[MonteCarloSummary]) -> pd.DataFrame:
        return self._frame("monte_carlo", [s.to_record() for s in summaries])

    # region Helpers
    def _frame(self, table: str, rows: List[Dict[str, Any]]) -> pd.DataFrame:
        """
        Arma el DataFrame de una tabla y le aplica la config de columnas.

        :param table: Nombre de la tabla en config.yaml.
        :type table: str
        :param rows: Filas planas.
        :type rows: List[Dict[str, Any]]
        :return: DataFrame final (con header aunque no haya filas).
        :rtype: pd.DataFrame
        """
        columns_config: Mapping[str, Any] = self._columns_config(table)
        df = pd.DataFrame(rows, columns=[str(src) for src in columns_config])
        return self._rename_and_filter(df=df, columns_config=columns_config)

    def _rename_and_filter(
        self,
        df: pd.DataFrame,
        columns_config: Mapping[str, Any],
    ) -> pd.DataFrame:
        """
        Renombra y filtra columnas según YAML.

        :param df: DataFrame original.
        :type df: pd.DataFrame
        :param columns_config: config YAML.
        :type columns_config: Mapping[str, Any]
        :return: DataFrame final.
        :rtype: pd.DataFrame
        """
        rename_map: Dict[str, str] = {
            str(src): str(spec["name"])
            for src, spec in columns_config.items()
        }
        out = df.rename(columns=rename_map)

        final_cols: List[str] = [
            str(spec["name"])
            for spec in columns_config.values()
            if str(spec["name"]) in out.columns
        ]

        return out[final_cols]
