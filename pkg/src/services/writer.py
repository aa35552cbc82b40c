from __future__ import annotations

import logging
from pathlib import Path
from typing import List

import pandas as pd

from src.config import config
from src.errors import IoFailure
from src.services.report import AnalysisReport

log: logging.Logger = logging.getLogger(__name__)


class ArtifactWriter:
    """
    Escribe los artefactos de un análisis en el directorio de salida.

    - report.json (siempre).
    - Tablas CSV (con --format csv).
    - Los SVG los escribe src.services.plots en las rutas que da `path_for`.
    """

    def __init__(self, out_dir: Path) -> None:
        """
        :param out_dir: Directorio de salida; se crea si no existe.
        :type out_dir: Path
        :raises IoFailure: Si no se puede crear.
        """
        self.out_dir: Path = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"no se pudo crear {self.out_dir}: {exc}") from exc
        self.written: List[Path] = []

    def path_for(self, filename: str) -> Path:
        path: Path = self.out_dir / filename
        self.written.append(path)
        return path

    def write_report(self, report: AnalysisReport) -> Path:
        """
        Serializa el reporte en `report.filename` (config).

        :param report: Reporte armado por el CLI.
        :type report: AnalysisReport
        :return: ruta escrita.
        :rtype: Path
        """
        return self.write_text(config.report_filename, report.to_json())

    def write_table(self, filename: str, df: pd.DataFrame) -> Path:
        """
        Escribe un DataFrame como CSV UTF-8 con floats de 17 cifras.

        :param filename: Nombre del archivo.
        :type filename: str
        :param df: Tabla ya renombrada/filtrada.
        :type df: pd.DataFrame
        :return: ruta escrita.
        :rtype: Path
        """
        text: str = df.to_csv(
            index=False,
            float_format=f"%.{config.float_digits}g",
            lineterminator="\n",
        )
        return self.write_text(filename, text)

    def write_text(self, filename: str, text: str) -> Path:
        path: Path = self.path_for(filename)
        try:
            with path.open("w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
        except OSError as exc:
            raise IoFailure(f"no se pudo escribir {path}: {exc}") from exc
        log.debug("Escrito %s (%d bytes)", path, len(text.encode("utf-8")))
        return path
