from __future__ import annotations
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple
import yaml
from dotenv import load_dotenv

load_dotenv()

_DEFAULT_PATH: Path = Path(__file__).resolve().parents[1] / "config.yaml"


class Config:
    """
    Carga config.yaml y variables de entorno.

    El archivo se busca en AGREEMENT_CONFIG_PATH o, si no está definida,
    junto a main.py.

    :raises FileNotFoundError: Si no existe config.yaml.
    :raises ValueError: Si alguna sección obligatoria no es un mapping.
    """

    # region obtencion de configuración
    def __init__(self, path: Path | None = None) -> None:
        env_path: str = os.getenv("AGREEMENT_CONFIG_PATH", "").strip()
        yaml_path: Path = path or (Path(env_path) if env_path else _DEFAULT_PATH)
        if not yaml_path.exists():
            raise FileNotFoundError(f"Falta el archivo de configuración {yaml_path}")
        with yaml_path.open("r", encoding="utf-8") as handle:
            self._yaml: Dict[str, Any] = yaml.safe_load(handle) or {}

        for section in ("analysis", "mixed_model", "simulation", "report", "exports"):
            if not isinstance(self._yaml.get(section, {}), dict):
                raise ValueError(f"La sección '{section}' de config.yaml debe ser un mapping")

        settings: Mapping[str, Any] = self._yaml.get("settings", {}) or {}
        self.log_level: str = os.getenv(
            "LOG_LEVEL", str(settings.get("log_level", "INFO"))
        )

    def _section(self, name: str) -> Mapping[str, Any]:
        """
        Sección del YAML, vacía si no existe.

        :param name: Nombre de la sección.
        :type name: str
        :return: mapping.
        :rtype: Mapping[str, Any]
        """
        return self._yaml.get(name, {}) or {}

    # region Propierties
    @property
    def alpha(self) -> float:
        """
        Nivel de significancia para el factor de cobertura.

        :return: alpha en (0, 1).
        :rtype: float
        """
        return float(self._section("analysis").get("alpha", 0.05))

    @property
    def coverage(self) -> str:
        """
        Modo del factor de cobertura (t, normal o fixed2).

        :return: modo.
        :rtype: str
        """
        return str(self._section("analysis").get("coverage", "fixed2"))

    @property
    def ba_k(self) -> float:
        """
        Multiplicador de s_d para los límites de Bland-Altman.

        :return: k.
        :rtype: float
        """
        return float(self._section("analysis").get("ba_k", 2.0))

    @property
    def deviation_epsilon(self) -> float:
        """
        Banda (en puntos) alrededor de la diagonal verdad = medición.

        :return: epsilon.
        :rtype: float
        """
        return float(self._section("analysis").get("deviation_epsilon", 0.5))

    @property
    def icc_threshold(self) -> float:
        """
        Umbral de rho para el veredicto de buena concordancia.

        :return: umbral.
        :rtype: float
        """
        return float(self._section("analysis").get("icc_threshold", 0.75))

    @property
    def granularity(self) -> str:
        """
        Granularidad de los casos de prueba para los puntajes.

        :return: class, method o assertion.
        :rtype: str
        """
        return str(self._section("analysis").get("granularity", "method"))

    @property
    def instruments(self) -> Tuple[str, str]:
        """
        Par de instrumentos por defecto (a, b); la diferencia es a - b.

        :return: ids.
        :rtype: Tuple[str, str]
        """
        analysis: Mapping[str, Any] = self._section("analysis")
        return (
            str(analysis.get("instrument_a", "AH")),
            str(analysis.get("instrument_b", "EP")),
        )

    @property
    def log_lambda_bounds(self) -> Tuple[float, float]:
        """
        Intervalo de búsqueda de log(lambda) para REML.

        :return: (mínimo, máximo).
        :rtype: Tuple[float, float]
        """
        low, high = self._section("mixed_model").get("log_lambda_bounds", [-12.0, 12.0])
        return float(low), float(high)

    @property
    def reml_max_iter(self) -> int:
        """
        Iteraciones máximas de la sección áurea.

        :return: iteraciones.
        :rtype: int
        """
        return int(self._section("mixed_model").get("max_iter", 200))

    @property
    def reml_tolerance(self) -> float:
        """
        Cambio mínimo del criterio REML para seguir iterando.

        :return: tolerancia.
        :rtype: float
        """
        return float(self._section("mixed_model").get("tolerance", 1e-10))

    @property
    def simulation_mu(self) -> float:
        """
        Media general de los procesos simulados.

        :return: mu.
        :rtype: float
        """
        return float(self._section("simulation").get("mu", 50.0))

    @property
    def rho_oracle_draws(self) -> int:
        """
        Muestras del oráculo de E[rho].

        :return: cantidad de muestras.
        :rtype: int
        """
        return int(self._section("simulation").get("rho_oracle_draws", 200000))

    @property
    def report_filename(self) -> str:
        """
        Nombre del reporte JSON dentro del directorio de salida.

        :return: nombre de archivo.
        :rtype: str
        """
        return str(self._section("report").get("filename", "report.json"))

    @property
    def float_digits(self) -> int:
        """
        Dígitos significativos de los floats del reporte.

        :return: dígitos.
        :rtype: int
        """
        return int(self._section("report").get("float_digits", 17))

    def export_config(self, table: str) -> Mapping[str, Any]:
        """
        Config YAML de una tabla exportable (filename + columns).

        :param table: Nombre de la tabla (bland_altman, scores, ...).
        :type table: str
        :return: mapping.
        :rtype: Mapping[str, Any]
        :raises KeyError: Si la tabla no está configurada.
        """
        return self._section("exports")[table]


# Instancia de configuración global
config: Config = Config()
