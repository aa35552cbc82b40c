from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import (
    AmbiguousReplicates,
    DuplicateKey,
    EmptyInput,
    InputError,
    MissingPairMember,
    MissingTerm,
    NonFiniteValue,
)

log: logging.Logger = logging.getLogger(__name__)

RecordKey = Tuple[str, str, int, str]
CellKey = Tuple[str, str]


# region Registros
@dataclass(frozen=True, slots=True)
class MeasurementRecord:
    """
    Una observación en formato largo.

    :param object_id: Programa / mensurando medido.
    :type object_id: str
    :param instrument_id: Instrumento (suite de tests) que midió, p.ej. "AH".
    :type instrument_id: str
    :param replicate: Índice de la repetición (0 si es medición única).
    :type replicate: int
    :param value: Valor medido, en % para QLTY/PROD.
    :type value: float
    :param variable: Variable de respuesta, p.ej. "QLTY".
    :type variable: str
    """
    object_id: str
    instrument_id: str
    replicate: int
    value: float
    variable: str

    def __post_init__(self) -> None:
        for name in ("object_id", "instrument_id", "variable"):
            if not getattr(self, name):
                raise EmptyInput(f"{name} vacío")
        if self.replicate < 0:
            raise InputError(f"replicate negativo: {self.replicate}")
        if not math.isfinite(self.value):
            raise NonFiniteValue(
                f"valor no finito {self.value!r} para "
                f"({self.object_id}, {self.instrument_id})"
            )

    @property
    def key(self) -> RecordKey:
        return (self.object_id, self.instrument_id, self.replicate, self.variable)


class MeasurementDataset:
    """
    Colección inmutable y validada de MeasurementRecord.

    Conserva el orden de inserción; no admite claves repetidas
    (object_id, instrument_id, replicate, variable).
    """

    __slots__ = ("_records", "_keys")

    def __init__(self, records: Iterable[MeasurementRecord]) -> None:
        items: Tuple[MeasurementRecord, ...] = tuple(records)
        if not items:
            raise EmptyInput("el dataset necesita al menos un registro")

        keys: Dict[RecordKey, int] = {}
        for position, record in enumerate(items):
            if record.key in keys:
                raise DuplicateKey(
                    f"clave repetida {record.key} en posiciones "
                    f"{keys[record.key]} y {position}"
                )
            keys[record.key] = position

        self._records: Tuple[MeasurementRecord, ...] = items
        self._keys: Dict[RecordKey, int] = keys

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[MeasurementRecord]:
        return iter(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MeasurementDataset):
            return NotImplemented
        return self._records == other._records

    def __repr__(self) -> str:
        return (
            f"MeasurementDataset(n={len(self)}, objects={len(self.objects())}, "
            f"instruments={self.instruments()})"
        )

    @property
    def records(self) -> Tuple[MeasurementRecord, ...]:
        return self._records

    # region Consultas
    def select(self, variable: Optional[str] = None) -> List[MeasurementRecord]:
        """
        Registros de una variable (todos si variable es None).

        :param variable: Variable de respuesta.
        :type variable: Optional[str]
        :return: registros en orden de inserción.
        :rtype: List[MeasurementRecord]
        """
        if variable is None:
            return list(self._records)
        return [r for r in self._records if r.variable == variable]

    def objects(self, variable: Optional[str] = None) -> List[str]:
        return list(dict.fromkeys(r.object_id for r in self.select(variable)))

    def instruments(self, variable: Optional[str] = None) -> List[str]:
        return list(dict.fromkeys(r.instrument_id for r in self.select(variable)))

    def variables(self) -> List[str]:
        return list(dict.fromkeys(r.variable for r in self._records))

    def values(
        self,
        variable: Optional[str] = None,
        instrument_id: Optional[str] = None,
    ) -> np.ndarray:
        """
        Valores en orden de inserción, filtrados por variable/instrumento.

        :return: array 1-D.
        :rtype: np.ndarray
        """
        return np.array(
            [
                r.value
                for r in self.select(variable)
                if instrument_id is None or r.instrument_id == instrument_id
            ],
            dtype=float,
        )

    def cells(self, variable: str) -> Dict[CellKey, List[float]]:
        """
        Agrupa los valores por celda (objeto, instrumento).

        :param variable: Variable de respuesta.
        :type variable: str
        :return: dict celda -> valores (orden de inserción).
        :rtype: Dict[CellKey, List[float]]
        """
        out: Dict[CellKey, List[float]] = {}
        for r in self.select(variable):
            out.setdefault((r.object_id, r.instrument_id), []).append(r.value)
        return out

    def to_frame(self) -> pd.DataFrame:
        """
        Vista pandas en formato largo (una fila por registro).

        :return: DataFrame con las columnas del CSV de mediciones.
        :rtype: pd.DataFrame
        """
        return pd.DataFrame(
            [
                {
                    "object_id": r.object_id,
                    "instrument_id": r.instrument_id,
                    "replicate": r.replicate,
                    "variable": r.variable,
                    "value": r.value,
                }
                for r in self._records
            ]
        )


def build_dataset(records: Sequence[MeasurementRecord]) -> MeasurementDataset:
    """
    Construye un dataset validado.

    :param records: Registros en el orden deseado.
    :type records: Sequence[MeasurementRecord]
    :return: dataset inmutable.
    :rtype: MeasurementDataset
    :raises EmptyInput: Si no hay registros.
    :raises DuplicateKey: Si se repite una clave completa.
    """
    dataset = MeasurementDataset(records)
    log.debug("Dataset construido: %r", dataset)
    return dataset


def aggregate_replicates(ds: MeasurementDataset, variable: str) -> MeasurementDataset:
    """
    Promedia las repeticiones de cada celda (objeto, instrumento).

    Es el paso explícito previo a pair_by_object cuando hay repeticiones.

    :param ds: Dataset original.
    :type ds: MeasurementDataset
    :param variable: Variable a agregar.
    :type variable: str
    :return: dataset con un registro (replicate 0) por celda.
    :rtype: MeasurementDataset
    """
    records: List[MeasurementRecord] = [
        MeasurementRecord(
            object_id=obj,
            instrument_id=inst,
            replicate=0,
            value=float(np.mean(values)),
            variable=variable,
        )
        for (obj, inst), values in ds.cells(variable).items()
    ]
    return build_dataset(records)


# region Pares
@dataclass(frozen=True, slots=True)
class PairedMeasurements:
    """
    Cada objeto medido una vez por dos instrumentos.

    :param pairs: (object_id, valor_a, valor_b) en orden de aparición.
    :type pairs: Tuple[Tuple[str, float, float], ...]
    :param instrument_a: Instrumento del primer valor.
    :type instrument_a: str
    :param instrument_b: Instrumento del segundo valor.
    :type instrument_b: str
    """
    pairs: Tuple[Tuple[str, float, float], ...]
    instrument_a: str
    instrument_b: str

    def __post_init__(self) -> None:
        seen: set = set()
        for object_id, value_a, value_b in self.pairs:
            if object_id in seen:
                raise DuplicateKey(f"objeto repetido en los pares: {object_id}")
            seen.add(object_id)
            if not (math.isfinite(value_a) and math.isfinite(value_b)):
                raise NonFiniteValue(f"par no finito para {object_id}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def object_ids(self) -> List[str]:
        return [p[0] for p in self.pairs]

    @property
    def values_a(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=float)

    @property
    def values_b(self) -> np.ndarray:
        return np.array([p[2] for p in self.pairs], dtype=float)

    def swapped(self) -> PairedMeasurements:
        return PairedMeasurements(
            pairs=tuple((o, b, a) for o, a, b in self.pairs),
            instrument_a=self.instrument_b,
            instrument_b=self.instrument_a,
        )


def pair_by_object(
    ds: MeasurementDataset,
    instrument_a: str,
    instrument_b: str,
    variable: str,
) -> PairedMeasurements:
    """
    Arma los pares (a, b) por objeto.

    :param ds: Dataset con una medición por celda.
    :type ds: MeasurementDataset
    :param instrument_a: Instrumento minuendo.
    :type instrument_a: str
    :param instrument_b: Instrumento sustraendo.
    :type instrument_b: str
    :param variable: Variable de respuesta.
    :type variable: str
    :return: pares en orden de primera aparición del objeto.
    :rtype: PairedMeasurements
    :raises MissingPairMember: Si a un objeto le falta uno de los instrumentos.
    :raises AmbiguousReplicates: Si una celda tiene más de un valor.
    """
    cells: Dict[CellKey, List[float]] = ds.cells(variable)
    pairs: List[Tuple[str, float, float]] = []

    for object_id in ds.objects(variable):
        members: List[float] = []
        for instrument in (instrument_a, instrument_b):
            values: Optional[List[float]] = cells.get((object_id, instrument))
            if not values:
                raise MissingPairMember(
                    f"el objeto {object_id} no tiene valor de {instrument} para {variable}"
                )
            if len(values) > 1:
                raise AmbiguousReplicates(
                    f"{len(values)} repeticiones en ({object_id}, {instrument}); "
                    "promediar antes con aggregate_replicates"
                )
            members.append(values[0])
        pairs.append((object_id, members[0], members[1]))

    if not pairs:
        raise EmptyInput(f"no hay registros de la variable {variable}")

    return PairedMeasurements(
        pairs=tuple(pairs),
        instrument_a=instrument_a,
        instrument_b=instrument_b,
    )


# region Tablas ANOVA
@dataclass(frozen=True, slots=True)
class AnovaRow:
    """
    Fila de una tabla ANOVA; ms/f/p quedan en None cuando no aplican.
    """
    term: str
    df: int
    ss: float
    ms: Optional[float] = None
    f: Optional[float] = None
    p: Optional[float] = None


@dataclass(frozen=True, slots=True)
class AnovaTable:
    """
    Descomposición de la suma de cuadrados corregida.

    :param rows: Filas en orden de presentación (la residual al final).
    :type rows: Tuple[AnovaRow, ...]
    :param n_obs: Número de observaciones N.
    :type n_obs: int
    """
    rows: Tuple[AnovaRow, ...]
    n_obs: int

    def __post_init__(self) -> None:
        total_df: int = sum(row.df for row in self.rows)
        if total_df != self.n_obs - 1:
            raise InputError(
                f"los grados de libertad suman {total_df}, se esperaba {self.n_obs - 1}"
            )
        for row in self.rows:
            if row.df < 0 or row.ss < 0:
                raise InputError(f"fila inválida en la tabla ANOVA: {row}")

    @property
    def terms(self) -> List[str]:
        return [row.term for row in self.rows]

    @property
    def total_ss(self) -> float:
        return float(sum(row.ss for row in self.rows))

    def row(self, term: str) -> AnovaRow:
        """
        Fila por nombre de término.

        :raises MissingTerm: Si el término no está en la tabla.
        """
        for row in self.rows:
            if row.term == term:
                return row
        raise MissingTerm(f"la tabla no tiene el término '{term}' (términos: {self.terms})")

    def to_records(self) -> List[Dict[str, object]]:
        return [
            {"term": r.term, "df": r.df, "ss": r.ss, "ms": r.ms, "f": r.f, "p": r.p}
            for r in self.rows
        ]
