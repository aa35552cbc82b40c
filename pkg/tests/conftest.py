from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterable, List, Sequence, Tuple

import pytest

from src.services.dataset import MeasurementDataset, MeasurementRecord, PairedMeasurements, build_dataset
from src.services.mixed_model import ExperimentRow

DATA_DIR: Path = Path(__file__).parent / "data"
SPECS_DIR: Path = Path(__file__).resolve().parents[1] / "specs"

MEASUREMENT_HEADER: str = "object_id,instrument_id,replicate,variable,value"


def make_dataset(
    rows: Iterable[Tuple],
    variable: str = "QLTY",
) -> MeasurementDataset:
    """Dataset desde tuplas (objeto, instrumento, valor[, replicate])."""
    records: List[MeasurementRecord] = []
    for row in rows:
        obj, inst, value = row[:3]
        replicate: int = row[3] if len(row) > 3 else 0
        records.append(
            MeasurementRecord(
                object_id=obj,
                instrument_id=inst,
                replicate=replicate,
                value=float(value),
                variable=variable,
            )
        )
    return build_dataset(records)


def grid_dataset(grid: Sequence[Sequence[float]], instruments: Sequence[str] = ("AH", "EP")) -> MeasurementDataset:
    """Una fila de la grilla por objeto P1, P2, ...; una columna por instrumento."""
    return make_dataset(
        (f"P{i + 1}", inst, value)
        for i, row in enumerate(grid)
        for inst, value in zip(instruments, row)
    )


def measurements_csv(ds: MeasurementDataset) -> str:
    lines: List[str] = [MEASUREMENT_HEADER]
    for r in ds:
        lines.append(f"{r.object_id},{r.instrument_id},{r.replicate},{r.variable},{r.value!r}")
    return "\n".join(lines) + "\n"


def crossover_rows(
    y_by_subject: Sequence[Tuple[float, float]],
    groups: Sequence[str],
) -> List[ExperimentRow]:
    """
    Filas del diseño cruzado: cada sujeto hace ITLD y luego TDD.

    MR→BSK: ITLD con MR, TDD con BSK. BSK→MR: ITLD con BSK, TDD con MR.
    """
    rows: List[ExperimentRow] = []
    for i, ((y_itld, y_tdd), group) in enumerate(zip(y_by_subject, groups)):
        first_task, second_task = ("MR", "BSK") if group == "MR→BSK" else ("BSK", "MR")
        subject: str = f"S{i + 1:02d}"
        rows.append(ExperimentRow(subject, group, "ITLD", first_task, y_itld))
        rows.append(ExperimentRow(subject, group, "TDD", second_task, y_tdd))
    return rows


@pytest.fixture
def grid_2x2() -> MeasurementDataset:
    # P1 = (10, 14), P2 = (20, 26)
    return grid_dataset([(10.0, 14.0), (20.0, 26.0)])


@pytest.fixture
def ba_pairs() -> PairedMeasurements:
    return PairedMeasurements(
        pairs=(("P1", 80.0, 50.0), ("P2", 60.0, 40.0), ("P3", 70.0, 60.0)),
        instrument_a="AH",
        instrument_b="EP",
    )


@pytest.fixture
def make_ds() -> Callable[..., MeasurementDataset]:
    return make_dataset


@pytest.fixture
def pooled_qlty() -> MeasurementDataset:
    """Datos QLTY agrupados PT + EC (74 programas); se saltea si no están."""
    path: Path = DATA_DIR / "pooled_qlty.csv"
    if not path.exists():
        pytest.skip("falta tests/data/pooled_qlty.csv")
    from src.services.ingestion import parse_measurements_csv

    return parse_measurements_csv(path.read_bytes())
