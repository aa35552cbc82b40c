from __future__ import annotations

import json
import warnings
from dataclasses import replace

import numpy as np
import pytest

from src.errors import (
    AnalysisWarning,
    DegenerateVariance,
    EstimatorFailure,
    InvalidProcessSpec,
    IoFailure,
    TooFewSamples,
    UnknownEstimator,
)
from src.services.agreement import bland_altman
from src.services.dataset import pair_by_object
from src.services.simulate import (
    REML_ESTIMATORS,
    SIM_VARIABLE,
    CrossoverSpec,
    ProcessSpec,
    expected_d_bar,
    expected_ms_interaction,
    expected_rho,
    expected_s_d,
    expected_s_r,
    gen_crossover,
    gen_dataset,
    load_process_spec,
    monte_carlo,
    replicate_seed,
)
from src.services.stats_util import c4, pearson
from tests.conftest import SPECS_DIR


def _spec(**overrides) -> ProcessSpec:
    base = ProcessSpec(
        n_objects=20,
        instruments=(("AH", 0.0), ("EP", -30.0)),
        sigma_object=10.0,
        sigma_interaction=5.0,
        sigma_noise=2.0,
        replicates=2,
        seed=42,
    )
    return replace(base, **overrides)


def _within(summary, expected: float, n_se: float = 4.0, slack: float = 0.0) -> bool:
    return abs(summary.mean - expected) <= n_se * summary.se + slack


# region ProcessSpec
def test_spec_validation():
    with pytest.raises(InvalidProcessSpec):
        _spec(n_objects=1)
    with pytest.raises(InvalidProcessSpec):
        _spec(sigma_noise=-1.0)
    with pytest.raises(InvalidProcessSpec):
        _spec(instruments=(("AH", 0.0), ("AH", 1.0)))
    with pytest.raises(InvalidProcessSpec):
        _spec(replicates=0)
    with pytest.raises(InvalidProcessSpec):
        _spec(seed=2 ** 64)


def test_load_process_spec_from_file():
    spec = load_process_spec(SPECS_DIR / "poor_agreement.json")
    assert spec.n_objects == 74
    assert spec.instruments == (("AH", -35.0), ("EP", 0.0))
    assert spec.replicates == 1
    assert spec.seed == 20240517


def test_load_process_spec_accepts_instrument_objects():
    spec = load_process_spec(
        {
            "n_objects": 10,
            "instruments": [{"id": "AH", "bias": -5}, {"id": "EP", "bias": 0}],
            "sigma_object": 1,
            "sigma_interaction": 2,
            "sigma_noise": 0,
        }
    )
    assert spec.instrument_ids == ["AH", "EP"]
    assert spec.seed == 0
    assert spec.to_dict()["instruments"] == [["AH", -5.0], ["EP", 0.0]]


def test_load_process_spec_errors(tmp_path):
    with pytest.raises(IoFailure):
        load_process_spec(tmp_path / "missing.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(InvalidProcessSpec):
        load_process_spec(broken)

    incomplete = tmp_path / "incomplete.json"
    incomplete.write_text(json.dumps({"n_objects": 5, "instruments": [["AH", 0]]}), encoding="utf-8")
    with pytest.raises(InvalidProcessSpec, match="sigma_object"):
        load_process_spec(incomplete)

    with pytest.raises(InvalidProcessSpec):
        load_process_spec({**_spec().to_dict(), "sigma_interaction": "wide"})


# region Generación
def test_gen_dataset_without_variance_is_constant():
    spec = _spec(instruments=(("AH", 0.0), ("EP", 0.0)), sigma_object=0.0, sigma_interaction=0.0, sigma_noise=0.0)
    ds = gen_dataset(spec)
    assert len(ds) == 20 * 2 * 2
    np.testing.assert_array_equal(ds.values(SIM_VARIABLE), np.full(80, 50.0))


def test_gen_dataset_layout():
    ds = gen_dataset(_spec())
    assert ds.objects(SIM_VARIABLE)[:2] == ["P001", "P002"]
    assert ds.instruments(SIM_VARIABLE) == ["AH", "EP"]
    assert sorted({r.replicate for r in ds}) == [0, 1]


def test_gen_dataset_is_deterministic():
    spec = _spec()
    assert gen_dataset(spec) == gen_dataset(spec)
    assert gen_dataset(spec) != gen_dataset(spec, seed=43)
    assert gen_dataset(spec, seed=43) == gen_dataset(replace(spec, seed=43))


def test_replicate_seed_wraps():
    assert replicate_seed(10, 5) == 15
    assert replicate_seed(2 ** 64 - 1, 1) == 0


# region Diseño cruzado
CROSSOVER_BETA = (60.0, -10.0, 5.0, 3.0)


def test_crossover_without_variance_follows_the_design():
    rows = gen_crossover(CrossoverSpec(5, CROSSOVER_BETA, 0.0, 0.0))
    assert len(rows) == 10
    assert [r.subject_id for r in rows[:2]] == ["S01", "S01"]
    assert [r.group for r in rows[::2]] == ["MR→BSK"] * 3 + ["BSK→MR"] * 2
    # MR→BSK: ITLD con MR, TDD con BSK
    assert (rows[0].treatment, rows[0].task, rows[0].y) == ("ITLD", "MR", 68.0)
    assert (rows[1].treatment, rows[1].task, rows[1].y) == ("TDD", "BSK", 53.0)
    # BSK→MR: ITLD con BSK, TDD con MR
    assert (rows[-2].treatment, rows[-2].task, rows[-2].y) == ("ITLD", "BSK", 60.0)
    assert (rows[-1].treatment, rows[-1].task, rows[-1].y) == ("TDD", "MR", 55.0)


def test_crossover_is_deterministic():
    spec = CrossoverSpec(8, CROSSOVER_BETA, 4.0, 2.0, seed=3)
    assert gen_crossover(spec) == gen_crossover(spec)
    assert gen_crossover(spec) != gen_crossover(spec, seed=4)
    assert gen_crossover(spec, seed=4) == gen_crossover(replace(spec, seed=4))


def test_crossover_spec_validation():
    with pytest.raises(InvalidProcessSpec):
        CrossoverSpec(3, CROSSOVER_BETA, 1.0, 1.0)
    with pytest.raises(InvalidProcessSpec):
        CrossoverSpec(10, (60.0, -10.0, 5.0), 1.0, 1.0)
    with pytest.raises(InvalidProcessSpec):
        CrossoverSpec(10, CROSSOVER_BETA, -1.0, 1.0)


def test_crossover_truth():
    truth = CrossoverSpec(10, CROSSOVER_BETA, 3.0, 2.0).truth()
    assert list(truth) == list(REML_ESTIMATORS)
    assert truth["TaskMR"] == 5.0
    assert (truth["var_subject"], truth["var_residual"]) == (9.0, 4.0)


# region Monte Carlo
def test_d_bar_is_exact_without_interaction_or_noise():
    spec = _spec(sigma_interaction=0.0, sigma_noise=0.0, replicates=1)
    summary = monte_carlo(spec, "d_bar", 10)
    assert summary.mean == pytest.approx(30.0)
    assert summary.sd == pytest.approx(0.0, abs=1e-9)
    assert expected_d_bar(spec) == 30.0


def test_monte_carlo_is_independent_of_workers():
    spec = _spec()
    sequential = monte_carlo(spec, ["s_M2", "d_bar", "rho"], 12, workers=1)
    threaded = monte_carlo(spec, ["s_M2", "d_bar", "rho"], 12, workers=4)
    for name in ("s_M2", "d_bar", "rho"):
        assert sequential[name].estimates == threaded[name].estimates


def test_monte_carlo_warnings_do_not_depend_on_workers():
    spec = _spec(instruments=(("AH", 0.0), ("EP", 0.0)))
    messages = []
    for workers in (1, 4):
        with pytest.warns(AnalysisWarning) as record:
            monte_carlo(spec, "rho", 30, workers=workers)
        messages.append([str(w.message) for w in record])
    assert len(messages[0]) == 1
    assert messages[0][0].startswith("monte_carlo:")
    assert messages[1] == messages[0]


def test_monte_carlo_is_reproducible():
    spec = _spec()
    assert monte_carlo(spec, "s_d", 8).estimates == monte_carlo(spec, "s_d", 8).estimates


def test_monte_carlo_list_returns_a_dict():
    result = monte_carlo(_spec(), ["trueness", "s_d"], 5)
    assert list(result) == ["trueness", "s_d"]
    assert result["s_d"].n_reps == 5
    assert set(result["s_d"].to_record()) == {
        "estimator", "n_reps", "mean", "sd", "se", "q025", "q500", "q975"
    }


def test_monte_carlo_trueness():
    summary = monte_carlo(_spec(instruments=(("AH", 5.0), ("EP", 0.0))), "trueness", 200)
    assert _within(summary, 5.0)


def test_monte_carlo_repeatability():
    spec = _spec(replicates=3)
    summary = monte_carlo(spec, "repeatability", 200)
    assert _within(summary, expected_s_r(spec))


def test_monte_carlo_ms_interaction():
    spec = _spec()
    summary = monte_carlo(spec, "s_M2", 300)
    assert expected_ms_interaction(spec) == pytest.approx(2 * 450.0 + 2 * 25.0 + 4.0)
    assert _within(summary, expected_ms_interaction(spec))


def test_monte_carlo_s_d():
    spec = _spec()
    summary = monte_carlo(spec, "s_d", 300)
    assert expected_s_d(spec) == pytest.approx(c4(20) * np.sqrt(2 * 25.0 + 2 * 4.0 / 2))
    assert _within(summary, expected_s_d(spec))


def test_monte_carlo_rho_without_bias_is_near_zero():
    spec = _spec(instruments=(("AH", 0.0), ("EP", 0.0)))
    with pytest.warns(AnalysisWarning):
        summary = monte_carlo(spec, "rho", 200)
    assert summary.mean < 0.1
    assert _within(summary, expected_rho(spec, draws=50_000), slack=0.01)


def test_s_m_grows_with_interaction():
    means = [
        monte_carlo(_spec(instruments=(("AH", 0.0), ("EP", 0.0)), sigma_interaction=sigma), "s_M", 50).mean
        for sigma in (1.0, 5.0, 15.0)
    ]
    assert means[0] < means[1] < means[2]


def test_monte_carlo_errors():
    with pytest.raises(UnknownEstimator):
        monte_carlo(_spec(), "kappa", 10)
    with pytest.raises(UnknownEstimator):
        monte_carlo(_spec(), [], 10)
    with pytest.raises(TooFewSamples):
        monte_carlo(_spec(), "s_d", 1)


def test_estimator_failure_reports_the_replicate():
    with pytest.raises(EstimatorFailure) as excinfo:
        monte_carlo(_spec(replicates=1), "repeatability", 5)
    assert excinfo.value.replicate == 0
    assert isinstance(excinfo.value.cause, TooFewSamples)
    assert excinfo.value.exit_code == 2


def test_estimator_failure_keeps_numerical_exit_code():
    spec = _spec(
        instruments=(("AH", 0.0), ("EP", 0.0)),
        sigma_object=0.0,
        sigma_interaction=0.0,
        sigma_noise=0.0,
        replicates=1,
    )
    with pytest.raises(EstimatorFailure) as excinfo:
        monte_carlo(spec, "rho", 3)
    assert isinstance(excinfo.value.cause, DegenerateVariance)
    assert excinfo.value.exit_code == 3


# region Oráculos
def test_rho_oracle_edges():
    assert expected_rho(_spec(sigma_interaction=0.0, sigma_noise=0.0), draws=10) == 1.0
    with pytest.raises(DegenerateVariance):
        expected_rho(
            _spec(instruments=(("AH", 0.0), ("EP", 0.0)), sigma_interaction=0.0, sigma_noise=0.0), draws=10
        )


def test_rho_oracle_grows_with_bias():
    small = expected_rho(_spec(instruments=(("AH", 0.0), ("EP", -1.0))), draws=20_000)
    large = expected_rho(_spec(instruments=(("AH", 0.0), ("EP", -30.0))), draws=20_000)
    assert 0.0 <= small < large <= 1.0


def test_repeatability_oracle_needs_replicates():
    with pytest.raises(TooFewSamples):
        expected_s_r(_spec(replicates=1))


@pytest.mark.slow
@pytest.mark.parametrize(
    "spec",
    [
        _spec(n_objects=74, seed=101),
        _spec(
            n_objects=74,
            instruments=(("AH", -35.0), ("EP", 0.0)),
            sigma_object=25.0,
            sigma_noise=0.0,
            replicates=1,
            seed=202,
        ),
        _spec(
            n_objects=74,
            instruments=(("AH", 0.0), ("EP", 3.0)),
            sigma_object=15.0,
            sigma_interaction=8.0,
            sigma_noise=4.0,
            replicates=3,
            seed=303,
        ),
    ],
    ids=["large-bias", "poor-agreement", "small-bias"],
)
def test_estimators_recover_the_process(spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnalysisWarning)
        summaries = monte_carlo(spec, ["s_M2", "s_d", "d_bar", "rho"], 1000, workers=4)
    assert _within(summaries["s_M2"], expected_ms_interaction(spec), n_se=3.0)
    assert _within(summaries["s_d"], expected_s_d(spec), n_se=3.0)
    assert _within(summaries["d_bar"], expected_d_bar(spec), n_se=3.0)
    assert _within(summaries["rho"], expected_rho(spec, draws=100_000), n_se=3.0, slack=0.005)


@pytest.mark.slow
def test_poor_agreement_spec():
    spec = load_process_spec(SPECS_DIR / "poor_agreement.json")
    summaries = monte_carlo(spec, ["d_bar", "s_d"], 500)
    assert _within(summaries["d_bar"], -35.0)
    assert _within(summaries["s_d"], expected_s_d(spec))


def test_poor_agreement_keeps_a_high_correlation():
    spec = load_process_spec(SPECS_DIR / "poor_agreement.json")
    pairs = pair_by_object(gen_dataset(spec), "AH", "EP", SIM_VARIABLE)
    assert pearson(pairs).r > 0.7
    assert abs(bland_altman(pairs).d_bar) > 25.0
