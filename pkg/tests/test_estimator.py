from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentcoord.core import Topology
from agentcoord.estimator import (
    DataError,
    ModelSpec,
    RankDeficiencyError,
    RunRecord,
    SPEC_COLUMNS,
    aic,
    bootstrap_se,
    build_design_matrix,
    compare_models,
    compute_stats,
    experiment_folds,
    fit_model,
    fit_ols,
    kfold_cv,
    load_dataset,
    parameter_count,
    save_dataset,
    synthetic_records,
)
from agentcoord.scaling import REFERENCE_BETA, ScalingFeatures, predict_performance

MINIMAL_BETA = (0.4, 0.1, -0.05, 0.08)


@pytest.fixture(scope="module")
def full_records():
    return synthetic_records(REFERENCE_BETA, n=300, noise_sd=0.05, seed=11)


def linear_records(n: int = 60, noise: float = 0.0, seed: int = 0) -> list[RunRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        f = ScalingFeatures(float(rng.uniform(40, 70)), float(rng.integers(1, 20)), float(rng.integers(1, 6)),
                            0, 0, 0, 0, 0, 0.5)
        y = 0.5 + 0.01 * (f.intelligence - 56.9) + 0.1 * np.log1p(f.tool_count)
        if noise:
            y += rng.normal(0, noise)
        out.append(RunRecord(f, float(y), f"e{i % 12}"))
    return out


class TestOls:
    def test_exact_line(self):
        x = np.linspace(-3, 5, 20)
        X = np.column_stack([np.ones_like(x), x])
        coef = fit_ols(X, 2 * x + 1).coefficients
        np.testing.assert_allclose(coef, [1, 2], atol=1e-9)

    def test_constant_target(self):
        x = np.arange(10.0)
        coef = fit_ols(np.column_stack([np.ones(10), x]), np.full(10, 0.7)).coefficients
        np.testing.assert_allclose(coef, [0.7, 0], atol=1e-12)

    def test_agrees_with_lstsq(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 6))
        y = rng.normal(size=50)
        ours = fit_ols(X, y).coefficients
        ref, *_ = np.linalg.lstsq(X, y, rcond=None)
        np.testing.assert_allclose(ours, ref, atol=1e-10)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_residuals_orthogonal(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 5)) * rng.uniform(0.1, 10, 5)
        y = rng.normal(size=40)
        res = fit_ols(X, y)
        scale = np.abs(X).max() * max(1.0, np.abs(y).max())
        assert np.abs(X.T @ res.residuals).max() < 1e-6 * scale

    def test_rank_deficiency_names_columns(self):
        x = np.arange(10.0)
        X = np.column_stack([np.ones(10), x, 2 * x])
        with pytest.raises(RankDeficiencyError) as info:
            fit_ols(X, x, ["intercept", "a", "b"])
        assert set(info.value.columns) == {"a", "b"}

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            fit_ols(np.eye(3), np.ones(3))


class TestDesign:
    def test_column_counts(self, full_records):
        for spec, k in zip(ModelSpec, (4, 10, 11, 20)):
            X, _, _ = build_design_matrix(full_records, spec)
            assert X.shape == (len(full_records), k) == (len(full_records), parameter_count(spec))

    def test_zero_variance_named(self):
        r = linear_records(1)[0]
        with pytest.raises(DataError, match="zero-variance column: intelligence"):
            build_design_matrix([r, r, r], ModelSpec.MINIMAL)

    def test_standardized_columns(self, full_records):
        X, _, _ = build_design_matrix(full_records, ModelSpec.FULL)
        np.testing.assert_allclose(X[:, 1:11].mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(X[:, 1:11].std(axis=0), 1, atol=1e-10)

    def test_architecture_dummies(self, full_records):
        X, _, _ = build_design_matrix(full_records, ModelSpec.LABELS)
        names = SPEC_COLUMNS[ModelSpec.LABELS]
        dummies = X[:, [names.index(f"arch_{t.value}") for t in Topology if t is not Topology.SAS]]
        is_sas = np.array([r.architecture is Topology.SAS for r in full_records])
        assert (dummies.sum(axis=1) == (~is_sas)).all()

    def test_reused_stats_for_single_record(self, full_records):
        _, _, stats = build_design_matrix(full_records)
        X1, _, _ = build_design_matrix(full_records[:1], stats=stats)
        X, _, _ = build_design_matrix(full_records, stats=stats)
        np.testing.assert_allclose(X1[0], X[0])

    def test_fit_matches_scaling_prediction(self, full_records):
        res = fit_model(full_records, n_boot=0)
        coeffs = res.coefficient_set()
        X, _, _ = build_design_matrix(full_records)
        fitted = X @ res.coefficients
        preds = [predict_performance(r.features, coeffs) for r in full_records[:20]]
        np.testing.assert_allclose(preds, fitted[:20], atol=1e-10)


class TestCrossValidation:
    def test_noiseless(self):
        assert kfold_cv(linear_records(), 5, ModelSpec.MINIMAL).r2 == pytest.approx(1.0, abs=1e-6)

    def test_pure_noise(self):
        rng = np.random.default_rng(5)
        base = synthetic_records(MINIMAL_BETA, n=500, seed=5, spec=ModelSpec.MINIMAL)
        noise = [dataclasses.replace(r, performance=float(rng.normal())) for r in base]
        assert kfold_cv(noise, 5, ModelSpec.MINIMAL).r2 <= 0.1

    def test_too_few_experiments(self):
        records = [dataclasses.replace(r, experiment_id=f"e{i % 3}") for i, r in enumerate(linear_records())]
        with pytest.raises(DataError):
            kfold_cv(records, 5, ModelSpec.MINIMAL)

    def test_folds_partition_experiments(self, full_records):
        folds = experiment_folds(full_records, 5, seed=2)
        flat = [e for f in folds for e in f]
        assert sorted(flat) == sorted({r.experiment_id for r in full_records})
        assert len(flat) == len(set(flat))

    def test_no_leakage(self, full_records):
        folds = experiment_folds(full_records, 5, seed=0)
        held = set(folds[0])
        perturbed = [
            dataclasses.replace(
                r,
                features=dataclasses.replace(r.features, intelligence=r.features.intelligence + 30,
                                             overhead_pct=r.features.overhead_pct * 3),
                performance=r.performance + 5,
            )
            if r.experiment_id in held
            else r
            for r in full_records
        ]
        a = kfold_cv(full_records, 5, seed=0).folds[0]
        b = kfold_cv(perturbed, 5, seed=0).folds[0]
        assert a.train_stats == b.train_stats
        # the oracle: stats computed directly from training rows
        train = [r for r in full_records if r.experiment_id not in held]
        assert a.train_stats == compute_stats(train)


class TestBootstrap:
    def test_deterministic(self, full_records):
        a = bootstrap_se(full_records, 50, ModelSpec.MINIMAL, seed=3)
        b = bootstrap_se(full_records, 50, ModelSpec.MINIMAL, seed=3)
        assert np.array_equal(a, b)

    def test_exact_data_zero_se(self):
        assert bootstrap_se(linear_records(), 50, ModelSpec.MINIMAL).max() < 1e-6

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noise_doubling(self, seed):
        lo = synthetic_records(MINIMAL_BETA, n=200, noise_sd=0.05, seed=seed, spec=ModelSpec.MINIMAL)
        hi = synthetic_records(MINIMAL_BETA, n=200, noise_sd=0.10, seed=seed + 100, spec=ModelSpec.MINIMAL)
        ratio = bootstrap_se(hi, 300, ModelSpec.MINIMAL, seed)[1:] / bootstrap_se(lo, 300, ModelSpec.MINIMAL, seed)[1:]
        assert np.all((ratio >= 1.6) & (ratio <= 2.4))

    def test_needs_thirty(self):
        with pytest.raises(DataError):
            bootstrap_se(linear_records(20), 10, ModelSpec.MINIMAL)


class TestModelComparison:
    def test_aic_formula(self):
        assert aic(2.0, 10, 3) == pytest.approx(10 * np.log(0.2) + 6)

    def test_aic_true_vs_noise_column(self):
        true_gain, noise_delta = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x, z, junk = rng.normal(size=(3, 100))
            y = 1 + x + 0.5 * z + rng.normal(0, 0.5, 100)
            base = np.column_stack([np.ones(100), x])
            a0 = aic(fit_ols(base, y).rss, 100, 2)
            true_gain.append(aic(fit_ols(np.column_stack([base, z]), y).rss, 100, 3) - a0)
            noise_delta.append(aic(fit_ols(np.column_stack([base, junk]), y).rss, 100, 3) - a0)
        assert np.mean(true_gain) < 0
        assert np.mean(noise_delta) > -2

    def test_parameter_counts_and_full_best(self, full_records):
        rows = compare_models(full_records)
        assert [r.k_params for r in rows] == [4, 10, 11, 20]
        assert max(rows, key=lambda r: r.r2_cv).spec is ModelSpec.FULL

    def test_minimal_truth_not_improved(self):
        records = synthetic_records(MINIMAL_BETA, n=400, noise_sd=0.05, seed=9, spec=ModelSpec.MINIMAL)
        rows = {r.spec: r for r in compare_models(records)}
        base = rows[ModelSpec.MINIMAL].r2_cv
        assert all(r.r2_cv - base <= 0.02 for r in rows.values())

    def test_only_full_exports_artifact(self):
        res = fit_model(linear_records(), ModelSpec.MINIMAL, n_boot=0)
        with pytest.raises(DataError):
            res.coefficient_set()


def test_dataset_round_trip(tmp_path, full_records):
    path = tmp_path / "runs.jsonl"
    save_dataset(full_records[:25], path)
    assert load_dataset(path) == full_records[:25]


def test_dataset_bad_record(tmp_path):
    path = tmp_path / "runs.jsonl"
    path.write_text('{"experiment_id": "x", "performance": 0.5}\n')
    with pytest.raises(DataError):
        load_dataset(path)
