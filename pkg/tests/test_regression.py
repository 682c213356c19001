import warnings

import numpy as np
import pytest

from nirglucose import metrics, serialize
from nirglucose.data import (ChannelSet, Cohort, Dataset, Prandial,
                             SampleRecord, Sex)
from nirglucose.features import build_basis, expand_matrix
from nirglucose.regression import (FitError, PolynomialModel,
                                   RankDeficiencyError, fit_logistic, fit_mpr,
                                   fit_svr, predict_logistic, predict_mpr,
                                   predict_svr)


def make_ds(X, y):
    X = np.asarray(X, dtype=float)
    records = tuple(
        SampleRecord(sample_id=f"r{i}", age_years=40, sex=Sex.MALE,
                     cohort=Cohort.HEALTHY, prandial=Prandial.FASTING,
                     v1=float(row[0]), v2=float(row[1]), v3=float(row[2]),
                     ref_glucose=float(t), timestamp=1_700_000_000 + i)
        for i, (row, t) in enumerate(zip(X, y)))
    return Dataset(records=records)


def random_voltages(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([
        rng.uniform(3.3, 4.5, n),
        rng.uniform(1.0, 4.4, n),
        rng.uniform(0.7, 4.4, n),
    ])


class TestFitMpr:
    def test_constant_target(self):
        X = random_voltages(40)
        ds = make_ds(X, np.full(40, 120.0))
        model = fit_mpr(ds, ChannelSet.RM4, 3)
        assert model.intercept == pytest.approx(120.0, abs=1e-8)
        assert np.max(np.abs(model.coefficients)) < 1e-8
        assert model.training_metrics["rmse"] < 1e-8

    @pytest.mark.filterwarnings("ignore:channel")
    def test_oracle_polynomial_recovery(self):
        X = random_voltages(60, seed=1)
        Z = (X - X.mean(axis=0)) / X.std(axis=0)
        y = 2 * Z[:, 0] ** 3 - Z[:, 1] + 5
        ds = make_ds(X, y)
        model = fit_mpr(ds, ChannelSet.RM4, 3)
        est = predict_mpr(model, X)
        assert np.max(np.abs(est - y) / np.abs(y)) < 1e-8

    def test_too_few_samples(self):
        X = random_voltages(10)
        with pytest.raises(FitError, match="samples"):
            fit_mpr(make_ds(X, np.linspace(80, 200, 10)), ChannelSet.RM4, 3)

    def test_rank_deficiency_reported(self):
        X = random_voltages(50, seed=2)
        X[:, 2] = X[:, 1]  # collinear channels
        ds = make_ds(X, np.linspace(80, 300, 50))
        with pytest.raises(RankDeficiencyError, match="condition"):
            fit_mpr(ds, ChannelSet.RM4, 3)

    def test_residual_orthogonal_to_design(self):
        rng = np.random.default_rng(103)
        X = random_voltages(80, seed=3)
        y = rng.uniform(80, 350, 80)
        ds = make_ds(X, y)
        model = fit_mpr(ds, ChannelSet.RM4, 3)
        Z = (X - model.mean) / model.std
        design = expand_matrix(build_basis(3, 3), Z)
        resid = y - predict_mpr(model, X)
        dots = design.T @ resid
        scale = np.linalg.norm(design, axis=0) * np.linalg.norm(resid) + 1e-30
        assert np.max(np.abs(dots) / scale) < 1e-6

    @pytest.mark.filterwarnings("ignore:channel")
    def test_affine_closure(self):
        rng = np.random.default_rng(104)
        X = random_voltages(70, seed=4)
        y = rng.uniform(80, 350, 70)
        m1 = fit_mpr(make_ds(X, y), ChannelSet.RM4, 3)
        m2 = fit_mpr(make_ds(0.37 * X + 0.9, y), ChannelSet.RM4, 3)
        sse1 = m1.training_metrics["rmse"] ** 2
        sse2 = m2.training_metrics["rmse"] ** 2
        assert sse2 == pytest.approx(sse1, rel=1e-6, abs=1e-9)

    def test_deterministic_serialization(self):
        X = random_voltages(50, seed=5)
        y = np.linspace(85, 320, 50)
        a = fit_mpr(make_ds(X, y), ChannelSet.RM4, 3)
        b = fit_mpr(make_ds(X, y), ChannelSet.RM4, 3)
        assert serialize.dumps(a.to_dict()) == serialize.dumps(b.to_dict())

    def test_degree3_sse_ge_degree4(self):
        rng = np.random.default_rng(106)
        X = random_voltages(120, seed=6)
        y = rng.uniform(80, 350, 120)
        ds = make_ds(X, y)
        rmse3 = fit_mpr(ds, ChannelSet.RM4, 3).training_metrics["rmse"]
        rmse4 = fit_mpr(ds, ChannelSet.RM4, 4).training_metrics["rmse"]
        assert rmse4 <= rmse3 + 1e-9

    def test_two_channel_sets(self):
        X = random_voltages(40, seed=7)
        y = np.linspace(90, 280, 40)
        model = fit_mpr(make_ds(X, y), ChannelSet.RM1, 3)
        assert model.basis.n_vars == 2
        assert len(model.coefficients) == 9


class TestPredictMpr:
    def test_constant_model(self):
        basis = build_basis(3, 3)
        model = PolynomialModel(
            channels=ChannelSet.RM4, basis=basis,
            coefficients=np.zeros(19), intercept=98.0,
            mean=np.array([3.9, 2.5, 2.4]), std=np.ones(3))
        assert predict_mpr(model, (3.5, 2.0, 3.0)) == pytest.approx(98.0)

    @pytest.mark.filterwarnings("ignore:channel")
    def test_oracle_offset_at_unit_point(self):
        basis = build_basis(3, 3)
        coefs = np.zeros(19)
        by_exp = {e: i for i, e in enumerate(basis.monomials)}
        coefs[by_exp[(3, 0, 0)]] = 2.0
        coefs[by_exp[(0, 1, 0)]] = -1.0
        model = PolynomialModel(
            channels=ChannelSet.RM4, basis=basis, coefficients=coefs,
            intercept=5.0, mean=np.zeros(3), std=np.ones(3))
        # standardized input (1,1,1): 2 - 1 = +1 relative to intercept... plus 5
        assert predict_mpr(model, (1.0, 1.0, 1.0)) == pytest.approx(6.0)

    def test_arity_mismatch(self):
        X = random_voltages(40, seed=8)
        model = fit_mpr(make_ds(X, np.linspace(90, 280, 40)), ChannelSet.RM1, 3)
        with pytest.raises(FitError):
            predict_mpr(model, (3.5, 2.0, 3.0))

    def test_local_lipschitz_bounded(self):
        X = random_voltages(60, seed=9)
        y = np.linspace(90, 280, 60)
        model = fit_mpr(make_ds(X, y), ChannelSet.RM4, 3)
        lsb = 4.096 / 2 ** 16
        x0 = np.array([3.9, 2.5, 2.4])
        base = predict_mpr(model, x0)
        for c in range(3):
            dx = np.zeros(3)
            dx[c] = lsb
            step = abs(predict_mpr(model, x0 + dx) - base)
            assert step < 5.0  # one ADC step moves the estimate by < 5 mg/dl

    def test_out_of_range_warning(self):
        X = random_voltages(40, seed=10)
        model = fit_mpr(make_ds(X, np.linspace(90, 280, 40)), ChannelSet.RM4, 3)
        with pytest.warns(UserWarning, match="outside"):
            predict_mpr(model, (9.0, 2.5, 2.4))


class TestLogistic:
    def test_constant_target(self):
        X = random_voltages(30, seed=11)
        model = fit_logistic(make_ds(X, np.full(30, 150.0)), ChannelSet.RM4)
        est = predict_logistic(model, X)
        assert np.all(np.abs(est - 150.0) <= 0.5)

    def test_beats_mean_predictor_on_monotone_target(self):
        X = random_voltages(80, seed=12)
        y = 60.0 * X[:, 1] + 50.0
        ds = make_ds(X, y)
        model = fit_logistic(ds, ChannelSet.RM4)
        rmse_fit = metrics.rmse(y, predict_logistic(model, X))
        rmse_mean = metrics.rmse(y, np.full_like(y, y.mean()))
        assert rmse_fit < rmse_mean

    def test_too_few_samples(self):
        X = random_voltages(5, seed=13)
        with pytest.raises(FitError):
            fit_logistic(make_ds(X, np.linspace(90, 200, 5)), ChannelSet.RM4)

    def test_output_range_bounds(self):
        X = random_voltages(50, seed=14)
        y = np.linspace(80, 300, 50)
        model = fit_logistic(make_ds(X, y), ChannelSet.RM4)
        assert model.y_max > model.y_min
        est = predict_logistic(model, random_voltages(100, seed=15))
        assert np.all(est >= model.y_min) and np.all(est <= model.y_max)


class TestSvr:
    def test_single_point_within_tube(self):
        X = random_voltages(1, seed=16)
        model = fit_svr(make_ds(X, [100.0]), ChannelSet.RM4, eps_tube=5.0)
        assert abs(predict_svr(model, X[0]) - 100.0) <= 5.0 + 1e-6

    def test_noiseless_linear_tight_fit(self):
        X = random_voltages(50, seed=17)
        y = 80.0 + 40.0 * (X[:, 0] - 3.9) + 30.0 * (X[:, 1] - 2.5)
        model = fit_svr(make_ds(X, y), ChannelSet.RM4,
                        C=1e4, eps_tube=0.1, gamma=0.5)
        assert metrics.mad(y, predict_svr(model, X)) < 1.0

    def test_dual_coefficients_bounded(self):
        X = random_voltages(60, seed=18)
        rng = np.random.default_rng(118)
        y = rng.uniform(80, 350, 60)
        C = 50.0
        model = fit_svr(make_ds(X, y), ChannelSet.RM4, C=C)
        assert np.all(np.abs(model.dual_coefs) <= C + 1e-6)

    def test_kkt_non_support_inside_tube(self):
        X = random_voltages(60, seed=19)
        y = 150.0 + 50.0 * np.tanh(X[:, 1] - 2.5)
        eps = 5.0
        model = fit_svr(make_ds(X, y), ChannelSet.RM4, C=100.0, eps_tube=eps)
        assert model.max_kkt_violation < 1e-3
        Z = (X - model.mean) / model.std
        sv_set = {tuple(v) for v in np.round(model.support_vectors, 12)}
        est = predict_svr(model, X)
        for i in range(60):
            if tuple(np.round(Z[i], 12)) not in sv_set:
                assert abs(y[i] - est[i]) <= eps + 1e-3

    def test_invalid_hyperparameters(self):
        X = random_voltages(20, seed=20)
        ds = make_ds(X, np.linspace(90, 200, 20))
        with pytest.raises(FitError):
            fit_svr(ds, ChannelSet.RM4, C=-1.0)
        with pytest.raises(FitError):
            fit_svr(ds, ChannelSet.RM4, gamma=-0.1)

    def test_deterministic(self):
        X = random_voltages(40, seed=21)
        y = np.linspace(85, 320, 40)
        a = fit_svr(make_ds(X, y), ChannelSet.RM4)
        b = fit_svr(make_ds(X, y), ChannelSet.RM4)
        assert serialize.dumps(a.to_dict()) == serialize.dumps(b.to_dict())
