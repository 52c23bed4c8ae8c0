"""SVM training against a dual-QP oracle, kernels, fusion, model files."""

import io

import numpy as np
import pytest
from scipy import optimize

from poseact.errors import CapacityError, FormatError, ValidationError
from poseact.learn import (
    CHI2_EPS,
    ScoreMatrix,
    SvmModel,
    chi2_distance,
    chi2_kernel_matrix,
    frame_score_aggregate,
    late_fuse,
    read_model,
    read_scores,
    score,
    train_chi2,
    train_linear,
    write_model,
    write_scores,
)


def _dual_optimum(kernel_aug, y, c):
    """Box-constrained dual solved by L-BFGS-B: max sum(a) - a'Qa/2."""
    q = kernel_aug * np.outer(y, y)

    def objective(alpha):
        qa = q @ alpha
        return 0.5 * float(alpha @ qa) - alpha.sum(), qa - 1.0

    n = y.size
    result = optimize.minimize(
        objective,
        np.zeros(n),
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, c)] * n,
        options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-10},
    )
    return -float(result.fun)


def _primal_value(kernel_aug, coef, y, c):
    f = kernel_aug @ coef
    hinge = np.maximum(0.0, 1.0 - y * f).sum()
    return 0.5 * float(coef @ kernel_aug @ coef) + c * hinge


def _two_blob_data(rng, n_per=8, d=3, gap=4.0):
    a = rng.normal(size=(n_per, d)) + gap
    b = rng.normal(size=(n_per, d)) - gap
    features = np.vstack([a, b])
    labels = ["pos"] * n_per + ["neg"] * n_per
    return features, labels


class TestLinearSvmOracle:
    def test_objective_matches_dual_qp(self):
        rng = np.random.default_rng(0)
        for trial in range(12):
            n = int(rng.integers(6, 15))
            d = int(rng.integers(2, 5))
            c = float(rng.choice([0.3, 1.0, 3.0]))
            features = rng.normal(size=(n, d))
            labels = ["a" if v > 0 else "b" for v in rng.normal(size=n)]
            if len(set(labels)) < 2:
                labels[0] = "a" if labels[0] == "b" else "b"
            model = train_linear(features, labels, c=c, seed=trial)
            aug = np.hstack([features, np.ones((n, 1))])
            kernel_aug = aug @ aug.T
            for ci, cls in enumerate(model.classes):
                y = np.where(np.array(labels) == cls, 1.0, -1.0)
                w_aug = np.concatenate([model.weights[ci], [model.bias[ci]]])
                hinge = np.maximum(0.0, 1.0 - y * (aug @ w_aug)).sum()
                primal = 0.5 * float(w_aug @ w_aug) + c * hinge
                dual = _dual_optimum(kernel_aug, y, c)
                # weak duality: primal >= dual; near-optimality: small gap
                assert primal >= dual - 1e-7, f"trial {trial} class {cls}"
                assert primal - dual <= 2e-4 * n + 1e-3, f"trial {trial} class {cls}"

    def test_separable_data_perfect_train_accuracy(self):
        rng = np.random.default_rng(1)
        features, labels = _two_blob_data(rng)
        model = train_linear(features, labels)
        predicted = [model.classes[i] for i in score(model, features).scores.argmax(axis=1)]
        assert predicted == labels

    def test_classes_sorted_and_stringified(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(6, 2))
        model = train_linear(features, [3, 1, 2, 3, 1, 2])
        assert model.classes == ("1", "2", "3")

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        features, labels = _two_blob_data(rng, n_per=5)
        a = train_linear(features, labels, seed=7)
        b = train_linear(features.copy(), list(labels), seed=7)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_validation(self):
        rng = np.random.default_rng(4)
        with pytest.raises(ValidationError):
            train_linear(rng.normal(size=(1, 3)), ["a"])
        with pytest.raises(ValidationError):
            train_linear(rng.normal(size=(4, 3)), ["a", "a", "a", "a"])
        with pytest.raises(ValidationError):
            train_linear(rng.normal(size=(4, 3)), ["a", "b"])
        with pytest.raises(ValidationError):
            train_linear(rng.normal(size=(4, 3)), ["a", "b", "a", "b"], c=0.0)
        bad = rng.normal(size=(4, 3))
        bad[0, 0] = np.nan
        with pytest.raises(ValidationError):
            train_linear(bad, ["a", "b", "a", "b"])


class TestChi2Distance:
    def test_fixtures(self):
        assert chi2_distance([1.0, 0.0], [1.0, 0.0]) == 0.0
        # (1-0)^2/(1+eps) twice
        assert chi2_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0, rel=1e-9)
        assert chi2_distance([2.0], [1.0]) == pytest.approx(1.0 / (3.0 + CHI2_EPS))

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.uniform(0, 2, size=6)
            y = rng.uniform(0, 2, size=6)
            assert chi2_distance(x, y) == pytest.approx(chi2_distance(y, x))
            assert chi2_distance(x, y) >= 0.0

    def test_exp_kernel_diag_is_one(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, size=(4, 5))
        kernel = chi2_kernel_matrix(a, a, gamma=0.7)
        np.testing.assert_allclose(np.diag(kernel), np.ones(4))
        assert np.all(kernel > 0) and np.all(kernel <= 1 + 1e-12)

    def test_exp_kernel_manual_entry(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        kernel = chi2_kernel_matrix(a, b, gamma=0.5)
        assert kernel[0, 0] == pytest.approx(np.exp(-0.5 * 2.0), rel=1e-9)

    def test_additive_kernel_manual_entry(self):
        a = np.array([[1.0, 2.0]])
        b = np.array([[3.0, 2.0]])
        kernel = chi2_kernel_matrix(a, b, gamma=1.0, form="additive")
        want = 2 * 1 * 3 / (4 + CHI2_EPS) + 2 * 2 * 2 / (4 + CHI2_EPS)
        assert kernel[0, 0] == pytest.approx(want)

    def test_negative_features_rejected(self):
        with pytest.raises(ValidationError):
            chi2_kernel_matrix(np.array([[-0.1]]), np.array([[1.0]]), 1.0)
        with pytest.raises(ValidationError):
            chi2_kernel_matrix(np.array([[1.0]]), np.array([[1.0]]), 1.0, form="rbf")


class TestChi2Svm:
    def _histogram_data(self, rng, n_per=6, d=8):
        a = rng.dirichlet(np.linspace(1, 8, d), size=n_per)
        b = rng.dirichlet(np.linspace(8, 1, d), size=n_per)
        return np.vstack([a, b]), ["a"] * n_per + ["b"] * n_per

    def test_gamma_is_inverse_mean_distance(self):
        rng = np.random.default_rng(7)
        features, labels = self._histogram_data(rng)
        model = train_chi2(features, labels)
        n = features.shape[0]
        total = sum(
            chi2_distance(features[i], features[j]) for i in range(n) for j in range(n)
        )
        assert model.gamma == pytest.approx(1.0 / (total / n**2), rel=1e-9)

    def test_objective_matches_dual_qp(self):
        rng = np.random.default_rng(8)
        for trial in range(6):
            features, labels = self._histogram_data(rng, n_per=int(rng.integers(4, 8)))
            c = float(rng.choice([0.5, 1.0, 2.0]))
            model = train_chi2(features, labels, c=c, seed=trial)
            n = features.shape[0]
            kernel_aug = (
                chi2_kernel_matrix(features, features, model.gamma) + 1.0
            )
            for ci, cls in enumerate(model.classes):
                y = np.where(np.array(labels) == cls, 1.0, -1.0)
                primal = _primal_value(kernel_aug, model.coefs[ci], y, c)
                dual = _dual_optimum(kernel_aug, y, c)
                assert primal >= dual - 1e-7, f"trial {trial} class {cls}"
                assert primal - dual <= 2e-4 * n + 1e-3, f"trial {trial} class {cls}"

    def test_separable_histograms_perfect_train_accuracy(self):
        rng = np.random.default_rng(9)
        features, labels = self._histogram_data(rng)
        model = train_chi2(features, labels)
        predicted = [model.classes[i] for i in score(model, features).scores.argmax(axis=1)]
        assert predicted == labels

    def test_capacity_cap(self):
        rng = np.random.default_rng(10)
        features = rng.uniform(0, 1, size=(6, 3))
        labels = ["a", "b"] * 3
        with pytest.raises(CapacityError):
            train_chi2(features, labels, max_kernel_rows=4)

    def test_negative_features_rejected(self):
        features = np.array([[0.5, -0.1], [0.2, 0.3], [0.1, 0.2], [0.4, 0.4]])
        with pytest.raises(ValidationError):
            train_chi2(features, ["a", "b", "a", "b"])

    def test_identical_rows_fall_back_to_unit_gamma(self):
        features = np.ones((4, 3))
        model = train_chi2(features, ["a", "b", "a", "b"])
        assert model.gamma == 1.0


class TestScore:
    def test_linear_decision_values_manual(self):
        model = SvmModel(
            "linear",
            ("a", "b"),
            weights=np.array([[1.0, 0.0], [0.0, -1.0]]),
            bias=np.array([0.5, 2.0]),
        )
        out = score(model, np.array([[2.0, 3.0], [0.0, 0.0]]), ["v1", "v2"])
        np.testing.assert_allclose(out.scores, [[2.5, -1.0], [0.5, 2.0]])
        assert out.video_ids == ("v1", "v2")
        assert out.classes == ("a", "b")

    def test_default_video_ids(self):
        model = SvmModel(
            "linear", ("a", "b"), weights=np.zeros((2, 2)), bias=np.zeros(2)
        )
        out = score(model, np.zeros((3, 2)))
        assert out.video_ids == ("v0000", "v0001", "v0002")

    def test_dim_mismatch_raises(self):
        model = SvmModel(
            "linear", ("a", "b"), weights=np.zeros((2, 4)), bias=np.zeros(2)
        )
        with pytest.raises(ValidationError):
            score(model, np.zeros((2, 3)))

    def test_kernel_scoring_matches_manual(self):
        rng = np.random.default_rng(11)
        features = rng.uniform(0, 1, size=(6, 4))
        labels = ["a", "b", "a", "b", "a", "b"]
        model = train_chi2(features, labels)
        probe = rng.uniform(0, 1, size=(2, 4))
        out = score(model, probe)
        kernel = chi2_kernel_matrix(probe, features, model.gamma)
        want = kernel @ model.coefs.T + model.bias
        np.testing.assert_allclose(out.scores, want)


class TestFusion:
    def _matrix(self, values):
        values = np.asarray(values, dtype=np.float64)
        ids = tuple(f"v{i}" for i in range(values.shape[0]))
        return ScoreMatrix(ids, ("a", "b"), values)

    def test_weighted_mean(self):
        m1 = self._matrix([[1.0, 0.0], [0.0, 2.0]])
        m2 = self._matrix([[3.0, 4.0], [2.0, 0.0]])
        fused = late_fuse([m1, m2], weights=[1.0, 3.0])
        np.testing.assert_allclose(fused.scores, [[2.5, 3.0], [1.5, 0.5]])

    def test_default_equal_weights(self):
        m1 = self._matrix([[2.0, 0.0]])
        m2 = self._matrix([[0.0, 4.0]])
        fused = late_fuse([m1, m2])
        np.testing.assert_allclose(fused.scores, [[1.0, 2.0]])

    def test_single_matrix_identity(self):
        m1 = self._matrix([[1.5, -2.0]])
        np.testing.assert_allclose(late_fuse([m1]).scores, m1.scores)

    def test_validation(self):
        m1 = self._matrix([[1.0, 0.0]])
        other = ScoreMatrix(("x",), ("a", "b"), [[0.0, 0.0]])
        with pytest.raises(ValidationError):
            late_fuse([])
        with pytest.raises(ValidationError):
            late_fuse([m1, other])
        with pytest.raises(ValidationError):
            late_fuse([m1, m1], weights=[0.0, 0.0])
        with pytest.raises(ValidationError):
            late_fuse([m1, m1], weights=[-1.0, 2.0])

    def test_frame_aggregate_max_and_mean(self):
        f1 = self._matrix([[1.0, 5.0]])
        f2 = self._matrix([[3.0, 1.0]])
        np.testing.assert_allclose(
            frame_score_aggregate([f1, f2], "max").scores, [[3.0, 5.0]]
        )
        np.testing.assert_allclose(
            frame_score_aggregate([f1, f2], "mean").scores, [[2.0, 3.0]]
        )
        with pytest.raises(ValidationError):
            frame_score_aggregate([f1, f2], "median")
        with pytest.raises(ValidationError):
            frame_score_aggregate([])


class TestModelIO:
    def test_linear_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        features, labels = _two_blob_data(rng, n_per=5)
        model = train_linear(features, labels)
        path = str(tmp_path / "m.psvm")
        write_model(path, model)
        back = read_model(path)
        assert back.kind == "linear"
        assert back.classes == model.classes
        np.testing.assert_allclose(back.weights, model.weights, atol=1e-5)
        np.testing.assert_allclose(back.bias, model.bias, atol=1e-6)

    def test_kernel_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        features = rng.uniform(0, 1, size=(6, 3))
        model = train_chi2(features, ["a", "b"] * 3)
        path = str(tmp_path / "k.psvm")
        write_model(path, model)
        back = read_model(path)
        assert back.kind == "chi2_kernel"
        assert back.kernel_form == "exp"
        assert back.gamma == pytest.approx(model.gamma, rel=1e-6)
        np.testing.assert_allclose(back.support, model.support, atol=1e-6)
        np.testing.assert_allclose(back.coefs, model.coefs, atol=1e-5)

    def test_round_trip_preserves_scores(self, tmp_path):
        rng = np.random.default_rng(14)
        features, labels = _two_blob_data(rng, n_per=4, d=2)
        model = train_linear(features, labels)
        path = str(tmp_path / "m.psvm")
        write_model(path, model)
        back = read_model(path)
        probe = rng.normal(size=(3, 2))
        np.testing.assert_allclose(
            score(back, probe).scores, score(model, probe).scores, atol=1e-4
        )

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            read_model(io.BytesIO(b"NOPE" + b"\x00" * 32))

    def test_truncated(self, tmp_path):
        rng = np.random.default_rng(15)
        features, labels = _two_blob_data(rng, n_per=3, d=2)
        buf = io.BytesIO()
        write_model(buf, train_linear(features, labels))
        with pytest.raises(FormatError):
            read_model(io.BytesIO(buf.getvalue()[:-3]))


class TestScoresIO:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(16)
        matrix = ScoreMatrix(
            ("clip1", "clip2", "clip3"),
            ("walk", "wave"),
            rng.normal(size=(3, 2)) * 100,
        )
        buf = io.StringIO()
        write_scores(buf, matrix)
        buf.seek(0)
        back = read_scores(buf)
        assert back.video_ids == matrix.video_ids
        assert back.classes == matrix.classes
        np.testing.assert_array_equal(back.scores, matrix.scores)

    @pytest.mark.parametrize(
        "text",
        [
            "clip\t1.0\n",  # wrong header tag
            "video_id\ta\tb\nv1\t1.0\n",  # short row
            "video_id\ta\tb\nv1\t1.0\tx\n",  # non-numeric
            "video_id\ta\tb\n",  # no rows
            "video_id\n",  # no classes
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(FormatError):
            read_scores(io.StringIO(text))


class TestScoreMatrixValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            ScoreMatrix(("v1",), ("a", "b"), np.zeros((2, 2)))

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            ScoreMatrix(("v1",), ("a", "b"), np.array([[1.0, np.inf]]))


class TestSvmModelValidation:
    def test_linear_requires_weights(self):
        with pytest.raises(ValidationError):
            SvmModel("linear", ("a", "b"))

    def test_kernel_requires_support(self):
        with pytest.raises(ValidationError):
            SvmModel("chi2_kernel", ("a", "b"))

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            SvmModel("rbf", ("a", "b"))

    def test_needs_two_classes(self):
        with pytest.raises(ValidationError):
            SvmModel("linear", ("a",), weights=np.zeros((1, 2)), bias=np.zeros(1))
