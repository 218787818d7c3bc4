#!/usr/bin/env python3
"""
Tests for correlation matrices, co-motion patterns and the JS divergence.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy.spatial.distance import jensenshannon

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from comotion_errors import (
    DimensionMismatchError,
    EmptyInputError,
    NotNormalizedError,
    SchemaError,
    ZeroWeightError,
)
from comotion_pattern import (
    LN2,
    TRIANGLE_SIZE,
    CorrelationMatrix,
    NormalizedPattern,
    PatternConfig,
    accumulate,
    convergence_curve,
    correlation_matrix,
    is_equivalence_relation,
    js_divergence,
    load_rho_archive,
    merge_patterns,
    normalize,
    pattern_difference,
    read_pattern,
    save_rho_archive,
    write_heatmap,
    write_pattern,
)
from motion_grouping import CH_CAP, Partition


def partition(labels, ch: float = 1.0) -> Partition:
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1
    return Partition(labels=labels, k=k, ch_score=ch, embedding=np.zeros((len(labels), k)))


def random_rho(rng, pair: int, video_id: str = "v", k_max: int = 8, ch: float = None) -> CorrelationMatrix:
    k = int(rng.integers(2, k_max + 1))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=51 - k)])
    rng.shuffle(labels)
    _, labels = np.unique(labels, return_inverse=True)
    weight = float(rng.uniform(0.5, 50.0)) if ch is None else ch
    return correlation_matrix(partition(labels, weight), (pair, pair + 1), video_id)


def random_distribution(rng, size: int) -> np.ndarray:
    p = rng.random(size) + 1e-6
    return p / p.sum()


class TestCorrelationMatrix:
    """rho from partitions."""

    def test_block_miniature(self):
        rho = correlation_matrix(partition([0, 0, 1, 1], ch=5.0))
        assert rho.rho.tolist() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]
        assert rho.weight == 5.0
        assert rho.k == 2

    def test_all_equal_and_all_distinct(self):
        assert np.all(correlation_matrix(partition([0] * 5)).rho == 1)
        assert np.array_equal(correlation_matrix(partition(np.arange(5))).rho, np.eye(5))

    def test_equivalence_relation_over_random_partitions(self):
        rng = np.random.default_rng(0)
        for i in range(1000):
            rho = random_rho(rng, i).rho
            assert is_equivalence_relation(rho)
            assert np.all(np.diag(rho) == 1)

    def test_non_transitive_matrix_detected(self):
        rho = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
        assert not is_equivalence_relation(rho)

    def test_negative_weight_rejected(self):
        with pytest.raises(ZeroWeightError):
            CorrelationMatrix(rho=np.eye(3), weight=-1.0, pair_id=(0, 1), k=3)


class TestAccumulate:
    """Weighted sums of correlation matrices."""

    def test_single(self):
        rho = correlation_matrix(partition([0, 0, 1, 1], ch=5.0))
        cp = accumulate([rho])
        assert np.array_equal(cp.acc, 5.0 * rho.rho)
        assert cp.total_weight == 5.0
        assert cp.pair_count == 1

    def test_linearity(self):
        a = correlation_matrix(partition([0, 0, 1, 1], ch=1.0), (0, 1))
        b = correlation_matrix(partition([0, 0, 1, 1], ch=3.0), (1, 2))
        assert np.array_equal(accumulate([a, b]).acc, 4.0 * a.rho)

    def test_disjoint_partitions_half(self):
        a = correlation_matrix(partition([0, 0, 1, 1], ch=2.0), (0, 1))
        b = correlation_matrix(partition([0, 1, 1, 0], ch=2.0), (1, 2))
        mean = accumulate([a, b]).mean_matrix()
        assert mean[0, 1] == 0.5
        assert mean[0, 3] == 0.5
        assert mean[0, 2] == 0.0
        assert np.all(np.diag(mean) == 1.0)

    def test_invariants(self):
        rng = np.random.default_rng(1)
        cp = accumulate([random_rho(rng, i) for i in range(20)])
        assert np.array_equal(cp.acc, cp.acc.T)
        assert np.allclose(np.diag(cp.acc), cp.total_weight)
        assert np.all(cp.acc <= cp.total_weight * (1 + 1e-12))

    def test_order_invariant(self):
        rng = np.random.default_rng(2)
        rhos = [random_rho(rng, i) for i in range(30)]
        reference = accumulate(rhos).acc
        shuffled = [rhos[i] for i in rng.permutation(len(rhos))]
        assert np.array_equal(accumulate(shuffled).acc, reference)

    def test_merge_matches_serial_sum(self):
        rng = np.random.default_rng(3)
        rhos = [random_rho(rng, i) for i in range(12)]
        merged = merge_patterns(accumulate(rhos[:5]), accumulate(rhos[5:]))
        serial = accumulate(rhos)
        assert np.allclose(merged.acc, serial.acc, rtol=1e-12)
        assert merged.pair_count == 12
        assert merged.total_weight == pytest.approx(serial.total_weight, rel=1e-12)

    def test_merge_requires_same_mode(self):
        rng = np.random.default_rng(3)
        rhos = [random_rho(rng, i) for i in range(2)]
        with pytest.raises(SchemaError):
            merge_patterns(accumulate(rhos, "ch"), accumulate(rhos, "k-times-ch"))

    def test_k_times_ch_weights(self):
        a = correlation_matrix(partition([0, 0, 1], ch=2.0))
        cp = accumulate([a], weight_mode="k-times-ch")
        assert cp.total_weight == 4.0

    def test_capped_weight_clipped_to_largest_finite(self):
        a = correlation_matrix(partition([0, 0, 1, 1], ch=3.0), (0, 1))
        b = correlation_matrix(partition([0, 1, 1, 0], ch=7.0), (1, 2))
        c = correlation_matrix(partition([0, 0, 0, 0], ch=CH_CAP), (2, 3))
        cp = accumulate([c, a, b])
        assert cp.weights == (3.0, 7.0, 7.0)
        assert cp.total_weight == 17.0
        assert np.array_equal(cp.acc, 3.0 * a.rho + 7.0 * b.rho + 7.0 * c.rho)
        assert accumulate([a, b, c], weight_mode="k-times-ch").weights == (6.0, 14.0, 7.0)

    def test_all_capped_weights_count_equally(self):
        a = correlation_matrix(partition([0, 0, 1, 1], ch=CH_CAP), (0, 1))
        b = correlation_matrix(partition([0, 0, 0, 0], ch=CH_CAP), (1, 2))
        cp = accumulate([a, b])
        assert cp.weights == (1.0, 1.0)
        assert cp.mean_matrix()[0, 2] == 0.5

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            accumulate([])


class TestNormalize:
    """Strict-lower-triangle L1 normalization."""

    def test_all_ones_is_uniform(self):
        rho = correlation_matrix(partition([0] * 51))
        np_ = normalize(accumulate([rho]))
        assert np_.p.shape == (TRIANGLE_SIZE,)
        assert np.allclose(np_.p, 1.0 / TRIANGLE_SIZE)

    def test_single_entry_without_smoothing(self):
        labels = np.arange(51)
        labels[1] = 0
        np_ = normalize(accumulate([correlation_matrix(partition(labels))]), epsilon=0.0)
        assert np_.p.max() == 1.0
        assert np.count_nonzero(np_.p) == 1
        assert not np_.smoothed
        assert np_.matrix()[1, 0] == 1.0

    def test_sums_to_one_and_positive(self):
        rng = np.random.default_rng(4)
        p = normalize(accumulate([random_rho(rng, i) for i in range(10)])).p
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p > 0)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(5)
        rho = random_rho(rng, 0, ch=1.0)
        base = normalize(accumulate([rho])).p
        for c in (1e-3, 7.0, 1e6):
            scaled = CorrelationMatrix(rho.rho, c, rho.pair_id, rho.k, rho.video_id)
            assert np.allclose(normalize(accumulate([scaled])).p, base, rtol=0, atol=1e-12)

    def test_weight_modes_agree_when_k_constant(self):
        rng = np.random.default_rng(6)
        rhos = []
        for i in range(15):
            labels = np.concatenate([np.arange(4), rng.integers(0, 4, size=47)])
            rhos.append(correlation_matrix(partition(labels, float(rng.uniform(1, 9))), (i, i + 1)))
        ch = normalize(accumulate(rhos, "ch")).p
        kch = normalize(accumulate(rhos, "k-times-ch")).p
        assert np.allclose(ch, kch, rtol=0, atol=1e-12)

    def test_zero_weight(self):
        rho = CorrelationMatrix(np.ones((51, 51)), 0.0, (0, 1), 1)
        with pytest.raises(ZeroWeightError):
            normalize(accumulate([rho]))

    def test_not_normalized_rejected(self):
        with pytest.raises(NotNormalizedError):
            NormalizedPattern(np.full(TRIANGLE_SIZE, 1.0))


class TestJensenShannon:
    """JS divergence in nats."""

    def test_identical(self):
        p = random_distribution(np.random.default_rng(7), TRIANGLE_SIZE)
        assert js_divergence(p, p) == 0.0

    def test_disjoint_support_is_ln2(self):
        p = np.zeros(TRIANGLE_SIZE)
        q = np.zeros(TRIANGLE_SIZE)
        p[0], q[1] = 1.0, 1.0
        assert js_divergence(p, q) == pytest.approx(LN2, abs=1e-12)

    def test_two_bin_example(self, test_config):
        cfg = test_config["pattern"]
        p, q = np.array(cfg["two_bin_p"]), np.array(cfg["two_bin_q"])
        m = (p + q) / 2
        scripted = 0.5 * sum(p * np.log(p / m)) + 0.5 * sum(q * np.log(q / m))
        assert js_divergence(p, q) == pytest.approx(scripted, abs=1e-9)
        assert js_divergence(p, q) == pytest.approx(jensenshannon(p, q) ** 2, abs=1e-9)
        assert js_divergence(p, q) == pytest.approx(0.0338, abs=1e-4)

    def test_symmetric_and_bounded(self, test_config):
        rng = np.random.default_rng(8)
        for _ in range(test_config["pattern"]["random_pairs"]):
            size = int(rng.integers(2, 60))
            p, q = random_distribution(rng, size), random_distribution(rng, size)
            d = js_divergence(p, q)
            assert abs(d - js_divergence(q, p)) <= 1e-12
            assert 0.0 <= d <= LN2 + 1e-12

    def test_rejects_unnormalized(self):
        with pytest.raises(NotNormalizedError):
            js_divergence(np.array([0.5, 0.6]), np.array([0.5, 0.5]))

    def test_rejects_size_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            js_divergence(np.array([0.5, 0.5]), np.array([0.2, 0.3, 0.5]))


class TestInspection:
    def test_convergence_curve_reaches_zero(self):
        rng = np.random.default_rng(9)
        rhos = [random_rho(rng, i) for i in range(20)]
        curve = convergence_curve(rhos, [1, 5, 20, 50])
        assert [row["N"] for row in curve] == [1, 5, 20, 50]
        assert curve[-1]["js"] == 0.0
        assert curve[-1]["pairs_used"] == 20
        assert curve[0]["js"] > curve[2]["js"]

    def test_convergence_curve_config(self):
        rng = np.random.default_rng(10)
        rhos = [random_rho(rng, i) for i in range(4)]
        curve = convergence_curve(rhos, [2], config=PatternConfig(weight_mode="k-times-ch", epsilon=0.0))
        assert curve[0]["js"] >= 0.0

    def test_pattern_difference(self):
        rng = np.random.default_rng(11)
        a = normalize(accumulate([random_rho(rng, 0)]))
        b = normalize(accumulate([random_rho(rng, 1)]))
        diff = pattern_difference(a, b)
        assert diff.shape == (51, 51)
        assert np.allclose(diff, diff.T)
        assert abs(diff.sum()) < 1e-12

    def test_heatmap(self, tmp_path):
        rng = np.random.default_rng(12)
        cp = accumulate([random_rho(rng, i) for i in range(5)])
        path = tmp_path / "heat.pgm"
        write_heatmap(cp.mean_matrix(), path)
        with Image.open(path) as img:
            assert img.size == (51, 51)
            pixels = np.asarray(img)
        assert pixels.max() == 255
        assert pixels.min() == 0


class TestPersistence:
    def test_pattern_csv_and_sidecar(self, tmp_path):
        rng = np.random.default_rng(13)
        cp = accumulate([random_rho(rng, i, video_id="clip") for i in range(6)])
        path = tmp_path / "clip.csv"
        sidecar = write_pattern(cp, path, {"pairs_used": 6, "label": "real"})
        stored = json.loads(path.with_suffix(".json").read_text())
        assert stored == sidecar
        assert stored["N"] == 6
        assert stored["video_id"] == "clip"
        assert len(path.read_text().splitlines()) == 51

        back, meta = read_pattern(path)
        assert meta["label"] == "real"
        assert np.allclose(back.acc, cp.acc, rtol=1e-12)
        assert np.allclose(normalize(back).p, normalize(cp).p, rtol=0, atol=1e-15)

    def test_pattern_write_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(14)
        cp = accumulate([random_rho(rng, i) for i in range(6)])
        write_pattern(cp, tmp_path / "a.csv")
        write_pattern(cp, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_sidecar_schema_enforced(self, tmp_path):
        rng = np.random.default_rng(15)
        cp = accumulate([random_rho(rng, 0)])
        with pytest.raises(SchemaError):
            write_pattern(cp, tmp_path / "x.csv", {"weight_mode": "squared"})

    def test_rho_archive(self, tmp_path):
        rng = np.random.default_rng(16)
        rhos = [random_rho(rng, i, video_id="clip") for i in range(4)]
        path = tmp_path / "rhos.npz"
        save_rho_archive(rhos, path)
        back = load_rho_archive(path)
        assert [r.pair_id for r in back] == [r.pair_id for r in rhos]
        assert all(np.array_equal(a.rho, b.rho) and a.weight == b.weight and a.k == b.k for a, b in zip(rhos, back))
        assert back[0].video_id == "clip"
