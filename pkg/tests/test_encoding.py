import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from blurkit.encoding import (
    EncoderConfig,
    IntervalEncoder,
    IntervalGroup,
    ProjectionWeights,
    alternative_params,
    condition_rows,
    encode_alternative,
    encode_group,
    encode_group_linear,
    gamma,
    group_intervals,
    position_encoding,
    replicate_input_interval,
)
from blurkit.errors import ConfigurationError, DomainError, UnsupportedOperationError

CFG = EncoderConfig()


def random_weights(config, seed=0):
    return ProjectionWeights.init(config, np.random.default_rng(seed))


class TestGamma:
    def test_origin(self):
        np.testing.assert_array_equal(gamma(0.0, CFG), [1, 0] * 6)

    def test_quarter_period(self):
        cfg = EncoderConfig(n_freqs=1, frequencies=(1.0,))
        np.testing.assert_allclose(gamma(0.25, cfg), [0.0, 1.0], atol=1e-12)

    def test_range(self):
        t = np.random.default_rng(0).uniform(-10, 10, 1000)
        g = gamma(t, CFG)
        assert g.shape == (1000, 12)
        assert np.all(np.abs(g) <= 1.0)

    @given(st.floats(-50, 50))
    def test_integer_frequencies_periodic(self, t):
        np.testing.assert_allclose(gamma(t + 1.0, CFG), gamma(t, CFG), atol=1e-9)

    def test_default_ladder(self):
        assert CFG.frequencies == (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            EncoderConfig(n_freqs=2, frequencies=(2.0, 1.0))
        with pytest.raises(ConfigurationError):
            EncoderConfig(scheme="rotary")


class TestGrouping:
    def test_eight_frames_two_groups(self):
        ivs = [(-0.5 + k / 8, -0.5 + (k + 1) / 8) for k in range(8)]
        groups = group_intervals(ivs, 4)
        assert len(groups) == 2
        assert groups[0].values == tuple(v for iv in ivs[:4] for v in iv)
        assert groups[1].values == tuple(v for iv in ivs[4:] for v in iv)

    def test_g1(self):
        groups = group_intervals([(0, 1), (1, 2), (2, 3)], 1)
        assert [grp.values for grp in groups] == [(0, 1), (1, 2), (2, 3)]

    def test_indivisible(self):
        with pytest.raises(ConfigurationError):
            group_intervals([(k, k + 1) for k in range(7)], 4)

    def test_replicate(self):
        assert replicate_input_interval(4).values == (-0.5, 0.5) * 4
        assert replicate_input_interval(1).values == (-0.5, 0.5)

    def test_group_validation(self):
        with pytest.raises(ConfigurationError):
            IntervalGroup((0.2, 0.1))
        with pytest.raises(ConfigurationError):
            IntervalGroup((0.5, 0.6, 0.0, 0.1))


class TestEncodeGroup:
    def test_zero_weights_gives_bias(self):
        b = np.arange(CFG.out_dim, dtype=float)
        w = ProjectionWeights(np.zeros((CFG.in_dim, CFG.out_dim)), b)
        np.testing.assert_array_equal(encode_group((-0.3, 0.1), CFG, w), b)

    def test_permutation_weights(self):
        cfg = EncoderConfig(n_freqs=2, out_dim=16, group_size=2)
        perm = np.random.default_rng(1).permutation(16)
        m = np.eye(16)[:, perm]
        out = encode_group((-0.5, 0.0, 0.0, 0.5), cfg, ProjectionWeights(m, np.zeros(16)))
        concat = np.concatenate([gamma(v, cfg) for v in (-0.5, 0.0, 0.0, 0.5)])
        np.testing.assert_allclose(out, concat[perm], atol=1e-15)

    def test_block_selector_order(self):
        # a block-selector matrix that copies gamma block k into output slot k
        cfg = EncoderConfig(n_freqs=3, out_dim=24, group_size=2)
        m = np.eye(24)
        coords = np.array([-0.4, -0.1, 0.05, 0.3])
        out = encode_group(coords, cfg, ProjectionWeights(m, np.zeros(24)))
        for k, v in enumerate(coords):
            np.testing.assert_allclose(out[6 * k:6 * k + 6], gamma(v, cfg), atol=1e-15)
        # IntervalGroup forbids out-of-order coordinates, so permute through the raw encoder
        enc = IntervalEncoder(cfg).double()
        enc.load_weights(ProjectionWeights(m, np.zeros(24)))
        perm = [2, 0, 3, 1]
        out_p = enc(torch.as_tensor(coords[perm])).detach().numpy()
        for k, src in enumerate(perm):
            np.testing.assert_allclose(out_p[6 * k:6 * k + 6], out[6 * src:6 * src + 6], atol=1e-15)

    def test_sensitive_to_small_shift(self):
        w = random_weights(CFG)
        a = encode_group((-0.5, 0.0), CFG, w)
        b = encode_group((-0.49, 0.0), CFG, w)
        assert np.linalg.norm(a - b) > 0

    def test_pure(self):
        w = random_weights(CFG)
        assert encode_group((0.1, 0.2), CFG, w).tobytes() == encode_group((0.1, 0.2), CFG, w).tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            encode_group((0.0, 0.1, 0.2, 0.3), CFG, random_weights(CFG))


class TestAlternative:
    cfg = EncoderConfig(scheme="alternative")

    def test_single_frame(self):
        out = encode_alternative(-0.5, 0.5, 1.0, 1, self.cfg, random_weights(self.cfg))
        assert out.shape == (128,)

    def test_zero_weights(self):
        b = np.ones(128)
        w = ProjectionWeights(np.zeros((self.cfg.in_dim, 128)), b)
        np.testing.assert_array_equal(encode_alternative(-0.5, 0.5, 0.25, 4, self.cfg, w), b)

    def test_frame_count_distinguishes(self):
        w = random_weights(self.cfg, 3)
        a = encode_alternative(-0.5, 0.5, 0.0625, 4, self.cfg, w)
        b = encode_alternative(-0.5, 0.5, 0.0625, 8, self.cfg, w)
        assert np.linalg.norm(a - b) > 0

    def test_params(self):
        ivs = [(-0.5 + k / 16, -0.5 + (k + 1) / 16) for k in range(0, 16, 2)]
        a, b, d, n = alternative_params(ivs)
        assert (a, n) == (-0.5, 8) and d == pytest.approx(1 / 16) and b == pytest.approx(0.4375)

    def test_non_uniform(self):
        with pytest.raises(UnsupportedOperationError):
            alternative_params([(-0.5, 0.0), (0.0, 0.25)])


class TestLinear:
    cfg = EncoderConfig(scheme="linear_ablation", group_size=2)

    def test_zero_weights(self):
        w = ProjectionWeights(np.zeros((4, 128)), np.full(128, 0.5))
        np.testing.assert_array_equal(encode_group_linear((0, 1, 1, 2), w), np.full(128, 0.5))

    def test_linearity_and_additivity(self):
        w = random_weights(self.cfg)
        x = np.array([-0.5, -0.2, 0.1, 0.4])
        y = np.array([0.0, 0.3, 0.3, 0.9])
        f = lambda v: encode_group_linear(v, w) - w.bias
        np.testing.assert_allclose(f(2.5 * x), 2.5 * f(x), atol=1e-12)
        np.testing.assert_allclose(f(x + y), f(x) + f(y), atol=1e-12)


class TestPosition:
    def test_origin(self):
        code = position_encoding(0, 0, 0, 128, (4, 16, 16))
        np.testing.assert_array_equal(code[0::2], 1.0)
        np.testing.assert_array_equal(code[1::2], 0.0)

    def test_distinct_on_grid(self):
        f, r, c = np.meshgrid(np.arange(4), np.arange(16), np.arange(16), indexing="ij")
        codes = position_encoding(f.ravel(), r.ravel(), c.ravel(), 128, (4, 16, 16))
        d = np.linalg.norm(codes[:, None, :] - codes[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 1e-6

    def test_out_of_grid(self):
        with pytest.raises(DomainError):
            position_encoding(4, 0, 0, 128, (4, 16, 16))
        with pytest.raises(DomainError):
            position_encoding(0, -1, 0, 128, (4, 16, 16))

    def test_deterministic(self):
        a = position_encoding(2, 3, 5, 64, (4, 8, 8))
        assert a.tobytes() == position_encoding(2, 3, 5, 64, (4, 8, 8)).tobytes()


class TestTorchTwin:
    @pytest.mark.parametrize("scheme,g", [("per_interval", 1), ("per_interval", 4),
                                          ("linear_ablation", 4), ("alternative", 1)])
    def test_matches_reference(self, scheme, g):
        cfg = EncoderConfig(scheme=scheme, group_size=g, out_dim=32)
        enc = IntervalEncoder(cfg).double()
        w = random_weights(cfg, 7)
        enc.load_weights(w)
        ivs = [(-0.5 + k / 8, -0.5 + (k + 1) / 8) for k in range(8)]
        rows = condition_rows(ivs, cfg)
        out = enc(torch.as_tensor(rows)).detach().numpy()
        if scheme == "per_interval":
            ref = [encode_group(r, cfg, w) for r in rows]
        elif scheme == "linear_ablation":
            ref = [encode_group_linear(r, w) for r in rows]
        else:
            ref = [encode_alternative(*r[:3], round(r[3] * cfg.max_frames), cfg, w) for r in rows]
        np.testing.assert_allclose(out, np.stack(ref), atol=1e-12)
        np.testing.assert_allclose(enc.weights().matrix, w.matrix)

    def test_condition_rows_layout(self):
        cfg = EncoderConfig(group_size=4)
        ivs = [(-0.5 + k / 8, -0.5 + (k + 1) / 8) for k in range(8)]
        rows = condition_rows(ivs, cfg)
        assert rows.shape == (3, 8)
        np.testing.assert_array_equal(rows[0], [-0.5, 0.5] * 4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2, unique=True).map(sorted),
       st.integers(0, 1), st.sampled_from([1e-3, -1e-3]))
def test_injective_property(pair, which, delta):
    w = random_weights(CFG, 5)
    a = np.array(pair)
    b = a.copy()
    b[which] += delta
    if not b[1] > b[0]:
        return
    assert np.linalg.norm(encode_group(a, CFG, w) - encode_group(b, CFG, w)) > 0
