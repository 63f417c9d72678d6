import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre.environment import (
    EnvironmentModel,
    builtin_model,
    draw_env,
    env_expectation,
    is_ref,
    ss_ref,
    tilt,
    ws_ref,
)
from bpre.errors import ValidationError
from bpre.offspring import LinearFractional, moments
from bpre.streams import stream


def test_builtin_means_are_exact():
    assert list(ss_ref().means) == [0.5, 0.25]
    assert list(is_ref().means) == [2.0, 0.25]
    np.testing.assert_allclose(ws_ref().means, [math.exp(-2.0), math.e], rtol=1e-15)


def test_unknown_builtin():
    with pytest.raises(ValidationError):
        builtin_model("nope")


class TestDrawEnv:
    def test_empty(self):
        env = draw_env(ss_ref(), 0, stream(1, "t"))
        assert len(env) == 0

    def test_single_component_degenerate(self):
        law = LinearFractional(0.125, 0.5)
        model = EnvironmentModel([(law, 1.0)])
        env = draw_env(model, 5, stream(1, "t"))
        assert all(l == law for l in env)

    def test_component_frequency(self):
        model = ss_ref()
        rng = stream(3, "t")
        env = draw_env(model, 10**5, rng)
        frac = sum(1 for law in env if law == model.laws[0]) / 1e5
        assert abs(frac - 0.5) < 0.005  # ~3 binomial SEs


class TestTilt:
    def test_identity(self):
        model = ss_ref()
        tilted, z = tilt(model, 0.0)
        assert tilted is model
        assert z == 1.0

    def test_ws_ref_normalizer(self):
        _, z = tilt(ws_ref(), math.log(2.0) / 3.0)
        expected = (2.0 ** (-2.0 / 3.0) + 2.0 ** (1.0 / 3.0)) / 2.0
        assert z == pytest.approx(expected, abs=1e-12)

    def test_single_component(self):
        model = EnvironmentModel([(LinearFractional(0.125, 0.5), 1.0)])
        tilted, z = tilt(model, 2.5)
        assert tilted.weights[0] == pytest.approx(1.0, abs=1e-15)
        assert z == pytest.approx(0.5**2.5, rel=1e-14)

    def test_normalizer_equals_expectation(self):
        model = is_ref()
        for theta in [0.3, 1.0, 2.7]:
            _, z = tilt(model, theta)
            direct = env_expectation(model, lambda law: moments(law)[0] ** theta)
            assert abs(z - direct) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_composition(self, t1, t2):
        model = ws_ref()
        once, _ = tilt(*[model, t1])
        twice, _ = tilt(once, t2)
        joint, _ = tilt(model, t1 + t2)
        np.testing.assert_allclose(twice.weights, joint.weights, atol=1e-12)


class TestExpectation:
    def test_mean_mixture(self):
        model = EnvironmentModel(
            [
                (LinearFractional(0.5, 0.5), 0.2),  # mean 2
                (LinearFractional(0.0625, 0.5), 0.8),  # mean 1/4
            ]
        )
        assert env_expectation(model, lambda law: moments(law)[0]) == pytest.approx(
            0.6, abs=1e-15
        )

    def test_constant(self):
        assert env_expectation(ss_ref(), lambda law: 1.0) == 1.0

    def test_is_ref_centering(self):
        val = env_expectation(
            is_ref(), lambda law: moments(law)[0] * math.log(moments(law)[0])
        )
        assert abs(val) <= 1e-12


def test_weight_validation():
    with pytest.raises(ValidationError):
        EnvironmentModel([(LinearFractional(0.125, 0.5), 0.7)])
    with pytest.raises(ValidationError):
        EnvironmentModel(
            [(LinearFractional(0.125, 0.5), 0.0), (LinearFractional(0.125, 0.5), 1.0)]
        )
