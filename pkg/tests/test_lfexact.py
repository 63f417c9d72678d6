import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpre.environment import EnvSequence, draw_env, is_ref, ss_ref, ws_ref
from bpre.errors import ValidationError
from bpre.lfexact import (
    closed_form_log_survival,
    draw_survival_chunk,
    iterate_F,
    lf_minorant,
    log_survival_env,
    minorant_env,
    quenched_survival,
)
from bpre.offspring import FiniteSupport, LinearFractional, moments, pgf
from bpre.rwalk import WalkPath, walk_stats
from bpre.simcore import evolve_lineages
from bpre.streams import stream

LF = LinearFractional(0.25, 0.5)  # critical geometric: f(s) = 1/(2-s)


class TestIterateF:
    def test_empty_is_identity(self):
        assert iterate_F(EnvSequence([]), 0.3) == 0.3

    def test_two_steps(self):
        env = EnvSequence([LF, LF])
        assert iterate_F(env, 0.0) == pytest.approx(2.0 / 3.0, abs=1e-14)

    def test_normalization_preserved(self):
        env = draw_env(ss_ref(), 17, stream(5, "t"))
        assert iterate_F(env, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_domain_error(self):
        with pytest.raises(ValidationError):
            iterate_F(EnvSequence([LF]), 1.2)


class TestQuenchedSurvival:
    def test_critical_geometric_constant_env(self):
        # constant composition of f(s) = 1/(2-s) gives survival 1/(1+n)
        for n in [1, 4, 10]:
            qs = quenched_survival(EnvSequence([LF] * n))
            assert qs.p == pytest.approx(1.0 / (1.0 + n), abs=1e-12)

    def test_empty(self):
        qs = quenched_survival(EnvSequence([]))
        assert qs.p == 1.0 and qs.log_p == 0.0

    def test_multi_particle_fields(self):
        qs = quenched_survival(EnvSequence([LF, LF]), k=2)
        assert qs.p_all_survive == pytest.approx(1.0 / 9.0, abs=1e-12)
        assert qs.p_any_survive == pytest.approx(5.0 / 9.0, abs=1e-12)

    def test_closed_form_agrees_long_horizon(self):
        # constant critical environment out to n = 1000
        env = EnvSequence([LF] * 1000)
        li = log_survival_env(env)
        lc = closed_form_log_survival(env)
        assert math.exp(li) == pytest.approx(1.0 / 1001.0, abs=1e-12)
        assert abs(li - lc) <= 1e-10 * max(1.0, abs(li))

    def test_closed_form_agrees_random_envs(self):
        for seed, model in [(1, ss_ref()), (2, is_ref()), (3, ws_ref())]:
            rng = stream(seed, "t")
            for n in [1, 7, 40, 300, 1000]:
                env = draw_env(model, n, rng)
                li = log_survival_env(env)
                lc = closed_form_log_survival(env)
                assert abs(li - lc) <= 1e-9 * max(1.0, abs(li))
                if math.exp(li) > 1e-250:
                    assert abs(math.exp(li) - math.exp(lc)) <= 1e-10

    def test_monotone_in_horizon(self):
        rng = stream(9, "t")
        env = list(draw_env(ws_ref(), 40, rng))
        last = 1.0
        for n in range(1, 41):
            p = quenched_survival(EnvSequence(env[:n])).p
            assert p <= last + 1e-15
            last = p

    def test_running_minimum_bound(self):
        # survival never exceeds exp(min of partial log-mean sums over 1..n)
        for seed, model in [(21, ss_ref()), (22, is_ref()), (23, ws_ref())]:
            rng = stream(seed, "t")
            for _ in range(200):
                env = draw_env(model, 30, rng)
                qs = quenched_survival(env)
                stats = walk_stats(WalkPath.from_env(env))
                assert qs.p <= math.exp(stats.min_from_1) + 1e-12


class TestMinorant:
    def test_bernoulli_is_its_own_dominator(self):
        tilde = lf_minorant(FiniteSupport([0.5, 0.5]))
        assert tilde.A == pytest.approx(0.5, abs=1e-15)
        assert tilde.B == pytest.approx(0.0, abs=1e-15)
        for s in np.linspace(0, 1, 11):
            assert pgf(tilde, float(s)) == pytest.approx((1 + s) / 2, abs=1e-14)

    def test_unit_mean_example(self):
        law = FiniteSupport([0.25, 0.5, 0.25])  # m = 1, f2 = 0.5
        # dominating law matches the mean and doubles f''(1)
        tilde = lf_minorant(law)
        m, f2 = moments(tilde)
        assert m == pytest.approx(1.0, rel=1e-12)
        assert f2 == pytest.approx(1.0, rel=1e-12)

    def test_lf_of_lf_is_different_law(self):
        m, f2 = moments(LF)
        tilde = lf_minorant(LF)
        tm, tf2 = moments(tilde)
        assert tm == pytest.approx(m, rel=1e-12)
        assert tf2 == pytest.approx(2 * f2, rel=1e-12)
        assert tilde != LF

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6).filter(
            lambda v: sum(v) > 1e-3 and sum(i * x for i, x in enumerate(v)) > 1e-3
        )
    )
    def test_dominates_on_grid(self, raw):
        law = FiniteSupport([x / sum(raw) for x in raw])
        tilde = lf_minorant(law)  # raises internally if dominance fails
        for s in np.linspace(0, 1, 21):
            assert pgf(tilde, float(s)) >= pgf(law, float(s)) - 1e-12

    def test_substitution_never_raises_survival(self):
        for seed, model in [(31, ss_ref()), (32, ws_ref())]:
            rng = stream(seed, "t")
            for _ in range(100):
                env = draw_env(model, 20, rng)
                p = quenched_survival(env).p
                p_tilde = quenched_survival(minorant_env(env)).p
                assert p_tilde <= p + 1e-12


class TestQuenchedAgainstSimulation:
    def test_lineage_monte_carlo_matches_quenched(self):
        env = draw_env(ss_ref(), 6, stream(41, "t"))
        p = quenched_survival(env).p
        rng = stream(42, "t")
        reps = 10**5
        alive = 0
        for _ in range(reps):
            pops = evolve_lineages(env, 1, rng)
            alive += int(pops[-1].sum() > 0)
        frac = alive / reps
        se = math.sqrt(p * (1 - p) / reps)
        assert abs(frac - p) < 4 * se


class TestVectorizedKernel:
    def test_matches_scalar_path(self):
        model = ws_ref()
        rng = stream(55, "t")
        chunk = draw_survival_chunk(model, model.weights, 25, rng, 50, want_idx=True)
        laws = model.laws
        for r in range(50):
            env = EnvSequence([laws[i] for i in chunk.idx[r]])
            expected = log_survival_env(env)
            assert chunk.log_q[r] == pytest.approx(expected, abs=1e-10)
            s_n = sum(math.log(moments(law)[0]) for law in env)
            assert chunk.s_n[r] == pytest.approx(s_n, abs=1e-10)

    def test_paths_are_cumulative_sums(self):
        model = ss_ref()
        rng = stream(56, "t")
        chunk = draw_survival_chunk(model, model.weights, 10, rng, 20, want_paths=True, want_idx=True)
        steps = model.log_means[chunk.idx]
        expected = np.concatenate(
            [np.zeros((20, 1)), np.cumsum(steps, axis=1)], axis=1
        )
        np.testing.assert_allclose(chunk.paths, expected, atol=1e-12)
