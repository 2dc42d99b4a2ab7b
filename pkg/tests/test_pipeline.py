"""Mode lattice identities, decode orchestration, and batch error policy."""

import numpy as np
import pytest

from ragasr.knn import KnnParams, build_token_datastore
from ragasr.model import (
    EOS_TOKEN,
    START_TOKEN,
    AudioSegment,
    Utterance,
)
from ragasr.pipeline import DecodeConfig, DecodeFailure, decode_greedy, run_batch
from ragasr.prompts import PromptPlan, SentenceEntry, build_sentence_datastore, pack_prompts
from ragasr.synthetic import make_benchmark


@pytest.fixture(scope="module")
def suite():
    bench = make_benchmark(seed=101, train_size=150, test_size=40)
    sentence = build_sentence_datastore(bench.train, bench.model)
    token = build_token_datastore(bench.train, bench.model)
    return bench, sentence, token


def config_for(bench, **kwargs):
    kwargs.setdefault("max_decode_len", bench.default_max_decode_len)
    return DecodeConfig(**kwargs)


def hypotheses(bench, sentence, token, **kwargs):
    results = run_batch(bench.model, bench.test, sentence, token, config_for(bench, **kwargs))
    return [r.hypothesis for r in results]


class TestModeLattice:
    def test_m2r_lambda0_nmax0_equals_baseline(self, suite):
        bench, sentence, token = suite
        base = hypotheses(bench, sentence, token, mode="baseline")
        degenerate = hypotheses(
            bench, sentence, token, mode="m2r", knn=KnnParams(lam=0.0), n_max=0
        )
        assert base == degenerate

    def test_m2r_nmax0_equals_knn_only(self, suite):
        bench, sentence, token = suite
        knn = hypotheses(bench, sentence, token, mode="knn_only")
        m2r = hypotheses(bench, sentence, token, mode="m2r", n_max=0)
        assert knn == m2r

    def test_m2r_lambda0_equals_icl_only(self, suite):
        bench, sentence, token = suite
        icl = hypotheses(bench, sentence, token, mode="icl_only")
        m2r = hypotheses(bench, sentence, token, mode="m2r", knn=KnnParams(lam=0.0))
        assert icl == m2r

    def test_icl_with_zero_prompts_equals_baseline(self, suite):
        bench, sentence, token = suite
        base = hypotheses(bench, sentence, token, mode="baseline")
        icl0 = hypotheses(bench, sentence, token, mode="icl_only", n_max=0)
        assert base == icl0


class TestDecodeGreedy:
    def test_baseline_empty_plan_equals_plan_none(self, suite):
        bench, _, _ = suite
        utt = bench.test[0]
        cfg = config_for(bench, mode="baseline")
        a = decode_greedy(bench.model, utt.audio, None, None, cfg)
        b = decode_greedy(bench.model, utt.audio, PromptPlan.empty(), None, cfg)
        assert a.hypothesis == b.hypothesis
        assert a.n_prompts_used == 0

    def test_noiseless_model_reproduces_transcript_in_every_mode(self):
        bench = make_benchmark(
            seed=5, train_size=40, test_size=12,
            sub_mass=0.0, del_rate=0.0, ins_rate=0.0, noise_sigma=0.0,
        )
        sentence = build_sentence_datastore(bench.train, bench.model)
        token = build_token_datastore(bench.train, bench.model)
        for mode in ("baseline", "knn_only", "icl_only", "m2r"):
            results = run_batch(
                bench.model, bench.test, sentence, token, config_for(bench, mode=mode)
            )
            for utt, res in zip(bench.test, results):
                assert res.hypothesis == utt.transcript

    def test_missing_token_store_rejected(self, suite):
        bench, _, _ = suite
        cfg = config_for(bench, mode="knn_only")
        with pytest.raises(ValueError):
            decode_greedy(bench.model, bench.test[0].audio, None, None, cfg)

    def test_budget_violating_plan_rejected(self, suite):
        bench, _, _ = suite
        huge = SentenceEntry(
            utterance_id="huge", transcript=(2,), duration_s=31.0,
            audio=bench.model.audio_for_tokens((2,), "huge"),
        )
        plan = PromptPlan(prompts=(huge,), total_prompt_duration_s=31.0, prefix_tokens=(2,))
        with pytest.raises(ValueError, match="budget"):
            decode_greedy(
                bench.model, bench.test[0].audio, plan, None, config_for(bench, mode="icl_only")
            )

    def test_hypothesis_never_contains_start_or_prefix(self, suite):
        bench, sentence, token = suite
        cfg = config_for(bench, mode="m2r")
        results = run_batch(bench.model, bench.test, sentence, token, cfg)
        for res in results:
            assert START_TOKEN not in res.hypothesis
            assert EOS_TOKEN not in res.hypothesis
            assert len(res.hypothesis) <= cfg.max_decode_len

    def test_max_decode_len_bounds_hypothesis(self, suite):
        bench, _, _ = suite
        cfg = config_for(bench, mode="baseline", max_decode_len=3)
        res = decode_greedy(bench.model, bench.test[0].audio, None, None, cfg)
        assert len(res.hypothesis) <= 3

    def test_prompted_decode_reports_prompt_count_and_duration(self, suite):
        bench, sentence, _ = suite
        utt = bench.test[0]
        from ragasr.prompts import retrieve_prompts

        candidates = retrieve_prompts(sentence, bench.model, utt.audio, 16)
        plan = pack_prompts(candidates, utt.audio.duration_s, 30.0, 10)
        cfg = config_for(bench, mode="icl_only")
        res = decode_greedy(bench.model, utt.audio, plan, None, cfg)
        assert res.n_prompts_used == len(plan.prompts) > 0
        expected_audio = plan.total_prompt_duration_s + utt.audio.duration_s
        assert res.audio_duration_s == pytest.approx(expected_audio)


class TestRunBatch:
    def test_deterministic_across_runs_and_ordered(self, suite):
        bench, sentence, token = suite
        cfg = config_for(bench, mode="m2r")
        a = run_batch(bench.model, bench.test, sentence, token, cfg)
        b = run_batch(bench.model, bench.test, sentence, token, cfg)
        assert [r.hypothesis for r in a] == [r.hypothesis for r in b]
        assert [r.utterance_id for r in a] == [u.utterance_id for u in bench.test]

    def test_upfront_store_requirements(self, suite):
        bench, sentence, token = suite
        with pytest.raises(ValueError):
            run_batch(bench.model, bench.test, None, token, config_for(bench, mode="m2r"))
        with pytest.raises(ValueError):
            run_batch(bench.model, bench.test, sentence, None, config_for(bench, mode="m2r"))

    def _with_broken_utterance(self, bench):
        broken = Utterance(
            audio=AudioSegment(
                frames=np.zeros((0, bench.model.embed_dim), dtype=np.float32),
                frame_duration_s=0.02,
                utterance_id="broken",
            ),
            transcript=(2,),
        )
        return [bench.test[0], broken, bench.test[1]]

    def test_abort_policy_names_utterance(self, suite):
        bench, sentence, token = suite
        cfg = config_for(bench, mode="baseline", on_error="abort")
        with pytest.raises(DecodeFailure, match="broken"):
            run_batch(bench.model, self._with_broken_utterance(bench), sentence, token, cfg)

    def test_skip_policy_reports_and_preserves_order(self, suite):
        bench, sentence, token = suite
        cfg = config_for(bench, mode="baseline", on_error="skip")
        failures = []
        results = run_batch(
            bench.model, self._with_broken_utterance(bench), sentence, token, cfg,
            failures=failures,
        )
        assert [r.utterance_id for r in results] == [
            bench.test[0].utterance_id, bench.test[1].utterance_id
        ]
        assert failures[0][0] == "broken"

    def test_wall_time_monotone_in_prompts(self, suite):
        # Mean decode wall time must grow with the prompt budget (real clock).
        bench, sentence, token = suite
        wall0 = [
            r.wall_time_s
            for r in run_batch(
                bench.model, bench.test, sentence, token,
                config_for(bench, mode="icl_only", n_max=0),
            )
        ]
        wall10 = [
            r.wall_time_s
            for r in run_batch(
                bench.model, bench.test, sentence, token,
                config_for(bench, mode="icl_only", n_max=10),
            )
        ]
        assert all(w > 0 for w in wall0 + wall10)
        assert np.mean(wall10) > np.mean(wall0)

    def test_deterministic_timing_reproducible(self, suite):
        bench, sentence, token = suite
        cfg = config_for(bench, mode="icl_only", timing="deterministic")
        a = run_batch(bench.model, bench.test, sentence, token, cfg)
        b = run_batch(bench.model, bench.test, sentence, token, cfg)
        assert [r.wall_time_s for r in a] == [r.wall_time_s for r in b]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DecodeConfig(mode="beam")
        with pytest.raises(ValueError):
            DecodeConfig(max_decode_len=0)
        with pytest.raises(ValueError):
            DecodeConfig(timing="cpu")
