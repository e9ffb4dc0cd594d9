import numpy as np
import pytest

from ktlab.baselines import (
    BktParams,
    BktTracer,
    DktConfig,
    bkt_fit_em,
    bkt_predict_and_update,
    dkt_loss_and_grads,
    dkt_predict,
    dkt_train,
    encode_input_index,
    fit_bkt_sequences,
    fit_dkt_tracer,
    fit_irt_tracer,
    fit_pfa_tracer,
    init_dkt_params,
    irt_fit,
    irt_predict,
    load_bkt_json,
    pfa_fit,
    pfa_predict,
    prior_counts,
    save_bkt_json,
)
from ktlab.baselines.pfa import PfaKcParams
from ktlab.data import Exercise, Interaction, StudentHistory, build_dataset
from ktlab.errors import MissingKcError, ParameterError, UnknownKcError
from ktlab.eval import GroundTruthTracer, auc, default_world, score_dataset, synth_generate
from ktlab.eval.synth import SyntheticWorld, generate_irt_dataset


def history(pairs, sid="s1"):
    its = tuple(
        Interaction(sid, i, f"{kc}-e{i}", kc, kc, c) for i, (kc, c) in enumerate(pairs)
    )
    return StudentHistory(sid, its)


class TestBktUpdate:
    def test_predicted_probability(self):
        params = BktParams(p_l0=0.5, p_t=0.3, p_g=0.2, p_s=0.1)
        p_correct, _ = bkt_predict_and_update(params, 0.5, 1)
        assert p_correct == pytest.approx(0.55, abs=1e-12)

    def test_bayes_update_on_correct(self):
        params = BktParams(p_l0=0.5, p_t=0.3, p_g=0.2, p_s=0.1)
        _, updated = bkt_predict_and_update(params, 0.5, 1)
        posterior = 0.45 / 0.55
        assert updated == pytest.approx(posterior + (1 - posterior) * 0.3, abs=1e-12)
        assert updated == pytest.approx(0.8727272727272727, abs=1e-10)

    def test_noiseless_mastery(self):
        params = BktParams(p_l0=1.0, p_t=0.0, p_g=0.0, p_s=0.0)
        p_correct, updated = bkt_predict_and_update(params, 1.0, 1)
        assert p_correct == 1.0 and updated == 1.0

    def test_invalid_state(self):
        params = BktParams(0.5, 0.1, 0.2, 0.1)
        with pytest.raises(ParameterError):
            bkt_predict_and_update(params, 1.5, 1)

    def test_correct_evidence_beats_incorrect(self):
        params = BktParams(0.5, 0.1, 0.2, 0.1)
        _, up = bkt_predict_and_update(params, 0.4, 1)
        _, down = bkt_predict_and_update(params, 0.4, 0)
        assert up > down


class TestBktEm:
    def simulate(self, truth, n, steps, seed):
        rng = np.random.default_rng(seed)
        seqs = []
        for _ in range(n):
            state = rng.random() < truth.p_l0
            obs = []
            for _ in range(steps):
                p = (1 - truth.p_s) if state else truth.p_g
                obs.append(int(rng.random() < p))
                if not state and rng.random() < truth.p_t:
                    state = True
            seqs.append(np.array(obs))
        return seqs

    def test_parameter_recovery(self):
        truth = BktParams(0.3, 0.2, 0.15, 0.08)
        seqs = self.simulate(truth, 2000, 15, seed=42)
        fitted, _ = fit_bkt_sequences(seqs, max_iters=200, tol=1e-7)
        for got, want in zip(fitted.as_tuple(), truth.as_tuple()):
            assert abs(got - want) < 0.05

    def test_loglik_non_decreasing(self):
        truth = BktParams(0.4, 0.15, 0.25, 0.12)
        seqs = self.simulate(truth, 200, 10, seed=3)
        _, ll = fit_bkt_sequences(seqs, max_iters=100, tol=0.0)
        diffs = np.diff(ll)
        assert np.all(diffs >= -1e-9)

    def test_all_correct_drives_prior_up(self):
        seqs = [np.ones(8, dtype=np.int64) for _ in range(50)]
        fitted, ll = fit_bkt_sequences(seqs)
        assert fitted.p_l0 > 0.9
        assert np.isfinite(ll).all()

    def test_missing_kc(self):
        ds = build_dataset([Interaction("s1", 0, "e0", "k1", "k1", 1)])
        with pytest.raises(MissingKcError):
            bkt_fit_em(ds, "nope")

    def test_fitted_params_respect_clamps(self):
        seqs = [np.zeros(6, dtype=np.int64) for _ in range(30)]
        fitted, _ = fit_bkt_sequences(seqs)
        assert 0.001 <= fitted.p_l0 <= 0.999
        assert fitted.p_g < 0.5 and fitted.p_s < 0.5
        assert 1 - fitted.p_s > fitted.p_g


class TestBktTracer:
    def test_predict_uses_only_target_kc(self):
        tracer = BktTracer({"a": BktParams(0.5, 0.2, 0.2, 0.1)})
        h_other = history([("b", 1), ("b", 1)])
        h_empty = history([])
        target = Exercise("e", "a", "a")
        assert tracer.predict(h_other, target) == tracer.predict(h_empty, target)

    def test_unseen_kc_fallback(self):
        tracer = BktTracer({})
        assert tracer.predict(history([]), Exercise("e", "zz", "zz")) == 0.5

    def test_json_round_trip(self, tmp_path):
        tracer = BktTracer({"a": BktParams(0.4, 0.2, 0.25, 0.05)})
        path = tmp_path / "bkt.json"
        save_bkt_json(tracer, path)
        loaded = load_bkt_json(path)
        assert loaded.params_by_kc == tracer.params_by_kc


class TestIrt:
    def test_symmetry(self):
        assert irt_predict(1.3, 1.3) == pytest.approx(0.5, abs=1e-12)

    def test_hand_sigmoid(self):
        assert irt_predict(1.0, 0.0) == pytest.approx(0.7310585786300049, abs=1e-10)

    def test_difficulty_ranking_recovery(self):
        from scipy.stats import spearmanr

        ds, truth = generate_irt_dataset(n_students=500, n_exercises=50, seed=11)
        params = irt_fit(ds, lam=0.05)
        exercises = sorted(truth)
        rho = spearmanr(
            [truth[e] for e in exercises], [params.b[e] for e in exercises]
        ).statistic
        assert rho > 0.9

    def test_unseen_student_gets_zero_ability(self):
        ds, _ = generate_irt_dataset(n_students=20, n_exercises=10, seed=0)
        tracer = fit_irt_tracer(ds)
        p = tracer.predict(StudentHistory("brand-new", ()), Exercise("e000", "kc00", "skill 0"))
        assert p == pytest.approx(irt_predict(0.0, tracer.params.b["e000"]), abs=1e-12)

    def test_order_invariance(self):
        ds, _ = generate_irt_dataset(n_students=20, n_exercises=10, seed=0)
        tracer = fit_irt_tracer(ds)
        target = Exercise("e001", "kc01", "skill 1")
        h1 = history([("a", 1), ("b", 0)], sid="s0001")
        h2 = history([("b", 0), ("a", 1)], sid="s0001")
        assert tracer.predict(h1, target) == tracer.predict(h2, target)


class TestPfa:
    def test_hand_logit(self):
        params = PfaKcParams(beta=0.0, gamma=0.2, rho=-0.1)
        assert pfa_predict(params, 3, 1) == pytest.approx(0.6224593312018546, abs=1e-10)

    def test_no_history_gives_half_when_beta_zero(self):
        assert pfa_predict(PfaKcParams(0.0, 0.2, -0.1), 0, 0) == 0.5

    def test_prior_counts_strictly_before(self):
        h = history([("a", 1), ("a", 0), ("a", 1)])
        assert prior_counts(h, "a") == (2, 1)
        assert prior_counts(h, "a", before_step=1) == (1, 0)

    def test_sign_recovery(self):
        rng = np.random.default_rng(5)
        its = []
        beta, gamma, rho = -0.2, 0.35, -0.4
        for s in range(300):
            cnt = {"s": 0, "f": 0}
            for step in range(10):
                logit = beta + gamma * cnt["s"] + rho * cnt["f"]
                p = 1 / (1 + np.exp(-logit))
                y = int(rng.random() < p)
                its.append(Interaction(f"s{s}", step, f"k-e{step}", "k", "skill", y))
                cnt["s" if y else "f"] += 1
        params = pfa_fit(build_dataset(its), lam=0.1)
        assert params.by_kc["k"].gamma > 0
        assert params.by_kc["k"].rho < 0

    def test_unseen_kc_fallback(self):
        ds = build_dataset([Interaction("s", 0, "k-e0", "k", "skill", 1)] * 1)
        tracer = fit_pfa_tracer(ds)
        assert tracer.predict(history([]), Exercise("e", "zz", "zz")) == 0.5

    def test_order_invariance(self):
        params = PfaKcParams(0.1, 0.3, -0.2)
        h1 = history([("k", 1), ("k", 0), ("j", 1)])
        h2 = history([("k", 0), ("j", 1), ("k", 1)])
        s1, f1 = prior_counts(h1, "k")
        s2, f2 = prior_counts(h2, "k")
        assert pfa_predict(params, s1, f1) == pfa_predict(params, s2, f2)


class TestDkt:
    def test_input_encoding(self):
        assert encode_input_index(kc_index=1, correct=0, n_kcs=3) == 1
        assert encode_input_index(kc_index=1, correct=1, n_kcs=3) == 4

    def test_input_dimension_is_2k(self):
        params = init_dkt_params(("a", "b", "c"), hidden_size=5, seed=0)
        assert params.tensors["w_x"].shape[1] == 6

    def test_gradcheck(self):
        params = init_dkt_params(("a", "b", "c"), hidden_size=5, seed=3)
        rng = np.random.default_rng(0)
        inputs = rng.integers(0, 6, size=(4, 6))
        tkc = rng.integers(0, 3, size=(4, 6))
        ty = rng.integers(0, 2, size=(4, 6)).astype(float)
        mask = rng.random((4, 6)) < 0.8
        _, grads = dkt_loss_and_grads(params, inputs, tkc, ty, mask)
        num, den = [], []
        for name, w in params.tensors.items():
            flat = w.reshape(-1)
            for i in rng.choice(flat.size, size=min(8, flat.size), replace=False):
                orig = flat[i]
                h = 1e-5
                flat[i] = orig + h
                lp, _ = dkt_loss_and_grads(params, inputs, tkc, ty, mask)
                flat[i] = orig - h
                lm, _ = dkt_loss_and_grads(params, inputs, tkc, ty, mask)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                num.append(grads[name].reshape(-1)[i] - fd)
                den.append(fd)
        assert np.linalg.norm(num) / np.linalg.norm(den) < 1e-4

    def test_causality(self):
        params = init_dkt_params(("a", "b"), hidden_size=4, seed=1)
        h1 = history([("a", 1), ("b", 0), ("a", 1), ("b", 1)])
        h2 = history([("a", 1), ("b", 0), ("b", 1), ("a", 0)])
        p1 = dkt_predict(params, h1.prefix(2), "a")
        p2 = dkt_predict(params, h2.prefix(2), "a")
        assert p1 == p2

    def test_unknown_kc(self):
        params = init_dkt_params(("a",), hidden_size=4, seed=0)
        with pytest.raises(UnknownKcError):
            dkt_predict(params, history([("a", 1)]), "zz")

    def test_overfits_toy_set(self):
        world = default_world(n_kcs=3, seed=2)
        ds = synth_generate(world, n_students=5, steps_per_student=10, seed=4)
        config = DktConfig(hidden_size=32, epochs=300, learning_rate=1e-2, seed=0)
        tracer = fit_dkt_tracer(ds, config)
        records = score_dataset(tracer, ds.with_provenance(role="train"))
        assert auc(records) >= 0.95

    def test_deterministic(self):
        world = default_world(n_kcs=3, seed=2)
        ds = synth_generate(world, n_students=5, steps_per_student=8, seed=4)
        a, curve_a = dkt_train(ds, DktConfig(hidden_size=8, epochs=3, seed=9))
        b, curve_b = dkt_train(ds, DktConfig(hidden_size=8, epochs=3, seed=9))
        assert curve_a == curve_b
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)


class TestTracerContractOnSynthetic:
    def test_all_tracers_in_unit_interval(self):
        world = default_world(n_kcs=4, seed=6)
        ds = synth_generate(world, n_students=30, steps_per_student=8, seed=13)
        tracers = [
            fit_irt_tracer(ds),
            fit_pfa_tracer(ds),
            fit_dkt_tracer(ds, DktConfig(hidden_size=8, epochs=5, seed=0)),
            GroundTruthTracer(world),
        ]
        h = ds.histories[ds.student_ids()[0]]
        target = h.interactions[-1].exercise()
        for tracer in tracers:
            p = tracer.predict(h.prefix(4), target)
            assert 0.0 <= p <= 1.0
            assert p == tracer.predict(h.prefix(4), target)
