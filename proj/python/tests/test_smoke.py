import math

import pytest

import unlearn


def small_setup():
    cfg = unlearn.parse_config(
        "\n".join(
            [
                "schema_version = 1",
                "corpus.n_samples = 48",
                "corpus.n_secrets = 12",
                "corpus.vocab_size = 160",
                "corpus.heldout_samples = 16",
                "model.n_layers = 1",
                "model.n_heads = 2",
                "model.d_model = 32",
                "model.d_ff = 64",
                "model.context_len = 33",
                "model.seed = 3",
                "pretrain.lr = 3e-3",
                "pretrain.batch_size = 8",
                "pretrain.max_epochs = 400",
                "unlearn.lr = 1e-3",
                "unlearn.batch_size = 4",
                "unlearn.max_epochs = 30",
            ]
        )
    )
    corpus = unlearn.synthesize_corpus(cfg.corpus)
    heldout = unlearn.synthesize_heldout(cfg.corpus, cfg.heldout_samples)
    return cfg, corpus, heldout


@pytest.fixture(scope="module")
def trained():
    cfg, corpus, heldout = small_setup()
    seen = []
    model = unlearn.pretrain(cfg, corpus, seen.append)
    return cfg, corpus, heldout, model, seen


def test_metric_examples():
    assert unlearn.overlap_n([1, 2, 3, 4], [9, 2, 3, 4], 2) == pytest.approx(2 / 3)
    assert unlearn.overlap_n([1], [1], 2) == 0.0
    assert unlearn.bleu([5, 6, 7, 8], [5, 6, 7, 8]) == pytest.approx(1.0)
    assert unlearn.bleu([5, 6, 7], [5, 6, 7]) == 0.0
    assert unlearn.entropy([0.5, 0.5]) == pytest.approx(1.0)
    assert unlearn.entropy([1.0]) == 0.0
    with pytest.raises(unlearn.ParameterError):
        unlearn.entropy([0.7, 0.7])


def test_corpus_shape_and_render():
    cfg, corpus, heldout = small_setup()
    assert len(corpus) == 48
    assert len(corpus.forget_ids) == 12
    assert all(len(x) == 32 for x in corpus.samples)
    assert not set(s.id for s in heldout.samples) & set(s.id for s in corpus.samples)
    text = unlearn.render(corpus.vocab_size, corpus.samples[0].tokens)
    assert len(text.split()) == 32
    assert unlearn.synthesize_corpus(cfg.corpus) == corpus


def test_config_round_trip_and_errors():
    cfg = unlearn.ExperimentConfig()
    assert unlearn.parse_config(cfg.render()) == cfg
    with pytest.raises(unlearn.ConfigError, match="line 2"):
        unlearn.parse_config("schema_version = 1\nunlearn.lr = fast\n")


def test_uniform_model():
    c = unlearn.ModelConfig()
    c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size = 1, 2, 8, 16, 12, 16
    s = unlearn.init_model(c)
    assert s.n_params == c.parameter_count()
    assert unlearn.generate(s, [3, 4], 0) == []
    assert len(unlearn.generate(s, [3, 4], 5)) == 5
    assert math.isfinite(unlearn.nll(s, [1, 2, 3, 4]))


def test_pretrain_and_unlearn(trained, tmp_path):
    cfg, corpus, heldout, model, seen = trained
    assert seen and all("forget_ma" in e for e in seen)
    forget = corpus.forget_samples()
    assert sum(unlearn.ma(model, x) for x in forget) / len(forget) >= 0.95

    unlearn.save_checkpoint(model, tmp_path / "m.ckpt")
    assert unlearn.load_checkpoint(tmp_path / "m.ckpt") == model

    icu = unlearn.run_unlearning(cfg, corpus, heldout, model, mode="icu", seed=1)
    assert icu.converged
    assert icu.termination == "stop_reached"
    assert icu.epochs == icu.history[-1]["epoch"]
    last = icu.history[-1]
    assert last["el10"] < 0.0499 and last["ma"] < 0.5994
    rows = unlearn.summary_rows(icu.history)
    assert rows[0]["epoch"] == 0 and rows[0]["ma"] >= 0.95

    again = unlearn.run_unlearning(cfg, corpus, heldout, model, mode="icu", seed=1)
    assert again.history == icu.history
    assert again.model == icu.model

    with pytest.raises(unlearn.ConfigError):
        unlearn.run_unlearning(cfg, corpus, heldout, model, mode="both")
