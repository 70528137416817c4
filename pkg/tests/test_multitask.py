import numpy as np
import pytest

from mtbert.data import make_loaders, next_multitask_batch
from mtbert.errors import ConfigError
from mtbert.heads import HeadConfig
from mtbert.multitask import TRAIN_MODES, MultitaskModel, TrainSettings, train_multitask


@pytest.fixture
def model(tiny_vocab, tiny_enc_cfg, tiny_head_cfg):
    return MultitaskModel.create(tiny_vocab, tiny_enc_cfg, tiny_head_cfg, seed=0)


def batch_losses(model, corpus):
    batch = next_multitask_batch(make_loaders({t: corpus[t]["train"] for t in corpus}, 40, seed=0))
    b = model.losses(batch, training=False)
    return [b.L_SST.item(), b.L_P.item(), b.L_STS.item()]


class TestModel:
    def test_prediction_shapes(self, model, tiny_corpus):
        dev = tiny_corpus
        assert model.predict("sst", dev["sst"]["dev"]).shape == (8,)
        p = model.predict("para", dev["para"]["dev"])
        assert set(np.unique(p)) <= {0.0, 1.0}
        s = model.predict("sts", dev["sts"]["dev"])
        assert s.min() >= 0 and s.max() <= 5

    def test_same_seed_same_params(self, tiny_vocab, tiny_enc_cfg, tiny_head_cfg):
        a = MultitaskModel.create(tiny_vocab, tiny_enc_cfg, tiny_head_cfg, seed=4)
        b = MultitaskModel.create(tiny_vocab, tiny_enc_cfg, tiny_head_cfg, seed=4)
        assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)

    def test_undefined_pearson_is_none(self, model, tiny_corpus):
        flat = [e for e in tiny_corpus["sts"]["dev"]][:1]
        assert model.evaluate("sts", flat) == ("pearson", None)

    def test_triplet_sts_mode(self, tiny_vocab, tiny_enc_cfg, tiny_corpus):
        cfg = HeadConfig(hidden_dim=8, shared_dim=8, dense_dim=8, dropout_p=0.0, sts_mode="triplet")
        m = MultitaskModel.create(tiny_vocab, tiny_enc_cfg, cfg, seed=0)
        assert m.predict("sts", tiny_corpus["sts"]["dev"]).shape == (8,)


class TestTraining:
    @pytest.mark.parametrize("mode", TRAIN_MODES)
    def test_modes_reduce_training_loss(self, mode, tiny_vocab, tiny_enc_cfg, tiny_corpus):
        head = HeadConfig(hidden_dim=8, shared_dim=8, dense_dim=8, dropout_p=0.0, baseline_mode=mode == "baseline")
        m = MultitaskModel.create(tiny_vocab, tiny_enc_cfg, head, seed=0)
        before = batch_losses(m, tiny_corpus)
        hist = train_multitask(m, tiny_corpus, TrainSettings(mode, epochs=8, batch_size=8, lr=1e-2))
        after = batch_losses(m, tiny_corpus)
        assert sum(after) < sum(before)
        assert len(hist) == 8 * 6

    def test_deterministic(self, tiny_vocab, tiny_enc_cfg, tiny_head_cfg, tiny_corpus):
        runs = []
        for _ in range(2):
            m = MultitaskModel.create(tiny_vocab, tiny_enc_cfg, tiny_head_cfg, seed=1)
            runs.append(train_multitask(m, tiny_corpus, TrainSettings(epochs=2, batch_size=8, seed=1)))
        assert runs[0] == runs[1]

    def test_early_stop(self, model, tiny_corpus):
        hist = train_multitask(model, tiny_corpus, TrainSettings(epochs=5, batch_size=8), on_epoch=lambda e, r: e == 2)
        assert max(r["epoch"] for r in hist) == 2

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            TrainSettings(mode="cagrad")
