import numpy as np
import pytest

from posergcn import diffmath as dm
from posergcn.config import SEED_ENV, Config, ConfigError, load_config, parse_config
from posergcn.evaldata import synth_tracks
from posergcn.model import PoseReIDModel, load_model, read_checkpoint, save_checkpoint
from posergcn.posegraph import track_from_record


def test_parse_config_with_comments():
    cfg = parse_config("""
        # tiny run
        n = 8
        cell = lgcn   # gated
        lambda_mode = fixed:0.25
        lr = 1e-2
        normalize = true
    """)
    assert (cfg.n, cfg.cell, cfg.fixed_lambda, cfg.lr, cfg.normalize) == (8, "lgcn", 0.25, 0.01, True)
    assert cfg.margin == 0.3 and cfg.epochs == 400 and cfg.P == 8 and cfg.K == 4 and cfg.T == 10


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config("n = 4\nlearning_rate = 3\n")
    assert exc.value.key == "learning_rate"


@pytest.mark.parametrize("text,key", [("n = zero", "n"), ("cell = gru", "cell"), ("pooling = max", "pooling"),
                                      ("lambda_mode = fixed:2", "lambda_mode"), ("lambda_mode = auto", "lambda_mode"),
                                      ("margin = -1", "margin"), ("cell = gcn_rnn\nlayers = 2", "layers")])
def test_invalid_values(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_text_roundtrip_and_hash():
    cfg = Config(n=12, pooling="tam", lambda_mode="fixed:1.0")
    again = parse_config(cfg.to_text())
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.replace(seed=1).hash() != cfg.hash()


def test_seed_env_override(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 3\n")
    assert load_config(path, env={}).seed == 3
    assert load_config(path, env={SEED_ENV: "11"}).seed == 11
    with pytest.raises(ConfigError):
        load_config(path, env={SEED_ENV: "x"})


@pytest.fixture(scope="module")
def tracks():
    return [track_from_record(r) for r in synth_tracks(4, 2, 6, 0.2, 0.0, seed=0, d=8)]


@pytest.mark.parametrize("cell,pooling,agg", [("rgcn", "dam", "ap"), ("lgcn", "tam", "aa"),
                                              ("gcn_rnn", "nam", "ra"), ("gcn_lstm", "mean", "ap")])
def test_feature_shapes(tracks, cell, pooling, agg):
    cfg = Config(n=5, d=8, T=4, cell=cell, pooling=pooling, aggregator=agg)
    model = PoseReIDModel(cfg, [0, 1, 2, 3])
    fa, fp = model.features(tracks[:3])
    assert fa.shape == (3, 8) and fp.shape == (3, 10)
    assert model.embed(tracks, "fused").shape == (8, 18)
    assert model.embed(tracks, "pose").shape == (8, 10)
    with pytest.raises(ValueError):
        model.embed(tracks, "both")


def test_clip_length_follows_config(tracks):
    model = PoseReIDModel(Config(n=3, d=8, T=2), [0, 1, 2, 3])
    assert len(model.hidden_states(tracks[0])) == 2


def test_appearance_dimension_mismatch_is_named(tracks):
    model = PoseReIDModel(Config(n=3, d=16), [0, 1, 2, 3])
    with pytest.raises(dm.DimensionError, match="appearance dimension 8"):
        model.embed(tracks, "fused")


def test_checkpoint_roundtrip(tracks, tmp_path):
    cfg = Config(n=4, d=8, T=6, cell="lgcn", aggregator="aa", seed=5)
    model = PoseReIDModel(cfg, [0, 1, 2, 3], np.random.default_rng(5))
    path = tmp_path / "m.bin"
    save_checkpoint(path, model, {"config_hash": cfg.hash()})
    meta, values = read_checkpoint(path)
    assert meta["config_hash"] == cfg.hash()
    assert set(values) == {n for n, _ in model.named_parameters()}
    assert all(k.split(".")[0] in ("cell", "attention", "appearance", "head") for k in values)
    loaded, _ = load_model(path)
    np.testing.assert_array_equal(loaded.embed(tracks), model.embed(tracks))
    # byte-identical on re-save
    save_checkpoint(tmp_path / "again.bin", loaded, {"config_hash": cfg.hash()})
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        load_model(path)


def test_shipped_config_matches_experiment_settings():
    from pathlib import Path

    from posergcn.experiments import PREMISE_CONFIG
    path = Path(__file__).resolve().parents[1] / "configs" / "premise.cfg"
    assert load_config(path, env={}) == PREMISE_CONFIG
