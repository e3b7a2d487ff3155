import json

import pytest

from noisepair.cli import main
from noisepair.store import EventStore
from noisepair.streams import read_labels, read_prediction_series, read_verdicts


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Full CLI round trip on a small scenario."""
    root = tmp_path_factory.mktemp("cli")
    scenario = {
        "n_events": 12,
        "event_spacing_s": 30.0,
        "source_snr_db": 20.0,
        "receiver_snr_db": 12.0,
        "propagation_delay_s": 0.2,
        "seed": 123,
    }
    cfg_path = root / "scenario.json"
    cfg_path.write_text(json.dumps(scenario))
    data = root / "data"
    assert main(["synth", "--config", str(cfg_path), "--out", str(data)]) == 0

    models = root / "models"
    models.mkdir()
    for role, stream, labels, order in (
        ("source", "source.jsonl", "labels_source.jsonl", 3),
        ("receiver", "receiver.jsonl", "labels_receiver.jsonl", 0),
    ):
        assert main([
            "train",
            "--stream", str(data / stream),
            "--labels", str(data / labels),
            "--order", str(order),
            "--epochs", "25",
            "--learning-rate", "0.1",
            "--batch-size", "32",
            "--out", str(models / f"{role}_order{order}.json"),
        ]) == 0
    return root, data, models


class TestCliFlow:
    def test_synth_outputs(self, workspace):
        _, data, _ = workspace
        for name in ("source.jsonl", "receiver.jsonl", "truth.jsonl",
                     "labels_source.jsonl", "labels_receiver.jsonl"):
            assert (data / name).exists()
        truth = read_labels(data / "truth.jsonl")
        assert len(truth) == 12

    def test_label_proposes_spans(self, workspace):
        root, data, _ = workspace
        out = root / "proposed.jsonl"
        assert main(["label", "--stream", str(data / "source.jsonl"),
                     "--out", str(out)]) == 0
        labels = read_labels(out)
        assert 6 <= len(labels) <= 30  # events plus possible fragmentation

    def test_predict_fuse_eval(self, workspace, capsys):
        root, data, models = workspace
        preds_src = root / "preds_src.jsonl"
        preds_rcv = root / "preds_rcv.jsonl"
        assert main(["predict", "--stream", str(data / "source.jsonl"),
                     "--model", str(models / "source_order3.json"),
                     "--out", str(preds_src)]) == 0
        assert main(["predict", "--stream", str(data / "receiver.jsonl"),
                     "--model", str(models / "receiver_order0.json"),
                     "--out", str(preds_rcv)]) == 0
        assert len(read_prediction_series(preds_src)) > 0

        verdicts_path = root / "verdicts.jsonl"
        assert main(["fuse", "--src", str(preds_src), "--rcv", str(preds_rcv),
                     "--bundle", "one", "--out", str(verdicts_path)]) == 0
        verdicts = read_verdicts(verdicts_path)
        assert len(verdicts) >= 20

        csv_path = root / "pr.csv"
        assert main(["eval", "--verdicts", str(verdicts_path),
                     "--truth", str(data / "truth.jsonl"),
                     "--out-csv", str(csv_path)]) == 0
        out = capsys.readouterr().out
        assert "AP" in out and "optimal F1" in out
        assert csv_path.exists()

    def test_pipeline_persists_candidates(self, workspace):
        root, data, models = workspace
        store_path = root / "store.jsonl"
        assert main([
            "pipeline",
            "--src", str(data / "source.jsonl"),
            "--rcv", str(data / "receiver.jsonl"),
            "--models", str(models),
            "--bundle", "one",
            "--store", str(store_path),
        ]) == 0
        store = EventStore(store_path)
        assert store.summary()["pending"] >= 5

    def test_store_env_var_honored(self, workspace, monkeypatch):
        root, data, models = workspace
        store_path = root / "env_store.jsonl"
        monkeypatch.setenv("NOISEPAIR_STORE", str(store_path))
        assert main([
            "pipeline",
            "--src", str(data / "source.jsonl"),
            "--rcv", str(data / "receiver.jsonl"),
            "--models", str(models),
        ]) == 0
        assert store_path.exists()

    def test_missing_store_is_an_error(self, workspace, monkeypatch):
        _, data, models = workspace
        monkeypatch.delenv("NOISEPAIR_STORE", raising=False)
        with pytest.raises(SystemExit, match="no store path"):
            main(["pipeline", "--src", str(data / "source.jsonl"),
                  "--rcv", str(data / "receiver.jsonl"),
                  "--models", str(models)])
