import gzip
import io
import json
from pathlib import Path

import numpy as np
import pytest

from vdsws.cli import SWEEP_HEADER, run_cli
from vdsws.config import ConfigError, from_ini, preset, to_ini
from vdsws.data import IMAGE_MAGIC, LABEL_MAGIC, IdxFormatError, load_mnist_idx, write_idx
from vdsws.net import AdamState, Network
from vdsws.serialize import ModelFormatError, dumps_model, load_model, loads_model, save_model
from vdsws.trainer import init_mixture_from_weights

TOY = Path(__file__).parent / "data" / "toy"
TOY_ARGS = ["--config", str(TOY / "toy.ini"), "--data-dir", str(TOY)]


def cli(*argv):
    out = io.StringIO()
    code = run_cli(list(argv), out)
    return code, out.getvalue()


# --- IDX ----------------------------------------------------------------------

@pytest.fixture
def idx_pair(tmp_path):
    images = np.arange(3 * 2 * 2, dtype=np.uint8).reshape(3, 2, 2) * 20
    labels = np.array([7, 0, 9], dtype=np.uint8)
    write_idx(tmp_path / "img", images, IMAGE_MAGIC)
    write_idx(tmp_path / "lbl", labels, LABEL_MAGIC)
    return tmp_path / "img", tmp_path / "lbl"


def test_idx_round_trip_and_scaling(idx_pair):
    split = load_mnist_idx(*idx_pair)
    assert split.images.shape == (3, 4)
    assert split.images[0, 1] == pytest.approx(20 / 255)
    np.testing.assert_array_equal(split.labels, [7, 0, 9])


def test_idx_header_bytes(idx_pair):
    raw = idx_pair[0].read_bytes()
    assert raw[:16] == bytes.fromhex("00000803 00000003 00000002 00000002".replace(" ", ""))


def test_idx_limit(idx_pair):
    split = load_mnist_idx(*idx_pair, limit=2)
    assert len(split) == 2
    assert split.provenance["limit"] == 2


def test_idx_gzip(idx_pair, tmp_path):
    gz = tmp_path / "img.gz"
    gz.write_bytes(gzip.compress(idx_pair[0].read_bytes()))
    np.testing.assert_array_equal(load_mnist_idx(gz, idx_pair[1]).images,
                                  load_mnist_idx(*idx_pair).images)


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b[:5], "truncated"),
    (lambda b: b[:-1], "truncated payload"),
    (lambda b: b + b"\0", "trailing"),
    (lambda b: bytes.fromhex("00000801") + b[4:], "magic"),
])
def test_idx_malformed(idx_pair, mutate, msg):
    img, lbl = idx_pair
    img.write_bytes(mutate(img.read_bytes()))
    with pytest.raises(IdxFormatError, match=msg):
        load_mnist_idx(img, lbl)


def test_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "i", np.zeros((2, 2, 2)), IMAGE_MAGIC)
    write_idx(tmp_path / "l", np.zeros(3), LABEL_MAGIC)
    with pytest.raises(IdxFormatError):
        load_mnist_idx(tmp_path / "i", tmp_path / "l")


# --- model files --------------------------------------------------------------

def _model():
    net = Network.init([5, 4, 3], np.random.default_rng(0), log_sigma2=-3.0)
    prior = init_mixture_from_weights(net.flat_theta(), 5, 0.99)
    adam = AdamState(step_count=7)
    adam.first_moment["theta.0"] = np.ones((4, 5))
    adam.second_moment["theta.0"] = np.full((4, 5), 2.0)
    return net, prior, adam


def test_model_round_trip_is_byte_identical(tmp_path):
    net, prior, adam = _model()
    save_model(tmp_path / "m.bvnm", net, prior, adam)
    net2, prior2, adam2 = load_model(tmp_path / "m.bvnm")
    for a, b in zip(net.layers, net2.layers):
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.log_sigma2, b.log_sigma2)
        np.testing.assert_array_equal(a.bias, b.bias)
    np.testing.assert_array_equal(prior.log_pi, prior2.log_pi)
    assert prior2.zero_index == prior.zero_index
    assert adam2.step_count == 7
    assert dumps_model(net2, prior2, adam2) == (tmp_path / "m.bvnm").read_bytes()


def test_model_without_prior():
    net, _, _ = _model()
    net2, prior, adam = loads_model(dumps_model(net))
    assert prior is None and adam is None
    assert net2.sizes == [5, 4, 3]


def test_model_rejects_tampering():
    blob = dumps_model(*_model())
    with pytest.raises(ModelFormatError, match="version"):
        loads_model(blob[:4] + bytes([2]) + blob[5:])
    with pytest.raises(ModelFormatError):
        loads_model(b"NOPE" + blob[4:])
    with pytest.raises(ModelFormatError):
        loads_model(blob[:-8])
    with pytest.raises(ModelFormatError):
        loads_model(blob + b"\0")


# --- configuration ------------------------------------------------------------

def test_config_round_trip():
    cfg = preset("desk")
    again = from_ini(to_ini(cfg), preset("paper"))
    assert to_ini(again) == to_ini(cfg)


def test_config_overrides_and_case():
    cfg = from_ini("[schedule]\nK = 9\n[learning_rates]\nlog_pi = 0.01\n"
                   "[objective]\ngamma_alpha = 2.5\n[compression]\nmethod = vd-baseline\n")
    assert cfg.schedule.K == 9
    assert cfg.schedule.lr_map["log_pi"] == 0.01
    assert cfg.schedule.gamma_alpha == 2.5
    assert cfg.compression.method == "vd-baseline"


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[schedule]\nnope = 1\n",
    "[schedule]\nK = 4\n",
    "[compression]\nthreshold = 1.5\n",
    "[run]\nlayers = 3, x\n",
    "[learning_rates]\nweights = 0.1\n",
    "not an ini file",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        from_ini(text)


def test_vd_baseline_default_options():
    c = preset("desk").compression
    assert (c.threshold, c.k_baseline, c.offset_bits) == (0.95, 64, 5)


# --- CLI ----------------------------------------------------------------------

def test_cli_help_and_usage_codes():
    assert cli("--help")[0] == 0
    assert cli()[0] == 1
    assert cli("frobnicate")[0] == 1
    assert cli("evaluate")[0] == 1  # needs --model or --container
    assert cli("compress", "--model", "x", "--out", "y", "--offset-bits", "abc")[0] == 1


def test_cli_runtime_failure_code(tmp_path):
    code, _ = cli("evaluate", "--model", str(tmp_path / "missing.bvnm"), *TOY_ARGS)
    assert code == 2
    bad = tmp_path / "bad.bvnm"
    bad.write_bytes(b"garbage")
    assert cli("evaluate", "--model", str(bad), *TOY_ARGS)[0] == 2


def test_cli_bad_config_is_usage_error(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[schedule]\nbatch_size = -3\n")
    assert cli("config", "--config", str(p))[0] == 1


def test_cli_config_prints_ini():
    code, text = cli("config", "--preset", "paper")
    assert code == 0
    assert "[schedule]" in text and "phase1_epochs = 200" in text


def test_golden_toy_model_evaluates():
    code, text = cli("evaluate", "--model", str(TOY / "golden.bvnm"), *TOY_ARGS)
    assert code == 0
    assert text.strip() == "accuracy: 0.9500"


def test_golden_toy_model_compresses(tmp_path):
    out = tmp_path / "m.bvnc"
    rep = tmp_path / "r.json"
    code, _ = cli("compress", "--model", str(TOY / "golden.bvnm"), "--out", str(out),
                  "--report-json", str(rep), *TOY_ARGS)
    assert code == 0
    d = json.loads(rep.read_text())
    assert d["compressed_bits"] == 1241
    assert d["accuracy_after"] == pytest.approx(112 / 120)
    code, text = cli("evaluate", "--container", str(out), *TOY_ARGS)
    assert text.strip() == "accuracy: 0.9333"
    code, text = cli("report", "--container", str(out), *TOY_ARGS)
    assert code == 0 and "compression ratio:" in text


def test_cli_sws_method_needs_prior(tmp_path):
    m = tmp_path / "plain.bvnm"
    save_model(m, load_model(TOY / "golden.bvnm")[0])
    code, _ = cli("compress", "--model", str(m), "--out", str(tmp_path / "x.bvnc"), *TOY_ARGS)
    assert code == 2
    code, _ = cli("compress", "--model", str(m), "--out", str(tmp_path / "x.bvnc"),
                  "--method", "vd-baseline", *TOY_ARGS)
    assert code == 0


def test_cli_sweep_csv(tmp_path):
    code, text = cli("sweep", "--model", str(TOY / "golden.bvnm"), "--tau2", "0.001,0.01",
                     *TOY_ARGS)
    assert code == 0
    rows = text.strip().splitlines()
    assert rows[0] == ",".join(SWEEP_HEADER)
    assert len(rows) == 3
    assert [r.split(",")[0] for r in rows[1:]] == ["0.001", "0.01"]
    assert cli("sweep", "--model", str(TOY / "golden.bvnm"), "--tau2", "-1", *TOY_ARGS)[0] == 1


def test_cli_pipeline_writes_artifacts(tmp_path):
    code, _ = cli("pipeline", "--out-dir", str(tmp_path), *TOY_ARGS)
    assert code == 0
    for name in ("pretrained.bvnm", "vd.bvnm", "vdsws.bvnm", "model.bvnc", "report.json",
                 "report.txt", "config.ini"):
        assert (tmp_path / name).is_file(), name
    assert "[run]" in (tmp_path / "config.ini").read_text()


def test_idx_two_mnist_sized_images(tmp_path):
    img = np.zeros((2, 28, 28), dtype=np.uint8)
    img[1, 5, 7] = 255
    write_idx(tmp_path / "i", img, IMAGE_MAGIC)
    write_idx(tmp_path / "l", np.array([3, 4]), LABEL_MAGIC)
    split = load_mnist_idx(tmp_path / "i", tmp_path / "l")
    assert split.images.shape == (2, 784)
    assert split.images[1, 5 * 28 + 7] == 1.0


def test_idx_image_magic_on_labels_path(idx_pair):
    img, _ = idx_pair
    with pytest.raises(IdxFormatError, match="magic"):
        load_mnist_idx(img, img)


def test_model_round_trip_keeps_accuracy(tmp_path):
    from vdsws.data import load_mnist_idx as load
    from vdsws.trainer import evaluate_accuracy

    test = load(TOY / "t10k-images-idx3-ubyte", TOY / "t10k-labels-idx1-ubyte").as_tuple()
    net, prior, _ = load_model(TOY / "golden.bvnm")
    save_model(tmp_path / "copy.bvnm", net, prior)
    assert (tmp_path / "copy.bvnm").read_bytes() == (TOY / "golden.bvnm").read_bytes()
    assert evaluate_accuracy(load_model(tmp_path / "copy.bvnm")[0], test) == \
        evaluate_accuracy(net, test)


def test_cli_unknown_flag():
    assert cli("evaluate", "--model", "m", "--bogus")[0] == 1
