import json
import subprocess
import sys
import time

import pytest

from relu_extract import network
from relu_extract.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_OK, main
from relu_extract.model import RecoveredModel
from relu_extract.oracle import serve


@pytest.fixture
def net_file(tmp_path):
    p = tmp_path / "net.json"
    assert main(["generate", "--widths", "6,6,4,1", "--seed", "3", "--out", str(p)]) == EXIT_OK
    return p


def test_generate_matches_init(net_file):
    assert network.load(net_file) == network.init_he([6, 6, 4, 1], 3)


def test_extract_compare_roundtrip(tmp_path, net_file, capsys):
    est = tmp_path / "est.json"
    rep = tmp_path / "rep.json"
    code = main(["extract", "--net", str(net_file), "--widths-hint", "6,4", "--out", str(est),
                 "--report", str(rep), "--truth", str(net_file)])
    assert code == EXIT_OK
    model = RecoveredModel.load(est)
    assert model.complete and model.widths == [6, 6, 4, 1]
    report = json.loads(rep.read_text())
    assert report["alignment"]["functional_max"] < 1e-6 * report["alignment"]["functional_scale"]
    capsys.readouterr()
    assert main(["compare", "--est", str(est), "--truth", str(net_file), "--samples", "200"]) == EXIT_OK
    first = capsys.readouterr().out.splitlines()[0]
    assert json.loads(first)["log_base"] == "e"


def test_first_layer_only_writes_provenance(tmp_path, net_file):
    out = tmp_path / "l1.json"
    assert main(["extract", "--net", str(net_file), "--layers", "1", "--widths-hint", "6", "--out", str(out)]) == 0
    prov = json.loads((tmp_path / "l1.json.provenance.json").read_text())
    assert len(prov) == 6 and all(r["points"] for r in prov)


def test_remote_extract_matches_local(tmp_path, net_file):
    server = serve(network.load(net_file), "127.0.0.1:0", background=True)
    try:
        a, b = tmp_path / "remote.json", tmp_path / "local.json"
        args = ["extract", "--layers", "1", "--widths-hint", "6", "--seed", "2"]
        assert main(args + ["--oracle", server.endpoint, "--out", str(a)]) == EXIT_OK
        assert main(args + ["--net", str(net_file), "--out", str(b)]) == EXIT_OK
        assert a.read_text() == b.read_text()
    finally:
        server.shutdown()


def test_budget_exit_code(tmp_path, net_file):
    assert main(["extract", "--net", str(net_file), "--budget", "300", "--out", str(tmp_path / "e.json")]) == EXIT_BUDGET
    assert not RecoveredModel.load(tmp_path / "e.json").complete


@pytest.mark.parametrize("argv", [
    ["extract", "--net", "/nonexistent.json"],
    ["extract"],
    ["sweep", "--config", "/nonexistent.json"],
    ["compare", "--est", "/nonexistent.json", "--truth", "/nonexistent.json"],
])
def test_config_errors(argv):
    assert main(argv) == EXIT_CONFIG


def test_bad_sweep_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"widths": [4, 4, 1], "stage": "everything"}))
    assert main(["sweep", "--config", str(p)]) == EXIT_CONFIG


def test_sweep_writes_results(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"widths": [4, 4, 4, 1], "seeds": [0, 1], "sweep_layer": 1, "sweep_values": [3, 4]}))
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "res")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "csv:" in out and (tmp_path / "res" / "runs.jsonl").exists()


def test_render(tmp_path):
    assert main(["render", "--widths", "2,5,5,1", "--resolution", "64", "--out", str(tmp_path / "fig")]) == EXIT_OK
    assert (tmp_path / "fig.svg").exists() and (tmp_path / "fig.csv").exists()


def test_train(tmp_path):
    out = tmp_path / "t.json"
    assert main(["train", "--widths", "4,6,2", "--n-points", "50", "--epochs", "2", "--out", str(out)]) == EXIT_OK
    assert network.load(out).widths == (4, 6, 2)


def test_serve_subprocess(net_file):
    proc = subprocess.Popen([sys.executable, "-m", "relu_extract.cli", "serve", "--net", str(net_file)],
                            stdout=subprocess.PIPE, text=True)
    try:
        endpoint = proc.stdout.readline().strip()
        assert endpoint.startswith("tcp://127.0.0.1:")
        from relu_extract.oracle import connect
        o = connect(endpoint)
        x = [0.1 * i for i in range(6)]
        assert (o.query(x) == network.load(net_file)(x)).all()
        o.close()
    finally:
        proc.terminate()
        proc.wait(10)
