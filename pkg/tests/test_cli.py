import json

from pegnn.cli import main


def test_cli_end_to_end(tmp_path, capsys):
    g = str(tmp_path / "g.txt")
    g2 = str(tmp_path / "g2.txt")
    assert main(["sbm", "--blocks", "30,30", "--p-in", "0.3", "--p-out", "0.05",
                 "--feature-mode", "none", "--out", g]) == 0
    assert main(["sbm", "--blocks", "30,30", "--seed", "2", "--feature-mode", "none",
                 "--out", g2]) == 0
    diag = tmp_path / "diag"
    assert main(["diagnose", "--graph", g, "--p-max", "5", "--out-dir", str(diag)]) == 0
    rows = (diag / "eigengaps.csv").read_text().splitlines()
    assert rows[0] == "p,lambda_p,gap_p,rho_p" and len(rows) == 6
    assert (diag / "eigengaps.png").stat().st_size > 0

    z = tmp_path / "z.csv"
    assert main(["pe", "factorize", "--graph", g, "--dim", "3", "--iters", "20",
                 "--out", str(z)]) == 0
    assert len(z.read_text().splitlines()) == 60

    run = tmp_path / "run"
    assert main(["train", "--graph", g, "--dim", "4", "--epochs", "3", "--folds", "10",
                 "--out-dir", str(run)]) == 0
    for name in ("model.pegw", "model_config.json", "history.csv", "metrics.json",
                 "history.png", "edge_weights.csv", "edge_weights.png"):
        assert (run / name).exists(), name
    metrics = json.loads((run / "metrics.json").read_text())
    test_auc = metrics["metrics"]["test_auc"]["mean"]

    assert main(["eval", "--run-dir", str(run)]) == 0
    again = json.loads((run / "eval_metrics.json").read_text())
    assert again["metrics"]["test_auc"]["mean"] == test_auc
    assert main(["perturb-eval", "--run-dir", str(run), "--mode", "add"]) == 0
    assert len((run / "perturb_add.csv").read_text().splitlines()) == 5
    assert main(["domain-shift", "--run-dir", str(run), "--graph", g2]) == 0


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\noops\n")
    assert main(["diagnose", "--graph", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err
