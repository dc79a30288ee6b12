import numpy as np
import pytest

from phydeformer import synthetic
from phydeformer.cli import ConfigError, RunConfig, apply_settings, main, read_config_file
from phydeformer.grading import GradingMap
from phydeformer.mesh import load_obj, save_obj


@pytest.fixture
def pair(tmp_path):
    src = synthetic.skirt(12, 5)
    tgt = synthetic.wrinkle_target(src, scale=1.15)
    s, t = tmp_path / "s.obj", tmp_path / "t.obj"
    save_obj(src, s)
    save_obj(tgt, t)
    return s, t


def obj_records(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_self_registration(tmp_path, pair, capsys):
    s, _ = pair
    out = tmp_path / "o.obj"
    code, stdout, _ = run(["register", "--source", s, "--target", s, "--out", out, "--iterations", 50], capsys)
    assert code == 0
    cd, ns = (float(v) for v in stdout.split())
    assert cd < 1e-3 and ns < 1e-3
    assert out.exists() and (tmp_path / "o.csv").exists() and (tmp_path / "o.metrics.txt").exists()
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert "iter,total,rec,contour,normal,strain,bending,collision,time_ms" in lines
    assert any(line.startswith("# loss.lambda_n = 0.01") for line in lines)
    assert lines[-1].startswith("# metrics")
    assert len(load_obj(out).faces) == 120


def test_missing_target_is_input_error(tmp_path, pair, capsys):
    s, _ = pair
    missing = tmp_path / "nope.obj"
    code, _, err = run(["register", "--source", s, "--target", missing, "--out", tmp_path / "o.obj"], capsys)
    assert code == 1
    assert str(missing) in err


def test_quad_obj_is_input_error(tmp_path, pair, capsys):
    s, _ = pair
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    code, _, err = run(["register", "--source", s, "--target", bad, "--out", tmp_path / "o.obj"], capsys)
    assert code == 1 and "bad.obj:5" in err


def test_numerical_failure_exit_code(tmp_path, pair, capsys, monkeypatch):
    from phydeformer import cli, optim

    def boom(*a, **k):
        raise optim.NumericalFailure("non-finite loss at iteration 0", 0)

    monkeypatch.setattr(cli, "register", boom)
    s, t = pair
    code, _, err = run(["register", "--source", s, "--target", t, "--out", tmp_path / "o.obj"], capsys)
    assert code == 2 and "non-finite" in err


def test_no_grading_is_worse_on_scale_mismatch(tmp_path, pair, capsys):
    s, t = pair
    common = ["--source", s, "--target", t, "--iterations", 150]
    _, graded, _ = run(["register", *common, "--out", tmp_path / "a.obj"], capsys)
    _, ungraded, _ = run(["register", *common, "--out", tmp_path / "b.obj", "--no-grading"], capsys)
    assert float(ungraded.split()[0]) > float(graded.split()[0])


def test_metrics_identical(pair, capsys):
    s, _ = pair
    code, out, _ = run(["metrics", "--a", s, "--b", s], capsys)
    assert code == 0 and out == "0.000000 0.000000\n"


def test_perturb_zero_sigma_is_identity(tmp_path, pair, capsys):
    s, _ = pair
    out = tmp_path / "p.obj"
    assert run(["perturb", "--source", s, "--sigma", 0, "--seed", 7, "--out", out], capsys)[0] == 0
    assert obj_records(out) == obj_records(s)
    noisy = tmp_path / "q.obj"
    run(["perturb", "--source", s, "--sigma", 0.01, "--seed", 7, "--out", noisy], capsys)
    again = tmp_path / "r.obj"
    run(["perturb", "--source", s, "--sigma", 0.01, "--seed", 7, "--out", again], capsys)
    assert noisy.read_text() == again.read_text() != s.read_text()


def test_perturb_units(tmp_path, pair, capsys):
    s, _ = pair
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    run(["perturb", "--source", s, "--sigma", 0.5, "--units", "cm", "--seed", 1, "--out", a], capsys)
    run(["perturb", "--source", s, "--sigma", 0.005, "--seed", 1, "--out", b], capsys)
    # with --units cm both the file and sigma are centimetres, so the written noise is 100x larger
    da = load_obj(a).positions - load_obj(s).positions
    db = load_obj(b).positions - load_obj(s).positions
    np.testing.assert_allclose(da, 100 * db, rtol=1e-6, atol=1e-6)


def test_grade_identity(tmp_path, pair, capsys):
    s, _ = pair
    out = tmp_path / "g.obj"
    assert run(["grade", "--source", s, "--target", s, "--out", out], capsys)[0] == 0
    np.testing.assert_allclose(load_obj(out).positions, load_obj(s).positions, atol=1e-9)
    g = GradingMap.from_text((tmp_path / "g.grading.txt").read_text())
    assert all(k[1] == pytest.approx(1.0) and k[2] == pytest.approx(1.0) for k in g.knots)


def test_grade_custom_map_path_and_axis(tmp_path, pair, capsys):
    s, t = pair
    gm = tmp_path / "map.txt"
    code, _, _ = run(["grade", "--source", s, "--target", t, "--out", tmp_path / "g.obj", "--grading-out", gm,
                      "--axis", "0,0,1"], capsys)
    assert code == 0
    np.testing.assert_allclose(GradingMap.from_text(gm.read_text()).axis.direction, [0, 0, 1])


def test_ablate_single_variant(tmp_path, pair, capsys):
    s, t = pair
    code, out, _ = run(["ablate", "--source", s, "--target", t, "--iterations", 20, "--only", "no-bending"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 2 and lines[1].startswith("no-bending")


def test_ablate_full_row_matches_register(tmp_path, pair, capsys):
    s, t = pair
    common = ["--source", s, "--target", t, "--iterations", 30, "--seed", 2]
    _, table, _ = run(["ablate", *common, "--only", "full"], capsys)
    _, reg, _ = run(["register", *common, "--out", tmp_path / "o.obj"], capsys)
    row = table.strip().splitlines()[1].split()
    assert ["%.6f" % float(row[1]), "%.6f" % float(row[2])] == reg.split()


def test_ablate_unknown_variant(pair, capsys):
    s, t = pair
    code, _, err = run(["ablate", "--source", s, "--target", t, "--only", "no-magic"], capsys)
    assert code == 1 and "no-magic" in err


def test_config_file_and_flags(tmp_path, pair, capsys):
    s, t = pair
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run settings\nlambda_n = 0.02\niterations = 500\nbending_mode = absolute\naxis = 0, 0, 1\n")
    out = tmp_path / "o.obj"
    code, _, _ = run(["register", "--config", cfg, "--source", s, "--target", t, "--out", out,
                      "--iterations", 5], capsys)
    assert code == 0
    text = (tmp_path / "o.csv").read_text()
    assert "# loss.lambda_n = 0.02" in text
    assert "# optim.iterations = 5" in text  # flag wins
    assert "# loss.bending_mode = absolute" in text
    assert "# axis = (0.0, 0.0, 1.0)" in text


def test_unknown_config_key_is_error(tmp_path, pair, capsys):
    s, t = pair
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lamda_n = 0.02\n")
    code, _, err = run(["register", "--config", cfg, "--source", s, "--target", t, "--out", tmp_path / "o.obj"],
                       capsys)
    assert code == 1 and "lamda_n" in err


def test_defaults_match_documented_settings():
    cfg = apply_settings(RunConfig(), {})
    assert (cfg.loss.lambda_n, cfg.loss.lambda_s, cfg.loss.lambda_b, cfg.loss.lambda_c) == (0.01, 1.0, 0.1, 0.01)
    assert (cfg.loss.lame_lambda, cfg.loss.lame_mu, cfg.loss.kappa) == (16.3, 13.5, 4e-5)
    assert cfg.loss.strain_start_iter == 500
    assert (cfg.optim.learning_rate, cfg.optim.iterations) == (0.002, 1500)


def test_config_parsing_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_config_file(p)
    with pytest.raises(ConfigError):
        apply_settings(RunConfig(), {"units": "inch"})
    with pytest.raises(ConfigError):
        apply_settings(RunConfig(), {"lambda_n": "-1"})
    with pytest.raises(ConfigError):
        apply_settings(RunConfig(), {"grading": "maybe"})


def test_register_byte_reproducible(tmp_path, pair, capsys):
    s, t = pair
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.obj"
        run(["register", "--source", s, "--target", t, "--out", out, "--iterations", 40, "--seed", 5], capsys)
        outs.append((out.read_bytes(), (tmp_path / f"{name}.csv").read_bytes()))
    assert outs[0] == outs[1]
