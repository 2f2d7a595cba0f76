import csv
import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudogen.experiments.cli import main, run
from pseudogen.experiments.commands import (
    ScanWarning,
    cmd_eigenfunctions,
    cmd_extrapolate,
    cmd_lagscan,
    cmd_overdamped_limit,
    cmd_semigroup_defect,
    fit_lag_law,
    lag_threshold,
)
from pseudogen.experiments.config import ConfigError, load_config, parse_config
from pseudogen.experiments.manifest import read_manifest_hashes, sha256_file


def make_config(experiment="", grid="n_cells = 32", dynamics="beta = 1.0\ngamma = 5.0\ndt = 0.001"):
    return (f"[potential]\nname = double_well_1d\n\n[dynamics]\n{dynamics}\n\n[grid]\n{grid}\n\n"
            f"[experiment]\n{experiment}\n")


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ----------------------------------------------------------------------------
# configuration and manifest


def test_config_values_and_defaults():
    cfg = parse_config(make_config("epsilons = 0.1, 0.2\nlag = 0.3"))
    assert cfg.get_floats("experiment", "epsilons") == [0.1, 0.2]
    assert cfg.get_float("experiment", "lag") == 0.3
    assert cfg.get_int("grid", "n_cells") == 32
    assert cfg.get_float("experiment", "nu", 0.05) == 0.05
    sim = cfg.sim_config(seed=9)
    assert sim.gamma == 5.0 and sim.master_seed == 9
    assert cfg.model().name


@pytest.mark.parametrize("text,line,fragment", [
    ("[potential]\nname = double_well_1d\n[grid]\nn_cells = many\n", 4, "[grid] n_cells"),
    ("[potential]\nname = double_well_1d\n[dynamics]\nbeta = 1\nfriction = 2\n", 5, "unknown key"),
    ("[potential]\nname = double_well_1d\n[extras]\nx = 1\n", 3, "unknown section"),
    ("[dynamics]\nbeta = 1\nbeta = 2\n", 3, "duplicate key"),
    ("beta = 1\n", 1, "outside any section"),
])
def test_config_errors_name_file_and_line(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        cfg = parse_config(text, "run.ini")
        cfg.get_int("grid", "n_cells")
    msg = str(exc.value)
    assert msg.startswith(f"run.ini:{line}:")
    assert fragment in msg


def test_config_value_errors_point_at_key_line():
    cfg = parse_config(make_config("lag = -0.2\nepsilons = 0.1, x"), "c.ini")
    with pytest.raises(ConfigError, match=r"^c\.ini:13: \[experiment\] lag: must be positive"):
        cfg.get_float("experiment", "lag", positive=True)
    with pytest.raises(ConfigError, match=r"^c\.ini:14: \[experiment\] epsilons"):
        cfg.get_floats("experiment", "epsilons")
    with pytest.raises(ConfigError, match=r"\[experiment\] propagator: expected one of"):
        parse_config(make_config("propagator = magic")).get_choice("experiment", "propagator", {"ulam"}, "ulam")
    with pytest.raises(ConfigError, match=r"\[potential\] name"):
        parse_config("[potential]\nname = nowhere\n").model()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_cli_returns_two_on_config_error(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(make_config("lag = soon"))
    assert main(["eigenfunctions", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bad.ini:13:" in capsys.readouterr().err


def test_manifest_records_file_hashes(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(make_config("lag = 0.1\nsmoluchowski_lag = 0.05\nepsilons = 0.2, 0.1",
                                grid="n_cells = 32\nn_q = 17\nn_hermite = 16"))
    m = run("overdamped_limit", path, tmp_path / "o", seed=3)
    hashes = read_manifest_hashes(tmp_path / "o" / "manifest.txt")
    assert hashes == dict(m.files)
    assert hashes["overdamped_limit.csv"] == sha256_file(tmp_path / "o" / "overdamped_limit.csv")
    text = (tmp_path / "o" / "manifest.txt").read_text()
    assert "seed: 3" in text
    assert f"config_sha256: {hashlib.sha256(path.read_bytes()).hexdigest()}" in text
    assert (tmp_path / "o" / "config.snapshot").read_text() == path.read_text()


def test_cli_rejects_zero_threads(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(make_config())
    with pytest.raises(ValueError):
        run("eigenfunctions", path, tmp_path / "o", threads=0)


# ----------------------------------------------------------------------------
# lag threshold and fit


def test_lag_threshold_bisects_a_monotone_curve():
    ts = np.arange(1, 11) * 0.1
    t_nu, capped, n = lag_threshold(lambda t: t, ts, ts, 0.437, 1e-6)
    assert not capped and n == 1
    assert 0.437 - 1e-6 <= t_nu <= 0.437


def test_lag_threshold_caps_when_never_exceeded():
    ts = np.arange(1, 11) * 0.1
    d = 0.3 * np.ones(10)
    # distances of unit vectors never reach 2
    assert lag_threshold(lambda t: 0.3, ts, d, 2.0, 1e-3) == (1.0, True, 0)


def test_lag_threshold_warns_on_multiple_crossings():
    ts = np.arange(1, 8) * 1.0
    d = np.array([0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    f = lambda t: np.interp(t, ts, d)
    with pytest.warns(ScanWarning):
        t_nu, capped, n = lag_threshold(f, ts, d, 0.5, 1e-6)
    assert n == 3 and not capped
    assert abs(t_nu - 4.5) < 1e-6


@settings(max_examples=50, deadline=None)
@given(c1=st.floats(-1e-2, -1e-5), c2=st.floats(0.01, 1.0))
def test_fit_recovers_exact_lag_law(c1, c2):
    eps = np.geomspace(0.05, 0.5, 8)
    t = c1 * np.log(eps) / eps**2 + c2
    a, b, r2 = fit_lag_law(eps, t)
    assert a == pytest.approx(c1, rel=1e-8)
    assert b == pytest.approx(c2, rel=1e-8, abs=1e-10)
    assert r2 == pytest.approx(1.0, abs=1e-10)


# ----------------------------------------------------------------------------
# eigenfunctions


@pytest.fixture(scope="module")
def eigen_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("eigen")
    cfg = parse_config(make_config("lag = 0.2\nn_per_cell = 2000", grid="n_cells = 256"))
    return out, cmd_eigenfunctions(cfg, out, seed=0)


def test_eigenfunction_files(eigen_run):
    out, res = eigen_run
    assert set(res.files) == {"potential.csv", "eigen_summary.csv", "sign_crossings.csv",
                              *(f"{k}_{n}.csv" for k in ("spectrum", "eigenfunctions")
                                for n in ("spatial", "smoluchowski", "exponential"))}
    rows = read_rows(out / "eigen_summary.csv")
    assert rows[0] == ["operator", "lambda1", "stderr_lambda1", "sign_changes", "distance_to_spatial", "u0_variation"]
    assert len(read_rows(out / "potential.csv")) == 257


def test_subdominant_eigenfunction_changes_sign_at_the_barriers(eigen_run):
    _, res = eigen_run
    changes = {row[0]: row[3] for row in res.summary["summary"]}
    assert changes["spatial"] == 2 and changes["exponential"] == 2
    # the sampled Smoluchowski estimate may flicker across the node; every crossing stays at a barrier
    assert changes["smoluchowski"] % 2 == 0
    for name, cell, q in res.summary["crossings"]:
        # crossing at q = 0 lies between cells 255 and 0, at q = 0.5 between 127 and 128
        assert min(abs(q - 0.0), abs(q - 1.0), abs(q - 0.5)) <= 2 / 256, (name, q)


def test_first_eigenfunction_is_constant(eigen_run):
    _, res = eigen_run
    for name, *_, var0 in res.summary["summary"]:
        assert var0 < 1e-6, name


def test_exponential_reconstruction_eigenfunction_close_to_spatial(eigen_run):
    _, res = eigen_run
    dist = {row[0]: row[4] for row in res.summary["summary"]}
    assert dist["spatial"] == 0.0
    assert dist["exponential"] < 0.15


# ----------------------------------------------------------------------------
# lag scan


def test_lagscan_cap_flag_for_unreachable_threshold(tmp_path):
    cfg = parse_config(make_config("epsilons = 0.2\nnu = 2.0\nt_step = 0.05\nt_max = 0.2",
                                   grid="n_cells = 32\nn_q = 17\nn_hermite = 16"))
    res = cmd_lagscan(cfg, tmp_path, seed=0)
    (eps, gamma, t_nu, capped, _), = res.summary["rows"]
    assert capped and t_nu == pytest.approx(0.2)
    fit = dict(read_rows(tmp_path / "lagscan_fit.csv")[1:])
    assert fit["n_fit"] == "0" and fit["r2"] == "nan"


def test_lagscan_threshold_inside_scan(tmp_path):
    cfg = parse_config(make_config("epsilons = 0.1, 0.2\nnu = 0.05\nt_step = 0.05\nt_max = 1.0",
                                   grid="n_cells = 64"))
    res = cmd_lagscan(cfg, tmp_path, seed=0)
    curves = np.array(read_rows(tmp_path / "lagscan_curves.csv")[1:], float)
    for eps, _, t_nu, capped, _ in res.summary["rows"]:
        assert not capped
        c = curves[curves[:, 0] == eps]
        # the scan brackets t_ν: below ν just before it, above ν after
        assert np.all(c[c[:, 1] > t_nu + 0.05, 2] > 0.05)
        assert c[c[:, 1] <= t_nu, 2].max() <= 0.05


# ----------------------------------------------------------------------------
# extrapolation


def test_extrapolation_sequences(tmp_path):
    cfg = parse_config(make_config("lag = 0.2\nn_max = 10\npropagator = spectral", grid="n_cells = 64"))
    res = cmd_extrapolate(cfg, tmp_path, seed=0)
    rows = np.array(res.summary["rows"])
    assert rows.shape == (10, 7)
    for col in (1, 3, 5, 6):
        assert np.all(np.diff(rows[:, col]) < 0)
    assert np.all((rows[:, 6] > 0) & (rows[:, 6] <= 1))
    anchors = dict(read_rows(tmp_path / "extrapolate_anchors.csv")[1:])
    assert float(anchors["gap_E"]) == pytest.approx(abs(res.summary["lambda_S"] - res.summary["lambda_E"]))


def test_extrapolation_lag_must_be_multiple_of_dt(tmp_path):
    cfg = parse_config(make_config("lag = 0.0015\nn_per_cell = 100"))
    with pytest.raises(ConfigError, match="multiple of dt"):
        cmd_extrapolate(cfg, tmp_path)


# ----------------------------------------------------------------------------
# semigroup defect


@pytest.fixture(scope="module")
def defect_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("defect")
    cfg = parse_config(make_config("gammas = 1, 5, 10", grid="n_cells = 256"))
    return cmd_semigroup_defect(cfg, out, seed=0)


def test_smoluchowski_semigroup_has_no_defect(defect_run):
    for _, _, _, d_smol in defect_run.summary["rows"]:
        assert d_smol < 1e-10


def test_defect_small_beyond_inverse_friction(defect_run):
    rows = [r for r in defect_run.summary["rows"] if r[0] == 5.0 and r[1] >= 0.3]
    assert rows
    assert max(r[2] for r in rows) < 0.05


def test_defect_decay_lag_scales_inversely_with_friction(defect_run):
    lag = {g: t for g, _, t in defect_run.summary["decay"]}
    assert 5 <= lag[1.0] / lag[10.0] <= 20


# ----------------------------------------------------------------------------
# overdamped limit


@pytest.fixture(scope="module")
def overdamped_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overdamped")
    cfg = parse_config(make_config("epsilons = 0.2, 0.1, 0.05", grid="n_cells = 256"))
    return cmd_overdamped_limit(cfg, out, seed=0)


def test_overdamped_distance_halves_with_epsilon(overdamped_run):
    d = [r[2] for r in overdamped_run.summary["rows"]]
    for a, b in zip(d, d[1:]):
        assert b < a
        # halving within a factor-two tolerance
        assert 1.0 <= a / b <= 4.0


def test_overdamped_eigenvalue_at_smallest_epsilon(overdamped_run):
    *_, lam, lam_ref = overdamped_run.summary["rows"][-1]
    assert abs(lam - lam_ref) < 0.05 * abs(lam_ref)


def test_overdamped_zero_lag_is_identity(tmp_path):
    cfg = parse_config(make_config("epsilons = 0.2\nsmoluchowski_lag = 0"))
    (row,) = cmd_overdamped_limit(cfg, tmp_path).summary["rows"]
    assert row[2] == 0 and row[4] == 0


def test_overdamped_rejects_negative_lag(tmp_path):
    cfg = parse_config(make_config("smoluchowski_lag = -1"))
    with pytest.raises(ConfigError, match="nonnegative"):
        cmd_overdamped_limit(cfg, tmp_path)
