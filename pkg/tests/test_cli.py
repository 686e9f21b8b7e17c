import csv
import io
import json
import math

import numpy as np
import pytest

from bunchlab import cli
from bunchlab.errors import DataCorruptionError
from bunchlab.models.counterexample import ReproductionCheck
from bunchlab.selftest import SelftestSummary, SuiteResult


@pytest.fixture(autouse=True)
def quiet_logging(mocker):
    """Keeps CLI runs from writing log files during tests."""
    mocker.patch.object(cli, "configure_logging")


@pytest.fixture(autouse=True)
def restore_config(mocker):
    """CLI overrides mutate Config; put the values back after each test."""
    for key in ("THREADS", "HERMITIAN_TOL", "ENGINE_TOL"):
        mocker.patch.object(cli.Config, key, getattr(cli.Config, key))


@pytest.fixture
def gram_file(tmp_path):
    def write(spec: dict, name: str = "gram.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(spec))
        return str(path)
    return write


# --- perm ---

def test_perm_identity(matrix_file, capsys):
    assert cli.main(["perm", matrix_file(np.eye(3))]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert float(lines[0]) == 1.0
    assert "log2_scale=0" in lines[1]


def test_perm_all_ones_ten(matrix_file, capsys):
    assert cli.main(["perm", matrix_file(np.ones((10, 10)))]) == 0
    assert float(capsys.readouterr().out.splitlines()[0]) == pytest.approx(3628800.0)


def test_perm_all_engines_json(matrix_file, capsys):
    assert cli.main(["perm", matrix_file(np.ones((4, 4))), "--engine", "all", "--format", "json", "--seed", "3"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload["engines"]) == {"ryser", "glynn", "naive"}
    assert payload["spread"] <= 1e-12
    assert payload["run"]["seed"] == 3
    assert payload["engines"]["ryser"]["as_complex"]["re"] == pytest.approx(24.0)


def test_perm_size_guard_exit_code(matrix_file):
    assert cli.main(["perm", matrix_file(np.ones((25, 25)))]) == 3


def test_perm_parse_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"rows": 2, "cols": 2, "re": [1, 2, 3]}')
    assert cli.main(["perm", str(bad)]) == 2
    assert cli.main(["perm", str(tmp_path / "missing.json")]) == 2


def test_perm_non_square_exit_code(matrix_file):
    assert cli.main(["perm", matrix_file(np.ones((2, 3)))]) == 3


def test_unknown_flag_is_rejected(matrix_file):
    assert cli.main(["perm", matrix_file(np.eye(2)), "--bogus"]) == 2


def test_output_file(matrix_file, tmp_path):
    out = tmp_path / "result.txt"
    assert cli.main(["perm", matrix_file(np.eye(2)), "--out", str(out)]) == 0
    assert float(out.read_text().splitlines()[0]) == 1.0


# --- bunch ---

def test_bunch_hom(matrix_file, gram_file, hom_unitary, capsys):
    code = cli.main(["bunch", "--unitary", matrix_file(hom_unitary), "--kappa", "1",
                     "--gram-spec", gram_file({"kind": "all_ones", "n": 2})])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["probability"] == pytest.approx(0.5)
    assert payload["h_nonnegative_class"] is True
    assert payload["kappa"] == [1]


def test_bunch_with_explicit_s_matrix(matrix_file, hom_unitary, capsys):
    code = cli.main(["bunch", "--unitary", matrix_file(hom_unitary, "u.json"), "--kappa", "2",
                     "--s-matrix", matrix_file(np.eye(2), "s.json")])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["probability"] == pytest.approx(0.25)


def test_bunch_full_kappa_is_rejected(matrix_file, gram_file, hom_unitary):
    code = cli.main(["bunch", "--unitary", matrix_file(hom_unitary), "--kappa", "1,2",
                     "--gram-spec", gram_file({"kind": "all_ones", "n": 2})])
    assert code == 3


def test_bunch_dimension_mismatch(matrix_file, gram_file, hom_unitary):
    code = cli.main(["bunch", "--unitary", matrix_file(hom_unitary), "--kappa", "1", "--photons", "1",
                     "--gram-spec", gram_file({"kind": "all_ones", "n": 2})])
    assert code == 3


def test_bunch_bad_kappa(matrix_file, gram_file, hom_unitary):
    code = cli.main(["bunch", "--unitary", matrix_file(hom_unitary), "--kappa", "one",
                     "--gram-spec", gram_file({"kind": "all_ones", "n": 2})])
    assert code == 2


# --- search ---

def test_search_small_n(capsys):
    assert cli.main(["search", "--n", "3", "--trials", "50", "--seed", "1", "--quiet"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["max_relative_margin"] <= 1e-9
    assert payload["trials"] == 50
    assert payload["run"]["seed"] == 1


def test_search_is_byte_deterministic(capsys):
    args = ["search", "--n", "4", "--trials", "20", "--sampler", "low_rank(2)", "--seed", "7", "--quiet"]
    cli.main(args)
    first = capsys.readouterr().out
    cli.main(args + ["--threads", "1"])
    second = capsys.readouterr().out
    strip = lambda text: {k: v for k, v in json.loads(text).items() if k != "run"}
    assert strip(first) == strip(second)


def test_search_bogus_sampler():
    assert cli.main(["search", "--n", "3", "--trials", "5", "--sampler", "bogus", "--quiet"]) == 2


# --- reck ---

def test_reck_identity(matrix_file, capsys):
    assert cli.main(["reck", matrix_file(np.eye(3))]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["element_count"] == 0
    assert payload["elements"] == []


def test_reck_splitter(matrix_file, hom_unitary, capsys):
    assert cli.main(["reck", matrix_file(hom_unitary)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["element_count"] == 1
    assert payload["reconstruction_error"] <= 1e-9


def test_reck_non_unitary(matrix_file):
    assert cli.main(["reck", matrix_file(np.ones((3, 3)))]) == 3


# --- reproduce (library call mocked) ---

@pytest.fixture
def fake_report(mocker):
    scan = mocker.Mock(d=np.array([0.0, 0.5]), ratio=np.array([1.0, 1.01]),
                       perm_hs=np.array([6.0e-8, 6.06e-8]), perm_h=6.0e-8)
    report = mocker.Mock(
        checks=[ReproductionCheck('gamma', 3.3767e-5, 3.3767e-5, 5e-4, 'relative')],
        scan=scan,
        notes=["Reck mesh has 33 elements"],
        all_passed=True,
    )
    report.failures.return_value = []
    mocker.patch.object(cli, "reproduce_paper", return_value=report)
    mocker.patch.object(cli, "perturbative_ratio", return_value=np.array([1.0, 1.02]))
    return report


def test_reproduce_table(fake_report, capsys):
    assert cli.main(["reproduce", "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "gamma" in out and "PASS" in out
    assert "note: Reck mesh has 33 elements" in out


def test_reproduce_csv(fake_report, tmp_path):
    out = tmp_path / "scan.csv"
    assert cli.main(["reproduce", "--format", "csv", "--out", str(out), "--quiet"]) == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["d", "R", "perm_HS", "perm_H", "R_quadratic"]
    assert float(rows[2][1]) == 1.01
    assert float(rows[2][4]) == 1.02


def test_reproduce_failure_exit_code(fake_report):
    fake_report.all_passed = False
    fake_report.failures.return_value = [ReproductionCheck('gamma', 1.0, 3.3767e-5, 5e-4, 'relative')]
    assert cli.main(["reproduce", "--quiet"]) == 5


def test_reproduce_corrupted_data_exit_code(mocker):
    mocker.patch.object(cli, "reproduce_paper", side_effect=DataCorruptionError("checksum"))
    assert cli.main(["reproduce", "--quiet"]) == 4


# --- selftest ---

def test_selftest_exit_codes(mocker, capsys):
    passing = SelftestSummary(seed=0, quick=True, suites=[SuiteResult("engine_agreement", trials=3)])
    mocker.patch.object(cli, "run_selftest", return_value=passing)
    assert cli.main(["selftest", "--quick", "--quiet"]) == 0
    assert "engine_agreement" in capsys.readouterr().out

    failing = SelftestSummary(seed=0, quick=True, suites=[SuiteResult("structural", trials=3, failures=1)])
    mocker.patch.object(cli, "run_selftest", return_value=failing)
    assert cli.main(["selftest", "--quick", "--quiet"]) == 5


def test_selftest_is_hidden_from_help(capsys):
    assert cli.main(["--help"]) == 0
    assert "selftest" not in capsys.readouterr().out


def test_tolerance_overrides_reach_config(mocker, matrix_file):
    override = mocker.patch.object(cli.Config, "override")
    cli.main(["perm", matrix_file(np.eye(2)), "--engine-tol", "1e-6", "--threads", "2"])
    override.assert_called_once_with(threads=2, hermitian_tol=None, engine_tol=1e-6)


def test_perm_beyond_double_range(matrix_file, capsys):
    path = matrix_file(np.full((12, 12), 1e30))
    assert cli.main(["perm", path, "--engine", "all"]) == 0
    lines = capsys.readouterr().out.splitlines()
    mantissa, exponent = lines[0].split("*2**")
    log10_value = math.log10(float(mantissa)) + int(exponent) * math.log10(2.0)
    assert log10_value == pytest.approx(math.log10(math.factorial(12)) + 360.0, rel=1e-13)
    assert "max relative spread" in lines[-1]

    assert cli.main(["perm", path, "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["engines"]["ryser"]["as_complex"] is None
    assert payload["engines"]["ryser"]["log2_scale"] > 1000
