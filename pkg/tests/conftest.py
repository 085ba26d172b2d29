import os

import numpy as np
import pytest

from infratl.atmosphere import save_grid_csv, uniform_grid
from infratl.cli import main

# four labels on two origins, a model small enough to train in seconds
TINY_INI = """
[run]
n_mc = 4
n_tta = 3

[dataset]
origins = 0,0; 30,60
n_directions = 2
n_gw = 1
projections = 90
frequencies = 0.4
n_holdout_points = 0
n_gw_train = 1
ratios = 0.5, 0.25, 0.25
label_points = 20

[model]
filters = 2, 2, 2
gru_hidden = 4
dft_widths = 8
output_width = 20

[train]
batch_size = 2
max_epochs = 2
"""


def calm_grid_csv(path):
    """Horizontally uniform, windless atmosphere: every azimuth sees the same slice."""
    z = np.arange(0.0, 130_001.0, 2000.0)
    T = 288.15 - 6.5e-3 * np.minimum(z, 11e3) + 2e-3 * np.clip(z - 20e3, 0, 30e3) \
        - 2e-3 * np.clip(z - 50e3, 0, 35e3) + 4e-3 * np.maximum(z - 90e3, 0)
    g = uniform_grid(T, 0.0, 0.0, z, lat_step_deg=10, lon_step_deg=10)
    save_grid_csv(g, path)
    return str(path)


@pytest.fixture(scope="session")
def tiny_ini(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    p = d / "tiny.ini"
    p.write_text(TINY_INI)
    return str(p)


@pytest.fixture(scope="session")
def tiny_db(tmp_path_factory, tiny_ini):
    out = str(tmp_path_factory.mktemp("db") / "db")
    assert main(["--config", tiny_ini, "--seed", "3", "build-db", out]) == 0
    return out


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory, tiny_ini, tiny_db):
    out = str(tmp_path_factory.mktemp("model") / "run")
    assert main(["--config", tiny_ini, "--seed", "3", "train", tiny_db, out, "--runs", "2"]) == 0
    return os.path.join(out, "model.ckpt")


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail))
