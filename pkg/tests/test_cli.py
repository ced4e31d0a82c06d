import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from levelset.cli import build_parser, main, resolve_config
from levelset.experiments import THREE_GMM, faithful_like, noisy_tube, tube_clusters


def write_csv(path, x, header=None):
    np.savetxt(path, x, delimiter=",", header=header or "", comments="")
    return str(path)


@pytest.fixture
def two_cluster_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 0.3, (150, 2)), rng.normal([4, 0], 0.3, (150, 2))])
    return write_csv(tmp_path / "two.csv", x, "x,y")


@pytest.fixture
def gmm_csv(tmp_path):
    return write_csv(tmp_path / "gmm.csv", THREE_GMM.sample(400, np.random.default_rng(1)))


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return json.loads(open(path).read())


def test_levelset_above_max_is_empty(two_cluster_csv, tmp_path):
    out = tmp_path / "o.json"
    assert run("levelset", "--input", two_cluster_csv, "--h", 0.3, "--lambda", "qmax:2.0", "--out-json", out) == 2
    assert read(out)["levelset"]["polylines"] == []


def test_levelset_two_components(two_cluster_csv, tmp_path):
    out, svg = tmp_path / "o.json", tmp_path / "o.svg"
    assert run("levelset", "--input", two_cluster_csv, "--h", 0.3, "--lambda", "qmax:0.3", "--out-json", out, "--out-svg", svg) == 0
    d = read(out)
    assert d["n_components"] == 2
    assert d["n_polylines"] == 2
    assert d["version"] and d["seed"] == 0 and d["config"]["h"] == "0.3"
    ET.fromstring(svg.read_text())


def test_levelset_faithful_like(tmp_path):
    path = write_csv(tmp_path / "f.csv", faithful_like(272, np.random.default_rng(2)), "eruptions,waiting")
    out = tmp_path / "o.json"
    code = run("levelset", "--input", path, "--scale", "standardize", "--h", 0.3, "--lambda", "qmax:0.3", "--out-json", out)
    assert code == 0
    assert len(read(out)["levelset"]["polylines"]) >= 2


def test_levelset_three_d(tmp_path):
    path = write_csv(tmp_path / "t.csv", tube_clusters(500, np.random.default_rng(3)))
    out = tmp_path / "o.json"
    assert run("levelset", "--input", path, "--h", 0.25, "--lambda", "qmax:0.3", "--out-json", out) == 0
    d = read(out)
    assert d["levelset"]["points"] and d["n_components"] >= 1


def test_confset_sup(gmm_csv, tmp_path):
    out, svg = tmp_path / "c.json", tmp_path / "c.svg"
    code = run("confset", "--input", gmm_csv, "--h", 0.2, "--lambda", 0.3, "--method", "sup", "--B", 40,
               "--alphas", "0.1,0.05", "--grid", 64, "--out-json", out, "--out-svg", svg)
    assert code == 0
    sets = read(out)["confidence_sets"]
    assert [s["alpha"] for s in sets] == [0.05, 0.1]
    assert all(s["half_width"] >= 0 for s in sets)
    assert sets[0]["diagnostics"]["center_outside_band"] == 0
    text = svg.read_text()
    ET.fromstring(text)
    assert "#4a7bd0" in text


def test_confset_hausdorff_diagnostics(gmm_csv, tmp_path):
    out = tmp_path / "c.json"
    assert run("confset", "--input", gmm_csv, "--h", 0.2, "--lambda", 0.3, "--B", 30, "--grid", 64, "--out-json", out) == 0
    cs = read(out)["confidence_sets"][0]
    assert cs["radius"] > 0
    assert cs["diagnostics"]["inclusion_violations"] == 0


def test_confset_empty_level(gmm_csv):
    assert run("confset", "--input", gmm_csv, "--h", 0.2, "--lambda", 9.0, "--B", 5, "--grid", 32) == 2


def blue_area(svg_text):
    return len(re.findall(r'fill="#4a7bd0"', svg_text))


def test_blue_region_shrinks(tmp_path):
    med = []
    for n in (300, 3000):
        areas = []
        for s in range(5):
            path = write_csv(tmp_path / f"d{n}_{s}.csv", THREE_GMM.sample(n, np.random.default_rng(100 + s)))
            svg = tmp_path / f"r{n}_{s}.svg"
            assert run("confset", "--input", path, "--h", 0.2, "--lambda", 0.3, "--method", "sup", "--B", 40,
                       "--grid", 64, "--seed", s, "--out-svg", svg) == 0
            areas.append(blue_area(svg.read_text()))
        med.append(np.median(areas))
    assert med[1] < med[0]


def test_same_seed_identical(gmm_csv, tmp_path):
    blobs = []
    for k in range(2):
        out, svg = tmp_path / f"a{k}.json", tmp_path / f"a{k}.svg"
        assert run("confset", "--input", gmm_csv, "--h", 0.2, "--lambda", 0.3, "--method", "scaled", "--B", 20,
                   "--grid", 48, "--seed", 5, "--out-json", out, "--out-svg", svg) == 0
        blobs.append((out.read_bytes(), svg.read_bytes()))
    assert blobs[0] == blobs[1]


def test_visualize_one_cluster(tmp_path):
    path = write_csv(tmp_path / "one.csv", np.random.default_rng(4).normal(size=(200, 2)))
    out, svg = tmp_path / "v.json", tmp_path / "v.svg"
    assert run("visualize", "--input", path, "--h", 0.6, "--levels", "qmax:0.2", "--out-json", out, "--out-svg", svg) == 0
    graph = read(out)["graph"]
    assert len(graph["modes"]) == 1
    assert len(graph["levels"][0]["circles"]) == 1
    root = ET.fromstring(svg.read_text())
    assert not [el for el in root.iter() if el.tag.endswith("line")]


def test_visualize_confidence_levels(tmp_path):
    path = write_csv(tmp_path / "tube.csv", tube_clusters(600, np.random.default_rng(5)))
    out, svg = tmp_path / "v.json", tmp_path / "v.svg"
    code = run("visualize", "--input", path, "--h", 0.25, "--lambda", "qmax:0.4", "--alphas", "0.50,0.80,0.90,0.95",
               "--B", 40, "--out-json", out, "--out-svg", svg)
    assert code == 0
    levels = read(out)["graph"]["levels"]
    assert len(levels) == 4
    # smaller alpha, wider band, lower level
    assert [lv["alpha"] for lv in levels] == [0.5, 0.8, 0.9, 0.95]
    lams = [lv["lambda"] for lv in levels]
    assert lams == sorted(lams)
    text = svg.read_text()
    assert all(f"alpha={a:.2f}" in text for a in (0.5, 0.8, 0.9, 0.95))


def test_visualize_six_d(tmp_path):
    path = write_csv(tmp_path / "six.csv", noisy_tube(1000, 6, np.random.default_rng(6)))
    out = tmp_path / "v.json"
    assert run("visualize", "--input", path, "--h", 0.3, "--levels", "qmax:0.05,qmax:0.3", "--out-json", out) == 0
    graph = read(out)["graph"]
    assert len(graph["modes"]) >= 2
    assert len(graph["levels"][0]["edges"]) >= 1


def test_visualize_nothing_to_draw(two_cluster_csv):
    assert run("visualize", "--input", two_cluster_csv, "--h", 0.3, "--levels", 1e6) == 2


def test_coverage_command(tmp_path):
    out, table = tmp_path / "cov.json", tmp_path / "cov.txt"
    code = run("coverage", "--scenario", "three-gmm", "--n", 200, "--method", "sup", "--trials", 1, "--B", 10,
               "--grid", 32, "--alphas", "0.1", "--out-json", out, "--out-table", table)
    assert code == 0
    rep = read(out)["report"]
    assert rep["trials"] == 1 and rep["coverage"][0] in (0.0, 1.0)
    assert "L_inf" in table.read_text()


def test_unknown_scenario_lists_presets(caplog):
    assert run("coverage", "--scenario", "nope") == 3
    assert "three-gmm" in caplog.text and "four-mixture" in caplog.text


@pytest.mark.parametrize(
    "argv",
    [
        ["levelset", "--lambda", "0.1"],
        ["levelset", "--input", "x.csv"],
        ["confset", "--input", "x.csv", "--lambda", "0.1", "--method", "l2"],
        ["confset", "--input", "x.csv", "--lambda", "0.1", "--alphas", "1.5"],
        ["confset", "--input", "x.csv", "--lambda", "0.1", "--B", "many"],
        ["levelset", "--input", "x.csv", "--lambda", "qmax:abc"],
        ["levelset", "--input", "x.csv", "--lambda", "0.1", "--h", "-1"],
        ["frobnicate"],
    ],
)
def test_config_errors(argv):
    assert main(argv) == 3


def test_missing_input_is_io_error(tmp_path):
    assert run("levelset", "--input", tmp_path / "absent.csv", "--lambda", 0.1) == 4


def test_bad_csv_is_io_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3\n")
    assert run("levelset", "--input", path, "--lambda", 0.1, "--h", 1) == 4


def test_config_layering(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# defaults for this run\nB = 77\nseed = 9\nmethod = sup\n")
    args = build_parser().parse_args(["confset", "--config", str(cfg_file), "--input", "x.csv", "--lambda", "0.2", "--seed", "3"])
    cfg = resolve_config(args, environ={"LEVELSET_B": "55", "LEVELSET_GRID": "40"})
    assert cfg.B == 55  # env beats file
    assert cfg.seed == 3  # flag beats file
    assert cfg.method == "sup" and cfg.grid == 40
    echo = cfg.echo()
    assert echo["lambda"] == "0.2" and "out_json" not in echo


def test_config_file_unknown_key(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("bogus = 1\n")
    assert main(["levelset", "--config", str(cfg_file), "--input", "x", "--lambda", "1"]) == 3


def test_embedded_config_reproduces(gmm_csv, tmp_path):
    out1, out2 = tmp_path / "1.json", tmp_path / "2.json"
    assert run("confset", "--input", gmm_csv, "--h", 0.2, "--lambda", 0.3, "--method", "sup", "--B", 15, "--grid", 40,
               "--seed", 8, "--out-json", out1) == 0
    echo = read(out1)["config"]
    argv = [echo["subcommand"]]
    for key, value in echo.items():
        if key != "subcommand" and value is not None:
            argv += [f"--{key.replace('_', '-')}", str(value)]
    assert main(argv + ["--out-json", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
