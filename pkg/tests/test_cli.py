import argparse
import json

import pytest

from podec import cli


def _opts(argv):
    args = cli.build_parser().parse_args(argv)
    return cli.resolve_options(args)


def test_defaults_then_config_then_flags(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 5\nga:\n  generations: 7\n  population: 12\n")
    opts = _opts(["ga", "--config", str(cfg), "--population", "20"])
    assert opts["seed"] == 5 and opts["generations"] == 7 and opts["population"] == 20
    assert opts["fitness_blend"] == 0.0


def test_json_config_is_accepted(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"samples": 3, "sizes": "2,3"}))
    opts = _opts(["table1", "--config", str(cfg)])
    assert opts["samples"] == 3 and opts["sizes"] == "2,3" and opts["region"] == "image"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus: 1\n")
    with pytest.raises(SystemExit):
        _opts(["sample", "--config", str(cfg)])


def test_every_subcommand_is_registered():
    sub = next(a for a in cli.build_parser()._actions if isinstance(a, argparse._SubParsersAction))
    assert set(sub.choices) == set(cli.COMMANDS) == {
        "table1", "pipeline", "sample", "transform", "enumerate", "ga", "pi", "rollout"}


def test_sample_and_transform_round_trip(tmp_path, capsys):
    assert cli.main(["sample", "--strategy", "II", "--m", "3", "--n", "3", "--seed", "2",
                     "--out", str(tmp_path / "s")]) == 0
    plant = tmp_path / "s" / "plant.json"
    assert plant.exists() and (tmp_path / "s" / "rows.csv").exists()
    assert cli.main(["transform", "--plant", str(plant), "--out", str(tmp_path / "t"),
                     "--format", "json"]) == 0
    rmap = json.loads((tmp_path / "t" / "map.json").read_text())
    assert rmap["provenance"] == "svd_sparse"
    assert json.loads((tmp_path / "t" / "rows.json").read_text())


def test_enumerate_lists_all(tmp_path):
    cli.main(["enumerate", "--m", "2", "--n", "3", "--out", str(tmp_path)])
    lines = (tmp_path / "rows.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 18
