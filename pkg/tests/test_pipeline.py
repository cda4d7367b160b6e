import json
import re
from pathlib import Path

import pytest

from rashomon_qxg.artifacts import read_csv, sha256_file
from rashomon_qxg.cli import main
from rashomon_qxg.errors import ConfigError, InputError
from rashomon_qxg.pipeline import PipelineConfig, config_from_dict, load_config
from rashomon_qxg.report import emit_report, kappa_svg

REPO = Path(__file__).resolve().parents[1]

TINY = """
master_seed: 3
generator: {num_scenes: 25}
pair_model: {num_rounds: 15, max_depth: 3}
graph_model: {node_embed_dim: 4, edge_embed_dim: 4, hidden_dim: 6, epochs: 3}
pair_population: 3
graph_population: 2
k_max: 6
ig_steps: 8
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(TINY)
    return p


@pytest.fixture(scope="module")
def tiny_run(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
    return out


def text_artifacts(out: Path):
    return sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.suffix in (".csv", ".txt", ".svg", ".jsonl"))


class TestConfig:
    def test_shipped_configs_load(self):
        desk = load_config(REPO / "configs" / "desk.yaml")
        assert (desk.generator.num_scenes, desk.pair_population, desk.graph_population) == (300, 20, 12)
        assert desk.criterion.epsilon == 0.05 and desk.criterion.mode.value == "performance_relative"
        load_config(REPO / "configs" / "smoke.yaml")

    def test_hash_ignores_location_and_jobs(self):
        a = PipelineConfig(output_dir="x", jobs=1)
        b = PipelineConfig(output_dir="y", jobs=4)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != PipelineConfig(k_max=5).config_hash()

    def test_master_seed_drives_generator(self):
        assert config_from_dict({"master_seed": 9}).generator.seed == 9

    @pytest.mark.parametrize(
        "d",
        [{"bogus": 1}, {"generator": {"num_scenes": 0}}, {"generator": {"colour": 1}}, {"criterion": {"epsilon": -1}},
         {"pair_population": 1}, {"model_classes": ["trees"]}, {"generator": 5}],
    )
    def test_rejects_bad_config(self, d):
        with pytest.raises(ConfigError):
            config_from_dict(d)

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("generator: [unclosed")
        with pytest.raises(ConfigError):
            load_config(p)


class TestPipeline:
    def test_artifacts_and_headers(self, tiny_run):
        names = set(text_artifacts(tiny_run))
        for expected in ("scenes.jsonl", "qxgs.jsonl", "population_pair.csv", "population_graph.csv", "rashomon_pair.csv",
                         "attributions_pair.csv", "agreement_topk.csv", "agreement_w.csv", "table_w.csv", "table_w.txt"):
            assert expected in names
        assert len([n for n in names if n.endswith(".svg")]) == 4
        header = re.compile(r"rashomon-qxg 0\.1\.0 config=[0-9a-f]{16}")
        for name in names:
            # the SVG header sits in a comment after the XML declaration
            assert header.search((tiny_run / name).read_text()[:200]), name
        manifest = json.loads((tiny_run / "manifest.json").read_text())
        for rel, digest in manifest["artifacts"].items():
            assert sha256_file(tiny_run / rel) == digest

    def test_rerun_byte_identical(self, tiny_config, tiny_run, tmp_path):
        out = tmp_path / "b"
        assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert text_artifacts(out) == text_artifacts(tiny_run)
        for name in text_artifacts(out):
            assert (out / name).read_bytes() == (tiny_run / name).read_bytes(), name

    def test_single_stage_rerun(self, tiny_config, tiny_run):
        before = (tiny_run / "agreement_w.csv").read_bytes()
        assert main(["agree", "--config", str(tiny_config), "--out", str(tiny_run)]) == 0
        assert (tiny_run / "agreement_w.csv").read_bytes() == before

    def test_flags_override(self, tiny_config, tiny_run):
        assert main(["select", "--config", str(tiny_config), "--out", str(tiny_run), "--criterion", "loss", "--epsilon", "0.001",
                     "--model-class", "pair"]) == 0
        comments, rows = read_csv(tiny_run / "rashomon_pair.csv")
        assert "# criterion=loss_additive epsilon=0.001" in comments
        assert 1 <= sum(r["member"] == "1" for r in rows) <= len(rows)

    def test_setup_failure(self, tmp_path, tiny_config, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--config", str(tiny_config), "--out", str(blocker / "out")]) == 1
        assert "'setup'" in capsys.readouterr().err

    def test_missing_stage_input(self, tmp_path, tiny_config, capsys):
        assert main(["select", "--config", str(tiny_config), "--out", str(tmp_path)]) == 1
        assert "'select'" in capsys.readouterr().err

    def test_config_error_exit_code(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text("bogus: 1\n")
        assert main(["gen", "--config", str(p)]) == 2
        assert main(["gen", "--epsilon", "-1", "--out", str(tmp_path)]) == 2


class TestReport:
    def test_empty_group_rendered_na(self, tmp_path):
        (tmp_path / "agreement_topk.csv").write_text(
            "model_class,condition,k,kappa_mean,kappa_std,n_scenes\npair,all,1,0.5,0.1,2\npair,all,2,0.4,0.1,2\n")
        (tmp_path / "agreement_w.csv").write_text(
            "model_class,condition,mean,std,min,max,n_scenes,n_skipped\npair,all,0.3,0.1,0.2,0.4,2,0\n"
            "pair,correct_only,,,,,0,2\n")
        emit_report(tmp_path, k_max=20)
        txt = (tmp_path / "table_w.txt").read_text()
        assert "n/a" in txt.splitlines()[-1]
        _, rows = read_csv(tmp_path / "table_w.csv")
        assert rows[1]["mean"] == "n/a" and rows[0]["mean"] == "0.3"
        assert "n/a (no scenes)" in (tmp_path / "kappa_pair_correct_only.svg").read_text()

    def test_x_domain(self):
        svg = kappa_svg("t", [1, 20], [0.5, 0.1], [0.0, 0.0], 20)
        line = re.search(r'<polyline points="([^"]+)"', svg).group(1).split()
        xs = [float(p.split(",")[0]) for p in line]
        assert xs[0] == 56.0 and xs[-1] == 480 - 16
        assert ">1</text>" in svg and ">20</text>" in svg

    def test_missing_inputs(self, tmp_path):
        with pytest.raises(InputError, match="missing report input"):
            emit_report(tmp_path)
