import json
import os

import pytest

from gaplab.cli import main
from gaplab.report import EvalReport, MeasureRow, save_report_json
from gaplab.network import AXES

TOY_MANIFEST = """\
[experiment]
name = cli-toy
master_seed = 5
parallelism = 1

[dataset]
source = synthetic
num_classes = 4
per_class = 24
test_per_class = 24
image_size = 8
data_seed = 2

[axes]
batch_size = 16
dropout = 0.0
learning_rate = 0.1, 0.032
depth = 2
optimizer = momentum-sgd
weight_decay = 0.0
width = 4

[training]
threshold = 0.1
max_steps = 2500
eval_every = 25
eval_batches = 8
lr_milestones = 1500, 2000
grad_noise_samples = 24

[measures]
m1 = 4
m2 = 2
m3 = 1
m4 = 3
search_batch = 32
grad_noise_samples = 24

[evaluation]
oracle_epsilons = 0.0, 0.05
baseline_seeds = 3
"""


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    manifest = root / "toy.ini"
    manifest.write_text(TOY_MANIFEST)
    out = root / "run"
    code = main(["train-grid", "--manifest", str(manifest), "--output-dir", str(out)])
    assert code == 0
    return out


class TestTrainGrid:
    def test_artifacts_exist(self, toy_run):
        assert (toy_run / "models.csv").exists()
        assert (toy_run / "measures.csv").exists()
        assert (toy_run / "eval" / "report.json").exists()
        assert (toy_run / "report" / "report_correlation.csv").exists()
        assert (toy_run / "report" / "psi_ranking.png").exists()

    def test_measures_csv_row_count(self, toy_run):
        lines = (toy_run / "measures.csv").read_text().strip().splitlines()
        n_models = len(list((toy_run / "checkpoints").iterdir()))
        assert len(lines) == 1 + 40 * n_models  # header + catalog per converged model

    def test_missing_manifest_is_user_error(self, tmp_path):
        assert main(["train-grid", "--manifest", str(tmp_path / "nope.ini")]) == 1

    def test_resume_with_changed_manifest_refused(self, toy_run, tmp_path):
        changed = tmp_path / "changed.ini"
        changed.write_text(TOY_MANIFEST + "\n# edited\n")
        assert main(["train-grid", "--manifest", str(changed), "--output-dir", str(toy_run)]) == 1


class TestMeasure:
    def test_prints_catalog_csv(self, toy_run, capsys):
        ckpt = sorted((toy_run / "checkpoints").iterdir())[0]
        code = main(["measure", "--checkpoint", str(ckpt)])
        out = capsys.readouterr().out
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "measure,value,defined,reason"
        assert len(lines) == 1 + 40
        assert lines[1].startswith("vc-dim,")

    def test_matches_stored_vector(self, toy_run, capsys):
        ckpt = sorted((toy_run / "checkpoints").iterdir())[0]
        main(["measure", "--checkpoint", str(ckpt)])
        out = capsys.readouterr().out
        stored = json.loads((toy_run / "measures" / "cfg_00000.json").read_text())["measures"]
        for line in out.strip().splitlines()[1:]:
            key, value, defined, _ = line.split(",")
            if defined == "true":
                assert float(value) == pytest.approx(stored[key]["value"], rel=1e-12), key

    def test_missing_checkpoint_is_user_error(self):
        assert main(["measure", "--checkpoint", "/does/not/exist.ckpt"]) == 1


class TestEvaluate:
    def test_refuses_fewer_than_two_converged(self, tmp_path):
        manifest = tmp_path / "toy.ini"
        manifest.write_text(TOY_MANIFEST)
        out = tmp_path / "partial"
        code = main(["train-grid", "--manifest", str(manifest), "--output-dir", str(out), "--limit", "1"])
        assert code == 0
        assert main(["evaluate", "--results", str(out)]) == 1

    def test_reevaluation_is_stable(self, toy_run):
        before = (toy_run / "eval" / "report.json").read_bytes()
        assert main(["evaluate", "--results", str(toy_run)]) == 0
        assert (toy_run / "eval" / "report.json").read_bytes() == before


GOLDEN_REPORT = {
    "n_models": 4,
    "n_converged": 4,
    "n_excluded": 0,
    "axis_levels": {a: [] for a in AXES},
    "rows": [
        {
            "measure": "m1",
            "psi": {"batch_size": 0.5, **{a: None for a in AXES if a != "batch_size"}},
            "tau": 0.25,
            "big_psi": 0.5,
            "cmi_axis": {"batch_size": 0.125, **{a: None for a in AXES if a != "batch_size"}},
            "cmi_s0": 0.2,
            "cmi_min_s1": 0.1,
            "cmi_min_s2": None,
            "k_min": 0.1,
            "defined_count": 4,
            "skipped_slices": 0,
        },
        {
            "measure": "m2",
            "psi": {a: None for a in AXES},
            "tau": -0.333333333,
            "big_psi": None,
            "cmi_axis": {a: None for a in AXES},
            "cmi_s0": None,
            "cmi_min_s1": None,
            "cmi_min_s2": None,
            "k_min": None,
            "defined_count": 2,
            "skipped_slices": 3,
        },
    ],
}

GOLDEN_CORRELATION_CSV = (
    "measure,batch_size,dropout,learning_rate,depth,optimizer,weight_decay,width,overall_tau,psi\n"
    "m1,0.5,N/A,N/A,N/A,N/A,N/A,N/A,0.25,0.5\n"
    "m2,N/A,N/A,N/A,N/A,N/A,N/A,N/A,-0.333333,N/A\n"
)

GOLDEN_CMI_CSV = (
    "measure,batch_size,dropout,learning_rate,depth,optimizer,weight_decay,width,s0,min_s1,min_s2,k_min\n"
    "m1,0.125,N/A,N/A,N/A,N/A,N/A,N/A,0.2,0.1,N/A,0.1\n"
    "m2,N/A,N/A,N/A,N/A,N/A,N/A,N/A,N/A,N/A,N/A,N/A\n"
)


class TestReport:
    @pytest.fixture()
    def fixture_results(self, tmp_path):
        os.makedirs(tmp_path / "eval")
        save_report_json(EvalReport.from_dict(GOLDEN_REPORT), str(tmp_path / "eval" / "report.json"))
        return tmp_path

    def test_golden_csv_byte_for_byte(self, fixture_results):
        code = main(["report", "--results", str(fixture_results), "--format", "csv", "--no-figures"])
        assert code == 0
        got = (fixture_results / "report" / "report_correlation.csv").read_text()
        assert got == GOLDEN_CORRELATION_CSV
        got_cmi = (fixture_results / "report" / "report_cmi.csv").read_text()
        assert got_cmi == GOLDEN_CMI_CSV

    def test_rerender_identical(self, fixture_results):
        main(["report", "--results", str(fixture_results), "--format", "csv", "--no-figures"])
        first = (fixture_results / "report" / "report_correlation.csv").read_bytes()
        main(["report", "--results", str(fixture_results), "--format", "csv", "--no-figures"])
        assert (fixture_results / "report" / "report_correlation.csv").read_bytes() == first

    def test_markdown_format(self, fixture_results):
        code = main(["report", "--results", str(fixture_results), "--format", "md", "--no-figures"])
        assert code == 0
        md = (fixture_results / "report" / "report_correlation.md").read_text()
        assert md.startswith("| measure |")

    def test_figures_rendered(self, fixture_results):
        code = main(["report", "--results", str(fixture_results), "--format", "csv"])
        assert code == 0
        assert (fixture_results / "report" / "psi_ranking.png").exists()

    def test_missing_eval_is_user_error(self, tmp_path):
        assert main(["report", "--results", str(tmp_path)]) == 1


class TestUsageErrors:
    def test_unknown_flag(self):
        assert main(["train-grid", "--nonsense"]) == 1

    def test_unknown_subcommand(self):
        assert main(["fly"]) == 1

    def test_no_command(self):
        assert main([]) == 1
