import pytest
from click.testing import CliRunner

from sketchembed.cli import main as cli_main
from sketchembed.data.synthetic import synth_generate


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """A small shared dataset: 10 categories, 6 photos and 8 sketches each."""
    root = tmp_path_factory.mktemp("synth")
    manifest = synth_generate(num_categories=10, photos_per_cat=6,
                              sketches_per_cat=8, seed=77, out_dir=root)
    return manifest


PIPELINE_CONFIG = """\
data_root: {root}/data
checkpoint_dir: {root}/out/checkpoints
index_path: {root}/out/index.sbi
preset: mini
scheme: half_share
pairing: sketch_edgemap
seed: 7
top_k: 10
port: 8011
phases:
  - phase: 1
    epochs: 4
    lr: 0.01
    seed: 21
  - phase: 3
    epochs: 3
    lr: 0.0003
    patience: 10
    seed: 23
"""


@pytest.fixture(scope="session")
def pipeline_workspace(tmp_path_factory):
    """A tiny corpus trained and indexed through the CLI.

    Layout: data/ (corpus + manifest), run.yaml, out/checkpoints/,
    out/index.sbi. Shared read-only across test modules.
    """
    root = tmp_path_factory.mktemp("pipeline")
    synth_generate(4, 4, 6, seed=91, out_dir=root / "data")
    (root / "run.yaml").write_text(PIPELINE_CONFIG.format(root=root))
    runner = CliRunner()
    for args in (["train", "-c", str(root / "run.yaml")],
                 ["index", "-c", str(root / "run.yaml")]):
        result = runner.invoke(cli_main, args, catch_exceptions=False)
        assert result.exit_code == 0, result.output
    return root
