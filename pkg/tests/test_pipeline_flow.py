import json

import pytest

pytest.importorskip("prefect")
from prefect.testing.utilities import prefect_test_harness  # noqa: E402

from src.flows.pipeline_flow import pipeline_flow  # noqa: E402

pytestmark = pytest.mark.prefect


@pytest.fixture(scope="module", autouse=True)
def prefect_backend():
    with prefect_test_harness():
        yield


def test_flow_writes_same_artifacts_as_runner(tmp_path):
    config = tmp_path / "pipeline.toml"
    config.write_text(
        "[input.synthetic]\nn_west = 3\nn_east = 3\nn_days = 200\n"
        "[spectrum]\nn_sims = 3\n[network]\nnoise_sims = 3\nthresholds = [1.0]\n[seed]\nmaster = 2\n",
        encoding="utf-8",
    )
    output = tmp_path / "flow_out"
    result = pipeline_flow(str(config), {"output.directory": str(output)})

    assert result["output_dir"] == str(output)
    manifest = json.loads((output / "manifest.json").read_text(encoding="utf-8"))
    assert len(manifest["artifacts"]) == result["artifacts"]
    assert "full/correlation_lagged.csv" in {a["path"] for a in manifest["artifacts"]}
