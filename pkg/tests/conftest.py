import pytest

from pauslab import cli


@pytest.fixture(scope="session")
def p3_dataset(tmp_path_factory):
    """Two desk-scale evaluation records (pattern 3) generated through the
    real CLI; shared by the CLI and acceptance suites to bound runtime."""
    out = tmp_path_factory.mktemp("p3ds") / "data"
    rc = cli.main(["generate", "--n", "2", "--kind", "eval_pattern3",
                   "--seed", "7", "--out", str(out)])
    assert rc == 0
    return out
