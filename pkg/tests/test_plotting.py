import numpy as np
import pytest

from dpmcluster.data_io import RunRecord
from dpmcluster.model import GaussianComponent
from dpmcluster.plotting import plot_clusters_2d, plot_k_trajectory, write_figures

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_k_trajectory(tmp_path):
    path = plot_k_trajectory([1, 1, 2, 3, 3], tmp_path / "k.png", true_k=3)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_clusters(tmp_path, rng):
    x = rng.normal(size=(40, 2))
    comps = [GaussianComponent(np.zeros(2), np.eye(2), 1.0)]
    path = plot_clusters_2d(x, np.zeros(40, dtype=int), tmp_path / "c.png", comps)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_clusters_needs_2d(tmp_path, rng):
    with pytest.raises(ValueError):
        plot_clusters_2d(rng.normal(size=(5, 3)), np.zeros(5, dtype=int), tmp_path / "c.png")


@pytest.mark.parametrize("d,expected", [(2, {"k_trajectory.png", "clusters.png"}),
                                        (3, {"k_trajectory.png"})])
def test_write_figures(tmp_path, rng, d, expected):
    x = rng.normal(size=(30, d))
    rec = RunRecord(config={}, seed=0, labels=np.repeat([0, 1], 15), k_trajectory=[1, 2])
    write_figures(rec, x, tmp_path)
    assert {p.name for p in tmp_path.glob("*.png")} == expected
