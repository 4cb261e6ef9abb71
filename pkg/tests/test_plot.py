import numpy as np

from fiba import plot, pngio


def test_line_plot_draws_series(tmp_path):
    img = plot.line_plot([([0, 1, 2], [0.0, 0.5, 1.0]), ([0, 1, 2], [1.0, 1.0, 0.0])])
    assert img.shape == (200, 320, 3)
    for c in plot.PALETTE[:2]:
        assert np.any(np.all(np.isclose(img, c), axis=2))
    plot.save(tmp_path / "p.png", img)
    assert pngio.read_image(tmp_path / "p.png").shape == img.shape


def test_histograms_deterministic():
    a, b = np.linspace(0, 1, 50), np.linspace(0.2, 0.4, 50)
    h1 = plot.histograms([a, b], value_range=(0, 1))
    assert np.array_equal(h1, plot.histograms([a, b], value_range=(0, 1)))
    assert (h1 < 1).any()
