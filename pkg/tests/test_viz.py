import numpy as np
from matplotlib import colors as mcolors

from gridforecast import viz
from gridforecast.models import TrajectorySet


def _has_colour(img, name, tol=40):
    rgb = np.array(mcolors.to_rgb(name)) * 255
    return bool((np.abs(img.astype(int) - rgb).max(axis=-1) <= tol).any())


def test_overlay_size_and_colours(corridor_samples):
    s = corridor_samples[0]
    pred = TrajectorySet(np.stack([s.future_xy / s.scale + [0, 2 * (k + 1)] for k in range(5)]))
    img = viz.render_overlay(s, pred, zoom=4)
    assert img.shape == (128, 128, 3) and img.dtype == np.uint8
    for name in (viz.GT_COLOR, *viz.PRED_COLORS):
        assert _has_colour(img, name), name
    plain = viz.render_overlay(s)
    assert plain.shape == (32, 32, 3)


def test_pred_colours_beyond_five():
    assert viz.pred_color(0) == "#8ecbff"
    assert viz.pred_color(7) is not None


def test_heatmaps_share_one_scale():
    probs = np.random.default_rng(0).random((12, 16, 16))
    fig = viz.render_heatmaps(probs)
    panels = [ax for ax in fig.axes if ax.images]
    assert len(panels) == 12
    norms = {(im.norm.vmin, im.norm.vmax) for ax in panels for im in ax.images}
    assert norms == {(probs.min(), probs.max())}
    assert len(fig.axes) == 13  # + colorbar


def test_report_figures(tmp_path):
    curve = [{"epoch": i, "train_loss": 1.0 / i, "val_loss": 1.2 / i, "lr": 1e-3} for i in range(1, 5)]
    p = viz.save_figure(viz.plot_loss_curve(curve, "gridgen"), tmp_path / "a" / "loss.png")
    assert p.exists() and p.stat().st_size > 0
    rep = {"cs_pct_path": 80.0, "cs_pct_terrain": 10.0, "cs_pct_obstacle": 10.0, "cs_pct_out_of_image": 0.0}
    assert viz.save_figure(viz.plot_cs_report(rep), tmp_path / "cs.png").exists()
    arr = viz.figure_to_array(viz.plot_cs_report(rep))
    assert arr.ndim == 3 and arr.shape[-1] == 3
    assert viz.save_image(np.zeros((4, 4, 3)), tmp_path / "z.png").exists()


def test_heatmap_brightness_follows_probability():
    probs = np.full((12, 8, 8), 0.1)
    probs[3, 2, 5] = 0.9
    fig = viz.render_heatmaps(probs)
    panels = [ax for ax in fig.axes if ax.images]
    im = panels[3].images[0]
    rgba = im.to_rgba(im.get_array())
    lum = rgba[..., :3] @ [0.2126, 0.7152, 0.0722]
    assert np.unravel_index(lum.argmax(), lum.shape) == (2, 5)
    const = panels[0].images[0].to_rgba(panels[0].images[0].get_array())
    assert np.all(const == const[0, 0])
