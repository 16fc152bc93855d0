import numpy as np
import pytest
import torch

from gridforecast.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from gridforecast.errors import ConfigError
from gridforecast.grids import GridGeometry, make_sample
from gridforecast.models import GridGenerator, TrajectorySampler, desk_config, desk_sampler_config, forward_probabilities
from gridforecast.models.gridgen import build_scene_encoder
from gridforecast.training import (
    PlateauScheduler,
    TrainConfig,
    collate,
    evaluate_models,
    evaluate_predictions,
    overfit_probe,
    predict,
    read_loss_curve,
    segmentation_crops,
    train_stage,
    world_ground_truth,
    world_predictions,
)


def _reductions(losses, patience=4):
    s = PlateauScheduler(lr=1.0, patience=patience)
    return [i + 1 for i, loss in enumerate(losses) if s.step(loss)], s


def test_scheduler_flat_sequence():
    epochs, s = _reductions([5, 5, 5, 5, 5])
    assert epochs == [5] and s.lr == 0.5


def test_scheduler_counter_resets():
    epochs, _ = _reductions([5, 5, 5, 5, 5, 5, 5, 5, 5])
    assert epochs == [5, 9]
    epochs, _ = _reductions([5, 6, 6, 6, 4, 6, 6, 6, 6])
    assert epochs == [9]
    epochs, _ = _reductions([5, 4, 3, 2, 1, 0.5])
    assert epochs == []


def test_scheduler_drives_optimizer():
    p = torch.nn.Parameter(torch.zeros(1))
    opt = torch.optim.Adam([p], lr=1e-3)
    s = PlateauScheduler(opt, patience=2, factor=0.1)
    for loss in (1.0, 1.0, 1.0):
        s.step(loss)
    assert opt.param_groups[0]["lr"] == pytest.approx(1e-4) and s.reductions == 1
    with pytest.raises(ConfigError):
        PlateauScheduler(lr=1.0, patience=0)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(stage="both")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(variety_relax=1.0)
    assert TrainConfig().scheduler_patience == 4


def test_collate_units(corridor_samples):
    b = collate(corridor_samples[:3])
    assert b["past"].shape == (3, 8, 32, 32) and b["scene"].shape == (3, 3, 32, 32)
    np.testing.assert_allclose(b["future"][0].numpy(), corridor_samples[0].future_xy / 10.0, rtol=1e-6)


def _fit(samples, seed, stage="gridgen", epochs=1, **kw):
    torch.manual_seed(seed)
    model = GridGenerator(desk_config())
    cfg = TrainConfig(stage=stage, max_epochs=epochs, batch_size=4, seed=seed, **kw)
    return model, train_stage(cfg, samples[:8], model)


def test_training_is_deterministic(corridor_samples):
    a, ra = _fit(corridor_samples, 3)
    b, rb = _fit(corridor_samples, 3)
    assert [r["train_loss"] for r in ra.curve] == [r["train_loss"] for r in rb.curve]
    for (k, va), vb in zip(a.state_dict().items(), b.state_dict().values()):
        torch.testing.assert_close(va, vb, rtol=0, atol=0, msg=k)


def test_zero_epochs_leaves_model_untouched(corridor_samples, tmp_path):
    torch.manual_seed(0)
    model = GridGenerator(desk_config())
    before = {k: v.clone() for k, v in model.state_dict().items()}
    res = train_stage(TrainConfig(max_epochs=0), corridor_samples, model, run_dir=tmp_path)
    assert res.curve == [] and res.iterations == 0
    for k, v in model.state_dict().items():
        torch.testing.assert_close(v, before[k])
    assert (tmp_path / "gridgen.pt").exists()
    assert read_loss_curve(tmp_path / "gridgen_loss_curve.csv") == []


def test_training_lowers_loss_and_writes_curve(corridor_samples, tmp_path):
    torch.manual_seed(0)
    model = GridGenerator(desk_config())
    cfg = TrainConfig(max_epochs=3, batch_size=4, learning_rate=1e-3, augment_rotation=False)
    res = train_stage(cfg, corridor_samples[:8], model, corridor_samples[8:12], run_dir=tmp_path)
    curve = read_loss_curve(tmp_path / "gridgen_loss_curve.csv")
    assert len(curve) == 3 and curve[-1]["train_loss"] < curve[0]["train_loss"]
    assert res.best_val == pytest.approx(min(r["val_loss"] for r in curve))
    assert res.iterations == 6


def test_sampler_stage_needs_gridgen(corridor_samples):
    with pytest.raises(ConfigError):
        train_stage(TrainConfig(stage="sampler", max_epochs=1), corridor_samples,
                    TrajectorySampler(desk_sampler_config()))


def test_sampler_stage_freezes_gridgen(corridor_samples):
    g = GridGenerator(desk_config())
    before = {k: v.clone() for k, v in g.state_dict().items()}
    s = TrajectorySampler(desk_sampler_config())
    train_stage(TrainConfig(stage="sampler", max_epochs=1, batch_size=4), corridor_samples[:8], s, gridgen=g)
    for k, v in g.state_dict().items():
        torch.testing.assert_close(v, before[k])
    assert not any(p.requires_grad for p in g.parameters())


def test_gt_prediction_scores_zero(corridor_samples, corridor_world):
    _, labels, _ = corridor_world
    preds = [world_ground_truth(s)[None] for s in corridor_samples]
    report, rows = evaluate_predictions(corridor_samples, preds, {"corridor": labels})
    assert report["made_px"] == 0.0 and report["mfde_px"] == 0.0 and report["k"] == 1
    assert report["cs_pct_path"] == 100.0 and report["obstacle_free_rate_pct"] == 100.0
    assert len(rows) == len(corridor_samples)
    nolabel, _ = evaluate_predictions(corridor_samples, preds)
    assert nolabel["cs_total_points"] == 0 and np.isnan(nolabel["obstacle_free_rate_pct"])


def test_predict_roundtrip_to_world(corridor_samples):
    g, s = GridGenerator(desk_config()), TrajectorySampler(desk_sampler_config())
    cells, probs = predict(g, s, corridor_samples[:3], return_probs=True)
    assert cells.shape == (3, 5, 12, 2) and probs.shape == (3, 12, 32, 32)
    world = world_predictions(cells, corridor_samples[:3])
    np.testing.assert_allclose(world[0], cells[0] * 10.0 + np.asarray(corridor_samples[0].anchor_world))


def test_overfit_probe_empty_budget_is_untrained(corridor_samples):
    torch.manual_seed(0)
    g, s = GridGenerator(desk_config()), TrajectorySampler(desk_sampler_config())
    baseline = evaluate_models(g, s, corridor_samples[:4])[0]["made_px"]
    assert overfit_probe(g, s, corridor_samples[:4], budget=0) == pytest.approx(baseline)
    with pytest.raises(ConfigError):
        overfit_probe(g, s, corridor_samples[:9], budget=0)


def test_overfit_probe_stopped_agent():
    geom = GridGeometry(32, 10.0)
    still = np.full((20, 2), 123.0)
    img = np.full((400, 400, 3), 200, dtype=np.uint8)
    sample = make_sample(still[:8], still[8:], img, geom)
    torch.manual_seed(0)
    g, s = GridGenerator(desk_config()), TrajectorySampler(desk_sampler_config())
    assert overfit_probe(g, s, [sample], budget=300) < 20.0
    # the generator overfits too: step-0 argmax is the target cell (the grid centre)
    probs = forward_probabilities(sample, g)
    assert np.unravel_index(probs[0].argmax(), probs[0].shape) == (16, 16)


def test_segmentation_crops(corridor_world):
    image, labels, _ = corridor_world
    pairs = segmentation_crops(image, labels, GridGeometry(16, 10.0), 5, seed=1)
    assert len(pairs) == 5
    crop, lab = pairs[0]
    assert crop.shape == (3, 16, 16) and lab.shape == (16, 16)
    assert set(np.unique(lab)) <= {0, 1, 2}


def test_checkpoint_roundtrip(tmp_path, corridor_samples):
    torch.manual_seed(0)
    g, s = GridGenerator(desk_config()), TrajectorySampler(desk_sampler_config())
    save_checkpoint(tmp_path / "g.pt", g, extra={"note": "x"})
    save_checkpoint(tmp_path / "s.pt", s)
    g2, payload = load_checkpoint(tmp_path / "g.pt", "gridgen")
    s2, _ = load_checkpoint(tmp_path / "s.pt")
    assert payload["extra"] == {"note": "x"} and payload["config"]["n"] == 32
    a = predict(g, s, corridor_samples[:4], return_probs=True)
    b = predict(g2, s2, corridor_samples[:4], return_probs=True)
    np.testing.assert_allclose(a[0], b[0], atol=1e-6)
    np.testing.assert_allclose(a[1], b[1], atol=1e-6)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "g.pt", "sampler")
    enc = build_scene_encoder(desk_config())
    save_checkpoint(tmp_path / "e.pt", enc, desk_config())
    assert read_checkpoint(tmp_path / "e.pt")["section"] == "scene_encoder"


def test_checkpoint_rejects_foreign_files(tmp_path):
    torch.save({"weights": torch.zeros(1)}, tmp_path / "x.pt")
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "x.pt")
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "missing.pt")
    with pytest.raises(ConfigError):
        save_checkpoint(tmp_path / "y.pt", torch.nn.Linear(2, 2))
